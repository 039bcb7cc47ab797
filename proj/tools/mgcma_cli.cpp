// mgcma: command-line front end for the multi-granularity alignment harness.
//
// Exit codes: 0 success, 1 runtime failure (I/O, numerics, failed checks),
// 2 usage or configuration error. Reports go to stdout, diagnostics to stderr.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mgcma/mgcma.hpp"
#include "mgcma/verification.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::size_t fold_threads() {
  const char* env = std::getenv("MGCMA_THREADS");
  if (!env || !*env) return 1;
  try {
    const long v = std::stol(env);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
  } catch (const std::exception&) {
    throw mgcma::ConfigError("MGCMA_THREADS must be a positive integer");
  }
}

struct TrainFlags {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  bool paper_scale = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool needs_out) {
  cmd->add_option("--config", f.config, "Run configuration JSON")->check(CLI::ExistingFile);
  cmd->add_option("--data", f.data, "Dataset directory (overrides config 'data')");
  if (needs_out) cmd->add_option("--out", f.out, "Output directory (overrides config 'out')");
  cmd->add_option("--seed", f.seed, "Override config seed");
  cmd->add_option("--epochs", f.epochs, "Override max_epochs");
  cmd->add_option("--lr", f.lr, "Override learning_rate");
  cmd->add_option("--batch-size", f.batch_size, "Override batch_size");
  cmd->add_flag("--paper-scale", f.paper_scale, "Start from the 768-dim / 12-head / 6-block preset");
}

mgcma::RunConfig resolve(const TrainFlags& f) {
  nlohmann::json j = nlohmann::json::object();
  if (!f.config.empty()) {
    try {
      j = nlohmann::json::parse(mgcma::binary::read_file(f.config));
    } catch (const nlohmann::json::exception& e) {
      throw mgcma::ConfigError(f.config + ": " + e.what());
    }
  }
  if (f.paper_scale) j["paper_scale"] = true;
  if (f.seed) j["seed"] = *f.seed;
  if (f.epochs) j["max_epochs"] = *f.epochs;
  if (f.lr) j["learning_rate"] = *f.lr;
  if (f.batch_size) j["batch_size"] = *f.batch_size;
  if (!f.data.empty()) j["data"] = f.data;
  if (!f.out.empty()) j["out"] = f.out;
  mgcma::RunConfig cfg = mgcma::run_config_from_json(j);
  if (cfg.data.empty()) throw mgcma::ConfigError("no dataset given (--data or config 'data')");
  return cfg;
}

std::vector<mgcma::LabeledPair> load(const std::string& dir) {
  return mgcma::load_dataset(mgcma::read_manifest(dir));
}

void write_text(const mgcma::fs::path& path, const std::string& text) { mgcma::binary::write_file(path, text); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-granularity cross-modal alignment for speech-text emotion recognition"};
  app.require_subcommand(1);

  // gen-data
  mgcma::SyntheticConfig gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset (manifest + feature files)");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--pairs", gen.n_pairs, "Number of speech-text pairs");
  gen_cmd->add_option("--dim", gen.dim, "Feature dimension");
  gen_cmd->add_option("--len-speech", gen.len_speech, "Speech tokens per utterance");
  gen_cmd->add_option("--len-text", gen.len_text, "Text tokens per utterance");
  gen_cmd->add_option("--separation", gen.separation, "Class anchor scale (0 = no signal)");
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--classes", gen.n_classes, "Number of classes");
  gen_cmd->add_option("--session-shift", gen.session_shift, "Per-session bias scale");

  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset; writes model.ckpt and train_log.jsonl");
  add_train_flags(train_cmd, train_flags, true);

  TrainFlags cv_flags;
  auto* cv_cmd = app.add_subcommand("cross-validate", "Leave-one-session-out cross-validation");
  add_train_flags(cv_cmd, cv_flags, true);

  std::string eval_model, eval_data, eval_confusion;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; prints metrics CSV");
  eval_cmd->add_option("--model", eval_model, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--confusion", eval_confusion, "Also write the confusion matrix CSV here");

  TrainFlags ablate_flags;
  std::string variants = "S0,S1,S2,S3,S4,S5,S6,S7,S8,S9";
  auto* ablate_cmd = app.add_subcommand("ablate", "Cross-validate ablation/order variants S0-S9");
  add_train_flags(ablate_cmd, ablate_flags, true);
  ablate_cmd->add_option("--variants", variants, "Comma-separated variant ids");

  mgcma::GradCheckSuiteConfig gc;
  double tolerance = 1e-4;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference check of every loss gradient");
  gc_cmd->add_option("--seed", gc.seed, "Model and data seed");
  gc_cmd->add_option("--tolerance", tolerance, "Maximum relative error");
  gc_cmd->add_option("--step", gc.h, "Finite-difference step h");

  std::string ex_model, ex_data, ex_tap, ex_out;
  auto* ex_cmd = app.add_subcommand("export-embeddings", "Write per-utterance embeddings as CSV");
  ex_cmd->add_option("--model", ex_model, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ex_cmd->add_option("--data", ex_data, "Dataset directory")->required();
  ex_cmd->add_option("--tap", ex_tap, "encoder | post_alignment | pooled")->required();
  ex_cmd->add_option("--out", ex_out, "Output CSV file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const auto selected = app.get_subcommands();
    std::cerr << (selected.empty() ? app.help() : selected.front()->help()) << '\n';
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) {
      const auto manifest = mgcma::generate_synthetic(gen, gen_out);
      std::cout << "pairs=" << manifest.records.size() << " dim=" << manifest.dim << " dir=" << gen_out << '\n';
    } else if (*train_cmd) {
      const auto cfg = resolve(train_flags);
      if (cfg.out.empty()) throw mgcma::ConfigError("no output directory (--out or config 'out')");
      const auto data = load(cfg.data);
      auto result = mgcma::train(data, cfg.train, [](const mgcma::EpochLog& e) {
        std::cerr << mgcma::to_jsonl(e) << '\n';
      });
      const mgcma::fs::path out = cfg.out;
      mgcma::save_checkpoint(result.model, out / "model.ckpt");
      write_text(out / "train_log.jsonl", mgcma::to_jsonl(result.log));
      std::cout << mgcma::to_jsonl(result.log.back()) << '\n';
    } else if (*cv_cmd) {
      const auto cfg = resolve(cv_flags);
      const auto data = load(cfg.data);
      const auto cv = mgcma::cross_validate(data, cfg.train, fold_threads());
      const std::string csv = mgcma::metrics_csv(cv.report);
      if (!cfg.out.empty()) {
        const mgcma::fs::path out = cfg.out;
        write_text(out / "metrics.csv", csv);
        write_text(out / "confusion.csv", mgcma::confusion_csv(cv.report.confusion));
        for (std::size_t f = 0; f < cv.fold_logs.size(); ++f)
          write_text(out / ("fold" + std::to_string(f + 1) + "_log.jsonl"), mgcma::to_jsonl(cv.fold_logs[f]));
      }
      std::cout << csv;
    } else if (*eval_cmd) {
      const auto model = mgcma::load_checkpoint(eval_model);
      const auto data = load(eval_data);
      const auto report = mgcma::evaluate(model, data);
      if (report.absent_class) std::cerr << "warning: some classes are absent; UA averages present classes\n";
      if (!eval_confusion.empty()) write_text(eval_confusion, mgcma::confusion_csv(report.confusion));
      std::cout << mgcma::metrics_csv(report);
    } else if (*ablate_cmd) {
      const auto cfg = resolve(ablate_flags);
      std::vector<std::string> ids;
      std::stringstream ss(variants);
      for (std::string id; std::getline(ss, id, ',');)
        if (!id.empty()) ids.push_back(mgcma::ablation_variant(id).system);
      if (ids.empty()) throw mgcma::ConfigError("no variants given");
      const auto data = load(cfg.data);
      const auto rows = mgcma::run_ablations(data, cfg.train, ids, fold_threads());
      const std::string csv = mgcma::ablation_csv(rows);
      if (!cfg.out.empty()) write_text(mgcma::fs::path(cfg.out) / "ablation.csv", csv);
      std::cout << csv;
    } else if (*gc_cmd) {
      if (!(tolerance > 0.0) || !(gc.h > 0.0)) throw mgcma::ConfigError("tolerance and step must be positive");
      bool ok = true;
      for (const auto& c : mgcma::run_grad_check_suite(gc)) {
        const bool pass = c.result.max_rel_error < tolerance;
        ok = ok && pass;
        std::cout << c.name << " max_rel_error=" << c.result.max_rel_error << " checked=" << c.result.checked
                  << " worst=" << c.result.worst_parameter << "[" << c.result.worst_index << "] "
                  << (pass ? "PASS" : "FAIL") << '\n';
      }
      return ok ? kExitOk : kExitRuntime;
    } else if (*ex_cmd) {
      const auto tap = mgcma::parse_tap(ex_tap);
      const auto model = mgcma::load_checkpoint(ex_model);
      const auto data = load(ex_data);
      write_text(ex_out, mgcma::export_embeddings(model, data, tap));
      std::cout << "rows=" << 2 * data.size() << " tap=" << ex_tap << " file=" << ex_out << '\n';
    }
  } catch (const mgcma::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
