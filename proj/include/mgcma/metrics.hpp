#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "mgcma/error.hpp"

namespace mgcma {

/// counts[true][predicted].
class ConfusionMatrix {
 public:
  ConfusionMatrix() : ConfusionMatrix(4) {}
  explicit ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return n_; }

  void add(std::size_t truth, std::size_t predicted, std::size_t count = 1) {
    if (truth >= n_ || predicted >= n_) throw DimensionError("confusion: label out of range");
    counts_[truth * n_ + predicted] += count;
  }

  void add(std::span<const std::size_t> truth, std::span<const std::size_t> predicted) {
    if (truth.size() != predicted.size()) throw DimensionError("confusion: length mismatch");
    for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predicted[i]);
  }

  void merge(const ConfusionMatrix& other) {
    if (other.n_ != n_) throw DimensionError("confusion: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  std::size_t operator()(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }

  std::size_t support(std::size_t c) const {
    std::size_t s = 0;
    for (std::size_t j = 0; j < n_; ++j) s += (*this)(c, j);
    return s;
  }

  std::size_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

  std::size_t correct() const {
    std::size_t s = 0;
    for (std::size_t c = 0; c < n_; ++c) s += (*this)(c, c);
    return s;
  }

  /// Weighted accuracy: trace / total.
  double wa() const {
    if (total() == 0) throw EmptyInputError("metrics: empty confusion matrix");
    return static_cast<double>(correct()) / static_cast<double>(total());
  }

  /// Unweighted accuracy: mean per-class recall over classes with support.
  ///
  /// Evaluated as one fraction over the least common multiple of the
  /// supports, so the result is the correctly rounded mean recall whenever
  /// the integers stay below 2^53 (and equals wa() for balanced supports).
  double ua() const {
    std::size_t present = 0;
    unsigned __int128 common = 1;
    bool exact = true;
    for (std::size_t c = 0; c < n_; ++c) {
      const std::size_t s = support(c);
      if (s == 0) continue;
      ++present;
      common = common / std::gcd(static_cast<std::uint64_t>(common % s), static_cast<std::uint64_t>(s)) * s;
      exact = exact && common < kExactLimit;
      if (!exact) break;
    }
    if (present == 0) throw EmptyInputError("metrics: empty confusion matrix");
    if (exact) {
      unsigned __int128 numerator = 0;
      for (std::size_t c = 0; c < n_; ++c) {
        const std::size_t s = support(c);
        if (s != 0) numerator += static_cast<unsigned __int128>((*this)(c, c)) * (common / s);
      }
      const unsigned __int128 denominator = common * present;
      if (numerator < kExactLimit && denominator < kExactLimit)
        return static_cast<double>(numerator) / static_cast<double>(denominator);
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < n_; ++c) {
      const std::size_t s = support(c);
      if (s != 0) sum += static_cast<double>((*this)(c, c)) / static_cast<double>(s);
    }
    return sum / static_cast<double>(present);
  }

  bool has_absent_class() const {
    for (std::size_t c = 0; c < n_; ++c)
      if (support(c) == 0) return true;
    return false;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  static constexpr unsigned __int128 kExactLimit = static_cast<unsigned __int128>(1) << 53;

  std::size_t n_;
  std::vector<std::size_t> counts_;
};

struct FoldMetrics {
  int test_session = 0;
  double wa = 0.0;
  double ua = 0.0;
  ConfusionMatrix confusion;
  bool absent_class = false;

  friend bool operator==(const FoldMetrics&, const FoldMetrics&) = default;
};

struct MetricsReport {
  double wa = 0.0;
  double ua = 0.0;
  ConfusionMatrix confusion;
  bool absent_class = false;       // UA averaged over present classes only
  std::vector<FoldMetrics> folds;  // empty for a single evaluation
  double mean_fold_wa = 0.0;
  double mean_fold_ua = 0.0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline MetricsReport make_report(const ConfusionMatrix& confusion) {
  MetricsReport r;
  r.confusion = confusion;
  r.wa = confusion.wa();
  r.ua = confusion.ua();
  r.absent_class = confusion.has_absent_class();
  return r;
}

}  // namespace mgcma
