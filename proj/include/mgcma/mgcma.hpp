#pragma once

#include "mgcma/attention.hpp"
#include "mgcma/autograd.hpp"
#include "mgcma/checkpoint.hpp"
#include "mgcma/config.hpp"
#include "mgcma/contrastive.hpp"
#include "mgcma/data_io.hpp"
#include "mgcma/distribution_alignment.hpp"
#include "mgcma/error.hpp"
#include "mgcma/grad_check.hpp"
#include "mgcma/instance_alignment.hpp"
#include "mgcma/metrics.hpp"
#include "mgcma/optimizer.hpp"
#include "mgcma/parameters.hpp"
#include "mgcma/pipeline.hpp"
#include "mgcma/random.hpp"
#include "mgcma/tensor.hpp"
#include "mgcma/token_alignment.hpp"
#include "mgcma/training.hpp"
