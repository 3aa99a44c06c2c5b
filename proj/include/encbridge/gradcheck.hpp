#pragma once

// Autograd versus central finite differences on a full bridged model in
// double precision.

#include <cstdint>
#include <string>
#include <vector>

#include "encbridge/model.hpp"

namespace encbridge {

struct GradCheckOptions {
    ModelConfig config = tiny_config();
    std::uint64_t seed = 1;
    double step = 1e-5;
    std::size_t batch = 2;
    std::size_t src_len = 5;
    std::size_t tgt_len = 4;
    /// Denominator floor of the relative error, so parameters whose true
    /// gradient is zero (such as key biases under softmax) compare on an
    /// absolute scale.
    double floor = 1e-6;

    static ModelConfig tiny_config();
};

struct ParamCheck {
    std::string name;
    std::size_t count = 0;
    double max_rel_err = 0;
    double max_abs_grad = 0;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double max_rel_err = 0;
    std::string worst_param;
};

/// rel = |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Builds a seeded random bridged model, random source/target batches, and
/// checks every scalar of every parameter.
GradCheckReport gradcheck_model(const GradCheckOptions& options);

}  // namespace encbridge
