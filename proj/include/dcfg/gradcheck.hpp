#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dcfg/tensor.hpp"

namespace dcfg {

struct GradCheckResult {
    double max_rel_error = 0.0;
    int probes = 0;
    std::string worst;  // "param#index analytic=... numeric=..."
};

/// |a - n| / max(|a|, |n|, 1e-6). The floor keeps coordinates whose true
/// derivative is ~0 from being judged on rounding noise alone.
double relative_error(double analytic, double numeric);

/// Compares d(loss)/d(param) from backward() with central differences
/// (step `h`) at `probes` coordinates drawn uniformly over all parameters.
/// `loss_fn` must rebuild the scalar loss from the current parameter values.
GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, int probes,
                                std::uint64_t seed, double h = 1e-4);

}  // namespace dcfg
