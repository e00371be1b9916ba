#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcfg/gradcheck.hpp"
#include "dcfg/track_model.hpp"

namespace dcfg {

struct GradSuiteEntry {
    std::string name;
    GradCheckResult result;
};

/// Small tracker used for end-to-end finite-difference checks: 16 px
/// template, 32 px search, widths {4,8,8}, two groups of two channel groups.
TrackerConfig toy_tracker_config();

/// Adds uniform noise in [-amount, amount] to every learnable value. Moves
/// freshly initialised BN shifts off the ReLU kink before a gradient check.
void jitter_parameters(StateDict& state, CounterRng& rng, double amount);

/// Finite-difference check of every differentiable operation and of the full
/// training loss on the toy tracker, `probes` coordinates each.
std::vector<GradSuiteEntry> run_gradient_suite(int probes, std::uint64_t seed);

inline constexpr double kGradTolerance = 1e-4;

}  // namespace dcfg
