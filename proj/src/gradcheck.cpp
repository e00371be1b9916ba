#include "dcfg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dcfg/rng.hpp"

namespace dcfg {

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params, int probes,
                                std::uint64_t seed, double h) {
    if (params.empty()) {
        throw ShapeError("check_gradients: no parameters");
    }
    for (Tensor& p : params) {
        if (!p.is_leaf()) {
            throw ShapeError("check_gradients: parameters must be leaf tensors");
        }
        p.set_requires_grad(true);
        p.zero_grad();
    }
    loss_fn().backward();
    std::vector<std::vector<double>> analytic;
    for (const Tensor& p : params) {
        analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                           : std::vector<double>(p.numel(), 0.0));
    }

    std::size_t total = 0;
    for (const Tensor& p : params) {
        total += p.numel();
    }
    CounterRng rng(seed);
    GradCheckResult result;
    NoGradGuard no_grad;
    for (int probe = 0; probe < probes; ++probe) {
        std::size_t flat = rng.below(total);
        std::size_t which = 0;
        while (flat >= params[which].numel()) {
            flat -= params[which].numel();
            ++which;
        }
        std::span<double> values = params[which].mutable_data();
        const double saved = values[flat];
        values[flat] = saved + h;
        const double up = loss_fn().item();
        values[flat] = saved - h;
        const double down = loss_fn().item();
        values[flat] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[which][flat];
        const double err = relative_error(a, numeric);
        ++result.probes;
        if (err >= result.max_rel_error) {
            result.max_rel_error = err;
            std::ostringstream msg;
            msg << "param#" << which << "[" << flat << "] analytic=" << a << " numeric=" << numeric;
            result.worst = msg.str();
        }
    }
    for (Tensor& p : params) {
        p.zero_grad();
    }
    return result;
}

}  // namespace dcfg
