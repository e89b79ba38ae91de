// Finite-difference verification of every differentiable operation and of the
// full student loss. Runs at f64 where central differences are trustworthy.
// Exposed as a library so the CLI, the unit tests and the acceptance suite
// share one implementation.

#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cfd/training.hpp"

namespace cfd {

struct GradCheckCase {
    std::string name;
    int instances = 0;
    double max_err = 0.0;
    double tol = 1e-5;
    bool pass = false;
};

namespace gradcheck_detail {

using D = double;
using TD = Tensor<double>;

// Analytic gradient of f w.r.t. x against central differences. For large
// tensors only max_coords randomly chosen coordinates are probed.
inline double check_input_grad(const std::function<TD(const TD&)>& f, const TD& x_init,
                               std::mt19937_64& rng, int max_coords = 0, double eps = 1e-5) {
    TD x = x_init.detach();
    x.set_requires_grad(true);
    TD loss = f(x);
    loss.backward();
    const auto analytic = x.grad();

    const std::function<double(const TD&)> scalar_f = [&](const TD& xx) {
        return f(xx).item();
    };
    if (max_coords <= 0 || x.numel() <= max_coords) {
        const TD fd = finite_diff_grad<double>(scalar_f, x, eps);
        return max_rel_err<double>(analytic, fd.data());
    }
    std::vector<int64_t> coords;
    std::uniform_int_distribution<int64_t> pick(0, x.numel() - 1);
    for (int i = 0; i < max_coords; ++i) coords.push_back(pick(rng));
    const std::vector<double> fd = finite_diff_grad_at<double>(scalar_f, x, coords, eps);
    std::vector<double> ana;
    ana.reserve(coords.size());
    for (int64_t c : coords) ana.push_back(analytic[static_cast<size_t>(c)]);
    return max_rel_err<double>(ana, fd);
}

// Gradient w.r.t. a live parameter tensor of a loss rebuilt by loss_fn. The
// parameter values are swapped in place for the finite-difference probes.
inline double check_param_grad(const std::function<TD()>& loss_fn, Tensor<double>& param,
                               std::mt19937_64& rng, int max_coords, double eps = 1e-6) {
    param.zero_grad();
    TD loss = loss_fn();
    loss.backward();
    const std::vector<double> analytic(param.grad().begin(), param.grad().end());

    std::vector<int64_t> coords;
    if (max_coords <= 0 || param.numel() <= max_coords) {
        for (int64_t i = 0; i < param.numel(); ++i) coords.push_back(i);
    } else {
        std::uniform_int_distribution<int64_t> pick(0, param.numel() - 1);
        for (int i = 0; i < max_coords; ++i) coords.push_back(pick(rng));
    }
    const std::vector<double> base(param.data().begin(), param.data().end());
    std::vector<double> fd;
    fd.reserve(coords.size());
    for (int64_t ci : coords) {
        auto eval_at = [&](double v) {
            auto w = param.raw_data();
            w[static_cast<size_t>(ci)] = v;
            NoGradGuard ng;
            const double out = loss_fn().item();
            w[static_cast<size_t>(ci)] = base[static_cast<size_t>(ci)];
            return out;
        };
        const double fp = eval_at(base[static_cast<size_t>(ci)] + eps);
        const double fm = eval_at(base[static_cast<size_t>(ci)] - eps);
        fd.push_back((fp - fm) / (2.0 * eps));
    }
    std::vector<double> ana;
    ana.reserve(coords.size());
    for (int64_t c : coords) ana.push_back(analytic[static_cast<size_t>(c)]);
    return max_rel_err<double>(ana, fd);
}

}  // namespace gradcheck_detail

// Every differentiable op over randomized small instances, then the full
// student loss (disparity + distillation + contrastive) against sampled
// finite differences. tol_ops applies to single ops, tol_full to the
// composite loss.
std::vector<GradCheckCase> run_gradcheck_suite(uint64_t seed, int instances_per_case = 20,
                                               double tol_ops = 1e-5, double tol_full = 1e-4);

inline bool all_passed(const std::vector<GradCheckCase>& cases) {
    for (const auto& c : cases)
        if (!c.pass) return false;
    return true;
}

}  // namespace cfd
