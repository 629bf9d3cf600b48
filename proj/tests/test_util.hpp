#pragma once

#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "ahan/autograd.hpp"

namespace ahan::testing {

inline Tensor rand_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    return Tensor::uniform(std::move(shape), rng, lo, hi);
}

/// Analytic gradient of sum-reduced f at x versus central differences.
/// Returns max over elements of |a - n| / max(|a|, |n|, floor).
inline double grad_error(const std::function<Var(const Var&)>& f, const Tensor& x, double eps = 1e-5,
                         double floor = 1e-6) {
    Var p = Var::parameter(x);
    Var out = f(p);
    backward(out.size() == 1 ? out : sum(out));
    const Tensor analytic = p.grad();
    const Tensor numeric = finite_diff_grad(
        [&](const Tensor& t) {
            Var o = f(Var(t));
            return o.size() == 1 ? o.value().item() : sum(o).value().item();
        },
        x, eps);
    return max_rel_diff(analytic, numeric, floor);
}

/// Row sums of a 2-D matrix, max deviation from 1.
inline double row_stochastic_error(const Tensor& w) {
    double worst = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < w.cols(); ++c) s += w(r, c);
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}

}  // namespace ahan::testing
