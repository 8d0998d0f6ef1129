#pragma once

// Shared helpers for the unit suites: the central finite-difference oracle
// used to check every backward rule, plus small comparison utilities.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "clavs/rng.hpp"
#include "clavs/tensor.hpp"

namespace testutil {

// Central finite differences on one stored element of a leaf tensor. The
// evaluation callback must rebuild the forward pass from scratch so the
// perturbed value is actually consumed.
inline double numeric_grad(const std::function<double()>& eval, clavs::Tensor& leaf,
                           std::size_t idx, double h = 1e-5) {
    auto vals = leaf.values_mut();
    const double orig = vals[idx];
    vals[idx] = orig + h;
    const double fp = eval();
    vals[idx] = orig - h;
    const double fm = eval();
    vals[idx] = orig;
    return (fp - fm) / (2.0 * h);
}

// |a-b| relative to max(|a|, |b|, 1); the unit floor keeps near-zero
// gradients from inflating the ratio.
inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1.0});
    return std::abs(a - b) / denom;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// Runs backward once on build(), then compares every element of every leaf
// against the finite-difference oracle.
inline GradCheckResult check_gradients(const std::function<clavs::Tensor()>& build,
                                       std::vector<clavs::Tensor> leaves,
                                       double h = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    clavs::Tensor loss = build();
    clavs::backward(loss);
    std::vector<std::vector<double>> ad;
    ad.reserve(leaves.size());
    for (auto& l : leaves) ad.emplace_back(l.grad().begin(), l.grad().end());

    auto eval = [&build]() { return build().item(); };
    GradCheckResult res;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        for (std::size_t i = 0; i < leaves[li].size(); ++i) {
            double ng = numeric_grad(eval, leaves[li], i, h);
            res.max_rel_err = std::max(res.max_rel_err, rel_err(ad[li][i], ng));
            ++res.checked;
        }
    }
    return res;
}

inline clavs::Tensor random_tensor(clavs::Shape shape, clavs::Rng& rng, bool requires_grad,
                                   double lo = -2.0, double hi = 2.0) {
    std::vector<double> d(clavs::shape_numel(shape));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return clavs::Tensor::from_data(std::move(shape), std::move(d), requires_grad);
}

}  // namespace testutil
