#pragma once

#include "mfa/dense.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace mfa {

// Softmax over the last axis of a [..., C] array, with per-pixel max subtraction.
template <typename Scalar>
DenseArray<Scalar> softmax(const DenseArray<Scalar>& logits) {
    if (logits.rank() < 1) throw std::invalid_argument("softmax: rank-0 input");
    const Index classes = logits.shape().back();
    if (classes < 2) throw std::invalid_argument("softmax: need at least 2 classes");
    const Index pixels = logits.size() / classes;

    DenseArray<Scalar> probs(logits.shape());
    ConstPixelMap<Scalar> in(logits.data(), pixels, classes);
    PixelMap<Scalar> out(probs.data(), pixels, classes);
    for (Index p = 0; p < pixels; ++p) {
        if (!in.row(p).allFinite())
            throw std::invalid_argument("softmax: non-finite logit at pixel " + std::to_string(p));
        const Scalar peak = in.row(p).maxCoeff();
        out.row(p) = (in.row(p).array() - peak).exp();
        out.row(p) /= out.row(p).sum();
    }
    return probs;
}

// base_lr * (1 - step/total_steps)^power; reaches exactly 0 at the final step.
inline double poly_lr(long step, long total_steps, double base_lr, double power) {
    if (total_steps <= 0) throw std::invalid_argument("poly_lr: total_steps must be positive");
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("poly_lr: step " + std::to_string(step) + " outside [0, " +
                                    std::to_string(total_steps) + "]");
    if (step == total_steps) return 0.0;
    return base_lr * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), power);
}

template <typename Scalar>
struct OptimizerState {
    ParamVector<Scalar> velocity;
    double base_lr = 2e-4;
    double momentum = 0.9;
    double power = 0.9;
    long step = 0;
    long total_steps = 1;

    double current_lr() const { return poly_lr(step, total_steps, base_lr, power); }
};

// power = 0 gives a constant learning rate.
template <typename Scalar>
OptimizerState<Scalar> make_optimizer(const ParamVector<Scalar>& params, double base_lr, double momentum,
                                      long total_steps, double power) {
    if (!(base_lr > 0.0)) throw std::invalid_argument("optimizer: base_lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("optimizer: momentum must lie in [0,1)");
    if (total_steps <= 0) throw std::invalid_argument("optimizer: total_steps must be positive");
    if (power < 0.0) throw std::invalid_argument("optimizer: power must be non-negative");
    return OptimizerState<Scalar>{params.zeros_like(), base_lr, momentum, power, 0, total_steps};
}

// v <- momentum * v + g;  theta <- theta - lr(step) * v;  step += 1.
template <typename Scalar>
void sgd_step(ParamVector<Scalar>& params, const ParamVector<Scalar>& grads, OptimizerState<Scalar>& state) {
    require_same_layout(params, grads, "sgd_step");
    require_same_layout(params, state.velocity, "sgd_step");
    if (state.step >= state.total_steps) throw std::logic_error("sgd_step: schedule exhausted");
    const auto lr = static_cast<Scalar>(state.current_lr());
    const auto momentum = static_cast<Scalar>(state.momentum);
    auto& v = state.velocity.values();
    v = momentum * v + grads.values();
    params.values() -= lr * v;
    ++state.step;
}

struct GradCheckReport {
    double max_relative_error = 0.0;
    Index worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    Index checked = 0;
};

// Compares `analytic` against fourth-order central differences of `loss` on a seeded
// random subsample of at least `samples` entries (all entries if fewer).
template <typename Scalar>
GradCheckReport finite_diff_check(const std::function<Scalar(const ParamVector<Scalar>&)>& loss_fn,
                                  const ParamVector<Scalar>& analytic, const ParamVector<Scalar>& params,
                                  double epsilon, Index samples = 256, std::uint64_t seed = 0) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("finite_diff_check: epsilon must be positive");
    if (samples < 200) samples = 200;
    require_same_layout(params, analytic, "finite_diff_check");
    const Scalar loss = loss_fn(params);
    if (loss != loss_fn(params)) throw std::runtime_error("finite_diff_check: loss is not deterministic");

    std::vector<Index> order(static_cast<std::size_t>(params.size()));
    std::iota(order.begin(), order.end(), Index{0});
    if (params.size() > samples) {
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(static_cast<std::size_t>(samples));
        std::sort(order.begin(), order.end());
    }

    GradCheckReport report;
    ParamVector<Scalar> probe = params;
    constexpr int kRefinements = 6;
    const double unit_roundoff = std::numeric_limits<Scalar>::epsilon();
    for (Index i : order) {
        const Scalar original = probe.values()[i];
        auto at = [&](double offset) {
            probe.values()[i] = original + static_cast<Scalar>(offset);
            return static_cast<double>(loss_fn(probe));
        };
        // Fourth-order central stencil.
        auto derivative = [&](double h) { return (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h); };
        // Shrink the step until two successive estimates agree; an estimate whose stencil
        // straddles a kink (ReLU) moves with the step, a smooth one does not.
        double h = epsilon;
        double numeric = derivative(h);
        for (int level = 0; level < kRefinements; ++level) {
            h /= 4.0;
            const double finer = derivative(h);
            const double roundoff = 64.0 * unit_roundoff * std::max(std::abs(static_cast<double>(loss)), 1.0) / h;
            const bool agree = std::abs(finer - numeric) <= 1e-6 * (std::abs(finer) + std::abs(numeric)) + roundoff;
            numeric = finer;
            if (agree) break;
        }
        probe.values()[i] = original;

        const double exact = static_cast<double>(analytic.values()[i]);
        const double rel = std::abs(exact - numeric) / std::max(std::abs(exact) + std::abs(numeric), 1e-8);
        if (report.worst_index < 0 || rel > report.max_relative_error) {
            report.max_relative_error = rel;
            report.worst_index = i;
            report.worst_analytic = exact;
            report.worst_numeric = numeric;
        }
        ++report.checked;
    }
    return report;
}

// Same check for a function returning both the loss and its analytic gradient.
template <typename Scalar>
GradCheckReport finite_diff_check(
    const std::function<std::pair<Scalar, ParamVector<Scalar>>(const ParamVector<Scalar>&)>& loss_and_grad,
    const ParamVector<Scalar>& params, double epsilon, Index samples = 256, std::uint64_t seed = 0) {
    const auto analytic = loss_and_grad(params).second;
    const std::function<Scalar(const ParamVector<Scalar>&)> loss_fn = [&](const ParamVector<Scalar>& p) {
        return loss_and_grad(p).first;
    };
    return finite_diff_check(loss_fn, analytic, params, epsilon, samples, seed);
}

} // namespace mfa
