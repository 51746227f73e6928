#pragma once

#include "mfa/segnet.hpp"

#include <stdexcept>

namespace mfa {

// Temporal average of a learner's parameters. Never handed to an optimizer.
template <typename Scalar>
struct MeanNet {
    SegNet<Scalar> net;
    double alpha = 0.99;
    long steps_applied = 0;

    const ParamVector<Scalar>& params() const { return net.params(); }
};

template <typename Scalar>
MeanNet<Scalar> ema_init(const SegNet<Scalar>& net, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ema_init: alpha must lie in [0,1]");
    return MeanNet<Scalar>{net, alpha, 0};
}

// theta_mean <- alpha * theta_mean + (1 - alpha) * theta
template <typename Scalar>
void ema_update(MeanNet<Scalar>& mean, const ParamVector<Scalar>& current) {
    require_same_layout(mean.net.params(), current, "ema_update");
    const auto a = static_cast<Scalar>(mean.alpha);
    const auto b = static_cast<Scalar>(1.0 - mean.alpha);
    auto& values = mean.net.params().values();
    values = a * values + b * current.values();
    ++mean.steps_applied;
}

} // namespace mfa
