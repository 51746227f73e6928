#pragma once

#include "mfa/dense.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace mfa {

// Fixed fully-convolutional per-pixel classifier:
//   conv3x3(3->16)+ReLU, conv3x3(16->16)+ReLU, conv3x3(16->16)+ReLU, conv1x1(16->C).
// Stride 1, zero padding, 7x7 receptive field. Weights of each conv are stored as a
// row-major [k, k, Cin, Cout] block, i.e. a (k*k*Cin) x Cout matrix.
template <typename Scalar>
class SegNet {
public:
    static constexpr int kInputChannels = 3;
    static constexpr int kHidden = 16;
    static constexpr Index kMinExtent = 7;

    struct ConvSpec {
        const char* weight;
        const char* bias;
        int kernel;
        int in_channels;
        bool relu;
    };

    SegNet() = default;
    SegNet(ParamVector<Scalar> params, int num_classes);

    // He-normal weights scaled by fan-in, zero biases; a pure function of (seed, num_classes).
    static SegNet init(std::uint64_t seed, int num_classes);
    static SegNet zeros(int num_classes);
    static ParamLayout layout(int num_classes);

    int num_classes() const { return num_classes_; }
    ParamVector<Scalar>& params() { return params_; }
    const ParamVector<Scalar>& params() const { return params_; }

    static const std::array<ConvSpec, 4>& convs();

private:
    ParamVector<Scalar> params_;
    int num_classes_ = 0;
};

// Per-layer activations kept by the forward pass for backpropagation.
template <typename Scalar>
struct ForwardCache {
    DenseArray<Scalar> input;
    // hidden[l][n]: post-ReLU output of conv l for image n, (H*W) x 16.
    std::array<std::vector<PixelMatrix<Scalar>>, 3> hidden;
    DenseArray<Scalar> logits;
};

template <typename Scalar>
DenseArray<Scalar> forward(const SegNet<Scalar>& net, const DenseArray<Scalar>& batch);

template <typename Scalar>
ForwardCache<Scalar> forward_cached(const SegNet<Scalar>& net, const DenseArray<Scalar>& batch);

// Gradient of sum(logits * grad_logits) with respect to every parameter.
template <typename Scalar>
ParamVector<Scalar> backward(const SegNet<Scalar>& net, const ForwardCache<Scalar>& cache,
                             const DenseArray<Scalar>& grad_logits);

template <typename Scalar>
ParamVector<Scalar> backward(const SegNet<Scalar>& net, const DenseArray<Scalar>& batch,
                             const DenseArray<Scalar>& grad_logits);

extern template class SegNet<float>;
extern template class SegNet<double>;

} // namespace mfa
