#include "mfa/segnet.hpp"
#include "mfa/rng.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace mfa {

namespace {

// im2col for a zero-padded k x k stride-1 convolution over one (H*W) x Cin image.
template <typename Scalar, typename In>
void im2col(const In& in, Index height, Index width, int kernel, PixelMatrix<Scalar>& cols) {
    const Index cin = in.cols();
    const int pad = kernel / 2;
    cols.setZero(height * width, kernel * kernel * cin);
    for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
            const Index col0 = (ky * kernel + kx) * cin;
            const Index dx = kx - pad;
            const Index x0 = std::max<Index>(0, -dx);
            const Index x1 = std::min<Index>(width, width - dx);
            if (x1 <= x0) continue;
            for (Index y = 0; y < height; ++y) {
                const Index sy = y + ky - pad;
                if (sy < 0 || sy >= height) continue;
                cols.block(y * width + x0, col0, x1 - x0, cin) = in.block(sy * width + x0 + dx, 0, x1 - x0, cin);
            }
        }
    }
}

// Adjoint of im2col: scatters column gradients back onto the image grid.
template <typename Scalar>
void col2im(const PixelMatrix<Scalar>& cols, Index height, Index width, int kernel, Index cin,
            PixelMatrix<Scalar>& out) {
    const int pad = kernel / 2;
    out.setZero(height * width, cin);
    for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
            const Index col0 = (ky * kernel + kx) * cin;
            const Index dx = kx - pad;
            const Index x0 = std::max<Index>(0, -dx);
            const Index x1 = std::min<Index>(width, width - dx);
            if (x1 <= x0) continue;
            for (Index y = 0; y < height; ++y) {
                const Index sy = y + ky - pad;
                if (sy < 0 || sy >= height) continue;
                out.block(sy * width + x0 + dx, 0, x1 - x0, cin) += cols.block(y * width + x0, col0, x1 - x0, cin);
            }
        }
    }
}

template <typename Scalar>
ConstPixelMap<Scalar> weight_matrix(const ParamVector<Scalar>& params, const char* name) {
    const auto& slot = params.slot(name);
    const Index cout = slot.shape.back();
    return ConstPixelMap<Scalar>(params.values().data() + slot.offset, slot.size() / cout, cout);
}

template <typename Scalar>
PixelMap<Scalar> weight_matrix(ParamVector<Scalar>& params, const char* name) {
    const auto& slot = params.slot(name);
    const Index cout = slot.shape.back();
    return PixelMap<Scalar>(params.values().data() + slot.offset, slot.size() / cout, cout);
}

void check_batch_shape(const Shape& shape, const char* what) {
    if (shape.size() != 4 || shape[3] != 3)
        throw std::invalid_argument(std::string(what) + ": expected a [N,H,W,3] batch, got " + shape_string(shape));
    if (shape[1] < SegNet<float>::kMinExtent || shape[2] < SegNet<float>::kMinExtent)
        throw std::invalid_argument(std::string(what) + ": H and W must be at least 7, got " + shape_string(shape));
}

} // namespace

template <typename Scalar>
const std::array<typename SegNet<Scalar>::ConvSpec, 4>& SegNet<Scalar>::convs() {
    static const std::array<ConvSpec, 4> specs{{
        {"conv1.weight", "conv1.bias", 3, kInputChannels, true},
        {"conv2.weight", "conv2.bias", 3, kHidden, true},
        {"conv3.weight", "conv3.bias", 3, kHidden, true},
        {"head.weight", "head.bias", 1, kHidden, false},
    }};
    return specs;
}

template <typename Scalar>
ParamLayout SegNet<Scalar>::layout(int num_classes) {
    if (num_classes < 2) throw std::invalid_argument("SegNet: need at least 2 classes");
    std::vector<std::pair<std::string, Shape>> entries;
    for (const auto& conv : convs()) {
        const Index out = conv.relu ? kHidden : num_classes;
        entries.emplace_back(conv.weight, Shape{conv.kernel, conv.kernel, conv.in_channels, out});
        entries.emplace_back(conv.bias, Shape{out});
    }
    return make_layout(entries);
}

template <typename Scalar>
SegNet<Scalar>::SegNet(ParamVector<Scalar> params, int num_classes)
    : params_(std::move(params)), num_classes_(num_classes) {
    if (params_.layout() != layout(num_classes)) throw std::invalid_argument("SegNet: parameter layout mismatch");
}

template <typename Scalar>
SegNet<Scalar> SegNet<Scalar>::zeros(int num_classes) {
    return SegNet(ParamVector<Scalar>(layout(num_classes)), num_classes);
}

template <typename Scalar>
SegNet<Scalar> SegNet<Scalar>::init(std::uint64_t seed, int num_classes) {
    SegNet net = zeros(num_classes);
    auto rng = make_rng(seed, "segnet.init");
    for (const auto& conv : convs()) {
        const double fan_in = static_cast<double>(conv.kernel * conv.kernel * conv.in_channels);
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
        auto w = net.params_.segment(conv.weight);
        for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(normal(rng));
    }
    return net;
}

template <typename Scalar>
ForwardCache<Scalar> forward_cached(const SegNet<Scalar>& net, const DenseArray<Scalar>& batch) {
    check_batch_shape(batch.shape(), "forward");
    const Index n_images = batch.dim(0), height = batch.dim(1), width = batch.dim(2);
    const auto& convs = SegNet<Scalar>::convs();
    const auto& params = net.params();

    ForwardCache<Scalar> cache;
    cache.input = batch;
    cache.logits = DenseArray<Scalar>({n_images, height, width, net.num_classes()});
    for (auto& layer : cache.hidden) layer.resize(static_cast<std::size_t>(n_images));

    PixelMatrix<Scalar> cols;
    for (Index n = 0; n < n_images; ++n) {
        for (std::size_t l = 0; l < convs.size(); ++l) {
            const auto& conv = convs[l];
            const auto weights = weight_matrix(params, conv.weight);
            const auto bias = params.segment(conv.bias).transpose();
            if (l == 0)
                im2col<Scalar>(batch.image(n), height, width, conv.kernel, cols);
            else if (conv.kernel > 1)
                im2col<Scalar>(cache.hidden[l - 1][static_cast<std::size_t>(n)], height, width, conv.kernel, cols);

            const PixelMatrix<Scalar>& source =
                conv.kernel > 1 ? cols : cache.hidden[l - 1][static_cast<std::size_t>(n)];
            if (conv.relu) {
                auto& out = cache.hidden[l][static_cast<std::size_t>(n)];
                out.noalias() = source * weights;
                out.rowwise() += bias;
                out = out.cwiseMax(Scalar(0));
            } else {
                auto logits = cache.logits.image(n);
                logits.noalias() = source * weights;
                logits.rowwise() += bias;
            }
        }
    }
    return cache;
}

template <typename Scalar>
DenseArray<Scalar> forward(const SegNet<Scalar>& net, const DenseArray<Scalar>& batch) {
    return forward_cached(net, batch).logits;
}

template <typename Scalar>
ParamVector<Scalar> backward(const SegNet<Scalar>& net, const ForwardCache<Scalar>& cache,
                             const DenseArray<Scalar>& grad_logits) {
    if (grad_logits.shape() != cache.logits.shape())
        throw std::invalid_argument("backward: grad_logits shape " + shape_string(grad_logits.shape()) +
                                    " does not match logits " + shape_string(cache.logits.shape()));
    const Index n_images = cache.input.dim(0), height = cache.input.dim(1), width = cache.input.dim(2);
    const auto& convs = SegNet<Scalar>::convs();
    const auto& params = net.params();
    ParamVector<Scalar> grads = params.zeros_like();

    PixelMatrix<Scalar> cols, grad_cols, grad_out, grad_in;
    for (Index n = 0; n < n_images; ++n) {
        const auto idx = static_cast<std::size_t>(n);
        grad_out = grad_logits.image(n);
        for (std::size_t l = convs.size(); l-- > 0;) {
            const auto& conv = convs[l];
            if (conv.relu) grad_out = (cache.hidden[l][idx].array() > Scalar(0)).select(grad_out, Scalar(0));

            auto grad_w = weight_matrix(grads, conv.weight);
            grads.segment(conv.bias) += grad_out.colwise().sum().transpose();

            if (l == 0)
                im2col<Scalar>(cache.input.image(n), height, width, conv.kernel, cols);
            else if (conv.kernel > 1)
                im2col<Scalar>(cache.hidden[l - 1][idx], height, width, conv.kernel, cols);
            const PixelMatrix<Scalar>& source = conv.kernel > 1 ? cols : cache.hidden[l - 1][idx];
            grad_w.noalias() += source.transpose() * grad_out;

            if (l == 0) break;
            const auto weights = weight_matrix(params, conv.weight);
            if (conv.kernel > 1) {
                grad_cols.noalias() = grad_out * weights.transpose();
                col2im<Scalar>(grad_cols, height, width, conv.kernel, conv.in_channels, grad_in);
            } else {
                grad_in.noalias() = grad_out * weights.transpose();
            }
            grad_out.swap(grad_in);
        }
    }
    return grads;
}

template <typename Scalar>
ParamVector<Scalar> backward(const SegNet<Scalar>& net, const DenseArray<Scalar>& batch,
                             const DenseArray<Scalar>& grad_logits) {
    return backward(net, forward_cached(net, batch), grad_logits);
}

template class SegNet<float>;
template class SegNet<double>;

#define MFA_INSTANTIATE_SEGNET(S)                                                                          \
    template DenseArray<S> forward(const SegNet<S>&, const DenseArray<S>&);                                \
    template ForwardCache<S> forward_cached(const SegNet<S>&, const DenseArray<S>&);                       \
    template ParamVector<S> backward(const SegNet<S>&, const ForwardCache<S>&, const DenseArray<S>&);      \
    template ParamVector<S> backward(const SegNet<S>&, const DenseArray<S>&, const DenseArray<S>&);

MFA_INSTANTIATE_SEGNET(float)
MFA_INSTANTIATE_SEGNET(double)

#undef MFA_INSTANTIATE_SEGNET

} // namespace mfa
