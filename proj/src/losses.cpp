#include "mfa/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mfa {

namespace {

template <typename Scalar>
void check_targets(const DenseArray<Scalar>& logits, std::span<const LabelMap> labels, std::span<const Mask> masks,
                   const char* what) {
    if (logits.rank() != 4) throw std::invalid_argument(std::string(what) + ": expected [N,H,W,C] logits");
    const auto n_images = static_cast<std::size_t>(logits.dim(0));
    if (labels.size() != n_images || masks.size() != n_images)
        throw std::invalid_argument(std::string(what) + ": label/mask count does not match batch size");
    for (std::size_t i = 0; i < n_images; ++i) {
        if (labels[i].rows() != logits.dim(1) || labels[i].cols() != logits.dim(2) ||
            masks[i].rows() != logits.dim(1) || masks[i].cols() != logits.dim(2))
            throw std::invalid_argument(std::string(what) + ": label/mask shape mismatch at image " +
                                        std::to_string(i));
    }
}

} // namespace

template <typename Scalar>
LossResult<Scalar> masked_ce(const DenseArray<Scalar>& logits, std::span<const LabelMap> labels,
                             std::span<const Mask> masks) {
    check_targets(logits, labels, masks, "masked_ce");
    const Index classes = logits.dim(3);

    long selected = 0;
    for (std::size_t i = 0; i < masks.size(); ++i) {
        for (Index p = 0; p < masks[i].size(); ++p) {
            if (!masks[i](p)) continue;
            const auto label = labels[i](p);
            if (label == kIgnoreLabel)
                throw std::invalid_argument("masked_ce: mask selects an ignored (255) pixel in image " +
                                            std::to_string(i));
            if (label >= classes)
                throw std::invalid_argument("masked_ce: label " + std::to_string(label) + " out of range");
            ++selected;
        }
    }

    LossResult<Scalar> out;
    out.grad_logits = DenseArray<Scalar>(logits.shape());
    out.selected = selected;
    if (selected == 0) return out;

    const Scalar scale = Scalar(1) / static_cast<Scalar>(selected);
    double total = 0.0;
    for (Index n = 0; n < logits.dim(0); ++n) {
        const auto z = logits.image(n);
        auto grad = out.grad_logits.image(n);
        const auto& label_map = labels[static_cast<std::size_t>(n)];
        const auto& mask = masks[static_cast<std::size_t>(n)];
        for (Index p = 0; p < z.rows(); ++p) {
            if (!mask(p)) continue;
            const Scalar peak = z.row(p).maxCoeff();
            const auto shifted = (z.row(p).array() - peak).eval();
            const auto e = shifted.exp().eval();
            const Scalar norm = e.sum();
            const auto label = static_cast<Index>(label_map(p));
            total -= static_cast<double>(shifted(label) - std::log(norm));
            grad.row(p) = e / norm * scale;
            grad(p, label) -= scale;
        }
    }
    out.loss = static_cast<Scalar>(total / static_cast<double>(selected));
    return out;
}

template <typename Scalar>
LossResult<Scalar> cross_loss(const DenseArray<Scalar>& student_logits, std::span<const LabelMap> teacher_labels,
                              std::span<const Mask> teacher_masks) {
    return masked_ce(student_logits, teacher_labels, teacher_masks);
}

template <typename Scalar>
LossResult<Scalar> consistency_loss(const DenseArray<Scalar>& student_probs, const DenseArray<Scalar>& mean_probs) {
    if (student_probs.shape() != mean_probs.shape())
        throw std::invalid_argument("consistency_loss: shape mismatch " + shape_string(student_probs.shape()) +
                                    " vs " + shape_string(mean_probs.shape()));
    if (student_probs.size() == 0) throw std::invalid_argument("consistency_loss: empty input");
    const Index classes = student_probs.shape().back();
    const Index pixels = student_probs.size() / classes;
    const auto count = static_cast<Scalar>(student_probs.size());

    LossResult<Scalar> out;
    out.grad_logits = DenseArray<Scalar>(student_probs.shape());
    ConstPixelMap<Scalar> p(student_probs.data(), pixels, classes);
    ConstPixelMap<Scalar> q(mean_probs.data(), pixels, classes);
    PixelMap<Scalar> grad(out.grad_logits.data(), pixels, classes);

    const auto diff = (p - q).eval();
    out.loss = diff.squaredNorm() / count;
    // dL/dp = 2 (p - q) / K, then through the softmax Jacobian:
    // dL/dz_j = p_j (g_j - sum_i g_i p_i)
    const auto g = (diff * (Scalar(2) / count)).eval();
    const auto weighted = (g.cwiseProduct(p)).rowwise().sum().eval();
    grad = p.cwiseProduct(g - weighted.replicate(1, classes));
    out.selected = static_cast<long>(pixels);
    return out;
}

template <typename Scalar>
LossReport total_loss(const LearnerTerms<Scalar>& a, const LearnerTerms<Scalar>& b, double lambda_cst,
                      double lambda_cross) {
    LossReport r;
    r.self_a = static_cast<double>(a.self.loss);
    r.self_b = static_cast<double>(b.self.loss);
    r.cross_a = static_cast<double>(a.cross.loss);
    r.cross_b = static_cast<double>(b.cross.loss);
    r.cst_a = static_cast<double>(a.cst.loss);
    r.cst_b = static_cast<double>(b.cst.loss);
    r.total = r.self_a + r.self_b + lambda_cst * (r.cst_a + r.cst_b) + lambda_cross * (r.cross_a + r.cross_b);
    r.self_a_pixels = a.self.selected;
    r.self_b_pixels = b.self.selected;
    r.cross_a_pixels = a.cross.selected;
    r.cross_b_pixels = b.cross.selected;
    return r;
}

template <typename Scalar>
DenseArray<Scalar> learner_grad(const LearnerTerms<Scalar>& terms, const Shape& logits_shape, double lambda_cst,
                                double lambda_cross) {
    DenseArray<Scalar> grad(logits_shape);
    auto add = [&](const LossResult<Scalar>& term, double weight) {
        if (term.grad_logits.size() == 0 || weight == 0.0) return;
        if (term.grad_logits.shape() != logits_shape)
            throw std::invalid_argument("learner_grad: term gradient shape mismatch");
        grad.values() += static_cast<Scalar>(weight) * term.grad_logits.values();
    };
    add(terms.self, 1.0);
    add(terms.cross, lambda_cross);
    add(terms.cst, lambda_cst);
    return grad;
}

#define MFA_INSTANTIATE_LOSSES(S)                                                                              \
    template LossResult<S> masked_ce(const DenseArray<S>&, std::span<const LabelMap>, std::span<const Mask>);  \
    template LossResult<S> cross_loss(const DenseArray<S>&, std::span<const LabelMap>, std::span<const Mask>); \
    template LossResult<S> consistency_loss(const DenseArray<S>&, const DenseArray<S>&);                       \
    template LossReport total_loss(const LearnerTerms<S>&, const LearnerTerms<S>&, double, double);            \
    template DenseArray<S> learner_grad(const LearnerTerms<S>&, const Shape&, double, double);

MFA_INSTANTIATE_LOSSES(float)
MFA_INSTANTIATE_LOSSES(double)

#undef MFA_INSTANTIATE_LOSSES

} // namespace mfa
