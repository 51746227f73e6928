#pragma once

#include "mfa/dense.hpp"

#include <span>

namespace mfa {

template <typename Scalar>
struct LossResult {
    Scalar loss = 0;
    DenseArray<Scalar> grad_logits;  // d loss / d logits, same shape as the logits
    long selected = 0;
};

// Cross entropy over selected pixels, normalized by the selected count:
//   -(1/max(S,1)) * sum_{mask=1} log softmax(logits)[label]
template <typename Scalar>
LossResult<Scalar> masked_ce(const DenseArray<Scalar>& logits, std::span<const LabelMap> labels,
                             std::span<const Mask> masks);

// Cross-model supervision from the opposite learner's mean-net pseudo labels. With one-hot
// teachers this is the same computation as masked_ce; the teacher receives no gradient.
template <typename Scalar>
LossResult<Scalar> cross_loss(const DenseArray<Scalar>& student_logits, std::span<const LabelMap> teacher_labels,
                              std::span<const Mask> teacher_masks);

// Mean squared difference between student and mean-net probabilities over N*H*W*C
// entries. The gradient is taken with respect to the student logits.
template <typename Scalar>
LossResult<Scalar> consistency_loss(const DenseArray<Scalar>& student_probs, const DenseArray<Scalar>& mean_probs);

// The three terms a single learner receives in one step.
template <typename Scalar>
struct LearnerTerms {
    LossResult<Scalar> self;
    LossResult<Scalar> cross;
    LossResult<Scalar> cst;
};

struct LossReport {
    double self_a = 0, self_b = 0;
    double cross_a = 0, cross_b = 0;
    double cst_a = 0, cst_b = 0;
    double total = 0;
    long self_a_pixels = 0, self_b_pixels = 0;
    long cross_a_pixels = 0, cross_b_pixels = 0;
};

// L_all = self_A + self_B + lambda_cst (cst_A + cst_B) + lambda_cross (cross_A + cross_B)
template <typename Scalar>
LossReport total_loss(const LearnerTerms<Scalar>& a, const LearnerTerms<Scalar>& b, double lambda_cst,
                      double lambda_cross);

// Gradient of L_all with respect to one learner's logits. Terms whose grad_logits is
// empty contribute nothing.
template <typename Scalar>
DenseArray<Scalar> learner_grad(const LearnerTerms<Scalar>& terms, const Shape& logits_shape, double lambda_cst,
                                double lambda_cross);

} // namespace mfa
