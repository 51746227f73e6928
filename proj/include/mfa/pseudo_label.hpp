#pragma once

#include "mfa/dense.hpp"

#include <optional>
#include <span>
#include <vector>

namespace mfa {

template <typename Scalar>
struct ArgmaxResult {
    std::vector<LabelMap> labels;
    std::vector<ConfidenceMap<Scalar>> confidence;
};

// Selected pseudo labels: label 255 and mask 0 mark ignored pixels.
struct PseudoLabels {
    std::vector<LabelMap> labels;
    std::vector<Mask> masks;
};

// Per-class confidence thresholds; std::nullopt marks a class with no predicted pixels.
struct ClassThresholds {
    std::vector<std::optional<double>> tau;
    double phi = 1.0;
};

// Per-pixel argmax class and max probability of a [N,H,W,C] (or [H,W,C]) probability
// array. Ties go to the lowest class index.
template <typename Scalar>
ArgmaxResult<Scalar> argmax_onehot(const DenseArray<Scalar>& probs);

// Element-wise mean of two probability arrays of identical shape.
template <typename Scalar>
DenseArray<Scalar> ensemble_probs(const DenseArray<Scalar>& a, const DenseArray<Scalar>& b);

// Rank used for a class with `count` candidates: ceil(phi * count), clamped to [1, count].
Index selection_rank(double phi, Index count);

// Class-balanced thresholds pooled over every map passed in: tau_c is the confidence at
// rank ceil(phi * n_c) of class c's descending-sorted confidences.
template <typename Scalar>
ClassThresholds cbst_thresholds(std::span<const LabelMap> labels, std::span<const ConfidenceMap<Scalar>> confidence,
                                double phi, int num_classes);

// Keeps a pixel iff its confidence is >= tau of its label; everything else becomes 255/0.
template <typename Scalar>
PseudoLabels apply_thresholds(std::span<const LabelMap> labels, std::span<const ConfidenceMap<Scalar>> confidence,
                              const ClassThresholds& thresholds);

// Linearly increasing selection proportion rho_min -> rho_max over training.
double phi_schedule(long step, long total_steps, double rho_min, double rho_max);

struct OnlineSelection {
    PseudoLabels a;
    PseudoLabels b;
    ClassThresholds thresholds_a;
    ClassThresholds thresholds_b;
};

// Online class-balanced selection: each probability batch is thresholded independently
// with thresholds pooled over all images of the mini-batch.
template <typename Scalar>
OnlineSelection online_cbst(const DenseArray<Scalar>& probs_a, const DenseArray<Scalar>& probs_b, double phi);

// Single-source variant of online_cbst (also the per-learner step of the offline pass).
template <typename Scalar>
PseudoLabels select_class_balanced(const DenseArray<Scalar>& probs, double phi, ClassThresholds* thresholds = nullptr);

// Counts, per class, how many pixels are predicted and how many are kept.
struct SelectionStats {
    std::vector<long> predicted;
    std::vector<long> selected;

    std::vector<double> selected_fraction() const;
};

SelectionStats selection_stats(std::span<const LabelMap> predicted, const PseudoLabels& kept, int num_classes);

} // namespace mfa
