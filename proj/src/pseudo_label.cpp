#include "mfa/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

namespace mfa {

namespace {

void check_phi(double phi, const char* what) {
    if (!(phi > 0.0 && phi <= 1.0))
        throw std::invalid_argument(std::string(what) + ": phi " + std::to_string(phi) + " outside (0,1]");
}

template <typename Scalar>
void check_pairing(std::span<const LabelMap> labels, std::span<const ConfidenceMap<Scalar>> confidence,
                   const char* what) {
    if (labels.size() != confidence.size())
        throw std::invalid_argument(std::string(what) + ": label and confidence counts differ");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i].rows() != confidence[i].rows() || labels[i].cols() != confidence[i].cols())
            throw std::invalid_argument(std::string(what) + ": label/confidence shape mismatch at image " +
                                        std::to_string(i));
}

} // namespace

template <typename Scalar>
ArgmaxResult<Scalar> argmax_onehot(const DenseArray<Scalar>& probs) {
    Shape shape = probs.shape();
    if (shape.size() == 3) shape.insert(shape.begin(), 1);
    if (shape.size() != 4) throw std::invalid_argument("argmax_onehot: expected [N,H,W,C] probabilities");
    const Index n_images = shape[0], height = shape[1], width = shape[2], classes = shape[3];
    if (classes > kIgnoreLabel) throw std::invalid_argument("argmax_onehot: at most 255 classes");

    ArgmaxResult<Scalar> out;
    const Index per_image = height * width * classes;
    for (Index n = 0; n < n_images; ++n) {
        ConstPixelMap<Scalar> image(probs.data() + n * per_image, height * width, classes);
        LabelMap labels(height, width);
        ConfidenceMap<Scalar> conf(height, width);
        for (Index p = 0; p < height * width; ++p) {
            Index best = 0;
            Scalar best_value = image(p, 0);
            for (Index c = 1; c < classes; ++c) {
                if (image(p, c) > best_value) {
                    best_value = image(p, c);
                    best = c;
                }
            }
            labels(p / width, p % width) = static_cast<std::uint8_t>(best);
            conf(p / width, p % width) = best_value;
        }
        out.labels.push_back(std::move(labels));
        out.confidence.push_back(std::move(conf));
    }
    return out;
}

template <typename Scalar>
DenseArray<Scalar> ensemble_probs(const DenseArray<Scalar>& a, const DenseArray<Scalar>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("ensemble_probs: shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    DenseArray<Scalar> out(a.shape());
    out.values() = Scalar(0.5) * (a.values() + b.values());
    return out;
}

Index selection_rank(double phi, Index count) {
    if (count <= 0) return 0;
    // Guard so products that are integers in exact arithmetic (0.7 * 10) do not round up.
    const auto rank = static_cast<Index>(std::ceil(phi * static_cast<double>(count) - 1e-9));
    return std::clamp<Index>(rank, 1, count);
}

template <typename Scalar>
ClassThresholds cbst_thresholds(std::span<const LabelMap> labels, std::span<const ConfidenceMap<Scalar>> confidence,
                                double phi, int num_classes) {
    check_phi(phi, "cbst_thresholds");
    check_pairing<Scalar>(labels, confidence, "cbst_thresholds");
    if (num_classes < 1 || num_classes > kIgnoreLabel)
        throw std::invalid_argument("cbst_thresholds: class count must lie in [1,255]");

    std::vector<std::vector<Scalar>> per_class(static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (Index p = 0; p < labels[i].size(); ++p) {
            const std::uint8_t label = labels[i](p);
            if (label == kIgnoreLabel) continue;
            if (label >= num_classes)
                throw std::invalid_argument("cbst_thresholds: label " + std::to_string(label) + " out of range");
            per_class[label].push_back(confidence[i](p));
        }
    }

    ClassThresholds out;
    out.phi = phi;
    out.tau.resize(static_cast<std::size_t>(num_classes));
    for (int c = 0; c < num_classes; ++c) {
        auto& values = per_class[static_cast<std::size_t>(c)];
        if (values.empty()) continue;
        const Index rank = selection_rank(phi, static_cast<Index>(values.size()));
        // rank-th largest confidence
        auto nth = values.begin() + (rank - 1);
        std::nth_element(values.begin(), nth, values.end(), std::greater<>());
        out.tau[static_cast<std::size_t>(c)] = static_cast<double>(*nth);
    }
    return out;
}

template <typename Scalar>
PseudoLabels apply_thresholds(std::span<const LabelMap> labels, std::span<const ConfidenceMap<Scalar>> confidence,
                              const ClassThresholds& thresholds) {
    check_pairing<Scalar>(labels, confidence, "apply_thresholds");
    const auto num_classes = static_cast<int>(thresholds.tau.size());
    PseudoLabels out;
    out.labels.reserve(labels.size());
    out.masks.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        LabelMap kept = labels[i];
        Mask mask = Mask::Zero(kept.rows(), kept.cols());
        for (Index p = 0; p < kept.size(); ++p) {
            const std::uint8_t label = kept(p);
            if (label == kIgnoreLabel) continue;
            if (label >= num_classes)
                throw std::invalid_argument("apply_thresholds: label " + std::to_string(label) + " out of range");
            const auto& tau = thresholds.tau[label];
            if (tau && static_cast<double>(confidence[i](p)) >= *tau)
                mask(p) = 1;
            else
                kept(p) = kIgnoreLabel;
        }
        out.labels.push_back(std::move(kept));
        out.masks.push_back(std::move(mask));
    }
    return out;
}

double phi_schedule(long step, long total_steps, double rho_min, double rho_max) {
    if (total_steps <= 0) throw std::invalid_argument("phi_schedule: total_steps must be positive");
    if (step < 0 || step > total_steps) throw std::invalid_argument("phi_schedule: step outside [0, total_steps]");
    if (!(rho_min > 0.0 && rho_min <= rho_max && rho_max <= 1.0))
        throw std::invalid_argument("phi_schedule: need 0 < rho_min <= rho_max <= 1");
    return rho_min + (rho_max - rho_min) * static_cast<double>(step) / static_cast<double>(total_steps);
}

template <typename Scalar>
PseudoLabels select_class_balanced(const DenseArray<Scalar>& probs, double phi, ClassThresholds* thresholds) {
    check_phi(phi, "select_class_balanced");
    const auto argmax = argmax_onehot(probs);
    const auto classes = static_cast<int>(probs.shape().back());
    ClassThresholds tau = cbst_thresholds<Scalar>(argmax.labels, argmax.confidence, phi, classes);
    PseudoLabels out = apply_thresholds<Scalar>(argmax.labels, argmax.confidence, tau);
    if (thresholds) *thresholds = std::move(tau);
    return out;
}

template <typename Scalar>
OnlineSelection online_cbst(const DenseArray<Scalar>& probs_a, const DenseArray<Scalar>& probs_b, double phi) {
    if (probs_a.shape() != probs_b.shape())
        throw std::invalid_argument("online_cbst: shape mismatch " + shape_string(probs_a.shape()) + " vs " +
                                    shape_string(probs_b.shape()));
    OnlineSelection out;
    out.a = select_class_balanced(probs_a, phi, &out.thresholds_a);
    out.b = select_class_balanced(probs_b, phi, &out.thresholds_b);
    return out;
}

std::vector<double> SelectionStats::selected_fraction() const {
    std::vector<double> out(predicted.size(), 0.0);
    for (std::size_t c = 0; c < predicted.size(); ++c)
        if (predicted[c] > 0) out[c] = static_cast<double>(selected[c]) / static_cast<double>(predicted[c]);
    return out;
}

SelectionStats selection_stats(std::span<const LabelMap> predicted, const PseudoLabels& kept, int num_classes) {
    SelectionStats stats{std::vector<long>(static_cast<std::size_t>(num_classes), 0),
                         std::vector<long>(static_cast<std::size_t>(num_classes), 0)};
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        for (Index p = 0; p < predicted[i].size(); ++p) {
            const auto label = predicted[i](p);
            if (label < num_classes) ++stats.predicted[label];
            const auto k = kept.labels[i](p);
            if (k < num_classes) ++stats.selected[k];
        }
    }
    return stats;
}

#define MFA_INSTANTIATE_PSEUDO(S)                                                                                  \
    template ArgmaxResult<S> argmax_onehot(const DenseArray<S>&);                                                  \
    template DenseArray<S> ensemble_probs(const DenseArray<S>&, const DenseArray<S>&);                             \
    template ClassThresholds cbst_thresholds(std::span<const LabelMap>, std::span<const ConfidenceMap<S>>, double, \
                                             int);                                                                 \
    template PseudoLabels apply_thresholds(std::span<const LabelMap>, std::span<const ConfidenceMap<S>>,           \
                                           const ClassThresholds&);                                                \
    template PseudoLabels select_class_balanced(const DenseArray<S>&, double, ClassThresholds*);                   \
    template OnlineSelection online_cbst(const DenseArray<S>&, const DenseArray<S>&, double);

MFA_INSTANTIATE_PSEUDO(float)
MFA_INSTANTIATE_PSEUDO(double)

#undef MFA_INSTANTIATE_PSEUDO

} // namespace mfa
