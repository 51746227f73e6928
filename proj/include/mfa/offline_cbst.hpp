#pragma once

#include "mfa/pseudo_label.hpp"
#include "mfa/segnet.hpp"
#include "mfa/toy_domains.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mfa {

struct OfflineLabels {
    PseudoLabels labels;
    ClassThresholds thresholds;
    SelectionStats stats;
    std::vector<std::string> sources;  // checkpoints the labels were generated from
};

// Softmax output of `net` for every image, [N,H,W,C], evaluated in chunks.
DenseArray<float> predict_probs(const SegNet<float>& net, const ImageSet& images, std::size_t chunk = 16);

// Dataset-level class-balanced selection over the ensemble (probability mean) of two
// warm-up nets. Thresholds are computed once over all target images.
OfflineLabels offline_cbst(const SegNet<float>& net_a, const SegNet<float>& net_b, const ImageSet& target,
                           double phi_off);

// Same selection from a single net's predictions.
OfflineLabels offline_cbst(const SegNet<float>& net, const ImageSet& target, double phi_off);

// <dir>/NNNNN.pgm (class id, 255 = ignored) plus <dir>/manifest.json with phi, thresholds,
// per-class counts and source checkpoints. Masks are reconstructed from the 255 sentinel.
void save_offline_labels(const std::filesystem::path& dir, const OfflineLabels& labels);
OfflineLabels load_offline_labels(const std::filesystem::path& dir);

} // namespace mfa
