#include "mfa/offline_cbst.hpp"
#include "mfa/errors.hpp"
#include "mfa/image_io.hpp"
#include "mfa/numerics.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>

namespace mfa {

DenseArray<float> predict_probs(const SegNet<float>& net, const ImageSet& images, std::size_t chunk) {
    if (images.size() == 0) throw std::invalid_argument("predict_probs: no images");
    const Shape& first = images.images.front().shape();
    DenseArray<float> probs({static_cast<Index>(images.size()), first[0], first[1], net.num_classes()});
    const Index per_image = first[0] * first[1] * net.num_classes();
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const std::size_t stop = std::min(images.size(), start + chunk);
        std::vector<const DenseArray<float>*> batch;
        for (std::size_t i = start; i < stop; ++i) batch.push_back(&images.images[i]);
        const auto p = softmax(forward(net, stack_images<float>(batch)));
        probs.values().segment(static_cast<Index>(start) * per_image, p.size()) = p.values();
    }
    return probs;
}

namespace {

OfflineLabels select_offline(const DenseArray<float>& probs, double phi_off) {
    OfflineLabels out;
    const auto argmax = argmax_onehot(probs);
    const auto classes = static_cast<int>(probs.shape().back());
    out.thresholds = cbst_thresholds<float>(argmax.labels, argmax.confidence, phi_off, classes);
    out.labels = apply_thresholds<float>(argmax.labels, argmax.confidence, out.thresholds);
    out.stats = selection_stats(argmax.labels, out.labels, classes);
    return out;
}

} // namespace

OfflineLabels offline_cbst(const SegNet<float>& net_a, const SegNet<float>& net_b, const ImageSet& target,
                           double phi_off) {
    if (target.size() == 0) throw std::invalid_argument("offline_cbst: empty target dataset");
    return select_offline(ensemble_probs(predict_probs(net_a, target), predict_probs(net_b, target)), phi_off);
}

OfflineLabels offline_cbst(const SegNet<float>& net, const ImageSet& target, double phi_off) {
    if (target.size() == 0) throw std::invalid_argument("offline_cbst: empty target dataset");
    return select_offline(predict_probs(net, target), phi_off);
}

namespace {

std::string label_file(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu.pgm", i);
    return buf;
}

} // namespace

void save_offline_labels(const std::filesystem::path& dir, const OfflineLabels& labels) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < labels.labels.labels.size(); ++i)
        write_pgm(dir / label_file(i), labels.labels.labels[i]);

    nlohmann::ordered_json manifest;
    manifest["phi"] = labels.thresholds.phi;
    auto& tau = manifest["thresholds"] = nlohmann::ordered_json::array();
    for (const auto& t : labels.thresholds.tau) tau.push_back(t ? nlohmann::ordered_json(*t) : nullptr);
    manifest["predicted_pixels"] = labels.stats.predicted;
    manifest["selected_pixels"] = labels.stats.selected;
    manifest["selected_fraction"] = labels.stats.selected_fraction();
    manifest["sources"] = labels.sources;
    manifest["count"] = labels.labels.labels.size();
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write pseudo-label manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

OfflineLabels load_offline_labels(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw MissingInputError("pseudo labels not found: " + (dir / "manifest.json").string());
    const auto manifest = nlohmann::json::parse(in);

    OfflineLabels out;
    out.thresholds.phi = manifest.at("phi").get<double>();
    for (const auto& t : manifest.at("thresholds"))
        out.thresholds.tau.push_back(t.is_null() ? std::nullopt : std::optional<double>(t.get<double>()));
    out.stats.predicted = manifest.at("predicted_pixels").get<std::vector<long>>();
    out.stats.selected = manifest.at("selected_pixels").get<std::vector<long>>();
    out.sources = manifest.at("sources").get<std::vector<std::string>>();
    const auto count = manifest.at("count").get<std::size_t>();
    for (std::size_t i = 0; i < count; ++i) {
        LabelMap labels = read_pgm(dir / label_file(i));
        out.labels.masks.push_back((labels != kIgnoreLabel).cast<std::uint8_t>());
        out.labels.labels.push_back(std::move(labels));
    }
    return out;
}

} // namespace mfa
