#include "mfa/toy_domains.hpp"
#include "mfa/errors.hpp"
#include "mfa/image_io.hpp"
#include "mfa/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace mfa {

namespace {

using Rgb = std::array<double, 3>;

// Intrinsic class colors before any domain shift.
constexpr std::array<Rgb, kNumClasses> kPalette{{
    {0.45, 0.45, 0.45},  // background
    {0.22, 0.18, 0.28},  // stripe
    {0.90, 0.20, 0.20},  // circle
    {0.20, 0.75, 0.20},  // square
    {0.25, 0.35, 0.95},  // triangle
    {0.75, 0.73, 0.58},  // dot
}};

constexpr double kTintJitter = 0.05;
constexpr double kHueJitterDeg = 15.0;

ShapeKind kind_for_class(int class_id) {
    switch (class_id) {
        case 1: return ShapeKind::Stripe;
        case 2: return ShapeKind::Circle;
        case 3: return ShapeKind::Square;
        case 4: return ShapeKind::Triangle;
        case 5: return ShapeKind::Dot;
        default: throw std::invalid_argument("no shape for class " + std::to_string(class_id));
    }
}

// Pixel centers sit at (x + 0.5, y + 0.5).
bool covers(const SceneObject& obj, double px, double py) {
    const double dx = px - obj.center_x;
    const double dy = py - obj.center_y;
    const double c = std::cos(obj.orientation);
    const double s = std::sin(obj.orientation);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    switch (obj.kind) {
        case ShapeKind::Stripe: return std::abs(v) <= 0.5 * obj.size;
        case ShapeKind::Circle:
        case ShapeKind::Dot: return dx * dx + dy * dy <= obj.size * obj.size;
        case ShapeKind::Square: return std::abs(u) <= 0.5 * obj.size && std::abs(v) <= 0.5 * obj.size;
        case ShapeKind::Triangle: {
            // Equilateral triangle centered on its centroid, apex along -v.
            const double h = obj.size * std::sqrt(3.0) / 2.0;
            const double top = -2.0 * h / 3.0;
            const double bottom = h / 3.0;
            if (v < top || v > bottom) return false;
            const double half_width = 0.5 * obj.size * (v - top) / h;
            return std::abs(u) <= half_width;
        }
    }
    return false;
}

Eigen::Matrix3d hue_rotation(double degrees) {
    const double a = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(a);
    const double s = std::sin(a);
    const double k = (1.0 - c) / 3.0;
    const double r = std::sqrt(1.0 / 3.0) * s;
    Eigen::Matrix3d m;
    m << c + k, k - r, k + r,
         k + r, c + k, k - r,
         k - r, k + r, c + k;
    return m;
}

} // namespace

const std::array<std::string, kNumClasses>& class_names() {
    static const std::array<std::string, kNumClasses> names{"background", "stripe", "circle",
                                                            "square",     "triangle", "dot"};
    return names;
}

void SceneSpec::validate() const {
    if (height < 7 || width < 7) throw std::invalid_argument("SceneSpec: canvas must be at least 7x7");
    for (const auto& obj : objects) {
        if (obj.class_id < 1 || obj.class_id >= kNumClasses)
            throw std::invalid_argument("SceneSpec: class id " + std::to_string(obj.class_id) + " outside palette");
        if (obj.kind != kind_for_class(obj.class_id))
            throw std::invalid_argument("SceneSpec: shape kind does not match class " + std::to_string(obj.class_id));
        if (obj.center_x < 0 || obj.center_x > width || obj.center_y < 0 || obj.center_y > height)
            throw std::invalid_argument("SceneSpec: object center outside canvas");
        if (!(obj.size > 0) || obj.size > std::max(height, width))
            throw std::invalid_argument("SceneSpec: object size out of range");
    }
}

DomainConfig DomainConfig::source() { return DomainConfig{}; }

DomainConfig DomainConfig::target() { return DomainConfig{"target", 40.0, 0.08, 0.3, 0.1}; }

bool DomainConfig::is_identity() const {
    return hue_rotation_deg == 0.0 && noise_sigma == 0.0 && brightness_gradient == 0.0 && texture_amplitude == 0.0;
}

void DomainConfig::validate() const {
    if (name != "source" && name != "target") throw std::invalid_argument("DomainConfig: name must be source|target");
    if (noise_sigma < 0 || texture_amplitude < 0)
        throw std::invalid_argument("DomainConfig: noise_sigma and texture_amplitude must be non-negative");
    if (name == "source" && !is_identity())
        throw std::invalid_argument("DomainConfig: the source domain must use the identity appearance");
}

ImageSet Dataset::images() const {
    ImageSet out;
    out.images.reserve(items.size());
    for (const auto& item : items) out.images.push_back(item.image);
    return out;
}

SceneSpec random_scene(std::uint64_t seed, int height, int width) {
    SceneSpec spec;
    spec.seed = seed;
    spec.height = height;
    spec.width = width;
    auto rng = make_rng(seed, "scene.layout");
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto count = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    const double scale = std::min(height, width) / 64.0;

    auto place = [&](int class_id, double size, double margin) {
        SceneObject obj;
        obj.class_id = class_id;
        obj.kind = kind_for_class(class_id);
        obj.size = size;
        obj.center_x = uniform(margin, width - margin);
        obj.center_y = uniform(margin, height - margin);
        obj.orientation = uniform(0.0, std::numbers::pi);
        return obj;
    };

    spec.objects.push_back(place(1, uniform(6.0, 12.0) * scale, 0.3 * std::min(height, width)));

    std::vector<SceneObject> shapes;
    for (int i = count(1, 2); i > 0; --i) shapes.push_back(place(2, uniform(5.0, 9.0) * scale, 6.0 * scale));
    for (int i = count(1, 2); i > 0; --i) shapes.push_back(place(3, uniform(9.0, 15.0) * scale, 6.0 * scale));
    for (int i = count(1, 2); i > 0; --i) shapes.push_back(place(4, uniform(11.0, 18.0) * scale, 6.0 * scale));
    std::shuffle(shapes.begin(), shapes.end(), rng);
    spec.objects.insert(spec.objects.end(), shapes.begin(), shapes.end());

    const int dots = std::bernoulli_distribution(0.8)(rng) ? count(1, 4) : 0;
    for (int i = 0; i < dots; ++i) spec.objects.push_back(place(5, uniform(1.5, 2.5) * scale, 3.0 * scale));
    return spec;
}

Sample render_scene(const SceneSpec& spec, const DomainConfig& domain) {
    spec.validate();
    domain.validate();
    const int height = spec.height;
    const int width = spec.width;

    Sample sample;
    sample.scene_seed = spec.seed;
    sample.labels = LabelMap::Zero(height, width);
    Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> owner =
        Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(height, width, -1);
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
        const auto& obj = spec.objects[k];
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                if (covers(obj, x + 0.5, y + 0.5)) {
                    sample.labels(y, x) = static_cast<std::uint8_t>(obj.class_id);
                    owner(y, x) = static_cast<int>(k);
                }
    }

    // Intrinsic per-object tints are part of the scene, not the domain.
    auto tint_rng = make_rng(spec.seed, "scene.tint");
    std::uniform_real_distribution<double> jitter(-kTintJitter, kTintJitter);
    std::uniform_real_distribution<double> hue_jitter(-kHueJitterDeg, kHueJitterDeg);
    auto tinted = [&](int class_id) {
        Eigen::Vector3d c(kPalette[static_cast<std::size_t>(class_id)].data());
        c = hue_rotation(hue_jitter(tint_rng)) * c;
        for (int ch = 0; ch < 3; ++ch) c[ch] += jitter(tint_rng);
        return c;
    };
    const Eigen::Vector3d background = tinted(0);
    std::vector<Eigen::Vector3d> object_colors;
    for (const auto& obj : spec.objects) object_colors.push_back(tinted(obj.class_id));

    const Eigen::Matrix3d rotate = hue_rotation(domain.hue_rotation_deg);
    auto texture_rng = make_rng(spec.seed, "scene.texture");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double tex_angle = unit(texture_rng) * std::numbers::pi;
    const double tex_period = 6.0 + 6.0 * unit(texture_rng);
    const double tex_phase = unit(texture_rng) * 2.0 * std::numbers::pi;
    auto noise_rng = make_rng(spec.seed, "appearance.noise." + domain.name);
    std::normal_distribution<double> noise(0.0, 1.0);

    sample.image = DenseArray<float>({height, width, 3});
    auto& values = sample.image.values();
    for (int y = 0; y < height; ++y) {
        const double ramp = 1.0 + domain.brightness_gradient * (static_cast<double>(y) / (height - 1) - 0.5);
        for (int x = 0; x < width; ++x) {
            const int k = owner(y, x);
            Eigen::Vector3d c = k < 0 ? background : object_colors[static_cast<std::size_t>(k)];
            c = rotate * c;
            c *= ramp;
            const double wave = std::sin(2.0 * std::numbers::pi *
                                             (x * std::cos(tex_angle) + y * std::sin(tex_angle)) / tex_period +
                                         tex_phase);
            c.array() += domain.texture_amplitude * wave;
            for (int ch = 0; ch < 3; ++ch) {
                const double v = c[ch] + (domain.noise_sigma > 0 ? domain.noise_sigma * noise(noise_rng) : 0.0);
                values[(static_cast<Index>(y) * width + x) * 3 + ch] =
                    dequantize_unit(quantize_unit(static_cast<float>(v)));
            }
        }
    }
    return sample;
}

Dataset make_dataset(std::size_t n, std::uint64_t seed, const DomainConfig& domain, int height, int width) {
    if (n == 0) throw std::invalid_argument("make_dataset: n must be at least 1");
    domain.validate();
    Dataset ds;
    ds.domain = domain;
    ds.seed = seed;
    ds.height = height;
    ds.width = width;
    ds.items.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        ds.items.push_back(render_scene(random_scene(substream_seed(seed, "dataset.scene", i), height, width), domain));
    return ds;
}

namespace {

std::string item_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu", i);
    return buf;
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw MissingInputError("dataset manifest not found: " + (dir / "manifest.json").string());
    return nlohmann::json::parse(in);
}

} // namespace

void export_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "labels");
    nlohmann::ordered_json manifest;
    manifest["domain"] = {{"name", dataset.domain.name},
                          {"hue_rotation_deg", dataset.domain.hue_rotation_deg},
                          {"noise_sigma", dataset.domain.noise_sigma},
                          {"brightness_gradient", dataset.domain.brightness_gradient},
                          {"texture_amplitude", dataset.domain.texture_amplitude}};
    manifest["seed"] = dataset.seed;
    manifest["height"] = dataset.height;
    manifest["width"] = dataset.width;
    manifest["num_classes"] = kNumClasses;
    manifest["classes"] = class_names();
    auto& items = manifest["items"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        const auto name = item_name(i);
        write_ppm(dir / "images" / (name + ".ppm"), dataset.items[i].image);
        write_pgm(dir / "labels" / (name + ".pgm"), dataset.items[i].labels);
        items.push_back({{"image", "images/" + name + ".ppm"},
                         {"labels", "labels/" + name + ".pgm"},
                         {"scene_seed", dataset.items[i].scene_seed}});
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write dataset manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

Dataset import_dataset(const std::filesystem::path& dir) {
    const auto manifest = read_manifest(dir);
    Dataset ds;
    const auto& d = manifest.at("domain");
    ds.domain = DomainConfig{d.at("name").get<std::string>(), d.at("hue_rotation_deg").get<double>(),
                             d.at("noise_sigma").get<double>(), d.at("brightness_gradient").get<double>(),
                             d.at("texture_amplitude").get<double>()};
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.height = manifest.at("height").get<int>();
    ds.width = manifest.at("width").get<int>();
    for (const auto& item : manifest.at("items")) {
        Sample s;
        s.image = read_ppm(dir / item.at("image").get<std::string>());
        s.labels = read_pgm(dir / item.at("labels").get<std::string>());
        s.scene_seed = item.at("scene_seed").get<std::uint64_t>();
        ds.items.push_back(std::move(s));
    }
    return ds;
}

ImageSet import_images(const std::filesystem::path& dir) {
    const auto manifest = read_manifest(dir);
    ImageSet out;
    for (const auto& item : manifest.at("items")) out.images.push_back(read_ppm(dir / item.at("image").get<std::string>()));
    return out;
}

} // namespace mfa
