#pragma once

#include "mfa/dense.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mfa {

inline constexpr int kNumClasses = 6;

// 0 background, 1 stripe ("road"), 2 circle, 3 square, 4 triangle, 5 dot (rare, small).
const std::array<std::string, kNumClasses>& class_names();

enum class ShapeKind { Stripe, Circle, Square, Triangle, Dot };

struct SceneObject {
    int class_id = 0;
    ShapeKind kind = ShapeKind::Circle;
    double center_x = 0, center_y = 0;
    double size = 0;         // radius (circle, dot), side (square, triangle), width (stripe)
    double orientation = 0;  // radians
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int height = 64;
    int width = 64;
    std::vector<SceneObject> objects;  // later objects occlude earlier ones

    void validate() const;
};

// Appearance shift applied on top of a scene's intrinsic colors.
struct DomainConfig {
    std::string name = "source";
    double hue_rotation_deg = 0.0;
    double noise_sigma = 0.0;
    double brightness_gradient = 0.0;
    double texture_amplitude = 0.0;

    static DomainConfig source();
    static DomainConfig target();

    bool is_identity() const;
    void validate() const;
};

struct Sample {
    DenseArray<float> image;  // [H,W,3], values on the 8-bit grid k/255
    LabelMap labels;
    std::uint64_t scene_seed = 0;
};

// Images only: what training code is allowed to see of the target domain.
struct ImageSet {
    std::vector<DenseArray<float>> images;

    std::size_t size() const { return images.size(); }
};

struct Dataset {
    DomainConfig domain;
    std::uint64_t seed = 0;
    int height = 64;
    int width = 64;
    std::vector<Sample> items;

    std::size_t size() const { return items.size(); }
    ImageSet images() const;
};

// Random layout for one scene, a pure function of (seed, canvas).
SceneSpec random_scene(std::uint64_t seed, int height = 64, int width = 64);

// Geometry (hence labels) depends only on the scene; the domain only changes the image.
Sample render_scene(const SceneSpec& spec, const DomainConfig& domain);

Dataset make_dataset(std::size_t n, std::uint64_t seed, const DomainConfig& domain, int height = 64, int width = 64);

// <dir>/images/NNNNN.ppm, <dir>/labels/NNNNN.pgm, <dir>/manifest.json
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);
ImageSet import_images(const std::filesystem::path& dir);

} // namespace mfa
