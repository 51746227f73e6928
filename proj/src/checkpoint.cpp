#include "mfa/checkpoint.hpp"
#include "mfa/errors.hpp"

#include <json.hpp>

#include <array>
#include <cstring>
#include <fstream>

namespace mfa {

namespace {

constexpr std::array<char, 8> kMagic{'M', 'F', 'A', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
    return std::filesystem::path(stem.string() + suffix);
}

} // namespace

void save_checkpoint(const std::filesystem::path& stem, const SegNet<float>& net, const std::string& tag) {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    const auto& params = net.params();
    {
        std::ofstream out(with_suffix(stem, ".bin"), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint " + stem.string());
        const std::uint32_t scalar_bytes = sizeof(float);
        const auto count = static_cast<std::uint64_t>(params.size());
        out.write(kMagic.data(), kMagic.size());
        out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
        out.write(reinterpret_cast<const char*>(&scalar_bytes), sizeof scalar_bytes);
        out.write(reinterpret_cast<const char*>(&count), sizeof count);
        out.write(reinterpret_cast<const char*>(params.values().data()),
                  static_cast<std::streamsize>(count * sizeof(float)));
        if (!out) throw std::runtime_error("short write to checkpoint " + stem.string());
    }

    nlohmann::ordered_json manifest;
    manifest["tag"] = tag;
    manifest["num_classes"] = net.num_classes();
    manifest["dtype"] = "float32";
    auto& layout = manifest["layout"] = nlohmann::ordered_json::array();
    for (const auto& slot : params.layout())
        layout.push_back({{"name", slot.name}, {"shape", slot.shape}, {"offset", slot.offset}});
    std::ofstream out(with_suffix(stem, ".json"));
    if (!out) throw std::runtime_error("cannot write checkpoint manifest " + stem.string());
    out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
    std::ifstream meta(with_suffix(stem, ".json"));
    std::ifstream in(with_suffix(stem, ".bin"), std::ios::binary);
    if (!meta || !in) throw MissingInputError("checkpoint not found: " + stem.string());
    const auto manifest = nlohmann::json::parse(meta);

    ParamLayout layout;
    for (const auto& slot : manifest.at("layout"))
        layout.push_back({slot.at("name").get<std::string>(), slot.at("shape").get<Shape>(),
                          slot.at("offset").get<Index>()});

    std::array<char, 8> magic{};
    std::uint32_t version = 0, scalar_bytes = 0;
    std::uint64_t count = 0;
    in.read(magic.data(), magic.size());
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&scalar_bytes), sizeof scalar_bytes);
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in || magic != kMagic || version != kVersion || scalar_bytes != sizeof(float))
        throw std::runtime_error("bad checkpoint header in " + stem.string());
    if (static_cast<Index>(count) != layout_size(layout))
        throw std::runtime_error("checkpoint value count does not match its layout: " + stem.string());

    VectorX<float> values(static_cast<Index>(count));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float)))
        throw std::runtime_error("truncated checkpoint " + stem.string());

    Checkpoint ckpt;
    ckpt.tag = manifest.at("tag").get<std::string>();
    ckpt.net = SegNet<float>(ParamVector<float>(std::move(layout), std::move(values)),
                             manifest.at("num_classes").get<int>());
    return ckpt;
}

} // namespace mfa
