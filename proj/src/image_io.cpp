#include "mfa/image_io.hpp"
#include "mfa/errors.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace mfa {

namespace {

struct Netpbm {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bytes;
};

void write_netpbm(const std::filesystem::path& path, const char* magic, int width, int height,
                  const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << magic << '\n' << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

Netpbm read_netpbm(const std::filesystem::path& path, const std::string& magic, int channels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open " + path.string());
    std::string got;
    int maxval = 0;
    Netpbm img;
    in >> got >> img.width >> img.height >> maxval;
    if (got != magic || maxval != 255 || img.width <= 0 || img.height <= 0)
        throw std::runtime_error("unsupported netpbm header in " + path.string());
    in.get();
    img.bytes.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) *
                     static_cast<std::size_t>(channels));
    in.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.bytes.size()))
        throw std::runtime_error("truncated image data in " + path.string());
    return img;
}

} // namespace

void write_ppm(const std::filesystem::path& path, const DenseArray<float>& image) {
    if (image.rank() != 3 || image.dim(2) != 3) throw std::invalid_argument("write_ppm: expected [H,W,3] image");
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.size()));
    for (Index i = 0; i < image.size(); ++i) bytes[static_cast<std::size_t>(i)] = quantize_unit(image.values()[i]);
    write_netpbm(path, "P6", static_cast<int>(image.dim(1)), static_cast<int>(image.dim(0)), bytes);
}

DenseArray<float> read_ppm(const std::filesystem::path& path) {
    const auto img = read_netpbm(path, "P6", 3);
    DenseArray<float> out({img.height, img.width, 3});
    for (std::size_t i = 0; i < img.bytes.size(); ++i) out.values()[static_cast<Index>(i)] = dequantize_unit(img.bytes[i]);
    return out;
}

void write_pgm(const std::filesystem::path& path, const LabelMap& labels) {
    std::vector<std::uint8_t> bytes(labels.data(), labels.data() + labels.size());
    write_netpbm(path, "P5", static_cast<int>(labels.cols()), static_cast<int>(labels.rows()), bytes);
}

LabelMap read_pgm(const std::filesystem::path& path) {
    const auto img = read_netpbm(path, "P5", 1);
    LabelMap out(img.height, img.width);
    std::copy(img.bytes.begin(), img.bytes.end(), out.data());
    return out;
}

} // namespace mfa
