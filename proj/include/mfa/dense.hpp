#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfa {

using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Pixels along rows (row-major H*W order), channels along columns.
template <typename Scalar>
using PixelMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using PixelMap = Eigen::Map<PixelMatrix<Scalar>>;

template <typename Scalar>
using ConstPixelMap = Eigen::Map<const PixelMatrix<Scalar>>;

// H x W planes: labels, masks, per-pixel confidences.
using LabelMap = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ConfidenceMap = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::uint8_t kIgnoreLabel = 255;

using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

// Row-major N-d array. Image batches use [N,H,W,C]; single images [H,W,C].
template <typename Scalar>
class DenseArray {
public:
    DenseArray() = default;

    explicit DenseArray(Shape shape)
        : shape_(std::move(shape)), values_(VectorX<Scalar>::Zero(shape_size(shape_))) {}

    DenseArray(Shape shape, VectorX<Scalar> values) : shape_(std::move(shape)), values_(std::move(values)) {
        if (values_.size() != shape_size(shape_))
            throw std::invalid_argument("DenseArray: value count " + std::to_string(values_.size()) +
                                        " does not match shape " + shape_string(shape_));
    }

    const Shape& shape() const { return shape_; }
    Index dim(std::size_t axis) const { return shape_.at(axis); }
    Index rank() const { return static_cast<Index>(shape_.size()); }
    Index size() const { return values_.size(); }

    VectorX<Scalar>& values() { return values_; }
    const VectorX<Scalar>& values() const { return values_; }

    Scalar* data() { return values_.data(); }
    const Scalar* data() const { return values_.data(); }

    // Image n of a [N,H,W,C] batch as an (H*W) x C matrix view.
    PixelMap<Scalar> image(Index n) {
        check_batch(n);
        const Index pixels = shape_[1] * shape_[2];
        return PixelMap<Scalar>(values_.data() + n * pixels * shape_[3], pixels, shape_[3]);
    }

    ConstPixelMap<Scalar> image(Index n) const {
        check_batch(n);
        const Index pixels = shape_[1] * shape_[2];
        return ConstPixelMap<Scalar>(values_.data() + n * pixels * shape_[3], pixels, shape_[3]);
    }

    template <typename Other>
    DenseArray<Other> cast() const {
        return DenseArray<Other>(shape_, values_.template cast<Other>());
    }

    bool all_finite() const { return values_.allFinite(); }

    friend bool operator==(const DenseArray& a, const DenseArray& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    void check_batch(Index n) const {
        if (shape_.size() != 4) throw std::invalid_argument("DenseArray::image requires a [N,H,W,C] array");
        if (n < 0 || n >= shape_[0]) throw std::out_of_range("DenseArray::image: batch index out of range");
    }

    Shape shape_;
    VectorX<Scalar> values_;
};

// Stacks equally shaped [H,W,C] arrays into one [N,H,W,C] batch.
template <typename Scalar, typename Source>
DenseArray<Scalar> stack_images(const std::vector<const DenseArray<Source>*>& images) {
    if (images.empty()) throw std::invalid_argument("stack_images: empty batch");
    const Shape& first = images.front()->shape();
    if (first.size() != 3) throw std::invalid_argument("stack_images: expected [H,W,C] images");
    DenseArray<Scalar> batch({static_cast<Index>(images.size()), first[0], first[1], first[2]});
    const Index per_image = shape_size(first);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->shape() != first) throw std::invalid_argument("stack_images: image shapes differ");
        batch.values().segment(static_cast<Index>(i) * per_image, per_image) =
            images[i]->values().template cast<Scalar>();
    }
    return batch;
}

struct ParamSlot {
    std::string name;
    Shape shape;
    Index offset = 0;

    Index size() const { return shape_size(shape); }

    friend bool operator==(const ParamSlot&, const ParamSlot&) = default;
};

using ParamLayout = std::vector<ParamSlot>;

inline Index layout_size(const ParamLayout& layout) {
    Index total = 0;
    for (const auto& slot : layout) total += slot.size();
    return total;
}

// Builds a contiguous layout from (name, shape) pairs in order.
inline ParamLayout make_layout(const std::vector<std::pair<std::string, Shape>>& entries) {
    ParamLayout layout;
    Index offset = 0;
    for (const auto& [name, shape] : entries) {
        layout.push_back({name, shape, offset});
        offset += shape_size(shape);
    }
    return layout;
}

// Flat buffer of every learnable parameter plus the map from names to slices.
template <typename Scalar>
class ParamVector {
public:
    ParamVector() = default;

    explicit ParamVector(ParamLayout layout)
        : layout_(std::move(layout)), values_(VectorX<Scalar>::Zero(layout_size(layout_))) {
        validate();
    }

    ParamVector(ParamLayout layout, VectorX<Scalar> values) : layout_(std::move(layout)), values_(std::move(values)) {
        validate();
        if (values_.size() != layout_size(layout_))
            throw std::invalid_argument("ParamVector: buffer length does not match layout");
    }

    const ParamLayout& layout() const { return layout_; }
    VectorX<Scalar>& values() { return values_; }
    const VectorX<Scalar>& values() const { return values_; }
    Index size() const { return values_.size(); }

    const ParamSlot& slot(const std::string& name) const {
        for (const auto& s : layout_)
            if (s.name == name) return s;
        throw std::out_of_range("ParamVector: no parameter named " + name);
    }

    auto segment(const std::string& name) {
        const auto& s = slot(name);
        return values_.segment(s.offset, s.size());
    }

    auto segment(const std::string& name) const {
        const auto& s = slot(name);
        return values_.segment(s.offset, s.size());
    }

    ParamVector zeros_like() const { return ParamVector(layout_); }

    bool same_layout(const ParamVector& other) const { return layout_ == other.layout_; }

    template <typename Other>
    ParamVector<Other> cast() const {
        return ParamVector<Other>(layout_, values_.template cast<Other>());
    }

    friend bool operator==(const ParamVector& a, const ParamVector& b) {
        return a.layout_ == b.layout_ && a.values_ == b.values_;
    }

private:
    void validate() const {
        Index expected = 0;
        for (const auto& s : layout_) {
            if (s.offset != expected) throw std::invalid_argument("ParamVector: non-contiguous slot " + s.name);
            expected += s.size();
        }
    }

    ParamLayout layout_;
    VectorX<Scalar> values_;
};

template <typename Scalar>
void require_same_layout(const ParamVector<Scalar>& a, const ParamVector<Scalar>& b, const char* what) {
    if (!a.same_layout(b)) throw std::invalid_argument(std::string(what) + ": parameter layout mismatch");
}

} // namespace mfa
