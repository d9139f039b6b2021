#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace patchnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float32 array. The only numeric container in the engine:
// maps are N x C x H x W, conv weights Cout x Cin x kh x kw, matrices rows x cols.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // 4-d accessor, (n, c, h, w).
    float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    // Same buffer, new extents; element count must match.
    Tensor reshaped(Shape shape) const;

    void fill(float v);

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

// Bitwise equality of two buffers (distinguishes -0.0f/0.0f, NaN payloads).
bool bitwise_equal(const Tensor& a, const Tensor& b);

// Debug dump used by golden tests: shape line, then row-major values with
// nine significant digits, one row (last axis) per line.
std::string dump(const Tensor& t);

}  // namespace patchnet
