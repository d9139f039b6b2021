#include "patchnet/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "patchnet/error.hpp"

namespace patchnet {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

static void check_extents(const Shape& shape) {
    for (auto d : shape)
        require(d >= 1, "tensor extents must be >= 1, got " + shape_str(shape));
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    require(shape_numel(shape_) == data_.size(),
            "buffer length " + std::to_string(data_.size()) + " does not match shape " +
                shape_str(shape_));
}

float& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

float Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
    require(shape_numel(shape) == data_.size(),
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           (a.size() == 0 || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

std::string dump(const Tensor& t) {
    std::ostringstream os;
    os << shape_str(t.shape()) << '\n';
    os.precision(9);
    const std::size_t row = t.rank() ? t.shape().back() : 1;
    for (std::size_t i = 0; i < t.size(); ++i) {
        os << t[i];
        os << ((i + 1) % row == 0 ? '\n' : ' ');
    }
    return os.str();
}

}  // namespace patchnet
