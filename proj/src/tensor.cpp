// SPDX-License-Identifier: Apache-2.0

#include "ramerge/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace ramerge {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor() : data_(1, 0.0f) {}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<float> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::vector(std::vector<float> data) {
    const std::size_t n = data.size();
    return Tensor({n}, std::move(data));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("expected a rank-2 tensor, got shape " + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("expected a rank-2 tensor, got shape " + shape_string(shape_));
    return shape_[1];
}

std::span<const float> Tensor::row(std::size_t r) const {
    const std::size_t c = cols();
    return std::span<const float>(data_).subspan(r * c, c);
}

std::span<float> Tensor::row(std::size_t r) {
    const std::size_t c = cols();
    return std::span<float>(data_).subspan(r * c, c);
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

const Tensor& Checkpoint::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw ShapeError("missing tensor '" + name + "'");
    }
    return it->second;
}

bool Checkpoint::shape_compatible(const Checkpoint& other) const {
    if (tensors.size() != other.tensors.size()) return false;
    auto a = tensors.begin();
    auto b = other.tensors.begin();
    for (; a != tensors.end(); ++a, ++b) {
        if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
    }
    return true;
}

bool Checkpoint::bit_equal(const Checkpoint& other) const {
    if (metadata != other.metadata || tensors.size() != other.tensors.size()) return false;
    auto a = tensors.begin();
    auto b = other.tensors.begin();
    for (; a != tensors.end(); ++a, ++b) {
        if (a->first != b->first || !a->second.bit_equal(b->second)) return false;
    }
    return true;
}

void require_shape_compatible(const Checkpoint& a, const Checkpoint& b, const std::string& context) {
    for (const auto& [name, t] : a.tensors) {
        auto it = b.tensors.find(name);
        if (it == b.tensors.end()) {
            throw ShapeError(context + ": tensor '" + name + "' missing from second checkpoint");
        }
        if (it->second.shape() != t.shape()) {
            throw ShapeError(context + ": tensor '" + name + "' has shape " + shape_string(t.shape()) + " vs " +
                             shape_string(it->second.shape()));
        }
    }
    for (const auto& [name, t] : b.tensors) {
        if (!a.tensors.count(name)) {
            throw ShapeError(context + ": tensor '" + name + "' missing from first checkpoint");
        }
    }
}

Tensor lerp_tensor(const Tensor& a, const Tensor& b, double lambda_a, double lambda_b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("lerp_tensor: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = static_cast<float>(lambda_a * static_cast<double>(a[i]) + lambda_b * static_cast<double>(b[i]));
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: expected rank-2 operands, got " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimension mismatch " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    }
    Tensor out({n, m});
    std::vector<double> acc(m);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        // Loop order keeps each acc[j] summed over p in ascending order.
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            const float* brow = &b.data()[p * m];
            for (std::size_t j = 0; j < m; ++j) {
                acc[j] += av * static_cast<double>(brow[j]);
            }
        }
        for (std::size_t j = 0; j < m; ++j) {
            out.at(i, j) = static_cast<float>(acc[j]);
        }
    }
    return out;
}

Checkpoint lerp_checkpoint(const Checkpoint& a, const Checkpoint& b, double lambda_a, double lambda_b) {
    require_shape_compatible(a, b, "lerp_checkpoint");
    Checkpoint out;
    for (const auto& [name, t] : a.tensors) {
        out.tensors.emplace(name, lerp_tensor(t, b.tensors.at(name), lambda_a, lambda_b));
    }
    return out;
}

}  // namespace ramerge
