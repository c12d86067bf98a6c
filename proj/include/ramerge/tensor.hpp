// SPDX-License-Identifier: Apache-2.0
//
// Dense float32 tensors, named checkpoints, and the elementary numerics used
// by every merge method.

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ramerge/error.hpp"

namespace ramerge {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Row-major float32 tensor. A rank-0 tensor holds exactly one value.
class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> data);
    static Tensor vector(std::vector<float> data);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // Rank-2 accessors.
    std::size_t rows() const;
    std::size_t cols() const;
    float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    std::span<const float> row(std::size_t r) const;
    std::span<float> row(std::size_t r);

    bool all_finite() const;

    // Bitwise payload equality (so -0.0 != 0.0 and NaN == NaN with the same bits).
    bool bit_equal(const Tensor& other) const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<float> data_;
};

// Tensors ordered lexicographically by name, plus free-form string metadata.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata;

    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return tensors.count(name) != 0; }

    // Same name set and per-name equal shapes.
    bool shape_compatible(const Checkpoint& other) const;

    bool bit_equal(const Checkpoint& other) const;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Throws ShapeError describing the first difference when not shape-compatible.
void require_shape_compatible(const Checkpoint& a, const Checkpoint& b, const std::string& context);

// Elementwise lambda_a * a + lambda_b * b, evaluated in double and rounded once.
Tensor lerp_tensor(const Tensor& a, const Tensor& b, double lambda_a, double lambda_b);

// Rank-2 product with index-ascending double accumulation per output entry.
Tensor matmul(const Tensor& a, const Tensor& b);

// Per-tensor lerp over two shape-compatible checkpoints; metadata is dropped.
Checkpoint lerp_checkpoint(const Checkpoint& a, const Checkpoint& b, double lambda_a, double lambda_b);

}  // namespace ramerge
