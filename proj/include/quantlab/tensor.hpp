#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "quantlab/rng.hpp"

namespace quantlab {

// Dense rank-N array of 32-bit floats, row-major. product(shape) always
// equals data.size(); rank-2 tensors are the workhorse for layer algebra.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<size_t> shape);
    static Tensor full(std::vector<size_t> shape, float value);
    static Tensor from_data(std::vector<size_t> shape, std::vector<float> data);
    // Rank-2 convenience for tests and small literals.
    static Tensor matrix(size_t rows, size_t cols, std::initializer_list<float> values);
    static Tensor vector1d(std::initializer_list<float> values);

    size_t rank() const { return shape_.size(); }
    size_t numel() const { return data_.size(); }
    const std::vector<size_t>& shape() const { return shape_; }
    size_t dim(size_t i) const { return shape_.at(i); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    float at2(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }
    float& at2(size_t i, size_t j) { return data_[i * shape_[1] + j]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    Tensor reshaped(std::vector<size_t> new_shape) const;

private:
    std::vector<size_t> shape_;
    std::vector<float> data_;
};

std::string shape_to_string(std::span<const size_t> shape);

// Standard matrix product [m×k]·[k×n]; float accumulation with a fixed
// row-major summation order so results are bit-identical run to run.
Tensor matmul(const Tensor& a, const Tensor& b);

// Rank-2 transpose (copying).
Tensor transposed(const Tensor& t);

// sqrt of the sum of squares, accumulated in double.
double frobenius_norm(const Tensor& t);

struct SpectralNormResult {
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Largest singular value via power iteration on W^T W with a seeded start
// vector. Zero matrices report 0 and count as converged.
SpectralNormResult spectral_norm(const Tensor& w, int max_iters = 200, double tol = 1e-8);

Tensor relu(const Tensor& t);

// Broadcast add of a rank-1 bias over the last dimension.
Tensor add_bias(const Tensor& t, const Tensor& bias);

double mean_value(const Tensor& t);
// Population variance sum((x-mean)^2)/n.
double variance(const Tensor& t);
// E[x^2] = sum(x^2)/n.
double second_moment(const Tensor& t);

Tensor uniform_tensor(RngState& rng, std::vector<size_t> shape, float lo, float hi);
Tensor normal_tensor(RngState& rng, std::vector<size_t> shape, float mean = 0.0f, float stddev = 1.0f);

} // namespace quantlab
