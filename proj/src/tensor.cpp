#include "quantlab/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace quantlab {

namespace {

size_t checked_numel(const std::vector<size_t>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
    size_t n = 1;
    for (size_t d : shape) {
        if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

} // namespace

Tensor Tensor::zeros(std::vector<size_t> shape) {
    return full(std::move(shape), 0.0f);
}

Tensor Tensor::full(std::vector<size_t> shape, float value) {
    Tensor t;
    const size_t n = checked_numel(shape);
    t.shape_ = std::move(shape);
    t.data_.assign(n, value);
    return t;
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<float> data) {
    Tensor t;
    const size_t n = checked_numel(shape);
    if (n != data.size()) {
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_to_string(shape));
    }
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
}

Tensor Tensor::matrix(size_t rows, size_t cols, std::initializer_list<float> values) {
    return from_data({rows, cols}, std::vector<float>(values));
}

Tensor Tensor::vector1d(std::initializer_list<float> values) {
    return from_data({values.size()}, std::vector<float>(values));
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor Tensor::reshaped(std::vector<size_t> new_shape) const {
    if (checked_numel(new_shape) != numel()) {
        throw std::invalid_argument("reshape to " + shape_to_string(new_shape) +
                                    " does not preserve element count");
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
}

std::string shape_to_string(std::span<const size_t> shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul requires rank-2 tensors, got " +
                                    shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul inner dimensions differ: " +
                                    shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c = Tensor::zeros({m, n});
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* pc = c.data().data();
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (size_t kk = 0; kk < k; ++kk) {
                acc += pa[i * k + kk] * pb[kk * n + j];
            }
            pc[i * n + j] = acc;
        }
    }
    return c;
}

Tensor transposed(const Tensor& t) {
    if (t.rank() != 2) {
        throw std::invalid_argument("transpose requires a rank-2 tensor, got " +
                                    shape_to_string(t.shape()));
    }
    const size_t r = t.dim(0), c = t.dim(1);
    Tensor out = Tensor::zeros({c, r});
    for (size_t i = 0; i < r; ++i) {
        for (size_t j = 0; j < c; ++j) out.at2(j, i) = t.at2(i, j);
    }
    return out;
}

double frobenius_norm(const Tensor& t) {
    double sum = 0.0;
    for (float v : t.data()) sum += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(sum);
}

namespace {

// y = W x (rank-2 W [m×n], x length n), double accumulation.
void apply_matrix(const Tensor& w, const std::vector<double>& x, std::vector<double>& y) {
    const size_t m = w.dim(0), n = w.dim(1);
    y.assign(m, 0.0);
    const float* pw = w.data().data();
    for (size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < n; ++j) acc += static_cast<double>(pw[i * n + j]) * x[j];
        y[i] = acc;
    }
}

// y = W^T x (x length m), double accumulation.
void apply_matrix_t(const Tensor& w, const std::vector<double>& x, std::vector<double>& y) {
    const size_t m = w.dim(0), n = w.dim(1);
    y.assign(n, 0.0);
    const float* pw = w.data().data();
    for (size_t i = 0; i < m; ++i) {
        const double xi = x[i];
        for (size_t j = 0; j < n; ++j) y[j] += static_cast<double>(pw[i * n + j]) * xi;
    }
}

double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

} // namespace

SpectralNormResult spectral_norm(const Tensor& w, int max_iters, double tol) {
    if (w.rank() != 2) throw std::invalid_argument("spectral_norm requires a rank-2 tensor");
    if (max_iters < 1) throw std::invalid_argument("spectral_norm: max_iters must be >= 1");

    const size_t n = w.dim(1);
    // Fixed seed for the start vector keeps results reproducible and makes a
    // start orthogonal to the dominant singular vector a measure-zero event.
    RngState rng(0x51AB5EEDULL);
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) v[i] = rng.next_double() * 2.0 - 1.0;
    const double vn = vec_norm(v);
    for (double& x : v) x /= vn;

    SpectralNormResult res;
    std::vector<double> u, vnext;
    double prev = -1.0;
    for (int it = 1; it <= max_iters; ++it) {
        apply_matrix(w, v, u);
        const double sigma = vec_norm(u);
        res.value = sigma;
        res.iterations = it;
        if (sigma == 0.0) {
            res.converged = true;
            return res;
        }
        if (prev >= 0.0 && std::fabs(sigma - prev) < tol * std::max(sigma, 1e-300)) {
            res.converged = true;
            return res;
        }
        prev = sigma;
        apply_matrix_t(w, u, vnext);
        const double wn = vec_norm(vnext);
        if (wn == 0.0) {
            res.converged = true;
            return res;
        }
        for (double& x : vnext) x /= wn;
        v.swap(vnext);
    }
    return res;
}

Tensor relu(const Tensor& t) {
    Tensor out = t;
    for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
    return out;
}

Tensor add_bias(const Tensor& t, const Tensor& bias) {
    if (bias.rank() != 1) throw std::invalid_argument("bias must be rank-1");
    const size_t last = t.shape().back();
    if (last != bias.numel()) {
        throw std::invalid_argument("bias length " + std::to_string(bias.numel()) +
                                    " does not match last dimension of " + shape_to_string(t.shape()));
    }
    Tensor out = t;
    float* p = out.data().data();
    const float* pb = bias.data().data();
    const size_t rows = t.numel() / last;
    for (size_t r = 0; r < rows; ++r) {
        for (size_t j = 0; j < last; ++j) p[r * last + j] += pb[j];
    }
    return out;
}

double mean_value(const Tensor& t) {
    if (t.numel() == 0) throw std::domain_error("mean of empty tensor");
    double s = 0.0;
    for (float v : t.data()) s += v;
    return s / static_cast<double>(t.numel());
}

double variance(const Tensor& t) {
    if (t.numel() == 0) throw std::domain_error("variance of empty tensor");
    const double m = mean_value(t);
    double s = 0.0;
    for (float v : t.data()) {
        const double d = static_cast<double>(v) - m;
        s += d * d;
    }
    return s / static_cast<double>(t.numel());
}

double second_moment(const Tensor& t) {
    if (t.numel() == 0) throw std::domain_error("second moment of empty tensor");
    double s = 0.0;
    for (float v : t.data()) s += static_cast<double>(v) * static_cast<double>(v);
    return s / static_cast<double>(t.numel());
}

Tensor uniform_tensor(RngState& rng, std::vector<size_t> shape, float lo, float hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.data()) v = rng.next_uniform(lo, hi);
    return t;
}

Tensor normal_tensor(RngState& rng, std::vector<size_t> shape, float mean, float stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.data()) v = mean + stddev * static_cast<float>(rng.next_normal());
    return t;
}

} // namespace quantlab
