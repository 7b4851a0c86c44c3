#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "quantlab/model.hpp"
#include "quantlab/tensor.hpp"

namespace quantlab {

// Representative model inputs used to estimate ranges and moments.
struct CalibrationSet {
    std::vector<Tensor> samples;  // all the same shape
    std::optional<uint64_t> source_seed;

    void validate() const;  // nonempty, uniform shapes
    // All samples stacked into one [N x D] batch (samples must be rank 1).
    Tensor stacked() const;
};

struct TensorStats {
    float x_min = 0.0f;
    float x_max = 0.0f;
    double mean = 0.0;
    double variance = 0.0;       // population
    double second_moment = 0.0;  // E[x^2]
    size_t count = 0;
};

enum class RangeMode : uint8_t { MinMax = 0, Percentile = 1 };

struct RangeSpec {
    RangeMode mode = RangeMode::MinMax;
    // Two-sided clip at the p-th percentile of |x|; only read in Percentile
    // mode. Must lie in (50, 100].
    double percentile = 100.0;
};

// Running min/max plus moments over every element of the stream. Percentile
// mode clips the reported range to the p-th percentile of absolute values
// (exact, via full sort); moments are unaffected by clipping.
TensorStats compute_range(const std::vector<Tensor>& values, RangeSpec spec);

// gamma = sqrt(E[x^2] / E[Q(x)^2]), the post-scale that restores the second
// moment after quantization. Throws domain_error when the quantized tensor
// is all zeros (callers fall back to gamma = 1 and log the event).
float compute_gamma(const Tensor& reference, const Tensor& quantized_dequantized);

// Per-layer stats over weight matrices only (biases excluded).
std::vector<TensorStats> layer_weight_stats(const ModelGraph& model);

// Per-layer stats over post-activation outputs of an Eval forward pass across
// the calibration set.
std::vector<TensorStats> activation_stats(const ModelGraph& model, const CalibrationSet& cal);

} // namespace quantlab
