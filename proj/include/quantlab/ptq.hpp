#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "quantlab/calibration.hpp"
#include "quantlab/json_writer.hpp"
#include "quantlab/model.hpp"
#include "quantlab/quantizer.hpp"

namespace quantlab {

// How the affine scale is chosen from a tensor's value range.
//   Algorithm1: s = (max - min) / (2^b - 1), the range-exact step.
//   Theorem1:   s = 2 (max - min) / (2^b - 1), the reported closed form
//               (twice the range-exact step; kept verbatim so both are
//               available for comparison).
//   MseOracle:  log-spaced grid search minimizing empirical MSE; derives
//               both scale and zero point from the raw values, so
//               range_mode does not affect it.
enum class ScaleRule : uint8_t { Algorithm1 = 0, Theorem1 = 1, MseOracle = 2 };

struct PtqConfig {
    int bits = 8;               // [2, 16]
    RangeSpec range;            // MinMax or Percentile clip for range rules
    ScaleRule scale_rule = ScaleRule::Algorithm1;
    bool use_gamma = false;     // second-moment rescale per tensor
    bool per_tensor = true;     // false: one range shared by every tensor
    Scheme scheme = Scheme::Affine;
    // Biases stay FP32 in storage either way; this flag additionally snaps
    // bias values onto the quantization grid (the literal quantize-every-
    // tensor behavior). Off by default because low-bit biases cost accuracy
    // out of proportion to their byte share.
    bool quantize_biases = false;
    // Requested compression ratio; when set the report flags infeasibility
    // whenever alpha_achieved >= target_alpha.
    std::optional<double> target_alpha;
    int mse_grid_points = 200;  // MseOracle search resolution
};

struct PtqReport {
    std::vector<QuantError> layer_errors;   // weight tensor, after gamma
    std::vector<float> layer_gammas;        // 1.0 when use_gamma is off
    std::vector<TensorStats> activation_ranges;  // collected, never applied
    uint64_t original_bytes = 0;            // serialized container sizes
    uint64_t quantized_bytes = 0;
    // quantized_bytes / original_bytes. Below 1 whenever tensors outweigh
    // their 14-byte quant parameter blocks (any practical model); a toy
    // model of a few parameters can honestly exceed 1.
    double alpha_achieved = 0.0;
    // prod(1 + eps_l) - 1 over per-layer relative errors: the worst-case
    // relative output drift of the whole chain.
    double bound_product = 0.0;
    std::optional<double> alpha_target;
    std::optional<bool> alpha_feasible;     // set iff alpha_target is set
};

struct PtqResult {
    ModelGraph model;
    PtqReport report;
};

// Post-training quantization of every weight matrix (and, on request, bias
// values) of a trained model. The input model is left untouched; the result
// model carries QuantizedTensor payloads with gamma folded into the
// dequantized FP32 weights. Activation statistics are gathered over the
// calibration set for the report but activations themselves stay FP32.
// The log scheme anchors its exponent window at each tensor's own maximum,
// so per_tensor=false only affects the affine scheme.
PtqResult run_ptq(const ModelGraph& model, const CalibrationSet& cal, const PtqConfig& cfg);

// Appends the report as one JSON object (snake_case keys, 9-significant-
// digit floats); callers splice it under their own document envelope.
void write_ptq_report(JsonWriter& w, const PtqReport& report);

// Standalone versioned document: {"schema_version": 1, "report": {...}}.
std::string ptq_report_json(const PtqReport& report);

} // namespace quantlab
