#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "quantlab/json_writer.hpp"
#include "quantlab/model.hpp"

namespace quantlab {

enum class SensitivityMethod : uint8_t { LossProbe = 0, GradNormProxy = 1 };

// Per-layer inputs to the bit allocator. alpha is normalized to mean 1
// across layers (floored at 1e-8 before normalization, so it stays strictly
// positive); sigma2 is the layer's weight variance, floored at 1e-12 so the
// closed form's logarithm stays finite for constant layers.
struct LayerSensitivity {
    size_t layer_index = 0;
    double alpha = 1.0;
    double sigma2 = 0.0;
    SensitivityMethod method = SensitivityMethod::LossProbe;
};

// Estimates how much each layer's quantization hurts the loss.
//   LossProbe:     alpha_l = max(L(model with only layer l quantized at
//                  probe_bits) - L(model), 1e-8), then mean-1 normalized.
//                  Probes use the affine range rule (min-max, unsigned,
//                  no gamma). Layer probes are independent and run under
//                  parallel_for (QUANTLAB_THREADS workers).
//   GradNormProxy: alpha_l proportional to mean |dL/dW_l * W_l| from one
//                  full-batch FP32 backward pass, same floor and
//                  normalization. No quantization involved.
// The loss kind follows data.classification. Non-finite models are refused.
std::vector<LayerSensitivity> estimate_sensitivity(const ModelGraph& model,
                                                   const LabeledSet& data, int probe_bits,
                                                   SensitivityMethod method);

// The continuous optimum b_l* = 0.5 * log2(alpha_l * sigma2_l / lambda),
// unclamped (values may be negative or exceed any practical width).
std::vector<double> allocate_bits_closed_form(const std::vector<LayerSensitivity>& sens,
                                              double lambda);

struct AllocationPlan {
    std::vector<int> bits;          // integer plan, each in [b_min, b_max]
    std::vector<double> real_bits;  // clamped continuous solution pre-rounding
    double lambda = 0.0;
    int budget = 0;
    int b_min = 2;
    int b_max = 16;
    // False when budget < layer_count * b_min; the plan then reports every
    // layer at b_min (the closest realizable widths) with the budget still
    // violated. Callers must check this flag.
    bool feasible = false;
};

// Lagrange-multiplier solve of: minimize predicted error subject to
// sum(b_l) <= budget, b_l in [b_min, b_max]. Bisection drives
// sum(clamp(b*(lambda))) to the budget (within 0.5 bits; in practice 1e-9),
// then bits are floored and leftover whole bits go to the layers with the
// largest fractional remainders (ties break toward the lower layer index,
// repeated passes while any layer sits below b_max).
AllocationPlan solve_allocation(const std::vector<LayerSensitivity>& sens, int budget,
                                int b_min = 2, int b_max = 16);

// sum_l alpha_l * eps_q(l): each layer's weights are actually quantized at
// bits[l] (affine min-max rule) and eps_q is the measured relative error.
// A zero-weight layer contributes 0.
double objective_value(const std::vector<LayerSensitivity>& sens, const std::vector<int>& bits,
                       const ModelGraph& model);

// Brute force over every assignment of b_choices to layers (lexicographic,
// smallest choices first; ties keep the first minimum). Search spaces above
// 1e5 assignments are refused. lambda is reported as 0 (no multiplier is
// involved); feasible is false when no assignment fits the budget, with the
// all-smallest assignment reported.
AllocationPlan exhaustive_allocation_oracle(const std::vector<LayerSensitivity>& sens,
                                            const ModelGraph& model, int budget,
                                            const std::vector<int>& b_choices);

// One JSON object: per-layer {layer_index, alpha, sigma2, real_bits, bits}
// plus lambda, budget, b_min, b_max, feasible, method.
void write_allocation(JsonWriter& w, const std::vector<LayerSensitivity>& sens,
                      const AllocationPlan& plan);

// Standalone versioned document {"schema_version": 1, "allocation": {...}}.
std::string allocation_json(const std::vector<LayerSensitivity>& sens,
                            const AllocationPlan& plan);

} // namespace quantlab
