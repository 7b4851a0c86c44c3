#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "quantlab/json_writer.hpp"
#include "quantlab/mixed_precision.hpp"
#include "quantlab/model.hpp"
#include "quantlab/ptq.hpp"
#include "quantlab/train.hpp"

namespace quantlab {

// Proportional cost of one forward pass over N tokens of width d_model and
// sequence length L_seq: N * d_model * L_seq, computed in double so large
// products cannot overflow an integer.
double complexity_forward(int64_t n, int64_t d_model, int64_t l_seq);

struct CostEstimate {
    double flops_fp = 0.0;      // C_f: multiply-add count of the FP32 pass
    double c_q = 0.0;           // (b_w*b_a)/(w_0*a_0) * C_f, exactly
    double reduction_pct = 0.0; // 100 * (1 - c_q/C_f)
    int b_w = 32;
    int b_a = 32;
    int w_0 = 32;
    int a_0 = 32;
};

// Cost of the quantized pass relative to the full-precision pass at widths
// (w_0, a_0). All arguments must be positive. For (8,8,32,32) the reduction
// is exactly 93.75%, for (4,4,32,32) exactly 98.4375%; reference-reported
// table figures (40%/65%) are measurements, not outputs of this formula,
// and the consolidated report prints both side by side.
CostEstimate cost_model(int b_w, int b_a, int w_0, int a_0, double c_f);

// prod(1 + eps_l) - 1. Empty input gives 0; any negative entry is a domain
// error. Monotone nondecreasing in every entry.
double error_accumulation_bound(const std::vector<double>& eps);

struct ErrorBudget {
    std::vector<double> per_layer_eps;  // spectral relative weight errors
    double bound_e_t = 0.0;             // prod(1+eps)-1
    double measured_rel_error = 0.0;    // max over probes, chain-normalized
};

// Checks the multiplicative error-accumulation bound on a linear chain:
// for each probe x, ||Q(x) - F(x)||_2 / (prod_l ||W_l||_2 * ||x||_2) must
// stay within prod(1+eps_l) - 1 + 1e-6, where F/Q are the original and
// quantized models and eps_l is layer l's spectral relative weight error.
// Requires a strictly linear structure — every activation None, zero
// biases, zero dropout — because a nonlinearity breaks the multiplicative
// form; anything else is an unsupported-structure error. Throws
// runtime_error if the measured error ever exceeds the bound.
ErrorBudget verify_accumulation(const ModelGraph& original, const ModelGraph& quantized,
                                const std::vector<Tensor>& probes);

// Exact serialized container size in bytes — real byte accounting, never
// the idealized bits-times-parameters arithmetic.
uint64_t model_size(const ModelGraph& model);

struct SizeReport {
    uint64_t original_bytes = 0;
    uint64_t quantized_bytes = 0;
    double reduction_pct = 0.0;  // 100 * (1 - alpha)
    double alpha = 0.0;          // quantized / original
};

SizeReport size_report(const ModelGraph& fp32, const ModelGraph& quantized);

// Section writers shared by the consolidated report and the CLI.
// write_reference_reported emits the constant block quoting externally
// reported table figures the formulas here do not reproduce.
void write_reference_reported(JsonWriter& w);
void write_cost_estimate(JsonWriter& w, const CostEstimate& cost);
void write_error_budget(JsonWriter& w, const ErrorBudget& budget);
void write_size_report(JsonWriter& w, const SizeReport& size);
void write_train_summary(JsonWriter& w, const TrainLog& log);

// Everything a run may have produced. Null pointers mean the stage did not
// run; its section appears as an explicit null in the report. The
// allocation section needs both the plan and its sensitivities.
struct ExperimentArtifacts {
    const TrainLog* train = nullptr;
    const PtqReport* ptq = nullptr;
    const std::vector<LayerSensitivity>* sensitivities = nullptr;
    const AllocationPlan* allocation = nullptr;
    const CostEstimate* cost = nullptr;
    const ErrorBudget* error_budget = nullptr;
    const SizeReport* size = nullptr;
};

// One versioned document with a fixed key order: schema_version, train,
// ptq, allocation, cost, error_budget, size, reference_reported. The last
// section is constant: it quotes reference-reported table figures that the
// formulas here do not reproduce (cost reductions 40%/65% vs the exact
// 93.75%/98.4375%, and a 22-bytes-per-parameter size row) and labels them
// as measurements rather than formula outputs. Identical inputs yield
// byte-identical documents. The schema ships at
// docs/experiment_report.schema.json.
std::string experiment_report(const ExperimentArtifacts& artifacts);

} // namespace quantlab
