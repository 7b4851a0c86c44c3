#include "quantlab/ptq.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "quantlab/model_io.hpp"

namespace quantlab {

namespace {

void validate_config(const PtqConfig& cfg) {
    if (cfg.bits < 2 || cfg.bits > 16) {
        throw std::invalid_argument("bits must be in [2,16], got " + std::to_string(cfg.bits));
    }
    if (cfg.scale_rule == ScaleRule::MseOracle && cfg.mse_grid_points < 100) {
        throw std::invalid_argument("mse_grid_points must be >= 100, got " +
                                    std::to_string(cfg.mse_grid_points));
    }
    if (cfg.target_alpha && !(*cfg.target_alpha > 0.0 && *cfg.target_alpha <= 1.0)) {
        throw std::invalid_argument("target_alpha must be in (0,1], got " +
                                    std::to_string(*cfg.target_alpha));
    }
}

// z = round_half_away(-min / s) clamped to the unsigned code range, the same
// pairing the range rule and the oracle's inner loop use.
int32_t paired_zero_point(float x_min, float scale, int bits) {
    const double z = -static_cast<double>(x_min) / static_cast<double>(scale);
    const double rounded = z >= 0.0 ? std::floor(z + 0.5) : std::ceil(z - 0.5);
    const int32_t hi = (1 << bits) - 1;
    return static_cast<int32_t>(std::clamp(rounded, 0.0, static_cast<double>(hi)));
}

// Affine parameters for one tensor under the configured rule. stats carries
// the (possibly clipped) range; x is the raw tensor for the oracle rule.
QuantParams affine_params_for(const TensorStats& stats, const Tensor& x, const PtqConfig& cfg,
                              std::optional<float> preset_oracle_scale) {
    switch (cfg.scale_rule) {
        case ScaleRule::Algorithm1:
            return affine_params_from_range(stats.x_min, stats.x_max, cfg.bits, false);
        case ScaleRule::Theorem1: {
            float lo = stats.x_min, hi = stats.x_max;
            if (hi <= lo) {  // degenerate range widens like the range rule
                return affine_params_from_range(lo, hi, cfg.bits, false);
            }
            QuantParams p;
            p.scheme = Scheme::Affine;
            p.bits = cfg.bits;
            p.is_signed = false;
            p.scale = 2.0f * (hi - lo) / static_cast<float>((1 << cfg.bits) - 1);
            p.zero_point = paired_zero_point(lo, p.scale, cfg.bits);
            return p;
        }
        case ScaleRule::MseOracle: {
            float raw_lo = x.data()[0], raw_hi = raw_lo;
            for (float v : x.data()) {
                raw_lo = std::min(raw_lo, v);
                raw_hi = std::max(raw_hi, v);
            }
            if (raw_hi <= raw_lo) {  // constant tensor: grid search has no signal
                return affine_params_from_range(raw_lo, raw_hi, cfg.bits, false);
            }
            QuantParams p;
            p.scheme = Scheme::Affine;
            p.bits = cfg.bits;
            p.is_signed = false;
            p.scale = preset_oracle_scale ? *preset_oracle_scale
                                          : scale_mse_oracle(x, cfg.bits, cfg.mse_grid_points);
            p.zero_point = paired_zero_point(raw_lo, p.scale, cfg.bits);
            return p;
        }
    }
    throw std::logic_error("unreachable scale rule");
}

struct QuantOutcome {
    QuantizedTensor qt;
    float gamma = 1.0f;
};

QuantOutcome quantize_tensor(const Tensor& x, const PtqConfig& cfg,
                             const std::optional<TensorStats>& global_stats,
                             std::optional<float> global_oracle_scale) {
    QuantOutcome out;
    if (cfg.scheme == Scheme::Log) {
        out.qt = quantize_log(x, cfg.bits);
    } else {
        const TensorStats stats =
            global_stats ? *global_stats : compute_range({x}, cfg.range);
        const QuantParams p = affine_params_for(stats, x, cfg, global_oracle_scale);
        out.qt = quantize_affine(x, p);
    }
    if (cfg.use_gamma) {
        try {
            out.gamma = compute_gamma(x, dequantize(out.qt));
        } catch (const std::domain_error&) {
            out.gamma = 1.0f;  // all-zero reconstruction: no moment to match
        }
        out.qt.params.gamma = out.gamma;
    }
    return out;
}

Tensor flatten_all(const std::vector<const Tensor*>& tensors) {
    size_t total = 0;
    for (const Tensor* t : tensors) total += t->numel();
    std::vector<float> data;
    data.reserve(total);
    for (const Tensor* t : tensors) {
        data.insert(data.end(), t->data().begin(), t->data().end());
    }
    return Tensor::from_data({total}, std::move(data));
}

} // namespace

PtqResult run_ptq(const ModelGraph& model, const CalibrationSet& cal, const PtqConfig& cfg) {
    model.validate();
    cal.validate();
    validate_config(cfg);
    for (size_t li = 0; li < model.layers.size(); ++li) {
        if (!model.layers[li].weights.all_finite() || !model.layers[li].bias.all_finite()) {
            throw std::invalid_argument("layer " + std::to_string(li) +
                                        " holds non-finite values; refusing to quantize");
        }
    }

    PtqResult out;
    out.model = model;
    PtqReport& report = out.report;
    report.original_bytes = serialize_model(model).size();

    // Global-range mode shares one range (and one oracle scale) across every
    // tensor being quantized.
    std::optional<TensorStats> global_stats;
    std::optional<float> global_oracle_scale;
    if (!cfg.per_tensor && cfg.scheme == Scheme::Affine) {
        std::vector<const Tensor*> pool;
        for (const Layer& layer : model.layers) {
            pool.push_back(&layer.weights);
            if (cfg.quantize_biases) pool.push_back(&layer.bias);
        }
        std::vector<Tensor> all;
        all.reserve(pool.size());
        for (const Tensor* t : pool) all.push_back(*t);
        global_stats = compute_range(all, cfg.range);
        if (cfg.scale_rule == ScaleRule::MseOracle) {
            const Tensor flat = flatten_all(pool);
            float lo = flat.data()[0], hi = lo;
            for (float v : flat.data()) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            if (hi > lo) {
                global_oracle_scale = scale_mse_oracle(flat, cfg.bits, cfg.mse_grid_points);
            }
        }
    }

    for (size_t li = 0; li < out.model.layers.size(); ++li) {
        Layer& layer = out.model.layers[li];
        QuantOutcome wq = quantize_tensor(layer.weights, cfg, global_stats, global_oracle_scale);
        report.layer_errors.push_back(measure_error(layer.weights, wq.qt));
        report.layer_gammas.push_back(wq.gamma);
        layer.weights = dequantize(wq.qt);  // gamma folded once, here
        layer.quantized = std::move(wq.qt);

        if (cfg.quantize_biases) {
            // Bias values snap to the grid but stay FP32 in the container.
            const QuantOutcome bq =
                quantize_tensor(layer.bias, cfg, global_stats, global_oracle_scale);
            layer.bias = dequantize(bq.qt);
        }
    }

    report.activation_ranges = activation_stats(model, cal);

    report.quantized_bytes = serialize_model(out.model).size();
    report.alpha_achieved = static_cast<double>(report.quantized_bytes) /
                            static_cast<double>(report.original_bytes);
    double prod = 1.0;
    for (const QuantError& e : report.layer_errors) prod *= 1.0 + e.relative_eq;
    report.bound_product = prod - 1.0;

    if (cfg.target_alpha) {
        report.alpha_target = *cfg.target_alpha;
        report.alpha_feasible = report.alpha_achieved < *cfg.target_alpha;
    }
    return out;
}

void write_ptq_report(JsonWriter& w, const PtqReport& report) {
    w.begin_object();
    w.key("layers");
    w.begin_array();
    for (size_t li = 0; li < report.layer_errors.size(); ++li) {
        const QuantError& e = report.layer_errors[li];
        w.begin_object();
        w.kv("layer_index", static_cast<uint64_t>(li));
        w.kv("max_abs", e.max_abs);
        w.kv("mse", e.mse);
        w.kv("relative_error", e.relative_eq);
        w.kv("norm", e.norm == NormKind::Spectral ? "spectral" : "frobenius");
        w.kv("gamma", static_cast<double>(report.layer_gammas[li]));
        w.end_object();
    }
    w.end_array();
    w.key("activation_ranges");
    w.begin_array();
    for (size_t li = 0; li < report.activation_ranges.size(); ++li) {
        const TensorStats& s = report.activation_ranges[li];
        w.begin_object();
        w.kv("layer_index", static_cast<uint64_t>(li));
        w.kv("x_min", static_cast<double>(s.x_min));
        w.kv("x_max", static_cast<double>(s.x_max));
        w.kv("mean", s.mean);
        w.kv("variance", s.variance);
        w.kv("second_moment", s.second_moment);
        w.kv("count", static_cast<uint64_t>(s.count));
        w.end_object();
    }
    w.end_array();
    w.kv("original_bytes", report.original_bytes);
    w.kv("quantized_bytes", report.quantized_bytes);
    w.kv("alpha_achieved", report.alpha_achieved);
    if (report.alpha_target) {
        w.kv("alpha_target", *report.alpha_target);
    } else {
        w.kv_null("alpha_target");
    }
    if (report.alpha_feasible) {
        w.kv("alpha_feasible", *report.alpha_feasible);
    } else {
        w.kv_null("alpha_feasible");
    }
    w.kv("bound_product", report.bound_product);
    w.end_object();
}

std::string ptq_report_json(const PtqReport& report) {
    JsonWriter w;
    w.begin_object();
    w.kv("schema_version", static_cast<uint64_t>(1));
    w.key("report");
    write_ptq_report(w, report);
    w.end_object();
    return w.str();
}

} // namespace quantlab
