#include "quantlab/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace quantlab {

void CalibrationSet::validate() const {
    if (samples.empty()) throw std::invalid_argument("calibration set is empty");
    for (size_t i = 1; i < samples.size(); ++i) {
        if (!samples[i].same_shape(samples[0])) {
            throw std::invalid_argument("calibration sample " + std::to_string(i) + " shape " +
                                        shape_to_string(samples[i].shape()) +
                                        " differs from first sample " +
                                        shape_to_string(samples[0].shape()));
        }
    }
}

Tensor CalibrationSet::stacked() const {
    validate();
    if (samples[0].rank() != 1) {
        throw std::invalid_argument("stacking requires rank-1 samples, got " +
                                    shape_to_string(samples[0].shape()));
    }
    const size_t n = samples.size(), d = samples[0].numel();
    Tensor out = Tensor::zeros({n, d});
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < d; ++j) out.at2(i, j) = samples[i].data()[j];
    }
    return out;
}

namespace {

struct Accumulator {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    double sum = 0.0;
    double sumsq = 0.0;
    size_t count = 0;

    void add(const Tensor& t) {
        for (float v : t.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            sum += v;
            sumsq += static_cast<double>(v) * static_cast<double>(v);
            ++count;
        }
    }

    TensorStats stats() const {
        if (count == 0) throw std::invalid_argument("no values to calibrate over");
        TensorStats s;
        s.x_min = lo;
        s.x_max = hi;
        s.count = count;
        s.mean = sum / static_cast<double>(count);
        s.second_moment = sumsq / static_cast<double>(count);
        s.variance = std::max(0.0, s.second_moment - s.mean * s.mean);
        return s;
    }
};

} // namespace

TensorStats compute_range(const std::vector<Tensor>& values, RangeSpec spec) {
    if (values.empty()) throw std::invalid_argument("compute_range: empty stream");
    Accumulator acc;
    for (const Tensor& t : values) acc.add(t);
    TensorStats stats = acc.stats();

    if (spec.mode == RangeMode::Percentile) {
        if (!(spec.percentile > 50.0 && spec.percentile <= 100.0)) {
            throw std::invalid_argument("percentile must be in (50, 100], got " +
                                        std::to_string(spec.percentile));
        }
        std::vector<float> magnitudes;
        magnitudes.reserve(stats.count);
        for (const Tensor& t : values) {
            for (float v : t.data()) magnitudes.push_back(std::fabs(v));
        }
        std::sort(magnitudes.begin(), magnitudes.end());
        // Nearest-rank percentile: smallest value covering p% of the mass,
        // rank = ceil(p/100 * n). p*n/100 is computed in floating point, so a
        // mathematically integral rank (99.9% of 100000 = 99900) can land a
        // hair above its true value and ceil would overshoot by one; ranks
        // within a relative 1e-9 of an integer snap to it first.
        const double exact = spec.percentile * static_cast<double>(magnitudes.size()) / 100.0;
        const double nearest = std::round(exact);
        const double snapped =
            std::fabs(exact - nearest) <= 1e-9 * std::max(1.0, nearest) ? nearest
                                                                        : std::ceil(exact);
        const size_t rank = static_cast<size_t>(snapped);
        const float clip = magnitudes[std::min(magnitudes.size(), std::max<size_t>(rank, 1)) - 1];
        stats.x_min = std::max(stats.x_min, -clip);
        stats.x_max = std::min(stats.x_max, clip);
    }
    return stats;
}

float compute_gamma(const Tensor& reference, const Tensor& quantized_dequantized) {
    if (!reference.same_shape(quantized_dequantized)) {
        throw std::invalid_argument("gamma inputs differ in shape: " +
                                    shape_to_string(reference.shape()) + " vs " +
                                    shape_to_string(quantized_dequantized.shape()));
    }
    const double ref_m2 = second_moment(reference);
    const double q_m2 = second_moment(quantized_dequantized);
    if (q_m2 <= 0.0) {
        throw std::domain_error("gamma undefined: quantized tensor has zero second moment");
    }
    return static_cast<float>(std::sqrt(ref_m2 / q_m2));
}

std::vector<TensorStats> layer_weight_stats(const ModelGraph& model) {
    model.validate();
    std::vector<TensorStats> out;
    out.reserve(model.layers.size());
    for (const Layer& l : model.layers) {
        Accumulator acc;
        acc.add(l.weights);
        out.push_back(acc.stats());
    }
    return out;
}

std::vector<TensorStats> activation_stats(const ModelGraph& model, const CalibrationSet& cal) {
    model.validate();
    const Tensor batch = cal.stacked();
    const ForwardResult fw = forward(model, batch, RunMode::Eval);
    std::vector<TensorStats> out;
    out.reserve(model.layers.size());
    for (size_t li = 0; li < model.layers.size(); ++li) {
        Accumulator acc;
        // Post-activation output of layer li is the next layer's input, or
        // the network output for the last layer.
        const Tensor& act = li + 1 < model.layers.size() ? fw.layer_inputs[li + 1] : fw.output;
        acc.add(act);
        out.push_back(acc.stats());
    }
    return out;
}

} // namespace quantlab
