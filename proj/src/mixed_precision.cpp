#include "quantlab/mixed_precision.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "quantlab/parallel.hpp"
#include "quantlab/quantizer.hpp"
#include "quantlab/train.hpp"

namespace quantlab {

namespace {

constexpr double kAlphaFloor = 1e-8;
constexpr double kSigmaFloor = 1e-12;

void check_bits_arg(int bits) {
    if (bits < 2 || bits > 16) {
        throw std::invalid_argument("bits must be in [2,16], got " + std::to_string(bits));
    }
}

void check_model_finite(const ModelGraph& model) {
    for (size_t li = 0; li < model.layers.size(); ++li) {
        if (!model.layers[li].weights.all_finite() || !model.layers[li].bias.all_finite()) {
            throw std::invalid_argument("layer " + std::to_string(li) +
                                        " holds non-finite values");
        }
    }
}

void check_sens(const std::vector<LayerSensitivity>& sens) {
    if (sens.empty()) throw std::invalid_argument("sensitivity list is empty");
    for (const LayerSensitivity& s : sens) {
        if (!(s.alpha > 0.0) || !(s.sigma2 > 0.0)) {
            throw std::invalid_argument("layer " + std::to_string(s.layer_index) +
                                        " sensitivity must be positive (alpha=" +
                                        std::to_string(s.alpha) + ", sigma2=" +
                                        std::to_string(s.sigma2) + ")");
        }
    }
}

// Quantize one weight matrix at the probe/rule width: affine, min-max range.
Tensor minmax_quantized(const Tensor& w, int bits) {
    float lo = w.data()[0], hi = lo;
    for (float v : w.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const QuantParams p = affine_params_from_range(lo, hi, bits, false);
    return dequantize(quantize_affine(w, p));
}

double dataset_loss(const ModelGraph& model, const LabeledSet& data) {
    return evaluate_model(model, data,
                          data.classification ? LossKind::CrossEntropy : LossKind::MSE)
        .loss;
}

void normalize_mean_one(std::vector<LayerSensitivity>& sens) {
    double mean = 0.0;
    for (LayerSensitivity& s : sens) {
        s.alpha = std::max(s.alpha, kAlphaFloor);
        mean += s.alpha;
    }
    mean /= static_cast<double>(sens.size());
    for (LayerSensitivity& s : sens) s.alpha /= mean;
}

double clamped_sum(const std::vector<double>& products, double lambda, int b_min, int b_max) {
    double sum = 0.0;
    for (double p : products) {
        const double b = 0.5 * std::log2(p / lambda);
        sum += std::clamp(b, static_cast<double>(b_min), static_cast<double>(b_max));
    }
    return sum;
}

} // namespace

std::vector<LayerSensitivity> estimate_sensitivity(const ModelGraph& model,
                                                   const LabeledSet& data, int probe_bits,
                                                   SensitivityMethod method) {
    model.validate();
    check_bits_arg(probe_bits);
    check_model_finite(model);
    if (data.size() == 0) throw std::invalid_argument("sensitivity data set is empty");

    const size_t L = model.layers.size();
    std::vector<LayerSensitivity> sens(L);
    for (size_t li = 0; li < L; ++li) {
        sens[li].layer_index = li;
        sens[li].sigma2 = std::max(variance(model.layers[li].weights), kSigmaFloor);
        sens[li].method = method;
    }

    if (method == SensitivityMethod::LossProbe) {
        const double base_loss = dataset_loss(model, data);
        // Each probe owns a private copy of the model, so probes are
        // trivially parallel.
        parallel_for(L, [&](size_t li) {
            ModelGraph probe = model;
            probe.layers[li].weights = minmax_quantized(probe.layers[li].weights, probe_bits);
            sens[li].alpha = dataset_loss(probe, data) - base_loss;
        });
    } else {
        const ForwardResult fw = forward(model, data.inputs, RunMode::Eval);
        const LossResult loss = compute_loss(
            fw.output, data.targets,
            data.classification ? LossKind::CrossEntropy : LossKind::MSE);
        const Gradients grads = backward(model, fw, loss.grad);
        for (size_t li = 0; li < L; ++li) {
            const auto g = grads.weight_grads[li].data();
            const auto w = model.layers[li].weights.data();
            double acc = 0.0;
            for (size_t i = 0; i < g.size(); ++i) {
                acc += std::fabs(static_cast<double>(g[i]) * static_cast<double>(w[i]));
            }
            sens[li].alpha = acc / static_cast<double>(g.size());
        }
    }

    normalize_mean_one(sens);
    return sens;
}

std::vector<double> allocate_bits_closed_form(const std::vector<LayerSensitivity>& sens,
                                              double lambda) {
    check_sens(sens);
    if (!(lambda > 0.0)) {
        throw std::invalid_argument("lambda must be positive, got " + std::to_string(lambda));
    }
    std::vector<double> bits(sens.size());
    for (size_t i = 0; i < sens.size(); ++i) {
        bits[i] = 0.5 * std::log2(sens[i].alpha * sens[i].sigma2 / lambda);
    }
    return bits;
}

AllocationPlan solve_allocation(const std::vector<LayerSensitivity>& sens, int budget,
                                int b_min, int b_max) {
    check_sens(sens);
    if (b_min < 2 || b_max > 16 || b_min > b_max) {
        throw std::invalid_argument("bit bounds must satisfy 2 <= b_min <= b_max <= 16, got [" +
                                    std::to_string(b_min) + "," + std::to_string(b_max) + "]");
    }
    if (budget < 1) {
        throw std::invalid_argument("budget must be positive, got " + std::to_string(budget));
    }

    const size_t L = sens.size();
    std::vector<double> products(L);
    for (size_t i = 0; i < L; ++i) products[i] = sens[i].alpha * sens[i].sigma2;

    AllocationPlan plan;
    plan.budget = budget;
    plan.b_min = b_min;
    plan.b_max = b_max;

    // lambda <= p/4^b_max puts a layer at b_max; lambda >= p/4^b_min at b_min.
    const double p_lo = *std::min_element(products.begin(), products.end());
    const double p_hi = *std::max_element(products.begin(), products.end());
    double lam_lo = p_lo / std::pow(4.0, b_max);  // sum == L*b_max here
    double lam_hi = p_hi / std::pow(4.0, b_min);  // sum == L*b_min here

    const double B = static_cast<double>(budget);
    const double sum_min = static_cast<double>(L) * b_min;
    const double sum_max = static_cast<double>(L) * b_max;

    double lambda;
    if (sum_min > B) {
        // No realizable plan fits; report the minimal widths and say so.
        lambda = lam_hi;
    } else if (sum_max <= B) {
        lambda = lam_lo;  // budget is slack: every layer takes b_max
    } else {
        // Bisection on the monotone nonincreasing clamped sum.
        for (int iter = 0; iter < 200; ++iter) {
            const double mid = 0.5 * (lam_lo + lam_hi);
            const double s = clamped_sum(products, mid, b_min, b_max);
            if (std::fabs(s - B) <= 1e-9) {
                lam_lo = lam_hi = mid;
                break;
            }
            if (s > B) {
                lam_lo = mid;
            } else {
                lam_hi = mid;
            }
        }
        lambda = 0.5 * (lam_lo + lam_hi);
    }

    plan.lambda = lambda;
    plan.real_bits.resize(L);
    plan.bits.resize(L);
    for (size_t i = 0; i < L; ++i) {
        const double b = 0.5 * std::log2(products[i] / lambda);
        plan.real_bits[i] = std::clamp(b, static_cast<double>(b_min), static_cast<double>(b_max));
        plan.bits[i] = static_cast<int>(std::floor(plan.real_bits[i]));
    }

    if (sum_min > B) {
        plan.feasible = false;
        return plan;
    }

    // Largest-remainder redistribution of the whole bits the floor left over.
    std::vector<size_t> order(L);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const double fa = plan.real_bits[a] - std::floor(plan.real_bits[a]);
        const double fb = plan.real_bits[b] - std::floor(plan.real_bits[b]);
        if (fa != fb) return fa > fb;
        return a < b;
    });
    int leftover = budget - std::accumulate(plan.bits.begin(), plan.bits.end(), 0);
    while (leftover > 0) {
        bool gave = false;
        for (size_t idx : order) {
            if (leftover == 0) break;
            if (plan.bits[idx] < b_max) {
                ++plan.bits[idx];
                --leftover;
                gave = true;
            }
        }
        if (!gave) break;  // everyone at b_max; budget slack stays unspent
    }
    plan.feasible = true;
    return plan;
}

double objective_value(const std::vector<LayerSensitivity>& sens, const std::vector<int>& bits,
                       const ModelGraph& model) {
    check_sens(sens);
    if (sens.size() != model.layers.size() || bits.size() != model.layers.size()) {
        throw std::invalid_argument(
            "objective_value needs one sensitivity and one bit-width per layer (" +
            std::to_string(sens.size()) + " sens, " + std::to_string(bits.size()) + " bits, " +
            std::to_string(model.layers.size()) + " layers)");
    }
    double total = 0.0;
    for (size_t li = 0; li < bits.size(); ++li) {
        check_bits_arg(bits[li]);
        const Tensor& w = model.layers[li].weights;
        float lo = w.data()[0], hi = lo;
        for (float v : w.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const QuantParams p = affine_params_from_range(lo, hi, bits[li], false);
        const QuantError err = measure_error(w, quantize_affine(w, p));
        total += sens[li].alpha * err.relative_eq;
    }
    return total;
}

AllocationPlan exhaustive_allocation_oracle(const std::vector<LayerSensitivity>& sens,
                                            const ModelGraph& model, int budget,
                                            const std::vector<int>& b_choices) {
    check_sens(sens);
    if (sens.size() != model.layers.size()) {
        throw std::invalid_argument("oracle needs one sensitivity per layer");
    }
    if (b_choices.empty()) throw std::invalid_argument("oracle needs at least one bit choice");
    std::vector<int> choices = b_choices;
    std::sort(choices.begin(), choices.end());
    for (int b : choices) check_bits_arg(b);

    const size_t L = sens.size();
    double space = 1.0;
    for (size_t i = 0; i < L; ++i) space *= static_cast<double>(choices.size());
    if (space > 1e5) {
        throw std::invalid_argument("oracle search space " + std::to_string(space) +
                                    " exceeds 1e5 assignments");
    }

    // eps_q depends on (layer, bits) only; memoize so the sweep is cheap.
    std::vector<std::vector<double>> eps(L, std::vector<double>(choices.size()));
    for (size_t li = 0; li < L; ++li) {
        for (size_t ci = 0; ci < choices.size(); ++ci) {
            const Tensor& w = model.layers[li].weights;
            float lo = w.data()[0], hi = lo;
            for (float v : w.data()) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            const QuantParams p = affine_params_from_range(lo, hi, choices[ci], false);
            eps[li][ci] = measure_error(w, quantize_affine(w, p)).relative_eq;
        }
    }

    AllocationPlan best;
    best.budget = budget;
    best.b_min = choices.front();
    best.b_max = choices.back();
    best.lambda = 0.0;
    best.feasible = false;
    best.bits.assign(L, choices.front());
    double best_objective = std::numeric_limits<double>::infinity();

    std::vector<size_t> odo(L, 0);
    while (true) {
        int total_bits = 0;
        for (size_t li = 0; li < L; ++li) total_bits += choices[odo[li]];
        if (total_bits <= budget) {
            double obj = 0.0;
            for (size_t li = 0; li < L; ++li) obj += sens[li].alpha * eps[li][odo[li]];
            if (obj < best_objective) {
                best_objective = obj;
                for (size_t li = 0; li < L; ++li) best.bits[li] = choices[odo[li]];
                best.feasible = true;
            }
        }
        size_t pos = 0;
        while (pos < L && ++odo[pos] == choices.size()) {
            odo[pos] = 0;
            ++pos;
        }
        if (pos == L) break;
    }

    best.real_bits.assign(best.bits.begin(), best.bits.end());
    return best;
}

void write_allocation(JsonWriter& w, const std::vector<LayerSensitivity>& sens,
                      const AllocationPlan& plan) {
    if (sens.empty() || sens.size() != plan.bits.size() ||
        sens.size() != plan.real_bits.size()) {
        throw std::invalid_argument("allocation JSON needs matching, nonempty sens/plan");
    }
    w.begin_object();
    w.kv("method", sens.front().method == SensitivityMethod::LossProbe ? "loss_probe"
                                                                       : "grad_norm_proxy");
    w.key("layers");
    w.begin_array();
    for (size_t i = 0; i < sens.size(); ++i) {
        w.begin_object();
        w.kv("layer_index", static_cast<uint64_t>(sens[i].layer_index));
        w.kv("alpha", sens[i].alpha);
        w.kv("sigma2", sens[i].sigma2);
        w.kv("real_bits", plan.real_bits[i]);
        w.kv("bits", plan.bits[i]);
        w.end_object();
    }
    w.end_array();
    w.kv("lambda", plan.lambda);
    w.kv("budget", plan.budget);
    w.kv("b_min", plan.b_min);
    w.kv("b_max", plan.b_max);
    w.kv("feasible", plan.feasible);
    w.end_object();
}

std::string allocation_json(const std::vector<LayerSensitivity>& sens,
                            const AllocationPlan& plan) {
    JsonWriter w;
    w.begin_object();
    w.kv("schema_version", static_cast<uint64_t>(1));
    w.key("allocation");
    write_allocation(w, sens, plan);
    w.end_object();
    return w.str();
}

} // namespace quantlab
