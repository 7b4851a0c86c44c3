#include "quantlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace quantlab {

namespace {

// Same loop order and 32-bit accumulation as tensor-core matmul, with the
// multiply-add count taken from the executed inner loops rather than a
// formula. Kept in lockstep with matmul by a bitwise-equality unit test.
Tensor matmul_counted(const Tensor& a, const Tensor& b, uint64_t& macs) {
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul inner dimensions differ: " +
                                    shape_to_string(a.shape()) + " vs " +
                                    shape_to_string(b.shape()));
    }
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c = Tensor::zeros({m, n});
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* pc = c.data().data();
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            float acc = 0.0f;
            uint64_t count = 0;
            for (size_t kk = 0; kk < k; ++kk) {
                acc += pa[i * k + kk] * pb[kk * n + j];
                ++count;
            }
            pc[i * n + j] = acc;
            macs += count;
        }
    }
    return c;
}

} // namespace

size_t ModelGraph::input_dim() const {
    if (layers.empty()) throw std::invalid_argument("model has no layers");
    return layers.front().in_dim();
}

size_t ModelGraph::output_dim() const {
    if (layers.empty()) throw std::invalid_argument("model has no layers");
    return layers.back().out_dim();
}

size_t ModelGraph::param_count() const {
    size_t n = 0;
    for (const Layer& l : layers) n += l.weights.numel() + l.bias.numel();
    return n;
}

bool ModelGraph::any_quantized() const {
    for (const Layer& l : layers) {
        if (l.quantized.has_value()) return true;
    }
    return false;
}

void ModelGraph::validate() const {
    if (layers.empty()) throw std::invalid_argument("model has no layers");
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        if (l.weights.rank() != 2) {
            throw std::invalid_argument("layer " + std::to_string(i) + " weights must be rank 2");
        }
        if (l.bias.rank() != 1 || l.bias.dim(0) != l.out_dim()) {
            throw std::invalid_argument("layer " + std::to_string(i) + " bias shape " +
                                        shape_to_string(l.bias.shape()) + " does not match " +
                                        std::to_string(l.out_dim()) + " outputs");
        }
        if (i + 1 < layers.size() && layers[i + 1].in_dim() != l.out_dim()) {
            throw std::invalid_argument("layer " + std::to_string(i) + " outputs " +
                                        std::to_string(l.out_dim()) + " but layer " +
                                        std::to_string(i + 1) + " expects " +
                                        std::to_string(layers[i + 1].in_dim()));
        }
        if (!(l.dropout_rate >= 0.0f && l.dropout_rate < 1.0f)) {
            throw std::invalid_argument("layer " + std::to_string(i) + " dropout rate " +
                                        std::to_string(l.dropout_rate) + " outside [0,1)");
        }
    }
    if (layers.back().activation != Activation::None) {
        throw std::invalid_argument("final layer must have no activation");
    }
}

ModelGraph make_mlp(size_t input_dim, const std::vector<size_t>& hidden, size_t output_dim,
                    float dropout_rate, RngState& rng) {
    ModelGraph m;
    std::vector<size_t> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output_dim);
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        const size_t fan_in = dims[i], fan_out = dims[i + 1];
        Layer l;
        l.weights = Tensor::zeros({fan_out, fan_in});
        const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
        for (auto& w : l.weights.data()) {
            w = stddev * static_cast<float>(rng.next_normal());
        }
        l.bias = Tensor::zeros({fan_out});
        const bool last = (i + 2 == dims.size());
        l.activation = last ? Activation::None : Activation::ReLU;
        l.dropout_rate = last ? 0.0f : dropout_rate;
        m.layers.push_back(std::move(l));
    }
    m.validate();
    return m;
}

ForwardResult forward(const ModelGraph& model, const Tensor& batch, RunMode mode, RngState* rng) {
    model.validate();
    if (batch.rank() != 2 || batch.dim(1) != model.input_dim()) {
        throw std::invalid_argument("batch shape " + shape_to_string(batch.shape()) +
                                    " does not match model input dim " +
                                    std::to_string(model.input_dim()));
    }
    ForwardResult res;
    res.layer_inputs.reserve(model.layers.size());
    res.pre_activations.reserve(model.layers.size());
    res.dropout_masks.resize(model.layers.size());

    Tensor x = batch;
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const Layer& l = model.layers[li];
        res.layer_inputs.push_back(x);
        Tensor z = matmul_counted(x, transposed(l.weights), res.macs);
        z = add_bias(z, l.bias);
        res.pre_activations.push_back(z);
        Tensor a = l.activation == Activation::ReLU ? relu(z) : z;
        if (mode == RunMode::Train && l.dropout_rate > 0.0f) {
            if (rng == nullptr) {
                throw std::invalid_argument("training-mode forward with dropout requires an rng");
            }
            const float keep_scale = 1.0f / (1.0f - l.dropout_rate);
            auto& mask = res.dropout_masks[li];
            mask.assign(a.numel(), 0);
            auto data = a.data();
            for (size_t i = 0; i < data.size(); ++i) {
                const bool keep = rng->next_double() >= static_cast<double>(l.dropout_rate);
                mask[i] = keep ? 1 : 0;
                data[i] = keep ? data[i] * keep_scale : 0.0f;
            }
        }
        x = std::move(a);
    }
    res.output = std::move(x);
    return res;
}

LossResult compute_loss(const Tensor& output, const Tensor& targets, LossKind kind) {
    if (output.rank() != 2) throw std::invalid_argument("loss expects rank-2 model output");
    LossResult res;
    res.grad = Tensor::zeros(output.shape());
    const size_t n = output.dim(0), d = output.dim(1);

    if (kind == LossKind::MSE) {
        if (!targets.same_shape(output)) {
            throw std::invalid_argument("MSE target shape " + shape_to_string(targets.shape()) +
                                        " does not match output " + shape_to_string(output.shape()));
        }
        double sum = 0.0;
        const double inv = 1.0 / static_cast<double>(n * d);
        for (size_t i = 0; i < output.numel(); ++i) {
            const double diff = static_cast<double>(output.data()[i]) -
                                static_cast<double>(targets.data()[i]);
            sum += diff * diff;
            res.grad.data()[i] = static_cast<float>(2.0 * diff * inv);
        }
        res.value = sum * inv;
        return res;
    }

    // Cross entropy over softmax rows; targets carry one class id per row.
    if (targets.rank() != 2 || targets.dim(0) != n || targets.dim(1) != 1) {
        throw std::invalid_argument("cross-entropy targets must be [N x 1] class ids, got " +
                                    shape_to_string(targets.shape()));
    }
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const float target_f = targets.at2(i, 0);
        const auto cls = static_cast<size_t>(target_f);
        if (target_f < 0.0f || cls >= d || static_cast<float>(cls) != target_f) {
            throw std::invalid_argument("row " + std::to_string(i) + " class id " +
                                        std::to_string(target_f) + " invalid for " +
                                        std::to_string(d) + " classes");
        }
        double maxv = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < d; ++j) maxv = std::max(maxv, static_cast<double>(output.at2(i, j)));
        double denom = 0.0;
        for (size_t j = 0; j < d; ++j) denom += std::exp(static_cast<double>(output.at2(i, j)) - maxv);
        const double log_denom = std::log(denom);
        total += -(static_cast<double>(output.at2(i, cls)) - maxv - log_denom);
        for (size_t j = 0; j < d; ++j) {
            const double p = std::exp(static_cast<double>(output.at2(i, j)) - maxv) / denom;
            const double grad = (p - (j == cls ? 1.0 : 0.0)) * inv_n;
            res.grad.at2(i, j) = static_cast<float>(grad);
        }
    }
    res.value = total * inv_n;
    return res;
}

EvalMetrics evaluate_model(const ModelGraph& model, const LabeledSet& data, LossKind kind) {
    const ForwardResult fw = forward(model, data.inputs, RunMode::Eval);
    const LossResult loss = compute_loss(fw.output, data.targets, kind);
    EvalMetrics m;
    m.loss = loss.value;
    if (data.classification && kind == LossKind::CrossEntropy) {
        size_t correct = 0;
        const size_t n = fw.output.dim(0), d = fw.output.dim(1);
        for (size_t i = 0; i < n; ++i) {
            size_t best = 0;
            for (size_t j = 1; j < d; ++j) {
                if (fw.output.at2(i, j) > fw.output.at2(i, best)) best = j;
            }
            if (static_cast<float>(best) == data.targets.at2(i, 0)) ++correct;
        }
        m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
        m.has_accuracy = true;
    }
    return m;
}

} // namespace quantlab
