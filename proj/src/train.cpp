#include "quantlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace quantlab {

namespace {

Tensor column_sums(const Tensor& t) {
    const size_t n = t.dim(0), d = t.dim(1);
    Tensor out = Tensor::zeros({d});
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < d; ++j) out.data()[j] += t.at2(i, j);
    }
    return out;
}

} // namespace

Gradients backward(const ModelGraph& model, const ForwardResult& cache, const Tensor& loss_grad) {
    const size_t L = model.layers.size();
    if (cache.layer_inputs.size() != L || cache.pre_activations.size() != L) {
        throw std::invalid_argument("forward cache does not match model layer count");
    }
    if (!loss_grad.same_shape(cache.pre_activations.back())) {
        throw std::invalid_argument("loss gradient shape " + shape_to_string(loss_grad.shape()) +
                                    " does not match model output " +
                                    shape_to_string(cache.pre_activations.back().shape()));
    }
    Gradients g;
    g.weight_grads.resize(L);
    g.bias_grads.resize(L);

    // d = gradient w.r.t. the (post-dropout) output of the current layer.
    Tensor d = loss_grad;
    for (size_t li = L; li-- > 0;) {
        const Layer& layer = model.layers[li];

        // Undo dropout: kept units were scaled by 1/(1-p), dropped are zero.
        const auto& mask = cache.dropout_masks[li];
        if (!mask.empty()) {
            const float keep_scale = 1.0f / (1.0f - layer.dropout_rate);
            auto dd = d.data();
            for (size_t i = 0; i < dd.size(); ++i) {
                dd[i] = mask[i] ? dd[i] * keep_scale : 0.0f;
            }
        }

        // Through the activation.
        if (layer.activation == Activation::ReLU) {
            const auto z = cache.pre_activations[li].data();
            auto dd = d.data();
            for (size_t i = 0; i < dd.size(); ++i) {
                if (z[i] <= 0.0f) dd[i] = 0.0f;
            }
        }

        // dz is now d; parameter gradients and the pushback to the input.
        g.weight_grads[li] = matmul(transposed(d), cache.layer_inputs[li]);
        g.bias_grads[li] = column_sums(d);
        if (li > 0) d = matmul(d, layer.weights);
    }
    return g;
}

Gradients ste_backward(const ModelGraph& model, const ForwardResult& cache, const Tensor& loss_grad,
                       const std::vector<std::vector<uint8_t>>& clamp_masks) {
    if (clamp_masks.size() != model.layers.size()) {
        throw std::invalid_argument("clamp mask count does not match layer count");
    }
    Gradients g = backward(model, cache, loss_grad);
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const auto& mask = clamp_masks[li];
        if (mask.size() != g.weight_grads[li].numel()) {
            throw std::invalid_argument("layer " + std::to_string(li) +
                                        " clamp mask size does not match weights");
        }
        auto wg = g.weight_grads[li].data();
        for (size_t i = 0; i < mask.size(); ++i) {
            if (mask[i]) wg[i] = 0.0f;
        }
    }
    return g;
}

namespace {

QuantParams refresh_params(const Tensor& w, int bits) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : w.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return affine_params_from_range(lo, hi, bits, false);
}

struct Batch {
    Tensor inputs;
    Tensor targets;
};

Batch sample_batch(const LabeledSet& data, size_t batch_size, RngState& rng) {
    const size_t n = data.size();
    const size_t din = data.inputs.dim(1);
    const size_t dt = data.targets.dim(1);
    Batch b;
    b.inputs = Tensor::zeros({batch_size, din});
    b.targets = Tensor::zeros({batch_size, dt});
    for (size_t i = 0; i < batch_size; ++i) {
        const size_t idx = static_cast<size_t>(rng.next_below(n));
        for (size_t j = 0; j < din; ++j) b.inputs.at2(i, j) = data.inputs.at2(idx, j);
        for (size_t j = 0; j < dt; ++j) b.targets.at2(i, j) = data.targets.at2(idx, j);
    }
    return b;
}

} // namespace

TrainOutcome train(const ModelGraph& initial, const LabeledSet& data, const TrainConfig& cfg) {
    initial.validate();
    if (cfg.learning_rate < 0.0) throw std::invalid_argument("learning rate must be >= 0");
    if (cfg.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (cfg.max_steps < 1) throw std::invalid_argument("max steps must be >= 1");
    if (data.size() < 1) throw std::invalid_argument("training set is empty");
    if (data.inputs.dim(1) != initial.input_dim()) {
        throw std::invalid_argument("data input dim " + std::to_string(data.inputs.dim(1)) +
                                    " does not match model input dim " +
                                    std::to_string(initial.input_dim()));
    }
    if (cfg.fake_quant && (cfg.fake_quant->bits < 2 || cfg.fake_quant->bits > 16)) {
        throw std::invalid_argument("bits must be in [2,16], got " +
                                    std::to_string(cfg.fake_quant->bits));
    }
    if (cfg.fake_quant && cfg.fake_quant->refresh_every < 1) {
        throw std::invalid_argument("quant refresh interval must be >= 1");
    }

    TrainOutcome out;
    out.model = initial;
    ModelGraph& model = out.model;
    const size_t L = model.layers.size();
    RngState rng(cfg.seed);

    std::vector<QuantParams> qparams(L);
    double best_loss = std::numeric_limits<double>::infinity();
    size_t best_step = 0;

    for (size_t step = 0; step < cfg.max_steps; ++step) {
        const Batch batch = sample_batch(data, cfg.batch_size, rng);

        bool refreshed = false;
        double loss_value = 0.0;
        Gradients grads;

        if (cfg.fake_quant) {
            if (step % static_cast<size_t>(cfg.fake_quant->refresh_every) == 0) {
                for (size_t li = 0; li < L; ++li) {
                    qparams[li] = refresh_params(model.layers[li].weights, cfg.fake_quant->bits);
                }
                refreshed = true;
            }
            // Quantize shadow weights for this forward pass.
            ModelGraph qmodel = model;
            std::vector<std::vector<uint8_t>> clamp_masks(L);
            for (size_t li = 0; li < L; ++li) {
                FakeQuantResult fq = fake_quantize(model.layers[li].weights, qparams[li]);
                qmodel.layers[li].weights = std::move(fq.values);
                clamp_masks[li] = std::move(fq.clamped);
            }
            const ForwardResult fw = forward(qmodel, batch.inputs, RunMode::Train, &rng);
            const LossResult loss = compute_loss(fw.output, batch.targets, cfg.loss);
            loss_value = loss.value;
            if (std::isfinite(loss_value)) {
                grads = ste_backward(qmodel, fw, loss.grad, clamp_masks);
            }
        } else {
            const ForwardResult fw = forward(model, batch.inputs, RunMode::Train, &rng);
            const LossResult loss = compute_loss(fw.output, batch.targets, cfg.loss);
            loss_value = loss.value;
            if (std::isfinite(loss_value)) {
                grads = backward(model, fw, loss.grad);
            }
        }

        if (!std::isfinite(loss_value)) {
            const std::string last = out.log.steps.empty()
                                         ? std::string("none")
                                         : std::to_string(out.log.steps.back().step);
            throw std::runtime_error("training diverged: loss not finite at step " +
                                     std::to_string(step) + " (last finite step: " + last + ")");
        }

        out.log.steps.push_back({step, loss_value, cfg.learning_rate, refreshed});

        // SGD update on the FP32 shadow parameters.
        const float lr = static_cast<float>(cfg.learning_rate);
        for (size_t li = 0; li < L; ++li) {
            auto w = model.layers[li].weights.data();
            const auto wg = grads.weight_grads[li].data();
            for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * wg[i];
            auto b = model.layers[li].bias.data();
            const auto bg = grads.bias_grads[li].data();
            for (size_t i = 0; i < b.size(); ++i) b[i] -= lr * bg[i];
        }

        if (loss_value < best_loss - cfg.convergence_threshold) {
            best_loss = loss_value;
            best_step = step;
        } else if (step - best_step >= cfg.convergence_window) {
            out.log.converged = true;
            out.log.steps_run = step + 1;
            return out;
        }
    }
    out.log.steps_run = cfg.max_steps;
    return out;
}

ModelGraph build_model_zoo(ZooScale scale, uint64_t seed) {
    size_t width = 0, depth = 0;
    switch (scale) {
        case ZooScale::Small: width = 1024; depth = 10; break;
        case ZooScale::Medium: width = 2048; depth = 20; break;
        case ZooScale::LargeDesk: width = 256; depth = 50; break;
    }
    RngState rng(seed);
    return make_mlp(width, std::vector<size_t>(depth, width), width, 0.1f, rng);
}

ModelGraph make_teacher_model(size_t dims, uint64_t seed) {
    if (dims < 1) throw std::invalid_argument("teacher dims must be >= 1");
    RngState rng(seed ^ 0x7EAC4E12C0FFEE42ull);
    return make_mlp(dims, {64, 64}, dims, 0.0f, rng);
}

LabeledSet make_blobs_task(size_t dims, size_t n, size_t classes, uint64_t seed) {
    if (dims < 1) throw std::invalid_argument("dims must be >= 1");
    if (n < 1) throw std::invalid_argument("sample count must be >= 1");
    if (classes < 2) throw std::invalid_argument("blobs need at least 2 classes");
    RngState rng(seed);
    const Tensor centers = uniform_tensor(rng, {classes, dims}, -3.0f, 3.0f);
    std::vector<float> inputs(n * dims);
    std::vector<float> targets(n);
    for (size_t i = 0; i < n; ++i) {
        const size_t k = rng.next_below(classes);
        targets[i] = static_cast<float>(k);
        for (size_t d = 0; d < dims; ++d) {
            inputs[i * dims + d] =
                centers.at2(k, d) + 0.5f * static_cast<float>(rng.next_normal());
        }
    }
    LabeledSet set;
    set.inputs = Tensor::from_data({n, dims}, std::move(inputs));
    set.targets = Tensor::from_data({n, 1}, std::move(targets));
    set.classification = true;
    set.source_seed = seed;
    return set;
}

LabeledSet make_teacher_task(size_t dims, size_t n, uint64_t seed, float noise_sigma) {
    if (n < 1) throw std::invalid_argument("sample count must be >= 1");
    if (noise_sigma < 0.0f) throw std::invalid_argument("noise sigma must be >= 0");
    const ModelGraph teacher = make_teacher_model(dims, seed);
    RngState input_rng(seed);
    LabeledSet set;
    set.inputs = normal_tensor(input_rng, {n, dims});
    const ForwardResult fw = forward(teacher, set.inputs, RunMode::Eval);
    set.targets = fw.output;
    if (noise_sigma > 0.0f) {
        RngState noise_rng(seed ^ 0x0150C0DE5EEDull);
        for (auto& v : set.targets.data()) {
            v += noise_sigma * static_cast<float>(noise_rng.next_normal());
        }
    }
    set.classification = false;
    set.source_seed = seed;
    return set;
}

LabeledSet make_blob_task(size_t dims, size_t num_classes, size_t n, uint64_t seed,
                          float mean_distance) {
    if (n < 1) throw std::invalid_argument("sample count must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("blob task needs >= 2 classes");
    if (num_classes > dims) {
        throw std::invalid_argument("blob task needs num_classes <= dims (axis-aligned means), got " +
                                    std::to_string(num_classes) + " classes for " +
                                    std::to_string(dims) + " dims");
    }
    // Means sit on distinct coordinate axes, so pairwise distance is
    // scale * sqrt(2); pick scale to hit the requested separation.
    const float scale = mean_distance / std::sqrt(2.0f);
    RngState rng(seed);
    LabeledSet set;
    set.inputs = Tensor::zeros({n, dims});
    set.targets = Tensor::zeros({n, 1});
    for (size_t i = 0; i < n; ++i) {
        const size_t cls = i % num_classes;
        for (size_t j = 0; j < dims; ++j) {
            float v = static_cast<float>(rng.next_normal());
            if (j == cls) v += scale;
            set.inputs.at2(i, j) = v;
        }
        set.targets.at2(i, 0) = static_cast<float>(cls);
    }
    set.classification = true;
    set.source_seed = seed;
    return set;
}

} // namespace quantlab
