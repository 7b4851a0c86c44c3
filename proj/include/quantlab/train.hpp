#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "quantlab/model.hpp"

namespace quantlab {

struct Gradients {
    std::vector<Tensor> weight_grads;
    std::vector<Tensor> bias_grads;
};

// Exact chain-rule gradients for the FP32 forward pass held in `cache`.
// loss_grad is d loss / d output from compute_loss.
Gradients backward(const ModelGraph& model, const ForwardResult& cache, const Tensor& loss_grad);

// Straight-through gradients for a fake-quantized forward: backprop runs
// against the quantized weights in `model`, then weight gradients are zeroed
// where the quantizer clamped (clipped STE). clamp_masks come from
// fake_quantize, one per layer, elementwise over the weight matrix.
Gradients ste_backward(const ModelGraph& model, const ForwardResult& cache, const Tensor& loss_grad,
                       const std::vector<std::vector<uint8_t>>& clamp_masks);

struct FakeQuantConfig {
    int bits = 8;
    // Recompute quantization parameters from the shadow weights every this
    // many steps; 1 means every step.
    int refresh_every = 50;
};

struct TrainConfig {
    double learning_rate = 0.01;
    size_t batch_size = 32;
    size_t max_steps = 1000;
    uint64_t seed = 42;
    std::optional<FakeQuantConfig> fake_quant;
    LossKind loss = LossKind::MSE;
    // Stop when the best seen loss has not improved by more than
    // convergence_threshold for convergence_window consecutive steps.
    double convergence_threshold = 1e-5;
    size_t convergence_window = 200;
};

struct TrainStep {
    size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    bool quant_refresh = false;
};

struct TrainLog {
    std::vector<TrainStep> steps;
    bool converged = false;
    size_t steps_run = 0;
};

struct TrainOutcome {
    ModelGraph model;
    TrainLog log;
};

// Plain SGD on FP32 shadow weights. With cfg.fake_quant set, each forward
// uses quantize-then-dequantize weights and gradients flow through the
// clipped straight-through estimator.
TrainOutcome train(const ModelGraph& initial, const LabeledSet& data, const TrainConfig& cfg);

enum class ZooScale : uint8_t { Small = 0, Medium = 1, LargeDesk = 2 };

// Reference architectures: Small = 10 hidden layers x 1024 units,
// Medium = 20 x 2048, LargeDesk = 50 x 256 (a depth-preserving stand-in for
// the billion-parameter configuration, which is beyond desk scale).
// Input/output width equals the hidden width; dropout 0.1 on hidden layers.
ModelGraph build_model_zoo(ZooScale scale, uint64_t seed);

// Frozen random teacher used by the regression task. Same (dims, seed) pair
// always yields the identical network.
ModelGraph make_teacher_model(size_t dims, uint64_t seed);

// Inputs ~ N(0,1), targets = teacher(inputs) + N(0, noise_sigma).
LabeledSet make_teacher_task(size_t dims, size_t n, uint64_t seed, float noise_sigma = 0.01f);

// Gaussian-blob classification task: `classes` clusters with centers drawn
// uniformly in [-3,3]^dims and isotropic scatter 0.5; targets are class
// ids. Same (dims, n, classes, seed) always yields the identical set.
LabeledSet make_blobs_task(size_t dims, size_t n, size_t classes, uint64_t seed);

// Gaussian blobs: class c's mean sits on the c-th coordinate axis, scaled so
// pairwise mean distance equals mean_distance (in units of the unit noise
// sigma). Requires num_classes <= dims. Labels cycle round-robin.
LabeledSet make_blob_task(size_t dims, size_t num_classes, size_t n, uint64_t seed,
                          float mean_distance = 10.0f);

} // namespace quantlab
