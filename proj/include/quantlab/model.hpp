#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "quantlab/quantizer.hpp"
#include "quantlab/rng.hpp"
#include "quantlab/tensor.hpp"

namespace quantlab {

enum class Activation : uint8_t { None = 0, ReLU = 1 };

// One dense layer. weights is always the FP32 compute view [out x in]; when
// the layer has been quantized, `quantized` holds the packed storage form and
// weights holds its dequantized reconstruction (gamma already folded in).
struct Layer {
    Tensor weights;
    Tensor bias;
    Activation activation = Activation::ReLU;
    float dropout_rate = 0.0f;
    std::optional<QuantizedTensor> quantized;

    size_t in_dim() const { return weights.dim(1); }
    size_t out_dim() const { return weights.dim(0); }
};

struct ModelGraph {
    std::vector<Layer> layers;

    size_t input_dim() const;
    size_t output_dim() const;
    size_t param_count() const;
    bool any_quantized() const;
    // Layer dims chain, biases match, final activation None, dropout in [0,1).
    void validate() const;
};

// Fully-connected ReLU MLP with He-initialized weights and zero biases.
// hidden may be empty (a single linear layer). The final layer always gets
// Activation::None and zero dropout.
ModelGraph make_mlp(size_t input_dim, const std::vector<size_t>& hidden, size_t output_dim,
                    float dropout_rate, RngState& rng);

enum class RunMode : uint8_t { Train = 0, Eval = 1 };

// Everything backward needs, plus the multiply-add count of the executed pass.
struct ForwardResult {
    Tensor output;
    std::vector<Tensor> layer_inputs;     // input seen by each layer
    std::vector<Tensor> pre_activations;  // z_l = x W^T + b
    // Inverted-dropout keep masks (scaled), one per layer; empty when the
    // layer applied no dropout.
    std::vector<std::vector<uint8_t>> dropout_masks;
    uint64_t macs = 0;
};

// batch is [N x input_dim]. Train mode draws dropout masks from rng (required
// when any layer has dropout_rate > 0); Eval never touches rng.
ForwardResult forward(const ModelGraph& model, const Tensor& batch, RunMode mode,
                      RngState* rng = nullptr);

enum class LossKind : uint8_t { MSE = 0, CrossEntropy = 1 };

struct LossResult {
    double value = 0.0;
    Tensor grad;  // d loss / d output, same shape as output
};

// MSE: mean squared error over all output elements, targets [N x D].
// CrossEntropy: softmax cross-entropy, targets [N x 1] holding class indices.
LossResult compute_loss(const Tensor& output, const Tensor& targets, LossKind kind);

struct LabeledSet {
    Tensor inputs;   // [N x D_in]
    Tensor targets;  // [N x D_out] (regression) or [N x 1] class ids
    bool classification = false;
    uint64_t source_seed = 0;

    size_t size() const { return inputs.dim(0); }
};

struct EvalMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
    bool has_accuracy = false;
};

// Deterministic full-set evaluation: Eval mode (no dropout), mean loss, and
// argmax accuracy for classification sets.
EvalMetrics evaluate_model(const ModelGraph& model, const LabeledSet& data, LossKind kind);

} // namespace quantlab
