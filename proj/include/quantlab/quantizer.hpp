#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "quantlab/tensor.hpp"

namespace quantlab {

enum class Scheme : uint8_t { Affine = 1, Log = 2 };

// Everything needed to (de)quantize one tensor. For the Log scheme the
// affine fields stay at their neutral values (scale 1, zero_point 0) and
// log_emax anchors the exponent window.
struct QuantParams {
    float scale = 1.0f;
    int32_t zero_point = 0;
    int bits = 8;
    bool is_signed = false;
    float gamma = 1.0f;
    Scheme scheme = Scheme::Affine;
    int32_t log_emax = 0;
};

int32_t quant_min(int bits, bool is_signed);
int32_t quant_max(int bits, bool is_signed);

// Throws std::invalid_argument when a field is out of contract.
void validate_params(const QuantParams& p);

struct QuantizedTensor {
    QuantParams params;
    std::vector<size_t> shape;
    // b bits per element, little-endian, LSB-first within each byte,
    // two's complement when signed, padded to a whole byte at tensor end.
    std::vector<uint8_t> payload;

    size_t numel() const;
};

enum class NormKind : uint8_t { Spectral = 0, Frobenius = 1 };

struct QuantError {
    double max_abs = 0.0;
    double mse = 0.0;
    double relative_eq = 0.0;  // ||x - x_hat|| / ||x||, 0 when ||x|| == 0
    NormKind norm = NormKind::Frobenius;
};

std::vector<uint8_t> pack_bits(std::span<const int32_t> codes, int bits, bool is_signed);
std::vector<int32_t> unpack_bits(std::span<const uint8_t> payload, size_t count, int bits, bool is_signed);

// q_i = clamp(round_half_away_from_zero(x_i / s) + z, qmin, qmax).
// The division is done in double so ports agree on rounding bit-exactly.
QuantizedTensor quantize_affine(const Tensor& x, const QuantParams& p);

struct FakeQuantResult {
    Tensor values;                 // dequantize(quantize(x)) at gamma 1
    std::vector<uint8_t> clamped;  // 1 where the unclamped code fell outside [qmin,qmax]
};

// Quantize-then-dequantize with a per-element clamp mask for clipped STE.
FakeQuantResult fake_quantize(const Tensor& x, const QuantParams& p);

// Snap magnitudes to powers of two: sign(x) * 2^floor(log2|x|), exponents
// clamped to a window of 2^(b-1)-1 codes ending at floor(log2 max|x|);
// code layout is 1 sign bit, magnitude 0 reserved for zero.
QuantizedTensor quantize_log(const Tensor& x, int bits);

// x_hat = gamma * s * (q - z) for Affine, gamma * sign * 2^e for Log.
Tensor dequantize(const QuantizedTensor& qt);

struct ScaleZeroPoint {
    float scale = 1.0f;
    int32_t zero_point = 0;
};

// s = (x_max - x_min) / (2^b - 1), z = round(-x_min / s) clamped to the
// unsigned range. An exactly constant range is widened to +/-1e-6 around it.
ScaleZeroPoint scale_from_range(float x_min, float x_max, int bits);

// Full affine parameter set for either signedness; reduces to
// scale_from_range for unsigned.
QuantParams affine_params_from_range(float x_min, float x_max, int bits, bool is_signed);

// The closed form s* = 2(max(w) - min(w)) / (2^b - 1), reported verbatim.
// Disagrees by a factor of two with the conventional step; callers choose.
float scale_theorem1(const Tensor& w, int bits);

// Brute-force scale search minimizing empirical quantize->dequantize MSE on
// a log-spaced grid of [range/(2^b-1)/4, 4*range/(2^b-1)], with the two
// closed-form candidates included so it never loses to either.
float scale_mse_oracle(const Tensor& w, int bits, int grid_points);

double empirical_quant_mse(const Tensor& w, float scale, int bits);

QuantError measure_error(const Tensor& x, const QuantizedTensor& qt);

} // namespace quantlab
