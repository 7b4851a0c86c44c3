#include "quantlab/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace quantlab {

namespace {

constexpr double kDegenerateWiden = 1e-6;

int32_t clamp_code(int64_t q, int32_t lo, int32_t hi) {
    if (q < lo) return lo;
    if (q > hi) return hi;
    return static_cast<int32_t>(q);
}

int64_t round_half_away(double v) {
    return std::llround(v);
}

void check_bits(int bits) {
    if (bits < 2 || bits > 16) {
        throw std::invalid_argument("bits must be in [2,16], got " + std::to_string(bits));
    }
}

std::pair<float, float> min_max(const Tensor& t) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : t.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {lo, hi};
}

} // namespace

int32_t quant_min(int bits, bool is_signed) {
    return is_signed ? -(1 << (bits - 1)) : 0;
}

int32_t quant_max(int bits, bool is_signed) {
    return is_signed ? (1 << (bits - 1)) - 1 : (1 << bits) - 1;
}

void validate_params(const QuantParams& p) {
    check_bits(p.bits);
    if (!(p.scale > 0.0f) || !std::isfinite(p.scale)) {
        throw std::invalid_argument("quant scale must be positive and finite");
    }
    if (!(p.gamma > 0.0f) || !std::isfinite(p.gamma)) {
        throw std::invalid_argument("quant gamma must be positive and finite");
    }
    if (p.scheme == Scheme::Affine) {
        if (p.zero_point < quant_min(p.bits, p.is_signed) || p.zero_point > quant_max(p.bits, p.is_signed)) {
            throw std::invalid_argument("zero point " + std::to_string(p.zero_point) +
                                        " outside representable range for " + std::to_string(p.bits) +
                                        (p.is_signed ? " signed bits" : " unsigned bits"));
        }
    } else {
        if (p.scale != 1.0f || p.zero_point != 0) {
            throw std::invalid_argument("log scheme requires scale 1 and zero point 0");
        }
    }
}

size_t QuantizedTensor::numel() const {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

std::vector<uint8_t> pack_bits(std::span<const int32_t> codes, int bits, bool is_signed) {
    check_bits(bits);
    const int32_t lo = quant_min(bits, is_signed);
    const int32_t hi = quant_max(bits, is_signed);
    const uint32_t mask = (1u << bits) - 1u;
    std::vector<uint8_t> out;
    out.reserve((codes.size() * static_cast<size_t>(bits) + 7) / 8);
    uint64_t acc = 0;
    int nbits = 0;
    for (int32_t c : codes) {
        if (c < lo || c > hi) {
            throw std::invalid_argument("code " + std::to_string(c) + " outside [" +
                                        std::to_string(lo) + "," + std::to_string(hi) + "]");
        }
        acc |= static_cast<uint64_t>(static_cast<uint32_t>(c) & mask) << nbits;
        nbits += bits;
        while (nbits >= 8) {
            out.push_back(static_cast<uint8_t>(acc & 0xFF));
            acc >>= 8;
            nbits -= 8;
        }
    }
    if (nbits > 0) out.push_back(static_cast<uint8_t>(acc & 0xFF));
    return out;
}

std::vector<int32_t> unpack_bits(std::span<const uint8_t> payload, size_t count, int bits, bool is_signed) {
    check_bits(bits);
    const size_t need = (count * static_cast<size_t>(bits) + 7) / 8;
    if (payload.size() != need) {
        throw std::runtime_error("packed payload is " + std::to_string(payload.size()) +
                                 " bytes, expected " + std::to_string(need));
    }
    const uint32_t mask = (1u << bits) - 1u;
    std::vector<int32_t> codes(count);
    uint64_t acc = 0;
    int nbits = 0;
    size_t byte = 0;
    for (size_t i = 0; i < count; ++i) {
        while (nbits < bits) {
            acc |= static_cast<uint64_t>(payload[byte++]) << nbits;
            nbits += 8;
        }
        uint32_t u = static_cast<uint32_t>(acc & mask);
        acc >>= bits;
        nbits -= bits;
        if (is_signed && (u & (1u << (bits - 1)))) u |= ~mask;
        codes[i] = static_cast<int32_t>(u);
    }
    return codes;
}

QuantizedTensor quantize_affine(const Tensor& x, const QuantParams& p) {
    if (p.scheme != Scheme::Affine) throw std::invalid_argument("quantize_affine requires the affine scheme");
    validate_params(p);
    const int32_t lo = quant_min(p.bits, p.is_signed);
    const int32_t hi = quant_max(p.bits, p.is_signed);
    const double s = static_cast<double>(p.scale);
    std::vector<int32_t> codes(x.numel());
    const auto data = x.data();
    for (size_t i = 0; i < codes.size(); ++i) {
        const int64_t q = round_half_away(static_cast<double>(data[i]) / s) + p.zero_point;
        codes[i] = clamp_code(q, lo, hi);
    }
    QuantizedTensor qt;
    qt.params = p;
    qt.shape = x.shape();
    qt.payload = pack_bits(codes, p.bits, p.is_signed);
    return qt;
}

FakeQuantResult fake_quantize(const Tensor& x, const QuantParams& p) {
    if (p.scheme != Scheme::Affine) throw std::invalid_argument("fake_quantize requires the affine scheme");
    validate_params(p);
    const int32_t lo = quant_min(p.bits, p.is_signed);
    const int32_t hi = quant_max(p.bits, p.is_signed);
    const double s = static_cast<double>(p.scale);
    FakeQuantResult res;
    res.values = Tensor::zeros(x.shape());
    res.clamped.assign(x.numel(), 0);
    const auto in = x.data();
    auto out = res.values.data();
    for (size_t i = 0; i < in.size(); ++i) {
        const int64_t q = round_half_away(static_cast<double>(in[i]) / s) + p.zero_point;
        const int32_t qc = clamp_code(q, lo, hi);
        if (q != qc) res.clamped[i] = 1;
        out[i] = p.scale * static_cast<float>(qc - p.zero_point);
    }
    return res;
}

namespace {

// floor(log2 |x|) for finite nonzero x, exact via the exponent field.
int32_t floor_log2_abs(float x) {
    return std::ilogb(static_cast<double>(std::fabs(x)));
}

} // namespace

QuantizedTensor quantize_log(const Tensor& x, int bits) {
    check_bits(bits);
    const int32_t num_exp_codes = (1 << (bits - 1)) - 1;

    float max_abs = 0.0f;
    for (float v : x.data()) max_abs = std::max(max_abs, std::fabs(v));

    QuantParams p;
    p.scheme = Scheme::Log;
    p.bits = bits;
    p.is_signed = false;  // codes are sign-bit + magnitude, stored unsigned
    p.scale = 1.0f;
    p.zero_point = 0;
    p.log_emax = max_abs > 0.0f ? floor_log2_abs(max_abs) : 0;
    const int32_t e_min = p.log_emax - (num_exp_codes - 1);

    std::vector<int32_t> codes(x.numel());
    const auto data = x.data();
    for (size_t i = 0; i < codes.size(); ++i) {
        const float v = data[i];
        if (v == 0.0f || max_abs == 0.0f) {
            codes[i] = 0;
            continue;
        }
        int32_t e = floor_log2_abs(v);
        e = std::clamp(e, e_min, p.log_emax);
        const int32_t magnitude = e - e_min + 1;
        codes[i] = (v < 0.0f ? (1 << (bits - 1)) : 0) | magnitude;
    }
    QuantizedTensor qt;
    qt.params = p;
    qt.shape = x.shape();
    qt.payload = pack_bits(codes, bits, false);
    return qt;
}

Tensor dequantize(const QuantizedTensor& qt) {
    validate_params(qt.params);
    const size_t n = qt.numel();
    const size_t need = (n * static_cast<size_t>(qt.params.bits) + 7) / 8;
    if (qt.payload.size() != need) {
        throw std::runtime_error("quantized payload is " + std::to_string(qt.payload.size()) +
                                 " bytes, expected " + std::to_string(need) + " for shape " +
                                 shape_to_string(qt.shape));
    }
    Tensor out = Tensor::zeros(qt.shape);
    auto dst = out.data();
    const float gamma = qt.params.gamma;
    if (qt.params.scheme == Scheme::Affine) {
        const auto codes = unpack_bits(qt.payload, n, qt.params.bits, qt.params.is_signed);
        const float s = qt.params.scale;
        const int32_t z = qt.params.zero_point;
        for (size_t i = 0; i < n; ++i) {
            dst[i] = gamma * (s * static_cast<float>(codes[i] - z));
        }
    } else {
        const auto codes = unpack_bits(qt.payload, n, qt.params.bits, false);
        const int bits = qt.params.bits;
        const int32_t num_exp_codes = (1 << (bits - 1)) - 1;
        const int32_t e_min = qt.params.log_emax - (num_exp_codes - 1);
        const uint32_t mag_mask = (1u << (bits - 1)) - 1u;
        for (size_t i = 0; i < n; ++i) {
            const uint32_t c = static_cast<uint32_t>(codes[i]);
            const uint32_t magnitude = c & mag_mask;
            if (magnitude == 0) {
                dst[i] = 0.0f;
                continue;
            }
            const int32_t e = e_min + static_cast<int32_t>(magnitude) - 1;
            const float mag = std::ldexp(1.0f, e);
            dst[i] = gamma * (c >> (bits - 1) ? -mag : mag);
        }
    }
    return out;
}

ScaleZeroPoint scale_from_range(float x_min, float x_max, int bits) {
    check_bits(bits);
    if (x_max < x_min) {
        throw std::invalid_argument("range has x_max < x_min");
    }
    if (x_max == x_min) {
        // Constant tensor: widen around the value so the scale stays positive.
        x_min -= static_cast<float>(kDegenerateWiden);
        x_max += static_cast<float>(kDegenerateWiden);
    }
    const double levels = static_cast<double>((1 << bits) - 1);
    const double s = (static_cast<double>(x_max) - static_cast<double>(x_min)) / levels;
    ScaleZeroPoint out;
    out.scale = static_cast<float>(s);
    out.zero_point = clamp_code(round_half_away(-static_cast<double>(x_min) / s), 0, (1 << bits) - 1);
    return out;
}

QuantParams affine_params_from_range(float x_min, float x_max, int bits, bool is_signed) {
    QuantParams p;
    p.scheme = Scheme::Affine;
    p.bits = bits;
    p.is_signed = is_signed;
    if (!is_signed) {
        const ScaleZeroPoint sz = scale_from_range(x_min, x_max, bits);
        p.scale = sz.scale;
        p.zero_point = sz.zero_point;
        return p;
    }
    check_bits(bits);
    if (x_max < x_min) throw std::invalid_argument("range has x_max < x_min");
    if (x_max == x_min) {
        x_min -= static_cast<float>(kDegenerateWiden);
        x_max += static_cast<float>(kDegenerateWiden);
    }
    const double levels = static_cast<double>((1 << bits) - 1);
    const double s = (static_cast<double>(x_max) - static_cast<double>(x_min)) / levels;
    p.scale = static_cast<float>(s);
    // Same construction shifted so qmin maps to x_min.
    const int64_t z = quant_min(bits, true) + round_half_away(-static_cast<double>(x_min) / s);
    p.zero_point = clamp_code(z, quant_min(bits, true), quant_max(bits, true));
    return p;
}

float scale_theorem1(const Tensor& w, int bits) {
    check_bits(bits);
    if (w.numel() == 0) throw std::invalid_argument("scale_theorem1: empty tensor");
    const auto [lo, hi] = min_max(w);
    if (hi <= lo) throw std::domain_error("scale_theorem1: degenerate range (constant tensor)");
    return static_cast<float>(2.0 * (static_cast<double>(hi) - static_cast<double>(lo)) /
                              static_cast<double>((1 << bits) - 1));
}

double empirical_quant_mse(const Tensor& w, float scale, int bits) {
    const auto [lo, hi] = min_max(w);
    (void)hi;
    QuantParams p;
    p.scheme = Scheme::Affine;
    p.bits = bits;
    p.is_signed = false;
    p.scale = scale;
    p.zero_point = clamp_code(round_half_away(-static_cast<double>(lo) / static_cast<double>(scale)),
                              0, (1 << bits) - 1);
    const FakeQuantResult fq = fake_quantize(w, p);
    double sum = 0.0;
    const auto a = w.data();
    const auto b = fq.values.data();
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

float scale_mse_oracle(const Tensor& w, int bits, int grid_points) {
    check_bits(bits);
    if (grid_points < 100) throw std::invalid_argument("scale_mse_oracle: grid_points must be >= 100");
    if (w.numel() == 0) throw std::invalid_argument("scale_mse_oracle: empty tensor");
    const auto [lo, hi] = min_max(w);
    if (hi <= lo) throw std::domain_error("scale_mse_oracle: degenerate range (constant tensor)");

    const double base = (static_cast<double>(hi) - static_cast<double>(lo)) /
                        static_cast<double>((1 << bits) - 1);
    std::vector<float> candidates;
    candidates.reserve(static_cast<size_t>(grid_points) + 2);
    const double s_lo = base / 4.0;
    for (int i = 0; i < grid_points; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(grid_points - 1);
        candidates.push_back(static_cast<float>(s_lo * std::pow(16.0, t)));
    }
    // The closed forms sit on the grid's interior; including them exactly
    // guarantees the search never reports a worse scale than either.
    candidates.push_back(static_cast<float>(base));
    candidates.push_back(static_cast<float>(2.0 * base));

    float best_s = candidates.front();
    double best_mse = std::numeric_limits<double>::infinity();
    for (float s : candidates) {
        const double mse = empirical_quant_mse(w, s, bits);
        if (mse < best_mse) {
            best_mse = mse;
            best_s = s;
        }
    }
    return best_s;
}

QuantError measure_error(const Tensor& x, const QuantizedTensor& qt) {
    if (x.shape() != qt.shape) {
        throw std::invalid_argument("measure_error shape mismatch: " + shape_to_string(x.shape()) +
                                    " vs " + shape_to_string(qt.shape));
    }
    const Tensor x_hat = dequantize(qt);
    QuantError err;
    Tensor diff = Tensor::zeros(x.shape());
    const auto a = x.data();
    const auto b = x_hat.data();
    auto d = diff.data();
    double sq = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double dv = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        d[i] = static_cast<float>(dv);
        err.max_abs = std::max(err.max_abs, std::fabs(dv));
        sq += dv * dv;
    }
    err.mse = sq / static_cast<double>(a.size());
    if (x.rank() == 2) {
        err.norm = NormKind::Spectral;
        const double wn = spectral_norm(x, 500, 1e-10).value;
        err.relative_eq = wn > 0.0 ? spectral_norm(diff, 500, 1e-10).value / wn : 0.0;
    } else {
        err.norm = NormKind::Frobenius;
        const double wn = frobenius_norm(x);
        err.relative_eq = wn > 0.0 ? frobenius_norm(diff) / wn : 0.0;
    }
    return err;
}

} // namespace quantlab
