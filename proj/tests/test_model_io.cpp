#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "quantlab/model_io.hpp"
#include "quantlab/quantizer.hpp"
#include "quantlab/rng.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace quantlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("quantlab_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<uint8_t> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>());
}

void spit(const fs::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

ModelGraph small_model(uint64_t seed, float dropout = 0.0f) {
    RngState rng(seed);
    return make_mlp(3, {5}, 2, dropout, rng);
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

// Quantize every weight matrix in place, the way the PTQ path leaves a model.
void quantize_weights_affine(ModelGraph& m, int bits) {
    for (Layer& layer : m.layers) {
        float lo = layer.weights.data()[0], hi = lo;
        for (float v : layer.weights.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const QuantParams p = affine_params_from_range(lo, hi, bits, false);
        QuantizedTensor qt = quantize_affine(layer.weights, p);
        layer.weights = dequantize(qt);
        layer.quantized = std::move(qt);
    }
}

void quantize_weights_log(ModelGraph& m, int bits) {
    for (Layer& layer : m.layers) {
        QuantizedTensor qt = quantize_log(layer.weights, bits);
        layer.weights = dequantize(qt);
        layer.quantized = std::move(qt);
    }
}

} // namespace

TEST_CASE("crc32 matches the standard check value") {
    const char* msg = "123456789";
    CHECK(crc32_ieee(reinterpret_cast<const uint8_t*>(msg), 9) == 0xCBF43926u);
    CHECK(crc32_ieee(nullptr, 0) == 0x00000000u);
}

TEST_CASE("fp32 model round-trips byte-identically") {
    const fs::path dir = scratch_dir("fp32_roundtrip");
    const ModelGraph m = small_model(21, 0.25f);
    const fs::path p1 = dir / "a.qtm";
    const fs::path p2 = dir / "b.qtm";
    save_model(m, p1.string());
    const ModelGraph loaded = load_model(p1.string());
    save_model(loaded, p2.string());
    CHECK(slurp(p1) == slurp(p2));

    REQUIRE(loaded.layers.size() == m.layers.size());
    for (size_t li = 0; li < m.layers.size(); ++li) {
        CHECK(tensors_equal(loaded.layers[li].weights, m.layers[li].weights));
        CHECK(tensors_equal(loaded.layers[li].bias, m.layers[li].bias));
        CHECK(loaded.layers[li].activation == m.layers[li].activation);
        CHECK(loaded.layers[li].dropout_rate == m.layers[li].dropout_rate);
        CHECK_FALSE(loaded.layers[li].quantized.has_value());
    }
}

TEST_CASE("affine-quantized models round-trip params, payload, and weights") {
    const fs::path dir = scratch_dir("affine_roundtrip");
    for (int bits : {8, 4}) {
        ModelGraph m = small_model(22 + static_cast<uint64_t>(bits));
        quantize_weights_affine(m, bits);
        const fs::path p = dir / ("b" + std::to_string(bits) + ".qtm");
        save_model(m, p.string());
        const ModelGraph loaded = load_model(p.string());
        REQUIRE(loaded.layers.size() == m.layers.size());
        for (size_t li = 0; li < m.layers.size(); ++li) {
            REQUIRE(loaded.layers[li].quantized.has_value());
            const QuantizedTensor& got = *loaded.layers[li].quantized;
            const QuantizedTensor& want = *m.layers[li].quantized;
            CHECK(got.params.scale == want.params.scale);
            CHECK(got.params.zero_point == want.params.zero_point);
            CHECK(got.params.bits == want.params.bits);
            CHECK(got.params.is_signed == want.params.is_signed);
            CHECK(got.params.gamma == want.params.gamma);
            CHECK(got.params.scheme == Scheme::Affine);
            CHECK(got.payload == want.payload);
            CHECK(got.shape == want.shape);
            // Dequantized weights reproduced bit-for-bit.
            CHECK(tensors_equal(loaded.layers[li].weights, m.layers[li].weights));
        }
    }
}

TEST_CASE("log-quantized models restore the exponent window") {
    const fs::path dir = scratch_dir("log_roundtrip");
    ModelGraph m = small_model(31);
    quantize_weights_log(m, 4);
    const fs::path p = dir / "log.qtm";
    save_model(m, p.string());
    const ModelGraph loaded = load_model(p.string());
    for (size_t li = 0; li < m.layers.size(); ++li) {
        REQUIRE(loaded.layers[li].quantized.has_value());
        const QuantizedTensor& got = *loaded.layers[li].quantized;
        const QuantizedTensor& want = *m.layers[li].quantized;
        CHECK(got.params.scheme == Scheme::Log);
        CHECK(got.params.log_emax == want.params.log_emax);
        CHECK(got.params.scale == 1.0f);
        CHECK(got.params.zero_point == 0);
        CHECK(got.payload == want.payload);
        CHECK(tensors_equal(loaded.layers[li].weights, m.layers[li].weights));
    }
}

TEST_CASE("every single-byte corruption is rejected") {
    const fs::path dir = scratch_dir("corruption");
    const ModelGraph m = small_model(41);
    const fs::path p = dir / "intact.qtm";
    save_model(m, p.string());
    const std::vector<uint8_t> bytes = slurp(p);
    const fs::path broken = dir / "broken.qtm";
    for (size_t i = 0; i < bytes.size(); ++i) {
        std::vector<uint8_t> mutated = bytes;
        mutated[i] ^= 0xFF;
        spit(broken, mutated);
        CHECK_THROWS_AS(load_model(broken.string()), std::runtime_error);
    }
}

TEST_CASE("truncated containers name the missing bytes") {
    const fs::path dir = scratch_dir("truncation");
    const ModelGraph m = small_model(43);
    const fs::path p = dir / "intact.qtm";
    save_model(m, p.string());
    const std::vector<uint8_t> bytes = slurp(p);
    const fs::path cut = dir / "cut.qtm";
    for (size_t keep : {size_t{0}, size_t{3}, size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
        spit(cut, std::vector<uint8_t>(bytes.begin(),
                                       bytes.begin() + static_cast<std::ptrdiff_t>(keep)));
        CHECK_THROWS_AS(load_model(cut.string()), std::runtime_error);
    }
    // Corruption inside the byte stream surfaces as a CRC mismatch, named.
    std::vector<uint8_t> flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    spit(cut, flipped);
    try {
        load_model(cut.string());
        FAIL("corrupted container loaded");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("CRC") != std::string::npos);
    }
}

TEST_CASE("saving leaves no temp file behind") {
    const fs::path dir = scratch_dir("atomic");
    const fs::path p = dir / "m.qtm";
    save_model(small_model(44), p.string());
    CHECK(fs::exists(p));
    CHECK_FALSE(fs::exists(p.string() + ".tmp"));
    size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
    CHECK(entries == 1);
}

TEST_CASE("calibration sets round-trip exactly") {
    const fs::path dir = scratch_dir("qcal");
    RngState rng(51);
    CalibrationSet set;
    for (int i = 0; i < 7; ++i) set.samples.push_back(normal_tensor(rng, {6}));
    const fs::path p = dir / "cal.qcal";
    save_calibration(set, p.string());
    const CalibrationSet loaded = load_calibration(p.string());
    REQUIRE(loaded.samples.size() == set.samples.size());
    for (size_t i = 0; i < set.samples.size(); ++i) {
        CHECK(tensors_equal(loaded.samples[i], set.samples[i]));
    }

    CalibrationSet empty;
    CHECK_THROWS_AS(save_calibration(empty, (dir / "x.qcal").string()), std::invalid_argument);

    // A size lie in the header is caught by the exact-size check.
    std::vector<uint8_t> bytes = slurp(p);
    bytes.push_back(0);
    const fs::path padded = dir / "padded.qcal";
    spit(padded, bytes);
    CHECK_THROWS_AS(load_calibration(padded.string()), std::runtime_error);
    bytes.resize(bytes.size() - 5);
    spit(padded, bytes);
    CHECK_THROWS_AS(load_calibration(padded.string()), std::runtime_error);
}

TEST_CASE("labeled sets persist as an input file plus a targets sidecar") {
    const fs::path dir = scratch_dir("labeled");
    RngState rng(52);
    LabeledSet set;
    set.inputs = normal_tensor(rng, {9, 4});
    set.targets = normal_tensor(rng, {9, 2});
    const fs::path p = dir / "data.qcal";
    save_labeled_set(set, p.string());
    CHECK(fs::exists(p));
    CHECK(fs::exists(p.string() + ".targets"));

    const LabeledSet loaded = load_labeled_set(p.string());
    CHECK(tensors_equal(loaded.inputs, set.inputs));
    CHECK(tensors_equal(loaded.targets, set.targets));
    CHECK_FALSE(loaded.classification);
    CHECK(load_labeled_set(p.string(), true).classification);

    // Mismatched sidecar counts are rejected.
    LabeledSet other;
    other.inputs = normal_tensor(rng, {5, 4});
    other.targets = normal_tensor(rng, {5, 2});
    const fs::path q = dir / "other.qcal";
    save_labeled_set(other, q.string());
    fs::copy_file(q.string() + ".targets", p.string() + ".targets",
                  fs::copy_options::overwrite_existing);
    CHECK_THROWS_AS(load_labeled_set(p.string()), std::runtime_error);
}

TEST_CASE("missing files report their path") {
    try {
        load_model("/nonexistent/quantlab/m.qtm");
        FAIL("loaded a missing file");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("/nonexistent/quantlab/m.qtm") != std::string::npos);
    }
    CHECK_THROWS_AS(crc32_of_file("/nonexistent/quantlab/m.qtm"), std::runtime_error);
    CHECK_THROWS_AS(file_size_bytes("/nonexistent/quantlab/m.qtm"), std::runtime_error);
}
