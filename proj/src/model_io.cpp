#include "quantlab/model_io.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace quantlab {

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
        }
        table[i] = c;
    }
    return table;
}

const std::array<uint32_t, 256> kCrcTable = make_crc_table();

} // namespace

uint32_t crc32_ieee(const uint8_t* data, size_t len) {
    uint32_t c = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) {
        c = kCrcTable[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    }
    return c ^ 0xFFFFFFFFu;
}

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw std::runtime_error("failed reading " + path);
    return bytes;
}

// Write-then-rename so readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::vector<uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("failed writing " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw std::runtime_error("failed renaming " + tmp + " to " + path + ": " + ec.message());
    }
}

struct ByteWriter {
    std::vector<uint8_t> bytes;

    void u8(uint8_t v) { bytes.push_back(v); }
    void u16(uint16_t v) {
        bytes.push_back(static_cast<uint8_t>(v & 0xFF));
        bytes.push_back(static_cast<uint8_t>(v >> 8));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
    }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void f32(float v) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void raw(const uint8_t* data, size_t len) { bytes.insert(bytes.end(), data, data + len); }
    void text(const std::string& s) {
        raw(reinterpret_cast<const uint8_t*>(s.data()), s.size());
    }
};

struct ByteReader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) const {
        if (pos + n > bytes.size()) {
            throw std::runtime_error(path + " is truncated at offset " + std::to_string(pos) +
                                     " (need " + std::to_string(n) + " more bytes, have " +
                                     std::to_string(bytes.size() - pos) + ")");
        }
    }
    uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    float f32() {
        const uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string text(size_t len) {
        need(len);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), len);
        pos += len;
        return s;
    }
    std::vector<uint8_t> blob(size_t len) {
        need(len);
        std::vector<uint8_t> out(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
        return out;
    }
};

enum TensorKind : uint8_t { kFp32 = 0, kAffine = 1, kLog = 2 };

struct RawTensor {
    std::string name;
    uint8_t kind = kFp32;
    std::vector<size_t> dims;
    QuantParams params;  // meaningful when kind != 0
    std::vector<uint8_t> payload;

    size_t numel() const {
        size_t n = 1;
        for (size_t d : dims) n *= d;
        return n;
    }
};

void write_tensor(ByteWriter& w, const RawTensor& t) {
    if (t.name.size() > 0xFFFF) throw std::invalid_argument("tensor name too long");
    w.u16(static_cast<uint16_t>(t.name.size()));
    w.text(t.name);
    w.u8(t.kind);
    w.u8(static_cast<uint8_t>(t.dims.size()));
    for (size_t d : t.dims) w.u64(d);
    if (t.kind != kFp32) {
        w.f32(t.params.scale);
        // The log scheme stores its exponent window in the zero-point slot.
        w.i32(t.kind == kLog ? t.params.log_emax : t.params.zero_point);
        w.u8(static_cast<uint8_t>(t.params.bits));
        w.u8(t.params.is_signed ? 1 : 0);
        w.f32(t.params.gamma);
    }
    w.u64(t.payload.size());
    w.raw(t.payload.data(), t.payload.size());
}

RawTensor read_tensor(ByteReader& r) {
    RawTensor t;
    t.name = r.text(r.u16());
    t.kind = r.u8();
    if (t.kind > kLog) {
        throw std::runtime_error(r.path + ": unknown tensor kind " + std::to_string(t.kind) +
                                 " for tensor \"" + t.name + "\"");
    }
    const uint8_t rank = r.u8();
    t.dims.resize(rank);
    for (auto& d : t.dims) d = r.u64();
    if (t.kind != kFp32) {
        t.params.scale = r.f32();
        const int32_t z = r.i32();
        t.params.bits = r.u8();
        t.params.is_signed = r.u8() != 0;
        t.params.gamma = r.f32();
        if (t.kind == kLog) {
            t.params.scheme = Scheme::Log;
            t.params.scale = 1.0f;
            t.params.zero_point = 0;
            t.params.log_emax = z;
        } else {
            t.params.scheme = Scheme::Affine;
            t.params.zero_point = z;
        }
    }
    const uint64_t payload_len = r.u64();
    // Cross-check the declared payload length against dims and bit-width
    // before trusting it.
    uint64_t expect;
    if (t.kind == kFp32) {
        expect = t.numel() * 4;
    } else {
        expect = (t.numel() * static_cast<uint64_t>(t.params.bits) + 7) / 8;
    }
    if (payload_len != expect) {
        throw std::runtime_error(r.path + ": tensor \"" + t.name + "\" payload length " +
                                 std::to_string(payload_len) + " does not match shape " +
                                 shape_to_string(t.dims) + " (expected " + std::to_string(expect) +
                                 ")");
    }
    t.payload = r.blob(payload_len);
    return t;
}

std::vector<uint8_t> fp32_payload(const Tensor& t) {
    std::vector<uint8_t> out(t.numel() * 4);
    std::memcpy(out.data(), t.data().data(), out.size());
    return out;
}

Tensor tensor_from_fp32(const RawTensor& raw) {
    std::vector<float> data(raw.numel());
    std::memcpy(data.data(), raw.payload.data(), raw.payload.size());
    return Tensor::from_data(raw.dims, std::move(data));
}

constexpr const char* kModelMagic = "QTM1";
constexpr const char* kCalMagic = "QCAL";
constexpr const char* kMetaName = "model.meta";

} // namespace

uint32_t crc32_of_file(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    return crc32_ieee(bytes.data(), bytes.size());
}

uint64_t file_size_bytes(const std::string& path) {
    std::error_code ec;
    const uint64_t size = std::filesystem::file_size(path, ec);
    if (ec) throw std::runtime_error("cannot stat " + path + ": " + ec.message());
    return size;
}

std::vector<uint8_t> serialize_model(const ModelGraph& model) {
    model.validate();
    ByteWriter w;
    w.text(kModelMagic);
    w.u32(1);  // version
    w.u32(0);  // flags
    const size_t L = model.layers.size();
    w.u32(static_cast<uint32_t>(2 * L + 1));  // weights + biases + metadata

    for (size_t li = 0; li < L; ++li) {
        const Layer& layer = model.layers[li];
        RawTensor wt;
        wt.name = "layers." + std::to_string(li) + ".weight";
        wt.dims = layer.weights.shape();
        if (layer.quantized) {
            const QuantizedTensor& qt = *layer.quantized;
            wt.kind = qt.params.scheme == Scheme::Log ? kLog : kAffine;
            wt.params = qt.params;
            wt.payload = qt.payload;
            if (qt.shape != layer.weights.shape()) {
                throw std::invalid_argument("layer " + std::to_string(li) +
                                            " quantized shape differs from weights");
            }
        } else {
            wt.kind = kFp32;
            wt.payload = fp32_payload(layer.weights);
        }
        write_tensor(w, wt);

        RawTensor bt;
        bt.name = "layers." + std::to_string(li) + ".bias";
        bt.dims = layer.bias.shape();
        bt.kind = kFp32;
        bt.payload = fp32_payload(layer.bias);
        write_tensor(w, bt);
    }

    // Per-layer activation code and dropout rate ride along as a reserved
    // FP32 tensor so the container needs no format extension.
    Tensor meta = Tensor::zeros({L, 2});
    for (size_t li = 0; li < L; ++li) {
        meta.at2(li, 0) = static_cast<float>(static_cast<uint8_t>(model.layers[li].activation));
        meta.at2(li, 1) = model.layers[li].dropout_rate;
    }
    RawTensor mt;
    mt.name = kMetaName;
    mt.dims = meta.shape();
    mt.kind = kFp32;
    mt.payload = fp32_payload(meta);
    write_tensor(w, mt);

    w.u32(crc32_ieee(w.bytes.data(), w.bytes.size()));
    return std::move(w.bytes);
}

void save_model(const ModelGraph& model, const std::string& path) {
    write_file_atomic(path, serialize_model(model));
}

ModelGraph load_model(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() < 16 + 4) {
        throw std::runtime_error(path + " is too short to be a model container (" +
                                 std::to_string(bytes.size()) + " bytes)");
    }
    // Integrity first: every later parse step may assume intact bytes.
    uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i) {
        stored_crc |= static_cast<uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
    }
    const uint32_t computed = crc32_ieee(bytes.data(), bytes.size() - 4);
    if (stored_crc != computed) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "stored 0x%08X, computed 0x%08X", stored_crc, computed);
        throw std::runtime_error(path + ": CRC mismatch (" + buf + ")");
    }

    ByteReader r{bytes, 0, path};
    if (r.text(4) != kModelMagic) {
        throw std::runtime_error(path + " is not a model container (bad magic)");
    }
    const uint32_t version = r.u32();
    if (version != 1) {
        throw std::runtime_error(path + ": unsupported container version " +
                                 std::to_string(version));
    }
    r.u32();  // flags, unused
    const uint32_t tensor_count = r.u32();

    std::vector<RawTensor> tensors;
    tensors.reserve(tensor_count);
    for (uint32_t i = 0; i < tensor_count; ++i) tensors.push_back(read_tensor(r));
    if (r.pos != bytes.size() - 4) {
        throw std::runtime_error(path + ": trailing bytes after tensor " +
                                 std::to_string(tensor_count) + " at offset " +
                                 std::to_string(r.pos));
    }

    auto find = [&](const std::string& name) -> const RawTensor& {
        for (const RawTensor& t : tensors) {
            if (t.name == name) return t;
        }
        throw std::runtime_error(path + ": container is missing tensor \"" + name + "\"");
    };

    const RawTensor& meta_raw = find(kMetaName);
    if (meta_raw.kind != kFp32 || meta_raw.dims.size() != 2 || meta_raw.dims[1] != 2) {
        throw std::runtime_error(path + ": malformed model.meta tensor");
    }
    const Tensor meta = tensor_from_fp32(meta_raw);
    const size_t L = meta.dim(0);

    ModelGraph model;
    model.layers.resize(L);
    for (size_t li = 0; li < L; ++li) {
        Layer& layer = model.layers[li];
        const float act_code = meta.at2(li, 0);
        if (act_code != 0.0f && act_code != 1.0f) {
            throw std::runtime_error(path + ": layer " + std::to_string(li) +
                                     " has unknown activation code");
        }
        layer.activation = act_code == 1.0f ? Activation::ReLU : Activation::None;
        layer.dropout_rate = meta.at2(li, 1);

        const RawTensor& wt = find("layers." + std::to_string(li) + ".weight");
        if (wt.dims.size() != 2) {
            throw std::runtime_error(path + ": weight tensor \"" + wt.name + "\" is not rank 2");
        }
        if (wt.kind == kFp32) {
            layer.weights = tensor_from_fp32(wt);
        } else {
            QuantizedTensor qt;
            qt.params = wt.params;
            qt.shape = wt.dims;
            qt.payload = wt.payload;
            validate_params(qt.params);
            layer.weights = dequantize(qt);
            layer.quantized = std::move(qt);
        }

        const RawTensor& bt = find("layers." + std::to_string(li) + ".bias");
        if (bt.kind != kFp32) {
            throw std::runtime_error(path + ": bias tensor \"" + bt.name + "\" must be FP32");
        }
        layer.bias = tensor_from_fp32(bt);
    }
    model.validate();
    return model;
}

void save_calibration(const CalibrationSet& set, const std::string& path) {
    set.validate();
    const std::vector<size_t>& dims = set.samples[0].shape();
    ByteWriter w;
    w.text(kCalMagic);
    w.u32(1);
    w.u32(static_cast<uint32_t>(set.samples.size()));
    w.u32(static_cast<uint32_t>(dims.size()));
    for (size_t d : dims) w.u64(d);
    for (const Tensor& t : set.samples) {
        const auto payload = fp32_payload(t);
        w.raw(payload.data(), payload.size());
    }
    write_file_atomic(path, w.bytes);
}

CalibrationSet load_calibration(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    ByteReader r{bytes, 0, path};
    if (r.text(4) != kCalMagic) {
        throw std::runtime_error(path + " is not a calibration file (bad magic)");
    }
    const uint32_t version = r.u32();
    if (version != 1) {
        throw std::runtime_error(path + ": unsupported calibration version " +
                                 std::to_string(version));
    }
    const uint32_t sample_count = r.u32();
    if (sample_count == 0) throw std::runtime_error(path + ": empty calibration set");
    const uint32_t rank = r.u32();
    std::vector<size_t> dims(rank);
    size_t numel = 1;
    for (auto& d : dims) {
        d = r.u64();
        numel *= d;
    }
    const size_t expected = r.pos + static_cast<size_t>(sample_count) * numel * 4;
    if (bytes.size() != expected) {
        throw std::runtime_error(path + ": header declares " + std::to_string(sample_count) +
                                 " samples of shape " + shape_to_string(dims) + " (" +
                                 std::to_string(expected) + " bytes) but file has " +
                                 std::to_string(bytes.size()));
    }
    CalibrationSet set;
    set.samples.reserve(sample_count);
    for (uint32_t i = 0; i < sample_count; ++i) {
        std::vector<float> data(numel);
        const auto blob = r.blob(numel * 4);
        std::memcpy(data.data(), blob.data(), blob.size());
        set.samples.push_back(Tensor::from_data(dims, std::move(data)));
    }
    return set;
}

namespace {

void save_qcal_matrix(const Tensor& rows, const std::string& path) {
    CalibrationSet set;
    set.samples.reserve(rows.dim(0));
    const size_t cols = rows.dim(1);
    for (size_t i = 0; i < rows.dim(0); ++i) {
        std::vector<float> row(cols);
        for (size_t j = 0; j < cols; ++j) row[j] = rows.at2(i, j);
        set.samples.push_back(Tensor::from_data({cols}, std::move(row)));
    }
    save_calibration(set, path);
}

Tensor load_qcal_matrix(const std::string& path) {
    const CalibrationSet set = load_calibration(path);
    if (set.samples[0].rank() != 1) {
        throw std::runtime_error(path + ": expected rank-1 samples, got " +
                                 shape_to_string(set.samples[0].shape()));
    }
    return set.stacked();
}

} // namespace

void save_labeled_set(const LabeledSet& set, const std::string& path) {
    if (set.inputs.rank() != 2 || set.targets.rank() != 2 ||
        set.inputs.dim(0) != set.targets.dim(0)) {
        throw std::invalid_argument("labeled set must hold matching [N x D] inputs and targets");
    }
    save_qcal_matrix(set.inputs, path);
    save_qcal_matrix(set.targets, path + ".targets");
}

LabeledSet load_labeled_set(const std::string& path, bool classification) {
    LabeledSet set;
    set.inputs = load_qcal_matrix(path);
    set.targets = load_qcal_matrix(path + ".targets");
    if (set.inputs.dim(0) != set.targets.dim(0)) {
        throw std::runtime_error(path + ": inputs hold " + std::to_string(set.inputs.dim(0)) +
                                 " samples but targets hold " +
                                 std::to_string(set.targets.dim(0)));
    }
    set.classification = classification;
    return set;
}

} // namespace quantlab
