#pragma once

#include <cstdint>
#include <string>

#include "quantlab/calibration.hpp"
#include "quantlab/model.hpp"

namespace quantlab {

// IEEE CRC32 (reflected, polynomial 0xEDB88320), the checksum trailing every
// model container. crc32_ieee("123456789") == 0xCBF43926.
uint32_t crc32_ieee(const uint8_t* data, size_t len);

// CRC32 of a whole file, used for provenance hashes in reports.
uint32_t crc32_of_file(const std::string& path);

uint64_t file_size_bytes(const std::string& path);

// Model container (magic "QTM1"). Layout, little-endian throughout:
//   "QTM1" | u32 version=1 | u32 flags | u32 tensor_count
//   per tensor:
//     u16 name_len | name bytes (UTF-8)
//     u8 kind (0=FP32, 1=AffineQuant, 2=LogQuant) | u8 rank | u64 dims[rank]
//     if kind != 0: f32 scale | i32 zero_point | u8 bits | u8 signed | f32 gamma
//     u64 payload_len | payload
//   u32 CRC32 over all preceding bytes
// Log-quantized tensors reuse the zero_point slot for their exponent-window
// top e_max (the log scheme pins scale=1 and has no zero point).
// Writes are atomic: temp file in the same directory, then rename.
void save_model(const ModelGraph& model, const std::string& path);
ModelGraph load_model(const std::string& path);

// The exact bytes save_model would write, for size accounting without IO.
std::vector<uint8_t> serialize_model(const ModelGraph& model);

// Calibration container (magic "QCAL"):
//   "QCAL" | u32 version=1 | u32 sample_count | u32 rank | u64 dims[rank]
//   then sample_count x product(dims) little-endian f32.
void save_calibration(const CalibrationSet& set, const std::string& path);
CalibrationSet load_calibration(const std::string& path);

// Labeled data persists as two QCAL files: `path` holds inputs, and a sidecar
// `path + ".targets"` holds targets in the identical layout. The file pair
// does not record whether targets are class ids; callers choose the loss.
void save_labeled_set(const LabeledSet& set, const std::string& path);
LabeledSet load_labeled_set(const std::string& path, bool classification = false);

} // namespace quantlab
