#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jafar/feature_map.hpp"
#include "jafar/model.hpp"
#include "jafar/training.hpp"

namespace jafar {

// All binary formats are little-endian.
//
// Feature file (JFAR):
//   "JFAR" | u32 version=1 | u32 c | u32 h | u32 w | f32[c*h*w] (channel-major, row-major)
//
// Checkpoint (JFCK):
//   "JFCK" | u32 version=1 | u32 param_count
//   per parameter: u16 name_len | name | u8 rank | u32 dims[rank] | f32 data
//   u32 config_len | config text (`key = value` lines, see format_run_config)
//
// Parameters appear in parameter_layout order.

std::vector<uint8_t> encode_feature_file(const FeatureMap& f);
FeatureMap decode_feature_file(std::span<const uint8_t> bytes);
void write_feature_file(const std::string& path, const FeatureMap& f);
FeatureMap read_feature_file(const std::string& path);

struct Checkpoint {
  JafarParams params;
  RunConfig run;
};

std::vector<uint8_t> encode_checkpoint(const JafarParams& params, const RunConfig& run);
Checkpoint decode_checkpoint(std::span<const uint8_t> bytes);
void write_checkpoint(const std::string& path, const JafarParams& params, const RunConfig& run);
Checkpoint read_checkpoint(const std::string& path);

/// Binary PPM (P6, maxval 255); values quantised by round(v * 255) clamped.
std::vector<uint8_t> encode_ppm(const Image& img);
Image decode_ppm(std::span<const uint8_t> bytes);
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

/// Binary PGM (P5, maxval 255) with the same quantisation.
std::vector<uint8_t> encode_pgm(const SaliencyMap& map);
SaliencyMap decode_pgm(std::span<const uint8_t> bytes);
void write_pgm(const std::string& path, const SaliencyMap& map);
SaliencyMap read_pgm(const std::string& path);

std::vector<uint8_t> read_file(const std::string& path);
/// Writes to a sibling temporary file and renames it over `path`, so a
/// failed write never leaves a partial file behind.
void write_file_atomic(const std::string& path, std::span<const uint8_t> bytes);
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace jafar
