#pragma once

// Model bundle: extractor + model tree + classifier head + parameters, stored
// in the "HMIL1" binary container so inference needs only raw JSON.
//
// Layout (all integers little-endian):
//   "HMIL1"                    5-byte magic, also the version
//   u64 payload length
//   payload:
//     u64 header length, header (UTF-8 JSON: extractor, model tree, classes,
//                                parameter names and shapes)
//     parameter tensors in header order, column-major little-endian f32
//   u64 FNV-1a checksum of the payload

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hmil/extractor.hpp"
#include "hmil/model.hpp"

namespace hmil {

struct Bundle {
  Extractor extractor;
  Classifier classifier;
  std::vector<std::string> classes;
  ModelConfig model_config;
};

std::vector<std::uint8_t> save_bundle(const Bundle& bundle);
/// Throws VersionMismatch for other HMIL versions, CorruptContainer otherwise.
Bundle load_bundle(std::span<const std::uint8_t> bytes);

void save_bundle_file(const Bundle& bundle, const std::string& path);
Bundle load_bundle_file(const std::string& path);

/// Model tree serialization used inside bundle headers.
Json model_to_json(const ModelNode& model);
ModelNode model_from_json(const Json& json);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace hmil
