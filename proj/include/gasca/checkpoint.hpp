#pragma once

// GASC checkpoint files: named float64 tensors with a trailing CRC32.
//
//   "GASC" | u32 version | u32 count |
//   count x ( u16 name_len | name | u8 rank | rank x u32 dim | f64 data... ) |
//   u32 crc32 of everything before it
//
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gasca/classifier.hpp"
#include "gasca/stacking.hpp"

namespace gasca {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CorruptCheckpointError : ParseError {
  using ParseError::ParseError;
};

struct NamedTensor {
  std::string name;
  Tensor value;
  bool operator==(const NamedTensor&) const = default;
};

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
/// CorruptCheckpointError on a CRC mismatch, ParseError on malformed layout.
std::vector<NamedTensor> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// What a checkpoint holds, from its "meta.kind" entry.
enum class CheckpointKind { Pretrain = 1, Classifier = 2 };
CheckpointKind checkpoint_kind(const std::vector<NamedTensor>& tensors);

/// Generator and discriminator stacks plus the completed stage count.
std::vector<NamedTensor> export_state(const GanglwState& state);
GanglwState import_state(const std::vector<NamedTensor>& tensors);

std::vector<NamedTensor> export_classifier(const EmotionClassifier& clf);
EmotionClassifier import_classifier(const std::vector<NamedTensor>& tensors);

}  // namespace gasca
