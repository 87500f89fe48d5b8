#pragma once

// On-disk formats. All multi-byte fields are little-endian regardless of
// the host.
//
// Tensor file:
//   "LASF" | u16 version (1) | u8 dtype (0 = float32) | u8 rank (4)
//   | rank x u32 extents | row-major float32 payload
//
// Weight archive:
//   "LASW" | u16 version (1) | u32 entry count
//   | entries: u32 name length | UTF-8 name | tensor file body
// Names are unique; entries are kept in file order.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmfuse/config.hpp"
#include "mmfuse/cost_model.hpp"
#include "mmfuse/params.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 0;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
// Parses one tensor starting at `offset`, advancing it past the payload.
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& offset);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

using WeightArchive = std::vector<NamedTensor>;

std::vector<std::uint8_t> encode_archive(const WeightArchive& archive);
WeightArchive decode_archive(const std::vector<std::uint8_t>& bytes);

void write_archive(const std::filesystem::path& path, const WeightArchive& archive);
WeightArchive read_archive(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Archive entries carry no kind flag on disk; running statistics are
// recognised by name.
WeightArchive archive_from_entries(std::vector<NamedTensor> entries);

template <typename G>
  requires ParamGroup<G>
WeightArchive to_archive(const G& params) {
  return flatten_params(params);
}

// Throws FormatError describing the first difference from the manifest.
void validate_manifest(const WeightArchive& archive, const std::vector<TensorSpec>& manifest);

WeightArchive init_weights(const ModuleConfig& config, ModuleKind which, std::uint64_t seed);

// Recovers the structural hyperparameters stored implicitly in an archive's
// shapes (channels, CAM taps, LCAM ratio) into `config`.
ModuleConfig infer_config(const WeightArchive& archive, ModuleKind which, ModuleConfig config);

AsffParams asff_params_from_archive(const WeightArchive& archive, const ModuleConfig& config);
FatmParams fatm_params_from_archive(const WeightArchive& archive, const ModuleConfig& config);

// Line-oriented table: one row per layer, then a totals row.
std::string format_cost_table(const CostReport& report);
// Structured key-value document (JSON).
std::string format_cost_json(const CostReport& report);

}  // namespace mmfuse
