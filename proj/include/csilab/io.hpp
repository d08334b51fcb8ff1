// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csilab/channel.hpp"
#include "csilab/model.hpp"

namespace csilab {

inline constexpr char kDatasetMagic[9] = "CSIDS001";
inline constexpr char kCheckpointMagic[9] = "MDAE0001";

/// One split of one dataset, as stored on disk.
struct DatasetFile {
  std::string name;
  std::string preset;
  Split split = Split::Train;
  std::uint64_t seed = 0;
  GridSpec grid;
  ArrayGeometry geometry;
  std::vector<CsiSample> samples;
};

/// Writes via a temporary file and an atomic rename. Values are stored as
/// complex64; all samples must share grid and geometry.
void write_dataset(const DatasetFile& file, const std::filesystem::path& path);
/// Throws FormatError (bad magic, bad header) or CorruptionError
/// (truncation, CRC mismatch).
DatasetFile read_dataset(const std::filesystem::path& path);
/// Bytes of the header for a given name/preset/sample count.
std::size_t dataset_header_bytes(const DatasetFile& file);
std::size_t dataset_payload_bytes(const DatasetFile& file);

/// Writes `<dir>/<name>.<split>.csids` for every split; returns the paths.
std::vector<std::filesystem::path> write_corpus(const std::vector<DatasetHandle>& corpus,
                                                const std::filesystem::path& dir);
/// Reads every `*.csids` in a directory back into handles (sorted by name).
std::vector<DatasetHandle> read_corpus(const std::filesystem::path& dir);

struct CheckpointMeta {
  std::string phase = "init";
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
};

struct ManifestEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t offset = 0;  ///< byte offset into the payload
};

/// Parameters are written as float32 in sorted name order. Values must be
/// float-representable for the round trip to be exact (the training code
/// keeps them so).
void save_checkpoint(const MdaeModel& model, const CheckpointMeta& meta,
                     const std::filesystem::path& path);

struct CheckpointContents {
  ModelConfig config;
  CheckpointMeta meta;
  std::vector<ManifestEntry> manifest;
  std::vector<float> payload;
};

CheckpointContents read_checkpoint(const std::filesystem::path& path);
/// Builds a model from the embedded config and fills its parameters.
MdaeModel load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
/// Fills an existing model; any shape mismatch or missing/extra parameter
/// throws FormatError naming the parameter.
void load_checkpoint_into(const std::filesystem::path& path, MdaeModel& model,
                          CheckpointMeta* meta = nullptr);

/// Writes text through a temporary file and an atomic rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
std::uint32_t crc32_of(const void* data, std::size_t bytes);

}  // namespace csilab
