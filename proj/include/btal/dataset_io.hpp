#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "btal/common.hpp"

namespace btal {

struct EmbeddingRecord {
  std::uint32_t prompt_id = 0;
  std::uint32_t response_id = 0;
  Vector embedding;
  std::optional<double> golden;
  std::optional<std::string> text;
};

/// Either all records carry a golden score or none do; same for text.
struct EmbeddingDataset {
  std::uint32_t dim = 0;
  std::vector<EmbeddingRecord> records;

  bool has_golden() const;
  bool has_text() const;
  /// Throws kRecordDimMismatch (with the record index), kInvalidArgument for
  /// non-finite values or mixed optional fields.
  void validate() const;
};

// Binary layout, all little-endian:
//   header (32 bytes): magic "BTALEMBD", u32 version = 1, u32 dim, u64 count,
//                      u32 flags (bit 0 golden, bit 1 text), u32 reserved = 0
//   count records:     u32 prompt_id, u32 response_id, dim x f32 embedding,
//                      [f64 golden], [u64 text offset into the string table]
//   string table:      present only with the text flag: u64 byte length, then
//                      entries of u32 length + UTF-8 bytes
inline constexpr char kDatasetMagic[8] = {'B', 'T', 'A', 'L', 'E', 'M', 'B', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 32;

std::vector<std::uint8_t> encode_embedding_dataset(const EmbeddingDataset& ds);
/// Errors: kCorruptHeader, kTruncatedRecords (names the byte offset), and
/// kInvalidArgument for non-finite embeddings.
EmbeddingDataset decode_embedding_dataset(std::span<const std::uint8_t> bytes);

void save_embedding_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path);

/// One JSON object per line: {"prompt_id", "response_id", "embedding": [...],
/// optional "golden", optional "text"}. Blank lines are skipped.
EmbeddingDataset parse_jsonl_dataset(std::string_view text);
std::string format_jsonl_dataset(const EmbeddingDataset& ds);
void save_jsonl_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path);

/// Binary when the file starts with the magic, JSONL when the extension is
/// .jsonl; anything else is a corrupt header.
EmbeddingDataset load_embedding_dataset(const std::filesystem::path& path);

}  // namespace btal
