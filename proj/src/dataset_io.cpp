#include "btal/dataset_io.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "btal/binary_io.hpp"
#include "btal/fs_util.hpp"

namespace btal {

namespace {

constexpr std::uint32_t kFlagGolden = 1u;
constexpr std::uint32_t kFlagText = 2u;

std::string at_offset(std::size_t offset) { return " at byte offset " + std::to_string(offset); }

}  // namespace

bool EmbeddingDataset::has_golden() const { return !records.empty() && records.front().golden.has_value(); }
bool EmbeddingDataset::has_text() const { return !records.empty() && records.front().text.has_value(); }

void EmbeddingDataset::validate() const {
  if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "dataset dim must be positive");
  const bool golden = has_golden();
  const bool text = has_text();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (static_cast<std::size_t>(r.embedding.size()) != dim) {
      throw Error(ErrorCode::kRecordDimMismatch, "record " + std::to_string(i) + " has dim " +
                                                     std::to_string(r.embedding.size()) + ", expected " +
                                                     std::to_string(dim));
    }
    if (!r.embedding.allFinite()) {
      throw Error(ErrorCode::kInvalidArgument, "record " + std::to_string(i) + " has a non-finite embedding");
    }
    if (r.golden.has_value() != golden || r.text.has_value() != text) {
      throw Error(ErrorCode::kInvalidArgument,
                  "record " + std::to_string(i) + ": golden/text must be present on all records or none");
    }
    if (golden && !std::isfinite(*r.golden)) {
      throw Error(ErrorCode::kInvalidArgument, "record " + std::to_string(i) + " has a non-finite golden score");
    }
  }
}

std::vector<std::uint8_t> encode_embedding_dataset(const EmbeddingDataset& ds) {
  ds.validate();
  const bool golden = ds.has_golden();
  const bool text = ds.has_text();
  std::vector<std::uint8_t> out;
  binary::put_bytes(out, std::string_view(kDatasetMagic, 8));
  binary::put_u32(out, kDatasetVersion);
  binary::put_u32(out, ds.dim);
  binary::put_u64(out, ds.records.size());
  binary::put_u32(out, (golden ? kFlagGolden : 0u) | (text ? kFlagText : 0u));
  binary::put_u32(out, 0);

  std::vector<std::uint8_t> table;
  for (const auto& r : ds.records) {
    binary::put_u32(out, r.prompt_id);
    binary::put_u32(out, r.response_id);
    for (Eigen::Index i = 0; i < r.embedding.size(); ++i) binary::put_f32(out, static_cast<float>(r.embedding(i)));
    if (golden) binary::put_f64(out, *r.golden);
    if (text) {
      binary::put_u64(out, table.size());
      if (r.text->size() > std::numeric_limits<std::uint32_t>::max()) {
        throw Error(ErrorCode::kInvalidArgument, "text entry too long");
      }
      binary::put_u32(table, static_cast<std::uint32_t>(r.text->size()));
      binary::put_bytes(table, *r.text);
    }
  }
  if (text) {
    binary::put_u64(out, table.size());
    out.insert(out.end(), table.begin(), table.end());
  }
  return out;
}

EmbeddingDataset decode_embedding_dataset(std::span<const std::uint8_t> bytes) {
  const std::size_t size = bytes.size();
  if (size < kDatasetHeaderBytes) {
    throw Error(ErrorCode::kCorruptHeader,
                "file is " + std::to_string(size) + " bytes; the header alone needs 32");
  }
  const std::uint8_t* p = bytes.data();
  if (std::memcmp(p, kDatasetMagic, 8) != 0) throw Error(ErrorCode::kCorruptHeader, "bad magic");
  const std::uint32_t version = binary::get_u32(p + 8);
  if (version != kDatasetVersion) {
    throw Error(ErrorCode::kCorruptHeader, "unsupported format version " + std::to_string(version));
  }
  const std::uint32_t dim = binary::get_u32(p + 12);
  const std::uint64_t count = binary::get_u64(p + 16);
  const std::uint32_t flags = binary::get_u32(p + 24);
  if (dim == 0) throw Error(ErrorCode::kCorruptHeader, "dim is zero");
  if ((flags & ~(kFlagGolden | kFlagText)) != 0) {
    throw Error(ErrorCode::kCorruptHeader, "unknown flag bits " + std::to_string(flags));
  }
  if (binary::get_u32(p + 28) != 0) throw Error(ErrorCode::kCorruptHeader, "reserved header field is nonzero");
  const bool golden = flags & kFlagGolden;
  const bool text = flags & kFlagText;

  const std::uint64_t record_bytes = 8ull + 4ull * dim + (golden ? 8u : 0u) + (text ? 8u : 0u);
  if (count > (std::numeric_limits<std::uint64_t>::max() - kDatasetHeaderBytes) / record_bytes) {
    throw Error(ErrorCode::kCorruptHeader, "record count " + std::to_string(count) + " overflows");
  }
  const std::uint64_t records_end = kDatasetHeaderBytes + count * record_bytes;
  if (records_end > size) {
    const std::uint64_t first_bad = (size - kDatasetHeaderBytes) / record_bytes;
    const std::uint64_t offset = kDatasetHeaderBytes + first_bad * record_bytes;
    throw Error(ErrorCode::kTruncatedRecords, "record " + std::to_string(first_bad) + " of " +
                                                  std::to_string(count) + " is incomplete" + at_offset(offset) +
                                                  " (file has " + std::to_string(size) + " bytes)");
  }

  std::uint64_t table_start = records_end;
  std::uint64_t table_bytes = 0;
  if (text) {
    if (records_end + 8 > size) {
      throw Error(ErrorCode::kTruncatedRecords, "string table length missing" + at_offset(records_end));
    }
    table_bytes = binary::get_u64(p + records_end);
    table_start = records_end + 8;
    if (table_bytes > size - table_start) {
      throw Error(ErrorCode::kTruncatedRecords, "string table runs past the end of the file" + at_offset(size));
    }
  }
  const std::uint64_t end = table_start + table_bytes;
  if (end != size) {
    throw Error(ErrorCode::kCorruptHeader,
                std::to_string(size - end) + " trailing bytes after" + at_offset(end) + "; count does not match");
  }

  EmbeddingDataset ds;
  ds.dim = dim;
  ds.records.reserve(static_cast<std::size_t>(count));
  std::uint64_t off = kDatasetHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    r.prompt_id = binary::get_u32(p + off);
    r.response_id = binary::get_u32(p + off + 4);
    r.embedding.resize(dim);
    for (std::uint32_t k = 0; k < dim; ++k) r.embedding(k) = binary::get_f32(p + off + 8 + 4ull * k);
    if (!r.embedding.allFinite()) {
      throw Error(ErrorCode::kInvalidArgument, "record " + std::to_string(i) + " has a non-finite embedding" +
                                                   at_offset(off));
    }
    std::uint64_t q = off + 8 + 4ull * dim;
    if (golden) {
      r.golden = binary::get_f64(p + q);
      q += 8;
    }
    if (text) {
      const std::uint64_t t = binary::get_u64(p + q);
      if (t > table_bytes || table_bytes - t < 4) {
        throw Error(ErrorCode::kCorruptHeader, "record " + std::to_string(i) + " text offset out of range");
      }
      const std::uint32_t len = binary::get_u32(p + table_start + t);
      if (len > table_bytes - t - 4) {
        throw Error(ErrorCode::kCorruptHeader, "record " + std::to_string(i) + " text runs past the table");
      }
      r.text = std::string(reinterpret_cast<const char*>(p + table_start + t + 4), len);
    }
    ds.records.push_back(std::move(r));
    off += record_bytes;
  }
  return ds;
}

void save_embedding_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, encode_embedding_dataset(ds));
}

EmbeddingDataset parse_jsonl_dataset(std::string_view text) {
  EmbeddingDataset ds;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kCorruptHeader, where + ": " + e.what());
    }
    try {
      EmbeddingRecord r;
      r.prompt_id = j.at("prompt_id").get<std::uint32_t>();
      r.response_id = j.at("response_id").get<std::uint32_t>();
      const auto emb = j.at("embedding").get<std::vector<double>>();
      r.embedding = Eigen::Map<const Vector>(emb.data(), static_cast<Eigen::Index>(emb.size()));
      if (j.contains("golden")) r.golden = j.at("golden").get<double>();
      if (j.contains("text")) r.text = j.at("text").get<std::string>();
      if (ds.records.empty()) ds.dim = static_cast<std::uint32_t>(emb.size());
      if (emb.size() != ds.dim) {
        throw Error(ErrorCode::kRecordDimMismatch, where + " (record " + std::to_string(ds.records.size()) +
                                                       ") has dim " + std::to_string(emb.size()) + ", expected " +
                                                       std::to_string(ds.dim));
      }
      ds.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kCorruptHeader, where + ": " + e.what());
    }
  }
  if (ds.records.empty()) throw Error(ErrorCode::kEmptyDataset, "no records");
  ds.validate();
  return ds;
}

std::string format_jsonl_dataset(const EmbeddingDataset& ds) {
  ds.validate();
  std::string out;
  for (const auto& r : ds.records) {
    nlohmann::json j;
    j["prompt_id"] = r.prompt_id;
    j["response_id"] = r.response_id;
    j["embedding"] = std::vector<double>(r.embedding.data(), r.embedding.data() + r.embedding.size());
    if (r.golden) j["golden"] = *r.golden;
    if (r.text) j["text"] = *r.text;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, format_jsonl_dataset(ds));
}

EmbeddingDataset load_embedding_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kDatasetMagic, 8) == 0) return decode_embedding_dataset(bytes);
  if (path.extension() == ".jsonl") {
    return parse_jsonl_dataset(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }
  return decode_embedding_dataset(bytes);
}

}  // namespace btal
