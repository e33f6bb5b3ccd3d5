#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cvr/descriptions.hpp"
#include "cvr/encoder.hpp"

namespace cvr {

/// Database-kind tag byte carried by every embedding store file.
enum class StoreKind : std::uint8_t { Visual = 0, Multimodal = 1, Text = 2 };

struct StoreRecord {
    std::uint64_t id = 0;
    std::vector<float> values;
};

/// In-memory image of one "CVRE" file: header fields plus records in file
/// order. Values stay float32 so a read-write cycle is bit-exact.
struct EmbeddingStoreFile {
    std::uint32_t version = 1;
    std::uint32_t dim = 0;
    StoreKind kind = StoreKind::Visual;
    std::vector<StoreRecord> records;
};

EmbeddingStoreFile read_store(const std::string& path);
void write_store(const std::string& path, const EmbeddingStoreFile& store);

/// Consecutive records with the same id become that id's context rows.
/// A non-consecutive repeat throws DuplicateId.
VisualProvider provider_from_store(const EmbeddingStoreFile& store);
EmbeddingStoreFile store_from_provider(const VisualProvider& provider, StoreKind kind);

/// One embedding per id (used for persisted target databases).
std::map<std::uint64_t, Embedding> table_from_store(const EmbeddingStoreFile& store);
EmbeddingStoreFile store_from_table(const std::map<std::uint64_t, Embedding>& table,
                                    StoreKind kind);

// --- JSON-lines artifacts ---

struct TripletRecord {
    std::uint64_t query_id = 0;
    std::string description;
    std::string change_text;
    std::uint64_t target_id = 0;
    std::vector<std::uint64_t> subset; // optional candidate set
};

std::vector<TripletRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<TripletRecord>& triplets);

/// Reads {"id": ..., "text": ...} records. Records carrying a non-"kept"
/// status (filter output) are skipped. Duplicate ids are an error.
std::map<std::uint64_t, std::string> read_descriptions_file(const std::string& path);
void write_descriptions_file(const std::string& path,
                             const std::map<std::uint64_t, std::string>& descriptions);

/// Filter output: every record with its status, then one summary line with
/// the threshold and the per-status counts.
void write_filtered_descriptions(const std::string& path,
                                 const std::vector<DescriptionRecord>& records,
                                 double threshold);

std::vector<CalibrationPair> read_captions_file(const std::string& path);

bool is_valid_utf8(std::string_view s);

} // namespace cvr
