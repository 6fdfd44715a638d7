#pragma once

// Versioned keyed embedding store with a memory tier (cuckoo index) and a
// disk tier (sorted segment files). Writes are staged and become visible
// atomically at flush; each flush publishes table_version + 1. Readers take
// a shared lock and never see a partially applied flush.
//
// Snapshot file (little-endian):
//   char[8] "MOONEMB1", u32 format version, u32 dim, u8 dtype (0=f32, 1=i8),
//   u64 count, count x [u64 key][u64 record_version][f32 scale if i8][payload],
//   u64 table_version
// Delta file:
//   char[8] "MOONDLT1", u64 base_version, then until end of file
//   [u8 opcode 0=upsert/1=delete][u64 key][u64 record_version][payload if upsert]
// A delta payload has the same layout as a snapshot payload (scale included
// for i8).

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "mmrep/cuckoo_index.hpp"
#include "mmrep/numerics.hpp"

namespace mmrep {

enum class DType : std::uint8_t { kF32 = 0, kI8 = 1 };

std::string_view to_string(DType d);
DType parse_dtype(std::string_view text);

// One stored value. f32 mode fills `values`; i8 mode fills scale and codes.
struct StoredRecord {
  std::uint64_t record_version = 0;
  float scale = 1.0f;
  std::vector<float> values;
  std::vector<std::int8_t> codes;

  bool operator==(const StoredRecord&) const = default;
};

enum class DeltaOp : std::uint8_t { kUpsert = 0, kDelete = 1 };

struct DeltaEntry {
  DeltaOp op = DeltaOp::kUpsert;
  std::uint64_t key = 0;
  StoredRecord record;  // record_version always set; payload only for upserts
};

struct DeltaLog {
  std::uint64_t base_version = 0;
  std::vector<DeltaEntry> entries;
};

struct TableOptions {
  std::uint32_t dim = 0;
  DType dtype = DType::kF32;
  // Directory for disk-tier segments; empty uses a private temp directory.
  std::filesystem::path disk_dir;
  std::size_t initial_buckets = 1024;
  std::uint64_t seed = 0;
};

enum class Tier { kAbsent, kMemory, kDisk };

class VersionedTable {
 public:
  explicit VersionedTable(TableOptions options);
  ~VersionedTable();
  VersionedTable(const VersionedTable&) = delete;
  VersionedTable& operator=(const VersionedTable&) = delete;

  std::uint32_t dim() const noexcept { return options_.dim; }
  DType dtype() const noexcept { return options_.dtype; }
  std::uint64_t table_version() const;
  std::uint64_t last_record_version() const;

  // Stages a write; quantized immediately in i8 mode. Returns its record version.
  std::uint64_t upsert(std::uint64_t key, std::span<const double> embedding);
  std::uint64_t upsert(std::uint64_t key, const Embedding& e) { return upsert(key, std::span<const double>(e.values)); }
  std::uint64_t remove(std::uint64_t key);
  std::size_t staged() const;

  // Publishes all staged writes as table_version + 1. When `delta` is given
  // it receives the applied operations with base_version = previous version.
  std::uint64_t flush(DeltaLog* delta = nullptr);

  // Requires delta.base_version == table_version, else kStaleDelta.
  void apply_delta(const DeltaLog& delta);

  std::optional<Embedding> get(std::uint64_t key) const;
  std::optional<StoredRecord> get_record(std::uint64_t key) const;
  Tier tier_of(std::uint64_t key) const;

  std::size_t size() const;
  std::size_t memory_size() const;
  std::size_t disk_size() const;

  // Demotes memory keys whose frequency is below min_frequency. Keys unknown
  // to the frequency source count as 0.
  std::size_t prune_long_tail(std::uint64_t min_frequency,
                              const std::function<std::uint64_t(std::uint64_t)>& frequency);

  // All published entries sorted by key.
  std::vector<std::pair<std::uint64_t, StoredRecord>> scan() const;
  // FNV-1a over version, dim, dtype and the sorted entries.
  std::uint64_t state_hash() const;

  std::uint64_t memory_hits() const noexcept { return memory_hits_.load(); }
  std::uint64_t disk_hits() const noexcept { return disk_hits_.load(); }
  void reset_hit_counters() const;
  std::size_t max_probes() const;

  // Replaces the contents wholesale; used by snapshot loading.
  void restore(std::vector<std::pair<std::uint64_t, StoredRecord>> entries, std::uint64_t table_version);

 private:
  struct DiskLocation {
    std::size_t segment = 0;
    std::uint64_t offset = 0;
  };

  StoredRecord encode(std::span<const double> embedding, std::uint64_t record_version) const;
  void apply_locked(const DeltaEntry& entry);
  void erase_locked(std::uint64_t key);
  std::optional<StoredRecord> read_disk(const DiskLocation& loc) const;

  TableOptions options_;
  bool owns_dir_ = false;

  mutable std::shared_mutex state_mutex_;
  CuckooIndex<StoredRecord> memory_;
  std::map<std::uint64_t, DiskLocation> disk_index_;
  std::vector<std::filesystem::path> segments_;
  std::uint64_t table_version_ = 0;

  mutable std::mutex stage_mutex_;
  std::vector<DeltaEntry> staged_;
  std::uint64_t record_counter_ = 0;

  mutable std::atomic<std::uint64_t> memory_hits_{0};
  mutable std::atomic<std::uint64_t> disk_hits_{0};
};

Embedding to_embedding(const StoredRecord& record, DType dtype);

void save_snapshot(const VersionedTable& table, const std::string& path);
std::unique_ptr<VersionedTable> load_snapshot(const std::string& path, TableOptions options = {});

void save_delta(const DeltaLog& delta, std::uint32_t dim, DType dtype, const std::string& path);
DeltaLog load_delta(const std::string& path, std::uint32_t dim, DType dtype);

// Pure key -> shard routing over independent tables.
std::size_t shard_of(std::uint64_t key, std::size_t shards);

class ShardedTable {
 public:
  ShardedTable(std::size_t shards, const TableOptions& options);

  std::size_t shard_count() const noexcept { return shards_.size(); }
  VersionedTable& shard(std::size_t i) { return *shards_.at(i); }
  VersionedTable& route(std::uint64_t key) { return *shards_[shard_of(key, shards_.size())]; }

  std::uint64_t upsert(std::uint64_t key, std::span<const double> embedding) { return route(key).upsert(key, embedding); }
  std::optional<Embedding> get(std::uint64_t key) const;
  void flush();
  std::size_t size() const;

 private:
  std::vector<std::unique_ptr<VersionedTable>> shards_;
};

}  // namespace mmrep
