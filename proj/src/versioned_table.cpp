#include "mmrep/versioned_table.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mmrep/errors.hpp"

namespace mmrep {

std::string_view to_string(DType d) { return d == DType::kF32 ? "f32" : "i8"; }

DType parse_dtype(std::string_view text) {
  if (text == "f32") return DType::kF32;
  if (text == "i8") return DType::kI8;
  fail(ErrorCategory::kContract, "unknown dtype: " + std::string(text));
}

namespace {

constexpr char kSnapshotMagic[8] = {'M', 'O', 'O', 'N', 'E', 'M', 'B', '1'};
constexpr char kDeltaMagic[8] = {'M', 'O', 'O', 'N', 'D', 'L', 'T', '1'};
constexpr std::uint32_t kFormatVersion = 1;

// Little-endian byte buffer writer / reader.
class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
  const std::vector<unsigned char>& data() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}
  bool done() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) fail(ErrorCategory::kIntegrity, what_ + ": truncated");
  }
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

 private:
  const std::vector<unsigned char>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCategory::kIo, "cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_all(const std::string& path, const std::vector<unsigned char>& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCategory::kIo, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!f) fail(ErrorCategory::kIo, "write failed: " + path);
}

void write_payload(Writer& w, const StoredRecord& r, DType dtype) {
  if (dtype == DType::kI8) {
    w.f32(r.scale);
    w.bytes(r.codes.data(), r.codes.size());
  } else {
    for (float v : r.values) w.f32(v);
  }
}

void read_payload(Reader& rd, StoredRecord& r, std::uint32_t dim, DType dtype) {
  if (dtype == DType::kI8) {
    r.scale = rd.f32();
    r.codes.resize(dim);
    rd.bytes(r.codes.data(), dim);
    if (!std::isfinite(r.scale)) fail(ErrorCategory::kIntegrity, "non-finite quantization scale");
  } else {
    r.values.resize(dim);
    for (auto& v : r.values) {
      v = rd.f32();
      if (!std::isfinite(v)) fail(ErrorCategory::kIntegrity, "non-finite stored value");
    }
  }
}

void write_record(Writer& w, std::uint64_t key, const StoredRecord& r, DType dtype) {
  w.u64(key);
  w.u64(r.record_version);
  write_payload(w, r, dtype);
}

std::size_t record_bytes(std::uint32_t dim, DType dtype) {
  return 16 + (dtype == DType::kI8 ? 4 + dim : 4 * static_cast<std::size_t>(dim));
}

std::filesystem::path make_private_dir() {
  static std::atomic<std::uint64_t> counter{0};
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    const auto name = "mmrep-tier-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1));
    const auto dir = base / name;
    if (std::filesystem::create_directory(dir)) return dir;
  }
}

}  // namespace

VersionedTable::VersionedTable(TableOptions options)
    : options_(std::move(options)), memory_(options_.initial_buckets, options_.seed) {
  require(options_.dim >= 1, "table: dim must be positive");
  if (options_.disk_dir.empty()) {
    options_.disk_dir = make_private_dir();
    owns_dir_ = true;
  } else {
    std::error_code ec;
    std::filesystem::create_directories(options_.disk_dir, ec);
    if (ec) fail(ErrorCategory::kIo, "cannot create disk tier directory " + options_.disk_dir.string());
  }
}

VersionedTable::~VersionedTable() {
  std::error_code ec;
  if (owns_dir_) {
    std::filesystem::remove_all(options_.disk_dir, ec);
  } else {
    for (const auto& s : segments_) std::filesystem::remove(s, ec);
  }
}

std::uint64_t VersionedTable::table_version() const {
  std::shared_lock lock(state_mutex_);
  return table_version_;
}

std::uint64_t VersionedTable::last_record_version() const {
  std::lock_guard lock(stage_mutex_);
  return record_counter_;
}

StoredRecord VersionedTable::encode(std::span<const double> embedding, std::uint64_t record_version) const {
  if (embedding.size() != options_.dim) {
    fail(ErrorCategory::kContract, "table: embedding dim " + std::to_string(embedding.size()) + " != table dim " +
                                       std::to_string(options_.dim));
  }
  StoredRecord r;
  r.record_version = record_version;
  if (options_.dtype == DType::kI8) {
    QuantizedEmbedding q = quantize(embedding);
    r.scale = q.scale;
    r.codes = std::move(q.codes);
  } else {
    r.values.resize(embedding.size());
    for (std::size_t i = 0; i < embedding.size(); ++i) {
      require(std::isfinite(embedding[i]), "table: non-finite embedding component");
      r.values[i] = static_cast<float>(embedding[i]);
    }
  }
  return r;
}

std::uint64_t VersionedTable::upsert(std::uint64_t key, std::span<const double> embedding) {
  std::lock_guard lock(stage_mutex_);
  StoredRecord r = encode(embedding, record_counter_ + 1);
  ++record_counter_;
  staged_.push_back(DeltaEntry{DeltaOp::kUpsert, key, std::move(r)});
  return record_counter_;
}

std::uint64_t VersionedTable::remove(std::uint64_t key) {
  std::lock_guard lock(stage_mutex_);
  ++record_counter_;
  DeltaEntry e{DeltaOp::kDelete, key, {}};
  e.record.record_version = record_counter_;
  staged_.push_back(std::move(e));
  return record_counter_;
}

std::size_t VersionedTable::staged() const {
  std::lock_guard lock(stage_mutex_);
  return staged_.size();
}

void VersionedTable::erase_locked(std::uint64_t key) {
  if (!memory_.erase(key)) disk_index_.erase(key);
}

void VersionedTable::apply_locked(const DeltaEntry& entry) {
  erase_locked(entry.key);
  if (entry.op == DeltaOp::kUpsert) memory_.insert(entry.key, entry.record);
}

std::uint64_t VersionedTable::flush(DeltaLog* delta) {
  std::vector<DeltaEntry> batch;
  {
    std::lock_guard lock(stage_mutex_);
    batch.swap(staged_);
  }
  std::unique_lock lock(state_mutex_);
  if (delta != nullptr) delta->base_version = table_version_;
  for (const auto& e : batch) apply_locked(e);
  ++table_version_;
  if (delta != nullptr) delta->entries = std::move(batch);
  return table_version_;
}

void VersionedTable::apply_delta(const DeltaLog& delta) {
  std::uint64_t max_rv = 0;
  {
    std::unique_lock lock(state_mutex_);
    if (delta.base_version != table_version_) {
      fail(ErrorCategory::kStaleDelta, "delta base version " + std::to_string(delta.base_version) +
                                           " does not match table version " + std::to_string(table_version_));
    }
    for (const auto& e : delta.entries) {
      if (e.op == DeltaOp::kUpsert) {
        const std::size_t n = options_.dtype == DType::kI8 ? e.record.codes.size() : e.record.values.size();
        require(n == options_.dim, "delta: payload dim mismatch");
      }
    }
    for (const auto& e : delta.entries) {
      apply_locked(e);
      max_rv = std::max(max_rv, e.record.record_version);
    }
    ++table_version_;
  }
  std::lock_guard lock(stage_mutex_);
  record_counter_ = std::max(record_counter_, max_rv);
}

std::optional<StoredRecord> VersionedTable::read_disk(const DiskLocation& loc) const {
  std::ifstream f(segments_.at(loc.segment), std::ios::binary);
  if (!f) fail(ErrorCategory::kIo, "cannot open disk segment " + segments_[loc.segment].string());
  std::vector<unsigned char> buf(record_bytes(options_.dim, options_.dtype));
  f.seekg(static_cast<std::streamoff>(loc.offset));
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) fail(ErrorCategory::kIntegrity, "short read from disk segment");
  Reader rd(buf, "disk segment");
  rd.u64();
  StoredRecord r;
  r.record_version = rd.u64();
  read_payload(rd, r, options_.dim, options_.dtype);
  return r;
}

std::optional<StoredRecord> VersionedTable::get_record(std::uint64_t key) const {
  std::shared_lock lock(state_mutex_);
  if (const StoredRecord* r = memory_.find(key)) {
    memory_hits_.fetch_add(1, std::memory_order_relaxed);
    return *r;
  }
  const auto it = disk_index_.find(key);
  if (it == disk_index_.end()) return std::nullopt;
  disk_hits_.fetch_add(1, std::memory_order_relaxed);
  return read_disk(it->second);
}

Embedding to_embedding(const StoredRecord& record, DType dtype) {
  if (dtype == DType::kI8) return dequantize(QuantizedEmbedding{record.scale, record.codes});
  return Embedding(std::vector<double>(record.values.begin(), record.values.end()));
}

std::optional<Embedding> VersionedTable::get(std::uint64_t key) const {
  auto r = get_record(key);
  if (!r) return std::nullopt;
  return to_embedding(*r, options_.dtype);
}

Tier VersionedTable::tier_of(std::uint64_t key) const {
  std::shared_lock lock(state_mutex_);
  if (memory_.find(key) != nullptr) return Tier::kMemory;
  return disk_index_.count(key) != 0 ? Tier::kDisk : Tier::kAbsent;
}

std::size_t VersionedTable::size() const {
  std::shared_lock lock(state_mutex_);
  return memory_.size() + disk_index_.size();
}

std::size_t VersionedTable::memory_size() const {
  std::shared_lock lock(state_mutex_);
  return memory_.size();
}

std::size_t VersionedTable::disk_size() const {
  std::shared_lock lock(state_mutex_);
  return disk_index_.size();
}

std::size_t VersionedTable::max_probes() const {
  std::shared_lock lock(state_mutex_);
  return memory_.max_probes();
}

void VersionedTable::reset_hit_counters() const {
  memory_hits_ = 0;
  disk_hits_ = 0;
}

std::size_t VersionedTable::prune_long_tail(std::uint64_t min_frequency,
                                            const std::function<std::uint64_t(std::uint64_t)>& frequency) {
  std::unique_lock lock(state_mutex_);
  std::vector<std::pair<std::uint64_t, StoredRecord>> demote;
  memory_.for_each([&](std::uint64_t key, const StoredRecord& r) {
    const std::uint64_t f = frequency ? frequency(key) : 0;
    if (f < min_frequency) demote.emplace_back(key, r);
  });
  if (demote.empty()) return 0;
  std::sort(demote.begin(), demote.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  const std::size_t segment = segments_.size();
  const auto path = options_.disk_dir / ("segment-" + std::to_string(segment) + ".bin");
  Writer w;
  std::vector<std::uint64_t> offsets;
  offsets.reserve(demote.size());
  for (const auto& [key, r] : demote) {
    offsets.push_back(w.data().size());
    write_record(w, key, r, options_.dtype);
  }
  write_all(path.string(), w.data());
  segments_.push_back(path);
  for (std::size_t i = 0; i < demote.size(); ++i) {
    memory_.erase(demote[i].first);
    disk_index_[demote[i].first] = DiskLocation{segment, offsets[i]};
  }
  return demote.size();
}

std::vector<std::pair<std::uint64_t, StoredRecord>> VersionedTable::scan() const {
  std::shared_lock lock(state_mutex_);
  std::vector<std::pair<std::uint64_t, StoredRecord>> out;
  out.reserve(memory_.size() + disk_index_.size());
  memory_.for_each([&](std::uint64_t key, const StoredRecord& r) { out.emplace_back(key, r); });
  for (const auto& [key, loc] : disk_index_) out.emplace_back(key, *read_disk(loc));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::uint64_t VersionedTable::state_hash() const {
  const auto entries = scan();
  Fnv1a h;
  h.update_value(table_version());
  h.update_value(options_.dim);
  h.update_value(static_cast<std::uint8_t>(options_.dtype));
  for (const auto& [key, r] : entries) {
    h.update_value(key);
    h.update_value(r.record_version);
    if (options_.dtype == DType::kI8) {
      h.update_value(r.scale);
      h.update(r.codes.data(), r.codes.size());
    } else {
      h.update(r.values.data(), r.values.size() * sizeof(float));
    }
  }
  return h.digest();
}

void VersionedTable::restore(std::vector<std::pair<std::uint64_t, StoredRecord>> entries, std::uint64_t version) {
  std::uint64_t max_rv = 0;
  {
    std::unique_lock lock(state_mutex_);
    memory_.clear();
    disk_index_.clear();
    for (auto& [key, r] : entries) {
      max_rv = std::max(max_rv, r.record_version);
      memory_.insert(key, std::move(r));
    }
    table_version_ = version;
  }
  std::lock_guard lock(stage_mutex_);
  staged_.clear();
  record_counter_ = max_rv;
}

void save_snapshot(const VersionedTable& table, const std::string& path) {
  require(table.staged() == 0, "snapshot: flush staged writes first");
  const auto entries = table.scan();
  const std::uint64_t version = table.table_version();
  Writer w;
  w.bytes(kSnapshotMagic, 8);
  w.u32(kFormatVersion);
  w.u32(table.dim());
  w.u8(static_cast<std::uint8_t>(table.dtype()));
  w.u64(entries.size());
  for (const auto& [key, r] : entries) write_record(w, key, r, table.dtype());
  w.u64(version);
  write_all(path, w.data());
}

std::unique_ptr<VersionedTable> load_snapshot(const std::string& path, TableOptions options) {
  const auto buf = read_all(path);
  Reader rd(buf, "snapshot " + path);
  char magic[8];
  rd.bytes(magic, 8);
  if (std::memcmp(magic, kSnapshotMagic, 8) != 0) fail(ErrorCategory::kIntegrity, "snapshot: bad magic in " + path);
  const std::uint32_t format = rd.u32();
  if (format != kFormatVersion) fail(ErrorCategory::kIntegrity, "snapshot: unsupported format version");
  const std::uint32_t dim = rd.u32();
  const std::uint8_t dtype_byte = rd.u8();
  if (dtype_byte > 1) fail(ErrorCategory::kIntegrity, "snapshot: unknown dtype");
  if (dim == 0) fail(ErrorCategory::kIntegrity, "snapshot: zero dim");
  const auto dtype = static_cast<DType>(dtype_byte);
  const std::uint64_t count = rd.u64();
  const std::size_t per = record_bytes(dim, dtype);
  if (count > rd.remaining() / per || rd.remaining() != count * per + 8) {
    fail(ErrorCategory::kIntegrity, "snapshot: length does not match record count in " + path);
  }
  std::vector<std::pair<std::uint64_t, StoredRecord>> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t key = rd.u64();
    StoredRecord r;
    r.record_version = rd.u64();
    read_payload(rd, r, dim, dtype);
    if (!entries.empty() && key <= entries.back().first) fail(ErrorCategory::kIntegrity, "snapshot: keys not sorted");
    entries.emplace_back(key, std::move(r));
  }
  const std::uint64_t version = rd.u64();
  options.dim = dim;
  options.dtype = dtype;
  auto table = std::make_unique<VersionedTable>(std::move(options));
  table->restore(std::move(entries), version);
  return table;
}

void save_delta(const DeltaLog& delta, std::uint32_t dim, DType dtype, const std::string& path) {
  Writer w;
  w.bytes(kDeltaMagic, 8);
  w.u64(delta.base_version);
  for (const auto& e : delta.entries) {
    w.u8(static_cast<std::uint8_t>(e.op));
    w.u64(e.key);
    w.u64(e.record.record_version);
    if (e.op == DeltaOp::kUpsert) {
      const std::size_t n = dtype == DType::kI8 ? e.record.codes.size() : e.record.values.size();
      require(n == dim, "delta: payload dim mismatch");
      write_payload(w, e.record, dtype);
    }
  }
  write_all(path, w.data());
}

DeltaLog load_delta(const std::string& path, std::uint32_t dim, DType dtype) {
  const auto buf = read_all(path);
  Reader rd(buf, "delta " + path);
  char magic[8];
  rd.bytes(magic, 8);
  if (std::memcmp(magic, kDeltaMagic, 8) != 0) fail(ErrorCategory::kIntegrity, "delta: bad magic in " + path);
  DeltaLog d;
  d.base_version = rd.u64();
  std::uint64_t last_rv = 0;
  while (!rd.done()) {
    DeltaEntry e;
    const std::uint8_t op = rd.u8();
    if (op > 1) fail(ErrorCategory::kIntegrity, "delta: unknown opcode");
    e.op = static_cast<DeltaOp>(op);
    e.key = rd.u64();
    e.record.record_version = rd.u64();
    if (e.record.record_version < last_rv) fail(ErrorCategory::kIntegrity, "delta: record versions decrease");
    last_rv = e.record.record_version;
    if (e.op == DeltaOp::kUpsert) read_payload(rd, e.record, dim, dtype);
    d.entries.push_back(std::move(e));
  }
  return d;
}

std::size_t shard_of(std::uint64_t key, std::size_t shards) {
  require(shards >= 1, "shard routing needs at least one shard");
  return static_cast<std::size_t>(mix64(key ^ 0x5bd1e995ULL) % shards);
}

ShardedTable::ShardedTable(std::size_t shards, const TableOptions& options) {
  require(shards >= 1, "sharded table needs at least one shard");
  for (std::size_t i = 0; i < shards; ++i) {
    TableOptions o = options;
    if (!o.disk_dir.empty()) o.disk_dir /= "shard-" + std::to_string(i);
    o.seed = options.seed + i;
    shards_.push_back(std::make_unique<VersionedTable>(std::move(o)));
  }
}

std::optional<Embedding> ShardedTable::get(std::uint64_t key) const {
  return shards_[shard_of(key, shards_.size())]->get(key);
}

void ShardedTable::flush() {
  for (auto& s : shards_) s->flush();
}

std::size_t ShardedTable::size() const {
  std::size_t n = 0;
  for (const auto& s : shards_) n += s->size();
  return n;
}

}  // namespace mmrep
