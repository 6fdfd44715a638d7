#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <functional>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include "mmrep/cuckoo_index.hpp"
#include "mmrep/errors.hpp"
#include "mmrep/random.hpp"
#include "mmrep/realtime_ingest.hpp"
#include "mmrep/versioned_table.hpp"

using namespace mmrep;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mmrep_rc_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<double> random_vec(Rng& rng, std::uint32_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

TableOptions opts(std::uint32_t dim, DType dtype = DType::kF32) {
  TableOptions o;
  o.dim = dim;
  o.dtype = dtype;
  o.initial_buckets = 16;
  return o;
}

ErrorCategory category_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.category();
  }
  ADD_FAILURE() << "expected an mmrep::Error";
  return ErrorCategory::kContract;
}

// Naive oracle: key -> vector as it would be read back.
using Oracle = std::map<std::uint64_t, std::vector<double>>;

std::vector<double> readback(const std::vector<double>& v, DType dtype) {
  if (dtype == DType::kI8) return dequantize(quantize(v)).values;
  std::vector<double> out;
  for (double x : v) out.push_back(static_cast<double>(static_cast<float>(x)));
  return out;
}

void expect_matches(const VersionedTable& t, const Oracle& o) {
  ASSERT_EQ(t.size(), o.size());
  for (const auto& [k, v] : o) {
    const auto got = t.get(k);
    ASSERT_TRUE(got) << k;
    EXPECT_EQ(got->values, v) << k;
  }
}

}  // namespace

TEST(Cuckoo, RetrievableUpToHighOccupancy) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CuckooIndex<std::uint64_t> idx(1024, seed);
    const std::size_t target = idx.capacity() * 85 / 100;
    Rng rng(seed);
    std::vector<std::uint64_t> keys;
    while (keys.size() < target) {
      const std::uint64_t k = rng.next_u64();
      if (idx.insert(k, k ^ 0xabc) == InsertStatus::kInserted) keys.push_back(k);
    }
    EXPECT_TRUE(idx.check_placement());
    EXPECT_EQ(idx.size(), keys.size());
    for (std::uint64_t k : keys) {
      const auto* v = idx.find(k);
      ASSERT_NE(v, nullptr);
      EXPECT_EQ(*v, k ^ 0xabc);
      EXPECT_LE(idx.last_probes(), 2u);
    }
    EXPECT_FALSE(idx.contains(12345));
    EXPECT_LE(idx.max_probes(), 2u);
  }
}

TEST(Cuckoo, FailedInsertLosesNothing) {
  CuckooIndex<int> idx(2, 3, /*auto_resize=*/false, /*max_kicks=*/50);
  std::vector<std::uint64_t> in;
  bool refused = false;
  for (std::uint64_t k = 1; k < 100 && !refused; ++k) {
    int v = static_cast<int>(k);
    const InsertStatus s = idx.try_insert(k, v);
    if (s == InsertStatus::kNeedsResize) {
      refused = true;
      EXPECT_EQ(v, static_cast<int>(k));  // value handed back
    } else {
      in.push_back(k);
    }
  }
  ASSERT_TRUE(refused);
  EXPECT_EQ(idx.size(), in.size());
  for (std::uint64_t k : in) EXPECT_EQ(*idx.find(k), static_cast<int>(k));
  idx.rehash(idx.bucket_count() * 4);
  for (std::uint64_t k : in) EXPECT_EQ(*idx.find(k), static_cast<int>(k));
}

TEST(Cuckoo, UpdateAndErase) {
  CuckooIndex<int> idx(4, 1);
  EXPECT_EQ(idx.insert(5, 1), InsertStatus::kInserted);
  EXPECT_EQ(idx.insert(5, 2), InsertStatus::kUpdated);
  EXPECT_EQ(*idx.find(5), 2);
  EXPECT_TRUE(idx.erase(5));
  EXPECT_FALSE(idx.erase(5));
  EXPECT_EQ(idx.size(), 0u);
}

TEST(Table, UpsertFlushGet) {
  VersionedTable t(opts(3));
  const std::vector<double> v{0.5, -1.25, 2.0};
  const auto rv = t.upsert(9, v);
  EXPECT_FALSE(t.get(9));  // staged, not yet visible
  EXPECT_EQ(t.flush(), 1u);
  EXPECT_EQ(t.get(9)->values, v);
  EXPECT_EQ(t.get_record(9)->record_version, rv);
  EXPECT_FALSE(t.get(10));
  EXPECT_EQ(t.tier_of(10), Tier::kAbsent);
  EXPECT_EQ(category_of([&] { t.upsert(1, std::vector<double>{1.0}); }), ErrorCategory::kContract);
}

TEST(Table, I8WithinHalfScale) {
  VersionedTable t(opts(16, DType::kI8));
  Rng rng(1);
  std::map<std::uint64_t, std::vector<double>> in;
  for (std::uint64_t k = 0; k < 200; ++k) {
    in[k] = random_vec(rng, 16);
    t.upsert(k, in[k]);
  }
  t.flush();
  for (const auto& [k, v] : in) {
    const auto r = t.get_record(k);
    const auto e = t.get(k);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::abs(e->values[i] - v[i]), r->scale / 2.0 + 1e-12);
  }
}

TEST(Table, LastWriterWins) {
  VersionedTable t(opts(2));
  const auto a = t.upsert(1, std::vector<double>{1, 1});
  const auto b = t.upsert(1, std::vector<double>{2, 2});
  EXPECT_GT(b, a);
  t.flush();
  EXPECT_EQ(t.get(1)->values, (std::vector<double>{2, 2}));
  EXPECT_EQ(t.get_record(1)->record_version, b);
}

TEST(Table, HundredThousandUpserts) {
  VersionedTable t(opts(4));
  std::vector<double> v(4);
  for (std::uint64_t k = 0; k < 100000; ++k) {
    v[0] = static_cast<double>(k);
    t.upsert(k * 2654435761ULL, v);
  }
  t.flush();
  EXPECT_EQ(t.size(), 100000u);
  const auto all = t.scan();
  ASSERT_EQ(all.size(), 100000u);
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_LT(all[i - 1].first, all[i].first);
  for (std::uint64_t k = 0; k < 100000; k += 997) EXPECT_EQ(t.get(k * 2654435761ULL)->values[0], static_cast<double>(k));
  EXPECT_LE(t.max_probes(), 2u);
}

TEST(Table, DemotionIsTransparent) {
  for (DType dt : {DType::kF32, DType::kI8}) {
    VersionedTable t(opts(5, dt));
    Rng rng(2);
    for (std::uint64_t k = 0; k < 100; ++k) t.upsert(k, random_vec(rng, 5));
    t.flush();
    std::map<std::uint64_t, std::vector<double>> before;
    for (std::uint64_t k = 0; k < 100; ++k) before[k] = t.get(k)->values;

    EXPECT_EQ(t.prune_long_tail(0, [](std::uint64_t) { return std::uint64_t{0}; }), 0u);
    EXPECT_EQ(t.memory_size(), 100u);

    const std::size_t demoted = t.prune_long_tail(5, [](std::uint64_t k) { return k % 2 ? std::uint64_t{9} : 0; });
    EXPECT_EQ(demoted, 50u);
    EXPECT_EQ(t.memory_size(), 50u);
    EXPECT_EQ(t.disk_size(), 50u);
    for (std::uint64_t k = 0; k < 100; ++k) {
      EXPECT_EQ(t.tier_of(k), k % 2 ? Tier::kMemory : Tier::kDisk);
      EXPECT_EQ(t.get(k)->values, before[k]);
    }
    EXPECT_EQ(t.prune_long_tail(100, [](std::uint64_t) { return std::uint64_t{1}; }), 50u);
    EXPECT_EQ(t.memory_size(), 0u);
    for (std::uint64_t k = 0; k < 100; ++k) EXPECT_EQ(t.get(k)->values, before[k]);

    // An upsert of a demoted key lands in memory and leaves no stale disk copy.
    t.upsert(4, std::vector<double>(5, 1.0));
    t.flush();
    EXPECT_EQ(t.tier_of(4), Tier::kMemory);
    EXPECT_EQ(t.size(), 100u);
  }
}

TEST(Table, PruneHitRateTracksHeadShare) {
  const std::size_t n = 5000;
  std::vector<double> w(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) total += w[i] = std::pow(static_cast<double>(i + 1), -1.2);
  const WeightedSampler sampler(w);

  VersionedTable t(opts(4));
  for (std::uint64_t k = 0; k < n; ++k) t.upsert(k, std::vector<double>{1, 0, 0, 0});
  t.flush();

  // Frequencies from a training replay, threshold at the 10% head boundary.
  Rng rng(3);
  std::vector<std::uint64_t> freq(n, 0);
  for (int i = 0; i < 200000; ++i) ++freq[sampler.sample(rng)];
  std::vector<std::uint64_t> sorted = freq;
  std::sort(sorted.rbegin(), sorted.rend());
  const std::uint64_t threshold = sorted[n / 10 - 1];
  t.prune_long_tail(threshold, [&](std::uint64_t k) { return freq[k]; });

  double head_share = 0;
  for (std::uint64_t k = 0; k < n; ++k) {
    if (t.tier_of(k) == Tier::kMemory) head_share += w[k] / total;
  }
  t.reset_hit_counters();
  Rng replay(4);
  for (int i = 0; i < 100000; ++i) t.get(sampler.sample(replay));
  const double hit = static_cast<double>(t.memory_hits()) / static_cast<double>(t.memory_hits() + t.disk_hits());
  EXPECT_NEAR(hit, head_share, 0.05);
  EXPECT_GT(hit, 0.5);
}

TEST(Snapshot, RoundTripAndBitLayout) {
  const auto dir = scratch("snap");
  for (DType dt : {DType::kF32, DType::kI8}) {
    VersionedTable t(opts(6, dt));
    Rng rng(5);
    for (std::uint64_t k = 0; k < 300; ++k) t.upsert(k * 7 + 1, random_vec(rng, 6));
    t.flush();
    t.remove(8);
    t.flush();
    t.prune_long_tail(3, [](std::uint64_t k) { return k % 5; });  // mixed tiers
    const std::string path = (dir / ("t" + std::string(to_string(dt)) + ".snap")).string();
    save_snapshot(t, path);

    // Independent parse of the header and size.
    std::ifstream f(path, std::ios::binary);
    char magic[8];
    std::uint32_t fmt = 0, dim = 0;
    std::uint8_t dtype = 9;
    std::uint64_t count = 0;
    f.read(magic, 8);
    f.read(reinterpret_cast<char*>(&fmt), 4);
    f.read(reinterpret_cast<char*>(&dim), 4);
    f.read(reinterpret_cast<char*>(&dtype), 1);
    f.read(reinterpret_cast<char*>(&count), 8);
    EXPECT_EQ(std::memcmp(magic, "MOONEMB1", 8), 0);
    EXPECT_EQ(fmt, 1u);
    EXPECT_EQ(dim, 6u);
    EXPECT_EQ(dtype, static_cast<std::uint8_t>(dt));
    EXPECT_EQ(count, 299u);
    const std::size_t payload = dt == DType::kF32 ? 6 * 4 : 4 + 6;
    EXPECT_EQ(fs::file_size(path), 25 + count * (16 + payload) + 8);
    std::uint64_t first_key = 0;
    f.read(reinterpret_cast<char*>(&first_key), 8);
    EXPECT_EQ(first_key, 1u);

    const auto back = load_snapshot(path);
    EXPECT_EQ(back->table_version(), t.table_version());
    EXPECT_EQ(back->scan(), t.scan());
    EXPECT_EQ(back->state_hash(), t.state_hash());
    const std::string again = path + ".again";
    save_snapshot(*back, again);
    EXPECT_EQ(hash_file(path), hash_file(again));
  }
}

TEST(Snapshot, CorruptionIsRefused) {
  const auto dir = scratch("corrupt");
  VersionedTable t(opts(4));
  for (std::uint64_t k = 0; k < 50; ++k) t.upsert(k, std::vector<double>{1, 2, 3, 4});
  t.flush();
  const std::string path = (dir / "a.snap").string();
  save_snapshot(t, path);
  const std::string cut = (dir / "cut.snap").string();
  fs::copy_file(path, cut);
  fs::resize_file(cut, fs::file_size(cut) - 5);
  EXPECT_EQ(category_of([&] { load_snapshot(cut); }), ErrorCategory::kIntegrity);
  const std::string bad = (dir / "bad.snap").string();
  fs::copy_file(path, bad);
  {
    std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
    f.write("MOONEMB2", 8);
  }
  EXPECT_EQ(category_of([&] { load_snapshot(bad); }), ErrorCategory::kIntegrity);
  EXPECT_EQ(category_of([&] { load_snapshot((dir / "none.snap").string()); }), ErrorCategory::kIo);
}

TEST(Delta, EmptyDeltaBumpsVersionOnly) {
  VersionedTable t(opts(2));
  t.upsert(1, std::vector<double>{1, 2});
  t.flush();
  const auto before = t.scan();
  DeltaLog d;
  d.base_version = t.table_version();
  t.apply_delta(d);
  EXPECT_EQ(t.table_version(), 2u);
  EXPECT_EQ(t.scan(), before);
}

TEST(Delta, UpsertThenDeleteInOneDelta) {
  VersionedTable src(opts(2)), dst(opts(2));
  src.flush();
  dst.flush();
  DeltaLog d;
  src.upsert(5, std::vector<double>{1, 2});
  src.remove(5);
  src.flush(&d);
  EXPECT_FALSE(src.get(5));
  ASSERT_EQ(d.entries.size(), 2u);
  dst.apply_delta(d);
  EXPECT_FALSE(dst.get(5));
  EXPECT_EQ(dst.state_hash(), src.state_hash());
}

TEST(Delta, VersionGapIsStale) {
  VersionedTable t(opts(2));
  t.flush();
  DeltaLog d;
  d.base_version = 5;
  EXPECT_EQ(category_of([&] { t.apply_delta(d); }), ErrorCategory::kStaleDelta);
  EXPECT_EQ(t.table_version(), 1u);
}

TEST(Delta, RandomDeltaMatchesMapOracle) {
  for (DType dt : {DType::kF32, DType::kI8}) {
    VersionedTable t(opts(3, dt));
    Oracle oracle;
    Rng rng(6);
    for (std::uint64_t k = 0; k < 200; ++k) {
      const auto v = random_vec(rng, 3);
      t.upsert(k, v);
      oracle[k] = readback(v, dt);
    }
    t.flush();
    DeltaLog d;
    d.base_version = t.table_version();
    std::uint64_t rv = t.last_record_version();
    for (int i = 0; i < 1000; ++i) {
      DeltaEntry e;
      e.key = rng.below(400);
      e.record.record_version = ++rv;
      if (rng.bernoulli(0.3)) {
        e.op = DeltaOp::kDelete;
        oracle.erase(e.key);
      } else {
        const auto v = random_vec(rng, 3);
        if (dt == DType::kI8) {
          const auto q = quantize(v);
          e.record.scale = q.scale;
          e.record.codes = q.codes;
        } else {
          for (double x : v) e.record.values.push_back(static_cast<float>(x));
        }
        oracle[e.key] = readback(v, dt);
      }
      d.entries.push_back(std::move(e));
    }
    t.apply_delta(d);
    EXPECT_EQ(t.table_version(), 2u);
    expect_matches(t, oracle);
  }
}

TEST(Delta, SnapshotPlusDeltasEqualsDirectConstruction) {
  const auto dir = scratch("replay");
  for (DType dt : {DType::kF32, DType::kI8}) {
    VersionedTable direct(opts(8, dt));
    Rng rng(7);
    std::vector<std::string> delta_files;
    std::string snap;
    std::size_t ops = 0;
    for (std::uint64_t version = 1; version <= 12; ++version) {
      for (int i = 0; i < 1000; ++i, ++ops) {
        const std::uint64_t key = rng.below(3000);
        if (rng.bernoulli(0.2)) {
          direct.remove(key);
        } else {
          direct.upsert(key, random_vec(rng, 8));
        }
      }
      DeltaLog d;
      direct.flush(&d);
      if (version == 7) {
        snap = (dir / ("v7_" + std::string(to_string(dt)) + ".snap")).string();
        save_snapshot(direct, snap);
      }
      if (version > 7) {
        delta_files.push_back((dir / ("d" + std::to_string(version) + std::string(to_string(dt)))).string());
        save_delta(d, 8, dt, delta_files.back());
      }
    }
    EXPECT_GE(ops, 10000u);
    auto replayed = load_snapshot(snap);
    EXPECT_EQ(replayed->table_version(), 7u);
    for (const auto& f : delta_files) replayed->apply_delta(load_delta(f, 8, dt));
    EXPECT_EQ(replayed->table_version(), 12u);
    EXPECT_EQ(replayed->state_hash(), direct.state_hash());
    EXPECT_EQ(replayed->scan(), direct.scan());
  }
}

TEST(Delta, FileRoundTripIsBitExact) {
  const auto dir = scratch("deltafile");
  VersionedTable t(opts(4, DType::kI8));
  t.flush();
  DeltaLog d;
  t.upsert(3, std::vector<double>{1, -1, 0.5, 0});
  t.remove(9);
  t.flush(&d);
  const std::string p = (dir / "a.delta").string();
  save_delta(d, 4, DType::kI8, p);
  // magic + base + (1+8+8+4+4) + (1+8+8)
  EXPECT_EQ(fs::file_size(p), 8u + 8 + 25 + 17);
  const DeltaLog back = load_delta(p, 4, DType::kI8);
  EXPECT_EQ(back.base_version, d.base_version);
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[0].record, d.entries[0].record);
  EXPECT_EQ(back.entries[1].op, DeltaOp::kDelete);
  save_delta(back, 4, DType::kI8, p + "2");
  EXPECT_EQ(hash_file(p), hash_file(p + "2"));
}

TEST(Table, VersionsNeverDecrease) {
  VersionedTable t(opts(2));
  Rng rng(8);
  std::uint64_t last_tv = t.table_version(), last_rv = 0;
  for (int i = 0; i < 50; ++i) {
    const auto rv = t.upsert(rng.below(10), std::vector<double>{1, 2});
    EXPECT_GT(rv, last_rv);
    last_rv = rv;
    if (i % 5 == 0) {
      const auto tv = t.flush();
      EXPECT_GT(tv, last_tv);
      last_tv = tv;
    }
  }
}

TEST(Sharding, RoutesDeterministically) {
  ShardedTable s(4, opts(2));
  std::vector<std::size_t> per(4, 0);
  for (std::uint64_t k = 0; k < 4000; ++k) {
    s.upsert(k, std::vector<double>{static_cast<double>(k), 0});
    ++per[shard_of(k, 4)];
  }
  s.flush();
  EXPECT_EQ(s.size(), 4000u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(s.shard(i).size(), per[i]);
    EXPECT_GT(per[i], 800u);
  }
  EXPECT_EQ(s.get(1234)->values[0], 1234.0);
  EXPECT_EQ(shard_of(1234, 4), shard_of(1234, 4));
}

TEST(Ingest, SingleRecordVisibleWithinTwoIntervals) {
  VersionedTable t(opts(4));
  RealtimeIngestor ing(t, IngestConfig{std::chrono::milliseconds(100), 16});
  const auto start = std::chrono::steady_clock::now();
  ASSERT_TRUE(ing.try_submit(77, {1, 2, 3, 4}));
  while (!t.get(77) && std::chrono::steady_clock::now() - start < std::chrono::seconds(2)) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  EXPECT_TRUE(t.get(77));
  EXPECT_LE(ms, 200.0);
  ing.stop();
  const auto m = ing.metrics();
  EXPECT_EQ(m.published, 1u);
  EXPECT_LE(m.percentile_ms(100), 200.0);
}

TEST(Ingest, ReadersNeverSeeTornVectors) {
  VersionedTable t(opts(64));
  t.upsert(1, std::vector<double>(64, 0.0));
  t.flush();
  std::atomic<bool> done{false};
  std::atomic<std::size_t> reads{0}, torn{0};
  std::thread reader([&] {
    while (!done) {
      const auto e = t.get(1);
      if (!e) continue;
      for (double x : e->values) {
        if (x != e->values[0]) {
          ++torn;
          break;
        }
      }
      ++reads;
    }
  });
  {
    RealtimeIngestor ing(t, IngestConfig{std::chrono::milliseconds(1), 64});
    for (int i = 1; i <= 3000; ++i) ing.submit(1, std::vector<double>(64, static_cast<double>(i)));
    ing.stop();
  }
  done = true;
  reader.join();
  EXPECT_EQ(torn.load(), 0u);
  EXPECT_GT(reads.load(), 0u);
  EXPECT_EQ(t.get(1)->values[0], 3000.0);
}

TEST(Ingest, BurstAboveCapacitySignalsBackpressureAndLosesNothing) {
  VersionedTable t(opts(8));
  RealtimeIngestor ing(t, IngestConfig{std::chrono::milliseconds(20), 1000});
  std::size_t refusals = 0;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    std::vector<double> v(8, static_cast<double>(k));
    while (!ing.try_submit(k, v)) {
      ++refusals;
      std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
  }
  ing.stop();
  const auto m = ing.metrics();
  EXPECT_GT(refusals, 0u);
  EXPECT_EQ(m.rejected, refusals);
  EXPECT_EQ(m.accepted, 10000u);
  EXPECT_EQ(m.published, 10000u);
  ASSERT_EQ(t.size(), 10000u);
  for (std::uint64_t k = 0; k < 10000; ++k) EXPECT_EQ(t.get(k)->values[7], static_cast<double>(k));
}

TEST(Ingest, RejectsZeroInterval) {
  VersionedTable t(opts(2));
  EXPECT_THROW(RealtimeIngestor(t, IngestConfig{std::chrono::milliseconds(0), 4}), Error);
}
