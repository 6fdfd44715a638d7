#pragma once

// Bucketized cuckoo hash map from 64-bit keys. Two hash functions pick two
// candidate buckets of four slots each, so a lookup never touches more than
// two buckets. An insert that runs out of kicks undoes its displacement
// path and reports that a resize is needed; no key is dropped.

#include <atomic>
#include <cstdint>
#include <utility>
#include <vector>

#include "mmrep/errors.hpp"
#include "mmrep/numerics.hpp"
#include "mmrep/random.hpp"

namespace mmrep {

enum class InsertStatus { kInserted, kUpdated, kNeedsResize };

template <typename V>
class CuckooIndex {
 public:
  static constexpr std::size_t kSlots = 4;
  static constexpr int kDefaultMaxKicks = 500;

  explicit CuckooIndex(std::size_t buckets = 16, std::uint64_t seed = 0, bool auto_resize = true,
                       int max_kicks = kDefaultMaxKicks)
      : seed_(seed), auto_resize_(auto_resize), max_kicks_(max_kicks), rng_(Rng::derive(seed, 77)) {
    std::size_t b = 2;
    while (b < buckets) b <<= 1;
    slots_.resize(b * kSlots);
  }

  std::size_t size() const noexcept { return size_; }
  std::size_t bucket_count() const noexcept { return slots_.size() / kSlots; }
  std::size_t capacity() const noexcept { return slots_.size(); }
  double load_factor() const noexcept { return static_cast<double>(size_) / static_cast<double>(capacity()); }
  std::size_t resizes() const noexcept { return resizes_; }

  // Bucket probes of the most recent lookup and the maximum ever observed.
  std::size_t last_probes() const noexcept { return last_probes_.load(std::memory_order_relaxed); }
  std::size_t max_probes() const noexcept { return max_probes_.load(std::memory_order_relaxed); }
  std::uint64_t total_probes() const noexcept { return total_probes_.load(std::memory_order_relaxed); }

  std::pair<std::size_t, std::size_t> candidate_buckets(std::uint64_t key) const {
    const std::size_t mask = bucket_count() - 1;
    const std::size_t b1 = static_cast<std::size_t>(mix64(key ^ mix64(seed_ * 2 + 1))) & mask;
    std::size_t b2 = static_cast<std::size_t>(mix64((key + 0x632be59bd9b4e019ULL) ^ mix64(seed_ * 2 + 2))) & mask;
    if (b2 == b1) b2 = (b1 + 1) & mask;
    return {b1, b2};
  }

  // Inserts or overwrites. With auto_resize the table grows x2 until the key fits.
  InsertStatus insert(std::uint64_t key, V value) {
    for (;;) {
      const InsertStatus s = try_insert(key, value);
      if (s != InsertStatus::kNeedsResize || !auto_resize_) return s;
      grow();
    }
  }

  // On kNeedsResize the table is unchanged and `value` is handed back intact.
  InsertStatus try_insert(std::uint64_t key, V& value) {
    if (V* existing = locate(key)) {
      *existing = std::move(value);
      return InsertStatus::kUpdated;
    }
    const auto [b1, b2] = candidate_buckets(key);
    if (place_in(b1, key, value) || place_in(b2, key, value)) {
      ++size_;
      return InsertStatus::kInserted;
    }

    // Random walk of displacements, recorded so it can be undone.
    Slot carry{key, true, std::move(value)};
    std::vector<std::size_t> path;
    std::size_t bucket = rng_.bernoulli(0.5) ? b1 : b2;
    for (int kick = 0; kick < max_kicks_; ++kick) {
      const std::size_t slot = bucket * kSlots + static_cast<std::size_t>(rng_.below(kSlots));
      std::swap(carry, slots_[slot]);
      path.push_back(slot);
      const auto [c1, c2] = candidate_buckets(carry.key);
      const std::size_t next = c1 == bucket ? c2 : c1;
      if (place_in(next, carry.key, carry.value)) {
        ++size_;
        return InsertStatus::kInserted;
      }
      bucket = next;
    }
    for (auto it = path.rbegin(); it != path.rend(); ++it) std::swap(carry, slots_[*it]);
    value = std::move(carry.value);
    return InsertStatus::kNeedsResize;
  }

  const V* find(std::uint64_t key) const {
    const auto [b1, b2] = candidate_buckets(key);
    std::size_t probes = 1;
    const V* hit = scan(b1, key);
    if (hit == nullptr) {
      probes = 2;
      hit = scan(b2, key);
    }
    // Relaxed counters: lookups may run concurrently under a shared lock.
    last_probes_.store(probes, std::memory_order_relaxed);
    total_probes_.fetch_add(probes, std::memory_order_relaxed);
    std::size_t seen = max_probes_.load(std::memory_order_relaxed);
    while (probes > seen && !max_probes_.compare_exchange_weak(seen, probes, std::memory_order_relaxed)) {
    }
    return hit;
  }

  V* find(std::uint64_t key) { return const_cast<V*>(std::as_const(*this).find(key)); }

  bool contains(std::uint64_t key) const { return find(key) != nullptr; }

  bool erase(std::uint64_t key) {
    const auto [b1, b2] = candidate_buckets(key);
    for (std::size_t b : {b1, b2}) {
      for (std::size_t s = 0; s < kSlots; ++s) {
        Slot& slot = slots_[b * kSlots + s];
        if (slot.used && slot.key == key) {
          slot.used = false;
          slot.value = V{};
          --size_;
          return true;
        }
      }
    }
    return false;
  }

  void clear() {
    for (auto& s : slots_) s = Slot{};
    size_ = 0;
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& s : slots_) {
      if (s.used) fn(s.key, s.value);
    }
  }

  // Every stored key sits in one of its two candidate buckets.
  bool check_placement() const {
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (!slots_[i].used) continue;
      const auto [b1, b2] = candidate_buckets(slots_[i].key);
      const std::size_t b = i / kSlots;
      if (b != b1 && b != b2) return false;
    }
    return true;
  }

  void rehash(std::size_t buckets) {
    const std::vector<Slot> old = std::move(slots_);
    for (;;) {
      slots_.assign(buckets * kSlots, Slot{});
      size_ = 0;
      bool ok = true;
      for (const auto& s : old) {
        if (!s.used) continue;
        V copy = s.value;
        if (try_insert(s.key, copy) == InsertStatus::kNeedsResize) {
          ok = false;
          break;
        }
      }
      if (ok) return;
      buckets *= 2;
    }
  }

 private:
  struct Slot {
    std::uint64_t key = 0;
    bool used = false;
    V value{};
  };

  void grow() {
    ++resizes_;
    rehash(bucket_count() * 2);
  }

  bool place_in(std::size_t bucket, std::uint64_t key, V& value) {
    for (std::size_t s = 0; s < kSlots; ++s) {
      Slot& slot = slots_[bucket * kSlots + s];
      if (!slot.used) {
        slot.key = key;
        slot.used = true;
        slot.value = std::move(value);
        return true;
      }
    }
    return false;
  }

  const V* scan(std::size_t bucket, std::uint64_t key) const {
    for (std::size_t s = 0; s < kSlots; ++s) {
      const Slot& slot = slots_[bucket * kSlots + s];
      if (slot.used && slot.key == key) return &slot.value;
    }
    return nullptr;
  }

  V* locate(std::uint64_t key) {
    const auto [b1, b2] = candidate_buckets(key);
    for (std::size_t b : {b1, b2}) {
      for (std::size_t s = 0; s < kSlots; ++s) {
        Slot& slot = slots_[b * kSlots + s];
        if (slot.used && slot.key == key) return &slot.value;
      }
    }
    return nullptr;
  }

  std::vector<Slot> slots_;
  std::size_t size_ = 0;
  std::uint64_t seed_;
  bool auto_resize_;
  int max_kicks_;
  Rng rng_;
  std::size_t resizes_ = 0;
  mutable std::atomic<std::size_t> last_probes_{0};
  mutable std::atomic<std::size_t> max_probes_{0};
  mutable std::atomic<std::uint64_t> total_probes_{0};
};

}  // namespace mmrep
