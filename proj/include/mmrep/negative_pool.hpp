#pragma once

// Spatial-temporal negative pool. The fresh part holds the item embeddings
// of the current global batch (all shards); the stale part is a FIFO of the
// item embeddings of the last `depth` global batches, held as constants.
//
// With every sample carrying a hard negative and a full queue, each query
// sees 2*B*P*(depth+1) - 1 negatives: everything except its own positive.

#include <cstdint>
#include <deque>
#include <vector>

#include <Eigen/Dense>

namespace mmrep {

enum class PoolRole : std::uint8_t { kPositive, kHardNegative };

struct PoolTag {
  std::uint64_t step = 0;
  std::uint32_t shard = 0;
  std::uint32_t sample = 0;
  PoolRole role = PoolRole::kPositive;
};

struct PoolEntry {
  PoolTag tag;
  Eigen::VectorXd embedding;  // may be empty when only counting
};

// Identifies one negative: fresh entries index `fresh()`, stale ones index
// the flattened queue (oldest batch first).
struct PoolRef {
  bool fresh = true;
  std::size_t index = 0;
};

class NegativePool {
 public:
  NegativePool(std::size_t batch_per_shard, std::size_t shards, std::size_t depth);

  std::size_t batch_per_shard() const noexcept { return batch_per_shard_; }
  std::size_t shards() const noexcept { return shards_; }
  std::size_t depth() const noexcept { return depth_; }

  void begin_step(std::uint64_t step);
  std::size_t add_fresh(const PoolTag& tag, Eigen::VectorXd embedding = {});
  // Moves the fresh batch into the queue and evicts the oldest beyond depth.
  void commit();

  const std::vector<PoolEntry>& fresh() const noexcept { return fresh_; }
  std::size_t stale_size() const noexcept { return stale_size_; }
  std::size_t stale_batches() const noexcept { return stale_.size(); }
  const PoolEntry& stale_at(std::size_t flat_index) const;

  template <typename Fn>
  void for_each_stale(Fn&& fn) const {
    std::size_t i = 0;
    for (const auto& batch : stale_) {
      for (const auto& e : batch) fn(i++, e);
    }
  }

  // Enumerates the negatives of the query at (shard, sample) of the current step.
  template <typename Fn>
  void for_each_negative(std::uint32_t shard, std::uint32_t sample, Fn&& fn) const {
    for (std::size_t i = 0; i < fresh_.size(); ++i) {
      const PoolTag& t = fresh_[i].tag;
      if (t.role == PoolRole::kPositive && t.shard == shard && t.sample == sample && t.step == step_) continue;
      fn(PoolRef{true, i});
    }
    for_each_stale([&](std::size_t i, const PoolEntry&) { fn(PoolRef{false, i}); });
  }

  std::vector<PoolRef> negatives_for(std::uint32_t shard, std::uint32_t sample) const;
  std::size_t count_negatives(std::uint32_t shard, std::uint32_t sample) const;

  // 2*B*P*(k+1) - 1 (with hard negatives) or B*P*(k+1) - 1 (without).
  static std::uint64_t expected_negatives(std::uint64_t batch_per_shard, std::uint64_t shards, std::uint64_t depth,
                                          bool hard_negatives);

 private:
  std::size_t batch_per_shard_;
  std::size_t shards_;
  std::size_t depth_;
  std::uint64_t step_ = 0;
  std::vector<PoolEntry> fresh_;
  std::deque<std::vector<PoolEntry>> stale_;
  std::size_t stale_size_ = 0;
};

}  // namespace mmrep
