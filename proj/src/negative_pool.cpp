#include "mmrep/negative_pool.hpp"

#include "mmrep/errors.hpp"

namespace mmrep {

NegativePool::NegativePool(std::size_t batch_per_shard, std::size_t shards, std::size_t depth)
    : batch_per_shard_(batch_per_shard), shards_(shards), depth_(depth) {
  require(batch_per_shard >= 1 && shards >= 1, "negative pool: batch and shard counts must be positive");
}

void NegativePool::begin_step(std::uint64_t step) {
  step_ = step;
  fresh_.clear();
}

std::size_t NegativePool::add_fresh(const PoolTag& tag, Eigen::VectorXd embedding) {
  require(tag.step == step_, "negative pool: fresh entry tagged with a different step");
  require(tag.shard < shards_ && tag.sample < batch_per_shard_, "negative pool: tag outside the batch grid");
  fresh_.push_back(PoolEntry{tag, std::move(embedding)});
  return fresh_.size() - 1;
}

void NegativePool::commit() {
  if (depth_ == 0) {
    fresh_.clear();
    return;
  }
  stale_size_ += fresh_.size();
  stale_.push_back(std::move(fresh_));
  fresh_.clear();
  while (stale_.size() > depth_) {
    stale_size_ -= stale_.front().size();
    stale_.pop_front();
  }
}

const PoolEntry& NegativePool::stale_at(std::size_t flat_index) const {
  for (const auto& batch : stale_) {
    if (flat_index < batch.size()) return batch[flat_index];
    flat_index -= batch.size();
  }
  fail(ErrorCategory::kContract, "negative pool: stale index out of range");
}

std::vector<PoolRef> NegativePool::negatives_for(std::uint32_t shard, std::uint32_t sample) const {
  std::vector<PoolRef> out;
  out.reserve(fresh_.size() + stale_size_);
  for_each_negative(shard, sample, [&](const PoolRef& r) { out.push_back(r); });
  return out;
}

std::size_t NegativePool::count_negatives(std::uint32_t shard, std::uint32_t sample) const {
  std::size_t n = 0;
  for_each_negative(shard, sample, [&](const PoolRef&) { ++n; });
  return n;
}

std::uint64_t NegativePool::expected_negatives(std::uint64_t batch_per_shard, std::uint64_t shards,
                                               std::uint64_t depth, bool hard_negatives) {
  const std::uint64_t per_sample = hard_negatives ? 2 : 1;
  return per_sample * batch_per_shard * shards * (depth + 1) - 1;
}

}  // namespace mmrep
