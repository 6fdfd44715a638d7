#include "mmrep/realtime_ingest.hpp"

#include <algorithm>
#include <cmath>

#include "mmrep/errors.hpp"

namespace mmrep {

double IngestMetrics::percentile_ms(double p) const {
  if (latencies_ms.empty()) fail(ErrorCategory::kUndefinedMetric, "no latencies recorded");
  std::vector<double> v = latencies_ms;
  std::sort(v.begin(), v.end());
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

RealtimeIngestor::RealtimeIngestor(VersionedTable& table, IngestConfig config) : table_(table), config_(config) {
  require(config_.flush_interval.count() > 0, "ingest: flush interval must be positive");
  require(config_.capacity >= 1, "ingest: capacity must be positive");
  worker_ = std::thread([this] { run(); });
}

RealtimeIngestor::~RealtimeIngestor() { stop(); }

bool RealtimeIngestor::try_submit(std::uint64_t key, std::vector<double> embedding) {
  require(embedding.size() == table_.dim(), "ingest: embedding dim does not match table");
  std::lock_guard lock(mutex_);
  require(!stopping_, "ingest: submit after stop");
  if (queue_.size() >= config_.capacity) {
    ++metrics_.rejected;
    return false;
  }
  queue_.push_back(Pending{key, std::move(embedding), Clock::now()});
  ++metrics_.accepted;
  return true;
}

void RealtimeIngestor::submit(std::uint64_t key, std::vector<double> embedding) {
  while (!try_submit(key, embedding)) std::this_thread::sleep_for(std::chrono::milliseconds(1));
}

void RealtimeIngestor::drain_and_flush() {
  std::lock_guard flush_lock(flush_mutex_);
  std::deque<Pending> batch;
  {
    std::lock_guard lock(mutex_);
    batch.swap(queue_);
  }
  if (batch.empty()) return;
  for (const auto& p : batch) table_.upsert(p.key, std::span<const double>(p.embedding));
  table_.flush();
  const auto visible = Clock::now();
  std::lock_guard lock(mutex_);
  ++metrics_.flushes;
  metrics_.published += batch.size();
  for (const auto& p : batch) {
    metrics_.latencies_ms.push_back(std::chrono::duration<double, std::milli>(visible - p.accepted).count());
  }
}

void RealtimeIngestor::run() {
  auto next = Clock::now() + config_.flush_interval;
  for (;;) {
    {
      std::unique_lock lock(mutex_);
      wake_.wait_until(lock, next, [this] { return stopping_; });
      if (stopping_) break;
    }
    drain_and_flush();
    next += config_.flush_interval;
    const auto now = Clock::now();
    if (next < now) next = now + config_.flush_interval;
  }
  drain_and_flush();
}

void RealtimeIngestor::stop() {
  {
    std::lock_guard lock(mutex_);
    if (stopping_ && !worker_.joinable()) return;
    stopping_ = true;
  }
  wake_.notify_all();
  if (worker_.joinable()) worker_.join();
}

IngestMetrics RealtimeIngestor::metrics() const {
  std::lock_guard lock(mutex_);
  return metrics_;
}

}  // namespace mmrep
