#pragma once

// Real-time ingest into a VersionedTable. Producers submit into a bounded
// queue; a background flusher drains it every flush_interval, stages the
// records and publishes them with one flush. A full queue refuses the
// record (backpressure) instead of dropping it.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include "mmrep/versioned_table.hpp"

namespace mmrep {

struct IngestConfig {
  std::chrono::milliseconds flush_interval{1000};
  std::size_t capacity = 1024;
};

struct IngestMetrics {
  std::size_t accepted = 0;
  std::size_t rejected = 0;  // backpressure signals
  std::size_t published = 0;
  std::size_t flushes = 0;
  std::vector<double> latencies_ms;  // acceptance to visibility, per record

  double percentile_ms(double p) const;
};

class RealtimeIngestor {
 public:
  RealtimeIngestor(VersionedTable& table, IngestConfig config);
  ~RealtimeIngestor();
  RealtimeIngestor(const RealtimeIngestor&) = delete;
  RealtimeIngestor& operator=(const RealtimeIngestor&) = delete;

  // False means the queue is at capacity; the caller keeps the record and retries.
  bool try_submit(std::uint64_t key, std::vector<double> embedding);
  // Retries until accepted, sleeping briefly between attempts.
  void submit(std::uint64_t key, std::vector<double> embedding);

  // Drains everything, publishes, and joins the flusher.
  void stop();
  IngestMetrics metrics() const;

 private:
  using Clock = std::chrono::steady_clock;
  struct Pending {
    std::uint64_t key;
    std::vector<double> embedding;
    Clock::time_point accepted;
  };

  void run();
  void drain_and_flush();

  VersionedTable& table_;
  IngestConfig config_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::deque<Pending> queue_;
  bool stopping_ = false;
  IngestMetrics metrics_;
  std::mutex flush_mutex_;
  std::thread worker_;
};

}  // namespace mmrep
