#pragma once

// Contrastive post-training over simulated shards.
//
// A global batch holds P shard slices of B triplets. Each query's negatives
// are every item of the global fresh batch except its own positive, plus
// every queued item of the last k global batches. Queued items are constant
// snapshots and receive no gradient. Queries of other samples are never
// negatives. The loss is summed over MRL views and averaged over queries;
// one plain gradient-descent update is applied per step.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmrep/corpus.hpp"
#include "mmrep/curation.hpp"
#include "mmrep/encoder.hpp"
#include "mmrep/negative_pool.hpp"

namespace mmrep {

enum class TrainStage { kInfoNce, kCircle };

std::string_view to_string(TrainStage stage);
TrainStage parse_stage(std::string_view text);

struct TrainerConfig {
  std::size_t batch_per_shard = 8;
  std::size_t shards = 4;
  std::size_t queue_depth = 5;
  double tau = 0.05;
  TrainStage stage = TrainStage::kCircle;
  MrlConfig mrl;  // empty means MrlConfig::defaults(d_full)
  std::size_t steps = 500;
  double learning_rate = 0.05;
  std::uint64_t seed = 7;
  bool use_hard_negatives = true;
  // Enumerates every query's pool and checks the size identity each step.
  bool check_pool_identity = false;
  // Where to write the parameters if a step diverges; empty disables.
  std::string divergence_dump;

  std::size_t global_batch() const { return batch_per_shard * shards; }
  void validate() const;
};

struct LossReport {
  std::uint64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t negatives_used = 0;  // per query
  double positive_similarity = 0.0;
  double hard_negative_similarity = 0.0;  // NaN-free: 0 when no hard negatives
};

class Trainer {
 public:
  Trainer(TrainerConfig config, EncoderParams initial, const Corpus& corpus);

  // Runs one step on exactly global_batch() triplets, shard-major order.
  LossReport step(std::span<const TrainingTriplet> global_batch);

  const EncoderParams& params() const noexcept { return params_; }
  const NegativePool& pool() const noexcept { return pool_; }
  const TrainerConfig& config() const noexcept { return config_; }
  std::uint64_t steps_done() const noexcept { return step_; }
  // Replaces the parameters and keeps the queue, e.g. for finite differences.
  void set_params(EncoderParams params);

  // Loss and gradient without updating parameters or the queue.
  double evaluate(std::span<const TrainingTriplet> global_batch, EncoderParams* grads);

 private:
  double run(std::span<const TrainingTriplet> batch, EncoderParams& grads, LossReport& report, bool commit);

  TrainerConfig config_;
  EncoderParams params_;
  const Corpus& corpus_;
  NegativePool pool_;
  std::uint64_t step_ = 0;
};

// Deterministic epoch-shuffled batches of global_batch() triplet indices.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t n_triplets, std::size_t global_batch, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t n_;
  std::size_t batch_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
};

struct TrainOutcome {
  EncoderParams params;
  std::vector<LossReport> curve;
  std::vector<std::string> warnings;
};

using StepCallback = std::function<void(std::uint64_t step, const EncoderParams& params)>;

TrainOutcome train(const TrainerConfig& config, const std::vector<TrainingTriplet>& triplets, const Corpus& corpus,
                   EncoderParams initial, const StepCallback& on_step = {});

// "step,loss,grad_norm,negatives,positive_sim,hard_negative_sim"
void write_loss_curve(const std::string& path, const std::vector<LossReport>& curve);

}  // namespace mmrep
