#include "mmrep/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mmrep/errors.hpp"
#include "mmrep/losses.hpp"
#include "mmrep/random.hpp"

namespace mmrep {

std::string_view to_string(TrainStage stage) {
  return stage == TrainStage::kInfoNce ? "infonce" : "circle";
}

TrainStage parse_stage(std::string_view text) {
  if (text == "infonce" || text == "1") return TrainStage::kInfoNce;
  if (text == "circle" || text == "2") return TrainStage::kCircle;
  fail(ErrorCategory::kContract, "unknown training stage: " + std::string(text));
}

void TrainerConfig::validate() const {
  require(batch_per_shard >= 2, "trainer: batch_per_shard must be >= 2");
  require(shards >= 1, "trainer: shards must be >= 1");
  require(tau > 0.0 && std::isfinite(tau), "trainer: tau must be positive");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "trainer: learning rate must be positive");
}

namespace {

struct ViewSet {
  Eigen::MatrixXd v;       // m x n, unit columns (zero when the prefix is zero)
  Eigen::VectorXd norms;   // prefix norms
};

template <typename Get>
ViewSet prefix_views(std::size_t n, int m, Get&& get) {
  ViewSet out{Eigen::MatrixXd(m, static_cast<Eigen::Index>(n)), Eigen::VectorXd(static_cast<Eigen::Index>(n))};
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd& e = get(i);
    const auto head = e.head(m);
    const double nrm = head.norm();
    const auto c = static_cast<Eigen::Index>(i);
    out.norms(c) = nrm;
    if (nrm > 0.0) {
      out.v.col(c) = head / nrm;
    } else {
      out.v.col(c).setZero();
    }
  }
  return out;
}

// Gradient through v = p / |p| restricted to the first m components.
void add_view_grad(Eigen::VectorXd& full_grad, const Eigen::VectorXd& v, double norm, const Eigen::VectorXd& g) {
  const int m = static_cast<int>(v.size());
  full_grad.head(m) += (g - v * v.dot(g)) / norm;
}

double params_norm_sq(const EncoderParams& p) {
  double s = 0.0;
  p.for_each_block([&](const double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) s += d[i] * d[i];
  });
  return s;
}

}  // namespace

Trainer::Trainer(TrainerConfig config, EncoderParams initial, const Corpus& corpus)
    : config_(std::move(config)),
      params_(std::move(initial)),
      corpus_(corpus),
      pool_(config_.batch_per_shard, config_.shards, config_.queue_depth) {
  config_.validate();
  if (config_.mrl.dims.empty()) config_.mrl = MrlConfig::defaults(params_.dims.d_full);
  config_.mrl.validate(params_.dims.d_full);
}

double Trainer::run(std::span<const TrainingTriplet> batch, EncoderParams& grads, LossReport& report, bool commit) {
  const std::size_t B = config_.batch_per_shard;
  const std::size_t G = config_.global_batch();
  require(batch.size() == G, "trainer: batch size must equal batch_per_shard * shards");
  const bool hard = config_.stage == TrainStage::kCircle && config_.use_hard_negatives;

  pool_.begin_step(step_);
  std::vector<ForwardCache> qc(G);
  std::vector<ForwardCache> ic;
  ic.reserve(2 * G);
  std::vector<std::size_t> pos_col(G);
  std::size_t with_hard = 0;
  double pos_sim = 0.0;
  double hard_sim = 0.0;

  for (std::size_t idx = 0; idx < G; ++idx) {
    const auto shard = static_cast<std::uint32_t>(idx / B);
    const auto sample = static_cast<std::uint32_t>(idx % B);
    const TrainingTriplet& t = batch[idx];
    qc[idx] = forward(params_, render_query(corpus_.query(t.query_id)));
    ic.push_back(forward(params_, render_item(corpus_.product(t.positive), t.view, corpus_.config,
                                              std::span<const SkuId>(t.positive_skus))));
    pos_col[idx] = pool_.add_fresh(PoolTag{step_, shard, sample, PoolRole::kPositive}, ic.back().output);
    pos_sim += qc[idx].output.dot(ic.back().output);
    if (hard && t.hard_negative) {
      ic.push_back(forward(params_, render_item(corpus_.product(*t.hard_negative), t.view, corpus_.config)));
      pool_.add_fresh(PoolTag{step_, shard, sample, PoolRole::kHardNegative}, ic.back().output);
      hard_sim += qc[idx].output.dot(ic.back().output);
      ++with_hard;
    }
  }

  const std::size_t nf = pool_.fresh().size();
  const std::size_t ns = pool_.stale_size();
  const std::size_t n_neg = nf - 1 + ns;

  if (config_.check_pool_identity) {
    const bool full_queue = pool_.stale_batches() == config_.queue_depth;
    const bool uniform_hard = !hard || with_hard == G;
    for (std::size_t idx = 0; idx < G; ++idx) {
      const std::size_t count = pool_.count_negatives(static_cast<std::uint32_t>(idx / B),
                                                      static_cast<std::uint32_t>(idx % B));
      if (count != n_neg) fail(ErrorCategory::kContract, "trainer: negative pool enumeration mismatch");
      if (full_queue && uniform_hard &&
          count != NegativePool::expected_negatives(B, config_.shards, config_.queue_depth, hard)) {
        fail(ErrorCategory::kContract, "trainer: negative pool size identity violated");
      }
    }
  }

  const int d_full = params_.dims.d_full;
  std::vector<Eigen::VectorXd> gq(G, Eigen::VectorXd::Zero(d_full));
  std::vector<Eigen::VectorXd> gi(nf, Eigen::VectorXd::Zero(d_full));
  std::vector<const Eigen::VectorXd*> stale_ptr;
  stale_ptr.reserve(ns);
  pool_.for_each_stale([&](std::size_t, const PoolEntry& e) { stale_ptr.push_back(&e.embedding); });

  double total = 0.0;
  const double inv_g = 1.0 / static_cast<double>(G);
  Eigen::MatrixXd negatives;
  std::vector<std::size_t> neg_fresh;  // fresh index per negative column, or npos for stale
  constexpr std::size_t kStale = static_cast<std::size_t>(-1);

  for (std::size_t vi = 0; vi < config_.mrl.dims.size(); ++vi) {
    const int m = config_.mrl.dims[vi];
    const double w = config_.mrl.weights[vi] * inv_g;
    const ViewSet q = prefix_views(G, m, [&](std::size_t i) -> const Eigen::VectorXd& { return qc[i].output; });
    const ViewSet f =
        prefix_views(nf, m, [&](std::size_t i) -> const Eigen::VectorXd& { return pool_.fresh()[i].embedding; });
    const ViewSet s = prefix_views(ns, m, [&](std::size_t i) -> const Eigen::VectorXd& { return *stale_ptr[i]; });

    negatives.resize(m, static_cast<Eigen::Index>(n_neg));
    neg_fresh.resize(n_neg);
    for (std::size_t idx = 0; idx < G; ++idx) {
      const auto qi = static_cast<Eigen::Index>(idx);
      const auto pi = static_cast<Eigen::Index>(pos_col[idx]);
      if (q.norms(qi) == 0.0 || f.norms(pi) == 0.0) continue;  // degenerate view: no term
      Eigen::Index c = 0;
      pool_.for_each_negative(static_cast<std::uint32_t>(idx / B), static_cast<std::uint32_t>(idx % B),
                              [&](const PoolRef& r) {
                                const auto j = static_cast<Eigen::Index>(r.index);
                                negatives.col(c) = r.fresh ? f.v.col(j) : s.v.col(j);
                                neg_fresh[static_cast<std::size_t>(c)] = r.fresh ? r.index : kStale;
                                ++c;
                              });
      const Eigen::VectorXd qv = q.v.col(qi);
      const Eigen::VectorXd pv = f.v.col(pi);
      const LossResult lr = config_.stage == TrainStage::kInfoNce ? infonce_loss(qv, pv, negatives, config_.tau)
                                                                  : circle_loss(qv, pv, negatives, config_.tau);
      total += w * lr.loss;
      add_view_grad(gq[idx], qv, q.norms(qi), w * lr.grad_query);
      add_view_grad(gi[pos_col[idx]], pv, f.norms(pi), w * lr.grad_positive);
      for (Eigen::Index col = 0; col < c; ++col) {
        const std::size_t j = neg_fresh[static_cast<std::size_t>(col)];
        if (j == kStale) continue;
        const auto jj = static_cast<Eigen::Index>(j);
        if (f.norms(jj) == 0.0) continue;
        add_view_grad(gi[j], f.v.col(jj), f.norms(jj), w * lr.grad_negatives.col(col));
      }
    }
  }

  for (std::size_t idx = 0; idx < G; ++idx) backward(params_, qc[idx], gq[idx], grads);
  for (std::size_t j = 0; j < nf; ++j) backward(params_, ic[j], gi[j], grads);

  report.step = step_;
  report.loss = total;
  report.grad_norm = std::sqrt(params_norm_sq(grads));
  report.negatives_used = n_neg;
  report.positive_similarity = pos_sim * inv_g;
  report.hard_negative_similarity = with_hard > 0 ? hard_sim / static_cast<double>(with_hard) : 0.0;

  if (commit) pool_.commit();
  return total;
}

void Trainer::set_params(EncoderParams params) {
  require(params.dims == params_.dims, "trainer: parameter dims differ");
  params_ = std::move(params);
}

double Trainer::evaluate(std::span<const TrainingTriplet> global_batch, EncoderParams* grads) {
  EncoderParams local = EncoderParams::zeros(params_.dims);
  LossReport report;
  const double loss = run(global_batch, local, report, false);
  if (grads != nullptr) *grads = std::move(local);
  return loss;
}

LossReport Trainer::step(std::span<const TrainingTriplet> global_batch) {
  EncoderParams grads = EncoderParams::zeros(params_.dims);
  LossReport report;
  const double loss = run(global_batch, grads, report, true);

  auto diverge = [&](const std::string& what) {
    if (!config_.divergence_dump.empty()) {
      try {
        save_checkpoint(params_, config_.divergence_dump);
      } catch (const Error&) {
        // the divergence is the error worth reporting
      }
    }
    fail(ErrorCategory::kDivergence, "training diverged at step " + std::to_string(step_) + ": " + what);
  };
  if (!std::isfinite(loss)) diverge("non-finite loss");
  if (!std::isfinite(report.grad_norm)) diverge("non-finite gradient");

  const double lr = config_.learning_rate;
  std::vector<std::pair<const double*, std::size_t>> g_blocks;
  grads.for_each_block([&](const double* p, std::size_t n) { g_blocks.emplace_back(p, n); });
  std::size_t b = 0;
  params_.for_each_block([&](double* p, std::size_t n) {
    const double* g = g_blocks[b++].first;
    for (std::size_t i = 0; i < n; ++i) p[i] -= lr * g[i];
  });
  if (!params_.all_finite()) diverge("non-finite parameters");
  ++step_;
  return report;
}

BatchSchedule::BatchSchedule(std::size_t n_triplets, std::size_t global_batch, std::uint64_t seed)
    : n_(n_triplets), batch_(global_batch), seed_(seed) {
  require(global_batch >= 1, "batch schedule: empty batch");
  require(n_triplets >= global_batch, "batch schedule: fewer triplets than one global batch");
  order_.resize(n_);
  cursor_ = n_;  // forces a shuffle on first use
}

std::vector<std::size_t> BatchSchedule::next() {
  if (cursor_ + batch_ > n_) {
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    Rng rng = Rng::derive(seed_, 1000 + epoch_++);
    rng.shuffle(order_);
    cursor_ = 0;
  }
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

TrainOutcome train(const TrainerConfig& config, const std::vector<TrainingTriplet>& triplets, const Corpus& corpus,
                   EncoderParams initial, const StepCallback& on_step) {
  TrainOutcome out;
  if (config.stage == TrainStage::kCircle && config.use_hard_negatives && !triplets.empty()) {
    std::size_t have = 0;
    for (const auto& t : triplets) have += t.hard_negative.has_value() ? 1 : 0;
    const double share = static_cast<double>(have) / static_cast<double>(triplets.size());
    if (share < 0.9) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "only %.1f%% of triplets carry a hard negative", 100.0 * share);
      out.warnings.emplace_back(buf);
    }
  }
  Trainer trainer(config, std::move(initial), corpus);
  BatchSchedule schedule(triplets.size(), config.global_batch(), config.seed);
  std::vector<TrainingTriplet> batch(config.global_batch());
  out.curve.reserve(config.steps);
  for (std::size_t s = 0; s < config.steps; ++s) {
    const auto idx = schedule.next();
    for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = triplets[idx[i]];
    out.curve.push_back(trainer.step(batch));
    if (on_step) on_step(trainer.steps_done(), trainer.params());
  }
  out.params = trainer.params();
  return out;
}

void write_loss_curve(const std::string& path, const std::vector<LossReport>& curve) {
  std::ofstream f(path);
  if (!f) fail(ErrorCategory::kIo, "cannot write loss curve: " + path);
  f << "step,loss,grad_norm,negatives,positive_sim,hard_negative_sim\n";
  char buf[256];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%zu,%.6f,%.6f\n", static_cast<unsigned long long>(r.step), r.loss,
                  r.grad_norm, r.negatives_used, r.positive_similarity, r.hard_negative_similarity);
    f << buf;
  }
  if (!f) fail(ErrorCategory::kIo, "write failed: " + path);
}

}  // namespace mmrep
