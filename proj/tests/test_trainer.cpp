#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "mmrep/errors.hpp"
#include "mmrep/losses.hpp"
#include "mmrep/negative_pool.hpp"
#include "mmrep/pipeline.hpp"
#include "mmrep/random.hpp"
#include "mmrep/trainer.hpp"

using namespace mmrep;
namespace fs = std::filesystem;

namespace {

Eigen::VectorXd unit(std::initializer_list<double> v) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v) x[i++] = d;
  return x / x.norm();
}

Eigen::VectorXd random_unit(Rng& rng, int d) {
  Eigen::VectorXd x(d);
  for (int i = 0; i < d; ++i) x[i] = rng.normal();
  return x / x.norm();
}

using LossFn = LossResult (*)(const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::MatrixXd&, double);

// Central differences over every input coordinate, treated as free reals.
void check_loss_gradient(LossFn fn, std::uint64_t seed) {
  Rng rng(seed);
  const int d = 6;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd q = random_unit(rng, d), p = random_unit(rng, d);
    Eigen::MatrixXd n(d, 4);
    for (int j = 0; j < 4; ++j) n.col(j) = random_unit(rng, d);
    const double tau = rng.uniform(0.1, 1.0);
    const LossResult r = fn(q, p, n, tau);
    const double h = 1e-6;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); };
    for (int i = 0; i < d; ++i) {
      Eigen::VectorXd qp = q, qm = q, pp = p, pm = p;
      qp[i] += h;
      qm[i] -= h;
      pp[i] += h;
      pm[i] -= h;
      EXPECT_LE(rel((fn(qp, p, n, tau).loss - fn(qm, p, n, tau).loss) / (2 * h), r.grad_query[i]), 1e-4);
      EXPECT_LE(rel((fn(q, pp, n, tau).loss - fn(q, pm, n, tau).loss) / (2 * h), r.grad_positive[i]), 1e-4);
      for (int j = 0; j < 4; ++j) {
        Eigen::MatrixXd np = n, nm = n;
        np(i, j) += h;
        nm(i, j) -= h;
        EXPECT_LE(rel((fn(q, p, np, tau).loss - fn(q, p, nm, tau).loss) / (2 * h), r.grad_negatives(i, j)), 1e-4);
      }
    }
  }
}

// Hand-built corpus where every product and query owns private tokens.
Corpus private_token_corpus(std::size_t n) {
  Corpus c;
  c.config.categories = 2;
  c.config.category_families = 0;
  c.config.n_attributes = 4;
  c.config.n_words = static_cast<int>(4 * n);
  c.config.image_dim = 3;
  const TokenId w = c.config.word_begin();
  for (std::size_t i = 0; i < n; ++i) {
    CorpusRecord p;
    p.product_id = i;
    p.leaf_category = static_cast<int>(i % 2);
    p.popularity = 1;
    p.title_tokens = {w + static_cast<TokenId>(2 * i), w + static_cast<TokenId>(2 * i + 1)};
    p.skus = {{i, {1.0, static_cast<double>(i), -1.0}}};
    c.products.push_back(p);
    QueryRecord q;
    q.query_id = i;
    q.modality = QueryModality::kText;
    q.intent_category = p.leaf_category;
    q.text_tokens = {w + static_cast<TokenId>(2 * n + 2 * i), w + static_cast<TokenId>(2 * n + 2 * i + 1)};
    c.queries.push_back(q);
  }
  c.reindex();
  return c;
}

std::vector<TrainingTriplet> diagonal_triplets(std::size_t n, ItemView view, bool hard) {
  std::vector<TrainingTriplet> out;
  for (std::size_t i = 0; i < n; ++i) {
    TrainingTriplet t;
    t.query_id = i;
    t.positive = i;
    t.view = view;
    if (hard) t.hard_negative = (i + 2) % n;
    out.push_back(t);
  }
  return out;
}

EncoderParams small_params(const Corpus& c, std::uint64_t seed) {
  return EncoderParams::init(dims_for(c.config, 6, 10, 12), seed);
}

TrainerConfig small_trainer(TrainStage stage, std::size_t B, std::size_t P, std::size_t k) {
  TrainerConfig t;
  t.stage = stage;
  t.batch_per_shard = B;
  t.shards = P;
  t.queue_depth = k;
  t.tau = 0.5;
  t.learning_rate = 0.1;
  t.mrl = MrlConfig{{6, 12}, {1.0, 0.5}};
  return t;
}

PipelineConfig small_pipeline() {
  PipelineConfig c;
  c.corpus.n_products = 1500;
  c.corpus.n_queries = 500;
  c.corpus.categories = 15;
  c.corpus.category_families = 3;
  c.interactions.n_pairs = 20000;
  c.stage1.steps = 60;
  c.stage2.steps = 60;
  c.set_seed(7);
  return c;
}

}  // namespace

TEST(InfoNce, Examples) {
  const Eigen::MatrixXd none(3, 0);
  EXPECT_DOUBLE_EQ(infonce_loss(unit({1, 0, 0}), unit({1, 0, 0}), none, 0.1).loss, 0.0);

  Eigen::MatrixXd same(3, 1);
  same.col(0) = unit({0, 1, 1});
  for (double tau : {0.05, 0.5, 2.0}) {
    // q.p == q.n == 0
    EXPECT_NEAR(infonce_loss(unit({1, 0, 0}), unit({0, 1, 0}), same, tau).loss, std::log(2.0), 1e-9);
  }
  Eigen::MatrixXd orth(3, 1);
  orth.col(0) = unit({0, 1, 0});
  EXPECT_NEAR(infonce_loss(unit({1, 0, 0}), unit({1, 0, 0}), orth, 1.0).loss, 0.313262, 1e-6);
  EXPECT_NEAR(infonce_loss(unit({1, 0, 0}), unit({1, 0, 0}), orth, 1.0).loss, std::log1p(std::exp(-1.0)), 1e-12);
}

TEST(Circle, Examples) {
  const Eigen::MatrixXd none(3, 0);
  EXPECT_NEAR(circle_loss(unit({1, 0, 0}), unit({1, 0, 0}), none, 1.0).loss, 0.313262, 1e-6);
  Eigen::MatrixXd orth(3, 1);
  orth.col(0) = unit({0, 0, 1});
  EXPECT_NEAR(circle_loss(unit({1, 0, 0}), unit({0, 1, 0}), orth, 1.0).loss, 1.386294, 1e-6);
  EXPECT_NEAR(circle_loss(unit({1, 0, 0}), unit({0, 1, 0}), orth, 1.0).loss, 2 * std::log(2.0), 1e-12);
}

TEST(Circle, DecreasesAsPositiveSimilarityRises) {
  Eigen::MatrixXd neg(2, 1);
  neg.col(0) = unit({0, 1});
  double prev = INFINITY;
  for (int i = 0; i <= 100; ++i) {
    const double a = M_PI * (1.0 - i / 100.0);
    Eigen::VectorXd p(2);
    p << std::cos(a), std::sin(a);
    // Only the positive moves; the query stays fixed.
    const double l = circle_loss(unit({1, 0}), p, neg, 0.3).loss;
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(Softplus, StableAtExtremes) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
  EXPECT_GT(softplus(-800.0), -1e-300);
  EXPECT_TRUE(std::isfinite(softplus(-800.0)));
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  check_loss_gradient(&infonce_loss, 1);
  check_loss_gradient(&circle_loss, 2);
}

TEST(Pool, CountExamples) {
  EXPECT_EQ(NegativePool::expected_negatives(2, 1, 0, true), 3u);
  EXPECT_EQ(NegativePool::expected_negatives(2, 2, 1, true), 15u);
  EXPECT_EQ(NegativePool::expected_negatives(128, 64, 10, true), 180223u);
  EXPECT_EQ(NegativePool::expected_negatives(8, 4, 5, false), 191u);
}

TEST(Pool, EnumerationMatchesIdentity) {
  // Fill the pool by hand for several configurations and enumerate tags.
  for (std::size_t B : {2u, 3u}) {
    for (std::size_t P : {1u, 2u, 4u}) {
      for (std::size_t k : {0u, 1u, 3u}) {
        NegativePool pool(B, P, k);
        for (std::uint64_t step = 0; step < k + 2; ++step) {
          pool.begin_step(step);
          for (std::uint32_t s = 0; s < P; ++s) {
            for (std::uint32_t i = 0; i < B; ++i) {
              pool.add_fresh({step, s, i, PoolRole::kPositive});
              pool.add_fresh({step, s, i, PoolRole::kHardNegative});
            }
          }
          const std::size_t kk = std::min<std::size_t>(k, step);
          for (std::uint32_t s = 0; s < P; ++s) {
            for (std::uint32_t i = 0; i < B; ++i) {
              std::size_t own_hard = 0, own_positive = 0, stale = 0;
              for (const PoolRef& r : pool.negatives_for(s, i)) {
                if (!r.fresh) {
                  ++stale;
                  continue;
                }
                const PoolTag& t = pool.fresh()[r.index].tag;
                if (t.shard == s && t.sample == i) {
                  (t.role == PoolRole::kHardNegative ? own_hard : own_positive) += 1;
                }
              }
              EXPECT_EQ(own_positive, 0u);
              EXPECT_EQ(own_hard, 1u);  // own hard negative stays a negative
              EXPECT_EQ(stale, 2 * B * P * kk);
              EXPECT_EQ(pool.count_negatives(s, i), NegativePool::expected_negatives(B, P, kk, true));
            }
          }
          pool.commit();
        }
        EXPECT_LE(pool.stale_size(), 2 * B * P * k);
      }
    }
  }
}

TEST(Pool, MissingHardNegativesReduceCounts) {
  NegativePool pool(2, 2, 1);
  std::size_t missing_prev = 0;
  for (std::uint64_t step = 0; step < 3; ++step) {
    pool.begin_step(step);
    std::size_t missing = 0;
    for (std::uint32_t s = 0; s < 2; ++s) {
      for (std::uint32_t i = 0; i < 2; ++i) {
        pool.add_fresh({step, s, i, PoolRole::kPositive});
        if ((s + i + step) % 3 == 0) {
          ++missing;
        } else {
          pool.add_fresh({step, s, i, PoolRole::kHardNegative});
        }
      }
    }
    const std::size_t kk = std::min<std::size_t>(1, step);
    const std::size_t full = NegativePool::expected_negatives(2, 2, kk, true);
    EXPECT_EQ(pool.count_negatives(0, 0), full - missing - (kk ? missing_prev : 0));
    missing_prev = missing;
    pool.commit();
  }
}

TEST(Trainer, ReportsPoolSizeAndChecksIdentity) {
  const Corpus c = private_token_corpus(16);
  {
    TrainerConfig cfg = small_trainer(TrainStage::kCircle, 2, 1, 0);
    cfg.check_pool_identity = true;
    Trainer t(cfg, small_params(c, 1), c);
    const auto trip = diagonal_triplets(16, ItemView::kTitleImage, true);
    EXPECT_EQ(t.step(std::span(trip).first(2)).negatives_used, 3u);
  }
  {
    TrainerConfig cfg = small_trainer(TrainStage::kCircle, 2, 2, 1);
    cfg.check_pool_identity = true;
    Trainer t(cfg, small_params(c, 1), c);
    const auto trip = diagonal_triplets(16, ItemView::kTitleImage, true);
    EXPECT_EQ(t.step(std::span(trip).subspan(0, 4)).negatives_used, 7u);
    EXPECT_EQ(t.step(std::span(trip).subspan(4, 4)).negatives_used, 15u);
    EXPECT_EQ(t.step(std::span(trip).subspan(8, 4)).negatives_used, 15u);
  }
  {
    // Stage one carries no hard negatives: B*P*(k+1) - 1.
    TrainerConfig cfg = small_trainer(TrainStage::kInfoNce, 2, 2, 1);
    cfg.check_pool_identity = true;
    Trainer t(cfg, small_params(c, 1), c);
    const auto trip = diagonal_triplets(16, ItemView::kTitleImage, true);
    t.step(std::span(trip).subspan(0, 4));
    EXPECT_EQ(t.step(std::span(trip).subspan(4, 4)).negatives_used, 7u);
  }
}

TEST(Trainer, QueueEntriesReceiveNoGradient) {
  const Corpus c = private_token_corpus(8);
  const auto trip = diagonal_triplets(8, ItemView::kRicherText, false);
  TrainerConfig cfg = small_trainer(TrainStage::kInfoNce, 2, 1, 1);
  Trainer t(cfg, small_params(c, 3), c);
  t.step(std::span(trip).subspan(0, 2));
  ASSERT_EQ(t.pool().stale_size(), 2u);
  const EncoderParams before = t.params();

  // The queued items of products 0 and 1 are negatives of this step.
  EncoderParams grads;
  const double with_queue = t.evaluate(std::span(trip).subspan(2, 2), &grads);
  TrainerConfig no_queue = cfg;
  no_queue.queue_depth = 0;
  Trainer fresh_only(no_queue, before, c);
  EXPECT_NE(with_queue, fresh_only.evaluate(std::span(trip).subspan(2, 2), nullptr));

  t.step(std::span(trip).subspan(2, 2));
  for (ProductId p : {0u, 1u}) {
    for (TokenId tok : c.product(p).title_tokens) {
      EXPECT_EQ(t.params().token_table.col(tok), before.token_table.col(tok));
      EXPECT_EQ(grads.token_table.col(tok).norm(), 0.0);
    }
    for (TokenId tok : c.query(p).text_tokens) EXPECT_EQ(t.params().token_table.col(tok), before.token_table.col(tok));
  }
  // Sanity: fresh items did move.
  EXPECT_NE(t.params().token_table.col(c.product(2).title_tokens[0]),
            before.token_table.col(c.product(2).title_tokens[0]));
}

TEST(Trainer, ShardRelabelingLeavesLossUnchanged) {
  const Corpus c = private_token_corpus(24);
  const auto trip = diagonal_triplets(24, ItemView::kTitleImage, true);
  for (TrainStage stage : {TrainStage::kInfoNce, TrainStage::kCircle}) {
    const TrainerConfig cfg = small_trainer(stage, 2, 3, 1);
    const EncoderParams init = small_params(c, 5);
    Trainer a(cfg, init, c), b(cfg, init, c);
    // Same warm-up batch, then the same slices in a different shard order.
    std::vector<TrainingTriplet> warm(trip.begin(), trip.begin() + 6);
    std::vector<TrainingTriplet> batch(trip.begin() + 6, trip.begin() + 12);
    std::vector<TrainingTriplet> relabeled;
    for (std::size_t s : {2u, 0u, 1u}) relabeled.insert(relabeled.end(), batch.begin() + 2 * s, batch.begin() + 2 * s + 2);
    a.step(warm);
    b.step(warm);
    EncoderParams ga, gb;
    const double la = a.evaluate(batch, &ga), lb = b.evaluate(relabeled, &gb);
    EXPECT_NEAR(la, lb, 1e-12 * std::abs(la));
    EXPECT_LE((ga.w1 - gb.w1).norm(), 1e-10 * ga.w1.norm());
    EXPECT_LE((ga.token_table - gb.token_table).norm(), 1e-10 * ga.token_table.norm());
  }
}

TEST(Trainer, StepGradientMatchesFiniteDifferences) {
  const Corpus c = private_token_corpus(12);
  const auto trip = diagonal_triplets(12, ItemView::kTitleImage, true);
  for (TrainStage stage : {TrainStage::kInfoNce, TrainStage::kCircle}) {
    const TrainerConfig cfg = small_trainer(stage, 2, 2, 1);
    Trainer t(cfg, small_params(c, 8), c);
    t.step(std::span(trip).subspan(0, 4));  // fills the queue
    const auto batch = std::span(trip).subspan(4, 4);
    EncoderParams grads;
    t.evaluate(batch, &grads);
    const EncoderParams base = t.params();
    Rng rng(static_cast<std::uint64_t>(stage) + 10);
    int checked = 0;
    for (int i = 0; i < 100; ++i) {
      const std::size_t idx = rng.below(base.parameter_count());
      const double h = 1e-6;
      EncoderParams p = base;
      p.at(idx) += h;
      t.set_params(p);
      const double up = t.evaluate(batch, nullptr);
      p.at(idx) -= 2 * h;
      t.set_params(p);
      const double dn = t.evaluate(batch, nullptr);
      const double fd = (up - dn) / (2 * h);
      const double an = grads.at(idx);
      if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) continue;  // tokens absent from the batch
      ++checked;
      EXPECT_LE(std::abs(fd - an) / std::max(std::abs(fd), std::abs(an)), 1e-4) << "index " << idx;
    }
    t.set_params(base);
    EXPECT_GT(checked, 30);
  }
}

TEST(Trainer, SameSeedGivesIdenticalCheckpoints) {
  const PipelineConfig pc = small_pipeline();
  const PipelineData data = prepare_data(pc);
  const auto trip = interaction_triplets(data.corpus, data.interactions);
  TrainerConfig cfg = pc.stage1;
  cfg.steps = 30;
  const fs::path dir = fs::temp_directory_path() / "mmrep_trainer_det";
  fs::create_directories(dir);
  const auto a = train(cfg, trip, data.corpus, initial_encoder(pc, data));
  const auto b = train(cfg, trip, data.corpus, initial_encoder(pc, data));
  save_checkpoint(a.params, (dir / "a.ckpt").string());
  save_checkpoint(b.params, (dir / "b.ckpt").string());
  EXPECT_EQ(hash_file((dir / "a.ckpt").string()), hash_file((dir / "b.ckpt").string()));
  cfg.seed += 1;
  const auto d = train(cfg, trip, data.corpus, initial_encoder(pc, data));
  save_checkpoint(d.params, (dir / "d.ckpt").string());
  EXPECT_NE(hash_file((dir / "a.ckpt").string()), hash_file((dir / "d.ckpt").string()));
}

TEST(Trainer, InfoNceLossFallsOnDefaultCorpus) {
  PipelineConfig pc;  // default corpus
  const PipelineData data = prepare_data(pc);
  const auto trip = interaction_triplets(data.corpus, data.interactions);
  TrainerConfig cfg = pc.stage1;
  cfg.steps = 200;
  ASSERT_EQ(cfg.stage, TrainStage::kInfoNce);
  const auto out = train(cfg, trip, data.corpus, initial_encoder(pc, data));
  ASSERT_EQ(out.curve.size(), 200u);
  double tail = 0;
  for (std::size_t i = 180; i < 200; ++i) tail += out.curve[i].loss;
  EXPECT_LT(tail / 20.0, out.curve[0].loss);
}

TEST(Trainer, HardNegativesImproveHeldOutRecall) {
  PipelineConfig pc;
  const PipelineData data = prepare_data(pc);
  auto recall_with = [&](bool hard) {
    PipelineConfig cfg = pc;
    cfg.stage2.use_hard_negatives = hard;
    const EncoderRun run = train_encoder(cfg, data);
    const auto held = held_out_queries(data.corpus, cfg.seed, cfg.held_out_fraction, QueryModality::kImage);
    const auto cands = candidates_from_encoder(run.final_params, data.corpus, cfg.export_view);
    return eval_recall(run.final_params, cands, data.corpus, held).recall_at(1);
  };
  const double with = recall_with(true), without = recall_with(false);
  RecordProperty("recall_with_hard", std::to_string(with));
  RecordProperty("recall_without_hard", std::to_string(without));
  EXPECT_GT(with, without);
}

TEST(Trainer, WarnsWhenHardNegativesAreScarce) {
  const Corpus c = private_token_corpus(16);
  auto trip = diagonal_triplets(16, ItemView::kTitleImage, true);
  for (std::size_t i = 0; i < 4; ++i) trip[i].hard_negative.reset();
  TrainerConfig cfg = small_trainer(TrainStage::kCircle, 2, 2, 1);
  cfg.steps = 2;
  EXPECT_EQ(train(cfg, trip, c, small_params(c, 1)).warnings.size(), 1u);
  trip[0].hard_negative = 3;
  trip[1].hard_negative = 3;
  trip[2].hard_negative = 3;
  EXPECT_TRUE(train(cfg, trip, c, small_params(c, 1)).warnings.empty());
}

TEST(Trainer, DivergenceIsReportedWithDump) {
  const Corpus c = private_token_corpus(8);
  const auto trip = diagonal_triplets(8, ItemView::kTitleImage, false);
  TrainerConfig cfg = small_trainer(TrainStage::kInfoNce, 2, 1, 0);
  const fs::path dump = fs::temp_directory_path() / "mmrep_diverged.ckpt";
  fs::remove(dump);
  cfg.divergence_dump = dump.string();
  EncoderParams p = small_params(c, 1);
  p.image_proj(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Trainer t(cfg, p, c);
  try {
    t.step(std::span(trip).first(2));
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::kDivergence);
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
  EXPECT_TRUE(fs::exists(dump));
}

TEST(Trainer, ConfigValidation) {
  TrainerConfig cfg;
  cfg.batch_per_shard = 1;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainerConfig{};
  cfg.shards = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainerConfig{};
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_NO_THROW(TrainerConfig{}.validate());
}

TEST(BatchSchedule, CoversEveryTripletEachEpoch) {
  BatchSchedule s(10, 3, 4);
  std::vector<int> seen(10, 0);
  for (int i = 0; i < 3; ++i) {
    for (std::size_t j : s.next()) ++seen[j];
  }
  for (int v : seen) EXPECT_LE(v, 1);
  EXPECT_EQ(std::accumulate(seen.begin(), seen.end(), 0), 9);
}
