#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "mmrep/errors.hpp"
#include "mmrep/numerics.hpp"
#include "mmrep/random.hpp"

using namespace mmrep;

namespace {

ErrorCategory category_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.category();
  }
  ADD_FAILURE() << "expected an mmrep::Error";
  return ErrorCategory::kContract;
}

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

TEST(Cosine, Examples) {
  const std::vector<double> a{1, 0}, b{0, 1}, c{1, 1};
  EXPECT_DOUBLE_EQ(cosine_similarity(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_NEAR(cosine_similarity(c, a), 1.0 / std::sqrt(2.0), 1e-9);
}

TEST(Cosine, Errors) {
  const std::vector<double> a{1, 0}, z{0, 0}, three{1, 2, 3};
  EXPECT_EQ(category_of([&] { cosine_similarity(a, z); }), ErrorCategory::kZeroVector);
  EXPECT_EQ(category_of([&] { cosine_similarity(a, three); }), ErrorCategory::kContract);
}

TEST(Cosine, SelfIsOneAndSymmetric) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_vector(rng, 17, std::exp(rng.uniform(-5, 5)));
    const auto b = random_vector(rng, 17);
    EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-9);
    EXPECT_EQ(cosine_similarity(a, b), cosine_similarity(b, a));
    const double c = cosine_similarity(a, b);
    EXPECT_LE(std::abs(c), 1.0);
  }
}

TEST(Embedding, ValidateAndUnit) {
  Embedding ok({0.6, 0.8}, true);
  EXPECT_NO_THROW(ok.validate());
  Embedding liar({1.0, 1.0}, true);
  EXPECT_EQ(category_of([&] { liar.validate(); }), ErrorCategory::kContract);
  Embedding nan({std::nan(""), 1.0});
  EXPECT_EQ(category_of([&] { nan.validate(); }), ErrorCategory::kContract);
  const std::vector<double> v{3, 4};
  const Embedding u = Embedding::unit(v);
  EXPECT_TRUE(u.normalized);
  EXPECT_NEAR(u.values[0], 0.6, 1e-12);
  const std::vector<double> z{0, 0};
  EXPECT_EQ(category_of([&] { Embedding::unit(z); }), ErrorCategory::kZeroVector);
}

TEST(Quantize, Examples) {
  const auto zero = quantize(std::vector<double>{0, 0, 0});
  EXPECT_EQ(zero.scale, 1.0f);
  EXPECT_EQ(zero.codes, (std::vector<std::int8_t>{0, 0, 0}));

  const auto q = quantize(std::vector<double>{1.27, -1.27});
  EXPECT_EQ(q.codes, (std::vector<std::int8_t>{127, -127}));
  EXPECT_NEAR(q.scale, 0.01, 1e-7);

  const auto h = quantize(std::vector<double>{0.5, -0.25});
  EXPECT_EQ(h.codes, (std::vector<std::int8_t>{127, -64}));
  EXPECT_NEAR(h.scale, 0.5 / 127, 1e-8);
}

TEST(Quantize, Dequantize) {
  QuantizedEmbedding q{0.01f, {127, -127}};
  const Embedding d = dequantize(q);
  EXPECT_NEAR(d.values[0], 1.27, 1e-6);
  EXPECT_NEAR(d.values[1], -1.27, 1e-6);
  const Embedding z = dequantize(QuantizedEmbedding{1.0f, {0, 0}});
  EXPECT_EQ(z.values, (std::vector<double>{0, 0}));

  const std::vector<double> v{0.3, 0.6, -0.9};
  const Embedding r = dequantize(quantize(v));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::abs(r.values[i] - v[i]), 0.9 / 254 + 1e-9);
}

TEST(Quantize, RoundTripBoundProperty) {
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const auto v = random_vector(rng, 1 + rng.below(64), std::exp(rng.uniform(-8, 4)));
    const auto q = quantize(v);
    const Embedding r = dequantize(q);
    for (std::size_t j = 0; j < v.size(); ++j) {
      EXPECT_GE(q.codes[j], -127);
      EXPECT_LE(std::abs(r.values[j] - v[j]), q.scale / 2.0 + 1e-12);
    }
  }
}

TEST(Quantize, RoundsHalfAwayFromZero) {
  // 0.5 / (1/127) style ties: values exactly at k + 0.5 code units.
  const auto q = quantize(std::vector<double>{127.0, 2.5, -2.5, 0.5});
  EXPECT_EQ(q.scale, 1.0f);
  EXPECT_EQ(q.codes, (std::vector<std::int8_t>{127, 3, -3, 1}));
}

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}), 0.5);
  // Pairs (0.8 vs 0.6) and (0.4 vs 0.6): one of two ordered correctly.
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.8, 0.6, 0.4}, std::vector<int>{1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{0.8, 0.6, 0.6}, std::vector<int>{1, 0, 1}), 0.75);
  EXPECT_EQ(category_of([] { auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}); }),
            ErrorCategory::kUndefinedMetric);
}

TEST(Auc, MatchesPairCountOracle) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.below(60);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(8));  // plenty of ties
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 1;
    y[1] = 0;
    double good = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (y[i] != 1 || y[j] != 0) continue;
        pairs += 1;
        good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
    EXPECT_NEAR(auc(s, y), good / pairs, 1e-12);
  }
}

TEST(Auc, InvariantUnderMonotoneMaps) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 10 + rng.below(100);
    std::vector<double> s(n), m(n);
    std::vector<int> y(n);
    const double a = rng.uniform(0.1, 3), b = rng.uniform(-2, 2);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.normal();
      y[i] = static_cast<int>(rng.below(2));
      m[i] = std::exp(a * s[i]) + std::atan(s[i]) + b;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_DOUBLE_EQ(auc(s, y), auc(m, y));
  }
}

TEST(Recall, Examples) {
  const std::vector<std::vector<ItemId>> r{{1, 2, 3}};
  const std::vector<std::unordered_set<ItemId>> rel{{1, 3}};
  EXPECT_NEAR(recall_at_k(r, rel, 3).value, 2.0 / 3.0, 1e-9);
  EXPECT_NEAR(recall_at_k(r, rel, 3, RecallMode::kHitRecall).value, 1.0, 1e-12);

  const std::vector<std::unordered_set<ItemId>> all{{1, 2, 3}};
  for (std::size_t k = 1; k <= 3; ++k) {
    EXPECT_DOUBLE_EQ(recall_at_k(r, all, k).value, 1.0);
  }
  EXPECT_DOUBLE_EQ(recall_at_k(r, all, 3, RecallMode::kHitRecall).value, 1.0);
}

TEST(Recall, SkipsEmptyRelevanceAndCountsShortListsAsMisses) {
  const std::vector<std::vector<ItemId>> r{{1}, {5, 6}};
  const std::vector<std::unordered_set<ItemId>> rel{{1}, {}};
  const auto m = recall_at_k(r, rel, 2);
  EXPECT_EQ(m.support, 1u);
  EXPECT_DOUBLE_EQ(m.value, 0.5);
  EXPECT_EQ(category_of([&] { recall_at_k(r, rel, 0); }), ErrorCategory::kContract);
}

TEST(Recall, MonotonicityProperties) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 60;
    std::vector<ItemId> ranking(n);
    std::iota(ranking.begin(), ranking.end(), ItemId{0});
    std::unordered_set<ItemId> rel;
    const std::size_t nrel = 1 + rng.below(20);
    // Relevant items first: precision can only fall as k grows.
    for (std::size_t i = 0; i < nrel; ++i) rel.insert(i);
    std::vector<ItemId> shuffled = ranking;
    for (std::size_t i = n - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
    double prev_p = 2.0, prev_h = -1.0;
    for (std::size_t k = 1; k <= n; ++k) {
      const double p = recall_at_k({ranking}, {rel}, k).value;
      const double h = recall_at_k({shuffled}, {rel}, k, RecallMode::kHitRecall).value;
      EXPECT_LE(p, prev_p + 1e-15);
      EXPECT_GE(h, prev_h - 1e-15);
      prev_p = p;
      prev_h = h;
    }
  }
}

TEST(Recall, ReportLayout) {
  const std::vector<std::vector<ItemId>> r{{1, 2, 3}};
  const std::vector<std::unordered_set<ItemId>> rel{{1}};
  const std::string s = format_recall_row(r, rel, RecallMode::kTopKPrecision);
  EXPECT_EQ(s.substr(0, s.find('\n')), "Recall@1,Recall@5,Recall@10,Recall@20,Recall@50");
}

TEST(Fnv, KnownVector) {
  Fnv1a h;
  h.update("a", 1);
  EXPECT_EQ(h.digest(), 0xaf63dc4c8601ec8cULL);
}

TEST(Rng, DeterministicStreams) {
  Rng a = Rng::derive(7, 3), b = Rng::derive(7, 3), c = Rng::derive(7, 4);
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}
