#include "mmrep/cube.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmrep/errors.hpp"
#include "mmrep/losses.hpp"
#include "mmrep/random.hpp"

namespace mmrep {

double BehaviorSequence::absent_fraction() const {
  if (present.empty()) return 0.0;
  const auto absent = std::count(present.begin(), present.end(), std::uint8_t{0});
  return static_cast<double>(absent) / static_cast<double>(present.size());
}

void BehaviorSequence::validate() const {
  const auto L = static_cast<Eigen::Index>(items.size());
  require(timestamps.size() == items.size() && present.size() == items.size(),
          "behavior sequence: per-position fields differ in length");
  require(id_emb.cols() == L && mm_emb.cols() == L, "behavior sequence: embedding count differs from length");
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    require(timestamps[i - 1] <= timestamps[i], "behavior sequence: positions not time-ordered");
  }
}

CubeParams CubeParams::zeros(int d_id, int d_mm) {
  CubeParams p;
  p.item_head = {0.0, 0.0};
  p.query_head = {0.0, 0.0};
  p.w = Eigen::VectorXd::Zero(feature_dim(d_id, d_mm));
  return p;
}

bool CubeParams::all_finite() const {
  return std::isfinite(item_head.a) && std::isfinite(item_head.c) && std::isfinite(query_head.a) &&
         std::isfinite(query_head.c) && w.allFinite() && std::isfinite(b);
}

std::vector<double> similarity_sequence(const Eigen::VectorXd& anchor, const BehaviorSequence& seq) {
  require(seq.mm_emb.cols() == static_cast<Eigen::Index>(seq.length()), "similarity: malformed sequence");
  std::vector<double> s(seq.length(), 0.0);
  if (seq.length() == 0) return s;
  require(seq.mm_emb.rows() == anchor.size(), "similarity: dimension mismatch");
  const double an = anchor.norm();
  if (an == 0.0) fail(ErrorCategory::kZeroVector, "similarity: zero anchor");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!seq.present[i]) continue;
    const auto col = seq.mm_emb.col(static_cast<Eigen::Index>(i));
    const double bn = col.norm();
    if (bn == 0.0) continue;
    s[i] = std::clamp(anchor.dot(col) / (an * bn), -1.0, 1.0);
  }
  return s;
}

std::vector<double> fuse_weights(std::span<const double> s, const FuseHead& head) {
  std::vector<double> w(s.size());
  if (s.empty()) return w;
  double mx = -std::numeric_limits<double>::infinity();
  // The bias shifts every logit equally and cancels in the softmax; leaving
  // it out makes that cancellation exact in floating point.
  for (std::size_t i = 0; i < s.size(); ++i) {
    w[i] = head.a * s[i];
    mx = std::max(mx, w[i]);
  }
  double total = 0.0;
  for (double& v : w) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : w) v /= total;
  return w;
}

FuseResult fuse(std::span<const double> s, const Eigen::MatrixXd& values, const FuseHead& head) {
  require(values.cols() == static_cast<Eigen::Index>(s.size()), "fuse: similarity and value lengths differ");
  FuseResult r;
  r.fused = Eigen::VectorXd::Zero(values.rows());
  if (s.empty()) {
    r.empty = true;
    return r;
  }
  r.weights = fuse_weights(s, head);
  for (std::size_t i = 0; i < s.size(); ++i) r.fused += r.weights[i] * values.col(static_cast<Eigen::Index>(i));
  return r;
}

int feature_dim(int d_id, int d_mm) { return 3 * d_id + 4 * d_mm + 5 + 5; }

std::vector<std::string> feature_names(int d_id, int d_mm) {
  std::vector<std::string> names;
  auto block = [&](const std::string& prefix, int n) {
    for (int i = 0; i < n; ++i) names.push_back(prefix + "_" + std::to_string(i));
  };
  block("item_fused_id", d_id);
  block("item_fused_mm", d_mm);
  block("query_fused_id", d_id);
  block("query_fused_mm", d_mm);
  block("target_id", d_id);
  block("target_mm", d_mm);
  block("query_mm", d_mm);
  for (const char* n : {"cos_query_itemseq", "cos_query_queryseq", "cos_target_itemseq", "cos_target_queryseq",
                        "cos_query_target", "item_seq_empty", "query_seq_empty", "item_absent_fraction",
                        "query_absent_fraction", "target_absent"}) {
    names.emplace_back(n);
  }
  return names;
}

namespace {

// Cosine that is 0 when either side is zero, plus its gradient in y.
struct Cos {
  double value = 0.0;
  Eigen::VectorXd grad_y;
};

Cos safe_cos(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  Cos c;
  c.grad_y = Eigen::VectorXd::Zero(y.size());
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) return c;
  c.value = x.dot(y) / (nx * ny);
  c.grad_y = x / (nx * ny) - c.value * y / (ny * ny);
  return c;
}

struct HeadEval {
  Eigen::VectorXd e;  // fused ID embedding
  Eigen::VectorXd r;  // fused multimodal embedding
  Eigen::VectorXd de_da;
  Eigen::VectorXd dr_da;
  bool empty = false;
};

HeadEval eval_head(const Eigen::VectorXd& anchor, bool anchor_ok, const BehaviorSequence& seq, const FuseHead& head,
                   int d_id, int d_mm, bool use_mm) {
  HeadEval h;
  h.e = Eigen::VectorXd::Zero(d_id);
  h.r = Eigen::VectorXd::Zero(d_mm);
  h.de_da = Eigen::VectorXd::Zero(d_id);
  h.dr_da = Eigen::VectorXd::Zero(d_mm);
  const std::size_t L = seq.length();
  if (L == 0) {
    h.empty = true;
    return h;
  }
  require(seq.id_emb.rows() == d_id && seq.mm_emb.rows() == d_mm, "cube: sequence embedding dims mismatch");
  std::vector<double> s = (use_mm && anchor_ok) ? similarity_sequence(anchor, seq) : std::vector<double>(L, 0.0);
  const std::vector<double> w = fuse_weights(s, head);
  double s_bar = 0.0;
  for (std::size_t i = 0; i < L; ++i) s_bar += w[i] * s[i];
  for (std::size_t i = 0; i < L; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const double dw = w[i] * (s[i] - s_bar);  // d weight_i / d a
    h.e += w[i] * seq.id_emb.col(c);
    h.de_da += dw * seq.id_emb.col(c);
    if (use_mm) {
      h.r += w[i] * seq.mm_emb.col(c);
      h.dr_da += dw * seq.mm_emb.col(c);
    }
  }
  return h;
}

struct Forward {
  Eigen::VectorXd f;
  HeadEval item;
  HeadEval query;
  Cos q_ri, q_rq, t_ri, t_rq;
};

Forward forward_features(const CubeParams& params, const CtrExample& x, const CubeOptions& options) {
  const int d_id = static_cast<int>(x.target_id.size());
  const int d_mm = static_cast<int>(x.query.size());
  require(x.target_mm.size() == d_mm, "cube: target and query multimodal dims differ");
  const bool mm = options.use_multimodal;
  const bool target_ok = x.target_present && x.target_mm.norm() > 0.0;
  const bool query_ok = x.query.norm() > 0.0;

  Forward fw;
  fw.item = eval_head(x.target_mm, target_ok, x.item_seq, params.item_head, d_id, d_mm, mm);
  fw.query = eval_head(x.query, query_ok, x.query_seq, params.query_head, d_id, d_mm, mm);

  const Eigen::VectorXd zero_mm = Eigen::VectorXd::Zero(d_mm);
  const Eigen::VectorXd& target_mm = mm ? x.target_mm : zero_mm;
  const Eigen::VectorXd& query_mm = mm ? x.query : zero_mm;
  fw.q_ri = safe_cos(query_mm, fw.item.r);
  fw.q_rq = safe_cos(query_mm, fw.query.r);
  fw.t_ri = safe_cos(target_mm, fw.item.r);
  fw.t_rq = safe_cos(target_mm, fw.query.r);
  const double q_t = safe_cos(query_mm, target_mm).value;

  Eigen::VectorXd& f = fw.f;
  f.resize(feature_dim(d_id, d_mm));
  Eigen::Index o = 0;
  auto put = [&](const Eigen::VectorXd& v) {
    f.segment(o, v.size()) = v;
    o += v.size();
  };
  put(fw.item.e);
  put(fw.item.r);
  put(fw.query.e);
  put(fw.query.r);
  put(x.target_id);
  put(target_mm);
  put(query_mm);
  f(o++) = fw.q_ri.value;
  f(o++) = fw.q_rq.value;
  f(o++) = fw.t_ri.value;
  f(o++) = fw.t_rq.value;
  f(o++) = q_t;
  f(o++) = fw.item.empty ? 1.0 : 0.0;
  f(o++) = fw.query.empty ? 1.0 : 0.0;
  f(o++) = mm ? x.item_seq.absent_fraction() : 0.0;
  f(o++) = mm ? x.query_seq.absent_fraction() : 0.0;
  f(o++) = (mm && !x.target_present) ? 1.0 : 0.0;
  return fw;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Eigen::VectorXd ctr_features(const CubeParams& params, const CtrExample& x, const CubeOptions& options) {
  return forward_features(params, x, options).f;
}

double predict_ctr(const CubeParams& params, const CtrExample& x, const CubeOptions& options) {
  const Eigen::VectorXd f = ctr_features(params, x, options);
  require(params.w.size() == f.size(), "cube: head weights do not match the feature layout");
  return sigmoid(params.w.dot(f) + params.b);
}

CtrGradient ctr_gradient(const CubeParams& params, const CtrExample& x, const CubeOptions& options) {
  const Forward fw = forward_features(params, x, options);
  require(params.w.size() == fw.f.size(), "cube: head weights do not match the feature layout");
  const int d_id = static_cast<int>(x.target_id.size());
  const int d_mm = static_cast<int>(x.query.size());
  const double z = params.w.dot(fw.f) + params.b;
  const double y = static_cast<double>(x.label);

  CtrGradient g;
  g.probability = sigmoid(z);
  g.loss = softplus(z) - y * z;
  const double dz = g.probability - y;
  g.d_w = dz * fw.f;
  g.d_b = dz;

  // Offsets of the blocks fed by each head.
  const Eigen::Index o_item_e = 0;
  const Eigen::Index o_item_r = d_id;
  const Eigen::Index o_query_e = d_id + d_mm;
  const Eigen::Index o_query_r = 2 * d_id + d_mm;
  const Eigen::Index o_cos = 3 * d_id + 4 * d_mm;
  const Eigen::VectorXd& w = params.w;

  const double item_a = w.segment(o_item_e, d_id).dot(fw.item.de_da) +
                        w.segment(o_item_r, d_mm).dot(fw.item.dr_da) +
                        w(o_cos + 0) * fw.q_ri.grad_y.dot(fw.item.dr_da) +
                        w(o_cos + 2) * fw.t_ri.grad_y.dot(fw.item.dr_da);
  const double query_a = w.segment(o_query_e, d_id).dot(fw.query.de_da) +
                         w.segment(o_query_r, d_mm).dot(fw.query.dr_da) +
                         w(o_cos + 1) * fw.q_rq.grad_y.dot(fw.query.dr_da) +
                         w(o_cos + 3) * fw.t_rq.grad_y.dot(fw.query.dr_da);
  g.d_item_a = dz * item_a;
  g.d_query_a = dz * query_a;
  // Adding a constant to every softmax logit leaves the weights unchanged.
  g.d_item_c = 0.0;
  g.d_query_c = 0.0;
  return g;
}

CtrTrainResult train_ctr(CubeParams initial, std::size_t n_examples, const ExampleSource& examples,
                         const std::vector<int>& labels, const CtrTrainConfig& config) {
  require(n_examples >= 1, "train_ctr: no examples");
  require(labels.size() == n_examples, "train_ctr: label count differs from example count");
  require(config.batch_size >= 1 && config.learning_rate > 0.0, "train_ctr: bad batch size or learning rate");
  CtrTrainResult out;
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || static_cast<std::size_t>(positives) == n_examples) {
    out.warnings.emplace_back("degenerate training: examples contain a single class");
  }
  CubeParams p = std::move(initial);
  std::vector<std::size_t> order(n_examples);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(config.seed, 200 + epoch);
    rng.shuffle(order);
    for (std::size_t start = 0; start < n_examples; start += config.batch_size) {
      const std::size_t end = std::min(n_examples, start + config.batch_size);
      CtrGradient acc;
      acc.d_w = Eigen::VectorXd::Zero(p.w.size());
      for (std::size_t i = start; i < end; ++i) {
        const CtrGradient g = ctr_gradient(p, examples(order[i]), config.options);
        acc.loss += g.loss;
        acc.d_w += g.d_w;
        acc.d_b += g.d_b;
        acc.d_item_a += g.d_item_a;
        acc.d_query_a += g.d_query_a;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      const double lr = config.learning_rate * inv;
      p.w -= lr * acc.d_w;
      p.b -= lr * acc.d_b;
      p.item_head.a -= lr * acc.d_item_a;
      p.query_head.a -= lr * acc.d_query_a;
      out.loss_curve.push_back(acc.loss * inv);
      if (!p.all_finite() || !std::isfinite(acc.loss)) {
        fail(ErrorCategory::kDivergence, "CTR training diverged at batch " + std::to_string(out.loss_curve.size()));
      }
    }
  }
  out.params = std::move(p);
  return out;
}

std::vector<double> predict_all(const CubeParams& params, std::size_t n_examples, const ExampleSource& examples,
                                const CubeOptions& options) {
  std::vector<double> out(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) out[i] = predict_ctr(params, examples(i), options);
  return out;
}

}  // namespace mmrep
