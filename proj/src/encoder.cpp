#include "mmrep/encoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mmrep/random.hpp"

namespace mmrep {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'O', 'O', 'N', 'E', 'N', 'C', '1'};

void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, double bound, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-bound, bound);
  }
}

}  // namespace

EncoderParams EncoderParams::zeros(const EncoderDims& d) {
  require(d.vocab > 0 && d.image_dim > 0 && d.d_tok > 0 && d.hidden > 0 && d.d_full > 0,
          "encoder dims must be positive");
  EncoderParams p;
  p.dims = d;
  p.token_table = Eigen::MatrixXd::Zero(d.d_tok, d.vocab);
  p.image_proj = Eigen::MatrixXd::Zero(d.d_tok, d.image_dim);
  p.w1 = Eigen::MatrixXd::Zero(d.hidden, d.d_tok);
  p.b1 = Eigen::VectorXd::Zero(d.hidden);
  p.w2 = Eigen::MatrixXd::Zero(d.d_full, d.hidden);
  p.b2 = Eigen::VectorXd::Zero(d.d_full);
  return p;
}

EncoderParams EncoderParams::init(const EncoderDims& d, std::uint64_t seed) {
  EncoderParams p = zeros(d);
  Rng rng = Rng::derive(seed, 101);
  // The token table has no fan-in of its own; it feeds d_tok-wide rows.
  fill_uniform(p.token_table, 1.0 / std::sqrt(static_cast<double>(d.d_tok)), rng);
  fill_uniform(p.image_proj, 1.0 / std::sqrt(static_cast<double>(d.image_dim)), rng);
  const double b1 = 1.0 / std::sqrt(static_cast<double>(d.d_tok));
  fill_uniform(p.w1, b1, rng);
  fill_uniform(p.b1, b1, rng);
  const double b2 = 1.0 / std::sqrt(static_cast<double>(d.hidden));
  fill_uniform(p.w2, b2, rng);
  fill_uniform(p.b2, b2, rng);
  return p;
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for_each_block([&](const double*, std::size_t size) { n += size; });
  return n;
}

void EncoderParams::set_zero() {
  for_each_block([](double* p, std::size_t n) { std::fill(p, p + n, 0.0); });
}

bool EncoderParams::all_finite() const {
  bool ok = true;
  for_each_block([&](const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n && ok; ++i) ok = std::isfinite(p[i]);
  });
  return ok;
}

double& EncoderParams::at(std::size_t flat_index) {
  double* found = nullptr;
  std::size_t offset = flat_index;
  for_each_block([&](double* p, std::size_t n) {
    if (found) return;
    if (offset < n) {
      found = p + offset;
    } else {
      offset -= n;
    }
  });
  require(found != nullptr, "parameter index out of range");
  return *found;
}

ForwardCache forward(const EncoderParams& params, const EncoderInput& input) {
  require(input.pieces() > 0, "encode: input has no tokens and no images");
  const auto& d = params.dims;
  ForwardCache c;
  c.tokens = input.tokens;
  c.images = input.images;
  const auto n = static_cast<Eigen::Index>(input.pieces());
  c.x.resize(d.d_tok, n);
  Eigen::Index col = 0;
  for (TokenId t : input.tokens) {
    require(t >= 0 && t < d.vocab, "encode: token id out of vocabulary");
    c.x.col(col++) = params.token_table.col(t);
  }
  for (const auto& img : input.images) {
    require(static_cast<int>(img.size()) == d.image_dim, "encode: image feature has wrong dimension");
    const Eigen::Map<const Eigen::VectorXd> v(img.data(), static_cast<Eigen::Index>(img.size()));
    c.x.col(col++).noalias() = params.image_proj * v;
  }
  c.hidden.noalias() = params.w1 * c.x;
  c.hidden.colwise() += params.b1;
  c.hidden = c.hidden.cwiseMax(0.0);
  c.pooled_hidden = c.hidden.rowwise().mean();
  Eigen::VectorXd y = params.w2 * c.pooled_hidden + params.b2;
  c.norm = y.norm();
  if (c.norm == 0.0) fail(ErrorCategory::kZeroVector, "encoder produced a zero vector");
  c.output = y / c.norm;
  return c;
}

void backward(const EncoderParams& params, const ForwardCache& c, const Eigen::VectorXd& grad_output,
              EncoderParams& grads) {
  // Through the normalization: dy = (g - e (e.g)) / |y|.
  const Eigen::VectorXd dy = (grad_output - c.output * c.output.dot(grad_output)) / c.norm;
  grads.w2.noalias() += dy * c.pooled_hidden.transpose();
  grads.b2 += dy;
  const Eigen::VectorXd dpooled = params.w2.transpose() * dy;
  const auto n = c.hidden.cols();
  // Mean pooling spreads the gradient evenly; the ramp passes it where active.
  Eigen::MatrixXd dpre(c.hidden.rows(), n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < c.hidden.rows(); ++i) {
      dpre(i, j) = c.hidden(i, j) > 0.0 ? dpooled(i) * inv_n : 0.0;
    }
  }
  grads.w1.noalias() += dpre * c.x.transpose();
  grads.b1 += dpre.rowwise().sum();
  const Eigen::MatrixXd dx = params.w1.transpose() * dpre;
  Eigen::Index col = 0;
  for (TokenId t : c.tokens) grads.token_table.col(t) += dx.col(col++);
  for (const auto& img : c.images) {
    const Eigen::Map<const Eigen::VectorXd> v(img.data(), static_cast<Eigen::Index>(img.size()));
    grads.image_proj.noalias() += dx.col(col++) * v.transpose();
  }
}

Embedding encode(const EncoderParams& params, const EncoderInput& input) {
  const ForwardCache c = forward(params, input);
  return Embedding(std::vector<double>(c.output.data(), c.output.data() + c.output.size()), true);
}

MrlConfig MrlConfig::defaults(int d_full) {
  MrlConfig cfg;
  for (int div : {8, 4, 2}) {
    if (d_full / div >= 1 && (cfg.dims.empty() || d_full / div > cfg.dims.back())) cfg.dims.push_back(d_full / div);
  }
  cfg.dims.push_back(d_full);
  cfg.weights.assign(cfg.dims.size(), 1.0);
  return cfg;
}

void MrlConfig::validate(int d_full) const {
  require(!dims.empty(), "mrl: dims must be non-empty");
  require(dims.size() == weights.size(), "mrl: one weight per dim");
  for (std::size_t i = 0; i < dims.size(); ++i) {
    require(dims[i] > 0, "mrl: dims must be positive");
    require(i == 0 || dims[i] > dims[i - 1], "mrl: dims must be strictly increasing");
    require(weights[i] > 0.0, "mrl: weights must be positive");
  }
  require(dims.back() == d_full, "mrl: last dim must equal the full dimension");
}

Embedding mrl_view(std::span<const double> e, int m) {
  require(m > 0 && static_cast<std::size_t>(m) <= e.size(), "mrl: view dimension exceeds embedding");
  return Embedding::unit(e.first(static_cast<std::size_t>(m)));
}

std::vector<Embedding> mrl_views(const Embedding& e, const MrlConfig& cfg) {
  for (int m : cfg.dims) require(static_cast<std::size_t>(m) <= e.dim(), "mrl: view dimension exceeds embedding");
  std::vector<Embedding> out;
  out.reserve(cfg.dims.size());
  for (int m : cfg.dims) {
    if (static_cast<std::size_t>(m) == e.dim() && e.normalized) {
      out.push_back(e);
    } else {
      out.push_back(mrl_view(e.values, m));
    }
  }
  return out;
}

EncoderInput render_item(const CorpusRecord& product, ItemView view, const CorpusConfig& config,
                         std::span<const SkuId> skus) {
  EncoderInput in;
  const bool text = view != ItemView::kImage;
  const bool richer = view == ItemView::kRicherText || view == ItemView::kRicherTextImage;
  const bool images = view != ItemView::kRicherText;
  if (text) {
    in.tokens = product.title_tokens;
    if (richer) in.tokens.push_back(config.category_token(product.leaf_category));
  }
  if (images) {
    if (skus.empty()) {
      for (const auto& s : product.skus) in.images.emplace_back(s.image);
    } else {
      for (SkuId id : skus) in.images.emplace_back(product.skus[product.sku_index(id)].image);
    }
  }
  return in;
}

EncoderInput render_query(const QueryRecord& query) {
  EncoderInput in;
  if (query.has_text()) in.tokens = query.text_tokens;
  if (query.has_image()) in.images.emplace_back(query.image_feature);
  return in;
}

void save_checkpoint(const EncoderParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCategory::kIo, "cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  const auto& d = params.dims;
  for (int v : {d.vocab, d.image_dim, d.d_tok, d.hidden, d.d_full}) {
    const auto u = static_cast<std::uint32_t>(v);
    out.write(reinterpret_cast<const char*>(&u), sizeof(u));
  }
  std::vector<float> buf;
  params.for_each_block([&](const double* p, std::size_t n) {
    buf.assign(p, p + n);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
  });
  if (!out) fail(ErrorCategory::kIo, "checkpoint write failed: " + path);
}

EncoderParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::kIo, "cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCategory::kIntegrity, "bad checkpoint magic: " + path);
  }
  std::uint32_t header[5];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) fail(ErrorCategory::kIntegrity, "truncated checkpoint header: " + path);
  for (auto h : header) {
    if (h == 0 || h > (1u << 24)) fail(ErrorCategory::kIntegrity, "implausible checkpoint dimensions: " + path);
  }
  EncoderDims d{static_cast<int>(header[0]), static_cast<int>(header[1]), static_cast<int>(header[2]),
                static_cast<int>(header[3]), static_cast<int>(header[4])};
  EncoderParams p = EncoderParams::zeros(d);
  std::vector<float> buf;
  bool ok = true;
  p.for_each_block([&](double* dst, std::size_t n) {
    if (!ok) return;
    buf.resize(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) {
      ok = false;
      return;
    }
    std::copy(buf.begin(), buf.end(), dst);
  });
  if (!ok) fail(ErrorCategory::kIntegrity, "truncated checkpoint: " + path);
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorCategory::kIntegrity, "trailing bytes in checkpoint: " + path);
  if (!p.all_finite()) fail(ErrorCategory::kIntegrity, "non-finite checkpoint parameters: " + path);
  return p;
}

EncoderDims dims_for(const CorpusConfig& config, int d_tok, int hidden, int d_full) {
  return EncoderDims{config.vocab_size(), config.image_dim, d_tok, hidden, d_full};
}

}  // namespace mmrep
