#include "flowgen/model/transformer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "../byteio.hpp"

namespace flowgen {

// ---------------------------------------------------------------------------
// ModelConfig

int ModelConfig::ffn_hidden() const {
  const double raw = ffn_multiplier * d_model;
  return static_cast<int>(std::ceil(raw / 64.0 - 1e-9)) * 64;
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0) throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
                      std::to_string(n_heads) + ")");
  }
  if (head_dim() % 2 != 0) throw ConfigError("head dimension must be even for rotary embeddings");
  if (vocab_size < 3 || vocab_size > 65536) throw ConfigError("vocab_size must be in [3, 65536]");
  if (max_context <= 0 || max_context % static_cast<int>(kTokensPerMessage) != 0) {
    throw ConfigError("max_context must be a positive multiple of 24 (whole messages)");
  }
  if (!(rope_base > 1.0)) throw ConfigError("rope_base must exceed 1");
  if (!(ffn_multiplier > 0.0)) throw ConfigError("ffn_multiplier must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

ModelConfig ModelConfig::toy(int vocab_size) {
  ModelConfig c;
  c.d_model = 64;
  c.n_layers = 2;
  c.n_heads = 4;
  c.vocab_size = vocab_size;
  c.max_context = 1536;
  return c;
}

ModelConfig ModelConfig::reference(int vocab_size) {
  ModelConfig c;
  c.d_model = 768;
  c.n_layers = 12;
  c.n_heads = 12;
  c.vocab_size = vocab_size;
  c.max_context = 10368;
  return c;
}

std::uint64_t ModelConfig::hash() const {
  Fnv1a h;
  for (int v : {d_model, n_layers, n_heads, vocab_size, max_context}) h.add_value(v);
  for (double v : {rope_base, ffn_multiplier, dropout, norm_eps}) h.add_value(v);
  return h.value();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},       {"n_layers", c.n_layers},
                     {"n_heads", c.n_heads},       {"vocab_size", c.vocab_size},
                     {"max_context", c.max_context}, {"rope_base", c.rope_base},
                     {"ffn_multiplier", c.ffn_multiplier}, {"dropout", c.dropout},
                     {"norm_eps", c.norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_context").get_to(c.max_context);
  j.at("rope_base").get_to(c.rope_base);
  j.at("ffn_multiplier").get_to(c.ffn_multiplier);
  j.at("dropout").get_to(c.dropout);
  j.at("norm_eps").get_to(c.norm_eps);
}

// ---------------------------------------------------------------------------
// Free-standing primitives

template <class T>
ColVector<T> rmsnorm(const ColVector<T>& x, const ColVector<T>& gain, double eps) {
  const T ms = x.squaredNorm() / static_cast<T>(x.size());
  const T r = T(1) / std::sqrt(ms + static_cast<T>(eps));
  return (x.array() * gain.array() * r).matrix();
}

template <class T>
ColVector<T> rope(const ColVector<T>& x, double position, double base) {
  const auto n = x.size();
  if (n % 2 != 0) throw std::invalid_argument("rope needs an even dimension");
  ColVector<T> y(n);
  for (Eigen::Index i = 0; i < n / 2; ++i) {
    const double theta = position * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(n));
    const T c = static_cast<T>(std::cos(theta));
    const T s = static_cast<T>(std::sin(theta));
    const T x0 = x[2 * i];
    const T x1 = x[2 * i + 1];
    y[2 * i] = x0 * c - x1 * s;
    y[2 * i + 1] = x0 * s + x1 * c;
  }
  return y;
}

template ColVector<float> rmsnorm(const ColVector<float>&, const ColVector<float>&, double);
template ColVector<double> rmsnorm(const ColVector<double>&, const ColVector<double>&, double);
template ColVector<float> rope(const ColVector<float>&, double, double);
template ColVector<double> rope(const ColVector<double>&, double, double);

template <class T>
void StreamState<T>::rollback(const Mark& m) {
  if (m.evicted != evicted) throw std::logic_error("cannot roll back across an eviction");
  if (m.length > length) throw std::logic_error("rollback mark is ahead of the stream");
  length = m.length;
  processed = m.processed;
  last_hidden = m.last_hidden;
}

template struct StreamState<float>;
template struct StreamState<double>;

// ---------------------------------------------------------------------------
// Helpers

namespace {

template <class T>
void norm_forward(const RowMatrix<T>& x, const Eigen::Map<const ColVector<T>>& gain, double eps,
                  RowMatrix<T>& y, ColVector<T>& r) {
  const auto d = static_cast<T>(x.cols());
  r = ((x.rowwise().squaredNorm().array() / d) + static_cast<T>(eps)).rsqrt().matrix();
  y = (x.array().colwise() * r.array()).rowwise() * gain.transpose().array();
}

template <class T>
RowMatrix<T> norm_backward(const RowMatrix<T>& x, const ColVector<T>& r,
                           const Eigen::Map<const ColVector<T>>& gain, const RowMatrix<T>& dy,
                           Eigen::Map<ColVector<T>> dgain) {
  const auto d = static_cast<T>(x.cols());
  const RowMatrix<T> gdy = dy.array().rowwise() * gain.transpose().array();
  const ColVector<T> dot = (gdy.array() * x.array()).rowwise().sum().matrix();
  const ColVector<T> coef = (r.array().cube() * dot.array() / d).matrix();
  RowMatrix<T> dx = (gdy.array().colwise() * r.array()) - (x.array().colwise() * coef.array());
  dgain += ((dy.array() * x.array()).colwise() * r.array()).colwise().sum().transpose().matrix();
  return dx;
}

template <class T>
T sigmoid(T a) {
  return T(1) / (T(1) + std::exp(-a));
}

/// Uniform double in [0, 1) built from the top 53 bits.
inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <class T>
RowMatrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
  RowMatrix<T> m(rows, cols);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unit(rng) < p ? T(0) : keep;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Transformer

template <class T>
struct Transformer<T>::Cache {
  struct Layer {
    Mat x_in, xn1, q, k, v, attn, x_mid, xn2, a, b, g, drop1, drop2;
    Vec r1, r2;
    std::vector<Mat> probs;
  };
  std::vector<Layer> layers;
  Mat x_final, xnf;
  Vec rf;
};

template <class T>
Transformer<T>::Transformer(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const int h = cfg_.ffn_hidden();
  const int v = cfg_.vocab_size;
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    tensors_.push_back({std::move(name), offset, rows, cols});
    offset += tensors_.back().size();
    return tensors_.size() - 1;
  };
  emb_ = add("tok_embedding", v, d);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerIdx li{};
    li.attn_norm = add(p + "attn_norm", d, 1);
    li.wq = add(p + "wq", d, d);
    li.wk = add(p + "wk", d, d);
    li.wv = add(p + "wv", d, d);
    li.wo = add(p + "wo", d, d);
    li.ffn_norm = add(p + "ffn_norm", d, 1);
    li.w1 = add(p + "w1", d, h);
    li.w3 = add(p + "w3", d, h);
    li.w2 = add(p + "w2", h, d);
    layers_.push_back(li);
  }
  final_norm_ = add("final_norm", d, 1);
  head_ = add("output", v, d);
  params_.assign(offset, T(0));
  for (const auto& t : tensors_) {
    if (t.cols == 1) Eigen::Map<Vec>(params_.data() + t.offset, t.rows).setOnes();
  }
  const int hd = cfg_.head_dim();
  for (int i = 0; i < hd / 2; ++i) {
    inv_freq_.push_back(std::pow(cfg_.rope_base, -2.0 * i / static_cast<double>(hd)));
  }
}

template <class T>
const TensorInfo& Transformer<T>::tensor(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw std::out_of_range("no tensor named " + name);
}

template <class T>
void Transformer<T>::init_weights(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double resid_scale = 1.0 / std::sqrt(2.0 * cfg_.n_layers);
  for (const auto& t : tensors_) {
    T* p = params_.data() + t.offset;
    if (t.cols == 1) {
      std::fill(p, p + t.size(), T(1));
      continue;
    }
    const bool resid = t.name.ends_with(".wo") || t.name.ends_with(".w2");
    const double sd = 0.02 * (resid ? resid_scale : 1.0);
    for (std::size_t i = 0; i < t.size(); i += 2) {
      const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
      const double u2 = unit(rng);
      const double rad = std::sqrt(-2.0 * std::log(u1));
      p[i] = static_cast<T>(sd * rad * std::cos(2.0 * M_PI * u2));
      if (i + 1 < t.size()) p[i + 1] = static_cast<T>(sd * rad * std::sin(2.0 * M_PI * u2));
    }
  }
}

template <class T>
auto Transformer<T>::mat(const TensorInfo& t) const -> CMapMat {
  return CMapMat(params_.data() + t.offset, t.rows, t.cols);
}

template <class T>
auto Transformer<T>::vec(const TensorInfo& t) const -> CMapVec {
  return CMapVec(params_.data() + t.offset, t.rows);
}

template <class T>
void Transformer<T>::rope_rows(Mat& x, int first_position, int sign) const {
  const int hd = cfg_.head_dim();
  const int half = hd / 2;
  std::vector<T> cs(static_cast<std::size_t>(half)), sn(static_cast<std::size_t>(half));
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double pos = static_cast<double>(first_position + t) * sign;
    for (int i = 0; i < half; ++i) {
      const double th = pos * inv_freq_[static_cast<std::size_t>(i)];
      cs[static_cast<std::size_t>(i)] = static_cast<T>(std::cos(th));
      sn[static_cast<std::size_t>(i)] = static_cast<T>(std::sin(th));
    }
    T* row = x.row(t).data();
    for (int h = 0; h < cfg_.n_heads; ++h) {
      T* hp = row + h * hd;
      for (int i = 0; i < half; ++i) {
        const T x0 = hp[2 * i];
        const T x1 = hp[2 * i + 1];
        hp[2 * i] = x0 * cs[static_cast<std::size_t>(i)] - x1 * sn[static_cast<std::size_t>(i)];
        hp[2 * i + 1] = x0 * sn[static_cast<std::size_t>(i)] + x1 * cs[static_cast<std::size_t>(i)];
      }
    }
  }
}

template <class T>
void Transformer<T>::run(std::span<const TokenId> seq, Cache& cache, std::mt19937_64* dropout_rng) const {
  const auto n = static_cast<Eigen::Index>(seq.size());
  const int d = cfg_.d_model;
  const int hd = cfg_.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  const bool use_dropout = cfg_.dropout > 0.0 && dropout_rng != nullptr;

  const auto emb = mat(tensors_[emb_]);
  Mat x(n, d);
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto id = seq[static_cast<std::size_t>(t)];
    if (id >= cfg_.vocab_size) throw std::out_of_range("token id " + std::to_string(id) + " >= vocab size");
    x.row(t) = emb.row(id);
  }

  cache.layers.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerIdx& li = layers_[l];
    auto& L = cache.layers[l];
    L.x_in = x;
    norm_forward<T>(L.x_in, vec(tensors_[li.attn_norm]), cfg_.norm_eps, L.xn1, L.r1);
    L.q = L.xn1 * mat(tensors_[li.wq]);
    L.k = L.xn1 * mat(tensors_[li.wk]);
    L.v = L.xn1 * mat(tensors_[li.wv]);
    rope_rows(L.q, 0, 1);
    rope_rows(L.k, 0, 1);

    L.attn.setZero(n, d);
    L.probs.resize(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      Mat s = (L.q.middleCols(h * hd, hd) * L.k.middleCols(h * hd, hd).transpose()) * scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const T mx = s.row(i).head(i + 1).maxCoeff();
        T sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const T e = std::exp(s(i, j) - mx);
          s(i, j) = e;
          sum += e;
        }
        s.row(i).head(i + 1) /= sum;
        s.row(i).tail(n - i - 1).setZero();
      }
      L.attn.middleCols(h * hd, hd) = s * L.v.middleCols(h * hd, hd);
      L.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Mat out = L.attn * mat(tensors_[li.wo]);
    if (use_dropout) {
      L.drop1 = dropout_mask<T>(n, d, cfg_.dropout, *dropout_rng);
      out.array() *= L.drop1.array();
    }
    L.x_mid = L.x_in + out;

    norm_forward<T>(L.x_mid, vec(tensors_[li.ffn_norm]), cfg_.norm_eps, L.xn2, L.r2);
    L.a = L.xn2 * mat(tensors_[li.w1]);
    L.b = L.xn2 * mat(tensors_[li.w3]);
    L.g = L.a.unaryExpr([](T a) { return a * sigmoid(a); }).cwiseProduct(L.b);
    Mat ffn = L.g * mat(tensors_[li.w2]);
    if (use_dropout) {
      L.drop2 = dropout_mask<T>(n, d, cfg_.dropout, *dropout_rng);
      ffn.array() *= L.drop2.array();
    }
    x = L.x_mid + ffn;
  }
  cache.x_final = std::move(x);
  norm_forward<T>(cache.x_final, vec(tensors_[final_norm_]), cfg_.norm_eps, cache.xnf, cache.rf);
}

template <class T>
auto Transformer<T>::forward(std::span<const TokenId> tokens) const -> Mat {
  if (tokens.empty()) return Mat(0, cfg_.vocab_size);
  Cache cache;
  run(tokens, cache, nullptr);
  return cache.xnf * mat(tensors_[head_]).transpose();
}

template <class T>
double Transformer<T>::loss(std::span<const TokenId> tokens) const {
  return loss_and_grad(tokens, {}, T(0), nullptr);
}

template <class T>
double Transformer<T>::loss_and_grad(std::span<const TokenId> tokens, std::span<T> grad, T grad_scale,
                                     std::mt19937_64* dropout_rng) const {
  if (tokens.size() < 2) throw std::invalid_argument("loss needs at least two tokens");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");

  std::vector<TokenId> seq;
  seq.reserve(tokens.size() + 1);
  seq.push_back(Vocabulary::kSink);
  seq.insert(seq.end(), tokens.begin(), tokens.end());
  const auto n = static_cast<Eigen::Index>(seq.size());
  const Eigen::Index count = n - 2;  // positions 1..n-2 predict seq[2..n-1]

  Cache cache;
  run(seq, cache, want_grad ? dropout_rng : nullptr);

  const auto head = mat(tensors_[head_]);
  const Mat hrows = cache.xnf.middleRows(1, count);
  Mat logits = hrows * head.transpose();

  double total = 0.0;
  for (Eigen::Index i = 0; i < count; ++i) {
    auto row = logits.row(i);
    const T mx = row.maxCoeff();
    row.array() = (row.array() - mx).exp();
    const T sum = row.sum();
    row /= sum;
    const auto target = seq[static_cast<std::size_t>(i + 2)];
    if (target >= cfg_.vocab_size) throw std::out_of_range("target token outside vocabulary");
    total -= std::log(std::max<double>(static_cast<double>(row(target)), 1e-300));
    if (want_grad) row(target) -= T(1);
  }
  const double mean_loss = total / static_cast<double>(count);
  if (!want_grad) return mean_loss;

  // logits now holds softmax - onehot
  logits *= grad_scale / static_cast<T>(count);
  const int d = cfg_.d_model;
  const int hd = cfg_.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  auto gmat = [&](std::size_t idx) {
    const TensorInfo& t = tensors_[idx];
    return MapMat(grad.data() + t.offset, t.rows, t.cols);
  };
  auto gvec = [&](std::size_t idx) {
    const TensorInfo& t = tensors_[idx];
    return Eigen::Map<Vec>(grad.data() + t.offset, t.rows);
  };

  gmat(head_).noalias() += logits.transpose() * hrows;
  Mat dxnf = Mat::Zero(n, d);
  dxnf.middleRows(1, count) = logits * head;
  Mat dx = norm_backward<T>(cache.x_final, cache.rf, vec(tensors_[final_norm_]), dxnf, gvec(final_norm_));

  for (std::size_t l = layers_.size(); l-- > 0;) {
    const LayerIdx& li = layers_[l];
    auto& L = cache.layers[l];

    Mat dffn = dx;
    if (L.drop2.size() != 0) dffn.array() *= L.drop2.array();
    gmat(li.w2).noalias() += L.g.transpose() * dffn;
    const Mat dg = dffn * mat(tensors_[li.w2]).transpose();
    Mat da(L.a.rows(), L.a.cols());
    Mat db(L.a.rows(), L.a.cols());
    for (Eigen::Index i = 0; i < L.a.size(); ++i) {
      const T a = L.a.data()[i];
      const T sg = sigmoid(a);
      da.data()[i] = dg.data()[i] * L.b.data()[i] * sg * (T(1) + a * (T(1) - sg));
      db.data()[i] = dg.data()[i] * a * sg;
    }
    gmat(li.w1).noalias() += L.xn2.transpose() * da;
    gmat(li.w3).noalias() += L.xn2.transpose() * db;
    const Mat dxn2 = da * mat(tensors_[li.w1]).transpose() + db * mat(tensors_[li.w3]).transpose();
    const Mat dx_mid = dx + norm_backward<T>(L.x_mid, L.r2, vec(tensors_[li.ffn_norm]), dxn2, gvec(li.ffn_norm));

    Mat dout = dx_mid;
    if (L.drop1.size() != 0) dout.array() *= L.drop1.array();
    gmat(li.wo).noalias() += L.attn.transpose() * dout;
    const Mat dattn = dout * mat(tensors_[li.wo]).transpose();

    Mat dq(n, d), dk(n, d), dv(n, d);
    for (int h = 0; h < cfg_.n_heads; ++h) {
      const Mat& p = L.probs[static_cast<std::size_t>(h)];
      const auto dO = dattn.middleCols(h * hd, hd);
      dv.middleCols(h * hd, hd) = p.transpose() * dO;
      Mat dp = dO * L.v.middleCols(h * hd, hd).transpose();
      const Vec rowdot = (dp.array() * p.array()).rowwise().sum().matrix();
      Mat ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
      dq.middleCols(h * hd, hd) = ds * L.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd) = ds.transpose() * L.q.middleCols(h * hd, hd);
    }
    rope_rows(dq, 0, -1);
    rope_rows(dk, 0, -1);
    gmat(li.wq).noalias() += L.xn1.transpose() * dq;
    gmat(li.wk).noalias() += L.xn1.transpose() * dk;
    gmat(li.wv).noalias() += L.xn1.transpose() * dv;
    const Mat dxn1 = dq * mat(tensors_[li.wq]).transpose() + dk * mat(tensors_[li.wk]).transpose() +
                     dv * mat(tensors_[li.wv]).transpose();
    dx = dx_mid + norm_backward<T>(L.x_in, L.r1, vec(tensors_[li.attn_norm]), dxn1, gvec(li.attn_norm));
  }

  auto gemb = gmat(emb_);
  for (Eigen::Index t = 0; t < n; ++t) gemb.row(seq[static_cast<std::size_t>(t)]) += dx.row(t);
  return mean_loss;
}

// ---------------------------------------------------------------------------
// Streaming

template <class T>
StreamState<T> Transformer<T>::new_stream(int capacity, int evict_block, bool pin_sink) const {
  if (evict_block < 1) throw std::invalid_argument("evict_block must be positive");
  if (capacity < evict_block + (pin_sink ? 1 : 0) + 1) {
    throw std::invalid_argument("stream capacity too small for the eviction block");
  }
  StreamState<T> s;
  s.capacity = capacity;
  s.evict_block = evict_block;
  s.pin_sink = pin_sink;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    s.keys.emplace_back(Mat::Zero(capacity, cfg_.d_model));
    s.values.emplace_back(Mat::Zero(capacity, cfg_.d_model));
  }
  push(s, Vocabulary::kSink);
  return s;
}

template <class T>
void Transformer<T>::evict(StreamState<T>& s) const {
  const int start = s.pin_sink ? 1 : 0;
  const int n = std::min(s.evict_block, s.length - start);
  if (n <= 0) throw std::logic_error("nothing to evict");
  const int keep = s.length - start - n;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    auto& k = s.keys[static_cast<std::size_t>(l)];
    auto& v = s.values[static_cast<std::size_t>(l)];
    if (keep > 0) {
      k.middleRows(start, keep) = k.middleRows(start + n, keep).eval();
      v.middleRows(start, keep) = v.middleRows(start + n, keep).eval();
      // every surviving key moves n positions closer to the front
      const int hd = cfg_.head_dim();
      for (int i = 0; i < hd / 2; ++i) {
        const double th = -static_cast<double>(n) * inv_freq_[static_cast<std::size_t>(i)];
        const T c = static_cast<T>(std::cos(th));
        const T sn = static_cast<T>(std::sin(th));
        for (int h = 0; h < cfg_.n_heads; ++h) {
          auto x0 = k.col(h * hd + 2 * i).segment(start, keep);
          auto x1 = k.col(h * hd + 2 * i + 1).segment(start, keep);
          const Vec a = x0;
          const Vec b = x1;
          x0 = a * c - b * sn;
          x1 = a * sn + b * c;
        }
      }
    }
  }
  s.length -= n;
  s.evicted += n;
}

template <class T>
void Transformer<T>::push(StreamState<T>& s, TokenId token) const {
  if (token >= cfg_.vocab_size) throw std::out_of_range("token id " + std::to_string(token) + " >= vocab size");
  if (s.length == s.capacity) evict(s);
  const int pos = s.length;
  const int hd = cfg_.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  Vec x = mat(tensors_[emb_]).row(token).transpose();
  Mat q(1, cfg_.d_model), k(1, cfg_.d_model);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerIdx& li = layers_[l];
    auto& K = s.keys[l];
    auto& V = s.values[l];
    const Vec xn = rmsnorm<T>(x, vec(tensors_[li.attn_norm]), cfg_.norm_eps);
    q = xn.transpose() * mat(tensors_[li.wq]);
    k = xn.transpose() * mat(tensors_[li.wk]);
    V.row(pos) = xn.transpose() * mat(tensors_[li.wv]);
    rope_rows(q, pos, 1);
    rope_rows(k, pos, 1);
    K.row(pos) = k;

    Vec attn(cfg_.d_model);
    for (int h = 0; h < cfg_.n_heads; ++h) {
      Vec sc = K.block(0, h * hd, pos + 1, hd) * q.row(0).segment(h * hd, hd).transpose() * scale;
      sc.array() = (sc.array() - sc.maxCoeff()).exp();
      sc /= sc.sum();
      attn.segment(h * hd, hd) = V.block(0, h * hd, pos + 1, hd).transpose() * sc;
    }
    x += mat(tensors_[li.wo]).transpose() * attn;

    const Vec xn2 = rmsnorm<T>(x, vec(tensors_[li.ffn_norm]), cfg_.norm_eps);
    const Vec a = mat(tensors_[li.w1]).transpose() * xn2;
    const Vec b = mat(tensors_[li.w3]).transpose() * xn2;
    const Vec g = a.unaryExpr([](T v) { return v * sigmoid(v); }).cwiseProduct(b);
    x += mat(tensors_[li.w2]).transpose() * g;
  }
  s.last_hidden = rmsnorm<T>(x, vec(tensors_[final_norm_]), cfg_.norm_eps);
  ++s.length;
  ++s.processed;
}

template <class T>
void Transformer<T>::next_logits(const StreamState<T>& s, std::uint32_t begin, std::uint32_t count, T* out) const {
  if (begin + count > static_cast<std::uint32_t>(cfg_.vocab_size)) throw std::out_of_range("logit range");
  Eigen::Map<Vec>(out, count).noalias() =
      mat(tensors_[head_]).middleRows(begin, count) * s.last_hidden;
}

template <class T>
auto Transformer<T>::next_logits(const StreamState<T>& s) const -> Vec {
  Vec out(cfg_.vocab_size);
  next_logits(s, 0, static_cast<std::uint32_t>(cfg_.vocab_size), out.data());
  return out;
}

template <class T>
auto Transformer<T>::forward(std::span<const TokenId> tokens, StreamState<T>& state) const -> Mat {
  Mat out(static_cast<Eigen::Index>(tokens.size()), cfg_.vocab_size);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    push(state, tokens[i]);
    out.row(static_cast<Eigen::Index>(i)) = next_logits(state).transpose();
  }
  return out;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace flowgen
