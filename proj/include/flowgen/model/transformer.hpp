#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "flowgen/model/config.hpp"
#include "flowgen/vocab.hpp"

namespace flowgen {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// y_i = gain_i * x_i / sqrt(mean(x^2) + eps)
template <class T>
ColVector<T> rmsnorm(const ColVector<T>& x, const ColVector<T>& gain, double eps = 1e-5);

/// Rotates consecutive pairs (2i, 2i+1) of one head vector by
/// position * base^(-2i/head_dim).
template <class T>
ColVector<T> rope(const ColVector<T>& x, double position, double base = 10000.0);

/// Per-stream rolling KV cache. Slot 0 holds the sink token; when the cache is
/// full the oldest `evict_block` entries after it are dropped and the remaining
/// keys are re-rotated so rotary positions stay cache-relative.
template <class T>
struct StreamState {
  int capacity = 0;
  int evict_block = 24;
  bool pin_sink = true;
  std::vector<RowMatrix<T>> keys;    // per layer: capacity x d_model, rotated to their slot
  std::vector<RowMatrix<T>> values;  // per layer: capacity x d_model
  int length = 0;
  std::int64_t evicted = 0;
  std::int64_t processed = 0;
  ColVector<T> last_hidden;  // final-normed hidden state of the newest token

  struct Mark {
    int length = 0;
    std::int64_t evicted = 0;
    std::int64_t processed = 0;
    ColVector<T> last_hidden;
  };
  Mark mark() const { return {length, evicted, processed, last_hidden}; }
  /// Truncates back to a mark. Throws std::logic_error if entries were evicted since.
  void rollback(const Mark& m);
};

/// Decoder-only transformer: token embedding, pre-norm blocks (RMSNorm ->
/// causal self-attention with RoPE -> residual, RMSNorm -> gated FFN ->
/// residual), final RMSNorm and an untied output projection. All parameters
/// live in one contiguous buffer.
template <class T>
class Transformer {
 public:
  using Mat = RowMatrix<T>;
  using Vec = ColVector<T>;

  explicit Transformer(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const TensorInfo& tensor(const std::string& name) const;
  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  /// Normal(0, 0.02) matrices (output projections scaled by 1/sqrt(2 n_layers)), unit gains.
  void init_weights(std::uint64_t seed);

  /// Logits for every input token; tokens occupy positions 0..n-1 and are
  /// used exactly as given (no sink is added).
  Mat forward(std::span<const TokenId> tokens) const;

  /// Streams tokens through `state`, returning one logits row per token.
  Mat forward(std::span<const TokenId> tokens, StreamState<T>& state) const;

  /// Mean next-token cross-entropy over tokens[1..]; the sink is prepended and
  /// is never a target.
  double loss(std::span<const TokenId> tokens) const;

  /// As loss(), additionally adding grad_scale * d(loss)/d(params) into grad.
  /// `dropout_rng` is only used when config().dropout > 0.
  double loss_and_grad(std::span<const TokenId> tokens, std::span<T> grad, T grad_scale,
                       std::mt19937_64* dropout_rng = nullptr) const;

  /// Fresh stream containing only the sink token. capacity counts the sink.
  StreamState<T> new_stream(int capacity, int evict_block = 24, bool pin_sink = true) const;
  /// Appends one token (evicting first if full) and updates last_hidden.
  void push(StreamState<T>& state, TokenId token) const;
  /// Logits of the next token for ids [begin, begin + count).
  void next_logits(const StreamState<T>& state, std::uint32_t begin, std::uint32_t count, T* out) const;
  Vec next_logits(const StreamState<T>& state) const;
  /// Drops the oldest evict_block entries (after the sink when pinned) and
  /// re-rotates the surviving keys.
  void evict(StreamState<T>& state) const;

 private:
  struct LayerView;
  struct Cache;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;
  using CMapVec = Eigen::Map<const Vec>;

  CMapMat mat(const TensorInfo& t) const;
  CMapVec vec(const TensorInfo& t) const;
  void run(std::span<const TokenId> seq, Cache& cache, std::mt19937_64* dropout_rng) const;
  void rope_rows(Mat& x, int first_position, int sign) const;

  ModelConfig cfg_;
  std::vector<TensorInfo> tensors_;
  std::vector<T> params_;
  std::vector<double> inv_freq_;
  // indices into tensors_
  std::size_t emb_ = 0, final_norm_ = 0, head_ = 0;
  struct LayerIdx {
    std::size_t attn_norm, wq, wk, wv, wo, ffn_norm, w1, w3, w2;
  };
  std::vector<LayerIdx> layers_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace flowgen
