#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgen/model/transformer.hpp"
#include "json.hpp"

namespace flowgen {

struct TrainConfig {
  int steps = 200;
  int micro_batch = 4;  // windows per micro-batch
  int accum = 1;        // micro-batches per optimizer step
  int seq_tokens = 0;   // window length in tokens; 0 = model max_context
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int warmup = 20;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware concurrency

  void validate(const ModelConfig& model) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepStats {
  std::int64_t step = 0;  // 1-based index of the step just taken
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

/// Mixes a seed with coordinates into a well-spread 64-bit value (splitmix64).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Start offsets (24-aligned) of the windows used at `step`, in order
/// micro-batch major. Deterministic in (seed, step, window index).
std::vector<std::size_t> training_windows(std::size_t corpus_tokens, int seq_tokens, std::uint64_t seed,
                                          std::int64_t step, int count);

/// Adam with bias correction and gradient accumulation. The gradient of one
/// step is the mean over all micro_batch * accum windows, each window summed
/// in a fixed order so results do not depend on the thread count.
class Trainer {
 public:
  Trainer(Transformer<float>& model, TrainConfig cfg, std::span<const TokenId> corpus);

  StepStats step();
  /// Gradient of the mean loss at the current step's windows without updating.
  std::vector<float> gradient(double* loss = nullptr) const;

  std::int64_t steps_done() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  std::vector<float>& adam_m() { return m_; }
  std::vector<float>& adam_v() { return v_; }
  void set_step(std::int64_t s) { step_ = s; }

  double learning_rate(std::int64_t step) const;

 private:
  std::vector<float> accumulate(double* loss) const;

  Transformer<float>& model_;
  TrainConfig cfg_;
  std::span<const TokenId> corpus_;
  std::vector<float> m_, v_;
  std::int64_t step_ = 0;
};

/// Mean next-token loss over consecutive non-overlapping windows.
double evaluate_loss(const Transformer<float>& model, std::span<const TokenId> tokens, int seq_tokens,
                     std::size_t max_windows = 0);

}  // namespace flowgen
