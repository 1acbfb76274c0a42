#include "flowgen/model/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <mutex>
#include <thread>

namespace flowgen {

void TrainConfig::validate(const ModelConfig& model) const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (micro_batch < 1 || accum < 1) throw ConfigError("micro_batch and accum must be >= 1");
  const int len = seq_tokens == 0 ? model.max_context : seq_tokens;
  if (len < 2 || len > model.max_context) throw ConfigError("seq_tokens must be in [2, max_context]");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (warmup < 0 || grad_clip < 0.0 || weight_decay < 0.0) throw ConfigError("negative schedule parameter");
  if (threads < 0) throw ConfigError("threads must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},         {"micro_batch", c.micro_batch}, {"accum", c.accum},
                     {"seq_tokens", c.seq_tokens}, {"lr", c.lr},                 {"beta1", c.beta1},
                     {"beta2", c.beta2},           {"eps", c.eps},               {"weight_decay", c.weight_decay},
                     {"warmup", c.warmup},         {"grad_clip", c.grad_clip},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.steps = j.value("steps", c.steps);
  c.micro_batch = j.value("micro_batch", c.micro_batch);
  c.accum = j.value("accum", c.accum);
  c.seq_tokens = j.value("seq_tokens", c.seq_tokens);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup = j.value("warmup", c.warmup);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto sm = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return sm(sm(sm(seed) ^ a) ^ b);
}

std::vector<std::size_t> training_windows(std::size_t corpus_tokens, int seq_tokens, std::uint64_t seed,
                                          std::int64_t step, int count) {
  const auto len = static_cast<std::size_t>(seq_tokens);
  if (corpus_tokens < len) throw TrainError("corpus shorter than one training window");
  const std::size_t slots = (corpus_tokens - len) / kTokensPerMessage + 1;
  std::vector<std::size_t> out;
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i)));
    out.push_back((rng() % slots) * kTokensPerMessage);
  }
  return out;
}

Trainer::Trainer(Transformer<float>& model, TrainConfig cfg, std::span<const TokenId> corpus)
    : model_(model), cfg_(cfg), corpus_(corpus) {
  if (cfg_.seq_tokens == 0) cfg_.seq_tokens = model.config().max_context;
  cfg_.validate(model.config());
  if (corpus_.size() < static_cast<std::size_t>(cfg_.seq_tokens)) {
    throw TrainError("corpus has " + std::to_string(corpus_.size()) + " tokens, fewer than one window of " +
                     std::to_string(cfg_.seq_tokens));
  }
  m_.assign(model.parameter_count(), 0.0f);
  v_.assign(model.parameter_count(), 0.0f);
}

double Trainer::learning_rate(std::int64_t step) const {
  if (cfg_.warmup > 0 && step < cfg_.warmup) return cfg_.lr * static_cast<double>(step + 1) / cfg_.warmup;
  return cfg_.lr;
}

std::vector<float> Trainer::accumulate(double* loss) const {
  const int count = cfg_.micro_batch * cfg_.accum;
  const auto starts = training_windows(corpus_.size(), cfg_.seq_tokens, cfg_.seed, step_, count);
  const std::size_t np = model_.parameter_count();
  std::vector<std::vector<float>> grads(static_cast<std::size_t>(count));
  std::vector<double> losses(static_cast<std::size_t>(count), 0.0);
  const float scale = 1.0f / static_cast<float>(count);

  unsigned workers = cfg_.threads > 0 ? static_cast<unsigned>(cfg_.threads) : std::thread::hardware_concurrency();
  workers = std::clamp<unsigned>(workers, 1, static_cast<unsigned>(count));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        auto& g = grads[static_cast<std::size_t>(i)];
        g.assign(np, 0.0f);
        std::mt19937_64 drop(mix_seed(cfg_.seed ^ 0xd50u, static_cast<std::uint64_t>(step_), static_cast<std::uint64_t>(i)));
        const auto w = corpus_.subspan(starts[static_cast<std::size_t>(i)], static_cast<std::size_t>(cfg_.seq_tokens));
        losses[static_cast<std::size_t>(i)] = model_.loss_and_grad(w, g, scale, &drop);
      } catch (...) {
        std::lock_guard lk(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<float> total = std::move(grads[0]);
  for (std::size_t i = 1; i < grads.size(); ++i) {
    const auto& g = grads[i];
    for (std::size_t k = 0; k < np; ++k) total[k] += g[k];
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!std::isfinite(losses[i])) {
      throw TrainError("non-finite loss at step " + std::to_string(step_ + 1) + " in window " + std::to_string(i) +
                       " (corpus offset " + std::to_string(starts[i]) + ")");
    }
    sum += losses[i];
  }
  if (loss) *loss = sum / count;
  return total;
}

std::vector<float> Trainer::gradient(double* loss) const { return accumulate(loss); }

StepStats Trainer::step() {
  double loss = 0.0;
  std::vector<float> g = accumulate(&loss);
  double norm2 = 0.0;
  for (float x : g) norm2 += static_cast<double>(x) * x;
  const double norm = std::sqrt(norm2);
  if (!std::isfinite(norm)) throw TrainError("non-finite gradient at step " + std::to_string(step_ + 1));
  const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;

  const double lr = learning_rate(step_);
  const std::int64_t t = step_ + 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(cfg_.eps);
  const auto decay = static_cast<float>(lr * cfg_.weight_decay);
  const auto cl = static_cast<float>(clip);
  auto params = model_.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const float gk = g[k] * cl;
    m_[k] = b1 * m_[k] + (1.0f - b1) * gk;
    v_[k] = b2 * v_[k] + (1.0f - b2) * gk * gk;
    params[k] -= step_size * m_[k] / (std::sqrt(v_[k] * inv_bc2) + eps) + decay * params[k];
  }
  step_ = t;
  return {t, loss, lr, norm};
}

double evaluate_loss(const Transformer<float>& model, std::span<const TokenId> tokens, int seq_tokens,
                     std::size_t max_windows) {
  const auto len = static_cast<std::size_t>(seq_tokens);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s + len <= tokens.size(); s += len) {
    if (max_windows != 0 && n == max_windows) break;
    sum += model.loss(tokens.subspan(s, len));
    ++n;
  }
  if (n == 0) throw TrainError("no complete evaluation window");
  return sum / static_cast<double>(n);
}

}  // namespace flowgen
