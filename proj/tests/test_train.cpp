#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "flowgen/model/train.hpp"

using namespace flowgen;

namespace {

ModelConfig small(int vocab = 40) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.vocab_size = vocab;
  c.max_context = 48;
  return c;
}

// Position-dependent corpus: slot k of each 24-token group is a fixed token
// 80% of the time and uniform noise otherwise.
std::vector<TokenId> structured_corpus(std::size_t groups, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TokenId> out;
  for (std::size_t g = 0; g < groups; ++g) {
    for (int k = 0; k < 24; ++k) {
      const bool noise = rng() % 5 == 0;
      out.push_back(static_cast<TokenId>(noise ? 3 + rng() % 37 : 3 + (k * 7) % 37));
    }
  }
  return out;
}

double unigram_entropy(const std::vector<TokenId>& t) {
  std::map<TokenId, double> c;
  for (auto x : t) c[x] += 1;
  double h = 0;
  for (auto& [k, n] : c) {
    const double p = n / static_cast<double>(t.size());
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

TEST_CASE("config validation and errors") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate(small()));
  t.seq_tokens = 72;
  CHECK_THROWS_AS(t.validate(small()), ConfigError);
  t = TrainConfig{};
  t.micro_batch = 0;
  CHECK_THROWS_AS(t.validate(small()), ConfigError);
  t = TrainConfig{};
  t.lr = 0;
  CHECK_THROWS_AS(t.validate(small()), ConfigError);
  t = TrainConfig{};
  t.beta2 = 1.0;
  CHECK_THROWS_AS(t.validate(small()), ConfigError);
  Transformer<float> m(small());
  const std::vector<TokenId> shortc(30, 5);
  CHECK_THROWS_AS(Trainer(m, TrainConfig{}, shortc), TrainError);
  nlohmann::json j = TrainConfig{.steps = 7, .lr = 0.5};
  const auto back = j.get<TrainConfig>();
  CHECK(back.steps == 7);
  CHECK(back.lr == 0.5);
}

TEST_CASE("windows are message-aligned, in range and deterministic") {
  const auto w = training_windows(10'000, 48, 3, 5, 64);
  CHECK(w.size() == 64);
  for (auto s : w) {
    REQUIRE(s % 24 == 0);
    REQUIRE(s + 48 <= 10'000);
  }
  CHECK(w == training_windows(10'000, 48, 3, 5, 64));
  CHECK(w != training_windows(10'000, 48, 3, 6, 64));
  // a prefix of a longer request is the shorter request
  const auto w8 = training_windows(10'000, 48, 3, 5, 8);
  CHECK(std::equal(w8.begin(), w8.end(), w.begin()));
  CHECK(training_windows(48, 48, 1, 0, 3) == std::vector<std::size_t>{0, 0, 0});
  CHECK_THROWS_AS(training_windows(47, 48, 1, 0, 1), TrainError);
  CHECK(mix_seed(1, 2, 3) != mix_seed(1, 3, 2));
}

TEST_CASE("warmup schedule") {
  Transformer<float> m(small());
  const auto corpus = structured_corpus(10, 1);
  Trainer t(m, TrainConfig{.lr = 1e-2, .warmup = 4}, corpus);
  CHECK(t.learning_rate(0) == doctest::Approx(2.5e-3));
  CHECK(t.learning_rate(3) == doctest::Approx(1e-2));
  CHECK(t.learning_rate(100) == doctest::Approx(1e-2));
}

TEST_CASE("accumulation identity: 4 x 2 windows equals 1 x 8 and the manual sum") {
  const auto corpus = structured_corpus(50, 2);
  Transformer<float> m(small());
  m.init_weights(3);
  TrainConfig a{.micro_batch = 2, .accum = 4, .seq_tokens = 48, .threads = 1};
  TrainConfig b{.micro_batch = 8, .accum = 1, .seq_tokens = 48, .threads = 1};
  double la = 0, lb = 0;
  const auto ga = Trainer(m, a, corpus).gradient(&la);
  const auto gb = Trainer(m, b, corpus).gradient(&lb);
  CHECK(la == lb);
  double worst = 0;
  for (std::size_t i = 0; i < ga.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(ga[i] - gb[i])));
  CHECK(worst < 1e-6);

  // independent: mean of per-window gradients accumulated in double
  const auto starts = training_windows(corpus.size(), 48, a.seed, 0, 8);
  std::vector<double> manual(m.parameter_count(), 0.0);
  double lm = 0;
  for (auto s : starts) {
    std::vector<float> g(m.parameter_count(), 0.0f);
    lm += m.loss_and_grad(std::span(corpus).subspan(s, 48), g, 1.0f);
    for (std::size_t i = 0; i < g.size(); ++i) manual[i] += g[i] / 8.0;
  }
  CHECK(la == doctest::Approx(lm / 8).epsilon(1e-9));
  worst = 0;
  for (std::size_t i = 0; i < ga.size(); ++i) worst = std::max(worst, std::abs(ga[i] - manual[i]));
  CHECK(worst < 1e-6);
}

TEST_CASE("results do not depend on the thread count") {
  const auto corpus = structured_corpus(40, 4);
  std::vector<std::vector<float>> finals;
  for (int threads : {1, 2, 3}) {
    Transformer<float> m(small());
    m.init_weights(5);
    Trainer t(m, TrainConfig{.micro_batch = 3, .accum = 2, .seq_tokens = 48, .threads = threads}, corpus);
    for (int i = 0; i < 3; ++i) t.step();
    finals.emplace_back(m.parameters().begin(), m.parameters().end());
  }
  CHECK(finals[0] == finals[1]);
  CHECK(finals[0] == finals[2]);
}

TEST_CASE("resume from saved state reproduces an uninterrupted run") {
  const auto corpus = structured_corpus(40, 6);
  const TrainConfig cfg{.micro_batch = 2, .seq_tokens = 48, .lr = 5e-3, .warmup = 3, .seed = 9};
  Transformer<float> full(small());
  full.init_weights(7);
  Trainer tf(full, cfg, corpus);
  std::vector<double> losses_full;
  for (int i = 0; i < 6; ++i) losses_full.push_back(tf.step().loss);

  Transformer<float> first(small());
  first.init_weights(7);
  Trainer t1(first, cfg, corpus);
  for (int i = 0; i < 3; ++i) t1.step();
  Transformer<float> second(small());
  std::copy(first.parameters().begin(), first.parameters().end(), second.parameters().begin());
  Trainer t2(second, cfg, corpus);
  t2.adam_m() = t1.adam_m();
  t2.adam_v() = t1.adam_v();
  t2.set_step(t1.steps_done());
  std::vector<double> tail;
  for (int i = 0; i < 3; ++i) tail.push_back(t2.step().loss);
  CHECK(tail == std::vector<double>(losses_full.begin() + 3, losses_full.end()));
  CHECK(std::equal(second.parameters().begin(), second.parameters().end(), full.parameters().begin()));
  CHECK(t2.steps_done() == 6);
}

TEST_CASE("two-symbol alternating corpus is learned") {
  std::vector<TokenId> corpus;
  for (int i = 0; i < 480; ++i) corpus.push_back(i % 2 ? 6 : 5);
  Transformer<float> m(small());
  m.init_weights(1);
  Trainer t(m, TrainConfig{.micro_batch = 2, .seq_tokens = 48, .lr = 1e-2, .warmup = 5}, corpus);
  const double first = t.step().loss;
  double last = first;
  for (int i = 0; i < 60; ++i) last = t.step().loss;
  MESSAGE("alternating corpus loss " << first << " -> " << last);
  CHECK(last < 0.1 * first);
  CHECK(last < 0.1);
}

TEST_CASE("structured corpus: held-out loss beats the unigram baseline") {
  const auto corpus = structured_corpus(400, 8);
  const std::vector<TokenId> train(corpus.begin(), corpus.begin() + 24 * 360);
  const std::vector<TokenId> held(corpus.begin() + 24 * 360, corpus.end());
  Transformer<float> m(small());
  m.init_weights(2);
  Trainer t(m, TrainConfig{.micro_batch = 4, .seq_tokens = 48, .lr = 1e-2, .warmup = 10, .threads = 1}, train);
  const double before = evaluate_loss(m, held, 48);
  for (int i = 0; i < 200; ++i) t.step();
  const double after = evaluate_loss(m, held, 48);
  const double unigram = unigram_entropy(train);
  MESSAGE("held-out " << before << " -> " << after << ", unigram " << unigram);
  CHECK(after < unigram);
  CHECK(after < before);
}

TEST_CASE("evaluate_loss averages consecutive windows") {
  const auto corpus = structured_corpus(5, 3);
  Transformer<float> m(small());
  m.init_weights(4);
  const double l = evaluate_loss(m, corpus, 48);
  double manual = 0;
  for (int w = 0; w < 2; ++w) manual += m.loss(std::span(corpus).subspan(48 * w, 48));
  CHECK(l == doctest::Approx(manual / 2));
  CHECK(evaluate_loss(m, corpus, 48, 1) == doctest::Approx(m.loss(std::span(corpus).subspan(0, 48))));
  CHECK_THROWS_AS(evaluate_loss(m, std::span(corpus).subspan(0, 40), 48), TrainError);
}
