#include "flowgen/model/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace flowgen {

void SampleParams::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("temperature must be > 0");
  if (!(top_p > 0.0) || top_p > 1.0) throw std::invalid_argument("top_p must be in (0, 1]");
}

TokenId sample_from(std::span<const double> values, std::span<const TokenId> ids, const SampleParams& params,
                    std::mt19937_64& rng) {
  if (values.size() != ids.size()) throw std::invalid_argument("values and ids differ in length");
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (std::isnan(v)) throw SampleError("NaN logit");
    mx = std::max(mx, v);
  }
  if (ids.empty() || mx == -std::numeric_limits<double>::infinity()) throw SampleError("no legal token to sample");

  std::vector<double> p(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    p[i] = std::exp((values[i] - mx) / params.temperature);
    sum += p[i];
  }
  for (double& x : p) x /= sum;

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto before = [&](std::size_t a, std::size_t b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return ids[a] < ids[b];
  };
  // sort only as long a prefix as the nucleus needs, growing it geometrically
  std::size_t keep = 0;
  double mass = 0.0;
  for (std::size_t k = std::min<std::size_t>(order.size(), 64);; k = std::min(order.size(), 4 * k)) {
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    keep = 0;
    mass = 0.0;
    while (keep < k) {
      mass += p[order[keep]];
      ++keep;
      if (mass >= params.top_p) break;
    }
    if (mass >= params.top_p || k == order.size()) break;
  }
  while (keep > 1 && p[order[keep - 1]] == 0.0) --keep;

  const double u = uniform01(rng) * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += p[order[i]];
    if (u < acc) return ids[order[i]];
  }
  return ids[order[keep - 1]];
}

template <class T>
TokenId sample_token(std::span<const T> logits, const SampleParams& params, std::span<const TokenId> legal,
                     std::mt19937_64& rng) {
  std::vector<double> values(legal.size());
  for (std::size_t i = 0; i < legal.size(); ++i) {
    if (legal[i] >= logits.size()) throw std::out_of_range("legal id outside logits");
    values[i] = static_cast<double>(logits[legal[i]]);
  }
  return sample_from(values, legal, params, rng);
}

template <class T>
TokenizedMessage generate_message(const Transformer<T>& model, StreamState<T>& state, const Vocabulary& vocab,
                                  const SampleParams& params, std::mt19937_64& rng) {
  TokenizedMessage out{};
  std::vector<T> buf;
  std::vector<double> values;
  for (std::size_t slot = 0; slot < kTokensPerMessage; ++slot) {
    const SlotMask& m = vocab.slot_mask(slot);
    buf.resize(m.range.count);
    model.next_logits(state, m.range.begin, m.range.count, buf.data());
    values.clear();
    if (m.nullable) {
      T nan_logit{};
      model.next_logits(state, Vocabulary::kNan, 1, &nan_logit);
      values.push_back(static_cast<double>(nan_logit));
    }
    for (T v : buf) values.push_back(static_cast<double>(v));
    out[slot] = sample_from(values, m.ids, params, rng);
    model.push(state, out[slot]);
  }
  return out;
}

template TokenId sample_token<float>(std::span<const float>, const SampleParams&, std::span<const TokenId>,
                                     std::mt19937_64&);
template TokenId sample_token<double>(std::span<const double>, const SampleParams&, std::span<const TokenId>,
                                      std::mt19937_64&);
template TokenizedMessage generate_message<float>(const Transformer<float>&, StreamState<float>&, const Vocabulary&,
                                                  const SampleParams&, std::mt19937_64&);
template TokenizedMessage generate_message<double>(const Transformer<double>&, StreamState<double>&,
                                                   const Vocabulary&, const SampleParams&, std::mt19937_64&);

}  // namespace flowgen
