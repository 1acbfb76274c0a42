#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

#include "flowgen/model/transformer.hpp"
#include "flowgen/vocab.hpp"

namespace flowgen {

struct SampleParams {
  double temperature = 1.02;
  double top_p = 0.98;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument.
  void validate() const;
};

class SampleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Draws one of `ids` given their logits (values[i] belongs to ids[i]).
///
/// Pipeline: divide by temperature, softmax, sort by (p desc, id asc),
/// keep the shortest prefix whose mass reaches top_p (at least one id),
/// renormalize, draw. -inf logits are masked. Throws SampleError if every
/// candidate is masked.
TokenId sample_from(std::span<const double> values, std::span<const TokenId> ids, const SampleParams& params,
                    std::mt19937_64& rng);

/// As sample_from over the full logits vector, restricted to `legal`.
template <class T>
TokenId sample_token(std::span<const T> logits, const SampleParams& params, std::span<const TokenId> legal,
                     std::mt19937_64& rng);

/// Samples 24 tokens, slot i restricted to vocab.slot_mask(i), pushing each
/// into the stream. Only the logits of legal ids are computed.
template <class T>
TokenizedMessage generate_message(const Transformer<T>& model, StreamState<T>& state, const Vocabulary& vocab,
                                  const SampleParams& params, std::mt19937_64& rng);

}  // namespace flowgen
