#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace flowgen {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int vocab_size = 12110;
  /// Maximum number of message tokens in a training window. One extra
  /// position (0) is reserved for the sink token.
  int max_context = 1536;
  double rope_base = 10000.0;
  double ffn_multiplier = 8.0 / 3.0;
  double dropout = 0.0;
  double norm_eps = 1e-5;

  int head_dim() const { return d_model / n_heads; }
  /// ffn_multiplier * d_model rounded up to a multiple of 64.
  int ffn_hidden() const;

  /// Throws ConfigError.
  void validate() const;

  /// {64, 2, 4, vocab, 1536}.
  static ModelConfig toy(int vocab_size);
  /// {768, 12, 12, vocab, 10368}.
  static ModelConfig reference(int vocab_size);

  std::uint64_t hash() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace flowgen
