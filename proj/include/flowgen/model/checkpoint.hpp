#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgen/model/config.hpp"
#include "flowgen/model/transformer.hpp"
#include "json.hpp"

namespace flowgen {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint file: magic "FGCK", u32 LE header length, a JSON header
/// (format version, model config and its hash, vocab hash and ticker count,
/// seed, step, train config, tensor manifest), then little-endian float32
/// parameters followed by the Adam moments when present.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  ModelConfig config;
  std::uint64_t vocab_hash = 0;
  std::uint32_t tickers = 98;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  nlohmann::json train_config = nlohmann::json::object();
  std::vector<float> params;
  std::vector<float> adam_m;  // empty when not saved
  std::vector<float> adam_v;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

/// Header fields only (reads the whole file but skips tensor decoding).
nlohmann::json checkpoint_header(const std::string& path);

/// Builds a model and copies the parameters in.
Transformer<float> model_from_checkpoint(const Checkpoint& c);

}  // namespace flowgen
