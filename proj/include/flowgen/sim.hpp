#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgen/lob.hpp"
#include "flowgen/model/sampling.hpp"
#include "flowgen/model/transformer.hpp"
#include "flowgen/preprocess.hpp"
#include "flowgen/vocab.hpp"

namespace flowgen {

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How the context window is shortened once it exceeds context_messages.
///   Rolling    drop the oldest message's KV entries and re-rotate the rest
///   Recompute  rebuild the stream from the sink and the remaining messages
enum class KvPolicy { Rolling, Recompute };
std::string_view to_string(KvPolicy p);
KvPolicy kv_policy_from_string(std::string_view s);

struct SimConfig {
  /// History messages with timestamp < start_time_ns seed the book; 0 uses all.
  std::int64_t start_time_ns = hms_to_ns(10, 0, 0);
  int context_messages = 15;
  std::int64_t max_messages = 1000;  // accepted messages
  double max_seconds = 0.0;          // wall-clock budget; 0 = none
  int max_consecutive_discards = 100;
  SampleParams sample;
  std::uint64_t seed = 1;
  std::uint64_t trial_id = 0;
  KvPolicy kv_policy = KvPolicy::Rolling;

  void validate(const ModelConfig& model) const;
};

enum class Correction { Valid, Corrected, Reject };
std::string_view to_string(Correction c);

struct CorrectionResult {
  Correction outcome = Correction::Reject;
  OrderFlowMessage message;  // set unless rejected
  std::string reason;        // why corrected or rejected
};

/// Resolves a decoded message against the book.
///
/// Add messages are Valid when they carry a price. For referential messages
/// the target level is mid + ref_price_rel on the message's side; no level
/// means Reject. An order matching the reference entry time and size is Valid,
/// otherwise the head of the level's queue is substituted (Corrected). Sizes
/// larger than the target's resting size are clamped (Corrected).
CorrectionResult error_correct(const PreMessage& pre, const OrderBook& book, std::optional<std::int64_t> mid2,
                               std::int64_t timestamp_ns, std::uint64_t fresh_id, std::uint16_t symbol_id);

/// Book state recorded after each accepted message.
struct TopOfBook {
  std::optional<std::int64_t> best_bid;
  std::optional<std::int64_t> best_ask;
  std::uint64_t vol_bid = 0;
  std::uint64_t vol_ask = 0;

  std::optional<std::int64_t> mid2() const {
    if (!best_bid || !best_ask) return std::nullopt;
    return *best_bid + *best_ask;
  }
  bool operator==(const TopOfBook&) const = default;
};
TopOfBook top_of_book(const OrderBook& book);

/// One accepted message and what it did to the book.
struct MarketRecord {
  OrderFlowMessage message;
  TopOfBook after;
  std::vector<Trade> trades;
};

struct AttemptRecord {
  std::int64_t attempt = 0;
  bool accepted = false;
  Correction correction = Correction::Valid;  // Valid or Corrected when accepted
  std::string reason;
  TokenizedMessage tokens{};  // as sampled
  MarketRecord record;        // accepted only
  PreMessage pre;             // canonical form, accepted only
};

struct SimCounters {
  std::int64_t attempts = 0;
  std::int64_t accepted = 0;
  std::int64_t corrected = 0;
  std::int64_t discarded = 0;
  std::int64_t consecutive_discards = 0;
  std::int64_t rewritten = 0;  // accepted messages whose canonical tokens differ from the sample

  double discard_rate() const { return attempts == 0 ? 0.0 : static_cast<double>(discarded) / attempts; }
};

struct SimState {
  const Transformer<float>* model = nullptr;
  Vocabulary vocab;
  SimConfig cfg;
  std::uint16_t symbol_id = 0;
  OrderBook book;
  MidTracker mid;
  StreamState<float> stream;
  std::deque<TokenizedMessage> context;
  std::int64_t last_ts = 0;
  std::uint64_t next_id = 1;
  SimCounters counters;

  /// Covers the book, context tokens, clock, id counter and the KV cache.
  std::uint64_t hash() const;
};

/// History prefix used to seed a simulation (timestamp < start, or everything when start is 0).
std::vector<OrderFlowMessage> history_prefix(std::span<const OrderFlowMessage> history, std::int64_t start_time_ns);

/// Replays `history`, takes its last context_messages messages as the prompt
/// and primes the stream with sink + prompt. Throws SimError when the history
/// is shorter than the context.
SimState init_sim(std::span<const OrderFlowMessage> history, const Transformer<float>& model,
                  const Vocabulary& vocab, const SimConfig& cfg);

/// One generate -> decode -> correct -> apply attempt. Discards leave book,
/// context and stream exactly as they were.
AttemptRecord step(SimState& state);

/// Next-token logits obtained by re-tokenizing the context from scratch.
ColVector<float> recompute_logits(const SimState& state);

struct SimTrace {
  std::vector<AttemptRecord> attempts;
  SimCounters counters;
  double wall_seconds = 0.0;

  std::vector<MarketRecord> records() const;
  std::vector<OrderFlowMessage> messages() const;
};

using AttemptSink = std::function<void(const AttemptRecord&)>;

/// Steps until max_messages accepted (or the wall-clock budget runs out).
/// Throws SimError after max_consecutive_discards discards in a row.
SimTrace run(SimState& state, const AttemptSink& sink = {}, bool keep_attempts = true);

}  // namespace flowgen
