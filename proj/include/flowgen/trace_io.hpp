#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "flowgen/sim.hpp"
#include "json.hpp"

namespace flowgen {

nlohmann::json message_to_json(const OrderFlowMessage& m);
OrderFlowMessage message_from_json(const nlohmann::json& j);

/// One JSON object per attempt: attempt, outcome, correction, reason, and for
/// accepted attempts the message, the top of book after it and its trades;
/// discarded attempts carry the sampled tokens instead.
nlohmann::json attempt_to_json(const AttemptRecord& a);
AttemptRecord attempt_from_json(const nlohmann::json& j);

/// Appends one line per attempt and flushes it, so a crash loses at most the line being written.
class TraceWriter {
 public:
  TraceWriter(const std::string& path, bool append);
  void write(const AttemptRecord& a);

 private:
  std::ofstream out_;
  std::string path_;
};

struct LoadedTrace {
  std::vector<AttemptRecord> attempts;
  SimCounters counters;
  std::uint64_t valid_bytes = 0;  // length of the well-formed prefix
  bool truncated_tail = false;    // a partial last line was ignored

  std::vector<MarketRecord> records() const;
  std::vector<OrderFlowMessage> messages() const;
};

/// Reads a JSONL trace. A malformed final line is treated as an interrupted
/// write and ignored; malformed lines elsewhere throw std::runtime_error.
LoadedTrace load_trace(const std::string& path);

/// Rebuilds the simulator from the history plus the accepted messages of a
/// partially written trace, restoring counters so sampling continues with the
/// next attempt's seed.
SimState resume_sim(std::span<const OrderFlowMessage> history, const Transformer<float>& model,
                    const Vocabulary& vocab, const SimConfig& cfg, const LoadedTrace& trace);

nlohmann::json sim_config_json(const SimConfig& c);
nlohmann::json summary_json(const SimCounters& c, const SimConfig& cfg, double wall_seconds);

}  // namespace flowgen
