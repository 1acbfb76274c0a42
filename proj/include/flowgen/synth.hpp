#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "flowgen/feed.hpp"

namespace flowgen {

/// Parameters of the zero-intelligence order-flow generator used as a
/// stand-in for proprietary exchange data. It is a test fixture, not a
/// market model.
struct FeedConfig {
  std::uint16_t symbol_id = 0;
  SessionWindow session;
  std::int64_t start_ns = hms_to_ns(9, 0, 0);
  std::int64_t initial_price = 17000;  // ticks

  /// Arrival intensity per message type (events per second), indexed by MsgType.
  std::array<double, kNumMsgTypes> intensity = {10.0, 1.5, 0.15, 7.0, 1.35};

  /// Size mixture: with probability round_lot_mass a multiple of 100 shares,
  /// otherwise an odd-lot/mixed size from a discretised log-normal that is never
  /// a multiple of 100. Weights sum to one.
  double round_lot_mass = 0.30;
  double odd_lot_mass = 0.70;
  double round_lot_mean_lots = 2.0;  // geometric mean number of lots
  double odd_lot_log_mean = 3.6;
  double odd_lot_log_sd = 1.0;

  /// Mean distance (ticks) of new limit prices behind the opposite best quote.
  double price_scale = 3.0;
  /// Probability that an execution consumes the whole resting order.
  double full_fill_prob = 0.5;
  /// Probability that a cancel removes the whole resting order.
  double full_cancel_prob = 0.6;

  std::uint64_t seed = 1;

  /// Throws std::invalid_argument if the configuration is inconsistent.
  void validate() const;
};

/// Deterministic given config.seed. Every referential message targets an
/// order resting at generation time, so the output replays without errors.
std::vector<OrderFlowMessage> synth_feed(const FeedConfig& config, std::size_t n_messages);

}  // namespace flowgen
