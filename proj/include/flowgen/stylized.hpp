#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgen/message.hpp"
#include "flowgen/sim.hpp"

namespace flowgen {

class EstimatorError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mid observed right after an event; absent while the book is one-sided.
struct MidPoint {
  std::int64_t time_ns = 0;
  std::optional<double> mid;
};

std::vector<MidPoint> mid_points(std::span<const MarketRecord> records);

/// Samples the event-time mids on the grid t_k = t_0 + k*delta (t_0 the first
/// grid time at or after the first event), carrying the last observation forward.
std::vector<std::optional<double>> mid_grid(std::span<const MidPoint> mids, double delta_s);

struct ReturnSeries {
  std::vector<double> values;  // ln(p_{t+delta} / p_t)
  double interval_s = 1.0;
  std::size_t grid_points = 0;
  std::size_t missing = 0;  // returns skipped because a mid was absent
};

/// Throws EstimatorError with fewer than two grid points.
ReturnSeries mid_returns(std::span<const MidPoint> mids, double delta_s);

/// m4 / m2^2 - 3 with population moments (no small-sample correction).
double excess_kurtosis(std::span<const double> x);

struct AcfCurve {
  std::vector<double> values;  // index = lag, values[0] = 1
  double band = 0.0;           // 1.96 / sqrt(n)
};

/// Pearson correlation of (x_t, x_{t+lag}) over the overlapping part; NaN at a
/// lag where either side of the overlap is constant.
AcfCurve acf(std::span<const double> x, int max_lag);
AcfCurve acf_squared(std::span<const double> x, int max_lag);
AcfCurve acf_abs(std::span<const double> x, int max_lag);

struct DfaResult {
  double alpha = 0.0;
  double gamma = 0.0;  // 2 - 2 alpha
  double r2 = 0.0;
  std::vector<int> scales;
  std::vector<double> fluctuation;
};

/// First-order DFA on non-overlapping windows; scales on a log grid from 16
/// to n/4. Needs n >= 1024.
DfaResult dfa_alpha(std::span<const double> x);

/// Expected R/S of an independent Gaussian series of length n (Anis-Lloyd),
/// with R/S computed from the population standard deviation.
double anis_lloyd_expected(int n);

struct HurstResult {
  double H = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::vector<int> sizes;
  std::vector<double> rs;        // mean R/S per size
  std::vector<double> expected;  // Anis-Lloyd E[R/S]
};

/// Corrected R/S: H = 0.5 + slope of log(R/S) - log(E[R/S]) against log n.
/// Needs n >= 512.
HurstResult hurst_rs(std::span<const double> x);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::uint64_t> counts;
};

/// Linear bins over [lo, hi]; values outside are ignored, hi falls in the last bin.
Histogram histogram(std::span<const double> x, double lo, double hi, int bins);

struct FlowStats {
  std::size_t messages = 0;
  std::array<std::uint64_t, kNumMsgTypes> type_counts{};
  std::array<double, kNumMsgTypes> type_freq{};
  std::array<double, kNumMsgTypes> freq_ci_low{};
  std::array<double, kNumMsgTypes> freq_ci_high{};
  /// Seconds since the previous message of the same type.
  std::array<std::vector<double>, kNumMsgTypes> inter_arrival_s;
  std::array<std::vector<double>, kNumMsgTypes> sizes;
  double round_lot_mass = 0.0;  // share of Add sizes that are multiples of 100
  std::uint64_t executed_shares = 0;
};

FlowStats flow_distributions(std::span<const OrderFlowMessage> msgs);

/// Histograms of several datasets over shared edges (global min/max of the union).
std::vector<Histogram> compare_histograms(const std::vector<std::span<const double>>& series, int bins);

struct MarketSeries {
  std::vector<std::int64_t> second;  // whole seconds since midnight
  std::vector<double> spread;        // per-second mean of post-event values (ticks)
  std::vector<double> vol_bid;
  std::vector<double> vol_ask;
  std::vector<double> cum_dollars;   // per message
  std::vector<double> cum_shares;    // per message
  std::vector<double> mid;           // per message, NaN while undefined (dollars)
};

MarketSeries market_series(std::span<const MarketRecord> records);

struct FanResult {
  std::vector<double> mean;  // index t-1 for offset t = 1..horizon
  std::vector<double> lo;    // 2.5th percentile
  std::vector<double> hi;    // 97.5th percentile
  std::size_t samples = 0;
  std::size_t skipped = 0;   // starts whose mids were undefined
};

/// Log returns between the mid before a random start message and the mid
/// t messages later, over n_samples random starts.
FanResult future_return_fan(std::span<const MarketRecord> records, int horizon, int n_samples, std::uint64_t seed);

/// Replays a feed into per-message records (message, top of book after, trades).
std::vector<MarketRecord> records_from_feed(std::span<const OrderFlowMessage> msgs);

/// Linear-interpolated percentile (q in [0, 1]) of unsorted data.
double percentile(std::vector<double> x, double q);

}  // namespace flowgen
