#include "flowgen/stylized.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "flowgen/model/sampling.hpp"

namespace flowgen {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double se_slope = 0.0;
  double r2 = 0.0;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    ssr += e * e;
  }
  f.se_slope = x.size() > 2 ? std::sqrt(ssr / (n - 2.0) / sxx) : 0.0;
  f.r2 = syy > 0.0 ? 1.0 - ssr / syy : 1.0;
  return f;
}

/// Distinct integers on a log grid in [lo, hi].
std::vector<int> log_grid(int lo, int hi, int points) {
  std::vector<int> out;
  const double a = std::log(static_cast<double>(lo));
  const double b = std::log(static_cast<double>(hi));
  for (int i = 0; i < points; ++i) {
    const int v = static_cast<int>(std::lround(std::exp(a + (b - a) * i / (points - 1))));
    if (out.empty() || v != out.back()) out.push_back(v);
  }
  return out;
}

}  // namespace

std::vector<MidPoint> mid_points(std::span<const MarketRecord> records) {
  std::vector<MidPoint> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    MidPoint p{r.message.timestamp_ns, std::nullopt};
    if (const auto m2 = r.after.mid2()) p.mid = static_cast<double>(*m2) / 200.0;  // dollars
    out.push_back(p);
  }
  return out;
}

std::vector<std::optional<double>> mid_grid(std::span<const MidPoint> mids, double delta_s) {
  if (!(delta_s > 0.0)) throw EstimatorError("delta must be positive");
  std::vector<std::optional<double>> grid;
  if (mids.empty()) return grid;
  const auto step = static_cast<std::int64_t>(std::llround(delta_s * 1e9));
  const std::int64_t first = mids.front().time_ns;
  std::int64_t t = (first + step - 1) / step * step;
  std::size_t i = 0;
  std::optional<double> cur;
  for (; t <= mids.back().time_ns; t += step) {
    while (i < mids.size() && mids[i].time_ns <= t) cur = mids[i++].mid;
    grid.push_back(cur);
  }
  return grid;
}

ReturnSeries mid_returns(std::span<const MidPoint> mids, double delta_s) {
  const auto grid = mid_grid(mids, delta_s);
  if (grid.size() < 2) throw EstimatorError("need at least two grid points for returns");
  ReturnSeries r;
  r.interval_s = delta_s;
  r.grid_points = grid.size();
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    if (!grid[k] || !grid[k + 1] || *grid[k] <= 0.0 || *grid[k + 1] <= 0.0) {
      ++r.missing;
      continue;
    }
    r.values.push_back(std::log(*grid[k + 1] / *grid[k]));
  }
  return r;
}

double excess_kurtosis(std::span<const double> x) {
  if (x.size() < 4) throw EstimatorError("kurtosis needs at least 4 values");
  const auto n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = (v - mean) * (v - mean);
    m2 += d;
    m4 += d * d;
  }
  m2 /= n;
  m4 /= n;
  if (!(m2 > 0.0)) throw EstimatorError("kurtosis of a constant series");
  return m4 / (m2 * m2) - 3.0;
}

AcfCurve acf(std::span<const double> x, int max_lag) {
  if (max_lag < 0 || x.size() <= static_cast<std::size_t>(max_lag) + 1) {
    throw EstimatorError("series too short for the requested lag");
  }
  AcfCurve c;
  c.band = 1.96 / std::sqrt(static_cast<double>(x.size()));
  for (int lag = 0; lag <= max_lag; ++lag) {
    const std::size_t m = x.size() - static_cast<std::size_t>(lag);
    const auto a = x.subspan(0, m);
    const auto b = x.subspan(static_cast<std::size_t>(lag), m);
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(m);
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(m);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) {
      if (lag == 0) throw EstimatorError("autocorrelation of a constant series");
      c.values.push_back(std::numeric_limits<double>::quiet_NaN());  // one side constant over the overlap
      continue;
    }
    c.values.push_back(lag == 0 ? 1.0 : sab / std::sqrt(saa * sbb));
  }
  return c;
}

AcfCurve acf_squared(std::span<const double> x, int max_lag) {
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return v * v; });
  return acf(y, max_lag);
}

AcfCurve acf_abs(std::span<const double> x, int max_lag) {
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return std::abs(v); });
  return acf(y, max_lag);
}

DfaResult dfa_alpha(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 1024) throw EstimatorError("DFA needs at least 1024 values");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::vector<double> y(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) y[i] = acc += x[i] - mean;

  DfaResult r;
  std::vector<double> lx, ly;
  for (int s : log_grid(16, static_cast<int>(n / 4), 24)) {
    // linear fit on t = 0..s-1 has closed-form sums
    const double st = s * (s - 1) / 2.0;
    const double stt = (s - 1.0) * s * (2.0 * s - 1.0) / 6.0;
    const double den = s * stt - st * st;
    const std::size_t windows = n / static_cast<std::size_t>(s);
    double total = 0.0;
    for (std::size_t w = 0; w < windows; ++w) {
      const double* seg = y.data() + w * static_cast<std::size_t>(s);
      double sy = 0.0, sty = 0.0;
      for (int t = 0; t < s; ++t) {
        sy += seg[t];
        sty += t * seg[t];
      }
      const double b = (s * sty - st * sy) / den;
      const double a = (sy - b * st) / s;
      double ss = 0.0;
      for (int t = 0; t < s; ++t) {
        const double e = seg[t] - a - b * t;
        ss += e * e;
      }
      total += ss / s;
    }
    const double f = std::sqrt(total / static_cast<double>(windows));
    if (!(f > 0.0)) continue;
    r.scales.push_back(s);
    r.fluctuation.push_back(f);
    lx.push_back(std::log(static_cast<double>(s)));
    ly.push_back(std::log(f));
  }
  if (lx.size() < 2) throw EstimatorError("DFA fluctuation vanished at every scale");
  const LineFit fit = fit_line(lx, ly);
  r.alpha = fit.slope;
  r.gamma = 2.0 - 2.0 * r.alpha;
  r.r2 = fit.r2;
  return r;
}

double anis_lloyd_expected(int n) {
  if (n < 2) throw EstimatorError("Anis-Lloyd expectation needs n >= 2");
  const double nd = n;
  double sum = 0.0;
  for (int i = 1; i < n; ++i) sum += std::sqrt((nd - i) / i);
  double ratio = 0.0;  // Gamma((n-1)/2) / (sqrt(pi) Gamma(n/2))
  if (n <= 340) {
    ratio = std::tgamma((nd - 1.0) / 2.0) / (std::sqrt(M_PI) * std::tgamma(nd / 2.0));
  } else {
    ratio = std::exp(std::lgamma((nd - 1.0) / 2.0) - std::lgamma(nd / 2.0)) / std::sqrt(M_PI);
  }
  return ratio * sum;
}

HurstResult hurst_rs(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 512) throw EstimatorError("R/S analysis needs at least 512 values");
  HurstResult r;
  std::vector<double> lx, ly;
  for (int s : log_grid(16, static_cast<int>(n / 4), 20)) {
    const std::size_t windows = n / static_cast<std::size_t>(s);
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t w = 0; w < windows; ++w) {
      const auto seg = x.subspan(w * static_cast<std::size_t>(s), static_cast<std::size_t>(s));
      const double mean = std::accumulate(seg.begin(), seg.end(), 0.0) / s;
      double cum = 0.0, lo = 0.0, hi = 0.0, ss = 0.0;
      for (double v : seg) {
        cum += v - mean;
        lo = std::min(lo, cum);
        hi = std::max(hi, cum);
        ss += (v - mean) * (v - mean);
      }
      const double sd = std::sqrt(ss / s);
      if (!(sd > 0.0)) continue;
      sum += (hi - lo) / sd;
      ++used;
    }
    if (used == 0) continue;
    const double rs = sum / static_cast<double>(used);
    const double e = anis_lloyd_expected(s);
    r.sizes.push_back(s);
    r.rs.push_back(rs);
    r.expected.push_back(e);
    lx.push_back(std::log(static_cast<double>(s)));
    ly.push_back(std::log(rs) - std::log(e));
  }
  if (lx.size() < 3) throw EstimatorError("R/S undefined at too many window sizes");
  const LineFit fit = fit_line(lx, ly);
  r.H = 0.5 + fit.slope;
  r.se = fit.se_slope;
  r.ci_low = r.H - 1.96 * r.se;
  r.ci_high = r.H + 1.96 * r.se;
  return r;
}

Histogram histogram(std::span<const double> x, double lo, double hi, int bins) {
  if (bins < 1) throw EstimatorError("bins must be >= 1");
  if (!(hi >= lo)) throw EstimatorError("histogram range is empty");
  if (hi == lo) hi = lo + 1.0;
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = (hi - lo) / bins;
  for (double v : x) {
    if (!(v >= lo && v <= hi)) continue;
    auto b = static_cast<std::size_t>((v - lo) / width);
    if (b >= static_cast<std::size_t>(bins)) b = static_cast<std::size_t>(bins) - 1;
    ++h.counts[b];
  }
  return h;
}

std::vector<Histogram> compare_histograms(const std::vector<std::span<const double>>& series, int bins) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& s : series) {
    for (double v : s) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  std::vector<Histogram> out;
  for (const auto& s : series) out.push_back(histogram(s, lo, hi, bins));
  return out;
}

FlowStats flow_distributions(std::span<const OrderFlowMessage> msgs) {
  FlowStats f;
  f.messages = msgs.size();
  std::array<std::optional<std::int64_t>, kNumMsgTypes> last{};
  std::uint64_t adds = 0, round = 0;
  for (const auto& m : msgs) {
    const std::size_t k = index_of(m.type);
    ++f.type_counts[k];
    if (last[k]) f.inter_arrival_s[k].push_back(static_cast<double>(m.timestamp_ns - *last[k]) * 1e-9);
    last[k] = m.timestamp_ns;
    f.sizes[k].push_back(static_cast<double>(m.size));
    if (m.type == MsgType::Add) {
      ++adds;
      round += m.size % 100 == 0;
    }
    if (m.type == MsgType::Execute || m.type == MsgType::ExecuteAtPrice) f.executed_shares += m.size;
  }
  const auto n = static_cast<double>(msgs.size());
  for (std::size_t k = 0; k < kNumMsgTypes; ++k) {
    if (msgs.empty()) break;
    const double p = static_cast<double>(f.type_counts[k]) / n;
    const double half = 1.96 * std::sqrt(p * (1.0 - p) / n);
    f.type_freq[k] = p;
    f.freq_ci_low[k] = std::max(0.0, p - half);
    f.freq_ci_high[k] = std::min(1.0, p + half);
  }
  f.round_lot_mass = adds == 0 ? 0.0 : static_cast<double>(round) / static_cast<double>(adds);
  return f;
}

MarketSeries market_series(std::span<const MarketRecord> records) {
  MarketSeries s;
  double dollars = 0.0, shares = 0.0;
  std::int64_t cur = std::numeric_limits<std::int64_t>::min();
  double sp_sum = 0.0, vb_sum = 0.0, va_sum = 0.0;
  std::size_t sp_n = 0, v_n = 0;
  auto flush = [&] {
    if (cur == std::numeric_limits<std::int64_t>::min()) return;
    s.second.push_back(cur);
    s.spread.push_back(sp_n ? sp_sum / static_cast<double>(sp_n) : kNaN);
    s.vol_bid.push_back(v_n ? vb_sum / static_cast<double>(v_n) : kNaN);
    s.vol_ask.push_back(v_n ? va_sum / static_cast<double>(v_n) : kNaN);
  };
  for (const auto& r : records) {
    const std::int64_t sec = r.message.timestamp_ns / kNanosPerSecond;
    if (sec != cur) {
      flush();
      // carry the previous averages through seconds without events
      if (cur != std::numeric_limits<std::int64_t>::min()) {
        for (std::int64_t g = cur + 1; g < sec; ++g) {
          s.second.push_back(g);
          s.spread.push_back(s.spread.back());
          s.vol_bid.push_back(s.vol_bid.back());
          s.vol_ask.push_back(s.vol_ask.back());
        }
      }
      cur = sec;
      sp_sum = vb_sum = va_sum = 0.0;
      sp_n = v_n = 0;
    }
    if (r.after.best_bid && r.after.best_ask) {
      sp_sum += static_cast<double>(*r.after.best_ask - *r.after.best_bid);
      ++sp_n;
    }
    vb_sum += static_cast<double>(r.after.vol_bid);
    va_sum += static_cast<double>(r.after.vol_ask);
    ++v_n;
    for (const auto& t : r.trades) {
      dollars += static_cast<double>(t.price) * t.size / 100.0;
      shares += t.size;
    }
    s.cum_dollars.push_back(dollars);
    s.cum_shares.push_back(shares);
    const auto m2 = r.after.mid2();
    s.mid.push_back(m2 ? static_cast<double>(*m2) / 200.0 : kNaN);
  }
  flush();
  return s;
}

double percentile(std::vector<double> x, double q) {
  if (x.empty()) throw EstimatorError("percentile of empty data");
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(i);
  if (i + 1 >= x.size()) return x.back();
  return x[i] + frac * (x[i + 1] - x[i]);
}

FanResult future_return_fan(std::span<const MarketRecord> records, int horizon, int n_samples, std::uint64_t seed) {
  if (horizon < 1 || n_samples < 1) throw EstimatorError("horizon and sample count must be positive");
  const auto h = static_cast<std::size_t>(horizon);
  if (records.size() <= h) throw EstimatorError("trace not longer than the fan horizon");
  std::vector<double> mids(records.size(), kNaN);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (const auto m2 = records[i].after.mid2()) mids[i] = static_cast<double>(*m2) / 2.0;
  }
  // start s in [1, N - h]: base is the mid after message s-1, i.e. just before s
  const std::size_t starts = records.size() - h;
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> curves(h);
  FanResult f;
  for (int k = 0; k < n_samples; ++k) {
    const std::size_t s = 1 + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(starts));
    const double base = mids[s - 1];
    bool ok = std::isfinite(base) && base > 0.0;
    for (std::size_t t = 1; ok && t <= h; ++t) ok = std::isfinite(mids[s - 1 + t]) && mids[s - 1 + t] > 0.0;
    if (!ok) {
      ++f.skipped;
      continue;
    }
    for (std::size_t t = 1; t <= h; ++t) curves[t - 1].push_back(std::log(mids[s - 1 + t] / base));
    ++f.samples;
  }
  for (std::size_t t = 0; t < h; ++t) {
    if (curves[t].empty()) {
      f.mean.push_back(kNaN);
      f.lo.push_back(kNaN);
      f.hi.push_back(kNaN);
      continue;
    }
    f.mean.push_back(std::accumulate(curves[t].begin(), curves[t].end(), 0.0) / static_cast<double>(curves[t].size()));
    f.lo.push_back(percentile(curves[t], 0.025));
    f.hi.push_back(percentile(curves[t], 0.975));
  }
  return f;
}

std::vector<MarketRecord> records_from_feed(std::span<const OrderFlowMessage> msgs) {
  OrderBook book;
  std::vector<MarketRecord> out;
  out.reserve(msgs.size());
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    MarketRecord r;
    r.message = msgs[i];
    std::vector<BookEvent> events;
    try {
      events = book.apply(msgs[i]);
    } catch (const std::exception& e) {
      throw ReplayError(i, e.what());
    }
    for (const auto& e : events) {
      if (const auto* t = std::get_if<Trade>(&e)) r.trades.push_back(*t);
    }
    r.after = top_of_book(book);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace flowgen
