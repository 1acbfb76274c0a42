#include "flowgen/report.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace flowgen {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json jnum(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

struct Computed {
  ReturnSeries returns;
  FlowStats flow;
  MarketSeries market;
  std::optional<AcfCurve> acf_sqr, acf_abs;
  std::optional<DfaResult> dfa;
  std::optional<HurstResult> hurst;
  std::optional<double> kurtosis;
  std::optional<FanResult> fan;
  std::vector<OrderFlowMessage> messages;
  nlohmann::json errors = nlohmann::json::object();
};

template <class F>
void attempt(nlohmann::json& errors, const char* key, F&& f) {
  try {
    f();
  } catch (const EstimatorError& e) {
    errors[key] = e.what();
  }
}

Computed compute(const Dataset& d, const EvalConfig& cfg) {
  Computed c;
  for (const auto& r : d.records) c.messages.push_back(r.message);
  c.flow = flow_distributions(c.messages);
  c.market = market_series(d.records);
  const auto mids = mid_points(d.records);
  attempt(c.errors, "returns", [&] { c.returns = mid_returns(mids, cfg.delta_s); });
  const auto& r = c.returns.values;
  std::vector<double> absr(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) absr[i] = std::abs(r[i]);
  attempt(c.errors, "kurtosis", [&] { c.kurtosis = excess_kurtosis(r); });
  const int lag = std::min<int>(cfg.max_lag, static_cast<int>(r.size()) - 2);
  attempt(c.errors, "acf", [&] {
    if (lag < 1) throw EstimatorError("too few returns for autocorrelation");
    c.acf_sqr = acf_squared(r, lag);
    c.acf_abs = acf_abs(r, lag);
  });
  attempt(c.errors, "dfa", [&] { c.dfa = dfa_alpha(absr); });
  attempt(c.errors, "hurst", [&] { c.hurst = hurst_rs(absr); });
  attempt(c.errors, "future_returns",
          [&] { c.fan = future_return_fan(d.records, cfg.horizon, cfg.fan_samples, cfg.seed); });
  return c;
}

nlohmann::json dataset_json(const Dataset& d, const Computed& c) {
  nlohmann::json j;
  j["name"] = d.name;
  j["generated"] = d.generated;
  j["messages"] = d.records.size();
  j["returns"] = {{"n", c.returns.values.size()},
                  {"grid_points", c.returns.grid_points},
                  {"missing_mid", c.returns.missing},
                  {"interval_s", c.returns.interval_s},
                  {"excess_kurtosis", c.kurtosis ? jnum(*c.kurtosis) : nlohmann::json(nullptr)}};
  if (c.acf_sqr) {
    std::vector<nlohmann::json> sq, ab;
    for (double v : c.acf_sqr->values) sq.push_back(jnum(v));
    for (double v : c.acf_abs->values) ab.push_back(jnum(v));
    j["acf"] = {{"band", c.acf_sqr->band}, {"squared", sq}, {"absolute", ab}};
  } else {
    j["acf"] = nullptr;
  }
  if (c.dfa) {
    j["dfa_abs_returns"] = {{"alpha", jnum(c.dfa->alpha)},
                            {"gamma", jnum(c.dfa->gamma)},
                            {"r2", jnum(c.dfa->r2)},
                            {"scales", c.dfa->scales.size()}};
  } else {
    j["dfa_abs_returns"] = nullptr;
  }
  if (c.hurst) {
    j["hurst_abs_returns"] = {{"H", jnum(c.hurst->H)},
                              {"se", jnum(c.hurst->se)},
                              {"ci95", {jnum(c.hurst->ci_low), jnum(c.hurst->ci_high)}},
                              {"sizes", c.hurst->sizes.size()}};
  } else {
    j["hurst_abs_returns"] = nullptr;
  }
  nlohmann::json types;
  for (MsgType t : kAllMsgTypes) {
    const std::size_t k = index_of(t);
    types[std::string(to_string(t))] = {{"count", c.flow.type_counts[k]},
                                        {"freq", c.flow.type_freq[k]},
                                        {"ci95", {c.flow.freq_ci_low[k], c.flow.freq_ci_high[k]}}};
  }
  j["message_types"] = types;
  j["round_lot_mass"] = c.flow.round_lot_mass;
  j["executed_shares"] = c.flow.executed_shares;
  j["traded"] = {{"dollars", c.market.cum_dollars.empty() ? 0.0 : c.market.cum_dollars.back()},
                 {"shares", c.market.cum_shares.empty() ? 0.0 : c.market.cum_shares.back()}};
  std::size_t undefined = 0;
  for (double m : c.market.mid) undefined += std::isnan(m);
  j["messages_without_mid"] = undefined;
  j["future_returns"] = c.fan ? nlohmann::json{{"samples", c.fan->samples}, {"skipped", c.fan->skipped}}
                              : nlohmann::json(nullptr);
  j["errors"] = c.errors;
  return j;
}

nlohmann::json mean_sd(const std::vector<double>& v) {
  if (v.empty()) return nullptr;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return {{"mean", jnum(m)}, {"sd", jnum(sd)}, {"n", v.size()}};
}

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) { row(header); }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

std::vector<std::string> names_of(const std::vector<Dataset>& ds) {
  std::vector<std::string> n;
  for (const auto& d : ds) n.push_back(d.name);
  return n;
}

std::string histogram_csv(const std::vector<Dataset>& ds, const std::vector<std::span<const double>>& series,
                          int bins) {
  const auto hs = compare_histograms(series, bins);
  std::vector<std::string> head = {"bin_lo", "bin_hi"};
  for (const auto& n : names_of(ds)) head.push_back(n);
  Csv csv(head);
  for (std::size_t b = 0; b < hs[0].counts.size(); ++b) {
    std::vector<std::string> row = {num(hs[0].edges[b]), num(hs[0].edges[b + 1])};
    for (const auto& h : hs) row.push_back(std::to_string(h.counts[b]));
    csv.row(row);
  }
  return csv.str();
}

std::string lower(std::string_view s) {
  std::string o(s);
  for (char& ch : o) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return o;
}

}  // namespace

nlohmann::json eval_config_json(const EvalConfig& c) {
  return {{"delta_s", c.delta_s}, {"max_lag", c.max_lag},         {"bins", c.bins},
          {"horizon", c.horizon}, {"fan_samples", c.fan_samples}, {"seed", c.seed}};
}

namespace {

nlohmann::json report_json(const std::vector<Dataset>& datasets, const std::vector<Computed>& cs,
                           const EvalConfig& cfg) {
  nlohmann::json j;
  j["config"] = eval_config_json(cfg);
  nlohmann::json arr = nlohmann::json::array();
  std::vector<double> kap, alpha, gamma, hurst;
  std::size_t common = datasets.empty() ? 0 : std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const Dataset& d = datasets[i];
    const Computed& c = cs[i];
    arr.push_back(dataset_json(d, c));
    common = std::min(common, d.records.size());
    if (!d.generated) continue;
    if (c.kurtosis && std::isfinite(*c.kurtosis)) kap.push_back(*c.kurtosis);
    if (c.dfa) {
      alpha.push_back(c.dfa->alpha);
      gamma.push_back(c.dfa->gamma);
    }
    if (c.hurst) hurst.push_back(c.hurst->H);
  }
  j["datasets"] = arr;
  j["generated_summary"] = {{"excess_kurtosis", mean_sd(kap)},
                            {"dfa_alpha", mean_sd(alpha)},
                            {"dfa_gamma", mean_sd(gamma)},
                            {"hurst", mean_sd(hurst)}};
  j["common_length_messages"] = common;
  return j;
}

}  // namespace

nlohmann::json stylized_report(const std::vector<Dataset>& datasets, const EvalConfig& cfg) {
  std::vector<Computed> cs;
  for (const auto& d : datasets) cs.push_back(compute(d, cfg));
  return report_json(datasets, cs, cfg);
}

std::vector<std::string> write_report(const std::vector<Dataset>& datasets, const EvalConfig& cfg,
                                      const std::string& dir) {
  if (datasets.empty()) throw std::invalid_argument("nothing to evaluate");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(fs::path(dir) / name, text);
    files.push_back(name);
  };

  std::vector<Computed> cs;
  for (const auto& d : datasets) cs.push_back(compute(d, cfg));
  emit("report.json", report_json(datasets, cs, cfg).dump(2) + "\n");

  {
    Csv csv({"dataset", "type", "count", "freq", "ci_low", "ci_high"});
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      for (MsgType t : kAllMsgTypes) {
        const std::size_t k = index_of(t);
        csv.row({datasets[i].name, std::string(to_string(t)), std::to_string(cs[i].flow.type_counts[k]),
                 num(cs[i].flow.type_freq[k]), num(cs[i].flow.freq_ci_low[k]), num(cs[i].flow.freq_ci_high[k])});
      }
    }
    emit("type_freq.csv", csv.str());
  }
  {
    std::vector<std::span<const double>> s;
    for (const auto& c : cs) s.emplace_back(c.returns.values);
    emit("return_hist.csv", histogram_csv(datasets, s, cfg.bins));
  }
  for (MsgType t : kAllMsgTypes) {
    const std::size_t k = index_of(t);
    std::vector<std::span<const double>> ia, sz;
    for (const auto& c : cs) {
      ia.emplace_back(c.flow.inter_arrival_s[k]);
      sz.emplace_back(c.flow.sizes[k]);
    }
    emit("interarrival_" + lower(to_string(t)) + ".csv", histogram_csv(datasets, ia, cfg.bins));
    emit("sizes_" + lower(to_string(t)) + ".csv", histogram_csv(datasets, sz, cfg.bins));
  }

  // 1-second series, aligned by offset from each dataset's first second
  std::size_t seconds = std::numeric_limits<std::size_t>::max();
  std::size_t msgs = std::numeric_limits<std::size_t>::max();
  for (const auto& c : cs) {
    seconds = std::min(seconds, c.market.second.size());
    msgs = std::min(msgs, c.market.mid.size());
  }
  auto series_csv = [&](const std::function<const std::vector<double>&(const MarketSeries&)>& get, std::size_t len,
                        const char* index) {
    std::vector<std::string> head = {index};
    for (const auto& n : names_of(datasets)) head.push_back(n);
    Csv csv(head);
    for (std::size_t t = 0; t < len; ++t) {
      std::vector<std::string> row = {std::to_string(t)};
      for (const auto& c : cs) row.push_back(num(get(c.market)[t]));
      csv.row(row);
    }
    return csv.str();
  };
  emit("spread.csv", series_csv([](const MarketSeries& m) -> const auto& { return m.spread; }, seconds, "second"));
  emit("vol_bid.csv", series_csv([](const MarketSeries& m) -> const auto& { return m.vol_bid; }, seconds, "second"));
  emit("vol_ask.csv", series_csv([](const MarketSeries& m) -> const auto& { return m.vol_ask; }, seconds, "second"));

  {
    std::vector<std::string> head = {"lag", "band_" + datasets[0].name};
    for (const auto& n : names_of(datasets)) {
      head.push_back(n + "_sqr");
      head.push_back(n + "_abs");
    }
    Csv csv(head);
    std::size_t lags = std::numeric_limits<std::size_t>::max();
    for (const auto& c : cs) lags = std::min(lags, c.acf_sqr ? c.acf_sqr->values.size() : std::size_t{0});
    for (std::size_t l = 0; l < lags; ++l) {
      std::vector<std::string> row = {std::to_string(l), num(cs[0].acf_sqr->band)};
      for (const auto& c : cs) {
        row.push_back(num(c.acf_sqr->values[l]));
        row.push_back(num(c.acf_abs->values[l]));
      }
      csv.row(row);
    }
    emit("acf.csv", csv.str());
  }
  {
    Csv csv({"dataset", "dfa_alpha", "dfa_gamma", "hurst", "hurst_ci_low", "hurst_ci_high", "excess_kurtosis"});
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      const auto& c = cs[i];
      const double nan = std::nan("");
      csv.row({datasets[i].name, num(c.dfa ? c.dfa->alpha : nan), num(c.dfa ? c.dfa->gamma : nan),
               num(c.hurst ? c.hurst->H : nan), num(c.hurst ? c.hurst->ci_low : nan),
               num(c.hurst ? c.hurst->ci_high : nan), num(c.kurtosis.value_or(nan))});
    }
    emit("long_memory.csv", csv.str());
  }
  emit("cum_dollars.csv",
       series_csv([](const MarketSeries& m) -> const auto& { return m.cum_dollars; }, msgs, "message"));
  emit("cum_shares.csv",
       series_csv([](const MarketSeries& m) -> const auto& { return m.cum_shares; }, msgs, "message"));
  emit("mid_price.csv", series_csv([](const MarketSeries& m) -> const auto& { return m.mid; }, msgs, "message"));
  {
    std::vector<std::string> head = {"offset"};
    for (const auto& n : names_of(datasets)) {
      head.push_back(n + "_mean");
      head.push_back(n + "_p025");
      head.push_back(n + "_p975");
    }
    Csv csv(head);
    for (int t = 1; t <= cfg.horizon; ++t) {
      std::vector<std::string> row = {std::to_string(t)};
      for (const auto& c : cs) {
        const auto k = static_cast<std::size_t>(t - 1);
        const double nan = std::nan("");
        row.push_back(num(c.fan ? c.fan->mean[k] : nan));
        row.push_back(num(c.fan ? c.fan->lo[k] : nan));
        row.push_back(num(c.fan ? c.fan->hi[k] : nan));
      }
      csv.row(row);
    }
    emit("future_returns.csv", csv.str());
  }
  return files;
}

}  // namespace flowgen
