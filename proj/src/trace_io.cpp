#include "flowgen/trace_io.hpp"

#include <sstream>

namespace flowgen {

namespace {

template <class T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> get_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

nlohmann::json message_to_json(const OrderFlowMessage& m) {
  return {{"ts", m.timestamp_ns},
          {"type", to_string(m.type)},
          {"id", m.order_id},
          {"side", to_string(m.side)},
          {"size", m.size},
          {"price", m.price},
          {"remaining", opt(m.remaining_size)},
          {"new_id", opt(m.new_order_id)},
          {"price2", opt(m.exec_or_new_price)},
          {"symbol", m.symbol_id}};
}

OrderFlowMessage message_from_json(const nlohmann::json& j) {
  OrderFlowMessage m;
  m.timestamp_ns = j.at("ts").get<std::int64_t>();
  m.type = msg_type_from_string(j.at("type").get<std::string>());
  m.order_id = j.at("id").get<std::uint64_t>();
  m.side = side_from_string(j.at("side").get<std::string>());
  m.size = j.at("size").get<std::uint32_t>();
  m.price = j.at("price").get<std::int64_t>();
  m.remaining_size = get_opt<std::uint32_t>(j, "remaining");
  m.new_order_id = get_opt<std::uint64_t>(j, "new_id");
  m.exec_or_new_price = get_opt<std::int64_t>(j, "price2");
  m.symbol_id = j.at("symbol").get<std::uint16_t>();
  return m;
}

nlohmann::json attempt_to_json(const AttemptRecord& a) {
  nlohmann::json j = {{"attempt", a.attempt},
                      {"outcome", a.accepted ? "accepted" : "discarded"},
                      {"correction", to_string(a.correction)},
                      {"reason", a.reason}};
  if (a.accepted) {
    const auto& r = a.record;
    j["message"] = message_to_json(r.message);
    j["book"] = {{"best_bid", opt(r.after.best_bid)},
                 {"best_ask", opt(r.after.best_ask)},
                 {"vol_bid", r.after.vol_bid},
                 {"vol_ask", r.after.vol_ask}};
    nlohmann::json trades = nlohmann::json::array();
    for (const auto& t : r.trades) {
      trades.push_back({{"maker", t.maker_id}, {"taker", to_string(t.taker_side)}, {"price", t.price}, {"size", t.size}});
    }
    j["trades"] = trades;
  } else {
    j["tokens"] = a.tokens;
  }
  return j;
}

AttemptRecord attempt_from_json(const nlohmann::json& j) {
  AttemptRecord a;
  a.attempt = j.at("attempt").get<std::int64_t>();
  a.accepted = j.at("outcome").get<std::string>() == "accepted";
  const auto c = j.at("correction").get<std::string>();
  a.correction = c == "valid" ? Correction::Valid : c == "corrected" ? Correction::Corrected : Correction::Reject;
  a.reason = j.value("reason", "");
  if (a.accepted) {
    a.record.message = message_from_json(j.at("message"));
    const auto& b = j.at("book");
    a.record.after.best_bid = get_opt<std::int64_t>(b, "best_bid");
    a.record.after.best_ask = get_opt<std::int64_t>(b, "best_ask");
    a.record.after.vol_bid = b.at("vol_bid").get<std::uint64_t>();
    a.record.after.vol_ask = b.at("vol_ask").get<std::uint64_t>();
    for (const auto& t : j.at("trades")) {
      a.record.trades.push_back(Trade{t.at("maker").get<std::uint64_t>(), side_from_string(t.at("taker").get<std::string>()),
                                      t.at("price").get<std::int64_t>(), t.at("size").get<std::uint32_t>()});
    }
  } else if (j.contains("tokens")) {
    a.tokens = j.at("tokens").get<TokenizedMessage>();
  }
  return a;
}

TraceWriter::TraceWriter(const std::string& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc), path_(path) {
  if (!out_) throw std::runtime_error("cannot open trace file " + path);
}

void TraceWriter::write(const AttemptRecord& a) {
  out_ << attempt_to_json(a).dump() << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("write failed on " + path_);
}

std::vector<MarketRecord> LoadedTrace::records() const {
  std::vector<MarketRecord> out;
  for (const auto& a : attempts) {
    if (a.accepted) out.push_back(a.record);
  }
  return out;
}

std::vector<OrderFlowMessage> LoadedTrace::messages() const {
  std::vector<OrderFlowMessage> out;
  for (const auto& a : attempts) {
    if (a.accepted) out.push_back(a.record.message);
  }
  return out;
}

LoadedTrace load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  LoadedTrace t;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
    ++line_no;
    const std::size_t next = complete ? nl + 1 : text.size();
    try {
      if (!complete) throw std::runtime_error("unterminated line");
      t.attempts.push_back(attempt_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      if (next < text.size()) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed trace record: " + e.what());
      }
      t.truncated_tail = true;
      break;
    }
    pos = next;
    t.valid_bytes = pos;
  }
  for (const auto& a : t.attempts) {
    ++t.counters.attempts;
    if (a.accepted) {
      ++t.counters.accepted;
      if (a.correction == Correction::Corrected) ++t.counters.corrected;
      t.counters.consecutive_discards = 0;
    } else {
      ++t.counters.discarded;
      ++t.counters.consecutive_discards;
    }
  }
  if (!t.attempts.empty()) t.counters.attempts = t.attempts.back().attempt + 1;
  return t;
}

SimState resume_sim(std::span<const OrderFlowMessage> history, const Transformer<float>& model,
                    const Vocabulary& vocab, const SimConfig& cfg, const LoadedTrace& trace) {
  auto full = history_prefix(history, cfg.start_time_ns);
  for (const auto& m : trace.messages()) full.push_back(m);
  SimConfig c = cfg;
  c.start_time_ns = 0;
  SimState s = init_sim(full, model, vocab, c);
  s.cfg = cfg;
  s.counters = trace.counters;
  return s;
}

nlohmann::json sim_config_json(const SimConfig& c) {
  return {{"start_time_ns", c.start_time_ns},
          {"context_messages", c.context_messages},
          {"max_messages", c.max_messages},
          {"max_seconds", c.max_seconds},
          {"max_consecutive_discards", c.max_consecutive_discards},
          {"temperature", c.sample.temperature},
          {"top_p", c.sample.top_p},
          {"seed", c.seed},
          {"trial_id", c.trial_id},
          {"kv_policy", to_string(c.kv_policy)}};
}

nlohmann::json summary_json(const SimCounters& c, const SimConfig& cfg, double wall_seconds) {
  return {{"trial_id", cfg.trial_id},
          {"seed", cfg.seed},
          {"attempts", c.attempts},
          {"accepted", c.accepted},
          {"corrected", c.corrected},
          {"discarded", c.discarded},
          {"rewritten", c.rewritten},
          {"discard_rate", c.discard_rate()},
          {"reference_discard_rate", 0.07},
          {"wall_clock_s", wall_seconds},
          {"config", sim_config_json(cfg)}};
}

}  // namespace flowgen
