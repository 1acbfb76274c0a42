#include "flowgen/sim.hpp"

#include <algorithm>

#include "byteio.hpp"
#include "flowgen/model/train.hpp"

namespace flowgen {

std::string_view to_string(KvPolicy p) { return p == KvPolicy::Rolling ? "rolling" : "recompute"; }

KvPolicy kv_policy_from_string(std::string_view s) {
  if (s == "rolling") return KvPolicy::Rolling;
  if (s == "recompute") return KvPolicy::Recompute;
  throw std::invalid_argument("unknown kv policy '" + std::string(s) + "' (expected rolling or recompute)");
}

std::string_view to_string(Correction c) {
  switch (c) {
    case Correction::Valid: return "valid";
    case Correction::Corrected: return "corrected";
    case Correction::Reject: return "reject";
  }
  return "?";
}

void SimConfig::validate(const ModelConfig& model) const {
  if (context_messages < 1) throw ConfigError("context_messages must be >= 1");
  if (static_cast<std::int64_t>(context_messages) * static_cast<std::int64_t>(kTokensPerMessage) >
      model.max_context) {
    throw ConfigError("context of " + std::to_string(context_messages) + " messages exceeds the model context of " +
                      std::to_string(model.max_context) + " tokens");
  }
  if (max_messages < 0) throw ConfigError("max_messages must be >= 0");
  if (max_seconds < 0.0) throw ConfigError("max_seconds must be >= 0");
  if (max_consecutive_discards < 1) throw ConfigError("max_consecutive_discards must be >= 1");
  try {
    sample.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

TopOfBook top_of_book(const OrderBook& book) {
  TopOfBook t;
  t.best_bid = book.best_bid();
  t.best_ask = book.best_ask();
  if (t.best_bid) t.vol_bid = book.depth(Side::Bid, *t.best_bid);
  if (t.best_ask) t.vol_ask = book.depth(Side::Ask, *t.best_ask);
  return t;
}

CorrectionResult error_correct(const PreMessage& pre, const OrderBook& book, std::optional<std::int64_t> mid2,
                               std::int64_t timestamp_ns, std::uint64_t fresh_id, std::uint16_t symbol_id) {
  CorrectionResult r;
  auto reject = [&](std::string why) {
    r.outcome = Correction::Reject;
    r.reason = std::move(why);
    return r;
  };
  if (pre.symbol_id != symbol_id) return reject("wrong ticker");
  if (pre.size == 0) return reject("zero size");

  PreMessage p = pre;
  const RestingOrder* target = nullptr;
  r.outcome = Correction::Valid;
  if (pre.type != MsgType::Add) {
    const auto px = reference_level_price(pre, mid2);
    if (!px) return reject("reference price unavailable");
    const PriceLevel* level = book.level(pre.side, *px);
    if (!level) return reject("no such level");
    target = find_reference(*level, pre);
    if (!target) {
      target = &level->queue.front();
      r.outcome = Correction::Corrected;
      r.reason = "reference mismatch; queue head substituted";
    }
    const bool reduces = pre.type == MsgType::Execute || pre.type == MsgType::ExecuteAtPrice ||
                         pre.type == MsgType::Cancel;
    if (reduces && p.size > target->size) {
      p.size = target->size;
      r.outcome = Correction::Corrected;
      if (r.reason.empty()) r.reason = "size clamped to resting size";
    }
    if (pre.type == MsgType::Replace && (!pre.size_aux || *pre.size_aux == 0)) return reject("replace without new size");
  }
  try {
    r.message = materialize(p, target, mid2, timestamp_ns, fresh_id);
  } catch (const ResolutionError& e) {
    return reject(e.what());
  }
  const std::int64_t quote = r.message.type == MsgType::Replace || r.message.type == MsgType::ExecuteAtPrice
                                 ? r.message.exec_or_new_price.value_or(0)
                                 : r.message.price;
  if (quote <= 0) return reject("non-positive price");
  return r;
}

std::vector<OrderFlowMessage> history_prefix(std::span<const OrderFlowMessage> history, std::int64_t start_time_ns) {
  if (start_time_ns == 0) return {history.begin(), history.end()};
  std::vector<OrderFlowMessage> out;
  for (const auto& m : history) {
    if (m.timestamp_ns >= start_time_ns) break;
    out.push_back(m);
  }
  return out;
}

namespace {

StreamState<float> prime_stream(const Transformer<float>& model, const std::deque<TokenizedMessage>& context,
                                int context_messages) {
  const int capacity = 1 + static_cast<int>(kTokensPerMessage) * (context_messages + 1);
  auto s = model.new_stream(capacity, static_cast<int>(kTokensPerMessage), true);
  for (const auto& msg : context) {
    for (TokenId t : msg) model.push(s, t);
  }
  return s;
}

std::uint64_t max_id(std::span<const OrderFlowMessage> msgs) {
  std::uint64_t id = 0;
  for (const auto& m : msgs) {
    id = std::max(id, m.order_id);
    if (m.new_order_id) id = std::max(id, *m.new_order_id);
  }
  return id;
}

}  // namespace

SimState init_sim(std::span<const OrderFlowMessage> history, const Transformer<float>& model,
                  const Vocabulary& vocab, const SimConfig& cfg) {
  cfg.validate(model.config());
  if (vocab.size() != static_cast<std::uint32_t>(model.config().vocab_size)) {
    throw SimError("vocabulary size " + std::to_string(vocab.size()) + " does not match model vocab " +
                   std::to_string(model.config().vocab_size));
  }
  const auto prefix = history_prefix(history, cfg.start_time_ns);
  const auto m = static_cast<std::size_t>(cfg.context_messages);
  if (prefix.size() < m) {
    throw SimError("insufficient history: " + std::to_string(prefix.size()) + " messages before start, context needs " +
                   std::to_string(m));
  }
  SimState s;
  s.model = &model;
  s.vocab = vocab;
  s.cfg = cfg;
  s.symbol_id = prefix.back().symbol_id;
  if (s.symbol_id >= vocab.tickers()) throw SimError("symbol id outside the vocabulary's ticker range");

  Stationarizer st;
  std::deque<PreMessage> tail;
  for (const auto& msg : prefix) {
    tail.push_back(st.push(msg));
    if (tail.size() > m) tail.pop_front();
  }
  s.book = st.book();
  s.mid = st.mid();
  for (const auto& p : tail) s.context.push_back(encode(p.tokenized_view(), vocab));
  s.stream = prime_stream(model, s.context, cfg.context_messages);
  s.last_ts = prefix.back().timestamp_ns;
  s.next_id = max_id(prefix) + 1;
  return s;
}

AttemptRecord step(SimState& s) {
  const Transformer<float>& model = *s.model;
  AttemptRecord rec;
  rec.attempt = s.counters.attempts;
  const auto mark = s.stream.mark();
  std::mt19937_64 rng(mix_seed(mix_seed(s.cfg.seed, s.cfg.trial_id), static_cast<std::uint64_t>(rec.attempt)));
  rec.tokens = generate_message(model, s.stream, s.vocab, s.cfg.sample, rng);
  ++s.counters.attempts;

  auto discard = [&](std::string why) {
    s.stream.rollback(mark);
    ++s.counters.discarded;
    ++s.counters.consecutive_discards;
    rec.accepted = false;
    rec.correction = Correction::Reject;
    rec.reason = std::move(why);
    return rec;
  };

  PreMessage pre;
  try {
    pre = decode(rec.tokens, s.vocab);
  } catch (const TokenDecodeError& e) {
    return discard(std::string("decode: ") + e.what());
  }
  const std::int64_t ts = s.last_ts + static_cast<std::int64_t>(pre.dt_s) * kNanosPerSecond + pre.dt_ns;
  CorrectionResult cr = error_correct(pre, s.book, s.mid.reference(), ts, s.next_id, s.symbol_id);
  if (cr.outcome == Correction::Reject) return discard(cr.reason);

  const OrderFlowMessage& msg = cr.message;
  PreMessage canon;
  TokenizedMessage canon_tokens{};
  try {
    canon = to_pre_message(msg, s.book, s.mid.reference(), s.last_ts);
    canon_tokens = encode(canon.tokenized_view(), s.vocab);
  } catch (const std::exception& e) {
    return discard(std::string("restationarize: ") + e.what());
  }
  std::vector<BookEvent> events;
  try {
    events = s.book.apply(msg);
  } catch (const std::exception& e) {
    return discard(std::string("apply: ") + e.what());
  }
  s.mid.update(s.book);

  if (canon_tokens != rec.tokens) {
    s.stream.rollback(mark);
    for (TokenId t : canon_tokens) model.push(s.stream, t);
    ++s.counters.rewritten;
  }
  s.context.push_back(canon_tokens);
  if (s.context.size() > static_cast<std::size_t>(s.cfg.context_messages)) {
    s.context.pop_front();
    if (s.cfg.kv_policy == KvPolicy::Rolling) {
      model.evict(s.stream);
    } else {
      s.stream = prime_stream(model, s.context, s.cfg.context_messages);
    }
  }
  s.last_ts = msg.timestamp_ns;
  if (msg.type == MsgType::Add || msg.type == MsgType::Replace) ++s.next_id;

  ++s.counters.accepted;
  if (cr.outcome == Correction::Corrected) ++s.counters.corrected;
  s.counters.consecutive_discards = 0;
  rec.accepted = true;
  rec.correction = cr.outcome;
  rec.reason = cr.reason;
  rec.pre = canon;
  rec.record.message = msg;
  rec.record.after = top_of_book(s.book);
  for (const auto& e : events) {
    if (const auto* t = std::get_if<Trade>(&e)) rec.record.trades.push_back(*t);
  }
  return rec;
}

ColVector<float> recompute_logits(const SimState& s) {
  const auto fresh = prime_stream(*s.model, s.context, s.cfg.context_messages);
  return s.model->next_logits(fresh);
}

std::uint64_t SimState::hash() const {
  Fnv1a h;
  h.add_value(book.state_hash());
  for (const auto& msg : context) h.add(msg.data(), sizeof(TokenId) * msg.size());
  h.add_value(last_ts);
  h.add_value(next_id);
  h.add_value(stream.length);
  h.add_value(stream.evicted);
  h.add_value(stream.processed);
  const auto rows = static_cast<Eigen::Index>(stream.length);
  for (std::size_t l = 0; l < stream.keys.size(); ++l) {
    const auto& k = stream.keys[l];
    const auto& v = stream.values[l];
    h.add(k.data(), sizeof(float) * static_cast<std::size_t>(rows * k.cols()));
    h.add(v.data(), sizeof(float) * static_cast<std::size_t>(rows * v.cols()));
  }
  h.add(stream.last_hidden.data(), sizeof(float) * static_cast<std::size_t>(stream.last_hidden.size()));
  return h.value();
}

std::vector<MarketRecord> SimTrace::records() const {
  std::vector<MarketRecord> out;
  for (const auto& a : attempts) {
    if (a.accepted) out.push_back(a.record);
  }
  return out;
}

std::vector<OrderFlowMessage> SimTrace::messages() const {
  std::vector<OrderFlowMessage> out;
  for (const auto& a : attempts) {
    if (a.accepted) out.push_back(a.record.message);
  }
  return out;
}

SimTrace run(SimState& s, const AttemptSink& sink, bool keep_attempts) {
  SimTrace trace;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  std::string last_reason;
  while (s.counters.accepted < s.cfg.max_messages) {
    if (s.cfg.max_seconds > 0.0 && elapsed() > s.cfg.max_seconds) break;
    AttemptRecord rec = step(s);
    if (sink) sink(rec);
    if (!rec.accepted) last_reason = rec.reason;
    if (keep_attempts || rec.accepted) trace.attempts.push_back(std::move(rec));
    if (s.counters.consecutive_discards >= s.cfg.max_consecutive_discards) {
      trace.counters = s.counters;
      throw SimError(std::to_string(s.counters.consecutive_discards) + " consecutive discards after " +
                     std::to_string(s.counters.accepted) + " accepted messages; last reason: " + last_reason);
    }
  }
  trace.counters = s.counters;
  trace.wall_seconds = elapsed();
  return trace;
}

}  // namespace flowgen
