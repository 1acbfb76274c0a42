#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowgen/lob.hpp"
#include "flowgen/preprocess.hpp"
#include "flowgen/sim.hpp"
#include "flowgen/synth.hpp"
#include "flowgen/trace_io.hpp"

using namespace flowgen;

namespace {

OrderFlowMessage add(std::uint64_t id, Side s, std::uint32_t size, std::int64_t px, std::int64_t ts) {
  OrderFlowMessage m;
  m.order_id = id;
  m.side = s;
  m.size = size;
  m.price = px;
  m.timestamp_ns = ts;
  return m;
}

// bids at 100: #1 100 sh @1s+5ns, #2 50 sh @2s; ask at 104: #3 10 sh @3s
OrderBook fixture_book() {
  OrderBook b;
  b.apply(add(1, Side::Bid, 100, 100, kNanosPerSecond + 5));
  b.apply(add(2, Side::Bid, 50, 100, 2 * kNanosPerSecond));
  b.apply(add(3, Side::Ask, 10, 104, 3 * kNanosPerSecond));
  return b;
}

PreMessage cancel_ref(std::int64_t level_px, std::uint64_t ts_s, std::uint32_t ts_ns, std::uint32_t ref_size,
                      std::uint32_t size) {
  PreMessage p;
  p.type = MsgType::Cancel;
  p.side = Side::Bid;
  p.size = size;
  p.ref_price_rel = relative_ticks(level_px, Side::Bid, 204);
  p.price_rel = p.ref_price_rel;
  p.ref_time_s = ts_s;
  p.ref_time_ns = ts_ns;
  p.ref_size = ref_size;
  return p;
}

struct Fixture {
  Vocabulary vocab{2};
  Transformer<float> model;
  std::vector<OrderFlowMessage> history;

  static ModelConfig config(std::uint32_t vocab_size) {
    ModelConfig c;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.vocab_size = static_cast<int>(vocab_size);
    c.max_context = 96;
    return c;
  }

  Fixture() : model(config(Vocabulary(2).size())), history(synth_feed(FeedConfig{.seed = 12}, 1500)) {
    model.init_weights(3);
  }

  SimConfig sim(std::int64_t n, KvPolicy p = KvPolicy::Rolling) const {
    SimConfig c;
    c.start_time_ns = 0;
    c.context_messages = 3;
    c.max_messages = n;
    c.max_consecutive_discards = 5000;
    c.seed = 77;
    c.kv_policy = p;
    return c;
  }
};

}  // namespace

TEST_CASE("error correction: add is valid") {
  const OrderBook b = fixture_book();
  PreMessage p;
  p.side = Side::Ask;
  p.size = 7;
  p.price_rel = 3;
  const auto r = error_correct(p, b, 204, 99, 40, 0);
  CHECK(r.outcome == Correction::Valid);
  CHECK(r.message.order_id == 40);
  CHECK(r.message.price == absolute_price(3, Side::Ask, 204));
  CHECK(r.message.timestamp_ns == 99);
}

TEST_CASE("error correction: matching reference is valid") {
  const OrderBook b = fixture_book();
  const auto r = error_correct(cancel_ref(100, 2, 0, 50, 20), b, 204, 10, 40, 0);
  CHECK(r.outcome == Correction::Valid);
  CHECK(r.message.type == MsgType::Cancel);
  CHECK(r.message.order_id == 2);
  CHECK(r.message.price == 100);
  CHECK(r.message.remaining_size == 30u);
  CHECK(r.reason.empty());
}

TEST_CASE("error correction: level exists but time or size mismatch substitutes the queue head") {
  const OrderBook b = fixture_book();
  for (const auto& p : {cancel_ref(100, 2, 0, 49, 20), cancel_ref(100, 2, 1, 50, 20), cancel_ref(100, 1, 5, 99, 20)}) {
    const auto r = error_correct(p, b, 204, 10, 40, 0);
    CHECK(r.outcome == Correction::Corrected);
    CHECK(r.message.order_id == 1);
    CHECK(r.message.remaining_size == 80u);
    CHECK(r.reason.find("queue head") != std::string::npos);
  }
}

TEST_CASE("error correction: oversized reduction is clamped") {
  const OrderBook b = fixture_book();
  const auto r = error_correct(cancel_ref(100, 2, 0, 50, 80), b, 204, 10, 40, 0);
  CHECK(r.outcome == Correction::Corrected);
  CHECK(r.message.size == 50);
  CHECK(r.message.remaining_size == 0u);
  PreMessage e = cancel_ref(100, 1, 5, 100, 500);
  e.type = MsgType::Execute;
  const auto re = error_correct(e, b, 204, 10, 40, 0);
  CHECK(re.outcome == Correction::Corrected);
  CHECK(re.message.size == 100);
  CHECK(re.message.order_id == 1);
}

TEST_CASE("error correction: absent level and other rejections") {
  const OrderBook b = fixture_book();
  auto r = error_correct(cancel_ref(99, 2, 0, 50, 20), b, 204, 10, 40, 0);
  CHECK(r.outcome == Correction::Reject);
  CHECK(r.reason == "no such level");
  r = error_correct(cancel_ref(100, 2, 0, 50, 20), b, std::nullopt, 10, 40, 0);
  CHECK(r.outcome == Correction::Reject);
  PreMessage wrong = cancel_ref(100, 2, 0, 50, 20);
  wrong.symbol_id = 1;
  CHECK(error_correct(wrong, b, 204, 10, 40, 0).outcome == Correction::Reject);
  CHECK(error_correct(cancel_ref(100, 2, 0, 50, 0), b, 204, 10, 40, 0).outcome == Correction::Reject);
  PreMessage rep = cancel_ref(100, 2, 0, 50, 20);
  rep.type = MsgType::Replace;
  CHECK(error_correct(rep, b, 204, 10, 40, 0).reason == "replace without new size");
  rep.size_aux = 75;
  const auto ok = error_correct(rep, b, 204, 10, 40, 0);
  CHECK(ok.outcome == Correction::Valid);
  CHECK(ok.message.new_order_id == 40u);
  CHECK(ok.message.size == 75);
  PreMessage far;
  far.side = Side::Bid;
  far.size = 1;
  far.price_rel = -999;
  CHECK(error_correct(far, b, 204, 10, 40, 0).reason == "non-positive price");
  PreMessage noprice;
  noprice.size = 1;
  CHECK(error_correct(noprice, b, std::nullopt, 10, 40, 0).outcome == Correction::Reject);
}

TEST_CASE("init: book equals the replay oracle and the prompt is the last messages") {
  Fixture f;
  const auto cfg = f.sim(10);
  const SimState s = init_sim(f.history, f.model, f.vocab, cfg);
  CHECK(s.book.state_hash() == replay(f.history).state_hash());
  REQUIRE(s.context.size() == 3);
  CHECK(s.stream.length == 1 + 3 * 24);
  const auto pre = stationarize(f.history);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(s.context[i] == encode(pre[pre.size() - 3 + i].tokenized_view(), f.vocab));
  }
  CHECK(s.last_ts == f.history.back().timestamp_ns);

  SimConfig c2 = cfg;
  c2.start_time_ns = f.history[100].timestamp_ns;
  const SimState s2 = init_sim(f.history, f.model, f.vocab, c2);
  CHECK(s2.book.state_hash() == replay(history_prefix(f.history, c2.start_time_ns)).state_hash());
  CHECK(s2.last_ts < c2.start_time_ns);

  CHECK_THROWS_AS(init_sim(std::span(f.history).first(2), f.model, f.vocab, cfg), SimError);
  CHECK_THROWS_AS(init_sim(f.history, f.model, Vocabulary(3), cfg), SimError);
  SimConfig big = cfg;
  big.context_messages = 5;
  CHECK_THROWS_AS(init_sim(f.history, f.model, f.vocab, big), ConfigError);
}

TEST_CASE("discards leave the state exactly as it was") {
  Fixture f;
  SimState s = init_sim(f.history, f.model, f.vocab, f.sim(100));
  int discards = 0, accepts = 0;
  for (int i = 0; i < 400 && (discards < 20 || accepts < 5); ++i) {
    const auto before = s.hash();
    const auto book = s.book.state_hash();
    const auto rec = step(s);
    if (rec.accepted) {
      ++accepts;
      CHECK(s.hash() != before);
    } else {
      ++discards;
      REQUIRE(s.hash() == before);
      REQUIRE(s.book.state_hash() == book);
      REQUIRE_FALSE(rec.reason.empty());
    }
  }
  CHECK(discards > 0);
  CHECK(accepts > 0);
  CHECK(s.counters.attempts == s.counters.accepted + s.counters.discarded);
}

TEST_CASE("accepted messages replay cleanly and the rolling cache stays bounded") {
  Fixture f;
  SimState s = init_sim(f.history, f.model, f.vocab, f.sim(30));
  const SimTrace t = run(s);
  CHECK(t.counters.accepted == 30);
  auto all = f.history;
  for (const auto& m : t.messages()) all.push_back(m);
  OrderBook oracle;
  REQUIRE_NOTHROW(oracle = replay(all));
  CHECK(oracle.state_hash() == s.book.state_hash());
  CHECK(s.stream.length == 1 + 3 * 24);
  CHECK(s.context.size() == 3);
  for (std::size_t i = 1; i < all.size(); ++i) REQUIRE(all[i].timestamp_ns >= all[i - 1].timestamp_ns);
  // book after each accepted message matches the replay
  OrderBook b = replay(f.history);
  for (const auto& r : t.records()) {
    b.apply(r.message);
    REQUIRE(top_of_book(b) == r.after);
  }
}

TEST_CASE("recompute policy: cached logits equal a fresh rebuild") {
  Fixture f;
  SimState s = init_sim(f.history, f.model, f.vocab, f.sim(1, KvPolicy::Recompute));
  double worst = 0;
  for (int k = 0; k < 15; ++k) {
    s.cfg.max_messages = k + 1;
    run(s);
    const auto a = f.model.next_logits(s.stream);
    const auto b = recompute_logits(s);
    worst = std::max(worst, static_cast<double>((a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff()));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("runs are deterministic in (seed, trial)") {
  Fixture f;
  auto go = [&](std::uint64_t trial) {
    SimConfig c = f.sim(12);
    c.trial_id = trial;
    SimState s = init_sim(f.history, f.model, f.vocab, c);
    return run(s);
  };
  const auto a = go(0), b = go(0), c = go(1);
  CHECK(a.messages() == b.messages());
  CHECK(a.counters.attempts == b.counters.attempts);
  CHECK(a.messages() != c.messages());
}

TEST_CASE("consecutive discard limit and budgets") {
  Fixture f;
  SimConfig c = f.sim(1000);
  c.max_consecutive_discards = 1;
  SimState s = init_sim(f.history, f.model, f.vocab, c);
  bool threw = false;
  try {
    run(s);
  } catch (const SimError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("consecutive discards") != std::string::npos);
  }
  CHECK(threw);
  SimState z = init_sim(f.history, f.model, f.vocab, f.sim(0));
  CHECK(run(z).attempts.empty());
  CHECK(kv_policy_from_string("recompute") == KvPolicy::Recompute);
  CHECK_THROWS(kv_policy_from_string("lru"));
}

TEST_CASE("trace round trip, truncated tail and resume") {
  Fixture f;
  const auto dir = std::filesystem::temp_directory_path() / "flowgen_sim_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "trace.jsonl").string();
  const auto cfg = f.sim(30, KvPolicy::Recompute);
  SimTrace full;
  {
    SimState s = init_sim(f.history, f.model, f.vocab, cfg);
    TraceWriter w(path, false);
    full = run(s, [&](const AttemptRecord& a) { w.write(a); });
  }
  const LoadedTrace lt = load_trace(path);
  CHECK_FALSE(lt.truncated_tail);
  CHECK(lt.attempts.size() == full.attempts.size());
  CHECK(lt.messages() == full.messages());
  CHECK(lt.counters.attempts == full.counters.attempts);
  CHECK(lt.counters.accepted == full.counters.accepted);
  CHECK(lt.counters.discarded == full.counters.discarded);
  for (std::size_t i = 0; i < lt.attempts.size(); ++i) {
    REQUIRE(lt.attempts[i].accepted == full.attempts[i].accepted);
    if (lt.attempts[i].accepted) REQUIRE(lt.attempts[i].record.after == full.attempts[i].record.after);
  }

  // cut mid-way through a line: the partial line is ignored
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  std::size_t keep = lines.size() / 2;
  while (keep < lines.size() && lines[keep - 1].find("\"accepted\"") == std::string::npos) ++keep;
  {
    std::ofstream out(path, std::ios::trunc);
    for (std::size_t i = 0; i < keep; ++i) out << lines[i] << '\n';
    out << lines[keep].substr(0, lines[keep].size() / 2);
  }
  const LoadedTrace part = load_trace(path);
  CHECK(part.truncated_tail);
  CHECK(part.attempts.size() == keep);

  SimState r = resume_sim(f.history, f.model, f.vocab, cfg, part);
  CHECK(r.counters.attempts == static_cast<std::int64_t>(keep));
  const SimTrace rest = run(r);
  auto joined = part.messages();
  for (const auto& m : rest.messages()) joined.push_back(m);
  CHECK(joined == full.messages());

  {
    std::ofstream out(path, std::ios::trunc);
    out << lines[0] << "\n{broken\n" << lines[1] << '\n';
  }
  CHECK_THROWS(load_trace(path));
  std::filesystem::remove_all(dir);
}

TEST_CASE("attempt json round trip") {
  Fixture f;
  SimState s = init_sim(f.history, f.model, f.vocab, f.sim(5));
  const SimTrace t = run(s);
  for (const auto& a : t.attempts) {
    const auto back = attempt_from_json(attempt_to_json(a));
    REQUIRE(back.accepted == a.accepted);
    REQUIRE(back.attempt == a.attempt);
    if (a.accepted) {
      REQUIRE(back.record.message == a.record.message);
      REQUIRE(back.record.trades == a.record.trades);
    } else {
      REQUIRE(back.tokens == a.tokens);
    }
  }
  const auto j = summary_json(t.counters, s.cfg, 1.5);
  CHECK(j["reference_discard_rate"] == 0.07);
  CHECK(j["accepted"] == 5);
}
