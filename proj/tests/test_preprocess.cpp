#include <doctest.h>

#include "flowgen/lob.hpp"
#include "flowgen/preprocess.hpp"
#include "flowgen/synth.hpp"
#include "support.hpp"

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

}  // namespace

TEST_CASE("relative price against the previous mid") {
  Stationarizer st;
  st.push(add(1, Side::Bid, 100, 17001, 10));
  st.push(add(2, Side::Ask, 100, 17003, 20));
  const PreMessage p = st.push(add(3, Side::Bid, 100, 17000, 30));
  CHECK(p.price_rel == -2);
  CHECK(p.price_abs == 17000);
  CHECK(p.type == MsgType::Add);
  CHECK_FALSE(p.ref_price_rel);
  CHECK_FALSE(p.ref_size);
  CHECK_FALSE(p.ref_time_s);
  CHECK_FALSE(p.ref_time_ns);
  CHECK_FALSE(p.old_id);
  CHECK_FALSE(p.old_price_abs);
  CHECK_FALSE(p.size_aux);
}

TEST_CASE("first message has zero dt and time fields split the timestamp") {
  Stationarizer st;
  const PreMessage p = st.push(add(1, Side::Bid, 100, 17000, 36'000'123'456'789));
  CHECK(p.dt_s == 0);
  CHECK(p.dt_ns == 0);
  CHECK(p.time_s == 36'000);
  CHECK(p.time_ns == 123'456'789);
  // no mid has ever been defined
  CHECK_FALSE(p.price_rel);
  const PreMessage q = st.push(add(2, Side::Ask, 5, 17010, 36'001'234'567'890));
  CHECK(q.dt_s == 1);
  CHECK(q.dt_ns == 111'111'101);
}

TEST_CASE("far prices are clamped to 999 ticks and counted") {
  const std::vector<OrderFlowMessage> msgs = {add(1, Side::Bid, 100, 17000, 1), add(2, Side::Ask, 100, 17002, 2),
                                              add(3, Side::Bid, 100, 17001 - 2500, 3),
                                              add(4, Side::Ask, 12'345, 17002, 4)};
  StationarizeStats stats;
  const auto pre = stationarize(msgs, &stats);
  CHECK(pre[2].price_rel == -999);
  CHECK(pre[3].size == 9999);
  CHECK(stats.clamped == 2);
  CHECK(stats.messages == 4);
}

TEST_CASE("inter-arrival seconds clamp at 999") {
  const std::vector<OrderFlowMessage> msgs = {add(1, Side::Bid, 1, 100, 0),
                                              add(2, Side::Bid, 1, 100, 1500 * kNanosPerSecond + 7)};
  const auto pre = stationarize(msgs);
  CHECK(pre[1].dt_s == 999);
  CHECK(pre[1].dt_ns == 7);
}

TEST_CASE("half-tick mids round toward the order's own side") {
  // mid = 17000.5
  const std::int64_t mid2 = 34001;
  CHECK(relative_ticks(17000, Side::Bid, mid2) == -1);
  CHECK(relative_ticks(17001, Side::Ask, mid2) == 1);
  CHECK(relative_ticks(17001, Side::Bid, mid2) == 0);
  CHECK(relative_ticks(17000, Side::Ask, mid2) == 0);
  for (std::int64_t m2 : {34000, 34001, 34002, 34003}) {
    for (std::int64_t px = 16990; px <= 17010; ++px) {
      for (Side s : {Side::Bid, Side::Ask}) {
        REQUIRE(absolute_price(relative_ticks(px, s, m2), s, m2) == px);
      }
    }
  }
  CHECK(absolute_price(0, Side::Bid, 34000) == 17000);
}

TEST_CASE("reference level uses the current mid") {
  PreMessage p;
  p.type = MsgType::Replace;
  p.side = Side::Ask;
  p.ref_price_rel = 3;
  CHECK(reference_level_price(p, 34000) == 17003);
  CHECK_FALSE(reference_level_price(p, std::nullopt));
  p.ref_price_rel.reset();
  CHECK_FALSE(reference_level_price(p, 34000));
}

TEST_CASE("referential fields for cancel, execute and replace") {
  OrderFlowMessage c = add(1, Side::Bid, 300, 17000, 100);
  std::vector<OrderFlowMessage> msgs = {add(1, Side::Bid, 300, 17000, 5'000'000'100), add(2, Side::Ask, 100, 17004, 200)};
  msgs[1].timestamp_ns = 5'000'000'200;
  OrderFlowMessage cancel;
  cancel.type = MsgType::Cancel;
  cancel.order_id = 1;
  cancel.side = Side::Bid;
  cancel.price = 17000;
  cancel.size = 120;
  cancel.remaining_size = 180;
  cancel.timestamp_ns = 5'000'000'300;
  msgs.push_back(cancel);
  OrderFlowMessage exec = cancel;
  exec.type = MsgType::Execute;
  exec.size = 30;
  exec.remaining_size.reset();
  exec.timestamp_ns = 5'000'000'400;
  msgs.push_back(exec);
  OrderFlowMessage rep;
  rep.type = MsgType::Replace;
  rep.order_id = 1;
  rep.new_order_id = 9;
  rep.side = Side::Bid;
  rep.price = 17000;
  rep.exec_or_new_price = 17001;
  rep.size = 500;
  rep.remaining_size = 150;
  rep.timestamp_ns = 5'000'000'500;
  msgs.push_back(rep);
  const auto pre = stationarize(msgs);
  // mid = 17002 for all referential messages
  const PreMessage& pc = pre[2];
  CHECK(pc.size == 120);
  CHECK(pc.size_aux == 180u);
  CHECK(pc.price_rel == -2);
  CHECK(pc.ref_price_rel == -2);
  CHECK(pc.ref_size == 300u);
  CHECK(pc.ref_time_s == 5u);
  CHECK(pc.ref_time_ns == 100u);
  CHECK(pc.order_id == 1u);
  CHECK_FALSE(pc.old_id);
  const PreMessage& pe = pre[3];
  CHECK(pe.size == 30);
  CHECK(pe.size_aux == 150u);
  CHECK(pe.ref_size == 180u);
  const PreMessage& pr = pre[4];
  CHECK(pr.order_id == 9u);
  CHECK(pr.old_id == 1u);
  CHECK(pr.price_rel == -1);
  CHECK(pr.ref_price_rel == -2);
  CHECK(pr.old_price_abs == 17000);
  CHECK(pr.size == 150);
  CHECK(pr.size_aux == 500u);
  (void)c;
}

TEST_CASE("missing target is a hard error") {
  OrderFlowMessage x;
  x.type = MsgType::Cancel;
  x.order_id = 77;
  x.size = 1;
  x.remaining_size = 0;
  CHECK_THROWS_AS(stationarize(std::vector{x}), StationarizeError);
}

TEST_CASE("destationarize inverts stationarize on synthetic feeds") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto msgs = synth_feed(FeedConfig{.seed = seed}, 20'000);
    StationarizeStats stats;
    const auto pre = stationarize(msgs, &stats);
    REQUIRE(stats.clamped == 0);
    Destationarizer d;
    for (std::size_t i = 0; i < msgs.size(); ++i) REQUIRE(d.push(pre[i]) == msgs[i]);
  }
}

TEST_CASE("destationarize resolves by reference fields when raw ids are gone") {
  const auto msgs = synth_feed(FeedConfig{.seed = 4}, 5000);
  const auto pre = stationarize(msgs);
  OrderBook book;
  MidTracker mid;
  std::int64_t prev = msgs.front().timestamp_ns;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    PreMessage p = pre[i];
    const bool referential = is_referential(p.type);
    p.old_id.reset();
    if (referential && p.type != MsgType::Replace) p.order_id.reset();
    if (mid.reference()) p.price_abs.reset();
    p.old_price_abs.reset();
    const OrderFlowMessage m = destationarize(p, mid, book, i == 0 ? msgs[0].timestamp_ns : prev, msgs[i].order_id);
    CHECK(m.timestamp_ns == msgs[i].timestamp_ns);
    if (m == msgs[i]) ++matched;
    book.apply(msgs[i]);
    mid.update(book);
    prev = msgs[i].timestamp_ns;
  }
  // ties in (entry time, size) at one level are the only ambiguity
  CHECK(matched == msgs.size());
}

TEST_CASE("clamping is rare on the default synthetic config") {
  StationarizeStats stats;
  stationarize(synth_feed(FeedConfig{}, 100'000), &stats);
  CHECK(static_cast<double>(stats.clamped) < 1e-3 * 100'000);
}

TEST_CASE("mid tracker") {
  OrderBook b;
  MidTracker m;
  m.update(b);
  CHECK_FALSE(m.current());
  b.apply(add(1, Side::Bid, 1, 100, 0));
  m.update(b);
  CHECK_FALSE(m.current());
  b.apply(add(2, Side::Ask, 1, 103, 0));
  m.update(b);
  CHECK(m.current() == 203);
  CHECK(m.reference() == 203);
  OrderFlowMessage x;
  x.type = MsgType::Cancel;
  x.order_id = 2;
  x.side = Side::Ask;
  x.price = 103;
  x.size = 1;
  x.remaining_size = 0;
  b.apply(x);
  m.update(b);
  CHECK_FALSE(m.current());
  CHECK(m.previous() == 203);
  CHECK(m.reference() == 203);
}

TEST_CASE("pre-message dumps round trip") {
  const auto pre = stationarize(synth_feed(FeedConfig{.seed = 9}, 3000));
  const auto bytes = encode_pre_messages(pre);
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "FGPM"));
  CHECK(decode_pre_messages(bytes) == pre);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS(decode_pre_messages(cut));
  const std::string csv = pre_messages_csv(pre);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(pre.size() + 1));
  CHECK(csv.find("nan") != std::string::npos);
}
