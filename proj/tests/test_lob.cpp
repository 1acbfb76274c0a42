#include <doctest.h>

#include <chrono>

#include "flowgen/lob.hpp"
#include "flowgen/synth.hpp"
#include "support.hpp"

using namespace flowgen;
using namespace flowgen::testing;

namespace {

OrderFlowMessage add(std::uint64_t id, Side s, std::uint32_t size, std::int64_t px, std::int64_t ts = 0) {
  OrderFlowMessage m;
  m.type = MsgType::Add;
  m.order_id = id;
  m.side = s;
  m.size = size;
  m.price = px;
  m.timestamp_ns = ts;
  return m;
}

OrderFlowMessage ref(MsgType t, std::uint64_t id, Side s, std::uint32_t size, std::int64_t px) {
  OrderFlowMessage m;
  m.type = t;
  m.order_id = id;
  m.side = s;
  m.size = size;
  m.price = px;
  return m;
}

void check_same(const OrderBook& book, const NaiveBook& naive) {
  for (Side s : {Side::Bid, Side::Ask}) {
    REQUIRE(book.levels(s) == naive.levels(s));
  }
  CHECK(book.best_bid() == naive.best(Side::Bid));
  CHECK(book.best_ask() == naive.best(Side::Ask));
  CHECK(book.order_count() == naive.orders().size());
}

std::vector<Trade> trades_of(const std::vector<BookEvent>& ev) {
  std::vector<Trade> t;
  for (const auto& e : ev) {
    if (const auto* x = std::get_if<Trade>(&e)) t.push_back(*x);
  }
  return t;
}

}  // namespace

TEST_CASE("add into empty book") {
  OrderBook b;
  b.apply(add(1, Side::Bid, 100, 17000));
  CHECK(b.best_bid() == 17000);
  CHECK_FALSE(b.best_ask());
  CHECK(b.depth(Side::Bid, 17000) == 100);
  const auto snap = b.snapshot();
  CHECK_FALSE(snap.mid2);
  CHECK_FALSE(snap.spread);
}

TEST_CASE("execute removes the head and the next order keeps priority") {
  OrderBook b;
  b.apply(add(1, Side::Bid, 100, 17000, 1));
  b.apply(add(2, Side::Bid, 200, 17000, 2));
  const auto ev = b.apply(ref(MsgType::Execute, 1, Side::Bid, 100, 17000));
  CHECK(trades_of(ev) == std::vector<Trade>{{1, Side::Ask, 17000, 100}});
  CHECK(b.find(1) == nullptr);
  const auto lv = b.levels(Side::Bid);
  REQUIRE(lv.size() == 1);
  REQUIRE(lv[0].size() == 1);
  CHECK(lv[0][0].order_id == 2);
  CHECK(b.level(Side::Bid, 17000)->queue.front().order_id == 2);
}

TEST_CASE("crossing add trades at the resting price and leaves the book uncrossed") {
  OrderBook b;
  b.apply(add(1, Side::Bid, 100, 17000));
  const auto ev = b.apply(add(2, Side::Ask, 50, 16999));
  CHECK(trades_of(ev) == std::vector<Trade>{{1, Side::Ask, 17000, 50}});
  CHECK(b.depth(Side::Bid, 17000) == 50);
  CHECK_FALSE(b.best_ask());
  CHECK(b.find(2) == nullptr);
}

TEST_CASE("crossing add sweeps several levels in price-time order and rests the remainder") {
  OrderBook b;
  b.apply(add(1, Side::Ask, 30, 101));
  b.apply(add(2, Side::Ask, 20, 100));
  b.apply(add(3, Side::Ask, 40, 100));
  b.apply(add(4, Side::Ask, 10, 103));
  const auto ev = b.apply(add(5, Side::Bid, 100, 102));
  const std::vector<Trade> want = {{2, Side::Bid, 100, 20}, {3, Side::Bid, 100, 40}, {1, Side::Bid, 101, 30}};
  CHECK(trades_of(ev) == want);
  CHECK(b.best_bid() == 102);
  CHECK(b.depth(Side::Bid, 102) == 10);
  CHECK(b.best_ask() == 103);
}

TEST_CASE("execute at price prints at the given price without moving the order") {
  OrderBook b;
  b.apply(add(1, Side::Ask, 100, 200));
  auto m = ref(MsgType::ExecuteAtPrice, 1, Side::Ask, 40, 200);
  m.exec_or_new_price = 199;
  const auto ev = b.apply(m);
  CHECK(trades_of(ev) == std::vector<Trade>{{1, Side::Bid, 199, 40}});
  REQUIRE(b.find(1));
  CHECK(b.find(1)->price == 200);
  CHECK(b.find(1)->size == 60);
}

TEST_CASE("cancel and replace") {
  OrderBook b;
  b.apply(add(1, Side::Bid, 100, 50, 1));
  b.apply(add(2, Side::Bid, 100, 50, 2));
  auto c = ref(MsgType::Cancel, 1, Side::Bid, 40, 50);
  c.remaining_size = 60;
  b.apply(c);
  CHECK(b.find(1)->size == 60);
  CHECK(b.depth(Side::Bid, 50) == 160);
  // replace at the same price loses time priority
  auto r = ref(MsgType::Replace, 1, Side::Bid, 70, 50);
  r.new_order_id = 9;
  r.exec_or_new_price = 50;
  r.remaining_size = 60;
  r.timestamp_ns = 5;
  const auto ev = b.apply(r);
  CHECK(std::holds_alternative<Replaced>(ev.front()));
  CHECK(b.find(1) == nullptr);
  const auto q = b.levels(Side::Bid)[0];
  REQUIRE(q.size() == 2);
  CHECK(q[0].order_id == 2);
  CHECK(q[1].order_id == 9);
  CHECK(q[1].entry_time_ns == 5);
  auto full = ref(MsgType::Cancel, 9, Side::Bid, 70, 50);
  full.remaining_size = 0;
  b.apply(full);
  CHECK(b.find(9) == nullptr);
}

TEST_CASE("errors") {
  OrderBook b;
  b.apply(add(1, Side::Bid, 100, 50));
  try {
    b.apply(ref(MsgType::Cancel, 7, Side::Bid, 1, 50));
    FAIL("expected missing order");
  } catch (const ReferentialError& e) {
    CHECK(e.kind() == ReferentialError::Kind::MissingOrder);
  }
  try {
    b.apply(add(1, Side::Bid, 5, 49));
    FAIL("expected duplicate");
  } catch (const ReferentialError& e) {
    CHECK(e.kind() == ReferentialError::Kind::DuplicateOrder);
  }
  try {
    b.apply(ref(MsgType::Execute, 1, Side::Bid, 1, 51));
    FAIL("expected mismatch");
  } catch (const ReferentialError& e) {
    CHECK(e.kind() == ReferentialError::Kind::FieldMismatch);
  }
  CHECK_THROWS_AS(b.apply(ref(MsgType::Execute, 1, Side::Bid, 101, 50)), SizeError);
  CHECK_THROWS_AS(b.apply(ref(MsgType::Cancel, 1, Side::Bid, 101, 50)), SizeError);
  CHECK_THROWS_AS(b.apply(add(2, Side::Bid, 0, 50)), SizeError);
  // failed applies leave the book untouched
  CHECK(b.depth(Side::Bid, 50) == 100);
  CHECK(b.order_count() == 1);

  std::vector<OrderFlowMessage> bad = {add(1, Side::Bid, 1, 1), ref(MsgType::Cancel, 2, Side::Bid, 1, 1)};
  try {
    replay(bad);
    FAIL("expected replay error");
  } catch (const ReplayError& e) {
    CHECK(e.index() == 1);
  }
}

TEST_CASE("snapshot") {
  OrderBook b;
  CHECK(replay({}).empty());
  b.apply(add(1, Side::Bid, 100, 17000));
  b.apply(add(2, Side::Bid, 30, 17000));
  b.apply(add(3, Side::Ask, 70, 17002));
  b.apply(add(4, Side::Ask, 5, 17003));
  const auto h = b.state_hash();
  const auto s = b.snapshot();
  CHECK(b.state_hash() == h);
  CHECK(s.mid2 == 34002);
  CHECK(s.mid() == doctest::Approx(17001.0));
  CHECK(s.spread == 2);
  CHECK(s.vol_bid == 130);
  CHECK(s.vol_ask == 70);
  REQUIRE(s.ask_depth.size() == 2);
  CHECK(s.ask_depth[1] == LevelDepth{17003, 5});
}

TEST_CASE("copies are independent and fully usable") {
  OrderBook a;
  a.apply(add(1, Side::Bid, 100, 50));
  a.apply(add(2, Side::Ask, 100, 52));
  OrderBook b = a;
  b.apply(add(3, Side::Ask, 150, 49));  // sweeps the copied bid
  CHECK(a.depth(Side::Bid, 50) == 100);
  CHECK(b.best_bid() == std::nullopt);
  OrderBook c;
  c = b;
  c.apply(ref(MsgType::Execute, 3, Side::Ask, 50, 49));
  CHECK(b.find(3)->size == 50);
  CHECK(c.find(3) == nullptr);
}

TEST_CASE("oracle equivalence on synthetic feed, every step") {
  const auto msgs = synth_feed(FeedConfig{.seed = 21}, 10'000);
  OrderBook book;
  NaiveBook naive;
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    const auto ev = book.apply(msgs[i]);
    REQUIRE(trades_of(ev) == naive.apply(msgs[i]));
    for (Side s : {Side::Bid, Side::Ask}) REQUIRE(book.levels(s) == naive.levels(s));
  }
}

TEST_CASE("oracle equivalence with crossing adds and replaces") {
  const auto msgs = random_stream(4000, 8);
  OrderBook book;
  NaiveBook naive;
  std::uint64_t total = 0;
  for (const auto& m : msgs) {
    const auto before = book.total_shares(Side::Bid) + book.total_shares(Side::Ask);
    const auto ev = book.apply(m);
    const auto t = naive.apply(m);
    REQUIRE(trades_of(ev) == t);
    check_same(book, naive);
    if (book.best_bid() && book.best_ask()) REQUIRE(*book.best_bid() < *book.best_ask());
    // conservation: resting shares move only by the amounts in the events
    std::int64_t delta = 0;
    for (const auto& e : ev) {
      if (const auto* p = std::get_if<Placed>(&e)) delta += p->size;
      if (const auto* c = std::get_if<Canceled>(&e)) delta -= c->size;
      if (const auto* tr = std::get_if<Trade>(&e)) {
        // crossing fills consume maker shares; execute fills consume the referenced order
        delta -= tr->size;
      }
    }
    if (m.type == MsgType::Replace) delta -= *m.remaining_size;
    const auto after = book.total_shares(Side::Bid) + book.total_shares(Side::Ask);
    REQUIRE(static_cast<std::int64_t>(after) - static_cast<std::int64_t>(before) == delta);
    total += t.size();
  }
  CHECK(total > 0);
}

TEST_CASE("snapshot grid samples whole seconds") {
  std::vector<OrderFlowMessage> msgs = {add(1, Side::Bid, 10, 100, 1'500'000'000),
                                        add(2, Side::Ask, 20, 104, 3'200'000'000)};
  const auto rows = snapshot_grid(msgs);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].time_s == 2);
  CHECK(rows[0].best_bid == 100);
  CHECK_FALSE(rows[0].best_ask);
  CHECK(rows[1].time_s == 3);
  CHECK_FALSE(rows[1].best_ask);
  const auto csv = snapshot_grid_csv(rows);
  CHECK(csv.rfind("time_s,best_bid,best_ask,spread,vol_bid_1,vol_ask_1", 0) == 0);
}

TEST_CASE("replay of 1e6 messages is fast") {
  const auto msgs = synth_feed(FeedConfig{.seed = 2}, 1'000'000);
  const auto t0 = std::chrono::steady_clock::now();
  const OrderBook b = replay(msgs);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("replay of 1e6 messages: " << s << " s");
  CHECK(s < 10.0);
}
