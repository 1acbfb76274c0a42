#include <doctest.h>

#include <filesystem>

#include "flowgen/feed.hpp"
#include "flowgen/lob.hpp"
#include "flowgen/synth.hpp"
#include "support.hpp"

using namespace flowgen;
using namespace flowgen::testing;

TEST_CASE("empty input parses to nothing") {
  const auto r = parse_feed({});
  CHECK(r.messages.empty());
  CHECK(write_feed({}).empty());
}

TEST_CASE("hand-encoded add record") {
  // buy 100 @ $170.00 at 10:00:00.000000001; wire price has four decimals
  const auto bytes = add_record(36'000'000'000'001ULL, 7, 'B', 100, 1'700'000).b;
  REQUIRE(bytes.size() == 2 + 36);
  const auto r = parse_feed(bytes);
  REQUIRE(r.messages.size() == 1);
  const auto& m = r.messages[0];
  CHECK(m.type == MsgType::Add);
  CHECK(m.side == Side::Bid);
  CHECK(m.size == 100);
  CHECK(m.price == 17000);
  CHECK(m.timestamp_ns == 36'000'000'000'001);
  CHECK(m.order_id == 7);
  CHECK_FALSE(m.remaining_size);
  CHECK_FALSE(m.new_order_id);
  CHECK_FALSE(m.exec_or_new_price);
  // the writer leaves the stock field blank; everything else is byte-identical
  auto expect = bytes;
  std::fill(expect.begin() + 2 + 24, expect.begin() + 2 + 32, ' ');
  CHECK(write_feed(r.messages) == expect);
}

TEST_CASE("order delete maps to a full cancel") {
  Bytes feed = add_record(1000, 42, 'S', 300, 1'700'100);
  Bytes del;
  del.be(42, 8);
  feed.append(record('D', 0, 2000, del));
  const auto r = parse_feed(feed.b);
  REQUIRE(r.messages.size() == 2);
  const auto& c = r.messages[1];
  CHECK(c.type == MsgType::Cancel);
  CHECK(c.size == 300);
  CHECK(c.remaining_size == 0u);
  CHECK(c.side == Side::Ask);
  CHECK(c.price == 17001);
}

TEST_CASE("partial cancel, executions and replace") {
  Bytes feed = add_record(1000, 1, 'B', 500, 1'000'000);
  Bytes x;
  x.be(1, 8).be(120, 4);
  feed.append(record('X', 0, 1001, x));
  Bytes e;
  e.be(1, 8).be(80, 4).be(99, 8);
  feed.append(record('E', 0, 1002, e));
  Bytes c;
  c.be(1, 8).be(50, 4).be(100, 8).u8('Y').be(999'900, 4);
  feed.append(record('C', 0, 1003, c));
  Bytes u;
  u.be(1, 8).be(2, 8).be(700, 4).be(1'000'200, 4);
  feed.append(record('U', 0, 1004, u));
  const auto r = parse_feed(feed.b);
  REQUIRE(r.messages.size() == 5);
  CHECK(r.messages[1].type == MsgType::Cancel);
  CHECK(r.messages[1].size == 120);
  CHECK(r.messages[1].remaining_size == 380u);
  CHECK(r.messages[2].type == MsgType::Execute);
  CHECK(r.messages[2].size == 80);
  CHECK(r.messages[2].price == 10000);
  CHECK(r.messages[3].type == MsgType::ExecuteAtPrice);
  CHECK(r.messages[3].exec_or_new_price == 9999);
  const auto& rep = r.messages[4];
  CHECK(rep.type == MsgType::Replace);
  CHECK(rep.new_order_id == 2u);
  CHECK(rep.size == 700);
  CHECK(rep.price == 10000);
  CHECK(rep.exec_or_new_price == 10002);
  CHECK(rep.remaining_size == 250u);
  CHECK(parse_feed(write_feed(r.messages)).messages == r.messages);
}

TEST_CASE("hidden executions and system records are skipped and counted") {
  Bytes feed;
  feed.append(record('S', 0, 5, Bytes{}.u8('O')));
  Bytes p;
  p.be(9, 8).u8('B').be(10, 4).str("AAPL    ").be(1'000'000, 4).be(3, 8);
  feed.append(record('P', 0, 6, p));
  feed.append(add_record(7, 1, 'B', 10, 1'000'000));
  feed.append(record('Z', 0, 8, Bytes{}.u8(1)));
  const auto r = parse_feed(feed.b);
  CHECK(r.messages.size() == 1);
  CHECK(r.skipped.at('S') == 1);
  CHECK(r.skipped.at('P') == 1);
  CHECK(r.unknown.at('Z') == 1);
}

TEST_CASE("truncated record reports its offset") {
  Bytes feed = add_record(1, 1, 'B', 10, 1'000'000);
  const std::size_t second = feed.b.size();
  feed.append(add_record(2, 2, 'B', 10, 1'000'000));
  feed.b.resize(feed.b.size() - 3);
  try {
    parse_feed(feed.b);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == second);
  }
}

TEST_CASE("sub-tick wire price is rejected") {
  CHECK_THROWS_AS(parse_feed(add_record(1, 1, 'B', 10, 1'000'050).b), ParseError);
}

TEST_CASE("unencodable price is an error") {
  OrderFlowMessage m;
  m.order_id = 1;
  m.size = 1;
  m.price = kMaxWirePriceTicks + 1;
  CHECK_THROWS_AS(write_feed(std::vector{m}), EncodeError);
  m.price = kMaxWirePriceTicks;
  CHECK_NOTHROW(write_feed(std::vector{m}));
}

TEST_CASE("synthetic batch round-trips bit-exactly") {
  FeedConfig cfg;
  cfg.seed = 11;
  const auto msgs = synth_feed(cfg, 10'000);
  const auto bytes = write_feed(msgs);
  CHECK(parse_feed(bytes).messages == msgs);
  CHECK(write_feed(parse_feed(bytes).messages) == bytes);
}

TEST_CASE("random stream with crossing adds round-trips") {
  const auto msgs = random_stream(5000, 3);
  CHECK(parse_feed(write_feed(msgs)).messages == msgs);
}

TEST_CASE("session filter boundaries") {
  const SessionWindow w;
  auto at = [](std::int64_t ts) {
    OrderFlowMessage m;
    m.timestamp_ns = ts;
    m.size = 1;
    return m;
  };
  const std::vector<OrderFlowMessage> msgs = {at(hms_to_ns(9, 29, 59, 999'999'999)), at(hms_to_ns(9, 30, 0)),
                                              at(hms_to_ns(12, 0, 0)), at(hms_to_ns(15, 59, 59, 999'999'999)),
                                              at(hms_to_ns(16, 0, 0))};
  const auto kept = filter_session(msgs, w);
  REQUIRE(kept.size() == 3);
  CHECK(kept.front().timestamp_ns == hms_to_ns(9, 30, 0));
  CHECK(kept.back().timestamp_ns == hms_to_ns(15, 59, 59, 999'999'999));
  CHECK(filter_session(kept, w) == kept);
  const std::vector inside(msgs.begin() + 1, msgs.begin() + 4);
  CHECK(filter_session(inside, w) == inside);
}

TEST_CASE("synth: empty, deterministic, replayable") {
  FeedConfig cfg;
  CHECK(synth_feed(cfg, 0).empty());
  cfg.seed = 5;
  CHECK(write_feed(synth_feed(cfg, 3000)) == write_feed(synth_feed(cfg, 3000)));
  cfg.seed = 6;
  CHECK(write_feed(synth_feed(cfg, 3000)) != write_feed(synth_feed(FeedConfig{.seed = 5}, 3000)));
}

TEST_CASE("synth: 1e5 messages replay with no referential errors") {
  FeedConfig cfg;
  const auto msgs = synth_feed(cfg, 100'000);
  CHECK(msgs.size() == 100'000);
  CHECK_NOTHROW(replay(msgs));
  for (std::size_t i = 1; i < msgs.size(); ++i) REQUIRE(msgs[i].timestamp_ns >= msgs[i - 1].timestamp_ns);
  for (const auto& m : msgs) REQUIRE_NOTHROW(validate(m));
}

TEST_CASE("synth: invalid configuration") {
  FeedConfig cfg;
  cfg.round_lot_mass = 0.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = FeedConfig{};
  cfg.intensity[2] = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = FeedConfig{};
  cfg.session.close_ns = cfg.session.open_ns;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("feed container round trip with symbol table") {
  FeedFile f;
  f.symbols = {{0, "AAPL"}, {3, "MSFT"}};
  f.messages = synth_feed(FeedConfig{}, 500);
  const auto bytes = encode_feed_file(f);
  CHECK(std::equal(bytes.begin(), bytes.begin() + 4, "FGFD"));
  const FeedFile g = decode_feed_file(bytes);
  CHECK(g.symbols == f.symbols);
  CHECK(g.messages == f.messages);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(decode_feed_file(bad));
  const auto path = (std::filesystem::temp_directory_path() / "flowgen_feed_test.fgfd").string();
  save_feed_file(path, f);
  CHECK(load_feed_file(path).messages == f.messages);
  std::filesystem::remove(path);
  CHECK_THROWS(load_feed_file(path));
}
