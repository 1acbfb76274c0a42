// ITCH 5.0 subset codec.
//
// Record framing: 2-byte big-endian length, then the message body. Every body
// starts with type(1) stock_locate(2) tracking_number(2) timestamp(6).

#include <string_view>
#include <unordered_map>

#include "byteio.hpp"
#include "flowgen/feed.hpp"
#include "flowgen/lob.hpp"

namespace flowgen {

namespace {

constexpr std::size_t kHeaderLen = 11;

constexpr std::size_t body_length(char kind) {
  switch (kind) {
    case 'A': return 36;
    case 'F': return 40;
    case 'E': return 31;
    case 'C': return 36;
    case 'X': return 23;
    case 'D': return 19;
    case 'U': return 35;
    case 'P': return 44;
    default: return 0;
  }
}

// Record kinds that are valid ITCH 5.0 but carry nothing the order-flow model uses.
constexpr std::string_view kIgnoredKinds = "SRHYLVWKJhQBINO";

std::int64_t wire_to_ticks(std::uint32_t raw, std::size_t offset) {
  if (raw % 100 != 0) throw ParseError("price " + std::to_string(raw) + " is not a whole tick", offset);
  return static_cast<std::int64_t>(raw / 100);
}

std::uint32_t ticks_to_wire(std::int64_t ticks, const OrderFlowMessage& m) {
  if (ticks < 0 || ticks > kMaxWirePriceTicks) {
    throw EncodeError("price " + std::to_string(ticks) + " ticks not encodable: " + describe(m));
  }
  return static_cast<std::uint32_t>(ticks * 100);
}

struct Header {
  char kind;
  std::uint16_t locate;
  std::int64_t ts;
};

}  // namespace

ParseResult parse_feed(std::span<const std::uint8_t> bytes) {
  ParseResult result;
  std::unordered_map<std::uint16_t, OrderBook> books;
  ByteReader in(bytes);

  while (!in.done()) {
    const std::size_t off = in.offset();
    if (in.remaining() < 2) throw ParseError("truncated length prefix", off);
    const std::uint16_t len = in.be16();
    if (len == 0) throw ParseError("zero-length record", off);
    if (in.remaining() < len) throw ParseError("truncated record", off);
    const auto body = bytes.subspan(in.offset(), len);
    in.skip(len);

    const char kind = static_cast<char>(body[0]);
    const std::size_t need = body_length(kind);
    if (need == 0) {
      if (kIgnoredKinds.find(kind) != std::string_view::npos) {
        ++result.skipped[kind];
      } else {
        ++result.unknown[kind];
      }
      continue;
    }
    if (len != need) {
      throw ParseError(std::string("record '") + kind + "' has length " + std::to_string(len) +
                           ", expected " + std::to_string(need),
                       off);
    }
    if (kind == 'P') {
      ++result.skipped[kind];
      continue;
    }

    ByteReader r(body);
    Header h{static_cast<char>(r.u8()), r.be16(), 0};
    r.skip(2);  // tracking number
    h.ts = static_cast<std::int64_t>(r.be48());
    OrderBook& book = books[h.locate];

    OrderFlowMessage m;
    m.timestamp_ns = h.ts;
    m.symbol_id = h.locate;

    auto resting = [&](std::uint64_t id) -> const RestingOrder& {
      const RestingOrder* o = book.find(id);
      if (!o) throw ParseError("reference to unknown order " + std::to_string(id), off);
      return *o;
    };

    switch (kind) {
      case 'A':
      case 'F': {
        m.type = MsgType::Add;
        m.order_id = r.be64();
        const char bs = static_cast<char>(r.u8());
        if (bs != 'B' && bs != 'S') throw ParseError("bad buy/sell indicator", off);
        m.side = bs == 'B' ? Side::Bid : Side::Ask;
        m.size = r.be32();
        r.skip(8);  // stock symbol; the locate code identifies the instrument
        m.price = wire_to_ticks(r.be32(), off);
        break;
      }
      case 'E':
      case 'C': {
        m.type = kind == 'E' ? MsgType::Execute : MsgType::ExecuteAtPrice;
        m.order_id = r.be64();
        m.size = r.be32();
        r.skip(8);  // match number
        const RestingOrder& o = resting(m.order_id);
        m.side = o.side;
        m.price = o.price;
        if (kind == 'C') {
          r.skip(1);  // printable
          m.exec_or_new_price = wire_to_ticks(r.be32(), off);
        }
        break;
      }
      case 'X':
      case 'D': {
        m.type = MsgType::Cancel;
        m.order_id = r.be64();
        const RestingOrder& o = resting(m.order_id);
        m.side = o.side;
        m.price = o.price;
        m.size = kind == 'X' ? r.be32() : o.size;
        if (m.size > o.size) throw ParseError("cancel exceeds resting size", off);
        m.remaining_size = o.size - m.size;
        break;
      }
      case 'U': {
        m.type = MsgType::Replace;
        m.order_id = r.be64();
        m.new_order_id = r.be64();
        m.size = r.be32();
        m.exec_or_new_price = wire_to_ticks(r.be32(), off);
        const RestingOrder& o = resting(m.order_id);
        m.side = o.side;
        m.price = o.price;
        m.remaining_size = o.size;
        break;
      }
      default:
        break;
    }
    try {
      book.apply(m);
    } catch (const std::exception& e) {
      throw ParseError(e.what(), off);
    }
    result.messages.push_back(m);
  }
  return result;
}

std::vector<std::uint8_t> write_feed(std::span<const OrderFlowMessage> msgs) {
  ByteWriter w;
  std::uint64_t match_number = 0;
  for (const auto& m : msgs) {
    if (m.timestamp_ns < 0 || m.timestamp_ns > kMaxWireTimestamp) {
      throw EncodeError("timestamp not encodable: " + describe(m));
    }
    char kind = 0;
    switch (m.type) {
      case MsgType::Add: kind = 'A'; break;
      case MsgType::Execute: kind = 'E'; break;
      case MsgType::ExecuteAtPrice: kind = 'C'; break;
      case MsgType::Cancel:
        if (!m.remaining_size) throw EncodeError("cancel without remaining size: " + describe(m));
        kind = *m.remaining_size == 0 ? 'D' : 'X';
        break;
      case MsgType::Replace: kind = 'U'; break;
    }
    w.be16(static_cast<std::uint16_t>(body_length(kind)));
    w.u8(static_cast<std::uint8_t>(kind));
    w.be16(m.symbol_id);
    w.be16(0);
    w.be48(static_cast<std::uint64_t>(m.timestamp_ns));
    w.be64(m.order_id);
    switch (kind) {
      case 'A':
        w.u8(m.side == Side::Bid ? 'B' : 'S');
        w.be32(m.size);
        w.raw("        ", 8);
        w.be32(ticks_to_wire(m.price, m));
        break;
      case 'E':
        w.be32(m.size);
        w.be64(++match_number);
        break;
      case 'C':
        if (!m.exec_or_new_price) throw EncodeError("missing execution price: " + describe(m));
        w.be32(m.size);
        w.be64(++match_number);
        w.u8('Y');
        w.be32(ticks_to_wire(*m.exec_or_new_price, m));
        break;
      case 'X':
        w.be32(m.size);
        break;
      case 'D':
        break;
      case 'U':
        if (!m.new_order_id || !m.exec_or_new_price) {
          throw EncodeError("replace without new id/price: " + describe(m));
        }
        w.be64(*m.new_order_id);
        w.be32(m.size);
        w.be32(ticks_to_wire(*m.exec_or_new_price, m));
        break;
    }
  }
  return w.take();
}

}  // namespace flowgen
