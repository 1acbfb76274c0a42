#include "flowgen/feed.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "byteio.hpp"

namespace flowgen {

std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::Add: return "add";
    case MsgType::Execute: return "execute";
    case MsgType::ExecuteAtPrice: return "execute_at_price";
    case MsgType::Cancel: return "cancel";
    case MsgType::Replace: return "replace";
  }
  return "?";
}

std::string_view to_string(Side s) { return s == Side::Bid ? "bid" : "ask"; }

MsgType msg_type_from_string(std::string_view s) {
  for (MsgType t : kAllMsgTypes) {
    if (to_string(t) == s) return t;
  }
  throw std::invalid_argument("unknown message type '" + std::string(s) + "'");
}

Side side_from_string(std::string_view s) {
  if (s == "bid") return Side::Bid;
  if (s == "ask") return Side::Ask;
  throw std::invalid_argument("unknown side '" + std::string(s) + "'");
}

void validate(const OrderFlowMessage& m) {
  auto fail = [&](const char* why) {
    throw std::invalid_argument(std::string(why) + ": " + describe(m));
  };
  if (m.timestamp_ns < 0) fail("negative timestamp");
  if (m.size < 1) fail("size must be >= 1");
  const bool wants_remaining = m.type == MsgType::Cancel || m.type == MsgType::Replace;
  const bool wants_new_id = m.type == MsgType::Replace;
  const bool wants_px = m.type == MsgType::ExecuteAtPrice || m.type == MsgType::Replace;
  if (m.remaining_size.has_value() != wants_remaining) fail("remaining_size presence");
  if (m.new_order_id.has_value() != wants_new_id) fail("new_order_id presence");
  if (m.exec_or_new_price.has_value() != wants_px) fail("exec_or_new_price presence");
}

std::string describe(const OrderFlowMessage& m) {
  std::ostringstream os;
  os << to_string(m.type) << "{ts=" << m.timestamp_ns << " id=" << m.order_id << " "
     << to_string(m.side) << " size=" << m.size << " px=" << m.price;
  if (m.remaining_size) os << " rem=" << *m.remaining_size;
  if (m.new_order_id) os << " new_id=" << *m.new_order_id;
  if (m.exec_or_new_price) os << " px2=" << *m.exec_or_new_price;
  os << " sym=" << m.symbol_id << "}";
  return os.str();
}

std::vector<OrderFlowMessage> filter_session(std::span<const OrderFlowMessage> msgs,
                                             const SessionWindow& session) {
  std::vector<OrderFlowMessage> out;
  out.reserve(msgs.size());
  std::copy_if(msgs.begin(), msgs.end(), std::back_inserter(out), [&](const OrderFlowMessage& m) {
    return m.timestamp_ns >= session.open_ns && m.timestamp_ns < session.close_ns;
  });
  return out;
}

namespace {
constexpr char kFeedMagic[4] = {'F', 'G', 'F', 'D'};
}

std::vector<std::uint8_t> encode_feed_file(const FeedFile& f) {
  ByteWriter w;
  w.raw(kFeedMagic, 4);
  w.be16(FeedFile::kVersion);
  if (f.symbols.size() > 0xFFFF) throw EncodeError("too many symbols");
  w.be16(static_cast<std::uint16_t>(f.symbols.size()));
  for (const auto& s : f.symbols) {
    if (s.name.size() > 8) throw EncodeError("symbol name longer than 8 characters: " + s.name);
    w.be16(s.locate);
    std::string padded = s.name;
    padded.resize(8, ' ');
    w.raw(padded.data(), 8);
  }
  auto records = write_feed(f.messages);
  w.raw(records.data(), records.size());
  return w.take();
}

FeedFile decode_feed_file(std::span<const std::uint8_t> bytes, ParseResult* details) {
  ByteReader r(bytes);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kFeedMagic, 4) != 0) {
    throw ParseError("not a flowgen feed file (bad magic)", 0);
  }
  r.skip(4);
  const auto version = r.be16();
  if (version != FeedFile::kVersion) {
    throw ParseError("unsupported feed file version " + std::to_string(version), 4);
  }
  const auto n = r.be16();
  FeedFile f;
  for (std::uint16_t i = 0; i < n; ++i) {
    if (r.remaining() < 10) throw ParseError("truncated symbol table", r.offset());
    SymbolEntry s;
    s.locate = r.be16();
    s.name = r.str(8);
    while (!s.name.empty() && s.name.back() == ' ') s.name.pop_back();
    f.symbols.push_back(std::move(s));
  }
  const std::size_t header = r.offset();
  ParseResult pr;
  try {
    pr = parse_feed(bytes.subspan(header));
  } catch (const ParseError& e) {
    throw ParseError(std::string("feed record stream: ") + e.what(), header + e.offset());
  }
  f.messages = std::move(pr.messages);
  if (details) {
    details->skipped = pr.skipped;
    details->unknown = pr.unknown;
  }
  return f;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

void save_feed_file(const std::string& path, const FeedFile& f) {
  write_file_bytes(path, encode_feed_file(f));
}

FeedFile load_feed_file(const std::string& path, ParseResult* details) {
  return decode_feed_file(read_file_bytes(path), details);
}

}  // namespace flowgen
