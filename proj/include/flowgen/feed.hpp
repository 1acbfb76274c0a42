#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgen/message.hpp"

namespace flowgen {

/// Malformed wire data. `offset` is the byte offset of the offending record.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// A message field that cannot be represented on the wire.
class EncodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParseResult {
  std::vector<OrderFlowMessage> messages;
  /// Records that were recognised but intentionally dropped (system events,
  /// hidden executions, ...), keyed by record kind.
  std::map<char, std::size_t> skipped;
  /// Records of a kind this parser does not know, keyed by record kind.
  std::map<char, std::size_t> unknown;
};

/// Decodes a stream of length-prefixed ITCH 5.0 records (subset).
ParseResult parse_feed(std::span<const std::uint8_t> bytes);

/// Encodes messages as length-prefixed ITCH 5.0 records. Messages must replay
/// consistently: referential records carry only the order reference on the wire.
std::vector<std::uint8_t> write_feed(std::span<const OrderFlowMessage> msgs);

/// Highest price (in ticks) representable by the 4-decimal wire price field.
inline constexpr std::int64_t kMaxWirePriceTicks = 4294967295LL / 100;
inline constexpr std::int64_t kMaxWireTimestamp = (std::int64_t{1} << 48) - 1;

struct SymbolEntry {
  std::uint16_t locate = 0;
  std::string name;  // up to 8 characters
  bool operator==(const SymbolEntry&) const = default;
};

/// Feed container: magic "FGFD", u16 version, u16 symbol count, then per symbol
/// a u16 locate code and an 8-byte space-padded name, followed by the record
/// stream. All integers big-endian.
struct FeedFile {
  static constexpr std::uint16_t kVersion = 1;
  std::vector<SymbolEntry> symbols;
  std::vector<OrderFlowMessage> messages;
};

std::vector<std::uint8_t> encode_feed_file(const FeedFile& f);
FeedFile decode_feed_file(std::span<const std::uint8_t> bytes, ParseResult* details = nullptr);

void save_feed_file(const std::string& path, const FeedFile& f);
FeedFile load_feed_file(const std::string& path, ParseResult* details = nullptr);

struct SessionWindow {
  std::int64_t open_ns = hms_to_ns(9, 30, 0);
  std::int64_t close_ns = hms_to_ns(16, 0, 0);
};

/// Keeps messages with open <= timestamp < close, preserving order.
std::vector<OrderFlowMessage> filter_session(std::span<const OrderFlowMessage> msgs,
                                             const SessionWindow& session);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace flowgen
