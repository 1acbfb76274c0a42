#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgen/preprocess.hpp"

namespace flowgen {

using TokenId = std::uint16_t;

inline constexpr std::size_t kTokensPerMessage = 24;
using TokenizedMessage = std::array<TokenId, kTokensPerMessage>;

struct TokenRange {
  std::uint32_t begin = 0;
  std::uint32_t count = 0;

  std::uint32_t end() const { return begin + count; }
  bool contains(std::uint32_t id) const { return id >= begin && id < end(); }
  TokenId at(std::uint32_t value) const { return static_cast<TokenId>(begin + value); }
};

enum class TokenField : std::uint8_t { Special, Type, Side, Sign, PriceMag, TimeComp, Size, Ticker };

/// Ids legal in one message slot: one field range, plus the NaN id when the slot is nullable.
struct SlotMask {
  TokenField field = TokenField::Special;
  TokenRange range;
  bool nullable = false;
  std::vector<TokenId> ids;  // sorted

  bool contains(std::uint32_t id) const;
};

/// Partitioned token vocabulary (layout version 1):
///
///   [0, 3)           special: mask=0, nan=1, sink=2
///   [3, 8)           message type (MsgType order)
///   [8, 10)          side: bid, ask
///   [10, 12)         price sign: negative, non-negative
///   [12, 1012)       price magnitude 0..999 ticks
///   [1012, 2012)     time component 0..999
///   [2012, 12012)    size 0..9999 shares
///   [12012, 12012+S) ticker
class Vocabulary {
 public:
  static constexpr std::uint16_t kLayoutVersion = 1;
  static constexpr TokenId kMask = 0;
  static constexpr TokenId kNan = 1;
  static constexpr TokenId kSink = 2;
  static constexpr std::uint32_t kBaseSize = 12012;

  explicit Vocabulary(std::uint32_t tickers = 98);

  std::uint32_t size() const { return kBaseSize + tickers_; }
  std::uint32_t tickers() const { return tickers_; }

  const TokenRange& range(TokenField f) const { return ranges_[static_cast<std::size_t>(f)]; }
  TokenField field_of(TokenId id) const;

  /// Precomputed; O(1).
  const SlotMask& slot_mask(std::size_t slot) const { return masks_.at(slot); }

  /// Stable across runs; covers the layout version and every range.
  std::uint64_t hash() const;

 private:
  std::uint32_t tickers_;
  std::array<TokenRange, 8> ranges_{};
  std::array<SlotMask, kTokensPerMessage> masks_{};
};

/// 1 <= S <= 1000.
Vocabulary build_vocab(std::uint32_t tickers);

class TokenEncodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TokenDecodeError : public std::runtime_error {
 public:
  TokenDecodeError(std::size_t slot, const std::string& what)
      : std::runtime_error("slot " + std::to_string(slot) + ": " + what), slot_(slot) {}
  std::size_t slot() const noexcept { return slot_; }

 private:
  std::size_t slot_;
};

TokenizedMessage encode(const PreMessage& pre, const Vocabulary& v);

/// Raw-only fields (order_id, price_abs, old_id, old_price_abs) come back absent.
PreMessage decode(const TokenizedMessage& t, const Vocabulary& v);

/// Flattens messages into a token stream (24 tokens per message).
std::vector<TokenId> tokenize(std::span<const PreMessage> msgs, const Vocabulary& v);

// Token corpus file: magic "FGTK", u16 layout version, u32 S, u64 token count,
// then little-endian u16 ids.
struct TokenCorpus {
  std::uint32_t tickers = 98;
  std::vector<TokenId> tokens;
};
std::vector<std::uint8_t> encode_token_corpus(const TokenCorpus& c);
TokenCorpus decode_token_corpus(std::span<const std::uint8_t> bytes);

}  // namespace flowgen
