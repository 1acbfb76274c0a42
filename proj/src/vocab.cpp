#include "flowgen/vocab.hpp"

#include <algorithm>
#include <cstring>

#include "byteio.hpp"

namespace flowgen {

namespace {

struct SlotSpec {
  TokenField field;
  bool nullable;
};

// Slot layout of a tokenized message.
constexpr std::array<SlotSpec, kTokensPerMessage> kSlots = {{
    {TokenField::Ticker, false},    // 0  ticker
    {TokenField::Type, false},      // 1  type
    {TokenField::Side, false},      // 2  side
    {TokenField::Sign, true},       // 3  price sign
    {TokenField::PriceMag, true},   // 4  price magnitude
    {TokenField::Size, false},      // 5  size
    {TokenField::Size, true},       // 6  size_aux
    {TokenField::TimeComp, false},  // 7  dt seconds
    {TokenField::TimeComp, false},  // 8  dt ns, high digit
    {TokenField::TimeComp, false},  // 9
    {TokenField::TimeComp, false},  // 10 dt ns, low digit
    {TokenField::TimeComp, false},  // 11 time s, high digit
    {TokenField::TimeComp, false},  // 12 time s, low digit
    {TokenField::TimeComp, false},  // 13 time ns, high digit
    {TokenField::TimeComp, false},  // 14
    {TokenField::TimeComp, false},  // 15 time ns, low digit
    {TokenField::Sign, true},       // 16 ref price sign
    {TokenField::PriceMag, true},   // 17 ref price magnitude
    {TokenField::Size, true},       // 18 ref size
    {TokenField::TimeComp, true},   // 19 ref time s, high digit
    {TokenField::TimeComp, true},   // 20
    {TokenField::TimeComp, true},   // 21 ref time ns, high digit
    {TokenField::TimeComp, true},   // 22
    {TokenField::TimeComp, true},   // 23
}};

constexpr TokenId kSignNegative = 0;
constexpr TokenId kSignNonNegative = 1;

}  // namespace

bool SlotMask::contains(std::uint32_t id) const {
  return range.contains(id) || (nullable && id == Vocabulary::kNan);
}

Vocabulary::Vocabulary(std::uint32_t tickers) : tickers_(tickers) {
  if (tickers < 1 || tickers > 1000) throw std::invalid_argument("ticker count must be in [1, 1000]");
  const std::array<std::uint32_t, 8> counts = {3, kNumMsgTypes, 2, 2, 1000, 1000, 10000, tickers};
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    ranges_[i] = {next, counts[i]};
    next += counts[i];
  }
  for (std::size_t s = 0; s < kTokensPerMessage; ++s) {
    SlotMask& m = masks_[s];
    m.field = kSlots[s].field;
    m.range = range(m.field);
    m.nullable = kSlots[s].nullable;
    if (m.nullable) m.ids.push_back(kNan);
    for (std::uint32_t id = m.range.begin; id < m.range.end(); ++id) m.ids.push_back(static_cast<TokenId>(id));
  }
}

TokenField Vocabulary::field_of(TokenId id) const {
  for (std::size_t i = 0; i < ranges_.size(); ++i) {
    if (ranges_[i].contains(id)) return static_cast<TokenField>(i);
  }
  throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
}

std::uint64_t Vocabulary::hash() const {
  Fnv1a h;
  h.add_value(kLayoutVersion);
  for (const auto& r : ranges_) {
    h.add_value(r.begin);
    h.add_value(r.count);
  }
  for (const auto& s : kSlots) {
    h.add_value(static_cast<std::uint8_t>(s.field));
    h.add_value(static_cast<std::uint8_t>(s.nullable));
  }
  return h.value();
}

Vocabulary build_vocab(std::uint32_t tickers) { return Vocabulary(tickers); }

namespace {

class Encoder {
 public:
  Encoder(const Vocabulary& v, TokenizedMessage& out) : v_(v), out_(out) {}

  void value(std::size_t slot, TokenField f, std::uint64_t x) {
    const TokenRange& r = v_.range(f);
    if (x >= r.count) {
      throw TokenEncodeError("value " + std::to_string(x) + " out of range for slot " + std::to_string(slot));
    }
    out_[slot] = r.at(static_cast<std::uint32_t>(x));
  }
  void nan(std::size_t first, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out_[first + i] = Vocabulary::kNan;
  }
  template <class T>
  void price(std::size_t slot, const std::optional<T>& rel) {
    if (!rel) return nan(slot, 2);
    value(slot, TokenField::Sign, *rel < 0 ? kSignNegative : kSignNonNegative);
    value(slot + 1, TokenField::PriceMag, static_cast<std::uint64_t>(*rel < 0 ? -*rel : *rel));
  }
  /// Base-1000 digits, most significant first.
  void digits(std::size_t slot, std::size_t n, std::uint64_t x) {
    for (std::size_t i = n; i-- > 0;) {
      value(slot + i, TokenField::TimeComp, x % 1000);
      x /= 1000;
    }
    if (x != 0) throw TokenEncodeError("value too large for " + std::to_string(n) + " time digits");
  }
  template <class T>
  void opt_digits(std::size_t slot, std::size_t n, const std::optional<T>& x) {
    if (!x) return nan(slot, n);
    digits(slot, n, *x);
  }
  template <class T>
  void opt_size(std::size_t slot, const std::optional<T>& x) {
    if (!x) return nan(slot, 1);
    value(slot, TokenField::Size, *x);
  }

 private:
  const Vocabulary& v_;
  TokenizedMessage& out_;
};

class Decoder {
 public:
  Decoder(const Vocabulary& v, const TokenizedMessage& t) : v_(v), t_(t) {
    for (std::size_t s = 0; s < kTokensPerMessage; ++s) {
      if (!v.slot_mask(s).contains(t[s])) {
        throw TokenDecodeError(s, "id " + std::to_string(t[s]) + " not legal for this slot");
      }
    }
  }

  std::uint32_t value(std::size_t slot) const { return t_[slot] - v_.slot_mask(slot).range.begin; }
  bool is_nan(std::size_t slot) const { return t_[slot] == Vocabulary::kNan; }

  /// All-or-nothing NaN across a multi-token field.
  bool group_nan(std::size_t first, std::size_t n) const {
    std::size_t nans = 0;
    for (std::size_t i = 0; i < n; ++i) nans += is_nan(first + i);
    if (nans != 0 && nans != n) throw TokenDecodeError(first, "partially NaN field");
    return nans == n;
  }
  std::optional<std::int32_t> price(std::size_t slot) const {
    if (group_nan(slot, 2)) return std::nullopt;
    const auto mag = static_cast<std::int32_t>(value(slot + 1));
    return value(slot) == kSignNegative ? -mag : mag;
  }
  std::uint64_t digits(std::size_t slot, std::size_t n) const {
    std::uint64_t x = 0;
    for (std::size_t i = 0; i < n; ++i) x = x * 1000 + value(slot + i);
    return x;
  }
  std::optional<std::uint32_t> opt_digits(std::size_t slot, std::size_t n) const {
    if (group_nan(slot, n)) return std::nullopt;
    return static_cast<std::uint32_t>(digits(slot, n));
  }
  std::optional<std::uint32_t> opt_value(std::size_t slot) const {
    if (is_nan(slot)) return std::nullopt;
    return value(slot);
  }

 private:
  const Vocabulary& v_;
  const TokenizedMessage& t_;
};

}  // namespace

TokenizedMessage encode(const PreMessage& p, const Vocabulary& v) {
  TokenizedMessage t{};
  Encoder e(v, t);
  e.value(0, TokenField::Ticker, p.symbol_id);
  e.value(1, TokenField::Type, index_of(p.type));
  e.value(2, TokenField::Side, static_cast<std::uint64_t>(p.side));
  e.price(3, p.price_rel);
  e.value(5, TokenField::Size, p.size);
  e.opt_size(6, p.size_aux);
  e.value(7, TokenField::TimeComp, p.dt_s);
  e.digits(8, 3, p.dt_ns);
  e.digits(11, 2, p.time_s);
  e.digits(13, 3, p.time_ns);
  e.price(16, p.ref_price_rel);
  e.opt_size(18, p.ref_size);
  e.opt_digits(19, 2, p.ref_time_s);
  e.opt_digits(21, 3, p.ref_time_ns);
  return t;
}

PreMessage decode(const TokenizedMessage& t, const Vocabulary& v) {
  Decoder d(v, t);
  PreMessage p;
  p.symbol_id = static_cast<std::uint16_t>(d.value(0));
  p.type = static_cast<MsgType>(d.value(1));
  p.side = static_cast<Side>(d.value(2));
  p.price_rel = d.price(3);
  p.size = d.value(5);
  p.size_aux = d.opt_value(6);
  p.dt_s = d.value(7);
  p.dt_ns = static_cast<std::uint32_t>(d.digits(8, 3));
  p.time_s = static_cast<std::uint32_t>(d.digits(11, 2));
  p.time_ns = static_cast<std::uint32_t>(d.digits(13, 3));
  p.ref_price_rel = d.price(16);
  p.ref_size = d.opt_value(18);
  p.ref_time_s = d.opt_digits(19, 2);
  p.ref_time_ns = d.opt_digits(21, 3);
  return p;
}

std::vector<TokenId> tokenize(std::span<const PreMessage> msgs, const Vocabulary& v) {
  std::vector<TokenId> out;
  out.reserve(msgs.size() * kTokensPerMessage);
  for (const auto& m : msgs) {
    const auto t = encode(m, v);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

namespace {
constexpr char kCorpusMagic[4] = {'F', 'G', 'T', 'K'};
}

std::vector<std::uint8_t> encode_token_corpus(const TokenCorpus& c) {
  ByteWriter w;
  w.raw(kCorpusMagic, 4);
  w.le16(Vocabulary::kLayoutVersion);
  w.le32(c.tickers);
  w.le64(c.tokens.size());
  for (TokenId id : c.tokens) w.le16(id);
  return w.take();
}

TokenCorpus decode_token_corpus(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 18 || std::memcmp(bytes.data(), kCorpusMagic, 4) != 0) {
    throw std::runtime_error("not a flowgen token corpus (bad magic)");
  }
  ByteReader r(bytes);
  r.skip(4);
  if (const auto v = r.le16(); v != Vocabulary::kLayoutVersion) {
    throw std::runtime_error("token corpus layout version " + std::to_string(v) + " not supported");
  }
  TokenCorpus c;
  c.tickers = r.le32();
  const std::uint64_t n = r.le64();
  if (r.remaining() != n * 2) throw std::runtime_error("token corpus size does not match count");
  c.tokens.resize(n);
  for (auto& id : c.tokens) id = r.le16();
  return c;
}

}  // namespace flowgen
