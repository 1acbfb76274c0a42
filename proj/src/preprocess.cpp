#include "flowgen/preprocess.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "byteio.hpp"

namespace flowgen {

namespace {

std::int64_t floor_half(std::int64_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }
std::int64_t ceil_half(std::int64_t v) { return v >= 0 ? (v + 1) / 2 : -((-v) / 2); }

std::uint32_t clamp_size(std::uint64_t s, bool& clamped) {
  if (s > kMaxTokenSize) {
    clamped = true;
    return kMaxTokenSize;
  }
  return static_cast<std::uint32_t>(s);
}

}  // namespace

PreMessage PreMessage::tokenized_view() const {
  PreMessage p = *this;
  p.order_id.reset();
  p.price_abs.reset();
  p.old_id.reset();
  p.old_price_abs.reset();
  return p;
}

void MidTracker::update(const OrderBook& book) {
  previous_ = current_;
  current_ = book.mid2();
  if (current_) reference_ = current_;
}

std::int64_t relative_ticks(std::int64_t price, Side side, std::int64_t mid2) {
  const std::int64_t diff2 = 2 * price - mid2;
  return side == Side::Bid ? floor_half(diff2) : ceil_half(diff2);
}

std::int64_t absolute_price(std::int64_t rel, Side side, std::int64_t mid2) {
  const std::int64_t twice = mid2 + 2 * rel;
  return side == Side::Bid ? ceil_half(twice) : floor_half(twice);
}

PreMessage to_pre_message(const OrderFlowMessage& m, const OrderBook& book,
                          std::optional<std::int64_t> ref_mid2,
                          std::optional<std::int64_t> prev_timestamp, bool* clamped_out) {
  bool clamped = false;
  PreMessage p;
  p.symbol_id = m.symbol_id;
  p.type = m.type;
  p.side = m.side;
  p.time_s = static_cast<std::uint32_t>(m.timestamp_ns / kNanosPerSecond);
  p.time_ns = static_cast<std::uint32_t>(m.timestamp_ns % kNanosPerSecond);

  const std::int64_t dt = prev_timestamp ? m.timestamp_ns - *prev_timestamp : 0;
  if (dt < 0) throw StationarizeError("timestamp moves backwards: " + describe(m));
  std::int64_t dt_s = dt / kNanosPerSecond;
  if (dt_s > kMaxDtSeconds) {
    dt_s = kMaxDtSeconds;
    clamped = true;
  }
  p.dt_s = static_cast<std::uint32_t>(dt_s);
  p.dt_ns = static_cast<std::uint32_t>(dt % kNanosPerSecond);

  auto rel = [&](std::int64_t px, Side side) -> std::optional<std::int32_t> {
    if (!ref_mid2) return std::nullopt;
    const std::int64_t r = relative_ticks(px, side, *ref_mid2);
    if (r > kMaxRelTicks || r < -kMaxRelTicks) clamped = true;
    return static_cast<std::int32_t>(std::clamp<std::int64_t>(r, -kMaxRelTicks, kMaxRelTicks));
  };

  if (m.type == MsgType::Add) {
    p.order_id = m.order_id;
    p.price_abs = m.price;
    p.price_rel = rel(m.price, m.side);
    p.size = clamp_size(m.size, clamped);
    if (clamped_out) *clamped_out = clamped;
    return p;
  }

  const RestingOrder* target = book.find(m.order_id);
  if (!target) throw StationarizeError("referenced order not in book: " + describe(m));
  if (m.type != MsgType::Replace && m.size > target->size) {
    throw StationarizeError("size exceeds resting order: " + describe(m));
  }
  p.ref_price_rel = rel(target->price, target->side);
  p.ref_size = clamp_size(target->size, clamped);
  p.ref_time_s = static_cast<std::uint32_t>(target->entry_time_ns / kNanosPerSecond);
  p.ref_time_ns = static_cast<std::uint32_t>(target->entry_time_ns % kNanosPerSecond);

  switch (m.type) {
    case MsgType::Execute:
    case MsgType::Cancel:
      p.order_id = m.order_id;
      p.price_abs = target->price;
      p.price_rel = rel(target->price, target->side);
      p.size = clamp_size(m.size, clamped);
      p.size_aux = clamp_size(target->size - m.size, clamped);
      break;
    case MsgType::ExecuteAtPrice:
      p.order_id = m.order_id;
      p.price_abs = m.exec_or_new_price.value_or(target->price);
      p.price_rel = rel(*p.price_abs, target->side);
      p.size = clamp_size(m.size, clamped);
      p.size_aux = clamp_size(target->size - m.size, clamped);
      p.old_id = m.order_id;
      p.old_price_abs = target->price;
      break;
    case MsgType::Replace:
      if (!m.new_order_id || !m.exec_or_new_price) {
        throw StationarizeError("replace without new id/price: " + describe(m));
      }
      p.order_id = *m.new_order_id;
      p.price_abs = *m.exec_or_new_price;
      p.price_rel = rel(*m.exec_or_new_price, target->side);
      p.size = clamp_size(target->size, clamped);
      p.size_aux = clamp_size(m.size, clamped);
      p.old_id = m.order_id;
      p.old_price_abs = target->price;
      break;
    case MsgType::Add:
      break;
  }
  if (clamped_out) *clamped_out = clamped;
  return p;
}

PreMessage Stationarizer::push(const OrderFlowMessage& m) {
  bool clamped = false;
  PreMessage p = to_pre_message(m, book_, mid_.reference(), prev_ts_, &clamped);
  try {
    book_.apply(m);
  } catch (const std::exception& e) {
    throw StationarizeError(e.what());
  }
  mid_.update(book_);
  prev_ts_ = m.timestamp_ns;
  ++processed_;
  if (clamped) ++clamped_;
  return p;
}

std::vector<PreMessage> stationarize(std::span<const OrderFlowMessage> msgs, StationarizeStats* stats) {
  Stationarizer st;
  std::vector<PreMessage> out;
  out.reserve(msgs.size());
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    try {
      out.push_back(st.push(msgs[i]));
    } catch (const StationarizeError& e) {
      throw StationarizeError("message " + std::to_string(i) + ": " + e.what());
    }
  }
  if (stats) *stats = {st.processed(), st.clamped()};
  return out;
}

std::optional<std::int64_t> reference_level_price(const PreMessage& pre, std::optional<std::int64_t> mid2) {
  if (!pre.ref_price_rel || !mid2) return std::nullopt;
  return absolute_price(*pre.ref_price_rel, pre.side, *mid2);
}

const RestingOrder* find_reference(const PriceLevel& level, const PreMessage& pre) {
  if (!pre.ref_time_s || !pre.ref_time_ns || !pre.ref_size) return nullptr;
  const std::int64_t t = static_cast<std::int64_t>(*pre.ref_time_s) * kNanosPerSecond + *pre.ref_time_ns;
  for (const RestingOrder& o : level.queue) {
    if (o.entry_time_ns == t && o.size == *pre.ref_size) return &o;
  }
  return nullptr;
}

OrderFlowMessage materialize(const PreMessage& pre, const RestingOrder* target,
                             std::optional<std::int64_t> mid2, std::int64_t timestamp_ns,
                             std::uint64_t order_id) {
  auto price_of = [&](Side side) -> std::int64_t {
    if (pre.price_rel && mid2) return absolute_price(*pre.price_rel, side, *mid2);
    if (pre.price_abs) return *pre.price_abs;
    throw ResolutionError("price unavailable (no relative price or no mid)");
  };
  OrderFlowMessage m;
  m.timestamp_ns = timestamp_ns;
  m.type = pre.type;
  m.symbol_id = pre.symbol_id;
  m.size = pre.size;
  if (pre.type == MsgType::Add) {
    m.order_id = order_id;
    m.side = pre.side;
    m.price = price_of(pre.side);
    return m;
  }
  if (!target) throw ResolutionError("referential message without target");
  m.order_id = target->order_id;
  m.side = target->side;
  m.price = target->price;
  switch (pre.type) {
    case MsgType::Execute:
      break;
    case MsgType::ExecuteAtPrice:
      m.exec_or_new_price = price_of(target->side);
      break;
    case MsgType::Cancel:
      if (pre.size > target->size) throw ResolutionError("cancel exceeds resting size");
      m.remaining_size = target->size - pre.size;
      break;
    case MsgType::Replace:
      if (!pre.size_aux) throw ResolutionError("replace without new size");
      m.size = *pre.size_aux;
      m.new_order_id = order_id;
      m.exec_or_new_price = price_of(target->side);
      m.remaining_size = target->size;
      break;
    case MsgType::Add:
      break;
  }
  return m;
}

OrderFlowMessage destationarize(const PreMessage& pre, const MidTracker& mid, const OrderBook& book,
                                std::int64_t prev_timestamp_ns, std::uint64_t fresh_id) {
  const std::int64_t ts = prev_timestamp_ns + static_cast<std::int64_t>(pre.dt_s) * kNanosPerSecond + pre.dt_ns;
  const auto mid2 = mid.reference();
  const std::uint64_t new_id = pre.order_id.value_or(fresh_id);
  if (pre.type == MsgType::Add) return materialize(pre, nullptr, mid2, ts, new_id);

  const auto raw_target = pre.type == MsgType::Replace ? pre.old_id : pre.order_id;
  const RestingOrder* target = nullptr;
  if (raw_target) {
    target = book.find(*raw_target);
    if (!target) throw ResolutionError("order " + std::to_string(*raw_target) + " not resting");
  } else {
    const auto px = reference_level_price(pre, mid2);
    if (!px) throw ResolutionError("reference price unavailable");
    const PriceLevel* level = book.level(pre.side, *px);
    if (!level) throw ResolutionError("no " + std::string(to_string(pre.side)) + " level at " + std::to_string(*px));
    target = find_reference(*level, pre);
    if (!target) throw ResolutionError("no order matching reference time/size at " + std::to_string(*px));
  }
  return materialize(pre, target, mid2, ts, new_id);
}

OrderFlowMessage Destationarizer::push(const PreMessage& pre) {
  std::int64_t base = prev_ts_;
  if (first_) {
    const std::int64_t abs_ts = static_cast<std::int64_t>(pre.time_s) * kNanosPerSecond + pre.time_ns;
    base = abs_ts - (static_cast<std::int64_t>(pre.dt_s) * kNanosPerSecond + pre.dt_ns);
  }
  OrderFlowMessage m = destationarize(pre, mid_, book_, base, next_id_);
  if ((m.type == MsgType::Add && m.order_id == next_id_) ||
      (m.type == MsgType::Replace && m.new_order_id == next_id_)) {
    ++next_id_;
  }
  book_.apply(m);
  mid_.update(book_);
  prev_ts_ = m.timestamp_ns;
  first_ = false;
  return m;
}

// ---------------------------------------------------------------------------
// Dumps

namespace {

constexpr char kPreMagic[4] = {'F', 'G', 'P', 'M'};

enum PresenceBit : std::uint16_t {
  kHasOrderId = 1 << 0,
  kHasPriceAbs = 1 << 1,
  kHasPriceRel = 1 << 2,
  kHasSizeAux = 1 << 3,
  kHasOldId = 1 << 4,
  kHasOldPrice = 1 << 5,
  kHasRefPrice = 1 << 6,
  kHasRefSize = 1 << 7,
  kHasRefTimeS = 1 << 8,
  kHasRefTimeNs = 1 << 9,
};

template <class T>
void put_opt(std::uint16_t& mask, std::uint16_t bit, const std::optional<T>& v) {
  if (v) mask |= bit;
}

template <class T>
std::optional<T> get_opt(std::uint16_t mask, std::uint16_t bit, T v) {
  if (mask & bit) return v;
  return std::nullopt;
}

}  // namespace

std::vector<std::uint8_t> encode_pre_messages(std::span<const PreMessage> msgs) {
  ByteWriter w;
  w.raw(kPreMagic, 4);
  w.le16(kPreMessageFormatVersion);
  w.le64(msgs.size());
  for (const auto& p : msgs) {
    std::uint16_t mask = 0;
    put_opt(mask, kHasOrderId, p.order_id);
    put_opt(mask, kHasPriceAbs, p.price_abs);
    put_opt(mask, kHasPriceRel, p.price_rel);
    put_opt(mask, kHasSizeAux, p.size_aux);
    put_opt(mask, kHasOldId, p.old_id);
    put_opt(mask, kHasOldPrice, p.old_price_abs);
    put_opt(mask, kHasRefPrice, p.ref_price_rel);
    put_opt(mask, kHasRefSize, p.ref_size);
    put_opt(mask, kHasRefTimeS, p.ref_time_s);
    put_opt(mask, kHasRefTimeNs, p.ref_time_ns);
    w.le16(mask);
    w.le16(p.symbol_id);
    w.le64(p.order_id.value_or(0));
    w.u8(static_cast<std::uint8_t>(p.type));
    w.u8(static_cast<std::uint8_t>(p.side));
    w.le64(static_cast<std::uint64_t>(p.price_abs.value_or(0)));
    w.le32(static_cast<std::uint32_t>(p.price_rel.value_or(0)));
    w.le32(p.size);
    w.le32(p.size_aux.value_or(0));
    w.le32(p.dt_s);
    w.le32(p.dt_ns);
    w.le32(p.time_s);
    w.le32(p.time_ns);
    w.le64(p.old_id.value_or(0));
    w.le64(static_cast<std::uint64_t>(p.old_price_abs.value_or(0)));
    w.le32(static_cast<std::uint32_t>(p.ref_price_rel.value_or(0)));
    w.le32(p.ref_size.value_or(0));
    w.le32(p.ref_time_s.value_or(0));
    w.le32(p.ref_time_ns.value_or(0));
  }
  return w.take();
}

std::vector<PreMessage> decode_pre_messages(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 14 || std::memcmp(bytes.data(), kPreMagic, 4) != 0) {
    throw std::runtime_error("not a flowgen pre-message file (bad magic)");
  }
  ByteReader r(bytes);
  r.skip(4);
  if (const auto v = r.le16(); v != kPreMessageFormatVersion) {
    throw std::runtime_error("unsupported pre-message format version " + std::to_string(v));
  }
  const std::uint64_t n = r.le64();
  constexpr std::size_t kRecord = 2 + 2 + 8 + 1 + 1 + 8 + 4 * 7 + 8 + 8 + 4 * 4;
  if (r.remaining() != n * kRecord) throw std::runtime_error("pre-message file size does not match count");
  std::vector<PreMessage> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    PreMessage p;
    const std::uint16_t mask = r.le16();
    p.symbol_id = r.le16();
    p.order_id = get_opt<std::uint64_t>(mask, kHasOrderId, r.le64());
    const auto type = r.u8();
    const auto side = r.u8();
    if (type >= kNumMsgTypes || side > 1) throw std::runtime_error("corrupt pre-message record " + std::to_string(i));
    p.type = static_cast<MsgType>(type);
    p.side = static_cast<Side>(side);
    p.price_abs = get_opt<std::int64_t>(mask, kHasPriceAbs, static_cast<std::int64_t>(r.le64()));
    p.price_rel = get_opt<std::int32_t>(mask, kHasPriceRel, static_cast<std::int32_t>(r.le32()));
    p.size = r.le32();
    p.size_aux = get_opt<std::uint32_t>(mask, kHasSizeAux, r.le32());
    p.dt_s = r.le32();
    p.dt_ns = r.le32();
    p.time_s = r.le32();
    p.time_ns = r.le32();
    p.old_id = get_opt<std::uint64_t>(mask, kHasOldId, r.le64());
    p.old_price_abs = get_opt<std::int64_t>(mask, kHasOldPrice, static_cast<std::int64_t>(r.le64()));
    p.ref_price_rel = get_opt<std::int32_t>(mask, kHasRefPrice, static_cast<std::int32_t>(r.le32()));
    p.ref_size = get_opt<std::uint32_t>(mask, kHasRefSize, r.le32());
    p.ref_time_s = get_opt<std::uint32_t>(mask, kHasRefTimeS, r.le32());
    p.ref_time_ns = get_opt<std::uint32_t>(mask, kHasRefTimeNs, r.le32());
    out.push_back(p);
  }
  return out;
}

std::string pre_messages_csv(std::span<const PreMessage> msgs) {
  std::ostringstream os;
  os << "symbol_id,order_id,type,side,price_abs,price_rel,size,size_aux,dt_s,dt_ns,time_s,time_ns,"
        "old_id,old_price_abs,ref_price_rel,ref_size,ref_time_s,ref_time_ns\n";
  auto opt = [&](const auto& v) -> std::ostream& {
    if (v) {
      os << *v;
    } else {
      os << "nan";
    }
    return os;
  };
  for (const auto& p : msgs) {
    os << p.symbol_id << ',';
    opt(p.order_id) << ',' << to_string(p.type) << ',' << to_string(p.side) << ',';
    opt(p.price_abs) << ',';
    opt(p.price_rel) << ',' << p.size << ',';
    opt(p.size_aux) << ',' << p.dt_s << ',' << p.dt_ns << ',' << p.time_s << ',' << p.time_ns << ',';
    opt(p.old_id) << ',';
    opt(p.old_price_abs) << ',';
    opt(p.ref_price_rel) << ',';
    opt(p.ref_size) << ',';
    opt(p.ref_time_s) << ',';
    opt(p.ref_time_ns) << '\n';
  }
  return os.str();
}

}  // namespace flowgen
