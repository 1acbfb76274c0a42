#include "flowgen/lob.hpp"

#include <sstream>

#include "byteio.hpp"

namespace flowgen {

namespace {

bool crosses(Side taker, std::int64_t limit, std::int64_t maker_price) {
  return taker == Side::Bid ? limit >= maker_price : limit <= maker_price;
}

template <class Map>
std::optional<std::int64_t> best_of(const Map& m) {
  if (m.empty()) return std::nullopt;
  return m.begin()->first;
}

template <class Map>
void collect_levels(const Map& m, std::vector<std::vector<RestingOrder>>& out) {
  for (const auto& [px, lvl] : m) out.emplace_back(lvl.queue.begin(), lvl.queue.end());
}

template <class Map>
void collect_depth(const Map& m, std::size_t n, std::vector<LevelDepth>& out) {
  for (auto it = m.begin(); it != m.end() && out.size() < n; ++it) {
    out.push_back({it->first, it->second.volume});
  }
}

}  // namespace

const RestingOrder* OrderBook::find(std::uint64_t order_id) const {
  auto it = index_.find(order_id);
  return it == index_.end() ? nullptr : &*it->second.it;
}

const PriceLevel* OrderBook::level(Side side, std::int64_t price) const {
  if (side == Side::Bid) {
    auto it = bids_.find(price);
    return it == bids_.end() ? nullptr : &it->second;
  }
  auto it = asks_.find(price);
  return it == asks_.end() ? nullptr : &it->second;
}

std::optional<std::int64_t> OrderBook::best_bid() const { return best_of(bids_); }
std::optional<std::int64_t> OrderBook::best_ask() const { return best_of(asks_); }

std::optional<std::int64_t> OrderBook::mid2() const {
  if (bids_.empty() || asks_.empty()) return std::nullopt;
  return bids_.begin()->first + asks_.begin()->first;
}

std::uint64_t OrderBook::depth(Side side, std::int64_t price) const {
  const PriceLevel* l = level(side, price);
  return l ? l->volume : 0;
}

std::uint64_t OrderBook::total_shares(Side side) const {
  std::uint64_t total = 0;
  if (side == Side::Bid) {
    for (const auto& [px, l] : bids_) total += l.volume;
  } else {
    for (const auto& [px, l] : asks_) total += l.volume;
  }
  return total;
}

BookSnapshot OrderBook::snapshot(std::size_t depth_levels) const {
  BookSnapshot s;
  s.best_bid = best_bid();
  s.best_ask = best_ask();
  if (s.best_bid) s.vol_bid = bids_.begin()->second.volume;
  if (s.best_ask) s.vol_ask = asks_.begin()->second.volume;
  if (s.best_bid && s.best_ask) {
    s.mid2 = *s.best_bid + *s.best_ask;
    s.spread = *s.best_ask - *s.best_bid;
  }
  collect_depth(bids_, depth_levels, s.bid_depth);
  collect_depth(asks_, depth_levels, s.ask_depth);
  return s;
}

std::vector<std::vector<RestingOrder>> OrderBook::levels(Side side) const {
  std::vector<std::vector<RestingOrder>> out;
  if (side == Side::Bid) {
    collect_levels(bids_, out);
  } else {
    collect_levels(asks_, out);
  }
  return out;
}

std::vector<std::uint64_t> OrderBook::order_ids() const {
  std::vector<std::uint64_t> ids;
  ids.reserve(index_.size());
  for (const auto& [id, loc] : index_) ids.push_back(id);
  return ids;
}

std::uint64_t OrderBook::state_hash() const {
  Fnv1a h;
  auto add_side = [&](const auto& m, std::uint8_t tag) {
    h.add_value(tag);
    for (const auto& [px, lvl] : m) {
      h.add_value(px);
      h.add_value(lvl.volume);
      for (const auto& o : lvl.queue) {
        h.add_value(o.order_id);
        h.add_value(o.size);
        h.add_value(o.entry_time_ns);
      }
    }
  };
  add_side(bids_, 0);
  add_side(asks_, 1);
  return h.value();
}

OrderBook::OrderBook(const OrderBook& other) : bids_(other.bids_), asks_(other.asks_) { reindex(); }

OrderBook& OrderBook::operator=(const OrderBook& other) {
  if (this != &other) {
    bids_ = other.bids_;
    asks_ = other.asks_;
    reindex();
  }
  return *this;
}

// locators point into the maps they were built from
void OrderBook::reindex() {
  index_.clear();
  auto add = [&](auto& m, Side side) {
    for (auto& [px, lvl] : m) {
      for (auto it = lvl.queue.begin(); it != lvl.queue.end(); ++it) index_.emplace(it->order_id, Locator{side, &lvl, it});
    }
  };
  add(bids_, Side::Bid);
  add(asks_, Side::Ask);
}

OrderBook::Locator& OrderBook::locate(std::uint64_t id, const OrderFlowMessage& msg) {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw ReferentialError(ReferentialError::Kind::MissingOrder,
                           "no resting order " + std::to_string(id) + " for " + describe(msg));
  }
  const RestingOrder& o = *it->second.it;
  if (o.side != msg.side || o.price != msg.price) {
    throw ReferentialError(ReferentialError::Kind::FieldMismatch,
                           "side/price of " + describe(msg) + " disagree with resting order");
  }
  return it->second;
}

void OrderBook::reduce(Locator& loc, std::uint32_t by) {
  PriceLevel* lvl = loc.level;
  const std::uint64_t id = loc.it->order_id;
  loc.it->size -= by;
  lvl->volume -= by;
  if (loc.it->size == 0) {
    lvl->queue.erase(loc.it);
    const Side side = loc.side;
    const std::int64_t px = lvl->price;
    index_.erase(id);  // invalidates loc
    if (lvl->queue.empty()) {
      if (side == Side::Bid) {
        bids_.erase(px);
      } else {
        asks_.erase(px);
      }
    }
  }
}

void OrderBook::rest(const RestingOrder& o) {
  PriceLevel* lvl = nullptr;
  if (o.side == Side::Bid) {
    auto [it, inserted] = bids_.try_emplace(o.price);
    lvl = &it->second;
  } else {
    auto [it, inserted] = asks_.try_emplace(o.price);
    lvl = &it->second;
  }
  lvl->price = o.price;
  lvl->volume += o.size;
  lvl->queue.push_back(o);
  index_.emplace(o.order_id, Locator{o.side, lvl, std::prev(lvl->queue.end())});
}

void OrderBook::insert_limit(std::uint64_t id, Side side, std::int64_t price, std::uint32_t size,
                             std::int64_t ts, std::vector<BookEvent>& events) {
  if (index_.contains(id)) {
    throw ReferentialError(ReferentialError::Kind::DuplicateOrder,
                           "order id " + std::to_string(id) + " already resting");
  }
  std::uint32_t left = size;
  while (left > 0) {
    PriceLevel* maker_level = nullptr;
    if (side == Side::Bid) {
      if (asks_.empty() || !crosses(side, price, asks_.begin()->first)) break;
      maker_level = &asks_.begin()->second;
    } else {
      if (bids_.empty() || !crosses(side, price, bids_.begin()->first)) break;
      maker_level = &bids_.begin()->second;
    }
    const RestingOrder& maker = maker_level->queue.front();
    const std::uint32_t fill = std::min(left, maker.size);
    events.push_back(Trade{maker.order_id, side, maker.price, fill});
    left -= fill;
    reduce(index_.at(maker.order_id), fill);
  }
  if (left > 0) {
    rest(RestingOrder{id, side, price, left, ts});
    events.push_back(Placed{id, left});
  }
}

std::vector<BookEvent> OrderBook::apply(const OrderFlowMessage& msg) {
  std::vector<BookEvent> events;
  if (msg.size == 0) throw SizeError("zero size in " + describe(msg));
  switch (msg.type) {
    case MsgType::Add:
      insert_limit(msg.order_id, msg.side, msg.price, msg.size, msg.timestamp_ns, events);
      break;
    case MsgType::Execute:
    case MsgType::ExecuteAtPrice: {
      Locator& loc = locate(msg.order_id, msg);
      if (msg.size > loc.it->size) {
        throw SizeError("fill " + std::to_string(msg.size) + " exceeds resting " +
                        std::to_string(loc.it->size) + " in " + describe(msg));
      }
      std::int64_t px = loc.it->price;
      if (msg.type == MsgType::ExecuteAtPrice) {
        if (!msg.exec_or_new_price) throw SizeError("missing execution price in " + describe(msg));
        px = *msg.exec_or_new_price;
      }
      events.push_back(Trade{msg.order_id, opposite(msg.side), px, msg.size});
      reduce(loc, msg.size);
      break;
    }
    case MsgType::Cancel: {
      Locator& loc = locate(msg.order_id, msg);
      const std::uint32_t resting = loc.it->size;
      if (msg.size > resting) {
        throw SizeError("cancel of " + std::to_string(msg.size) + " exceeds resting " +
                        std::to_string(resting) + " in " + describe(msg));
      }
      if (msg.remaining_size && *msg.remaining_size != resting - msg.size) {
        throw SizeError("remaining size disagrees with book in " + describe(msg));
      }
      events.push_back(Canceled{msg.order_id, msg.size});
      reduce(loc, msg.size);
      break;
    }
    case MsgType::Replace: {
      if (!msg.new_order_id || !msg.exec_or_new_price) {
        throw ReferentialError(ReferentialError::Kind::FieldMismatch,
                               "replace without new id/price: " + describe(msg));
      }
      Locator& loc = locate(msg.order_id, msg);
      const std::uint32_t resting = loc.it->size;
      if (msg.remaining_size && *msg.remaining_size != resting) {
        throw SizeError("replaced size disagrees with book in " + describe(msg));
      }
      if (*msg.new_order_id != msg.order_id && index_.contains(*msg.new_order_id)) {
        throw ReferentialError(ReferentialError::Kind::DuplicateOrder,
                               "replacement id already resting: " + describe(msg));
      }
      reduce(loc, resting);
      events.push_back(Replaced{msg.order_id, *msg.new_order_id});
      insert_limit(*msg.new_order_id, msg.side, *msg.exec_or_new_price, msg.size, msg.timestamp_ns,
                   events);
      break;
    }
  }
  return events;
}

OrderBook replay(std::span<const OrderFlowMessage> msgs) {
  OrderBook book;
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    try {
      book.apply(msgs[i]);
    } catch (const std::exception& e) {
      throw ReplayError(i, e.what());
    }
  }
  return book;
}

std::vector<SnapshotRow> snapshot_grid(std::span<const OrderFlowMessage> msgs) {
  std::vector<SnapshotRow> rows;
  if (msgs.empty()) return rows;
  OrderBook book;
  const std::int64_t first_s = msgs.front().timestamp_ns / kNanosPerSecond + 1;
  const std::int64_t last_s = msgs.back().timestamp_ns / kNanosPerSecond;
  std::size_t i = 0;
  for (std::int64_t t = first_s; t <= last_s; ++t) {
    const std::int64_t cutoff = t * kNanosPerSecond;
    for (; i < msgs.size() && msgs[i].timestamp_ns <= cutoff; ++i) {
      try {
        book.apply(msgs[i]);
      } catch (const std::exception& e) {
        throw ReplayError(i, e.what());
      }
    }
    const BookSnapshot s = book.snapshot(1);
    rows.push_back({t, s.best_bid, s.best_ask, s.spread, s.vol_bid, s.vol_ask});
  }
  return rows;
}

std::string snapshot_grid_csv(std::span<const SnapshotRow> rows) {
  std::ostringstream os;
  os << "time_s,best_bid,best_ask,spread,vol_bid_1,vol_ask_1\n";
  auto opt = [&](const std::optional<std::int64_t>& v) {
    if (v) os << *v;
  };
  for (const auto& r : rows) {
    os << r.time_s << ',';
    opt(r.best_bid);
    os << ',';
    opt(r.best_ask);
    os << ',';
    opt(r.spread);
    os << ',' << r.vol_bid_1 << ',' << r.vol_ask_1 << '\n';
  }
  return os.str();
}

}  // namespace flowgen
