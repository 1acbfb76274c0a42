#pragma once

#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "flowgen/message.hpp"

namespace flowgen {

struct RestingOrder {
  std::uint64_t order_id = 0;
  Side side = Side::Bid;
  std::int64_t price = 0;
  std::uint32_t size = 0;
  std::int64_t entry_time_ns = 0;

  bool operator==(const RestingOrder&) const = default;
};

struct Trade {
  std::uint64_t maker_id = 0;
  Side taker_side = Side::Bid;
  std::int64_t price = 0;
  std::uint32_t size = 0;
  bool operator==(const Trade&) const = default;
};
struct Placed {
  std::uint64_t order_id = 0;
  std::uint32_t size = 0;
  bool operator==(const Placed&) const = default;
};
struct Canceled {
  std::uint64_t order_id = 0;
  std::uint32_t size = 0;
  bool operator==(const Canceled&) const = default;
};
struct Replaced {
  std::uint64_t old_id = 0;
  std::uint64_t new_id = 0;
  bool operator==(const Replaced&) const = default;
};
using BookEvent = std::variant<Trade, Placed, Canceled, Replaced>;

class ReferentialError : public std::runtime_error {
 public:
  enum class Kind { MissingOrder, DuplicateOrder, FieldMismatch };
  ReferentialError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class SizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while replaying a feed; `index` is the offending message position.
class ReplayError : public std::runtime_error {
 public:
  ReplayError(std::size_t index, const std::string& what)
      : std::runtime_error("message " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

struct PriceLevel {
  std::int64_t price = 0;
  std::uint64_t volume = 0;
  std::list<RestingOrder> queue;  // FIFO: front has time priority
};

struct LevelDepth {
  std::int64_t price = 0;
  std::uint64_t volume = 0;
  bool operator==(const LevelDepth&) const = default;
};

struct BookSnapshot {
  std::optional<std::int64_t> best_bid;
  std::optional<std::int64_t> best_ask;
  std::optional<std::int64_t> mid2;    // (best_bid + best_ask), i.e. mid in half-ticks
  std::optional<std::int64_t> spread;  // best_ask - best_bid, ticks
  std::uint64_t vol_bid = 0;
  std::uint64_t vol_ask = 0;
  std::vector<LevelDepth> bid_depth;  // best first
  std::vector<LevelDepth> ask_depth;

  std::optional<double> mid() const {
    if (!mid2) return std::nullopt;
    return static_cast<double>(*mid2) / 2.0;
  }
  bool operator==(const BookSnapshot&) const = default;
};

/// Full-depth (level-3) book with price-time priority.
///
/// apply() is O(log P + k) for P price levels and k orders touched.
class OrderBook {
 public:
  OrderBook() = default;
  OrderBook(const OrderBook& other);
  OrderBook& operator=(const OrderBook& other);
  OrderBook(OrderBook&&) noexcept = default;
  OrderBook& operator=(OrderBook&&) noexcept = default;

  std::vector<BookEvent> apply(const OrderFlowMessage& msg);

  const RestingOrder* find(std::uint64_t order_id) const;
  const PriceLevel* level(Side side, std::int64_t price) const;

  std::optional<std::int64_t> best_bid() const;
  std::optional<std::int64_t> best_ask() const;
  std::optional<std::int64_t> mid2() const;
  std::uint64_t depth(Side side, std::int64_t price) const;

  BookSnapshot snapshot(std::size_t depth_levels = 10) const;

  std::size_t order_count() const { return index_.size(); }
  std::size_t level_count(Side side) const { return side == Side::Bid ? bids_.size() : asks_.size(); }
  std::uint64_t total_shares(Side side) const;
  bool empty() const { return index_.empty(); }

  /// All resting orders on one side, best level first, queue order within a level.
  std::vector<std::vector<RestingOrder>> levels(Side side) const;

  /// Live order ids in unspecified order.
  std::vector<std::uint64_t> order_ids() const;

  /// Hash over every level and queue position.
  std::uint64_t state_hash() const;

 private:
  struct Locator {
    Side side;
    PriceLevel* level;
    std::list<RestingOrder>::iterator it;
  };
  using BidMap = std::map<std::int64_t, PriceLevel, std::greater<>>;
  using AskMap = std::map<std::int64_t, PriceLevel, std::less<>>;

  Locator& locate(std::uint64_t id, const OrderFlowMessage& msg);
  void insert_limit(std::uint64_t id, Side side, std::int64_t price, std::uint32_t size,
                    std::int64_t ts, std::vector<BookEvent>& events);
  void reduce(Locator& loc, std::uint32_t by);
  void rest(const RestingOrder& o);
  void reindex();

  BidMap bids_;
  AskMap asks_;
  std::unordered_map<std::uint64_t, Locator> index_;
};

/// Sequentially applies msgs to an empty book. Throws ReplayError on the first failure.
OrderBook replay(std::span<const OrderFlowMessage> msgs);

struct SnapshotRow {
  std::int64_t time_s = 0;
  std::optional<std::int64_t> best_bid;
  std::optional<std::int64_t> best_ask;
  std::optional<std::int64_t> spread;
  std::uint64_t vol_bid_1 = 0;
  std::uint64_t vol_ask_1 = 0;
};

/// Replays msgs and samples the book at every whole second in
/// [first second, last second], carrying the last state forward.
std::vector<SnapshotRow> snapshot_grid(std::span<const OrderFlowMessage> msgs);
std::string snapshot_grid_csv(std::span<const SnapshotRow> rows);

}  // namespace flowgen
