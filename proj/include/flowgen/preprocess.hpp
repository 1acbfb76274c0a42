#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowgen/lob.hpp"
#include "flowgen/message.hpp"

namespace flowgen {

inline constexpr std::int32_t kMaxRelTicks = 999;
inline constexpr std::uint32_t kMaxTokenSize = 9999;
inline constexpr std::uint32_t kMaxDtSeconds = 999;

/// The 18-field stationary form of a message.
///
/// Prices are in ticks relative to the mid prevailing before the message was
/// applied. Absent values (std::nullopt) are the NaN marker. order_id,
/// price_abs, old_id and old_price_abs are carried for bookkeeping and are
/// never tokenized.
///
/// Per type:
///   Add             price_rel = limit price; size; size_aux/refs/old_* absent
///   Execute         price_rel = resting price; size = fill; size_aux = size left
///   ExecuteAtPrice  price_rel = print price; size = fill; size_aux = size left;
///                   old_id/old_price_abs = the resting order
///   Cancel          price_rel = resting price; size = canceled; size_aux = size left
///   Replace         price_rel = new price; size = old size; size_aux = new size;
///                   order_id = new id; old_id/old_price_abs = the replaced order
/// For every referential type ref_price_rel is the resting order's price
/// relative to the current mid (so old_price_abs = mid + ref_price_rel),
/// ref_size its size before the message and ref_time_* its entry time.
struct PreMessage {
  std::uint16_t symbol_id = 0;                // 1
  std::optional<std::uint64_t> order_id;      // 2 (raw)
  MsgType type = MsgType::Add;                // 3
  Side side = Side::Bid;                      // 4
  std::optional<std::int64_t> price_abs;      // 5 (raw)
  std::optional<std::int32_t> price_rel;      // 6
  std::uint32_t size = 0;                     // 7
  std::optional<std::uint32_t> size_aux;      // 8
  std::uint32_t dt_s = 0;                     // 9
  std::uint32_t dt_ns = 0;                    // 10
  std::uint32_t time_s = 0;                   // 11
  std::uint32_t time_ns = 0;                  // 12
  std::optional<std::uint64_t> old_id;        // 13 (raw)
  std::optional<std::int64_t> old_price_abs;  // 14 (raw)
  std::optional<std::int32_t> ref_price_rel;  // 15
  std::optional<std::uint32_t> ref_size;      // 16
  std::optional<std::uint32_t> ref_time_s;    // 17
  std::optional<std::uint32_t> ref_time_ns;   // 18

  bool operator==(const PreMessage&) const = default;

  /// Copy with the raw (never tokenized) fields cleared.
  PreMessage tokenized_view() const;
};

/// Tracks the mid-price in half-ticks. current() is the mid of the book as of
/// the last update (absent while a side is empty); reference() is the last
/// mid that was defined, used as the anchor for relative prices.
class MidTracker {
 public:
  void update(const OrderBook& book);

  std::optional<std::int64_t> current() const { return current_; }
  std::optional<std::int64_t> previous() const { return previous_; }
  std::optional<std::int64_t> reference() const { return reference_; }

 private:
  std::optional<std::int64_t> current_;
  std::optional<std::int64_t> previous_;
  std::optional<std::int64_t> reference_;
};

/// Ticks from the mid (given in half-ticks). When the mid falls on a half tick
/// the result is rounded toward the order's own side: down for bids, up for asks.
std::int64_t relative_ticks(std::int64_t price, Side side, std::int64_t mid2);
/// Inverse of relative_ticks for the same side and mid.
std::int64_t absolute_price(std::int64_t rel, Side side, std::int64_t mid2);

class StationarizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Destationarization could not find the referenced order.
class ResolutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Converts one message given the book *before* it is applied.
/// `clamped` is set when any field was truncated to the token range.
PreMessage to_pre_message(const OrderFlowMessage& m, const OrderBook& book,
                          std::optional<std::int64_t> ref_mid2,
                          std::optional<std::int64_t> prev_timestamp, bool* clamped = nullptr);

/// Streaming transducer: owns the replayed book and mid tracker.
class Stationarizer {
 public:
  PreMessage push(const OrderFlowMessage& m);

  const OrderBook& book() const { return book_; }
  const MidTracker& mid() const { return mid_; }
  std::size_t processed() const { return processed_; }
  std::size_t clamped() const { return clamped_; }

 private:
  OrderBook book_;
  MidTracker mid_;
  std::optional<std::int64_t> prev_ts_;
  std::size_t processed_ = 0;
  std::size_t clamped_ = 0;
};

struct StationarizeStats {
  std::size_t messages = 0;
  std::size_t clamped = 0;
};

/// Replays msgs from an empty book. Throws StationarizeError (with the
/// message index) if a referential message has no target.
std::vector<PreMessage> stationarize(std::span<const OrderFlowMessage> msgs,
                                     StationarizeStats* stats = nullptr);

/// Price level targeted by a referential message: mid + ref_price_rel.
std::optional<std::int64_t> reference_level_price(const PreMessage& pre, std::optional<std::int64_t> mid2);

/// First order in queue order whose entry time and current size both equal the reference.
const RestingOrder* find_reference(const PriceLevel& level, const PreMessage& pre);

/// Builds the absolute message for `pre` acting on `target` (null for Add).
/// Throws ResolutionError if a needed field is absent.
OrderFlowMessage materialize(const PreMessage& pre, const RestingOrder* target,
                             std::optional<std::int64_t> mid2, std::int64_t timestamp_ns,
                             std::uint64_t order_id);

/// Reconstructs the absolute message. Add/Replace use pre.order_id as the new
/// id when present, else `fresh_id`. Referential targets are looked up by raw
/// id when present, otherwise by reference time and size at the reference level.
OrderFlowMessage destationarize(const PreMessage& pre, const MidTracker& mid, const OrderBook& book,
                                std::int64_t prev_timestamp_ns, std::uint64_t fresh_id = 0);

/// Inverse of Stationarizer: replays the messages it reconstructs.
class Destationarizer {
 public:
  explicit Destationarizer(std::uint64_t first_fresh_id = 1) : next_id_(first_fresh_id) {}
  OrderFlowMessage push(const PreMessage& pre);
  const OrderBook& book() const { return book_; }

 private:
  OrderBook book_;
  MidTracker mid_;
  std::int64_t prev_ts_ = 0;
  bool first_ = true;
  std::uint64_t next_id_;
};

// Versioned dumps. Binary: magic "FGPM", u16 version, u64 count, fixed-size
// little-endian records with a presence bitmask for optional fields.
inline constexpr std::uint16_t kPreMessageFormatVersion = 1;
std::vector<std::uint8_t> encode_pre_messages(std::span<const PreMessage> msgs);
std::vector<PreMessage> decode_pre_messages(std::span<const std::uint8_t> bytes);
std::string pre_messages_csv(std::span<const PreMessage> msgs);

}  // namespace flowgen
