#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace flowgen {

enum class MsgType : std::uint8_t { Add = 0, Execute = 1, ExecuteAtPrice = 2, Cancel = 3, Replace = 4 };
enum class Side : std::uint8_t { Bid = 0, Ask = 1 };

inline constexpr std::size_t kNumMsgTypes = 5;
inline constexpr std::array<MsgType, kNumMsgTypes> kAllMsgTypes = {
    MsgType::Add, MsgType::Execute, MsgType::ExecuteAtPrice, MsgType::Cancel, MsgType::Replace};

constexpr std::size_t index_of(MsgType t) { return static_cast<std::size_t>(t); }
constexpr Side opposite(Side s) { return s == Side::Bid ? Side::Ask : Side::Bid; }

/// Every message type except Add refers to a resting order.
constexpr bool is_referential(MsgType t) { return t != MsgType::Add; }

std::string_view to_string(MsgType t);
std::string_view to_string(Side s);
MsgType msg_type_from_string(std::string_view s);
Side side_from_string(std::string_view s);

inline constexpr std::int64_t kNanosPerSecond = 1'000'000'000;

constexpr std::int64_t hms_to_ns(int h, int m, int s, std::int64_t ns = 0) {
  return ((static_cast<std::int64_t>(h) * 60 + m) * 60 + s) * kNanosPerSecond + ns;
}

/// One exchange event. Prices are integer ticks (1 tick = $0.01).
///
/// Field usage by type:
///   Add             order_id, side, size, price
///   Execute         order_id, side, size (fill), price (resting price)
///   ExecuteAtPrice  as Execute, plus exec_or_new_price (print price)
///   Cancel          order_id, side, size (canceled), price, remaining_size
///   Replace         order_id (old), new_order_id, side, size (new size),
///                   price (old price), exec_or_new_price (new price),
///                   remaining_size (old order's size at replacement)
/// Fields that do not apply to a type are std::nullopt.
struct OrderFlowMessage {
  std::int64_t timestamp_ns = 0;
  MsgType type = MsgType::Add;
  std::uint64_t order_id = 0;
  Side side = Side::Bid;
  std::uint32_t size = 0;
  std::int64_t price = 0;
  std::optional<std::uint32_t> remaining_size;
  std::optional<std::uint64_t> new_order_id;
  std::optional<std::int64_t> exec_or_new_price;
  std::uint16_t symbol_id = 0;

  bool operator==(const OrderFlowMessage&) const = default;
};

/// Throws std::invalid_argument if per-type field usage is violated.
void validate(const OrderFlowMessage& m);

std::string describe(const OrderFlowMessage& m);

}  // namespace flowgen
