#include "flowgen/synth.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "flowgen/lob.hpp"

namespace flowgen {

void FeedConfig::validate() const {
  if (session.open_ns >= session.close_ns) throw std::invalid_argument("session open must precede close");
  for (double l : intensity) {
    if (!(l > 0.0)) throw std::invalid_argument("arrival intensities must be positive");
  }
  if (round_lot_mass < 0.0 || odd_lot_mass < 0.0 || std::abs(round_lot_mass + odd_lot_mass - 1.0) > 1e-9) {
    throw std::invalid_argument("size mixture weights must be non-negative and sum to 1");
  }
  if (!(price_scale >= 1.0)) throw std::invalid_argument("price_scale must be >= 1");
  if (!(round_lot_mean_lots >= 1.0)) throw std::invalid_argument("round_lot_mean_lots must be >= 1");
  if (initial_price < 1) throw std::invalid_argument("initial_price must be positive");
}

namespace {

// Inverse-CDF sampling on top of the raw engine keeps the stream identical
// across standard library implementations.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double open_uniform() { return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53; }
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }
  double exponential(double rate) { return -std::log(open_uniform()) / rate; }
  /// Support {1, 2, ...} with the given mean.
  std::int64_t geometric(double mean) {
    if (mean <= 1.0) return 1;
    const double q = 1.0 - 1.0 / mean;
    return 1 + static_cast<std::int64_t>(std::floor(std::log(open_uniform()) / std::log(q)));
  }
  double normal() {
    const double u1 = open_uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::mt19937_64 eng_;
};

class Generator {
 public:
  Generator(const FeedConfig& c) : cfg_(c), rng_(c.seed), now_(c.start_ns), anchor_(c.initial_price) {
    total_rate_ = std::accumulate(c.intensity.begin(), c.intensity.end(), 0.0);
  }

  OrderFlowMessage next() {
    now_ += static_cast<std::int64_t>(std::llround(rng_.exponential(total_rate_) * 1e9));
    OrderFlowMessage m = make(pick_type());
    m.timestamp_ns = now_;
    m.symbol_id = cfg_.symbol_id;
    book_.apply(m);
    track(m);
    if (auto mid2 = book_.mid2()) anchor_ = *mid2 / 2;
    return m;
  }

 private:
  MsgType pick_type() {
    if (!book_.best_bid() || !book_.best_ask() || live_.size() < 2) return MsgType::Add;
    double u = rng_.uniform() * total_rate_;
    for (MsgType t : kAllMsgTypes) {
      u -= cfg_.intensity[index_of(t)];
      if (u < 0.0) return t;
    }
    return MsgType::Replace;
  }

  std::uint32_t draw_size() {
    if (rng_.uniform() < cfg_.round_lot_mass) {
      const std::int64_t lots = std::min<std::int64_t>(rng_.geometric(cfg_.round_lot_mean_lots), 99);
      return static_cast<std::uint32_t>(lots * 100);
    }
    for (;;) {
      const double x = std::exp(cfg_.odd_lot_log_mean + cfg_.odd_lot_log_sd * rng_.normal());
      const auto s = static_cast<std::int64_t>(std::llround(x));
      if (s >= 1 && s <= 9999 && s % 100 != 0) return static_cast<std::uint32_t>(s);
    }
  }

  std::int64_t passive_price(Side side) {
    const std::int64_t k = rng_.geometric(cfg_.price_scale);
    const auto opp = side == Side::Bid ? book_.best_ask() : book_.best_bid();
    std::int64_t px = 0;
    if (opp) {
      px = side == Side::Bid ? *opp - k : *opp + k;
    } else {
      px = side == Side::Bid ? anchor_ - k : anchor_ + k;
    }
    return std::max<std::int64_t>(px, 1);
  }

  OrderFlowMessage make(MsgType type) {
    OrderFlowMessage m;
    m.type = type;
    switch (type) {
      case MsgType::Add: {
        if (!book_.best_bid()) {
          m.side = Side::Bid;
        } else if (!book_.best_ask()) {
          m.side = Side::Ask;
        } else {
          m.side = rng_.uniform() < 0.5 ? Side::Bid : Side::Ask;
        }
        m.order_id = next_id_++;
        m.size = draw_size();
        m.price = passive_price(m.side);
        break;
      }
      case MsgType::Execute:
      case MsgType::ExecuteAtPrice: {
        Side side = rng_.uniform() < 0.5 ? Side::Bid : Side::Ask;
        const auto best = side == Side::Bid ? book_.best_bid() : book_.best_ask();
        const RestingOrder& o = book_.level(side, *best)->queue.front();
        fill_from(m, o);
        m.size = partial(o.size, cfg_.full_fill_prob);
        if (type == MsgType::ExecuteAtPrice) {
          std::int64_t delta = 1 + static_cast<std::int64_t>(rng_.below(2));
          if (rng_.uniform() < 0.5) delta = -delta;
          m.exec_or_new_price = std::max<std::int64_t>(o.price + delta, 1);
        }
        break;
      }
      case MsgType::Cancel: {
        const RestingOrder& o = *book_.find(live_[rng_.below(live_.size())]);
        fill_from(m, o);
        m.size = partial(o.size, cfg_.full_cancel_prob);
        m.remaining_size = o.size - m.size;
        break;
      }
      case MsgType::Replace: {
        const RestingOrder& o = *book_.find(live_[rng_.below(live_.size())]);
        fill_from(m, o);
        m.remaining_size = o.size;
        m.new_order_id = next_id_++;
        m.size = draw_size();
        std::int64_t px = o.price + static_cast<std::int64_t>(rng_.below(5)) - 2;
        if (o.side == Side::Bid) {
          if (auto ask = book_.best_ask(); ask && px >= *ask) px = *ask - 1;
        } else {
          if (auto bid = book_.best_bid(); bid && px <= *bid) px = *bid + 1;
        }
        m.exec_or_new_price = std::max<std::int64_t>(px, 1);
        break;
      }
    }
    return m;
  }

  static void fill_from(OrderFlowMessage& m, const RestingOrder& o) {
    m.order_id = o.order_id;
    m.side = o.side;
    m.price = o.price;
  }

  std::uint32_t partial(std::uint32_t resting, double full_prob) {
    if (resting == 1 || rng_.uniform() < full_prob) return resting;
    return 1 + static_cast<std::uint32_t>(rng_.below(resting - 1));
  }

  void track(const OrderFlowMessage& m) {
    if (m.type == MsgType::Add) {
      add_live(m.order_id);
      return;
    }
    if (!book_.find(m.order_id)) drop_live(m.order_id);
    if (m.type == MsgType::Replace && book_.find(*m.new_order_id)) add_live(*m.new_order_id);
  }

  void add_live(std::uint64_t id) {
    pos_[id] = live_.size();
    live_.push_back(id);
  }

  void drop_live(std::uint64_t id) {
    auto it = pos_.find(id);
    if (it == pos_.end()) return;
    const std::size_t i = it->second;
    live_[i] = live_.back();
    pos_[live_[i]] = i;
    live_.pop_back();
    pos_.erase(id);
  }

  const FeedConfig& cfg_;
  Draw rng_;
  std::int64_t now_;
  std::int64_t anchor_;
  double total_rate_ = 0.0;
  std::uint64_t next_id_ = 1;
  OrderBook book_;
  std::vector<std::uint64_t> live_;
  std::unordered_map<std::uint64_t, std::size_t> pos_;
};

}  // namespace

std::vector<OrderFlowMessage> synth_feed(const FeedConfig& config, std::size_t n_messages) {
  config.validate();
  std::vector<OrderFlowMessage> out;
  out.reserve(n_messages);
  Generator gen(config);
  for (std::size_t i = 0; i < n_messages; ++i) out.push_back(gen.next());
  return out;
}

}  // namespace flowgen
