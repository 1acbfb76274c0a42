#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flowgen/lob.hpp"
#include "flowgen/message.hpp"

namespace flowgen::testing {

// Brute-force book: one flat vector in arrival order, every query is a scan.
class NaiveBook {
 public:
  struct Order {
    std::uint64_t seq;
    RestingOrder o;
  };

  std::vector<Trade> apply(const OrderFlowMessage& m) {
    std::vector<Trade> trades;
    switch (m.type) {
      case MsgType::Add:
        insert(m.order_id, m.side, m.price, m.size, m.timestamp_ns, trades);
        break;
      case MsgType::Execute:
      case MsgType::ExecuteAtPrice: {
        auto& o = get(m.order_id);
        trades.push_back({m.order_id, opposite(m.side),
                          m.type == MsgType::ExecuteAtPrice ? *m.exec_or_new_price : o.o.price, m.size});
        o.o.size -= m.size;
        prune();
        break;
      }
      case MsgType::Cancel:
        get(m.order_id).o.size -= m.size;
        prune();
        break;
      case MsgType::Replace:
        get(m.order_id).o.size = 0;
        prune();
        insert(*m.new_order_id, m.side, *m.exec_or_new_price, m.size, m.timestamp_ns, trades);
        break;
    }
    return trades;
  }

  // levels best first, queue order inside
  std::vector<std::vector<RestingOrder>> levels(Side s) const {
    std::vector<Order> side;
    for (const auto& x : orders_) {
      if (x.o.side == s) side.push_back(x);
    }
    std::stable_sort(side.begin(), side.end(), [&](const Order& a, const Order& b) {
      if (a.o.price != b.o.price) return s == Side::Bid ? a.o.price > b.o.price : a.o.price < b.o.price;
      return a.seq < b.seq;
    });
    std::vector<std::vector<RestingOrder>> out;
    for (const auto& x : side) {
      if (out.empty() || out.back().front().price != x.o.price) out.emplace_back();
      out.back().push_back(x.o);
    }
    return out;
  }

  std::optional<std::int64_t> best(Side s) const {
    std::optional<std::int64_t> b;
    for (const auto& x : orders_) {
      if (x.o.side != s) continue;
      if (!b || (s == Side::Bid ? x.o.price > *b : x.o.price < *b)) b = x.o.price;
    }
    return b;
  }

  const std::vector<Order>& orders() const { return orders_; }
  const RestingOrder* find(std::uint64_t id) const {
    for (const auto& x : orders_) {
      if (x.o.order_id == id) return &x.o;
    }
    return nullptr;
  }

 private:
  Order& get(std::uint64_t id) {
    for (auto& x : orders_) {
      if (x.o.order_id == id) return x;
    }
    throw std::runtime_error("naive book: unknown order");
  }
  void prune() {
    std::erase_if(orders_, [](const Order& x) { return x.o.size == 0; });
  }
  void insert(std::uint64_t id, Side side, std::int64_t px, std::uint32_t size, std::int64_t ts,
              std::vector<Trade>& trades) {
    while (size > 0) {
      // earliest order at the best opposite price
      const Side opp = opposite(side);
      const auto b = best(opp);
      if (!b || (side == Side::Bid ? px < *b : px > *b)) break;
      Order* maker = nullptr;
      for (auto& x : orders_) {
        if (x.o.side == opp && x.o.price == *b && (!maker || x.seq < maker->seq)) maker = &x;
      }
      const std::uint32_t fill = std::min(size, maker->o.size);
      trades.push_back({maker->o.order_id, side, maker->o.price, fill});
      maker->o.size -= fill;
      size -= fill;
      prune();
    }
    if (size > 0) orders_.push_back({seq_++, RestingOrder{id, side, px, size, ts}});
  }

  std::vector<Order> orders_;
  std::uint64_t seq_ = 0;
};

// Random valid stream that also produces crossing adds and crossing replaces.
inline std::vector<OrderFlowMessage> random_stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NaiveBook book;
  std::vector<OrderFlowMessage> out;
  std::uint64_t next_id = 1;
  std::int64_t ts = 34'200'000'000'000;
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  while (out.size() < n) {
    ts += uni(0, 5'000'000);
    OrderFlowMessage m;
    m.timestamp_ns = ts;
    const auto& live = book.orders();
    const int kind = live.empty() ? 0 : uni(0, 9);
    if (kind <= 3) {
      m.type = MsgType::Add;
      m.order_id = next_id++;
      m.side = uni(0, 1) ? Side::Bid : Side::Ask;
      m.size = static_cast<std::uint32_t>(uni(1, 400));
      m.price = 10000 + uni(-8, 8);
    } else {
      const auto& target = live[static_cast<std::size_t>(uni(0, static_cast<int>(live.size()) - 1))].o;
      m.order_id = target.order_id;
      m.side = target.side;
      m.price = target.price;
      if (kind <= 5) {
        m.type = kind == 4 ? MsgType::Execute : MsgType::ExecuteAtPrice;
        m.size = static_cast<std::uint32_t>(uni(1, static_cast<int>(target.size)));
        if (m.type == MsgType::ExecuteAtPrice) m.exec_or_new_price = target.price + uni(-2, 2);
      } else if (kind <= 7) {
        m.type = MsgType::Cancel;
        m.size = static_cast<std::uint32_t>(uni(1, static_cast<int>(target.size)));
        m.remaining_size = target.size - m.size;
      } else {
        m.type = MsgType::Replace;
        m.new_order_id = next_id++;
        m.remaining_size = target.size;
        m.size = static_cast<std::uint32_t>(uni(1, 400));
        m.exec_or_new_price = 10000 + uni(-8, 8);
      }
    }
    book.apply(m);
    out.push_back(m);
  }
  return out;
}

// Big-endian record builder for hand-encoded ITCH bytes.
struct Bytes {
  std::vector<std::uint8_t> b;
  Bytes& u8(std::uint64_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    return *this;
  }
  Bytes& be(std::uint64_t v, int n) {
    for (int i = n - 1; i >= 0; --i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    return *this;
  }
  Bytes& str(const std::string& s) {
    b.insert(b.end(), s.begin(), s.end());
    return *this;
  }
  Bytes& append(const Bytes& o) {
    b.insert(b.end(), o.b.begin(), o.b.end());
    return *this;
  }
};

inline Bytes record(char kind, std::uint16_t locate, std::uint64_t ts, const Bytes& payload) {
  Bytes body;
  body.u8(static_cast<std::uint8_t>(kind)).be(locate, 2).be(0, 2).be(ts, 6).append(payload);
  Bytes r;
  r.be(body.b.size(), 2).append(body);
  return r;
}

inline Bytes add_record(std::uint64_t ts, std::uint64_t id, char bs, std::uint32_t shares, std::uint32_t wire_price,
                        std::uint16_t locate = 0) {
  Bytes p;
  p.be(id, 8).u8(static_cast<std::uint8_t>(bs)).be(shares, 4).str("AAPL    ").be(wire_price, 4);
  return record('A', locate, ts, p);
}

// Fractional Gaussian noise by Hosking's exact recursion (Durbin-Levinson), O(n^2).
inline std::vector<double> fgn_hosking(std::size_t n, double H, std::uint64_t seed) {
  auto gamma = [H](double k) {
    return 0.5 * (std::pow(std::abs(k + 1), 2 * H) - 2 * std::pow(std::abs(k), 2 * H) + std::pow(std::abs(k - 1), 2 * H));
  };
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> x(n), phi(n, 0.0), prev(n, 0.0);
  double v = 1.0;
  x[0] = z(rng);
  for (std::size_t t = 1; t < n; ++t) {
    double num = gamma(static_cast<double>(t));
    for (std::size_t j = 1; j < t; ++j) num -= prev[j] * gamma(static_cast<double>(t - j));
    const double k = num / v;
    phi[t] = k;
    for (std::size_t j = 1; j < t; ++j) phi[j] = prev[j] - k * prev[t - j];
    v *= (1.0 - k * k);
    double mean = 0.0;
    for (std::size_t j = 1; j <= t; ++j) mean += phi[j] * x[t - j];
    x[t] = mean + std::sqrt(v) * z(rng);
    std::copy(phi.begin(), phi.begin() + static_cast<std::ptrdiff_t>(t) + 1, prev.begin());
  }
  return x;
}

inline std::vector<double> white_noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = z(rng);
  return x;
}

inline std::vector<double> ar1(std::size_t n, double phi, std::uint64_t seed) {
  auto e = white_noise(n + 1000, seed);
  std::vector<double> x(n);
  double s = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    s = phi * s + e[i];
    if (i >= 1000) x[i - 1000] = s;
  }
  return x;
}

inline std::vector<double> cumsum(const std::vector<double>& x) {
  std::vector<double> y(x.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (s += x[i]);
  return y;
}

}  // namespace flowgen::testing
