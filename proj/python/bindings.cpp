#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flowgen/feed.hpp"
#include "flowgen/lob.hpp"
#include "flowgen/model/sampling.hpp"
#include "flowgen/model/transformer.hpp"
#include "flowgen/preprocess.hpp"
#include "flowgen/stylized.hpp"
#include "flowgen/synth.hpp"
#include "flowgen/vocab.hpp"

namespace py = pybind11;
using namespace flowgen;

namespace {

std::vector<std::uint8_t> as_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

std::vector<double> as_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(_flowgen, m) {
  m.doc() = "flowgen core bindings";
  m.attr("__version__") = "0.1.0";
  m.attr("TOKENS_PER_MESSAGE") = kTokensPerMessage;

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ReplayError>(m, "ReplayError", PyExc_ValueError);
  py::register_exception<TokenEncodeError>(m, "TokenEncodeError", PyExc_ValueError);
  py::register_exception<TokenDecodeError>(m, "TokenDecodeError", PyExc_ValueError);
  py::register_exception<EstimatorError>(m, "EstimatorError", PyExc_ValueError);

  py::enum_<MsgType>(m, "MsgType")
      .value("Add", MsgType::Add)
      .value("Execute", MsgType::Execute)
      .value("ExecuteAtPrice", MsgType::ExecuteAtPrice)
      .value("Cancel", MsgType::Cancel)
      .value("Replace", MsgType::Replace);
  py::enum_<Side>(m, "Side").value("Bid", Side::Bid).value("Ask", Side::Ask);

  py::class_<OrderFlowMessage>(m, "Message")
      .def(py::init<>())
      .def_readwrite("timestamp_ns", &OrderFlowMessage::timestamp_ns)
      .def_readwrite("type", &OrderFlowMessage::type)
      .def_readwrite("order_id", &OrderFlowMessage::order_id)
      .def_readwrite("side", &OrderFlowMessage::side)
      .def_readwrite("size", &OrderFlowMessage::size)
      .def_readwrite("price", &OrderFlowMessage::price)
      .def_readwrite("remaining_size", &OrderFlowMessage::remaining_size)
      .def_readwrite("new_order_id", &OrderFlowMessage::new_order_id)
      .def_readwrite("exec_or_new_price", &OrderFlowMessage::exec_or_new_price)
      .def_readwrite("symbol_id", &OrderFlowMessage::symbol_id)
      .def("__eq__", [](const OrderFlowMessage& a, const OrderFlowMessage& b) { return a == b; })
      .def("__repr__", [](const OrderFlowMessage& x) { return describe(x); });

  m.def(
      "synth_feed",
      [](std::size_t n, std::uint64_t seed, std::uint16_t symbol_id) {
        FeedConfig c;
        c.seed = seed;
        c.symbol_id = symbol_id;
        return synth_feed(c, n);
      },
      py::arg("n"), py::arg("seed") = 1, py::arg("symbol_id") = 0);
  m.def("write_feed", [](const std::vector<OrderFlowMessage>& msgs) { return to_bytes(write_feed(msgs)); });
  m.def("parse_feed", [](const py::bytes& b) { return parse_feed(as_bytes(b)).messages; });

  py::class_<BookSnapshot>(m, "BookSnapshot")
      .def_readonly("best_bid", &BookSnapshot::best_bid)
      .def_readonly("best_ask", &BookSnapshot::best_ask)
      .def_readonly("mid2", &BookSnapshot::mid2)
      .def_readonly("spread", &BookSnapshot::spread)
      .def_readonly("vol_bid", &BookSnapshot::vol_bid)
      .def_readonly("vol_ask", &BookSnapshot::vol_ask);

  py::class_<OrderBook>(m, "OrderBook")
      .def(py::init<>())
      .def("apply", [](OrderBook& b, const OrderFlowMessage& msg) { b.apply(msg); })
      .def("best_bid", &OrderBook::best_bid)
      .def("best_ask", &OrderBook::best_ask)
      .def("mid2", &OrderBook::mid2)
      .def("order_count", &OrderBook::order_count)
      .def("state_hash", &OrderBook::state_hash)
      .def("snapshot", &OrderBook::snapshot, py::arg("depth_levels") = 10)
      .def("levels", [](const OrderBook& b, Side s) {
        std::vector<std::vector<std::pair<std::uint64_t, std::uint32_t>>> out;
        for (const auto& lvl : b.levels(s)) {
          auto& row = out.emplace_back();
          for (const auto& o : lvl) row.emplace_back(o.order_id, o.size);
        }
        return out;
      });

  py::class_<PreMessage>(m, "PreMessage")
      .def(py::init<>())
      .def_readwrite("symbol_id", &PreMessage::symbol_id)
      .def_readwrite("type", &PreMessage::type)
      .def_readwrite("side", &PreMessage::side)
      .def_readwrite("price_rel", &PreMessage::price_rel)
      .def_readwrite("size", &PreMessage::size)
      .def_readwrite("size_aux", &PreMessage::size_aux)
      .def_readwrite("dt_s", &PreMessage::dt_s)
      .def_readwrite("dt_ns", &PreMessage::dt_ns)
      .def_readwrite("time_s", &PreMessage::time_s)
      .def_readwrite("time_ns", &PreMessage::time_ns)
      .def_readwrite("ref_price_rel", &PreMessage::ref_price_rel)
      .def_readwrite("ref_size", &PreMessage::ref_size)
      .def_readwrite("ref_time_s", &PreMessage::ref_time_s)
      .def_readwrite("ref_time_ns", &PreMessage::ref_time_ns)
      .def("tokenized_view", &PreMessage::tokenized_view)
      .def("__eq__", [](const PreMessage& a, const PreMessage& b) { return a == b; });

  m.def("stationarize", [](const std::vector<OrderFlowMessage>& msgs) { return stationarize(msgs); });

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<std::uint32_t>(), py::arg("tickers") = 98)
      .def_property_readonly("size", &Vocabulary::size)
      .def_property_readonly("tickers", &Vocabulary::tickers)
      .def("hash", &Vocabulary::hash)
      .def("encode", [](const Vocabulary& v, const PreMessage& p) { return encode(p, v); })
      .def("decode", [](const Vocabulary& v, const TokenizedMessage& t) { return decode(t, v); })
      .def("tokenize", [](const Vocabulary& v, const std::vector<PreMessage>& msgs) { return tokenize(msgs, v); })
      .def("legal", [](const Vocabulary& v, std::size_t slot) {
        const SlotMask& s = v.slot_mask(slot);
        return s.ids;
      });

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("max_context", &ModelConfig::max_context)
      .def("validate", &ModelConfig::validate)
      .def("ffn_hidden", &ModelConfig::ffn_hidden);

  using Model = Transformer<double>;
  py::class_<Model>(m, "Transformer")
      .def(py::init<ModelConfig>())
      .def("init_weights", &Model::init_weights)
      .def_property_readonly("parameter_count", &Model::parameter_count)
      .def("forward",
           [](const Model& t, const std::vector<TokenId>& tokens) -> RowMatrix<double> { return t.forward(tokens); })
      .def("loss", [](const Model& t, const std::vector<TokenId>& tokens) { return t.loss(tokens); });

  m.def(
      "sample",
      [](const std::vector<double>& logits, double temperature, double top_p, std::uint64_t seed) {
        SampleParams p;
        p.temperature = temperature;
        p.top_p = top_p;
        std::mt19937_64 rng(seed);
        std::vector<TokenId> ids(logits.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<TokenId>(i);
        return sample_from(logits, ids, p, rng);
      },
      py::arg("logits"), py::arg("temperature") = 1.02, py::arg("top_p") = 0.98, py::arg("seed") = 1);

  m.def("excess_kurtosis", [](const py::array_t<double>& x) { return excess_kurtosis(as_vector(x)); });
  m.def("acf", [](const py::array_t<double>& x, int max_lag) { return acf(as_vector(x), max_lag).values; });
  m.def("dfa_alpha", [](const py::array_t<double>& x) {
    const DfaResult r = dfa_alpha(as_vector(x));
    return py::dict(py::arg("alpha") = r.alpha, py::arg("gamma") = r.gamma, py::arg("r2") = r.r2);
  });
  m.def("hurst_rs", [](const py::array_t<double>& x) {
    const HurstResult r = hurst_rs(as_vector(x));
    return py::dict(py::arg("H") = r.H, py::arg("se") = r.se, py::arg("ci_low") = r.ci_low,
                    py::arg("ci_high") = r.ci_high);
  });
}
