#include "flowgen/model/checkpoint.hpp"

#include <cstring>

#include "../byteio.hpp"
#include "flowgen/feed.hpp"

namespace flowgen {

namespace {

constexpr char kMagic[4] = {'F', 'G', 'C', 'K'};

void put_floats(ByteWriter& w, const std::vector<float>& v) {
  for (float x : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &x, 4);
    w.le32(bits);
  }
}

std::vector<float> get_floats(ByteReader& r, std::size_t n) {
  if (r.remaining() < n * 4) throw CheckpointError("checkpoint truncated");
  std::vector<float> v(n);
  for (auto& x : v) {
    const std::uint32_t bits = r.le32();
    std::memcpy(&x, &bits, 4);
  }
  return v;
}

std::pair<nlohmann::json, std::size_t> read_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("not a flowgen checkpoint (bad magic)");
  }
  ByteReader r(bytes);
  r.skip(4);
  const std::uint32_t len = r.le32();
  if (r.remaining() < len) throw CheckpointError("checkpoint header truncated");
  const auto* p = reinterpret_cast<const char*>(bytes.data() + 8);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(p, p + len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (h.value("format_version", 0) != Checkpoint::kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version");
  }
  return {h, 8 + static_cast<std::size_t>(len)};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Transformer<float> probe(c.config);
  if (probe.parameter_count() != c.params.size()) throw CheckpointError("parameter count does not match config");
  const bool adam = !c.adam_m.empty();
  if (adam && (c.adam_m.size() != c.params.size() || c.adam_v.size() != c.params.size())) {
    throw CheckpointError("optimizer state size mismatch");
  }
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : probe.tensors()) {
    tensors.push_back({{"name", t.name}, {"offset", t.offset}, {"rows", t.rows}, {"cols", t.cols}});
  }
  const nlohmann::json h = {{"format_version", Checkpoint::kFormatVersion},
                            {"dtype", "float32"},
                            {"model", c.config},
                            {"config_hash", c.config.hash()},
                            {"vocab_hash", c.vocab_hash},
                            {"tickers", c.tickers},
                            {"seed", c.seed},
                            {"step", c.step},
                            {"train", c.train_config},
                            {"parameters", c.params.size()},
                            {"optimizer_state", adam},
                            {"tensors", tensors}};
  const std::string text = h.dump();
  ByteWriter w;
  w.raw(kMagic, 4);
  w.le32(static_cast<std::uint32_t>(text.size()));
  w.raw(text.data(), text.size());
  put_floats(w, c.params);
  if (adam) {
    put_floats(w, c.adam_m);
    put_floats(w, c.adam_v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  auto [h, offset] = read_header(bytes);
  Checkpoint c;
  try {
    c.config = h.at("model").get<ModelConfig>();
    c.vocab_hash = h.at("vocab_hash").get<std::uint64_t>();
    c.tickers = h.at("tickers").get<std::uint32_t>();
    c.seed = h.at("seed").get<std::uint64_t>();
    c.step = h.at("step").get<std::int64_t>();
    c.train_config = h.at("train");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (h.at("config_hash").get<std::uint64_t>() != c.config.hash()) throw CheckpointError("config hash mismatch");
  const auto n = h.at("parameters").get<std::size_t>();
  ByteReader r(bytes.subspan(offset));
  c.params = get_floats(r, n);
  if (h.at("optimizer_state").get<bool>()) {
    c.adam_m = get_floats(r, n);
    c.adam_v = get_floats(r, n);
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint tensors");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) { write_file_bytes(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

nlohmann::json checkpoint_header(const std::string& path) { return read_header(read_file_bytes(path)).first; }

Transformer<float> model_from_checkpoint(const Checkpoint& c) {
  Transformer<float> m(c.config);
  if (m.parameter_count() != c.params.size()) throw CheckpointError("parameter count does not match config");
  std::copy(c.params.begin(), c.params.end(), m.parameters().begin());
  return m;
}

}  // namespace flowgen
