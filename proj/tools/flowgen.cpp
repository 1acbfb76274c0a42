#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "flowgen/feed.hpp"
#include "flowgen/model/checkpoint.hpp"
#include "flowgen/model/train.hpp"
#include "flowgen/preprocess.hpp"
#include "flowgen/report.hpp"
#include "flowgen/sim.hpp"
#include "flowgen/synth.hpp"
#include "flowgen/trace_io.hpp"
#include "flowgen/vocab.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flowgen;

namespace {

/// Bad input from the caller: exit code 1.
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Layered configuration: defaults < --config file < FLOWGEN_<KEY> env < flags

struct Option {
  std::string key;  // json key; flag is --key with '_' -> '-'
  json def;
  std::string help;
};

class Layered {
 public:
  Layered(CLI::App* app, std::string name, std::vector<Option> opts) : app_(app), name_(std::move(name)), opts_(std::move(opts)) {
    app_->add_option("--config", config_file_, "JSON config file (layered under env and flags)");
    app_->add_flag("--print-config", print_, "Print the resolved configuration and exit");
    for (const auto& o : opts_) {
      std::string flag = "--" + o.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      raw_[o.key] = "";
      if (o.def.is_boolean()) {
        app_->add_flag(flag, flags_[o.key], o.help + " [" + o.def.dump() + "]");
      } else {
        app_->add_option(flag, raw_[o.key], o.help + " [" + o.def.dump() + "]");
      }
    }
  }

  json resolve() const {
    json cfg = json::object();
    for (const auto& o : opts_) cfg[o.key] = o.def;
    if (!config_file_.empty()) {
      std::ifstream in(config_file_);
      if (!in) throw UserError("cannot open config file " + config_file_);
      json file;
      try {
        in >> file;
      } catch (const json::exception& e) {
        throw UserError("config file " + config_file_ + ": " + e.what());
      }
      const json& section = file.contains(name_) && file[name_].is_object() ? file[name_] : file;
      for (auto it = section.begin(); it != section.end(); ++it) {
        if (!cfg.contains(it.key())) {
          if (file.contains(name_)) throw UserError("config file: unknown key '" + it.key() + "'");
          continue;
        }
        cfg[it.key()] = coerce(it.key(), it.value());
      }
    }
    for (const auto& o : opts_) {
      std::string env = "FLOWGEN_" + o.key;
      std::transform(env.begin(), env.end(), env.begin(), [](unsigned char c) { return std::toupper(c); });
      if (const char* v = std::getenv(env.c_str())) cfg[o.key] = parse(o, v);
    }
    for (const auto& o : opts_) {
      std::string flag = "--" + o.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      if (app_->count(flag) == 0) continue;
      cfg[o.key] = o.def.is_boolean() ? json(flags_.at(o.key)) : parse(o, raw_.at(o.key));
    }
    return cfg;
  }

  bool print_requested() const { return print_; }
  const std::string& config_file() const { return config_file_; }

 private:
  json coerce(const std::string& key, const json& v) const {
    for (const auto& o : opts_) {
      if (o.key != key) continue;
      if (v.is_string() && !o.def.is_string()) return parse(o, v.get<std::string>());
      return v;
    }
    return v;
  }

  static json parse(const Option& o, const std::string& s) {
    try {
      if (o.def.is_boolean()) return s == "1" || s == "true" || s == "yes" || s == "on";
      if (o.def.is_number_unsigned()) return std::stoull(s);
      if (o.def.is_number_integer()) return std::stoll(s);
      if (o.def.is_number_float()) return std::stod(s);
    } catch (const std::exception&) {
      throw UserError("invalid value '" + s + "' for " + o.key);
    }
    return s;
  }

  CLI::App* app_;
  std::string name_;
  std::vector<Option> opts_;
  std::string config_file_;
  bool print_ = false;
  std::map<std::string, std::string> raw_;
  std::map<std::string, bool> flags_;
};

// ---------------------------------------------------------------------------
// Helpers

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv(std::span<const std::uint8_t> b) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t x : b) {
    h ^= x;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> read_input(const std::string& path) {
  if (!fs::exists(path)) throw UserError("input file not found: " + path);
  return read_file_bytes(path);
}

std::string file_hash(const std::string& path) { return hex64(fnv(read_input(path))); }

std::string now_utc() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

/// Manifest next to a file output (<file>.manifest.json) or inside a directory output.
void write_manifest(const fs::path& where, bool is_dir, const std::string& sub, const Layered* layered,
                    const json& cfg, json artifacts) {
  json m = {{"subcommand", sub},
            {"config_file", layered && !layered->config_file().empty() ? json(layered->config_file()) : json(nullptr)},
            {"config", cfg},
            {"seed", cfg.contains("seed") ? cfg["seed"] : json(nullptr)},
            {"artifacts", std::move(artifacts)},
            {"created_utc", now_utc()},
            {"tool_version", "0.1.0"}};
  write_json(is_dir ? where / "manifest.json" : fs::path(where.string() + ".manifest.json"), m);
}

std::int64_t parse_clock(const std::string& s) {
  int h = 0, m = 0, sec = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (s.find(':') != std::string::npos) {
    if (!(in >> h >> c1 >> m >> c2 >> sec) || c1 != ':' || c2 != ':' || h < 0 || h > 23 || m < 0 || m > 59 ||
        sec < 0 || sec > 59) {
      throw UserError("bad time '" + s + "' (expected HH:MM:SS)");
    }
    return hms_to_ns(h, m, sec);
  }
  try {
    return std::stoll(s);
  } catch (const std::exception&) {
    throw UserError("bad time '" + s + "'");
  }
}

/// Feed container when the magic matches, otherwise a bare record stream.
FeedFile load_any_feed(const std::string& path, ParseResult* details) {
  const auto bytes = read_input(path);
  if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "FGFD")) return decode_feed_file(bytes, details);
  ParseResult r = parse_feed(bytes);
  FeedFile f;
  f.messages = r.messages;
  if (details) *details = std::move(r);
  return f;
}

json skipped_json(const std::map<char, std::size_t>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[std::string(1, k)] = v;
  return j;
}

void need(const std::string& v, const char* flag) {
  if (v.empty()) throw UserError(std::string(flag) + " is required");
}

Vocabulary vocab_for(std::uint32_t tickers) {
  try {
    return Vocabulary(tickers);
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
}

// ---------------------------------------------------------------------------
// synth

struct SynthCmd {
  std::string out;
  std::unique_ptr<Layered> cfg;

  void setup(CLI::App& app) {
    auto* s = app.add_subcommand("synth", "Generate a synthetic ITCH-subset feed");
    s->add_option("-o,--output", out, "Output feed file");
    cfg = std::make_unique<Layered>(s, "synth",
                                    std::vector<Option>{{"n", 100000, "Number of messages"},
                                                        {"seed", 1, "Generator seed"},
                                                        {"symbol_id", 0, "Locate code / ticker index"},
                                                        {"symbol", "SYNTH", "Symbol name (8 chars max)"},
                                                        {"initial_price", 17000, "Anchor price in ticks"},
                                                        {"round_lot_mass", 0.30, "Share of round-lot sizes"},
                                                        {"price_scale", 3.0, "Mean ticks behind the opposite quote"},
                                                        {"start", "09:00:00", "First timestamp"}});
    s->callback([this] { run(); });
  }

  void run() {
    const json c = cfg->resolve();
    if (cfg->print_requested()) {
      std::cout << c.dump(2) << '\n';
      return;
    }
    need(out, "--output");
    FeedConfig fc;
    fc.seed = c["seed"].get<std::uint64_t>();
    fc.symbol_id = c["symbol_id"].get<std::uint16_t>();
    fc.initial_price = c["initial_price"].get<std::int64_t>();
    fc.round_lot_mass = c["round_lot_mass"].get<double>();
    fc.odd_lot_mass = 1.0 - fc.round_lot_mass;
    fc.price_scale = c["price_scale"].get<double>();
    fc.start_ns = parse_clock(c["start"].get<std::string>());
    try {
      fc.validate();
    } catch (const std::invalid_argument& e) {
      throw UserError(e.what());
    }
    const auto n = c["n"].get<std::int64_t>();
    if (n < 0) throw UserError("--n must be >= 0");
    FeedFile f;
    f.symbols.push_back({fc.symbol_id, c["symbol"].get<std::string>().substr(0, 8)});
    f.messages = synth_feed(fc, static_cast<std::size_t>(n));
    ensure_parent(out);
    save_feed_file(out, f);
    write_manifest(out, false, "synth", cfg.get(), c, {{"output", out}, {"output_hash", file_hash(out)}});
    std::cout << json{{"messages", f.messages.size()}, {"output", out}}.dump() << '\n';
  }
};

// ---------------------------------------------------------------------------
// parse

struct ParseCmd {
  std::string in, out, csv;
  bool session = false;
  std::unique_ptr<Layered> cfg;

  void setup(CLI::App& app) {
    auto* s = app.add_subcommand("parse", "Decode a feed and report its contents");
    s->add_option("input", in, "Feed container or bare record stream")->required();
    s->add_option("-o,--output", out, "Write the decoded messages as a feed container");
    s->add_option("--csv", csv, "Write the decoded messages as CSV");
    cfg = std::make_unique<Layered>(s, "parse",
                                    std::vector<Option>{{"session_only", false, "Keep only 09:30 <= t < 16:00"}});
    s->callback([this] { run(); });
  }

  void run() {
    const json c = cfg->resolve();
    if (cfg->print_requested()) {
      std::cout << c.dump(2) << '\n';
      return;
    }
    ParseResult details;
    FeedFile f = load_any_feed(in, &details);
    if (c["session_only"].get<bool>()) f.messages = filter_session(f.messages, SessionWindow{});
    json counts = json::object();
    for (MsgType t : kAllMsgTypes) counts[std::string(to_string(t))] = 0;
    for (const auto& m : f.messages) counts[std::string(to_string(m.type))] = counts[std::string(to_string(m.type))].get<int>() + 1;
    const json summary = {{"input", in},
                          {"messages", f.messages.size()},
                          {"types", counts},
                          {"skipped", skipped_json(details.skipped)},
                          {"unknown", skipped_json(details.unknown)},
                          {"first_ts", f.messages.empty() ? json(nullptr) : json(f.messages.front().timestamp_ns)},
                          {"last_ts", f.messages.empty() ? json(nullptr) : json(f.messages.back().timestamp_ns)}};
    if (!out.empty()) {
      ensure_parent(out);
      save_feed_file(out, f);
      write_manifest(out, false, "parse", cfg.get(), c, {{"input_hash", file_hash(in)}, {"output", out}});
    }
    if (!csv.empty()) {
      ensure_parent(csv);
      std::ofstream o(csv, std::ios::binary | std::ios::trunc);
      if (!o) throw UserError("cannot write " + csv);
      o << "timestamp_ns,type,order_id,side,size,price,remaining_size,new_order_id,exec_or_new_price,symbol_id\n";
      auto opt = [](const auto& v) { return v ? std::to_string(*v) : std::string("nan"); };
      for (const auto& m : f.messages) {
        o << m.timestamp_ns << ',' << to_string(m.type) << ',' << m.order_id << ',' << to_string(m.side) << ','
          << m.size << ',' << m.price << ',' << opt(m.remaining_size) << ',' << opt(m.new_order_id) << ','
          << opt(m.exec_or_new_price) << ',' << m.symbol_id << '\n';
      }
    }
    std::cout << summary.dump() << '\n';
  }
};

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessCmd {
  std::string in, out, csv;
  std::unique_ptr<Layered> cfg;

  void setup(CLI::App& app) {
    auto* s = app.add_subcommand("preprocess", "Stationarize a feed into pre-processed messages");
    s->add_option("input", in, "Feed file")->required();
    s->add_option("-o,--output", out, "Binary pre-message dump");
    s->add_option("--csv", csv, "Also write a CSV dump");
    cfg = std::make_unique<Layered>(s, "preprocess",
                                    std::vector<Option>{{"session_only", false, "Drop messages outside 09:30-16:00 after replay"}});
    s->callback([this] { run(); });
  }

  void run() {
    const json c = cfg->resolve();
    if (cfg->print_requested()) {
      std::cout << c.dump(2) << '\n';
      return;
    }
    need(out, "--output");
    const FeedFile f = load_any_feed(in, nullptr);
    StationarizeStats stats;
    std::vector<PreMessage> pre;
    try {
      pre = stationarize(f.messages, &stats);
    } catch (const StationarizeError& e) {
      throw UserError(std::string("feed does not replay: ") + e.what());
    }
    if (c["session_only"].get<bool>()) {
      // the book is replayed over everything; only the emitted rows are filtered
      const SessionWindow w;
      std::vector<PreMessage> kept;
      for (std::size_t i = 0; i < pre.size(); ++i) {
        const auto ts = f.messages[i].timestamp_ns;
        if (ts >= w.open_ns && ts < w.close_ns) kept.push_back(pre[i]);
      }
      pre = std::move(kept);
    }
    ensure_parent(out);
    write_file_bytes(out, encode_pre_messages(pre));
    if (!csv.empty()) {
      ensure_parent(csv);
      std::ofstream o(csv, std::ios::binary | std::ios::trunc);
      o << pre_messages_csv(pre);
    }
    write_manifest(out, false, "preprocess", cfg.get(), c,
                   {{"input_hash", file_hash(in)}, {"output", out}, {"clamped", stats.clamped}});
    std::cout << json{{"messages", pre.size()}, {"clamped", stats.clamped}, {"output", out}}.dump() << '\n';
  }
};

// ---------------------------------------------------------------------------
// tokenize

struct TokenizeCmd {
  std::string in, out;
  std::unique_ptr<Layered> cfg;

  void setup(CLI::App& app) {
    auto* s = app.add_subcommand("tokenize", "Encode pre-processed messages as 24-token messages");
    s->add_option("input", in, "Pre-message dump")->required();
    s->add_option("-o,--output", out, "Token corpus file");
    cfg = std::make_unique<Layered>(s, "tokenize", std::vector<Option>{{"tickers", 98, "Ticker slots S"}});
    s->callback([this] { run(); });
  }

  void run() {
    const json c = cfg->resolve();
    if (cfg->print_requested()) {
      std::cout << c.dump(2) << '\n';
      return;
    }
    need(out, "--output");
    const Vocabulary v = vocab_for(c["tickers"].get<std::uint32_t>());
    std::vector<PreMessage> pre;
    try {
      pre = decode_pre_messages(read_input(in));
    } catch (const std::runtime_error& e) {
      throw UserError(in + ": " + e.what());
    }
    TokenCorpus corpus;
    corpus.tickers = v.tickers();
    for (auto& p : pre) p = p.tokenized_view();
    try {
      corpus.tokens = tokenize(pre, v);
    } catch (const TokenEncodeError& e) {
      throw UserError(std::string("cannot tokenize: ") + e.what());
    }
    ensure_parent(out);
    write_file_bytes(out, encode_token_corpus(corpus));
    write_manifest(out, false, "tokenize", cfg.get(), c,
                   {{"input_hash", file_hash(in)}, {"vocab_hash", hex64(v.hash())}, {"vocab_size", v.size()}});
    std::cout << json{{"messages", pre.size()}, {"tokens", corpus.tokens.size()}, {"vocab_size", v.size()}}.dump()
              << '\n';
  }
};

// ---------------------------------------------------------------------------
// train

double unigram_entropy(std::span<const TokenId> tokens) {
  std::map<TokenId, std::uint64_t> counts;
  for (TokenId t : tokens) ++counts[t];
  double h = 0.0;
  const auto n = static_cast<double>(tokens.size());
  for (const auto& [id, k] : counts) {
    const double p = static_cast<double>(k) / n;
    h -= p * std::log(p);
  }
  return h;
}

struct TrainCmd {
  std::string corpus_path, out;
  bool resume = false;
  std::unique_ptr<Layered> cfg;

  void setup(CLI::App& app) {
    auto* s = app.add_subcommand("train", "Train the transformer on a token corpus");
    s->add_option("corpus", corpus_path, "Token corpus file");
    s->add_option("-o,--output", out, "Output directory");
    s->add_flag("--resume", resume, "Continue from <output>/checkpoint.fgck");
    cfg = std::make_unique<Layered>(
        s, "train",
        std::vector<Option>{{"toy", false, "Toy preset {64, 2, 4}"},
                            {"d_model", 0, "Embedding width (0 = preset)"},
                            {"n_layers", 0, "Layers (0 = preset)"},
                            {"n_heads", 0, "Heads (0 = preset)"},
                            {"max_context", 0, "Training context in tokens (0 = preset)"},
                            {"dropout", 0.0, "Dropout rate"},
                            {"steps", 200, "Optimizer steps (total, including resumed ones)"},
                            {"micro_batch", 4, "Windows per micro-batch"},
                            {"accum", 1, "Micro-batches per step"},
                            {"seq_tokens", 0, "Window length in tokens (0 = max_context)"},
                            {"lr", 3e-3, "Peak learning rate"},
                            {"warmup", 20, "Linear warmup steps"},
                            {"grad_clip", 1.0, "Global gradient norm clip (0 = off)"},
                            {"weight_decay", 0.0, "Decoupled weight decay"},
                            {"seed", 1, "Seed for init and window sampling"},
                            {"threads", 0, "Worker threads (0 = all cores)"},
                            {"checkpoint_every", 50, "Checkpoint interval in steps"},
                            {"holdout", 0.1, "Fraction of messages held out for evaluation"},
                            {"log_every", 10, "Print every N steps"}});
    s->callback([this] { run(); });
  }

  void run() {
    const json c = cfg->resolve();
    ModelConfig mc = c["toy"].get<bool>() ? ModelConfig::toy(0) : ModelConfig::reference(0);
    if (c["d_model"].get<int>() > 0) mc.d_model = c["d_model"].get<int>();
    if (c["n_layers"].get<int>() > 0) mc.n_layers = c["n_layers"].get<int>();
    if (c["n_heads"].get<int>() > 0) mc.n_heads = c["n_heads"].get<int>();
    if (c["max_context"].get<int>() > 0) mc.max_context = c["max_context"].get<int>();
    mc.dropout = c["dropout"].get<double>();
    TrainConfig tc;
    tc.steps = c["steps"].get<int>();
    tc.micro_batch = c["micro_batch"].get<int>();
    tc.accum = c["accum"].get<int>();
    tc.seq_tokens = c["seq_tokens"].get<int>();
    tc.lr = c["lr"].get<double>();
    tc.warmup = c["warmup"].get<int>();
    tc.grad_clip = c["grad_clip"].get<double>();
    tc.weight_decay = c["weight_decay"].get<double>();
    tc.seed = c["seed"].get<std::uint64_t>();
    tc.threads = c["threads"].get<int>();

    if (cfg->print_requested()) {
      json shown = c;
      mc.vocab_size = static_cast<int>(Vocabulary().size());
      shown["resolved_model"] = mc;
      shown["resolved_train"] = tc;
      std::cout << shown.dump(2) << '\n';
      return;
    }
    if (corpus_path.empty()) throw UserError("train needs a corpus file");
    need(out, "--output");

    // validate before touching the corpus
    mc.vocab_size = 12;  // placeholder for the structural checks
    mc.validate();
    TokenCorpus corpus;
    try {
      corpus = decode_token_corpus(read_input(corpus_path));
    } catch (const UserError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw UserError(corpus_path + ": " + e.what());
    }
    const Vocabulary vocab = vocab_for(corpus.tickers);
    mc.vocab_size = static_cast<int>(vocab.size());
    mc.validate();
    tc.validate(mc);
    if (tc.seq_tokens == 0) tc.seq_tokens = mc.max_context;
    if (corpus.tokens.size() % kTokensPerMessage != 0) throw UserError("corpus is not 24-token aligned");

    const std::size_t messages = corpus.tokens.size() / kTokensPerMessage;
    const auto held = static_cast<std::size_t>(std::floor(static_cast<double>(messages) * c["holdout"].get<double>()));
    const std::span<const TokenId> all(corpus.tokens);
    const auto train_tokens = all.first((messages - held) * kTokensPerMessage);
    const auto eval_tokens = all.subspan((messages - held) * kTokensPerMessage);
    if (train_tokens.size() < static_cast<std::size_t>(tc.seq_tokens)) {
      throw UserError("corpus too small: " + std::to_string(train_tokens.size()) + " training tokens for windows of " +
                      std::to_string(tc.seq_tokens));
    }

    fs::create_directories(out);
    const fs::path ck_path = fs::path(out) / "checkpoint.fgck";
    const fs::path loss_path = fs::path(out) / "loss.csv";

    Transformer<float> model(mc);
    model.init_weights(tc.seed);
    Trainer trainer(model, tc, train_tokens);
    std::vector<std::string> loss_rows;
    if (resume) {
      if (!fs::exists(ck_path)) throw UserError("nothing to resume: " + ck_path.string() + " not found");
      Checkpoint ck = load_checkpoint(ck_path.string());
      if (!(ck.config == mc)) throw UserError("checkpoint model config differs from the requested one");
      if (ck.vocab_hash != vocab.hash()) throw UserError("checkpoint vocab hash differs from the corpus vocabulary");
      std::copy(ck.params.begin(), ck.params.end(), model.parameters().begin());
      if (!ck.adam_m.empty()) {
        trainer.adam_m() = ck.adam_m;
        trainer.adam_v() = ck.adam_v;
      }
      trainer.set_step(ck.step);
      std::ifstream in(loss_path);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (std::stoll(line.substr(0, line.find(','))) <= ck.step) loss_rows.push_back(line);
      }
    }

    auto save = [&] {
      Checkpoint ck;
      ck.config = mc;
      ck.vocab_hash = vocab.hash();
      ck.tickers = vocab.tickers();
      ck.seed = tc.seed;
      ck.step = trainer.steps_done();
      ck.train_config = tc;
      ck.params.assign(model.parameters().begin(), model.parameters().end());
      ck.adam_m = trainer.adam_m();
      ck.adam_v = trainer.adam_v();
      const fs::path tmp = ck_path.string() + ".tmp";
      save_checkpoint(tmp.string(), ck);
      fs::rename(tmp, ck_path);
      std::ofstream lo(loss_path, std::ios::binary | std::ios::trunc);
      lo << "step,loss,lr,grad_norm\n";
      for (const auto& r : loss_rows) lo << r << '\n';
    };

    const int every = std::max(1, c["checkpoint_every"].get<int>());
    const int log_every = std::max(1, c["log_every"].get<int>());
    const auto t0 = std::chrono::steady_clock::now();
    while (trainer.steps_done() < tc.steps) {
      StepStats st;
      try {
        st = trainer.step();
      } catch (const TrainError& e) {
        save();
        throw std::runtime_error(std::string("training aborted: ") + e.what());
      }
      char buf[128];
      std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g", static_cast<long long>(st.step), st.loss, st.lr, st.grad_norm);
      loss_rows.emplace_back(buf);
      if (st.step % log_every == 0) std::cerr << "step " << st.step << " loss " << st.loss << '\n';
      if (st.step % every == 0 || st.step == tc.steps) save();
    }
    if (tc.steps == 0 || loss_rows.empty()) save();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json result = {{"steps", trainer.steps_done()},
                   {"parameters", model.parameter_count()},
                   {"unigram_entropy", unigram_entropy(train_tokens)},
                   {"uniform_entropy", std::log(static_cast<double>(mc.vocab_size))},
                   {"wall_clock_s", secs}};
    if (!loss_rows.empty()) result["final_train_loss"] = std::stod(loss_rows.back().substr(loss_rows.back().find(',') + 1));
    if (eval_tokens.size() >= static_cast<std::size_t>(tc.seq_tokens)) {
      result["holdout_loss"] = evaluate_loss(model, eval_tokens, tc.seq_tokens, 16);
    }
    write_json(fs::path(out) / "result.json", result);
    write_manifest(out, true, "train", cfg.get(), c,
                   {{"corpus_hash", file_hash(corpus_path)},
                    {"vocab_hash", hex64(vocab.hash())},
                    {"config_hash", hex64(mc.hash())},
                    {"checkpoint_hash", file_hash(ck_path.string())},
                    {"model", mc},
                    {"train", tc}});
    std::cout << result.dump() << '\n';
  }
};

// ---------------------------------------------------------------------------
// simulate

struct SimulateCmd {
  std::string checkpoint, history, out;
  bool resume = false;
  std::unique_ptr<Layered> cfg;

  void setup(CLI::App& app) {
    auto* s = app.add_subcommand("simulate", "Run simulation trials with a trained model");
    s->add_option("--checkpoint", checkpoint, "Checkpoint file");
    s->add_option("--history", history, "Historical feed used to seed the book and prompt");
    s->add_option("-o,--output", out, "Output directory");
    s->add_flag("--resume", resume, "Continue interrupted trials from their trace files");
    cfg = std::make_unique<Layered>(
        s, "simulate",
        std::vector<Option>{{"trials", 1, "Number of independent trials"},
                            {"seed", 1, "Base seed; trial seeds derive from (seed, trial)"},
                            {"budget_messages", 1000, "Accepted messages per trial"},
                            {"budget_seconds", 0.0, "Wall-clock budget per trial (0 = none)"},
                            {"context_messages", 15, "Prompt / context window in messages"},
                            {"start", "10:00:00", "Simulation start time"},
                            {"temperature", 1.02, "Sampling temperature"},
                            {"top_p", 0.98, "Nucleus mass"},
                            {"kv_policy", "rolling", "rolling or recompute"},
                            {"max_consecutive_discards", 100, "Livelock guard"},
                            {"tickers", 98, "Tokenizer ticker slots (must match the checkpoint)"},
                            {"threads", 0, "Parallel trials (0 = all cores)"}});
    s->callback([this] { run(); });
  }

  void run() {
    const json c = cfg->resolve();
    if (cfg->print_requested()) {
      std::cout << c.dump(2) << '\n';
      return;
    }
    need(checkpoint, "--checkpoint");
    need(history, "--history");
    need(out, "--output");
    if (!fs::exists(checkpoint)) throw UserError("checkpoint not found: " + checkpoint);
    Checkpoint ck;
    try {
      ck = load_checkpoint(checkpoint);
    } catch (const CheckpointError& e) {
      throw UserError(checkpoint + ": " + e.what());
    }
    const Vocabulary vocab = vocab_for(c["tickers"].get<std::uint32_t>());
    if (ck.vocab_hash != vocab.hash() || static_cast<std::uint32_t>(ck.config.vocab_size) != vocab.size()) {
      throw UserError("vocab hash mismatch: checkpoint " + hex64(ck.vocab_hash) + " vs tokenizer " + hex64(vocab.hash()) +
                      "; refusing to run");
    }
    const Transformer<float> model = model_from_checkpoint(ck);
    const FeedFile feed = load_any_feed(history, nullptr);

    SimConfig base;
    base.start_time_ns = parse_clock(c["start"].get<std::string>());
    base.context_messages = c["context_messages"].get<int>();
    base.max_messages = c["budget_messages"].get<std::int64_t>();
    base.max_seconds = c["budget_seconds"].get<double>();
    base.max_consecutive_discards = c["max_consecutive_discards"].get<int>();
    base.sample.temperature = c["temperature"].get<double>();
    base.sample.top_p = c["top_p"].get<double>();
    try {
      base.kv_policy = kv_policy_from_string(c["kv_policy"].get<std::string>());
      base.validate(model.config());
    } catch (const std::invalid_argument& e) {
      throw UserError(e.what());
    }
    const int trials = c["trials"].get<int>();
    if (trials < 1) throw UserError("--trials must be >= 1");
    const auto seed = c["seed"].get<std::uint64_t>();

    fs::create_directories(out);
    std::vector<json> summaries(static_cast<std::size_t>(trials));
    std::vector<std::string> errors(static_cast<std::size_t>(trials));
    std::atomic<int> next{0};
    auto worker = [&] {
      for (int t = next++; t < trials; t = next++) {
        const fs::path dir = fs::path(out) / ("trial_" + std::to_string(t));
        try {
          fs::create_directories(dir);
          SimConfig sc = base;
          sc.trial_id = static_cast<std::uint64_t>(t);
          sc.seed = mix_seed(seed, static_cast<std::uint64_t>(t));
          const fs::path trace_path = dir / "trace.jsonl";
          SimState state;
          bool append = false;
          if (resume && fs::exists(trace_path)) {
            const LoadedTrace lt = load_trace(trace_path.string());
            fs::resize_file(trace_path, lt.valid_bytes);
            state = resume_sim(feed.messages, model, vocab, sc, lt);
            append = true;
          } else {
            state = init_sim(feed.messages, model, vocab, sc);
          }
          TraceWriter writer(trace_path.string(), append);
          SimTrace trace;
          std::string failure;
          try {
            trace = flowgen::run(state, [&](const AttemptRecord& a) { writer.write(a); }, false);
          } catch (const SimError& e) {
            failure = e.what();
          }
          json s = summary_json(state.counters, sc, trace.wall_seconds);
          if (!failure.empty()) s["aborted"] = failure;
          write_json(dir / "summary.json", s);
          json trial_cfg = c;
          trial_cfg["trial_id"] = t;
          trial_cfg["trial_seed"] = sc.seed;
          write_manifest(dir, true, "simulate", cfg.get(), trial_cfg,
                         {{"checkpoint_hash", file_hash(checkpoint)},
                          {"history_hash", file_hash(history)},
                          {"vocab_hash", hex64(vocab.hash())}});
          summaries[static_cast<std::size_t>(t)] = s;
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(t)] = e.what();
        }
      }
    };
    int threads = c["threads"].get<int>();
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, trials);
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    for (int t = 0; t < trials; ++t) {
      if (!errors[static_cast<std::size_t>(t)].empty()) {
        const std::string& e = errors[static_cast<std::size_t>(t)];
        if (e.find("insufficient history") != std::string::npos || e.find("context") != std::string::npos) {
          throw UserError("trial " + std::to_string(t) + ": " + e);
        }
        throw std::runtime_error("trial " + std::to_string(t) + ": " + e);
      }
    }
    std::int64_t attempts = 0, discarded = 0, accepted = 0;
    for (const auto& s : summaries) {
      attempts += s["attempts"].get<std::int64_t>();
      discarded += s["discarded"].get<std::int64_t>();
      accepted += s["accepted"].get<std::int64_t>();
    }
    const json total = {{"trials", summaries},
                        {"accepted", accepted},
                        {"attempts", attempts},
                        {"discarded", discarded},
                        {"discard_rate", attempts ? static_cast<double>(discarded) / attempts : 0.0},
                        {"reference_discard_rate", 0.07}};
    write_json(fs::path(out) / "summary.json", total);
    write_manifest(out, true, "simulate", cfg.get(), c,
                   {{"checkpoint_hash", file_hash(checkpoint)}, {"history_hash", file_hash(history)},
                    {"vocab_hash", hex64(vocab.hash())}});
    std::cout << json{{"trials", trials}, {"accepted", accepted}, {"discard_rate", total["discard_rate"]}}.dump()
              << '\n';
  }
};

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateCmd {
  std::vector<std::string> traces, feeds, empirical;
  std::string out;
  std::unique_ptr<Layered> cfg;

  void setup(CLI::App& app) {
    auto* s = app.add_subcommand("evaluate", "Compute stylized facts and comparison CSVs");
    s->add_option("--trace", traces, "Trace file or trial directory (repeatable)");
    s->add_option("--feed", feeds, "Feed evaluated as generated data (repeatable)");
    s->add_option("--empirical", empirical, "Reference feed (repeatable)");
    s->add_option("-o,--output", out, "Output directory");
    cfg = std::make_unique<Layered>(s, "evaluate",
                                    std::vector<Option>{{"delta", 1.0, "Return interval in seconds"},
                                                        {"max_lag", 100, "Largest ACF lag"},
                                                        {"bins", 500, "Histogram bins"},
                                                        {"horizon", 500, "Future-return horizon in messages"},
                                                        {"samples", 1000, "Future-return samples"},
                                                        {"seed", 1, "Sampling seed"},
                                                        {"session_only", false, "Filter feeds to 09:30-16:00"}});
    s->callback([this] { run(); });
  }

  // a trace file, a trial directory, or a simulate output directory holding trial_* directories
  static std::vector<std::string> trace_files(const std::string& p) {
    if (!fs::is_directory(p)) return {p};
    const fs::path own = fs::path(p) / "trace.jsonl";
    if (fs::exists(own)) return {own.string()};
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(p)) {
      const auto t = e.path() / "trace.jsonl";
      if (e.is_directory() && e.path().filename().string().rfind("trial_", 0) == 0 && fs::exists(t)) {
        out.push_back(t.string());
      }
    }
    if (out.empty()) return {own.string()};
    std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
      return a.size() != b.size() ? a.size() < b.size() : a < b;
    });
    return out;
  }

  void run() {
    const json c = cfg->resolve();
    if (cfg->print_requested()) {
      std::cout << c.dump(2) << '\n';
      return;
    }
    need(out, "--output");
    if (traces.empty() && feeds.empty() && empirical.empty()) throw UserError("evaluate needs at least one input");
    EvalConfig ec;
    ec.delta_s = c["delta"].get<double>();
    ec.max_lag = c["max_lag"].get<int>();
    ec.bins = c["bins"].get<int>();
    ec.horizon = c["horizon"].get<int>();
    ec.fan_samples = c["samples"].get<int>();
    ec.seed = c["seed"].get<std::uint64_t>();
    if (!(ec.delta_s > 0.0) || ec.max_lag < 1 || ec.bins < 1 || ec.horizon < 1 || ec.fan_samples < 1) {
      throw UserError("evaluation parameters must be positive");
    }
    const bool session = c["session_only"].get<bool>();
    std::vector<Dataset> ds;
    json inputs = json::array();
    auto add_feed = [&](const std::string& p, bool generated, const std::string& label) {
      FeedFile f = load_any_feed(p, nullptr);
      auto recs = records_from_feed(f.messages);
      if (session) {
        const SessionWindow w;
        std::erase_if(recs, [&](const MarketRecord& r) {
          return r.message.timestamp_ns < w.open_ns || r.message.timestamp_ns >= w.close_ns;
        });
      }
      ds.push_back({label, generated, std::move(recs)});
      inputs.push_back({{"path", p}, {"hash", file_hash(p)}, {"label", label}});
    };
    for (std::size_t i = 0; i < empirical.size(); ++i) add_feed(empirical[i], false, "empirical" + std::to_string(i));
    for (std::size_t i = 0; i < feeds.size(); ++i) add_feed(feeds[i], true, "feed" + std::to_string(i));
    std::size_t trial = 0;
    for (const auto& t : traces) {
      for (const auto& p : trace_files(t)) {
        if (!fs::exists(p)) throw UserError("trace not found: " + p);
        LoadedTrace lt;
        try {
          lt = load_trace(p);
        } catch (const std::exception& e) {
          throw UserError(e.what());
        }
        const std::string label = "trial" + std::to_string(trial++);
        ds.push_back({label, true, lt.records()});
        inputs.push_back({{"path", p}, {"hash", file_hash(p)}, {"label", label}});
      }
    }
    const auto files = write_report(ds, ec, out);
    write_manifest(out, true, "evaluate", cfg.get(), c, {{"inputs", inputs}, {"outputs", files}});
    std::cout << json{{"datasets", ds.size()}, {"files", files.size()}, {"output", out}}.dump() << '\n';
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowgen: generative order-flow toolkit"};
  app.require_subcommand(1);
  SynthCmd synth;
  ParseCmd parse;
  PreprocessCmd pre;
  TokenizeCmd tok;
  TrainCmd train;
  SimulateCmd sim;
  EvaluateCmd eval;
  synth.setup(app);
  parse.setup(app);
  pre.setup(app);
  tok.setup(app);
  train.setup(app);
  sim.setup(app);
  eval.setup(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 1;
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: parse: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
