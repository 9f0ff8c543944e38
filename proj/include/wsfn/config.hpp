// Run configuration: INI-style text ("[section]" headers, "key = value"
// lines, '#' comments). Every field has a default, unknown keys are errors,
// and render() output parses back to an equal config.
#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "wsfn/classifier.hpp"
#include "wsfn/data.hpp"
#include "wsfn/nft.hpp"
#include "wsfn/optim.hpp"

namespace wsfn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // [run]
  std::string task = "verify";
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  bool f32 = false;
  bool scale = true;  // 1/√d in attention logits
  bool break_coupling = false;
  std::size_t samples = 20;  // random σ per verify configuration
  // [model]
  NftConfig model;
  std::size_t dec_hidden = 64;
  ClassifierConfig classifier;
  // [optim]
  AdamConfig optim{1e-3, 0.9, 0.999, 1e-8, 0.0, 50};
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t eval_every = 250;
  std::size_t log_every = 50;
  // [data]
  std::string signal = "blobs2class";
  std::size_t count = 64;
  std::size_t size = 16;
  std::vector<std::size_t> siren_hidden{16, 16};
  std::size_t fit_steps = 500;
  double fit_lr = 1e-3;
  double omega0 = 30.0;
  std::size_t n_train = 48;
  std::size_t n_val = 0;
  std::string edit = "dilate";
  std::string signals_path;  // defaults to <out>/signals.wsa
  std::string dataset;       // defaults to <out>/dataset
  std::string encoder;       // Inr2Array checkpoint used by encode / train-classify / eval
  std::string resume;        // checkpoint to continue training from

  bool operator==(const RunConfig&) const = default;
};

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> t{"verify",         "gen-data", "fit-sirens", "train-inr2array", "train-edit",
                                          "train-classify", "encode",   "eval",       "report"};
  return t;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, p);
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t r = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), r);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return r;
}

inline double to_f64(const std::string& key, const std::string& v) {
  double r = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), r);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(r))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return r;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

struct Field {
  std::string section, key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

inline std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  auto sz = [&](const char* sec, const char* key, std::size_t& x) {
    f.push_back({sec, key, [&x] { return std::to_string(x); },
                 [&x, k = std::string(sec) + "." + key](const std::string& v) { x = to_u64(k, v); }});
  };
  auto u64 = [&](const char* sec, const char* key, std::uint64_t& x) {
    f.push_back({sec, key, [&x] { return std::to_string(x); },
                 [&x, k = std::string(sec) + "." + key](const std::string& v) { x = to_u64(k, v); }});
  };
  auto dbl = [&](const char* sec, const char* key, double& x) {
    f.push_back({sec, key, [&x] { return fmt_double(x); },
                 [&x, k = std::string(sec) + "." + key](const std::string& v) { x = to_f64(k, v); }});
  };
  auto flag = [&](const char* sec, const char* key, bool& x) {
    f.push_back({sec, key, [&x] { return std::string(x ? "true" : "false"); },
                 [&x, k = std::string(sec) + "." + key](const std::string& v) { x = to_bool(k, v); }});
  };
  auto str = [&](const char* sec, const char* key, std::string& x) {
    f.push_back({sec, key, [&x] { return x; }, [&x](const std::string& v) { x = v; }});
  };

  f.push_back({"run", "task", [&c] { return c.task; },
               [&c](const std::string& v) {
                 const auto& t = task_names();
                 if (std::find(t.begin(), t.end(), v) == t.end()) throw ConfigError("run.task: unknown task '" + v + "'");
                 c.task = v;
               }});
  u64("run", "seed", c.seed);
  str("run", "out", c.out);
  flag("run", "f32", c.f32);
  flag("run", "scale", c.scale);
  flag("run", "break_coupling", c.break_coupling);
  sz("run", "samples", c.samples);

  auto& m = c.model;
  sz("model", "blocks", m.num_blocks);
  sz("model", "channels", m.channels);
  sz("model", "mlp_hidden", m.mlp_hidden);
  sz("model", "heads", m.heads);
  dbl("model", "fourier_scale", m.fourier_scale);
  sz("model", "fourier_size", m.fourier_size);
  dbl("model", "dropout", m.dropout_p);
  f.push_back({"model", "term3", [&m] { return std::string(to_string(m.term3)); },
               [&m](const std::string& v) {
                 try {
                   m.term3 = parse_term3(v);
                 } catch (const std::exception& e) {
                   throw ConfigError(std::string("model.term3: ") + e.what());
                 }
               }});
  flag("model", "io_enc", m.io_enc);
  flag("model", "enc_every_block", m.enc_every_block);
  flag("model", "delta_skip", m.delta_skip);
  sz("model", "conv_shared", m.conv_shared);
  dbl("model", "delta_scale", m.delta_scale);
  sz("model", "ca_m", m.ca_m);
  sz("model", "ca_dim", m.ca_dim);
  sz("model", "head_hidden", m.head_hidden);
  sz("model", "dec_hidden", c.dec_hidden);
  sz("model", "cls_blocks", c.classifier.blocks);
  sz("model", "cls_heads", c.classifier.heads);
  sz("model", "cls_mlp_hidden", c.classifier.mlp_hidden);

  dbl("optim", "lr", c.optim.lr);
  dbl("optim", "beta1", c.optim.beta1);
  dbl("optim", "beta2", c.optim.beta2);
  dbl("optim", "eps", c.optim.eps);
  dbl("optim", "weight_decay", c.optim.weight_decay);
  sz("optim", "warmup", c.optim.warmup);
  sz("optim", "decay_steps", c.optim.decay_steps);
  dbl("optim", "min_lr_ratio", c.optim.min_lr_ratio);
  dbl("optim", "clip_norm", c.optim.clip_norm);
  sz("optim", "steps", c.steps);
  sz("optim", "batch", c.batch);
  sz("optim", "eval_every", c.eval_every);
  sz("optim", "log_every", c.log_every);

  f.push_back({"data", "signal", [&c] { return c.signal; },
               [&c](const std::string& v) {
                 try {
                   parse_signal_kind(v);
                 } catch (const std::exception& e) {
                   throw ConfigError(std::string("data.signal: ") + e.what());
                 }
                 c.signal = v;
               }});
  sz("data", "count", c.count);
  sz("data", "size", c.size);
  f.push_back({"data", "siren_hidden",
               [&c] {
                 std::string r;
                 for (std::size_t i = 0; i < c.siren_hidden.size(); ++i) r += (i ? "," : "") + std::to_string(c.siren_hidden[i]);
                 return r;
               },
               [&c](const std::string& v) {
                 std::vector<std::size_t> r;
                 std::istringstream is(v);
                 std::string part;
                 while (std::getline(is, part, ',')) r.push_back(to_u64("data.siren_hidden", trim(part)));
                 c.siren_hidden = r;
               }});
  sz("data", "fit_steps", c.fit_steps);
  dbl("data", "fit_lr", c.fit_lr);
  dbl("data", "omega0", c.omega0);
  sz("data", "n_train", c.n_train);
  sz("data", "n_val", c.n_val);
  f.push_back({"data", "edit", [&c] { return c.edit; },
               [&c](const std::string& v) {
                 try {
                   parse_edit_kind(v);
                 } catch (const std::exception& e) {
                   throw ConfigError(std::string("data.edit: ") + e.what());
                 }
                 c.edit = v;
               }});
  str("data", "signals", c.signals_path);
  str("data", "dataset", c.dataset);
  str("data", "encoder", c.encoder);
  str("data", "resume", c.resume);
  return f;
}

}  // namespace detail

inline std::string render(const RunConfig& cfg) {
  RunConfig c = cfg;
  std::ostringstream os;
  std::string section;
  for (const auto& f : detail::fields(c)) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.get() << "\n";
  }
  return os.str();
}

/// Applies "key = value" lines on top of `base`. Keys outside a section, or
/// not known in their section, are rejected.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  auto fs = detail::fields(base);
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "run" && section != "model" && section != "optim" && section != "data")
        throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside any section");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    auto it = std::find_if(fs.begin(), fs.end(), [&](const auto& f) { return f.section == section && f.key == key; });
    if (it == fs.end()) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    try {
      it->set(value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace wsfn
