// Directory container for SIREN datasets: one archive per entry under
// <dir>/<split>/, plus an index listing every entry with its content hash.
#pragma once

#include "wsfn/data.hpp"
#include "wsfn/io.hpp"

namespace wsfn {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string r;
  for (std::size_t i = 0; i < v.size(); ++i) r += (i ? "," : "") + std::to_string(v[i]);
  return r;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> r;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, ',')) {
    if (part.empty()) continue;
    std::size_t used = 0;
    const unsigned long v = std::stoul(part, &used);
    if (used != part.size()) throw std::invalid_argument("bad integer list '" + s + "'");
    r.push_back(v);
  }
  return r;
}

inline std::string file_hash(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + p.string());
  Fnv1a h;
  char buf[1 << 14];
  while (is) {
    is.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(is.gcount()));
  }
  return h.hex();
}

inline Archive entry_archive(const InrEntry& e) {
  Archive a;
  a.set("label", std::to_string(e.label));
  a.set("split", e.split);
  a.set("psnr", std::to_string(e.net.psnr));
  a.set("omega0", std::to_string(e.net.omega0));
  a.set("fit_seed", std::to_string(e.fit_seed));
  a.set("widths", join_sizes(e.net.net.spec.widths));
  for (std::size_t i = 0; i < e.net.net.num_layers(); ++i) {
    a.put("w." + std::to_string(i + 1), e.net.net.weights[i]);
    a.put("b." + std::to_string(i + 1), e.net.net.biases[i]);
  }
  a.put("image", e.image);
  return a;
}

inline InrEntry entry_from_archive(const Archive& a) {
  InrEntry e;
  WeightSpaceSpec spec{parse_sizes(a.get("widths")), {}, 1};
  spec.validate();
  e.net.net = zeros_feature<double>(spec);
  for (std::size_t i = 0; i < spec.num_layers(); ++i) {
    e.net.net.weights[i] = a.tensor<double>("w." + std::to_string(i + 1));
    e.net.net.biases[i] = a.tensor<double>("b." + std::to_string(i + 1));
  }
  e.net.net.check();
  e.net.omega0 = std::stod(a.get("omega0"));
  e.net.psnr = std::stod(a.get("psnr"));
  e.label = std::stoi(a.get("label"));
  e.split = a.get("split");
  e.fit_seed = std::stoull(a.get("fit_seed"));
  e.image = a.tensor<double>("image");
  return e;
}

/// index.txt: a header block of "key value" lines, then one
/// "entry <relative path> <label> <hash>" line per sample.
inline void save_dataset(const InrDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream index;
  index << "wsfn-dataset 1\n";
  index << "widths " << join_sizes(ds.spec.widths) << "\n";
  index << "signal " << (ds.signal_kind.empty() ? "-" : ds.signal_kind) << "\n";
  index << "fit_steps " << ds.fit.steps << "\nfit_lr " << ds.fit.lr << "\nomega0 " << ds.fit.omega0 << "\n";
  index << "rejected " << ds.rejected << "\n";
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const auto& e = ds.entries[i];
    std::ostringstream id;
    id << e.split << "/" << std::setw(5) << std::setfill('0') << i << ".wsa";
    entry_archive(e).save(dir / id.str());
    index << "entry " << id.str() << " " << e.label << " " << file_hash(dir / id.str()) << "\n";
  }
  std::ofstream os(dir / "index.txt");
  os << index.str();
  if (!os) throw std::runtime_error("cannot write " + (dir / "index.txt").string());
}

inline InrDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "index.txt");
  if (!is) throw std::runtime_error("no dataset index at " + (dir / "index.txt").string());
  std::string line;
  std::getline(is, line);
  if (line != "wsfn-dataset 1") throw FormatError((dir / "index.txt").string() + ": unsupported dataset header");
  InrDataset ds;
  ds.spec.channels = 1;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "entry") {
      std::string rel, hash;
      int label;
      ls >> rel >> label >> hash;
      if (file_hash(dir / rel) != hash) throw FormatError("dataset entry " + rel + " does not match its index hash");
      InrEntry e = entry_from_archive(Archive::load(dir / rel));
      if (e.label != label) throw FormatError("dataset entry " + rel + " label disagrees with the index");
      ds.entries.push_back(std::move(e));
    } else {
      std::string v;
      ls >> v;
      if (key == "widths") ds.spec.widths = parse_sizes(v);
      else if (key == "signal") ds.signal_kind = v == "-" ? "" : v;
      else if (key == "fit_steps") ds.fit.steps = std::stoul(v);
      else if (key == "fit_lr") ds.fit.lr = std::stod(v);
      else if (key == "omega0") ds.fit.omega0 = std::stod(v);
      else if (key == "rejected") ds.rejected = std::stoul(v);
      else throw FormatError("unknown dataset index key '" + key + "'");
    }
  }
  if (ds.spec.widths.size() > 2)
    ds.fit.hidden.assign(ds.spec.widths.begin() + 1, ds.spec.widths.end() - 1);
  return ds;
}

/// Signal sets from gen-data: images "image.<i>", labels in meta.
inline Archive signals_archive(const std::vector<SignalSample>& s, SignalKind kind, std::uint64_t seed) {
  Archive a;
  a.set("kind", to_string(kind));
  a.set("seed", std::to_string(seed));
  std::string labels;
  for (std::size_t i = 0; i < s.size(); ++i) {
    a.put("image." + std::to_string(i), s[i].image);
    labels += (i ? "," : "") + std::to_string(s[i].label);
  }
  a.set("labels", labels);
  return a;
}

inline std::vector<SignalSample> signals_from_archive(const Archive& a) {
  const auto labels = parse_sizes(a.get("labels"));
  std::vector<SignalSample> s;
  for (std::size_t i = 0; i < labels.size(); ++i)
    s.push_back({a.tensor<double>("image." + std::to_string(i)), static_cast<int>(labels[i]), {}});
  return s;
}

}  // namespace wsfn
