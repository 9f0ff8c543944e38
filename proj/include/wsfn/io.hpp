// On-disk formats: tensor archives (checkpoints, datasets), metrics logs,
// PPM image dumps.
//
// Archive layout: a text manifest terminated by "end\n", followed by the raw
// little-endian tensor blobs in manifest order.
//
//   wsfn-archive 1
//   meta <key> <value>
//   tensor <name> <f32|f64> <d0,d1,...> <offset> <bytes>
//   blobhash <fnv1a-64 hex over all blob bytes>
//   end
#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <variant>

#include "wsfn/optim.hpp"

namespace wsfn {

static_assert(std::endian::native == std::endian::little, "archives assume a little-endian host");

inline constexpr int kArchiveVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
  }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
  }
};

inline std::string escape_meta(const std::string& v) {
  std::string r;
  for (char c : v) {
    if (c == '\\') r += "\\\\";
    else if (c == '\n') r += "\\n";
    else r += c;
  }
  return r;
}

inline std::string unescape_meta(const std::string& v) {
  std::string r;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == '\\' && i + 1 < v.size()) {
      r += v[i + 1] == 'n' ? '\n' : v[i + 1];
      ++i;
    } else {
      r += v[i];
    }
  }
  return r;
}

class Archive {
 public:
  using Entry = std::variant<Tensor<float>, Tensor<double>>;

  void set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find_first_of(" \n") != std::string::npos)
      throw std::invalid_argument("bad archive meta key '" + key + "'");
    for (auto& [k, v] : meta_)
      if (k == key) {
        v = value;
        return;
      }
    meta_.emplace_back(key, value);
  }
  bool has(const std::string& key) const {
    for (const auto& [k, v] : meta_)
      if (k == key) return true;
    return false;
  }
  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : meta_)
      if (k == key) return v;
    throw FormatError("archive has no meta entry '" + key + "'");
  }
  const std::vector<std::pair<std::string, std::string>>& meta() const { return meta_; }

  template <class T>
  void put(const std::string& name, Tensor<T> t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    if (name.empty() || name.find_first_of(" \n") != std::string::npos)
      throw std::invalid_argument("bad tensor name '" + name + "'");
    if (!tensors_.count(name)) order_.push_back(name);
    tensors_.insert_or_assign(name, Entry(std::move(t)));
  }
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }

  template <class T>
  const Tensor<T>& tensor(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw FormatError("archive has no tensor '" + name + "'");
    if (auto* p = std::get_if<Tensor<T>>(&it->second)) return *p;
    throw FormatError("tensor '" + name + "' is stored as " +
                      (std::holds_alternative<Tensor<float>>(it->second) ? "f32" : "f64"));
  }
  /// Value converted to T whatever the stored precision.
  template <class T>
  Tensor<T> tensor_as(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw FormatError("archive has no tensor '" + name + "'");
    return std::visit([](const auto& t) { return t.template cast<T>(); }, it->second);
  }

  bool operator==(const Archive& o) const { return meta_ == o.meta_ && order_ == o.order_ && tensors_ == o.tensors_; }

  void save(const std::filesystem::path& path) const {
    std::ostringstream head;
    head << "wsfn-archive " << kArchiveVersion << "\n";
    for (const auto& [k, v] : meta_) head << "meta " << k << " " << escape_meta(v) << "\n";
    std::size_t offset = 0;
    Fnv1a h;
    for (const auto& n : order_) {
      std::visit(
          [&](const auto& t) {
            using T = typename std::decay_t<decltype(t)>::value_type;
            const std::size_t bytes = t.size() * sizeof(T);
            head << "tensor " << n << " " << (sizeof(T) == 4 ? "f32" : "f64") << " ";
            for (std::size_t i = 0; i < t.rank(); ++i) head << (i ? "," : "") << t.dim(i);
            if (t.rank() == 0) head << "-";
            head << " " << offset << " " << bytes << "\n";
            h.update(t.data().data(), bytes);
            offset += bytes;
          },
          tensors_.at(n));
    }
    head << "blobhash " << h.hex() << "\nend\n";
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw std::runtime_error("cannot write " + tmp);
      const std::string s = head.str();
      os.write(s.data(), static_cast<std::streamsize>(s.size()));
      for (const auto& n : order_)
        std::visit(
            [&](const auto& t) {
              os.write(reinterpret_cast<const char*>(t.data().data()),
                       static_cast<std::streamsize>(t.size() * sizeof(typename std::decay_t<decltype(t)>::value_type)));
            },
            tensors_.at(n));
      if (!os) throw std::runtime_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  static Archive load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw FormatError(path.string() + ": empty file");
    {
      std::istringstream ls(line);
      std::string magic;
      int version = -1;
      ls >> magic >> version;
      if (magic != "wsfn-archive") throw FormatError(path.string() + ": not a wsfn archive");
      if (version != kArchiveVersion)
        throw FormatError(path.string() + ": archive version " + std::to_string(version) + ", expected " +
                          std::to_string(kArchiveVersion));
    }
    struct Pending {
      std::string name, dtype;
      Shape shape;
      std::size_t offset, bytes;
    };
    std::vector<Pending> pending;
    Archive a;
    std::string hash;
    bool ended = false;
    while (std::getline(is, line)) {
      if (line == "end") {
        ended = true;
        break;
      }
      const auto sp = line.find(' ');
      const std::string kind = line.substr(0, sp);
      const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
      if (kind == "meta") {
        const auto s2 = rest.find(' ');
        a.meta_.emplace_back(rest.substr(0, s2), s2 == std::string::npos ? "" : unescape_meta(rest.substr(s2 + 1)));
      } else if (kind == "tensor") {
        std::istringstream ls(rest);
        Pending p;
        std::string dims;
        ls >> p.name >> p.dtype >> dims >> p.offset >> p.bytes;
        if (!ls || (p.dtype != "f32" && p.dtype != "f64")) throw FormatError(path.string() + ": bad tensor line: " + line);
        if (dims != "-") {
          std::istringstream ds(dims);
          std::string d;
          while (std::getline(ds, d, ',')) p.shape.push_back(std::stoul(d));
        }
        pending.push_back(std::move(p));
      } else if (kind == "blobhash") {
        hash = rest;
      } else {
        throw FormatError(path.string() + ": unknown manifest line: " + line);
      }
    }
    if (!ended) throw FormatError(path.string() + ": truncated manifest");
    Fnv1a h;
    for (const auto& p : pending) {
      std::vector<char> buf(p.bytes);
      is.read(buf.data(), static_cast<std::streamsize>(p.bytes));
      if (static_cast<std::size_t>(is.gcount()) != p.bytes) throw FormatError(path.string() + ": truncated blob " + p.name);
      h.update(buf.data(), buf.size());
      auto fill = [&](auto tag) {
        using T = decltype(tag);
        if (p.bytes != numel(p.shape) * sizeof(T)) throw FormatError(path.string() + ": size mismatch for " + p.name);
        std::vector<T> v(numel(p.shape));
        if (!v.empty()) std::memcpy(v.data(), buf.data(), p.bytes);
        a.put(p.name, Tensor<T>(p.shape, std::move(v)));
      };
      if (p.dtype == "f32") fill(float{});
      else fill(double{});
    }
    if (h.hex() != hash) throw FormatError(path.string() + ": blob hash mismatch (file corrupted)");
    return a;
  }

 private:
  std::vector<std::pair<std::string, std::string>> meta_;
  std::vector<std::string> order_;
  std::map<std::string, Entry> tensors_;
};

// --- checkpoints ------------------------------------------------------------------

/// Parameters under "param.<name>", frozen names listed in meta "frozen",
/// optimizer moments under "opt.m.<name>" / "opt.v.<name>".
template <class T>
void store_params(Archive& a, const ParamStore<T>& p, const std::string& prefix = "param.") {
  std::string frozen;
  for (const auto& n : p.names()) {
    a.put(prefix + n, p.get(n));
    if (!p.trainable(n)) frozen += (frozen.empty() ? "" : ",") + n;
  }
  a.set(prefix + "frozen", frozen);
}

template <class T>
ParamStore<T> load_params(const Archive& a, const std::string& prefix = "param.") {
  std::set<std::string> frozen;
  if (a.has(prefix + "frozen")) {
    std::istringstream fs(a.get(prefix + "frozen"));
    std::string n;
    while (std::getline(fs, n, ',')) frozen.insert(n);
  }
  ParamStore<T> p;
  for (const auto& n : a.names())
    if (n.compare(0, prefix.size(), prefix) == 0) {
      const std::string k = n.substr(prefix.size());
      p.add(k, a.tensor_as<T>(n), !frozen.count(k));
    }
  return p;
}

/// Overwrites every entry of `into` from the archive, checking names and shapes.
template <class T>
void restore_params(ParamStore<T>& into, const Archive& a, const std::string& prefix = "param.") {
  for (const auto& n : into.names()) {
    if (!a.contains(prefix + n)) throw FormatError("checkpoint lacks parameter " + n);
    Tensor<T> t = a.tensor_as<T>(prefix + n);
    if (t.shape() != into.get(n).shape())
      throw FormatError("checkpoint parameter " + n + " has shape " + to_string(t.shape()) + ", model expects " +
                        to_string(into.get(n).shape()));
    into.get_mut(n) = std::move(t);
  }
}

template <class T>
void store_optimizer(Archive& a, const Adam<T>& opt) {
  a.set("opt.step", std::to_string(opt.steps()));
  for (const auto& [n, t] : opt.first_moments()) a.put("opt.m." + n, t);
  for (const auto& [n, t] : opt.second_moments()) a.put("opt.v." + n, t);
}

template <class T>
void restore_optimizer(Adam<T>& opt, const Archive& a) {
  std::map<std::string, Tensor<T>> m, v;
  for (const auto& n : a.names()) {
    if (n.rfind("opt.m.", 0) == 0) m.emplace(n.substr(6), a.tensor_as<T>(n));
    if (n.rfind("opt.v.", 0) == 0) v.emplace(n.substr(6), a.tensor_as<T>(n));
  }
  opt.restore(a.has("opt.step") ? std::stoul(a.get("opt.step")) : 0, std::move(m), std::move(v));
}

// --- metrics log ---------------------------------------------------------------------

/// Append-only "step, split, metric, value" lines.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(std::filesystem::path path, bool echo = false) : path_(std::move(path)), echo_(echo) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  }
  void write(std::size_t step, const std::string& split, const std::string& metric, double value) const {
    std::ostringstream line;
    line << step << ", " << split << ", " << metric << ", " << std::setprecision(10) << value << "\n";
    if (!path_.empty()) {
      std::ofstream os(path_, std::ios::app);
      os << line.str();
    }
    if (echo_) std::fputs(line.str().c_str(), stdout);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  bool echo_ = false;
};

struct MetricRecord {
  std::size_t step;
  std::string split, metric;
  double value;
};

inline std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open metrics log " + path.string());
  std::vector<MetricRecord> r;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string part;
    while (std::getline(ls, part, ',')) {
      const auto a = part.find_first_not_of(' ');
      f.push_back(a == std::string::npos ? "" : part.substr(a));
    }
    if (f.size() != 4) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    r.push_back({std::stoul(f[0]), f[1], f[2], std::stod(f[3])});
  }
  return r;
}

// --- images ------------------------------------------------------------------------------

/// Binary PPM/PGM of an [H × W × C] image with values clamped to [0, 1]
/// (C = 1 → P5 grayscale, C = 3 → P6 RGB).
template <class T>
void write_ppm(const std::filesystem::path& path, const Tensor<T>& img) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3))
    throw ShapeError("image dumps need [H x W x 1|3], got " + to_string(img.shape()));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << (img.dim(2) == 1 ? "P5" : "P6") << "\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  for (T v : img.data()) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
}

}  // namespace wsfn
