// Synthetic images, SIREN datasets and editing targets.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>

#include "wsfn/siren.hpp"

namespace wsfn {

enum class SignalKind { blobs2class, gradient_field, checker };

inline const char* to_string(SignalKind k) {
  switch (k) {
    case SignalKind::blobs2class: return "blobs2class";
    case SignalKind::gradient_field: return "gradient_field";
    case SignalKind::checker: return "checker";
  }
  return "?";
}

inline SignalKind parse_signal_kind(const std::string& s) {
  if (s == "blobs2class") return SignalKind::blobs2class;
  if (s == "gradient_field") return SignalKind::gradient_field;
  if (s == "checker") return SignalKind::checker;
  throw std::invalid_argument("unknown signal kind '" + s + "' (expected blobs2class|gradient_field|checker)");
}

struct SignalSample {
  Tensor<double> image;  // [H × W × 1], values in [0, 1]
  int label = 0;
  std::vector<double> params;  // generator parameters, kind-specific
};

/// Labels are assigned round-robin so classes stay balanced.
///  - blobs2class: label 0 has one Gaussian blob, label 1 has two separated blobs.
///  - gradient_field: linear ramp at a random angle; label = angle quadrant mod 2.
///  - checker: checkerboard of period 2^(label+1) with random phase, labels 0..2.
inline std::vector<SignalSample> gen_signals(SignalKind kind, std::size_t count, std::size_t size,
                                             std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("signal count must be at least 1");
  if (size < 2) throw std::invalid_argument("signal size must be at least 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double S = static_cast<double>(size);
  std::vector<SignalSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    SignalSample s{Tensor<double>(Shape{size, size, 1}), 0, {}};
    switch (kind) {
      case SignalKind::blobs2class: {
        s.label = static_cast<int>(i % 2);
        const int nb = s.label + 1;
        std::vector<std::array<double, 3>> blobs;
        while (static_cast<int>(blobs.size()) < nb) {
          std::array<double, 3> b{S * (0.2 + 0.6 * U(rng)), S * (0.2 + 0.6 * U(rng)), S * (0.08 + 0.05 * U(rng))};
          bool ok = true;
          for (const auto& o : blobs) ok &= std::hypot(b[0] - o[0], b[1] - o[1]) > 0.35 * S;
          if (ok) blobs.push_back(b);
        }
        for (std::size_t r = 0; r < size; ++r)
          for (std::size_t c = 0; c < size; ++c) {
            double v = 0;
            for (const auto& b : blobs) {
              const double dx = c + 0.5 - b[0], dy = r + 0.5 - b[1];
              v = std::max(v, std::exp(-(dx * dx + dy * dy) / (2 * b[2] * b[2])));
            }
            s.image[r * size + c] = v;
          }
        for (const auto& b : blobs) s.params.insert(s.params.end(), b.begin(), b.end());
        break;
      }
      case SignalKind::gradient_field: {
        const double a = 2 * M_PI * U(rng);
        s.label = static_cast<int>(std::floor(a / (M_PI / 2))) % 2;
        for (std::size_t r = 0; r < size; ++r)
          for (std::size_t c = 0; c < size; ++c) {
            const double x = (c + 0.5) / S * 2 - 1, y = (r + 0.5) / S * 2 - 1;
            s.image[r * size + c] = std::clamp(0.5 + 0.5 * (std::cos(a) * x + std::sin(a) * y) / std::sqrt(2.0), 0.0, 1.0);
          }
        s.params = {a};
        break;
      }
      case SignalKind::checker: {
        s.label = static_cast<int>(i % 3);
        const std::size_t period = std::size_t{2} << s.label;
        const std::size_t pr = rng() % period, pc = rng() % period;
        for (std::size_t r = 0; r < size; ++r)
          for (std::size_t c = 0; c < size; ++c)
            s.image[r * size + c] = (((r + pr) / (period / 2) + (c + pc) / (period / 2)) % 2) ? 1.0 : 0.0;
        s.params = {double(period), double(pr), double(pc)};
        break;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// --- editing targets ----------------------------------------------------------

enum class EditKind { erode, dilate, gradient, contrast };

inline const char* to_string(EditKind k) {
  switch (k) {
    case EditKind::erode: return "erode";
    case EditKind::dilate: return "dilate";
    case EditKind::gradient: return "gradient";
    case EditKind::contrast: return "contrast";
  }
  return "?";
}

inline EditKind parse_edit_kind(const std::string& s) {
  if (s == "erode") return EditKind::erode;
  if (s == "dilate") return EditKind::dilate;
  if (s == "gradient") return EditKind::gradient;
  if (s == "contrast") return EditKind::contrast;
  throw std::invalid_argument("unsupported transform '" + s + "' (expected erode|dilate|gradient|contrast)");
}

/// 3×3 min (erode) or max (dilate) filter with replicate padding, per channel.
inline Tensor<double> morphology(const Tensor<double>& img, bool dilate) {
  const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
  Tensor<double> out(img.shape());
  auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, long(n) - 1)); };
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      for (std::size_t ch = 0; ch < C; ++ch) {
        double v = dilate ? -INFINITY : INFINITY;
        for (long dr = -1; dr <= 1; ++dr)
          for (long dc = -1; dc <= 1; ++dc) {
            const double x = img[(clampi(long(r) + dr, H) * W + clampi(long(c) + dc, W)) * C + ch];
            v = dilate ? std::max(v, x) : std::min(v, x);
          }
        out[(r * W + c) * C + ch] = v;
      }
  return out;
}

inline Tensor<double> apply_edit(EditKind k, const Tensor<double>& img) {
  switch (k) {
    case EditKind::erode: return morphology(img, false);
    case EditKind::dilate: return morphology(img, true);
    case EditKind::gradient: {
      Tensor<double> d = morphology(img, true), e = morphology(img, false);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= e[i];
      return d;
    }
    case EditKind::contrast: {
      Tensor<double> r = img;
      for (auto& v : r.storage()) v = std::clamp(1.5 * (v - 0.5) + 0.5, 0.0, 1.0);
      return r;
    }
  }
  return img;
}

// --- SIREN datasets -----------------------------------------------------------

struct InrEntry {
  SirenNetwork<double> net;
  int label = 0;
  std::string split = "train";
  Tensor<double> image;      // source signal
  std::uint64_t fit_seed = 0;  // seed of the independent initialization
};

struct InrDataset {
  WeightSpaceSpec spec;
  FitConfig fit;
  std::string signal_kind;
  std::vector<InrEntry> entries;
  std::size_t rejected = 0;

  std::vector<std::size_t> split_indices(const std::string& split) const {
    std::vector<std::size_t> r;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == split) r.push_back(i);
    return r;
  }
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kPsnrFloor = 20.0;

/// Fits one independently initialized SIREN per signal; fits below the PSNR
/// floor are excluded, and more than 20% exclusions abort.
inline InrDataset build_inr_dataset(const std::vector<SignalSample>& signals, const FitConfig& fit, std::uint64_t seed,
                                    const std::string& kind = "") {
  if (signals.empty()) throw std::invalid_argument("no signals to fit");
  InrDataset ds{siren_spec(fit.hidden, 2, signals.front().image.dim(2)), fit, kind, {}, 0};
  for (std::size_t i = 0; i < signals.size(); ++i) {
    const std::uint64_t s = seed * 1000003ULL + i;
    std::mt19937_64 rng(s);
    auto net = siren_init<double>(ds.spec, rng, fit.omega0);
    fit_siren(net, signals[i].image, fit);
    if (net.psnr < kPsnrFloor) {
      ++ds.rejected;
      continue;
    }
    ds.entries.push_back({std::move(net), signals[i].label, "train", signals[i].image, s});
  }
  if (ds.rejected * 5 > signals.size())
    throw DatasetError(std::to_string(ds.rejected) + " of " + std::to_string(signals.size()) +
                       " fits fell below " + std::to_string(int(kPsnrFloor)) +
                       " dB PSNR; the signal generator and SIREN spec do not match");
  return ds;
}

/// Tags entries with splits in order: the first n_train, then n_val, rest test.
inline void assign_splits(InrDataset& ds, std::size_t n_train, std::size_t n_val) {
  for (std::size_t i = 0; i < ds.entries.size(); ++i)
    ds.entries[i].split = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
}

}  // namespace wsfn
