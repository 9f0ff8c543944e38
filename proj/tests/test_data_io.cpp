#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <map>
#include <random>

#include "wsfn/config.hpp"
#include "wsfn/dataset_io.hpp"
#include "wsfn/io.hpp"

using namespace wsfn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("wsfn_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor<double> image(std::size_t H, std::size_t W, std::initializer_list<double> v) {
  return Tensor<double>(Shape{H, W, 1}, std::vector<double>(v));
}

bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

// --- signals -------------------------------------------------------------------------------

TEST(Signals, LabelsAndValuesInRange) {
  for (auto kind : {SignalKind::blobs2class, SignalKind::gradient_field, SignalKind::checker}) {
    auto s = gen_signals(kind, 6, 12, 3);
    ASSERT_EQ(s.size(), 6u);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (kind == SignalKind::blobs2class) { EXPECT_EQ(s[i].label, static_cast<int>(i % 2)); }
      if (kind == SignalKind::checker) { EXPECT_EQ(s[i].label, static_cast<int>(i % 3)); }
      EXPECT_GE(s[i].label, 0);
      EXPECT_EQ(s[i].image.shape(), (Shape{12, 12, 1}));
      for (double v : s[i].image.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Signals, ClassesAreBalanced) {
  for (auto kind : {SignalKind::blobs2class, SignalKind::checker}) {
    auto s = gen_signals(kind, 60, 8, 5);
    std::map<int, int> n;
    for (const auto& x : s) ++n[x.label];
    for (const auto& [label, k] : n) EXPECT_EQ(k, 60 / static_cast<int>(n.size())) << to_string(kind) << " " << label;
  }
}

TEST(Signals, DeterministicInSeed) {
  auto a = gen_signals(SignalKind::blobs2class, 4, 16, 9), b = gen_signals(SignalKind::blobs2class, 4, 16, 9);
  auto c = gen_signals(SignalKind::blobs2class, 4, 16, 10);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(bit_equal(a[i].image, b[i].image));
  EXPECT_FALSE(bit_equal(a[0].image, c[0].image));
}

TEST(Signals, TwoBlobClassHasTwoPeaks) {
  auto s = gen_signals(SignalKind::blobs2class, 8, 16, 1);
  for (const auto& x : s) {
    int peaks = 0;
    for (long r = 0; r < 16; ++r)
      for (long c = 0; c < 16; ++c) {
        const double v = x.image[(r * 16 + c)];
        bool top = v > 0.5;
        for (long dr = -1; dr <= 1 && top; ++dr)
          for (long dc = -1; dc <= 1; ++dc) {
            const long rr = r + dr, cc = c + dc;
            if ((dr || dc) && rr >= 0 && rr < 16 && cc >= 0 && cc < 16 && x.image[rr * 16 + cc] > v) top = false;
          }
        peaks += top;
      }
    EXPECT_EQ(peaks, x.label + 1);
  }
}

TEST(Signals, RejectsBadArguments) {
  EXPECT_THROW(parse_signal_kind("noise"), std::invalid_argument);
  EXPECT_THROW(gen_signals(SignalKind::checker, 2, 0, 1), std::invalid_argument);
}

// --- editing targets --------------------------------------------------------------------

TEST(Morphology, SinglePixelDilatesToSquare) {
  Tensor<double> x(Shape{5, 5, 1});
  x[2 * 5 + 2] = 1.0;
  auto d = apply_edit(EditKind::dilate, x);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      const bool inside = r >= 1 && r <= 3 && c >= 1 && c <= 3;
      EXPECT_EQ(d[r * 5 + c], inside ? 1.0 : 0.0) << r << "," << c;
    }
  auto e = apply_edit(EditKind::erode, x);
  for (double v : e.data()) EXPECT_EQ(v, 0.0);
}

TEST(Morphology, ConstantImageIsFixedPoint) {
  Tensor<double> x(Shape{4, 6, 1});
  for (auto& v : x.storage()) v = 0.3;
  for (auto k : {EditKind::erode, EditKind::dilate}) EXPECT_TRUE(bit_equal(apply_edit(k, x), x));
  const auto g = apply_edit(EditKind::gradient, x);
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(Morphology, MatchesNaiveLoopOnRandomImages) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0, 1);
  for (int t = 0; t < 5; ++t) {
    const std::size_t H = 3 + t, W = 7 - t;
    Tensor<double> x(Shape{H, W, 1});
    for (auto& v : x.storage()) v = U(rng);
    const auto d = apply_edit(EditKind::dilate, x), e = apply_edit(EditKind::erode, x);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        double hi = -1, lo = 2;
        for (std::size_t rr = r ? r - 1 : 0; rr <= std::min(r + 1, H - 1); ++rr)
          for (std::size_t cc = c ? c - 1 : 0; cc <= std::min(c + 1, W - 1); ++cc) {
            hi = std::max(hi, x[rr * W + cc]);
            lo = std::min(lo, x[rr * W + cc]);
          }
        EXPECT_EQ(d[r * W + c], hi);
        EXPECT_EQ(e[r * W + c], lo);
      }
  }
}

TEST(Morphology, ReplicatePaddingAtBorder) {
  // A bright corner only spreads inward.
  auto x = image(3, 3, {1, 0, 0, 0, 0, 0, 0, 0, 0});
  auto d = apply_edit(EditKind::dilate, x);
  EXPECT_TRUE(bit_equal(d, image(3, 3, {1, 1, 0, 1, 1, 0, 0, 0, 0})));
  auto e = apply_edit(EditKind::erode, image(3, 3, {0, 1, 1, 1, 1, 1, 1, 1, 1}));
  EXPECT_TRUE(bit_equal(e, image(3, 3, {0, 0, 1, 0, 0, 1, 1, 1, 1})));
}

TEST(Morphology, ErodeBelowImageBelowDilate) {
  auto s = gen_signals(SignalKind::blobs2class, 3, 16, 4);
  for (const auto& x : s) {
    auto d = apply_edit(EditKind::dilate, x.image), e = apply_edit(EditKind::erode, x.image);
    for (std::size_t i = 0; i < x.image.size(); ++i) {
      EXPECT_LE(e[i], x.image[i]);
      EXPECT_GE(d[i], x.image[i]);
    }
  }
}

TEST(Contrast, StretchesAroundMidGrayAndClips) {
  auto y = apply_edit(EditKind::contrast, image(1, 5, {0.0, 0.2, 0.5, 0.7, 1.0}));
  const double want[] = {0.0, 0.05, 0.5, 0.8, 1.0};
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(y[i], want[i], 1e-15);
}

TEST(Edit, UnknownTransformRejected) {
  try {
    parse_edit_kind("blur");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported transform"), std::string::npos);
  }
}

// --- archives ------------------------------------------------------------------------------

TEST(Archive, RoundTripIsBitExact) {
  auto dir = scratch("archive");
  std::mt19937_64 rng(5);
  Archive a;
  a.set("note", "line one\nline two = with spaces\\and slash");
  a.put("x", normal_tensor<double>({3, 4}, 1.0, rng));
  a.put("y", normal_tensor<float>({7}, 1.0f, rng));
  Tensor<double> odd(Shape{2});
  odd[0] = -0.0;
  odd[1] = std::numeric_limits<double>::denorm_min();
  a.put("odd", odd);
  a.save(dir / "a.wsa");
  Archive b = Archive::load(dir / "a.wsa");
  EXPECT_TRUE(a == b);
  EXPECT_EQ(b.get("note"), a.get("note"));
  EXPECT_TRUE(bit_equal(b.tensor<double>("odd"), odd));
  EXPECT_EQ(b.tensor<float>("y").storage(), a.tensor<float>("y").storage());
}

TEST(Archive, WrongDtypeAndMissingNamesAreErrors) {
  Archive a;
  a.put("x", Tensor<float>::ones({2}));
  EXPECT_THROW(a.tensor<double>("x"), FormatError);
  EXPECT_THROW(a.tensor<float>("nope"), FormatError);
  EXPECT_THROW(a.get("nope"), FormatError);
  EXPECT_EQ(a.tensor_as<double>("x")[1], 1.0);
}

TEST(Archive, VersionIsChecked) {
  auto dir = scratch("version");
  Archive a;
  a.put("x", Tensor<double>::ones({2}));
  a.save(dir / "a.wsa");
  std::string bytes;
  {
    std::ifstream is(dir / "a.wsa", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  bytes.replace(bytes.find("wsfn-archive 1"), 14, "wsfn-archive 9");
  std::ofstream(dir / "b.wsa", std::ios::binary) << bytes;
  EXPECT_THROW(Archive::load(dir / "b.wsa"), FormatError);
}

TEST(Archive, CorruptedBlobFailsHash) {
  auto dir = scratch("corrupt");
  Archive a;
  a.put("x", Tensor<double>::ones({4}));
  a.save(dir / "a.wsa");
  const auto size = fs::file_size(dir / "a.wsa");
  {
    std::fstream f(dir / "a.wsa", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size) - 3);
    f.put('\x7f');
  }
  EXPECT_THROW(Archive::load(dir / "a.wsa"), FormatError);
  fs::resize_file(dir / "a.wsa", size - 8);
  EXPECT_THROW(Archive::load(dir / "a.wsa"), FormatError);
}

TEST(Checkpoint, ParamsAndOptimizerRoundTrip) {
  auto dir = scratch("ckpt");
  std::mt19937_64 rng(2);
  ParamStore<float> p;
  p.add("block0.sa.q", normal_tensor<float>({3, 3}, 1.0f, rng));
  p.add("fourier.B", normal_tensor<float>({1, 4}, 1.0f, rng), false);
  Adam<float> opt;
  std::map<std::string, Tensor<float>> g{{"block0.sa.q", normal_tensor<float>({3, 3}, 1.0f, rng)}};
  opt.step(p, g);
  Archive a;
  store_params(a, p);
  store_optimizer(a, opt);
  a.save(dir / "c.wsa");
  Archive b = Archive::load(dir / "c.wsa");
  auto q = load_params<float>(b);
  EXPECT_EQ(q.names().size(), 2u);
  EXPECT_FALSE(q.trainable("fourier.B"));
  EXPECT_EQ(q.get("block0.sa.q").storage(), p.get("block0.sa.q").storage());
  Adam<float> opt2;
  restore_optimizer(opt2, b);
  EXPECT_EQ(opt2.steps(), 1u);
  EXPECT_EQ(opt2.second_moments().at("block0.sa.q").storage(), opt.second_moments().at("block0.sa.q").storage());

  ParamStore<float> wrong;
  wrong.add("block0.sa.q", Tensor<float>::zeros({2, 2}));
  EXPECT_THROW(restore_params(wrong, b), FormatError);
}

// --- datasets ------------------------------------------------------------------------------

class DatasetIo : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    FitConfig fit;
    fit.hidden = {8, 8};
    fit.steps = 300;
    auto sig = gen_signals(SignalKind::blobs2class, 4, 8, 1);
    ds_ = new InrDataset(build_inr_dataset(sig, fit, 7, "blobs2class"));
    assign_splits(*ds_, 2, 1);
  }
  static void TearDownTestSuite() { delete ds_; }
  static InrDataset* ds_;
};
InrDataset* DatasetIo::ds_ = nullptr;

TEST_F(DatasetIo, FitsClearPsnrFloor) {
  ASSERT_EQ(ds_->entries.size(), 4u);
  EXPECT_EQ(ds_->rejected, 0u);
  for (const auto& e : ds_->entries) EXPECT_GT(e.net.psnr, kPsnrFloor);
  EXPECT_EQ(ds_->split_indices("train").size(), 2u);
  EXPECT_EQ(ds_->split_indices("val").size(), 1u);
  EXPECT_EQ(ds_->split_indices("test").size(), 1u);
}

TEST_F(DatasetIo, RebuildIsBitIdentical) {
  FitConfig fit;
  fit.hidden = {8, 8};
  fit.steps = 300;
  auto again = build_inr_dataset(gen_signals(SignalKind::blobs2class, 4, 8, 1), fit, 7, "blobs2class");
  ASSERT_EQ(again.entries.size(), ds_->entries.size());
  for (std::size_t i = 0; i < again.entries.size(); ++i)
    for (std::size_t l = 0; l < again.spec.num_layers(); ++l) {
      EXPECT_EQ(again.entries[i].net.net.weights[l].storage(), ds_->entries[i].net.net.weights[l].storage());
      EXPECT_EQ(again.entries[i].net.net.biases[l].storage(), ds_->entries[i].net.net.biases[l].storage());
    }
}

TEST_F(DatasetIo, SaveLoadRoundTrip) {
  auto dir = scratch("dataset");
  save_dataset(*ds_, dir);
  EXPECT_TRUE(fs::exists(dir / "train" / "00000.wsa"));
  EXPECT_TRUE(fs::exists(dir / "test" / "00003.wsa"));
  auto back = load_dataset(dir);
  EXPECT_EQ(back.spec.widths, ds_->spec.widths);
  EXPECT_EQ(back.signal_kind, "blobs2class");
  EXPECT_EQ(back.fit.hidden, ds_->fit.hidden);
  ASSERT_EQ(back.entries.size(), ds_->entries.size());
  for (std::size_t i = 0; i < back.entries.size(); ++i) {
    const auto &a = back.entries[i], &b = ds_->entries[i];
    EXPECT_EQ(a.label, b.label);
    EXPECT_EQ(a.split, b.split);
    EXPECT_EQ(a.fit_seed, b.fit_seed);
    EXPECT_TRUE(bit_equal(a.image, b.image));
    for (std::size_t l = 0; l < a.net.net.num_layers(); ++l) {
      EXPECT_TRUE(bit_equal(a.net.net.weights[l], b.net.net.weights[l]));
      EXPECT_TRUE(bit_equal(a.net.net.biases[l], b.net.net.biases[l]));
    }
  }
}

TEST_F(DatasetIo, IndexHashDetectsTampering) {
  auto dir = scratch("tamper");
  save_dataset(*ds_, dir);
  Archive a = Archive::load(dir / "val" / "00002.wsa");
  a.set("label", "5");
  a.save(dir / "val" / "00002.wsa");
  EXPECT_THROW(load_dataset(dir), FormatError);
  EXPECT_THROW(load_dataset(dir / "missing"), std::runtime_error);
}

TEST(SignalsArchive, RoundTrip) {
  auto s = gen_signals(SignalKind::checker, 3, 8, 2);
  auto back = signals_from_archive(signals_archive(s, SignalKind::checker, 2));
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].label, s[i].label);
    EXPECT_TRUE(bit_equal(back[i].image, s[i].image));
  }
}

TEST(Dataset, TooManyRejectionsAbort) {
  // A 1-unit SIREN cannot fit a checkerboard.
  FitConfig fit;
  fit.hidden = {1};
  fit.steps = 20;
  auto sig = gen_signals(SignalKind::checker, 4, 8, 1);
  EXPECT_THROW(build_inr_dataset(sig, fit, 1), DatasetError);
}

// --- config -----------------------------------------------------------------------------------

TEST(Config, RenderParseRoundTrip) {
  RunConfig c;
  EXPECT_EQ(parse_config(render(c)), c);
  c.task = "train-edit";
  c.seed = 123456789012345ULL;
  c.out = "some dir/x";
  c.f32 = true;
  c.scale = false;
  c.model.term3 = Term3Mode::exact;
  c.model.fourier_scale = 0.1;
  c.model.delta_scale = 1.0 / 3.0;
  c.optim.lr = 3e-4;
  c.optim.warmup = 7;
  c.siren_hidden = {32, 16, 8};
  c.edit = "contrast";
  const std::string text = render(c);
  EXPECT_EQ(parse_config(text), c);
  EXPECT_EQ(render(parse_config(text)), text);
}

TEST(Config, UnknownKeysAndSectionsRejected) {
  EXPECT_THROW(parse_config("[model]\nchanels = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[modle]\nchannels = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("channels = 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed 4\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed = -4\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\ntask = fly\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nterm3 = all\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\nedit = blur\n"), ConfigError);
}

TEST(Config, CommentsWhitespaceAndOverlay) {
  RunConfig base;
  base.steps = 10;
  auto c = parse_config("# comment\n\n[optim]\n  lr =  0.01  # inline\n[model]\nchannels=16\n", base);
  EXPECT_EQ(c.optim.lr, 0.01);
  EXPECT_EQ(c.model.channels, 16u);
  EXPECT_EQ(c.steps, 10u);
}

// --- metrics and images -----------------------------------------------------------------------

TEST(Metrics, LogLinesReadBack) {
  auto dir = scratch("metrics");
  MetricsLog log(dir / "m.metrics");
  log.write(0, "train", "loss", 2.5);
  log.write(250, "val", "recon_loss", 0.125);
  std::ifstream is(dir / "m.metrics");
  std::string first;
  std::getline(is, first);
  EXPECT_EQ(first, "0, train, loss, 2.5");
  auto r = read_metrics(dir / "m.metrics");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[1].step, 250u);
  EXPECT_EQ(r[1].split, "val");
  EXPECT_EQ(r[1].metric, "recon_loss");
  EXPECT_EQ(r[1].value, 0.125);
}

TEST(Ppm, GrayscaleHeaderAndClampedBytes) {
  auto dir = scratch("ppm");
  write_ppm(dir / "x.ppm", image(2, 3, {0.0, 0.5, 1.0, -1.0, 2.0, 0.25}));
  std::ifstream is(dir / "x.ppm", std::ios::binary);
  std::string bytes(std::istreambuf_iterator<char>(is), {});
  const std::string header = "P5\n3 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 6);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  const unsigned char want[] = {0, 128, 255, 0, 255, 64};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + i]), want[i]);
  EXPECT_THROW(write_ppm(dir / "y.ppm", Tensor<double>(Shape{2, 2, 2})), ShapeError);
}
