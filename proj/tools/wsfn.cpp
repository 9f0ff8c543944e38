// wsfn command-line tool.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>

#include "wsfn/pipeline.hpp"
#include "wsfn/verify.hpp"

namespace fs = std::filesystem;
using namespace wsfn;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kNumerical = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path out_dir(const RunConfig& c) { return fs::path(c.out); }
fs::path signals_path(const RunConfig& c) { return c.signals_path.empty() ? out_dir(c) / "signals.wsa" : fs::path(c.signals_path); }
fs::path dataset_path(const RunConfig& c) { return c.dataset.empty() ? out_dir(c) / "dataset" : fs::path(c.dataset); }
fs::path encoder_path(const RunConfig& c) { return c.encoder.empty() ? out_dir(c) / "inr2array.wsa" : fs::path(c.encoder); }

void require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw std::runtime_error(p.string() + " not found; run `wsfn " + producer + "` first");
}

InrDataset load_dataset_for(const RunConfig& c) {
  require(dataset_path(c) / "index.txt", "fit-sirens");
  return load_dataset(dataset_path(c));
}

std::vector<std::size_t> split_or_all(const InrDataset& ds, const std::string& split) {
  auto idx = ds.split_indices(split);
  return idx.empty() ? all_indices(ds) : idx;
}

RunIo make_io(const RunConfig& c, const std::string& name) {
  fs::create_directories(out_dir(c));
  RunIo io;
  io.log = MetricsLog(out_dir(c) / (name + ".metrics"), true);
  io.checkpoint = out_dir(c) / (name + ".wsa");
  return io;
}

// --- commands ----------------------------------------------------------------------------

int cmd_verify(const RunConfig& c) {
  verify::Options o;
  o.seed = c.seed;
  o.samples = c.samples;
  o.break_coupling = c.break_coupling;
  const std::size_t advertised = verify::advertised_checks(o);
  std::cout << "{\"advertised_checks\":" << advertised << "}" << std::endl;
  const auto records = verify::run_all(o);
  std::size_t failed = 0;
  std::ostringstream report;
  for (const auto& r : records) {
    const std::string line = verify::to_json(r);
    std::cout << line << "\n";
    report << line << "\n";
    if (!r.pass) {
      ++failed;
      std::cerr << "FAIL " << line << "\n";
    }
  }
  std::cout << "{\"checks\":" << records.size() << ",\"passed\":" << records.size() - failed << ",\"failed\":" << failed
            << "}" << std::endl;
  fs::create_directories(out_dir(c));
  std::ofstream(out_dir(c) / "verify.jsonl") << report.str();
  if (records.size() != advertised) {
    std::cerr << "report has " << records.size() << " records, " << advertised << " advertised\n";
    return kCheckFailed;
  }
  return failed ? kCheckFailed : kOk;
}

int cmd_gen_data(const RunConfig& c) {
  const auto kind = parse_signal_kind(c.signal);
  auto sig = gen_signals(kind, c.count, c.size, c.seed);
  fs::create_directories(signals_path(c).parent_path().empty() ? fs::path(".") : signals_path(c).parent_path());
  signals_archive(sig, kind, c.seed).save(signals_path(c));
  std::cout << "wrote " << sig.size() << " " << c.signal << " signals to " << signals_path(c).string() << "\n";
  return kOk;
}

int cmd_fit_sirens(const RunConfig& c) {
  require(signals_path(c), "gen-data");
  const Archive a = Archive::load(signals_path(c));
  const auto sig = signals_from_archive(a);
  FitConfig fit;
  fit.hidden = c.siren_hidden;
  fit.steps = c.fit_steps;
  fit.lr = c.fit_lr;
  fit.omega0 = c.omega0;
  auto ds = build_inr_dataset(sig, fit, c.seed, a.get("kind"));
  assign_splits(ds, c.n_train, c.n_val);
  save_dataset(ds, dataset_path(c));
  double lo = INFINITY, mean = 0;
  for (const auto& e : ds.entries) lo = std::min(lo, e.net.psnr), mean += e.net.psnr / ds.entries.size();
  std::cout << "fitted " << ds.entries.size() << " SIRENs " << to_string(ds.spec) << " (" << ds.rejected
            << " rejected), PSNR mean " << mean << " dB, min " << lo << " dB -> " << dataset_path(c).string() << "\n";
  return kOk;
}

template <class T>
int cmd_train_inr2array(const RunConfig& c, const std::string& resume) {
  const auto ds = load_dataset_for(c);
  RunIo io = make_io(c, "inr2array");
  io.image_dir = out_dir(c) / "recon";
  Archive ra;
  if (!resume.empty()) {
    ra = Archive::load(resume);
    io.resume = &ra;
  }
  auto run = train_inr2array<T>(c, ds, all_indices(ds), io);
  std::cout << "inr2array: loss " << run.initial_loss << " -> " << run.final_loss << " in " << run.steps << " steps ("
            << run.seconds << " s)\n";
  return kOk;
}

template <class T>
int cmd_train_edit(const RunConfig& c, const std::string& resume) {
  const auto ds = load_dataset_for(c);
  RunIo io = make_io(c, "edit");
  Archive ra;
  if (!resume.empty()) {
    ra = Archive::load(resume);
    io.resume = &ra;
  }
  auto run = train_edit<T>(c, ds, split_or_all(ds, "train"), io);
  std::cout << "edit (" << c.edit << "): mse " << run.initial_mse << " -> " << run.best_mse << " in " << run.steps
            << " steps (" << run.seconds << " s)\n";
  return kOk;
}

/// Latents of every dataset entry from the trained encoder, evaluated in float64.
std::vector<Tensor<double>> encode_all(const RunConfig& c, const InrDataset& ds, const Inr2Array<double>& enc) {
  (void)c;
  std::vector<Tensor<double>> z;
  for (const auto& e : ds.entries) z.push_back(enc.encode(e.net.net));
  return z;
}

Inr2Array<double> load_encoder(const RunConfig& c, const InrDataset& ds) {
  require(encoder_path(c), "train-inr2array");
  return load_inr2array<double>(Archive::load(encoder_path(c)), ds.spec);
}

int cmd_train_classify(const RunConfig& c) {
  const auto ds = load_dataset_for(c);
  const auto enc = load_encoder(c, ds);
  const auto z = encode_all(c, ds, enc);
  std::vector<Tensor<double>> ztr, zte;
  std::vector<int> ytr, yte;
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const bool train = ds.entries[i].split == "train";
    (train ? ztr : zte).push_back(z[i]);
    (train ? ytr : yte).push_back(ds.entries[i].label);
  }
  RunIo io = make_io(c, "classifier");
  auto run = train_classifier(c, ztr, ytr, zte, yte, io);
  std::cout << "classifier: train accuracy " << run.train_accuracy << ", test accuracy " << run.test_accuracy << " ("
            << run.seconds << " s)\n";
  return kOk;
}

int cmd_encode(const RunConfig& c) {
  const auto ds = load_dataset_for(c);
  const auto enc = load_encoder(c, ds);
  const auto z = encode_all(c, ds, enc);
  Archive a;
  a.set("encoder", encoder_path(c).string());
  std::string labels, splits;
  std::mt19937_64 rng(c.seed);
  double gap = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    a.put("z." + std::to_string(i), z[i]);
    labels += (i ? "," : "") + std::to_string(ds.entries[i].label);
    splits += (i ? "," : "") + ds.entries[i].split;
    // Paired run on a neuron-permuted copy of the same network.
    const auto& w = ds.entries[i].net.net;
    gap = std::max(gap, max_abs_diff(enc.encode(apply_perm(random_perm(w.spec, rng, true), w)), z[i]));
  }
  a.set("labels", labels);
  a.set("splits", splits);
  fs::create_directories(out_dir(c));
  a.save(out_dir(c) / "latents.wsa");
  MetricsLog(out_dir(c) / "encode.metrics", true).write(0, "eval", "latent_perm_gap", gap);
  std::cout << "encoded " << z.size() << " networks -> " << (out_dir(c) / "latents.wsa").string() << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& c) {
  const auto ds = load_dataset_for(c);
  MetricsLog log(out_dir(c) / "eval.metrics", true);
  bool any = false;
  std::mt19937_64 rng(c.seed);
  if (fs::exists(encoder_path(c))) {
    any = true;
    const Archive a = Archive::load(encoder_path(c));
    const auto m = load_inr2array<double>(a, ds.spec);
    const std::size_t step = std::stoul(a.get("step"));
    double loss = 0, psnr = 0, gap = 0;
    for (const auto& e : ds.entries) {
      const double l = m.loss(Binding<double>(m.params(), false), e.net.net).value()[0];
      loss += l / ds.entries.size();
      psnr += psnr_from_mse(l / (c.size * c.size)) / ds.entries.size();
      gap = std::max(gap, max_abs_diff(m.encode(apply_perm(random_perm(e.net.net.spec, rng, true), e.net.net)),
                                       m.encode(e.net.net)));
    }
    log.write(step, "eval", "recon_loss", loss);
    log.write(step, "eval", "recon_psnr", psnr);
    log.write(step, "eval", "latent_perm_gap", gap);
  }
  if (fs::exists(out_dir(c) / "edit.wsa")) {
    any = true;
    const Archive a = Archive::load(out_dir(c) / "edit.wsa");
    const auto m = load_edit_model<double>(a, ds.spec);
    const RunConfig ec = checkpoint_config(a, "edit");
    const auto kind = parse_edit_kind(ec.edit);
    for (const std::string split : {"train", "val", "test"}) {
      const auto idx = ds.split_indices(split);
      if (idx.empty()) continue;
      log.write(std::stoul(a.get("step")), split, "edit_mse",
                mean_edit_mse(m, dataset_nets<double>(ds, idx), edit_targets<double>(ds, idx, kind)));
    }
  }
  if (fs::exists(out_dir(c) / "classifier.wsa") && fs::exists(encoder_path(c))) {
    any = true;
    const Archive a = Archive::load(out_dir(c) / "classifier.wsa");
    const RunConfig cc = checkpoint_config(a, "classifier");
    const auto shape = parse_sizes(a.get("latent_shape"));
    ClassifierConfig k = cc.classifier;
    k.num_classes = std::stoul(a.get("num_classes"));
    LatentClassifier<double> cls(k, shape.at(0), shape.at(1), 0);
    restore_params(cls.params(), a);
    const auto z = encode_all(c, ds, load_encoder(c, ds));
    for (const std::string split : {"train", "val", "test"}) {
      std::vector<Tensor<double>> zs;
      std::vector<int> ys;
      for (std::size_t i = 0; i < z.size(); ++i)
        if (ds.entries[i].split == split) zs.push_back(z[i]), ys.push_back(ds.entries[i].label);
      if (!zs.empty()) log.write(std::stoul(a.get("step")), split, "accuracy", accuracy(cls, zs, ys));
    }
  }
  if (!any) throw std::runtime_error("no checkpoints under " + out_dir(c).string() + "; train a model first");
  return kOk;
}

int cmd_report(const RunConfig& c) {
  if (!fs::exists(out_dir(c))) throw std::runtime_error(out_dir(c).string() + " does not exist");
  std::vector<fs::path> logs;
  for (const auto& e : fs::directory_iterator(out_dir(c)))
    if (e.path().extension() == ".metrics") logs.push_back(e.path());
  if (logs.empty()) throw std::runtime_error("no metrics logs under " + out_dir(c).string());
  std::sort(logs.begin(), logs.end());
  std::printf("%-12s %-8s %-18s %8s %14s\n", "run", "split", "metric", "step", "value");
  for (const auto& p : logs) {
    std::map<std::pair<std::string, std::string>, MetricRecord> last;
    for (const auto& r : read_metrics(p)) last[{r.split, r.metric}] = r;
    for (const auto& [k, r] : last)
      std::printf("%-12s %-8s %-18s %8zu %14.6g\n", p.stem().string().c_str(), r.split.c_str(), r.metric.c_str(),
                  r.step, r.value);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weight-space neural functional transformers"};
  app.require_subcommand(1, 1);
  std::string config_path, out, term3, resume;
  std::uint64_t seed = 0;
  bool f32 = false, no_scale = false, break_coupling = false;
  for (const auto& t : task_names()) {
    auto* sub = app.add_subcommand(t);
    sub->add_option("--config", config_path, "config file (INI sections [run] [model] [optim] [data])");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--out", out, "output directory");
    sub->add_flag("--f32", f32, "train in float32");
    sub->add_flag("--no-scale", no_scale, "drop the 1/sqrt(d) attention logit scale");
    sub->add_option("--term3", term3, "all-pairs attention term")->check(CLI::IsMember({"exact", "rowcol"}));
    sub->add_flag("--break-coupling", break_coupling, "debug: mis-permute the adjacent-layer keys");
    if (t.rfind("train-", 0) == 0 && t != "train-classify") sub->add_option("--resume", resume, "checkpoint to resume");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  const std::string task = app.get_subcommands().front()->get_name();
  auto* sub = app.get_subcommands().front();
  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    cfg.task = task;
    if (sub->count("--seed")) cfg.seed = seed;
    if (!out.empty()) cfg.out = out;
    if (f32) cfg.f32 = true;
    if (no_scale) cfg.scale = false;
    if (!term3.empty()) cfg.model.term3 = parse_term3(term3);
    if (break_coupling) cfg.break_coupling = true;
    ScopedScaling scaling(cfg.scale);

    if (task == "verify") return cmd_verify(cfg);
    if (task == "gen-data") return cmd_gen_data(cfg);
    if (task == "fit-sirens") return cmd_fit_sirens(cfg);
    if (task == "train-inr2array")
      return cfg.f32 ? cmd_train_inr2array<float>(cfg, resume) : cmd_train_inr2array<double>(cfg, resume);
    if (task == "train-edit") return cfg.f32 ? cmd_train_edit<float>(cfg, resume) : cmd_train_edit<double>(cfg, resume);
    if (task == "train-classify") return cmd_train_classify(cfg);
    if (task == "encode") return cmd_encode(cfg);
    if (task == "eval") return cmd_eval(cfg);
    if (task == "report") return cmd_report(cfg);
    throw UsageError("unknown task " + task);
  } catch (const ConfigError& e) {
    std::cerr << "wsfn: config error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "wsfn: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalAbort& e) {
    std::cerr << "wsfn: numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const DivergenceError& e) {
    std::cerr << "wsfn: numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "wsfn: " << e.what() << "\n";
    return kCheckFailed;
  }
}
