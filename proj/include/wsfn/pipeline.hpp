// End-to-end runs shared by the command-line tool and the acceptance binary:
// Inr2Array pre-training, latent classification and INR editing, with
// checkpoints, metrics logs and image dumps.
#pragma once

#include <chrono>

#include "wsfn/classifier.hpp"
#include "wsfn/config.hpp"
#include "wsfn/dataset_io.hpp"
#include "wsfn/edit.hpp"
#include "wsfn/inr2array.hpp"
#include "wsfn/train.hpp"

namespace wsfn {

template <class U, class T>
WeightSpaceFeature<U> cast_feature(const WeightSpaceFeature<T>& u) {
  WeightSpaceFeature<U> r{u.spec, {}, {}};
  for (const auto& w : u.weights) r.weights.push_back(w.template cast<U>());
  for (const auto& b : u.biases) r.biases.push_back(b.template cast<U>());
  return r;
}

/// Copies every value of `from` into the same-named entries of `into`.
template <class U, class T>
void copy_params(ParamStore<U>& into, const ParamStore<T>& from) {
  for (const auto& n : into.names()) {
    const auto& src = from.get(n);
    if (src.shape() != into.get(n).shape()) throw ShapeError("parameter " + n + " shape mismatch");
    into.get_mut(n) = src.template cast<U>();
  }
}

template <class T>
std::vector<WeightSpaceFeature<T>> dataset_nets(const InrDataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<WeightSpaceFeature<T>> r;
  for (std::size_t i : idx) r.push_back(cast_feature<T>(ds.entries[i].net.net));
  return r;
}

inline std::vector<std::size_t> all_indices(const InrDataset& ds) {
  std::vector<std::size_t> r(ds.entries.size());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

inline Inr2ArrayConfig inr2array_config(const RunConfig& c) {
  Inr2ArrayConfig r;
  r.encoder = c.model;
  r.dec_hidden = c.dec_hidden;
  r.image_h = r.image_w = c.size;
  r.omega0 = c.omega0;
  return r;
}

inline TrainOptions train_options(const RunConfig& c) {
  TrainOptions o;
  o.steps = c.steps;
  o.batch = c.batch;
  o.eval_every = c.eval_every;
  o.log_every = c.log_every;
  o.dropout = c.model.dropout_p;
  o.seed = c.seed;
  return o;
}

/// Output locations and logging for one run; empty paths disable the output.
struct RunIo {
  MetricsLog log;
  std::filesystem::path checkpoint;  // written at every evaluation and at the end
  std::filesystem::path image_dir;   // reconstruction dumps (Inr2Array)
  std::size_t dump_count = 4;
  const Archive* resume = nullptr;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class T>
Archive checkpoint_archive(const std::string& kind, const RunConfig& cfg, std::size_t step, const ParamStore<T>& p,
                           const Adam<T>* opt, const std::vector<std::pair<std::string, double>>& summary = {}) {
  Archive a;
  a.set("kind", kind);
  a.set("dtype", std::is_same_v<T, float> ? "f32" : "f64");
  a.set("step", std::to_string(step));
  a.set("config", render(cfg));
  for (const auto& [k, v] : summary) a.set("metric." + k, detail::fmt_double(v));
  store_params(a, p);
  if (opt) store_optimizer(a, *opt);
  return a;
}

inline RunConfig checkpoint_config(const Archive& a, const std::string& kind) {
  if (a.get("kind") != kind) throw FormatError("checkpoint holds a " + a.get("kind") + " model, expected " + kind);
  return parse_config(a.get("config"));
}

// --- Inr2Array ---------------------------------------------------------------------------

template <class T>
struct Inr2ArrayRun {
  Inr2Array<T> model;
  double initial_loss = 0;  // mean reconstruction loss over the training nets before any update
  double final_loss = 0;
  std::size_t steps = 0;
  double seconds = 0;
};

template <class T>
double mean_loss(const Inr2Array<T>& m, const std::vector<WeightSpaceFeature<T>>& nets,
                 const std::vector<Tensor<T>>& targets) {
  Binding<T> b(m.params(), false);
  double s = 0;
  for (std::size_t i = 0; i < nets.size(); ++i) s += m.loss(b, nets[i], nullptr, &targets[i]).value()[0];
  return s / static_cast<double>(nets.size());
}

/// Builds an Inr2Array for the dataset's SIREN spec with input statistics
/// taken from the training nets.
template <class T>
Inr2Array<T> make_inr2array(const RunConfig& cfg, const InrDataset& ds, const std::vector<std::size_t>& train) {
  Inr2Array<T> m(inr2array_config(cfg), ds.spec, mix_seed(cfg.seed, 0x12a));
  m.fit_input_norm(dataset_nets<T>(ds, train));
  return m;
}

template <class T>
Inr2ArrayRun<T> train_inr2array(const RunConfig& cfg, const InrDataset& ds, const std::vector<std::size_t>& train,
                                RunIo& io) {
  const auto t0 = std::chrono::steady_clock::now();
  Inr2ArrayRun<T> run{make_inr2array<T>(cfg, ds, train)};
  auto& model = run.model;
  const auto nets = dataset_nets<T>(ds, train);
  std::vector<Tensor<T>> targets;
  for (const auto& n : nets) targets.push_back(model.target_signal(n));

  Adam<T> opt(cfg.optim);
  std::size_t start = 0;
  if (io.resume) {
    checkpoint_config(*io.resume, "inr2array");
    restore_params(model.params(), *io.resume);
    restore_optimizer(opt, *io.resume);
    start = opt.steps();
  }
  run.initial_loss = mean_loss(model, nets, targets);
  if (start == 0) io.log.write(0, "train", "recon_loss", run.initial_loss);

  Trainer<T> tr;
  tr.num_items = nets.size();
  tr.item_loss = [&](const Binding<T>& b, std::size_t i, const ForwardContext* ctx) {
    return model.loss(b, nets[i], ctx, &targets[i]);
  };
  tr.log = [&](std::size_t s, const std::string& split, const std::string& metric, double v) {
    io.log.write(s, split, metric == "loss" && split == "val" ? "recon_loss" : metric, v);
  };
  tr.validate = [&](const ParamStore<T>&) { return mean_loss(model, nets, targets); };
  tr.on_eval = [&](std::size_t step, const ParamStore<T>&) {
    if (io.image_dir.empty()) return;
    for (std::size_t k = 0; k < std::min(io.dump_count, nets.size()); ++k) {
      const std::string tag = "step" + std::to_string(step) + "_net" + std::to_string(train[k]);
      write_ppm(io.image_dir / (tag + "_recon.ppm"), model.reconstruct(nets[k]));
      write_ppm(io.image_dir / (tag + "_target.ppm"),
                targets[k].reshaped({model.config().image_h, model.config().image_w, targets[k].size() /
                                     (model.config().image_h * model.config().image_w)}));
    }
  };
  tr.on_checkpoint = [&](std::size_t step, const ParamStore<T>& p, const Adam<T>& o) {
    if (!io.checkpoint.empty()) checkpoint_archive("inr2array", cfg, step, p, &o).save(io.checkpoint);
  };
  auto res = tr.run(model.params(), opt, train_options(cfg), start);
  run.final_loss = mean_loss(model, nets, targets);
  run.steps = start + res.steps_run;
  run.seconds = seconds_since(t0);
  if (!io.checkpoint.empty())
    checkpoint_archive("inr2array", cfg, run.steps, model.params(), &opt,
                       {{"initial_loss", run.initial_loss}, {"final_loss", run.final_loss}})
        .save(io.checkpoint);
  return run;
}

/// Rebuilds a trained Inr2Array from its checkpoint, in precision U.
template <class U>
Inr2Array<U> load_inr2array(const Archive& a, const WeightSpaceSpec& spec) {
  const RunConfig cfg = checkpoint_config(a, "inr2array");
  Inr2Array<U> m(inr2array_config(cfg), spec, mix_seed(cfg.seed, 0x12a));
  restore_params(m.params(), a);
  return m;
}

// --- latent classification ------------------------------------------------------------

struct ClassifyRun {
  LatentClassifier<double> classifier;
  double train_accuracy = 0, test_accuracy = 0;
  double seconds = 0;
};

/// Trains the latent classifier on z = Enc(W) from a frozen encoder. The
/// classifier runs in float64 so logits are stable to rounding level.
inline ClassifyRun train_classifier(const RunConfig& cfg, const std::vector<Tensor<double>>& z_train,
                                    const std::vector<int>& y_train, const std::vector<Tensor<double>>& z_test,
                                    const std::vector<int>& y_test, RunIo& io) {
  const auto t0 = std::chrono::steady_clock::now();
  if (z_train.empty()) throw std::invalid_argument("no training latents");
  ClassifierConfig cc = cfg.classifier;
  cc.num_classes = std::max(cc.num_classes, static_cast<std::size_t>(*std::max_element(y_train.begin(), y_train.end()) + 1));
  const auto& s = z_train.front().shape();
  ClassifyRun run{LatentClassifier<double>(cc, s[0], s[1], mix_seed(cfg.seed, 0xc1a))};
  run.classifier.fit_input_norm(z_train);

  Adam<double> opt(cfg.optim);
  Trainer<double> tr;
  tr.num_items = z_train.size();
  tr.item_loss = [&](const Binding<double>& b, std::size_t i, const ForwardContext* ctx) {
    return cross_entropy(run.classifier.forward(b, z_train[i], ctx), std::vector<int>{y_train[i]});
  };
  tr.log = [&](std::size_t st, const std::string& split, const std::string& metric, double v) {
    io.log.write(st, split, metric, v);
  };
  tr.on_eval = [&](std::size_t st, const ParamStore<double>&) {
    io.log.write(st, "train", "accuracy", accuracy(run.classifier, z_train, y_train));
    if (!z_test.empty()) io.log.write(st, "test", "accuracy", accuracy(run.classifier, z_test, y_test));
  };
  tr.run(run.classifier.params(), opt, train_options(cfg));
  run.train_accuracy = accuracy(run.classifier, z_train, y_train);
  run.test_accuracy = z_test.empty() ? 0.0 : accuracy(run.classifier, z_test, y_test);
  run.seconds = seconds_since(t0);
  if (!io.checkpoint.empty()) {
    auto a = checkpoint_archive<double>("classifier", cfg, cfg.steps, run.classifier.params(), &opt,
                                        {{"train_accuracy", run.train_accuracy}, {"test_accuracy", run.test_accuracy}});
    a.set("latent_shape", join_sizes({s[0], s[1]}));
    a.set("num_classes", std::to_string(cc.num_classes));
    a.save(io.checkpoint);
  }
  return run;
}

// --- editing ------------------------------------------------------------------------------

template <class T>
struct EditRun {
  EditModel<T> model;
  double initial_mse = 0, final_mse = 0, best_mse = 0;
  std::size_t steps = 0;
  double seconds = 0;
};

template <class T>
std::vector<Tensor<T>> edit_targets(const InrDataset& ds, const std::vector<std::size_t>& idx, EditKind kind) {
  std::vector<Tensor<T>> r;
  for (std::size_t i : idx) r.push_back(apply_edit(kind, ds.entries[i].image).template cast<T>());
  return r;
}

template <class T>
double mean_edit_mse(const EditModel<T>& m, const std::vector<WeightSpaceFeature<T>>& nets,
                     const std::vector<Tensor<T>>& targets) {
  Binding<T> b(m.params(), false);
  double s = 0;
  for (std::size_t i = 0; i < nets.size(); ++i) s += m.loss(b, nets[i], targets[i]).value()[0];
  return s / static_cast<double>(nets.size());
}

template <class T>
EditModel<T> make_edit_model(const RunConfig& cfg, const InrDataset& ds, const std::vector<std::size_t>& train) {
  EditModel<T> m(cfg.model, ds.spec, mix_seed(cfg.seed, 0xed1), T(cfg.omega0));
  m.nft().fit_input_norm(dataset_nets<T>(ds, train));
  return m;
}

/// Trains W ↦ W + Δ(W) so the edited SIREN renders the transformed image.
/// The returned model holds the parameters with the lowest training MSE seen
/// at an evaluation point.
template <class T>
EditRun<T> train_edit(const RunConfig& cfg, const InrDataset& ds, const std::vector<std::size_t>& train, RunIo& io) {
  const auto t0 = std::chrono::steady_clock::now();
  EditRun<T> run{make_edit_model<T>(cfg, ds, train)};
  auto& model = run.model;
  const auto nets = dataset_nets<T>(ds, train);
  const auto targets = edit_targets<T>(ds, train, parse_edit_kind(cfg.edit));
  Adam<T> opt(cfg.optim);
  std::size_t start = 0;
  if (io.resume) {
    checkpoint_config(*io.resume, "edit");
    restore_params(model.params(), *io.resume);
    restore_optimizer(opt, *io.resume);
    start = opt.steps();
  }
  run.initial_mse = mean_edit_mse(model, nets, targets);
  if (start == 0) io.log.write(0, "train", "edit_mse", run.initial_mse);

  Trainer<T> tr;
  tr.num_items = nets.size();
  tr.item_loss = [&](const Binding<T>& b, std::size_t i, const ForwardContext* ctx) {
    return model.loss(b, nets[i], targets[i], ctx);
  };
  tr.log = [&](std::size_t s, const std::string& split, const std::string& metric, double v) {
    io.log.write(s, split == "val" ? "train" : split, split == "val" ? "edit_mse" : metric, v);
  };
  tr.validate = [&](const ParamStore<T>&) { return mean_edit_mse(model, nets, targets); };
  tr.on_checkpoint = [&](std::size_t step, const ParamStore<T>& p, const Adam<T>& o) {
    if (!io.checkpoint.empty()) checkpoint_archive("edit", cfg, step, p, &o).save(io.checkpoint);
  };
  auto res = tr.run(model.params(), opt, train_options(cfg), start);
  run.final_mse = mean_edit_mse(model, nets, targets);
  if (res.best_metric < run.final_mse) model.params() = res.best;
  run.best_mse = std::min(run.final_mse, res.best_metric);
  run.steps = start + res.steps_run;
  run.seconds = seconds_since(t0);
  if (!io.checkpoint.empty())
    checkpoint_archive("edit", cfg, run.steps, model.params(), &opt,
                       {{"initial_mse", run.initial_mse}, {"final_mse", run.final_mse}, {"best_mse", run.best_mse}})
        .save(io.checkpoint);
  return run;
}

template <class U>
EditModel<U> load_edit_model(const Archive& a, const WeightSpaceSpec& spec) {
  const RunConfig cfg = checkpoint_config(a, "edit");
  EditModel<U> m(cfg.model, spec, mix_seed(cfg.seed, 0xed1), U(cfg.omega0));
  restore_params(m.params(), a);
  return m;
}

}  // namespace wsfn
