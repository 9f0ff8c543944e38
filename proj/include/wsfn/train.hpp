// Generic minibatch training loop: deterministic batches, warmup Adam,
// periodic validation with best-parameter retention, NaN abort.
#pragma once

#include <cstdlib>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>

#include "wsfn/optim.hpp"

namespace wsfn {

class NumericalAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// splitmix64 finalizer; used to derive per-step / per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Batch for a given step: a pure function of (seed, step), so resumed runs
/// see the same batches. Distinct items when batch ≤ n.
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t n, std::size_t batch) {
  std::mt19937_64 rng(mix_seed(seed, step));
  std::vector<std::size_t> idx(n), out;
  while (out.size() < batch) {
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < n && out.size() < batch; ++i) out.push_back(idx[i]);
  }
  return out;
}

/// Worker count from WSFN_THREADS (default 1).
inline std::size_t thread_count() {
  const char* s = std::getenv("WSFN_THREADS");
  if (!s || !*s) return 1;
  const long v = std::strtol(s, nullptr, 10);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

struct TrainOptions {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t eval_every = 250;  // 0 disables validation
  std::size_t log_every = 50;
  double dropout = 0.0;
  std::uint64_t seed = 0;
};

template <class T>
struct Trainer {
  using ItemLoss = std::function<Var<T>(const Binding<T>&, std::size_t item, const ForwardContext*)>;
  using Logger = std::function<void(std::size_t step, const std::string& split, const std::string& metric, double)>;

  ItemLoss item_loss;
  std::size_t num_items = 0;
  std::function<double(const ParamStore<T>&)> validate;  // lower is better
  std::function<void(std::size_t step, const ParamStore<T>&)> on_eval;
  std::function<void(std::size_t step, const ParamStore<T>&, const Adam<T>&)> on_checkpoint;
  Logger log;

  /// Mean batch loss and gradients for one step.
  std::pair<double, std::map<std::string, Tensor<T>>> batch_step(const ParamStore<T>& params,
                                                                  const std::vector<std::size_t>& batch,
                                                                  const TrainOptions& o, std::size_t step) const {
    const std::size_t workers = std::min(thread_count(), batch.size());
    const T w = T(1) / static_cast<T>(batch.size());
    std::vector<double> losses(workers, 0.0);
    std::vector<std::map<std::string, Tensor<T>>> grads(workers);
    std::vector<std::exception_ptr> errors(workers);
    auto run = [&](std::size_t wi) {
      try {
        Binding<T> b(params, true);
        Var<T> total;
        for (std::size_t k = wi; k < batch.size(); k += workers) {
          std::mt19937_64 rng(mix_seed(o.seed ^ 0x5eed, step * 7919 + k));
          ForwardContext ctx{o.dropout > 0 ? &rng : nullptr, o.dropout};
          Var<T> l = item_loss(b, batch[k], &ctx);
          total = total.defined() ? add(total, l) : l;
        }
        if (!total.defined()) return;
        total = scale(total, w);
        losses[wi] = total.value()[0];
        backward(total);
        grads[wi] = collect_grads(b);
      } catch (...) {
        errors[wi] = std::current_exception();
      }
    };
    if (workers <= 1) {
      run(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t wi = 0; wi < workers; ++wi) pool.emplace_back(run, wi);
      for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    double loss = 0;
    std::map<std::string, Tensor<T>> g;
    for (std::size_t wi = 0; wi < workers; ++wi) {
      loss += losses[wi];
      accumulate_grads(g, grads[wi]);
    }
    return {loss, std::move(g)};
  }

  struct Result {
    std::size_t steps_run = 0;
    double first_loss = 0, last_loss = 0;
    double best_metric = std::numeric_limits<double>::infinity();
    std::size_t best_step = 0;
    ParamStore<T> best;
  };

  /// Runs steps [start, o.steps). Throws NumericalAbort on a non-finite loss
  /// or gradient.
  Result run(ParamStore<T>& params, Adam<T>& opt, const TrainOptions& o, std::size_t start = 0) const {
    if (num_items == 0) throw std::invalid_argument("training set is empty");
    Result r;
    r.best = params;
    for (std::size_t step = start; step < o.steps; ++step) {
      auto [loss, g] = batch_step(params, batch_indices(o.seed, step, num_items, o.batch), o, step);
      if (!std::isfinite(loss) || !all_finite(g))
        throw NumericalAbort("non-finite training loss at step " + std::to_string(step) +
                             "; lower the learning rate or check the inputs");
      if (step == start) r.first_loss = loss;
      r.last_loss = loss;
      opt.step(params, g);
      ++r.steps_run;
      const std::size_t done = step + 1;
      if (log && (done % std::max<std::size_t>(o.log_every, 1) == 0 || step == start)) log(step, "train", "loss", loss);
      if (o.eval_every && (done % o.eval_every == 0 || done == o.steps)) {
        if (validate) {
          const double m = validate(params);
          if (log) log(done, "val", "loss", m);
          if (m < r.best_metric) {
            r.best_metric = m;
            r.best_step = done;
            r.best = params;
          }
        }
        if (on_eval) on_eval(done, params);
        if (on_checkpoint) on_checkpoint(done, params, opt);
      }
    }
    if (!validate) r.best = params;
    return r;
  }
};

}  // namespace wsfn
