#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vidflow/errors.hpp"
#include "vidflow/flow.hpp"
#include "vidflow/model.hpp"
#include "vidflow/rng.hpp"
#include "vidflow/video.hpp"

namespace vidflow {

struct TrainConfig {
  std::size_t iterations = 5000;
  std::size_t batch_size = 16;
  double base_lr = 1e-3;
  double weight_decay = 5e-6;
  std::size_t warmup_iters = 200;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double sigma_min = 1e-7;
  std::uint64_t seed = 0;
  double augment_brightness = 0.0;  // amplitude a of x -> clamp(x + U[-a, a])
  std::size_t threads = 1;          // 1 = strict sequential
  std::size_t checkpoint_every = 0;

  void validate() const;
};

/// Frame indices are 1-based, as in the clip notation x^1..x^m.
struct TrainingTuple {
  int tau = 0;
  double t = 0.0;
  std::vector<int> cond_index;  // predict: {c}; interpolate: {past, future}
  std::vector<int> dists;       // predict: tau - c; interpolate: c - tau (signed)
  TensorF x_noisy;
  TensorF u_target;
  TensorF ref;  // frame tau-1; empty when the model takes no reference
  std::vector<TensorF> conds;

  FieldInput<float> field_input() const { return FieldInput<float>{x_noisy, ref, conds, dists, t}; }
};

/// predict: tau ~ U{3..m}, c ~ U{max(1, tau-max_distance)..tau-2}.
/// interpolate: tau ~ U{2..m-1}, past ~ U{1..tau-1}, future ~ U{tau+1..m} (each within max_distance).
/// Then t ~ U[0,1), x ~ p_t(x | frame tau), u = target field. Draw order: tau, conditions, t, noise.
TrainingTuple sample_training_tuple(const Clip& clip, const PathParams& p, const ModelConfig& cfg, Rng& rng);

/// base_lr * iter / W for iter <= W, else base_lr * sqrt(W / iter) (W = 0 acts as W = 1).
double lr_schedule(std::size_t iter, const TrainConfig& cfg);

struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, TensorF> m, v;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct AdamWParams {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
};

/// One decoupled-decay Adam update at learning rate `lr`; increments opt.step.
/// Decay applies only to parameters for which `decay(name)` holds.
void adamw_update(ModelParams<float>& params, const ModelParams<float>& grads, OptimizerState& opt, double lr,
                  const AdamWParams& hp, const std::function<bool(const std::string&)>& decay = decays);

/// Per-sample loss and gradient (float tape).
double sample_loss_and_grad(const ModelParams<float>& params, const ModelConfig& cfg, const TrainingTuple& tuple,
                            ModelParams<float>* grads);

/// Batch loss without gradients.
double batch_loss(const ModelParams<float>& params, const ModelConfig& cfg, const std::vector<TrainingTuple>& batch);

struct StepResult {
  double loss = 0.0;  // pre-update batch mean
  double lr = 0.0;
};

/// Forward, backward and one AdamW step at lr_schedule(opt.step + 1). Per-sample
/// gradients are summed in batch order, so the result does not depend on
/// `cfg.threads`. Throws NonFiniteError on a non-finite loss.
StepResult train_step(ModelParams<float>& params, OptimizerState& opt, const std::vector<TrainingTuple>& batch,
                      const ModelConfig& mcfg, const TrainConfig& cfg);

struct TrainState {
  ModelParams<float> params;
  OptimizerState opt;
};

/// Fresh parameters from the "init" stream of `seed`.
TrainState init_train_state(const ModelConfig& cfg, std::uint64_t seed);

/// Tuples for iteration `iter` from the ("train", iter) stream: clip ~ U, then
/// optional brightness jitter, then sample_training_tuple.
std::vector<TrainingTuple> sample_batch(const Dataset& latents, const ModelConfig& mcfg, const TrainConfig& cfg,
                                        std::size_t iter);

struct TrainCallbacks {
  std::function<void(std::size_t iter, const StepResult&)> on_step;
  std::function<void(const TrainState&)> on_checkpoint;  // every cfg.checkpoint_every iterations
};

/// Runs iterations opt.step+1 .. cfg.iterations. Resuming from a saved state
/// reproduces an uninterrupted run exactly.
void train_loop(const Dataset& latents, const ModelConfig& mcfg, const TrainConfig& cfg, TrainState& state,
                const TrainCallbacks& cb = {});

}  // namespace vidflow
