#include "vidflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace vidflow {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("train.base_lr must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("train.adam_beta1/2 must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train.adam_eps must be > 0");
  if (!(augment_brightness >= 0.0)) throw std::invalid_argument("train.augment_brightness must be >= 0");
  if (threads == 0) throw std::invalid_argument("train.threads must be >= 1");
  PathParams{sigma_min};
}

TrainingTuple sample_training_tuple(const Clip& clip, const PathParams& p, const ModelConfig& cfg, Rng& rng) {
  const int m = static_cast<int>(clip.size());
  if (m < 3) throw std::invalid_argument("sample_training_tuple: clip has " + std::to_string(m) + " frames, need >= 3");
  const int maxd = cfg.max_distance;
  if (cfg.mode == Mode::predict && maxd < 2) throw std::invalid_argument("predict mode needs max_distance >= 2");
  auto frame = [&](int idx) -> const TensorF& { return clip[static_cast<std::size_t>(idx - 1)]; };
  TrainingTuple tp;
  if (cfg.mode == Mode::predict) {
    tp.tau = static_cast<int>(rng.uniform_int(3, m));
    const int c = static_cast<int>(rng.uniform_int(std::max(1, tp.tau - maxd), tp.tau - 2));
    tp.cond_index = {c};
    tp.dists = {tp.tau - c};
    if (cfg.use_reference) tp.ref = frame(tp.tau - 1);
  } else {
    tp.tau = static_cast<int>(rng.uniform_int(2, m - 1));
    const int past = static_cast<int>(rng.uniform_int(std::max(1, tp.tau - maxd), tp.tau - 1));
    const int future = static_cast<int>(rng.uniform_int(tp.tau + 1, std::min(m, tp.tau + maxd)));
    tp.cond_index = {past, future};
    tp.dists = {past - tp.tau, future - tp.tau};
  }
  for (int c : tp.cond_index) tp.conds.push_back(frame(c));
  tp.t = rng.uniform();
  const TensorF& x1 = frame(tp.tau);
  tp.x_noisy = sample_conditional(tp.t, x1, p, rng);
  tp.u_target = target_field(tp.t, tp.x_noisy, x1, p);
  return tp;
}

double lr_schedule(std::size_t iter, const TrainConfig& cfg) {
  if (iter == 0) throw std::invalid_argument("lr_schedule: iterations count from 1");
  const double it = static_cast<double>(iter), w = static_cast<double>(cfg.warmup_iters);
  if (iter <= cfg.warmup_iters) return cfg.base_lr * it / w;
  return cfg.base_lr * std::sqrt(std::max(w, 1.0) / it);
}

void adamw_update(ModelParams<float>& params, const ModelParams<float>& grads, OptimizerState& opt, double lr,
                  const AdamWParams& hp, const std::function<bool(const std::string&)>& decay) {
  ++opt.step;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(opt.step));
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) throw std::invalid_argument("adamw_update: no gradient for '" + name + "'");
    const TensorF& g = git->second;
    require_same_shape(g.shape(), p.shape(), ("adamw_update(" + name + ")").c_str());
    TensorF& m = opt.m.try_emplace(name, p.shape()).first->second;
    TensorF& v = opt.v.try_emplace(name, p.shape()).first->second;
    const bool wd = hp.weight_decay > 0.0 && decay && decay(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      double x = p[i];
      if (wd) x -= lr * hp.weight_decay * x;
      const double gi = g[i];
      const double mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
      const double vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      x -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + hp.eps);
      p[i] = static_cast<float>(x);
    }
  }
}

double sample_loss_and_grad(const ModelParams<float>& params, const ModelConfig& cfg, const TrainingTuple& tuple,
                            ModelParams<float>* grads) {
  Tape<float> tape;
  tape.set_recording(grads != nullptr);
  auto bound = bind_params(tape, params, grads != nullptr);
  Var<float> v = forward(tape, tokenize(tape, tuple.field_input(), cfg, bound), cfg, bound);
  Var<float> loss = cfm_loss(v, tape.constant(tuple.u_target));
  const double value = loss.value().item();
  if (grads) {
    tape.backward(loss);
    for (const auto& [name, var] : bound) (*grads)[name] = tape.grad(var);
  }
  return value;
}

double batch_loss(const ModelParams<float>& params, const ModelConfig& cfg, const std::vector<TrainingTuple>& batch) {
  double total = 0.0;
  for (const auto& tp : batch) total += sample_loss_and_grad(params, cfg, tp, nullptr);
  return total / static_cast<double>(batch.size());
}

StepResult train_step(ModelParams<float>& params, OptimizerState& opt, const std::vector<TrainingTuple>& batch,
                      const ModelConfig& mcfg, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  for (const auto& tp : batch) {
    if ((mcfg.mode == Mode::predict) != (tp.cond_index.size() == 1)) {
      throw ModeMismatch("train_step: tuple does not match model mode " + std::string(to_string(mcfg.mode)));
    }
  }
  const std::size_t n = batch.size();
  std::vector<double> losses(n);
  ModelParams<float> sum;

  if (cfg.threads <= 1) {
    for (std::size_t k = 0; k < n; ++k) {
      ModelParams<float> g;
      losses[k] = sample_loss_and_grad(params, mcfg, batch[k], &g);
      if (k == 0) {
        sum = std::move(g);
      } else {
        for (auto& [name, t] : sum) {
          const auto& src = g.at(name);
          for (std::size_t i = 0; i < t.numel(); ++i) t[i] += src[i];
        }
      }
    }
  } else {
    // Per-sample gradients in parallel, then the same batch-order reduction.
    std::vector<ModelParams<float>> grads(n);
    std::vector<std::exception_ptr> errors(n);
    const std::size_t workers = std::min(cfg.threads, n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < n; k += workers) {
          try {
            losses[k] = sample_loss_and_grad(params, mcfg, batch[k], &grads[k]);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    sum = std::move(grads[0]);
    for (std::size_t k = 1; k < n; ++k) {
      for (auto& [name, t] : sum) {
        const auto& src = grads[k].at(name);
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] += src[i];
      }
    }
  }

  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw NonFiniteError("train_step loss", opt.step + 1, loss);

  const float inv = 1.0f / static_cast<float>(n);
  for (auto& [name, t] : sum) {
    for (auto& x : t.data()) x *= inv;
  }
  const double lr = lr_schedule(opt.step + 1, cfg);
  adamw_update(params, sum, opt, lr, AdamWParams{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay});
  return StepResult{loss, lr};
}

TrainState init_train_state(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::derive(seed, "init");
  return TrainState{init_params<float>(cfg, rng), {}};
}

std::vector<TrainingTuple> sample_batch(const Dataset& latents, const ModelConfig& mcfg, const TrainConfig& cfg,
                                        std::size_t iter) {
  if (latents.clips.empty()) throw std::invalid_argument("training dataset is empty");
  Rng rng = Rng::derive(cfg.seed, "train", iter);
  const PathParams path{cfg.sigma_min};
  std::vector<TrainingTuple> batch;
  batch.reserve(cfg.batch_size);
  for (std::size_t k = 0; k < cfg.batch_size; ++k) {
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(latents.clips.size()) - 1));
    const Clip& clip = latents.clips[idx];
    if (cfg.augment_brightness > 0.0) {
      const double delta = cfg.augment_brightness * (2.0 * rng.uniform() - 1.0);
      batch.push_back(sample_training_tuple(shift_brightness(clip, static_cast<float>(delta)), path, mcfg, rng));
    } else {
      batch.push_back(sample_training_tuple(clip, path, mcfg, rng));
    }
  }
  return batch;
}

void train_loop(const Dataset& latents, const ModelConfig& mcfg, const TrainConfig& cfg, TrainState& state,
                const TrainCallbacks& cb) {
  mcfg.validate();
  cfg.validate();
  check_params(mcfg, state.params);
  if (latents.clips.empty()) throw std::invalid_argument("training dataset is empty");
  if (latents.frame_shape() != mcfg.latent_shape()) {
    throw ShapeError("dataset frames " + latents.frame_shape().str() + " do not match model latent " +
                     mcfg.latent_shape().str());
  }
  for (const auto& clip : latents.clips) validate_clip(clip);
  for (std::size_t iter = state.opt.step + 1; iter <= cfg.iterations; ++iter) {
    const auto batch = sample_batch(latents, mcfg, cfg, iter);
    const StepResult r = train_step(state.params, state.opt, batch, mcfg, cfg);
    if (cb.on_step) cb.on_step(iter, r);
    if (cb.on_checkpoint && cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) cb.on_checkpoint(state);
  }
}

}  // namespace vidflow
