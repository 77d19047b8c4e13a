#include "vidflow/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace vidflow {

const char* to_string(Solver s) { return s == Solver::euler ? "euler" : "midpoint"; }

Solver parse_solver(const std::string& s) {
  if (s == "euler") return Solver::euler;
  if (s == "midpoint") return Solver::midpoint;
  throw std::invalid_argument("unknown solver '" + s + "' (expected euler|midpoint)");
}

void SampleConfig::validate() const {
  if (n_steps < 1) throw std::invalid_argument("sample.n_steps must be >= 1");
  if (!(warm_start_s >= 0.0 && warm_start_s < 1.0)) throw std::invalid_argument("sample.warm_start_s must be in [0, 1)");
  if (context_limit != 0 && context_limit < 2) throw std::invalid_argument("sample.context_limit must be 0 or >= 2");
  PathParams{sigma_min};
}

std::size_t steps_for(int n_steps, double s) {
  if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
  if (!(s >= 0.0 && s < 1.0)) throw std::invalid_argument("warm start s must be in [0, 1)");
  // 10 * (1 - 0.4) is 6.000000000000001 in binary; the slack keeps ceil exact
  return static_cast<std::size_t>(std::ceil(static_cast<double>(n_steps) * (1.0 - s) - 1e-9));
}

std::vector<double> make_time_grid(int n_steps, double s) {
  const std::size_t k = steps_for(n_steps, s);
  std::vector<double> grid(k + 1);
  for (std::size_t i = 0; i < k; ++i) grid[i] = s + static_cast<double>(i) / n_steps;
  grid[k] = 1.0;
  return grid;
}

std::size_t evals_per_step(Solver s) { return s == Solver::euler ? 1 : 2; }

namespace {

TensorF axpy(const TensorF& x, double a, const TensorF& v) {
  require_same_shape(x.shape(), v.shape(), "integrate: field");
  TensorF out = x;
  const float af = static_cast<float>(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += af * v[i];
  return out;
}

}  // namespace

TensorF integrate(TensorF x, const std::vector<double>& grid, Solver solver, const StateField& field,
                  const std::function<void(std::size_t)>& begin_step) {
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    if (begin_step) begin_step(i);
    const double t = grid[i], dt = grid[i + 1] - grid[i];
    if (solver == Solver::euler) {
      x = axpy(x, dt, field(x, t));
    } else {
      const TensorF mid = axpy(x, 0.5 * dt, field(x, t));
      x = axpy(x, dt, field(mid, t + 0.5 * dt));
    }
    if (!x.all_finite()) {
      const auto bad = std::find_if(x.data().begin(), x.data().end(), [](float v) { return !std::isfinite(v); });
      throw NonFiniteError("integrate", i, *bad);
    }
  }
  return x;
}

FlowModel network_model(const ModelConfig& cfg, ModelParams<float> params) {
  check_params(cfg, params);
  auto shared = std::make_shared<const ModelParams<float>>(std::move(params));
  return FlowModel{cfg, [shared, cfg](const FieldInput<float>& in) { return evaluate_field(*shared, cfg, in); }};
}

TensorF warm_start_init(const TensorF& prev_frame, double s, const PathParams& p, Rng& rng) {
  if (!(s >= 0.0 && s < 1.0)) throw std::invalid_argument("warm start s must be in [0, 1)");
  return sample_conditional(s, prev_frame, p, rng);
}

std::pair<int, int> condition_window(int T, int context_limit, int max_distance) {
  int lo = 1;
  if (context_limit > 0) lo = std::max(lo, T - context_limit);
  if (max_distance > 0) lo = std::max(lo, T - max_distance);
  const int hi = T - 2;
  if (lo > hi) {
    throw std::invalid_argument("no legal condition frame for frame " + std::to_string(T) + " (max_distance " +
                                std::to_string(max_distance) + ")");
  }
  return {lo, hi};
}

NextFrame predict_next_frame(const std::vector<TensorF>& history, const FlowModel& model, const SampleConfig& cfg,
                             Rng& rng) {
  if (model.cfg.mode != Mode::predict) throw ModeMismatch("predict_next_frame needs a predict-mode model");
  if (history.size() < 2) throw std::invalid_argument("predict_next_frame: history needs >= 2 frames");
  cfg.validate();
  for (const auto& f : history) require_same_shape(f.shape(), model.cfg.latent_shape(), "history frame");
  const int T = static_cast<int>(history.size()) + 1;
  const auto [lo, hi] = condition_window(T, cfg.context_limit, model.cfg.max_distance);
  const PathParams path{cfg.sigma_min};

  NextFrame out;
  TensorF x0 = warm_start_init(history.back(), cfg.warm_start_s, path, rng);
  const std::vector<double> grid = make_time_grid(cfg.n_steps, cfg.warm_start_s);
  int c = 0;
  auto begin = [&](std::size_t) {
    c = static_cast<int>(rng.uniform_int(lo, hi));
    out.conditions.push_back(c);
  };
  auto field = [&](const TensorF& x, double t) {
    FieldInput<float> in;
    in.x = x;
    if (model.cfg.use_reference) in.ref = history[static_cast<std::size_t>(T - 2)];
    in.conds = {history[static_cast<std::size_t>(c - 1)]};
    in.dists = {T - c};
    in.t = t;
    ++out.network_evals;
    return model.field(in);
  };
  out.frame = integrate(std::move(x0), grid, cfg.solver, field, begin);
  return out;
}

Rollout rollout(const std::vector<TensorF>& context, std::size_t n_future, const FlowModel& model,
                const SampleConfig& cfg, Rng& rng) {
  if (context.size() < 2) throw std::invalid_argument("rollout: context needs >= 2 frames");
  Rollout r;
  std::vector<TensorF> history = context;
  for (std::size_t k = 0; k < n_future; ++k) {
    NextFrame nf = predict_next_frame(history, model, cfg, rng);
    r.network_evals += nf.network_evals;
    r.per_frame_conditions.push_back(std::move(nf.conditions));
    history.push_back(nf.frame);
    r.frames.push_back(std::move(nf.frame));
  }
  return r;
}

Interpolation interpolate(const TensorF& source, const TensorF& target, std::size_t n_between, const FlowModel& model,
                          const SampleConfig& cfg, Rng& rng) {
  if (model.cfg.mode != Mode::interpolate) throw ModeMismatch("interpolate needs an interpolate-mode model");
  cfg.validate();
  require_same_shape(source.shape(), model.cfg.latent_shape(), "interpolate source");
  require_same_shape(target.shape(), model.cfg.latent_shape(), "interpolate target");
  const int last = static_cast<int>(n_between) + 1;
  const int maxd = model.cfg.max_distance;
  if (n_between > 0 && last - 1 > maxd) {
    throw std::invalid_argument("interpolate: gap of " + std::to_string(last) + " exceeds max_distance " +
                                std::to_string(maxd));
  }
  const PathParams path{cfg.sigma_min};
  std::vector<TensorF> seq{source};  // positions 0..j-1 are fixed
  Interpolation out;
  for (int j = 1; j < last; ++j) {
    const int lo = std::max(0, j - maxd);
    std::vector<std::pair<int, int>> used;
    TensorF x0 = warm_start_init(seq.back(), cfg.warm_start_s, path, rng);
    int cp = 0;
    auto begin = [&](std::size_t) {
      cp = static_cast<int>(rng.uniform_int(lo, j - 1));
      used.emplace_back(cp, last);
    };
    auto field = [&](const TensorF& x, double t) {
      FieldInput<float> in;
      in.x = x;
      in.conds = {seq[static_cast<std::size_t>(cp)], target};
      in.dists = {cp - j, last - j};
      in.t = t;
      ++out.network_evals;
      return model.field(in);
    };
    TensorF frame = integrate(std::move(x0), make_time_grid(cfg.n_steps, cfg.warm_start_s), cfg.solver, field, begin);
    seq.push_back(frame);
    out.frames.push_back(std::move(frame));
    out.per_frame_conditions.push_back(std::move(used));
  }
  return out;
}

}  // namespace vidflow
