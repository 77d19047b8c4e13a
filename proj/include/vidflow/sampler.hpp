#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vidflow/errors.hpp"
#include "vidflow/flow.hpp"
#include "vidflow/model.hpp"
#include "vidflow/rng.hpp"

namespace vidflow {

enum class Solver { euler, midpoint };

const char* to_string(Solver s);
Solver parse_solver(const std::string& s);

struct SampleConfig {
  int n_steps = 10;           // global step density N; t_i = s + i/N
  double warm_start_s = 0.0;  // start time s in [0, 1)
  int context_limit = 0;      // L >= 2 restricts c to {T-L..T-2}; 0 = unlimited
  std::uint64_t seed = 0;
  Solver solver = Solver::euler;
  double sigma_min = 1e-7;

  void validate() const;
};

/// ceil(n_steps * (1 - s)), robust to rounding in the product.
std::size_t steps_for(int n_steps, double s);

/// s, s + 1/N, ..., 1 (steps_for + 1 points, last one exactly 1).
std::vector<double> make_time_grid(int n_steps, double s);

using StateField = std::function<TensorF(const TensorF& x, double t)>;

/// Fixed-step integration over `grid`. `begin_step(i)` runs once before the
/// field evaluations of step i (midpoint evaluates twice per step).
/// Throws NonFiniteError naming the step when the state stops being finite.
TensorF integrate(TensorF x, const std::vector<double>& grid, Solver solver, const StateField& field,
                  const std::function<void(std::size_t)>& begin_step = {});

std::size_t evals_per_step(Solver s);

/// A vector field plus the configuration that says how to condition it.
struct FlowModel {
  ModelConfig cfg;
  std::function<TensorF(const FieldInput<float>&)> field;
};

/// Wraps trained parameters (copied into the closure).
FlowModel network_model(const ModelConfig& cfg, ModelParams<float> params);

/// sample_conditional(s, prev_frame); at s = 0 this is exactly the N(0, I) draw.
TensorF warm_start_init(const TensorF& prev_frame, double s, const PathParams& p, Rng& rng);

struct NextFrame {
  TensorF frame;
  std::vector<int> conditions;  // 1-based condition frame index per step
  std::size_t network_evals = 0;
};

/// Legal condition indices {lo..T-2} for predicting frame T (1-based),
/// restricted by context_limit and the model's max_distance.
std::pair<int, int> condition_window(int T, int context_limit, int max_distance);

/// Predicts frame T = history.size() + 1. Draw order: initial state, then one
/// condition index per step.
NextFrame predict_next_frame(const std::vector<TensorF>& history, const FlowModel& model, const SampleConfig& cfg,
                             Rng& rng);

struct Rollout {
  std::vector<TensorF> frames;
  std::size_t network_evals = 0;
  std::vector<std::vector<int>> per_frame_conditions;
};

Rollout rollout(const std::vector<TensorF>& context, std::size_t n_future, const FlowModel& model,
                const SampleConfig& cfg, Rng& rng);

struct Interpolation {
  std::vector<TensorF> frames;  // the n_between infilled frames
  std::size_t network_evals = 0;
  std::vector<std::vector<std::pair<int, int>>> per_frame_conditions;  // (past, future) positions
};

/// Infills n_between frames between source (position 0) and target (position
/// n_between + 1) in temporal order. Each step draws a past condition from the
/// fixed frames before the slot; the target is the future condition. Distances
/// are signed offsets (condition position - slot position).
Interpolation interpolate(const TensorF& source, const TensorF& target, std::size_t n_between, const FlowModel& model,
                          const SampleConfig& cfg, Rng& rng);

}  // namespace vidflow
