#pragma once

// Conditional Gaussian probability path from N(0, I) at t=0 to a near-delta at
// the data point x1 at t=1:
//   mean(t)  = t * x1
//   std(t)   = 1 - (1 - sigma_min) * t
//   psi_t(e) = mean(t) + std(t) * e
// and the field that generates it,
//   u_t(x | x1) = (x1 - (1 - sigma_min) x) / (1 - (1 - sigma_min) t).
//
// The denominator depends on t. Without the t the denominator would be the
// constant sigma_min, which does not generate the linear path above (the
// field/path consistency test in tests/test_flow.cpp pins this form).

#include <stdexcept>

#include "vidflow/autodiff.hpp"
#include "vidflow/rng.hpp"
#include "vidflow/tensor.hpp"

namespace vidflow {

struct PathParams {
  double sigma_min = 1e-7;

  PathParams() = default;
  explicit PathParams(double s);
};

template <class T>
struct PathPoint {
  double t = 0.0;
  Tensor<T> x;  // noisy sample
  Tensor<T> u;  // target field at (t, x)
};

/// t * x1. Rejects t outside [0, 1].
template <class T>
Tensor<T> mean_schedule(double t, const Tensor<T>& x1);

/// 1 - (1 - sigma_min) * t. Rejects t outside [0, 1].
double std_schedule(double t, const PathParams& p);

/// mean_schedule(t, x1) + std_schedule(t, p) * e with e ~ N(0, I) drawn from `rng`
/// in row-major order (one normal per element, nothing else consumed).
template <class T>
Tensor<T> sample_conditional(double t, const Tensor<T>& x1, const PathParams& p, Rng& rng);

/// Target field u_t(x | x1). Requires t in [0, 1).
template <class T>
Tensor<T> target_field(double t, const Tensor<T>& x, const Tensor<T>& x1, const PathParams& p);

/// Draws x ~ p_t(x | x1) and evaluates the target field there.
template <class T>
PathPoint<T> sample_path_point(double t, const Tensor<T>& x1, const PathParams& p, Rng& rng);

/// Mean squared error over all elements.
template <class T>
double cfm_loss(const Tensor<T>& v_pred, const Tensor<T>& u_target);

/// Differentiable form of cfm_loss.
template <class T>
Var<T> cfm_loss(Var<T> v_pred, Var<T> u_target) {
  return ad::mse<T>(v_pred, u_target);
}

}  // namespace vidflow
