#include "vidflow/flow.hpp"

#include <string>

namespace vidflow {
namespace {

void check_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error(std::string(what) + ": t=" + std::to_string(t) + " outside [0,1]");
}

}  // namespace

PathParams::PathParams(double s) : sigma_min(s) {
  if (!(s > 0.0 && s < 1.0)) throw std::domain_error("sigma_min must lie in (0,1), got " + std::to_string(s));
}

template <class T>
Tensor<T> mean_schedule(double t, const Tensor<T>& x1) {
  check_time(t, "mean_schedule");
  Tensor<T> out(x1.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(t * static_cast<double>(x1[i]));
  return out;
}

double std_schedule(double t, const PathParams& p) {
  check_time(t, "std_schedule");
  return 1.0 - (1.0 - p.sigma_min) * t;
}

template <class T>
Tensor<T> sample_conditional(double t, const Tensor<T>& x1, const PathParams& p, Rng& rng) {
  const double sigma = std_schedule(t, p);
  Tensor<T> out = rng.normal_tensor<T>(x1.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<T>(t * static_cast<double>(x1[i]) + sigma * static_cast<double>(out[i]));
  }
  return out;
}

template <class T>
Tensor<T> target_field(double t, const Tensor<T>& x, const Tensor<T>& x1, const PathParams& p) {
  require_same_shape(x.shape(), x1.shape(), "target_field");
  if (!(t >= 0.0 && t < 1.0)) throw std::domain_error("target_field: t=" + std::to_string(t) + " outside [0,1)");
  const double a = 1.0 - p.sigma_min;
  const double denom = 1.0 - a * t;
  if (!(denom > 0.0)) throw std::domain_error("target_field: non-positive denominator");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = static_cast<T>((static_cast<double>(x1[i]) - a * static_cast<double>(x[i])) / denom);
  }
  return out;
}

template <class T>
PathPoint<T> sample_path_point(double t, const Tensor<T>& x1, const PathParams& p, Rng& rng) {
  PathPoint<T> pt;
  pt.t = t;
  pt.x = sample_conditional(t, x1, p, rng);
  pt.u = target_field(t, pt.x, x1, p);
  return pt;
}

template <class T>
double cfm_loss(const Tensor<T>& v_pred, const Tensor<T>& u_target) {
  require_same_shape(v_pred.shape(), u_target.shape(), "cfm_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < v_pred.numel(); ++i) {
    const double d = static_cast<double>(v_pred[i]) - static_cast<double>(u_target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(v_pred.numel());
}

#define VIDFLOW_INSTANTIATE(T)                                                                         \
  template Tensor<T> mean_schedule<T>(double, const Tensor<T>&);                                      \
  template Tensor<T> sample_conditional<T>(double, const Tensor<T>&, const PathParams&, Rng&);        \
  template Tensor<T> target_field<T>(double, const Tensor<T>&, const Tensor<T>&, const PathParams&);  \
  template PathPoint<T> sample_path_point<T>(double, const Tensor<T>&, const PathParams&, Rng&);      \
  template double cfm_loss<T>(const Tensor<T>&, const Tensor<T>&);

VIDFLOW_INSTANTIATE(float)
VIDFLOW_INSTANTIATE(double)

#undef VIDFLOW_INSTANTIATE

}  // namespace vidflow
