#include "vidflow/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <mutex>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vidflow {
namespace {

// Tapes allocate and free many short-lived buffers of a few hundred KB. glibc
// serves those with mmap/munmap by default, so every op pays page faults.
// Keep them on the heap instead.
void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

}  // namespace

template <class T>
Tape<T>::Tape() {
  tune_allocator();
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad && recording_});
  return Var<T>{this, nodes_.size() - 1};
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, Backward backward) {
  bool needs = false;
  if (recording_) {
    for (const auto& in : inputs) {
      if (in.tape != this) throw std::logic_error("Tape::record: input from a different tape");
      needs = needs || nodes_[in.id].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
  return Var<T>{this, nodes_.size() - 1};
}

template <class T>
std::span<T> Tape<T>::grad_buffer(Var<T> v) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
  return n.grad.data();
}

template <class T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor<T>::zeros(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw std::logic_error("Tape::backward: loss from a different tape");
  const Node& ln = nodes_.at(loss.id);
  if (ln.value.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + ln.value.shape().str());
  }
  for (auto& n : nodes_) n.grad = Tensor<T>();
  if (!ln.requires_grad) return;
  grad_buffer(loss)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(n.grad, n.value);
  }
}

template class Tape<float>;
template class Tape<double>;

namespace ad {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using MapM = Eigen::Map<RowMat<T>>;

template <class T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
  if (a.tape != b.tape || a.tape == nullptr) throw std::logic_error("operands live on different tapes");
  return *a.tape;
}

template <class T>
void check_suffix(const Shape& a, const Shape& b, const char* op) {
  if (!a.ends_with(b)) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + b.str() + " onto " + a.str());
  }
}

template <class T, class F, class GA, class GB>
Var<T> binary(Var<T> a, Var<T> b, const char* name, F f, GA ga, GB gb) {
  Tape<T>& tape = tape_of(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  check_suffix<T>(av.shape(), bv.shape(), name);
  const std::size_t inner = bv.numel();
  Tensor<T> out(av.shape());
  auto o = out.data();
  auto x = av.data();
  auto y = bv.data();
  for (std::size_t r = 0; r < o.size(); r += inner) {
    for (std::size_t j = 0; j < inner; ++j) o[r + j] = f(x[r + j], y[j]);
  }
  return tape.record(std::move(out), {a, b}, [a, b, inner, ga, gb](const Tensor<T>& g, const Tensor<T>&) {
    auto gd = g.data();
    auto x = a.value().data();
    auto y = b.value().data();
    if (auto da = a.tape->grad_buffer(a); !da.empty()) {
      for (std::size_t r = 0; r < gd.size(); r += inner) {
        for (std::size_t j = 0; j < inner; ++j) da[r + j] += ga(gd[r + j], x[r + j], y[j]);
      }
    }
    if (auto db = b.tape->grad_buffer(b); !db.empty()) {
      for (std::size_t r = 0; r < gd.size(); r += inner) {
        for (std::size_t j = 0; j < inner; ++j) db[j] += gb(gd[r + j], x[r + j], y[j]);
      }
    }
  });
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.rank(), 1);
  for (std::size_t i = s.rank(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// out[perm-indexed] = in; `scatter` reverses the direction and accumulates.
template <class T>
void permute_copy(std::span<const T> in, const Shape& in_shape, std::span<const std::size_t> perm,
                  std::span<T> out, bool scatter) {
  const std::size_t r = in_shape.rank();
  const auto in_strides = strides_of(in_shape);
  std::vector<std::size_t> out_dims(r), src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_dims[i] = in_shape[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  std::vector<std::size_t> idx(r, 0);
  const std::size_t n = in.size();
  const std::size_t last = out_dims[r - 1];
  const std::size_t last_stride = src_stride[r - 1];
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; o += last) {
    if (scatter) {
      for (std::size_t j = 0; j < last; ++j) out[src + j * last_stride] += in[o + j];
    } else {
      for (std::size_t j = 0; j < last; ++j) out[o + j] = in[src + j * last_stride];
    }
    // advance the multi-index over all but the last axis
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < out_dims[ax]) break;
      src -= src_stride[ax] * out_dims[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape->record(std::move(out), {a}, [a, s](const Tensor<T>& g, const Tensor<T>&) {
    auto da = a.tape->grad_buffer(a);
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) da[i] += s * gd[i];
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  const auto x = a.value().data();
  T acc = std::accumulate(x.begin(), x.end(), T(0));
  return a.tape->record(Tensor<T>::scalar(acc), {a}, [a](const Tensor<T>& g, const Tensor<T>&) {
    for (auto& d : a.tape->grad_buffer(a)) d += g[0];
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  return scale<T>(sum<T>(a), T(1) / static_cast<T>(a.value().numel()));
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.rank() < 2 || sb.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + sa.str() + " and " + sb.str());
  }
  const std::size_t m = sa[sa.rank() - 2], k = sa.back();
  const std::size_t kb = sb[sb.rank() - 2], n = sb.back();
  const bool b_plain = sb.rank() == 2;
  const bool a_plain = sa.rank() == 2;
  bool batch_ok = k == kb;
  if (batch_ok && !a_plain && !b_plain) {
    batch_ok = sa.rank() == sb.rank() && std::equal(sa.dims().begin(), sa.dims().end() - 2, sb.dims().begin());
  }
  if (!batch_ok) throw ShapeError("matmul: incompatible shapes " + sa.str() + " and " + sb.str());

  std::vector<std::size_t> out_dims = (b_plain ? sa : sb).dims();
  out_dims[out_dims.size() - 2] = m;
  out_dims.back() = n;
  const std::size_t batch = b_plain ? sa.leading(2) : sb.leading(2);
  Tensor<T> out{Shape(out_dims)};

  const T* ap = a.value().data().data();
  const T* bp = b.value().data().data();
  T* op = out.data().data();
  if (b_plain) {
    MapM<T>(op, batch * m, n).noalias() = MapC<T>(ap, batch * m, k) * MapC<T>(bp, k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const T* ai = a_plain ? ap : ap + i * m * k;
      MapM<T>(op + i * m * n, m, n).noalias() = MapC<T>(ai, m, k) * MapC<T>(bp + i * k * n, k, n);
    }
  }

  return tape.record(std::move(out), {a, b}, [a, b, batch, m, k, n, a_plain, b_plain](const Tensor<T>& g, const Tensor<T>&) {
    const T* gp = g.data().data();
    const T* ap = a.value().data().data();
    const T* bp = b.value().data().data();
    auto da = a.tape->grad_buffer(a);
    auto db = b.tape->grad_buffer(b);
    if (b_plain) {
      if (!da.empty()) MapM<T>(da.data(), batch * m, k).noalias() += MapC<T>(gp, batch * m, n) * MapC<T>(bp, k, n).transpose();
      if (!db.empty()) MapM<T>(db.data(), k, n).noalias() += MapC<T>(ap, batch * m, k).transpose() * MapC<T>(gp, batch * m, n);
      return;
    }
    for (std::size_t i = 0; i < batch; ++i) {
      const T* gi = gp + i * m * n;
      const T* bi = bp + i * k * n;
      const std::size_t aoff = a_plain ? 0 : i * m * k;
      if (!da.empty()) MapM<T>(da.data() + aoff, m, k).noalias() += MapC<T>(gi, m, n) * MapC<T>(bi, k, n).transpose();
      if (!db.empty()) MapM<T>(db.data() + i * k * n, k, n).noalias() += MapC<T>(ap + aoff, m, k).transpose() * MapC<T>(gi, m, n);
    }
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  const Shape sx = x.shape();
  const Shape& sw = w.shape();
  if (sw.rank() != 2 || sx.back() != sw[0] || bias.shape() != Shape{sw[1]}) {
    throw ShapeError("linear: incompatible shapes x" + sx.str() + " w" + sw.str() + " bias" + bias.shape().str());
  }
  const std::size_t rows = sx.leading(1), k = sw[0], n = sw[1];
  std::vector<std::size_t> dims = sx.dims();
  dims.back() = n;
  Tensor<T> out{Shape(dims)};
  MapM<T> o(out.data().data(), rows, n);
  o.noalias() = MapC<T>(x.value().data().data(), rows, k) * MapC<T>(w.value().data().data(), k, n);
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data().data(), n);
  return x.tape->record(std::move(out), {x, w, bias}, [x, w, bias, rows, k, n](const Tensor<T>& g, const Tensor<T>&) {
    MapC<T> go(g.data().data(), rows, n);
    if (auto dx = x.tape->grad_buffer(x); !dx.empty()) {
      MapM<T>(dx.data(), rows, k).noalias() += go * MapC<T>(w.value().data().data(), k, n).transpose();
    }
    if (auto dw = w.tape->grad_buffer(w); !dw.empty()) {
      MapM<T>(dw.data(), k, n).noalias() += MapC<T>(x.value().data().data(), rows, k).transpose() * go;
    }
    if (auto db = bias.tape->grad_buffer(bias); !db.empty()) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(db.data(), n) += go.colwise().sum();
    }
  });
}

template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.rank()) throw ShapeError("concat: axis out of range for " + s0.str());
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.rank() == s0.rank();
    for (std::size_t i = 0; ok && i < s.rank(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + s0.str() + " and " + s.str());
    extents.push_back(s[axis]);
    total += s[axis];
  }
  std::vector<std::size_t> dims = s0.dims();
  dims[axis] = total;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
  const std::size_t outer = s0.leading(s0.rank() - axis);
  Tensor<T> out{Shape(dims)};
  auto o = out.data();
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].value().data();
    const std::size_t w = extents[p] * inner;
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(src.begin() + r * w, w, o.begin() + r * total * inner + offset);
    }
    offset += w;
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), inputs, [inputs, extents, inner, outer, total](const Tensor<T>& g, const Tensor<T>&) {
    auto gd = g.data();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      const std::size_t w = extents[p] * inner;
      if (auto d = inputs[p].tape->grad_buffer(inputs[p]); !d.empty()) {
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t j = 0; j < w; ++j) d[r * w + j] += gd[r * total * inner + offset + j];
        }
      }
      offset += w;
    }
  });
}

template <class T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.rank() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + s.str());
  }
  std::vector<std::size_t> dims = s.dims();
  dims[axis] = end - begin;
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
  const std::size_t outer = s.leading(s.rank() - axis);
  const std::size_t src_w = s[axis] * inner, w = (end - begin) * inner, off = begin * inner;
  Tensor<T> out{Shape(dims)};
  auto src = a.value().data();
  auto o = out.data();
  for (std::size_t r = 0; r < outer; ++r) std::copy_n(src.begin() + r * src_w + off, w, o.begin() + r * w);
  return a.tape->record(std::move(out), {a}, [a, outer, src_w, w, off](const Tensor<T>& g, const Tensor<T>&) {
    auto d = a.tape->grad_buffer(a);
    auto gd = g.data();
    for (std::size_t r = 0; r < outer; ++r) {
      for (std::size_t j = 0; j < w; ++j) d[r * src_w + off + j] += gd[r * w + j];
    }
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a}, [a](const Tensor<T>& g, const Tensor<T>&) {
    auto d = a.tape->grad_buffer(a);
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) d[i] += gd[i];
  });
}

template <class T>
Var<T> permute(Var<T> a, std::span<const std::size_t> perm) {
  const Shape& s = a.shape();
  std::vector<std::size_t> p(perm.begin(), perm.end());
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  bool ok = p.size() == s.rank();
  for (std::size_t i = 0; ok && i < sorted.size(); ++i) ok = sorted[i] == i;
  if (!ok) throw ShapeError("permute: invalid permutation for shape " + s.str());
  std::vector<std::size_t> dims(s.rank());
  for (std::size_t i = 0; i < dims.size(); ++i) dims[i] = s[p[i]];
  Tensor<T> out{Shape(dims)};
  permute_copy<T>(a.value().data(), s, p, out.data(), false);
  return a.tape->record(std::move(out), {a}, [a, p](const Tensor<T>& g, const Tensor<T>&) {
    auto d = a.tape->grad_buffer(a);
    permute_copy<T>(g.data(), a.shape(), p, d, true);
  });
}

template <class T>
Var<T> transpose_last_two(Var<T> a) {
  const std::size_t r = a.shape().rank();
  if (r < 2) throw ShapeError("transpose_last_two: rank < 2 for " + a.shape().str());
  std::vector<std::size_t> p(r);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::swap(p[r - 1], p[r - 2]);
  return permute<T>(a, p);
}

template <class T>
Var<T> softmax(Var<T> x) {
  const std::size_t n = x.shape().back();
  Tensor<T> out = x.value();
  const std::size_t rows = out.numel() / n;
  MapM<T> o(out.data().data(), rows, n);
  o.colwise() -= o.rowwise().maxCoeff();
  o = o.array().exp().matrix();
  o.array().colwise() /= o.rowwise().sum().array();
  return x.tape->record(std::move(out), {x}, [x, n](const Tensor<T>& g, const Tensor<T>& y) {
    auto d = x.tape->grad_buffer(x);
    auto yv = y.data();
    auto gd = g.data();
    for (std::size_t r = 0; r < gd.size(); r += n) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += gd[r + j] * yv[r + j];
      for (std::size_t j = 0; j < n; ++j) d[r + j] += yv[r + j] * (gd[r + j] - dot);
    }
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain/bias " + gain.shape().str() + "/" + bias.shape().str() +
                     " do not match feature size of " + x.shape().str());
  }
  const auto xv = x.value().data();
  const std::size_t rows = xv.size() / d;
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd(rows);
  auto xh = xhat.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) xh[r * d + j] = (row[j] - mu) * rstd[r];
  }
  Tensor<T> out(x.shape());
  auto o = out.data();
  const auto gv = gain.value().data();
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xh[i] * gv[i % d] + bv[i % d];
  return x.tape->record(std::move(out), {x, gain, bias},
                        [x, gain, bias, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor<T>& g, const Tensor<T>&) {
                          auto gd = g.data();
                          auto xh = xhat.data();
                          const auto gv = gain.value().data();
                          if (auto dg = gain.tape->grad_buffer(gain); !dg.empty()) {
                            for (std::size_t i = 0; i < gd.size(); ++i) dg[i % d] += gd[i] * xh[i];
                          }
                          if (auto db = bias.tape->grad_buffer(bias); !db.empty()) {
                            for (std::size_t i = 0; i < gd.size(); ++i) db[i % d] += gd[i];
                          }
                          auto dx = x.tape->grad_buffer(x);
                          if (dx.empty()) return;
                          const T inv_d = T(1) / static_cast<T>(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T m1 = 0, m2 = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                              const T dxh = gd[r * d + j] * gv[j];
                              m1 += dxh;
                              m2 += dxh * xh[r * d + j];
                            }
                            m1 *= inv_d;
                            m2 *= inv_d;
                            for (std::size_t j = 0; j < d; ++j) {
                              const T dxh = gd[r * d + j] * gv[j];
                              dx[r * d + j] += rstd[r] * (dxh - m1 - xh[r * d + j] * m2);
                            }
                          }
                        });
}

namespace {
// tanh-approximation constants: sqrt(2/pi) and the cubic coefficient.
constexpr double kGeluC = 0.7978845608;
constexpr double kGeluA = 0.044715;
}  // namespace

template <class T>
Var<T> gelu(Var<T> x) {
  Tensor<T> out = x.value();
  const T c = static_cast<T>(kGeluC), a3 = static_cast<T>(kGeluA);
  auto v = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(out.data().data(), static_cast<Eigen::Index>(out.numel()));
  v = T(0.5) * v * (T(1) + (c * (v + a3 * v.cube())).tanh());
  return x.tape->record(std::move(out), {x}, [x, c, a3](const Tensor<T>& g, const Tensor<T>&) {
    auto d = x.tape->grad_buffer(x);
    auto xv = x.value().data();
    auto gd = g.data();
    Eigen::Array<T, Eigen::Dynamic, 1> th =
        Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>(xv.data(), static_cast<Eigen::Index>(xv.size()));
    th = (c * (th + a3 * th.cube())).tanh();
    for (std::size_t i = 0; i < gd.size(); ++i) {
      const T v = xv[i];
      const T dydx = T(0.5) * (T(1) + th[i]) + T(0.5) * v * (T(1) - th[i] * th[i]) * c * (T(1) + T(3) * a3 * v * v);
      d[i] += gd[i] * dydx;
    }
  });
}

template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  const auto x = a.value().data();
  const auto y = b.value().data();
  T acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  const T inv_n = T(1) / static_cast<T>(x.size());
  return tape_of(a, b).record(Tensor<T>::scalar(acc * inv_n), {a, b}, [a, b, inv_n](const Tensor<T>& g, const Tensor<T>&) {
    const auto x = a.value().data();
    const auto y = b.value().data();
    const T s = T(2) * inv_n * g[0];
    if (auto da = a.tape->grad_buffer(a); !da.empty()) {
      for (std::size_t i = 0; i < x.size(); ++i) da[i] += s * (x[i] - y[i]);
    }
    if (auto db = b.tape->grad_buffer(b); !db.empty()) {
      for (std::size_t i = 0; i < x.size(); ++i) db[i] -= s * (x[i] - y[i]);
    }
  });
}

template <class T>
Var<T> multi_head_attention(Var<T> qkv, std::size_t heads) {
  const Shape s = qkv.shape();
  if (s.rank() < 2 || s.back() % 3 != 0 || heads == 0 || (s.back() / 3) % heads != 0) {
    throw ShapeError("multi_head_attention: cannot split " + s.str() + " into q/k/v with " + std::to_string(heads) +
                     " heads");
  }
  using Strided = Eigen::OuterStride<>;
  using MapCS = Eigen::Map<const RowMat<T>, 0, Strided>;
  using MapMS = Eigen::Map<RowMat<T>, 0, Strided>;
  const std::size_t d = s.back() / 3, dh = d / heads, n = s[s.rank() - 2], batch = s.leading(2);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const Strided in_stride(static_cast<Eigen::Index>(3 * d)), out_stride(static_cast<Eigen::Index>(d));
  std::vector<std::size_t> dims = s.dims();
  dims.back() = d;
  Tensor<T> out{Shape(dims)};
  Tensor<T> probs(Shape{batch, heads, n, n});
  const T* src = qkv.value().data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const T* base = src + b * n * 3 * d + h * dh;
      MapM<T> p(probs.data().data() + (b * heads + h) * n * n, n, n);
      p.noalias() = scale * (MapCS(base, n, dh, in_stride) * MapCS(base + d, n, dh, in_stride).transpose());
      p.colwise() -= p.rowwise().maxCoeff();
      p = p.array().exp().matrix();
      p.array().colwise() /= p.rowwise().sum().array();
      MapMS(out.data().data() + b * n * d + h * dh, n, dh, out_stride).noalias() =
          p * MapCS(base + 2 * d, n, dh, in_stride);
    }
  }
  return qkv.tape->record(
      std::move(out), {qkv},
      [qkv, heads, d, dh, n, batch, scale, in_stride, out_stride, probs = std::move(probs)](const Tensor<T>& g,
                                                                                           const Tensor<T>&) {
        auto dqkv = qkv.tape->grad_buffer(qkv);
        const T* src = qkv.value().data().data();
        RowMat<T> dp(n, n);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * n * 3 * d + h * dh;
            MapC<T> p(probs.data().data() + (b * heads + h) * n * n, n, n);
            MapCS go(g.data().data() + b * n * d + h * dh, n, dh, out_stride);
            MapMS(dqkv.data() + off + 2 * d, n, dh, in_stride).noalias() += p.transpose() * go;
            dp.noalias() = go * MapCS(src + off + 2 * d, n, dh, in_stride).transpose();
            const auto rowdot = (dp.array() * p.array()).rowwise().sum().eval();
            dp = (p.array() * (dp.array().colwise() - rowdot)).matrix() * scale;
            MapMS(dqkv.data() + off, n, dh, in_stride).noalias() += dp * MapCS(src + off + d, n, dh, in_stride);
            MapMS(dqkv.data() + off + d, n, dh, in_stride).noalias() += dp.transpose() * MapCS(src + off, n, dh, in_stride);
          }
        }
      });
}

template <class T>
Var<T> mhsa(Var<T> x, const AttentionParams<T>& p, std::size_t heads) {
  const Shape& s = x.shape();
  if (s.rank() < 2) throw ShapeError("mhsa: expected [..., tokens, d], got " + s.str());
  const std::size_t d = s.back();
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("mhsa: token dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  return linear<T>(multi_head_attention<T>(linear<T>(x, p.qkv_weight, p.qkv_bias), heads), p.out_weight, p.out_bias);
}

#define VIDFLOW_INSTANTIATE(T)                                                          \
  template Var<T> add<T>(Var<T>, Var<T>);                                               \
  template Var<T> sub<T>(Var<T>, Var<T>);                                               \
  template Var<T> mul<T>(Var<T>, Var<T>);                                               \
  template Var<T> scale<T>(Var<T>, T);                                                  \
  template Var<T> sum<T>(Var<T>);                                                       \
  template Var<T> mean<T>(Var<T>);                                                      \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                            \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                    \
  template Var<T> concat<T>(std::span<const Var<T>>, std::size_t);                      \
  template Var<T> slice<T>(Var<T>, std::size_t, std::size_t, std::size_t);              \
  template Var<T> reshape<T>(Var<T>, Shape);                                            \
  template Var<T> transpose_last_two<T>(Var<T>);                                        \
  template Var<T> permute<T>(Var<T>, std::span<const std::size_t>);                     \
  template Var<T> softmax<T>(Var<T>);                                                   \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                             \
  template Var<T> gelu<T>(Var<T>);                                                      \
  template Var<T> mse<T>(Var<T>, Var<T>);                                               \
  template Var<T> multi_head_attention<T>(Var<T>, std::size_t);                         \
  template Var<T> mhsa<T>(Var<T>, const AttentionParams<T>&, std::size_t);

VIDFLOW_INSTANTIATE(float)
VIDFLOW_INSTANTIATE(double)

#undef VIDFLOW_INSTANTIATE

}  // namespace ad
}  // namespace vidflow
