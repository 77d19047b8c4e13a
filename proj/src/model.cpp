#include "vidflow/model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vidflow {

namespace {
// Time enters the embedding as t * kTimeScale so that t in [0,1] spans the
// same frequency range as integer diffusion steps.
constexpr double kTimeScale = 1000.0;
constexpr double kNormEps = 1e-5;
// Position code amplitude. At 1.0 it swamps the 0.02-scale input projection
// and the first few hundred steps go into growing in_proj.
constexpr double kPosScale = 0.1;
}  // namespace

const char* to_string(Mode m) { return m == Mode::predict ? "predict" : "interpolate"; }

Mode parse_mode(const std::string& s) {
  if (s == "predict") return Mode::predict;
  if (s == "interpolate") return Mode::interpolate;
  throw std::invalid_argument("unknown mode '" + s + "' (expected predict|interpolate)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (latent_channels < 1 || latent_height < 1 || latent_width < 1) fail("latent extents must be >= 1");
  if (token_dim < 2) fail("token_dim must be >= 2");
  if (heads < 1 || token_dim % heads != 0) fail("token_dim must be divisible by heads");
  if (depth < 2 * skip_pairs + 1) fail("depth must be >= 2*skip_pairs + 1");
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  if (max_distance < 1) fail("max_distance must be >= 1");
  if (condition_slots < 1) fail("condition_slots must be >= 1");
  if (mode == Mode::interpolate && (use_reference || condition_slots != 2)) {
    fail("interpolate mode requires use_reference=false and condition_slots=2");
  }
  if (mode == Mode::predict && condition_slots != 1) fail("predict mode uses exactly one condition slot");
}

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.token_dim, hidden = cfg.mlp_ratio * d;
  std::vector<std::pair<std::string, Shape>> out;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t o) {
    out.emplace_back(name + ".weight", Shape{in, o});
    out.emplace_back(name + ".bias", Shape{o});
  };
  auto norm = [&](const std::string& name) {
    out.emplace_back(name + ".gain", Shape{d});
    out.emplace_back(name + ".bias", Shape{d});
  };
  lin("in_proj", cfg.input_features(), d);
  lin("time_proj", d, d);
  lin("dist_proj", cfg.condition_slots * d, d);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    norm(b + ".norm1");
    lin(b + ".attn.qkv", d, 3 * d);
    lin(b + ".attn.out", d, d);
    norm(b + ".norm2");
    lin(b + ".mlp.fc1", d, hidden);
    lin(b + ".mlp.fc2", hidden, d);
  }
  for (std::size_t j = 0; j < cfg.skip_pairs; ++j) lin("skips." + std::to_string(j), 2 * d, d);
  lin("out.linear", d, d);
  norm("out.norm");
  out.emplace_back("out.conv.weight", Shape{cfg.latent_channels, d, 3, 3});
  out.emplace_back("out.conv.bias", Shape{cfg.latent_channels});
  return out;
}

std::size_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.token_dim, r = cfg.mlp_ratio, c = cfg.latent_channels;
  const std::size_t s = cfg.condition_slots, f = cfg.input_features();
  return f * d + d + d * d + d + s * d * d + d + cfg.depth * ((4 + 2 * r) * d * d + (9 + r) * d) +
         cfg.skip_pairs * (2 * d * d + d) + d * d + 3 * d + 9 * d * c + c;
}

bool decays(const std::string& name) {
  return name.ends_with(".weight") && name != "time_proj.weight" && name != "dist_proj.weight";
}

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, Rng& rng) {
  ModelParams<T> params;
  for (const auto& [name, shape] : param_layout(cfg)) {
    Tensor<T> t(shape);
    if (name.ends_with(".gain")) {
      for (auto& v : t.data()) v = T(1);
    } else if (name.ends_with(".weight") && name != "out.conv.weight") {
      for (auto& v : t.data()) {
        double z = rng.normal();
        while (std::abs(z) > 2.0) z = rng.normal();
        v = static_cast<T>(0.02 * z);
      }
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

template <class T>
void check_params(const ModelConfig& cfg, const ModelParams<T>& params) {
  const auto layout = param_layout(cfg);
  if (layout.size() != params.size()) {
    throw ShapeError("parameter set has " + std::to_string(params.size()) + " tensors, config expects " +
                     std::to_string(layout.size()));
  }
  for (const auto& [name, shape] : layout) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("parameter '" + name + "' has shape " + it->second.shape().str() + ", config expects " +
                       shape.str());
    }
  }
}

template <class T>
BoundParams<T> bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
  BoundParams<T> out;
  for (const auto& [k, v] : params) out.emplace(k, tape.leaf(v, requires_grad));
  return out;
}

std::vector<double> sinusoidal_embedding(double v, std::size_t dim, double max_period) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(v * f);
    out[half + i] = std::cos(v * f);
  }
  return out;
}

template <class T>
Tensor<T> position_encoding_2d(std::size_t height, std::size_t width, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor<T> out(Shape{height * width, dim});
  for (std::size_t r = 0; r < height; ++r) {
    const auto er = sinusoidal_embedding(std::numbers::pi * static_cast<double>(r), half, 2.0 * height);
    for (std::size_t c = 0; c < width; ++c) {
      const auto ec = sinusoidal_embedding(std::numbers::pi * static_cast<double>(c), dim - half, 2.0 * width);
      T* row = out.data().data() + (r * width + c) * dim;
      for (std::size_t i = 0; i < half; ++i) row[i] = static_cast<T>(kPosScale * er[i]);
      for (std::size_t i = 0; i < dim - half; ++i) row[half + i] = static_cast<T>(kPosScale * ec[i]);
    }
  }
  return out;
}

namespace {

template <class T>
const Var<T>& param(const BoundParams<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

template <class T>
Var<T> dense(const BoundParams<T>& p, const std::string& name, Var<T> x) {
  return ad::linear<T>(x, param(p, name + ".weight"), param(p, name + ".bias"));
}

template <class T>
Var<T> norm(const BoundParams<T>& p, const std::string& name, Var<T> x) {
  return ad::layer_norm<T>(x, param(p, name + ".gain"), param(p, name + ".bias"), static_cast<T>(kNormEps));
}

template <class T>
Var<T> vit_block(const BoundParams<T>& p, const std::string& b, Var<T> h, std::size_t heads) {
  ad::AttentionParams<T> attn{param(p, b + ".attn.qkv.weight"), param(p, b + ".attn.qkv.bias"),
                              param(p, b + ".attn.out.weight"), param(p, b + ".attn.out.bias")};
  h = ad::add<T>(h, ad::mhsa<T>(norm(p, b + ".norm1", h), attn, heads));
  Var<T> m = dense(p, b + ".mlp.fc2", ad::gelu<T>(dense(p, b + ".mlp.fc1", norm(p, b + ".norm2", h))));
  return ad::add<T>(h, m);
}

template <class T>
void check_input(const FieldInput<T>& in, const ModelConfig& cfg) {
  const Shape ls = cfg.latent_shape();
  require_same_shape(in.x.shape(), ls, "tokenize(x)");
  if (cfg.use_reference) require_same_shape(in.ref.shape(), ls, "tokenize(ref)");
  if (in.conds.size() != cfg.condition_slots || in.dists.size() != cfg.condition_slots) {
    throw ShapeError("tokenize: expected " + std::to_string(cfg.condition_slots) + " condition frames, got " +
                     std::to_string(in.conds.size()) + " frames and " + std::to_string(in.dists.size()) +
                     " distances");
  }
  for (std::size_t k = 0; k < in.conds.size(); ++k) {
    require_same_shape(in.conds[k].shape(), ls, "tokenize(cond)");
    const int d = in.dists[k];
    const bool ok = cfg.mode == Mode::predict ? (d >= 1 && d <= cfg.max_distance)
                                              : (d != 0 && std::abs(d) <= cfg.max_distance);
    if (!ok) {
      throw std::out_of_range("tokenize: distance " + std::to_string(d) + " outside the encodable range (max " +
                              std::to_string(cfg.max_distance) + ")");
    }
  }
  if (!(in.t >= 0.0 && in.t <= 1.0)) throw std::domain_error("tokenize: t outside [0,1]");
}

}  // namespace

template <class T>
Var<T> tokenize(Tape<T>& tape, const FieldInput<T>& in, const ModelConfig& cfg, const BoundParams<T>& p) {
  check_input(in, cfg);
  const std::size_t c = cfg.latent_channels, hw = cfg.latent_height * cfg.latent_width, d = cfg.token_dim;
  std::vector<const Tensor<T>*> frames{&in.x};
  if (cfg.use_reference) frames.push_back(&in.ref);
  for (const auto& f : in.conds) frames.push_back(&f);

  // [HW, F] site features, channel-concatenated in the order x, ref, conds.
  const std::size_t nf = frames.size() * c;
  Tensor<T> feats(Shape{hw, nf});
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto src = frames[f]->data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t s = 0; s < hw; ++s) feats[s * nf + f * c + ch] = src[ch * hw + s];
    }
  }
  Var<T> spatial = dense(p, "in_proj", tape.constant(std::move(feats)));
  spatial = ad::add<T>(spatial, tape.constant(position_encoding_2d<T>(cfg.latent_height, cfg.latent_width, d)));

  Tensor<T> dist_code(Shape{1, cfg.condition_slots * d});
  for (std::size_t k = 0; k < cfg.condition_slots; ++k) {
    const auto e = sinusoidal_embedding(static_cast<double>(in.dists[k]), d);
    for (std::size_t i = 0; i < d; ++i) dist_code[k * d + i] = static_cast<T>(e[i]);
  }
  Var<T> dist = ad::reshape<T>(dense(p, "dist_proj", tape.constant(std::move(dist_code))), Shape{d});
  spatial = ad::add<T>(spatial, dist);

  Tensor<T> time_code(Shape{1, d});
  const auto e = sinusoidal_embedding(in.t * kTimeScale, d);
  for (std::size_t i = 0; i < d; ++i) time_code[i] = static_cast<T>(e[i]);
  Var<T> time_token = dense(p, "time_proj", tape.constant(std::move(time_code)));
  return ad::concat<T>({time_token, spatial}, 0);
}

template <class T>
Var<T> forward(Tape<T>& tape, Var<T> tokens, const ModelConfig& cfg, const BoundParams<T>& p) {
  (void)tape;
  const std::size_t n = cfg.n_tokens(), d = cfg.token_dim;
  require_same_shape(tokens.shape(), Shape{n, d}, "forward(tokens)");
  Var<T> h = tokens;
  std::vector<Var<T>> skips;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    if (i + cfg.skip_pairs >= cfg.depth) {
      const std::size_t j = cfg.depth - 1 - i;
      h = dense(p, "skips." + std::to_string(j), ad::concat<T>({h, skips.at(j)}, 1));
    }
    h = vit_block(p, "blocks." + std::to_string(i), h, cfg.heads);
    if (i < cfg.skip_pairs) skips.push_back(h);
  }
  Var<T> spatial = ad::slice<T>(h, 0, 1, n);
  spatial = norm(p, "out.norm", ad::gelu<T>(dense(p, "out.linear", spatial)));
  Var<T> grid = ad::reshape<T>(ad::transpose_last_two<T>(spatial), Shape{d, cfg.latent_height, cfg.latent_width});
  return conv3x3<T>(grid, param(p, "out.conv.weight"), param(p, "out.conv.bias"));
}

template <class T>
Tensor<T> evaluate_field(const ModelParams<T>& params, const ModelConfig& cfg, const FieldInput<T>& in) {
  Tape<T> tape;
  tape.set_recording(false);
  auto bound = bind_params(tape, params, false);
  return forward(tape, tokenize(tape, in, cfg, bound), cfg, bound).value();
}

template <class T>
Var<T> conv3x3(Var<T> x, Var<T> w, Var<T> b) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.rank() != 3 || sw.rank() != 4 || sw[1] != sx[0] || sw[2] != 3 || sw[3] != 3 || b.shape() != Shape{sw[0]}) {
    throw ShapeError("conv3x3: incompatible shapes x" + sx.str() + " w" + sw.str() + " b" + b.shape().str());
  }
  const std::size_t cin = sx[0], hh = sx[1], ww = sx[2], cout = sw[0];
  const auto xv = x.value().data();
  const auto wv = w.value().data();
  const auto bv = b.value().data();
  Tensor<T> out(Shape{cout, hh, ww});
  auto o = out.data();
  // Visits every (output pixel, input channel, tap) with the input pixel it reads.
  auto for_each_tap = [cin, hh, ww, cout](auto&& fn) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::size_t widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
            for (std::size_t y = 0; y < hh; ++y) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(hh)) continue;
              for (std::size_t xx = 0; xx < ww; ++xx) {
                const std::ptrdiff_t sxp = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                if (sxp < 0 || sxp >= static_cast<std::ptrdiff_t>(ww)) continue;
                fn((co * hh + y) * ww + xx, (ci * hh + static_cast<std::size_t>(sy)) * ww + static_cast<std::size_t>(sxp),
                   widx);
              }
            }
          }
        }
      }
    }
  };
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t i = 0; i < hh * ww; ++i) o[co * hh * ww + i] = bv[co];
  }
  for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t wi) { o[oi] += wv[wi] * xv[xi]; });
  return x.tape->record(std::move(out), {x, w, b}, [x, w, b, hh, ww, cout, for_each_tap](const Tensor<T>& g, const Tensor<T>&) {
    const auto gd = g.data();
    const auto xv = x.value().data();
    const auto wv = w.value().data();
    auto dx = x.tape->grad_buffer(x);
    auto dw = w.tape->grad_buffer(w);
    auto db = b.tape->grad_buffer(b);
    if (!db.empty()) {
      for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t i = 0; i < hh * ww; ++i) db[co] += gd[co * hh * ww + i];
      }
    }
    for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t wi) {
      if (!dx.empty()) dx[xi] += wv[wi] * gd[oi];
      if (!dw.empty()) dw[wi] += xv[xi] * gd[oi];
    });
  });
}

#define VIDFLOW_INSTANTIATE(T)                                                                              \
  template ModelParams<T> init_params<T>(const ModelConfig&, Rng&);                                        \
  template void check_params<T>(const ModelConfig&, const ModelParams<T>&);                                \
  template BoundParams<T> bind_params<T>(Tape<T>&, const ModelParams<T>&, bool);                           \
  template Var<T> tokenize<T>(Tape<T>&, const FieldInput<T>&, const ModelConfig&, const BoundParams<T>&);  \
  template Var<T> forward<T>(Tape<T>&, Var<T>, const ModelConfig&, const BoundParams<T>&);                 \
  template Tensor<T> evaluate_field<T>(const ModelParams<T>&, const ModelConfig&, const FieldInput<T>&);   \
  template Var<T> conv3x3<T>(Var<T>, Var<T>, Var<T>);                                                      \
  template Tensor<T> position_encoding_2d<T>(std::size_t, std::size_t, std::size_t);

VIDFLOW_INSTANTIATE(float)
VIDFLOW_INSTANTIATE(double)

#undef VIDFLOW_INSTANTIATE

}  // namespace vidflow
