#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "model_fixtures.hpp"
#include "vidflow/flow.hpp"
#include "vidflow/model.hpp"

using namespace vidflow;
using namespace vidflow::testing;

namespace {

// Counted by hand from the architecture description, independently of param_layout.
std::size_t hand_count(std::size_t F, std::size_t d, std::size_t r, std::size_t depth, std::size_t skips,
                       std::size_t C, std::size_t S) {
  std::size_t n = 0;
  n += F * d + d;                 // input projection
  n += d * d + d;                 // time projection
  n += S * d * d + d;             // distance projection
  const std::size_t block = 2 * d                       // norm1
                            + d * 3 * d + 3 * d         // qkv
                            + d * d + d                 // attention out
                            + 2 * d                     // norm2
                            + d * r * d + r * d         // fc1
                            + r * d * d + d;            // fc2
  n += depth * block;
  n += skips * (2 * d * d + d);
  n += d * d + d + 2 * d;         // out linear + out norm
  n += C * d * 9 + C;             // 3x3 conv
  return n;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.heads = 5;
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.depth = 4;  // 2 * skip_pairs + 1 = 5
  CHECK_THROWS(c.validate());
  c = ModelConfig{};
  c.mode = Mode::interpolate;
  CHECK_THROWS(c.validate());  // still has a reference and one slot
  CHECK_THROWS(parse_mode("sideways"));
}

TEST_CASE("parameter count formula") {
  const ModelConfig def;
  CHECK(param_count(def) == 279873);
  CHECK(param_count(def) == hand_count(3, 64, 4, 5, 2, 1, 1));
  for (const auto& cfg : {tiny_config(), tiny_config(Mode::interpolate)}) {
    Rng rng(1);
    const auto params = init_params<float>(cfg, rng);
    std::size_t total = 0;
    for (const auto& [k, v] : params) total += v.numel();
    CHECK(total == param_count(cfg));
    CHECK(param_count(cfg) == hand_count(cfg.input_features(), 16, 4, 3, 1, 2, cfg.condition_slots));
  }
  ModelConfig big;
  big.token_dim = 768;
  big.heads = 8;
  big.depth = 13;
  big.skip_pairs = 4;
  CHECK(param_count(big) == hand_count(3, 768, 4, 13, 4, 1, 1));
}

TEST_CASE("decay selection") {
  CHECK(decays("blocks.0.attn.qkv.weight"));
  CHECK(decays("out.conv.weight"));
  CHECK_FALSE(decays("blocks.0.attn.qkv.bias"));
  CHECK_FALSE(decays("blocks.0.norm1.gain"));
  CHECK_FALSE(decays("time_proj.weight"));
  CHECK_FALSE(decays("dist_proj.weight"));
}

TEST_CASE("tokenize") {
  const ModelConfig cfg;  // desk defaults, 16x16 latent
  Rng rng(2);
  const auto params = init_params<float>(cfg, rng);
  FieldInput<float> in = random_input<float>(cfg, rng);
  in.dists = {3};
  Tape<float> tape;
  auto bound = bind_params(tape, params, false);
  const TensorF a = tokenize(tape, in, cfg, bound).value();
  CHECK(a.shape() == Shape{257, 64});
  CHECK(tokenize(tape, in, cfg, bound).value() == a);

  in.dists = {4};
  const TensorF b = tokenize(tape, in, cfg, bound).value();
  bool time_same = true, spatial_diff = false;
  for (std::size_t i = 0; i < 64; ++i) time_same &= a[i] == b[i];
  for (std::size_t i = 64; i < a.numel(); ++i) spatial_diff |= a[i] != b[i];
  CHECK(time_same);
  CHECK(spatial_diff);

  in.dists = {0};
  CHECK_THROWS(tokenize(tape, in, cfg, bound));
  in.dists = {cfg.max_distance + 1};
  CHECK_THROWS(tokenize(tape, in, cfg, bound));
  in.dists = {2};
  in.ref = TensorF(Shape{1, 8, 8});
  CHECK_THROWS_AS(tokenize(tape, in, cfg, bound), ShapeError);
}

TEST_CASE("initial field is zero and init is deterministic") {
  const ModelConfig cfg = tiny_config();
  Rng a(4), b(4);
  const auto pa = init_params<float>(cfg, a);
  CHECK(pa == init_params<float>(cfg, b));
  Rng rng(5);
  const auto in = random_input<float>(cfg, rng);
  const TensorF v = evaluate_field(pa, cfg, in);
  CHECK(v.shape() == cfg.latent_shape());
  CHECK(std::all_of(v.data().begin(), v.data().end(), [](float x) { return x == 0.0f; }));

  // v == 0, so the loss is the mean of u^2 over the batch
  const PathParams path{};
  double loss = 0, usq = 0;
  for (int k = 0; k < 8; ++k) {
    const TensorF x1 = rng.normal_tensor<float>(cfg.latent_shape());
    const auto pt = sample_path_point(0.9 * rng.uniform(), x1, path, rng);
    FieldInput<float> fi = random_input<float>(cfg, rng);
    fi.x = pt.x;
    fi.t = pt.t;
    loss += cfm_loss(evaluate_field(pa, cfg, fi), pt.u) / 8;
    for (float u : pt.u.data()) usq += double(u) * u / (8.0 * pt.u.numel());
  }
  CHECK(loss == doctest::Approx(usq).epsilon(1e-5));
}

TEST_CASE("full model gradient vs finite differences") {
  for (Mode mode : {Mode::predict, Mode::interpolate}) {
    CAPTURE(to_string(mode));
    const ModelConfig cfg = tiny_config(mode);
    Rng rng(6);
    auto params = random_params<double>(cfg, rng);
    const auto in = random_input<double>(cfg, rng);
    const TensorD u = rng.normal_tensor<double>(cfg.latent_shape());

    Tape<double> tape;
    auto bound = bind_params(tape, params, true);
    tape.backward(cfm_loss(forward(tape, tokenize(tape, in, cfg, bound), cfg, bound), tape.constant(u)));

    const double h = 1e-6;
    double worst = 0.0;
    for (auto& [name, tensor] : params) {
      const TensorD g = tape.grad(bound.at(name));
      double diff = 0, na = 0, nf = 0;
      for (std::size_t i = 0; i < tensor.numel(); ++i) {
        const double x0 = tensor[i];
        tensor[i] = x0 + h;
        const double up = model_loss(params, cfg, in, u);
        tensor[i] = x0 - h;
        const double down = model_loss(params, cfg, in, u);
        tensor[i] = x0;
        const double fd = (up - down) / (2 * h);
        diff += (g[i] - fd) * (g[i] - fd);
        na += g[i] * g[i];
        nf += fd * fd;
      }
      const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), 1e-12});
      if (rel >= 1e-3) MESSAGE(name << " rel error " << rel);
      worst = std::max(worst, rel);
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("gradient reaches every parameter") {
  const ModelConfig cfg = tiny_config();
  Rng rng(7);
  const auto params = random_params<float>(cfg, rng);
  const auto in = random_input<float>(cfg, rng);
  Tape<float> tape;
  auto bound = bind_params(tape, params, true);
  tape.backward(cfm_loss(forward(tape, tokenize(tape, in, cfg, bound), cfg, bound),
                         tape.constant(rng.normal_tensor<float>(cfg.latent_shape()))));
  for (const auto& [name, var] : bound) {
    const TensorF g = tape.grad(var);
    CAPTURE(name);
    CHECK(std::any_of(g.data().begin(), g.data().end(), [](float x) { return x != 0.0f; }));
  }
}

TEST_CASE("output is sensitive to spatial order") {
  const ModelConfig cfg = tiny_config();
  Rng rng(8);
  const auto params = random_params<float>(cfg, rng);
  const auto in = random_input<float>(cfg, rng);
  const std::size_t hw = cfg.latent_height * cfg.latent_width, c = cfg.latent_channels;
  std::vector<std::size_t> perm(hw);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  auto shuffle = [&](const TensorF& t) {
    TensorF o(t.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t s = 0; s < hw; ++s) o[ch * hw + s] = t[ch * hw + perm[s]];
    }
    return o;
  };
  FieldInput<float> sh = in;
  sh.x = shuffle(in.x);
  sh.ref = shuffle(in.ref);
  sh.conds = {shuffle(in.conds[0])};
  const TensorF a = shuffle(evaluate_field(params, cfg, in));
  const TensorF b = evaluate_field(params, cfg, sh);
  double diff = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff += std::abs(a[i] - b[i]);
  CHECK(diff > 1e-3);
}

TEST_CASE("without a reference the ref input is ignored") {
  ModelConfig cfg = tiny_config();
  cfg.use_reference = false;
  CHECK(cfg.input_features() == 2 * cfg.latent_channels);
  Rng rng(9);
  const auto params = random_params<float>(cfg, rng);
  auto in = random_input<float>(cfg, rng);
  const TensorF a = evaluate_field(params, cfg, in);
  in.ref = rng.normal_tensor<float>(cfg.latent_shape());
  CHECK(evaluate_field(params, cfg, in) == a);
}

TEST_CASE("interpolate mode takes signed distances") {
  const ModelConfig cfg = tiny_config(Mode::interpolate);
  Rng rng(10);
  const auto params = random_params<float>(cfg, rng);
  auto in = random_input<float>(cfg, rng);
  in.dists = {-1, 1};
  const TensorF a = evaluate_field(params, cfg, in);
  in.dists = {-2, 1};
  CHECK_FALSE(evaluate_field(params, cfg, in) == a);
  in.dists = {0, 1};
  CHECK_THROWS(evaluate_field(params, cfg, in));
  in.dists = {-1};
  CHECK_THROWS_AS(evaluate_field(params, cfg, in), ShapeError);
}

TEST_CASE("conv3x3 against a direct oracle") {
  Rng rng(11);
  Tape<double> tape;
  const TensorD x = rng.normal_tensor<double>(Shape{2, 3, 4});
  const TensorD w = rng.normal_tensor<double>(Shape{3, 2, 3, 3});
  const TensorD b = rng.normal_tensor<double>(Shape{3});
  const TensorD y = conv3x3<double>(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  for (int o = 0; o < 3; ++o) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        double acc = b[o];
        for (int i = 0; i < 2; ++i) {
          for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
              const int rr = r + dr, cc = c + dc;
              if (rr < 0 || rr >= 3 || cc < 0 || cc >= 4) continue;
              acc += w[((o * 2 + i) * 3 + dr + 1) * 3 + dc + 1] * x[(i * 3 + rr) * 4 + cc];
            }
          }
        }
        CHECK(y[(o * 3 + r) * 4 + c] == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}
