#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "model_fixtures.hpp"
#include "vidflow/trainer.hpp"

using namespace vidflow;
using namespace vidflow::testing;

namespace {

Clip numbered_clip(std::size_t m, const Shape& s) {
  Clip c;
  for (std::size_t k = 0; k < m; ++k) c.emplace_back(s, static_cast<float>(k + 1) / 16.0f);
  return c;
}

ModelConfig small_cfg(Mode mode = Mode::predict) {
  ModelConfig c = tiny_config(mode);
  c.latent_channels = 1;
  c.max_distance = 16;
  return c;
}

Dataset small_dataset(std::size_t clips = 6, std::size_t frames = 6) {
  Dataset ds = gen_constant_velocity(ConstantVelocitySpec{clips, frames, 4, 2, 1, false, 1, 3});
  return ds;
}

TrainConfig small_train(std::size_t iters) {
  TrainConfig t;
  t.iterations = iters;
  t.batch_size = 3;
  t.base_lr = 3e-3;
  t.warmup_iters = 5;
  t.seed = 21;
  return t;
}

}  // namespace

TEST_CASE("training tuples") {
  const ModelConfig cfg = small_cfg();
  const PathParams p{};
  SUBCASE("m = 3 predict forces tau=3, c=1") {
    Rng rng(1);
    const Clip clip = numbered_clip(3, cfg.latent_shape());
    for (int k = 0; k < 50; ++k) {
      const auto tp = sample_training_tuple(clip, p, cfg, rng);
      CHECK(tp.tau == 3);
      CHECK(tp.cond_index == std::vector<int>{1});
      CHECK(tp.dists == std::vector<int>{2});
      CHECK(tp.ref == clip[1]);
      CHECK(tp.conds[0] == clip[0]);
    }
  }
  SUBCASE("m = 3 interpolate forces tau=2 between frames 1 and 3") {
    Rng rng(2);
    const ModelConfig ic = small_cfg(Mode::interpolate);
    const Clip clip = numbered_clip(3, ic.latent_shape());
    const auto tp = sample_training_tuple(clip, p, ic, rng);
    CHECK(tp.tau == 2);
    CHECK(tp.cond_index == std::vector<int>{1, 3});
    CHECK(tp.dists == std::vector<int>{-1, 1});
    CHECK(tp.ref.empty());
  }
  SUBCASE("index legality over random lengths") {
    Rng rng(3);
    for (Mode mode : {Mode::predict, Mode::interpolate}) {
      const ModelConfig c = small_cfg(mode);
      for (int trial = 0; trial < 400; ++trial) {
        const int m = static_cast<int>(rng.uniform_int(3, 14));
        const auto tp = sample_training_tuple(numbered_clip(m, c.latent_shape()), p, c, rng);
        CHECK((tp.t >= 0.0 && tp.t < 1.0));
        CHECK(tp.x_noisy.shape() == c.latent_shape());
        CHECK(tp.u_target == target_field(tp.t, tp.x_noisy, numbered_clip(m, c.latent_shape())[tp.tau - 1], p));
        if (mode == Mode::predict) {
          CHECK((tp.tau >= 3 && tp.tau <= m));
          CHECK((tp.cond_index[0] >= 1 && tp.cond_index[0] <= tp.tau - 2));
          CHECK(tp.dists[0] >= 2);
          CHECK(tp.ref[0] == static_cast<float>(tp.tau - 1) / 16.0f);
        } else {
          CHECK((tp.tau >= 2 && tp.tau <= m - 1));
          CHECK((tp.cond_index[0] >= 1 && tp.cond_index[0] < tp.tau));
          CHECK((tp.cond_index[1] > tp.tau && tp.cond_index[1] <= m));
          CHECK(tp.dists[0] == tp.cond_index[0] - tp.tau);
          CHECK(tp.dists[1] == tp.cond_index[1] - tp.tau);
        }
      }
    }
  }
  Rng rng(4);
  CHECK_THROWS(sample_training_tuple(numbered_clip(2, cfg.latent_shape()), p, cfg, rng));
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.base_lr = 1e-4;
  c.warmup_iters = 5000;
  CHECK(lr_schedule(2500, c) == doctest::Approx(0.5e-4));
  CHECK(lr_schedule(5000, c) == doctest::Approx(1e-4));
  CHECK(lr_schedule(20000, c) == doctest::Approx(0.5e-4));
  CHECK(lr_schedule(5001, c) == doctest::Approx(1e-4).epsilon(1e-3));
  double prev = lr_schedule(5000, c);
  for (std::size_t i = 5001; i < 6000; i += 7) {
    const double lr = lr_schedule(i, c);
    CHECK(lr < prev);
    prev = lr;
  }
  c.warmup_iters = 0;
  CHECK(lr_schedule(1, c) == doctest::Approx(1e-4));
  CHECK_THROWS(lr_schedule(0, c));
}

TEST_CASE("AdamW") {
  SUBCASE("one step with constant gradient") {
    ModelParams<float> p{{"w", TensorF(Shape{1}, 0.0f)}};
    const ModelParams<float> g{{"w", TensorF(Shape{1}, 1.0f)}};
    OptimizerState opt;
    adamw_update(p, g, opt, 0.1, AdamWParams{0.9, 0.999, 1e-8, 0.0});
    CHECK(p.at("w")[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(opt.step == 1);
  }
  SUBCASE("zero gradient: only weight decay moves parameters") {
    ModelParams<float> p{{"a.weight", TensorF(Shape{2}, 2.0f)}, {"a.bias", TensorF(Shape{2}, 2.0f)}};
    const ModelParams<float> g{{"a.weight", TensorF(Shape{2})}, {"a.bias", TensorF(Shape{2})}};
    OptimizerState opt;
    adamw_update(p, g, opt, 0.1, AdamWParams{0.9, 0.999, 1e-8, 0.5});
    CHECK(p.at("a.weight")[0] == doctest::Approx(2.0 * (1 - 0.1 * 0.5)));
    CHECK(p.at("a.bias")[0] == 2.0f);
  }
  SUBCASE("quadratic converges") {
    ModelParams<float> p{{"w", TensorF(Shape{1}, 0.0f)}};
    OptimizerState opt;
    for (int k = 0; k < 500; ++k) {
      const ModelParams<float> g{{"w", TensorF(Shape{1}, 2.0f * (p.at("w")[0] - 3.0f))}};
      adamw_update(p, g, opt, 0.05 / std::sqrt(1.0 + k / 50.0), AdamWParams{});
    }
    CHECK(std::abs(p.at("w")[0] - 3.0f) < 1e-3);
  }
}

TEST_CASE("train_step") {
  const ModelConfig cfg = small_cfg();
  const Dataset ds = small_dataset();
  TrainConfig tc = small_train(1);

  SUBCASE("loss decreases on a frozen batch") {
    TrainState st = init_train_state(cfg, 4);
    tc.base_lr = 1e-3;
    tc.warmup_iters = 0;
    tc.weight_decay = 0;
    const auto batch = sample_batch(ds, cfg, tc, 1);
    std::vector<double> losses;
    for (int k = 0; k < 51; ++k) losses.push_back(train_step(st.params, st.opt, batch, cfg, tc).loss);
    int decreases = 0;
    for (int k = 1; k < 51; ++k) decreases += losses[k] < losses[k - 1];
    CHECK(decreases == 50);
    CHECK(batch_loss(st.params, cfg, batch) < losses.front());
  }
  SUBCASE("returns the pre-update loss and advances the step") {
    TrainState st = init_train_state(cfg, 4);
    const auto batch = sample_batch(ds, cfg, tc, 1);
    const double before = batch_loss(st.params, cfg, batch);
    CHECK(train_step(st.params, st.opt, batch, cfg, tc).loss == before);
    CHECK(st.opt.step == 1);
  }
  SUBCASE("thread count does not change the result") {
    TrainState a = init_train_state(cfg, 4), b = init_train_state(cfg, 4);
    const auto batch = sample_batch(ds, cfg, tc, 1);
    tc.threads = 1;
    const double la = train_step(a.params, a.opt, batch, cfg, tc).loss;
    tc.threads = 3;
    const double lb = train_step(b.params, b.opt, batch, cfg, tc).loss;
    CHECK(la == lb);
    CHECK(a.params == b.params);
  }
  SUBCASE("mode mismatch and empty batch") {
    TrainState st = init_train_state(cfg, 4);
    CHECK_THROWS(train_step(st.params, st.opt, {}, cfg, tc));
    const auto ib = sample_batch(ds, small_cfg(Mode::interpolate), tc, 1);
    CHECK_THROWS_AS(train_step(st.params, st.opt, ib, cfg, tc), ModeMismatch);
  }
  SUBCASE("non-finite loss aborts with the step") {
    TrainState st = init_train_state(cfg, 4);
    st.params.at("out.conv.bias")[0] = std::numeric_limits<float>::quiet_NaN();
    try {
      train_step(st.params, st.opt, sample_batch(ds, cfg, tc, 1), cfg, tc);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.step() == 1);
    }
  }
}

TEST_CASE("train_loop") {
  const ModelConfig cfg = small_cfg();
  const Dataset ds = small_dataset();

  SUBCASE("zero iterations returns the initial parameters") {
    TrainState st = init_train_state(cfg, 5);
    const auto before = st.params;
    train_loop(ds, cfg, small_train(0), st);
    CHECK(st.params == before);
  }
  SUBCASE("identical seeds give identical trajectories") {
    std::vector<double> la, lb;
    TrainState a = init_train_state(cfg, 5), b = init_train_state(cfg, 5);
    train_loop(ds, cfg, small_train(6), a, {[&](std::size_t, const StepResult& r) { la.push_back(r.loss); }, {}});
    train_loop(ds, cfg, small_train(6), b, {[&](std::size_t, const StepResult& r) { lb.push_back(r.loss); }, {}});
    CHECK(la == lb);
    CHECK(a.params == b.params);
  }
  SUBCASE("resume equals an uninterrupted run") {
    TrainState full = init_train_state(cfg, 5);
    train_loop(ds, cfg, small_train(8), full);
    TrainState part = init_train_state(cfg, 5);
    train_loop(ds, cfg, small_train(3), part);
    TrainState resumed = part;  // stands in for a checkpoint round-trip
    train_loop(ds, cfg, small_train(8), resumed);
    CHECK(resumed.params == full.params);
    CHECK(resumed.opt == full.opt);
  }
  SUBCASE("checkpoint callback cadence") {
    TrainConfig tc = small_train(7);
    tc.checkpoint_every = 3;
    std::vector<std::uint64_t> steps;
    TrainState st = init_train_state(cfg, 5);
    train_loop(ds, cfg, tc, st, {{}, [&](const TrainState& s) { steps.push_back(s.opt.step); }});
    CHECK(steps == std::vector<std::uint64_t>{3, 6});
  }
  SUBCASE("clips are drawn uniformly") {
    TrainConfig tc = small_train(1);
    tc.batch_size = 1;
    const Dataset big = small_dataset(4, 5);
    std::set<std::size_t> distinct;
    for (std::size_t it = 1; it <= 200; ++it) {
      const auto b = sample_batch(big, cfg, tc, it);
      for (std::size_t k = 0; k < big.clips.size(); ++k) {
        if (b[0].conds[0] == big.clips[k][b[0].cond_index[0] - 1] &&
            b[0].ref == big.clips[k][b[0].tau - 2]) {
          distinct.insert(k);
        }
      }
    }
    CHECK(distinct.size() == big.clips.size());
  }
  SUBCASE("brightness amplitude 0 is an exact identity") {
    TrainConfig tc = small_train(1);
    const auto a = sample_batch(ds, cfg, tc, 2);
    tc.augment_brightness = 0.0;
    const auto b = sample_batch(ds, cfg, tc, 2);
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].x_noisy == b[k].x_noisy);
      CHECK(a[k].conds[0] == b[k].conds[0]);
    }
    tc.augment_brightness = 0.2;
    const auto c = sample_batch(ds, cfg, tc, 2);
    bool changed = false;
    for (std::size_t k = 0; k < a.size(); ++k) changed |= !(c[k].conds[0] == a[k].conds[0]);
    CHECK(changed);
  }
  SUBCASE("dataset shape must match the model") {
    TrainState st = init_train_state(cfg, 5);
    const Dataset wrong = gen_constant_velocity(ConstantVelocitySpec{2, 5, 8, 2, 1, false, 1, 1});
    CHECK_THROWS_AS(train_loop(wrong, cfg, small_train(1), st), ShapeError);
  }
}
