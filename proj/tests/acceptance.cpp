// Acceptance run: one PASS/FAIL line per criterion 1..10, non-zero exit if any
// fails. Criteria 5-8 train full desk-size models.

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "model_fixtures.hpp"
#include "vidflow/checkpoint.hpp"
#include "vidflow/config.hpp"
#include "vidflow/pipeline.hpp"

using namespace vidflow;
using namespace vidflow::testing;
namespace fs = std::filesystem;
using Vs = std::vector<Var<double>>;

namespace {

int failures = 0;

void report(int n, bool ok, const std::string& what, const std::string& detail) {
  std::printf("criterion %2d %s  %s | %s\n", n, ok ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1
void gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::map<std::string, double> errs;
  errs["matmul"] = grad_check([](Tape<double>& t, const Vs& v) { return probe(t, ad::matmul<double>(v[0], v[1])); },
                              {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {4, 5})});
  errs["linear"] = grad_check([](Tape<double>& t, const Vs& v) { return probe(t, ad::linear<double>(v[0], v[1], v[2])); },
                              {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5}), random_tensor(rng, {5})});
  errs["add/sub/mul/scale"] = grad_check(
      [](Tape<double>& t, const Vs& v) {
        return probe(t, ad::scale<double>(ad::add<double>(ad::mul<double>(v[0], v[1]), ad::sub<double>(v[0], v[1])), 0.7));
      },
      {random_tensor(rng, {3, 4}), random_tensor(rng, {4})});
  errs["mean"] = grad_check([](Tape<double>&, const Vs& v) { return ad::mean<double>(ad::mul<double>(v[0], v[0])); },
                            {random_tensor(rng, {5, 2})});
  errs["concat/slice/reshape/permute"] = grad_check(
      [](Tape<double>& t, const Vs& v) {
        auto c = ad::concat<double>({v[0], v[1]}, 1);
        auto s = ad::slice<double>(c, 1, 1, 4);
        auto r = ad::reshape<double>(ad::transpose_last_two<double>(s), Shape{3, 6});
        return probe(t, ad::permute<double>(ad::reshape<double>(r, Shape{3, 2, 3}), {2, 0, 1}));
      },
      {random_tensor(rng, {2, 2, 3}), random_tensor(rng, {2, 3, 3})});
  errs["softmax"] = grad_check([](Tape<double>& t, const Vs& v) { return probe(t, ad::softmax<double>(v[0])); },
                               {random_tensor(rng, {3, 6}, 2.0)});
  errs["layer_norm"] = grad_check(
      [](Tape<double>& t, const Vs& v) { return probe(t, ad::layer_norm<double>(v[0], v[1], v[2], 1e-5)); },
      {random_tensor(rng, {4, 6}), random_tensor(rng, {6}), random_tensor(rng, {6})});
  errs["gelu"] = grad_check([](Tape<double>& t, const Vs& v) { return probe(t, ad::gelu<double>(v[0])); },
                            {random_tensor(rng, {20}, 2.0)});
  errs["mse"] = grad_check([](Tape<double>&, const Vs& v) { return ad::mse<double>(v[0], v[1]); },
                           {random_tensor(rng, {3, 3}), random_tensor(rng, {3, 3})});
  errs["mhsa"] = grad_check(
      [](Tape<double>& t, const Vs& v) { return probe(t, ad::mhsa<double>(v[0], {v[1], v[2], v[3], v[4]}, 2)); },
      {random_tensor(rng, {3, 8}), random_tensor(rng, {8, 24}, 0.5), random_tensor(rng, {24}),
       random_tensor(rng, {8, 8}, 0.5), random_tensor(rng, {8})});
  errs["conv3x3"] = grad_check([](Tape<double>& t, const Vs& v) { return probe(t, conv3x3<double>(v[0], v[1], v[2])); },
                               {random_tensor(rng, {2, 3, 4}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})});
  double op_worst = 0;
  std::string op_name;
  for (const auto& [k, e] : errs) {
    if (e >= op_worst) op_worst = e, op_name = k;
  }

  // end to end: the flow-matching loss of the full network, every parameter
  double e2e_worst = 0;
  for (Mode mode : {Mode::predict, Mode::interpolate}) {
    const ModelConfig cfg = tiny_config(mode);
    auto params = random_params<double>(cfg, rng);
    const auto in = random_input<double>(cfg, rng);
    const TensorD u = rng.normal_tensor<double>(cfg.latent_shape());
    Tape<double> tape;
    auto bound = bind_params(tape, params, true);
    tape.backward(cfm_loss(forward(tape, tokenize(tape, in, cfg, bound), cfg, bound), tape.constant(u)));
    const double h = 1e-6;
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
      e2e_worst = std::max(e2e_worst, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), 1e-12}));
    }
  }
  const double secs = seconds_since(t0);
  report(1, op_worst < 1e-4 && e2e_worst < 1e-3 && secs < 60, "gradient correctness",
         "worst op " + op_name + fmt(" %.2e (<1e-4)", op_worst) + fmt(", end-to-end %.2e (<1e-3)", e2e_worst) +
             fmt(", %.1fs", secs));
}

// ---------------------------------------------------------------- 2
void path_consistency() {
  Rng rng(202);
  const PathParams p{1e-7};
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    const double t = rng.uniform();
    const TensorD eps = rng.normal_tensor<double>(Shape{8});
    const TensorD x1 = rng.normal_tensor<double>(Shape{8});
    TensorD xt(Shape{8}), d(Shape{8});
    for (std::size_t i = 0; i < 8; ++i) {
      xt[i] = (1 - (1 - p.sigma_min) * t) * eps[i] + t * x1[i];  // flow map
      d[i] = x1[i] - (1 - p.sigma_min) * eps[i];                 // its time derivative
    }
    const TensorD u = target_field(t, xt, x1, p);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < 8; ++i) num += (u[i] - d[i]) * (u[i] - d[i]), den += d[i] * d[i];
    worst = std::max(worst, std::sqrt(num / std::max(den, 1e-300)));
  }

  Rng r2(203);
  const TensorF x1 = r2.normal_tensor<float>(Shape{1, 16, 16});
  const StateField field = [&](const TensorF& x, double t) { return target_field(t, x, x1, p); };
  double rmse = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const TensorF end = integrate(r2.normal_tensor<float>(x1.shape()), make_time_grid(100, 0.0), Solver::euler, field);
    rmse += std::sqrt(mse(end, x1)) / 20;
  }
  report(2, worst < 1e-5 && rmse < 0.02, "path/field consistency",
         fmt("max rel err %.2e over 1000 triples (<1e-5)", worst) + fmt(", Euler-100 RMSE %.2e (<0.02)", rmse));
}

// ---------------------------------------------------------------- 3
void solver_order() {
  const StateField lin = [](const TensorF& x, double) { return x; };
  const TensorF one(Shape{1}, 1.0f);
  const float e10 = integrate(one, make_time_grid(10, 0.0), Solver::euler, lin)[0];
  const double euler_rel = std::abs(e10 - 2.5937424601) / 2.5937424601;
  std::vector<double> ln, le;
  for (int n : {4, 8, 16, 32}) {
    const float m = integrate(one, make_time_grid(n, 0.0), Solver::midpoint, lin)[0];
    ln.push_back(std::log(n));
    le.push_back(std::log(std::abs(m - std::exp(1.0))));
  }
  // least-squares slope
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < ln.size(); ++i) mx += ln[i] / ln.size(), my += le[i] / le.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < ln.size(); ++i) sxy += (ln[i] - mx) * (le[i] - my), sxx += (ln[i] - mx) * (ln[i] - mx);
  const double slope = sxy / sxx;
  report(3, euler_rel < 1e-6 && std::abs(slope + 2) <= 0.3, "solver order",
         fmt("Euler N=10 %.10f", e10) + fmt(" (rel err %.1e)", euler_rel) + fmt(", midpoint slope %.3f", slope));
}

// ---------------------------------------------------------------- 4
void index_laws() {
  ModelConfig cfg = tiny_config();
  cfg.latent_channels = 1;
  cfg.latent_height = cfg.latent_width = 2;
  cfg.max_distance = 16;
  const int m = 12;
  Clip clip;
  for (int k = 0; k < m; ++k) clip.emplace_back(cfg.latent_shape(), static_cast<float>(k));
  Rng rng(404);
  const PathParams p{};
  const int n = 100000;
  std::vector<long> tau_count(m + 1, 0);
  std::map<std::pair<int, int>, long> joint;
  bool legal = true;
  for (int k = 0; k < n; ++k) {
    const auto tp = sample_training_tuple(clip, p, cfg, rng);
    const int c = tp.cond_index[0];
    legal &= tp.tau >= 3 && tp.tau <= m && c >= 1 && c <= tp.tau - 2;
    ++tau_count[tp.tau];
    ++joint[{tp.tau, c}];
  }
  double chi_tau = 0;
  for (int t = 3; t <= m; ++t) {
    const double e = double(n) / (m - 2);
    chi_tau += (tau_count[t] - e) * (tau_count[t] - e) / e;
  }
  double chi_joint = 0;
  std::size_t cells = 0;
  for (int t = 3; t <= m; ++t) {
    for (int c = 1; c <= t - 2; ++c) {
      const double e = double(n) / (m - 2) / (t - 2);
      const double o = joint.count({t, c}) ? joint[{t, c}] : 0;
      chi_joint += (o - e) * (o - e) / e;
      ++cells;
    }
  }
  using boost::math::chi_squared;
  using boost::math::quantile;
  const double crit_tau = quantile(chi_squared(m - 3), 0.99);
  const double crit_joint = quantile(chi_squared(static_cast<double>(cells - 1)), 0.99);

  ModelConfig c3 = cfg;
  Clip short_clip(clip.begin(), clip.begin() + 3);
  bool forced = true;
  for (int k = 0; k < 1000; ++k) {
    const auto tp = sample_training_tuple(short_clip, p, c3, rng);
    forced &= tp.tau == 3 && tp.cond_index[0] == 1;
  }
  report(4, legal && forced && chi_tau < crit_tau && chi_joint < crit_joint, "training index laws",
         fmt("tau chi2 %.2f", chi_tau) + fmt(" < %.2f", crit_tau) + fmt(", (tau,c) chi2 %.2f", chi_joint) +
             fmt(" < %.2f", crit_joint) + (forced ? ", m=3 forces (3,1)" : ", m=3 NOT forced"));
}

// ---------------------------------------------------------------- 5-8
struct Trained {
  RunConfig cfg;
  TrainState state;
  double seconds = 0;
};

RunConfig desk_config(bool use_reference, Mode mode) {
  RunConfig cfg;  // desk defaults: const-velocity 64 + 8 clips, 16x16, 12 frames, depth 5, dim 64, batch 16
  cfg.seed = 2024;
  cfg.model.mode = mode;
  cfg.model.use_reference = use_reference && mode == Mode::predict;
  cfg.validate();
  return cfg;
}

Trained train_desk(const std::string& label, const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  std::fprintf(stderr, "[%s] training %zu iterations\n", label.c_str(), cfg.train.iterations);
  double ema = 0;
  TrainCallbacks cb;
  cb.on_step = [&](std::size_t it, const StepResult& r) {
    ema = it == 1 ? r.loss : 0.98 * ema + 0.02 * r.loss;
    if (it % 500 == 0) std::fprintf(stderr, "[%s] iter %zu smoothed loss %.4f (%.0fs)\n", label.c_str(), it, ema, seconds_since(t0));
  };
  Trained t{cfg, train_from_config(cfg, cb), 0};
  t.seconds = seconds_since(t0);
  return t;
}

EvalReport rollout_eval(const Trained& t, const SampleConfig& sc, std::size_t* evals = nullptr) {
  auto counter = std::make_shared<std::size_t>(0);
  const FlowModel model = network_model(t.cfg.model_config(), t.state.params);
  const EvalReport rep =
      evaluate(generate_data(t.cfg).test, *t.cfg.codec(), rollout_predictor(model, sc, counter), t.cfg.eval_config());
  if (evals) *evals = *counter;
  return rep;
}

void end_to_end(const Trained& with_ref) {
  const EvalReport rep = rollout_eval(with_ref, with_ref.cfg.sample_config());
  const double gain = rep.aggregate.psnr - rep.baseline.psnr;
  std::string curve;
  for (const auto& s : rep.per_step) curve += fmt(" %.1f", s.psnr);
  report(5, gain >= 3.0 && with_ref.cfg.train.iterations <= 5000, "end-to-end learning",
         fmt("rollout PSNR %.2f dB", rep.aggregate.psnr) + fmt(" vs copy-last %.2f", rep.baseline.psnr) +
             fmt(" (gain %.2f, need >= 3)", gain) + ", per step" + curve +
             fmt(", %.0f clips", static_cast<double>(rep.per_clip.size())) +
             fmt(", train %.0fs", with_ref.seconds));
}

void warm_start(const Trained& t) {
  bool laws = true;
  std::string evals_s;
  std::size_t prev = ~std::size_t{0};
  double psnr0 = 0, psnr8 = 0;
  for (double s : {0.0, 0.2, 0.4, 0.6, 0.8}) {
    SampleConfig sc = t.cfg.sample_config();
    sc.warm_start_s = s;
    laws &= steps_for(sc.n_steps, s) == static_cast<std::size_t>(std::ceil(sc.n_steps * (1 - s) - 1e-9));
    std::size_t evals = 0;
    const EvalReport rep = rollout_eval(t, sc, &evals);
    laws &= evals < prev;
    prev = evals;
    evals_s += " " + std::to_string(evals);
    if (s == 0.0) psnr0 = rep.aggregate.psnr;
    if (s == 0.8) psnr8 = rep.aggregate.psnr;
  }
  // s = 0 against a default sampler with the same stream
  const FlowModel model = network_model(t.cfg.model_config(), t.state.params);
  const Dataset test = generate_data(t.cfg).test;
  std::vector<TensorF> ctx{test.clips[0][0], test.clips[0][1]};
  SampleConfig a = t.cfg.sample_config(), b;
  a.warm_start_s = 0.0;
  b.n_steps = a.n_steps;
  b.solver = a.solver;
  b.sigma_min = a.sigma_min;
  Rng ra(77), rb(77);
  const bool identical = rollout(ctx, 3, model, a, ra).frames == rollout(ctx, 3, model, b, rb).frames;
  Rng rc(78), rd(78);
  const TensorF prev_frame = ctx.back();
  const bool init_identical = warm_start_init(prev_frame, 0.0, PathParams{a.sigma_min}, rc) ==
                              rd.normal_tensor<float>(prev_frame.shape());
  const bool quality = psnr8 <= psnr0 + 0.5;
  report(6, laws && identical && init_identical && quality, "warm-start laws",
         "evals over s=0..0.8:" + evals_s + (identical && init_identical ? ", s=0 bit-identical" : ", s=0 DIFFERS") +
             fmt(", PSNR s=0 %.2f", psnr0) + fmt(" s=0.8 %.2f (need <= s0+0.5)", psnr8));
}

void reference_ablation(const Trained& with_ref, const Trained& no_ref) {
  const double a = rollout_eval(with_ref, with_ref.cfg.sample_config()).aggregate.psnr;
  const double b = rollout_eval(no_ref, no_ref.cfg.sample_config()).aggregate.psnr;
  report(7, a - b >= 1.0, "reference ablation",
         fmt("with reference %.2f dB", a) + fmt(", without %.2f", b) + fmt(" (diff %.2f, need >= 1)", a - b) +
             fmt(", no-ref train %.0fs", no_ref.seconds));
}

void interpolation(const Trained& t) {
  const FlowModel model = network_model(t.cfg.model_config(), t.state.params);
  const InterpReport rep =
      evaluate_interpolation(generate_data(t.cfg).test, *t.cfg.codec(), model, t.cfg.sample_config(), t.cfg.eval_config());
  report(8, rep.model.psnr > rep.linear.psnr, "interpolation mode",
         fmt("infill PSNR %.2f dB", rep.model.psnr) + fmt(" vs linear %.2f", rep.linear.psnr) +
             fmt(" over %.0f frames of the held-out clips", static_cast<double>(rep.samples)) +
             fmt(", train %.0fs", t.seconds));
}

// ---------------------------------------------------------------- 9
std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

template <class F>
FileErrc code_of(F&& f) {
  try {
    f();
  } catch (const FileError& e) {
    return e.code();
  }
  return FileErrc::io;  // no error at all counts as a miss below
}

void serialization(const Trained& trained) {
  const fs::path dir = fs::temp_directory_path() / "vidflow_acceptance";
  fs::create_directories(dir);
  std::vector<std::string> problems;

  // checkpoint round trip on the trained model
  save_checkpoint(dir / "a.fckp", trained.cfg, trained.state);
  const Checkpoint back = load_checkpoint(dir / "a.fckp");
  if (!(back.state.params == trained.state.params && back.state.opt == trained.state.opt && back.config == trained.cfg)) {
    problems.push_back("checkpoint round trip");
  }
  save_checkpoint(dir / "b.fckp", back.config, back.state);
  if (slurp(dir / "a.fckp") != slurp(dir / "b.fckp")) problems.push_back("checkpoint bytes");

  // dataset round trip
  const Dataset ds = generate_data(trained.cfg).train;
  save_dataset(ds, dir / "d.fvds");
  if (!(load_dataset(dir / "d.fvds") == ds)) problems.push_back("dataset round trip");

  // resume through a file equals an uninterrupted run (strict sequential)
  RunConfig small;
  small.seed = 9;
  small.data.clips = 6;
  small.data.frames = 6;
  small.data.grid = 8;
  small.data.square = 2;
  small.model.token_dim = 16;
  small.model.heads = 2;
  small.model.depth = 3;
  small.model.skip_pairs = 1;
  small.train.batch_size = 3;
  small.train.iterations = 8;
  small.train.threads = 1;
  const TrainState full = train_from_config(small);
  RunConfig half = small;
  half.train.iterations = 4;
  save_checkpoint(dir / "half.fckp", half, train_from_config(half));
  Checkpoint resumed = load_checkpoint(dir / "half.fckp");
  train_loop(encode_dataset(generate_data(small).train, *small.codec()), small.model_config(), small.train_config(),
             resumed.state);
  if (!(resumed.state.params == full.params && resumed.state.opt == full.opt)) problems.push_back("resume");

  // corruption
  const std::string good = slurp(dir / "half.fckp");
  auto write = [&](const std::string& bytes) { std::ofstream(dir / "bad.fckp", std::ios::binary) << bytes; };
  auto load = [&] { load_checkpoint(dir / "bad.fckp"); };
  std::string bad = good;
  bad[0] = 'X';
  write(bad);
  const FileErrc magic = code_of(load);
  bad = good;
  bad[4] = 7;
  write(bad);
  const FileErrc version = code_of(load);
  write(good.substr(0, good.size() - 100));
  const FileErrc trunc = code_of(load);
  bad = good;
  bad.replace(bad.find("model.token_dim=16"), 18, "model.token_dim=32");
  write(bad);
  const FileErrc shape = code_of(load);
  const std::string dgood = slurp(dir / "d.fvds");
  std::ofstream(dir / "bad.fvds", std::ios::binary) << dgood.substr(0, dgood.size() / 2);
  const FileErrc dtrunc = code_of([&] { load_dataset(dir / "bad.fvds"); });
  if (magic != FileErrc::bad_magic) problems.push_back("magic");
  if (version != FileErrc::bad_version) problems.push_back("version");
  if (trunc != FileErrc::truncated) problems.push_back("truncation");
  if (shape != FileErrc::shape_mismatch) problems.push_back("shape mismatch");
  if (dtrunc != FileErrc::truncated) problems.push_back("dataset truncation");
  fs::remove_all(dir);

  std::string detail = problems.empty() ? "round trips bit-exact, resume bit-exact, errors bad_magic/bad_version/"
                                          "truncated/shape_mismatch distinct"
                                        : "failed:";
  for (const auto& p : problems) detail += " " + p;
  report(9, problems.empty(), "serialization", detail);
}

// ---------------------------------------------------------------- 10
void metric_sanity() {
  std::vector<std::string> problems;
  const TensorF a(Shape{1, 10, 10}, 0.0f), b(Shape{1, 10, 10}, 0.1f);
  if (std::abs(psnr(a, b) - 20.0) > 1e-4) problems.push_back("20 dB case");
  Rng rng(10);
  TensorF x(Shape{1, 16, 16}), y(Shape{1, 16, 16});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  for (auto& v : y.data()) v = static_cast<float>(rng.uniform());
  if (ssim(x, x) != 1.0) problems.push_back("ssim identity");
  if (ssim(x, y) != ssim(y, x)) problems.push_back("ssim symmetry");
  if (psnr(x, y) != psnr(y, x)) problems.push_back("psnr symmetry");
  if (psnr(x, x) != kPsnrCap) problems.push_back("psnr identity");

  const Dataset ds = gen_constant_velocity(ConstantVelocitySpec{8, 7, 16, 4, 1, false, 1, 10});
  const IdentityCodec id;
  const EvalReport rep = evaluate(
      ds, id, [](const std::vector<TensorF>& c, std::size_t n, std::size_t) { return copy_last_baseline(c, n); }, EvalConfig{});
  double direct = 0;
  for (const auto& clip : ds.clips) {
    const auto f = copy_last_baseline({clip[0], clip[1]}, 5);
    for (std::size_t j = 0; j < 5; ++j) direct += psnr(f[j], clip[2 + j]);
  }
  direct /= 40.0;
  if (rep.aggregate.psnr != rep.baseline.psnr || rep.aggregate.ssim != rep.baseline.ssim ||
      std::abs(rep.aggregate.psnr - direct) > 1e-9) {
    problems.push_back("evaluate vs baseline");
  }
  std::string detail = problems.empty() ? fmt("20 dB case, identity, symmetry; copy-last as model %.4f dB = baseline",
                                              rep.aggregate.psnr)
                                        : "failed:";
  for (const auto& p : problems) detail += " " + p;
  report(10, problems.empty(), "metric sanity", detail);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  gradients();
  path_consistency();
  solver_order();
  index_laws();

  const Trained with_ref = train_desk("predict, reference", desk_config(true, Mode::predict));
  end_to_end(with_ref);
  warm_start(with_ref);
  const Trained no_ref = train_desk("predict, no reference", desk_config(false, Mode::predict));
  reference_ablation(with_ref, no_ref);
  const Trained interp = train_desk("interpolate", desk_config(false, Mode::interpolate));
  interpolation(interp);
  serialization(with_ref);
  metric_sanity();

  std::printf("acceptance: %d of 10 criteria failed (%.0fs)\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
