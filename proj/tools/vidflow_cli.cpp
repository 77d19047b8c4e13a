// vidflow command-line tool: gen, train, sample, eval, interp, sweep.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vidflow/checkpoint.hpp"
#include "vidflow/config.hpp"
#include "vidflow/errors.hpp"
#include "vidflow/pipeline.hpp"

using namespace vidflow;
namespace fs = std::filesystem;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kBadArgs = 2, kIo = 3, kNonFinite = 4, kModeMismatch = 5, kShapeMismatch = 6 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  bool strict = false;
  std::vector<std::string> sets;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw FileError(FileErrc::io, "cannot open " + p.string() + " for writing");
  os << text;
  if (!os) throw FileError(FileErrc::io, "write failed: " + p.string());
}

// file, then subcommand shortcuts, then --set, then --seed / --strict-sequential
RunConfig assemble(const Globals& g, RunConfig base, const std::vector<std::pair<std::string, std::string>>& shortcuts) {
  if (!g.config_path.empty()) base.apply_file(g.config_path);
  for (const auto& [k, v] : shortcuts) base.set(k, v);
  for (const auto& kv : g.sets) base.apply_text(kv);
  if (g.seed) base.seed = *g.seed;
  if (g.strict) base.train.threads = 1;
  base.validate();
  return base;
}

fs::path out_dir(const Globals& g) {
  fs::create_directories(g.out);
  return g.out;
}

// Held-out pixel clips: DIR/test.fvds when --data is given, else regenerated from the config.
Dataset test_clips(const RunConfig& cfg, const std::string& data_dir) {
  if (!data_dir.empty()) return load_dataset(fs::path(data_dir) / "test.fvds");
  return generate_data(cfg).test;
}

std::string join_frames_dir(const fs::path& dir, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%03zu.pgm", i);
  return (dir / name).string();
}

void export_frames(const fs::path& dir, const std::vector<TensorF>& pixels) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < pixels.size(); ++i) write_pgm(pixels[i], join_frames_dir(dir, i));
  write_montage_pgm(pixels, dir / "montage.pgm");
}

int run(int argc, char** argv) {
  CLI::App app{"vidflow: flow-matching video prediction at desk scale"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_flag("--strict-sequential", g.strict, "single-threaded, bit-reproducible training");
  app.add_option("--set", g.sets, "override one config key (KEY=VALUE), repeatable");

  // gen
  auto* gen = app.add_subcommand("gen", "generate train/test datasets");
  std::string kind;
  std::optional<std::size_t> clips, test_n, frames, grid;
  gen->add_option("--kind", kind, "const-velocity | bouncing-balls");
  gen->add_option("--clips", clips);
  gen->add_option("--test-clips", test_n);
  gen->add_option("--frames", frames);
  gen->add_option("--grid", grid);

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::optional<std::size_t> iterations;
  std::string mode, data_dir, resume;
  train->add_option("--iterations", iterations);
  train->add_option("--mode", mode, "predict | interpolate");
  train->add_option("--data", data_dir, "directory holding train.fvds (default: generate from config)");
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  // sample
  auto* sample = app.add_subcommand("sample", "roll out one held-out clip and export PGM frames");
  std::string ckpt;
  std::size_t clip_index = 0;
  std::optional<std::size_t> n_future;
  sample->add_option("--checkpoint", ckpt)->required();
  sample->add_option("--data", data_dir);
  sample->add_option("--clip", clip_index)->capture_default_str();
  sample->add_option("--frames", n_future, "future frames (default eval.horizon)");

  // eval
  auto* eval = app.add_subcommand("eval", "rollout PSNR/SSIM against copy-last on held-out clips");
  bool baseline_only = false;
  eval->add_option("--checkpoint", ckpt);
  eval->add_option("--data", data_dir);
  eval->add_flag("--baseline", baseline_only, "score copy-last-frame as the model");

  // interp
  auto* interp = app.add_subcommand("interp", "fill frames between two frames of a held-out clip");
  std::size_t from = 0, to = 2;
  std::optional<std::size_t> between;
  bool interp_eval = false;
  interp->add_option("--checkpoint", ckpt)->required();
  interp->add_option("--data", data_dir);
  interp->add_option("--clip", clip_index)->capture_default_str();
  interp->add_option("--from", from)->capture_default_str();
  interp->add_option("--to", to)->capture_default_str();
  interp->add_option("--between", between, "frames to generate (default to-from-1)");
  interp->add_flag("--eval", interp_eval, "one-frame infilling vs. linear over all held-out clips");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "warm-start, context-limit or reference ablation");
  std::string param = "warm_start_s", ckpt_b;
  std::vector<std::string> values;
  sweep->add_option("--checkpoint", ckpt)->required();
  sweep->add_option("--param", param)
      ->check(CLI::IsMember({"warm_start_s", "context_limit", "use_reference"}))
      ->capture_default_str();
  sweep->add_option("--values", values, "comma-separated settings")->delimiter(',');
  sweep->add_option("--checkpoint-b", ckpt_b, "no-reference checkpoint for use_reference");
  sweep->add_option("--data", data_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadArgs;
  }

  if (*gen) {
    std::vector<std::pair<std::string, std::string>> sc;
    if (!kind.empty()) sc.emplace_back("data.kind", kind);
    if (clips) sc.emplace_back("data.clips", std::to_string(*clips));
    if (test_n) sc.emplace_back("data.test_clips", std::to_string(*test_n));
    if (frames) sc.emplace_back("data.frames", std::to_string(*frames));
    if (grid) sc.emplace_back("data.grid", std::to_string(*grid));
    const RunConfig cfg = assemble(g, RunConfig{}, sc);
    const GeneratedData d = generate_data(cfg);
    const fs::path out = out_dir(g);
    save_dataset(d.train, out / "train.fvds");
    save_dataset(d.test, out / "test.fvds");
    write_text(out / "config.txt", cfg.to_text());
    std::cout << "kind=" << cfg.data.kind << " train_clips=" << d.train.clips.size()
              << " test_clips=" << d.test.clips.size() << " frames=" << d.train.frames_per_clip
              << " shape=" << d.train.frame_shape().str() << "\n";
    return kOk;
  }

  if (*train) {
    std::vector<std::pair<std::string, std::string>> sc;
    if (iterations) sc.emplace_back("train.iterations", std::to_string(*iterations));
    if (!mode.empty()) sc.emplace_back("model.mode", mode);
    RunConfig base;
    std::optional<TrainState> state;
    if (!resume.empty()) {
      Checkpoint ck = load_checkpoint(resume);
      base = ck.config;
      state = std::move(ck.state);
    }
    const RunConfig cfg = assemble(g, base, sc);
    const ModelConfig mcfg = cfg.model_config();
    const auto codec = cfg.codec();
    const Dataset pixels = data_dir.empty() ? generate_data(cfg).train : load_dataset(fs::path(data_dir) / "train.fvds");
    const Dataset latents = encode_dataset(pixels, *codec);
    if (!state) state = init_train_state(mcfg, cfg.seed);

    const fs::path out = out_dir(g);
    write_text(out / "config.txt", cfg.to_text());
    const fs::path ck_path = out / "checkpoint.fckp";
    std::ofstream log(out / "loss.csv", resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw FileError(FileErrc::io, "cannot open loss.csv");
    if (resume.empty()) log << "iter,loss,lr\n";
    double ema = 0.0;
    bool first = true;
    TrainCallbacks cb;
    cb.on_step = [&](std::size_t it, const StepResult& r) {
      log << it << ',' << r.loss << ',' << r.lr << '\n';
      ema = first ? r.loss : 0.98 * ema + 0.02 * r.loss;
      first = false;
      if (it % 100 == 0) std::cout << "iter " << it << " loss " << r.loss << " smoothed " << ema << std::endl;
    };
    cb.on_checkpoint = [&](const TrainState& s) { save_checkpoint(ck_path, cfg, s); };
    try {
      train_loop(latents, mcfg, cfg.train_config(), *state, cb);
    } catch (const NonFiniteError&) {
      save_checkpoint(out / "last_finite.fckp", cfg, *state);
      throw;
    }
    save_checkpoint(ck_path, cfg, *state);
    std::cout << "wrote " << ck_path.string() << " (step " << state->opt.step << ")\n";
    return kOk;
  }

  if (*sample) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const RunConfig cfg = assemble(g, ck.config, {});
    const FlowModel model = network_model(cfg.model_config(), ck.state.params);
    if (model.cfg.mode != Mode::predict) throw ModeMismatch("sample needs a predict-mode checkpoint; use interp");
    const Dataset test = test_clips(cfg, data_dir);
    if (clip_index >= test.clips.size()) throw std::invalid_argument("--clip out of range");
    const auto codec = cfg.codec();
    const Clip& clip = test.clips[clip_index];
    const std::size_t nctx = cfg.eval.context_frames;
    if (clip.size() < nctx) throw std::invalid_argument("clip shorter than eval.context_frames");
    std::vector<TensorF> ctx;
    for (std::size_t f = 0; f < nctx; ++f) ctx.push_back(codec->encode(clip[f]));
    Rng rng = Rng::derive(cfg.seed, "sample", clip_index);
    const Rollout r = rollout(ctx, n_future.value_or(cfg.eval.horizon), model, cfg.sample_config(), rng);
    std::vector<TensorF> pixels(clip.begin(), clip.begin() + static_cast<std::ptrdiff_t>(nctx));
    for (const auto& f : r.frames) pixels.push_back(codec->decode(f));
    const fs::path out = out_dir(g);
    export_frames(out / ("sample_clip" + std::to_string(clip_index)), pixels);
    write_text(out / "config.txt", cfg.to_text());
    std::cout << "frames=" << r.frames.size() << " network_evals=" << r.network_evals << "\n";
    return kOk;
  }

  if (*eval) {
    std::optional<Checkpoint> ck;
    if (!ckpt.empty()) ck = load_checkpoint(ckpt);
    if (!ck && !baseline_only) throw std::invalid_argument("eval needs --checkpoint or --baseline");
    const RunConfig cfg = assemble(g, ck ? ck->config : RunConfig{}, {});
    const Dataset test = test_clips(cfg, data_dir);
    const auto codec = cfg.codec();
    Predictor predict;
    auto evals = std::make_shared<std::size_t>(0);
    if (baseline_only) {
      predict = [](const std::vector<TensorF>& ctx, std::size_t n, std::size_t) { return copy_last_baseline(ctx, n); };
    } else {
      const FlowModel model = network_model(cfg.model_config(), ck->state.params);
      if (model.cfg.mode != Mode::predict) throw ModeMismatch("eval needs a predict-mode checkpoint; use interp --eval");
      predict = rollout_predictor(model, cfg.sample_config(), evals);
    }
    const EvalReport rep = evaluate(test, *codec, predict, cfg.eval_config());
    const fs::path out = out_dir(g);
    const std::string text = rep.to_text() + "network_evals=" + std::to_string(*evals) + "\n";
    write_text(out / "eval_report.txt", text);
    write_text(out / "eval_curves.csv", rep.curves_csv());
    write_text(out / "config.txt", cfg.to_text());
    std::cout << text;
    return kOk;
  }

  if (*interp) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const RunConfig cfg = assemble(g, ck.config, {});
    const FlowModel model = network_model(cfg.model_config(), ck.state.params);
    if (model.cfg.mode != Mode::interpolate) throw ModeMismatch("interp needs an interpolate-mode checkpoint");
    const Dataset test = test_clips(cfg, data_dir);
    const auto codec = cfg.codec();
    const fs::path out = out_dir(g);
    write_text(out / "config.txt", cfg.to_text());
    if (interp_eval) {
      const InterpReport rep = evaluate_interpolation(test, *codec, model, cfg.sample_config(), cfg.eval_config());
      write_text(out / "interp_report.txt", rep.to_text());
      std::cout << rep.to_text();
      return kOk;
    }
    if (clip_index >= test.clips.size()) throw std::invalid_argument("--clip out of range");
    const Clip& clip = test.clips[clip_index];
    if (to <= from || to >= clip.size()) throw std::invalid_argument("need --from < --to < frames per clip");
    const std::size_t n = between.value_or(to - from - 1);
    Rng rng = Rng::derive(cfg.seed, "sample", clip_index);
    const Interpolation r =
        interpolate(codec->encode(clip[from]), codec->encode(clip[to]), n, model, cfg.sample_config(), rng);
    std::vector<TensorF> pixels{clip[from]};
    for (const auto& f : r.frames) pixels.push_back(codec->decode(f));
    pixels.push_back(clip[to]);
    export_frames(out / ("interp_clip" + std::to_string(clip_index)), pixels);
    std::cout << "frames=" << r.frames.size() << " network_evals=" << r.network_evals << "\n";
    return kOk;
  }

  if (*sweep) {
    const Checkpoint ck = load_checkpoint(ckpt);
    const RunConfig cfg = assemble(g, ck.config, {});
    const Dataset test = test_clips(cfg, data_dir);
    const auto codec = cfg.codec();
    if (values.empty()) {
      if (param == "warm_start_s") values = {"0", "0.2", "0.4", "0.6", "0.8"};
      if (param == "context_limit") values = {"2", "4", "6", "8"};
      if (param == "use_reference") values = {"true", "false"};
    }
    std::optional<Checkpoint> ck_b;
    if (param == "use_reference") {
      if (ckpt_b.empty()) throw std::invalid_argument("use_reference sweep needs --checkpoint-b");
      ck_b = load_checkpoint(ckpt_b);
      if (!ck.config.model.use_reference || ck_b->config.model.use_reference) {
        throw std::invalid_argument("--checkpoint must use a reference and --checkpoint-b must not");
      }
    }
    std::ostringstream csv;
    csv << param << ",network_evals,psnr,ssim,mse,baseline_psnr\n";
    for (const auto& v : values) {
      RunConfig c = cfg;
      const ModelParams<float>* params = &ck.state.params;
      if (param == "use_reference") {
        if (v != "true" && v != "false") throw std::invalid_argument("use_reference values are true/false");
        if (v == "false") {
          c = assemble(g, ck_b->config, {});
          params = &ck_b->state.params;
        }
      } else {
        c.set("sample." + param, v);
        c.validate();
      }
      const FlowModel model = network_model(c.model_config(), *params);
      if (model.cfg.mode != Mode::predict) throw ModeMismatch("sweep needs predict-mode checkpoints");
      auto evals = std::make_shared<std::size_t>(0);
      const EvalReport rep = evaluate(test, *codec, rollout_predictor(model, c.sample_config(), evals), c.eval_config());
      csv << v << ',' << *evals << ',' << rep.aggregate.psnr << ',' << rep.aggregate.ssim << ',' << rep.aggregate.mse
          << ',' << rep.baseline.psnr << '\n';
    }
    const fs::path out = out_dir(g);
    write_text(out / ("sweep_" + param + ".csv"), csv.str());
    write_text(out / "config.txt", cfg.to_text());
    std::cout << csv.str();
    return kOk;
  }
  return kBadArgs;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NonFiniteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNonFinite;
  } catch (const ModeMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kModeMismatch;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kShapeMismatch;
  } catch (const FileError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == FileErrc::shape_mismatch ? kShapeMismatch : kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadArgs;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
