#include "vidflow/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace vidflow {

double mse(const TensorF& a, const TensorF& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

double psnr(const TensorF& a, const TensorF& b, double max_val) {
  if (!(max_val > 0.0)) throw std::invalid_argument("psnr: max_val must be > 0");
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / m));
}

double ssim(const TensorF& a, const TensorF& b, double max_val, const SsimOptions& opt) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const Shape& s = a.shape();
  if (s.rank() != 2 && s.rank() != 3) throw ShapeError("ssim: expected [H,W] or [C,H,W], got " + s.str());
  const std::size_t c = s.rank() == 3 ? s[0] : 1, h = s[s.rank() - 2], w = s[s.rank() - 1];
  const std::size_t k = opt.window;
  if (k == 0 || h < k || w < k) {
    throw std::invalid_argument("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than window " +
                                std::to_string(k));
  }
  const double c1 = (opt.k1 * max_val) * (opt.k1 * max_val);
  const double c2 = (opt.k2 * max_val) * (opt.k2 * max_val);
  const double n = static_cast<double>(k * k);
  double total = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* pa = a.data().data() + ch * h * w;
    const float* pb = b.data().data() + ch * h * w;
    double sum = 0.0;
    for (std::size_t r = 0; r + k <= h; ++r) {
      for (std::size_t q = 0; q + k <= w; ++q) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const double x = pa[(r + i) * w + q + j], y = pb[(r + i) * w + q + j];
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
          }
        }
        const double ma = sa / n, mb = sb / n;
        const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
        sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
    total += sum / static_cast<double>((h - k + 1) * (w - k + 1));
  }
  return total / static_cast<double>(c);
}

std::vector<TensorF> copy_last_baseline(const std::vector<TensorF>& context, std::size_t n_future) {
  if (context.empty()) throw std::invalid_argument("copy_last_baseline: empty context");
  return std::vector<TensorF>(n_future, context.back());
}

Scores mean_scores(const std::vector<FrameScore>& s) {
  Scores m;
  if (s.empty()) return m;
  for (const auto& f : s) {
    m.psnr += f.psnr;
    m.ssim += f.ssim;
    m.mse += f.mse;
  }
  const double n = static_cast<double>(s.size());
  m.psnr /= n;
  m.ssim /= n;
  m.mse /= n;
  return m;
}

namespace {

FrameScore score(const TensorF& pred, const TensorF& truth, const EvalConfig& cfg, std::size_t clip, std::size_t step) {
  return FrameScore{clip, step, psnr(pred, truth, cfg.max_val), ssim(pred, truth, cfg.max_val, cfg.ssim),
                    mse(pred, truth)};
}

std::vector<Scores> by_step(const std::vector<FrameScore>& s, std::size_t horizon) {
  std::vector<Scores> out;
  for (std::size_t k = 1; k <= horizon; ++k) {
    std::vector<FrameScore> sel;
    for (const auto& f : s) {
      if (f.step == k) sel.push_back(f);
    }
    out.push_back(mean_scores(sel));
  }
  return out;
}

}  // namespace

EvalReport evaluate(const Dataset& pixel_clips, const Codec& codec, const Predictor& predict, const EvalConfig& cfg) {
  if (cfg.context_frames < 1 || cfg.horizon < 1) throw std::invalid_argument("evaluate: need context >= 1 and horizon >= 1");
  if (pixel_clips.frames_per_clip < cfg.context_frames + cfg.horizon) {
    throw std::invalid_argument("evaluate: clips have " + std::to_string(pixel_clips.frames_per_clip) +
                                " frames, need " + std::to_string(cfg.context_frames + cfg.horizon));
  }
  EvalReport rep;
  rep.config = cfg;
  std::vector<FrameScore> base;
  for (std::size_t k = 0; k < pixel_clips.clips.size(); ++k) {
    const Clip& clip = pixel_clips.clips[k];
    std::vector<TensorF> context;
    for (std::size_t f = 0; f < cfg.context_frames; ++f) context.push_back(codec.encode(clip[f]));
    const std::vector<TensorF> future = predict(context, cfg.horizon, k);
    if (future.size() != cfg.horizon) throw std::runtime_error("evaluate: predictor returned the wrong frame count");
    const std::vector<TensorF> copy = copy_last_baseline({clip[cfg.context_frames - 1]}, cfg.horizon);
    std::vector<FrameScore> mine;
    for (std::size_t j = 0; j < cfg.horizon; ++j) {
      const TensorF& gt = clip[cfg.context_frames + j];
      const TensorF truth = cfg.space == EvalSpace::ae_gt ? codec.decode(codec.encode(gt)) : gt;
      mine.push_back(score(codec.decode(future[j]), truth, cfg, k, j + 1));
      base.push_back(score(copy[j], truth, cfg, k, j + 1));
    }
    rep.per_clip.push_back(mean_scores(mine));
    rep.samples.insert(rep.samples.end(), mine.begin(), mine.end());
  }
  rep.aggregate = mean_scores(rep.samples);
  rep.per_step = by_step(rep.samples, cfg.horizon);
  rep.baseline = mean_scores(base);
  rep.baseline_per_step = by_step(base, cfg.horizon);
  return rep;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "eval.context_frames=" << config.context_frames << "\n"
     << "eval.horizon=" << config.horizon << "\n"
     << "eval.max_val=" << config.max_val << "\n"
     << "eval.space=" << (config.space == EvalSpace::pixel ? "pixel" : "ae_gt") << "\n"
     << "eval.ssim_window=" << config.ssim.window << "\n"
     << "eval.ssim_k1=" << config.ssim.k1 << "\n"
     << "eval.ssim_k2=" << config.ssim.k2 << "\n"
     << "eval.psnr_cap=" << kPsnrCap << "\n"
     << "clips=" << per_clip.size() << "\n"
     << "samples=" << samples.size() << "\n"
     << "psnr=" << aggregate.psnr << "\n"
     << "ssim=" << aggregate.ssim << "\n"
     << "mse=" << aggregate.mse << "\n"
     << "baseline.copy_last.psnr=" << baseline.psnr << "\n"
     << "baseline.copy_last.ssim=" << baseline.ssim << "\n"
     << "baseline.copy_last.mse=" << baseline.mse << "\n";
  for (std::size_t k = 0; k < per_clip.size(); ++k) {
    os << "clip." << k << ".psnr=" << per_clip[k].psnr << "\n"
       << "clip." << k << ".ssim=" << per_clip[k].ssim << "\n"
       << "clip." << k << ".mse=" << per_clip[k].mse << "\n";
  }
  return os.str();
}

std::string EvalReport::curves_csv() const {
  std::ostringstream os;
  os << std::setprecision(10) << "step,psnr,ssim,mse,baseline_psnr,baseline_ssim,baseline_mse\n";
  for (std::size_t k = 0; k < per_step.size(); ++k) {
    os << k + 1 << ',' << per_step[k].psnr << ',' << per_step[k].ssim << ',' << per_step[k].mse << ','
       << baseline_per_step[k].psnr << ',' << baseline_per_step[k].ssim << ',' << baseline_per_step[k].mse << "\n";
  }
  return os.str();
}

}  // namespace vidflow
