#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vidflow/tensor.hpp"
#include "vidflow/video.hpp"

namespace vidflow {

inline constexpr double kPsnrCap = 100.0;

double mse(const TensorF& a, const TensorF& b);

/// 10 log10(max_val^2 / mse), or kPsnrCap when the inputs are identical.
double psnr(const TensorF& a, const TensorF& b, double max_val = 1.0);

struct SsimOptions {
  std::size_t window = 7;  // uniform window, valid positions only
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM of [C,H,W] (or [H,W]) images, averaged over channels.
/// Local statistics use population (1/n) moments.
double ssim(const TensorF& a, const TensorF& b, double max_val = 1.0, const SsimOptions& opt = {});

/// The last context frame repeated n_future times.
std::vector<TensorF> copy_last_baseline(const std::vector<TensorF>& context, std::size_t n_future);

/// Anything that extends a latent context by n_future latent frames.
/// `clip_index` lets a predictor derive a per-clip random stream.
using Predictor =
    std::function<std::vector<TensorF>(const std::vector<TensorF>& context, std::size_t n_future, std::size_t clip_index)>;

enum class EvalSpace {
  pixel,   // decoded prediction vs. ground truth
  ae_gt,   // decoded prediction vs. decode(encode(ground truth))
};

struct EvalConfig {
  std::size_t context_frames = 2;
  std::size_t horizon = 5;
  double max_val = 1.0;
  SsimOptions ssim;
  EvalSpace space = EvalSpace::pixel;
};

struct FrameScore {
  std::size_t clip = 0;
  std::size_t step = 0;  // 1-based horizon index
  double psnr = 0, ssim = 0, mse = 0;
};

struct Scores {
  double psnr = 0, ssim = 0, mse = 0;
};

struct EvalReport {
  EvalConfig config;
  std::vector<FrameScore> samples;  // clip-major, then horizon
  std::vector<Scores> per_clip;
  std::vector<Scores> per_step;  // curves over the horizon
  Scores aggregate;              // mean over every sample
  Scores baseline;               // copy-last-frame on the same samples
  std::vector<Scores> baseline_per_step;

  /// key=value lines.
  std::string to_text() const;
  /// step,psnr,ssim,mse,baseline_psnr,baseline_ssim,baseline_mse
  std::string curves_csv() const;
};

Scores mean_scores(const std::vector<FrameScore>& s);

/// Encodes the first context_frames of every clip, asks `predict` for `horizon`
/// more latents, decodes them and scores each against the matching ground
/// truth frame. Clips must hold context_frames + horizon frames.
EvalReport evaluate(const Dataset& pixel_clips, const Codec& codec, const Predictor& predict, const EvalConfig& cfg);

}  // namespace vidflow
