#include "vidflow/pipeline.hpp"

#include <sstream>
#include <stdexcept>

namespace vidflow {

Dataset encode_dataset(const Dataset& pixels, const Codec& codec) {
  Dataset out = pixels;
  const Shape ls = codec.latent_shape(pixels.frame_shape());
  out.channels = ls[0];
  out.height = ls[1];
  out.width = ls[2];
  for (auto& clip : out.clips) clip = encode_clip(clip, codec);
  return out;
}

Predictor rollout_predictor(const FlowModel& model, const SampleConfig& cfg, std::shared_ptr<std::size_t> evals) {
  return [model, cfg, evals](const std::vector<TensorF>& ctx, std::size_t n, std::size_t k) {
    Rng rng = Rng::derive(cfg.seed, "sample", k);
    Rollout r = rollout(ctx, n, model, cfg, rng);
    if (evals) *evals += r.network_evals;
    return std::move(r.frames);
  };
}

std::string InterpReport::to_text() const {
  std::ostringstream os;
  os << "samples=" << samples << "\n"
     << "psnr=" << model.psnr << "\nssim=" << model.ssim << "\nmse=" << model.mse << "\n"
     << "linear_psnr=" << linear.psnr << "\nlinear_ssim=" << linear.ssim << "\nlinear_mse=" << linear.mse << "\n"
     << "network_evals=" << network_evals << "\n";
  return os.str();
}

InterpReport evaluate_interpolation(const Dataset& pixel_clips, const Codec& codec, const FlowModel& model,
                                    const SampleConfig& cfg, const EvalConfig& ecfg) {
  std::vector<FrameScore> mine, lin;
  InterpReport rep;
  for (std::size_t k = 0; k < pixel_clips.clips.size(); ++k) {
    const Clip& clip = pixel_clips.clips[k];
    if (clip.size() < 3) throw std::invalid_argument("interpolation needs clips of at least 3 frames");
    Rng rng = Rng::derive(cfg.seed, "sample", k);
    for (std::size_t j = 1; j + 1 < clip.size(); ++j) {
      const Interpolation out =
          interpolate(codec.encode(clip[j - 1]), codec.encode(clip[j + 1]), 1, model, cfg, rng);
      rep.network_evals += out.network_evals;
      TensorF mid = clip[j - 1];
      for (std::size_t i = 0; i < mid.numel(); ++i) mid[i] = 0.5f * (clip[j - 1][i] + clip[j + 1][i]);
      const TensorF truth = ecfg.space == EvalSpace::ae_gt ? codec.decode(codec.encode(clip[j])) : clip[j];
      const TensorF guess = codec.decode(out.frames[0]);
      mine.push_back({k, j, psnr(guess, truth, ecfg.max_val), ssim(guess, truth, ecfg.max_val, ecfg.ssim),
                      mse(guess, truth)});
      lin.push_back({k, j, psnr(mid, truth, ecfg.max_val), ssim(mid, truth, ecfg.max_val, ecfg.ssim),
                     mse(mid, truth)});
    }
  }
  rep.samples = mine.size();
  rep.model = mean_scores(mine);
  rep.linear = mean_scores(lin);
  return rep;
}

TrainState train_from_config(const RunConfig& cfg, const TrainCallbacks& cb) {
  cfg.validate();
  const ModelConfig mcfg = cfg.model_config();
  const Dataset latents = encode_dataset(generate_data(cfg).train, *cfg.codec());
  TrainState st = init_train_state(mcfg, cfg.seed);
  train_loop(latents, mcfg, cfg.train_config(), st, cb);
  return st;
}

}  // namespace vidflow
