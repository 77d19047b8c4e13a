#pragma once

// Glue shared by the command-line tool, the acceptance runs and the Python module.

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "vidflow/config.hpp"
#include "vidflow/metrics.hpp"
#include "vidflow/sampler.hpp"
#include "vidflow/trainer.hpp"

namespace vidflow {

/// Every frame through codec.encode; the header takes the latent extents.
Dataset encode_dataset(const Dataset& pixels, const Codec& codec);

/// Rollout predictor for evaluate(). Clip k samples from the ("sample", k)
/// stream of cfg.seed. Network evaluations are added to *evals when given.
Predictor rollout_predictor(const FlowModel& model, const SampleConfig& cfg,
                            std::shared_ptr<std::size_t> evals = nullptr);

/// One-frame infilling: for every held-out clip and every j in 1..m-2, the
/// model fills frame j from frames j-1 and j+1; linear is their pixel mean.
struct InterpReport {
  std::size_t samples = 0;
  Scores model;
  Scores linear;
  std::size_t network_evals = 0;

  std::string to_text() const;
};
InterpReport evaluate_interpolation(const Dataset& pixel_clips, const Codec& codec, const FlowModel& model,
                                    const SampleConfig& cfg, const EvalConfig& ecfg);

/// Trains from scratch on the training split of generate_data(cfg).
TrainState train_from_config(const RunConfig& cfg, const TrainCallbacks& cb = {});

}  // namespace vidflow
