#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidflow/metrics.hpp"
#include "vidflow/model.hpp"
#include "vidflow/sampler.hpp"
#include "vidflow/trainer.hpp"
#include "vidflow/video.hpp"

namespace vidflow {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string kind = "const-velocity";  // const-velocity | bouncing-balls
  std::size_t clips = 64;
  std::size_t test_clips = 8;
  std::size_t frames = 12;
  std::size_t grid = 16;
  std::size_t channels = 1;
  std::size_t square = 4;
  int max_speed = 1;
  bool allow_static = false;
  std::size_t n_balls = 1;
  double radius = 2.5;
  double speed_min = 0.5;
  double speed_max = 1.5;
  bool collisions = true;
  std::string codec = "identity";  // identity | avgpool
  std::size_t pool = 2;
};

/// Every setting of a run. Keys are namespaced (data.grid, model.depth,
/// train.base_lr, sample.n_steps, eval.horizon) plus the global `seed`.
/// Text form: one key=value per line, '#' starts a comment.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  SampleConfig sample;
  EvalConfig eval;

  /// Throws ConfigError for an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  /// Applies "key=value" lines on top of the current values.
  void apply_text(const std::string& text);
  void apply_file(const std::filesystem::path& path);
  /// Every key, one per line, in a fixed order; parse(to_text()) reproduces *this.
  std::string to_text() const;
  static RunConfig parse(const std::string& text);

  /// Model config with the latent shape implied by the data and codec, and
  /// the condition slot count implied by the mode.
  ModelConfig model_config() const;
  TrainConfig train_config() const;
  SampleConfig sample_config() const;
  EvalConfig eval_config() const { return eval; }
  std::unique_ptr<Codec> codec() const;

  /// Checks cross-key consistency (e.g. grid divisible by the pooling factor).
  void validate() const;

  friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.to_text() == b.to_text(); }
};

/// Training and held-out clips generated from data.* and the "data" stream of `seed`.
struct GeneratedData {
  Dataset train;
  Dataset test;
};
GeneratedData generate_data(const RunConfig& cfg);

}  // namespace vidflow
