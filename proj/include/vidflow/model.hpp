#pragma once

// U-ViT style regressor for the conditional vector field
//   v_t(x | reference frame, condition frame(s), relative distance(s)).
//
// Tokens: one per latent pixel (patch size 1) plus a leading time token.
// Spatial token features are the channel-wise concatenation of the noisy
// state, the reference frame (when enabled) and the condition frames,
// linearly projected to token_dim. Fixed 2D sinusoidal position codes and a
// projected sinusoidal code of the relative distances are added to every
// spatial token. The blocks are pre-norm ViT blocks; block i < skip_pairs
// feeds block depth-1-i through a concat + linear long skip.
// Out projection: linear -> GELU -> layer norm -> 3x3 convolution.

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vidflow/autodiff.hpp"
#include "vidflow/rng.hpp"
#include "vidflow/tensor.hpp"

namespace vidflow {

enum class Mode { predict, interpolate };

const char* to_string(Mode m);
Mode parse_mode(const std::string& s);

struct ModelConfig {
  std::size_t latent_channels = 1;
  std::size_t latent_height = 16;
  std::size_t latent_width = 16;
  std::size_t token_dim = 64;
  std::size_t depth = 5;
  std::size_t heads = 4;
  std::size_t skip_pairs = 2;
  std::size_t mlp_ratio = 4;
  int max_distance = 4;
  bool use_reference = true;
  std::size_t condition_slots = 1;
  Mode mode = Mode::predict;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;

  std::size_t n_tokens() const { return latent_height * latent_width + 1; }
  std::size_t input_features() const {
    return (1 + (use_reference ? 1 : 0) + condition_slots) * latent_channels;
  }
  Shape latent_shape() const { return Shape{latent_channels, latent_height, latent_width}; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named parameter tensors in a canonical order fixed by the config.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg);

/// Closed-form parameter count (d = token_dim, r = mlp_ratio, C = channels, S = condition slots, F = input features):
///   F d + d  +  d^2 + d  +  S d^2 + d  +  depth ((4 + 2r) d^2 + (9 + r) d)
///   + skip_pairs (2 d^2 + d)  +  d^2 + 3 d  +  9 d C + C
std::size_t param_count(const ModelConfig& cfg);

/// Whether AdamW weight decay applies to a parameter (projection/conv weights only).
bool decays(const std::string& name);

template <class T>
using ModelParams = std::map<std::string, Tensor<T>>;

/// Truncated N(0, 0.02^2) (cut at 2 sigma) weights, zero biases, unit norm gains,
/// and a zero output convolution so the initial field is identically zero.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, Rng& rng);

/// Throws ShapeError unless `params` has exactly the layout of `cfg`.
template <class T>
void check_params(const ModelConfig& cfg, const ModelParams<T>& params);

template <class T>
ModelParams<T> cast_params(const ModelParams<float>& p) {
  ModelParams<T> out;
  for (const auto& [k, v] : p) out.emplace(k, v.template cast<T>());
  return out;
}

/// Inputs of one field evaluation. Predict mode: one condition with dist = tau - c >= 1.
/// Interpolate mode: no reference, two conditions with signed offsets (condition index - target index).
template <class T>
struct FieldInput {
  Tensor<T> x;
  Tensor<T> ref;
  std::vector<Tensor<T>> conds;
  std::vector<int> dists;
  double t = 0.0;
};

template <class T>
using BoundParams = std::map<std::string, Var<T>>;

template <class T>
BoundParams<T> bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad);

/// [n_tokens, token_dim] token sequence; token 0 is the time token.
template <class T>
Var<T> tokenize(Tape<T>& tape, const FieldInput<T>& in, const ModelConfig& cfg, const BoundParams<T>& p);

/// Maps a token sequence to a field of shape [C, H, W].
template <class T>
Var<T> forward(Tape<T>& tape, Var<T> tokens, const ModelConfig& cfg, const BoundParams<T>& p);

/// tokenize + forward without recording gradients.
template <class T>
Tensor<T> evaluate_field(const ModelParams<T>& params, const ModelConfig& cfg, const FieldInput<T>& in);

/// 3x3 convolution, unit stride, zero padding 1. x [Cin,H,W], w [Cout,Cin,3,3], b [Cout].
template <class T>
Var<T> conv3x3(Var<T> x, Var<T> w, Var<T> b);

/// [sin(v f_0) .. sin(v f_{h-1}), cos(v f_0) .. cos(v f_{h-1})], f_i = max_period^(-i/h), h = dim/2.
std::vector<double> sinusoidal_embedding(double v, std::size_t dim, double max_period = 10000.0);

/// Row code in the first half of the features, column code in the second half.
/// Wavelengths run from 2 px to about 4x the side, so every frequency varies across the grid.
/// Amplitude 0.1.
template <class T>
Tensor<T> position_encoding_2d(std::size_t height, std::size_t width, std::size_t dim);

}  // namespace vidflow
