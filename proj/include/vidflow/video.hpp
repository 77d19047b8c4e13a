#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vidflow/rng.hpp"
#include "vidflow/tensor.hpp"

namespace vidflow {

/// Frames of one video, each [channels, height, width].
using Clip = std::vector<TensorF>;

/// Throws std::invalid_argument unless the clip has >= 3 frames of one shape.
void validate_clip(const Clip& clip);

struct Dataset {
  std::size_t frames_per_clip = 0;
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Clip> clips;

  Shape frame_shape() const { return Shape{channels, height, width}; }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Synthetic generators

struct Ball {
  double x = 0, y = 0;    // centre, pixel units; pixel (r, c) covers [c, c+1) x [r, r+1)
  double vx = 0, vy = 0;  // pixels per frame
  double radius = 2.0;
};

struct BouncingBallsSpec {
  std::size_t n_clips = 64;
  std::size_t frames = 12;
  std::size_t grid = 16;
  std::size_t n_balls = 1;
  double radius = 2.5;
  double speed_min = 0.5;
  double speed_max = 1.5;
  bool collisions = true;
  std::size_t channels = 1;
  std::uint64_t seed = 0;
};

/// Advances every ball by one frame. A ball that reaches a wall (centre within
/// `radius` of it) is mirrored back inside and its velocity component flips.
/// With `collisions`, overlapping approaching balls exchange their normal velocity components.
void step_balls(std::vector<Ball>& balls, std::size_t grid, bool collisions);

/// Anti-aliased discs: each pixel holds the supersampled fraction of its area
/// covered by a ball, summed over balls and clamped to [0, 1].
TensorF render_balls(const std::vector<Ball>& balls, std::size_t grid, std::size_t channels = 1);

/// Rejects infeasible geometry (grid < 8, radius <= 0, balls that cannot fit).
Dataset gen_bouncing_balls(const BouncingBallsSpec& spec);

struct ConstantVelocitySpec {
  std::size_t n_clips = 64;
  std::size_t frames = 12;
  std::size_t grid = 16;
  std::size_t square = 4;
  int max_speed = 1;          // velocity components drawn from {-max_speed..max_speed}
  bool allow_static = false;  // whether v = (0,0) may be drawn
  std::size_t channels = 1;
  std::uint64_t seed = 0;
};

/// One `square`-sized block at (row, col) of frame 0, translating by (vy, vx)
/// pixels per frame with toroidal wrap.
Clip render_constant_velocity(std::size_t grid, std::size_t frames, std::size_t square, int row, int col, int vy,
                              int vx, std::size_t channels = 1);

Dataset gen_constant_velocity(const ConstantVelocitySpec& spec);

// ---------------------------------------------------------------------------
// Latent codecs (stand-in for a learned autoencoder)

class Codec {
 public:
  virtual ~Codec() = default;
  virtual std::string name() const = 0;
  /// Throws std::invalid_argument when `pixel` cannot be encoded by this codec.
  virtual Shape latent_shape(const Shape& pixel) const = 0;
  virtual TensorF encode(const TensorF& pixel) const = 0;
  virtual TensorF decode(const TensorF& latent) const = 0;
};

class IdentityCodec final : public Codec {
 public:
  std::string name() const override { return "identity"; }
  Shape latent_shape(const Shape& pixel) const override { return pixel; }
  TensorF encode(const TensorF& pixel) const override { return pixel; }
  TensorF decode(const TensorF& latent) const override { return latent; }
};

/// k x k mean pooling on encode, nearest-neighbour upsampling on decode.
class AvgPoolCodec final : public Codec {
 public:
  explicit AvgPoolCodec(std::size_t k);
  std::string name() const override { return "avgpool"; }
  Shape latent_shape(const Shape& pixel) const override;
  TensorF encode(const TensorF& pixel) const override;
  TensorF decode(const TensorF& latent) const override;
  std::size_t factor() const { return k_; }

 private:
  std::size_t k_;
};

/// "identity" or "avgpool" (with factor `k`).
std::unique_ptr<Codec> make_codec(const std::string& name, std::size_t k);

Clip encode_clip(const Clip& clip, const Codec& codec);
Clip decode_clip(const Clip& clip, const Codec& codec);

/// Scalar brightness shift applied identically to every frame, clamped to [0, 1].
Clip shift_brightness(const Clip& clip, float delta);

// ---------------------------------------------------------------------------
// Files

/// "FVDS" | version u32 | clip_count u32 | frames_per_clip u32 | channels u32 |
/// height u32 | width u32 | scalar tag u8 (0 = f32 LE) | clips, frame-major, row-major.
inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
/// Throws FileError with a distinct code for each failure kind.
Dataset load_dataset(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255) of channel 0 of a frame; values clamped to [0, 1].
void write_pgm(const TensorF& frame, const std::filesystem::path& path);
/// Frames side by side, left to right.
void write_montage_pgm(std::span<const TensorF> frames, const std::filesystem::path& path);

}  // namespace vidflow
