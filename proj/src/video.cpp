#include "vidflow/video.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "vidflow/io.hpp"

namespace vidflow {

void validate_clip(const Clip& clip) {
  if (clip.size() < 3) throw std::invalid_argument("clip needs >= 3 frames, got " + std::to_string(clip.size()));
  for (const auto& f : clip) require_same_shape(f.shape(), clip.front().shape(), "clip frame");
}

// ---------------------------------------------------------------------------
// Bouncing balls

namespace {

void reflect(double& pos, double& vel, double radius, double extent) {
  if (pos + radius >= extent) {
    pos = 2.0 * (extent - radius) - pos;
    vel = -std::abs(vel);
  } else if (pos - radius <= 0.0) {
    pos = 2.0 * radius - pos;
    vel = std::abs(vel);
  }
}

constexpr std::size_t kSupersample = 16;

}  // namespace

void step_balls(std::vector<Ball>& balls, std::size_t grid, bool collisions) {
  const double extent = static_cast<double>(grid);
  for (auto& b : balls) {
    b.x += b.vx;
    b.y += b.vy;
    reflect(b.x, b.vx, b.radius, extent);
    reflect(b.y, b.vy, b.radius, extent);
  }
  if (!collisions) return;
  for (std::size_t i = 0; i < balls.size(); ++i) {
    for (std::size_t j = i + 1; j < balls.size(); ++j) {
      Ball& a = balls[i];
      Ball& b = balls[j];
      const double dx = b.x - a.x, dy = b.y - a.y;
      const double dist = std::hypot(dx, dy);
      if (dist <= 0.0 || dist >= a.radius + b.radius) continue;
      const double nx = dx / dist, ny = dy / dist;
      const double va = a.vx * nx + a.vy * ny, vb = b.vx * nx + b.vy * ny;
      if (va - vb <= 0.0) continue;  // already separating
      // equal masses: swap the normal components
      a.vx += (vb - va) * nx;
      a.vy += (vb - va) * ny;
      b.vx += (va - vb) * nx;
      b.vy += (va - vb) * ny;
    }
  }
}

TensorF render_balls(const std::vector<Ball>& balls, std::size_t grid, std::size_t channels) {
  TensorF frame(Shape{channels, grid, grid});
  const double step = 1.0 / static_cast<double>(kSupersample);
  for (std::size_t r = 0; r < grid; ++r) {
    for (std::size_t c = 0; c < grid; ++c) {
      double total = 0.0;
      for (const auto& b : balls) {
        // skip pixels entirely outside the ball's bounding box
        if (static_cast<double>(c) > b.x + b.radius || static_cast<double>(c + 1) < b.x - b.radius ||
            static_cast<double>(r) > b.y + b.radius || static_cast<double>(r + 1) < b.y - b.radius) {
          continue;
        }
        std::size_t inside = 0;
        for (std::size_t sy = 0; sy < kSupersample; ++sy) {
          const double py = static_cast<double>(r) + (static_cast<double>(sy) + 0.5) * step - b.y;
          for (std::size_t sx = 0; sx < kSupersample; ++sx) {
            const double px = static_cast<double>(c) + (static_cast<double>(sx) + 0.5) * step - b.x;
            if (px * px + py * py <= b.radius * b.radius) ++inside;
          }
        }
        total += static_cast<double>(inside) / static_cast<double>(kSupersample * kSupersample);
      }
      const float v = static_cast<float>(std::min(1.0, total));
      for (std::size_t ch = 0; ch < channels; ++ch) frame[(ch * grid + r) * grid + c] = v;
    }
  }
  return frame;
}

Dataset gen_bouncing_balls(const BouncingBallsSpec& spec) {
  if (spec.grid < 8) throw std::invalid_argument("bouncing balls: grid must be >= 8");
  if (spec.frames < 3) throw std::invalid_argument("bouncing balls: need >= 3 frames per clip");
  if (!(spec.radius > 0.0) || 2.0 * spec.radius >= static_cast<double>(spec.grid)) {
    throw std::invalid_argument("bouncing balls: radius " + std::to_string(spec.radius) + " does not fit grid " +
                                std::to_string(spec.grid));
  }
  if (!(spec.speed_min >= 0.0 && spec.speed_max >= spec.speed_min && spec.speed_max < spec.radius)) {
    throw std::invalid_argument("bouncing balls: need 0 <= speed_min <= speed_max < radius");
  }
  Dataset ds{spec.frames, spec.channels, spec.grid, spec.grid, {}};
  Rng rng = Rng::derive(spec.seed, "data");
  const double lo = spec.radius, hi = static_cast<double>(spec.grid) - spec.radius;
  for (std::size_t k = 0; k < spec.n_clips; ++k) {
    std::vector<Ball> balls;
    for (std::size_t i = 0; i < spec.n_balls; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        Ball b;
        b.radius = spec.radius;
        b.x = lo + (hi - lo) * rng.uniform();
        b.y = lo + (hi - lo) * rng.uniform();
        placed = std::none_of(balls.begin(), balls.end(), [&](const Ball& o) {
          return std::hypot(o.x - b.x, o.y - b.y) < o.radius + b.radius;
        });
        if (placed) {
          const double speed = spec.speed_min + (spec.speed_max - spec.speed_min) * rng.uniform();
          const double angle = 2.0 * std::numbers::pi * rng.uniform();
          b.vx = speed * std::cos(angle);
          b.vy = speed * std::sin(angle);
          balls.push_back(b);
        }
      }
      if (!placed) throw std::invalid_argument("bouncing balls: cannot place " + std::to_string(spec.n_balls) + " balls");
    }
    Clip clip;
    for (std::size_t f = 0; f < spec.frames; ++f) {
      if (f > 0) step_balls(balls, spec.grid, spec.collisions);
      clip.push_back(render_balls(balls, spec.grid, spec.channels));
    }
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Constant velocity

Clip render_constant_velocity(std::size_t grid, std::size_t frames, std::size_t square, int row, int col, int vy,
                              int vx, std::size_t channels) {
  if (square == 0 || square > grid) throw std::invalid_argument("constant velocity: square does not fit the grid");
  const int g = static_cast<int>(grid);
  auto wrap = [g](long v) { return static_cast<std::size_t>(((v % g) + g) % g); };
  Clip clip;
  for (std::size_t f = 0; f < frames; ++f) {
    TensorF frame(Shape{channels, grid, grid});
    const long r0 = row + static_cast<long>(f) * vy, c0 = col + static_cast<long>(f) * vx;
    for (std::size_t dr = 0; dr < square; ++dr) {
      for (std::size_t dc = 0; dc < square; ++dc) {
        const std::size_t r = wrap(r0 + static_cast<long>(dr)), c = wrap(c0 + static_cast<long>(dc));
        for (std::size_t ch = 0; ch < channels; ++ch) frame[(ch * grid + r) * grid + c] = 1.0f;
      }
    }
    clip.push_back(std::move(frame));
  }
  return clip;
}

Dataset gen_constant_velocity(const ConstantVelocitySpec& spec) {
  if (spec.frames < 3) throw std::invalid_argument("constant velocity: need >= 3 frames per clip");
  if (spec.max_speed < 0) throw std::invalid_argument("constant velocity: max_speed must be >= 0");
  if (!spec.allow_static && spec.max_speed == 0) {
    throw std::invalid_argument("constant velocity: max_speed 0 only yields static clips");
  }
  Dataset ds{spec.frames, spec.channels, spec.grid, spec.grid, {}};
  Rng rng = Rng::derive(spec.seed, "data");
  const int g = static_cast<int>(spec.grid);
  for (std::size_t k = 0; k < spec.n_clips; ++k) {
    const int row = static_cast<int>(rng.uniform_int(0, g - 1));
    const int col = static_cast<int>(rng.uniform_int(0, g - 1));
    int vy = 0, vx = 0;
    do {
      vy = static_cast<int>(rng.uniform_int(-spec.max_speed, spec.max_speed));
      vx = static_cast<int>(rng.uniform_int(-spec.max_speed, spec.max_speed));
    } while (!spec.allow_static && vy == 0 && vx == 0);
    ds.clips.push_back(render_constant_velocity(spec.grid, spec.frames, spec.square, row, col, vy, vx, spec.channels));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Codecs

AvgPoolCodec::AvgPoolCodec(std::size_t k) : k_(k) {
  if (k == 0) throw std::invalid_argument("avgpool factor must be >= 1");
}

Shape AvgPoolCodec::latent_shape(const Shape& pixel) const {
  if (pixel.rank() != 3) throw ShapeError("avgpool: expected [C,H,W], got " + pixel.str());
  if (pixel[1] % k_ != 0 || pixel[2] % k_ != 0) {
    throw std::invalid_argument("avgpool: frame " + std::to_string(pixel[1]) + "x" + std::to_string(pixel[2]) +
                                " is not divisible by pooling factor " + std::to_string(k_));
  }
  return Shape{pixel[0], pixel[1] / k_, pixel[2] / k_};
}

TensorF AvgPoolCodec::encode(const TensorF& pixel) const {
  const Shape ls = latent_shape(pixel.shape());
  const std::size_t c = ls[0], h = ls[1], w = ls[2], W = pixel.shape()[2], H = pixel.shape()[1];
  TensorF out(ls);
  const float inv = 1.0f / static_cast<float>(k_ * k_);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t q = 0; q < w; ++q) {
        float acc = 0.0f;
        for (std::size_t dr = 0; dr < k_; ++dr) {
          for (std::size_t dq = 0; dq < k_; ++dq) acc += pixel[(ch * H + r * k_ + dr) * W + q * k_ + dq];
        }
        out[(ch * h + r) * w + q] = acc * inv;
      }
    }
  }
  return out;
}

TensorF AvgPoolCodec::decode(const TensorF& latent) const {
  const Shape& ls = latent.shape();
  if (ls.rank() != 3) throw ShapeError("avgpool: expected [C,h,w], got " + ls.str());
  const std::size_t c = ls[0], h = ls[1], w = ls[2], H = h * k_, W = w * k_;
  TensorF out(Shape{c, H, W});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t q = 0; q < W; ++q) out[(ch * H + r) * W + q] = latent[(ch * h + r / k_) * w + q / k_];
    }
  }
  return out;
}

std::unique_ptr<Codec> make_codec(const std::string& name, std::size_t k) {
  if (name == "identity") return std::make_unique<IdentityCodec>();
  if (name == "avgpool") return std::make_unique<AvgPoolCodec>(k);
  throw std::invalid_argument("unknown codec '" + name + "' (expected identity|avgpool)");
}

Clip encode_clip(const Clip& clip, const Codec& codec) {
  Clip out;
  out.reserve(clip.size());
  for (const auto& f : clip) out.push_back(codec.encode(f));
  return out;
}

Clip decode_clip(const Clip& clip, const Codec& codec) {
  Clip out;
  out.reserve(clip.size());
  for (const auto& f : clip) out.push_back(codec.decode(f));
  return out;
}

Clip shift_brightness(const Clip& clip, float delta) {
  Clip out = clip;
  for (auto& f : out) {
    for (auto& v : f.data()) v = std::clamp(v + delta, 0.0f, 1.0f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {
constexpr char kDatasetMagic[4] = {'F', 'V', 'D', 'S'};
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const Shape fs = ds.frame_shape();
  for (const auto& clip : ds.clips) {
    if (clip.size() != ds.frames_per_clip) throw std::invalid_argument("save_dataset: clip length disagrees with header");
    for (const auto& f : clip) require_same_shape(f.shape(), fs, "save_dataset");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FileError(FileErrc::io, "cannot open " + path.string() + " for writing");
  using namespace binio;
  write_bytes(os, std::string(kDatasetMagic, 4));
  write_u32(os, kDatasetVersion);
  write_u32(os, static_cast<std::uint32_t>(ds.clips.size()));
  write_u32(os, static_cast<std::uint32_t>(ds.frames_per_clip));
  write_u32(os, static_cast<std::uint32_t>(ds.channels));
  write_u32(os, static_cast<std::uint32_t>(ds.height));
  write_u32(os, static_cast<std::uint32_t>(ds.width));
  write_u8(os, 0);
  for (const auto& clip : ds.clips) {
    for (const auto& f : clip) {
      for (float v : f.data()) write_f32(os, v);
    }
  }
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError(FileErrc::io, "cannot open " + path.string());
  using namespace binio;
  if (read_bytes(is, 4, "dataset magic") != std::string(kDatasetMagic, 4)) {
    throw FileError(FileErrc::bad_magic, path.string() + " is not a dataset file");
  }
  if (const auto v = read_u32(is, "dataset version"); v != kDatasetVersion) {
    throw FileError(FileErrc::bad_version, "dataset version " + std::to_string(v));
  }
  const std::uint32_t n = read_u32(is, "dataset header");
  Dataset ds;
  ds.frames_per_clip = read_u32(is, "dataset header");
  ds.channels = read_u32(is, "dataset header");
  ds.height = read_u32(is, "dataset header");
  ds.width = read_u32(is, "dataset header");
  const std::uint8_t tag = read_u8(is, "dataset header");
  if (tag != 0) throw FileError(FileErrc::bad_header, "unsupported scalar tag " + std::to_string(tag));
  if (ds.channels == 0 || ds.height == 0 || ds.width == 0 || (n > 0 && ds.frames_per_clip == 0)) {
    throw FileError(FileErrc::bad_header, "zero extent in dataset header");
  }
  const Shape fs = ds.frame_shape();
  ds.clips.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    Clip clip;
    for (std::size_t f = 0; f < ds.frames_per_clip; ++f) {
      TensorF frame(fs);
      const std::string ctx = "clip " + std::to_string(k) + " frame " + std::to_string(f);
      std::string raw = read_bytes(is, 4 * fs.numel(), ctx);
      for (std::size_t i = 0; i < fs.numel(); ++i) {
        std::uint32_t u = 0;
        for (std::size_t b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
        frame[i] = std::bit_cast<float>(u);
      }
      clip.push_back(std::move(frame));
    }
    ds.clips.push_back(std::move(clip));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FileError(FileErrc::bad_header, "trailing bytes after " + std::to_string(n) + " clips");
  }
  return ds;
}

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void write_montage_pgm(std::span<const TensorF> frames, const std::filesystem::path& path) {
  if (frames.empty()) throw std::invalid_argument("write_montage_pgm: no frames");
  const Shape& s = frames.front().shape();
  if (s.rank() != 3) throw ShapeError("write_pgm: expected [C,H,W], got " + s.str());
  for (const auto& f : frames) require_same_shape(f.shape(), s, "write_montage_pgm");
  const std::size_t h = s[1], w = s[2];
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FileError(FileErrc::io, "cannot open " + path.string() + " for writing");
  os << "P5\n" << w * frames.size() << ' ' << h << "\n255\n";
  std::string row(w * frames.size(), '\0');
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t k = 0; k < frames.size(); ++k) {
      for (std::size_t c = 0; c < w; ++c) row[k * w + c] = static_cast<char>(to_byte(frames[k][r * w + c]));
    }
    os.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw FileError(FileErrc::io, "write failed for " + path.string());
}

void write_pgm(const TensorF& frame, const std::filesystem::path& path) {
  write_montage_pgm(std::span<const TensorF>(&frame, 1), path);
}

}  // namespace vidflow
