#include "vidflow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "vidflow/io.hpp"

namespace vidflow {
namespace {

std::string format(const std::string& v) { return v; }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(Mode v) { return to_string(v); }
std::string format(Solver v) { return to_string(v); }
std::string format(EvalSpace v) { return v == EvalSpace::pixel ? "pixel" : "ae_gt"; }
template <class T>
  requires std::is_arithmetic_v<T>
std::string format(T v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form for doubles
  return std::string(buf, res.ptr);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& what) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + what);
}

void parse_into(std::string& out, const std::string& v, const std::string&) { out = v; }
void parse_into(bool& out, const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") {
    out = true;
  } else if (v == "false" || v == "0") {
    out = false;
  } else {
    bad(key, v, "bool");
  }
}
void parse_into(Mode& out, const std::string& v, const std::string& key) {
  try {
    out = parse_mode(v);
  } catch (const std::invalid_argument&) {
    bad(key, v, "predict|interpolate");
  }
}
void parse_into(Solver& out, const std::string& v, const std::string& key) {
  try {
    out = parse_solver(v);
  } catch (const std::invalid_argument&) {
    bad(key, v, "euler|midpoint");
  }
}
void parse_into(EvalSpace& out, const std::string& v, const std::string& key) {
  if (v == "pixel") {
    out = EvalSpace::pixel;
  } else if (v == "ae_gt") {
    out = EvalSpace::ae_gt;
  } else {
    bad(key, v, "pixel|ae_gt");
  }
}
template <class T>
  requires std::is_arithmetic_v<T>
void parse_into(T& out, const std::string& v, const std::string& key) {
  T tmp{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), tmp);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) bad(key, v, "a number");
  out = tmp;
}

struct Entry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class F>
Entry entry(std::string key, F access) {
  return Entry{key, [access](const RunConfig& c) { return format(access(const_cast<RunConfig&>(c))); },
               [access, key](RunConfig& c, const std::string& v) { parse_into(access(c), v, key); }};
}

const std::vector<Entry>& table() {
  static const std::vector<Entry> t = {
      entry("seed", [](RunConfig& c) -> auto& { return c.seed; }),
      entry("data.kind", [](RunConfig& c) -> auto& { return c.data.kind; }),
      entry("data.clips", [](RunConfig& c) -> auto& { return c.data.clips; }),
      entry("data.test_clips", [](RunConfig& c) -> auto& { return c.data.test_clips; }),
      entry("data.frames", [](RunConfig& c) -> auto& { return c.data.frames; }),
      entry("data.grid", [](RunConfig& c) -> auto& { return c.data.grid; }),
      entry("data.channels", [](RunConfig& c) -> auto& { return c.data.channels; }),
      entry("data.square", [](RunConfig& c) -> auto& { return c.data.square; }),
      entry("data.max_speed", [](RunConfig& c) -> auto& { return c.data.max_speed; }),
      entry("data.allow_static", [](RunConfig& c) -> auto& { return c.data.allow_static; }),
      entry("data.n_balls", [](RunConfig& c) -> auto& { return c.data.n_balls; }),
      entry("data.radius", [](RunConfig& c) -> auto& { return c.data.radius; }),
      entry("data.speed_min", [](RunConfig& c) -> auto& { return c.data.speed_min; }),
      entry("data.speed_max", [](RunConfig& c) -> auto& { return c.data.speed_max; }),
      entry("data.collisions", [](RunConfig& c) -> auto& { return c.data.collisions; }),
      entry("data.codec", [](RunConfig& c) -> auto& { return c.data.codec; }),
      entry("data.pool", [](RunConfig& c) -> auto& { return c.data.pool; }),
      entry("model.mode", [](RunConfig& c) -> auto& { return c.model.mode; }),
      entry("model.use_reference", [](RunConfig& c) -> auto& { return c.model.use_reference; }),
      entry("model.token_dim", [](RunConfig& c) -> auto& { return c.model.token_dim; }),
      entry("model.depth", [](RunConfig& c) -> auto& { return c.model.depth; }),
      entry("model.heads", [](RunConfig& c) -> auto& { return c.model.heads; }),
      entry("model.skip_pairs", [](RunConfig& c) -> auto& { return c.model.skip_pairs; }),
      entry("model.mlp_ratio", [](RunConfig& c) -> auto& { return c.model.mlp_ratio; }),
      entry("model.max_distance", [](RunConfig& c) -> auto& { return c.model.max_distance; }),
      entry("train.iterations", [](RunConfig& c) -> auto& { return c.train.iterations; }),
      entry("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }),
      entry("train.base_lr", [](RunConfig& c) -> auto& { return c.train.base_lr; }),
      entry("train.weight_decay", [](RunConfig& c) -> auto& { return c.train.weight_decay; }),
      entry("train.warmup_iters", [](RunConfig& c) -> auto& { return c.train.warmup_iters; }),
      entry("train.adam_beta1", [](RunConfig& c) -> auto& { return c.train.adam_beta1; }),
      entry("train.adam_beta2", [](RunConfig& c) -> auto& { return c.train.adam_beta2; }),
      entry("train.adam_eps", [](RunConfig& c) -> auto& { return c.train.adam_eps; }),
      entry("train.sigma_min", [](RunConfig& c) -> auto& { return c.train.sigma_min; }),
      entry("train.augment_brightness", [](RunConfig& c) -> auto& { return c.train.augment_brightness; }),
      entry("train.threads", [](RunConfig& c) -> auto& { return c.train.threads; }),
      entry("train.checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }),
      entry("sample.n_steps", [](RunConfig& c) -> auto& { return c.sample.n_steps; }),
      entry("sample.warm_start_s", [](RunConfig& c) -> auto& { return c.sample.warm_start_s; }),
      entry("sample.context_limit", [](RunConfig& c) -> auto& { return c.sample.context_limit; }),
      entry("sample.solver", [](RunConfig& c) -> auto& { return c.sample.solver; }),
      entry("eval.context_frames", [](RunConfig& c) -> auto& { return c.eval.context_frames; }),
      entry("eval.horizon", [](RunConfig& c) -> auto& { return c.eval.horizon; }),
      entry("eval.space", [](RunConfig& c) -> auto& { return c.eval.space; }),
      entry("eval.max_val", [](RunConfig& c) -> auto& { return c.eval.max_val; }),
      entry("eval.ssim_window", [](RunConfig& c) -> auto& { return c.eval.ssim.window; }),
  };
  return t;
}

const Entry& find(const std::string& key) {
  for (const auto& e : table()) {
    if (e.key == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { find(key).set(*this, value); }
std::string RunConfig::get(const std::string& key) const { return find(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& e : table()) out.push_back(e.key);
  return out;
}

void RunConfig::apply_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  for (std::size_t no = 1; std::getline(is, line); ++no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(no) + ": expected key=value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FileError(FileErrc::io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  apply_text(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& e : table()) out += e.key + "=" + e.get(*this) + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  c.apply_text(text);
  return c;
}

std::unique_ptr<Codec> RunConfig::codec() const { return make_codec(data.codec, data.pool); }

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  const Shape latent = codec()->latent_shape(Shape{data.channels, data.grid, data.grid});
  m.latent_channels = latent[0];
  m.latent_height = latent[1];
  m.latent_width = latent[2];
  m.condition_slots = m.mode == Mode::interpolate ? 2 : 1;
  if (m.mode == Mode::interpolate) m.use_reference = false;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

SampleConfig RunConfig::sample_config() const {
  SampleConfig s = sample;
  s.seed = seed;
  s.sigma_min = train.sigma_min;
  return s;
}

void RunConfig::validate() const {
  if (data.kind != "const-velocity" && data.kind != "bouncing-balls") {
    throw ConfigError("data.kind must be const-velocity or bouncing-balls, got '" + data.kind + "'");
  }
  if (data.frames < 3) throw ConfigError("data.frames must be >= 3");
  model_config().validate();  // also checks grid divisibility through the codec
  train_config().validate();
  sample_config().validate();
}

GeneratedData generate_data(const RunConfig& cfg) {
  cfg.validate();
  const DataConfig& d = cfg.data;
  const std::size_t total = d.clips + d.test_clips;
  Dataset all;
  if (d.kind == "const-velocity") {
    all = gen_constant_velocity(
        ConstantVelocitySpec{total, d.frames, d.grid, d.square, d.max_speed, d.allow_static, d.channels, cfg.seed});
  } else {
    all = gen_bouncing_balls(BouncingBallsSpec{total, d.frames, d.grid, d.n_balls, d.radius, d.speed_min, d.speed_max,
                                               d.collisions, d.channels, cfg.seed});
  }
  GeneratedData out{all, all};
  out.train.clips.assign(all.clips.begin(), all.clips.begin() + static_cast<std::ptrdiff_t>(d.clips));
  out.test.clips.assign(all.clips.begin() + static_cast<std::ptrdiff_t>(d.clips), all.clips.end());
  return out;
}

}  // namespace vidflow
