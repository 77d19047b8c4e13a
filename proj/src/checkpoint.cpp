#include "vidflow/checkpoint.hpp"

#include <bit>
#include <fstream>

namespace vidflow {
namespace {

constexpr char kMagic[4] = {'F', 'C', 'K', 'P'};

void write_record(std::ostream& os, const std::string& name, const TensorF& t) {
  using namespace binio;
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  write_bytes(os, name);
  write_u32(os, static_cast<std::uint32_t>(t.shape().rank()));
  for (std::size_t e : t.shape().dims()) write_u32(os, static_cast<std::uint32_t>(e));
  std::string raw(4 * t.numel(), '\0');
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(t[i]);
    for (std::size_t b = 0; b < 4; ++b) raw[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xff);
  }
  write_bytes(os, raw);
}

std::pair<std::string, TensorF> read_record(std::istream& is, std::size_t index) {
  using namespace binio;
  const std::string where = "record " + std::to_string(index);
  const std::uint32_t len = read_u32(is, where + " name length");
  if (len > 4096) throw FileError(FileErrc::bad_header, where + ": implausible name length");
  std::string name = read_bytes(is, len, where + " name");
  const std::string ctx = "parameter '" + name + "'";
  const std::uint32_t rank = read_u32(is, ctx + " rank");
  if (rank == 0 || rank > 8) throw FileError(FileErrc::bad_header, ctx + ": bad rank " + std::to_string(rank));
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) {
    d = read_u32(is, ctx + " extents");
    if (d == 0) throw FileError(FileErrc::bad_header, ctx + ": zero extent");
  }
  const Shape shape(dims);
  if (shape.numel() > (std::size_t{1} << 30)) throw FileError(FileErrc::bad_header, ctx + ": implausible size");
  const std::string raw = read_bytes(is, 4 * shape.numel(), ctx + " data");
  TensorF t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    std::uint32_t u = 0;
    for (std::size_t b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
    t[i] = std::bit_cast<float>(u);
  }
  return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const TrainState& state) {
  check_params(cfg.model_config(), state.params);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FileError(FileErrc::io, "cannot open " + path.string() + " for writing");
  using namespace binio;
  write_bytes(os, std::string(kMagic, 4));
  write_u32(os, kCheckpointVersion);
  const std::string text = cfg.to_text();
  write_u32(os, static_cast<std::uint32_t>(text.size()));
  write_bytes(os, text);
  write_u32(os, static_cast<std::uint32_t>(state.params.size()));
  for (const auto& [name, t] : state.params) write_record(os, name, t);
  write_u32(os, static_cast<std::uint32_t>(state.opt.m.size() + state.opt.v.size()));
  for (const auto& [name, t] : state.opt.m) write_record(os, "adam.m/" + name, t);
  for (const auto& [name, t] : state.opt.v) write_record(os, "adam.v/" + name, t);
  write_u64(os, state.opt.step);
  os.flush();
  if (!os) throw FileError(FileErrc::io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError(FileErrc::io, "cannot open " + path.string());
  using namespace binio;
  if (read_bytes(is, 4, "checkpoint magic") != std::string(kMagic, 4)) {
    throw FileError(FileErrc::bad_magic, path.string() + " is not a checkpoint");
  }
  if (const auto v = read_u32(is, "checkpoint version"); v != kCheckpointVersion) {
    throw FileError(FileErrc::bad_version, "checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  const std::uint32_t text_len = read_u32(is, "config length");
  if (text_len > (1u << 20)) throw FileError(FileErrc::bad_header, "implausible config length");
  try {
    ck.config = RunConfig::parse(read_bytes(is, text_len, "config text"));
  } catch (const ConfigError& e) {
    throw FileError(FileErrc::bad_header, std::string("embedded config: ") + e.what());
  }
  const std::uint32_t n = read_u32(is, "parameter count");
  std::size_t index = 0;
  for (std::uint32_t k = 0; k < n; ++k) {
    auto [name, t] = read_record(is, index++);
    ck.state.params.insert_or_assign(std::move(name), std::move(t));
  }
  const std::uint32_t n_opt = read_u32(is, "optimizer record count");
  for (std::uint32_t k = 0; k < n_opt; ++k) {
    auto [name, t] = read_record(is, index++);
    if (name.starts_with("adam.m/")) {
      ck.state.opt.m.insert_or_assign(name.substr(7), std::move(t));
    } else if (name.starts_with("adam.v/")) {
      ck.state.opt.v.insert_or_assign(name.substr(7), std::move(t));
    } else {
      throw FileError(FileErrc::bad_header, "unexpected optimizer record '" + name + "'");
    }
  }
  ck.state.opt.step = read_u64(is, "step counter");

  ModelConfig mcfg;
  try {
    mcfg = ck.config.model_config();
    mcfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FileError(FileErrc::bad_header, std::string("embedded config: ") + e.what());
  }
  try {
    check_params(mcfg, ck.state.params);
    for (const auto* moments : {&ck.state.opt.m, &ck.state.opt.v}) {
      for (const auto& [name, t] : *moments) {
        const auto it = ck.state.params.find(name);
        if (it == ck.state.params.end() || it->second.shape() != t.shape()) {
          throw ShapeError("optimizer moment '" + name + "' does not match any parameter");
        }
      }
    }
  } catch (const ShapeError& e) {
    throw FileError(FileErrc::shape_mismatch, e.what());
  }
  return ck;
}

}  // namespace vidflow
