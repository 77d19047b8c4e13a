#include "vidflow/io.hpp"

#include <array>
#include <bit>

namespace vidflow {

const char* to_string(FileErrc e) {
  switch (e) {
    case FileErrc::io: return "io error";
    case FileErrc::bad_magic: return "bad magic";
    case FileErrc::bad_version: return "unsupported version";
    case FileErrc::bad_header: return "bad header";
    case FileErrc::truncated: return "truncated file";
    case FileErrc::shape_mismatch: return "shape mismatch";
  }
  return "unknown";
}

namespace binio {
namespace {

template <std::size_t N>
void put(std::ostream& os, std::uint64_t v) {
  std::array<char, N> b{};
  for (std::size_t i = 0; i < N; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b.data(), N);
  if (!os) throw FileError(FileErrc::io, "write failed");
}

template <std::size_t N>
std::uint64_t get(std::istream& is, const std::string& context) {
  std::array<unsigned char, N> b{};
  is.read(reinterpret_cast<char*>(b.data()), N);
  if (is.gcount() != static_cast<std::streamsize>(N)) throw FileError(FileErrc::truncated, context);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < N; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { put<1>(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { put<4>(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put<8>(os, v); }
void write_f32(std::ostream& os, float v) { put<4>(os, std::bit_cast<std::uint32_t>(v)); }

void write_bytes(std::ostream& os, const std::string& s) {
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!os) throw FileError(FileErrc::io, "write failed");
}

std::uint8_t read_u8(std::istream& is, const std::string& context) {
  return static_cast<std::uint8_t>(get<1>(is, context));
}
std::uint32_t read_u32(std::istream& is, const std::string& context) {
  return static_cast<std::uint32_t>(get<4>(is, context));
}
std::uint64_t read_u64(std::istream& is, const std::string& context) { return get<8>(is, context); }
float read_f32(std::istream& is, const std::string& context) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(get<4>(is, context)));
}

std::string read_bytes(std::istream& is, std::size_t n, const std::string& context) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n)) throw FileError(FileErrc::truncated, context);
  return s;
}

}  // namespace binio
}  // namespace vidflow
