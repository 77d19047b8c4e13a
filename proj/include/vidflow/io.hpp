#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace vidflow {

enum class FileErrc {
  io,              // cannot open / read / write
  bad_magic,       // not a file of the expected kind
  bad_version,     // unsupported format version
  bad_header,      // header fields are inconsistent or unsupported
  truncated,       // payload ends early
  shape_mismatch,  // stored tensors disagree with the stored configuration
};

const char* to_string(FileErrc e);

class FileError : public std::runtime_error {
 public:
  FileError(FileErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  FileErrc code() const { return code_; }

 private:
  FileErrc code_;
};

namespace binio {

// Little-endian primitive encoding, independent of host byte order.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_bytes(std::ostream& os, const std::string& s);

// Each reader throws FileError(truncated, "<context>") on a short read.
std::uint8_t read_u8(std::istream& is, const std::string& context);
std::uint32_t read_u32(std::istream& is, const std::string& context);
std::uint64_t read_u64(std::istream& is, const std::string& context);
float read_f32(std::istream& is, const std::string& context);
std::string read_bytes(std::istream& is, std::size_t n, const std::string& context);

}  // namespace binio
}  // namespace vidflow
