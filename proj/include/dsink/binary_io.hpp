#pragma once

// Little-endian byte buffers shared by the on-disk formats. Every file is
// written as a header, a payload and a trailing CRC32 of all preceding bytes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dsink::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

class ByteWriter {
 public:
  void put_bytes(std::string_view raw);
  void put_u8(std::uint8_t x);
  void put_u16(std::uint16_t x);
  void put_u32(std::uint32_t x);
  void put_u64(std::uint64_t x);
  void put_f64(double x);
  /// u32 byte length followed by the UTF-8 bytes.
  void put_string(std::string_view s);

  /// Appends the CRC32 of everything written so far.
  void seal();

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader. Reading past the end throws Error(kIo) naming
/// `what`, the file being decoded.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what);

  std::string take_bytes(std::size_t n);
  std::uint8_t take_u8();
  std::uint16_t take_u16();
  std::uint32_t take_u32();
  std::uint64_t take_u64();
  double take_f64();
  std::string take_string();

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n);

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string what_;
};

/// Verifies the trailing CRC32 and returns the bytes before it.
/// Throws Error(kIo) if too short, Error(kChecksum) on mismatch.
std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> bytes,
                                            const std::string& what);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dsink::io
