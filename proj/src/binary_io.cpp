#include "dsink/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "dsink/error.hpp"

namespace dsink::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T x) {
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

}  // namespace

void ByteWriter::put_bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }
void ByteWriter::put_u8(std::uint8_t x) { buf_.push_back(x); }
void ByteWriter::put_u16(std::uint16_t x) { put_le(buf_, x); }
void ByteWriter::put_u32(std::uint32_t x) { put_le(buf_, x); }
void ByteWriter::put_u64(std::uint64_t x) { put_le(buf_, x); }
void ByteWriter::put_f64(double x) { put_le(buf_, std::bit_cast<std::uint64_t>(x)); }

void ByteWriter::put_string(std::string_view s) {
  put_u32(static_cast<std::uint32_t>(s.size()));
  put_bytes(s);
}

void ByteWriter::seal() { put_u32(crc32(buf_)); }

ByteReader::ByteReader(std::span<const std::uint8_t> bytes, std::string what)
    : bytes_(bytes), what_(std::move(what)) {}

void ByteReader::need(std::size_t n) {
  if (n > remaining()) {
    throw Error(ErrorKind::kIo, what_ + ": truncated (needed " + std::to_string(n) +
                                    " bytes at offset " + std::to_string(pos_) + ")");
  }
}

std::string ByteReader::take_bytes(std::size_t n) {
  need(n);
  std::string out(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::take_u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint16_t ByteReader::take_u16() {
  need(2);
  std::uint16_t x = 0;
  for (int i = 0; i < 2; ++i) x |= static_cast<std::uint16_t>(bytes_[pos_++]) << (8 * i);
  return x;
}

std::uint32_t ByteReader::take_u32() {
  need(4);
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return x;
}

std::uint64_t ByteReader::take_u64() {
  need(8);
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
  return x;
}

double ByteReader::take_f64() { return std::bit_cast<double>(take_u64()); }

std::string ByteReader::take_string() {
  const std::uint32_t n = take_u32();
  return take_bytes(n);
}

std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> bytes,
                                            const std::string& what) {
  if (bytes.size() < 4) throw Error(ErrorKind::kIo, what + ": file too short");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4), what);
  const std::uint32_t stored = tail.take_u32();
  const std::uint32_t actual = crc32(body);
  if (stored != actual) {
    throw Error(ErrorKind::kChecksum, what + ": CRC32 mismatch (stored " + std::to_string(stored) +
                                          ", computed " + std::to_string(actual) + ")");
  }
  return body;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::kIo, "failed reading " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace dsink::io
