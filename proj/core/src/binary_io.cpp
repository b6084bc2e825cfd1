#include "mta/binary_io.hpp"

#include <fstream>
#include <iterator>
#include <system_error>

#include "mta/errors.hpp"

namespace mta::io {

void ByteReader::need(std::size_t n, const char* field) {
  if (remaining() < n) throw ParseError(std::string("truncated input while reading ") + field, pos_);
}

void ByteReader::expect_magic(std::string_view m, const std::string& what) {
  need(m.size(), "magic");
  if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0)
    throw ParseError("bad magic for " + what + ", expected " + std::string(m), pos_);
  pos_ += m.size();
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return data_[pos_++];
}

float ByteReader::f32() {
  need(4, "f32");
  const std::uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n, "string payload");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::read(void* out, std::size_t n) {
  need(n, "payload");
  std::memcpy(out, data_.data() + pos_, n);
  pos_ += n;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace mta::io
