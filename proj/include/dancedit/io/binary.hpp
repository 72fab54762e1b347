#pragma once

// Little-endian primitives shared by the DEWT / DRMX / DRMU formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dancedit::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ByteWriter {
 public:
  void magic(std::string_view tag) { buffer_.append(tag); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { buffer_.append(s); }
  const std::string& str() const { return buffer_; }
  std::string take() { return std::move(buffer_); }

 private:
  std::string buffer_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  void expect_magic(std::string_view tag) {
    if (data_.substr(pos_, tag.size()) != tag) {
      throw FormatError("bad magic, expected \"" + std::string(tag) + "\"");
    }
    pos_ += tag.size();
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out(data_.substr(pos_, n));
    pos_ += n;
    return out;
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("truncated input");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename, so readers never see partial files.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dancedit::io
