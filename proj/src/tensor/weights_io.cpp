#include "dancedit/tensor/weights_io.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "dancedit/io/binary.hpp"

namespace dancedit {

namespace io {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace io

std::string encode_weights(std::span<const Parameter> tensors) {
  io::ByteWriter w;
  w.magic("DEWT");
  w.u32(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& p : tensors) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    const auto& shape = p.value.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) w.u32(static_cast<std::uint32_t>(e));
    for (const float v : p.value.data()) w.f32(v);
  }
  return w.take();
}

std::vector<Parameter> decode_weights(std::string_view bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("DEWT");
  const auto version = r.u32();
  if (version != kWeightsVersion) {
    throw io::FormatError("unsupported DEWT version " + std::to_string(version));
  }
  const auto count = r.u32();
  std::vector<Parameter> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u32();
    std::string name = r.bytes(name_len);
    const auto rank = r.u32();
    if (rank == 0 || rank > 3) throw io::FormatError("bad tensor rank in " + name);
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    const std::size_t n = shape_size(shape);
    if (n * 4 > r.remaining()) throw io::FormatError("truncated payload for " + name);
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    out.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(data))});
  }
  if (!r.at_end()) throw io::FormatError("trailing bytes after DEWT payload");
  return out;
}

void save_weights(const std::filesystem::path& path, std::span<const Parameter> tensors) {
  io::write_file(path, encode_weights(tensors));
}

std::vector<Parameter> load_weights(const std::filesystem::path& path) {
  return decode_weights(io::read_file(path));
}

void assign_weights(ParameterSet& params, std::span<const Parameter> tensors,
                    std::string_view prefix) {
  std::unordered_map<std::string_view, const Tensor*> by_name;
  for (const auto& t : tensors) by_name.emplace(t.name, &t.value);
  for (const auto& p : params.items()) {
    if (!p.name.starts_with(prefix)) continue;
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw io::FormatError("weights missing tensor " + p.name);
    if (it->second->shape() != p.value.shape()) {
      throw io::FormatError("shape mismatch for " + p.name + ": file " +
                            shape_string(it->second->shape()) + ", model " +
                            shape_string(p.value.shape()));
    }
    Tensor dst = p.value;
    auto out = dst.mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), out.begin());
  }
}

}  // namespace dancedit
