#include "flowmix/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace flowmix {

namespace {

constexpr char kMagic[5] = {'F', 'L', 'X', 'W', '1'};

template <typename T>
void write_raw(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is, std::uint64_t& offset, const std::string& path) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw ParseError("load_checkpoint: " + path + " truncated at byte offset " + std::to_string(offset));
  offset += sizeof(T);
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter& p : params) {
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(p.shape.size()));
    for (Index d : p.shape) write_raw<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(p.value.size()) * static_cast<std::streamsize>(sizeof(double)));
  }
  if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

std::vector<Parameter> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  std::uint64_t offset = 0;

  char magic[5];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError("load_checkpoint: " + path + " has no FLXW1 magic at byte offset 0");
  }
  offset += sizeof(magic);

  const auto count = read_raw<std::uint32_t>(is, offset, path);
  std::vector<Parameter> params;
  params.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<std::uint32_t>(is, offset, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw ParseError("load_checkpoint: " + path + " truncated at byte offset " + std::to_string(offset));
    offset += name_len;

    const auto ndim = read_raw<std::uint32_t>(is, offset, path);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<Index>(read_raw<std::uint64_t>(is, offset, path)));
    }
    const Index n = numel(shape);
    ArrayXd value(n);
    is.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(n * static_cast<Index>(sizeof(double))));
    if (!is) throw ParseError("load_checkpoint: " + path + " truncated at byte offset " + std::to_string(offset));
    offset += static_cast<std::uint64_t>(n) * sizeof(double);
    params.emplace_back(std::move(name), std::move(shape), std::move(value));
  }
  return params;
}

}  // namespace flowmix
