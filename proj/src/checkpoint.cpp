#include "dyncap/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dyncap {

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'N', 'C', 'A', 'P', '0', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");

  os.write(kMagic, sizeof(kMagic));
  write_u64(os, ckpt.header.step);
  write_u32(os, static_cast<std::uint32_t>(ckpt.header.active_widths.size()));
  for (auto w : ckpt.header.active_widths) write_u32(os, w);
  write_u32(os, static_cast<std::uint32_t>(ckpt.header.rng_words.size()));
  for (auto w : ckpt.header.rng_words) write_u64(os, w);

  write_u32(os, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    write_u32(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    write_u32(os, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) write_u64(os, static_cast<std::uint64_t>(d));
    if (shape_numel(a.shape) != static_cast<std::int64_t>(a.data.size())) {
      throw std::runtime_error("checkpoint: array '" + a.name + "' shape/data mismatch");
    }
    for (double v : a.data) write_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }

  Checkpoint ckpt;
  ckpt.header.step = read_u64(is);
  const std::uint32_t n_widths = read_u32(is);
  ckpt.header.active_widths.resize(n_widths);
  for (auto& w : ckpt.header.active_widths) w = read_u32(is);
  const std::uint32_t n_rng = read_u32(is);
  ckpt.header.rng_words.resize(n_rng);
  for (auto& w : ckpt.header.rng_words) w = read_u64(is);

  const std::uint32_t n_arrays = read_u32(is);
  ckpt.arrays.resize(n_arrays);
  for (auto& a : ckpt.arrays) {
    const std::uint32_t name_len = read_u32(is);
    a.name.resize(name_len);
    is.read(a.name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated name in " + path);
    const std::uint32_t rank = read_u32(is);
    a.shape.resize(rank);
    for (auto& d : a.shape) d = static_cast<std::int64_t>(read_u64(is));
    const std::int64_t count = shape_numel(a.shape);
    a.data.resize(static_cast<std::size_t>(count));
    for (auto& v : a.data) v = read_f64(is);
  }
  return ckpt;
}

}  // namespace dyncap
