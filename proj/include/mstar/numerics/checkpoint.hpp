#pragma once

// "MSTW1" parameter checkpoints: the 5-byte magic, then one record per
// tensor until end of file:
//   u32 name length, name bytes, u32 rank, rank x u32 dims, f64 payload.
// All integers and reals little-endian. Batch-norm running statistics are
// stored as records named "<layer>.running_mean" / "<layer>.running_var".

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mstar/numerics/parameters.hpp"

namespace mstar {

inline constexpr char kCheckpointMagic[5] = {'M', 'S', 'T', 'W', '1'};

namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_i32(std::ostream& os, std::int32_t v) { write_u32(os, static_cast<std::uint32_t>(v)); }

// Returns false on clean EOF before the first byte; throws on partial reads.
inline bool read_bytes(std::istream& is, unsigned char* out, std::size_t n, const char* what, bool eof_ok = false) {
  is.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n));
  const auto got = static_cast<std::size_t>(is.gcount());
  if (got == n) return true;
  if (eof_ok && got == 0) return false;
  throw ParseError(std::string("unexpected end of ") + what);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  read_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& is, const char* what) { return std::bit_cast<double>(read_u64(is, what)); }

}  // namespace io

struct CheckpointRecord {
  std::string name;
  Array value;
};

inline void write_checkpoint(std::ostream& os, const std::vector<CheckpointRecord>& records) {
  os.write(kCheckpointMagic, 5);
  for (const auto& r : records) {
    io::write_u32(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    io::write_u32(os, static_cast<std::uint32_t>(r.value.rank()));
    for (auto d : r.value.shape()) io::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : r.value.values()) io::write_f64(os, v);
  }
}

inline std::vector<CheckpointRecord> read_checkpoint(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (is.gcount() != 5 || std::memcmp(magic, kCheckpointMagic, 5) != 0) throw ParseError("bad checkpoint magic");
  std::vector<CheckpointRecord> out;
  while (true) {
    unsigned char lenb[4];
    if (!io::read_bytes(is, lenb, 4, "checkpoint record", true)) break;
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(lenb[i]) << (8 * i);
    if (len > (1u << 20)) throw ParseError("checkpoint record name too long");
    std::string name(len, '\0');
    io::read_bytes(is, reinterpret_cast<unsigned char*>(name.data()), len, "checkpoint record name");
    const auto rank = io::read_u32(is, "checkpoint record rank");
    if (rank > 16) throw ParseError("checkpoint record rank too large");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(io::read_u32(is, "checkpoint record dims"));
    Array a(shape);
    for (auto& v : a.storage()) v = io::read_f64(is, "checkpoint payload");
    out.push_back({std::move(name), std::move(a)});
  }
  return out;
}

inline std::vector<CheckpointRecord> checkpoint_records(const ParameterStore& store) {
  std::vector<CheckpointRecord> out;
  for (const auto& p : store.entries()) out.push_back({p.name, p.tensor.value()});
  for (const auto& bn : store.batch_norms()) {
    out.push_back({bn.name + ".running_mean", bn.state.running_mean});
    out.push_back({bn.name + ".running_var", bn.state.running_var});
  }
  return out;
}

inline void save_parameters(const ParameterStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_checkpoint(os, checkpoint_records(store));
}

// Loads values into an already-constructed store; names and shapes must match.
inline void load_parameters(ParameterStore& store, std::istream& is) {
  std::map<std::string, Array> by_name;
  for (auto& r : read_checkpoint(is)) by_name[r.name] = std::move(r.value);
  auto take = [&](const std::string& name, Array& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint lacks " + name);
    if (it->second.shape() != dst.shape())
      throw ShapeError("checkpoint " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                       shape_str(dst.shape()));
    dst = it->second;
  };
  for (const auto& p : store.entries()) {
    Tensor t = p.tensor;
    take(p.name, t.mutable_value());
  }
  for (auto& bn : store.batch_norms()) {
    take(bn.name + ".running_mean", bn.state.running_mean);
    take(bn.name + ".running_var", bn.state.running_var);
  }
}

inline void load_parameters(ParameterStore& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  load_parameters(store, is);
}

}  // namespace mstar
