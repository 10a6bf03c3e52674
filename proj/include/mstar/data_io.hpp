#pragma once

// Synthetic time-series generation, CSV ingestion and the "MSTS1" binary
// dataset format:
//   magic "MSTS1"
//   u32 N, u32 C, u32 L, u32 label kind (0 = integer, 1 = real)
//   N*C*L f64 inputs (sample-major, then channel, then time)
//   N labels (i32 or f64)
//   N u8 split tags (0 train, 1 val, 2 test)
// Everything little-endian.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstar/numerics/checkpoint.hpp"
#include "mstar/rng.hpp"

namespace mstar {

enum class LabelKind : std::uint32_t { Integer = 0, Real = 1 };
enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

struct Dataset {
  std::size_t n = 0, channels = 0, length = 0;
  LabelKind label_kind = LabelKind::Integer;
  std::vector<double> inputs;  // n x channels x length
  std::vector<int> int_labels;
  std::vector<double> real_labels;
  std::vector<Split> splits;

  void check() const {
    if (inputs.size() != n * channels * length) throw ShapeError("dataset: input payload does not match N*C*L");
    const std::size_t nl = label_kind == LabelKind::Integer ? int_labels.size() : real_labels.size();
    if (nl != n || splits.size() != n) throw ShapeError("dataset: label or split count differs from N");
  }

  std::size_t sample_size() const { return channels * length; }
  int num_classes() const {
    int k = 0;
    for (int y : int_labels) k = std::max(k, y + 1);
    return k;
  }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
      if (splits[i] == s) out.push_back(i);
    return out;
  }

  Array batch_inputs(const std::vector<std::size_t>& idx) const {
    Array a(Shape{idx.size(), channels, length});
    const std::size_t S = sample_size();
    for (std::size_t b = 0; b < idx.size(); ++b)
      std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(idx[b] * S), S, a.data() + b * S);
    return a;
  }

  std::vector<int> batch_labels(const std::vector<std::size_t>& idx) const {
    std::vector<int> out;
    for (auto i : idx) out.push_back(int_labels[i]);
    return out;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= (v >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ull;
      }
    };
    mix(n);
    mix(channels);
    mix(length);
    mix(static_cast<std::uint64_t>(label_kind));
    for (double v : inputs) mix(std::bit_cast<std::uint64_t>(v));
    for (int y : int_labels) mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(y)));
    for (double y : real_labels) mix(std::bit_cast<std::uint64_t>(y));
    for (auto s : splits) mix(static_cast<std::uint64_t>(s));
    return h;
  }

  bool operator==(const Dataset&) const = default;
};

// ---------------------------------------------------------------------------
// Generation

struct Burst {
  double freq_lo = 0.05, freq_hi = 0.05;  // cycles per sample
  double start = 0.0, end = 1.0;          // window as fractions of L, [start, end)
  double amplitude = 1.0;
  double jitter = 0.0;  // window shifted by U(-jitter, jitter) * L, clipped to the signal
  int channel = -1;     // -1: every channel
};

struct GeneratorSpec {
  int classes = 2;
  std::size_t length = 128;
  std::size_t channels = 1;
  std::vector<std::vector<Burst>> bursts;  // per class
  double noise_std = 0.1;
  std::size_t samples_per_class = 100;
  double train_fraction = 0.8, val_fraction = 0.1;
  std::uint64_t seed = 0;

  void check() const {
    if (classes < 1) throw ConfigError("generator: classes must be >= 1");
    if (length < 2) throw ConfigError("generator: length must be >= 2");
    if (channels < 1) throw ConfigError("generator: channels must be >= 1");
    if (bursts.size() != static_cast<std::size_t>(classes))
      throw ConfigError("generator: bursts must list one entry per class");
    if (noise_std < 0) throw ConfigError("generator: noise_std must be >= 0");
    if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0 + 1e-12)
      throw ConfigError("generator: split fractions must be non-negative and sum to at most 1");
    for (const auto& list : bursts)
      for (const auto& b : list) {
        if (!(b.freq_lo >= 0 && b.freq_hi >= b.freq_lo && b.freq_hi < 0.5))
          throw ConfigError("generator: burst frequencies must satisfy 0 <= lo <= hi < 0.5");
        if (!(b.start >= 0 && b.start < b.end && b.end <= 1.0))
          throw ConfigError("generator: burst window must satisfy 0 <= start < end <= 1");
        if (b.amplitude < 0) throw ConfigError("generator: burst amplitude must be >= 0");
        if (b.jitter < 0) throw ConfigError("generator: burst jitter must be >= 0");
        if (b.channel >= static_cast<int>(channels)) throw ConfigError("generator: burst channel out of range");
      }
  }
};

// Raised-cosine taper over the first and last 10% of a window of n samples.
inline double taper(std::size_t t, std::size_t n) {
  const double edge = std::max(1.0, 0.1 * static_cast<double>(n));
  const double pos = static_cast<double>(t) + 0.5;
  const double from_end = static_cast<double>(n) - pos;
  const double d = std::min(pos, from_end);
  if (d >= edge) return 1.0;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * d / edge));
}

inline void add_burst(double* x, std::size_t L, const Burst& b, Rng& rng) {
  const double f = b.freq_lo + (b.freq_hi - b.freq_lo) * uniform01(rng);
  const double phase = 2.0 * std::numbers::pi * uniform01(rng);
  const double shift = b.jitter > 0 ? (2.0 * uniform01(rng) - 1.0) * b.jitter : 0.0;
  const double Ld = static_cast<double>(L);
  const double width = (b.end - b.start) * Ld;
  double s = std::clamp(b.start * Ld + shift * Ld, 0.0, Ld - width);
  const auto t0 = static_cast<std::size_t>(std::llround(s));
  const auto n = std::min(L - t0, static_cast<std::size_t>(std::max(1.0, std::round(width))));
  for (std::size_t t = 0; t < n; ++t)
    x[t0 + t] += b.amplitude * taper(t, n) * std::cos(2.0 * std::numbers::pi * f * static_cast<double>(t0 + t) + phase);
}

inline Dataset generate(const GeneratorSpec& spec) {
  spec.check();
  Dataset d;
  const auto K = static_cast<std::size_t>(spec.classes);
  d.n = K * spec.samples_per_class;
  d.channels = spec.channels;
  d.length = spec.length;
  d.label_kind = LabelKind::Integer;
  d.inputs.assign(d.n * d.channels * d.length, 0.0);
  d.int_labels.resize(d.n);
  d.splits.resize(d.n);
  const std::size_t L = spec.length;
  for (std::size_t i = 0; i < d.n; ++i) {
    const auto y = static_cast<int>(i % K);
    d.int_labels[i] = y;
    Rng rng = make_rng(spec.seed, i + 1);
    double* x = d.inputs.data() + i * d.sample_size();
    for (const auto& b : spec.bursts[static_cast<std::size_t>(y)]) {
      if (b.channel >= 0) {
        add_burst(x + static_cast<std::size_t>(b.channel) * L, L, b, rng);
      } else {
        for (std::size_t c = 0; c < d.channels; ++c) add_burst(x + c * L, L, b, rng);
      }
    }
    if (spec.noise_std > 0)
      for (std::size_t k = 0; k < d.sample_size(); ++k) x[k] += spec.noise_std * standard_normal(rng);
  }
  // Stratified split: each class is shuffled and cut by the same fractions.
  Rng srng = make_rng(spec.seed, 0x73706c);
  for (std::size_t y = 0; y < K; ++y) {
    std::vector<std::size_t> members;
    for (std::size_t i = y; i < d.n; i += K) members.push_back(i);
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[uniform_index(srng, i)]);
    const auto m = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * m));
    const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::llround(spec.val_fraction * m)));
    for (std::size_t r = 0; r < members.size(); ++r)
      d.splits[members[r]] = r < n_train ? Split::Train : (r < n_train + n_val ? Split::Val : Split::Test);
  }
  return d;
}

inline nlohmann::json burst_to_json(const Burst& b) {
  return {{"freq_lo", b.freq_lo}, {"freq_hi", b.freq_hi}, {"start", b.start}, {"end", b.end},
          {"amplitude", b.amplitude}, {"jitter", b.jitter}, {"channel", b.channel}};
}

inline nlohmann::json generator_to_json(const GeneratorSpec& s) {
  nlohmann::json bursts = nlohmann::json::array();
  for (const auto& list : s.bursts) {
    nlohmann::json l = nlohmann::json::array();
    for (const auto& b : list) l.push_back(burst_to_json(b));
    bursts.push_back(l);
  }
  return {{"classes", s.classes},          {"length", s.length},
          {"channels", s.channels},        {"bursts", bursts},
          {"noise_std", s.noise_std},      {"samples_per_class", s.samples_per_class},
          {"train_fraction", s.train_fraction}, {"val_fraction", s.val_fraction},
          {"seed", s.seed}};
}

inline GeneratorSpec generator_from_json(const nlohmann::json& j, GeneratorSpec s = {}) {
  try {
    s.classes = j.value("classes", s.classes);
    s.length = j.value("length", s.length);
    s.channels = j.value("channels", s.channels);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.val_fraction = j.value("val_fraction", s.val_fraction);
    s.seed = j.value("seed", s.seed);
    if (j.contains("bursts")) {
      s.bursts.clear();
      for (const auto& list : j.at("bursts")) {
        std::vector<Burst> out;
        for (const auto& b : list) {
          Burst x;
          x.freq_lo = b.value("freq_lo", x.freq_lo);
          x.freq_hi = b.value("freq_hi", x.freq_lo);
          x.start = b.value("start", x.start);
          x.end = b.value("end", x.end);
          x.amplitude = b.value("amplitude", x.amplitude);
          x.jitter = b.value("jitter", x.jitter);
          x.channel = b.value("channel", x.channel);
          out.push_back(x);
        }
        s.bursts.push_back(std::move(out));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator spec: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// CSV ingestion. The schema names the layout of each row: channels*length
// series values in channel-major order plus one label column.

struct CsvSchema {
  std::size_t channels = 1;
  std::size_t length = 0;
  int label_column = -1;  // 0-based; -1 = last column
  LabelKind label_kind = LabelKind::Integer;
  bool header = false;
  double train_fraction = 1.0, val_fraction = 0.0;  // split by row order
};

inline CsvSchema csv_schema_from_json(const nlohmann::json& j) {
  CsvSchema s;
  try {
    s.channels = j.value("channels", s.channels);
    s.length = j.at("length").get<std::size_t>();
    s.label_column = j.value("label_column", s.label_column);
    const auto kind = j.value("label_kind", std::string("integer"));
    if (kind == "integer") s.label_kind = LabelKind::Integer;
    else if (kind == "real") s.label_kind = LabelKind::Real;
    else throw ConfigError("csv schema: label_kind must be \"integer\" or \"real\"");
    s.header = j.value("header", s.header);
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.val_fraction = j.value("val_fraction", s.val_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("csv schema: ") + e.what());
  }
  if (s.channels == 0 || s.length == 0) throw ConfigError("csv schema: channels and length must be positive");
  return s;
}

inline Dataset parse_csv(std::istream& in, const CsvSchema& schema) {
  Dataset d;
  d.channels = schema.channels;
  d.length = schema.length;
  d.label_kind = schema.label_kind;
  const std::size_t cols = schema.channels * schema.length + 1;
  const std::size_t label_col =
      schema.label_column < 0 ? cols - 1 : static_cast<std::size_t>(schema.label_column);
  if (label_col >= cols) throw ConfigError("csv schema: label column out of range");
  std::string line;
  std::size_t row = 0;
  if (schema.header) std::getline(in, line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string where = "row " + std::to_string(row) + " col " + std::to_string(c + 1);
      if (c >= cells.size()) throw ParseError("missing value at " + where);
      const std::string& s = cells[c];
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        throw ParseError("non-numeric value at " + where);
      }
      while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
      if (used != s.size()) throw ParseError("non-numeric value at " + where);
      if (c == label_col) {
        if (schema.label_kind == LabelKind::Integer) {
          if (v != std::floor(v)) throw ParseError("non-integer label at " + where);
          d.int_labels.push_back(static_cast<int>(v));
        } else {
          d.real_labels.push_back(v);
        }
      } else {
        d.inputs.push_back(v);
      }
    }
    if (cells.size() > cols)
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " columns, expected " +
                       std::to_string(cols));
  }
  d.n = row;
  const auto n_train = static_cast<std::size_t>(std::llround(schema.train_fraction * static_cast<double>(d.n)));
  const auto n_val = std::min(d.n - std::min(d.n, n_train),
                              static_cast<std::size_t>(std::llround(schema.val_fraction * static_cast<double>(d.n))));
  for (std::size_t i = 0; i < d.n; ++i)
    d.splits.push_back(i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test));
  d.check();
  return d;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return parse_csv(in, schema);
}

// ---------------------------------------------------------------------------
// Binary persistence

inline constexpr char kDatasetMagic[5] = {'M', 'S', 'T', 'S', '1'};

inline void write_dataset(std::ostream& os, const Dataset& d) {
  d.check();
  os.write(kDatasetMagic, 5);
  io::write_u32(os, static_cast<std::uint32_t>(d.n));
  io::write_u32(os, static_cast<std::uint32_t>(d.channels));
  io::write_u32(os, static_cast<std::uint32_t>(d.length));
  io::write_u32(os, static_cast<std::uint32_t>(d.label_kind));
  for (double v : d.inputs) io::write_f64(os, v);
  if (d.label_kind == LabelKind::Integer)
    for (int y : d.int_labels) io::write_i32(os, y);
  else
    for (double y : d.real_labels) io::write_f64(os, y);
  for (auto s : d.splits) os.put(static_cast<char>(s));
}

inline Dataset read_dataset(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (is.gcount() != 5 || std::memcmp(magic, kDatasetMagic, 5) != 0) throw ParseError("bad dataset magic");
  Dataset d;
  d.n = io::read_u32(is, "header");
  d.channels = io::read_u32(is, "header");
  d.length = io::read_u32(is, "header");
  const auto kind = io::read_u32(is, "header");
  if (kind > 1) throw ParseError("unknown label kind " + std::to_string(kind));
  d.label_kind = static_cast<LabelKind>(kind);
  const std::size_t total = d.n * d.channels * d.length;
  d.inputs.resize(total);
  for (auto& v : d.inputs) v = io::read_f64(is, "payload");
  if (d.label_kind == LabelKind::Integer) {
    d.int_labels.resize(d.n);
    for (auto& y : d.int_labels) y = static_cast<int>(io::read_u32(is, "labels"));
  } else {
    d.real_labels.resize(d.n);
    for (auto& y : d.real_labels) y = io::read_f64(is, "labels");
  }
  d.splits.resize(d.n);
  for (auto& s : d.splits) {
    unsigned char b = 0;
    io::read_bytes(is, &b, 1, "split tags");
    if (b > 2) throw ParseError("bad split tag " + std::to_string(b));
    s = static_cast<Split>(b);
  }
  return d;
}

inline void save_binary(const Dataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_dataset(os, d);
}

inline Dataset load_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_dataset(is);
}

}  // namespace mstar
