#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "tripletforge/encoders.hpp"
#include "tripletforge/error.hpp"
#include "tripletforge/signal.hpp"

namespace tforge::dataio {

namespace fs = std::filesystem;

inline const std::array<std::string, 5> kChannelNames{"Flexor Carpi Radialis", "Pronator Teres", "Flexor Digitorum",
                                                      "Brachioradialis", "Extensor Digitorum"};

struct SubjectEntry {
  int id = 0;
  int repetitions = 0;
};

struct DatasetManifest {
  fs::path root;
  double sample_rate_hz = 0.0;
  std::vector<std::string> channel_names;
  std::vector<SubjectEntry> subjects;
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<signal::RawRecording> recordings;  // sorted by (subject, repetition, letter)
};

inline void sort_recordings(std::vector<signal::RawRecording>& recs) {
  std::stable_sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.subject_id, a.repetition, a.letter) < std::tie(b.subject_id, b.repetition, b.letter);
  });
}

/// Shortest decimal form with 9 significant digits.
inline std::string format_value(double v) {
  std::array<char, 40> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 9);
  if (ec != std::errc{}) throw IoError("cannot format value");
  return std::string(buf.data(), end);
}

namespace detail {

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Reads one recording CSV: a header of channel names, then one row of
/// channel values per sample. Errors name the file and line.
inline std::vector<std::vector<double>> read_recording_csv(const fs::path& path, std::size_t channels) {
  const std::string text = detail::read_text(path);
  std::vector<std::vector<double>> out(channels);
  std::size_t line_no = 0, start = 0;
  bool header = true;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view line = detail::trim(std::string_view(text).substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    auto fields = detail::split(line, ',');
    if (fields.size() != channels) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(channels) +
                    " columns, got " + std::to_string(fields.size()));
    }
    if (header) {
      header = false;
      continue;
    }
    for (std::size_t c = 0; c < channels; ++c) {
      auto f = detail::trim(fields[c]);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc{} || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + std::string(f) + "'");
      }
      out[c].push_back(v);
    }
  }
  if (header) throw IoError(path.string() + ": missing header row");
  if (out.front().size() < 2) throw IoError(path.string() + ": fewer than 2 samples");
  return out;
}

inline void write_recording_csv(const fs::path& path, const signal::RawRecording& rec,
                                const std::vector<std::string>& names) {
  std::string text;
  for (std::size_t c = 0; c < names.size(); ++c) text += (c ? "," : "") + names[c];
  text += '\n';
  for (std::size_t t = 0; t < rec.length(); ++t) {
    for (std::size_t c = 0; c < rec.channel_count(); ++c) {
      if (c) text += ',';
      text += format_value(rec.channels[c][t]);
    }
    text += '\n';
  }
  detail::write_text(path, text);
}

inline fs::path recording_path(const fs::path& root, int subject, int repetition, char letter) {
  return root / ("subject_" + std::to_string(subject)) / ("rep_" + std::to_string(repetition)) /
         (std::string(1, letter) + ".csv");
}

inline DatasetManifest read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) throw IoError("missing manifest: " + path.string());
  DatasetManifest m;
  m.root = root;
  try {
    auto j = nlohmann::json::parse(detail::read_text(path));
    m.sample_rate_hz = j.at("sample_rate_hz").get<double>();
    m.channel_names = j.at("channel_names").get<std::vector<std::string>>();
    for (const auto& s : j.at("subjects")) m.subjects.push_back({s.at("id").get<int>(), s.at("repetitions").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (!(m.sample_rate_hz > 0.0)) throw IoError(path.string() + ": sample_rate_hz must be positive");
  if (m.channel_names.empty()) throw IoError(path.string() + ": no channel names");
  for (const auto& s : m.subjects) {
    if (s.repetitions < 1) throw IoError(path.string() + ": subject " + std::to_string(s.id) + " has no repetitions");
  }
  return m;
}

inline void write_manifest(const fs::path& root, const DatasetManifest& m) {
  nlohmann::json j;
  j["sample_rate_hz"] = m.sample_rate_hz;
  j["channel_names"] = m.channel_names;
  j["subjects"] = nlohmann::json::array();
  for (const auto& s : m.subjects) j["subjects"].push_back({{"id", s.id}, {"repetitions", s.repetitions}});
  detail::write_text(root / "manifest.json", j.dump(2) + "\n");
}

/// Loads root/manifest.json and every root/subject_<id>/rep_<k>/<LETTER>.csv
/// it references.
inline LoadedDataset load_dataset(const fs::path& root) {
  LoadedDataset d{read_manifest(root), {}};
  const std::size_t channels = d.manifest.channel_names.size();
  for (const auto& s : d.manifest.subjects) {
    for (int k = 1; k <= s.repetitions; ++k) {
      const fs::path dir = root / ("subject_" + std::to_string(s.id)) / ("rep_" + std::to_string(k));
      if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
      std::size_t found = 0;
      for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() != 5 || name.substr(1) != ".csv" || name[0] < 'A' || name[0] > 'Z') {
          throw IoError("unknown letter file " + entry.path().string());
        }
        signal::RawRecording r;
        r.channels = read_recording_csv(entry.path(), channels);
        r.sample_rate_hz = d.manifest.sample_rate_hz;
        r.subject_id = s.id;
        r.repetition = k;
        r.letter = name[0];
        d.recordings.push_back(std::move(r));
        ++found;
      }
      if (found == 0) throw IoError("no recordings in " + dir.string());
    }
  }
  sort_recordings(d.recordings);
  return d;
}

/// Writes a manifest plus one CSV per recording under `root`.
inline void save_dataset(const fs::path& root, const std::vector<signal::RawRecording>& recordings,
                         const std::vector<std::string>& channel_names) {
  if (recordings.empty()) throw ConfigError("save_dataset: no recordings");
  DatasetManifest m;
  m.root = root;
  m.sample_rate_hz = recordings.front().sample_rate_hz;
  m.channel_names = channel_names;
  std::map<int, int> reps;
  for (const auto& r : recordings) {
    if (r.channel_count() != channel_names.size()) throw ConfigError("save_dataset: channel count mismatch");
    if (r.sample_rate_hz != m.sample_rate_hz) throw ConfigError("save_dataset: mixed sample rates");
    reps[r.subject_id] = std::max(reps[r.subject_id], r.repetition);
  }
  for (const auto& [id, n] : reps) m.subjects.push_back({id, n});
  fs::create_directories(root);
  write_manifest(root, m);
  for (const auto& r : recordings) {
    const fs::path path = recording_path(root, r.subject_id, r.repetition, r.letter);
    fs::create_directories(path.parent_path());
    write_recording_csv(path, r, channel_names);
  }
}

struct SynthConfig {
  int n_subjects = 10;
  int n_repetitions = 10;
  int classes = 26;
  std::size_t length_min = 150;
  std::size_t length_max = 250;
  double sample_rate_hz = 500.0;
  double noise_sigma = 0.1;
  double subject_variability = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_subjects < 1) throw ConfigError("synthetic subjects must be >= 1, got " + std::to_string(n_subjects));
    if (n_repetitions < 1) throw ConfigError("synthetic repetitions must be >= 1");
    if (classes < 1 || classes > 26) throw ConfigError("synthetic classes must be in [1, 26]");
    if (length_min < 2 || length_max < length_min) throw ConfigError("synthetic length range must satisfy 2 <= min <= max");
    if (!(sample_rate_hz > 0.0)) throw ConfigError("synthetic sample rate must be positive");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
    if (!(subject_variability >= 0.0)) throw ConfigError("subject variability must be >= 0");
  }
};

namespace detail {

inline constexpr std::size_t kSynthChannels = 5;
inline constexpr int kMaxComponents = 5;

// Independent stream for one (purpose, a, b) triple of the master seed.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t purpose, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

struct Component {
  double amplitude, cycles, phase;
};

using Prototype = std::array<std::vector<Component>, kSynthChannels>;

inline double evaluate(const std::vector<Component>& comps, double u) {
  double v = 0.0;
  for (const auto& c : comps) v += c.amplitude * std::sin(2.0 * std::numbers::pi * c.cycles * u + c.phase);
  return v;
}

}  // namespace detail

/// Deterministic synthetic letters. Each class has a smooth prototype per
/// channel (a sum of up to five random-phase sinusoids over normalized time);
/// each subject applies a fixed channel mixing and amplitude envelope scaled
/// by subject_variability; each repetition adds a random time shift and
/// stretch, a random length and Gaussian noise.
inline std::vector<signal::RawRecording> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  using detail::kSynthChannels;
  std::vector<detail::Prototype> protos(static_cast<std::size_t>(cfg.classes));
  for (int c = 0; c < cfg.classes; ++c) {
    auto rng = detail::stream(cfg.seed, 1, static_cast<std::uint64_t>(c));
    std::uniform_int_distribution<int> count(1, detail::kMaxComponents);
    std::uniform_real_distribution<double> amp(0.5, 1.5), cyc(0.5, 4.0), phase(0.0, 2.0 * std::numbers::pi);
    for (auto& ch : protos[static_cast<std::size_t>(c)]) {
      const int m = count(rng);
      for (int k = 0; k < m; ++k) {
        const double a = amp(rng), f = cyc(rng), p = phase(rng);
        ch.push_back({a, f, p});
      }
    }
  }

  std::vector<signal::RawRecording> out;
  for (int s = 1; s <= cfg.n_subjects; ++s) {
    auto srng = detail::stream(cfg.seed, 2, static_cast<std::uint64_t>(s));
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::array<std::array<double, kSynthChannels>, kSynthChannels> mix{};
    std::array<double, kSynthChannels> env_depth{}, env_phase{};
    for (std::size_t i = 0; i < kSynthChannels; ++i) {
      for (std::size_t j = 0; j < kSynthChannels; ++j) {
        mix[i][j] = (i == j ? 1.0 : 0.0) + cfg.subject_variability * nd(srng) / std::sqrt(double(kSynthChannels));
      }
      env_depth[i] = cfg.subject_variability * nd(srng);
      env_phase[i] = phase(srng);
    }
    for (int r = 1; r <= cfg.n_repetitions; ++r) {
      for (int c = 0; c < cfg.classes; ++c) {
        auto rrng = detail::stream(cfg.seed, 3, static_cast<std::uint64_t>(s),
                                   static_cast<std::uint64_t>(r) * 64 + static_cast<std::uint64_t>(c));
        std::uniform_int_distribution<std::size_t> len(cfg.length_min, cfg.length_max);
        std::normal_distribution<double> jitter(0.0, 0.03), noise(0.0, 1.0);
        const std::size_t n = len(rrng);
        const double shift = jitter(rrng), stretch = 1.0 + jitter(rrng);
        signal::RawRecording rec;
        rec.sample_rate_hz = cfg.sample_rate_hz;
        rec.subject_id = s;
        rec.repetition = r;
        rec.letter = static_cast<char>('A' + c);
        rec.channels.assign(kSynthChannels, std::vector<double>(n));
        const auto& proto = protos[static_cast<std::size_t>(c)];
        for (std::size_t t = 0; t < n; ++t) {
          const double u0 = static_cast<double>(t) / static_cast<double>(n - 1);
          const double u = shift + stretch * u0;
          std::array<double, kSynthChannels> base{};
          for (std::size_t j = 0; j < kSynthChannels; ++j) base[j] = detail::evaluate(proto[j], u);
          for (std::size_t i = 0; i < kSynthChannels; ++i) {
            double v = 0.0;
            for (std::size_t j = 0; j < kSynthChannels; ++j) v += mix[i][j] * base[j];
            v *= 1.0 + env_depth[i] * std::sin(2.0 * std::numbers::pi * u0 + env_phase[i]);
            rec.channels[i][t] = v + cfg.noise_sigma * noise(rrng);
          }
        }
        out.push_back(std::move(rec));
      }
    }
  }
  sort_recordings(out);
  return out;
}

inline std::vector<std::string> channel_names() { return {kChannelNames.begin(), kChannelNames.end()}; }

// ---- checkpoints ---------------------------------------------------------

enum class Precision { Float32, Float64 };

inline std::string_view to_string(Precision p) { return p == Precision::Float32 ? "float32" : "float64"; }

inline Precision parse_precision(std::string_view s) {
  if (s == "float32") return Precision::Float32;
  if (s == "float64") return Precision::Float64;
  throw ConfigError("unknown precision '" + std::string(s) + "' (float32|float64)");
}

inline constexpr std::string_view kCheckpointMagic = "tripletforge-checkpoint 1";

struct Checkpoint {
  encoders::ModelParams params;
  Precision precision = Precision::Float32;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  bool has(std::size_t n) const { return data_.size() - pos_ >= n; }
  std::uint64_t get(std::size_t bytes, const std::string& what) {
    if (!has(bytes)) throw IoError("truncated " + what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += bytes;
    return v;
  }
  std::string_view take(std::size_t n, const std::string& what) {
    if (!has(n)) throw IoError("truncated " + what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Text manifest (kind, embedding_dim, input_length, input_channels, seed,
/// precision, tensor count), then per tensor: name length, name, rank, dims
/// and the little-endian IEEE-754 payload. Every entry, batch-norm running
/// statistics included, is stored.
inline std::string serialize_checkpoint(const encoders::ModelParams& p, Precision precision = Precision::Float32) {
  std::string out(kCheckpointMagic);
  out += "\nkind " + std::string(encoders::to_string(p.spec.kind));
  out += "\nembedding_dim " + std::to_string(p.spec.embedding_dim);
  out += "\ninput_length " + std::to_string(p.spec.input_length);
  out += "\ninput_channels " + std::to_string(p.spec.input_channels);
  out += "\nseed " + std::to_string(p.seed);
  out += "\nprecision " + std::string(to_string(precision));
  out += "\ntensors " + std::to_string(p.entries.size());
  out += "\nend\n";
  for (const auto& e : p.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) detail::put_u64(out, d);
    for (double v : e.tensor.values()) {
      if (precision == Precision::Float32) {
        detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& source = "checkpoint") {
  const std::size_t header_end = bytes.find("\nend\n");
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic || header_end == std::string_view::npos) {
    throw IoError(source + ": not a checkpoint (bad manifest)");
  }
  std::map<std::string, std::string> kv;
  std::istringstream header(std::string(bytes.substr(kCheckpointMagic.size(), header_end - kCheckpointMagic.size())));
  for (std::string line; std::getline(header, line);) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw IoError(source + ": bad manifest line '" + line + "'");
    kv[line.substr(0, sp)] = line.substr(sp + 1);
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError(source + ": manifest lacks '" + key + "'");
    return it->second;
  };
  auto number = [&](const std::string& key) -> std::uint64_t {
    const std::string& s = field(key);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw IoError(source + ": bad value for '" + key + "'");
    return v;
  };

  encoders::EncoderSpec spec;
  spec.kind = encoders::parse_kind(field("kind"));
  spec.embedding_dim = number("embedding_dim");
  spec.input_length = number("input_length");
  spec.input_channels = number("input_channels");
  spec.validate();
  Checkpoint ck{encoders::build(spec, number("seed")), parse_precision(field("precision"))};
  const std::size_t count = number("tensors");
  const std::size_t width = ck.precision == Precision::Float32 ? 4 : 8;

  detail::Reader in(bytes.substr(header_end + 5));
  std::vector<bool> seen(ck.params.entries.size(), false);
  for (std::size_t k = 0; k < count; ++k) {
    const auto name_len = in.get(4, "tensor record " + std::to_string(k));
    const std::string name(in.take(name_len, "tensor record " + std::to_string(k)));
    auto it = std::find_if(ck.params.entries.begin(), ck.params.entries.end(),
                           [&](const auto& e) { return e.name == name; });
    if (it == ck.params.entries.end()) throw IoError(source + ": unknown tensor " + name);
    const std::string what = "tensor " + name;
    const auto rank = in.get(4, what);
    diff::Shape shape;
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(in.get(8, what));
    if (shape != it->tensor.shape()) {
      throw IoError(source + ": shape mismatch for " + name + ": file " + diff::to_string(shape) + ", model " +
                    diff::to_string(it->tensor.shape()));
    }
    const std::size_t n = diff::numel(shape);
    if (!in.has(n * width)) throw IoError(source + ": truncated tensor " + name);
    auto values = it->tensor.values();
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = width == 4 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(in.get(4, what))))
                             : std::bit_cast<double>(in.get(8, what));
    }
    seen[static_cast<std::size_t>(it - ck.params.entries.begin())] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw IoError(source + ": missing tensor " + ck.params.entries[i].name);
  }
  if (!in.done()) throw IoError(source + ": trailing bytes after last tensor");
  return ck;
}

inline void save_checkpoint(const encoders::ModelParams& p, const fs::path& path,
                            Precision precision = Precision::Float32) {
  detail::write_text(path, serialize_checkpoint(p, precision));
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  return deserialize_checkpoint(detail::read_text(path), path.string());
}

/// Throws ConfigError when a loaded checkpoint does not fit the expected encoder.
inline void require_compatible(const encoders::EncoderSpec& loaded, const encoders::EncoderSpec& expected) {
  auto mismatch = [&](const std::string& what, const std::string& a, const std::string& b) {
    throw ConfigError("checkpoint manifest mismatch: " + what + " is " + a + ", expected " + b);
  };
  if (loaded.kind != expected.kind) {
    mismatch("kind", std::string(encoders::to_string(loaded.kind)), std::string(encoders::to_string(expected.kind)));
  }
  if (loaded.embedding_dim != expected.embedding_dim) {
    mismatch("embedding_dim", std::to_string(loaded.embedding_dim), std::to_string(expected.embedding_dim));
  }
  if (loaded.input_length != expected.input_length) {
    mismatch("input_length", std::to_string(loaded.input_length), std::to_string(expected.input_length));
  }
  if (loaded.input_channels != expected.input_channels) {
    mismatch("input_channels", std::to_string(loaded.input_channels), std::to_string(expected.input_channels));
  }
}

}  // namespace tforge::dataio
