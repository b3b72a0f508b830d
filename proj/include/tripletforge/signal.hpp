#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tripletforge/error.hpp"

namespace tforge::signal {

/// Variable-length multichannel recording of one written letter.
struct RawRecording {
  std::vector<std::vector<double>> channels;
  double sample_rate_hz = 0.0;
  int subject_id = 0;
  char letter = 'A';
  int repetition = 1;

  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
  std::size_t channel_count() const { return channels.size(); }

  void validate() const {
    if (channels.empty()) throw ConfigError("recording has no channels");
    for (const auto& ch : channels) {
      if (ch.size() != channels.front().size()) {
        throw ConfigError("recording channels differ in length");
      }
    }
    if (length() < 2) throw ConfigError("recording must have at least 2 samples");
    if (!(sample_rate_hz > 0.0)) throw ConfigError("sample rate must be positive");
    if (letter < 'A' || letter > 'Z') throw ConfigError(std::string("letter out of range: ") + letter);
    if (repetition < 1) throw ConfigError("repetition index must be >= 1");
  }
};

/// Fixed-length, z-normalized model input. values is row-major (length x channels).
struct ProcessedSample {
  std::vector<double> values;
  std::size_t length = 0;
  std::size_t channels = 0;
  int label_index = 0;

  double at(std::size_t t, std::size_t c) const { return values[t * channels + c]; }
};

struct PreprocessConfig {
  double target_rate_hz = 500.0;
  std::size_t length = 2000;
};

/// Keeps every k-th sample, k = source rate / target rate (no anti-alias filter).
inline RawRecording decimate(const RawRecording& rec, double target_rate_hz) {
  if (!(target_rate_hz > 0.0)) throw ConfigError("decimate: target rate must be positive");
  const double ratio = rec.sample_rate_hz / target_rate_hz;
  const double k_real = std::round(ratio);
  if (k_real < 1.0 || std::abs(ratio - k_real) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigError("decimate: source rate " + std::to_string(rec.sample_rate_hz) +
                      " Hz is not an integer multiple of " + std::to_string(target_rate_hz) + " Hz");
  }
  const auto k = static_cast<std::size_t>(k_real);
  RawRecording out = rec;
  out.sample_rate_hz = target_rate_hz;
  if (k == 1) return out;
  for (auto& ch : out.channels) {
    std::vector<double> kept;
    kept.reserve(ch.size() / k + 1);
    for (std::size_t i = 0; i < ch.size(); i += k) kept.push_back(ch[i]);
    ch = std::move(kept);
  }
  return out;
}

inline RawRecording rectify(const RawRecording& rec) {
  RawRecording out = rec;
  for (auto& ch : out.channels)
    for (auto& v : ch) v = std::abs(v);
  return out;
}

/// Natural cubic spline through (i, y[i]) evaluated at `count` evenly spaced
/// positions spanning [0, n-1]. Both endpoints are reproduced exactly.
inline std::vector<double> spline_resample(std::span<const double> y, std::size_t count) {
  const std::size_t n = y.size();
  if (n < 4) throw ConfigError("spline_resample: need at least 4 samples, got " + std::to_string(n));
  if (count < 2) throw ConfigError("spline_resample: need at least 2 output samples");

  // Second derivatives m[1..n-2] from m[i-1] + 4 m[i] + m[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]),
  // m[0] = m[n-1] = 0; Thomas algorithm on the interior.
  std::vector<double> m(n, 0.0), diag(n, 4.0), rhs(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) rhs[i] = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]);
  for (std::size_t i = 2; i + 1 < n; ++i) {
    const double w = 1.0 / diag[i - 1];
    diag[i] -= w;
    rhs[i] -= w * rhs[i - 1];
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m[i] = (rhs[i] - (i + 2 < n ? m[i + 1] : 0.0)) / diag[i];
    if (i == 1) break;
  }

  std::vector<double> out(count);
  const double step = static_cast<double>(n - 1) / static_cast<double>(count - 1);
  for (std::size_t j = 0; j < count; ++j) {
    const double x = j + 1 == count ? static_cast<double>(n - 1) : static_cast<double>(j) * step;
    auto i = std::min(static_cast<std::size_t>(x), n - 2);
    const double t = x - static_cast<double>(i), s = 1.0 - t;
    out[j] = s * y[i] + t * y[i + 1] + ((s * s * s - s) * m[i] + (t * t * t - t) * m[i + 1]) / 6.0;
  }
  return out;
}

/// Spline-upsamples recordings shorter than `length`, keeps the first `length`
/// samples of longer ones.
inline RawRecording resample_to_length(const RawRecording& rec, std::size_t length) {
  if (length < 4) throw ConfigError("resample_to_length: target length must be >= 4");
  if (rec.length() < 4) {
    throw ConfigError("resample_to_length: channel has " + std::to_string(rec.length()) +
                      " samples, need at least 4");
  }
  RawRecording out = rec;
  for (auto& ch : out.channels) {
    if (ch.size() < length) {
      ch = spline_resample(ch, length);
    } else {
      ch.resize(length);
    }
  }
  return out;
}

/// Per-column (x - mean) / max(std, 1e-8) with the population standard
/// deviation; values is row-major (rows x cols).
inline void znormalize(std::span<double> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw ConfigError("znormalize: size does not match rows x cols");
  constexpr double kMinStd = 1e-8;
  for (std::size_t c = 0; c < cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += values[r * cols + c];
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = values[r * cols + c] - mean;
      var += d * d;
    }
    const double sd = std::max(std::sqrt(var / static_cast<double>(rows)), kMinStd);
    for (std::size_t r = 0; r < rows; ++r) values[r * cols + c] = (values[r * cols + c] - mean) / sd;
  }
}

/// decimate -> rectify -> resample_to_length -> znormalize.
inline ProcessedSample preprocess(const RawRecording& rec, const PreprocessConfig& cfg = {}) {
  rec.validate();
  RawRecording r = resample_to_length(rectify(decimate(rec, cfg.target_rate_hz)), cfg.length);
  ProcessedSample out;
  out.length = cfg.length;
  out.channels = r.channel_count();
  out.label_index = rec.letter - 'A';
  out.values.resize(out.length * out.channels);
  for (std::size_t c = 0; c < out.channels; ++c) {
    for (std::size_t t = 0; t < out.length; ++t) out.values[t * out.channels + c] = r.channels[c][t];
  }
  znormalize(out.values, out.length, out.channels);
  return out;
}

}  // namespace tforge::signal
