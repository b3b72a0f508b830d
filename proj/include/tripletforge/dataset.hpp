#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "tripletforge/diff/tensor.hpp"
#include "tripletforge/error.hpp"
#include "tripletforge/signal.hpp"

namespace tforge::data {

inline constexpr std::size_t kLetters = 26;

/// (subject, repetition) pair; one key holds every letter of one session.
struct Key {
  int subject = 0;
  int repetition = 0;

  friend auto operator<=>(const Key&, const Key&) = default;
};

struct Sample {
  Key key;
  int label = 0;
  signal::ProcessedSample x;
};

/// Preprocessed samples in canonical (subject, repetition, letter) order.
struct Dataset {
  std::vector<Sample> samples;
  std::size_t length = 0;
  std::size_t channels = 0;

  std::size_t size() const { return samples.size(); }

  static Dataset from_recordings(const std::vector<signal::RawRecording>& recordings,
                                 const signal::PreprocessConfig& cfg) {
    Dataset d;
    d.length = cfg.length;
    for (const auto& r : recordings) {
      Sample s{{r.subject_id, r.repetition}, r.letter - 'A', signal::preprocess(r, cfg)};
      if (d.channels == 0) d.channels = s.x.channels;
      if (s.x.channels != d.channels) {
        throw ConfigError("recordings differ in channel count: " + std::to_string(s.x.channels) + " vs " +
                          std::to_string(d.channels));
      }
      d.samples.push_back(std::move(s));
    }
    d.sort();
    return d;
  }

  void sort() {
    std::stable_sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
      return std::tie(a.key, a.label) < std::tie(b.key, b.label);
    });
  }

  std::vector<Key> keys() const {
    std::set<Key> k;
    for (const auto& s : samples) k.insert(s.key);
    return {k.begin(), k.end()};
  }

  /// Indices of the samples whose key is in `keys`.
  std::vector<std::size_t> select(const std::vector<Key>& keys) const {
    std::set<Key> wanted(keys.begin(), keys.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (wanted.count(samples[i].key)) out.push_back(i);
    }
    return out;
  }

  std::vector<int> labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(samples[i].label);
    return out;
  }

  /// (N, L, C) model input for the given sample indices.
  diff::Tensor batch(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw ConfigError("batch: no samples selected");
    std::vector<double> v;
    v.reserve(indices.size() * length * channels);
    for (auto i : indices) {
      const auto& x = samples.at(i).x;
      if (x.length != length || x.channels != channels) {
        throw ShapeError("batch: sample " + std::to_string(i) + " is " + std::to_string(x.length) + "x" +
                         std::to_string(x.channels) + ", expected " + std::to_string(length) + "x" +
                         std::to_string(channels));
      }
      v.insert(v.end(), x.values.begin(), x.values.end());
    }
    return diff::Tensor({indices.size(), length, channels}, std::move(v));
  }
};

}  // namespace tforge::data
