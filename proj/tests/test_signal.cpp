#include <gtest/gtest.h>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <random>

#include "tripletforge/signal.hpp"

using namespace tforge;
using namespace tforge::signal;

namespace {

RawRecording make_recording(std::vector<std::vector<double>> channels, double rate) {
  RawRecording r;
  r.channels = std::move(channels);
  r.sample_rate_hz = rate;
  r.subject_id = 1;
  r.letter = 'C';
  r.repetition = 1;
  return r;
}

std::vector<double> random_signal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// Natural cubic spline solved as a sparse system over per-interval
// coefficients a + b t + c t^2 + d t^3, independent of the tridiagonal solver.
std::vector<double> oracle_spline(const std::vector<double>& y, std::size_t count) {
  const int n = static_cast<int>(y.size()), segs = n - 1, unknowns = 4 * segs;
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(unknowns);
  int row = 0;
  auto col = [](int seg, int k) { return 4 * seg + k; };
  for (int s = 0; s < segs; ++s) {
    trip.emplace_back(row, col(s, 0), 1.0);
    rhs[row++] = y[s];
    for (int k = 0; k < 4; ++k) trip.emplace_back(row, col(s, k), 1.0);
    rhs[row++] = y[s + 1];
  }
  for (int s = 0; s + 1 < segs; ++s) {
    trip.emplace_back(row, col(s, 1), 1.0);
    trip.emplace_back(row, col(s, 2), 2.0);
    trip.emplace_back(row, col(s, 3), 3.0);
    trip.emplace_back(row, col(s + 1, 1), -1.0);
    ++row;
    trip.emplace_back(row, col(s, 2), 2.0);
    trip.emplace_back(row, col(s, 3), 6.0);
    trip.emplace_back(row, col(s + 1, 2), -2.0);
    ++row;
  }
  trip.emplace_back(row++, col(0, 2), 2.0);
  trip.emplace_back(row, col(segs - 1, 2), 2.0);
  trip.emplace_back(row++, col(segs - 1, 3), 6.0);
  Eigen::SparseMatrix<double> a(unknowns, unknowns);
  a.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  Eigen::VectorXd coef = lu.solve(rhs);

  std::vector<double> out(count);
  for (std::size_t j = 0; j < count; ++j) {
    double x = static_cast<double>(j) * (n - 1) / static_cast<double>(count - 1);
    int s = std::min(static_cast<int>(x), segs - 1);
    double t = x - s;
    out[j] = coef[col(s, 0)] + t * (coef[col(s, 1)] + t * (coef[col(s, 2)] + t * coef[col(s, 3)]));
  }
  return out;
}

}  // namespace

TEST(Decimate, TwoKilohertzToFiveHundred) {
  auto r = decimate(make_recording({std::vector<double>(8000, 1.0)}, 2000.0), 500.0);
  EXPECT_EQ(r.length(), 2000u);
  EXPECT_EQ(r.sample_rate_hz, 500.0);
}

TEST(Decimate, KeepsEveryKthIndex) {
  std::vector<double> ramp(8001);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
  auto r = decimate(make_recording({ramp}, 2000.0), 500.0);
  ASSERT_EQ(r.length(), 2001u);
  std::vector<double> expected;
  for (std::size_t i = 0; i < 8001; i += 4) expected.push_back(static_cast<double>(i));
  EXPECT_EQ(r.channels[0], expected);
}

TEST(Decimate, UnitRatioIsIdentityAndFractionalRatioRejected) {
  auto rec = make_recording({{1, 2, 3, 4, 5}}, 500.0);
  EXPECT_EQ(decimate(rec, 500.0).channels, rec.channels);
  EXPECT_THROW(decimate(make_recording({{1, 2, 3}}, 1000.0), 300.0), ConfigError);
  EXPECT_THROW(decimate(rec, 1000.0), ConfigError);
}

TEST(Rectify, AbsoluteValueAndIdempotent) {
  auto r = rectify(make_recording({{-1, 2, -3}}, 500.0));
  EXPECT_EQ(r.channels[0], (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(rectify(r).channels, r.channels);
}

TEST(Resample, LinearRampIsReproduced) {
  auto r = resample_to_length(make_recording({{0, 1, 2, 3}}, 500.0), 7);
  std::vector<double> expected{0, 0.5, 1, 1.5, 2, 2.5, 3};
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(r.channels[0][i], expected[i], 1e-12);
}

TEST(Resample, LongerRecordingsKeepTheHead) {
  std::vector<double> ramp(2500);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
  auto r = resample_to_length(make_recording({ramp}, 500.0), 2000);
  ASSERT_EQ(r.length(), 2000u);
  EXPECT_EQ(r.channels[0].front(), 0.0);
  EXPECT_EQ(r.channels[0].back(), 1999.0);
  EXPECT_EQ(resample_to_length(r, 2000).channels, r.channels);
}

TEST(Resample, ConstantStaysConstantAndShortIsRejected) {
  auto r = resample_to_length(make_recording({std::vector<double>(9, 2.5)}, 500.0), 40);
  for (double v : r.channels[0]) EXPECT_NEAR(v, 2.5, 1e-12);
  EXPECT_THROW(resample_to_length(make_recording({{1, 2, 3}}, 500.0), 10), ConfigError);
  EXPECT_THROW(resample_to_length(make_recording({{1, 2, 3, 4}}, 500.0), 3), ConfigError);
}

TEST(Resample, MatchesIndependentSplineAndPreservesEndpoints) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto y = random_signal(4 + trial * 7, rng);
    auto got = spline_resample(y, 101);
    auto want = oracle_spline(y, 101);
    EXPECT_EQ(got.front(), y.front());
    EXPECT_EQ(got.back(), y.back());
    for (std::size_t j = 0; j < got.size(); ++j) EXPECT_NEAR(got[j], want[j], 1e-9);
  }
}

TEST(Znormalize, TwoPointColumnAndConstantColumn) {
  std::vector<double> v{1, 7, 3, 7};  // columns [1, 3] and [7, 7]
  znormalize(v, 2, 2);
  EXPECT_DOUBLE_EQ(v[0], -1.0);
  EXPECT_DOUBLE_EQ(v[2], 1.0);
  EXPECT_EQ(v[1], 0.0);
  EXPECT_EQ(v[3], 0.0);
}

TEST(Znormalize, ZeroMeanUnitStd) {
  std::mt19937_64 rng(9);
  auto v = random_signal(300, rng);
  for (auto& x : v) x = 5.0 + 3.0 * x;
  znormalize(v, 100, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, s = 0;
    for (std::size_t r = 0; r < 100; ++r) m += v[r * 3 + c];
    m /= 100;
    for (std::size_t r = 0; r < 100; ++r) s += (v[r * 3 + c] - m) * (v[r * 3 + c] - m);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(s / 100), 1.0, 1e-6);
  }
}

TEST(Preprocess, TenSecondsAtTwoKilohertz) {
  std::mt19937_64 rng(1);
  std::vector<std::vector<double>> ch;
  for (int c = 0; c < 5; ++c) ch.push_back(random_signal(20000, rng));
  auto s = preprocess(make_recording(ch, 2000.0), {500.0, 2000});
  EXPECT_EQ(s.length, 2000u);
  EXPECT_EQ(s.channels, 5u);
  EXPECT_EQ(s.values.size(), 10000u);
  EXPECT_EQ(s.label_index, 2);
  for (double v : s.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Preprocess, AlreadyProcessedInputOnlyGetsNormalized) {
  std::mt19937_64 rng(2);
  std::vector<std::vector<double>> ch;
  for (int c = 0; c < 5; ++c) {
    auto v = random_signal(2000, rng);
    for (auto& x : v) x = std::abs(x);
    ch.push_back(v);
  }
  auto s = preprocess(make_recording(ch, 500.0), {500.0, 2000});
  std::vector<double> expected(10000);
  for (std::size_t t = 0; t < 2000; ++t)
    for (std::size_t c = 0; c < 5; ++c) expected[t * 5 + c] = ch[c][t];
  znormalize(expected, 2000, 5);
  for (std::size_t i = 0; i < expected.size(); ++i) ASSERT_NEAR(s.values[i], expected[i], 1e-12);
}

TEST(Preprocess, ShortRecordingIsSplineUpsampled) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<double>> ch;
    for (int c = 0; c < 5; ++c) ch.push_back(random_signal(1500, rng));
    auto s = preprocess(make_recording(ch, 500.0), {500.0, 2000});
    std::vector<double> expected(10000);
    for (std::size_t c = 0; c < 5; ++c) {
      std::vector<double> mag(ch[c].size());
      for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(ch[c][i]);
      auto up = oracle_spline(mag, 2000);
      for (std::size_t t = 0; t < 2000; ++t) expected[t * 5 + c] = up[t];
    }
    znormalize(expected, 2000, 5);
    for (std::size_t i = 0; i < expected.size(); ++i) ASSERT_NEAR(s.values[i], expected[i], 1e-8);
  }
}

TEST(Preprocess, DeterministicAndFixedShape) {
  std::mt19937_64 rng(5);
  for (std::size_t n : {4u, 37u, 200u, 2600u}) {
    std::vector<std::vector<double>> ch;
    for (int c = 0; c < 5; ++c) ch.push_back(random_signal(n, rng));
    auto rec = make_recording(ch, 500.0);
    auto a = preprocess(rec, {500.0, 200});
    auto b = preprocess(rec, {500.0, 200});
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.values.size(), 200u * 5u);
  }
}

TEST(Preprocess, InvalidRecordingRejected) {
  auto rec = make_recording({{1, 2, 3, 4}, {1, 2, 3}}, 500.0);
  EXPECT_THROW(preprocess(rec), ConfigError);
  auto bad_letter = make_recording({{1, 2, 3, 4}}, 500.0);
  bad_letter.letter = 'a';
  EXPECT_THROW(preprocess(bad_letter), ConfigError);
}
