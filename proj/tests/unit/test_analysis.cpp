// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include "kvfuse/analysis.hpp"
#include "kvfuse/error.hpp"
#include "kvfuse/rng.hpp"

namespace kvfuse {
namespace {

SimilaritySampleSet set_of(std::vector<double> x) {
  SimilaritySampleSet s;
  s.samples = std::move(x);
  return s;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an exception";
  return ErrorKind::kIo;
}

TEST(Normal, AgreesWithBoost) {
  const boost::math::normal_distribution<double> n;
  for (double x = -12.0; x <= 12.0; x += 0.37) {
    EXPECT_NEAR(normal_pdf(x), boost::math::pdf(n, x), 1e-15);
    EXPECT_NEAR(normal_cdf(x), boost::math::cdf(n, x), 1e-15);
    const double sf = boost::math::cdf(boost::math::complement(n, x));
    EXPECT_LE(std::abs(normal_sf(x) - sf), 1e-14 * sf + 1e-300);
  }
  for (double p : {1e-12, 1e-6, 0.001, 0.1, 0.5, 0.77, 0.999, 1 - 1e-9}) {
    EXPECT_NEAR(normal_quantile(p), boost::math::quantile(n, p), 1e-9 * std::max(1.0, std::abs(boost::math::quantile(n, p))));
  }
}

TEST(Kde, DensityExamples) {
  EXPECT_NEAR(kde_density({set_of({0.0}), 1.0}, 0.0), 0.3989422804014327, 1e-15);
  EXPECT_NEAR(kde_density({set_of({0.2, 0.8}), 0.1}, 0.5), 0.044318484119380069, 1e-15);
  const KdeModel sym{set_of({-0.3, 0.3}), 0.2};
  for (double x : {0.0, 0.1, 0.45, 0.9}) EXPECT_NEAR(kde_density(sym, x), kde_density(sym, -x), 1e-12);
}

TEST(Kde, CdfExamples) {
  EXPECT_DOUBLE_EQ(kde_cdf({set_of({0.0}), 1.0}, 0.0), 0.5);
  EXPECT_DOUBLE_EQ(kde_cdf({set_of({0.0}), 1.0}, std::numeric_limits<double>::infinity()), 1.0);
  EXPECT_NEAR(kde_cdf({set_of({0.2, 0.8}), 0.1}, 0.5), 0.5, 1e-15);
}

TEST(Kde, CdfMonotone) {
  Rng rng(8);
  std::vector<double> x(200);
  for (double& v : x) v = std::tanh(rng.normal());
  const KdeModel m{set_of(x), 0.05};
  double prev = 0.0;
  for (double t = -1.5; t <= 1.5; t += 0.001) {
    const double c = kde_cdf(m, t);
    EXPECT_GE(c, prev);
    prev = c;
  }
}

TEST(Kde, RejectsBadBandwidth) {
  EXPECT_EQ(kind_of([] { kde_density({set_of({0.0}), 0.0}, 0.0); }), ErrorKind::kDomain);
  EXPECT_EQ(kind_of([] { kde_cdf({set_of({}), 0.1}, 0.0); }), ErrorKind::kInsufficientData);
}

TEST(Evt, Constants) {
  const EvtConstants e = evt_constants(static_cast<std::size_t>(std::round(std::exp(8.0))));
  EXPECT_NEAR(e.a_n, 0.25, 1e-5);
  const EvtConstants c = evt_constants(100);
  EXPECT_NEAR(c.a_n, 0.32950511449113040575, 1e-10);
  EXPECT_NEAR(c.b_n, 2.3662547929063939872, 1e-10);
  EXPECT_EQ(kind_of([] { evt_constants(2); }), ErrorKind::kDomain);
}

TEST(Evt, SingleSampleAtShiftedThresholdGivesOne) {
  std::vector<double> x{0.3, 0.3, 0.3};
  const double h = 0.01;
  const EvtConstants c = evt_constants(3);
  const EvtRate r = poisson_rate_evt(set_of(x), h, h * c.b_n + 0.3);
  EXPECT_NEAR(r.lambda, 1.0, 1e-12);
}

// Direct summation with independently computed constants.
TEST(Evt, MatchesDirectSummation) {
  Rng rng(42);
  std::vector<double> x(100);
  for (double& v : x) v = rng.normal(0.5, 0.1);
  long double mean = 0, var = 0;
  for (double v : x) mean += v;
  mean /= 100;
  for (double v : x) var += (v - mean) * (v - mean);
  const long double sigma = std::sqrt(var / 100);
  const long double h = 1.06L * sigma * std::pow(100.0L, -0.2L);
  EXPECT_NEAR(silverman_bandwidth(set_of(x)), static_cast<double>(h), 1e-14);
  const long double ln = 2.0L * std::log(100.0L);
  const long double a = 1.0L / std::sqrt(ln);
  const long double b = std::sqrt(ln) - 0.5L / std::sqrt(ln) * (std::log(std::log(100.0L)) + std::log(4.0L * std::numbers::pi_v<long double>));
  long double lambda = 0;
  for (double v : x) lambda += std::exp(-(0.9L - (h * b + v)) / (h * a));
  lambda /= 100;
  const EvtRate r = poisson_rate_evt(set_of(x), static_cast<double>(h), 0.9);
  EXPECT_NEAR(r.lambda, static_cast<double>(lambda), 1e-12 * static_cast<double>(lambda));
  EXPECT_GT(r.max_kernel_tail, r.min_kernel_tail);
}

TEST(Evt, WarnsBelowLargestSample) {
  const EvtRate r = poisson_rate_evt(set_of({0.1, 0.5, 0.9}), 0.05, 0.6);
  EXPECT_FALSE(r.asymptotic);
  EXPECT_TRUE(poisson_rate_evt(set_of({0.1, 0.5, 0.9}), 0.05, 0.95).asymptotic);
}

TEST(Rates, StrictlyDecreasingInThreshold) {
  Rng rng(4);
  std::vector<double> x(500);
  for (double& v : x) v = rng.normal(0.2, 0.15);
  double prev_e = std::numeric_limits<double>::infinity(), prev_g = prev_e;
  for (double u = 0.0; u <= 1.0; u += 0.05) {
    const double e = poisson_rate_evt(set_of(x), 0.05, u).lambda;
    const double g = poisson_rate_gaussian(500, 0.2, 0.15, u);
    EXPECT_LT(e, prev_e);
    EXPECT_LT(g, prev_g);
    prev_e = e;
    prev_g = g;
  }
}

TEST(Rates, GaussianExamples) {
  EXPECT_DOUBLE_EQ(poisson_rate_gaussian(1000, 0.3, 0.1, 0.3), 500.0);
  EXPECT_NEAR(poisson_rate_gaussian(1000, 0.3, 0.1, 0.4), 158.65525393145705141, 1e-9);
  EXPECT_EQ(poisson_rate_gaussian(0, 0.3, 0.1, 0.4), 0.0);
  EXPECT_EQ(kind_of([] { poisson_rate_gaussian(10, 0.0, 0.0, 0.5); }), ErrorKind::kDomain);
}

TEST(Moments, Examples) {
  const Moments c = layer_moments(set_of({1, 1, 1}));
  EXPECT_EQ(c.mu, 1.0);
  EXPECT_EQ(c.sigma, 0.0);
  const Moments m = layer_moments(set_of({0, 1}));
  EXPECT_DOUBLE_EQ(m.mu, 0.5);
  EXPECT_DOUBLE_EQ(m.sigma, 0.5);
  const Moments s = layer_moments(set_of({-0.4, 0.4}));
  EXPECT_DOUBLE_EQ(s.mu, 0.0);
  EXPECT_DOUBLE_EQ(s.sigma, 0.4);
  EXPECT_EQ(kind_of([] { layer_moments(set_of({0.1})); }), ErrorKind::kInsufficientData);
}

TEST(CompressionRatio, RateFormula) {
  const std::vector<LayerRate> zero{{0, 0.9, 0.0}, {1, 0.9, 0.0}};
  EXPECT_EQ(predicted_compression_ratio(2, 4, 4, zero), 1.0);
  const std::vector<LayerRate> four{{0, 0.9, 4.0}};
  EXPECT_DOUBLE_EQ(predicted_compression_ratio(1, 4, 4, four), 2.0);
  const std::vector<LayerRate> full{{0, 0.9, 8.0}};
  EXPECT_EQ(kind_of([&] { predicted_compression_ratio(1, 4, 4, full); }), ErrorKind::kDivergence);
}

TEST(ProbNoFusion, Examples) {
  EXPECT_EQ(prob_no_fusion({0, 0.9, 0.0}), 1.0);
  EXPECT_NEAR(prob_no_fusion({0, 0.9, std::log(2.0)}), 0.5, 1e-15);
  EXPECT_NEAR(prob_no_fusion({0, 0.9, 5.0}), 0.0067379469990854671, 1e-15);
}

TEST(Silverman, Rule) {
  // Population sigma exactly 1 over 32 samples.
  std::vector<double> x;
  for (int i = 0; i < 16; ++i) {
    x.push_back(-1.0);
    x.push_back(1.0);
  }
  EXPECT_NEAR(silverman_bandwidth(set_of(x)), 0.53, 1e-12);
  std::vector<double> scaled = x;
  for (double& v : scaled) v *= 0.3;
  EXPECT_NEAR(silverman_bandwidth(set_of(scaled)), 0.3 * 0.53, 1e-12);
  EXPECT_EQ(kind_of([] { silverman_bandwidth(set_of({0.2, 0.2, 0.2})); }), ErrorKind::kDomain);
}

TEST(Samples, Validation) {
  EXPECT_EQ(kind_of([] { set_of({}).validate(); }), ErrorKind::kInsufficientData);
  EXPECT_EQ(kind_of([] { set_of({1.5}).validate(); }), ErrorKind::kInvalidInput);
}

TEST(Analyze, RowsAndCsv) {
  Rng rng(6);
  AnalysisInput in;
  for (std::size_t l = 0; l < 2; ++l) {
    SimilaritySampleSet s;
    s.layer = l;
    for (int i = 0; i < 64; ++i) s.samples.push_back(std::tanh(0.3 * rng.normal()));
    in.layers.push_back(s);
  }
  in.m1 = in.m2 = 8;
  in.thresholds = {0.5, 0.9};
  const auto rows = analyze(in);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    const Moments m = layer_moments(in.layers[r.layer]);
    EXPECT_DOUBLE_EQ(r.lambda_gauss, poisson_rate_gaussian(64, m.mu, m.sigma, r.u));
    EXPECT_DOUBLE_EQ(r.p_no_fusion, std::exp(-r.lambda_gauss));
  }
  std::ostringstream csv;
  write_analysis_csv(csv, rows);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "layer,u,lambda_evt,lambda_gauss,cr_predicted,p_no_fusion");
}

}  // namespace
}  // namespace kvfuse
