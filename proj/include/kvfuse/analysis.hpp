// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kvfuse/samples.hpp"

namespace kvfuse {

// Standard normal distribution. The CDF and upper tail go through
// std::erfc, which keeps relative accuracy deep into the tails.
double normal_pdf(double x);
double normal_cdf(double x);
/// 1 - normal_cdf(x), without cancellation for large positive x.
double normal_sf(double x);
/// Inverse CDF for p in (0, 1): rational initial guess refined by Halley steps.
double normal_quantile(double p);

struct KdeModel {
  SimilaritySampleSet samples;
  double h = 0.1;  // Gaussian kernel standard deviation
};

/// f_h(x) = 1/(n h) sum phi((x - x_i) / h)
double kde_density(const KdeModel& model, double x);
/// F_h(x) = 1/n sum Phi((x - x_i) / h)
double kde_cdf(const KdeModel& model, double x);

/// Gaussian extreme-value normalizing constants (natural logs):
///   a_n = (2 log n)^(-1/2)
///   b_n = (2 log n)^(1/2) - (1/2)(2 log n)^(-1/2) (log log n + log 4 pi)
struct EvtConstants {
  double a_n = 0.0;
  double b_n = 0.0;
};
/// Throws kDomain for n < 3.
EvtConstants evt_constants(std::size_t n);

struct EvtRate {
  double lambda = 0.0;
  /// False when u < max_i x_i, i.e. outside the high-threshold regime the
  /// asymptotic rate assumes. Reported, not enforced.
  bool asymptotic = true;
  /// Range over kernels of 1 - Phi((u - x_i) / h); for the Poisson limit
  /// each should be on the order of 1/n.
  double min_kernel_tail = 0.0;
  double max_kernel_tail = 0.0;
};

/// Lambda(u) = 1/n sum exp(-(u - (h b_n + x_i)) / (h a_n))
EvtRate poisson_rate_evt(const SimilaritySampleSet& samples, double h, double u);

/// Lambda(u) = n (1 - Phi((u - mu) / sigma)). Throws kDomain for sigma <= 0.
double poisson_rate_gaussian(std::size_t n, double mu, double sigma, double u);

struct Moments {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
};
/// Throws kInsufficientData for fewer than two samples.
Moments layer_moments(const SimilaritySampleSet& samples);

enum class RateMethod { kKdeEvt, kGaussian };
std::string_view to_string(RateMethod method);

struct LayerRate {
  std::size_t layer = 0;
  double u = 0.0;
  double lambda = 0.0;
  RateMethod method = RateMethod::kGaussian;
};

/// L (m1 + m2) / (L (m1 + m2) - sum_l Lambda_l). rates.size() must equal L.
/// Throws kDivergence when the summed rate reaches the block count.
double predicted_compression_ratio(std::size_t layers, std::size_t m1, std::size_t m2,
                                   std::span<const LayerRate> rates);

/// exp(-Lambda). Throws kDomain for negative rates.
double prob_no_fusion(const LayerRate& rate);

/// h = 1.06 sigma n^(-1/5). Throws kInsufficientData for n < 2 and kDomain
/// when sigma == 0.
double silverman_bandwidth(const SimilaritySampleSet& samples);

/// One (layer, u) row of a rate-distortion analysis.
struct AnalysisRow {
  std::size_t layer = 0;
  double u = 0.0;
  double lambda_evt = 0.0;
  double lambda_gauss = 0.0;
  std::optional<double> cr_predicted;  // empty when the prediction diverges
  double p_no_fusion = 1.0;            // from lambda_gauss
  bool asymptotic = true;
  double min_kernel_tail = 0.0;
  double max_kernel_tail = 0.0;
};

struct AnalysisInput {
  std::vector<SimilaritySampleSet> layers;  // pair similarities, one set per layer
  std::size_t m1 = 0;
  std::size_t m2 = 0;
  std::vector<double> thresholds;
  std::optional<double> bandwidth;  // Silverman per layer when unset
};

/// Evaluates both rate models for every layer and threshold; the predicted
/// compression ratio of each threshold uses the Gaussian per-layer rates.
std::vector<AnalysisRow> analyze(const AnalysisInput& input);

void write_analysis_csv(std::ostream& out, std::span<const AnalysisRow> rows);
nlohmann::json to_json(std::span<const AnalysisRow> rows);

}  // namespace kvfuse
