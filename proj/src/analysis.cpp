// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>

#include "kvfuse/error.hpp"
#include "kvfuse/report_io.hpp"

namespace kvfuse {

std::string_view to_string(SampleSource source) {
  switch (source) {
    case SampleSource::kBatch: return "bff";
    case SampleSource::kChunks: return "cff";
    case SampleSource::kSynthetic: return "synthetic";
  }
  return "unknown";
}

void SimilaritySampleSet::validate() const {
  require(!samples.empty(), ErrorKind::kInsufficientData, "empty similarity sample set");
  for (double x : samples) {
    require(x >= -1.0 && x <= 1.0, ErrorKind::kInvalidInput,
            "similarity sample " + format_double(x) + " outside [-1, 1]");
  }
}

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, ErrorKind::kDomain, "normal quantile needs p in (0, 1)");
  // Acklam's rational approximation (relative error ~1e-9) as a starting point.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement; the residual is taken on the smaller tail.
  for (int iter = 0; iter < 3; ++iter) {
    const double e = (x <= 0.0) ? normal_cdf(x) - p : (1.0 - p) - normal_sf(x);
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

namespace {

void check_bandwidth(double h) {
  require(h > 0.0 && std::isfinite(h), ErrorKind::kDomain, "bandwidth must be positive");
}

}  // namespace

double kde_density(const KdeModel& model, double x) {
  check_bandwidth(model.h);
  const auto& s = model.samples.samples;
  require(!s.empty(), ErrorKind::kInsufficientData, "density of an empty sample set");
  double total = 0.0;
  for (double xi : s) total += normal_pdf((x - xi) / model.h);
  return total / (static_cast<double>(s.size()) * model.h);
}

double kde_cdf(const KdeModel& model, double x) {
  check_bandwidth(model.h);
  const auto& s = model.samples.samples;
  require(!s.empty(), ErrorKind::kInsufficientData, "CDF of an empty sample set");
  double total = 0.0;
  for (double xi : s) total += normal_cdf((x - xi) / model.h);
  return std::clamp(total / static_cast<double>(s.size()), 0.0, 1.0);
}

EvtConstants evt_constants(std::size_t n) {
  require(n >= 3, ErrorKind::kDomain,
          "extreme-value constants need n >= 3, got " + std::to_string(n));
  const double two_log_n = 2.0 * std::log(static_cast<double>(n));
  const double root = std::sqrt(two_log_n);
  EvtConstants c;
  c.a_n = 1.0 / root;
  c.b_n = root - 0.5 / root * (std::log(std::log(static_cast<double>(n))) + std::log(4.0 * std::numbers::pi));
  return c;
}

EvtRate poisson_rate_evt(const SimilaritySampleSet& samples, double h, double u) {
  check_bandwidth(h);
  samples.validate();
  const auto& xs = samples.samples;
  const EvtConstants c = evt_constants(xs.size());
  EvtRate rate;
  rate.min_kernel_tail = 1.0;
  double total = 0.0;
  double top = -1.0;
  for (double xi : xs) {
    total += std::exp(-(u - (h * c.b_n + xi)) / (h * c.a_n));
    top = std::max(top, xi);
    const double tail = normal_sf((u - xi) / h);
    rate.min_kernel_tail = std::min(rate.min_kernel_tail, tail);
    rate.max_kernel_tail = std::max(rate.max_kernel_tail, tail);
  }
  rate.lambda = total / static_cast<double>(xs.size());
  rate.asymptotic = u >= top;
  return rate;
}

double poisson_rate_gaussian(std::size_t n, double mu, double sigma, double u) {
  require(sigma > 0.0, ErrorKind::kDomain, "Gaussian rate needs sigma > 0");
  return static_cast<double>(n) * normal_sf((u - mu) / sigma);
}

Moments layer_moments(const SimilaritySampleSet& samples) {
  const auto& xs = samples.samples;
  require(xs.size() >= 2, ErrorKind::kInsufficientData, "moments need at least two samples");
  const double n = static_cast<double>(xs.size());
  double sum = 0.0;
  for (double x : xs) sum += x;
  Moments m;
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) {
    m.mu = xs.front();
    return m;
  }
  m.mu = sum / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mu) * (x - m.mu);
  m.sigma = std::sqrt(ss / n);
  return m;
}

std::string_view to_string(RateMethod method) {
  return method == RateMethod::kKdeEvt ? "kde-evt" : "gaussian";
}

double predicted_compression_ratio(std::size_t layers, std::size_t m1, std::size_t m2,
                                   std::span<const LayerRate> rates) {
  require(rates.size() == layers, ErrorKind::kInvalidInput,
          "expected " + std::to_string(layers) + " layer rates, got " + std::to_string(rates.size()));
  const double total = static_cast<double>(layers) * static_cast<double>(m1 + m2);
  require(total > 0.0, ErrorKind::kInvalidInput, "no blocks to compress");
  double fused = 0.0;
  for (const auto& r : rates) {
    require(r.lambda >= 0.0, ErrorKind::kDomain, "negative exceedance rate");
    fused += r.lambda;
  }
  require(fused < total, ErrorKind::kDivergence,
          "summed rate " + format_double(fused) + " reaches the block count " + format_double(total));
  return total / (total - fused);
}

double prob_no_fusion(const LayerRate& rate) {
  require(rate.lambda >= 0.0, ErrorKind::kDomain, "negative exceedance rate");
  return std::exp(-rate.lambda);
}

double silverman_bandwidth(const SimilaritySampleSet& samples) {
  const Moments m = layer_moments(samples);
  require(m.sigma > 0.0, ErrorKind::kDomain, "bandwidth of a zero-variance sample set");
  return 1.06 * m.sigma * std::pow(static_cast<double>(samples.size()), -0.2);
}

std::vector<AnalysisRow> analyze(const AnalysisInput& input) {
  require(!input.layers.empty(), ErrorKind::kInsufficientData, "no layers to analyze");
  require(!input.thresholds.empty(), ErrorKind::kConfig, "threshold grid is empty");
  const std::size_t layer_count = input.layers.size();
  struct LayerFit {
    Moments moments;
    double h;
  };
  std::vector<LayerFit> fits;
  for (const auto& set : input.layers) {
    set.validate();
    const Moments m = layer_moments(set);
    const double h = input.bandwidth ? *input.bandwidth : silverman_bandwidth(set);
    fits.push_back({m, h});
  }

  std::vector<AnalysisRow> rows;
  for (double u : input.thresholds) {
    std::vector<LayerRate> rates;
    std::vector<AnalysisRow> block;
    for (std::size_t l = 0; l < layer_count; ++l) {
      const auto& set = input.layers[l];
      AnalysisRow row;
      row.layer = set.layer;
      row.u = u;
      const EvtRate evt = poisson_rate_evt(set, fits[l].h, u);
      row.lambda_evt = evt.lambda;
      row.asymptotic = evt.asymptotic;
      row.min_kernel_tail = evt.min_kernel_tail;
      row.max_kernel_tail = evt.max_kernel_tail;
      row.lambda_gauss = fits[l].moments.sigma > 0.0
                             ? poisson_rate_gaussian(set.size(), fits[l].moments.mu, fits[l].moments.sigma, u)
                             : (fits[l].moments.mu > u ? static_cast<double>(set.size()) : 0.0);
      const LayerRate rate{set.layer, u, row.lambda_gauss, RateMethod::kGaussian};
      row.p_no_fusion = prob_no_fusion(rate);
      rates.push_back(rate);
      block.push_back(row);
    }
    std::optional<double> cr;
    try {
      cr = predicted_compression_ratio(layer_count, input.m1, input.m2, rates);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDivergence) throw;
    }
    for (auto& row : block) {
      row.cr_predicted = cr;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_analysis_csv(std::ostream& out, std::span<const AnalysisRow> rows) {
  out << "layer,u,lambda_evt,lambda_gauss,cr_predicted,p_no_fusion\n";
  for (const auto& r : rows) {
    out << r.layer << ',' << format_double(r.u) << ',' << format_double(r.lambda_evt) << ','
        << format_double(r.lambda_gauss) << ',' << (r.cr_predicted ? format_double(*r.cr_predicted) : "inf")
        << ',' << format_double(r.p_no_fusion) << '\n';
  }
}

nlohmann::json to_json(std::span<const AnalysisRow> rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"layer", r.layer},
                     {"u", r.u},
                     {"lambda_evt", r.lambda_evt},
                     {"lambda_gauss", r.lambda_gauss},
                     {"p_no_fusion", r.p_no_fusion},
                     {"asymptotic", r.asymptotic},
                     {"kernel_tail_range", {r.min_kernel_tail, r.max_kernel_tail}}};
    j["cr_predicted"] = r.cr_predicted ? nlohmann::json(*r.cr_predicted) : nlohmann::json("inf");
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace kvfuse
