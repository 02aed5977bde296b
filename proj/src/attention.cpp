// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvfuse/error.hpp"
#include "kvfuse/rng.hpp"

namespace kvfuse {

SoftmaxDistribution softmax(std::span<const double> logits) {
  require(!logits.empty(), ErrorKind::kInvalidInput, "softmax of an empty logit vector");
  double peak = logits[0];
  for (double z : logits) {
    require(std::isfinite(z), ErrorKind::kInvalidInput, "non-finite logit");
    peak = std::max(peak, z);
  }
  SoftmaxDistribution out;
  out.s.resize(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.s[i] = std::exp(logits[i] - peak);
    total += out.s[i];
  }
  for (double& p : out.s) p /= total;
  return out;
}

AttentionResult paged_attention(const AttentionQuery& query, const LayerView& view) {
  const BlockShape& shape = view.shape();
  require(query.layer == view.layer(), ErrorKind::kInvalidInput,
          "query targets layer " + std::to_string(query.layer) + " but the view holds layer " +
              std::to_string(view.layer()));
  require(query.head < shape.heads, ErrorKind::kInvalidInput, "head index out of range");
  require(query.q.size() == shape.head_dim, ErrorKind::kInvalidInput,
          "query length must equal the head dimension");
  for (double x : query.q) require(std::isfinite(x), ErrorKind::kInvalidInput, "non-finite query");

  const auto rows = view.rows_of_request(query.request);
  const std::size_t d = shape.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> key(shape.r()), value(shape.r());
  std::vector<double> values;  // token values of the attended head, row-major
  AttentionResult result;
  for (std::size_t row : rows) {
    for (std::size_t b = 0; b < view.blocks_in_row(row); ++b) {
      const std::size_t slot = view.slot(row, b);
      view.key_block(slot, key);
      view.value_block(slot, value);
      for (std::size_t t = 0; t < shape.tokens; ++t) {
        const std::size_t at = shape.offset(t, query.head);
        double z = 0.0;
        for (std::size_t e = 0; e < d; ++e) z += query.q[e] * key[at + e];
        result.logits.push_back(z * scale);
        values.insert(values.end(), value.begin() + at, value.begin() + at + d);
      }
    }
  }
  require(!result.logits.empty(), ErrorKind::kInvalidInput,
          "request " + std::to_string(query.request) + " has no cached tokens");
  result.distribution = softmax(result.logits);
  result.output.assign(d, 0.0);
  for (std::size_t t = 0; t < result.logits.size(); ++t) {
    const double w = result.distribution.s[t];
    for (std::size_t e = 0; e < d; ++e) result.output[e] += w * values[t * d + e];
  }
  return result;
}

double attention_drift(const SoftmaxDistribution& s, const SoftmaxDistribution& s_prime) {
  require(s.s.size() == s_prime.s.size(), ErrorKind::kInvalidInput,
          "drift between distributions of length " + std::to_string(s.s.size()) + " and " +
              std::to_string(s_prime.s.size()));
  double l1 = 0.0;
  for (std::size_t i = 0; i < s.s.size(); ++i) l1 += std::abs(s_prime.s[i] - s.s[i]);
  return l1;
}

DriftBound drift_bound(std::span<const double> q, std::span<const double> key_norms, double u,
                       std::size_t d) {
  require(u <= 1.0, ErrorKind::kDomain, "similarity threshold above 1");
  require(d >= 1, ErrorKind::kDomain, "dimension must be positive");
  double max_norm = 0.0;
  for (double n : key_norms) {
    require(n >= 0.0, ErrorKind::kDomain, "negative key norm");
    max_norm = std::max(max_norm, n);
  }
  double q_sq = 0.0;
  for (double x : q) q_sq += x * x;
  DriftBound b;
  b.epsilon = max_norm * std::sqrt(q_sq) / std::sqrt(static_cast<double>(d)) * std::sqrt(2.0 * (1.0 - u));
  b.loose_bound = 2.0 * b.epsilon;
  b.exact_bound = std::expm1(2.0 * b.epsilon);
  return b;
}

namespace {

void gaussian(Rng& rng, std::span<double> v) {
  for (double& x : v) x = rng.normal();
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

DriftTrial run_drift_trial(const DriftTrialConfig& config, std::uint64_t trial_seed) {
  const std::size_t d = config.dim;
  Rng rng(trial_seed);
  std::vector<double> q(d), unit(d), ortho(d), rotated(d);
  gaussian(rng, q);

  const double cos_t = config.u;
  const double sin_t = std::sqrt(std::max(0.0, 1.0 - config.u * config.u));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> norms(config.tokens), z(config.tokens), z_prime(config.tokens);
  for (std::size_t t = 0; t < config.tokens; ++t) {
    norms[t] = rng.lognormal(0.0, config.key_norm_sigma);
    gaussian(rng, unit);
    const double n = norm2(unit);
    for (double& x : unit) x /= n;
    // random direction orthogonal to the key
    gaussian(rng, ortho);
    double proj = 0.0;
    for (std::size_t e = 0; e < d; ++e) proj += ortho[e] * unit[e];
    for (std::size_t e = 0; e < d; ++e) ortho[e] -= proj * unit[e];
    const double on = norm2(ortho);
    for (double& x : ortho) x /= on;
    for (std::size_t e = 0; e < d; ++e) rotated[e] = cos_t * unit[e] + sin_t * ortho[e];

    double zk = 0.0, zr = 0.0;
    for (std::size_t e = 0; e < d; ++e) {
      zk += q[e] * unit[e];
      zr += q[e] * rotated[e];
    }
    z[t] = norms[t] * zk * scale;
    z_prime[t] = norms[t] * zr * scale;
  }
  DriftTrial trial;
  trial.drift = attention_drift(softmax(z), softmax(z_prime));
  trial.bound = drift_bound(q, norms, config.u, d);
  return trial;
}

DriftVerification verify_drift_bound(const DriftTrialConfig& config) {
  require(config.trials >= 1, ErrorKind::kConfig, "at least one trial required");
  require(config.dim >= 2, ErrorKind::kConfig, "dimension must be at least 2");
  require(config.tokens >= 1, ErrorKind::kConfig, "at least one token required");
  require(config.u >= -1.0 && config.u <= 1.0, ErrorKind::kConfig, "u must lie in [-1, 1]");
  DriftVerification out;
  out.trials = config.trials;
  out.u = config.u;
  out.d = config.dim;
  out.tokens = config.tokens;
  for (std::size_t i = 0; i < config.trials; ++i) {
    const std::uint64_t seed = Rng::derive(config.seed, i);
    const DriftTrial trial = run_drift_trial(config, seed);
    const double eps = trial.bound.epsilon;
    out.max_drift = std::max(out.max_drift, trial.drift);
    if (trial.bound.exact_bound > 0.0) {
      out.max_ratio = std::max(out.max_ratio, trial.drift / trial.bound.exact_bound);
    }
    bool violated = trial.drift > trial.bound.exact_bound;
    if (violated) ++out.violations;
    if (eps <= 0.5) {
      ++out.envelope_checked;
      if (trial.drift > 2.0 * eps + 2.0 * eps * eps) {
        ++out.envelope_violations;
        violated = true;
      }
    }
    if (violated && !out.first_violation_seed) out.first_violation_seed = seed;
  }
  return out;
}

nlohmann::json DriftVerification::to_json() const {
  nlohmann::json j{{"trials", trials},
                   {"u", u},
                   {"d", d},
                   {"tokens", tokens},
                   {"max_ratio", max_ratio},
                   {"max_drift", max_drift},
                   {"violations", violations},
                   {"envelope_checked", envelope_checked},
                   {"envelope_violations", envelope_violations}};
  if (first_violation_seed) j["first_violation_seed"] = *first_violation_seed;
  return j;
}

}  // namespace kvfuse
