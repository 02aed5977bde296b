// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvfuse/workload.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvfuse/error.hpp"
#include "kvfuse/rng.hpp"

namespace kvfuse {

std::string_view to_string(Assignment assignment) {
  switch (assignment) {
    case Assignment::kUniform: return "uniform";
    case Assignment::kZipf: return "zipf";
    case Assignment::kCyclic: return "cyclic";
  }
  return "unknown";
}

Assignment parse_assignment(std::string_view text) {
  if (text == "uniform") return Assignment::kUniform;
  if (text == "zipf") return Assignment::kZipf;
  if (text == "cyclic") return Assignment::kCyclic;
  fail(ErrorKind::kConfig, "unknown cluster assignment '" + std::string(text) + "'");
}

void SyntheticSpec::validate() const {
  dims.validate();
  require(clusters >= 1, ErrorKind::kConfig, "at least one cluster required");
  require(intra_cluster_similarity > 0.0 && intra_cluster_similarity <= 1.0, ErrorKind::kConfig,
          "intra-cluster similarity must lie in (0, 1]");
  require(dims.r() >= 2, ErrorKind::kConfig, "blocks need r >= 2 for angular noise");
  require(assignment != Assignment::kZipf || zipf_exponent > 0.0, ErrorKind::kConfig,
          "zipf exponent must be positive");
  require(norm_log_sigma >= 0.0 && std::isfinite(norm_log_mean), ErrorKind::kConfig,
          "invalid lognormal norm parameters");
  require(shared_prefix_blocks <= dims.blocks, ErrorKind::kConfig,
          "shared prefix longer than a request");
}

nlohmann::json to_json(const SyntheticSpec& spec) {
  const CacheDims& d = spec.dims;
  return {{"dims",
           {{"layers", d.layers},
            {"requests", d.requests},
            {"blocks", d.blocks},
            {"tokens", d.tokens},
            {"heads", d.heads},
            {"head_dim", d.head_dim}}},
          {"clusters", spec.clusters},
          {"intra_cluster_similarity", spec.intra_cluster_similarity},
          {"assignment", std::string(to_string(spec.assignment))},
          {"zipf_exponent", spec.zipf_exponent},
          {"norm_log_mean", spec.norm_log_mean},
          {"norm_log_sigma", spec.norm_log_sigma},
          {"shared_prefix_blocks", spec.shared_prefix_blocks},
          {"seed", spec.seed}};
}

SyntheticSpec spec_from_json(const nlohmann::json& j) {
  SyntheticSpec spec;
  try {
    const auto& d = j.at("dims");
    spec.dims = {d.at("layers").get<std::size_t>(), d.at("requests").get<std::size_t>(),
                 d.at("blocks").get<std::size_t>(), d.at("tokens").get<std::size_t>(),
                 d.at("heads").get<std::size_t>(),  d.at("head_dim").get<std::size_t>()};
    spec.clusters = j.value("clusters", spec.clusters);
    spec.intra_cluster_similarity = j.value("intra_cluster_similarity", spec.intra_cluster_similarity);
    spec.assignment = parse_assignment(j.value("assignment", std::string("uniform")));
    spec.zipf_exponent = j.value("zipf_exponent", spec.zipf_exponent);
    spec.norm_log_mean = j.value("norm_log_mean", spec.norm_log_mean);
    spec.norm_log_sigma = j.value("norm_log_sigma", spec.norm_log_sigma);
    spec.shared_prefix_blocks = j.value("shared_prefix_blocks", spec.shared_prefix_blocks);
    spec.seed = j.value("seed", spec.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("bad synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

namespace {

// Squared norms of `draws` Gaussian vectors in the (r - 1)-dim complement.
std::vector<double> complement_norms(std::size_t r, std::uint64_t seed, std::size_t draws) {
  Rng rng(seed);
  std::vector<double> q(draws);
  for (auto& v : q) {
    double s = 0.0;
    for (std::size_t e = 0; e + 1 < r; ++e) {
      const double z = rng.normal();
      s += z * z;
    }
    v = s;
  }
  return q;
}

double mean_cosine(const std::vector<double>& q, double scale) {
  double total = 0.0;
  for (double v : q) total += 1.0 / std::sqrt(1.0 + scale * scale * v);
  return total / static_cast<double>(q.size());
}

}  // namespace

double expected_cosine(std::size_t r, double noise_scale, std::uint64_t seed, std::size_t draws) {
  require(r >= 2, ErrorKind::kConfig, "angular noise needs r >= 2");
  require(draws >= 1, ErrorKind::kConfig, "at least one draw required");
  return mean_cosine(complement_norms(r, seed, draws), noise_scale);
}

double calibrate_noise(std::size_t r, double target_cosine, std::uint64_t seed, std::size_t draws) {
  require(r >= 2, ErrorKind::kConfig, "angular noise needs r >= 2");
  require(target_cosine > 0.0 && target_cosine <= 1.0, ErrorKind::kConfig,
          "target cosine " + std::to_string(target_cosine) + " unattainable");
  if (target_cosine == 1.0) return 0.0;
  const std::vector<double> q = complement_norms(r, seed, draws);
  double lo = 0.0, hi = 1.0;
  while (mean_cosine(q, hi) > target_cosine) {
    hi *= 2.0;
    require(hi < 1e12, ErrorKind::kConfig, "target cosine unattainable");
  }
  for (int iter = 0; iter < 200 && hi - lo > 1e-14 * hi; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (mean_cosine(q, mid) > target_cosine ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<std::size_t> cluster_assignment(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.dims.blocks_per_layer();
  std::vector<std::size_t> out(n);
  Rng rng(Rng::derive(spec.seed, 0));
  std::vector<double> cdf;
  if (spec.assignment == Assignment::kZipf) {
    double total = 0.0;
    for (std::size_t c = 0; c < spec.clusters; ++c) {
      total += std::pow(static_cast<double>(c + 1), -spec.zipf_exponent);
      cdf.push_back(total);
    }
    for (double& v : cdf) v /= total;
  }
  for (std::size_t i = 0; i < n; ++i) {
    switch (spec.assignment) {
      case Assignment::kUniform: out[i] = rng.below(spec.clusters); break;
      case Assignment::kCyclic: out[i] = i % spec.clusters; break;
      case Assignment::kZipf: {
        const double u = rng.uniform();
        const auto it = std::ranges::upper_bound(cdf, u);
        out[i] = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), spec.clusters - 1);
        break;
      }
    }
  }
  // prefix copies inherit the cluster of request 0
  for (std::size_t b = 1; b < spec.dims.requests; ++b) {
    for (std::size_t j = 0; j < spec.shared_prefix_blocks; ++j) {
      out[b * spec.dims.blocks + j] = out[j];
    }
  }
  return out;
}

namespace {

void normalize(std::span<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  for (double& x : v) x /= n;
}

// clusters x r unit directions, orthonormal when clusters <= r.
std::vector<double> base_directions(Rng& rng, std::size_t clusters, std::size_t r) {
  std::vector<double> bases(clusters * r);
  const bool orthogonalize = clusters <= r;
  for (std::size_t c = 0; c < clusters; ++c) {
    std::span<double> v(bases.data() + c * r, r);
    for (;;) {
      for (double& x : v) x = rng.normal();
      if (orthogonalize) {
        // two Gram-Schmidt passes for numerical orthogonality
        for (int pass = 0; pass < 2; ++pass) {
          for (std::size_t k = 0; k < c; ++k) {
            std::span<const double> w(bases.data() + k * r, r);
            double proj = 0.0;
            for (std::size_t e = 0; e < r; ++e) proj += v[e] * w[e];
            for (std::size_t e = 0; e < r; ++e) v[e] -= proj * w[e];
          }
        }
      }
      double s = 0.0;
      for (double x : v) s += x * x;
      if (s > 1e-20) break;
    }
    normalize(v);
  }
  return bases;
}

void noisy_block(Rng& rng, std::span<const double> base, double scale, double norm,
                 std::span<double> scratch, std::span<float> out) {
  const std::size_t r = base.size();
  if (scale > 0.0) {
    double proj = 0.0;
    for (std::size_t e = 0; e < r; ++e) {
      scratch[e] = rng.normal();
      proj += scratch[e] * base[e];
    }
    for (std::size_t e = 0; e < r; ++e) scratch[e] = base[e] + scale * (scratch[e] - proj * base[e]);
    normalize(scratch);
  } else {
    std::ranges::copy(base, scratch.begin());
  }
  for (std::size_t e = 0; e < r; ++e) out[e] = static_cast<float>(norm * scratch[e]);
}

}  // namespace

PagedKvCache generate(const SyntheticSpec& spec) {
  spec.validate();
  const CacheDims& dims = spec.dims;
  const std::size_t r = dims.r();
  const double scale = calibrate_noise(r, spec.intra_cluster_similarity);
  const std::vector<std::size_t> assignment = cluster_assignment(spec);

  std::vector<float> keys(dims.elements());
  std::vector<float> values(dims.elements());
  std::vector<double> scratch(r);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < dims.layers; ++l) {
    Rng base_rng(Rng::derive(spec.seed, 1 + 3 * l));
    const std::vector<double> key_bases = base_directions(base_rng, spec.clusters, r);
    const std::vector<double> value_bases = base_directions(base_rng, spec.clusters, r);
    Rng key_rng(Rng::derive(spec.seed, 2 + 3 * l));
    Rng value_rng(Rng::derive(spec.seed, 3 + 3 * l));
    for (std::size_t b = 0; b < dims.requests; ++b) {
      for (std::size_t j = 0; j < dims.blocks; ++j, offset += r) {
        const std::size_t c = assignment[b * dims.blocks + j];
        const std::span<const double> kb(key_bases.data() + c * r, r);
        const std::span<const double> vb(value_bases.data() + c * r, r);
        const double key_norm = key_rng.lognormal(spec.norm_log_mean, spec.norm_log_sigma);
        const double value_norm = value_rng.lognormal(spec.norm_log_mean, spec.norm_log_sigma);
        noisy_block(key_rng, kb, scale, key_norm, scratch, std::span<float>(keys).subspan(offset, r));
        noisy_block(value_rng, vb, scale, value_norm, scratch, std::span<float>(values).subspan(offset, r));
        if (b > 0 && j < spec.shared_prefix_blocks) {
          const std::size_t src = offset - b * dims.blocks * r;
          std::copy_n(keys.begin() + src, r, keys.begin() + offset);
          std::copy_n(values.begin() + src, r, values.begin() + offset);
        }
      }
    }
  }
  return PagedKvCache(dims, std::move(keys), std::move(values));
}

std::vector<std::string> fixture_names() {
  return {"redundant", "orthogonal", "tight4", "clusters4", "cff", "prefix"};
}

SyntheticSpec named_fixture(std::string_view name) {
  SyntheticSpec s;
  if (name == "redundant") {
    // one direction and one block per request: each layer collapses to a single block
    s.dims = {2, 8, 1, 4, 2, 8};
    s.clusters = 1;
    s.intra_cluster_similarity = 1.0;
    s.seed = 1;
  } else if (name == "orthogonal") {
    // every block its own orthogonal direction: nothing fuses at thr > 0
    s.dims = {2, 4, 4, 4, 2, 8};
    s.clusters = 16;
    s.assignment = Assignment::kCyclic;
    s.intra_cluster_similarity = 1.0;
    s.seed = 2;
  } else if (name == "tight4") {
    s.dims = {2, 8, 4, 4, 2, 8};
    s.clusters = 4;
    s.intra_cluster_similarity = 0.97;
    s.seed = 3;
  } else if (name == "clusters4") {
    s.dims = {4, 16, 32, 4, 1, 4};
    s.clusters = 4;
    s.intra_cluster_similarity = 0.55;
    s.seed = 4;
  } else if (name == "cff") {
    s.dims = {2, 1, 8, 16, 1, 8};
    s.clusters = 4;
    s.intra_cluster_similarity = 0.95;
    s.seed = 5;
  } else if (name == "prefix") {
    s.dims = {2, 8, 8, 4, 2, 16};
    s.clusters = 64;
    s.assignment = Assignment::kCyclic;
    s.intra_cluster_similarity = 1.0;
    s.shared_prefix_blocks = 3;
    s.seed = 6;
  } else {
    fail(ErrorKind::kConfig, "unknown fixture '" + std::string(name) + "'");
  }
  return s;
}

}  // namespace kvfuse
