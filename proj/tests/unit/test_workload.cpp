// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "kvfuse/error.hpp"
#include "kvfuse/fusion.hpp"
#include "kvfuse/kvff.hpp"
#include "kvfuse/rng.hpp"
#include "kvfuse/unfold.hpp"
#include "kvfuse/workload.hpp"
#include "support/fusion_oracle.hpp"

namespace kvfuse {
namespace {

std::string bytes_of(const PagedKvCache& cache) {
  std::ostringstream out;
  write_kvff(out, cache);
  return out.str();
}

TEST(Rng, FixedStreams) {
  // mt19937_64 reference output for the default seed.
  std::mt19937_64 ref(5489u);
  Rng rng(5489u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(rng.bits(), ref());
  std::mt19937_64 first(5489u);
  for (int i = 0; i < 9999; ++i) first();
  EXPECT_EQ(first(), 9981545732273789042ULL);

  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  EXPECT_NE(Rng::derive(1, 0), Rng::derive(1, 1));
  EXPECT_EQ(Rng::derive(1, 7), Rng::derive(1, 7));
}

TEST(Rng, NormalMoments) {
  Rng rng(10);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, BelowIsUnbiased) {
  Rng rng(11);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 30000; ++i) ++counts[rng.below(3)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Calibration, Examples) {
  EXPECT_EQ(calibrate_noise(64, 1.0), 0.0);
  const double s = calibrate_noise(64, 0.9);
  EXPECT_NEAR(expected_cosine(64, s), 0.9, 1e-6);
  // First-order estimate: E[cos] ~ 1 / sqrt(1 + s^2 (r - 1)).
  EXPECT_NEAR(s, std::sqrt((1.0 / 0.81 - 1.0) / 63.0), 0.01);
  EXPECT_GT(calibrate_noise(64, 0.8), calibrate_noise(64, 0.9));
  EXPECT_GT(calibrate_noise(16, 0.9), calibrate_noise(16, 0.95));
  EXPECT_THROW(calibrate_noise(1, 0.9), Error);
  EXPECT_THROW(calibrate_noise(8, 0.0), Error);
}

TEST(Generate, Determinism) {
  const SyntheticSpec spec = named_fixture("tight4");
  EXPECT_EQ(bytes_of(generate(spec)), bytes_of(generate(spec)));
  SyntheticSpec other = spec;
  other.seed += 1;
  EXPECT_NE(bytes_of(generate(spec)), bytes_of(generate(other)));
}

TEST(Generate, ClustersOneCollapses) {
  const PagedKvCache cache = generate(named_fixture("redundant"));
  FusionConfig c;
  for (double thr : {-0.5, 0.5, 0.99}) {
    c.threshold = thr;
    for (const auto& r : fuse_batch(cache, c).reports()) EXPECT_EQ(r.blocks_after, 1u);
  }
}

TEST(Generate, OrthogonalHasNoRedundancy) {
  const PagedKvCache cache = generate(named_fixture("orthogonal"));
  FusionConfig c;
  c.threshold = 0.01;
  EXPECT_DOUBLE_EQ(fuse_batch(cache, c).compression_ratio(), 1.0);
}

// Mean cosine to the cluster base direction, estimated from same-cluster pairs
// as E[cos(a,b)] = c^2 for independent isotropic noise.
TEST(Generate, ClusterGeometry) {
  SyntheticSpec spec;
  spec.dims = {1, 16, 16, 4, 2, 8};
  spec.clusters = 4;
  spec.intra_cluster_similarity = 0.9;
  spec.seed = 21;
  const PagedKvCache cache = generate(spec);
  const auto assign = cluster_assignment(spec);
  const UnfoldedLayer keys = unfold_bff(cache, 0).keys;
  double same = 0, cross = 0;
  std::size_t ns = 0, nc = 0;
  for (std::size_t a = 0; a < keys.slot_count(); ++a) {
    for (std::size_t b = a + 1; b < keys.slot_count(); ++b) {
      const double c = cosine_similarity(keys.direction(a), keys.direction(b));
      if (assign[a] == assign[b]) {
        same += c;
        ++ns;
      } else {
        cross += c;
        ++nc;
      }
    }
  }
  EXPECT_NEAR(std::sqrt(same / ns), 0.9, 0.02);
  EXPECT_LT(std::abs(cross / nc), 0.2);
}

TEST(Generate, PrefixBlocksAreBitIdentical) {
  const SyntheticSpec spec = named_fixture("prefix");
  const PagedKvCache cache = generate(spec);
  for (std::size_t l = 0; l < spec.dims.layers; ++l) {
    for (std::size_t b = 1; b < spec.dims.requests; ++b) {
      for (std::size_t j = 0; j < spec.shared_prefix_blocks; ++j) {
        auto a = cache.key_block(l, 0, j), c = cache.key_block(l, b, j);
        EXPECT_TRUE(std::equal(a.begin(), a.end(), c.begin()));
        auto va = cache.value_block(l, 0, j), vc = cache.value_block(l, b, j);
        EXPECT_TRUE(std::equal(va.begin(), va.end(), vc.begin()));
      }
    }
  }
}

TEST(Generate, ZipfSkewsAssignment) {
  SyntheticSpec spec;
  spec.dims = {1, 32, 32, 1, 1, 8};
  spec.clusters = 4;
  spec.assignment = Assignment::kZipf;
  spec.zipf_exponent = 2.0;
  spec.seed = 3;
  std::map<std::size_t, int> counts;
  for (auto c : cluster_assignment(spec)) ++counts[c];
  EXPECT_GT(counts[0], counts[1]);
  EXPECT_GT(counts[1], counts[3]);
}

TEST(Generate, Tight4MatchesOracle) {
  const PagedKvCache cache = generate(named_fixture("tight4"));
  FusionConfig c;
  const auto reports = fuse_batch(cache, c).reports();
  for (std::size_t l = 0; l < reports.size(); ++l) {
    const auto oracle = testing::replay_fusion(testing::layer_key_blocks(cache, l),
                                               std::vector<std::size_t>(8, 4), 0.9);
    EXPECT_EQ(reports[l].blocks_after, oracle.blocks_after);
    EXPECT_GE(reports[l].blocks_after, 4u);
  }
}

TEST(Spec, JsonRoundTrip) {
  for (const auto& name : fixture_names()) {
    const SyntheticSpec s = named_fixture(name);
    EXPECT_EQ(spec_from_json(to_json(s)), s) << name;
  }
  EXPECT_THROW(spec_from_json(nlohmann::json{{"clusters", "x"}}), Error);
  EXPECT_THROW(named_fixture("nope"), Error);
}

TEST(Spec, Validation) {
  SyntheticSpec s;
  s.dims = {1, 1, 1, 1, 1, 4};
  s.intra_cluster_similarity = 0.0;
  EXPECT_THROW(s.validate(), Error);
  s.intra_cluster_similarity = 0.5;
  s.shared_prefix_blocks = 2;
  EXPECT_THROW(s.validate(), Error);
  EXPECT_EQ(parse_assignment("cyclic"), Assignment::kCyclic);
  EXPECT_THROW(parse_assignment("random"), Error);
}

}  // namespace
}  // namespace kvfuse
