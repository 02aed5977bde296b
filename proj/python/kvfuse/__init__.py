# Copyright 2026 The kvfuse Authors
# SPDX-License-Identifier: Apache-2.0
"""Paged KV-cache block fusion and rate analysis."""

import json

from ._core import (
    CacheDims,
    KvfuseError,
    PagedKvCache,
    drift_bound,
    fixture_names,
    generate_fixture,
    kde_cdf,
    kde_density,
    load_cache,
    poisson_rate_evt,
    poisson_rate_gaussian,
    predicted_compression_ratio,
    prob_no_fusion,
    save_cache,
    silverman_bandwidth,
)
from . import _core

__all__ = [
    "CacheDims",
    "KvfuseError",
    "PagedKvCache",
    "drift_bound",
    "fixture_names",
    "fixture_spec",
    "fuse",
    "generate",
    "generate_fixture",
    "kde_cdf",
    "kde_density",
    "load_cache",
    "poisson_rate_evt",
    "poisson_rate_gaussian",
    "predicted_compression_ratio",
    "prob_no_fusion",
    "save_cache",
    "silverman_bandwidth",
    "sweep",
    "verify_drift_bound",
]


def generate(spec):
    """Generate a synthetic cache from a spec dict (same keys as the JSON spec files)."""
    return _core.generate(json.dumps(spec))


def fixture_spec(name):
    return json.loads(_core.fixture_spec(name))


def fuse(cache, threshold=0.9, variant="bff", chunk_tokens=0, group_size=None, samples=False, threads=0):
    """Fuse every layer; returns the report dict with per-layer reports and block tables."""
    return json.loads(_core.fuse_json(cache, threshold, variant, chunk_tokens, group_size, samples, threads))


def sweep(cache, thresholds, variant="bff", chunk_tokens=0, group_size=None, queries=32, seed=0):
    return json.loads(_core.sweep_json(cache, list(thresholds), variant, chunk_tokens, group_size, queries, seed))


def verify_drift_bound(trials=1000, d=16, u=0.95, tokens=32, seed=0):
    return json.loads(_core.verify_drift_bound_json(trials, d, u, tokens, seed))
