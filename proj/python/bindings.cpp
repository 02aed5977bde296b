// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <string>
#include <vector>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "kvfuse/analysis.hpp"
#include "kvfuse/attention.hpp"
#include "kvfuse/error.hpp"
#include "kvfuse/fusion.hpp"
#include "kvfuse/kvff.hpp"
#include "kvfuse/report_io.hpp"
#include "kvfuse/sweep.hpp"
#include "kvfuse/workload.hpp"

namespace py = pybind11;
using namespace kvfuse;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::vector<py::ssize_t> shape_of(const CacheDims& d) {
  return {static_cast<py::ssize_t>(d.layers), static_cast<py::ssize_t>(d.requests),
          static_cast<py::ssize_t>(d.blocks), static_cast<py::ssize_t>(d.tokens),
          static_cast<py::ssize_t>(d.heads), static_cast<py::ssize_t>(d.head_dim)};
}

py::array_t<float> to_numpy(const CacheDims& d, std::span<const float> data) {
  py::array_t<float> out(shape_of(d));
  std::memcpy(out.mutable_data(), data.data(), data.size() * sizeof(float));
  return out;
}

PagedKvCache cache_from_numpy(const FloatArray& keys, const FloatArray& values) {
  require(keys.ndim() == 6, ErrorKind::kInvalidInput, "keys must have shape (L, B, p, t, h, d)");
  require(values.ndim() == 6, ErrorKind::kInvalidInput, "values must have shape (L, B, p, t, h, d)");
  for (py::ssize_t i = 0; i < 6; ++i) {
    require(keys.shape(i) == values.shape(i), ErrorKind::kInvalidInput, "keys and values differ in shape");
  }
  const CacheDims d{static_cast<std::size_t>(keys.shape(0)), static_cast<std::size_t>(keys.shape(1)),
                    static_cast<std::size_t>(keys.shape(2)), static_cast<std::size_t>(keys.shape(3)),
                    static_cast<std::size_t>(keys.shape(4)), static_cast<std::size_t>(keys.shape(5))};
  std::vector<float> k(keys.data(), keys.data() + keys.size());
  std::vector<float> v(values.data(), values.data() + values.size());
  return PagedKvCache(d, std::move(k), std::move(v));
}

CacheFusion fuse(const PagedKvCache& cache, double threshold, const std::string& variant,
                 std::size_t chunk_tokens, std::optional<std::size_t> group_size, unsigned threads) {
  FusionConfig c;
  c.threshold = threshold;
  c.variant = parse_variant(variant);
  c.group_size = group_size;
  return c.variant == Variant::kBatch ? fuse_batch(cache, c, threads)
                                      : fuse_chunks(cache, c, chunk_tokens, threads);
}

SimilaritySampleSet samples_of(std::vector<double> x) {
  SimilaritySampleSet s;
  s.samples = std::move(x);
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Paged KV-cache block fusion and rate analysis";

  // Library errors surface as KvfuseError with the error kind in `.kind`.
  py::exception<Error>(m, "KvfuseError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object type = py::module_::import("kvfuse._core").attr("KvfuseError");
      py::object instance = type(std::string(e.what()));
      instance.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(type.ptr(), instance.ptr());
    }
  });

  py::class_<CacheDims>(m, "CacheDims")
      .def(py::init([](std::size_t L, std::size_t B, std::size_t p, std::size_t t, std::size_t h, std::size_t d) {
             return CacheDims{L, B, p, t, h, d};
           }),
           py::arg("layers"), py::arg("requests"), py::arg("blocks"), py::arg("tokens"), py::arg("heads"),
           py::arg("head_dim"))
      .def_readwrite("layers", &CacheDims::layers)
      .def_readwrite("requests", &CacheDims::requests)
      .def_readwrite("blocks", &CacheDims::blocks)
      .def_readwrite("tokens", &CacheDims::tokens)
      .def_readwrite("heads", &CacheDims::heads)
      .def_readwrite("head_dim", &CacheDims::head_dim)
      .def_property_readonly("r", &CacheDims::r)
      .def("__eq__", [](const CacheDims& a, const CacheDims& b) { return a == b; })
      .def("__repr__", [](const CacheDims& d) {
        return "CacheDims(" + std::to_string(d.layers) + ", " + std::to_string(d.requests) + ", " +
               std::to_string(d.blocks) + ", " + std::to_string(d.tokens) + ", " + std::to_string(d.heads) +
               ", " + std::to_string(d.head_dim) + ")";
      });

  py::class_<PagedKvCache>(m, "PagedKvCache")
      .def(py::init(&cache_from_numpy), py::arg("keys"), py::arg("values"),
           "Build a cache from float32 arrays of shape (L, B, p, t, h, d).")
      .def_property_readonly("dims", &PagedKvCache::dims)
      .def_property_readonly("keys", [](const PagedKvCache& c) { return to_numpy(c.dims(), c.keys()); })
      .def_property_readonly("values", [](const PagedKvCache& c) { return to_numpy(c.dims(), c.values()); })
      .def("__eq__", [](const PagedKvCache& a, const PagedKvCache& b) { return a == b; });

  m.def("fixture_names", &fixture_names);
  m.def("generate_fixture", [](const std::string& name) { return generate(named_fixture(name)); },
        py::arg("name"));
  m.def("generate",
        [](const std::string& spec_json) { return generate(spec_from_json(nlohmann::json::parse(spec_json))); },
        py::arg("spec_json"), "Generate a synthetic cache from a JSON spec string.");
  m.def("fixture_spec", [](const std::string& name) { return to_json(named_fixture(name)).dump(); },
        py::arg("name"));
  m.def("save_cache", &save_cache, py::arg("cache"), py::arg("path"));
  m.def("load_cache", &load_cache, py::arg("path"));

  m.def(
      "fuse_json",
      [](const PagedKvCache& cache, double threshold, const std::string& variant, std::size_t chunk_tokens,
         std::optional<std::size_t> group_size, bool samples, unsigned threads) {
        const CacheFusion f = fuse(cache, threshold, variant, chunk_tokens, group_size, threads);
        nlohmann::json j{{"blocks_before", f.blocks_before()},
                         {"blocks_after", f.blocks_after()},
                         {"compression_ratio", f.compression_ratio()}};
        auto& layers = j["layers"] = nlohmann::json::array();
        for (const auto& r : f.reports()) layers.push_back(to_json(r, samples));
        auto& tables = j["tables"] = nlohmann::json::array();
        for (const auto& l : f.layers) tables.push_back(to_json(l.table));
        return j.dump();
      },
      py::arg("cache"), py::arg("threshold") = 0.9, py::arg("variant") = "bff", py::arg("chunk_tokens") = 0,
      py::arg("group_size") = py::none(), py::arg("samples") = false, py::arg("threads") = 0);

  m.def(
      "sweep_json",
      [](const PagedKvCache& cache, std::vector<double> thresholds, const std::string& variant,
         std::size_t chunk_tokens, std::optional<std::size_t> group_size, std::size_t queries, std::uint64_t seed) {
        SweepConfig c;
        c.variant = parse_variant(variant);
        c.chunk_tokens = chunk_tokens;
        c.group_size = group_size;
        c.thresholds = std::move(thresholds);
        c.queries = queries;
        c.seed = seed;
        return to_json(run_sweep(cache, c)).dump();
      },
      py::arg("cache"), py::arg("thresholds"), py::arg("variant") = "bff", py::arg("chunk_tokens") = 0,
      py::arg("group_size") = py::none(), py::arg("queries") = 32, py::arg("seed") = 0);

  m.def(
      "verify_drift_bound_json",
      [](std::size_t trials, std::size_t d, double u, std::size_t tokens, std::uint64_t seed) {
        DriftTrialConfig c;
        c.trials = trials;
        c.dim = d;
        c.u = u;
        c.tokens = tokens;
        c.seed = seed;
        return verify_drift_bound(c).to_json().dump();
      },
      py::arg("trials") = 1000, py::arg("d") = 16, py::arg("u") = 0.95, py::arg("tokens") = 32, py::arg("seed") = 0);

  m.def("drift_bound", [](std::vector<double> q, std::vector<double> key_norms, double u, std::size_t d) {
    const DriftBound b = drift_bound(q, key_norms, u, d);
    return py::make_tuple(b.epsilon, b.loose_bound, b.exact_bound);
  }, py::arg("q"), py::arg("key_norms"), py::arg("u"), py::arg("d"), "Returns (epsilon, 2 epsilon, exp(2 epsilon) - 1).");

  m.def("kde_density", [](std::vector<double> x, double h, double at) { return kde_density({samples_of(x), h}, at); },
        py::arg("samples"), py::arg("h"), py::arg("x"));
  m.def("kde_cdf", [](std::vector<double> x, double h, double at) { return kde_cdf({samples_of(x), h}, at); },
        py::arg("samples"), py::arg("h"), py::arg("x"));
  m.def("silverman_bandwidth", [](std::vector<double> x) { return silverman_bandwidth(samples_of(x)); },
        py::arg("samples"));
  m.def("poisson_rate_evt", [](std::vector<double> x, double h, double u) { return poisson_rate_evt(samples_of(x), h, u).lambda; },
        py::arg("samples"), py::arg("h"), py::arg("u"));
  m.def("poisson_rate_gaussian", &poisson_rate_gaussian, py::arg("n"), py::arg("mu"), py::arg("sigma"), py::arg("u"));
  m.def(
      "predicted_compression_ratio",
      [](std::size_t layers, std::size_t m1, std::size_t m2, const std::vector<double>& lambdas) {
        std::vector<LayerRate> rates;
        for (std::size_t l = 0; l < lambdas.size(); ++l) rates.push_back({l, 0.0, lambdas[l], RateMethod::kGaussian});
        return predicted_compression_ratio(layers, m1, m2, rates);
      },
      py::arg("layers"), py::arg("m1"), py::arg("m2"), py::arg("lambdas"));
  m.def("prob_no_fusion", [](double lambda) { return prob_no_fusion({0, 0.0, lambda, RateMethod::kGaussian}); },
        py::arg("lam"));
}
