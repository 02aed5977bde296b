// Copyright 2026 The kvfuse Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kvfuse/analysis.hpp"
#include "kvfuse/attention.hpp"
#include "kvfuse/error.hpp"
#include "kvfuse/fusion.hpp"
#include "kvfuse/kvff.hpp"
#include "kvfuse/report_io.hpp"
#include "kvfuse/sweep.hpp"
#include "kvfuse/workload.hpp"

namespace kvfuse::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

void emit_error(std::ostream& err, std::string_view kind, const std::string& message,
                json extra = json::object()) {
  json j{{"error", kind}, {"message", message}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  err << j.dump() << '\n';
}

// Writes `text` to `path`, or to the primary stream when no path is given.
void deliver(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot open " + path + " for writing");
  f << text;
}

enum class Format { kJson, kCsv };

Format parse_format(const std::string& name) { return name == "csv" ? Format::kCsv : Format::kJson; }


const std::map<std::string, Variant> kVariants{{"bff", Variant::kBatch}, {"cff", Variant::kChunks}};

// Threshold must be strictly inside (-1, 1).
const CLI::Validator kOpenUnitInterval(
    [](std::string& s) -> std::string {
      double v = 0.0;
      try {
        v = std::stod(s);
      } catch (const std::exception&) {
        return "threshold must be a number";
      }
      if (!(v > -1.0 && v < 1.0)) return "threshold " + s + " outside (-1, 1)";
      return {};
    },
    "in (-1, 1)");

struct FuseOptions {
  std::string input;
  std::string variant_name = "bff";
  Variant variant = Variant::kBatch;
  double threshold = 0.9;
  std::size_t group_size = 0;
  std::size_t chunk_tokens = 0;
  unsigned threads = 0;
};

void add_fuse_options(CLI::App* cmd, FuseOptions& o) {
  cmd->add_option("--in", o.input, "Input KVFF cache")->required()->check(CLI::ExistingFile);
  cmd->add_option("--variant", o.variant_name, "bff | cff")->check(CLI::IsMember({"bff", "cff"}));
  cmd->add_option("--group-size", o.group_size, "Requests or chunks per fusion tree (0 = all)");
  cmd->add_option("--chunk-tokens", o.chunk_tokens, "Tokens per chunk (cff)");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = hardware)");
}

FusionConfig fusion_config(const FuseOptions& o, double threshold) {
  FusionConfig c;
  c.threshold = threshold;
  c.variant = o.variant;
  if (o.group_size > 0) c.group_size = o.group_size;
  return c;
}

void check_chunks(FuseOptions& o) {
  o.variant = kVariants.at(o.variant_name);
  if (o.variant == Variant::kChunks && o.chunk_tokens == 0) {
    fail(ErrorKind::kConfig, "--chunk-tokens is required for the cff variant");
  }
}

CacheFusion run_fusion(const PagedKvCache& cache, const FuseOptions& o, double threshold) {
  const FusionConfig c = fusion_config(o, threshold);
  return o.variant == Variant::kBatch ? fuse_batch(cache, c, o.threads)
                                      : fuse_chunks(cache, c, o.chunk_tokens, o.threads);
}

// ---------------------------------------------------------------- generate

struct GenerateOptions {
  std::string spec_path;
  std::string fixture;
  std::string out;
  SyntheticSpec spec;
  std::string assignment = "uniform";
  bool seed_set = false;
};

int cmd_generate(GenerateOptions& o, CLI::App* cmd, Streams s) {
  SyntheticSpec spec = o.spec;
  if (!o.spec_path.empty()) {
    std::ifstream f(o.spec_path);
    spec = spec_from_json(json::parse(f));
  } else if (!o.fixture.empty()) {
    spec = named_fixture(o.fixture);
  } else {
    spec.assignment = parse_assignment(o.assignment);
  }
  if (!cmd->get_option("--seed")->empty()) spec.seed = o.spec.seed;
  const PagedKvCache cache = generate(spec);
  save_cache(cache, o.out);
  json j{{"out", o.out}, {"bytes", kvff_file_size(cache.dims())}, {"spec", to_json(spec)}};
  s.out << j.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- fixtures

int cmd_fixtures(const std::string& dir, const std::string& only, Streams s) {
  fs::create_directories(dir);
  json written = json::array();
  for (const auto& name : fixture_names()) {
    if (!only.empty() && name != only) continue;
    const SyntheticSpec spec = named_fixture(name);
    const fs::path cache_path = fs::path(dir) / (name + ".kvff");
    const fs::path spec_path = fs::path(dir) / (name + ".json");
    save_cache(generate(spec), cache_path);
    std::ofstream(spec_path) << to_json(spec).dump(2) << '\n';
    written.push_back({{"name", name}, {"cache", cache_path.string()}, {"spec", spec_path.string()}});
  }
  if (written.empty()) fail(ErrorKind::kConfig, "unknown fixture '" + only + "'");
  s.out << written.dump() << '\n';
  return kExitOk;
}

// -------------------------------------------------------------------- fuse

int cmd_fuse(FuseOptions& o, Format format, const std::string& out_path, bool tables,
             bool samples, Streams s) {
  check_chunks(o);
  const PagedKvCache cache = load_cache(o.input);
  const CacheFusion fused = run_fusion(cache, o, o.threshold);
  const auto reports = fused.reports();
  std::ostringstream text;
  if (format == Format::kCsv) {
    write_fusion_csv(text, reports);
  } else {
    json j{{"input", o.input},
           {"variant", std::string(to_string(o.variant))},
           {"threshold", o.threshold},
           {"blocks_before", fused.blocks_before()},
           {"blocks_after", fused.blocks_after()},
           {"compression_ratio", fused.compression_ratio()}};
    if (o.variant == Variant::kChunks) j["chunk_tokens"] = o.chunk_tokens;
    auto& layers = j["layers"] = json::array();
    for (const auto& r : reports) layers.push_back(to_json(r, samples));
    if (tables) {
      auto& t = j["tables"] = json::array();
      for (const auto& l : fused.layers) t.push_back(to_json(l.table));
    }
    text << j.dump() << '\n';
  }
  deliver(out_path, text.str(), s.out);
  return kExitOk;
}

// ----------------------------------------------------------------- analyze

struct AnalyzeOptions {
  FuseOptions fuse;
  std::vector<std::size_t> pair{0, 1};
  std::string grid = "0.5:0.95:0.05";
  double bandwidth = 0.0;
  std::string format_name = "csv";
  std::string out;
};

int cmd_analyze(AnalyzeOptions& o, Streams s) {
  FuseOptions& f = o.fuse;
  check_chunks(f);
  require(o.pair.size() == 2 && o.pair[0] != o.pair[1], ErrorKind::kConfig,
          "--pair needs two distinct row indices");
  const PagedKvCache cache = load_cache(f.input);
  AnalysisInput input;
  input.thresholds = parse_grid(o.grid);
  if (o.bandwidth > 0.0) input.bandwidth = o.bandwidth;
  for (std::size_t l = 0; l < cache.dims().layers; ++l) {
    const UnfoldedPair unfolded =
        f.variant == Variant::kBatch ? unfold_bff(cache, l) : unfold_cff(cache, l, f.chunk_tokens, 0);
    const UnfoldedLayer& keys = unfolded.keys;
    require(o.pair[0] < keys.rows() && o.pair[1] < keys.rows(), ErrorKind::kConfig,
            "--pair row index out of range (" + std::to_string(keys.rows()) + " rows)");
    SimilaritySampleSet set;
    set.layer = l;
    set.source = f.variant == Variant::kBatch ? SampleSource::kBatch : SampleSource::kChunks;
    const std::size_t a = o.pair[0], b = o.pair[1];
    for (std::size_t i = 0; i < keys.blocks_in_row(a); ++i) {
      const std::size_t si = keys.slot(a, i);
      if (!keys.fusable(si)) continue;
      for (std::size_t j = 0; j < keys.blocks_in_row(b); ++j) {
        const std::size_t sj = keys.slot(b, j);
        if (!keys.fusable(sj)) continue;
        set.samples.push_back(cosine_similarity(keys.direction(si), keys.direction(sj)));
      }
    }
    input.m1 = keys.blocks_in_row(a);
    input.m2 = keys.blocks_in_row(b);
    input.layers.push_back(std::move(set));
  }
  const auto rows = analyze(input);
  for (const auto& r : rows) {
    if (!r.asymptotic) {
      s.err << json{{"warning", "non_asymptotic"},
                    {"message", "u=" + format_double(r.u) + " below the largest similarity of layer " +
                     std::to_string(r.layer) + "; Poisson rate is outside its asymptotic regime"}}
                       .dump()
                << '\n';
    }
  }
  std::ostringstream text;
  if (parse_format(o.format_name) == Format::kCsv) {
    write_analysis_csv(text, rows);
  } else {
    text << json{{"m1", input.m1}, {"m2", input.m2}, {"rows", to_json(rows)}}.dump() << '\n';
  }
  deliver(o.out, text.str(), s.out);
  return kExitOk;
}

// ------------------------------------------------------------ verify-bound

int cmd_verify(const DriftTrialConfig& c, const std::string& out_path, Streams s) {
  const DriftVerification v = verify_drift_bound(c);
  deliver(out_path, v.to_json().dump() + "\n", s.out);
  if (!v.passed()) {
    emit_error(s.err, "verification_failed",
               std::to_string(v.violations) + " bound violations, " +
                   std::to_string(v.envelope_violations) + " envelope violations",
               {{"trial_seed", v.first_violation_seed.value_or(0)}});
    return kExitVerificationFailed;
  }
  return kExitOk;
}

// ------------------------------------------------------------------- bench

int cmd_bench(FuseOptions& o, const std::string& fixture, std::size_t repeats, Streams s) {
  check_chunks(o);
  const PagedKvCache cache = o.input.empty() ? generate(named_fixture(fixture)) : load_cache(o.input);
  std::vector<double> ms;
  CacheFusion last;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, repeats); ++i) {
    const auto start = std::chrono::steady_clock::now();
    last = run_fusion(cache, o, o.threshold);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  double total = 0.0;
  for (double m : ms) total += m;
  json j{{"variant", std::string(to_string(o.variant))},
         {"threshold", o.threshold},
         {"repeats", ms.size()},
         {"mean_ms", total / static_cast<double>(ms.size())},
         {"min_ms", *std::min_element(ms.begin(), ms.end())},
         {"blocks_before", last.blocks_before()},
         {"blocks_after", last.blocks_after()},
         {"compression_ratio", last.compression_ratio()}};
  s.out << j.dump() << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------- sweep

int cmd_sweep(FuseOptions& o, const std::string& grid, std::size_t queries, std::uint64_t seed,
              Format format, const std::string& out_path, Streams s) {
  check_chunks(o);
  const PagedKvCache cache = load_cache(o.input);
  SweepConfig c;
  c.variant = o.variant;
  c.chunk_tokens = o.chunk_tokens;
  if (o.group_size > 0) c.group_size = o.group_size;
  c.thresholds = parse_grid(grid);
  for (double t : c.thresholds) {
    require(t > -1.0 && t < 1.0, ErrorKind::kConfig, "grid threshold " + format_double(t) + " outside (-1, 1)");
  }
  c.queries = queries;
  c.seed = seed;
  c.threads = o.threads;
  const auto points = run_sweep(cache, c);
  std::ostringstream text;
  if (format == Format::kCsv) {
    write_sweep_csv(text, points);
  } else {
    text << to_json(points).dump() << '\n';
  }
  deliver(out_path, text.str(), s.out);
  return kExitOk;
}

}  // namespace

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  try {
    if (text.find(':') != std::string::npos) {
      std::vector<double> parts;
      std::stringstream ss(text);
      for (std::string item; std::getline(ss, item, ':');) parts.push_back(std::stod(item));
      require(parts.size() == 3 && parts[2] > 0.0 && parts[1] >= parts[0], ErrorKind::kConfig,
              "grid range must be start:stop:step with step > 0");
      const auto steps = static_cast<std::size_t>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-6));
      for (std::size_t i = 0; i <= steps; ++i) {
        grid.push_back(std::round((parts[0] + static_cast<double>(i) * parts[2]) * 1e12) / 1e12);
      }
    } else {
      std::stringstream ss(text);
      for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) grid.push_back(std::stod(item));
      }
    }
  } catch (const std::invalid_argument&) {
    fail(ErrorKind::kConfig, "cannot parse grid '" + text + "'");
  } catch (const std::out_of_range&) {
    fail(ErrorKind::kConfig, "cannot parse grid '" + text + "'");
  }
  require(!grid.empty(), ErrorKind::kConfig, "threshold grid is empty");
  return grid;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Streams streams{out, err};
  CLI::App app{"kvfuse: paged KV-cache block fusion experiments", "kvfuse"};
  app.require_subcommand(1);
  std::function<int()> action;

  // generate
  GenerateOptions gen;
  auto* generate_cmd = app.add_subcommand("generate", "Write a synthetic KVFF cache");
  generate_cmd->add_option("--spec", gen.spec_path, "SyntheticSpec JSON file")->check(CLI::ExistingFile);
  generate_cmd->add_option("--fixture", gen.fixture, "Named fixture spec");
  generate_cmd->add_option("--out", gen.out, "Output KVFF path")->required();
  generate_cmd->add_option("--layers", gen.spec.dims.layers);
  generate_cmd->add_option("--requests", gen.spec.dims.requests);
  generate_cmd->add_option("--blocks", gen.spec.dims.blocks);
  generate_cmd->add_option("--tokens", gen.spec.dims.tokens);
  generate_cmd->add_option("--heads", gen.spec.dims.heads);
  generate_cmd->add_option("--head-dim", gen.spec.dims.head_dim);
  generate_cmd->add_option("--clusters", gen.spec.clusters);
  generate_cmd->add_option("--intra", gen.spec.intra_cluster_similarity, "Expected cosine to the cluster base");
  generate_cmd->add_option("--assignment", gen.assignment, "uniform | zipf | cyclic");
  generate_cmd->add_option("--zipf-exponent", gen.spec.zipf_exponent);
  generate_cmd->add_option("--shared-prefix", gen.spec.shared_prefix_blocks);
  generate_cmd->add_option("--seed", gen.spec.seed);
  generate_cmd->callback([&] { action = [&] { return cmd_generate(gen, generate_cmd, streams); }; });

  // fixtures
  std::string fixture_dir, fixture_only;
  auto* fixtures_cmd = app.add_subcommand("fixtures", "Regenerate the named test fixtures");
  fixtures_cmd->add_option("--dir", fixture_dir, "Output directory")->required();
  fixtures_cmd->add_option("--only", fixture_only, "Write a single fixture");
  fixtures_cmd->callback([&] { action = [&] { return cmd_fixtures(fixture_dir, fixture_only, streams); }; });

  // fuse
  FuseOptions fuse_opts;
  std::string fuse_format_name = "json";
  std::string fuse_out;
  bool no_tables = false, with_samples = false;
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse a cache and report per-layer statistics");
  add_fuse_options(fuse_cmd, fuse_opts);
  fuse_cmd->add_option("--threshold", fuse_opts.threshold, "Cosine threshold in (-1, 1)")->check(kOpenUnitInterval);
  fuse_cmd->add_option("--format", fuse_format_name, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  fuse_cmd->add_option("--out", fuse_out, "Report path (default stdout)");
  fuse_cmd->add_flag("--no-tables", no_tables, "Omit block tables from the JSON report");
  fuse_cmd->add_flag("--samples", with_samples, "Include raw similarity samples");
  fuse_cmd->callback([&] {
    action = [&] { return cmd_fuse(fuse_opts, parse_format(fuse_format_name), fuse_out, !no_tables, with_samples, streams); };
  });

  // analyze
  AnalyzeOptions an;
  auto* analyze_cmd = app.add_subcommand("analyze", "Poisson rate analysis of one pair of rows");
  add_fuse_options(analyze_cmd, an.fuse);
  analyze_cmd->add_option("--pair", an.pair, "Two row indices (requests, or chunks of request 0)")->expected(2);
  analyze_cmd->add_option("--u-grid", an.grid, "Thresholds: a,b,c or start:stop:step");
  analyze_cmd->add_option("--bandwidth", an.bandwidth, "KDE bandwidth override (default Silverman)");
  analyze_cmd->add_option("--format", an.format_name, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  analyze_cmd->add_option("--out", an.out, "Report path (default stdout)");
  analyze_cmd->callback([&] { action = [&] { return cmd_analyze(an, streams); }; });

  // verify-bound
  DriftTrialConfig drift;
  std::string verify_out;
  auto* verify_cmd = app.add_subcommand("verify-bound", "Randomized check of the attention drift bound");
  verify_cmd->add_option("--trials", drift.trials)->check(CLI::PositiveNumber);
  verify_cmd->add_option("--d", drift.dim, "Head dimension")->check(CLI::Range(2, 1 << 20));
  verify_cmd->add_option("--tokens", drift.tokens)->check(CLI::PositiveNumber);
  verify_cmd->add_option("--u", drift.u, "Similarity threshold")->check(CLI::Range(-1.0, 1.0));
  verify_cmd->add_option("--seed", drift.seed);
  verify_cmd->add_option("--norm-sigma", drift.key_norm_sigma, "Lognormal sigma of key norms");
  verify_cmd->add_option("--out", verify_out, "Report path (default stdout)");
  verify_cmd->callback([&] { action = [&] { return cmd_verify(drift, verify_out, streams); }; });

  // bench
  FuseOptions bench_opts;
  std::string bench_fixture = "clusters4";
  std::size_t repeats = 5;
  auto* bench_cmd = app.add_subcommand("bench", "Time fusion on a cache or named fixture");
  bench_cmd->add_option("--in", bench_opts.input, "Input KVFF cache")->check(CLI::ExistingFile);
  bench_cmd->add_option("--fixture", bench_fixture, "Named fixture when --in is absent");
  bench_cmd->add_option("--variant", bench_opts.variant_name)->check(CLI::IsMember({"bff", "cff"}));
  bench_cmd->add_option("--threshold", bench_opts.threshold)->check(kOpenUnitInterval);
  bench_cmd->add_option("--group-size", bench_opts.group_size);
  bench_cmd->add_option("--chunk-tokens", bench_opts.chunk_tokens);
  bench_cmd->add_option("--threads", bench_opts.threads);
  bench_cmd->add_option("--repeats", repeats);
  bench_cmd->callback([&] { action = [&] { return cmd_bench(bench_opts, bench_fixture, repeats, streams); }; });

  // sweep
  FuseOptions sweep_opts;
  std::string sweep_grid, sweep_out;
  std::size_t sweep_queries = 32;
  std::uint64_t sweep_seed = 0;
  std::string sweep_format_name = "csv";
  auto* sweep_cmd = app.add_subcommand("sweep", "Rate-distortion sweep over a threshold grid");
  add_fuse_options(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--grid", sweep_grid, "Thresholds: a,b,c or start:stop:step")->required();
  sweep_cmd->add_option("--queries", sweep_queries, "Random decode queries for drift");
  sweep_cmd->add_option("--seed", sweep_seed);
  sweep_cmd->add_option("--format", sweep_format_name, "csv | json")->check(CLI::IsMember({"json", "csv"}));
  sweep_cmd->add_option("--out", sweep_out, "Report path (default stdout)");
  sweep_cmd->callback([&] {
    action = [&] {
      return cmd_sweep(sweep_opts, sweep_grid, sweep_queries, sweep_seed, parse_format(sweep_format_name), sweep_out, streams);
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    emit_error(err, "usage_error", e.what());
    return kExitUsage;
  }

  try {
    return action();
  } catch (const Error& e) {
    emit_error(err, to_string(e.kind()), e.what());
  } catch (const json::exception& e) {
    emit_error(err, "config_error", e.what());
  } catch (const std::exception& e) {
    emit_error(err, "internal_error", e.what());
  }
  return kExitUsage;
}

}  // namespace kvfuse::cli
