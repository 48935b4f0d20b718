#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "spuq/benchcli/cache.hpp"
#include "spuq/benchcli/checkpoint.hpp"
#include "spuq/benchcli/config.hpp"
#include "spuq/benchcli/evaluate.hpp"
#include "spuq/benchcli/report.hpp"
#include "spuq/parallel.hpp"

namespace spuq::bench {

namespace fs = std::filesystem;

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error(dir.string() + ": cannot create directory: " + ec.message());
}

// The serialized config plus the manifest's content hash, next to every output.
inline void write_provenance(const fs::path& dir, const json& run_config, const fs::path& manifest) {
  const std::string digest = sha256_file(manifest);
  json doc = run_config;
  doc["manifest_sha256"] = digest;
  write_text(dir / "run_config.json", doc.dump(2) + "\n");
  write_text(dir / "manifest.sha256", digest + "  " + manifest.filename().string() + "\n");
}

// ------------------------------------------------------------------ generate

struct GenerateOptions {
  std::uint64_t seed = 0;
  fs::path out;
  std::size_t n_per_kind = 8;
};

inline phantom::Manifest cmd_generate(const GenerateOptions& o) {
  if (o.out.empty()) throw UsageError("generate: --out is required");
  if (o.n_per_kind < 1) throw UsageError("generate: --n-per-kind must be >= 1");
  phantom::SuiteOptions so;
  so.n_per_kind = o.n_per_kind;
  return phantom::generate_suite(o.out, o.seed, so);
}

// ------------------------------------------------------------------ train

struct TrainOutcome {
  std::vector<fs::path> checkpoints;
  fs::path loss_csv;
};

inline void write_loss_csv(const fs::path& path, const std::vector<std::vector<double>>& histories) {
  CsvWriter w(path);
  w.row({"member", "step", "loss"});
  for (std::size_t m = 0; m < histories.size(); ++m)
    for (std::size_t s = 0; s < histories[m].size(); ++s) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.9e", histories[m][s]);
      w.row({std::to_string(m), std::to_string(s), buf});
    }
}

// Training reads the train-split volumes only; mask files are never opened.
inline TrainOutcome cmd_train(const RunConfig& cfg, std::size_t jobs = 1) {
  require_paths(cfg);
  const auto manifest = phantom::load_manifest(cfg.manifest);
  const auto volumes = phantom::load_training_volumes(manifest);
  if (volumes.empty()) throw std::runtime_error("train: manifest has no train-split volumes");
  ensure_dir(cfg.output_dir);
  write_provenance(cfg.output_dir, {{"command", "train"}, {"config", to_json(cfg)}}, cfg.manifest);

  TrainOutcome out;
  out.loss_csv = cfg.output_dir / "loss_history.csv";
  uq::UqArtifacts a;
  try {
    a = uq::train_uq(cfg.propagator, volumes, {cfg.sgd, cfg.arch, cfg.seed, std::max<std::size_t>(1, jobs)},
                     cfg.strategy);
  } catch (const prop::TrainingDivergedError& e) {
    write_loss_csv(out.loss_csv, {e.history()});
    throw;
  }
  std::vector<std::vector<double>> histories;
  for (const auto& m : a.models) histories.push_back(m.loss_history);
  write_loss_csv(out.loss_csv, histories);
  const auto names = checkpoint_names(cfg.strategy);
  const auto cks = to_checkpoints(a);
  for (std::size_t i = 0; i < cks.size(); ++i) {
    out.checkpoints.push_back(cfg.output_dir / names[i]);
    save_checkpoint(out.checkpoints.back(), cks[i]);
  }
  return out;
}

// ------------------------------------------------------------------ propagate

struct PropagateOptions {
  std::vector<fs::path> checkpoints;
  fs::path volume, gt, out;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct PropagateOutcome {
  fs::path mask, uncertainty, record;
  uq::UqPrediction prediction;
};

inline PropagateOutcome cmd_propagate(const PropagateOptions& o) {
  if (o.checkpoints.empty()) throw UsageError("propagate: at least one --checkpoint is required");
  if (o.volume.empty() || o.gt.empty() || o.out.empty()) {
    throw UsageError("propagate: --volume, --gt and --out are required");
  }
  std::vector<Checkpoint> cks;
  for (const auto& p : o.checkpoints) cks.push_back(load_checkpoint(p));
  const auto artifacts = from_checkpoints(std::move(cks));
  const auto volume = phantom::read_volume(o.volume);
  const auto gt = phantom::read_mask(o.gt);
  if (!volume.same_dims(gt)) throw std::invalid_argument("propagate: volume and ground-truth dimensions differ");
  const auto ann = prop::select_annotated_slice(gt);

  ensure_dir(o.out);
  PropagateOutcome r;
  r.prediction = uq::predict_with_uq(artifacts, volume, ann, o.seed, std::max<std::size_t>(1, o.jobs));
  const auto& p = r.prediction;
  r.mask = o.out / "prediction.mask";
  phantom::write_mask(r.mask, p.mask);
  if (p.scores) {
    r.uncertainty = o.out / "uncertainty.vol";
    phantom::write_volume(r.uncertainty, p.scores->per_voxel);
  }
  json slices = json::array();
  for (const auto& s : p.record.slices) {
    slices.push_back({{"slice", s.slice}, {"distance", s.distance}, {"distance_mm", s.distance_mm},
                      {"corrected", s.corrected}});
  }
  json rec{{"propagator", prop::to_string(artifacts.propagator)},
           {"strategy", uq::to_string(artifacts.strategy.kind)},
           {"annotated_slice", p.record.annotated_slice},
           {"annotation_rule", "largest ground-truth area"},
           {"slices", slices},
           {"prediction_file", r.mask.filename().string()},
           {"uncertainty_file", p.scores ? json(r.uncertainty.filename().string()) : json(nullptr)}};
  if (!p.scores) rec["uncertainty_note"] = "strategy none produces no uncertainty estimate";
  rec["metrics"] = {{"dsc", metrics::dsc(p.mask, gt)}, {"surface_dice", metrics::surface_dice(p.mask, gt, gt.spacing())}};
  if (p.scores) rec["metrics"]["uncertainty"] = p.scores->per_volume;
  r.record = o.out / "record.json";
  write_text(r.record, rec.dump(2) + "\n");
  return r;
}

// ------------------------------------------------------------------ benchmark

struct Cell {
  prop::PropagatorKind propagator;
  uq::UqKind strategy;
};

// Comma-separated `propagator:strategy` patterns; `*` matches anything.
inline std::vector<Cell> parse_matrix(const std::string& filter) {
  const std::vector<prop::PropagatorKind> props = {prop::PropagatorKind::Affinity, prop::PropagatorKind::Flow};
  std::vector<std::pair<std::string, std::string>> patterns;
  std::stringstream ss(filter.empty() ? "*:*" : filter);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    const auto colon = tok.find(':');
    std::string p = colon == std::string::npos ? tok : tok.substr(0, colon);
    std::string s = colon == std::string::npos ? "*" : tok.substr(colon + 1);
    if (p != "*") {
      try {
        prop::propagator_from_string(p);
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--matrix: ") + e.what());
      }
    }
    if (s != "*") {
      try {
        uq::uq_kind_from_string(s);
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--matrix: ") + e.what());
      }
    }
    patterns.emplace_back(p, s);
  }
  std::vector<Cell> cells;
  for (auto p : props)
    for (auto s : uq::kAllUqKinds) {
      for (const auto& [pp, sp] : patterns) {
        if ((pp == "*" || pp == prop::to_string(p)) && (sp == "*" || sp == uq::to_string(s))) {
          cells.push_back({p, s});
          break;
        }
      }
    }
  if (cells.empty()) throw UsageError("--matrix selects no cells");
  return cells;
}

struct BenchmarkOptions {
  RunConfig base;  // propagator and strategy kind are set per cell
  std::string matrix = "*:*";
  std::size_t jobs = 1;
  fs::path cache_dir;  // empty: <out>/cache
  std::ostream* log = nullptr;
};

struct BenchmarkOutcome {
  std::vector<CellResult> cells;
  std::size_t failed = 0;
  std::size_t trained_units = 0, cache_hits = 0;
  double seconds = 0.0;
  int exit_code() const { return failed ? 1 : 0; }
};

inline fs::path resolve_cache_dir(const fs::path& flag, const fs::path& out) {
  if (const char* env = std::getenv("SPUQ_CACHE_DIR"); env && *env) return env;
  return flag.empty() ? out / "cache" : flag;
}

// Per-phantom prediction seed, shared by every cell.
inline std::uint64_t prediction_seed(std::uint64_t seed, std::size_t index) {
  return grad::Rng::stream(seed, "predict", index).next_u64();
}

inline BenchmarkOutcome cmd_benchmark(const BenchmarkOptions& o) {
  const RunConfig& cfg = o.base;
  require_paths(cfg);
  const auto cells = parse_matrix(o.matrix);
  const auto manifest = phantom::load_manifest(cfg.manifest);
  const auto eval = manifest.select(phantom::Split::Eval);
  if (eval.empty()) throw std::runtime_error("benchmark: manifest has no eval-split phantoms");
  ensure_dir(cfg.output_dir);
  json matrix = json::array();
  for (const auto& c : cells) matrix.push_back(prop::to_string(c.propagator) + ":" + uq::to_string(c.strategy));
  write_provenance(cfg.output_dir, {{"command", "benchmark"}, {"config", to_json(cfg)}, {"matrix", matrix}},
                   cfg.manifest);

  const auto t0 = std::chrono::steady_clock::now();
  TrainingStore store(CheckpointCache(resolve_cache_dir(o.cache_dir, cfg.output_dir)),
                      phantom::load_training_volumes(manifest));
  const std::string digest = training_data_digest(manifest);
  std::mutex log_mutex;
  auto log = [&](const std::string& s) {
    if (!o.log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    *o.log << s << std::endl;
  };

  BenchmarkOutcome out;
  out.cells.resize(cells.size());
  std::vector<double> cell_seconds(cells.size(), 0.0);
  parallel_for(cells.size(), std::max<std::size_t>(1, o.jobs), [&](std::size_t ci) {
    const auto c0 = std::chrono::steady_clock::now();
    CellResult& res = out.cells[ci];
    res.propagator = cells[ci].propagator;
    res.strategy = cells[ci].strategy;
    const fs::path cell_dir = cfg.output_dir / "cells" / res.name();
    try {
      ensure_dir(cell_dir);
      TrainingInputs in{res.propagator, cfg.strategy, cfg.sgd, cfg.arch, cfg.seed, digest};
      in.strategy.kind = res.strategy;
      const auto artifacts = store.artifacts(in);
      for (std::size_t i = 0; i < eval.size(); ++i) {
        const auto& e = *eval[i];
        const auto volume = phantom::read_volume(manifest.volume_file(e));
        const auto gt = phantom::read_mask(manifest.mask_file(e));
        const auto ann = prop::select_annotated_slice(gt);
        const auto pred = uq::predict_with_uq(artifacts, volume, ann, prediction_seed(cfg.seed, i));
        res.volumes.push_back(evaluate_prediction(e.id, e.spec, pred, gt));
      }
      compute_cell_statistics(res, cfg.seed);
      res.ok = true;
    } catch (const std::exception& ex) {
      res.ok = false;
      res.error = ex.what();
      res.volumes.clear();
      res.retention.reset();
    }
    cell_seconds[ci] = std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();
    try {
      json cj{{"cell", res.name()}, {"status", res.ok ? "ok" : "failed"}, {"seconds", cell_seconds[ci]}};
      if (!res.ok) cj["error"] = res.error;
      write_text(cell_dir / "cell.json", cj.dump(2) + "\n");
    } catch (const std::exception&) {
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), " (%.1f s)", cell_seconds[ci]);
    log("[" + std::string(res.ok ? "ok" : "FAILED") + "] " + res.name() + buf + (res.ok ? "" : ": " + res.error));
  });

  for (const auto& c : out.cells) out.failed += !c.ok;
  const auto& dir = cfg.output_dir;
  write_results_csv(dir / "results.csv", out.cells);
  write_per_slice_csv(dir / "per_slice.csv", out.cells);
  write_retention_csv(dir / "retention.csv", out.cells);
  write_trends(dir, slices_from_cells(out.cells), false);
  write_text(dir / "table1.json", table1_json(out.cells).dump(2) + "\n");
  write_text(dir / "table1.md", table1_markdown(out.cells));
  write_text(dir / "failure_report.json", failure_report_json(out.cells).dump(2) + "\n");
  out.trained_units = store.trained_units();
  out.cache_hits = store.cache_hits();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json timing{{"total_seconds", out.seconds}, {"trained_units", out.trained_units}, {"cache_hits", out.cache_hits}};
  for (std::size_t i = 0; i < cells.size(); ++i) timing["cells"][out.cells[i].name()] = cell_seconds[i];
  write_text(dir / "timing.json", timing.dump(2) + "\n");
  return out;
}

// ------------------------------------------------------------------ analyze-trend

inline std::map<TrendKey, metrics::TrendSeries> cmd_analyze_trend(const fs::path& results_dir) {
  if (results_dir.empty()) throw UsageError("analyze-trend: --results-dir is required");
  std::vector<std::string> missing;
  for (const char* f : {"per_slice.csv", "results.csv", "run_config.json"}) {
    if (!fs::is_regular_file(results_dir / f)) missing.push_back((results_dir / f).string());
  }
  if (!missing.empty()) {
    std::string msg = "analyze-trend: missing input files:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw std::runtime_error(msg);
  }
  const fs::path out = results_dir / "trend";
  ensure_dir(out);
  return write_trends(out, slices_from_csv(results_dir / "per_slice.csv"), true);
}

}  // namespace spuq::bench
