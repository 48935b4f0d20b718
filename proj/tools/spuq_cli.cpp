// spuq: phantom generation, training, propagation with uncertainty, and benchmarking.
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spuq/benchcli.hpp"

namespace {

namespace bench = spuq::bench;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slice propagation with uncertainty quantification on synthetic phantoms"};
  app.require_subcommand(1);
  bool print_schema = false;
  app.add_flag("--print-config-schema", print_schema, "Print the RunConfig JSON schema and exit");

  bench::GenerateOptions gen;
  auto* g = app.add_subcommand("generate", "Write a phantom dataset and its manifest");
  g->add_option("--seed", gen.seed, "Suite seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--n-per-kind", gen.n_per_kind, "Phantoms per kind (even indices train, odd evaluate)")
      ->capture_default_str();

  std::string train_config;
  std::size_t train_jobs = 1;
  std::optional<std::uint64_t> train_seed;
  auto* t = app.add_subcommand("train", "Train a propagator under one UQ strategy");
  t->add_option("--config", train_config, "RunConfig JSON file")->required()->check(CLI::ExistingFile);
  t->add_option("--jobs", train_jobs, "Worker threads for ensemble members")->capture_default_str();
  t->add_option("--seed", train_seed, "Override the config seed");

  bench::PropagateOptions po;
  std::vector<std::string> ckpts;
  auto* p = app.add_subcommand("propagate", "Propagate the largest ground-truth slice through a volume");
  p->add_option("--checkpoint,--checkpoints", ckpts, "Checkpoint file(s); one per deep-ensemble member")
      ->required()
      ->check(CLI::ExistingFile);
  p->add_option("--volume", po.volume, "Input volume file")->required()->check(CLI::ExistingFile);
  p->add_option("--gt", po.gt, "Ground-truth mask file")->required()->check(CLI::ExistingFile);
  p->add_option("--out", po.out, "Output directory")->required();
  p->add_option("--seed", po.seed, "Sampling seed")->capture_default_str();
  p->add_option("--jobs", po.jobs, "Worker threads for samples")->capture_default_str();

  std::string bench_config, bench_dataset, bench_out, bench_cache;
  std::optional<std::uint64_t> bench_seed;
  bench::BenchmarkOptions bo;
  auto* b = app.add_subcommand("benchmark", "Train and evaluate a propagator x strategy matrix");
  b->add_option("--dataset", bench_dataset, "Dataset manifest.json or the directory holding it")->required();
  b->add_option("--out", bench_out, "Report directory (overrides config output_dir)");
  b->add_option("--config", bench_config, "RunConfig JSON for shared hyperparameters")->check(CLI::ExistingFile);
  b->add_option("--matrix", bo.matrix, "Cells as propagator:strategy patterns, '*' wildcards, comma separated")
      ->capture_default_str();
  b->add_option("--jobs", bo.jobs, "Cells run concurrently")->capture_default_str();
  b->add_option("--seed", bench_seed, "Override the config seed");
  b->add_option("--cache-dir", bench_cache, "Checkpoint cache (env SPUQ_CACHE_DIR takes precedence)");

  std::string results_dir;
  auto* a = app.add_subcommand("analyze-trend", "Per-distance trend series from benchmark outputs");
  a->add_option("--results-dir", results_dir, "Benchmark output directory")->required();

  // The schema flag must work without a subcommand.
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--print-config-schema") {
      std::cout << bench::config_schema().dump(2) << '\n';
      return kExitOk;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*g) {
      const auto m = bench::cmd_generate(gen);
      std::cout << "wrote " << m.phantoms.size() << " phantoms to " << gen.out << '\n';
    } else if (*t) {
      auto cfg = bench::load_config(train_config);
      if (train_seed) cfg.seed = *train_seed;
      const auto r = bench::cmd_train(cfg, train_jobs);
      for (const auto& c : r.checkpoints) std::cout << "checkpoint " << c.string() << '\n';
      std::cout << "loss history " << r.loss_csv.string() << '\n';
    } else if (*p) {
      for (const auto& c : ckpts) po.checkpoints.emplace_back(c);
      const auto r = bench::cmd_propagate(po);
      std::cout << "prediction " << r.mask.string() << '\n';
      if (!r.uncertainty.empty()) std::cout << "uncertainty " << r.uncertainty.string() << '\n';
      std::cout << "record " << r.record.string() << '\n';
    } else if (*b) {
      bo.base = bench_config.empty() ? bench::RunConfig{} : bench::load_config(bench_config);
      std::filesystem::path ds(bench_dataset);
      bo.base.manifest = std::filesystem::is_directory(ds) ? ds / "manifest.json" : ds;
      if (!bench_out.empty()) bo.base.output_dir = bench_out;
      if (bench_seed) bo.base.seed = *bench_seed;
      bo.cache_dir = bench_cache;
      bo.log = &std::cerr;
      const auto r = bench::cmd_benchmark(bo);
      std::cout << (r.cells.size() - r.failed) << "/" << r.cells.size() << " cells ok; report in "
                << bo.base.output_dir.string() << '\n';
      return r.exit_code();
    } else if (*a) {
      const auto series = bench::cmd_analyze_trend(results_dir);
      std::cout << series.size() << " trend series written to " << (std::filesystem::path(results_dir) / "trend")
                << '\n';
    }
  } catch (const bench::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
