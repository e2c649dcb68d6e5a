#include <iostream>

#include <CLI11.hpp>

#include "app.hpp"

using namespace metasub;

namespace {

std::vector<Eigen::Index> parse_k_list(const std::string& s) {
  std::vector<Eigen::Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      const long lo = std::stol(item.substr(0, dash));
      const long hi = std::stol(item.substr(dash + 1));
      for (long k = lo; k <= hi; ++k) out.push_back(k);
    } else {
      out.push_back(std::stol(item));
    }
  }
  if (out.empty()) throw ArgumentError("--k needs at least one dimension");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Meta-train small networks and measure the dimension of their adapted parameters"};
  cli.require_subcommand(1);
  cli.set_version_flag("--version", app::kVersion);

  std::string out_dir;
  std::uint64_t seed = 0;
  bool force = false;

  app::TrainArgs train;
  std::string config;
  auto* train_cmd = cli.add_subcommand("train", "Meta-train a network (or every run of a sweep)");
  train_cmd->add_option("--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_dir, "Output run directory (overrides config.out)");
  train_cmd->add_option("--seed", seed, "Override config seed");
  train_cmd->add_flag("--force", force, "Overwrite existing outputs");

  app::CollectArgs collect;
  int n_tasks = 0;
  auto* collect_cmd = cli.add_subcommand("collect", "Adapt to fresh tasks and store the adapted parameters");
  collect_cmd->add_option("--out", out_dir, "Run directory holding the checkpoint")->required();
  collect_cmd->add_option("--n-tasks", n_tasks, "Number of tasks (default: analysis.n_collect_tasks)");
  collect_cmd->add_option("--seed", seed, "Task sampling seed");
  collect_cmd->add_flag("--force", force, "Overwrite existing outputs");

  app::AnalyzeArgs analyze;
  std::string method = "both";
  std::string matrix;
  Eigen::Index n_neighbors = 0;
  double threshold = 0.0;
  auto* analyze_cmd = cli.add_subcommand("analyze", "PCA / Isomap spectra of the adapted parameters");
  analyze_cmd->add_option("--out", out_dir, "Run directory")->required();
  analyze_cmd->add_option("--matrix", matrix, "Matrix file (default: <out>/adapted.msub)");
  analyze_cmd->add_option("--method", method, "pca, isomap or both")->check(CLI::IsMember({"pca", "isomap", "both"}));
  analyze_cmd->add_option("--n-neighbors", n_neighbors, "Isomap neighborhood size");
  analyze_cmd->add_option("--threshold", threshold, "Dimension threshold for the chosen method");
  analyze_cmd->add_flag("--paramdiff", analyze.paramdiff, "Write the mean absolute parameter-change map");
  analyze_cmd->add_flag("--embedding", analyze.embedding, "Write a 2-D Isomap embedding CSV");
  analyze_cmd->add_flag("--force", force, "Overwrite existing outputs");

  app::ReconstructArgs recon;
  std::string k_list;
  int seeds = 0;
  auto* recon_cmd = cli.add_subcommand("reconstruct", "Recover tasks from PCA embeddings of adapted parameters");
  recon_cmd->add_option("--out", out_dir, "Run directory")->required();
  recon_cmd->add_option("--matrix", matrix, "Matrix file (default: <out>/adapted.msub)");
  recon_cmd->add_option("--k", k_list, "Embedding sizes, e.g. 1,2,3 or 1-6");
  recon_cmd->add_option("--seeds", seeds, "Probe seeds per k");
  recon_cmd->add_flag("--shuffle-control", recon.shuffle_control, "Shuffle embeddings across tasks (chance control)");
  recon_cmd->add_flag("--force", force, "Overwrite existing outputs");

  app::ReportArgs report;
  auto* report_cmd = cli.add_subcommand("report", "Verify artifacts and consolidate results");
  report_cmd->add_option("--out", out_dir, "Run directory")->required();

  CLI11_PARSE(cli, argc, argv);

  return app::run_guarded(
      [&]() -> int {
        if (*train_cmd) {
          train.config = config;
          if (!out_dir.empty()) train.out = out_dir;
          if (train_cmd->count("--seed")) train.seed = seed;
          train.force = force;
          return app::cmd_train(train, std::cout);
        }
        if (*collect_cmd) {
          collect.run = out_dir;
          if (collect_cmd->count("--n-tasks")) collect.n_tasks = n_tasks;
          if (collect_cmd->count("--seed")) collect.seed = seed;
          collect.force = force;
          return app::cmd_collect(collect, std::cout);
        }
        if (*analyze_cmd) {
          analyze.run = out_dir;
          if (!matrix.empty()) analyze.matrix = matrix;
          if (method != "both") analyze.methods = {spectrum_method_from_string(method)};
          if (analyze_cmd->count("--n-neighbors")) analyze.n_neighbors = n_neighbors;
          if (analyze_cmd->count("--threshold")) analyze.threshold = threshold;
          analyze.force = force;
          return app::cmd_analyze(analyze, std::cout);
        }
        if (*recon_cmd) {
          recon.run = out_dir;
          if (!matrix.empty()) recon.matrix = matrix;
          if (!k_list.empty()) recon.k = parse_k_list(k_list);
          if (recon_cmd->count("--seeds")) recon.seeds = seeds;
          recon.force = force;
          return app::cmd_reconstruct(recon, std::cout);
        }
        report.run = out_dir;
        return app::cmd_report(report, std::cout);
      },
      std::cerr);
}
