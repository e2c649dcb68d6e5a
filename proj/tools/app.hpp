#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "metasub/io.hpp"
#include "metasub/meta.hpp"
#include "metasub/reconstruct.hpp"
#include "metasub/taskgen.hpp"

namespace metasub::app {

namespace fs = std::filesystem;
using io::Json;

inline constexpr const char* kVersion = "0.3.0";

enum class Family { kSine, kPrototypes };

struct AnalysisConfig {
  Eigen::Index n_neighbors = 20;
  Eigen::Index k_min = 1;
  Eigen::Index k_max = 10;
  double pca_threshold = 0.95;
  double isomap_threshold = 0.10;
  int n_collect_tasks = 500;

  std::vector<Eigen::Index> k_range() const;
};

struct ProbeSettings {
  Eigen::Index hidden = 64;
  double lr = 1e-3;
  int epochs = 500;
  double train_fraction = 0.8;
  std::vector<Eigen::Index> k = {1, 2, 3, 4, 5, 6};
  int seeds = 5;
};

/// Axes expanded as a Cartesian product into child runs.
struct SweepAxes {
  std::vector<int> n;                  // n_sines or n_classes
  std::vector<Eigen::Index> last_hidden;
  std::vector<MetaMethod::Kind> method;
  std::vector<std::uint64_t> seed;

  bool empty() const { return n.empty() && last_hidden.empty() && method.empty() && seed.empty(); }
};

struct MetaConfig {
  std::uint64_t seed = 0;
  MetaMethod::Kind method = MetaMethod::Kind::kMaml;
  Family family = Family::kSine;
  SineFamilySpec sine;
  PrototypeFamilySpec prototypes;
  std::vector<Eigen::Index> hidden = {40};
  double inner_lr = 0.01;
  double outer_lr = 1e-3;
  double curvature_lr = 1e-4;
  int epochs = 100;
  int batches_per_epoch = 100;
  int meta_batch_size = 32;
  AnalysisConfig analysis;
  ProbeSettings probe;
  SweepAxes sweep;
  std::string out;

  void validate() const;
  std::vector<LayerSpec> layers() const;
  LossKind loss() const { return family == Family::kSine ? LossKind::kMse : LossKind::kSoftmaxCrossEntropy; }
  MetaMethod meta_method() const { return {method, inner_lr}; }
  TrainOptions train_options(unsigned threads) const;
  TaskSampler sampler() const;
};

/// Strict parse: unknown keys and missing required keys raise ValidationError
/// naming the field. Required: seed, method, family.
MetaConfig parse_config(const Json& j);
MetaConfig load_config(const fs::path& path);
Json config_to_json(const MetaConfig& c);

struct ChildRun {
  std::string name;
  MetaConfig config;
};
/// Cartesian product of the sweep axes; a config without sweep yields itself.
std::vector<ChildRun> expand_sweep(const MetaConfig& c);

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code and prints progress to `log`.
// ---------------------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

struct CollectArgs {
  fs::path run;
  std::optional<int> n_tasks;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

struct AnalyzeArgs {
  fs::path run;
  std::optional<fs::path> matrix;
  std::vector<SpectrumMethod> methods = {SpectrumMethod::kPca, SpectrumMethod::kIsomap};
  std::optional<Eigen::Index> n_neighbors;
  std::optional<double> threshold;
  bool paramdiff = false;
  bool embedding = false;
  bool force = false;
};

struct ReconstructArgs {
  fs::path run;
  std::optional<fs::path> matrix;
  std::optional<std::vector<Eigen::Index>> k;
  std::optional<int> seeds;
  bool shuffle_control = false;
  bool force = false;
};

struct ReportArgs {
  fs::path run;
};

int cmd_train(const TrainArgs& args, std::ostream& log);
int cmd_collect(const CollectArgs& args, std::ostream& log);
int cmd_analyze(const AnalyzeArgs& args, std::ostream& log);
int cmd_reconstruct(const ReconstructArgs& args, std::ostream& log);
int cmd_report(const ReportArgs& args, std::ostream& log);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitIntegrity = 4;

/// Maps library exceptions to exit codes with a one-line message.
int run_guarded(const std::function<int()>& body, std::ostream& err);

// Run-directory helpers, exposed for tests.
Json read_manifest(const fs::path& run);
void record_artifacts(const fs::path& run, const std::vector<fs::path>& files,
                      const std::string& step, double seconds);

}  // namespace metasub::app
