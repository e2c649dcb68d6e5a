#include <doctest.h>

#include <chrono>
#include <sstream>

#include <unistd.h>

#include "app.hpp"
#include "oracles.hpp"

using namespace metasub;
using namespace metasub::app;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("metasub_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
  static inline int counter = 0;
};

Json tiny_sine(int epochs = 2) {
  return {{"seed", 3},
          {"method", "maml"},
          {"family", "sine"},
          {"sine", {{"n_sines", 2}}},
          {"network", {{"hidden", {8}}}},
          {"epochs", epochs},
          {"batches_per_epoch", 3},
          {"meta_batch_size", 4},
          {"analysis", {{"n_collect_tasks", 40}, {"k_max", 5}}},
          {"probe", {{"epochs", 50}, {"seeds", 2}, {"k", {1, 2}}}}};
}

fs::path write_config(const TempDir& dir, const Json& j, const std::string& name = "config.json") {
  const fs::path p = dir / name;
  io::write_text(p, j.dump(2));
  return p;
}

std::string validation_field(const Json& j) {
  try {
    (void)parse_config(j);
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "";
}

int train_run(const fs::path& config, const fs::path& out, bool force = false) {
  std::ostringstream log;
  TrainArgs a;
  a.config = config;
  a.out = out;
  a.force = force;
  return cmd_train(a, log);
}

int collect_run(const fs::path& run, std::optional<int> n = std::nullopt, std::optional<std::uint64_t> seed = std::nullopt) {
  std::ostringstream log;
  CollectArgs a;
  a.run = run;
  a.n_tasks = n;
  a.seed = seed;
  return cmd_collect(a, log);
}

Json read_json(const fs::path& p) { return Json::parse(io::read_text(p)); }

}  // namespace

TEST_CASE("config: required fields are named") {
  Json j = tiny_sine();
  for (const char* key : {"seed", "method", "family"}) {
    Json k = j;
    k.erase(key);
    CHECK(validation_field(k) == key);
  }
}

TEST_CASE("config: unknown, mistyped and out-of-range fields") {
  Json j = tiny_sine();
  j["epoch"] = 3;
  CHECK(validation_field(j) == "epoch");
  j = tiny_sine();
  j["sine"]["amplitude"] = 1.0;
  CHECK(validation_field(j) == "sine.amplitude");
  j = tiny_sine();
  j["epochs"] = "many";
  CHECK(validation_field(j) == "epochs");
  j = tiny_sine();
  j["inner_lr"] = 0.0;
  CHECK(validation_field(j) == "inner_lr");
  j = tiny_sine();
  j["method"] = "reptile";
  CHECK(validation_field(j) == "method");
  j = tiny_sine();
  j["analysis"]["k_max"] = 100;
  CHECK(validation_field(j) == "analysis.k_max");
  j = tiny_sine();
  j["network"]["hidden"] = Json::array();
  CHECK(validation_field(j) == "network.hidden");
}

TEST_CASE("config: json roundtrip") {
  Json j = tiny_sine();
  j["sweep"] = {{"n", {2, 3}}, {"seed", {1, 2}}, {"method", {"maml", "meta_curvature"}}};
  const MetaConfig c = parse_config(j);
  const MetaConfig d = parse_config(config_to_json(c));
  CHECK(config_to_json(d) == config_to_json(c));
  CHECK(d.sine.n_sines == 2);
  CHECK(d.sweep.method.size() == 2);
}

TEST_CASE("sweep expansion is a Cartesian product") {
  Json j = tiny_sine();
  j["family"] = "prototypes";
  j["sweep"] = {{"n", {3, 4, 8}}, {"last_hidden", {32, 64}}, {"seed", {1, 2, 3}}};
  j.erase("sine");
  const auto runs = expand_sweep(parse_config(j));
  REQUIRE(runs.size() == 18);
  CHECK(runs.front().name == "n3_w32_s1");
  CHECK(runs.back().name == "n8_w64_s3");
  CHECK(runs.back().config.prototypes.n_classes == 8);
  CHECK(runs.back().config.hidden.back() == 64);
  CHECK(runs.back().config.seed == 3);
  CHECK(runs.back().config.sweep.empty());
  CHECK(expand_sweep(parse_config(tiny_sine())).size() == 1);
}

TEST_CASE("train: epochs=0 leaves the initialization") {
  TempDir dir;
  REQUIRE(train_run(write_config(dir, tiny_sine(0)), dir / "run") == kExitOk);
  const auto ck = io::load_checkpoint(dir / "run", "checkpoint");
  const MetaConfig c = parse_config(tiny_sine(0));
  SeededRng rng(c.seed);
  CHECK(ck.state.params.theta == MlpParams::glorot(c.layers(), rng).theta);
  CHECK(io::read_text(dir / "run" / "history.csv") == "epoch,mean_query_loss,mean_query_accuracy\n");
}

TEST_CASE("train: refuses to overwrite without --force") {
  TempDir dir;
  const fs::path cfg = write_config(dir, tiny_sine(1));
  REQUIRE(train_run(cfg, dir / "run") == kExitOk);
  CHECK_THROWS_AS(train_run(cfg, dir / "run"), ArgumentError);
  std::ostringstream err;
  CHECK(run_guarded([&] { return train_run(cfg, dir / "run"); }, err) == kExitInvalid);
  CHECK(err.str().find("--force") != std::string::npos);
  CHECK(train_run(cfg, dir / "run", true) == kExitOk);
  REQUIRE(collect_run(dir / "run", 3) == kExitOk);
  CHECK_THROWS_AS(collect_run(dir / "run", 3), ArgumentError);
}

TEST_CASE("train: divergence exits with the diverged code and names the epoch") {
  TempDir dir;
  Json j = tiny_sine(3);
  j["inner_lr"] = 1e300;
  const fs::path cfg = write_config(dir, j);
  std::ostringstream err;
  CHECK(run_guarded([&] { return train_run(cfg, dir / "run"); }, err) == kExitDiverged);
  CHECK(err.str().find("epoch 1") != std::string::npos);
}

TEST_CASE("train: sine N=2 desk config runs well inside its time budget") {
  TempDir dir;
  Json j = {{"seed", 1}, {"method", "maml"}, {"family", "sine"}, {"sine", {{"n_sines", 2}}},
            {"epochs", 30}, {"batches_per_epoch", 20}, {"meta_batch_size", 32}};
  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE(train_run(write_config(dir, j), dir / "run") == kExitOk);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(s < 600.0);
  CHECK(io::read_csv_table(dir / "run" / "history.csv").rows.size() == 30);
}

TEST_CASE("collect: shape, determinism and file size") {
  TempDir dir;
  const fs::path cfg = write_config(dir, tiny_sine(1));
  REQUIRE(train_run(cfg, dir / "a") == kExitOk);
  REQUIRE(train_run(cfg, dir / "b") == kExitOk);

  REQUIRE(collect_run(dir / "a", 2) == kExitOk);
  CHECK(io::load_adapted(dir / "a" / "adapted.msub").count() == 2);

  CollectArgs again;
  again.run = dir / "a";
  again.n_tasks = 2;
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_collect(again, log), ArgumentError);

  fs::remove_all(dir / "a" / "adapted.msub");
  REQUIRE(collect_run(dir / "a", 25, 77) == kExitOk);
  REQUIRE(collect_run(dir / "b", 25, 77) == kExitOk);
  for (const char* f : {"adapted.msub", "adapted.msub.json", "tasks.json"}) {
    CHECK(io::read_text(dir / "a" / f) == io::read_text(dir / "b" / f));
  }
  CHECK_THROWS_AS(collect_run(dir / "b", 1, 77), ValidationError);
}

TEST_CASE("collect: 500 tasks on the 40-unit sine net") {
  TempDir dir;
  Json j = tiny_sine(0);
  j["network"]["hidden"] = {40};
  j["analysis"] = Json::object();
  REQUIRE(train_run(write_config(dir, j), dir / "run") == kExitOk);
  REQUIRE(collect_run(dir / "run") == kExitOk);
  const std::uintmax_t d = 40 + 40 + 40 + 1;
  CHECK(fs::file_size(dir / "run" / "adapted.msub") == 500 * d * 8 + io::kHeaderBytes);
}

TEST_CASE("collect: checkpoint/config layer mismatch is a format error") {
  TempDir dir;
  REQUIRE(train_run(write_config(dir, tiny_sine(0)), dir / "run") == kExitOk);
  Json c = read_json(dir / "run" / "config.json");
  c["network"]["hidden"] = {9};
  io::write_text(dir / "run" / "config.json", c.dump());
  CHECK_THROWS_AS(collect_run(dir / "run"), FormatError);
}

namespace {

AdaptedParamsMatrix bare_matrix(Matrix rows) {
  AdaptedParamsMatrix m;
  m.rows = std::move(rows);
  return m;
}

int analyze_matrix(const fs::path& run, SpectrumMethod method, std::optional<Eigen::Index> nn = std::nullopt) {
  std::ostringstream log;
  AnalyzeArgs a;
  a.run = run;
  a.methods = {method};
  a.n_neighbors = nn;
  return cmd_analyze(a, log);
}

}  // namespace

TEST_CASE("analyze: rank-1 matrix gives PCA dimension 1") {
  TempDir dir;
  SeededRng rng(1);
  const Matrix x = oracle::random_matrix(50, 1, rng) * oracle::random_matrix(1, 6, rng);
  io::save_adapted(dir / "adapted.msub", bare_matrix(x));
  REQUIRE(analyze_matrix(dir.path, SpectrumMethod::kPca) == kExitOk);
  const Json j = read_json(dir / "spectrum_pca.json");
  CHECK(j.at("estimated_dim") == 1);
  CHECK(fs::exists(dir / "spectrum_pca.svg"));
  CHECK(io::read_csv_table(dir / "spectrum_pca.csv").rows.size() == 6);
}

TEST_CASE("analyze: circle fixture under a complete neighborhood") {
  TempDir dir;
  const Eigen::Index m = 120;
  const Matrix q = [] {
    SeededRng rng(2);
    return oracle::random_orthogonal(3, rng);
  }();
  Matrix x(m, 3);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double t = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(m);
    x.row(i) = Eigen::RowVector3d(std::cos(t), std::sin(t), 0.0) * q;
  }
  io::save_adapted(dir / "adapted.msub", bare_matrix(x));
  REQUIRE(analyze_matrix(dir.path, SpectrumMethod::kIsomap, m - 1) == kExitOk);
  const Json j = read_json(dir / "spectrum_isomap.json");
  CHECK(j.at("estimated_dim") == 2);
  CHECK(j.at("normalized")[0] == 1.0);
}

TEST_CASE("analyze: disconnected graph suggests a larger neighborhood") {
  TempDir dir;
  Matrix x(10, 2);
  for (Eigen::Index i = 0; i < 10; ++i) x.row(i) << (i < 5 ? 0.0 : 100.0) + 0.1 * static_cast<double>(i), 0.0;
  io::save_adapted(dir / "adapted.msub", bare_matrix(x));
  try {
    analyze_matrix(dir.path, SpectrumMethod::kIsomap, 2);
    FAIL("expected DisconnectedGraphError");
  } catch (const DisconnectedGraphError& e) {
    CHECK(std::string(e.what()).find("--n-neighbors 4") != std::string::npos);
    CHECK(e.components().size() == 2);
  }
}

TEST_CASE("pipeline: analyze, paramdiff, reconstruct and report") {
  TempDir dir;
  const fs::path run = dir / "run";
  REQUIRE(train_run(write_config(dir, tiny_sine(2)), run) == kExitOk);
  REQUIRE(collect_run(run) == kExitOk);

  std::ostringstream log;
  AnalyzeArgs an;
  an.run = run;
  an.paramdiff = true;
  an.embedding = true;
  REQUIRE(cmd_analyze(an, log) == kExitOk);
  for (const char* f : {"spectrum_pca.csv", "spectrum_isomap.json", "paramdiff.csv", "paramdiff_layers.csv",
                        "embedding_2d.csv", "embedding_2d.svg"}) {
    CHECK(fs::exists(run / f));
  }
  CHECK(io::read_csv_table(run / "paramdiff_layers.csv").rows.size() == 2);
  CHECK(io::read_csv_table(run / "paramdiff.csv").rows.size() == 8 + 8 + 8 + 1);

  ReconstructArgs rc;
  rc.run = run;
  rc.k = std::vector<Eigen::Index>{1};
  REQUIRE(cmd_reconstruct(rc, log) == kExitOk);
  const auto probe = io::read_csv_table(run / "probe.csv");
  REQUIRE(probe.rows.size() == 2);
  for (const auto& row : probe.rows) CHECK(row[probe.column("k")] == "1");

  ReportArgs rp{run};
  REQUIRE(cmd_report(rp, log) == kExitOk);
  const Json report = read_json(run / "report.json");
  const Json& r = report.at("runs").at(0);
  CHECK(r.at("estimated_dim").contains("pca"));
  CHECK(r.at("estimated_dim").contains("isomap"));
  CHECK(r.at("n") == 2);
  CHECK(io::read_text(run / "summary.txt").find("dim_pca=") != std::string::npos);

  io::write_text(run / "history.csv", "epoch,mean_query_loss,mean_query_accuracy\n1,0,\n");
  try {
    (void)cmd_report(rp, log);
    FAIL("expected IntegrityError");
  } catch (const IntegrityError& e) {
    CHECK(e.file().find("history.csv") != std::string::npos);
  }
  std::ostringstream err;
  CHECK(run_guarded([&] { return cmd_report(rp, log); }, err) == kExitIntegrity);
}

TEST_CASE("reconstruct: shuffled control sits near the baseline") {
  TempDir dir;
  Json j = tiny_sine(5);
  j["analysis"]["n_collect_tasks"] = 150;
  j["probe"] = {{"epochs", 300}, {"seeds", 1}, {"k", {3}}, {"lr", 0.01}};
  const fs::path run = dir / "run";
  REQUIRE(train_run(write_config(dir, j), run) == kExitOk);
  REQUIRE(collect_run(run) == kExitOk);
  std::ostringstream log;
  ReconstructArgs rc;
  rc.run = run;
  rc.shuffle_control = true;
  REQUIRE(cmd_reconstruct(rc, log) == kExitOk);
  const Json s = read_json(run / "probe_shuffled.json");
  const double baseline = s.at("baseline");
  const double mse = s.at("median_by_k")[0].at("median");
  CHECK(mse > 0.8 * baseline);
  CHECK(s.at("shuffled") == true);
}

TEST_CASE("reconstruct: misaligned descriptors are a format error") {
  TempDir dir;
  const fs::path run = dir / "run";
  REQUIRE(train_run(write_config(dir, tiny_sine(0)), run) == kExitOk);
  REQUIRE(collect_run(run, 10) == kExitOk);
  io::save_adapted(run / "other.msub", bare_matrix(Matrix::Ones(10, 25)));
  std::ostringstream log;
  ReconstructArgs rc;
  rc.run = run;
  rc.matrix = run / "other.msub";
  CHECK_THROWS_AS(cmd_reconstruct(rc, log), FormatError);
}

TEST_CASE("report: empty directory lists missing artifacts") {
  TempDir dir;
  std::ostringstream log, err;
  ReportArgs rp{dir.path};
  try {
    (void)cmd_report(rp, log);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    for (const char* f : {"manifest.json", "config.json", "checkpoint.json", "history.csv"}) {
      CHECK(msg.find(f) != std::string::npos);
    }
  }
  CHECK(run_guarded([&] { return cmd_report(rp, log); }, err) == kExitIntegrity);
}

TEST_CASE("end-to-end determinism of the report") {
  TempDir a, b;
  for (const TempDir* d : {&a, &b}) {
    const fs::path run = d->path / "run";
    REQUIRE(train_run(write_config(*d, tiny_sine(2)), run) == kExitOk);
    REQUIRE(collect_run(run) == kExitOk);
    std::ostringstream log;
    AnalyzeArgs an;
    an.run = run;
    REQUIRE(cmd_analyze(an, log) == kExitOk);
    ReportArgs rp{run};
    REQUIRE(cmd_report(rp, log) == kExitOk);
  }
  CHECK(io::read_text(a / "run" / "report.json") == io::read_text(b / "run" / "report.json"));
}

TEST_CASE("sweep: children are trained, collected and reported") {
  TempDir dir;
  Json j = tiny_sine(1);
  j["sweep"] = {{"n", {1, 2}}, {"method", {"maml", "meta_curvature"}}};
  const fs::path run = dir / "sweep";
  REQUIRE(train_run(write_config(dir, j), run) == kExitOk);
  REQUIRE(collect_run(run) == kExitOk);
  for (const char* child : {"maml_n1", "maml_n2", "meta_curvature_n1", "meta_curvature_n2"}) {
    CHECK(fs::exists(run / child / "adapted.msub"));
  }
  CHECK(fs::exists(run / "meta_curvature_n2" / "checkpoint_G0.msub"));
  std::ostringstream log;
  ReportArgs rp{run};
  REQUIRE(cmd_report(rp, log) == kExitOk);
  CHECK(read_json(run / "report.json").at("runs").size() == 4);
}

TEST_CASE("train: toy classification N=3 reaches high post-adaptation accuracy in 30 epochs") {
  TempDir dir;
  Json j = {{"seed", 1}, {"method", "maml"}, {"family", "prototypes"},
            {"prototypes", {{"n_classes", 3}}}, {"epochs", 30}};
  REQUIRE(train_run(write_config(dir, j), dir / "run") == kExitOk);
  const auto h = io::read_csv_table(dir / "run" / "history.csv");
  REQUIRE(h.rows.size() == 30);
  CHECK(std::stod(h.rows.back()[h.column("mean_query_accuracy")]) > 0.9);
}
