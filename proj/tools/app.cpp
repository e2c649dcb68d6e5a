#include "app.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

namespace metasub::app {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Strict JSON reading
// ---------------------------------------------------------------------------

class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ValidationError(where(""), "must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out, bool required = false) {
    if (!has(key)) {
      if (required) throw ValidationError(where(key), "required field is missing");
      return;
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ValidationError(where(key), "has the wrong type");
    }
  }

  const Json& at(const std::string& key) { return j_.at(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError(where(it.key()), "unknown field");
    }
  }

  std::string where(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  const Json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

MetaMethod::Kind parse_method(const std::string& s, const std::string& field) {
  if (s == "maml") return MetaMethod::Kind::kMaml;
  if (s == "meta_curvature") return MetaMethod::Kind::kMetaCurvature;
  throw ValidationError(field, "must be 'maml' or 'meta_curvature', got '" + s + "'");
}

std::string method_name(MetaMethod::Kind k) {
  return k == MetaMethod::Kind::kMaml ? "maml" : "meta_curvature";
}

std::string family_name(Family f) { return f == Family::kSine ? "sine" : "prototypes"; }

// Rejects a path that already holds `file` unless forced.
void guard_overwrite(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) {
    throw ArgumentError(file.string() + " already exists; pass --force to overwrite");
  }
}

bool is_sweep_parent(const fs::path& run) { return fs::exists(run / "sweep.json"); }

std::vector<fs::path> sweep_children(const fs::path& run) {
  const Json j = Json::parse(io::read_text(run / "sweep.json"));
  std::vector<fs::path> out;
  for (const auto& c : j.at("children")) out.push_back(run / c.get<std::string>());
  return out;
}

// Applies `step` to every child of a sweep parent, or to `run` itself.
int for_each_run(const fs::path& run, const std::function<int(const fs::path&)>& step) {
  if (!is_sweep_parent(run)) return step(run);
  int worst = kExitOk;
  for (const auto& child : sweep_children(run)) worst = std::max(worst, step(child));
  return worst;
}

std::vector<Task> sample_tasks(const MetaConfig& c, int n, SeededRng& rng) {
  const TaskSampler sampler = c.sampler();
  std::vector<Task> tasks;
  tasks.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) tasks.push_back(sampler(rng));
  return tasks;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void write_svg_from_spectrum_csv(const fs::path& csv, const fs::path& svg, const std::string& title,
                                 const std::string& y_label) {
  const io::CsvTable t = io::read_csv_table(csv);
  io::Series s{"normalized", {}, {}};
  const std::size_t kc = t.column("k"), nc = t.column("normalized");
  for (const auto& row : t.rows) {
    s.x.push_back(std::stod(row[kc]));
    s.y.push_back(std::stod(row[nc]));
  }
  io::write_text(svg, io::svg_line_plot({s}, title, "k", y_label));
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::vector<Eigen::Index> AnalysisConfig::k_range() const {
  std::vector<Eigen::Index> ks;
  for (Eigen::Index k = k_min; k <= k_max; ++k) ks.push_back(k);
  return ks;
}

std::vector<LayerSpec> MetaConfig::layers() const {
  std::vector<Eigen::Index> widths;
  if (family == Family::kSine) {
    widths.push_back(1);
  } else {
    widths.push_back(prototypes.input_dim);
  }
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(family == Family::kSine ? 1 : prototypes.n_classes);
  return mlp_layers(widths);
}

TrainOptions MetaConfig::train_options(unsigned threads) const {
  TrainOptions o;
  o.method = meta_method();
  o.outer.lr = outer_lr;
  o.curvature.lr = curvature_lr;
  o.epochs = epochs;
  o.batches_per_epoch = batches_per_epoch;
  o.meta_batch_size = meta_batch_size;
  o.threads = threads;
  return o;
}

TaskSampler MetaConfig::sampler() const {
  if (family == Family::kSine) {
    return [spec = sine](SeededRng& rng) { return sample_sine_task(spec, rng); };
  }
  return [spec = prototypes, grid = grid_prototypes(prototypes)](SeededRng& rng) {
    return sample_prototype_task(spec, grid, rng);
  };
}

void MetaConfig::validate() const {
  if (family == Family::kSine) {
    sine.validate();
  } else {
    prototypes.validate();
  }
  if (hidden.empty()) throw ValidationError("network.hidden", "needs at least one hidden layer");
  for (auto w : hidden) {
    if (w < 1) throw ValidationError("network.hidden", "widths must be >= 1");
  }
  if (!(inner_lr > 0.0)) throw ValidationError("inner_lr", "must be > 0");
  if (!(outer_lr > 0.0)) throw ValidationError("outer_lr", "must be > 0");
  if (!(curvature_lr > 0.0)) throw ValidationError("curvature_lr", "must be > 0");
  if (epochs < 0) throw ValidationError("epochs", "must be >= 0");
  if (batches_per_epoch < 1) throw ValidationError("batches_per_epoch", "must be >= 1");
  if (meta_batch_size < 1) throw ValidationError("meta_batch_size", "must be >= 1");
  const auto& a = analysis;
  if (a.n_collect_tasks < 2) throw ValidationError("analysis.n_collect_tasks", "must be >= 2");
  if (a.n_neighbors < 1) throw ValidationError("analysis.n_neighbors", "must be >= 1");
  if (a.k_min < 1) throw ValidationError("analysis.k_min", "must be >= 1");
  if (a.k_max < a.k_min) throw ValidationError("analysis.k_max", "must be >= k_min");
  const Eigen::Index limit =
      std::min<Eigen::Index>(a.n_collect_tasks - 1, parameter_count(layers()));
  if (a.k_max > limit) {
    throw ValidationError("analysis.k_max", "must not exceed min(n_collect_tasks - 1, parameter count) = " +
                                                std::to_string(limit));
  }
  if (!(a.pca_threshold > 0.0 && a.pca_threshold <= 1.0)) {
    throw ValidationError("analysis.pca_threshold", "must lie in (0, 1]");
  }
  if (!(a.isomap_threshold > 0.0)) throw ValidationError("analysis.isomap_threshold", "must be > 0");
  const auto& p = probe;
  if (p.hidden < 1) throw ValidationError("probe.hidden", "must be >= 1");
  if (!(p.lr > 0.0)) throw ValidationError("probe.lr", "must be > 0");
  if (p.epochs < 1) throw ValidationError("probe.epochs", "must be >= 1");
  if (!(p.train_fraction > 0.0 && p.train_fraction < 1.0)) {
    throw ValidationError("probe.train_fraction", "must lie in (0, 1)");
  }
  if (p.k.empty()) throw ValidationError("probe.k", "must list at least one dimension");
  for (auto k : p.k) {
    if (k < 1) throw ValidationError("probe.k", "dimensions must be >= 1");
  }
  if (p.seeds < 1) throw ValidationError("probe.seeds", "must be >= 1");
}

MetaConfig parse_config(const Json& j) {
  MetaConfig c;
  ObjectReader top(j, "");
  top.get("seed", c.seed, true);

  // method and family may be arrays only through the sweep block.
  std::string method;
  top.get("method", method, true);
  c.method = parse_method(method, "method");
  std::string family;
  top.get("family", family, true);
  if (family == "sine") {
    c.family = Family::kSine;
  } else if (family == "prototypes") {
    c.family = Family::kPrototypes;
  } else {
    throw ValidationError("family", "must be 'sine' or 'prototypes', got '" + family + "'");
  }

  if (top.has("sine")) {
    ObjectReader r(top.at("sine"), "sine");
    r.get("n_sines", c.sine.n_sines);
    r.get("amp_lo", c.sine.amp_lo);
    r.get("amp_hi", c.sine.amp_hi);
    r.get("x_lo", c.sine.x_lo);
    r.get("x_hi", c.sine.x_hi);
    r.get("support_size", c.sine.support_size);
    r.get("query_size", c.sine.query_size);
    r.finish();
  }
  if (top.has("prototypes")) {
    ObjectReader r(top.at("prototypes"), "prototypes");
    r.get("n_classes", c.prototypes.n_classes);
    r.get("shots", c.prototypes.shots);
    r.get("input_dim", c.prototypes.input_dim);
    r.get("grid_points_per_axis", c.prototypes.grid_points_per_axis);
    r.get("grid_spacing", c.prototypes.grid_spacing);
    r.get("noise_std", c.prototypes.noise_std);
    r.get("query_per_class", c.prototypes.query_per_class);
    r.finish();
  }
  if (top.has("network")) {
    ObjectReader r(top.at("network"), "network");
    r.get("hidden", c.hidden);
    r.finish();
  }
  top.get("inner_lr", c.inner_lr);
  top.get("outer_lr", c.outer_lr);
  top.get("curvature_lr", c.curvature_lr);
  top.get("epochs", c.epochs);
  top.get("batches_per_epoch", c.batches_per_epoch);
  top.get("meta_batch_size", c.meta_batch_size);
  if (top.has("analysis")) {
    ObjectReader r(top.at("analysis"), "analysis");
    r.get("n_neighbors", c.analysis.n_neighbors);
    r.get("k_min", c.analysis.k_min);
    r.get("k_max", c.analysis.k_max);
    r.get("pca_threshold", c.analysis.pca_threshold);
    r.get("isomap_threshold", c.analysis.isomap_threshold);
    r.get("n_collect_tasks", c.analysis.n_collect_tasks);
    r.finish();
  }
  if (top.has("probe")) {
    ObjectReader r(top.at("probe"), "probe");
    r.get("hidden", c.probe.hidden);
    r.get("lr", c.probe.lr);
    r.get("epochs", c.probe.epochs);
    r.get("train_fraction", c.probe.train_fraction);
    r.get("k", c.probe.k);
    r.get("seeds", c.probe.seeds);
    r.finish();
  }
  if (top.has("sweep")) {
    ObjectReader r(top.at("sweep"), "sweep");
    r.get("n", c.sweep.n);
    r.get("last_hidden", c.sweep.last_hidden);
    r.get("seed", c.sweep.seed);
    std::vector<std::string> methods;
    r.get("method", methods);
    for (const auto& m : methods) c.sweep.method.push_back(parse_method(m, "sweep.method"));
    r.finish();
  }
  top.get("out", c.out);
  top.finish();

  c.validate();
  for (const auto& child : expand_sweep(c)) child.config.validate();
  return c;
}

MetaConfig load_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(io::read_text(path));
  } catch (const Json::parse_error& e) {
    throw ValidationError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

Json config_to_json(const MetaConfig& c) {
  Json j = {
      {"seed", c.seed},
      {"method", method_name(c.method)},
      {"family", family_name(c.family)},
      {"sine",
       {{"n_sines", c.sine.n_sines},
        {"amp_lo", c.sine.amp_lo},
        {"amp_hi", c.sine.amp_hi},
        {"x_lo", c.sine.x_lo},
        {"x_hi", c.sine.x_hi},
        {"support_size", c.sine.support_size},
        {"query_size", c.sine.query_size}}},
      {"prototypes",
       {{"n_classes", c.prototypes.n_classes},
        {"shots", c.prototypes.shots},
        {"input_dim", c.prototypes.input_dim},
        {"grid_points_per_axis", c.prototypes.grid_points_per_axis},
        {"grid_spacing", c.prototypes.grid_spacing},
        {"noise_std", c.prototypes.noise_std},
        {"query_per_class", c.prototypes.query_per_class}}},
      {"network", {{"hidden", c.hidden}}},
      {"inner_lr", c.inner_lr},
      {"outer_lr", c.outer_lr},
      {"curvature_lr", c.curvature_lr},
      {"epochs", c.epochs},
      {"batches_per_epoch", c.batches_per_epoch},
      {"meta_batch_size", c.meta_batch_size},
      {"analysis",
       {{"n_neighbors", c.analysis.n_neighbors},
        {"k_min", c.analysis.k_min},
        {"k_max", c.analysis.k_max},
        {"pca_threshold", c.analysis.pca_threshold},
        {"isomap_threshold", c.analysis.isomap_threshold},
        {"n_collect_tasks", c.analysis.n_collect_tasks}}},
      {"probe",
       {{"hidden", c.probe.hidden},
        {"lr", c.probe.lr},
        {"epochs", c.probe.epochs},
        {"train_fraction", c.probe.train_fraction},
        {"k", c.probe.k},
        {"seeds", c.probe.seeds}}},
      {"out", c.out}};
  if (!c.sweep.empty()) {
    Json s = Json::object();
    if (!c.sweep.n.empty()) s["n"] = c.sweep.n;
    if (!c.sweep.last_hidden.empty()) s["last_hidden"] = c.sweep.last_hidden;
    if (!c.sweep.seed.empty()) s["seed"] = c.sweep.seed;
    if (!c.sweep.method.empty()) {
      Json m = Json::array();
      for (auto k : c.sweep.method) m.push_back(method_name(k));
      s["method"] = m;
    }
    j["sweep"] = s;
  }
  return j;
}

std::vector<ChildRun> expand_sweep(const MetaConfig& c) {
  if (c.sweep.empty()) return {{"", c}};
  MetaConfig base = c;
  base.sweep = {};
  std::vector<ChildRun> runs{{"", base}};
  auto expand = [&runs](auto values, auto apply) {
    if (values.empty()) return;
    std::vector<ChildRun> next;
    for (const auto& r : runs) {
      for (const auto& v : values) {
        ChildRun child = r;
        const std::string tag = apply(child.config, v);
        child.name = child.name.empty() ? tag : child.name + "_" + tag;
        next.push_back(std::move(child));
      }
    }
    runs = std::move(next);
  };
  expand(c.sweep.method, [](MetaConfig& m, MetaMethod::Kind k) {
    m.method = k;
    return method_name(k);
  });
  expand(c.sweep.n, [](MetaConfig& m, int n) {
    if (m.family == Family::kSine) {
      m.sine.n_sines = n;
    } else {
      m.prototypes.n_classes = n;
    }
    return "n" + std::to_string(n);
  });
  expand(c.sweep.last_hidden, [](MetaConfig& m, Eigen::Index w) {
    m.hidden.back() = w;
    return "w" + std::to_string(w);
  });
  expand(c.sweep.seed, [](MetaConfig& m, std::uint64_t s) {
    m.seed = s;
    return "s" + std::to_string(s);
  });
  return runs;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Json read_manifest(const fs::path& run) {
  const fs::path path = run / "manifest.json";
  if (!fs::exists(path)) return Json::object();
  return Json::parse(io::read_text(path));
}

void record_artifacts(const fs::path& run, const std::vector<fs::path>& files,
                      const std::string& step, double seconds) {
  Json m = read_manifest(run);
  m["software_version"] = kVersion;
  if (!m.contains("artifacts")) m["artifacts"] = Json::object();
  for (const auto& f : files) {
    const std::string rel = fs::relative(f, run).generic_string();
    m["artifacts"][rel] = {{"sha256", io::sha256_file(f)}, {"bytes", fs::file_size(f)}};
  }
  m["timings"][step] = seconds;
  io::write_text(run / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

std::mutex log_mutex;

void say(std::ostream& log, const std::string& msg) {
  std::lock_guard<std::mutex> lock(log_mutex);
  log << msg << '\n';
}

void train_one(const MetaConfig& c, const fs::path& dir, bool force, unsigned threads,
               std::ostream& log) {
  guard_overwrite(dir / "checkpoint.json", force);
  fs::create_directories(dir);
  const auto t0 = Clock::now();

  SeededRng init_rng(c.seed);
  MetaState init = MetaState::create(MlpParams::glorot(c.layers(), init_rng), c.method);
  SeededRng task_rng(c.seed ^ 0x5DEECE66DULL);
  TrainResult result = train(std::move(init), c.train_options(threads), c.sampler(), task_rng);

  std::vector<fs::path> files;
  MetaConfig snapshot = c;
  snapshot.out = dir.generic_string();
  io::write_text(dir / "config.json", config_to_json(snapshot).dump(2) + "\n");
  files.push_back(dir / "config.json");
  io::CheckpointInfo info{c.meta_method(), c.seed, c.loss()};
  for (auto& f : io::save_checkpoint(dir, "checkpoint", result.state, info)) files.push_back(f);
  io::write_history_csv(dir / "history.csv", result.history);
  files.push_back(dir / "history.csv");

  Json m = read_manifest(dir);
  m["config"] = config_to_json(snapshot);
  io::write_text(dir / "manifest.json", m.dump(2) + "\n");
  record_artifacts(dir, files, "train", seconds_since(t0));

  std::ostringstream msg;
  msg << "trained " << dir.generic_string() << " (" << c.epochs << " epochs)";
  if (!result.history.empty()) {
    msg << ", final query loss " << result.history.back().mean_query_loss;
    if (result.history.back().mean_query_accuracy) {
      msg << ", accuracy " << *result.history.back().mean_query_accuracy;
    }
  }
  say(log, msg.str());
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& log) {
  MetaConfig c = load_config(args.config);
  if (args.seed) c.seed = *args.seed;
  const fs::path out = args.out ? *args.out : fs::path(c.out.empty() ? "run" : c.out);
  const auto children = expand_sweep(c);
  if (children.size() == 1 && children.front().name.empty()) {
    train_one(children.front().config, out, args.force, worker_threads(), log);
    return kExitOk;
  }
  guard_overwrite(out / "sweep.json", args.force);
  fs::create_directories(out);
  Json names = Json::array();
  for (const auto& ch : children) names.push_back(ch.name);
  io::write_text(out / "sweep.json", Json{{"children", names}, {"config", config_to_json(c)}}.dump(2) + "\n");
  record_artifacts(out, {out / "sweep.json"}, "sweep", 0.0);
  const auto t0 = Clock::now();
  parallel_for(children.size(), [&](std::size_t i) {
    train_one(children[i].config, out / children[i].name, args.force, 1, log);
  });
  say(log, "sweep of " + std::to_string(children.size()) + " runs finished in " +
               std::to_string(seconds_since(t0)) + " s");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// collect
// ---------------------------------------------------------------------------

int cmd_collect(const CollectArgs& args, std::ostream& log) {
  return for_each_run(args.run, [&](const fs::path& run) {
    const auto t0 = Clock::now();
    const MetaConfig c = load_config(run / "config.json");
    const io::Checkpoint ck = io::load_checkpoint(run, "checkpoint");
    if (ck.state.params.layers != c.layers()) {
      throw FormatError(run.string() + ": checkpoint layers do not match config.json");
    }
    const int n = args.n_tasks.value_or(c.analysis.n_collect_tasks);
    if (n < 2) throw ValidationError("n_tasks", "must be >= 2");
    const std::uint64_t seed = args.seed.value_or(c.seed ^ 0x9E3779B97F4A7C15ULL);
    guard_overwrite(run / "adapted.msub", args.force);

    SeededRng rng(seed);
    const std::vector<Task> tasks = sample_tasks(c, n, rng);
    const AdaptedParamsMatrix m = collect_adapted(ck.state, tasks, ck.info.method);
    io::save_adapted(run / "adapted.msub", m,
                     Json{{"seed", seed}, {"family", family_name(c.family)},
                          {"method", method_name(c.method)}});
    io::write_tasks(run / "tasks.json", tasks);
    record_artifacts(run, {run / "adapted.msub", run / "adapted.msub.json", run / "tasks.json"},
                     "collect", seconds_since(t0));
    say(log, "collected " + std::to_string(m.count()) + " x " + std::to_string(m.dim()) +
                 " adapted parameters into " + (run / "adapted.msub").generic_string());
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

int cmd_analyze(const AnalyzeArgs& args, std::ostream& log) {
  return for_each_run(args.run, [&](const fs::path& run) {
    const auto t0 = Clock::now();
    AnalysisConfig a;
    std::uint64_t seed = 0;
    if (fs::exists(run / "config.json")) {
      const MetaConfig c = load_config(run / "config.json");
      a = c.analysis;
      seed = c.seed;
    }
    const fs::path matrix = args.matrix.value_or(run / "adapted.msub");
    const AdaptedParamsMatrix points = io::load_adapted(matrix);
    std::vector<Eigen::Index> ks;
    for (auto k : a.k_range()) {
      if (k <= std::min<Eigen::Index>(points.count() - 1, points.dim())) ks.push_back(k);
    }
    if (ks.empty()) throw ArgumentError("no analysis dimension fits a " + std::to_string(points.count()) + "-row matrix");

    std::vector<fs::path> files;
    for (SpectrumMethod method : args.methods) {
      const std::string name = to_string(method);
      const fs::path csv = run / ("spectrum_" + name + ".csv");
      guard_overwrite(csv, args.force);
      const double threshold = args.threshold.value_or(
          method == SpectrumMethod::kPca ? a.pca_threshold : a.isomap_threshold);
      const Eigen::Index nn = args.n_neighbors.value_or(a.n_neighbors);
      SpectrumReport r;
      try {
        r = spectrum(points.rows, method, ks, nn, threshold);
      } catch (const DisconnectedGraphError& e) {
        throw DisconnectedGraphError(std::string(e.what()) + " Try --n-neighbors " +
                                         std::to_string(nn * 2) + ".",
                                     e.components());
      }
      io::write_spectrum_csv(csv, r);
      Json j = io::spectrum_to_json(r);
      j["seed"] = seed;
      j["rows"] = points.count();
      io::write_text(run / ("spectrum_" + name + ".json"), j.dump(2) + "\n");
      const fs::path svg = run / ("spectrum_" + name + ".svg");
      write_svg_from_spectrum_csv(csv, svg, name + " spectrum",
                                  method == SpectrumMethod::kPca ? "cumulative explained variance"
                                                                 : "normalized reconstruction error");
      files.insert(files.end(), {csv, run / ("spectrum_" + name + ".json"), svg});
      say(log, run.generic_string() + ": " + name + " estimated_dim " + std::to_string(r.estimated_dim) +
                   (r.saturated ? " (saturated)" : ""));
    }

    if (args.embedding) {
      const IsomapResult emb = isomap(points.rows, args.n_neighbors.value_or(a.n_neighbors), 2);
      const fs::path csv = run / "embedding_2d.csv";
      guard_overwrite(csv, args.force);
      io::write_matrix_csv(csv, emb.embedding);
      io::write_text(run / "embedding_2d.svg", io::svg_scatter(io::read_matrix_csv(csv), "2-D isomap embedding"));
      files.insert(files.end(), {csv, run / "embedding_2d.svg"});
    }

    if (args.paramdiff) {
      if (points.layers.empty()) throw FormatError("--paramdiff needs layer metadata next to the matrix");
      const fs::path csv = run / "paramdiff.csv";
      guard_overwrite(csv, args.force);
      const ParamDiff d = mean_abs_param_diff(points.rows, points.layers);
      const MlpParams shape = MlpParams::zeros(points.layers);
      std::ostringstream per;
      per << "index,layer,row,col,mean_abs_diff\n";
      for (Eigen::Index i = 0; i < d.per_param.size(); ++i) {
        const auto loc = shape.locate(i);
        per << i << ',' << loc.layer << ',' << loc.row << ',' << loc.col << ','
            << io::format_double(d.per_param(i)) << '\n';
      }
      io::write_text(csv, per.str());
      std::ostringstream layer;
      layer << "layer,param_count,mean_abs_diff\n";
      for (std::size_t l = 0; l < d.per_layer.size(); ++l) {
        layer << l << ',' << points.layers[l].param_count() << ','
              << io::format_double(d.per_layer[l]) << '\n';
      }
      io::write_text(run / "paramdiff_layers.csv", layer.str());
      files.insert(files.end(), {csv, run / "paramdiff_layers.csv"});
      say(log, run.generic_string() + ": wrote parameter-change map");
    }
    record_artifacts(run, files, "analyze", seconds_since(t0));
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

int cmd_reconstruct(const ReconstructArgs& args, std::ostream& log) {
  return for_each_run(args.run, [&](const fs::path& run) {
    const auto t0 = Clock::now();
    const MetaConfig c = load_config(run / "config.json");
    const fs::path matrix = args.matrix.value_or(run / "adapted.msub");
    const AdaptedParamsMatrix points = io::load_adapted(matrix);
    if (static_cast<Eigen::Index>(points.descriptors.size()) != points.count()) {
      throw FormatError(matrix.string() + ": descriptors are missing or misaligned");
    }
    std::vector<Task> tasks;
    if (c.family == Family::kPrototypes) {
      tasks = io::read_tasks(run / "tasks.json");
      if (static_cast<Eigen::Index>(tasks.size()) != points.count()) {
        throw FormatError("tasks.json has " + std::to_string(tasks.size()) + " tasks, matrix has " +
                          std::to_string(points.count()) + " rows");
      }
    }
    const std::string stem = args.shuffle_control ? "probe_shuffled" : "probe";
    const fs::path csv = run / (stem + ".csv");
    guard_overwrite(csv, args.force);

    const std::vector<Eigen::Index> ks = args.k.value_or(c.probe.k);
    const int seeds = args.seeds.value_or(c.probe.seeds);
    const Eigen::Index kmax = *std::max_element(ks.begin(), ks.end());
    const PcaResult p = pca(points.rows, kmax);
    const bool regression = c.family == Family::kSine;

    std::ostringstream out;
    out << "k,seed,metric\n";
    Json summary = {{"metric", regression ? "mse" : "accuracy"}, {"shuffled", args.shuffle_control}};
    Json med = Json::array();
    double baseline = 0.0;
    for (Eigen::Index k : ks) {
      EmbeddedTaskSet set = embed(points, p, k, c.probe.train_fraction);
      if (!regression) {
        for (const auto& t : tasks) set.task_points.push_back(t.query);
      }
      if (args.shuffle_control) {
        SeededRng shuffle_rng(c.seed + 7919);
        set = shuffle_embeddings(set, shuffle_rng);
      }
      std::vector<double> metrics;
      for (int s = 0; s < seeds; ++s) {
        ProbeConfig pc{c.probe.hidden, c.probe.lr, c.probe.epochs, c.seed * 1000 + static_cast<std::uint64_t>(s)};
        const ProbeResult r = regression ? fit_amplitude_regressor(set, pc) : fit_conditioned_classifier(set, pc);
        baseline = r.baseline;
        metrics.push_back(r.metric);
        out << k << ',' << s << ',' << io::format_double(r.metric) << '\n';
      }
      med.push_back({{"k", k}, {"median", median(metrics)}});
    }
    summary["median_by_k"] = med;
    summary["baseline"] = baseline;
    io::write_text(csv, out.str());
    io::write_text(run / (stem + ".json"), summary.dump(2) + "\n");

    // Plot of the per-k median, read back from the CSV.
    const io::CsvTable t = io::read_csv_table(csv);
    std::map<double, std::vector<double>> by_k;
    for (const auto& row : t.rows) by_k[std::stod(row[t.column("k")])].push_back(std::stod(row[t.column("metric")]));
    io::Series s{regression ? "median test mse" : "median test accuracy", {}, {}};
    for (const auto& [k, v] : by_k) {
      s.x.push_back(k);
      s.y.push_back(median(v));
    }
    io::write_text(run / (stem + ".svg"),
                   io::svg_line_plot({s}, "task reconstruction from PCA embedding", "k",
                                     regression ? "test mse" : "test accuracy"));
    record_artifacts(run, {csv, run / (stem + ".json"), run / (stem + ".svg")}, "reconstruct",
                     seconds_since(t0));
    say(log, run.generic_string() + ": probe results in " + csv.generic_string());
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

void verify_manifest(const fs::path& run, const Json& manifest) {
  for (auto it = manifest.at("artifacts").begin(); it != manifest.at("artifacts").end(); ++it) {
    const fs::path f = run / it.key();
    if (!fs::exists(f)) throw IntegrityError("artifact missing: " + f.generic_string(), f.generic_string());
    if (io::sha256_file(f) != it.value().at("sha256").get<std::string>()) {
      throw IntegrityError("content hash mismatch: " + f.generic_string(), f.generic_string());
    }
  }
}

Json summarize_run(const fs::path& run) {
  const fs::path manifest_path = run / "manifest.json";
  if (!fs::exists(manifest_path)) {
    std::vector<std::string> missing;
    for (const char* f : {"manifest.json", "config.json", "checkpoint.json", "history.csv"}) {
      if (!fs::exists(run / f)) missing.emplace_back(f);
    }
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw FormatError(run.generic_string() + ": missing artifacts: " + list);
  }
  const Json manifest = read_manifest(run);
  verify_manifest(run, manifest);

  Json s = Json::object();
  s["run"] = run.filename().generic_string();
  if (manifest.contains("config")) {
    const Json& c = manifest.at("config");
    s["family"] = c.at("family");
    s["method"] = c.at("method");
    s["seed"] = c.at("seed");
    s["hidden"] = c.at("network").at("hidden");
    s["n"] = c.at("family") == "sine" ? c.at("sine").at("n_sines") : c.at("prototypes").at("n_classes");
  }
  if (fs::exists(run / "history.csv")) {
    const io::CsvTable h = io::read_csv_table(run / "history.csv");
    if (!h.rows.empty()) {
      s["final_query_loss"] = std::stod(h.rows.back()[h.column("mean_query_loss")]);
      const auto& acc = h.rows.back()[h.column("mean_query_accuracy")];
      if (!acc.empty()) s["final_query_accuracy"] = std::stod(acc);
    }
    s["epochs"] = h.rows.size();
  }
  Json dims = Json::object();
  for (const char* m : {"pca", "isomap"}) {
    const fs::path f = run / (std::string("spectrum_") + m + ".json");
    if (!fs::exists(f)) continue;
    const Json j = Json::parse(io::read_text(f));
    dims[m] = j.at("estimated_dim");
    s["spectrum_" + std::string(m)] = j.at("normalized");
  }
  s["estimated_dim"] = dims;
  if (fs::exists(run / "paramdiff_layers.csv")) {
    const io::CsvTable t = io::read_csv_table(run / "paramdiff_layers.csv");
    Json layers = Json::array();
    for (const auto& row : t.rows) layers.push_back(std::stod(row[t.column("mean_abs_diff")]));
    s["paramdiff_layers"] = layers;
  }
  for (const char* p : {"probe", "probe_shuffled"}) {
    const fs::path f = run / (std::string(p) + ".json");
    if (fs::exists(f)) s[p] = Json::parse(io::read_text(f));
  }
  return s;
}

std::string human_summary(const Json& report) {
  std::ostringstream os;
  for (const auto& r : report.at("runs")) {
    os << r.value("run", std::string(".")) << ":";
    if (r.contains("family")) os << " family=" << r["family"].get<std::string>();
    if (r.contains("method")) os << " method=" << r["method"].get<std::string>();
    if (r.contains("n")) os << " N=" << r["n"];
    if (r.contains("final_query_loss")) os << " query_loss=" << r["final_query_loss"];
    if (r.contains("final_query_accuracy")) os << " query_acc=" << r["final_query_accuracy"];
    for (auto it = r["estimated_dim"].begin(); it != r["estimated_dim"].end(); ++it) {
      os << " dim_" << it.key() << "=" << it.value();
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace

int cmd_report(const ReportArgs& args, std::ostream& log) {
  Json report = {{"software_version", kVersion}, {"runs", Json::array()}};
  if (is_sweep_parent(args.run)) {
    verify_manifest(args.run, read_manifest(args.run));
    for (const auto& child : sweep_children(args.run)) report["runs"].push_back(summarize_run(child));
  } else {
    report["runs"].push_back(summarize_run(args.run));
  }
  io::write_text(args.run / "report.json", report.dump(2) + "\n");
  const std::string text = human_summary(report);
  io::write_text(args.run / "summary.txt", text);
  log << text;
  return kExitOk;
}

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ValidationError& e) {
    err << "error: invalid configuration: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const DivergedError& e) {
    err << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const IntegrityError& e) {
    err << "error: integrity check failed: " << e.what() << '\n';
    return kExitIntegrity;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIntegrity;
  } catch (const DisconnectedGraphError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace metasub::app
