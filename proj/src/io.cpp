#include "metasub/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace metasub::io {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  auto bits = std::bit_cast<U>(value);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>(bits & 0xffu);
    bits >>= 8;
  }
  os.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& is, const fs::path& path) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw FormatError(path.string() + ": truncated matrix file");
  U bits = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) bits = (bits << 8) | bytes[i];
  return std::bit_cast<T>(bits);
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, mode | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream is(path, mode);
  if (!is) throw FormatError("cannot open " + path.string());
  return is;
}

double parse_double(std::string_view s, const fs::path& path) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  double v = 0.0;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError(path.string() + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j, Eigen::Index cols_if_empty = 0) {
  if (!j.is_array()) throw FormatError("expected a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = j[static_cast<std::size_t>(i)];
    if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols) {
      throw FormatError("ragged nested array");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

std::string loss_name(LossKind k) { return k == LossKind::kMse ? "mse" : "softmax_cross_entropy"; }

LossKind loss_from_name(const std::string& s) {
  if (s == "mse") return LossKind::kMse;
  if (s == "softmax_cross_entropy") return LossKind::kSoftmaxCrossEntropy;
  throw FormatError("unknown loss '" + s + "'");
}

std::string method_name(MetaMethod::Kind k) {
  return k == MetaMethod::Kind::kMaml ? "maml" : "meta_curvature";
}

MetaMethod::Kind method_from_name(const std::string& s) {
  if (s == "maml") return MetaMethod::Kind::kMaml;
  if (s == "meta_curvature") return MetaMethod::Kind::kMetaCurvature;
  throw FormatError("unknown method '" + s + "'");
}

fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".json"); }

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

void write_matrix_binary(const fs::path& path, const Eigen::Ref<const Matrix>& m) {
  auto os = open_out(path, std::ios::binary);
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, kFormatVersion);
  put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_le<double>(os, m(i, j));
  if (!os) throw FormatError("failed writing " + path.string());
}

Matrix read_matrix_binary(const fs::path& path) {
  auto is = open_in(path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
    throw FormatError(path.string() + ": not an MSUB matrix file");
  }
  const auto version = get_le<std::uint32_t>(is, path);
  if (version != kFormatVersion) {
    throw FormatError(path.string() + ": unsupported format version " + std::to_string(version));
  }
  const auto rows = get_le<std::uint64_t>(is, path);
  const auto cols = get_le<std::uint64_t>(is, path);
  const auto expected = kHeaderBytes + rows * cols * 8;
  if (fs::file_size(path) != expected) {
    throw FormatError(path.string() + ": size does not match header (" + std::to_string(rows) + "x" +
                      std::to_string(cols) + ")");
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get_le<double>(is, path);
  return m;
}

void write_matrix_csv(const fs::path& path, const Eigen::Ref<const Matrix>& m) {
  auto os = open_out(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

Matrix read_matrix_csv(const fs::path& path) {
  auto is = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> r;
    for (const auto& cell : split(line, ',')) r.push_back(parse_double(cell, path));
    if (!rows.empty() && r.size() != rows.front().size()) {
      throw FormatError(path.string() + ": ragged CSV row " + std::to_string(rows.size() + 1));
    }
    rows.push_back(std::move(r));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

Json layers_to_json(const std::vector<LayerSpec>& layers) {
  Json out = Json::array();
  for (const auto& l : layers) {
    out.push_back({{"in_dim", l.in_dim},
                   {"out_dim", l.out_dim},
                   {"activation", l.activation == Activation::kRelu ? "relu" : "identity"}});
  }
  return out;
}

std::vector<LayerSpec> layers_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("layers must be an array");
  std::vector<LayerSpec> out;
  for (const auto& l : j) {
    const std::string act = l.at("activation").get<std::string>();
    if (act != "relu" && act != "identity") throw FormatError("unknown activation '" + act + "'");
    out.push_back({l.at("in_dim").get<Eigen::Index>(), l.at("out_dim").get<Eigen::Index>(),
                   act == "relu" ? Activation::kRelu : Activation::kIdentity});
  }
  parameter_count(out);
  return out;
}

void save_params(const fs::path& path, const MlpParams& params) {
  write_matrix_binary(path, params.theta.transpose());
  write_text(sidecar(path), Json{{"layers", layers_to_json(params.layers)}}.dump(2) + "\n");
}

MlpParams load_params(const fs::path& path) {
  const Json meta = Json::parse(read_text(sidecar(path)));
  auto layers = layers_from_json(meta.at("layers"));
  const Matrix m = read_matrix_binary(path);
  if (m.rows() != 1 || m.cols() != parameter_count(layers)) {
    throw FormatError(path.string() + ": parameter vector does not match layer metadata");
  }
  return MlpParams(std::move(layers), m.row(0).transpose());
}

std::vector<fs::path> save_checkpoint(const fs::path& dir, const std::string& stem,
                                      const MetaState& state, const CheckpointInfo& info) {
  std::vector<fs::path> files;
  const fs::path theta = dir / (stem + ".msub");
  write_matrix_binary(theta, state.params.theta.transpose());
  files.push_back(theta);
  Json blocks = Json::array();
  for (std::size_t l = 0; l < state.mc_blocks.size(); ++l) {
    const std::string name = stem + "_G" + std::to_string(l) + ".msub";
    write_matrix_binary(dir / name, state.mc_blocks[l]);
    files.push_back(dir / name);
    blocks.push_back(name);
  }
  Json meta = {{"method", method_name(info.method.kind)},
               {"inner_lr", info.method.inner_lr},
               {"epoch", state.epoch},
               {"seed", info.seed},
               {"loss", loss_name(info.loss)},
               {"layers", layers_to_json(state.params.layers)},
               {"theta", stem + ".msub"},
               {"mc_blocks", blocks}};
  const fs::path side = dir / (stem + ".json");
  write_text(side, meta.dump(2) + "\n");
  files.push_back(side);
  return files;
}

Checkpoint load_checkpoint(const fs::path& dir, const std::string& stem) {
  const fs::path side = dir / (stem + ".json");
  if (!fs::exists(side)) throw FormatError("missing checkpoint sidecar " + side.string());
  Json meta;
  try {
    meta = Json::parse(read_text(side));
  } catch (const Json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  Checkpoint ck;
  try {
    ck.info.method.kind = method_from_name(meta.at("method").get<std::string>());
    ck.info.method.inner_lr = meta.at("inner_lr").get<double>();
    ck.info.seed = meta.at("seed").get<std::uint64_t>();
    ck.info.loss = loss_from_name(meta.at("loss").get<std::string>());
    auto layers = layers_from_json(meta.at("layers"));
    const Matrix theta = read_matrix_binary(dir / meta.at("theta").get<std::string>());
    if (theta.rows() != 1 || theta.cols() != parameter_count(layers)) {
      throw FormatError("checkpoint parameters do not match its layer specification");
    }
    ck.state = MetaState::create(MlpParams(layers, theta.row(0).transpose()), ck.info.method.kind);
    ck.state.epoch = meta.at("epoch").get<int>();
    const auto& blocks = meta.at("mc_blocks");
    if (blocks.size() != ck.state.mc_blocks.size()) {
      throw FormatError("checkpoint curvature blocks do not match the method/layers");
    }
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      Matrix G = read_matrix_binary(dir / blocks[l].get<std::string>());
      if (G.rows() != ck.state.mc_blocks[l].rows() || G.cols() != ck.state.mc_blocks[l].cols()) {
        throw FormatError("curvature block " + std::to_string(l) + " does not match layer " +
                          std::to_string(l));
      }
      ck.state.mc_blocks[l] = std::move(G);
    }
  } catch (const Json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  } catch (const DimensionError& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  return ck;
}

Json batch_to_json(const Batch& b) {
  Json j = {{"inputs", matrix_to_json(b.inputs)}};
  if (b.is_classification()) {
    j["labels"] = b.labels;
  } else {
    j["targets"] = matrix_to_json(b.targets);
  }
  return j;
}

Batch batch_from_json(const Json& j) {
  Matrix x = matrix_from_json(j.at("inputs"));
  if (j.contains("labels")) return Batch::classification(std::move(x), j.at("labels").get<std::vector<int>>());
  return Batch::regression(std::move(x), matrix_from_json(j.at("targets")));
}

Json descriptor_to_json(const TaskDescriptor& d) {
  switch (d.kind) {
    case TaskDescriptor::Kind::kAmplitudes: {
      std::vector<double> a(d.values.data(), d.values.data() + d.values.size());
      return {{"kind", "amplitudes"}, {"values", a}};
    }
    case TaskDescriptor::Kind::kPrototypes:
      return {{"kind", "prototypes"}, {"values", matrix_to_json(d.values)}};
    case TaskDescriptor::Kind::kNone:
      break;
  }
  return {{"kind", "none"}};
}

TaskDescriptor descriptor_from_json(const Json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "amplitudes") {
    const auto a = j.at("values").get<std::vector<double>>();
    return TaskDescriptor::amplitudes(Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size())));
  }
  if (kind == "prototypes") return TaskDescriptor::prototypes(matrix_from_json(j.at("values")));
  if (kind == "none") return {};
  throw FormatError("unknown descriptor kind '" + kind + "'");
}

Json task_to_json(const Task& t) {
  return {{"loss", loss_name(t.loss)},
          {"descriptor", descriptor_to_json(t.descriptor)},
          {"support", batch_to_json(t.support)},
          {"query", batch_to_json(t.query)}};
}

Task task_from_json(const Json& j) {
  Task t;
  t.loss = loss_from_name(j.at("loss").get<std::string>());
  t.descriptor = descriptor_from_json(j.at("descriptor"));
  t.support = batch_from_json(j.at("support"));
  t.query = batch_from_json(j.at("query"));
  return t;
}

void write_tasks(const fs::path& path, const std::vector<Task>& tasks) {
  Json arr = Json::array();
  for (const auto& t : tasks) arr.push_back(task_to_json(t));
  write_text(path, Json{{"tasks", arr}}.dump() + "\n");
}

std::vector<Task> read_tasks(const fs::path& path) {
  try {
    const Json j = Json::parse(read_text(path));
    std::vector<Task> out;
    for (const auto& t : j.at("tasks")) out.push_back(task_from_json(t));
    return out;
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_adapted(const fs::path& path, const AdaptedParamsMatrix& m, const Json& extra) {
  write_matrix_binary(path, m.rows);
  Json meta = {{"rows", m.count()}, {"cols", m.dim()}};
  if (!m.layers.empty()) meta["layers"] = layers_to_json(m.layers);
  if (!m.descriptors.empty()) {
    Json descs = Json::array();
    for (const auto& d : m.descriptors) descs.push_back(descriptor_to_json(d));
    meta["descriptors"] = descs;
  }
  if (extra.is_object()) {
    for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  }
  write_text(sidecar(path), meta.dump() + "\n");
}

AdaptedParamsMatrix load_adapted(const fs::path& path) {
  AdaptedParamsMatrix out;
  out.rows = read_matrix_binary(path);
  const fs::path side = sidecar(path);
  if (!fs::exists(side)) return out;
  try {
    const Json meta = Json::parse(read_text(side));
    if (meta.contains("layers")) {
      out.layers = layers_from_json(meta.at("layers"));
      if (parameter_count(out.layers) != out.dim()) {
        throw FormatError(side.string() + ": layer metadata does not match matrix width");
      }
    }
    if (meta.contains("descriptors")) {
      for (const auto& d : meta.at("descriptors")) out.descriptors.push_back(descriptor_from_json(d));
      if (static_cast<Eigen::Index>(out.descriptors.size()) != out.count()) {
        throw FormatError(side.string() + ": descriptors are not aligned with matrix rows (" +
                          std::to_string(out.descriptors.size()) + " vs " +
                          std::to_string(out.count()) + ")");
      }
    }
  } catch (const Json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  return out;
}

void write_history_csv(const fs::path& path, const std::vector<HistoryRow>& history) {
  auto os = open_out(path);
  os << "epoch,mean_query_loss,mean_query_accuracy\n";
  for (const auto& h : history) {
    os << h.epoch << ',' << format_double(h.mean_query_loss) << ',';
    if (h.mean_query_accuracy) os << format_double(*h.mean_query_accuracy);
    os << '\n';
  }
}

void write_spectrum_csv(const fs::path& path, const SpectrumReport& r) {
  auto os = open_out(path);
  os << "k,raw,normalized\n";
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    os << r.ks[i] << ',' << format_double(r.raw_scores[i]) << ','
       << format_double(r.normalized_scores[i]) << '\n';
  }
}

Json spectrum_to_json(const SpectrumReport& r) {
  Json j = {{"method", to_string(r.method)},
            {"k", r.ks},
            {"raw", r.raw_scores},
            {"normalized", r.normalized_scores},
            {"estimated_dim", r.estimated_dim},
            {"saturated", r.saturated},
            {"threshold", r.threshold}};
  if (r.method == SpectrumMethod::kIsomap) j["n_neighbors"] = r.n_neighbors;
  return j;
}

std::string svg_line_plot(const std::vector<Series>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label) {
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 40, B = 55;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) { x0 = std::min(x0, v); x1 = std::max(x1, v); }
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  }
  if (!std::isfinite(x0)) { x0 = 0; x1 = 1; }
  if (!std::isfinite(y0)) { y0 = 0; y1 = 1; }
  y0 = std::min(y0, 0.0);
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#17becf"};

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape_xml(title) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
       << format_double(std::round(yv * 1000) / 1000) << "</text>\n";
    const double xv = x0 + (x1 - x0) * i / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
       << format_double(std::round(xv * 100) / 100) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
     << escape_xml(x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << (T + H - B) / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape_xml(y_label) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
      if (!std::isfinite(series[s].y[i])) continue;
      os << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
      if (!std::isfinite(series[s].y[i])) continue;
      os << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\"" << py(series[s].y[i])
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (s + 1) << "\" fill=\"" << color
       << "\">" << escape_xml(series[s].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_scatter(const Eigen::Ref<const Matrix>& xy, const std::string& title) {
  if (xy.cols() < 2) throw DimensionError("scatter plot needs two columns");
  constexpr double W = 480, H = 480, P = 40;
  const double x0 = xy.col(0).minCoeff(), x1 = xy.col(0).maxCoeff();
  const double y0 = xy.col(1).minCoeff(), y1 = xy.col(1).maxCoeff();
  const double sx = x1 > x0 ? x1 - x0 : 1.0;
  const double sy = y1 > y0 ? y1 - y0 : 1.0;
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\">" << escape_xml(title)
     << "</text>\n";
  for (Eigen::Index i = 0; i < xy.rows(); ++i) {
    os << "<circle cx=\"" << P + (xy(i, 0) - x0) / sx * (W - 2 * P) << "\" cy=\""
       << H - P - (xy(i, 1) - y0) / sy * (H - 2 * P) << "\" r=\"2\" fill=\"#1f77b4\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw FormatError("CSV has no column '" + name + "'");
}

CsvTable read_csv_table(const fs::path& path) {
  auto is = open_in(path);
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": empty CSV");
  t.header = split(line, ',');
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != t.header.size()) throw FormatError(path.string() + ": ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

void write_text(const fs::path& path, const std::string& text) {
  auto os = open_out(path, std::ios::binary);
  os << text;
  if (!os) throw FormatError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  auto is = open_in(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string sha256_file(const fs::path& path) {
  auto is = open_in(path, std::ios::binary);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha256: cannot allocate digest context");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (is) {
    is.read(buf.data(), buf.size());
    if (is.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return hex.str();
}

}  // namespace metasub::io
