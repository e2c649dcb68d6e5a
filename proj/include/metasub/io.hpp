#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "metasub/meta.hpp"
#include "metasub/subspace.hpp"

namespace metasub::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// Binary matrix layout, all little-endian:
//   "MSUB" | u32 version | u64 rows | u64 cols | rows*cols f64, row-major
inline constexpr char kMagic[4] = {'M', 'S', 'U', 'B'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 8;

void write_matrix_binary(const fs::path& path, const Eigen::Ref<const Matrix>& m);
Matrix read_matrix_binary(const fs::path& path);

/// One row per line, comma separated, shortest round-trip decimal form.
void write_matrix_csv(const fs::path& path, const Eigen::Ref<const Matrix>& m);
Matrix read_matrix_csv(const fs::path& path);

Json layers_to_json(const std::vector<LayerSpec>& layers);
std::vector<LayerSpec> layers_from_json(const Json& j);

/// theta as a 1 x P binary matrix at `path`, layers in `path` + ".json".
void save_params(const fs::path& path, const MlpParams& params);
MlpParams load_params(const fs::path& path);

struct CheckpointInfo {
  MetaMethod method;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kMse;
};

/// Writes <stem>.msub (theta), <stem>_G<l>.msub (curvature blocks) and the
/// <stem>.json sidecar. Returns every file written.
std::vector<fs::path> save_checkpoint(const fs::path& dir, const std::string& stem,
                                      const MetaState& state, const CheckpointInfo& info);

struct Checkpoint {
  MetaState state;
  CheckpointInfo info;
};
Checkpoint load_checkpoint(const fs::path& dir, const std::string& stem);

Json batch_to_json(const Batch& b);
Batch batch_from_json(const Json& j);
Json descriptor_to_json(const TaskDescriptor& d);
TaskDescriptor descriptor_from_json(const Json& j);
Json task_to_json(const Task& t);
Task task_from_json(const Json& j);

void write_tasks(const fs::path& path, const std::vector<Task>& tasks);
std::vector<Task> read_tasks(const fs::path& path);

/// Matrix rows in binary format plus a JSON sidecar (<path>.json) holding
/// layers and aligned descriptors.
void save_adapted(const fs::path& path, const AdaptedParamsMatrix& m, const Json& extra = {});
AdaptedParamsMatrix load_adapted(const fs::path& path);

void write_history_csv(const fs::path& path, const std::vector<HistoryRow>& history);

void write_spectrum_csv(const fs::path& path, const SpectrumReport& r);
Json spectrum_to_json(const SpectrumReport& r);

/// Line plot with one or more series sharing the x axis.
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};
std::string svg_line_plot(const std::vector<Series>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label);
std::string svg_scatter(const Eigen::Ref<const Matrix>& xy, const std::string& title);

/// Minimal CSV reader: header row then numeric/empty cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;
};
CsvTable read_csv_table(const fs::path& path);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);

/// Shortest decimal string that round-trips the double.
std::string format_double(double v);

}  // namespace metasub::io
