#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "momentguard/error.hpp"
#include "momentguard/iv.hpp"
#include "momentguard/model.hpp"
#include "momentguard/sensitivity.hpp"

namespace momentguard::cli {

inline constexpr const char* kVersion = "0.1.0";

struct IvSource {
  std::string y_path;
  std::string x_path;
  std::string z_path;
  std::vector<int> suspect;  ///< 1-based, as written in the file
  RowVector h_deriv;
  std::optional<Vector> column_scale;
};

struct IdentityColumns {
  std::vector<int> columns;  ///< 1-based
};
struct FromIv {};
using BSpec = std::variant<Matrix, IdentityColumns, FromIv>;

struct Options {
  VarianceMode variance = VarianceMode::Robust;
  std::optional<VarianceMode> ci_variance;  ///< defaults to `variance`
  Criterion criterion = Criterion::CiLength;
  double beta = 0.8;
  std::uint64_t seed = 1;
  std::int64_t reps = 10000;
};

/// Parsed problem document. Matrices given as CSV references are loaded at
/// parse time; IV data paths are kept and resolved against base_dir.
struct ProblemFile {
  std::optional<MomentModel> model;
  std::optional<IvSource> iv;
  BSpec b;
  Norm p = Norm::L2;
  std::vector<double> m_grid;
  bool m_scalar = false;  ///< written as "m" rather than "m_grid"
  double alpha = 0.05;
  Options options;
  std::filesystem::path base_dir;
};

bool operator==(const ProblemFile& a, const ProblemFile& b);

ProblemFile parse_problem(const std::string& text, const std::filesystem::path& base_dir = {});
ProblemFile load_problem(const std::filesystem::path& path);
/// Serializes with 17 significant digits so that parsing the output yields an
/// identical ProblemFile.
std::string write_problem(const ProblemFile& problem);

/// CSV with a one-line header of column names.
Matrix read_csv_matrix(const std::filesystem::path& path);

/// Locale-independent formatting with 17 significant digits (problem files).
std::string format_number(double v);
/// Locale-independent shortest round-trip formatting (output tables).
std::string format_cell(double v);

/// The resolved inputs of a run: the model used for the frontier, the model
/// used for the final CI (identical unless a mixed variance strategy is used),
/// and the misspecification shape.
struct Resolved {
  MomentModel frontier_model;
  MomentModel ci_model;
  MisspecSet shape;
  std::vector<Eigen::Index> dropped_instruments;
};

Resolved resolve(const ProblemFile& problem);

/// Runs one subcommand, writing CSV to `out`. Throws momentguard::Error.
void run_command(const std::string& command, const ProblemFile& problem, std::ostream& out);

/// Exit code for an error category.
int exit_code(const Error& e);

}  // namespace momentguard::cli
