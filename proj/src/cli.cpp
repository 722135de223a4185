#include "momentguard/cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <locale>
#include <sstream>

#include <json.hpp>

#include "momentguard/efficiency.hpp"
#include "momentguard/oracle.hpp"
#include "momentguard/robust_ci.hpp"
#include "momentguard/spec_test.hpp"

namespace momentguard::cli {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& msg) {
  throw Error(ErrorCode::InvalidInput, field, msg);
}

bool same(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

bool same(const std::optional<Vector>& a, const std::optional<Vector>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || same(Matrix(*a), Matrix(*b));
}

bool same(const MomentModel& a, const MomentModel& b) {
  return same(a.gamma, b.gamma) && same(a.sigma, b.sigma) && same(Matrix(a.h_deriv), Matrix(b.h_deriv)) &&
         same(Matrix(a.g_init), Matrix(b.g_init)) && a.h_init == b.h_init && a.n == b.n;
}

bool same(const IvSource& a, const IvSource& b) {
  return a.y_path == b.y_path && a.x_path == b.x_path && a.z_path == b.z_path && a.suspect == b.suspect &&
         same(Matrix(a.h_deriv), Matrix(b.h_deriv)) && same(a.column_scale, b.column_scale);
}

bool same(const BSpec& a, const BSpec& b) {
  if (a.index() != b.index()) return false;
  if (const auto* m = std::get_if<Matrix>(&a)) return same(*m, std::get<Matrix>(b));
  if (const auto* c = std::get_if<IdentityColumns>(&a)) return c->columns == std::get<IdentityColumns>(b).columns;
  return true;
}

bool same(const Options& a, const Options& b) {
  return a.variance == b.variance && a.ci_variance == b.ci_variance && a.criterion == b.criterion &&
         a.beta == b.beta && a.seed == b.seed && a.reps == b.reps;
}

// ---- reading ------------------------------------------------------------

double parse_double(std::string_view text, const std::string& field) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    invalid(field, "cannot parse number '" + std::string(text) + "'");
  }
  return v;
}

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

double get_number(const json& j, const std::string& field) {
  if (!j.is_number()) invalid(field, "expected a number");
  return j.get<double>();
}

Matrix get_matrix(const json& j, const std::string& field, const std::filesystem::path& base) {
  if (j.is_object() && j.contains("csv")) {
    if (!j["csv"].is_string()) invalid(field, "csv reference must be a string");
    return read_csv_matrix(resolve_path(base, j["csv"].get<std::string>()));
  }
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) invalid(field, "expected a nonempty array");
  if (j[0].is_number()) {
    // a flat array is a column vector
    Matrix m(static_cast<Eigen::Index>(j.size()), 1);
    for (std::size_t i = 0; i < j.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = get_number(j[i], field);
    return m;
  }
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) invalid(field, "rows must be nonempty arrays");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) invalid(field, "ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = get_number(j[r][c], field);
    }
  }
  return m;
}

Vector get_vector(const json& j, const std::string& field, const std::filesystem::path& base) {
  const Matrix m = get_matrix(j, field, base);
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  throw Error(ErrorCode::DimensionMismatch, field, "expected a vector");
}

const json& require(const json& obj, const char* key, const std::string& prefix) {
  if (!obj.is_object() || !obj.contains(key)) invalid(prefix + key, "missing");
  return obj.at(key);
}

std::vector<int> get_indices(const json& j, const std::string& field) {
  if (!j.is_array()) invalid(field, "expected an array of 1-based indices");
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<int>() < 1) invalid(field, "indices must be positive integers");
    out.push_back(v.get<int>());
  }
  return out;
}

VarianceMode parse_variance(const json& j, const std::string& field) {
  const std::string s = j.is_string() ? j.get<std::string>() : "";
  if (s == "robust") return VarianceMode::Robust;
  if (s == "homoskedastic") return VarianceMode::Homoskedastic;
  invalid(field, "expected \"robust\" or \"homoskedastic\"");
}

Criterion parse_criterion(const json& j, const std::string& field) {
  const std::string s = j.is_string() ? j.get<std::string>() : "";
  if (s == "ci") return Criterion::CiLength;
  if (s == "mse") return Criterion::Mse;
  invalid(field, "expected \"ci\" or \"mse\"");
}

// ---- writing ------------------------------------------------------------

std::string quote(const std::string& s) { return json(s).dump(); }

std::string write_row(const RowVector& v) {
  std::string out = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_number(v(i));
  return out + "]";
}

std::string write_matrix(const Matrix& m) {
  std::string out = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) out += (r ? ", " : "") + write_row(m.row(r));
  return out + "]";
}

std::string write_ints(const std::vector<int>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out + "]";
}

const char* variance_name(VarianceMode v) { return v == VarianceMode::Robust ? "robust" : "homoskedastic"; }

void header(std::ostream& out, const std::string& command, const ProblemFile& problem) {
  out << "# command=" << command << "\n"
      << "# version=" << kVersion << "\n"
      << "# alpha=" << format_cell(problem.alpha) << "\n"
      << "# seed=" << problem.options.seed << "\n";
}

template <typename... T>
void csv_row(std::ostream& out, const T&... cells) {
  bool first = true;
  ((out << (first ? "" : ",") << cells, first = false), ...);
  out << "\n";
}

}  // namespace

bool operator==(const ProblemFile& a, const ProblemFile& b) {
  if (a.model.has_value() != b.model.has_value() || a.iv.has_value() != b.iv.has_value()) return false;
  if (a.model && !same(*a.model, *b.model)) return false;
  if (a.iv && !same(*a.iv, *b.iv)) return false;
  return same(a.b, b.b) && a.p == b.p && a.m_grid == b.m_grid && a.m_scalar == b.m_scalar && a.alpha == b.alpha &&
         same(a.options, b.options);
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string format_cell(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Matrix read_csv_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) invalid(path.string(), "cannot open CSV file");
  std::string line;
  if (!std::getline(in, line)) invalid(path.string(), "empty CSV file (a header line is required)");
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::string_view rest(line);
    const std::string field = path.string() + ":" + std::to_string(lineno);
    while (true) {
      const auto comma = rest.find(',');
      row.push_back(parse_double(rest.substr(0, comma), field));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (!rows.empty() && row.size() != rows.front().size()) invalid(field, "row length differs from first row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) invalid(path.string(), "CSV file has no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

ProblemFile parse_problem(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    invalid("problem", std::string("malformed document: ") + e.what());
  }
  if (!doc.is_object()) invalid("problem", "top level must be an object");
  ProblemFile pf;
  pf.base_dir = base_dir;

  const bool has_model = doc.contains("model");
  const bool has_iv = doc.contains("iv");
  if (has_model == has_iv) invalid("model", "exactly one of \"model\" and \"iv\" must be present");
  if (has_model) {
    const json& m = doc["model"];
    MomentModel model;
    model.gamma = get_matrix(require(m, "gamma", "model."), "model.gamma", base_dir);
    model.sigma = get_matrix(require(m, "sigma", "model."), "model.sigma", base_dir);
    model.h_deriv = get_vector(require(m, "h_deriv", "model."), "model.h_deriv", base_dir).transpose();
    model.g_init = get_vector(require(m, "g_init", "model."), "model.g_init", base_dir);
    model.h_init = get_number(require(m, "h_init", "model."), "model.h_init");
    const json& n = require(m, "n", "model.");
    if (!n.is_number_integer()) invalid("model.n", "expected an integer");
    model.n = n.get<std::int64_t>();
    pf.model = std::move(model);
  } else {
    const json& v = doc["iv"];
    IvSource src;
    for (auto [key, dest] : {std::pair{"y", &src.y_path}, std::pair{"x", &src.x_path}, std::pair{"z", &src.z_path}}) {
      const json& p = require(v, key, "iv.");
      if (!p.is_string()) invalid(std::string("iv.") + key, "expected a CSV path");
      *dest = p.get<std::string>();
    }
    src.suspect = get_indices(require(v, "suspect", "iv."), "iv.suspect");
    src.h_deriv = get_vector(require(v, "h_deriv", "iv."), "iv.h_deriv", base_dir).transpose();
    if (v.contains("column_scale")) src.column_scale = get_vector(v["column_scale"], "iv.column_scale", base_dir);
    pf.iv = std::move(src);
  }

  const json& ms = require(doc, "misspec", "");
  const json& b = require(ms, "b", "misspec.");
  if (b.is_string()) {
    if (b.get<std::string>() != "from-iv") invalid("misspec.b", "the only string form is \"from-iv\"");
    pf.b = FromIv{};
  } else if (b.is_object() && b.contains("identity_columns")) {
    pf.b = IdentityColumns{get_indices(b["identity_columns"], "misspec.b.identity_columns")};
  } else {
    pf.b = get_matrix(b, "misspec.b", base_dir);
  }
  const json& p = require(ms, "p", "misspec.");
  if (p.is_number() && p.get<double>() == 2.0) {
    pf.p = Norm::L2;
  } else if (p.is_string() && (p.get<std::string>() == "inf" || p.get<std::string>() == "infinity")) {
    pf.p = Norm::Linf;
  } else {
    invalid("misspec.p", "expected 2 or \"inf\"");
  }
  const bool has_m = ms.contains("m");
  const bool has_grid = ms.contains("m_grid");
  if (has_m == has_grid) invalid("misspec.m", "exactly one of \"m\" and \"m_grid\" must be present");
  if (has_m) {
    pf.m_scalar = true;
    pf.m_grid = {get_number(ms["m"], "misspec.m")};
  } else {
    const json& g = ms["m_grid"];
    if (!g.is_array() || g.empty()) invalid("misspec.m_grid", "expected a nonempty array");
    for (const auto& v : g) pf.m_grid.push_back(get_number(v, "misspec.m_grid"));
  }
  for (std::size_t i = 0; i < pf.m_grid.size(); ++i) {
    if (!(pf.m_grid[i] >= 0.0) || !std::isfinite(pf.m_grid[i])) invalid("misspec.m_grid", "entries must be finite and nonnegative");
    if (i > 0 && pf.m_grid[i] < pf.m_grid[i - 1]) invalid("misspec.m_grid", "must be ascending");
  }

  if (doc.contains("alpha")) pf.alpha = get_number(doc["alpha"], "alpha");
  (void)Alpha(pf.alpha);  // range check

  if (doc.contains("options")) {
    const json& o = doc["options"];
    if (!o.is_object()) invalid("options", "expected an object");
    if (o.contains("variance")) pf.options.variance = parse_variance(o["variance"], "options.variance");
    if (o.contains("ci_variance")) pf.options.ci_variance = parse_variance(o["ci_variance"], "options.ci_variance");
    if (o.contains("criterion")) pf.options.criterion = parse_criterion(o["criterion"], "options.criterion");
    if (o.contains("beta")) pf.options.beta = get_number(o["beta"], "options.beta");
    if (o.contains("seed")) {
      if (!o["seed"].is_number_unsigned()) invalid("options.seed", "expected a nonnegative integer");
      pf.options.seed = o["seed"].get<std::uint64_t>();
    }
    if (o.contains("reps")) {
      if (!o["reps"].is_number_integer()) invalid("options.reps", "expected an integer");
      pf.options.reps = o["reps"].get<std::int64_t>();
    }
  }
  return pf;
}

ProblemFile load_problem(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) invalid("problem", "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_problem(buf.str(), path.parent_path());
}

std::string write_problem(const ProblemFile& pf) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out << "{\n";
  if (pf.model) {
    const MomentModel& m = *pf.model;
    out << "  \"model\": {\n"
        << "    \"gamma\": " << write_matrix(m.gamma) << ",\n"
        << "    \"sigma\": " << write_matrix(m.sigma) << ",\n"
        << "    \"h_deriv\": " << write_row(m.h_deriv) << ",\n"
        << "    \"g_init\": " << write_row(m.g_init.transpose()) << ",\n"
        << "    \"h_init\": " << format_number(m.h_init) << ",\n"
        << "    \"n\": " << m.n << "\n  },\n";
  } else if (pf.iv) {
    const IvSource& v = *pf.iv;
    out << "  \"iv\": {\n"
        << "    \"y\": " << quote(v.y_path) << ",\n"
        << "    \"x\": " << quote(v.x_path) << ",\n"
        << "    \"z\": " << quote(v.z_path) << ",\n"
        << "    \"suspect\": " << write_ints(v.suspect) << ",\n";
    if (v.column_scale) out << "    \"column_scale\": " << write_row(v.column_scale->transpose()) << ",\n";
    out << "    \"h_deriv\": " << write_row(v.h_deriv) << "\n  },\n";
  }
  out << "  \"misspec\": {\n    \"b\": ";
  if (const auto* m = std::get_if<Matrix>(&pf.b)) {
    out << write_matrix(*m);
  } else if (const auto* c = std::get_if<IdentityColumns>(&pf.b)) {
    out << "{\"identity_columns\": " << write_ints(c->columns) << "}";
  } else {
    out << "\"from-iv\"";
  }
  out << ",\n    \"p\": " << (pf.p == Norm::L2 ? "2" : "\"inf\"") << ",\n";
  if (pf.m_scalar && pf.m_grid.size() == 1) {
    out << "    \"m\": " << format_number(pf.m_grid.front()) << "\n";
  } else {
    out << "    \"m_grid\": " << write_row(Eigen::Map<const RowVector>(pf.m_grid.data(), static_cast<Eigen::Index>(pf.m_grid.size()))) << "\n";
  }
  out << "  },\n  \"alpha\": " << format_number(pf.alpha) << ",\n";
  const Options& o = pf.options;
  out << "  \"options\": {\n"
      << "    \"variance\": " << quote(variance_name(o.variance)) << ",\n";
  if (o.ci_variance) out << "    \"ci_variance\": " << quote(variance_name(*o.ci_variance)) << ",\n";
  out << "    \"criterion\": " << quote(o.criterion == Criterion::CiLength ? "ci" : "mse") << ",\n"
      << "    \"beta\": " << format_number(o.beta) << ",\n"
      << "    \"seed\": " << o.seed << ",\n"
      << "    \"reps\": " << o.reps << "\n  }\n}\n";
  return out.str();
}

Resolved resolve(const ProblemFile& pf) {
  Resolved r;
  std::optional<IVData> data;
  if (pf.model) {
    r.frontier_model = validate_model(*pf.model);
    r.ci_model = r.frontier_model;
  } else if (pf.iv) {
    const IvSource& src = *pf.iv;
    IVData raw;
    const Matrix y = read_csv_matrix(resolve_path(pf.base_dir, src.y_path));
    if (y.cols() != 1) throw Error(ErrorCode::DimensionMismatch, "iv.y", "expected a single column");
    raw.y = y.col(0);
    raw.x = read_csv_matrix(resolve_path(pf.base_dir, src.x_path));
    raw.z = read_csv_matrix(resolve_path(pf.base_dir, src.z_path));
    for (int s : src.suspect) raw.suspect.push_back(s - 1);
    raw.column_scale = src.column_scale;
    auto dropped = iv::drop_collinear_instruments(raw);
    r.dropped_instruments = dropped.dropped;
    data = std::move(dropped.data);
    const VarianceMode ci_mode = pf.options.ci_variance.value_or(pf.options.variance);
    r.frontier_model = validate_model(iv::build_model(*data, src.h_deriv, pf.options.variance));
    r.ci_model = validate_model(iv::build_model(*data, src.h_deriv, ci_mode));
  } else {
    invalid("model", "problem has neither a model nor IV data");
  }
  const Eigen::Index dg = r.frontier_model.dg();
  Matrix b;
  if (const auto* m = std::get_if<Matrix>(&pf.b)) {
    b = *m;
  } else if (const auto* c = std::get_if<IdentityColumns>(&pf.b)) {
    if (c->columns.empty()) invalid("misspec.b.identity_columns", "no columns given");
    b = Matrix::Zero(dg, static_cast<Eigen::Index>(c->columns.size()));
    for (std::size_t j = 0; j < c->columns.size(); ++j) {
      if (c->columns[j] > dg) throw Error(ErrorCode::OutOfRange, "misspec.b.identity_columns", "column exceeds d_g");
      b(c->columns[j] - 1, static_cast<Eigen::Index>(j)) = 1.0;
    }
  } else {
    if (!data) invalid("misspec.b", "\"from-iv\" requires an iv block");
    b = iv::build_b(*data);
  }
  r.shape = validate_set(MisspecSet{b, pf.p, 1.0}, dg);
  return r;
}

void run_command(const std::string& command, const ProblemFile& pf, std::ostream& sink) {
  const Alpha alpha(pf.alpha);
  // buffered so that a failure midway leaves no partial table behind
  std::ostringstream out;
  out.imbue(std::locale::classic());
  const Resolved r = resolve(pf);
  if (!r.dropped_instruments.empty()) {
    std::cerr << "warning: dropped collinear instruments";
    for (Eigen::Index j : r.dropped_instruments) std::cerr << ' ' << (j + 1);
    std::cerr << "\n";
  }
  if (command == "ci") {
    const SensitivityFrontier path = sensitivity::frontier(r.frontier_model, r.shape);
    header(out, command, pf);
    csv_row(out, "m", "estimate", "lower", "upper", "max_bias", "std_error", "lambda_star");
    for (const auto& [m, ci] : robust_ci::ci_curve(r.ci_model, r.shape, pf.m_grid, path, alpha, pf.options.criterion)) {
      csv_row(out, format_cell(m), format_cell(ci.estimate), format_cell(ci.lower), format_cell(ci.upper),
              format_cell(ci.max_bias), format_cell(ci.std_error), format_cell(ci.lambda_star));
    }
  } else if (command == "path") {
    const SensitivityFrontier path = sensitivity::frontier(r.frontier_model, r.shape);
    header(out, command, pf);
    out << "lambda,bbar,var";
    for (Eigen::Index i = 0; i < r.frontier_model.dg(); ++i) out << ",k" << (i + 1);
    out << "\n";
    for (const auto& knot : path.knots()) {
      out << format_cell(knot.lambda) << ',' << format_cell(knot.bbar) << ',' << format_cell(knot.var);
      for (Eigen::Index i = 0; i < knot.k.k.size(); ++i) out << ',' << format_cell(knot.k.k(i));
      out << "\n";
    }
  } else if (command == "efficiency") {
    header(out, command, pf);
    csv_row(out, "m", "kappa_two_sided", "kappa_one_sided", "universal_lower");
    for (double m : pf.m_grid) {
      const EfficiencyReport rep = efficiency::report(r.frontier_model, r.shape.with_m(m), alpha, pf.options.beta);
      csv_row(out, format_cell(m), format_cell(rep.kappa_two_sided), format_cell(rep.kappa_one_sided),
              format_cell(rep.universal_lower));
    }
  } else if (command == "spectest") {
    header(out, command, pf);
    csv_row(out, "m", "statistic", "df", "ncp_bar", "critical_value", "reject", "m_min");
    const double m_min = spec_test::m_lower_ci(r.ci_model, r.shape, alpha);
    for (double m : pf.m_grid) {
      const SpecTestResult t = spec_test::test_at_m(r.ci_model, r.shape.with_m(m), alpha);
      csv_row(out, format_cell(m), format_cell(t.statistic), t.df, format_cell(t.ncp_bar),
              format_cell(t.critical_value), t.reject ? "true" : "false", format_cell(m_min));
    }
  } else if (command == "simulate") {
    const SensitivityFrontier path = sensitivity::frontier(r.frontier_model, r.shape);
    header(out, command, pf);
    csv_row(out, "m", "replications", "nominal", "coverage", "mc_stderr", "wald_coverage", "mean_z", "max_bias_sd",
            "lambda_star");
    for (double m : pf.m_grid) {
      const MisspecSet set = r.shape.with_m(m);
      const LambdaChoice choice = sensitivity::select_lambda(path, m, alpha, Criterion::CiLength);
      const Vector c = oracle::adversarial_c(choice.knot.k, set);
      const CoverageReport rep = oracle::mc_coverage(r.frontier_model, set, alpha, c, pf.options.reps, pf.options.seed);
      csv_row(out, format_cell(m), rep.replications, format_cell(rep.nominal), format_cell(rep.coverage),
              format_cell(rep.mc_stderr), format_cell(rep.wald_coverage), format_cell(rep.mean_z),
              format_cell(rep.max_bias_sd), format_cell(rep.lambda_star));
    }
  } else {
    invalid("command", "unknown command '" + command + "'");
  }
  sink << out.str();
}

int exit_code(const Error& e) {
  switch (category(e.code())) {
    case ErrorCategory::Validation:
      return 2;
    case ErrorCategory::Numerical:
      return 3;
    case ErrorCategory::Dimension:
      return 4;
  }
  return 3;
}

}  // namespace momentguard::cli
