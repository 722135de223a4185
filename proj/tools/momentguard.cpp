#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "momentguard/cli.hpp"

using namespace momentguard;

int main(int argc, char** argv) {
  CLI::App app{"Misspecification-robust inference for moment-condition models"};
  app.set_version_flag("--version", cli::kVersion);

  std::string command;
  std::string problem_path;
  std::optional<double> alpha;
  std::vector<double> m_grid;
  std::string variance;
  std::string ci_variance;
  std::string criterion;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> reps;
  std::optional<double> beta;

  app.add_option("command", command, "ci | path | efficiency | spectest | simulate")
      ->required()
      ->check(CLI::IsMember({"ci", "path", "efficiency", "spectest", "simulate"}));
  app.add_option("--problem", problem_path, "problem file")->required();
  app.add_option("--alpha", alpha, "significance level");
  app.add_option("--m-grid", m_grid, "comma-separated misspecification magnitudes")->delimiter(',');
  app.add_option("--variance", variance, "variance used for the sensitivity frontier")
      ->check(CLI::IsMember({"robust", "homoskedastic"}));
  app.add_option("--ci-variance", ci_variance, "variance used for the reported interval (IV input)")
      ->check(CLI::IsMember({"robust", "homoskedastic"}));
  app.add_option("--criterion", criterion, "lambda selection criterion")->check(CLI::IsMember({"ci", "mse"}));
  app.add_option("--beta", beta, "quantile for one-sided efficiency");
  app.add_option("--seed", seed, "simulation seed");
  app.add_option("--reps", reps, "simulation replications");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  auto mode = [](const std::string& s) { return s == "robust" ? VarianceMode::Robust : VarianceMode::Homoskedastic; };
  try {
    cli::ProblemFile problem = cli::load_problem(problem_path);
    if (alpha) problem.alpha = *alpha;
    if (!m_grid.empty()) {
      problem.m_grid = m_grid;
      problem.m_scalar = false;
      for (std::size_t i = 0; i < m_grid.size(); ++i) {
        if (!(m_grid[i] >= 0.0) || (i > 0 && m_grid[i] < m_grid[i - 1])) {
          throw Error(ErrorCode::InvalidInput, "m-grid", "must be nonnegative and ascending");
        }
      }
    }
    if (!variance.empty()) problem.options.variance = mode(variance);
    if (!ci_variance.empty()) problem.options.ci_variance = mode(ci_variance);
    if (!criterion.empty()) problem.options.criterion = criterion == "ci" ? Criterion::CiLength : Criterion::Mse;
    if (beta) problem.options.beta = *beta;
    if (seed) problem.options.seed = *seed;
    if (reps) problem.options.reps = *reps;
    cli::run_command(command, problem, std::cout);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
