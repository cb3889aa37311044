// magi: manifold-constrained Gaussian process inference for ODE dynamics.
//
// Subcommands mirror the analysis workflow end to end:
//   simulate    integrate a built-in model and add observation noise
//   discretize  insert missing-value rows to refine the inference grid
//   gpfit       per-component GP hyper-parameter estimates + smoothing bands
//   gradcheck   verify a model's analytic Jacobians by finite differences
//   fit         run the full solver from a JSON config, write a results dir
//   summary     re-print the parameter table of an existing results dir
//
// Exit codes: 0 success, 2 validation error (bad input), 3 numerical failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "magi/dsl.hpp"
#include "magi/gpfit.hpp"
#include "magi/hmc.hpp"
#include "magi/io.hpp"
#include "magi/kernels.hpp"
#include "magi/ode.hpp"
#include "magi/pipeline.hpp"
#include "magi/posterior.hpp"

namespace {

using namespace magi;

// Human-facing numbers are rounded to 4 significant digits.
std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

arma::vec parse_list(const std::string& csv, const std::string& what) {
  std::vector<double> vals;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw std::invalid_argument("cannot parse " + what + " entry '" + tok +
                                  "' as a number");
    }
  }
  if (vals.empty()) throw std::invalid_argument(what + " must be non-empty");
  return arma::vec(vals);
}

OdeSystem load_model(const std::string& builtin, const std::string& file) {
  if (builtin.empty() == file.empty())
    throw std::invalid_argument(
        "give exactly one of --model <builtin> or --file <ode file>");
  if (!builtin.empty()) return builtin_model(builtin);
  std::ifstream ifs(file);
  if (!ifs.is_open())
    throw std::invalid_argument("cannot open model file: " + file);
  std::stringstream buf;
  buf << ifs.rdbuf();
  return parse_ode_dsl(buf.str());
}

std::string component_name(const OdeSystem& model, arma::uword d) {
  if (d < model.state_names.size()) return model.state_names[d];
  return "X" + std::to_string(d + 1);
}

void print_summary_table(const std::vector<std::string>& names,
                         const arma::vec& mean, const arma::vec& lo,
                         const arma::vec& hi) {
  std::printf("%-24s %12s %12s %12s\n", "parameter", "mean", "2.5%", "97.5%");
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::printf("%-24s %12s %12s %12s\n", names[i].c_str(),
                fmt4(mean(i)).c_str(), fmt4(lo(i)).c_str(),
                fmt4(hi(i)).c_str());
  }
}

// Loads one of our own result CSVs (plain header + numeric body).
arma::mat load_result_csv(const std::string& path,
                          std::vector<std::string>& header) {
  std::ifstream ifs(path);
  if (!ifs.is_open())
    throw std::invalid_argument("cannot open results file: " + path);
  std::string line;
  if (!std::getline(ifs, line))
    throw std::invalid_argument(path + ": empty file");
  header.clear();
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.push_back(tok);
  }
  std::vector<double> cells;
  arma::uword n_rows = 0;
  while (std::getline(ifs, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::size_t n_in_row = 0;
    while (std::getline(ss, tok, ',')) {
      cells.push_back(std::strtod(tok.c_str(), nullptr));
      ++n_in_row;
    }
    if (n_in_row != header.size())
      throw std::invalid_argument(path + ": ragged row");
    ++n_rows;
  }
  arma::mat out(n_rows, header.size());
  for (arma::uword i = 0; i < n_rows; ++i)
    for (arma::uword j = 0; j < header.size(); ++j)
      out(i, j) = cells[i * header.size() + j];
  return out;
}

// ---------------------------------------------------------------------------

int run_simulate(const std::string& model_name, const std::string& model_file,
                 const std::string& theta_csv, const std::string& x0_csv,
                 double t_start, double t_end, double t_by,
                 const std::string& sigma_csv, bool lognormal,
                 std::uint64_t seed, double dt_max, const std::string& out) {
  const OdeSystem model = load_model(model_name, model_file);
  const arma::vec theta = parse_list(theta_csv, "--theta");
  const arma::vec x0 = parse_list(x0_csv, "--x0");
  if (theta.n_elem != model.dim_theta)
    throw std::invalid_argument("--theta needs " +
                                std::to_string(model.dim_theta) +
                                " values for model " + model.name);
  if (x0.n_elem != model.dim_x)
    throw std::invalid_argument("--x0 needs " + std::to_string(model.dim_x) +
                                " values for model " + model.name);
  if (!(t_by > 0.0) || !(t_end > t_start))
    throw std::invalid_argument("need --end > --start and --by > 0");

  std::vector<double> ts;
  for (double t = t_start; t <= t_end + 1e-9; t += t_by) ts.push_back(t);
  const arma::vec times(ts);

  const Trajectory traj = integrate(model, x0, theta, times, dt_max);

  arma::vec sigma(model.dim_x, arma::fill::zeros);
  if (!sigma_csv.empty()) {
    const arma::vec s = parse_list(sigma_csv, "--sigma");
    if (s.n_elem == 1) {
      sigma.fill(s(0));
    } else if (s.n_elem == model.dim_x) {
      sigma = s;
    } else {
      throw std::invalid_argument("--sigma needs 1 or " +
                                  std::to_string(model.dim_x) + " values");
    }
    if (sigma.min() < 0.0)
      throw std::invalid_argument("--sigma must be non-negative");
  }

  ObservationSet data;
  data.grid = traj.times;
  data.values = traj.values;
  data.component_names.resize(model.dim_x);
  for (arma::uword d = 0; d < model.dim_x; ++d)
    data.component_names[d] = component_name(model, d);

  Rng rng(seed);
  for (arma::uword d = 0; d < model.dim_x; ++d) {
    if (sigma(d) == 0.0) continue;
    const arma::vec z = rng.normal_vec(data.grid.n_elem);
    if (lognormal) {
      data.values.col(d) %= arma::exp(sigma(d) * z);
    } else {
      data.values.col(d) += sigma(d) * z;
    }
  }

  write_observations(data, out);
  std::printf("wrote %llu observations of %s to %s\n",
              static_cast<unsigned long long>(data.grid.n_elem),
              model.name.c_str(), out.c_str());
  return 0;
}

int run_discretize(const std::string& data_path, arma::uword level, double by,
                   const std::string& out) {
  if (level == 0 && !(by > 0.0))
    throw std::invalid_argument("give --level and/or --by");
  ObservationSet data = read_observations(data_path);
  if (by > 0.0) data = set_discretization_by(data, by);
  if (level > 0) data = set_discretization_level(data, level);
  write_observations(data, out);
  std::printf("wrote %llu rows to %s\n",
              static_cast<unsigned long long>(data.grid.n_elem), out.c_str());
  return 0;
}

int run_gpfit(const std::string& data_path, const std::string& kernel,
              const std::string& sigma_csv, double by,
              const std::string& out) {
  const ObservationSet data = read_observations(data_path);
  const KernelKind kind = kernel_kind_from_string(kernel);
  const arma::uword dim = data.values.n_cols;
  const arma::umat mask = data.mask();

  arma::vec sigma_fixed;
  if (!sigma_csv.empty()) {
    sigma_fixed = parse_list(sigma_csv, "--sigma");
    if (sigma_fixed.n_elem != dim)
      throw std::invalid_argument("--sigma needs " + std::to_string(dim) +
                                  " values (NaN = estimate)");
  }

  std::vector<std::optional<SmoothingResult>> fits(dim);
  for (arma::uword d = 0; d < dim; ++d) {
    const arma::uvec idx = arma::find(mask.col(d));
    const std::string name =
        d < data.component_names.size() ? data.component_names[d]
                                        : "X" + std::to_string(d + 1);
    if (idx.n_elem < 3) {
      std::printf("%-12s <3 observations, skipped\n", name.c_str());
      continue;
    }
    std::optional<double> fixed;
    if (sigma_fixed.n_elem == dim && std::isfinite(sigma_fixed(d)))
      fixed = sigma_fixed(d);
    const arma::vec y = arma::vec(data.values.col(d)).elem(idx);
    const SmoothingResult fit =
        gp_smooth(y, data.grid.elem(idx), kind, fixed);
    fits[d] = fit;
    std::printf("%-12s phi1=%-10s phi2=%-10s", name.c_str(),
                fmt4(fit.phi(0)).c_str(), fmt4(fit.phi(1)).c_str());
    if (fit.phi.n_elem > 2)
      std::printf(" phi3=%-10s", fmt4(fit.phi(2)).c_str());
    std::printf(" sigma=%-10s%s\n", fmt4(fit.sigma).c_str(),
                fit.converged ? "" : " (not converged)");
  }

  if (out.empty()) return 0;

  // Smoothing diagnostic: conditional mean and a 95% band on a refined grid.
  ObservationSet refined = data;
  if (by > 0.0) refined = set_discretization_by(data, by);
  const arma::vec t_out = refined.grid;
  ObservationSet band;
  band.grid = t_out;
  band.values.set_size(t_out.n_elem, 3 * dim);
  band.values.fill(arma::datum::nan);
  band.component_names.resize(3 * dim);
  for (arma::uword d = 0; d < dim; ++d) {
    const std::string name =
        d < data.component_names.size() ? data.component_names[d]
                                        : "X" + std::to_string(d + 1);
    band.component_names[3 * d] = name + "_mean";
    band.component_names[3 * d + 1] = name + "_lo";
    band.component_names[3 * d + 2] = name + "_hi";
    if (!fits[d]) continue;
    const arma::uvec idx = arma::find(mask.col(d));
    const arma::vec y = arma::vec(data.values.col(d)).elem(idx);
    const arma::vec t_obs = data.grid.elem(idx);
    KernelSpec spec;
    spec.kind = kind;
    spec.phi = fits[d]->phi;
    const arma::vec m = gp_cond_mean(y, t_obs, t_out, spec, fits[d]->sigma);
    const arma::mat cov = gp_cond_cov(y, t_obs, t_out, spec, fits[d]->sigma);
    const arma::vec half =
        1.96 * arma::sqrt(arma::clamp(cov.diag(), 0.0, arma::datum::inf));
    band.values.col(3 * d) = m;
    band.values.col(3 * d + 1) = m - half;
    band.values.col(3 * d + 2) = m + half;
  }
  write_observations(band, out);
  std::printf("wrote smoothing bands to %s\n", out.c_str());
  return 0;
}

int run_gradcheck(const std::string& model_name, const std::string& model_file,
                  const std::string& theta_csv, double tol) {
  const OdeSystem model = load_model(model_name, model_file);

  arma::vec theta(model.dim_theta);
  if (!theta_csv.empty()) {
    theta = parse_list(theta_csv, "--theta");
    if (theta.n_elem != model.dim_theta)
      throw std::invalid_argument("--theta needs " +
                                  std::to_string(model.dim_theta) + " values");
  } else {
    for (arma::uword i = 0; i < model.dim_theta; ++i) {
      const double lo = model.theta_lower(i), hi = model.theta_upper(i);
      if (lo <= 1.0 && 1.0 <= hi) {
        theta(i) = 1.0;
      } else if (std::isfinite(lo) && std::isfinite(hi)) {
        theta(i) = 0.5 * (lo + hi);
      } else if (std::isfinite(lo)) {
        theta(i) = lo + 1.0;
      } else {
        theta(i) = hi - 1.0;
      }
    }
  }

  // A smooth, strictly positive test sheet: gradients are checked pointwise,
  // so the rows need not solve the ODE.
  const arma::vec times = arma::linspace(0.0, 2.0, 9);
  arma::mat x_test(times.n_elem, model.dim_x);
  for (arma::uword i = 0; i < times.n_elem; ++i)
    for (arma::uword d = 0; d < model.dim_x; ++d)
      x_test(i, d) = 1.0 + 0.1 * std::sin(times(i) + double(d));

  const GradCheckReport report = check_gradients(model, x_test, theta, times, tol);
  std::printf("model %s: max |analytic - fd| = %s (d/dx), %s (d/dtheta), tol %s\n",
              model.name.c_str(), fmt4(report.max_abs_err_dx).c_str(),
              fmt4(report.max_abs_err_dtheta).c_str(), fmt4(tol).c_str());
  std::printf("gradcheck %s\n", report.pass ? "PASS" : "FAIL");
  if (!report.pass)
    throw std::runtime_error("gradient check failed for model " + model.name);
  return 0;
}

int run_fit(const std::string& config_path, bool verbose_override) {
  RunConfig cfg = parse_config(config_path);
  if (verbose_override) cfg.control.verbose = true;

  ObservationSet data = read_observations(cfg.data_path);
  if (cfg.discretize_by > 0.0) data = set_discretization_by(data, cfg.discretize_by);
  if (cfg.discretize_level > 0)
    data = set_discretization_level(data, cfg.discretize_level);

  const OdeSystem model = load_model(cfg.builtin, cfg.dsl_file);

  const auto t0 = std::chrono::steady_clock::now();
  const McmcOutput out = magi_solve(data, model, cfg.control);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  RunManifest info;
  info.config_json = config_to_json(cfg);
  info.seed = cfg.control.seed;
  info.wall_seconds = wall;
  write_results(out, cfg.output_dir, info);

  const bool with_sigma = out.sigma_sampled_components.n_elem > 0;
  const SummaryTable table = summarize(out, 0.025, 0.975, with_sigma);
  print_summary_table(table.names, table.mean, table.lo, table.hi);
  std::printf("kept %llu samples on a grid of %llu points in %s s; results in %s\n",
              static_cast<unsigned long long>(out.theta_samples.n_rows),
              static_cast<unsigned long long>(out.grid.n_elem),
              fmt4(wall).c_str(), cfg.output_dir.c_str());
  return 0;
}

int run_summary(const std::string& dir) {
  std::vector<std::string> names;
  std::vector<std::string> header;
  arma::mat samples =
      load_result_csv((std::filesystem::path(dir) / "theta_samples.csv").string(),
                      header);
  names = header;

  const std::string sigma_path =
      (std::filesystem::path(dir) / "sigma_samples.csv").string();
  if (std::filesystem::exists(sigma_path)) {
    std::vector<std::string> sigma_header;
    const arma::mat sigma = load_result_csv(sigma_path, sigma_header);
    // Constant columns were fixed, not sampled; only report the sampled ones.
    for (arma::uword d = 0; d < sigma.n_cols; ++d) {
      if (sigma.col(d).max() > sigma.col(d).min()) {
        samples = arma::join_rows(samples, sigma.col(d));
        names.push_back(sigma_header[d]);
      }
    }
  }
  if (samples.n_rows == 0) throw std::invalid_argument(dir + ": no samples");

  arma::vec mean(names.size()), lo(names.size()), hi(names.size());
  for (std::size_t j = 0; j < names.size(); ++j) {
    mean(j) = arma::mean(samples.col(j));
    lo(j) = sample_quantile(samples.col(j), 0.025);
    hi(j) = sample_quantile(samples.col(j), 0.975);
  }
  print_summary_table(names, mean, lo, hi);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MAGI: Bayesian inference of ODE trajectories and parameters "
               "from noisy, sparse, partially missing observations"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "integrate a model, add noise, write CSV");
  std::string sim_model, sim_file, sim_theta, sim_x0, sim_sigma, sim_out = "data.csv";
  double sim_start = 0.0, sim_end = 0.0, sim_by = 0.0, sim_dtmax = 0.0;
  bool sim_lognormal = false;
  std::uint64_t sim_seed = 0;
  sim->add_option("--model", sim_model, "built-in model name");
  sim->add_option("--file", sim_file, "ODE description file");
  sim->add_option("--theta", sim_theta, "comma-separated parameters")->required();
  sim->add_option("--x0", sim_x0, "comma-separated initial state")->required();
  sim->add_option("--start", sim_start, "first observation time")->required();
  sim->add_option("--end", sim_end, "last observation time")->required();
  sim->add_option("--by", sim_by, "observation spacing")->required();
  sim->add_option("--sigma", sim_sigma, "noise SD (scalar or per component)");
  sim->add_flag("--lognormal", sim_lognormal,
                "multiplicative log-normal noise instead of additive");
  sim->add_option("--seed", sim_seed, "noise RNG seed");
  sim->add_option("--dt-max", sim_dtmax, "integrator step bound");
  sim->add_option("--out", sim_out, "output CSV path");

  // discretize
  auto* dis = app.add_subcommand("discretize", "insert missing rows to refine the grid");
  std::string dis_data, dis_out = "discretized.csv";
  arma::uword dis_level = 0;
  double dis_by = 0.0;
  dis->add_option("--data", dis_data, "input CSV")->required();
  dis->add_option("--level", dis_level, "halvings of the spacing");
  dis->add_option("--by", dis_by, "union with grid first:last:by");
  dis->add_option("--out", dis_out, "output CSV path");

  // gpfit
  auto* gpf = app.add_subcommand("gpfit", "per-component GP fits and smoothing bands");
  std::string gpf_data, gpf_kernel = "general-matern", gpf_sigma, gpf_out;
  double gpf_by = 0.0;
  gpf->add_option("--data", gpf_data, "input CSV")->required();
  gpf->add_option("--kernel", gpf_kernel, "covariance kernel");
  gpf->add_option("--sigma", gpf_sigma, "fixed noise SD per component (NaN = estimate)");
  gpf->add_option("--by", gpf_by, "refine band grid by this spacing");
  gpf->add_option("--out", gpf_out, "write mean/lo/hi band CSV here");

  // gradcheck
  auto* grd = app.add_subcommand("gradcheck", "finite-difference check of model Jacobians");
  std::string grd_model, grd_file, grd_theta;
  double grd_tol = 1e-4;
  grd->add_option("--model", grd_model, "built-in model name");
  grd->add_option("--file", grd_file, "ODE description file");
  grd->add_option("--theta", grd_theta, "parameters at which to check");
  grd->add_option("--tol", grd_tol, "max allowed |analytic - fd|");

  // fit
  auto* fit = app.add_subcommand("fit", "run the solver from a JSON config");
  std::string fit_config;
  bool fit_verbose = false;
  fit->add_option("--config", fit_config, "JSON config path")->required();
  fit->add_flag("--verbose", fit_verbose, "print sampler progress");

  // summary
  auto* smr = app.add_subcommand("summary", "re-print the table of a results dir");
  std::string smr_dir;
  smr->add_option("--dir", smr_dir, "results directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return run_simulate(sim_model, sim_file, sim_theta, sim_x0, sim_start,
                          sim_end, sim_by, sim_sigma, sim_lognormal, sim_seed,
                          sim_dtmax, sim_out);
    if (dis->parsed()) return run_discretize(dis_data, dis_level, dis_by, dis_out);
    if (gpf->parsed())
      return run_gpfit(gpf_data, gpf_kernel, gpf_sigma, gpf_by, gpf_out);
    if (grd->parsed()) return run_gradcheck(grd_model, grd_file, grd_theta, grd_tol);
    if (fit->parsed()) return run_fit(fit_config, fit_verbose);
    if (smr->parsed()) return run_summary(smr_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
