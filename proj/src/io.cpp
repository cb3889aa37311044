#include "magi/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "magi/kernels.hpp"
#include "magi/ode.hpp"

namespace magi {

namespace {

using nlohmann::json;

std::string component_name(const ObservationSet& data, arma::uword d) {
  if (d < data.component_names.size()) return data.component_names[d];
  return "X" + std::to_string(d + 1);
}

// Full round-trip precision; NaN spelled out for CSV cells.
std::string fmt_full(double v) {
  if (std::isnan(v)) return "NaN";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && (std::isspace(static_cast<unsigned char>(s[a])) != 0)) ++a;
  while (b > a && (std::isspace(static_cast<unsigned char>(s[b - 1])) != 0)) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : line) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_cell(const std::string& tok, const std::string& path,
                  std::size_t line_no, std::size_t col_no) {
  const auto fail = [&](const std::string& what) -> double {
    throw std::invalid_argument(path + ": " + what + " '" + tok + "' at line " +
                                std::to_string(line_no) + ", column " +
                                std::to_string(col_no));
  };
  if (tok.empty()) return fail("empty cell");
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size()) return fail("non-numeric value");
  if (std::isinf(v)) return fail("non-finite value");
  return v;
}

// ---------------------------------------------------------------------------
// Config parsing helpers
// ---------------------------------------------------------------------------

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return s;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Rejects keys of `obj` not in `allowed`, suggesting the closest legal
// spelling (case-insensitive match first, then edit distance <= 3).
void check_keys(const json& obj, const std::string& section,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    const std::string& key = item.key();
    bool known = false;
    for (const char* k : allowed) {
      if (key == k) {
        known = true;
        break;
      }
    }
    if (known) continue;

    std::string best;
    std::size_t best_dist = 4;
    for (const char* k : allowed) {
      if (lowercase(key) == lowercase(k)) {
        best = k;
        best_dist = 0;
        break;
      }
      const std::size_t dist = edit_distance(lowercase(key), lowercase(k));
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    std::string msg = "unknown key '" + key + "' in " + section;
    if (!best.empty()) msg += "; did you mean '" + best + "'?";
    throw std::invalid_argument(msg);
  }
}

[[noreturn]] void type_error(const std::string& section, const std::string& key,
                             const std::string& expected) {
  throw std::invalid_argument("config key '" + key + "' in " + section +
                              " must be " + expected);
}

double need_number(const json& v, const std::string& section,
                   const std::string& key) {
  if (!v.is_number()) type_error(section, key, "a number");
  return v.get<double>();
}

bool need_bool(const json& v, const std::string& section,
               const std::string& key) {
  if (!v.is_boolean()) type_error(section, key, "true or false");
  return v.get<bool>();
}

std::string need_string(const json& v, const std::string& section,
                        const std::string& key) {
  if (!v.is_string()) type_error(section, key, "a string");
  return v.get<std::string>();
}

arma::uword need_count(const json& v, const std::string& section,
                       const std::string& key, bool positive) {
  if (!v.is_number_integer() || v.is_number_float())
    type_error(section, key, positive ? "a positive integer"
                                      : "a non-negative integer");
  const auto raw = v.get<long long>();
  if (raw < (positive ? 1 : 0))
    type_error(section, key, positive ? "a positive integer"
                                      : "a non-negative integer");
  return static_cast<arma::uword>(raw);
}

// 1-D array of numbers; null entries become NaN (= "estimate this one").
arma::vec need_vec(const json& v, const std::string& section,
                   const std::string& key) {
  if (!v.is_array() || v.empty())
    type_error(section, key, "a non-empty array of numbers");
  arma::vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i].is_null()) {
      out(i) = arma::datum::nan;
    } else if (v[i].is_number()) {
      out(i) = v[i].get<double>();
    } else {
      type_error(section, key, "an array of numbers (null = estimate)");
    }
  }
  return out;
}

// 2-D array (list of equal-length rows); null entries become NaN.
arma::mat need_mat(const json& v, const std::string& section,
                   const std::string& key) {
  if (!v.is_array() || v.empty() || !v[0].is_array() || v[0].empty())
    type_error(section, key, "a non-empty array of equal-length rows");
  const std::size_t n_cols = v[0].size();
  arma::mat out(v.size(), n_cols);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_array() || v[i].size() != n_cols)
      type_error(section, key, "a non-empty array of equal-length rows");
    for (std::size_t j = 0; j < n_cols; ++j) {
      if (v[i][j].is_null()) {
        out(i, j) = arma::datum::nan;
      } else if (v[i][j].is_number()) {
        out(i, j) = v[i][j].get<double>();
      } else {
        type_error(section, key, "rows of numbers (null = estimate)");
      }
    }
  }
  return out;
}

json vec_to_json(const arma::vec& v) {
  json out = json::array();
  for (const double x : v) out.push_back(x);
  return out;
}

json mat_to_json(const arma::mat& m) {
  json out = json::array();
  for (arma::uword i = 0; i < m.n_rows; ++i) {
    json row = json::array();
    for (arma::uword j = 0; j < m.n_cols; ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

std::ofstream open_for_write(const std::string& path) {
  std::ofstream ofs(path, std::ios::trunc);
  if (!ofs.is_open())
    throw std::runtime_error("cannot open for writing: " + path);
  return ofs;
}

void finish_write(std::ofstream& ofs, const std::string& path) {
  ofs.flush();
  if (!ofs) throw std::runtime_error("failed while writing: " + path);
}

// One CSV with a header and a numeric body.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const arma::mat& body) {
  std::ofstream ofs = open_for_write(path);
  for (std::size_t j = 0; j < header.size(); ++j) {
    ofs << (j ? "," : "") << header[j];
  }
  ofs << '\n';
  for (arma::uword i = 0; i < body.n_rows; ++i) {
    for (arma::uword j = 0; j < body.n_cols; ++j) {
      ofs << (j ? "," : "") << fmt_full(body(i, j));
    }
    ofs << '\n';
  }
  finish_write(ofs, path);
}

}  // namespace

ObservationSet read_observations(const std::string& path) {
  std::ifstream ifs(path);
  if (!ifs.is_open())
    throw std::invalid_argument("cannot open data file: " + path);

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(ifs, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) lines.push_back(line);
  }
  if (lines.empty()) throw std::invalid_argument(path + ": empty file");

  // Header: drop a UTF-8 BOM if present, then require `time` first.
  std::string header_line = lines[0];
  if (header_line.rfind("\xEF\xBB\xBF", 0) == 0) header_line.erase(0, 3);
  const std::vector<std::string> header = split_line(header_line);
  if (header.empty() || header[0] != "time")
    throw std::invalid_argument(
        path + ": first column of the header must be named 'time'");
  if (header.size() < 2)
    throw std::invalid_argument(path +
                                ": need at least one component column");
  const std::size_t n_cols = header.size();

  ObservationSet out;
  out.component_names.assign(header.begin() + 1, header.end());
  const std::size_t n_rows = lines.size() - 1;
  out.grid.set_size(n_rows);
  out.values.set_size(n_rows, n_cols - 1);

  for (std::size_t r = 0; r < n_rows; ++r) {
    const std::size_t line_no = r + 2;  // 1-based, after the header
    const std::vector<std::string> cells = split_line(lines[r + 1]);
    if (cells.size() != n_cols)
      throw std::invalid_argument(
          path + ": line " + std::to_string(line_no) + " has " +
          std::to_string(cells.size()) + " cells, expected " +
          std::to_string(n_cols));
    const double t = parse_cell(cells[0], path, line_no, 1);
    if (std::isnan(t))
      throw std::invalid_argument(path + ": missing time value at line " +
                                  std::to_string(line_no));
    out.grid(r) = t;
    for (std::size_t c = 1; c < n_cols; ++c) {
      out.values(r, c - 1) = parse_cell(cells[c], path, line_no, c + 1);
    }
  }

  for (std::size_t r = 1; r < n_rows; ++r) {
    if (std::abs(out.grid(r) - out.grid(r - 1)) <= 1e-9)
      throw std::invalid_argument(
          path + ": duplicate time " + fmt_full(out.grid(r)) + " at line " +
          std::to_string(r + 2) + " (tolerance 1e-9)");
    if (out.grid(r) < out.grid(r - 1))
      throw std::invalid_argument(
          path + ": times must be strictly increasing (line " +
          std::to_string(r + 2) + ")");
  }

  out.validate();
  return out;
}

void write_observations(const ObservationSet& data, const std::string& path) {
  data.validate();
  std::vector<std::string> header{"time"};
  for (arma::uword d = 0; d < data.values.n_cols; ++d) {
    header.push_back(component_name(data, d));
  }
  arma::mat body(data.grid.n_elem, data.values.n_cols + 1);
  body.col(0) = data.grid;
  body.cols(1, data.values.n_cols) = data.values;
  write_csv(path, header, body);
}

std::string write_results(const McmcOutput& out, const std::string& dir,
                          const RunManifest& info) {
  if (out.theta_samples.n_rows == 0)
    throw std::invalid_argument("write_results: empty MCMC output");

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("cannot create output directory " + dir + ": " +
                             ec.message());
  const auto in_dir = [&](const std::string& f) {
    return (std::filesystem::path(dir) / f).string();
  };

  const arma::uword n_kept = out.theta_samples.n_rows;
  const arma::uword n_theta = out.theta_samples.n_cols;
  const arma::uword n_i = out.grid.n_elem;
  const arma::uword dim = out.sigma_samples.n_cols;

  std::vector<std::string> theta_header;
  for (arma::uword i = 0; i < n_theta; ++i) {
    theta_header.push_back(i < out.theta_names.size()
                               ? out.theta_names[i]
                               : "theta" + std::to_string(i + 1));
  }
  write_csv(in_dir("theta_samples.csv"), theta_header, out.theta_samples);

  std::vector<std::string> comp_header;
  std::vector<std::string> sigma_header;
  for (arma::uword d = 0; d < dim; ++d) {
    comp_header.push_back(component_name(out.data, d));
    sigma_header.push_back("sigma_" + comp_header.back());
  }
  write_csv(in_dir("sigma_samples.csv"), sigma_header, out.sigma_samples);
  write_csv(in_dir("lp.csv"), {"lp"}, arma::mat(out.lp));
  write_csv(in_dir("phi.csv"), comp_header, out.phi);

  // Trajectory point estimate and bands per grid point per component.
  arma::mat x_mean(n_i, dim + 1), x_lo(n_i, dim + 1), x_hi(n_i, dim + 1);
  x_mean.col(0) = out.grid;
  x_lo.col(0) = out.grid;
  x_hi.col(0) = out.grid;
  for (arma::uword d = 0; d < dim; ++d) {
    for (arma::uword i = 0; i < n_i; ++i) {
      const arma::vec samples = out.x_samples.slice(d).col(i);
      x_mean(i, d + 1) = arma::mean(samples);
      x_lo(i, d + 1) = sample_quantile(samples, 0.025);
      x_hi(i, d + 1) = sample_quantile(samples, 0.975);
    }
  }
  std::vector<std::string> x_header{"time"};
  x_header.insert(x_header.end(), comp_header.begin(), comp_header.end());
  write_csv(in_dir("x_mean.csv"), x_header, x_mean);
  write_csv(in_dir("x_lo.csv"), x_header, x_lo);
  write_csv(in_dir("x_hi.csv"), x_header, x_hi);

  const bool with_sigma = out.sigma_sampled_components.n_elem > 0;
  const SummaryTable table = summarize(out, 0.025, 0.975, with_sigma);
  {
    std::ofstream ofs = open_for_write(in_dir("summary.csv"));
    ofs << "name,mean,lo_2.5,hi_97.5\n";
    for (std::size_t r = 0; r < table.names.size(); ++r) {
      ofs << table.names[r] << ',' << fmt_full(table.mean(r)) << ','
          << fmt_full(table.lo(r)) << ',' << fmt_full(table.hi(r)) << '\n';
    }
    finish_write(ofs, in_dir("summary.csv"));
  }

  json manifest;
  try {
    manifest["config"] = json::parse(info.config_json);
  } catch (const json::parse_error&) {
    manifest["config"] = info.config_json;
  }
  manifest["seed"] = info.seed;
  manifest["wall_seconds"] = info.wall_seconds;
  manifest["n_kept"] = n_kept;
  manifest["grid_size"] = n_i;
  manifest["files"] = {"theta_samples.csv", "sigma_samples.csv", "lp.csv",
                       "x_mean.csv",        "x_lo.csv",          "x_hi.csv",
                       "phi.csv",           "summary.csv",       "manifest.json"};
  const std::string text = manifest.dump(2);
  {
    std::ofstream ofs = open_for_write(in_dir("manifest.json"));
    ofs << text << '\n';
    finish_write(ofs, in_dir("manifest.json"));
  }
  return text;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream ifs(path);
  if (!ifs.is_open())
    throw std::invalid_argument("cannot open config file: " + path);
  json root;
  try {
    root = json::parse(ifs);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  if (!root.is_object())
    throw std::invalid_argument("config " + path + ": root must be an object");
  check_keys(root, "the top level", {"model", "data", "control", "output"});

  RunConfig cfg;

  // A key set to null counts as absent (config_to_json writes unset
  // optional settings that way).
  const auto has = [](const json& obj, const char* key) {
    return obj.contains(key) && !obj[key].is_null();
  };

  // ---- model ---------------------------------------------------------------
  if (!root.contains("model") || !root["model"].is_object())
    throw std::invalid_argument(
        "config needs a 'model' section with 'builtin' or 'file'");
  const json& model = root["model"];
  check_keys(model, "section 'model'", {"builtin", "file"});
  if (has(model, "builtin"))
    cfg.builtin = need_string(model["builtin"], "section 'model'", "builtin");
  if (has(model, "file"))
    cfg.dsl_file = need_string(model["file"], "section 'model'", "file");
  if (cfg.builtin.empty() == cfg.dsl_file.empty())
    throw std::invalid_argument(
        "section 'model' must contain exactly one of 'builtin' or 'file'");
  if (!cfg.builtin.empty()) {
    builtin_model(cfg.builtin);  // validates the name, listing the choices
  } else if (!std::filesystem::exists(cfg.dsl_file)) {
    throw std::invalid_argument("model file does not exist: " + cfg.dsl_file);
  }

  // ---- data ----------------------------------------------------------------
  if (!root.contains("data") || !root["data"].is_object())
    throw std::invalid_argument("config needs a 'data' section with 'path'");
  const json& data = root["data"];
  check_keys(data, "section 'data'", {"path", "by", "level"});
  if (!has(data, "path"))
    throw std::invalid_argument("section 'data' must contain 'path'");
  cfg.data_path = need_string(data["path"], "section 'data'", "path");
  if (!std::filesystem::exists(cfg.data_path))
    throw std::invalid_argument("data file does not exist: " + cfg.data_path);
  if (has(data, "by")) {
    cfg.discretize_by = need_number(data["by"], "section 'data'", "by");
    if (!(cfg.discretize_by > 0.0))
      type_error("section 'data'", "by", "a positive number");
  }
  if (has(data, "level"))
    cfg.discretize_level =
        need_count(data["level"], "section 'data'", "level", false);

  // ---- control -------------------------------------------------------------
  if (root.contains("control")) {
    if (!root["control"].is_object())
      throw std::invalid_argument("section 'control' must be an object");
    const json& c = root["control"];
    const std::string sec = "section 'control'";
    check_keys(c, sec,
               {"sigma", "useFixedSigma", "xInit", "theta", "priorTemperature",
                "kerneltype", "phi", "mu", "dotmu", "bandSize", "niterHmc",
                "nstepsHmc", "burninRatio", "stepSizeFactor",
                "skipMissingComponentOptimization", "positiveSystem",
                "verbose", "seed"});
    SolveControl& sc = cfg.control;
    if (has(c, "sigma")) sc.sigma = need_vec(c["sigma"], sec, "sigma");
    if (has(c, "useFixedSigma"))
      sc.use_fixed_sigma = need_bool(c["useFixedSigma"], sec, "useFixedSigma");
    if (has(c, "xInit")) sc.x_init = need_mat(c["xInit"], sec, "xInit");
    if (has(c, "theta")) sc.theta_init = need_vec(c["theta"], sec, "theta");
    if (has(c, "priorTemperature"))
      sc.prior_temperature =
          need_number(c["priorTemperature"], sec, "priorTemperature");
    if (has(c, "kerneltype"))
      sc.kernel_kind = kernel_kind_from_string(
          need_string(c["kerneltype"], sec, "kerneltype"));
    if (has(c, "phi")) sc.phi = need_mat(c["phi"], sec, "phi");
    if (has(c, "mu")) sc.mu = need_mat(c["mu"], sec, "mu");
    if (has(c, "dotmu")) sc.dotmu = need_mat(c["dotmu"], sec, "dotmu");
    if (has(c, "bandSize"))
      sc.band_size = need_count(c["bandSize"], sec, "bandSize", true);
    if (has(c, "niterHmc"))
      sc.n_iter = need_count(c["niterHmc"], sec, "niterHmc", true);
    if (has(c, "nstepsHmc"))
      sc.n_leapfrog = need_count(c["nstepsHmc"], sec, "nstepsHmc", true);
    if (has(c, "burninRatio"))
      sc.burnin_ratio = need_number(c["burninRatio"], sec, "burninRatio");
    if (has(c, "stepSizeFactor"))
      sc.step_factor = need_number(c["stepSizeFactor"], sec, "stepSizeFactor");
    if (has(c, "skipMissingComponentOptimization"))
      sc.skip_missing_component_optimization = need_bool(
          c["skipMissingComponentOptimization"], sec,
          "skipMissingComponentOptimization");
    if (has(c, "positiveSystem"))
      sc.positive_system = need_bool(c["positiveSystem"], sec,
                                     "positiveSystem");
    if (has(c, "verbose")) sc.verbose = need_bool(c["verbose"], sec,
                                                  "verbose");
    if (has(c, "seed")) sc.seed = need_count(c["seed"], sec, "seed", false);

    if (sc.use_fixed_sigma && !sc.sigma)
      throw std::invalid_argument(
          "section 'control': useFixedSigma requires 'sigma'");
  }

  // ---- output --------------------------------------------------------------
  if (root.contains("output")) {
    if (!root["output"].is_object())
      throw std::invalid_argument("section 'output' must be an object");
    check_keys(root["output"], "section 'output'", {"dir"});
    if (has(root["output"], "dir"))
      cfg.output_dir =
          need_string(root["output"]["dir"], "section 'output'", "dir");
  }

  return cfg;
}

std::string config_to_json(const RunConfig& config) {
  json j;
  if (!config.builtin.empty()) {
    j["model"]["builtin"] = config.builtin;
  } else {
    j["model"]["file"] = config.dsl_file;
  }
  j["data"]["path"] = config.data_path;
  if (config.discretize_by > 0.0) j["data"]["by"] = config.discretize_by;
  if (config.discretize_level > 0) j["data"]["level"] = config.discretize_level;
  j["output"]["dir"] = config.output_dir;

  const SolveControl& sc = config.control;
  json c;
  c["sigma"] = sc.sigma ? vec_to_json(*sc.sigma) : json();
  c["useFixedSigma"] = sc.use_fixed_sigma;
  c["xInit"] = sc.x_init ? mat_to_json(*sc.x_init) : json();
  c["theta"] = sc.theta_init ? vec_to_json(*sc.theta_init) : json();
  c["priorTemperature"] =
      sc.prior_temperature ? json(*sc.prior_temperature) : json();
  c["kerneltype"] = to_string(sc.kernel_kind);
  c["phi"] = sc.phi ? mat_to_json(*sc.phi) : json();
  c["mu"] = sc.mu ? mat_to_json(*sc.mu) : json();
  c["dotmu"] = sc.dotmu ? mat_to_json(*sc.dotmu) : json();
  c["bandSize"] = sc.band_size;
  c["niterHmc"] = sc.n_iter;
  c["nstepsHmc"] = sc.n_leapfrog;
  c["burninRatio"] = sc.burnin_ratio;
  c["stepSizeFactor"] = sc.step_factor;
  c["skipMissingComponentOptimization"] = sc.skip_missing_component_optimization;
  c["positiveSystem"] = sc.positive_system;
  c["verbose"] = sc.verbose;
  c["seed"] = sc.seed;
  j["control"] = c;
  return j.dump(2);
}

}  // namespace magi
