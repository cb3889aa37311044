#pragma once

#include <cstdint>
#include <string>

#include "magi/pipeline.hpp"

namespace magi {

// A fully resolved run configuration: one model source, one dataset, the
// solver controls, and where to put results.
struct RunConfig {
  std::string builtin;   // builtin model name; empty when dsl_file is used
  std::string dsl_file;  // ODE description file; empty when builtin is used
  std::string data_path;
  std::string output_dir = "magi-results";
  double discretize_by = 0.0;        // 0 = none; applied before the level
  arma::uword discretize_level = 0;  // 0 = none
  SolveControl control;
};

// Reads a CSV dataset: header row whose first column is `time`, one further
// column per component, numeric cells with the literal NaN marking a missing
// observation. Throws std::invalid_argument for a missing/renamed time
// column, non-numeric or infinite cells, non-increasing times, duplicate
// times (within 1e-9), or a dataset with no observations at all.
ObservationSet read_observations(const std::string& path);

// Inverse of read_observations: full round-trip precision (17 significant
// digits), NaN for missing cells, component names from the set (X1..XD when
// unnamed). Throws std::runtime_error when the file cannot be written.
void write_observations(const ObservationSet& data, const std::string& path);

// Provenance recorded next to persisted results.
struct RunManifest {
  std::string config_json = "{}";  // resolved configuration of the run
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

// Persists an MCMC output into `dir` (created if needed): theta_samples.csv,
// sigma_samples.csv, lp.csv, x_mean.csv, x_lo.csv, x_hi.csv (posterior mean
// and 2.5%/97.5% bands per grid point per component), phi.csv, summary.csv,
// and manifest.json. Returns the manifest text. Samples are written with 17
// significant digits so summaries recomputed from the files match exactly.
// Throws std::runtime_error naming the path on I/O failure.
std::string write_results(const McmcOutput& out, const std::string& dir,
                          const RunManifest& info);

// Parses a JSON run configuration with sections `model`, `data`, `control`,
// and `output`. Unknown keys are rejected with a spelling suggestion; type
// mismatches name the key; `useFixedSigma` requires `sigma`; exactly one of
// model.builtin / model.file must be given and referenced paths must exist.
RunConfig parse_config(const std::string& path);

// The fully resolved configuration (defaults filled in), serialized back to
// JSON; together with the seed this reproduces the run bit-exactly.
std::string config_to_json(const RunConfig& config);

}  // namespace magi
