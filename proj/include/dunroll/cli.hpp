#pragma once

// Subcommand implementations behind tools/dunroll. Each command writes its
// artifacts into an output directory and returns a small result record so
// tests can drive it in-process.

#include "csv.hpp"
#include "dataset.hpp"
#include "diagnostics.hpp"
#include "unroll.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dunroll::cli {

namespace fs = std::filesystem;

inline fs::path prepare_out_dir(const std::string& out) {
  if (out.empty()) throw ParameterError("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory '" + out + "'");
  return fs::path(out);
}

/// key value lines; no timestamps, so summaries are reproducible.
class Summary {
 public:
  void add(const std::string& key, const std::string& value) { lines_.push_back(key + " " + value); }
  void add(const std::string& key, double value) { add(key, format_real(value)); }
  void add_count(const std::string& key, long long value) { add(key, std::to_string(value)); }
  void check(const std::string& name, bool pass) { add("check " + name, pass ? "PASS" : "FAIL"); }

  void write(const fs::path& path) const {
    auto os = open_output(path.string());
    for (const auto& l : lines_) os << l << '\n';
  }
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::vector<std::string> lines_;
};

/// Timing and other run-dependent facts, kept apart from the reproducible CSVs.
inline void write_run_metadata(const fs::path& dir, const std::string& command, double wall_ms) {
  auto os = open_output((dir / "run_meta.txt").string());
  os << "command " << command << '\n' << "wall_ms " << format_real(wall_ms) << '\n';
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

struct GenDataOptions {
  InstanceConfig instance;
  std::size_t n_train = 1000;
  std::size_t n_val = 100;
  std::size_t n_test = 100;
  std::uint64_t seed = 1;
  std::string out;
};

struct GenDataResult {
  fs::path train, val, test;
};

/// Splits are seeded with split_seed(seed, 0/1/2).
inline GenDataResult cmd_gen_data(const GenDataOptions& o) {
  o.instance.validate();
  const fs::path dir = prepare_out_dir(o.out);
  GenDataResult r{dir / "train.txt", dir / "val.txt", dir / "test.txt"};
  const std::size_t counts[3] = {o.n_train, o.n_val, o.n_test};
  const fs::path paths[3] = {r.train, r.val, r.test};
  for (int s = 0; s < 3; ++s)
    write_dataset(paths[s].string(), generate_dataset(o.instance, counts[s], split_seed(o.seed, s)));
  return r;
}

// ---------------------------------------------------------------------------

inline void write_namse_curve_csv(std::ostream& os, const EvalResult& r) {
  CsvWriter csv(os, "dunroll-namse", 1, {"iter", "namse_db"});
  for (std::size_t k = 0; k < r.namse_curve.size(); ++k)
    csv.row({std::to_string(k), format_real(r.namse_curve[k])});
}

inline void summarize_eval(Summary& s, const EvalResult& r) {
  s.add("final_namse_db", r.final_db);
  s.add_count("evaluated", static_cast<long long>(r.evaluated));
  s.add_count("diverged", static_cast<long long>(r.diverged));
}

struct SolveOptions {
  std::string dataset;
  Algorithm algorithm = Algorithm::PgExtra;
  double alpha = 0.005;
  double lambda = 0.1;
  int k_steps = 200;
  std::string out;
};

inline EvalResult cmd_solve(const SolveOptions& o) {
  if (o.k_steps < 0) throw ParameterError("K must be non-negative");
  const Dataset ds = read_dataset(o.dataset);
  const fs::path dir = prepare_out_dir(o.out);
  const PreparedSet set(ds.samples);
  const EvalResult r = evaluate(set, o.algorithm, ParamSchedule::constant(o.k_steps, o.alpha, o.lambda), o.k_steps);
  {
    auto os = open_output((dir / "namse.csv").string());
    write_namse_curve_csv(os, r);
  }
  Summary s;
  s.add("algorithm", to_string(o.algorithm));
  s.add("alpha", o.alpha);
  s.add("lambda", o.lambda);
  s.add_count("K", o.k_steps);
  summarize_eval(s, r);
  s.write(dir / "summary.txt");
  return r;
}

// ---------------------------------------------------------------------------

struct GridCell {
  double alpha = 0.0;
  double lambda = 0.0;
  double final_db = 0.0;
  std::size_t diverged = 0;
};

struct GridResult {
  std::vector<GridCell> cells;  // lambda-major, alpha-minor
  std::size_t argmin = 0;

  const GridCell& best() const { return cells.at(argmin); }
  const GridCell* find(double alpha, double lambda) const {
    for (const auto& c : cells)
      if (c.alpha == alpha && c.lambda == lambda) return &c;
    return nullptr;
  }
};

struct TuneGridOptions {
  std::string dataset;
  Algorithm algorithm = Algorithm::PgExtra;
  std::vector<double> alphas{0.001, 0.003, 0.004, 0.005, 0.006};
  std::vector<double> lambdas{0.05, 0.1, 0.3, 0.5};
  int k_steps = 200;
  std::string out;
};

/// Sweep on an already-loaded split. Cells where every sample diverged
/// score +inf.
inline GridResult tune_grid(const PreparedSet& set, Algorithm alg, const std::vector<double>& alphas,
                            const std::vector<double>& lambdas, int k_steps) {
  if (alphas.empty() || lambdas.empty()) throw ParameterError("grid lists must be non-empty");
  GridResult g;
  double best = std::numeric_limits<double>::infinity();
  for (double l : lambdas)
    for (double a : alphas) {
      const EvalResult r = evaluate(set, alg, ParamSchedule::constant(k_steps, a, l), k_steps);
      g.cells.push_back({a, l, r.final_db, r.diverged});
      if (g.cells.size() == 1 || r.final_db < best) {
        best = r.final_db;
        g.argmin = g.cells.size() - 1;
      }
    }
  return g;
}

inline GridResult cmd_tune_grid(const TuneGridOptions& o) {
  if (o.k_steps < 0) throw ParameterError("K must be non-negative");
  const Dataset ds = read_dataset(o.dataset);
  const fs::path dir = prepare_out_dir(o.out);
  const PreparedSet set(ds.samples);
  const GridResult g = tune_grid(set, o.algorithm, o.alphas, o.lambdas, o.k_steps);
  auto os = open_output((dir / "grid.csv").string());
  CsvWriter csv(os, "dunroll-grid", 1, {"alpha", "lambda", "final_namse_db", "diverged", "argmin"});
  for (std::size_t c = 0; c < g.cells.size(); ++c) {
    const auto& cell = g.cells[c];
    csv.row({format_real(cell.alpha), format_real(cell.lambda), format_real(cell.final_db),
             std::to_string(cell.diverged), c == g.argmin ? "1" : "0"});
  }
  return g;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string dataset;
  std::string val_dataset;  // training split is reused when empty
  TrainConfig config;
  std::string out;
};

struct TrainCommandResult {
  TrainResult result;
  ThetaFile theta;
};

inline std::string train_config_hash(const TrainConfig& c, const DatasetHeader& h) {
  std::ostringstream ss;
  ss << to_string(c.algorithm) << '|' << c.k_steps << '|' << format_real(c.gamma) << '|' << c.epochs << '|'
     << c.batch_size << '|' << c.seed << '|' << format_real(c.init_lambda) << '|'
     << (c.init_alpha ? format_real(*c.init_alpha) : "auto") << '|' << format_real(c.adam.lr) << '|'
     << h.n_nodes << '|' << h.d << '|' << h.m_i << '|' << format_real(h.sigma) << '|' << h.seed;
  return config_hash(ss.str());
}

inline TrainCommandResult cmd_train(const TrainOptions& o) {
  o.config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset tr = read_dataset(o.dataset);
  const Dataset va = o.val_dataset.empty() ? Dataset{} : read_dataset(o.val_dataset);
  const fs::path dir = prepare_out_dir(o.out);
  const PreparedSet train_set(tr.samples), val_set(va.samples);

  TrainCommandResult out;
  out.result = train(train_set, val_set, o.config);
  out.theta.algorithm = o.config.algorithm;
  out.theta.k_steps = o.config.k_steps;
  out.theta.gamma = o.config.gamma;
  out.theta.seed = o.config.seed;
  out.theta.config_hash = train_config_hash(o.config, tr.header);
  out.theta.schedule = out.result.best.schedule();
  {
    auto os = open_output((dir / "theta.txt").string());
    write_theta(os, out.theta);
  }
  {
    auto os = open_output((dir / "train_log.csv").string());
    write_train_log_csv(os, out.result.log);
  }
  Summary s;
  s.add_count("best_epoch", out.result.best_epoch);
  s.add("best_val_namse_db", out.result.best_val_namse_db);
  s.add_count("skipped_samples", static_cast<long long>(out.result.skipped_samples));
  s.write(dir / "summary.txt");

  auto meta = open_output((dir / "run_meta.txt").string());
  meta << "command train\nwall_ms " << format_real(elapsed_ms(t0)) << '\n';
  for (const auto& row : out.result.log)
    meta << "epoch " << row.epoch << " wall_ms " << format_real(row.wall_ms) << '\n';
  return out;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string dataset;
  std::string theta;
  std::optional<int> expect_k;  // mismatch with the file is a validation error
  std::string out;
};

inline ThetaFile read_theta_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  try {
    return read_theta(is);
  } catch (const ParseError& e) {
    throw e.with_source(path);
  }
}

inline EvalResult cmd_eval(const EvalOptions& o) {
  const ThetaFile th = read_theta_file(o.theta);
  if (o.expect_k && *o.expect_k != th.k_steps)
    throw ValidationError("parameter file has K=" + std::to_string(th.k_steps) + " but K=" +
                          std::to_string(*o.expect_k) + " was requested");
  const Dataset ds = read_dataset(o.dataset);
  const fs::path dir = prepare_out_dir(o.out);
  const PreparedSet set(ds.samples);
  const EvalResult r = evaluate(set, th.algorithm, th.schedule, th.k_steps);
  {
    auto os = open_output((dir / "namse.csv").string());
    write_namse_curve_csv(os, r);
  }
  Summary s;
  s.add("algorithm", to_string(th.algorithm));
  s.add_count("K", th.k_steps);
  s.add("config_hash", th.config_hash);
  summarize_eval(s, r);
  s.write(dir / "summary.txt");
  return r;
}

// ---------------------------------------------------------------------------

struct DiagnoseOptions {
  InstanceConfig instance;
  double lambda = 0.1;
  std::optional<double> alpha;  // absolute step; overrides alpha_scale
  double alpha_scale = 0.5;     // multiple of alpha_max
  int k_steps = 500;
  std::string out;
};

struct DiagnoseResult {
  TheoremQuantities quantities;
  LyapunovReport lyapunov;
  AssemblyReport assembly;
  FixedPoint fixed_point;
  bool diverged = false;
};

/// G-norm descent certificate and the recovery bound along one PG-EXTRA
/// run. A divergent run stops the certificate at the last finite iterate.
inline DiagnoseResult diagnose(const LassoInstance& inst, double lambda, std::optional<double> alpha,
                               double alpha_scale, int k_steps) {
  if (k_steps < 1) throw ParameterError("K must be at least 1");
  const LassoProblem p(inst);
  const MixingPair pair = metropolis_pair(inst.graph);
  DiagnoseResult r;
  const double a_max = theorem_quantities(p, pair, 1.0).alpha_max;
  const double a = alpha ? *alpha : alpha_scale * a_max;
  r.quantities = theorem_quantities(p, pair, a);
  r.fixed_point = fixed_point(p, pair, a, lambda);

  RecordFlags flags;
  flags.snapshots = true;
  flags.q = true;
  Trajectory tr;
  int k_run = k_steps;
  while (true) {
    try {
      tr = run_solver(p, pair, Algorithm::PgExtra, ParamSchedule::constant(k_run, a, lambda), k_run,
                      std::nullopt, flags);
      break;
    } catch (const DivergenceError& e) {
      r.diverged = true;
      k_run = static_cast<int>(e.iteration()) - 1;
      if (k_run < 1) throw;
    }
  }
  r.lyapunov = lyapunov_check(tr, r.fixed_point, r.quantities, pair);
  r.assembly = theorem1_assembly(tr, r.fixed_point, r.quantities, pair, inst.x_star);
  return r;
}

inline DiagnoseResult cmd_diagnose(const DiagnoseOptions& o) {
  const LassoInstance inst = sample_instance(o.instance);
  const fs::path dir = prepare_out_dir(o.out);
  const DiagnoseResult r = diagnose(inst, o.lambda, o.alpha, o.alpha_scale, o.k_steps);
  {
    auto os = open_output((dir / "lyapunov.csv").string());
    write_lyapunov_csv(os, r.lyapunov);
  }
  {
    auto os = open_output((dir / "assembly.csv").string());
    CsvWriter csv(os, "dunroll-assembly", 1, {"k", "lhs", "rhs", "slack_rel"});
    for (const auto& row : r.assembly.rows)
      csv.row({std::to_string(row.k + 1), format_real(row.lhs), format_real(row.rhs), format_real(row.slack_rel)});
  }
  const auto& q = r.quantities;
  Summary s;
  s.add("L_s", q.L_s);
  s.add("lambda_min_W_tilde", q.lambda_min_W_tilde);
  s.add("alpha", q.alpha);
  s.add("alpha_max", q.alpha_max);
  s.add("xi", q.xi);
  s.add("alpha_in_range", q.alpha_in_range ? "yes" : "no");
  s.add("lambda", o.lambda);
  s.add("fixed_point_residual", r.fixed_point.residual);
  s.add("diverged", r.diverged ? "yes" : "no");
  s.add_count("steps_checked", static_cast<long long>(r.lyapunov.rows.size()));
  s.add("lyapunov_scale", r.lyapunov.scale);
  s.add("lyapunov_min_margin", r.lyapunov.min_margin);
  s.add_count("lyapunov_violations", static_cast<long long>(r.lyapunov.violations));
  s.add("statistical_term", r.assembly.statistical_term);
  s.add("assembly_min_slack_rel", r.assembly.min_slack_rel);
  s.check("lyapunov_descent", r.lyapunov.pass);
  s.check("recovery_bound", r.assembly.pass);
  s.write(dir / "summary.txt");
  return r;
}

// ---------------------------------------------------------------------------

/// d=100, p_s=8 and 20 dB SNR; lambda from the universal rule.
inline ScalingConfig default_scaling_config() {
  ScalingConfig c;
  c.base.d = 100;
  c.base.p_s = 8.0;
  c.base.snr_db = 20.0;
  c.seed = 7;
  return c;
}

struct ScalingOptions {
  ScalingConfig config = default_scaling_config();
  std::string out;
};

inline ScalingResult cmd_scaling(const ScalingOptions& o) {
  const fs::path dir = prepare_out_dir(o.out);
  const ScalingResult r = recovery_scaling_experiment(o.config);
  {
    auto os = open_output((dir / "scaling.csv").string());
    write_scaling_csv(os, r);
  }
  Summary s;
  s.add("sigma", r.sigma);
  s.add_count("trials", o.config.trials);
  s.add("slope", r.slope);
  s.add("degenerate", r.degenerate ? "yes" : "no");
  for (const auto& w : r.warnings) s.add("warning", w);
  s.write(dir / "summary.txt");
  return r;
}

}  // namespace dunroll::cli
