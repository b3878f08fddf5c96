#pragma once

// Convergence and recovery certificates for PG-EXTRA on the decentralized
// LASSO: the centralized reference solution, the Lyapunov (G-norm) descent
// inequality along trajectories, the recovery-error chain it implies, and
// the 1/m scaling of the LASSO error.

#include "core.hpp"
#include "instance.hpp"
#include "solvers.hpp"
#include "topology.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace dunroll {

/// Euclidean norm of the smallest element of grad + N lambda d||x||_1.
inline double lasso_kkt_residual(const Vector& grad, const Vector& x, double reg) {
  double r2 = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double r;
    if (x(j) > 0)
      r = grad(j) + reg;
    else if (x(j) < 0)
      r = grad(j) - reg;
    else
      r = std::max(0.0, std::abs(grad(j)) - reg);
    r2 += r * r;
  }
  return std::sqrt(r2);
}

/// Data of the consensus-collapsed problem min_x sum_i 0.5||A_i x - y_i||^2 + N lambda ||x||_1.
struct CentralizedLasso {
  Matrix gram;  // sum_i A_i^T A_i
  Vector aty;   // sum_i A_i^T y_i
  int n_agents = 0;

  explicit CentralizedLasso(const LassoProblem& p)
      : gram(Matrix::Zero(p.dim(), p.dim())), aty(Vector::Zero(p.dim())), n_agents(p.n_agents()) {
    for (int i = 0; i < p.n_agents(); ++i) {
      gram += p.gram(i);
      aty += p.aty(i);
    }
  }

  Vector gradient(const Vector& x) const { return gram * x - aty; }
  double kkt(const Vector& x, double lambda) const {
    return lasso_kkt_residual(gradient(x), x, n_agents * lambda);
  }
};

namespace detail {

// Re-solves the smooth problem restricted to x's support with the signs
// fixed. Returns false if the result changes a sign or is not finite.
inline bool polish_on_support(const CentralizedLasso& c, double reg, Vector& x) {
  std::vector<Eigen::Index> s;
  for (Eigen::Index j = 0; j < x.size(); ++j)
    if (x(j) != 0.0) s.push_back(j);
  if (s.empty()) return false;
  const auto k = static_cast<Eigen::Index>(s.size());
  Matrix g(k, k);
  Vector rhs(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    rhs(a) = c.aty(s[a]) - reg * (x(s[a]) > 0 ? 1.0 : -1.0);
    for (Eigen::Index b = 0; b < k; ++b) g(a, b) = c.gram(s[a], s[b]);
  }
  Eigen::LDLT<Matrix> ldlt(g);
  if (ldlt.info() != Eigen::Success) return false;
  Vector xs = ldlt.solve(rhs);
  if (!xs.allFinite()) return false;
  Vector out = Vector::Zero(x.size());
  for (Eigen::Index a = 0; a < k; ++a) {
    if ((xs(a) > 0) != (x(s[a]) > 0)) return false;
    out(s[a]) = xs(a);
  }
  x = std::move(out);
  return true;
}

}  // namespace detail

/// Reference solution of the consensus LASSO by accelerated proximal
/// gradient (step 1/lambda_max(sum A_i^T A_i), gradient-based restart), with
/// a support-restricted polish. Stops once the KKT residual is <= tol.
inline Vector centralized_lasso_oracle(const LassoProblem& p, double lambda, double tol = 1e-10,
                                       int max_iter = 200000) {
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be non-negative");
  const CentralizedLasso c(p);
  const double reg = c.n_agents * lambda;
  const double lip = detail::max_eigenvalue(c.gram);
  Vector x = Vector::Zero(p.dim());
  if (c.kkt(x, lambda) <= tol) return x;
  if (!(lip > 0.0)) throw NonConvergenceError("degenerate sensing data", c.kkt(x, lambda));

  Vector y = x, x_prev = x;
  double t = 1.0;
  double best = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= max_iter; ++it) {
    x = soft_threshold(y - c.gradient(y) / lip, reg / lip);
    if ((y - x).dot(x - x_prev) > 0.0) {
      t = 1.0;  // restart
      y = x;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = x + ((t - 1.0) / t_next) * (x - x_prev);
      t = t_next;
    }
    x_prev = x;
    if (it % 25 == 0) {
      const double r = c.kkt(x, lambda);
      best = std::min(best, r);
      if (r <= tol) return x;
      Vector polished = x;
      if (detail::polish_on_support(c, reg, polished) && c.kkt(polished, lambda) <= tol) return polished;
    }
  }
  throw NonConvergenceError("centralized LASSO oracle did not reach tolerance", best);
}

/// L_s = max_i lambda_max(A_i^T A_i).
inline double lipschitz_Ls(const LassoProblem& p) {
  double l = 0.0;
  for (int i = 0; i < p.n_agents(); ++i) l = std::max(l, detail::max_eigenvalue(p.gram(i)));
  return l;
}

struct TheoremQuantities {
  double L_s = 0.0;
  double lambda_min_W_tilde = 0.0;
  double alpha = 0.0;
  double alpha_max = 0.0;  // 2 lambda_min(W~) / L_s
  double xi = 0.0;         // 1 - alpha L_s / (2 lambda_min(W~))
  bool alpha_in_range = false;
};

inline TheoremQuantities theorem_quantities(const LassoProblem& p, const MixingPair& pair, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("step size must be positive");
  TheoremQuantities q;
  q.L_s = lipschitz_Ls(p);
  q.lambda_min_W_tilde = detail::min_eigenvalue(pair.W_tilde);
  q.alpha = alpha;
  q.alpha_max = 2.0 * q.lambda_min_W_tilde / q.L_s;
  q.xi = 1.0 - alpha * q.L_s / (2.0 * q.lambda_min_W_tilde);
  q.alpha_in_range = alpha < q.alpha_max;
  return q;
}

/// ||q||_F^2 + trace(x^T W~ x), the squared G-norm of z = (q, x).
inline double g_norm_sq(const Matrix& q, const Matrix& x, const Matrix& w_tilde) {
  return q.squaredNorm() + x.cwiseProduct(w_tilde * x).sum();
}

/// ||x||_{W~}^2 = trace(x^T W~ x).
inline double w_norm_sq(const Matrix& x, const Matrix& w_tilde) { return x.cwiseProduct(w_tilde * x).sum(); }

struct FixedPoint {
  Vector x_hat;
  Matrix q_hat;
  double residual = 0.0;
  int iterations = 0;
};

/// Residual of (W~-W)^{1/2} q + alpha (grad s(x) + lambda g), minimized over
/// per-entry subgradients g of ||.||_1 at x.
inline double fixed_point_residual(const LassoProblem& p, const MixingPair& pair, const Matrix& q,
                                   const Vector& x_hat, double alpha, double lambda) {
  const int n = p.n_agents();
  const Matrix x = stack_rows(x_hat, n);
  const Matrix base = psd_sqrt(pair.W_tilde - pair.W) * q + alpha * p.gradient(x);
  const double t = alpha * lambda;
  double r2 = 0.0;
  for (Eigen::Index i = 0; i < base.rows(); ++i)
    for (Eigen::Index j = 0; j < base.cols(); ++j) {
      double r;
      if (x_hat(j) > 0)
        r = base(i, j) + t;
      else if (x_hat(j) < 0)
        r = base(i, j) - t;
      else
        r = std::max(0.0, std::abs(base(i, j)) - t);
      r2 += r * r;
    }
  return std::sqrt(r2);
}

/// x_hat from the centralized oracle; q_hat as the limit of PG-EXTRA's
/// accumulator q^k. The relation is linear in alpha for a fixed x_hat, so
/// for alpha outside (0, alpha_max) the limit is taken at alpha_max/2 and
/// rescaled.
inline FixedPoint fixed_point(const LassoProblem& p, const MixingPair& pair, double alpha,
                              double lambda, double tol = 1e-9, int max_iter = 2000000) {
  const auto tq = theorem_quantities(p, pair, alpha);
  const double run_alpha = tq.alpha_in_range ? alpha : 0.5 * tq.alpha_max;
  const double scale = alpha / run_alpha;

  FixedPoint fp;
  fp.x_hat = centralized_lasso_oracle(p, lambda, std::min(1e-10, tol));
  const int n = p.n_agents();
  const Matrix target = stack_rows(fp.x_hat, n);
  const Matrix u = psd_sqrt(pair.W_tilde - pair.W);

  SolverState s = SolverState::initial(Matrix::Zero(n, p.dim()));
  s.q_acc = u * s.x_curr;
  double dist = 0.0, incr = 0.0;
  for (int k = 0; k < max_iter; ++k) {
    s = k == 0 ? pg_extra_first_step(s, p, pair, run_alpha, lambda)
               : pg_extra_step(s, p, pair, run_alpha, lambda);
    if (!all_finite(s.x_curr)) throw DivergenceError("fixed-point run diverged", k + 1);
    const Matrix du = u * s.x_curr;
    s.q_acc += du;
    dist = (s.x_curr - target).norm();
    incr = du.norm();
    if (dist <= tol && incr <= tol) {
      fp.iterations = k + 1;
      fp.q_hat = scale * s.q_acc;
      fp.residual = fixed_point_residual(p, pair, fp.q_hat, fp.x_hat, alpha, lambda);
      return fp;
    }
  }
  throw NonConvergenceError("PG-EXTRA did not reach the fixed point", std::max(dist, incr));
}

struct LyapunovRow {
  int k = 0;
  double lhs = 0.0;  // ||z^k - z^||_G^2 - ||z^{k+1} - z^||_G^2
  double rhs = 0.0;  // xi ||z^k - z^{k+1}||_G^2
  double margin = 0.0;
};

struct LyapunovReport {
  std::vector<LyapunovRow> rows;
  double scale = 0.0;  // ||z^0 - z^||_G^2
  double tol_abs = 0.0;
  double min_margin = std::numeric_limits<double>::infinity();
  bool pass = true;
  std::size_t violations = 0;
};

/// Per-step check of the G-norm descent inequality along a PG-EXTRA run
/// recorded with snapshots and q tracking. PASS iff every margin is at
/// least -tol_rel * ||z^0 - z^||_G^2.
inline LyapunovReport lyapunov_check(const Trajectory& tr, const FixedPoint& fp,
                                     const TheoremQuantities& tq, const MixingPair& pair,
                                     double tol_rel = 1e-8) {
  if (tr.q.empty() || tr.q.size() != tr.x.size() || tr.x.size() < 1)
    throw ValidationError("trajectory lacks q^k or x^k snapshots");
  const Matrix& wt = pair.W_tilde;
  const Matrix xh = stack_rows(fp.x_hat, tr.x[0].rows());
  auto dist = [&](std::size_t k) { return g_norm_sq(tr.q[k] - fp.q_hat, tr.x[k] - xh, wt); };

  LyapunovReport rep;
  rep.scale = dist(0);
  rep.tol_abs = tol_rel * rep.scale;
  double d_k = rep.scale;
  for (std::size_t k = 0; k + 1 < tr.x.size(); ++k) {
    const double d_next = dist(k + 1);
    LyapunovRow row;
    row.k = static_cast<int>(k);
    row.lhs = d_k - d_next;
    row.rhs = tq.xi * g_norm_sq(tr.q[k] - tr.q[k + 1], tr.x[k] - tr.x[k + 1], wt);
    row.margin = row.lhs - row.rhs;
    rep.min_margin = std::min(rep.min_margin, row.margin);
    if (row.margin < -rep.tol_abs) {
      rep.pass = false;
      ++rep.violations;
    }
    rep.rows.push_back(row);
    d_k = d_next;
  }
  return rep;
}

struct AssemblyRow {
  int k = 0;     // bound on x^{k+1}
  double lhs = 0.0;  // ||x^{k+1} - x*||_{W~}^2
  double rhs = 0.0;  // 2||z^0 - z^||_G^2 - 2 xi sum_{t<=k} ||z^{t+1} - z^t||_G^2 + 2||x^ - x*||_F^2
  double slack_rel = 0.0;
};

struct AssemblyReport {
  std::vector<AssemblyRow> rows;
  double statistical_term = 0.0;  // ||x^_stacked - x*_stacked||_F^2
  double min_slack_rel = std::numeric_limits<double>::infinity();
  bool pass = true;
};

/// The recovery-error bound at every step, with the measured ||x^ - x*||^2
/// standing in for the statistical term. slack_rel = (rhs - lhs) / rhs_0.
inline AssemblyReport theorem1_assembly(const Trajectory& tr, const FixedPoint& fp,
                                        const TheoremQuantities& tq, const MixingPair& pair,
                                        const Vector& x_star, double tol_rel = 1e-8) {
  if (tr.q.empty() || tr.q.size() != tr.x.size())
    throw ValidationError("trajectory lacks q^k or x^k snapshots");
  const Matrix& wt = pair.W_tilde;
  const Eigen::Index n = tr.x[0].rows();
  const Matrix xh = stack_rows(fp.x_hat, n);
  const Matrix xs = stack_rows(x_star, n);

  AssemblyReport rep;
  rep.statistical_term = (xh - xs).squaredNorm();
  const double z0 = g_norm_sq(tr.q[0] - fp.q_hat, tr.x[0] - xh, wt);
  const double scale = std::max(2.0 * z0 + 2.0 * rep.statistical_term, std::numeric_limits<double>::min());
  double path = 0.0;
  for (std::size_t k = 0; k + 1 < tr.x.size(); ++k) {
    path += g_norm_sq(tr.q[k + 1] - tr.q[k], tr.x[k + 1] - tr.x[k], wt);
    AssemblyRow row;
    row.k = static_cast<int>(k);
    row.lhs = w_norm_sq(tr.x[k + 1] - xs, wt);
    row.rhs = 2.0 * z0 - 2.0 * tq.xi * path + 2.0 * rep.statistical_term;
    row.slack_rel = (row.rhs - row.lhs) / scale;
    rep.min_slack_rel = std::min(rep.min_slack_rel, row.slack_rel);
    if (row.slack_rel < -tol_rel) rep.pass = false;
    rep.rows.push_back(row);
  }
  return rep;
}

inline void write_lyapunov_csv(std::ostream& os, const LyapunovReport& rep) {
  CsvWriter csv(os, "dunroll-lyapunov", 1, {"k", "lhs", "rhs", "margin"});
  for (const auto& r : rep.rows)
    csv.row({std::to_string(r.k), format_real(r.lhs), format_real(r.rhs), format_real(r.margin)});
}

// ---------------------------------------------------------------------------
// Recovery error versus number of measurements.

struct ScalingConfig {
  InstanceConfig base;  // m_total is overridden per cell
  std::vector<int> m_list{60, 120, 240, 480};
  int trials = 50;
  /// lambda = factor * sigma * sqrt(2 m log d) / N, floored at lambda_floor.
  double lambda_factor = 1.0;
  double lambda_floor = 1e-4;
  std::uint64_t seed = 1;
};

inline double scaling_lambda(const ScalingConfig& cfg, double sigma, int m) {
  const double rule = cfg.lambda_factor * sigma * std::sqrt(2.0 * m * std::log(double(cfg.base.d))) /
                      cfg.base.n_nodes;
  return std::max(rule, cfg.lambda_floor);
}

struct ScalingRow {
  int m = 0;
  double lambda = 0.0;
  double mean_mse = 0.0;  // mean ||x^_stacked - x*_stacked||_F^2
  double std_err = 0.0;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  double sigma = 0.0;
  double slope = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
  std::vector<std::string> warnings;
};

/// Least-squares slope of log(mean MSE) against log(m). Trial t uses the
/// same seed for every m, so x* and the graph are shared across cells.
inline ScalingResult recovery_scaling_experiment(const ScalingConfig& cfg) {
  if (cfg.m_list.size() < 2) throw ParameterError("need at least two values of m");
  if (cfg.trials < 1) throw ParameterError("trials must be positive");
  ScalingResult res;
  const double ps = cfg.base.sparsity();
  res.sigma = cfg.base.sigma ? *cfg.base.sigma : noise_sigma_from_snr(cfg.base.snr_db, ps);
  if (cfg.trials < 5) res.warnings.push_back("few trials: slope estimate has high variance");

  for (int m : cfg.m_list) {
    ScalingRow row;
    row.m = m;
    row.lambda = scaling_lambda(cfg, res.sigma, m);
    std::vector<double> errs;
    for (int t = 0; t < cfg.trials; ++t) {
      InstanceConfig ic = cfg.base;
      ic.m_total = m;
      ic.sigma = res.sigma;
      ic.seed = split_seed(cfg.seed, static_cast<std::uint64_t>(t));
      const LassoInstance inst = sample_instance(ic);
      const LassoProblem p(inst);
      const Vector xh = centralized_lasso_oracle(p, row.lambda, 1e-9);
      errs.push_back(inst.n_agents() * (xh - inst.x_star).squaredNorm());
    }
    double mean = 0.0;
    for (double e : errs) mean += e;
    mean /= double(errs.size());
    double var = 0.0;
    for (double e : errs) var += (e - mean) * (e - mean);
    row.mean_mse = mean;
    row.std_err = errs.size() > 1 ? std::sqrt(var / double(errs.size() - 1) / double(errs.size())) : 0.0;
    res.rows.push_back(row);
  }

  const double signal = cfg.base.n_nodes * ps;
  double max_mse = 0.0;
  for (const auto& r : res.rows) max_mse = std::max(max_mse, r.mean_mse);
  if (res.sigma == 0.0 || max_mse <= 1e-8 * signal) {
    res.degenerate = true;
    res.warnings.push_back("errors are numerically zero; slope undefined");
    return res;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = double(res.rows.size());
  for (const auto& r : res.rows) {
    const double lx = std::log(double(r.m)), ly = std::log(r.mean_mse);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  res.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return res;
}

inline void write_scaling_csv(std::ostream& os, const ScalingResult& r) {
  CsvWriter csv(os, "dunroll-scaling", 1, {"m", "lambda", "mean_mse", "std_err"});
  for (const auto& row : r.rows)
    csv.row({std::to_string(row.m), format_real(row.lambda), format_real(row.mean_mse),
             format_real(row.std_err)});
}

}  // namespace dunroll
