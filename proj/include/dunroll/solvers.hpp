#pragma once

// Prox-DGD and PG-EXTRA for the decentralized LASSO.
//
// Every agent update reads only its own row and its neighbors' rows of the
// previous iterate; rows are mixed through the graph's neighbor lists, never
// through a dense W product.

#include "core.hpp"
#include "csv.hpp"
#include "instance.hpp"
#include "topology.hpp"

#include <chrono>
#include <optional>
#include <string>
#include <vector>

namespace dunroll {

enum class Algorithm { ProxDgd, PgExtra };

inline std::string to_string(Algorithm a) {
  return a == Algorithm::ProxDgd ? "prox-dgd" : "pg-extra";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "prox-dgd") return Algorithm::ProxDgd;
  if (s == "pg-extra") return Algorithm::PgExtra;
  throw ParameterError("unknown algorithm '" + std::string(s) + "' (expected prox-dgd|pg-extra)");
}

inline double soft_threshold(double v, double t) {
  if (t < 0.0) throw ParameterError("soft-threshold level must be non-negative");
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

template <typename Derived>
auto soft_threshold(const Eigen::MatrixBase<Derived>& v, double t) {
  if (t < 0.0) throw ParameterError("soft-threshold level must be non-negative");
  using Plain = typename Derived::PlainObject;
  return Plain(v.unaryExpr([t](double e) { return e > t ? e - t : (e < -t ? e + t : 0.0); }));
}

/// Per-iteration step sizes and regularization weights. Entry k-1 drives the
/// step that produces x^k.
struct ParamSchedule {
  std::vector<double> alphas;
  std::vector<double> lambdas;

  static ParamSchedule constant(int k, double alpha, double lambda) {
    ParamSchedule s{std::vector<double>(k, alpha), std::vector<double>(k, lambda)};
    s.validate();
    return s;
  }

  int size() const { return static_cast<int>(alphas.size()); }

  void validate() const {
    if (alphas.size() != lambdas.size()) throw ParameterError("schedule lengths differ");
    for (double a : alphas)
      if (!(a > 0.0)) throw ParameterError("step sizes must be positive");
    for (double l : lambdas)
      if (!(l >= 0.0)) throw ParameterError("regularization weights must be non-negative");
  }
};

/// Instance plus the per-agent Gram matrices A_i^T A_i and A_i^T y_i.
/// Holds a reference to the instance, which must outlive it.
class LassoProblem {
 public:
  explicit LassoProblem(const LassoInstance& inst) : inst_(&inst) {
    inst.validate();
    gram_.reserve(inst.A.size());
    aty_.reserve(inst.A.size());
    for (std::size_t i = 0; i < inst.A.size(); ++i) {
      gram_.push_back(inst.A[i].transpose() * inst.A[i]);
      aty_.push_back(inst.A[i].transpose() * inst.y[i]);
    }
  }

  const LassoInstance& instance() const { return *inst_; }
  const CommGraph& graph() const { return inst_->graph; }
  int n_agents() const { return inst_->n_agents(); }
  int dim() const { return inst_->dim(); }
  const Matrix& gram(int i) const { return gram_[i]; }
  const Vector& aty(int i) const { return aty_[i]; }

  /// Row i of the stacked gradient: A_i^T (A_i x_i - y_i).
  Vector gradient(int i, const Eigen::Ref<const Vector>& xi) const { return gram_[i] * xi - aty_[i]; }

  Matrix gradient(const StackedEstimate& x) const {
    check_shape(x);
    Matrix g(x.rows(), x.cols());
    for (int i = 0; i < n_agents(); ++i) g.row(i) = gradient(i, x.row(i).transpose()).transpose();
    return g;
  }

  void check_shape(const StackedEstimate& x) const {
    if (x.rows() != n_agents() || x.cols() != dim())
      throw ValidationError("stacked estimate must be " + std::to_string(n_agents()) + "x" +
                            std::to_string(dim()));
  }

 private:
  const LassoInstance* inst_;
  std::vector<Matrix> gram_;
  std::vector<Vector> aty_;
};

/// sum_{j in N_i + {i}} w_ij x_j, touching only agent i and its neighbors.
inline Vector mix_row(const Matrix& w, const CommGraph& g, const StackedEstimate& x, int i) {
  Vector out = w(i, i) * x.row(i).transpose();
  for (int j : g.neighbors(i)) out += w(i, j) * x.row(j).transpose();
  return out;
}

struct SolverState {
  StackedEstimate x_curr;       // x^k
  StackedEstimate x_prev;       // x^{k-1}, PG-EXTRA only
  StackedEstimate x_half_prev;  // x^{k-1/2}, PG-EXTRA only
  StackedEstimate q_acc;        // sum_t (W~ - W)^{1/2} x^t when tracked
  int iter = 0;

  static SolverState initial(StackedEstimate x0) {
    SolverState s;
    s.x_curr = std::move(x0);
    return s;
  }
};

/// Agent i's pre-threshold value for Prox-DGD.
inline Vector prox_dgd_agent_half(const LassoProblem& p, const Matrix& w, const StackedEstimate& x,
                                  int i, double alpha) {
  return mix_row(w, p.graph(), x, i) - alpha * p.gradient(i, x.row(i).transpose());
}

/// Agent i's pre-threshold value for a PG-EXTRA step with k >= 1.
inline Vector pg_extra_agent_half(const LassoProblem& p, const MixingPair& pair,
                                  const SolverState& s, int i, double alpha) {
  const Vector dx = (s.x_curr.row(i) - s.x_prev.row(i)).transpose();
  return mix_row(pair.W, p.graph(), s.x_curr, i) + s.x_half_prev.row(i).transpose() -
         mix_row(pair.W_tilde, p.graph(), s.x_prev, i) - alpha * (p.gram(i) * dx);
}

namespace detail {

inline void check_step_params(double alpha, double lambda) {
  if (!(alpha > 0.0)) throw ParameterError("step size must be positive");
  if (!(lambda >= 0.0)) throw ParameterError("regularization weight must be non-negative");
}

}  // namespace detail

/// x^{k+1/2} = W x^k - alpha grad s(x^k);  x^{k+1} = S_{alpha lambda}(x^{k+1/2}).
/// The pre-threshold matrix is written to *half when non-null.
inline SolverState prox_dgd_step(const SolverState& s, const LassoProblem& p, const Matrix& w,
                                 double alpha, double lambda, StackedEstimate* half = nullptr) {
  detail::check_step_params(alpha, lambda);
  p.check_shape(s.x_curr);
  StackedEstimate h(s.x_curr.rows(), s.x_curr.cols());
  for (int i = 0; i < p.n_agents(); ++i)
    h.row(i) = prox_dgd_agent_half(p, w, s.x_curr, i, alpha).transpose();
  SolverState out;
  out.x_curr = soft_threshold(h, alpha * lambda);
  out.q_acc = s.q_acc;
  out.iter = s.iter + 1;
  if (half) *half = std::move(h);
  return out;
}

/// PG-EXTRA's k = 0 step; identical in form to a Prox-DGD step, but the
/// returned state carries the history PG-EXTRA needs afterwards.
inline SolverState pg_extra_first_step(const SolverState& s, const LassoProblem& p,
                                       const MixingPair& pair, double alpha, double lambda,
                                       StackedEstimate* half = nullptr) {
  if (s.iter != 0) throw StateError("pg_extra_first_step needs k = 0");
  StackedEstimate h;
  SolverState out = prox_dgd_step(s, p, pair.W, alpha, lambda, &h);
  out.x_prev = s.x_curr;
  out.x_half_prev = h;
  if (half) *half = std::move(h);
  return out;
}

/// x^{k+1/2} = W x^k + x^{k-1/2} - W~ x^{k-1} - alpha A^T A (x^k - x^{k-1})
inline SolverState pg_extra_step(const SolverState& s, const LassoProblem& p,
                                 const MixingPair& pair, double alpha, double lambda,
                                 StackedEstimate* half = nullptr) {
  detail::check_step_params(alpha, lambda);
  if (s.iter < 1 || s.x_prev.size() == 0 || s.x_half_prev.size() == 0)
    throw StateError("pg_extra_step needs x^{k-1} and x^{k-1/2} (k >= 1)");
  p.check_shape(s.x_curr);
  p.check_shape(s.x_prev);
  p.check_shape(s.x_half_prev);
  StackedEstimate h(s.x_curr.rows(), s.x_curr.cols());
  for (int i = 0; i < p.n_agents(); ++i) h.row(i) = pg_extra_agent_half(p, pair, s, i, alpha).transpose();
  SolverState out;
  out.x_curr = soft_threshold(h, alpha * lambda);
  out.x_prev = s.x_curr;
  out.x_half_prev = h;
  out.q_acc = s.q_acc;
  out.iter = s.iter + 1;
  if (half) *half = std::move(h);
  return out;
}

/// max_i || x_i - mean_j x_j ||
inline double consensus_residual(const StackedEstimate& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  return (x.rowwise() - mean).rowwise().norm().maxCoeff();
}

struct RecordFlags {
  bool snapshots = false;  // keep every x^k
  bool q = false;          // track q^k = sum_t (W~ - W)^{1/2} x^t
};

struct Trajectory {
  std::vector<StackedEstimate> x;  // x^0..x^K when snapshots are on, else {x^K}
  std::vector<StackedEstimate> q;  // q^0..q^K when q tracking is on
  std::vector<double> namse_db;
  std::vector<double> consensus;
  StackedEstimate final_x;
  double wall_ms = 0.0;
};

/// Reverse-mode bookkeeping for an unrolled run.
struct Tape {
  Algorithm algorithm = Algorithm::PgExtra;
  std::vector<double> alphas;          // alpha_1..alpha_K
  std::vector<double> lambdas;         // lambda_1..lambda_K
  std::vector<StackedEstimate> x;      // x^0..x^K
  std::vector<StackedEstimate> half;   // half[k-1] is the pre-threshold value producing x^k

  int steps() const { return static_cast<int>(alphas.size()); }
};

/// Runs K steps from x0 (zero when absent). Throws DivergenceError as soon
/// as an iterate has a non-finite entry. When tape is non-null every
/// intermediate is recorded on it.
inline Trajectory run_solver(const LassoProblem& p, const MixingPair& pair, Algorithm alg,
                             const ParamSchedule& schedule, int k_steps,
                             std::optional<StackedEstimate> x0 = std::nullopt,
                             RecordFlags flags = {}, Tape* tape = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  schedule.validate();
  if (k_steps < 0) throw ParameterError("K must be non-negative");
  if (schedule.size() < k_steps) throw ParameterError("schedule shorter than K");
  const int n = p.n_agents();
  StackedEstimate start = x0 ? std::move(*x0) : StackedEstimate::Zero(n, p.dim());
  p.check_shape(start);
  const Vector& xs = p.instance().x_star;
  const bool have_truth = xs.squaredNorm() > 0.0;

  Matrix u;
  if (flags.q) u = psd_sqrt(pair.W_tilde - pair.W);

  Trajectory tr;
  SolverState s = SolverState::initial(start);
  auto record = [&](const SolverState& st) {
    tr.namse_db.push_back(have_truth ? namse(st.x_curr, xs) : std::numeric_limits<double>::quiet_NaN());
    tr.consensus.push_back(consensus_residual(st.x_curr));
    if (flags.snapshots) tr.x.push_back(st.x_curr);
    if (flags.q) tr.q.push_back(st.q_acc);
  };
  if (flags.q) s.q_acc = u * s.x_curr;
  if (tape) {
    *tape = Tape{alg, {}, {}, {s.x_curr}, {}};
  }
  record(s);

  for (int k = 0; k < k_steps; ++k) {
    const double a = schedule.alphas[k];
    const double l = schedule.lambdas[k];
    StackedEstimate h;
    if (alg == Algorithm::ProxDgd)
      s = prox_dgd_step(s, p, pair.W, a, l, &h);
    else if (k == 0)
      s = pg_extra_first_step(s, p, pair, a, l, &h);
    else
      s = pg_extra_step(s, p, pair, a, l, &h);
    if (!all_finite(s.x_curr) || !all_finite(h))
      throw DivergenceError("non-finite iterate", k + 1);
    if (flags.q) s.q_acc += u * s.x_curr;
    if (tape) {
      tape->alphas.push_back(a);
      tape->lambdas.push_back(l);
      tape->x.push_back(s.x_curr);
      tape->half.push_back(std::move(h));
    }
    record(s);
  }
  tr.final_x = s.x_curr;
  if (!flags.snapshots) tr.x.push_back(s.x_curr);
  tr.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return tr;
}

/// Columns: iter, namse_db, consensus_residual and, when snapshots are
/// present, err_agent_<i> = ||x_i^k - x*||.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr,
                                 const Vector* x_star = nullptr) {
  const bool per_agent = x_star && tr.x.size() == tr.namse_db.size() && !tr.x.empty();
  std::vector<std::string> cols{"iter", "namse_db", "consensus_residual"};
  if (per_agent)
    for (Eigen::Index i = 0; i < tr.x.front().rows(); ++i) cols.push_back("err_agent_" + std::to_string(i));
  CsvWriter csv(os, "dunroll-trajectory", 1, cols);
  for (std::size_t k = 0; k < tr.namse_db.size(); ++k) {
    std::vector<std::string> row{std::to_string(k), format_real(tr.namse_db[k]),
                                 format_real(tr.consensus[k])};
    if (per_agent)
      for (Eigen::Index i = 0; i < tr.x[k].rows(); ++i)
        row.push_back(format_real((tr.x[k].row(i) - x_star->transpose()).norm()));
    csv.row(row);
  }
}

}  // namespace dunroll
