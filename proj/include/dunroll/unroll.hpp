#pragma once

// Learned Prox-DGD / PG-EXTRA: the K-step solver is treated as a K-layer
// network with one (alpha_k, lambda_k) pair per layer, differentiated in
// reverse mode and trained with Adam on a discounted recovery loss.

#include "core.hpp"
#include "csv.hpp"
#include "dataset.hpp"
#include "diagnostics.hpp"
#include "rng.hpp"
#include "solvers.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dunroll {

/// Unconstrained raw values; the effective parameters are their magnitudes.
struct LearnableParams {
  std::vector<double> raw_alphas;
  std::vector<double> raw_lambdas;

  static LearnableParams constant(int k, double alpha, double lambda) {
    return {std::vector<double>(k, alpha), std::vector<double>(k, lambda)};
  }
  static LearnableParams from_schedule(const ParamSchedule& s) { return {s.alphas, s.lambdas}; }

  int size() const { return static_cast<int>(raw_alphas.size()); }
  double alpha(int k) const { return std::abs(raw_alphas.at(k)); }
  double lambda(int k) const { return std::abs(raw_lambdas.at(k)); }

  ParamSchedule schedule() const {
    if (raw_alphas.size() != raw_lambdas.size()) throw ParameterError("parameter lengths differ");
    ParamSchedule s;
    for (int k = 0; k < size(); ++k) {
      s.alphas.push_back(alpha(k));
      s.lambdas.push_back(lambda(k));
    }
    return s;
  }

  /// Flat view [raw_alphas..., raw_lambdas...] for the optimizer.
  std::vector<double> flatten() const {
    std::vector<double> v(raw_alphas);
    v.insert(v.end(), raw_lambdas.begin(), raw_lambdas.end());
    return v;
  }
  void unflatten(std::span<const double> v) {
    const std::size_t k = raw_alphas.size();
    if (v.size() != 2 * k) throw ParameterError("flat parameter size mismatch");
    std::copy(v.begin(), v.begin() + k, raw_alphas.begin());
    std::copy(v.begin() + k, v.end(), raw_lambdas.begin());
  }
};

struct UnrolledRun {
  Trajectory trajectory;
  Tape tape;
};

/// Runs the solver's own step functions with the per-layer schedule.
inline UnrolledRun forward_unrolled(const LassoProblem& p, const MixingPair& pair, Algorithm alg,
                                    const ParamSchedule& theta) {
  UnrolledRun run;
  run.trajectory = run_solver(p, pair, alg, theta, theta.size(), std::nullopt, {}, &run.tape);
  return run;
}

inline UnrolledRun forward_unrolled(const LassoProblem& p, const MixingPair& pair, Algorithm alg,
                                    const LearnableParams& theta) {
  return forward_unrolled(p, pair, alg, theta.schedule());
}

/// Re-runs the forward pass with the parameters stored on the tape.
inline Tape replay(const LassoProblem& p, const MixingPair& pair, const Tape& tape) {
  ParamSchedule s{tape.alphas, tape.lambdas};
  return forward_unrolled(p, pair, tape.algorithm, s).tape;
}

/// sum_{k=1}^K gamma^{K-k} ||x^k - x*_stacked||_F^2 over x = (x^0, ..., x^K).
inline double unrolled_loss(std::span<const StackedEstimate> x, const Vector& x_star, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("discount must lie in (0, 1]");
  const int k_steps = static_cast<int>(x.size()) - 1;
  double loss = 0.0;
  for (int k = 1; k <= k_steps; ++k)
    loss += std::pow(gamma, k_steps - k) * (x[k].rowwise() - x_star.transpose()).squaredNorm();
  return loss;
}

struct ThetaGradient {
  std::vector<double> d_alpha;
  std::vector<double> d_lambda;

  /// Chain rule through alpha = |raw|; sign(0) is taken as +1.
  std::vector<double> raw_flat(const LearnableParams& theta) const {
    std::vector<double> g;
    g.reserve(d_alpha.size() * 2);
    for (std::size_t k = 0; k < d_alpha.size(); ++k)
      g.push_back(theta.raw_alphas[k] < 0 ? -d_alpha[k] : d_alpha[k]);
    for (std::size_t k = 0; k < d_lambda.size(); ++k)
      g.push_back(theta.raw_lambdas[k] < 0 ? -d_lambda[k] : d_lambda[k]);
    return g;
  }
};

namespace detail {

// Row-wise A_i^T A_i applied to a stacked matrix.
inline Matrix apply_gram(const LassoProblem& p, const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (int i = 0; i < p.n_agents(); ++i) out.row(i) = (p.gram(i) * x.row(i).transpose()).transpose();
  return out;
}

}  // namespace detail

/// Exact reverse-mode gradient of unrolled_loss with respect to the
/// effective (alpha_k, lambda_k). The soft-threshold derivative is
/// 1[|v| > t] in v and -sign(v) 1[|v| > t] in t, so kinks take the
/// dead-zone side.
inline ThetaGradient backward(const LassoProblem& p, const MixingPair& pair, const Tape& tape,
                              const Vector& x_star, double gamma) {
  const int k_steps = tape.steps();
  if (static_cast<int>(tape.x.size()) != k_steps + 1 || static_cast<int>(tape.half.size()) != k_steps ||
      static_cast<int>(tape.lambdas.size()) != k_steps)
    throw ValidationError("tape is inconsistent with its parameter count");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("discount must lie in (0, 1]");

  const Eigen::Index n = tape.x[0].rows(), d = tape.x[0].cols();
  const bool extra = tape.algorithm == Algorithm::PgExtra;
  ThetaGradient g{std::vector<double>(k_steps, 0.0), std::vector<double>(k_steps, 0.0)};

  std::vector<Matrix> gx(k_steps + 1, Matrix::Zero(n, d));
  for (int k = 1; k <= k_steps; ++k)
    gx[k] = 2.0 * std::pow(gamma, k_steps - k) * (tape.x[k].rowwise() - x_star.transpose());

  Matrix gv_next = Matrix::Zero(n, d);  // adjoint of x^{k+1/2}, PG-EXTRA carry
  for (int k = k_steps; k >= 1; --k) {
    const double a = tape.alphas[k - 1];
    const double l = tape.lambdas[k - 1];
    const double t = a * l;
    const Matrix& v = tape.half[k - 1];

    Matrix gv(n, d);
    double dt = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        const double vij = v(i, j);
        const bool active = std::abs(vij) > t;
        gv(i, j) = active ? gx[k](i, j) : 0.0;
        if (active) dt -= gx[k](i, j) * (vij > 0 ? 1.0 : -1.0);
      }
    if (extra) gv += gv_next;
    g.d_alpha[k - 1] += dt * l;
    g.d_lambda[k - 1] += dt * a;

    const Matrix b_gv = detail::apply_gram(p, gv);
    gx[k - 1] += pair.W * gv - a * b_gv;  // W symmetric
    if (!extra || k == 1) {
      g.d_alpha[k - 1] -= (gv.cwiseProduct(p.gradient(tape.x[k - 1]))).sum();
    } else {
      gx[k - 2] += -(pair.W_tilde * gv) + a * b_gv;
      const Matrix dx = tape.x[k - 1] - tape.x[k - 2];
      g.d_alpha[k - 1] -= gv.cwiseProduct(detail::apply_gram(p, dx)).sum();
    }
    gv_next = std::move(gv);
  }
  return g;
}

/// Smallest |(|v| - t_k)| / t_k over all layers and entries; +inf when
/// every threshold is zero.
inline double kink_margin(const Tape& tape) {
  double m = std::numeric_limits<double>::infinity();
  for (int k = 0; k < tape.steps(); ++k) {
    const double t = tape.alphas[k] * tape.lambdas[k];
    if (t <= 0.0) continue;
    const double dist = ((tape.half[k].cwiseAbs().array() - t).abs()).minCoeff();
    m = std::min(m, dist / t);
  }
  return m;
}

struct FiniteDiffGradient {
  ThetaGradient grad;
  std::vector<bool> kink_alpha;   // coordinate straddles a threshold kink
  std::vector<bool> kink_lambda;
};

/// Central differences of unrolled_loss in each effective parameter. A
/// coordinate is flagged as a kink when the +eps or -eps run activates a
/// different set of entries than the unperturbed run.
inline FiniteDiffGradient finite_diff_grad(const LassoProblem& p, const MixingPair& pair,
                                           Algorithm alg, const ParamSchedule& theta,
                                           const Vector& x_star, double gamma, double eps) {
  if (!(eps > 0.0)) throw ParameterError("finite-difference step must be positive");
  const int k_steps = theta.size();
  auto pattern = [](const Tape& tp) {
    std::vector<bool> bits;
    for (int k = 0; k < tp.steps(); ++k) {
      const double t = tp.alphas[k] * tp.lambdas[k];
      for (Eigen::Index e = 0; e < tp.half[k].size(); ++e) bits.push_back(std::abs(tp.half[k](e)) > t);
    }
    return bits;
  };
  const auto base = pattern(forward_unrolled(p, pair, alg, theta).tape);
  auto eval = [&](const ParamSchedule& s, bool& kink) {
    auto run = forward_unrolled(p, pair, alg, s);
    if (pattern(run.tape) != base) kink = true;
    return unrolled_loss(run.tape.x, x_star, gamma);
  };

  FiniteDiffGradient out{{std::vector<double>(k_steps), std::vector<double>(k_steps)},
                         std::vector<bool>(k_steps, false), std::vector<bool>(k_steps, false)};
  for (int k = 0; k < k_steps; ++k) {
    for (int which = 0; which < 2; ++which) {
      ParamSchedule plus = theta, minus = theta;
      auto& vp = which == 0 ? plus.alphas[k] : plus.lambdas[k];
      auto& vm = which == 0 ? minus.alphas[k] : minus.lambdas[k];
      vp += eps;
      vm -= eps;
      bool kink = false;
      double gk;
      if (which == 1 && vm < 0.0) {
        // lambda at the boundary: one-sided difference
        ParamSchedule base_s = theta;
        gk = (eval(plus, kink) - eval(base_s, kink)) / eps;
      } else {
        const double fp = eval(plus, kink);
        const double fm = eval(minus, kink);
        gk = (fp - fm) / (2.0 * eps);
      }
      if (which == 0) {
        out.grad.d_alpha[k] = gk;
        out.kink_alpha[k] = kink;
      } else {
        out.grad.d_lambda[k] = gk;
        out.kink_lambda[k] = kink;
      }
    }
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
  AdamConfig hp;

  AdamState() = default;
  AdamState(std::size_t n, AdamConfig cfg) : m(n, 0.0), v(n, 0.0), hp(cfg) {}
};

/// One bias-corrected Adam step, in place.
inline void adam_update(std::span<double> theta, std::span<const double> grad, AdamState& st) {
  if (theta.size() != grad.size() || st.m.size() != theta.size() || st.v.size() != theta.size())
    throw ValidationError("Adam state shape mismatch");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.hp.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(st.hp.beta2, double(st.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    st.m[i] = st.hp.beta1 * st.m[i] + (1.0 - st.hp.beta1) * grad[i];
    st.v[i] = st.hp.beta2 * st.v[i] + (1.0 - st.hp.beta2) * grad[i] * grad[i];
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    theta[i] -= st.hp.lr * mhat / (std::sqrt(vhat) + st.hp.eps);
  }
}

/// Dataset samples with their precomputed Gram matrices and mixing pairs.
/// References the instances; they must outlive it.
class PreparedSet {
 public:
  explicit PreparedSet(const std::vector<LassoInstance>& samples) : samples_(&samples) {
    problems_.reserve(samples.size());
    pairs_.reserve(samples.size());
    for (const auto& s : samples) {
      problems_.emplace_back(s);
      pairs_.push_back(metropolis_pair(s.graph));
    }
  }

  std::size_t size() const { return problems_.size(); }
  bool empty() const { return problems_.empty(); }
  const LassoProblem& problem(std::size_t i) const { return problems_[i]; }
  const MixingPair& pair(std::size_t i) const { return pairs_[i]; }
  const Vector& x_star(std::size_t i) const { return (*samples_)[i].x_star; }

 private:
  const std::vector<LassoInstance>* samples_;
  std::vector<LassoProblem> problems_;
  std::vector<MixingPair> pairs_;
};

/// 2 lambda_min(W~) / (3 L_s) with both quantities averaged over the set.
inline double default_initial_alpha(const PreparedSet& set) {
  if (set.empty()) throw ParameterError("empty set");
  double lmin = 0.0, ls = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    lmin += detail::min_eigenvalue(set.pair(i).W_tilde);
    ls += lipschitz_Ls(set.problem(i));
  }
  return 2.0 * (lmin / set.size()) / (3.0 * (ls / set.size()));
}

struct EvalResult {
  std::vector<double> namse_curve;  // index k = iteration
  double final_db = 0.0;
  std::size_t evaluated = 0;
  std::size_t diverged = 0;
};

/// Forward-only batch NAMSE per iteration. Divergent samples are excluded
/// from the averages and counted.
inline EvalResult evaluate(const PreparedSet& set, Algorithm alg, const ParamSchedule& schedule,
                           int k_steps) {
  if (set.empty()) throw ParameterError("cannot evaluate an empty split");
  std::vector<NamseAccumulator> acc(k_steps + 1);
  EvalResult r;
  for (std::size_t s = 0; s < set.size(); ++s) {
    Trajectory tr;
    try {
      tr = run_solver(set.problem(s), set.pair(s), alg, schedule, k_steps, std::nullopt,
                      {.snapshots = true});
    } catch (const DivergenceError&) {
      ++r.diverged;
      continue;
    }
    for (int k = 0; k <= k_steps; ++k) acc[k].add(tr.x[k], set.x_star(s));
    ++r.evaluated;
  }
  const double inf = std::numeric_limits<double>::infinity();
  for (const auto& a : acc) r.namse_curve.push_back(a.count() ? a.value_db() : inf);
  r.final_db = r.namse_curve.back();
  return r;
}

struct TrainConfig {
  Algorithm algorithm = Algorithm::PgExtra;
  int k_steps = 10;
  double gamma = 0.9;
  int epochs = 500;
  int batch_size = 10;
  std::uint64_t seed = 1;
  std::optional<double> init_alpha;  // default_initial_alpha when unset
  double init_lambda = 0.1;
  AdamConfig adam;

  void validate() const {
    if (k_steps < 1) throw ParameterError("K must be at least 1");
    if (epochs < 1) throw ParameterError("epochs must be at least 1");
    if (batch_size < 1) throw ParameterError("batch size must be at least 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("discount must lie in (0, 1]");
  }
};

struct TrainLogRow {
  int epoch = 0;  // 0 is the initialization
  double train_loss = 0.0;
  double val_namse_db = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  LearnableParams best;
  LearnableParams last;
  int best_epoch = 0;
  double best_val_namse_db = 0.0;
  std::size_t skipped_samples = 0;
  std::vector<TrainLogRow> log;
};

/// Mean loss and mean gradient over a batch. Returns the number of samples
/// that diverged (skipped).
inline std::size_t batch_gradient(const PreparedSet& set, std::span<const std::size_t> idx,
                                  Algorithm alg, const LearnableParams& theta, double gamma,
                                  std::vector<double>& grad_out, double& loss_out) {
  const ParamSchedule sched = theta.schedule();
  std::vector<double> g(2 * theta.size(), 0.0);
  double loss = 0.0;
  std::size_t used = 0, skipped = 0;
  for (std::size_t s : idx) {
    UnrolledRun run;
    try {
      run = forward_unrolled(set.problem(s), set.pair(s), alg, sched);
    } catch (const DivergenceError&) {
      ++skipped;
      continue;
    }
    loss += unrolled_loss(run.tape.x, set.x_star(s), gamma);
    const auto gs = backward(set.problem(s), set.pair(s), run.tape, set.x_star(s), gamma).raw_flat(theta);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] += gs[c];
    ++used;
  }
  if (used) {
    for (double& v : g) v /= double(used);
    loss /= double(used);
  }
  grad_out = std::move(g);
  loss_out = used ? loss : std::numeric_limits<double>::quiet_NaN();
  return skipped;
}

/// Adam on the discounted loss; keeps the parameters with the best
/// validation NAMSE (epoch 0 = initialization included). Batch order is
/// drawn from cfg.seed, so the result is deterministic.
inline TrainResult train(const PreparedSet& train_set, const PreparedSet& val_set,
                         const TrainConfig& cfg,
                         const std::function<void(const TrainLogRow&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw ParameterError("training split is empty");
  const PreparedSet& val = val_set.empty() ? train_set : val_set;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };

  const double a0 = cfg.init_alpha ? *cfg.init_alpha : default_initial_alpha(train_set);
  LearnableParams theta = LearnableParams::constant(cfg.k_steps, a0, cfg.init_lambda);
  AdamState adam(2 * cfg.k_steps, cfg.adam);

  TrainResult res;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  {
    std::vector<double> g;
    double loss = 0.0;
    batch_gradient(train_set, order, cfg.algorithm, theta, cfg.gamma, g, loss);
    const double v = evaluate(val, cfg.algorithm, theta.schedule(), cfg.k_steps).final_db;
    res.log.push_back({0, loss, v, elapsed()});
    res.best = theta;
    res.best_val_namse_db = v;
    if (on_epoch) on_epoch(res.log.back());
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(split_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.uniform_index(k)]);

    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(cfg.batch_size));
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      std::vector<double> g;
      double loss = 0.0;
      const std::size_t skipped = batch_gradient(train_set, idx, cfg.algorithm, theta, cfg.gamma, g, loss);
      if (skipped) {
        res.skipped_samples += skipped;
        std::cerr << "warning: epoch " << epoch << ": skipped " << skipped
                  << " divergent sample(s)\n";
        if (10 * skipped > idx.size())
          throw NumericalError("training aborted: more than 10% of a batch diverged in epoch " +
                               std::to_string(epoch));
      }
      auto flat = theta.flatten();
      adam_update(flat, g, adam);
      theta.unflatten(flat);
      loss_sum += loss;
      ++loss_batches;
    }

    double v = std::numeric_limits<double>::infinity();
    try {
      v = evaluate(val, cfg.algorithm, theta.schedule(), cfg.k_steps).final_db;
    } catch (const ParameterError&) {
      // a raw parameter hit exactly zero; leave v at +inf
    }
    res.log.push_back({epoch, loss_sum / double(loss_batches), v, elapsed()});
    if (v < res.best_val_namse_db) {
      res.best_val_namse_db = v;
      res.best = theta;
      res.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(res.log.back());
  }
  res.last = theta;
  return res;
}

// Parameter file: header lines, then "k alpha_k lambda_k" for k = 1..K.

struct ThetaFile {
  Algorithm algorithm = Algorithm::PgExtra;
  int k_steps = 0;
  double gamma = 0.9;
  std::uint64_t seed = 0;
  std::string config_hash;
  ParamSchedule schedule;
};

/// FNV-1a over a canonical configuration string, as 16 hex digits.
inline std::string config_hash(std::string_view canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline constexpr std::string_view kThetaMagic = "dunroll-theta 1";

inline void write_theta(std::ostream& os, const ThetaFile& f) {
  if (f.schedule.size() != f.k_steps) throw ValidationError("theta length does not match K");
  os << kThetaMagic << '\n'
     << "algorithm " << to_string(f.algorithm) << '\n'
     << "K " << f.k_steps << '\n'
     << "gamma " << format_real(f.gamma) << '\n'
     << "seed " << f.seed << '\n'
     << "config_hash " << (f.config_hash.empty() ? "-" : f.config_hash) << '\n';
  for (int k = 0; k < f.k_steps; ++k)
    os << (k + 1) << ' ' << format_real(f.schedule.alphas[k]) << ' '
       << format_real(f.schedule.lambdas[k]) << '\n';
}

inline ThetaFile read_theta(std::istream& is) {
  detail::LineReader rd(is);
  {
    auto ss = rd.next("header");
    std::string line;
    std::getline(ss, line);
    if (line != kThetaMagic) rd.fail("not a dunroll parameter file (bad magic)");
  }
  ThetaFile f;
  try {
    f.algorithm = parse_algorithm(rd.keyed("algorithm"));
  } catch (const ParameterError& e) {
    rd.fail(e.what());
  }
  if (!parse_int(rd.keyed("K"), f.k_steps) || f.k_steps < 0) rd.fail("bad K");
  if (!parse_real(rd.keyed("gamma"), f.gamma)) rd.fail("bad gamma");
  if (!parse_int(rd.keyed("seed"), f.seed)) rd.fail("bad seed");
  f.config_hash = rd.keyed("config_hash");
  if (f.config_hash == "-") f.config_hash.clear();
  for (int k = 0; k < f.k_steps; ++k) {
    auto t = rd.tokens("parameter line");
    int idx = 0;
    double a = 0, l = 0;
    if (t.size() != 3 || !parse_int(t[0], idx) || idx != k + 1 || !parse_real(t[1], a) ||
        !parse_real(t[2], l))
      rd.fail("expected '" + std::to_string(k + 1) + " alpha lambda'");
    f.schedule.alphas.push_back(a);
    f.schedule.lambdas.push_back(l);
  }
  try {
    f.schedule.validate();
  } catch (const ParameterError& e) {
    rd.fail(e.what());
  }
  return f;
}

/// Columns: epoch, train_loss, val_namse_db. Wall-clock lives elsewhere so
/// the log is reproducible byte for byte.
inline void write_train_log_csv(std::ostream& os, const std::vector<TrainLogRow>& log) {
  CsvWriter csv(os, "dunroll-trainlog", 1, {"epoch", "train_loss", "val_namse_db"});
  for (const auto& r : log)
    csv.row({std::to_string(r.epoch), format_real(r.train_loss), format_real(r.val_namse_db)});
}

}  // namespace dunroll
