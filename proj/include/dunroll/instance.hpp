#pragma once

// Decentralized LASSO instances: y_i = A_i x* + e_i at every agent.

#include "core.hpp"
#include "rng.hpp"
#include "topology.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace dunroll {

struct InstanceConfig {
  int n_nodes = 5;
  int n_edges = 6;
  int d = 100;
  int m_total = 300;
  double snr_db = 50.0;
  /// Expected number of nonzeros in x*. Defaults to m_total / (2 n_nodes).
  std::optional<double> p_s;
  std::uint64_t seed = 1;
  /// Overrides the SNR-derived noise level when set.
  std::optional<double> sigma;
  /// Per-agent noise levels; uniform sigma when empty.
  std::vector<double> agent_sigma;

  double sparsity() const { return p_s ? *p_s : double(m_total) / (2.0 * n_nodes); }
  int m_per_agent() const { return m_total / n_nodes; }

  void validate() const {
    if (n_nodes < 1) throw ParameterError("n_nodes must be positive");
    if (d < 1) throw ParameterError("d must be positive");
    if (m_total < n_nodes || m_total % n_nodes != 0)
      throw ParameterError("m_total must be a positive multiple of n_nodes");
    const double ps = sparsity();
    if (!(ps > 0.0) || ps > d) throw ParameterError("p_s must lie in (0, d]");
    if (sigma && *sigma < 0.0) throw ParameterError("sigma must be non-negative");
    if (!agent_sigma.empty() && static_cast<int>(agent_sigma.size()) != n_nodes)
      throw ParameterError("agent_sigma needs one entry per agent");
    for (double s : agent_sigma)
      if (s < 0.0) throw ParameterError("agent sigma must be non-negative");
  }
};

struct LassoInstance {
  CommGraph graph;
  std::vector<Matrix> A;  // m_i x d per agent
  std::vector<Vector> y;  // m_i per agent
  Vector x_star;
  double sigma = 0.0;

  int n_agents() const { return graph.n_nodes(); }
  int dim() const { return static_cast<int>(x_star.size()); }

  void validate() const {
    if (static_cast<int>(A.size()) != graph.n_nodes() || y.size() != A.size())
      throw ValidationError("one (A_i, y_i) block per agent required");
    for (std::size_t i = 0; i < A.size(); ++i) {
      if (A[i].cols() != x_star.size()) throw ValidationError("A_i column count must equal d");
      if (A[i].rows() != y[i].size()) throw ValidationError("y_i length must equal rows of A_i");
    }
    if (sigma < 0.0) throw ValidationError("sigma must be non-negative");
  }

  friend bool operator==(const LassoInstance& a, const LassoInstance& b) {
    if (!(a.graph == b.graph) || a.sigma != b.sigma || a.A.size() != b.A.size()) return false;
    if (a.x_star.size() != b.x_star.size() || a.x_star != b.x_star) return false;
    for (std::size_t i = 0; i < a.A.size(); ++i) {
      if (a.A[i].rows() != b.A[i].rows() || a.A[i].cols() != b.A[i].cols()) return false;
      if (a.A[i] != b.A[i] || a.y[i].size() != b.y[i].size() || a.y[i] != b.y[i]) return false;
    }
    return true;
  }
};

/// Bernoulli-Gaussian: each entry nonzero with probability p_s/d, nonzeros N(0,1).
inline Vector sample_sparse_signal(int d, double p_s, Rng& rng) {
  if (d < 1) throw ParameterError("d must be positive");
  if (!(p_s > 0.0) || p_s > d) throw ParameterError("p_s must lie in (0, d]");
  const double p = p_s / d;
  Vector x = Vector::Zero(d);
  for (int j = 0; j < d; ++j)
    if (rng.bernoulli(p)) x(j) = rng.normal();
  return x;
}

/// Inverts SNR = 10 log10(power / sigma^2).
inline double noise_sigma_from_snr(double snr_db, double expected_signal_power) {
  if (!(expected_signal_power > 0.0)) throw ParameterError("signal power must be positive");
  return std::sqrt(expected_signal_power / std::pow(10.0, snr_db / 10.0));
}

/// Draw order is fixed: graph, x*, A_i in agent order, then noise in agent order.
inline LassoInstance sample_instance(const InstanceConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  LassoInstance inst;
  inst.graph = sample_connected_graph(cfg.n_nodes, cfg.n_edges, rng);
  inst.x_star = sample_sparse_signal(cfg.d, cfg.sparsity(), rng);

  const int mi = cfg.m_per_agent();
  inst.A.reserve(cfg.n_nodes);
  for (int i = 0; i < cfg.n_nodes; ++i) {
    Matrix a(mi, cfg.d);
    for (int r = 0; r < mi; ++r)
      for (int c = 0; c < cfg.d; ++c) a(r, c) = rng.normal();
    inst.A.push_back(std::move(a));
  }

  const double sigma = cfg.sigma ? *cfg.sigma : noise_sigma_from_snr(cfg.snr_db, cfg.sparsity());
  inst.sigma = sigma;
  inst.y.reserve(cfg.n_nodes);
  for (int i = 0; i < cfg.n_nodes; ++i) {
    const double si = cfg.agent_sigma.empty() ? sigma : cfg.agent_sigma[i];
    Vector yi = inst.A[i] * inst.x_star;
    for (int r = 0; r < mi; ++r) {
      const double e = rng.normal();
      yi(r) += si * e;
    }
    inst.y.push_back(std::move(yi));
  }
  if (!cfg.agent_sigma.empty())
    inst.sigma = *std::max_element(cfg.agent_sigma.begin(), cfg.agent_sigma.end());
  return inst;
}

/// Gradient of 0.5 ||A_i x - y_i||^2.
inline Vector local_gradient(const LassoInstance& inst, int agent, const Vector& x) {
  const auto& a = inst.A.at(agent);
  if (x.size() != a.cols()) throw ValidationError("x_i has wrong length");
  return a.transpose() * (a * x - inst.y[agent]);
}

/// Accumulates squared errors over a batch; the ratio is taken before the log.
class NamseAccumulator {
 public:
  void add(const StackedEstimate& x, const Vector& x_star) {
    if (x.cols() != x_star.size()) throw ValidationError("estimate and ground truth disagree on d");
    const double n = static_cast<double>(x.rows());
    err_ += (x.rowwise() - x_star.transpose()).squaredNorm();
    ref_ += n * x_star.squaredNorm();
    n_rows_ = x.rows();
    ++count_;
  }

  /// 10 log10( E||x - x*||_F^2 / (N E||x*||_F^2) ); -inf for exact recovery.
  double value_db() const {
    if (count_ == 0) throw MetricError("NAMSE of an empty batch");
    if (!(ref_ > 0.0)) throw MetricError("NAMSE undefined for zero ground truth");
    if (err_ == 0.0) return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(err_ / (static_cast<double>(n_rows_) * ref_));
  }

  std::size_t count() const noexcept { return count_; }
  double error_sum() const noexcept { return err_; }

 private:
  double err_ = 0.0;
  double ref_ = 0.0;
  Eigen::Index n_rows_ = 0;
  std::size_t count_ = 0;
};

inline double namse(const StackedEstimate& x, const Vector& x_star) {
  NamseAccumulator acc;
  acc.add(x, x_star);
  return acc.value_db();
}

}  // namespace dunroll
