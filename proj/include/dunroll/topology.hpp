#pragma once

// Communication graphs and the mixing matrices built on them.

#include "core.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace dunroll {

/// Undirected simple graph on nodes 0..n-1. Edges are stored with i < j,
/// sorted lexicographically.
class CommGraph {
 public:
  using Edge = std::pair<int, int>;

  CommGraph() = default;

  /// Throws ValidationError on self-loops, duplicates or out-of-range nodes.
  /// Connectivity is not required here; see is_connected().
  CommGraph(int n_nodes, std::vector<Edge> edges) : n_(n_nodes), edges_(std::move(edges)) {
    if (n_ <= 0) throw ValidationError("graph must have at least one node");
    for (auto& [i, j] : edges_) {
      if (i == j) throw ValidationError("self-loop on node " + std::to_string(i));
      if (i < 0 || j < 0 || i >= n_ || j >= n_)
        throw ValidationError("edge endpoint out of range");
      if (i > j) std::swap(i, j);
    }
    std::sort(edges_.begin(), edges_.end());
    if (std::adjacent_find(edges_.begin(), edges_.end()) != edges_.end())
      throw ValidationError("duplicate edge");
    neighbors_.assign(n_, {});
    for (auto [i, j] : edges_) {
      neighbors_[i].push_back(j);
      neighbors_[j].push_back(i);
    }
    for (auto& nb : neighbors_) std::sort(nb.begin(), nb.end());
  }

  int n_nodes() const noexcept { return n_; }
  int n_edges() const noexcept { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<int>& neighbors(int i) const { return neighbors_.at(i); }
  int degree(int i) const { return static_cast<int>(neighbors_.at(i).size()); }

  bool has_edge(int i, int j) const {
    if (i > j) std::swap(i, j);
    return std::binary_search(edges_.begin(), edges_.end(), Edge{i, j});
  }

  bool is_connected() const {
    if (n_ == 0) return false;
    std::vector<char> seen(n_, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int reached = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (int v : neighbors_[u])
        if (!seen[v]) {
          seen[v] = 1;
          ++reached;
          stack.push_back(v);
        }
    }
    return reached == n_;
  }

  friend bool operator==(const CommGraph& a, const CommGraph& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_;
  }

 private:
  int n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> neighbors_;
};

/// Uniform over edge sets of the requested size, resampled until connected.
inline CommGraph sample_connected_graph(int n_nodes, int n_edges, Rng& rng) {
  if (n_nodes < 1) throw ParameterError("n_nodes must be positive");
  const long long max_edges = static_cast<long long>(n_nodes) * (n_nodes - 1) / 2;
  if (n_edges < n_nodes - 1 || n_edges > max_edges)
    throw ParameterError("n_edges=" + std::to_string(n_edges) + " infeasible for n_nodes=" +
                         std::to_string(n_nodes) + " (need " + std::to_string(n_nodes - 1) +
                         ".." + std::to_string(max_edges) + ")");
  std::vector<CommGraph::Edge> all;
  all.reserve(static_cast<std::size_t>(max_edges));
  for (int i = 0; i < n_nodes; ++i)
    for (int j = i + 1; j < n_nodes; ++j) all.emplace_back(i, j);

  for (;;) {
    // Partial Fisher-Yates: the first n_edges slots are a uniform subset.
    for (int k = 0; k < n_edges; ++k) {
      auto r = k + static_cast<int>(rng.uniform_index(all.size() - k));
      std::swap(all[k], all[r]);
    }
    CommGraph g(n_nodes, {all.begin(), all.begin() + n_edges});
    if (g.is_connected()) return g;
  }
}

inline CommGraph sample_connected_graph(int n_nodes, int n_edges, std::uint64_t seed) {
  Rng rng(seed);
  return sample_connected_graph(n_nodes, n_edges, rng);
}

/// Metropolis-Hastings weights: w_ij = 1/(1 + max(deg_i, deg_j)) on edges,
/// diagonal fills each row to one.
inline Matrix metropolis_weights(const CommGraph& g) {
  const int n = g.n_nodes();
  Matrix w = Matrix::Zero(n, n);
  for (auto [i, j] : g.edges()) {
    const double v = 1.0 / (1.0 + std::max(g.degree(i), g.degree(j)));
    w(i, j) = v;
    w(j, i) = v;
  }
  for (int i = 0; i < n; ++i) w(i, i) = 1.0 - (w.row(i).sum() - w(i, i));
  return w;
}

struct MixingPair {
  Matrix W;
  Matrix W_tilde;
};

struct NamedCheck {
  std::string name;
  double residual = 0.0;
  bool pass = false;
};

struct CheckReport {
  std::vector<NamedCheck> checks;

  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
  }
  const NamedCheck* find(std::string_view name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

namespace detail {

inline double min_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline double max_eigenvalue(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(m.rows() - 1);
}

// Off-diagonal support of W, used when no graph is supplied.
inline CommGraph graph_from_support(const Matrix& w) {
  std::vector<CommGraph::Edge> edges;
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = i + 1; j < w.cols(); ++j)
      if (w(i, j) != 0.0 || w(j, i) != 0.0)
        edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return CommGraph(static_cast<int>(w.rows()), std::move(edges));
}

}  // namespace detail

/// Validates the mixing-pair conditions one by one. Failures are reported,
/// never thrown. Without a graph, the sparsity pattern is taken from W.
inline CheckReport check_assumption1(const MixingPair& pair, double tol,
                                     const CommGraph* graph = nullptr) {
  const Matrix& w = pair.W;
  const Matrix& wt = pair.W_tilde;
  if (w.rows() != w.cols() || wt.rows() != wt.cols() || w.rows() != wt.rows())
    throw ValidationError("mixing matrices must be square and of equal size");
  const Eigen::Index n = w.rows();
  CommGraph support = graph ? *graph : detail::graph_from_support(w);
  if (support.n_nodes() != n) throw ValidationError("graph size does not match mixing matrices");

  CheckReport rep;
  auto add = [&](std::string name, double residual) {
    rep.checks.push_back({std::move(name), residual, residual <= tol});
  };

  add("symmetric", std::max((w - w.transpose()).cwiseAbs().maxCoeff(),
                            (wt - wt.transpose()).cwiseAbs().maxCoeff()));

  double off_graph = 0.0;
  double min_support = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool on = i == j || support.has_edge(static_cast<int>(i), static_cast<int>(j));
      if (on)
        min_support = std::min({min_support, w(i, j), wt(i, j)});
      else
        off_graph = std::max({off_graph, std::abs(w(i, j)), std::abs(wt(i, j))});
    }
  add("sparsity", off_graph);
  // Strict positivity: a zero entry fails regardless of tol.
  rep.checks.push_back({"positive_on_support", std::max(0.0, -min_support), min_support > 0.0});

  const Vector ones = Vector::Ones(n);
  add("row_sums", std::max((w * ones - ones).cwiseAbs().maxCoeff(),
                           (wt * ones - ones).cwiseAbs().maxCoeff()));

  add("W_tilde_psd", std::max(0.0, -detail::min_eigenvalue(wt)));
  const Matrix half = 0.5 * (Matrix::Identity(n, n) + w);
  add("half_I_plus_W_dominates_W_tilde", std::max(0.0, -detail::min_eigenvalue(half - wt)));
  add("W_tilde_dominates_W", std::max(0.0, -detail::min_eigenvalue(wt - w)));

  {
    // null(W~ - W) = span{1}: smallest eigenvalue ~0 with eigenvector along 1,
    // and a strictly positive gap to the next one.
    Eigen::SelfAdjointEigenSolver<Matrix> es(wt - w);
    const double l0 = es.eigenvalues()(0);
    const double align = std::abs(es.eigenvectors().col(0).dot(ones)) / std::sqrt(double(n));
    double residual = std::abs(l0) + (1.0 - align);
    // A missing spectral gap contributes a unit residual.
    if (n > 1 && es.eigenvalues()(1) <= tol) residual += 1.0;
    const bool pass = residual <= tol;
    rep.checks.push_back({"null_space_is_consensus", residual, pass});
  }

  add("lambda_max_W_tilde_is_one", std::abs(detail::max_eigenvalue(wt) - 1.0));
  return rep;
}

/// W~ = (I + W)/2, after validating W.
inline MixingPair make_pg_extra_pair(const Matrix& w, const CommGraph* graph = nullptr) {
  if (w.rows() != w.cols()) throw ValidationError("W must be square");
  const Eigen::Index n = w.rows();
  MixingPair pair{w, 0.5 * (Matrix::Identity(n, n) + w)};
  auto rep = check_assumption1(pair, 1e-10, graph);
  for (const auto& c : rep.checks)
    if (!c.pass) throw ValidationError("W violates mixing condition '" + c.name + "'");
  return pair;
}

inline MixingPair metropolis_pair(const CommGraph& g) {
  return make_pg_extra_pair(metropolis_weights(g), &g);
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues with
/// magnitude at most eig_floor are treated as exact zeros, so the null space
/// of M stays the null space of the root.
inline Matrix psd_sqrt(const Matrix& m, double eig_floor = 1e-10) {
  if (m.rows() != m.cols()) throw ValidationError("psd_sqrt needs a square matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  Vector ev = es.eigenvalues();
  if (ev.size() > 0 && ev(0) < -eig_floor)
    throw NumericalError("matrix is not PSD: eigenvalue " + format_real(ev(0)));
  ev = ev.unaryExpr([eig_floor](double l) { return l <= eig_floor ? 0.0 : std::sqrt(l); });
  const Matrix& v = es.eigenvectors();
  Matrix r = v * ev.asDiagonal() * v.transpose();
  return 0.5 * (r + r.transpose());
}

// Text form: "n_nodes n_edges", then one "i j" line per edge with i < j.
inline void write_graph(std::ostream& os, const CommGraph& g) {
  os << g.n_nodes() << ' ' << g.n_edges() << '\n';
  for (auto [i, j] : g.edges()) os << i << ' ' << j << '\n';
}

/// Reads a graph written by write_graph. line_offset is added to reported
/// line numbers when the graph is embedded in a larger file.
inline CommGraph read_graph(std::istream& is, std::size_t line_offset = 0) {
  std::string line;
  std::size_t ln = line_offset;
  auto next = [&]() -> std::istringstream {
    if (!std::getline(is, line)) throw ParseError("unexpected end of graph", ln + 1);
    ++ln;
    return std::istringstream(line);
  };
  int n = 0, e = 0;
  {
    auto ss = next();
    if (!(ss >> n >> e) || n <= 0 || e < 0) throw ParseError("bad graph header", ln);
  }
  std::vector<CommGraph::Edge> edges;
  for (int k = 0; k < e; ++k) {
    auto ss = next();
    int i, j;
    if (!(ss >> i >> j)) throw ParseError("bad edge line", ln);
    if (i >= j) throw ParseError("edge must satisfy i < j", ln);
    edges.emplace_back(i, j);
  }
  try {
    return CommGraph(n, std::move(edges));
  } catch (const ValidationError& ex) {
    throw ParseError(ex.what(), ln);
  }
}

}  // namespace dunroll
