#include "helpers.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace dunroll;
using testutil::small_instance;

namespace {

double soft_ref(double v, double t) { return v > t ? v - t : (v < -t ? v + t : 0.0); }

Matrix soft_ref(const Matrix& v, double t) {
  Matrix out = v;
  for (Eigen::Index k = 0; k < v.size(); ++k) out.data()[k] = soft_ref(v.data()[k], t);
  return out;
}

// Stacked gradient straight from A_i and y_i, no Gram matrices.
Matrix dense_gradient(const LassoInstance& inst, const Matrix& x) {
  Matrix g(x.rows(), x.cols());
  for (int i = 0; i < inst.n_agents(); ++i)
    g.row(i) = (inst.A[i].transpose() * (inst.A[i] * x.row(i).transpose() - inst.y[i])).transpose();
  return g;
}

Matrix dense_extra_half(const LassoInstance& inst, const MixingPair& pair, const Matrix& xk,
                        const Matrix& xkm1, const Matrix& hkm1, double alpha) {
  Matrix corr(xk.rows(), xk.cols());
  for (int i = 0; i < inst.n_agents(); ++i)
    corr.row(i) = (inst.A[i].transpose() * (inst.A[i] * (xk.row(i) - xkm1.row(i)).transpose())).transpose();
  return pair.W * xk + hkm1 - pair.W_tilde * xkm1 - alpha * corr;
}

double safe_alpha(const LassoProblem& p, const MixingPair& pair) {
  double ls = 0.0;
  for (int i = 0; i < p.n_agents(); ++i) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(p.gram(i), Eigen::EigenvaluesOnly);
    ls = std::max(ls, es.eigenvalues().maxCoeff());
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(pair.W_tilde, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0) / ls;  // half of 2 lambda_min / L_s
}

}  // namespace

TEST(SoftThreshold, Examples) {
  EXPECT_EQ(soft_threshold(2.0, 1.0), 1.0);
  EXPECT_EQ(soft_threshold(-0.5, 1.0), 0.0);
  EXPECT_EQ(soft_threshold(-3.0, 1.0), -2.0);
  const Vector v = Vector::LinSpaced(7, -3.0, 3.0);
  EXPECT_EQ((soft_threshold(v, 0.0) - v).norm(), 0.0);
  EXPECT_THROW(soft_threshold(1.0, -0.1), ParameterError);
  EXPECT_THROW(soft_threshold(v, -0.1), ParameterError);
}

TEST(SoftThreshold, ReluIdentity) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const double v = 3.0 * rng.normal(), th = rng.uniform();
    const double relu = std::max(v - th, 0.0) - std::max(-v - th, 0.0);
    EXPECT_EQ(soft_threshold(v, th), relu);
  }
}

TEST(Schedule, Validation) {
  EXPECT_THROW(ParamSchedule::constant(3, 0.0, 0.1), ParameterError);
  EXPECT_THROW(ParamSchedule::constant(3, 0.1, -0.1), ParameterError);
  ParamSchedule s{{0.1, 0.1}, {0.1}};
  EXPECT_THROW(s.validate(), ParameterError);
}

TEST(ProxDgd, SingleAgentIsGradientDescent) {
  const LassoInstance inst = small_instance(1, 0, 8, 12, 3, 20.0);
  const LassoProblem p(inst);
  Rng rng(2);
  const Matrix x = testutil::random_matrix(rng, 1, 8);
  const SolverState s = prox_dgd_step(SolverState::initial(x), p, Matrix::Identity(1, 1), 0.01, 0.0);
  const Vector gd = x.row(0).transpose() - 0.01 * inst.A[0].transpose() * (inst.A[0] * x.row(0).transpose() - inst.y[0]);
  EXPECT_LT((s.x_curr.row(0).transpose() - gd).norm(), 1e-12);
}

TEST(ProxDgd, FixedPointIsKept) {
  InstanceConfig c = testutil::small_config(1, 0, 6, 10, 4);
  c.sigma = 0.0;
  const LassoInstance inst = sample_instance(c);
  const LassoProblem p(inst);
  const Matrix x = inst.x_star.transpose();  // zero gradient, lambda = 0
  const SolverState s = prox_dgd_step(SolverState::initial(x), p, Matrix::Identity(1, 1), 0.02, 0.0);
  EXPECT_LT((s.x_curr - x).norm(), 1e-12);
}

TEST(ProxDgd, MatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const LassoInstance inst = small_instance(2, 1, 3, 4, seed, 10.0);
    const LassoProblem p(inst);
    const MixingPair pair = metropolis_pair(inst.graph);
    Rng rng(seed + 100);
    const Matrix x = testutil::random_matrix(rng, 2, 3);
    const double a = 0.05, l = 0.3;
    const SolverState s = prox_dgd_step(SolverState::initial(x), p, pair.W, a, l);
    const Matrix expect = soft_ref(pair.W * x - a * dense_gradient(inst, x), a * l);
    EXPECT_LT((s.x_curr - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PgExtra, FirstStepEqualsProxDgd) {
  const LassoInstance inst = small_instance(5, 6, 20, 30, 6);
  const LassoProblem p(inst);
  const MixingPair pair = metropolis_pair(inst.graph);
  Rng rng(3);
  const Matrix x0 = testutil::random_matrix(rng, 5, 20);
  const SolverState a = pg_extra_first_step(SolverState::initial(x0), p, pair, 0.004, 0.2);
  const SolverState b = prox_dgd_step(SolverState::initial(x0), p, pair.W, 0.004, 0.2);
  EXPECT_EQ(a.x_curr, b.x_curr);
  EXPECT_EQ(a.x_prev, x0);
}

TEST(PgExtra, ZeroDataStaysAtZero) {
  LassoInstance inst = small_instance(3, 3, 5, 9, 1);
  for (auto& y : inst.y) y.setZero();
  const LassoProblem p(inst);
  const SolverState s = pg_extra_first_step(SolverState::initial(Matrix::Zero(3, 5)), p, metropolis_pair(inst.graph), 0.01, 0.1);
  EXPECT_EQ(s.x_curr.norm(), 0.0);
}

TEST(PgExtra, StepsMatchDenseOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const LassoInstance inst = small_instance(4, 4, 6, 8, seed, 20.0);
    const LassoProblem p(inst);
    const MixingPair pair = metropolis_pair(inst.graph);
    const double a = safe_alpha(p, pair), l = 0.05;
    Rng rng(seed);
    Matrix x = testutil::random_matrix(rng, 4, 6);
    SolverState s = SolverState::initial(x);
    Matrix h = pair.W * x - a * dense_gradient(inst, x), xprev = x;
    x = soft_ref(h, a * l);
    s = pg_extra_first_step(s, p, pair, a, l);
    ASSERT_LT((s.x_curr - x).cwiseAbs().maxCoeff(), 1e-12);
    for (int k = 1; k < 6; ++k) {
      const Matrix hn = dense_extra_half(inst, pair, x, xprev, h, a);
      xprev = x;
      h = hn;
      x = soft_ref(h, a * l);
      s = pg_extra_step(s, p, pair, a, l);
      ASSERT_LT((s.x_curr - x).cwiseAbs().maxCoeff(), 1e-12) << "step " << k;
      ASSERT_LT((s.x_half_prev - h).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(PgExtra, MissingHistoryIsStateError) {
  const LassoInstance inst = small_instance(3, 2, 4, 6, 1);
  const LassoProblem p(inst);
  const MixingPair pair = metropolis_pair(inst.graph);
  EXPECT_THROW(pg_extra_step(SolverState::initial(Matrix::Zero(3, 4)), p, pair, 0.01, 0.1), StateError);
  SolverState s = pg_extra_first_step(SolverState::initial(Matrix::Zero(3, 4)), p, pair, 0.01, 0.1);
  EXPECT_THROW(pg_extra_first_step(s, p, pair, 0.01, 0.1), StateError);
}

TEST(PgExtra, ConsistentFixedPointIsKept) {
  const LassoInstance inst = small_instance(5, 6, 10, 20, 2);
  const LassoProblem p(inst);
  const MixingPair pair = metropolis_pair(inst.graph);
  const double a = 0.01, l = 0.2;
  Vector v(10);
  v << 1.0, 0.0, -2.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 3.0;
  const Matrix x = stack_rows(v, 5);
  // pre-threshold value mapping back onto x
  Matrix h = x;
  for (Eigen::Index k = 0; k < h.size(); ++k) {
    double& e = h.data()[k];
    e = e > 0 ? e + a * l : (e < 0 ? e - a * l : 0.0);
  }
  SolverState s;
  s.x_curr = x;
  s.x_prev = x;
  s.x_half_prev = h;
  s.iter = 5;
  const SolverState n = pg_extra_step(s, p, pair, a, l);
  EXPECT_LT((n.x_curr - x).norm(), 1e-12);
}

TEST(PgExtra, ConvergedRunIsStationary) {
  const LassoInstance inst = small_instance(5, 6, 30, 50, 12);
  const LassoProblem p(inst);
  const MixingPair pair = metropolis_pair(inst.graph);
  const double a = safe_alpha(p, pair);
  Tape tape;
  run_solver(p, pair, Algorithm::PgExtra, ParamSchedule::constant(4000, a, 0.1), 4000, std::nullopt, {}, &tape);
  SolverState s;
  s.x_curr = tape.x.back();
  s.x_prev = tape.x[tape.x.size() - 2];
  s.x_half_prev = tape.half.back();
  s.iter = 4000;
  const SolverState n = pg_extra_step(s, p, pair, a, 0.1);
  EXPECT_LT((n.x_curr - s.x_curr).norm(), 1e-9);
  const Vector xhat = centralized_lasso_oracle(p, 0.1);
  EXPECT_LT((n.x_curr - stack_rows(xhat, 5)).norm(), 1e-9 * std::max(1.0, 5.0 * xhat.norm()));
}

TEST(PgExtra, SingleAgentReducesToIsta) {
  const LassoInstance inst = small_instance(1, 0, 15, 25, 8, 20.0);
  const LassoProblem p(inst);
  const MixingPair pair{Matrix::Identity(1, 1), Matrix::Identity(1, 1)};
  const double a = 0.5 / inst.A[0].squaredNorm() * 15, l = 0.3;
  RecordFlags f;
  f.snapshots = true;
  const Trajectory tr = run_solver(p, pair, Algorithm::PgExtra, ParamSchedule::constant(300, a, l), 300, std::nullopt, f);
  Vector x = Vector::Zero(15);
  for (int k = 1; k <= 300; ++k) {
    x = soft_threshold(Vector(x - a * inst.A[0].transpose() * (inst.A[0] * x - inst.y[0])), a * l);
    ASSERT_LT((tr.x[k].row(0).transpose() - x).cwiseAbs().maxCoeff(), 1e-10) << "k=" << k;
  }
}

TEST(Locality, NonNeighborRowsAreIgnored) {
  Rng rng(77);
  for (int t = 0; t < 30; ++t) {
    const LassoInstance inst = small_instance(7, 9, 5, 14, 1000 + t);
    const LassoProblem p(inst);
    const MixingPair pair = metropolis_pair(inst.graph);
    SolverState s;
    s.x_curr = testutil::random_matrix(rng, 7, 5);
    s.x_prev = testutil::random_matrix(rng, 7, 5);
    s.x_half_prev = testutil::random_matrix(rng, 7, 5);
    s.iter = 3;
    for (int i = 0; i < 7; ++i) {
      SolverState masked = s;
      for (int j = 0; j < 7; ++j)
        if (j != i && !inst.graph.has_edge(i, j)) {
          masked.x_curr.row(j).setConstant(1e6);
          masked.x_prev.row(j).setConstant(-1e6);
          masked.x_half_prev.row(j).setConstant(1e6);
        }
      EXPECT_EQ(pg_extra_agent_half(p, pair, s, i, 0.01), pg_extra_agent_half(p, pair, masked, i, 0.01));
      EXPECT_EQ(prox_dgd_agent_half(p, pair.W, s.x_curr, i, 0.01),
                prox_dgd_agent_half(p, pair.W, masked.x_curr, i, 0.01));
    }
  }
}

TEST(Equivariance, RelabelingAgentsPermutesTrajectory) {
  const LassoInstance inst = small_instance(6, 8, 10, 30, 31);
  std::vector<int> perm{3, 0, 5, 1, 4, 2};  // old agent i becomes perm[i]
  LassoInstance relabeled;
  std::vector<CommGraph::Edge> edges;
  for (auto [i, j] : inst.graph.edges()) edges.emplace_back(perm[i], perm[j]);
  relabeled.graph = CommGraph(6, edges);
  relabeled.x_star = inst.x_star;
  relabeled.A.resize(6);
  relabeled.y.resize(6);
  for (int i = 0; i < 6; ++i) {
    relabeled.A[perm[i]] = inst.A[i];
    relabeled.y[perm[i]] = inst.y[i];
  }
  for (Algorithm alg : {Algorithm::ProxDgd, Algorithm::PgExtra}) {
    const LassoProblem p1(inst), p2(relabeled);
    const auto sched = ParamSchedule::constant(50, 0.003, 0.1);
    const Trajectory t1 = run_solver(p1, metropolis_pair(inst.graph), alg, sched, 50);
    const Trajectory t2 = run_solver(p2, metropolis_pair(relabeled.graph), alg, sched, 50);
    for (int i = 0; i < 6; ++i)
      EXPECT_LT((t1.final_x.row(i) - t2.final_x.row(perm[i])).norm(), 1e-10 * (1.0 + t1.final_x.norm()));
  }
}

TEST(RunSolver, ZeroStepsReturnsStart) {
  const LassoInstance inst = small_instance(5, 6, 10, 20, 3);
  const LassoProblem p(inst);
  RecordFlags f;
  f.snapshots = true;
  const Trajectory tr = run_solver(p, metropolis_pair(inst.graph), Algorithm::PgExtra, ParamSchedule{}, 0, std::nullopt, f);
  ASSERT_EQ(tr.x.size(), 1u);
  EXPECT_EQ(tr.x[0].norm(), 0.0);
  ASSERT_EQ(tr.namse_db.size(), 1u);
  EXPECT_NEAR(tr.namse_db[0], -10.0 * std::log10(5.0), 1e-12);
}

TEST(RunSolver, ScheduleTooShort) {
  const LassoInstance inst = small_instance(3, 2, 4, 6, 1);
  const LassoProblem p(inst);
  EXPECT_THROW(run_solver(p, metropolis_pair(inst.graph), Algorithm::ProxDgd, ParamSchedule::constant(2, 0.1, 0.1), 3),
               ParameterError);
}

TEST(RunSolver, ConsensusReached) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const LassoInstance inst = small_instance(5, 6, 20, 40, 50 + seed);
    const LassoProblem p(inst);
    const MixingPair pair = metropolis_pair(inst.graph);
    const double a = safe_alpha(p, pair);
    const Trajectory tr = run_solver(p, pair, Algorithm::PgExtra, ParamSchedule::constant(2000, a, 0.1), 2000);
    EXPECT_LE(tr.consensus.back(), 1e-6);
    EXPECT_LE(consensus_residual(tr.final_x), 1e-6);
  }
}

TEST(RunSolver, OversizedStepDiverges) {
  const LassoInstance inst = small_instance(5, 6, 30, 50, 4);
  const LassoProblem p(inst);
  const MixingPair pair = metropolis_pair(inst.graph);
  const double a = 20.0 * safe_alpha(p, pair);  // 10 x alpha_max
  bool bad = false;
  try {
    const Trajectory tr = run_solver(p, pair, Algorithm::PgExtra, ParamSchedule::constant(2000, a, 0.05), 2000);
    bad = tr.namse_db.back() > 0.0;
  } catch (const DivergenceError& e) {
    bad = true;
    EXPECT_GT(e.iteration(), 0);
  }
  EXPECT_TRUE(bad);
}

TEST(RunSolver, QAccumulatorMatchesDefinition) {
  const LassoInstance inst = small_instance(4, 4, 6, 12, 9);
  const LassoProblem p(inst);
  const MixingPair pair = metropolis_pair(inst.graph);
  RecordFlags f;
  f.snapshots = f.q = true;
  const Trajectory tr = run_solver(p, pair, Algorithm::PgExtra, ParamSchedule::constant(20, 0.005, 0.1), 20, std::nullopt, f);
  const Matrix u = psd_sqrt(pair.W_tilde - pair.W);
  Matrix q = Matrix::Zero(4, 6);
  for (int k = 0; k <= 20; ++k) {
    q += u * tr.x[k];
    EXPECT_LT((tr.q[k] - q).norm(), 1e-12 * (1.0 + q.norm()));
  }
}

TEST(RunSolver, TrajectoryCsvColumns) {
  const LassoInstance inst = small_instance(3, 3, 4, 6, 2);
  const LassoProblem p(inst);
  RecordFlags f;
  f.snapshots = true;
  const Trajectory tr = run_solver(p, metropolis_pair(inst.graph), Algorithm::ProxDgd, ParamSchedule::constant(2, 0.01, 0.1), 2, std::nullopt, f);
  std::ostringstream os;
  write_trajectory_csv(os, tr, &inst.x_star);
  std::istringstream is(os.str());
  std::string schema, header;
  std::getline(is, schema);
  std::getline(is, header);
  EXPECT_EQ(schema, "# schema: dunroll-trajectory v1");
  EXPECT_EQ(header, "iter,namse_db,consensus_residual,err_agent_0,err_agent_1,err_agent_2");
  int rows = 0;
  for (std::string l; std::getline(is, l);) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(Algorithm, Names) {
  EXPECT_EQ(parse_algorithm("prox-dgd"), Algorithm::ProxDgd);
  EXPECT_EQ(parse_algorithm("pg-extra"), Algorithm::PgExtra);
  EXPECT_EQ(to_string(Algorithm::PgExtra), "pg-extra");
  EXPECT_THROW(parse_algorithm("extra"), ParameterError);
}
