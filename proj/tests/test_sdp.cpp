#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "schmidt_scope/sdp.hpp"
#include "test_util.hpp"

namespace schmidt_scope::sdp {
namespace {

SparseSym dense_to_sparse(int block, const RealMatrix& m) {
  SparseSym s;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = r; c < m.cols(); ++c) s.add(block, r, c, m(r, c));
  return s;
}

RealMatrix random_symmetric(std::mt19937_64& gen, int n) {
  std::normal_distribution<double> nd;
  RealMatrix g(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) g(r, c) = nd(gen);
  return (g + g.transpose()) * 0.5;
}

// Random PSD matrix of the given rank with range inside the first
// `range_cols` columns of the orthogonal matrix q.
RealMatrix psd_on(const RealMatrix& q, int first, int count, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> ud(0.5, 2.0);
  RealMatrix out = RealMatrix::Zero(q.rows(), q.rows());
  for (int i = first; i < first + count; ++i) out += ud(gen) * q.col(i) * q.col(i).transpose();
  return out;
}

struct KnownOptimum {
  SdpProblem problem;
  double optimum;
};

// Builds min <C,X> s.t. <A_i,X> = b_i whose optimum is known from a
// complementary primal-dual pair (X*, y*, Z*) with X* Z* = 0.
KnownOptimum known_optimum_problem(std::mt19937_64& gen, const std::vector<int>& dims, int m) {
  KnownOptimum k;
  k.problem.block_dims = dims;
  std::normal_distribution<double> nd;
  std::vector<RealMatrix> xstar, zstar, a(m * dims.size());
  for (std::size_t b = 0; b < dims.size(); ++b) {
    const int n = dims[b];
    Eigen::HouseholderQR<RealMatrix> qr(random_symmetric(gen, n));
    RealMatrix q = qr.householderQ();
    const int rank = std::max(1, n / 2);
    xstar.push_back(psd_on(q, 0, rank, gen));
    zstar.push_back(psd_on(q, rank, n - rank, gen));
  }
  RealVector ystar(m);
  for (int i = 0; i < m; ++i) ystar(i) = nd(gen);
  std::vector<RealMatrix> c = zstar;
  for (int i = 0; i < m; ++i) {
    Constraint con;
    double rhs = 0;
    for (std::size_t b = 0; b < dims.size(); ++b) {
      RealMatrix ai = random_symmetric(gen, dims[b]);
      c[b] += ystar(i) * ai;
      rhs += ai.cwiseProduct(xstar[b]).sum();
      for (auto e : dense_to_sparse(static_cast<int>(b), ai).entries) con.matrix.entries.push_back(e);
    }
    con.rhs = rhs;
    k.problem.constraints.push_back(con);
  }
  k.optimum = 0;
  for (std::size_t b = 0; b < dims.size(); ++b) {
    for (auto e : dense_to_sparse(static_cast<int>(b), c[b]).entries) k.problem.objective.entries.push_back(e);
    k.optimum += c[b].cwiseProduct(xstar[b]).sum();
  }
  return k;
}

TEST(Solve, TraceNormalizedMinimumIsSmallestEigenvalue) {
  SdpProblem p;
  p.block_dims = {3};
  p.objective.add(0, 0, 0, 3);
  p.objective.add(0, 1, 1, 1);
  p.objective.add(0, 2, 2, 2);
  Constraint tr;
  for (int i = 0; i < 3; ++i) tr.matrix.add(0, i, i, 1.0);
  tr.rhs = 1.0;
  p.constraints.push_back(tr);
  auto sol = solve(p);
  ASSERT_EQ(sol.status, SdpStatus::optimal);
  EXPECT_NEAR(sol.objective_value, 1.0, 1e-7);
  EXPECT_LE(sol.kkt.primal_feas, 1e-8);
  EXPECT_LE(sol.kkt.dual_feas, 1e-8);
  EXPECT_LE(sol.kkt.duality_gap, 1e-8);
}

TEST(Solve, MaximizeScalarUnderIdentityBound) {
  // max t s.t. I - t I >= 0
  LmiProblem lmi;
  int blk = lmi.add_block(3, false, false);
  int t = lmi.add_variable();
  for (int i = 0; i < 3; ++i) {
    lmi.add_constant(blk, i, i, 1.0);
    lmi.add_coefficient(t, blk, i, i, -1.0);
  }
  lmi.set_objective(t, 1.0);
  auto r = lmi.solve_objective();
  ASSERT_EQ(r.solution.status, SdpStatus::optimal);
  EXPECT_NEAR(r.values(t), 1.0, 1e-7);
}

TEST(Solve, RandomProblemsMatchConstructedOptimum) {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<int> dims;
    const int nblocks = 1 + trial % 3;
    for (int b = 0; b < nblocks; ++b) dims.push_back(2 + (trial * 3 + b) % 4);
    int svec = 0;
    for (int d : dims) svec += d * (d + 1) / 2;
    const int m = std::min(15, std::max(1, svec - 2 - trial % 4));
    auto k = known_optimum_problem(gen, dims, m);
    auto sol = solve(k.problem);
    ASSERT_EQ(sol.status, SdpStatus::optimal) << "trial " << trial;
    EXPECT_NEAR(sol.objective_value, k.optimum, 1e-6 * (1 + std::abs(k.optimum))) << "trial " << trial;
    // Weak duality: the reported objective lies between dual and primal values.
    EXPECT_LE(sol.dual_objective, sol.primal_objective + 1e-8 * (1 + std::abs(k.optimum)));
    for (const auto& x : sol.primal_blocks) {
      Eigen::SelfAdjointEigenSolver<RealMatrix> es(x);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9);
    }
  }
}

TEST(Solve, ScalingRhsScalesOptimumOfHomogeneousObjective) {
  std::mt19937_64 gen(99);
  for (int trial = 0; trial < 10; ++trial) {
    auto k = known_optimum_problem(gen, {3, 2}, 5);
    const double s = 0.25 + trial;
    SdpProblem scaled = k.problem;
    for (auto& c : scaled.constraints) c.rhs *= s;
    auto a = solve(k.problem);
    auto b = solve(scaled);
    ASSERT_EQ(a.status, SdpStatus::optimal);
    ASSERT_EQ(b.status, SdpStatus::optimal);
    EXPECT_NEAR(b.objective_value, s * a.objective_value, 1e-6 * (1 + std::abs(s * a.objective_value)));
  }
}

TEST(Solve, DeterministicBitIdentical) {
  std::mt19937_64 gen(5);
  auto k = known_optimum_problem(gen, {4, 3}, 6);
  auto a = solve(k.problem);
  auto b = solve(k.problem);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.objective_value, b.objective_value);
  ASSERT_EQ(a.dual_vector.size(), b.dual_vector.size());
  for (long i = 0; i < a.dual_vector.size(); ++i) EXPECT_EQ(a.dual_vector(i), b.dual_vector(i));
  for (std::size_t blk = 0; blk < a.primal_blocks.size(); ++blk)
    EXPECT_TRUE((a.primal_blocks[blk].array() == b.primal_blocks[blk].array()).all());
}

TEST(Solve, DependentConsistentRowsAreDropped) {
  SdpProblem p;
  p.block_dims = {2};
  p.objective.add(0, 0, 0, 1.0);
  p.objective.add(0, 1, 1, 2.0);
  Constraint tr;
  tr.matrix.add(0, 0, 0, 1.0);
  tr.matrix.add(0, 1, 1, 1.0);
  tr.rhs = 1.0;
  Constraint twice = tr;
  for (auto& e : twice.matrix.entries) e.value *= 2;
  twice.rhs = 2.0;
  p.constraints = {tr, twice};
  auto sol = solve(p);
  ASSERT_EQ(sol.status, SdpStatus::optimal);
  EXPECT_NEAR(sol.objective_value, 1.0, 1e-7);
}

TEST(Solve, DependentInconsistentRowsThrow) {
  SdpProblem p;
  p.block_dims = {2};
  Constraint tr;
  tr.matrix.add(0, 0, 0, 1.0);
  tr.matrix.add(0, 1, 1, 1.0);
  tr.rhs = 1.0;
  Constraint other = tr;
  other.rhs = 3.0;
  p.constraints = {tr, other};
  EXPECT_THROW(solve(p), std::domain_error);
}

TEST(Solve, GramDependencyRouteMatchesQr) {
  // Three rows, the middle one a combination of the others, with rhs consistent.
  SdpProblem p;
  p.block_dims = {3};
  p.objective.add(0, 0, 0, 1.0);
  p.objective.add(0, 1, 1, 2.0);
  p.objective.add(0, 2, 2, 3.0);
  Constraint tr;
  for (int i = 0; i < 3; ++i) tr.matrix.add(0, i, i, 1.0);
  tr.rhs = 1.0;
  Constraint off;
  off.matrix.add(0, 0, 1, 0.5);
  off.matrix.add(0, 2, 2, 1.0);
  off.rhs = 0.1;
  Constraint combo;
  for (int i = 0; i < 3; ++i) combo.matrix.add(0, i, i, 4.0);
  combo.matrix.add(0, 0, 1, -1.5);
  combo.matrix.add(0, 2, 2, -3.0);
  combo.rhs = 4.0 - 0.3;
  p.constraints = {tr, combo, off};
  SolverOptions qr_opt;
  SolverOptions gram_opt;
  gram_opt.max_dense_dependency_entries = 0;
  auto a = solve(p, qr_opt);
  auto b = solve(p, gram_opt);
  ASSERT_EQ(a.status, SdpStatus::optimal);
  ASSERT_EQ(b.status, SdpStatus::optimal);
  EXPECT_NEAR(a.objective_value, b.objective_value, 1e-8);

  p.constraints[1].rhs += 0.5;
  EXPECT_THROW(solve(p, qr_opt), std::domain_error);
  EXPECT_THROW(solve(p, gram_opt), std::domain_error);
}

TEST(Solve, PrimalInfeasibleYieldsCertificate) {
  // X >= 0 with tr X = -1 has no solution.
  SdpProblem p;
  p.block_dims = {2};
  p.objective.add(0, 0, 0, 1.0);
  Constraint tr;
  tr.matrix.add(0, 0, 0, 1.0);
  tr.matrix.add(0, 1, 1, 1.0);
  tr.rhs = -1.0;
  p.constraints = {tr};
  auto sol = solve(p);
  EXPECT_EQ(sol.status, SdpStatus::infeasible_certificate);
  EXPECT_TRUE(sol.primal_infeasible);
}

TEST(Solve, InvalidEntriesRejected) {
  SdpProblem p;
  p.block_dims = {2};
  p.objective.entries.push_back({0, 0, 5, 1.0});
  EXPECT_THROW(solve(p), std::invalid_argument);
}

SdpProblem force_block(const RealMatrix& target) {
  SdpProblem p;
  const int n = static_cast<int>(target.rows());
  p.block_dims = {n};
  for (int r = 0; r < n; ++r)
    for (int c = r; c < n; ++c) {
      Constraint con;
      con.matrix.add(0, r, c, r == c ? 1.0 : 0.5);
      con.rhs = target(r, c);
      p.constraints.push_back(con);
    }
  return p;
}

TEST(FeasibilityMargin, ForcedMaximallyMixedBlock) {
  for (int n = 2; n <= 5; ++n) {
    auto r = feasibility_margin(force_block(RealMatrix::Identity(n, n) / n), {0});
    ASSERT_EQ(r.witness.status, SdpStatus::optimal);
    EXPECT_NEAR(r.margin, 1.0 / n, 1e-7);
  }
}

TEST(FeasibilityMargin, ImpossibleAssignmentIsNegative) {
  RealMatrix target = RealMatrix::Zero(2, 2);
  target(0, 0) = 1.0;
  target(1, 1) = -1.0;
  auto r = feasibility_margin(force_block(target), {0});
  EXPECT_LT(r.margin, -kMarginBand);
  EXPECT_NEAR(r.margin, -1.0, 1e-7);
}

TEST(FeasibilityMargin, RequiresSlackBlocks) {
  EXPECT_THROW(feasibility_margin(force_block(RealMatrix::Identity(2, 2)), {}), std::invalid_argument);
}

// Two 2x2 blocks (6 svec coordinates) cut by a trace normalization and three
// random equalities leave a 2-parameter affine family; the oracle scans it.
struct ToyProblem {
  SdpProblem problem;
  RealVector x0;    // particular solution (svec coordinates)
  RealMatrix null;  // 6 x 2 null-space basis
};

RealMatrix unsvec2(const RealVector& v, int offset) {
  RealMatrix m(2, 2);
  m(0, 0) = v(offset);
  m(0, 1) = m(1, 0) = v(offset + 1);
  m(1, 1) = v(offset + 2);
  return m;
}

ToyProblem toy_problem(std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  ToyProblem t;
  t.problem.block_dims = {2, 2};
  RealMatrix rows(4, 6);
  RealVector rhs(4);
  // Coordinates: (x00, x01, x11) per block; <A,X> = a00 x00 + 2 a01 x01 + a11 x11.
  rows.row(0) << 1, 0, 1, 1, 0, 1;
  rhs(0) = 1.0;
  for (int i = 1; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) rows(i, j) = nd(gen);
    rhs(i) = 0.3 * nd(gen);
  }
  for (int i = 0; i < 4; ++i) {
    Constraint c;
    for (int b = 0; b < 2; ++b) {
      c.matrix.add(b, 0, 0, rows(i, 3 * b));
      c.matrix.add(b, 0, 1, rows(i, 3 * b + 1) / 2.0);
      c.matrix.add(b, 1, 1, rows(i, 3 * b + 2));
    }
    c.rhs = rhs(i);
    t.problem.constraints.push_back(c);
  }
  Eigen::FullPivLU<RealMatrix> lu(rows);
  t.x0 = rows.completeOrthogonalDecomposition().solve(rhs);
  t.null = lu.kernel();
  return t;
}

double oracle_margin(const ToyProblem& t) {
  auto value = [&](double s, double r) {
    RealVector v = t.x0 + s * t.null.col(0) + r * t.null.col(1);
    double lmin = 1e300;
    for (int b = 0; b < 2; ++b) {
      Eigen::SelfAdjointEigenSolver<RealMatrix> es(unsvec2(v, 3 * b), Eigen::EigenvaluesOnly);
      lmin = std::min(lmin, es.eigenvalues().minCoeff());
    }
    return lmin;
  };
  // Coarse scan then successive zooming around the best grid point.
  double best = -1e300, bs = 0, br = 0, half = 20.0;
  for (int level = 0; level < 12; ++level) {
    const int g = 40;
    double cs = bs, cr = br;
    for (int i = 0; i <= g; ++i)
      for (int j = 0; j <= g; ++j) {
        const double s = cs - half + 2 * half * i / g;
        const double r = cr - half + 2 * half * j / g;
        const double v = value(s, r);
        if (v > best) best = v, bs = s, br = r;
      }
    half *= 0.25;
  }
  return best;
}

TEST(FeasibilityMargin, SignAgreesWithBruteForceScan) {
  std::mt19937_64 gen(31337);
  int decided = 0;
  for (int trial = 0; trial < 30; ++trial) {
    ToyProblem t = toy_problem(gen);
    if (t.null.cols() != 2) continue;
    const double oracle = oracle_margin(t);
    auto r = feasibility_margin(t.problem, {0, 1});
    if (r.witness.status != SdpStatus::optimal) continue;
    EXPECT_NEAR(r.margin, oracle, 1e-4 * (1 + std::abs(oracle))) << "trial " << trial;
    if (std::abs(oracle) > 1e-3) {
      EXPECT_EQ(r.margin > 0, oracle > 0) << "trial " << trial;
      ++decided;
    }
  }
  EXPECT_GE(decided, 15);
}

TEST(FeasibilityMargin, AddingEqualityNeverIncreasesMargin) {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 15; ++trial) {
    SdpProblem p;
    p.block_dims = {3, 2};
    Constraint tr;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < p.block_dims[b]; ++i) tr.matrix.add(b, i, i, 1.0);
    tr.rhs = 1.0;
    p.constraints.push_back(tr);
    const int extra = 1 + trial % 3;
    for (int i = 0; i <= extra; ++i) {
      Constraint c;
      for (int b = 0; b < 2; ++b) {
        RealMatrix a = random_symmetric(gen, p.block_dims[b]);
        for (auto e : dense_to_sparse(b, a).entries) c.matrix.entries.push_back(e);
      }
      c.rhs = 0.1 * nd(gen);
      p.constraints.push_back(c);
    }
    SdpProblem smaller = p;
    smaller.constraints.pop_back();
    auto big = feasibility_margin(p, {0, 1});
    auto small = feasibility_margin(smaller, {0, 1});
    ASSERT_EQ(small.witness.status, SdpStatus::optimal);
    if (big.witness.status == SdpStatus::optimal) EXPECT_LE(big.margin, small.margin + 1e-7);
  }
}

TEST(Lmi, ComplexHermitianEigenvalueOracle) {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 9;
    ComplexMatrix h = testing::random_hermitian(gen, n);
    LmiProblem lmi;
    int blk = lmi.add_block(n, true, true);
    for (int r = 0; r < n; ++r)
      for (int c = r; c < n; ++c) lmi.add_constant(blk, r, c, h(r, c));
    auto res = lmi.solve_margin();
    ASSERT_EQ(res.solution.status, SdpStatus::optimal);
    EXPECT_NEAR(res.margin, min_eigenvalue(h), 1e-7);
  }
}

TEST(Lmi, EqualitiesAreEnforced) {
  // max t: diag(y0, y1) - t I >= 0 with y0 + y1 = 1 and y0 - y1 = 0.5 -> t = 0.25
  LmiProblem lmi;
  int blk = lmi.add_block(2, false, true);
  int y0 = lmi.add_variable(), y1 = lmi.add_variable();
  lmi.add_coefficient(y0, blk, 0, 0, 1.0);
  lmi.add_coefficient(y1, blk, 1, 1, 1.0);
  lmi.add_equality({{y0, 1.0}, {y1, 1.0}}, 1.0);
  lmi.add_equality({{y0, 1.0}, {y1, -1.0}}, 0.5);
  lmi.add_equality({{y0, 2.0}, {y1, 2.0}}, 2.0);  // redundant
  auto res = lmi.solve_margin();
  ASSERT_EQ(res.solution.status, SdpStatus::optimal);
  EXPECT_NEAR(res.margin, 0.25, 1e-7);
  EXPECT_NEAR(res.values(y0), 0.75, 1e-6);
}

TEST(SdpaExport, SparseFormatLayout) {
  SdpProblem p;
  p.block_dims = {2, 1};
  p.objective.add(0, 0, 0, 1.0);
  p.objective.add(0, 1, 0, 0.5);  // lower entry normalized to the upper triangle
  Constraint c;
  c.matrix.add(0, 0, 0, 1.0);
  c.matrix.add(0, 1, 1, 1.0);
  c.matrix.add(1, 0, 0, 2.0);
  c.rhs = 1.0;
  p.constraints.push_back(c);
  std::ostringstream os;
  write_sdpa(p, os);
  const std::string expected =
      "\"schmidt_scope SDPA sparse export\n"
      "1\n"
      "2\n"
      "2 1\n"
      "1\n"
      "0 1 1 1 -1\n"
      "0 1 1 2 -0.5\n"
      "1 1 1 1 1\n"
      "1 1 2 2 1\n"
      "1 2 1 1 2\n";
  EXPECT_EQ(os.str(), expected);
}

}  // namespace
}  // namespace schmidt_scope::sdp
