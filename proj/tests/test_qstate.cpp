#include <gtest/gtest.h>

#include <sstream>

#include "schmidt_scope/qstate.hpp"
#include "test_util.hpp"

namespace schmidt_scope {
namespace {

double ppt_min(const BipartiteState& s) {
  return min_eigenvalue(partial_transpose(s.rho, s.layout(), Side::right), 1e-9);
}

TEST(Rng, SameSeedAndStreamReproduce) {
  RngStream a(42, 7), b(42, 7), c(42, 8), e(43, 7);
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    EXPECT_NE(x, c.normal());
    EXPECT_NE(x, e.normal());
  }
}

TEST(Rng, UniformRangeAndNormalMoments) {
  RngStream r(1, 0);
  double sum = 0, sum2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double z = r.normal();
    sum += z;
    sum2 += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sum2 / n, 1.0, 0.01);
}

TEST(Rng, NormalConsumesTwoUniforms) {
  RngStream a(9, 3), b(9, 3);
  a.normal();
  b.uniform();
  b.uniform();
  EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Schmidt, MaximallyEntangledTwo) {
  auto d = schmidt_decompose(maximally_entangled(2));
  EXPECT_NEAR(d.spectrum.lambdas[0], 0.5, 1e-12);
  EXPECT_NEAR(d.spectrum.lambdas[1], 0.5, 1e-12);
}

TEST(Schmidt, ProductState) {
  auto d = schmidt_decompose(basis_state(0, 0, 3, 3));
  EXPECT_NEAR(d.spectrum.lambdas[0], 1.0, 1e-12);
  for (std::size_t i = 1; i < d.spectrum.lambdas.size(); ++i) EXPECT_NEAR(d.spectrum.lambdas[i], 0.0, 1e-12);
  EXPECT_EQ(d.spectrum.rank(), 1);
}

TEST(Schmidt, ActivationComponentPhiOne) {
  ComplexVector v = ComplexVector::Zero(9);
  v(1 * 3 + 1) = 0.628;
  v(2 * 3 + 2) = -0.778;
  auto d = schmidt_decompose(make_pure(v, 3, 3));
  // Squared printed coefficients, up to the renormalization of the vector.
  EXPECT_NEAR(d.spectrum.lambdas[0], 0.778 * 0.778, 1e-3);
  EXPECT_NEAR(d.spectrum.lambdas[1], 0.628 * 0.628, 1e-3);
  const double n2 = 0.628 * 0.628 + 0.778 * 0.778;
  EXPECT_NEAR(d.spectrum.lambdas[0], 0.778 * 0.778 / n2, 1e-12);
}

TEST(Schmidt, SpectrumSumsToOneAndReconstructs) {
  for (int t = 0; t < 50; ++t) {
    RngStream r(5, t);
    const int da = 1 + t % 4, db = 1 + (t / 4) % 4;
    auto psi = sample_haar_pure(da, db, r);
    auto d = schmidt_decompose(psi);
    double s = 0;
    for (std::size_t i = 0; i < d.spectrum.lambdas.size(); ++i) {
      s += d.spectrum.lambdas[i];
      EXPECT_GE(d.spectrum.lambdas[i], 0.0);
      if (i > 0) EXPECT_LE(d.spectrum.lambdas[i], d.spectrum.lambdas[i - 1]);
    }
    EXPECT_NEAR(s, 1.0, 1e-10);
    ComplexVector rebuilt = ComplexVector::Zero(psi.amplitudes.size());
    for (std::size_t j = 0; j < d.spectrum.lambdas.size(); ++j)
      rebuilt += std::sqrt(d.spectrum.lambdas[j]) *
                 kron(ComplexVector(d.left.col(j)), ComplexVector(d.right.col(j)));
    EXPECT_LT((rebuilt - psi.amplitudes).norm(), 1e-9);
  }
}

class SamplerTest : public ::testing::TestWithParam<Measure> {};

TEST_P(SamplerTest, OutputsAreValidStates) {
  for (int d = 2; d <= 5; ++d) {
    const int draws = d <= 3 ? 2500 : 500;
    for (int i = 0; i < draws; ++i) {
      RngStream r(11, static_cast<std::uint64_t>(d * 100000 + i));
      auto s = sample_state(GetParam(), d, r);
      ASSERT_NO_THROW(s.validate()) << "d=" << d << " i=" << i;
      ASSERT_EQ(s.d_a, d);
    }
  }
}

TEST_P(SamplerTest, FixedSeedIsDeterministic) {
  RngStream a(42, 0), b(42, 0);
  auto x = sample_state(GetParam(), 3, a);
  auto y = sample_state(GetParam(), 3, b);
  EXPECT_TRUE((x.rho.array() == y.rho.array()).all());
}

INSTANTIATE_TEST_SUITE_P(All, SamplerTest,
                         ::testing::Values(Measure::hs, Measure::bures, Measure::real),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Samplers, RealStatesHaveNoImaginaryPart) {
  for (int i = 0; i < 100; ++i) {
    RngStream r(3, i);
    auto s = sample_real(3, r);
    EXPECT_EQ(s.rho.imag().cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Samplers, HaarUnitaryIsUnitary) {
  for (int n = 1; n <= 25; n += 3) {
    RngStream r(8, n);
    ComplexMatrix u = haar_unitary(n, r);
    EXPECT_LT(testing::max_abs_diff(u.adjoint() * u, identity(n)), 1e-10);
  }
}

TEST(Samplers, HaarUnitaryPhasesAreUniform) {
  // For a Haar unitary, E[U_00] = 0 and E[|U_00|^2] = 1/n; the uncorrected QR
  // construction has a biased diagonal.
  const int n = 3, draws = 20000;
  cplx mean = 0;
  double second = 0;
  for (int i = 0; i < draws; ++i) {
    RngStream r(77, i);
    ComplexMatrix u = haar_unitary(n, r);
    mean += u(0, 0);
    second += std::norm(u(0, 0));
  }
  EXPECT_LT(std::abs(mean / static_cast<double>(draws)), 0.02);
  EXPECT_NEAR(second / draws, 1.0 / n, 0.01);
}

TEST(Samplers, HaarPureNormAndMeanLargestCoefficient) {
  for (int d = 2; d <= 5; ++d) {
    double mean = 0;
    const int draws = 500;
    for (int i = 0; i < draws; ++i) {
      RngStream r(21, d * 1000 + i);
      auto psi = sample_haar_pure(d, d, r);
      EXPECT_NEAR(psi.amplitudes.norm(), 1.0, 1e-12);
      mean += schmidt_decompose(psi).spectrum.lambdas[0];
    }
    mean /= draws;
    EXPECT_GT(mean, 1.0 / d);
    EXPECT_LT(mean, 1.0);
  }
}

TEST(Samplers, PptFractionTwoQubitsHilbertSchmidt) {
  int ppt = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    RngStream r(2024, i);
    if (ppt_min(sample_hs(2, r)) > 0) ++ppt;
  }
  EXPECT_NEAR(100.0 * ppt / draws, 24.2, 1.5);
}

TEST(Samplers, PptFractionTwoQubitsBures) {
  int ppt = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    RngStream r(2024, i);
    if (ppt_min(sample_bures(2, r)) > 0) ++ppt;
  }
  EXPECT_NEAR(100.0 * ppt / draws, 7.4, 1.0);
}

TEST(NoisyState, Endpoints) {
  auto psi = maximally_entangled(2, 3, 3);
  EXPECT_LT(testing::max_abs_diff(noisy_state(psi, 0.0).rho, projector(psi.amplitudes)), 1e-15);
  EXPECT_LT(testing::max_abs_diff(noisy_state(psi, 1.0).rho, identity(9) / 9.0), 1e-15);
}

TEST(NoisyState, PptBoundaryAtTwoThirds) {
  // Analytic minimum eigenvalue of the partial transpose: p/d^2 - (1-p)/2.
  for (double p : {0.0, 0.3, 2.0 / 3.0, 0.9}) {
    auto s = noisy_state(maximally_entangled(2), p);
    EXPECT_NEAR(ppt_min(s), p / 4 - (1 - p) / 2, 1e-12);
  }
  EXPECT_NEAR(ppt_min(noisy_state(maximally_entangled(2), 2.0 / 3.0)), 0.0, 1e-12);
}

TEST(NoisyState, AffineInP) {
  RngStream r(4, 4);
  auto psi = sample_haar_pure(3, 3, r);
  auto s0 = noisy_state(psi, 0.0), s1 = noisy_state(psi, 1.0);
  for (double p : {0.1, 0.5, 0.77}) {
    ComplexMatrix lin = p * s1.rho + (1 - p) * s0.rho;
    EXPECT_LT(testing::max_abs_diff(noisy_state(psi, p).rho, lin), 1e-14);
  }
}

TEST(NoisyState, RejectsOutOfRange) {
  EXPECT_THROW(noisy_state(maximally_entangled(2), -0.1), std::invalid_argument);
  EXPECT_THROW(noisy_state(maximally_entangled(2), 1.1), std::invalid_argument);
}

TEST(Embed, SpectrumPaddedAndNormKept) {
  auto e = embed(maximally_entangled(2), 3, 3);
  EXPECT_NEAR(e.amplitudes.norm(), 1.0, 1e-15);
  auto sp = schmidt_decompose(e).spectrum.lambdas;
  ASSERT_EQ(sp.size(), 3u);
  EXPECT_NEAR(sp[0], 0.5, 1e-12);
  EXPECT_NEAR(sp[1], 0.5, 1e-12);
  EXPECT_NEAR(sp[2], 0.0, 1e-12);
  EXPECT_EQ(schmidt_decompose(embed(basis_state(0, 0, 2, 2), 5, 5)).spectrum.rank(), 1);
  EXPECT_THROW(embed(maximally_entangled(3), 2, 3), std::invalid_argument);
}

TEST(Embed, RandomSpectraPreserved) {
  for (int t = 0; t < 20; ++t) {
    RngStream r(6, t);
    auto psi = sample_haar_pure(2, 3, r);
    auto a = schmidt_decompose(psi).spectrum.lambdas;
    auto b = schmidt_decompose(embed(psi, 4, 5)).spectrum.lambdas;
    for (std::size_t i = 0; i < b.size(); ++i)
      EXPECT_NEAR(b[i], i < a.size() ? a[i] : 0.0, 1e-12);
  }
}

TEST(TensorPower, OneIsIdentity) {
  RngStream r(1, 1);
  auto s = sample_hs(2, r);
  auto t = tensor_power_bipartite(s, 1);
  EXPECT_EQ(t.d_a, 2);
  EXPECT_LT(testing::max_abs_diff(t.rho, s.rho), 0.0 + 1e-300);
}

TEST(TensorPower, ProductFactorization) {
  std::mt19937_64 gen(3);
  ComplexMatrix sa = testing::random_psd(gen, 2), sb = testing::random_psd(gen, 3);
  sa /= sa.trace();
  sb /= sb.trace();
  BipartiteState s{kron(sa, sb), 2, 3};
  auto t = tensor_power_bipartite(s, 2);
  EXPECT_EQ(t.d_a, 4);
  EXPECT_EQ(t.d_b, 9);
  EXPECT_LT(testing::max_abs_diff(t.rho, kron(kron(sa, sa), kron(sb, sb))), 1e-14);
}

TEST(TensorPower, MarginalsAndSpectrum) {
  RngStream r(12, 0);
  auto s = sample_hs(2, r);
  auto t = tensor_power_bipartite(s, 2);
  ASSERT_NO_THROW(t.validate());
  ComplexMatrix ra = marginal_a(s);
  EXPECT_LT(testing::max_abs_diff(marginal_a(t), kron(ra, ra)), 1e-14);
  RealVector ev = hermitian_eigenvalues(s.rho);
  std::vector<double> prods;
  for (long i = 0; i < ev.size(); ++i)
    for (long j = 0; j < ev.size(); ++j) prods.push_back(ev(i) * ev(j));
  std::sort(prods.rbegin(), prods.rend());
  RealVector et = hermitian_eigenvalues(t.rho);
  for (long i = 0; i < et.size(); ++i) EXPECT_NEAR(et(i), prods[i], 1e-12);
}

TEST(TensorPower, RegroupingMatchesExplicitIndexMap) {
  // <a1 a2 b1 b2| T |a1' a2' b1' b2'> = rho(a1 b1, a1' b1') rho(a2 b2, a2' b2').
  RngStream r(13, 0);
  auto s = sample_hs(2, r);
  auto t = tensor_power_bipartite(s, 2);
  auto idx = [](int a1, int a2, int b1, int b2) { return ((a1 * 2 + a2) * 2 + b1) * 2 + b2; };
  for (int x = 0; x < 16; ++x)
    for (int y = 0; y < 16; ++y) {
      int a1 = x >> 3 & 1, a2 = x >> 2 & 1, b1 = x >> 1 & 1, b2 = x & 1;
      int c1 = y >> 3 & 1, c2 = y >> 2 & 1, e1 = y >> 1 & 1, e2 = y & 1;
      cplx expect = s.rho(a1 * 2 + b1, c1 * 2 + e1) * s.rho(a2 * 2 + b2, c2 * 2 + e2);
      EXPECT_LT(std::abs(t.rho(idx(a1, a2, b1, b2), idx(c1, c2, e1, e2)) - expect), 1e-15);
    }
}

TEST(Mix, SingleAndEqualMixtures) {
  auto s = maximally_mixed(2, 2);
  EXPECT_LT(testing::max_abs_diff(mix({{1.0, s}}).rho, s.rho), 1e-15);
  auto m = mix({{0.5, projector_state(basis_state(0, 0, 2, 2))},
                {0.5, projector_state(basis_state(1, 1, 2, 2))}});
  ComplexMatrix expect = ComplexMatrix::Zero(4, 4);
  expect(0, 0) = 0.5;
  expect(3, 3) = 0.5;
  EXPECT_LT(testing::max_abs_diff(m.rho, expect), 1e-15);
  EXPECT_THROW(mix({{0.6, s}, {0.6, s}}), std::invalid_argument);
  EXPECT_THROW(mix({{-0.5, s}, {1.5, s}}), std::invalid_argument);
}

TEST(Mix, ActivationStateFloor) {
  ComplexVector v1 = ComplexVector::Zero(9), v2 = ComplexVector::Zero(9);
  v1(4) = 0.628;
  v1(8) = -0.778;
  const double c2[9] = {0, 0.807, -0.185, -0.102, -0.027, 0.011, 0.551, -0.024, -0.022};
  for (int i = 0; i < 9; ++i) v2(i) = c2[i];
  auto rho = mix({{0.999 * 0.50179, projector_state(make_pure(v1, 3, 3))},
                  {0.999 * 0.49821, projector_state(make_pure(v2, 3, 3))},
                  {0.001, maximally_mixed(3, 3)}});
  EXPECT_NEAR(rho.rho.trace().real(), 1.0, 1e-12);
  EXPECT_GE(min_eigenvalue(rho.rho), 0.001 / 9 - 1e-12);
}

TEST(Constructive, SchmidtRankMixturesAreValid) {
  for (int t = 0; t < 20; ++t) {
    RngStream r(14, t);
    auto psi = random_schmidt_rank_pure(3, 3, 2, r);
    EXPECT_LE(schmidt_decompose(psi).spectrum.rank(1e-20), 2);
    auto s = random_schmidt_rank_mixture(3, 3, 2, 10, r);
    EXPECT_NO_THROW(s.validate());
    auto sep = random_separable_mixture(3, 3, 10, r);
    EXPECT_GE(ppt_min(sep), -1e-12);
  }
}

TEST(StateJson, RoundTrip) {
  RngStream r(15, 0);
  auto s = sample_bures(2, r);
  std::stringstream ss;
  write_state(s, ss);
  auto back = read_state(ss);
  EXPECT_EQ(back.d_a, 2);
  EXPECT_TRUE((back.rho.array() == s.rho.array()).all());
}

std::string violated(const std::string& text) {
  std::istringstream is(text);
  try {
    read_state(is);
  } catch (const InvariantViolation& e) {
    return e.invariant();
  }
  return "";
}

TEST(StateJson, DiagnosticsNameTheInvariant) {
  EXPECT_EQ(violated("{"), "format");
  EXPECT_EQ(violated(R"({"d_a":1,"d_b":1})"), "format");
  EXPECT_EQ(violated(R"({"d_a":1,"d_b":2,"re":[[1]]})"), "shape");
  EXPECT_EQ(violated(R"({"d_a":1,"d_b":2,"re":[[1,0],[1,0]]})"), "hermitian");
  EXPECT_EQ(violated(R"({"d_a":1,"d_b":2,"re":[[1,0],[0,1]]})"), "unit_trace");
  EXPECT_EQ(violated(R"({"d_a":1,"d_b":2,"re":[[1.5,0],[0,-0.5]]})"), "positive_semidefinite");
  EXPECT_EQ(violated(R"({"d_a":0,"d_b":2,"re":[]})"), "dimensions");
  EXPECT_EQ(violated(R"({"d_a":1,"d_b":2,"re":[[0.5,0],[0,0.5]],"im":[[0,0.1],[-0.1,0]]})"), "");
}

}  // namespace
}  // namespace schmidt_scope
