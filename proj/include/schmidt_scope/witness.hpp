// witness.hpp
// Search for pure-state fidelity witnesses W = F I - |psi><psi| violated by a
// given state. Maximizes <psi|rho|psi> - sum_{i<D} sigma_i(psi)^2 over unit
// vectors by projected gradient ascent with restarts.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

#include "schmidt_scope/criteria.hpp"
#include "schmidt_scope/hermlin.hpp"
#include "schmidt_scope/qstate.hpp"

namespace schmidt_scope {

inline constexpr int kDefaultWitnessRestarts = 64;
inline constexpr int kActivationWitnessRestarts = 512;

struct WitnessCandidate {
  PureBipartiteState psi;
  int D = 2;
  double violation = -1.0;
  int restarts_used = 0;
};

struct WitnessGradient {
  ComplexVector fidelity_term;  // 2 rho psi
  ComplexVector spectral_term;  // 2 sum_{i<D} sigma_i u_i v_i^dagger, vectorized
  [[nodiscard]] ComplexVector total() const { return fidelity_term - spectral_term; }
};

namespace detail {

inline ComplexMatrix as_coefficients(const ComplexVector& psi, int d_a, int d_b) {
  ComplexMatrix c(d_a, d_b);
  for (int i = 0; i < d_a; ++i)
    for (int j = 0; j < d_b; ++j) c(i, j) = psi(static_cast<long>(i) * d_b + j);
  return c;
}

inline ComplexVector as_vector(const ComplexMatrix& c) {
  ComplexVector v(c.size());
  for (long i = 0; i < c.rows(); ++i)
    for (long j = 0; j < c.cols(); ++j) v(i * c.cols() + j) = c(i, j);
  return v;
}

inline double spectral_term(const RealVector& sv, int D) {
  double s = 0;
  for (int i = 0; i < D - 1 && i < sv.size(); ++i) s += sv(i) * sv(i);
  return s;
}

// Unnormalized objective on C^{d_a d_b}; the search keeps psi on the sphere.
inline double witness_objective_raw(const ComplexMatrix& rho, const ComplexVector& psi, int d_a, int d_b, int D) {
  const double fid = psi.dot(rho * psi).real();
  const RealVector sv = as_coefficients(psi, d_a, d_b).jacobiSvd().singularValues();
  return fid - spectral_term(sv, D);
}

inline WitnessGradient witness_gradient_raw(const ComplexMatrix& rho, const ComplexVector& psi, int d_a, int d_b,
                                            int D, double degeneracy_tol = 1e-9) {
  WitnessGradient g;
  g.fidelity_term = 2.0 * (rho * psi);
  const SvdResult s = svd(as_coefficients(psi, d_a, d_b));
  const RealVector& sv = s.singular_values;
  const int r = static_cast<int>(sv.size());
  const int cut = std::min(D - 1, r);
  ComplexMatrix spec = ComplexMatrix::Zero(d_a, d_b);
  auto rank_one = [&](int i) { return ComplexMatrix(sv(i) * s.u.col(i) * s.v.col(i).adjoint()); };
  for (int i = 0; i < cut; ++i) spec += rank_one(i);
  if (cut > 0 && cut < r && sv(cut - 1) - sv(cut) <= degeneracy_tol) {
    // Degenerate at the cut: average over the tied singular subspace.
    int lo = cut - 1;
    while (lo > 0 && sv(lo - 1) - sv(cut - 1) <= degeneracy_tol) --lo;
    int hi = cut;
    while (hi + 1 < r && sv(cut - 1) - sv(hi + 1) <= degeneracy_tol) ++hi;
    ComplexMatrix group = ComplexMatrix::Zero(d_a, d_b);
    for (int i = lo; i <= hi; ++i) group += rank_one(i);
    for (int i = lo; i < cut; ++i) spec -= rank_one(i);
    spec += (static_cast<double>(cut - lo) / (hi - lo + 1)) * group;
  }
  g.spectral_term = 2.0 * as_vector(spec);
  return g;
}

// Projected-gradient ascent on the unit sphere with Armijo backtracking.
inline double ascend(const ComplexMatrix& rho, ComplexVector& psi, int d_a, int d_b, int D) {
  constexpr double kArmijo = 1e-4;
  constexpr double kShrink = 0.5;
  constexpr double kMinGain = 1e-10;
  constexpr int kMaxIterations = 500;
  psi.normalize();
  double f = witness_objective_raw(rho, psi, d_a, d_b, D);
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    ComplexVector grad = witness_gradient_raw(rho, psi, d_a, d_b, D).total();
    grad -= psi.dot(grad).real() * psi;  // tangent component
    const double gnorm2 = grad.squaredNorm();
    if (gnorm2 < 1e-24) break;
    double step = 1.0;
    bool accepted = false;
    ComplexVector trial;
    double ft = f;
    for (int bt = 0; bt < 60; ++bt) {
      trial = (psi + step * grad).normalized();
      ft = witness_objective_raw(rho, trial, d_a, d_b, D);
      if (ft >= f + kArmijo * step * gnorm2) {
        accepted = true;
        break;
      }
      step *= kShrink;
    }
    if (!accepted) break;
    const double gain = ft - f;
    psi = trial;
    f = ft;
    if (gain < kMinGain) break;
  }
  return f;
}

inline ComplexVector top_eigenvector(const ComplexMatrix& rho) {
  return hermitian_eig(rho).vectors.col(0);
}

inline ComplexVector restart_point(const BipartiteState& rho, int index, std::uint64_t seed,
                                   std::uint64_t stream) {
  if (index == 0) return top_eigenvector(rho.rho);
  if (index == 1) return maximally_entangled(std::min(rho.d_a, rho.d_b), rho.d_a, rho.d_b).amplitudes;
  RngStream child(seed, RngStream::derive_key(stream, static_cast<std::uint64_t>(index)));
  return sample_haar_pure(rho.d_a, rho.d_b, child).amplitudes;
}

}  // namespace detail

/// <psi|rho|psi> - sum_{i<D} lambda_i(psi) for a normalized psi.
inline double witness_objective(const BipartiteState& rho, const PureBipartiteState& psi, int D) {
  if (psi.d_a != rho.d_a || psi.d_b != rho.d_b)
    throw std::invalid_argument("witness_objective: dimension mismatch");
  return detail::witness_objective_raw(rho.rho, psi.amplitudes, rho.d_a, rho.d_b, D);
}

inline WitnessGradient witness_gradient(const ComplexMatrix& rho, const PureBipartiteState& psi, int D) {
  return detail::witness_gradient_raw(rho, psi.amplitudes, psi.d_a, psi.d_b, D);
}

/// Max relative deviation between the analytic gradient and central finite
/// differences (step 1e-5) along every real coordinate.
inline double gradient_check(const BipartiteState& rho, const PureBipartiteState& psi, int D) {
  if (psi.d_a != rho.d_a || psi.d_b != rho.d_b)
    throw std::invalid_argument("gradient_check: dimension mismatch");
  if (D < 2) throw std::invalid_argument("gradient_check: D must be >= 2");
  const auto& lam = schmidt_decompose(psi).spectrum.lambdas;
  const double above = D - 2 < static_cast<int>(lam.size()) ? lam[D - 2] : 0.0;
  const double below = D - 1 < static_cast<int>(lam.size()) ? lam[D - 1] : 0.0;
  if (above - below <= 1e-6)
    throw std::domain_error("gradient_check: Schmidt spectrum is degenerate at the cut");

  constexpr double h = 1e-5;
  const ComplexVector an = witness_gradient(rho.rho, psi, D).total();
  const long n = psi.amplitudes.size();
  double worst = 0;
  const double scale = std::max(1e-12, an.cwiseAbs().maxCoeff());
  for (long k = 0; k < n; ++k) {
    for (const cplx dir : {cplx(1, 0), cplx(0, 1)}) {
      ComplexVector plus = psi.amplitudes, minus = psi.amplitudes;
      plus(k) += h * dir;
      minus(k) -= h * dir;
      const double fd = (detail::witness_objective_raw(rho.rho, plus, psi.d_a, psi.d_b, D) -
                         detail::witness_objective_raw(rho.rho, minus, psi.d_a, psi.d_b, D)) /
                        (2 * h);
      const double analytic = (std::conj(dir) * an(k)).real();
      worst = std::max(worst, std::abs(fd - analytic) / scale);
    }
  }
  return worst;
}

/// Best candidate over `restarts` ascents: restart 0 starts at the top
/// eigenvector of rho, restart 1 at the maximally entangled state, the rest
/// at Haar-random states drawn from streams derived from `rng`. A positive
/// violation certifies that rho is D-faithful.
inline WitnessCandidate search_witness(const BipartiteState& rho, int D, int restarts, const RngStream& rng,
                                       int workers = 1) {
  if (D < 2) throw std::invalid_argument("search_witness: D must be >= 2");
  if (restarts < 1) throw std::invalid_argument("search_witness: restarts must be >= 1");
  rho.validate();
  std::vector<double> values(restarts);
  std::vector<ComplexVector> points(restarts);
  auto run = [&](int first, int stride) {
    for (int r = first; r < restarts; r += stride) {
      ComplexVector psi = detail::restart_point(rho, r, rng.seed(), rng.stream_index());
      values[r] = detail::ascend(rho.rho, psi, rho.d_a, rho.d_b, D);
      points[r] = std::move(psi);
    }
  };
  const int nthreads = std::clamp(workers, 1, restarts);
  if (nthreads == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(run, t, nthreads);
    for (auto& th : pool) th.join();
  }
  int best = 0;
  for (int r = 1; r < restarts; ++r)
    if (values[r] > values[best]) best = r;
  WitnessCandidate c{make_pure(points[best], rho.d_a, rho.d_b), D, 0.0, restarts};
  c.violation = witness_objective(rho, c.psi, D);
  return c;
}

/// The optimal fidelity witness for the candidate's target.
inline FidelityWitness to_witness(const WitnessCandidate& c) {
  const int D = std::min(c.D, std::min(c.psi.d_a, c.psi.d_b) + 1);
  return optimal_witness(c.psi, D);
}

}  // namespace schmidt_scope
