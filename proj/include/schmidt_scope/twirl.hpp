// twirl.hpp
// Commutants of U^{(x)n}-type representations with some factors conjugated,
// and numerical block diagonalization of the resulting matrix *-algebras.
// Used to symmetry-reduce the ancilla part of the Schmidt-number hierarchy.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "schmidt_scope/hermlin.hpp"

namespace schmidt_scope {

/// P|i_0 ... i_{n-1}> = |i_{perm[0]} ... i_{perm[n-1]}> on (C^D)^{(x)n}.
inline ComplexMatrix permutation_operator(int D, const std::vector<int>& perm) {
  const int n = static_cast<int>(perm.size());
  const std::vector<int> dims(n, D);
  long size = 1;
  for (int i = 0; i < n; ++i) size *= D;
  ComplexMatrix p = ComplexMatrix::Zero(size, size);
  std::vector<int> in, out(n);
  for (long c = 0; c < size; ++c) {
    detail::split_index(c, dims, in);
    for (int i = 0; i < n; ++i) out[i] = in[perm[i]];
    p(detail::join_index(out, dims), c) = 1.0;
  }
  return p;
}

/// Transpose on every factor f with which[f] set.
inline ComplexMatrix partial_transpose_factors(const ComplexMatrix& m, const std::vector<int>& dims,
                                               const std::vector<bool>& which) {
  ComplexMatrix out(m.rows(), m.cols());
  std::vector<int> rd, cd;
  for (long r = 0; r < m.rows(); ++r) {
    detail::split_index(r, dims, rd);
    for (long c = 0; c < m.cols(); ++c) {
      detail::split_index(c, dims, cd);
      std::vector<int> r2 = rd, c2 = cd;
      for (std::size_t f = 0; f < dims.size(); ++f)
        if (which[f]) std::swap(r2[f], c2[f]);
      out(detail::join_index(r2, dims), detail::join_index(c2, dims)) = m(r, c);
    }
  }
  return out;
}

/// Spanning set of the commutant of (x)_f V_f with V_f = conj(U) where
/// conj[f] and U otherwise: partial transposes on the conjugated factors of
/// the permutation operators (Schur-Weyl duality after transposition).
inline std::vector<ComplexMatrix> unitary_commutant_span(int D, const std::vector<bool>& conj) {
  const int n = static_cast<int>(conj.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  const std::vector<int> dims(n, D);
  std::vector<ComplexMatrix> span;
  do {
    span.push_back(partial_transpose_factors(permutation_operator(D, perm), dims, conj));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return span;
}

/// One isotypic component: `copies[t]` (n x dim) spans the t-th copy of the
/// irreducible representation, with bases aligned across copies so that
/// every algebra element X satisfies copies[t]^dag X copies[s] = x_ts I.
struct IrrepComponent {
  int dim = 0;
  std::vector<ComplexMatrix> copies;
  [[nodiscard]] int multiplicity() const { return static_cast<int>(copies.size()); }
};

/// Block diagonalization of the *-algebra spanned by `span` (closed under
/// adjoint, containing the identity). Eigenspaces of a generic Hermitian
/// element separate the copies; a generic element links copies of the same
/// irreducible component and aligns their bases.
inline std::vector<IrrepComponent> decompose_star_algebra(const std::vector<ComplexMatrix>& span,
                                                          std::uint64_t seed = 0x5eedULL) {
  if (span.empty()) throw std::invalid_argument("decompose_star_algebra: empty span");
  const long n = span[0].rows();
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  ComplexMatrix h = ComplexMatrix::Zero(n, n);
  auto generic = [&]() {
    ComplexMatrix g = ComplexMatrix::Zero(n, n);
    for (const auto& b : span) g += cplx(nd(gen), nd(gen)) * b;
    return g;
  };
  {
    ComplexMatrix g = generic();
    h = 0.5 * (g + g.adjoint());
  }
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h);
  const RealVector& ev = es.eigenvalues();
  const double tol = 1e-7 * (1.0 + ev.cwiseAbs().maxCoeff());

  std::vector<std::vector<long>> clusters;
  for (long i = 0; i < n; ++i) {
    if (clusters.empty() || ev(i) - ev(clusters.back().back()) > tol) clusters.emplace_back();
    clusters.back().push_back(i);
  }
  const int nc = static_cast<int>(clusters.size());
  std::vector<ComplexMatrix> basis(nc);
  for (int a = 0; a < nc; ++a) {
    basis[a].resize(n, static_cast<long>(clusters[a].size()));
    for (std::size_t j = 0; j < clusters[a].size(); ++j) basis[a].col(static_cast<long>(j)) = es.eigenvectors().col(clusters[a][j]);
  }

  const ComplexMatrix link = generic();
  std::vector<int> owner(nc, -1);
  std::vector<IrrepComponent> out;
  for (int a = 0; a < nc; ++a) {
    if (owner[a] >= 0) continue;
    owner[a] = static_cast<int>(out.size());
    IrrepComponent comp;
    comp.dim = static_cast<int>(basis[a].cols());
    comp.copies.push_back(basis[a]);
    for (int b = a + 1; b < nc; ++b) {
      if (owner[b] >= 0) continue;
      ComplexMatrix moved = basis[b] * (basis[b].adjoint() * link * basis[a]);
      const double scale = std::sqrt(moved.squaredNorm() / comp.dim);
      if (scale < 1e-6) continue;
      if (basis[b].cols() != comp.dim)
        throw std::runtime_error("decompose_star_algebra: inconsistent irreducible dimensions");
      moved /= scale;
      if ((moved.adjoint() * moved - ComplexMatrix::Identity(comp.dim, comp.dim)).norm() > 1e-6)
        throw std::runtime_error("decompose_star_algebra: copies could not be aligned");
      owner[b] = owner[a];
      comp.copies.push_back(moved);
    }
    out.push_back(std::move(comp));
  }
  return out;
}

/// Rotates the multiplicity basis: new copy s = sum_t r(t, s) copies[t].
inline IrrepComponent rotate_multiplicity(const IrrepComponent& c, const ComplexMatrix& r) {
  IrrepComponent out;
  out.dim = c.dim;
  for (long s = 0; s < r.cols(); ++s) {
    ComplexMatrix q = ComplexMatrix::Zero(c.copies[0].rows(), c.dim);
    for (int t = 0; t < c.multiplicity(); ++t) q += r(t, s) * c.copies[t];
    out.copies.push_back(q);
  }
  return out;
}

/// The algebra element x acting on component c, as a multiplicity-space
/// matrix: averaged over the irreducible basis.
inline ComplexMatrix multiplicity_matrix(const IrrepComponent& c, const ComplexMatrix& x) {
  const int m = c.multiplicity();
  ComplexMatrix out(m, m);
  for (int t = 0; t < m; ++t)
    for (int s = 0; s < m; ++s) out(t, s) = (c.copies[t].adjoint() * x * c.copies[s]).trace() / double(c.dim);
  return out;
}

}  // namespace schmidt_scope
