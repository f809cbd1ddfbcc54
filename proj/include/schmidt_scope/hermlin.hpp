// hermlin.hpp
// Dense complex linear algebra for bipartite operators: tensor products,
// partial trace/transpose over arbitrary subsystems, Hermitian spectra,
// symmetric-subspace isometries and the real embedding of Hermitian blocks.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace schmidt_scope {

using cplx = std::complex<double>;

// Row-major storage; the leftmost tensor factor is the slowest index.
using ComplexMatrix =
    Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline constexpr double kHermitianTolerance = 1e-12;

/// Ordered subsystem dimensions with a cut separating left | right parties.
struct BipartitionLayout {
  std::vector<int> dims;
  int cut = 1;

  static BipartitionLayout bipartite(int d_left, int d_right) {
    return BipartitionLayout{{d_left, d_right}, 1};
  }

  [[nodiscard]] long total() const {
    return std::accumulate(dims.begin(), dims.end(), 1L,
                           [](long acc, int d) { return acc * d; });
  }

  void validate(long matrix_dim) const {
    if (dims.empty()) throw std::invalid_argument("layout: empty dims");
    for (int d : dims)
      if (d < 1) throw std::invalid_argument("layout: dimension < 1");
    if (cut < 1 || cut >= static_cast<int>(dims.size()))
      throw std::invalid_argument("layout: cut must satisfy 1 <= cut < #dims");
    if (total() != matrix_dim)
      throw std::invalid_argument("layout: product of dims (" +
                                  std::to_string(total()) +
                                  ") != matrix dimension (" +
                                  std::to_string(matrix_dim) + ")");
  }
};

enum class Side { left, right };

inline bool is_hermitian(const ComplexMatrix& m,
                         double tol = kHermitianTolerance) {
  if (m.rows() != m.cols()) return false;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = r; c < m.cols(); ++c)
      if (std::abs(m(r, c) - std::conj(m(c, r))) > tol) return false;
  return true;
}

inline ComplexMatrix hermitian_part(const ComplexMatrix& m) {
  return (m + m.adjoint()) * 0.5;
}

inline ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b) {
  ComplexMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline ComplexVector kron(const ComplexVector& a, const ComplexVector& b) {
  ComplexVector out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

namespace detail {

// Mixed-radix digits of a composite index, most significant first.
inline void split_index(long index, const std::vector<int>& dims,
                        std::vector<int>& digits) {
  digits.resize(dims.size());
  for (int s = static_cast<int>(dims.size()) - 1; s >= 0; --s) {
    digits[s] = static_cast<int>(index % dims[s]);
    index /= dims[s];
  }
}

inline long join_index(const std::vector<int>& digits,
                       const std::vector<int>& dims) {
  long index = 0;
  for (std::size_t s = 0; s < dims.size(); ++s) index = index * dims[s] + digits[s];
  return index;
}

}  // namespace detail

/// Transposes the listed subsystems of a square operator on the tensor
/// product described by `dims`.
inline ComplexMatrix partial_transpose(const ComplexMatrix& m,
                                       const std::vector<int>& dims,
                                       const std::vector<int>& subsystems) {
  long n = std::accumulate(dims.begin(), dims.end(), 1L,
                           [](long acc, int d) { return acc * d; });
  if (m.rows() != n || m.cols() != n)
    throw std::invalid_argument("partial_transpose: dimension mismatch");
  std::vector<char> flip(dims.size(), 0);
  for (int s : subsystems) {
    if (s < 0 || s >= static_cast<int>(dims.size()))
      throw std::invalid_argument("partial_transpose: subsystem out of range");
    flip[s] = 1;
  }
  ComplexMatrix out(n, n);
  std::vector<int> rd, cd;
  for (long r = 0; r < n; ++r) {
    detail::split_index(r, dims, rd);
    for (long c = 0; c < n; ++c) {
      detail::split_index(c, dims, cd);
      for (std::size_t s = 0; s < dims.size(); ++s)
        if (flip[s]) std::swap(rd[s], cd[s]);
      out(detail::join_index(rd, dims), detail::join_index(cd, dims)) = m(r, c);
      for (std::size_t s = 0; s < dims.size(); ++s)
        if (flip[s]) std::swap(rd[s], cd[s]);
    }
  }
  return out;
}

inline ComplexMatrix partial_transpose(const ComplexMatrix& m,
                                       const BipartitionLayout& layout,
                                       Side side) {
  layout.validate(m.rows());
  std::vector<int> subs;
  const int n = static_cast<int>(layout.dims.size());
  for (int s = 0; s < n; ++s)
    if ((side == Side::left) == (s < layout.cut)) subs.push_back(s);
  return partial_transpose(m, layout.dims, subs);
}

/// Traces out every subsystem not listed in `keep` (kept order preserved).
inline ComplexMatrix partial_trace(const ComplexMatrix& m,
                                   const std::vector<int>& dims,
                                   const std::vector<int>& keep) {
  if (keep.empty()) throw std::invalid_argument("partial_trace: empty keep set");
  long n = std::accumulate(dims.begin(), dims.end(), 1L,
                           [](long acc, int d) { return acc * d; });
  if (m.rows() != n || m.cols() != n)
    throw std::invalid_argument("partial_trace: dimension mismatch");
  std::vector<char> kept(dims.size(), 0);
  for (int s : keep) {
    if (s < 0 || s >= static_cast<int>(dims.size()))
      throw std::invalid_argument("partial_trace: subsystem out of range");
    kept[s] = 1;
  }
  std::vector<int> kdims, tdims;
  for (std::size_t s = 0; s < dims.size(); ++s)
    (kept[s] ? kdims : tdims).push_back(dims[s]);
  long nk = std::accumulate(kdims.begin(), kdims.end(), 1L,
                            [](long acc, int d) { return acc * d; });
  long nt = n / nk;

  ComplexMatrix out = ComplexMatrix::Zero(nk, nk);
  std::vector<int> kd_r, kd_c, td, full(dims.size());
  auto compose = [&](const std::vector<int>& kd, const std::vector<int>& tdig) {
    std::size_t ik = 0, it = 0;
    for (std::size_t s = 0; s < dims.size(); ++s)
      full[s] = kept[s] ? kd[ik++] : tdig[it++];
    return detail::join_index(full, dims);
  };
  for (long r = 0; r < nk; ++r) {
    detail::split_index(r, kdims, kd_r);
    for (long c = 0; c < nk; ++c) {
      detail::split_index(c, kdims, kd_c);
      cplx acc = 0;
      for (long t = 0; t < nt; ++t) {
        if (tdims.empty()) {
          td.clear();
        } else {
          detail::split_index(t, tdims, td);
        }
        acc += m(compose(kd_r, td), compose(kd_c, td));
      }
      out(r, c) = acc;
    }
  }
  return out;
}

inline ComplexMatrix partial_trace(const ComplexMatrix& m,
                                   const BipartitionLayout& layout,
                                   Side keep_side) {
  layout.validate(m.rows());
  std::vector<int> keep;
  const int n = static_cast<int>(layout.dims.size());
  for (int s = 0; s < n; ++s)
    if ((keep_side == Side::left) == (s < layout.cut)) keep.push_back(s);
  return partial_trace(m, layout.dims, keep);
}

/// Reorders tensor factors: factor `perm[i]` of the input becomes factor i
/// of the output.
inline ComplexMatrix permute_subsystems(const ComplexMatrix& m,
                                        const std::vector<int>& dims,
                                        const std::vector<int>& perm) {
  const long n = std::accumulate(dims.begin(), dims.end(), 1L,
                                 [](long acc, int d) { return acc * d; });
  if (m.rows() != n || m.cols() != n)
    throw std::invalid_argument("permute_subsystems: dimension mismatch");
  if (perm.size() != dims.size())
    throw std::invalid_argument("permute_subsystems: permutation size mismatch");
  std::vector<int> check = perm;
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < check.size(); ++i)
    if (check[i] != static_cast<int>(i))
      throw std::invalid_argument("permute_subsystems: not a permutation");
  std::vector<int> out_dims(dims.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_dims[i] = dims[perm[i]];
  // Map each input index to its output index once, then scatter.
  std::vector<long> target(n);
  std::vector<int> digits, out_digits(dims.size());
  for (long i = 0; i < n; ++i) {
    detail::split_index(i, dims, digits);
    for (std::size_t k = 0; k < perm.size(); ++k) out_digits[k] = digits[perm[k]];
    target[i] = detail::join_index(out_digits, out_dims);
  }
  ComplexMatrix out(n, n);
  for (long r = 0; r < n; ++r)
    for (long c = 0; c < n; ++c) out(target[r], target[c]) = m(r, c);
  return out;
}

struct HermitianEigen {
  RealVector values;     // descending
  ComplexMatrix vectors; // columns match `values`
};

inline HermitianEigen hermitian_eig(const ComplexMatrix& m,
                                    double tol = kHermitianTolerance) {
  if (!is_hermitian(m, tol))
    throw std::invalid_argument("hermitian_eig: matrix is not Hermitian");
  Eigen::MatrixXcd sym = hermitian_part(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(sym);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("hermitian_eig: eigensolver failed");
  const Eigen::Index n = sym.rows();
  HermitianEigen out{RealVector(n), ComplexMatrix(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = es.eigenvalues()(n - 1 - i);
    out.vectors.col(i) = es.eigenvectors().col(n - 1 - i);
  }
  return out;
}

inline RealVector hermitian_eigenvalues(const ComplexMatrix& m,
                                        double tol = kHermitianTolerance) {
  if (!is_hermitian(m, tol))
    throw std::invalid_argument("hermitian_eigenvalues: matrix is not Hermitian");
  Eigen::MatrixXcd sym = hermitian_part(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().reverse();
}

inline double min_eigenvalue(const ComplexMatrix& m,
                             double tol = kHermitianTolerance) {
  return hermitian_eigenvalues(m, tol).minCoeff();
}

struct SvdResult {
  ComplexMatrix u;
  RealVector singular_values;  // descending
  ComplexMatrix v;
};

inline SvdResult svd(const ComplexMatrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXcd> js(Eigen::MatrixXcd(m),
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {js.matrixU(), js.singularValues(), js.matrixV()};
}

namespace detail {

inline long binomial(long n, long k) {
  if (k < 0 || k > n) return 0;
  long r = 1;
  for (long i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Non-decreasing index tuples of length k over {0..d-1}, lexicographic.
inline std::vector<std::vector<int>> multisets(int d, int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur(k, 0);
  while (true) {
    out.push_back(cur);
    int pos = k - 1;
    while (pos >= 0 && cur[pos] == d - 1) --pos;
    if (pos < 0) break;
    ++cur[pos];
    for (int q = pos + 1; q < k; ++q) cur[q] = cur[pos];
  }
  return out;
}

}  // namespace detail

/// Isometry from Sym^k(C^d) into (C^d)^{⊗k}. Column j is the normalized
/// symmetrization of the j-th sorted multiset of basis labels.
inline ComplexMatrix sym_isometry(int d, int k) {
  if (d < 1 || k < 1) throw std::invalid_argument("sym_isometry: d, k >= 1");
  long full = 1;
  for (int i = 0; i < k; ++i) full *= d;
  auto sets = detail::multisets(d, k);
  ComplexMatrix v = ComplexMatrix::Zero(full, static_cast<long>(sets.size()));
  std::vector<int> dims(k, d);
  for (std::size_t col = 0; col < sets.size(); ++col) {
    std::vector<int> perm = sets[col];
    std::vector<long> rows;
    do {
      rows.push_back(detail::join_index(perm, dims));
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double w = 1.0 / std::sqrt(static_cast<double>(rows.size()));
    for (long r : rows) v(r, static_cast<long>(col)) = w;
  }
  return v;
}

/// [[Re H, -Im H], [Im H, Re H]]; the spectrum of H appears twice.
inline RealMatrix real_embed(const ComplexMatrix& h,
                             double tol = kHermitianTolerance) {
  if (!is_hermitian(h, tol))
    throw std::invalid_argument("real_embed: matrix is not Hermitian");
  const Eigen::Index n = h.rows();
  RealMatrix out(2 * n, 2 * n);
  RealMatrix re = h.real();
  RealMatrix im = h.imag();
  out.topLeftCorner(n, n) = re;
  out.bottomRightCorner(n, n) = re;
  out.topRightCorner(n, n) = -im;
  out.bottomLeftCorner(n, n) = im;
  return out;
}

inline ComplexMatrix identity(long n) { return ComplexMatrix::Identity(n, n); }

inline ComplexMatrix projector(const ComplexVector& v) {
  return v * v.adjoint();
}

}  // namespace schmidt_scope
