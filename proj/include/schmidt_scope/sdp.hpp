// sdp.hpp
// Primal-dual interior-point solver for small dense block SDPs.
//
//   (P)  min <C,X> + f'u   s.t.  <A_i,X> + (Bu)_i = b_i,  X >= 0,  u free
//   (D)  max b'y           s.t.  C - sum_i y_i A_i = Z >= 0,  B'y = f
//
// Nesterov-Todd scaling, Mehrotra predictor-corrector, dense Cholesky on the
// Schur complement. Blocks are real symmetric; Hermitian data enters through
// real_embed (see LmiProblem).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "schmidt_scope/hermlin.hpp"

namespace schmidt_scope::sdp {

/// Block-diagonal symmetric matrix stored as its upper triangle.
struct SparseSym {
  struct Entry {
    int block;
    int row;
    int col;
    double value;
  };
  std::vector<Entry> entries;

  void add(int block, int row, int col, double value) {
    if (value == 0.0) return;
    if (row > col) std::swap(row, col);
    entries.push_back({block, row, col, value});
  }

  /// Sorts by (block, row, col), merges duplicates and drops zeros.
  void compact() {
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.block != b.block) return a.block < b.block;
      if (a.row != b.row) return a.row < b.row;
      return a.col < b.col;
    });
    std::vector<Entry> merged;
    merged.reserve(entries.size());
    for (const auto& e : entries) {
      if (!merged.empty() && merged.back().block == e.block &&
          merged.back().row == e.row && merged.back().col == e.col) {
        merged.back().value += e.value;
      } else {
        merged.push_back(e);
      }
    }
    std::erase_if(merged, [](const Entry& e) { return e.value == 0.0; });
    entries = std::move(merged);
  }
};

struct Constraint {
  SparseSym matrix;
  double rhs = 0.0;
  std::vector<std::pair<int, double>> free_terms;  // (free variable, coefficient)
};

enum class Sense { minimize, maximize };

struct SdpProblem {
  std::vector<int> block_dims;
  SparseSym objective;
  std::vector<Constraint> constraints;
  std::vector<double> free_objective;  // one coefficient per free primal variable
  Sense sense = Sense::minimize;

  [[nodiscard]] int num_free() const { return static_cast<int>(free_objective.size()); }

  void validate() const {
    if (block_dims.empty()) throw std::invalid_argument("sdp: no blocks");
    for (int d : block_dims)
      if (d < 1) throw std::invalid_argument("sdp: block dimension < 1");
    auto check = [&](const SparseSym& s, const char* what) {
      for (const auto& e : s.entries) {
        if (e.block < 0 || e.block >= static_cast<int>(block_dims.size()) ||
            e.row < 0 || e.col < e.row || e.col >= block_dims[e.block])
          throw std::invalid_argument(std::string("sdp: bad entry in ") + what);
        if (!std::isfinite(e.value))
          throw std::invalid_argument(std::string("sdp: non-finite entry in ") + what);
      }
    };
    check(objective, "objective");
    for (const auto& c : constraints) {
      check(c.matrix, "constraint");
      for (auto [k, v] : c.free_terms)
        if (k < 0 || k >= num_free() || !std::isfinite(v))
          throw std::invalid_argument("sdp: bad free-variable term");
    }
  }
};

enum class SdpStatus { optimal, infeasible_certificate, max_iterations };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::optimal: return "optimal";
    case SdpStatus::infeasible_certificate: return "infeasible_certificate";
    case SdpStatus::max_iterations: return "max_iterations";
  }
  return "?";
}

struct KktResiduals {
  double primal_feas = 0;
  double dual_feas = 0;
  double duality_gap = 0;
};

struct SdpSolution {
  SdpStatus status = SdpStatus::max_iterations;
  std::vector<RealMatrix> primal_blocks;  // X
  std::vector<RealMatrix> slack_blocks;   // Z
  RealVector dual_vector;                 // y (for the kept constraints, in input order)
  RealVector free_values;                 // u
  double objective_value = 0;             // in the caller's sense
  double primal_objective = 0;            // <C,X> + f'u (minimize orientation)
  double dual_objective = 0;              // b'y
  KktResiduals kkt;
  int iterations = 0;
  bool primal_infeasible = false;         // meaningful when status == infeasible_certificate
};

struct SolverOptions {
  double tolerance = 1e-8;
  int max_iterations = 200;
  double dependency_threshold = 1e-10;
  // Dense dependency check on constraint rows is skipped above this many
  // stored entries (rows x svec columns).
  double max_dense_dependency_entries = 4e6;
};

namespace detail {

struct BlockTerm {
  int constraint;
  std::vector<SparseSym::Entry> entries;  // block field unused
};

inline double sym_inner(const std::vector<SparseSym::Entry>& a, const RealMatrix& x) {
  double s = 0;
  for (const auto& e : a) s += (e.row == e.col ? 1.0 : 2.0) * e.value * x(e.row, e.col);
  return s;
}

inline void sym_accumulate(const std::vector<SparseSym::Entry>& a, double w, RealMatrix& x) {
  for (const auto& e : a) {
    x(e.row, e.col) += w * e.value;
    if (e.row != e.col) x(e.col, e.row) += w * e.value;
  }
}

inline RealMatrix symmetrize(const RealMatrix& m) { return (m + m.transpose()) * 0.5; }

// Largest step a in (0, inf] keeping lambda + a*delta PSD, lambda diagonal > 0.
inline double max_step(const RealVector& lambda, const RealMatrix& delta) {
  RealVector s = lambda.cwiseSqrt().cwiseInverse();
  RealMatrix scaled = s.asDiagonal() * delta * s.asDiagonal();
  Eigen::SelfAdjointEigenSolver<RealMatrix> es(symmetrize(scaled), Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin >= 0) return std::numeric_limits<double>::infinity();
  return -1.0 / lmin;
}

// Indices of a maximal independent subset of the columns of `m`.
inline std::vector<int> independent_columns(const RealMatrix& m, double threshold) {
  std::vector<int> keep;
  if (m.cols() == 0) return keep;
  Eigen::ColPivHouseholderQR<RealMatrix> qr(m);
  const RealMatrix& r = qr.matrixQR();
  const Eigen::Index k = std::min(m.rows(), m.cols());
  const double scale = std::max(1.0, k > 0 ? std::abs(r(0, 0)) : 1.0);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (std::abs(r(i, i)) <= threshold * scale) break;
    keep.push_back(static_cast<int>(qr.colsPermutation().indices()(i)));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

// Constraint rows as dense svec columns (isometric: off-diagonals scaled by sqrt 2).
inline RealMatrix constraint_columns(const std::vector<Constraint>& cons, const std::vector<int>& dims,
                                     const std::vector<int>& offsets, int svec_len, int n_free) {
  RealMatrix rows = RealMatrix::Zero(svec_len + n_free, static_cast<long>(cons.size()));
  for (std::size_t i = 0; i < cons.size(); ++i) {
    for (const auto& e : cons[i].matrix.entries) {
      const int n = dims[e.block];
      const int idx = offsets[e.block] + e.row * n - e.row * (e.row - 1) / 2 + (e.col - e.row);
      rows(idx, static_cast<long>(i)) += (e.row == e.col ? 1.0 : std::sqrt(2.0)) * e.value;
    }
    for (auto [k, v] : cons[i].free_terms) rows(svec_len + k, static_cast<long>(i)) += v;
  }
  return rows;
}

inline void check_consistent(const std::vector<Constraint>& cons, const std::vector<int>& keep,
                             const std::function<RealVector(int)>& coefficients) {
  RealVector bsub(static_cast<long>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) bsub(static_cast<long>(j)) = cons[keep[j]].rhs;
  const double bmax = keep.empty() ? 0.0 : bsub.cwiseAbs().maxCoeff();
  for (std::size_t i = 0; i < cons.size(); ++i) {
    if (std::binary_search(keep.begin(), keep.end(), static_cast<int>(i))) continue;
    const double predicted = keep.empty() ? 0.0 : bsub.dot(coefficients(static_cast<int>(i)));
    if (std::abs(predicted - cons[i].rhs) > 1e-8 * (1.0 + std::abs(cons[i].rhs) + bmax))
      throw std::domain_error("sdp: dependent equality constraints are inconsistent");
  }
}

inline std::vector<int> independent_rows_qr(const std::vector<Constraint>& cons, const std::vector<int>& dims,
                                            const std::vector<int>& offsets, int svec_len, int n_free,
                                            double threshold) {
  RealMatrix rows = constraint_columns(cons, dims, offsets, svec_len, n_free);
  auto keep = independent_columns(rows, threshold);
  if (keep.size() < cons.size()) {
    RealMatrix sub(rows.rows(), static_cast<long>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) sub.col(static_cast<long>(j)) = rows.col(keep[j]);
    Eigen::ColPivHouseholderQR<RealMatrix> qr(sub);
    check_consistent(cons, keep, [&](int i) { return RealVector(qr.solve(RealVector(rows.col(i)))); });
  }
  return keep;
}

// Same decision from the Gram matrix of the rows, assembled sparsely and
// factored with diagonal pivoting. Resolves dependencies to about the square
// root of the QR threshold; used when the dense row matrix is too large.
inline std::vector<int> independent_rows_gram(const std::vector<Constraint>& cons, const std::vector<int>& dims,
                                              int n_free, double threshold) {
  const int m = static_cast<int>(cons.size());
  std::vector<std::vector<std::vector<std::pair<int, double>>>> at(dims.size());
  for (std::size_t b = 0; b < dims.size(); ++b)
    at[b].resize(static_cast<std::size_t>(dims[b]) * dims[b]);
  std::vector<std::vector<std::pair<int, double>>> free_at(n_free);
  for (int i = 0; i < m; ++i) {
    for (const auto& e : cons[i].matrix.entries)
      at[e.block][static_cast<std::size_t>(e.row) * dims[e.block] + e.col].emplace_back(
          i, (e.row == e.col ? 1.0 : std::sqrt(2.0)) * e.value);
    for (auto [k, v] : cons[i].free_terms) free_at[k].emplace_back(i, v);
  }
  RealMatrix gram = RealMatrix::Zero(m, m);
  auto accumulate = [&](const std::vector<std::pair<int, double>>& list) {
    for (const auto& [i, vi] : list)
      for (const auto& [j, vj] : list) gram(i, j) += vi * vj;
  };
  for (const auto& blk : at)
    for (const auto& list : blk) accumulate(list);
  for (const auto& list : free_at) accumulate(list);

  Eigen::LDLT<RealMatrix> ldlt(gram);
  const RealVector dvals = ldlt.vectorD();
  const double dmax = std::max(1e-300, dvals.cwiseAbs().maxCoeff());
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(ldlt.transpositionsP());
  const Eigen::PermutationMatrix<Eigen::Dynamic> inv = perm.inverse();
  std::vector<int> keep;
  for (int k = 0; k < m; ++k) {
    if (std::abs(dvals(k)) <= threshold * 1e-4 * dmax) break;
    // Row k of P * G * P^T is original index perm^-1(k).
    keep.push_back(static_cast<int>(inv.indices()(k)));
  }
  std::sort(keep.begin(), keep.end());
  if (static_cast<int>(keep.size()) < m) {
    RealMatrix gkk(static_cast<long>(keep.size()), static_cast<long>(keep.size()));
    for (std::size_t a = 0; a < keep.size(); ++a)
      for (std::size_t b = 0; b < keep.size(); ++b) gkk(a, b) = gram(keep[a], keep[b]);
    Eigen::LDLT<RealMatrix> sub(gkk);
    check_consistent(cons, keep, [&](int i) {
      RealVector g(static_cast<long>(keep.size()));
      for (std::size_t a = 0; a < keep.size(); ++a) g(static_cast<long>(a)) = gram(keep[a], i);
      return RealVector(sub.solve(g));
    });
  }
  return keep;
}

}  // namespace detail

/// Interior-point solve. Throws std::domain_error when equality constraints
/// are dependent and inconsistent.
inline SdpSolution solve(const SdpProblem& problem, const SolverOptions& opt = {}) {
  problem.validate();
  const int nb = static_cast<int>(problem.block_dims.size());
  const int n_free = problem.num_free();
  const double sense_sign = problem.sense == Sense::maximize ? -1.0 : 1.0;

  // Working copies (minimize orientation).
  std::vector<Constraint> cons = problem.constraints;
  for (auto& c : cons) c.matrix.compact();
  SparseSym cobj = problem.objective;
  cobj.compact();
  for (auto& e : cobj.entries) e.value *= sense_sign;
  std::vector<double> fobj = problem.free_objective;
  for (auto& v : fobj) v *= sense_sign;

  std::vector<int> offsets(nb + 1, 0);
  for (int b = 0; b < nb; ++b)
    offsets[b + 1] = offsets[b] + problem.block_dims[b] * (problem.block_dims[b] + 1) / 2;
  const int svec_len = offsets[nb];

  // Dependent equality rows: drop consistent ones, reject inconsistent ones.
  std::vector<int> kept_rows(cons.size());
  std::iota(kept_rows.begin(), kept_rows.end(), 0);
  if (!cons.empty()) {
    const double stored = static_cast<double>(cons.size()) * (svec_len + n_free + 1);
    const auto keep = stored <= opt.max_dense_dependency_entries
                          ? detail::independent_rows_qr(cons, problem.block_dims, offsets, svec_len, n_free,
                                                        opt.dependency_threshold)
                          : detail::independent_rows_gram(cons, problem.block_dims, n_free,
                                                          opt.dependency_threshold);
    if (keep.size() < cons.size()) kept_rows = keep;
  }
  const int m = static_cast<int>(kept_rows.size());

  // Dependent free-variable columns make u non-unique; drop them if the
  // corresponding dual equality is implied, otherwise the problem is ill-posed.
  std::vector<int> kept_free(n_free);
  std::iota(kept_free.begin(), kept_free.end(), 0);
  RealMatrix bmat = RealMatrix::Zero(m, n_free);
  for (int i = 0; i < m; ++i)
    for (auto [k, v] : cons[kept_rows[i]].free_terms) bmat(i, k) += v;
  if (n_free > 0) {
    auto keep = detail::independent_columns(bmat, opt.dependency_threshold);
    if (static_cast<int>(keep.size()) < n_free) {
      RealMatrix sub(m, static_cast<long>(keep.size()));
      RealVector fsub(static_cast<long>(keep.size()));
      for (std::size_t j = 0; j < keep.size(); ++j) {
        sub.col(static_cast<long>(j)) = bmat.col(keep[j]);
        fsub(static_cast<long>(j)) = fobj[keep[j]];
      }
      Eigen::ColPivHouseholderQR<RealMatrix> qr(sub);
      for (int k = 0; k < n_free; ++k) {
        if (std::binary_search(keep.begin(), keep.end(), k)) continue;
        RealVector coef = qr.solve(RealVector(bmat.col(k)));
        const double scale = 1.0 + std::abs(fobj[k]) +
                             (fsub.size() ? fsub.cwiseAbs().maxCoeff() : 0.0);
        if (std::abs(fsub.dot(coef) - fobj[k]) > 1e-8 * scale)
          throw std::domain_error("sdp: dependent dual equalities are inconsistent");
      }
      kept_free = keep;
    }
  }
  const int nu = static_cast<int>(kept_free.size());
  RealMatrix bred(m, nu);
  RealVector fred(nu);
  for (int j = 0; j < nu; ++j) {
    bred.col(j) = bmat.col(kept_free[j]);
    fred(j) = fobj[kept_free[j]];
  }

  RealVector b(m);
  for (int i = 0; i < m; ++i) b(i) = cons[kept_rows[i]].rhs;

  // Per-block constraint terms.
  std::vector<std::vector<detail::BlockTerm>> terms(nb);
  for (int i = 0; i < m; ++i) {
    const auto& ent = cons[kept_rows[i]].matrix.entries;
    std::size_t p = 0;
    while (p < ent.size()) {
      const int blk = ent[p].block;
      detail::BlockTerm t{i, {}};
      while (p < ent.size() && ent[p].block == blk) t.entries.push_back(ent[p++]);
      terms[blk].push_back(std::move(t));
    }
  }
  std::vector<std::vector<SparseSym::Entry>> cblocks(nb);
  for (const auto& e : cobj.entries) cblocks[e.block].push_back(e);

  std::vector<RealMatrix> cdense(nb);
  double cnorm2 = 0;
  for (int b2 = 0; b2 < nb; ++b2) {
    const int n = problem.block_dims[b2];
    cdense[b2] = RealMatrix::Zero(n, n);
    detail::sym_accumulate(cblocks[b2], 1.0, cdense[b2]);
    cnorm2 += cdense[b2].squaredNorm();
  }
  const double cnorm = std::sqrt(cnorm2 + fred.squaredNorm());
  const double bnorm = b.norm();

  auto apply_a = [&](const std::vector<RealMatrix>& x) {
    RealVector out = RealVector::Zero(m);
    for (int b2 = 0; b2 < nb; ++b2)
      for (const auto& t : terms[b2]) out(t.constraint) += detail::sym_inner(t.entries, x[b2]);
    return out;
  };
  auto apply_at = [&](const RealVector& y) {
    std::vector<RealMatrix> out(nb);
    for (int b2 = 0; b2 < nb; ++b2) {
      const int n = problem.block_dims[b2];
      out[b2] = RealMatrix::Zero(n, n);
      for (const auto& t : terms[b2]) detail::sym_accumulate(t.entries, y(t.constraint), out[b2]);
    }
    return out;
  };
  auto inner = [&](const std::vector<RealMatrix>& x, const std::vector<RealMatrix>& z) {
    double s = 0;
    for (int b2 = 0; b2 < nb; ++b2) s += x[b2].cwiseProduct(z[b2]).sum();
    return s;
  };

  double bmax = 0;
  for (int i = 0; i < m; ++i) bmax = std::max(bmax, std::abs(b(i)));
  const double xi = 1.0 + bmax;

  std::vector<RealMatrix> x(nb), z(nb);
  int ntotal = 0;
  for (int b2 = 0; b2 < nb; ++b2) {
    const int n = problem.block_dims[b2];
    x[b2] = xi * RealMatrix::Identity(n, n);
    z[b2] = xi * RealMatrix::Identity(n, n);
    ntotal += n;
  }
  RealVector y = RealVector::Zero(m);
  RealVector u = RealVector::Zero(nu);

  SdpSolution sol;
  auto fill_solution = [&](SdpStatus status, int iter, const KktResiduals& kkt) {
    sol.status = status;
    sol.iterations = iter;
    sol.kkt = kkt;
    sol.primal_blocks = x;
    sol.slack_blocks = z;
    sol.dual_vector = RealVector::Zero(static_cast<long>(cons.size()));
    for (int i = 0; i < m; ++i) sol.dual_vector(kept_rows[i]) = y(i);
    sol.free_values = RealVector::Zero(n_free);
    for (int j = 0; j < nu; ++j) sol.free_values(kept_free[j]) = u(j);
    sol.primal_objective = inner(cdense, x) + fred.dot(u);
    sol.dual_objective = b.dot(y);
    const double mid = 0.5 * (sol.primal_objective + sol.dual_objective);
    sol.objective_value = sense_sign * mid;
  };

  for (int iter = 0; iter <= opt.max_iterations; ++iter) {
    // Residuals.
    RealVector rp = b - apply_a(x) - bred * u;
    std::vector<RealMatrix> aty = apply_at(y);
    std::vector<RealMatrix> rd(nb);
    double rd2 = 0;
    for (int b2 = 0; b2 < nb; ++b2) {
      rd[b2] = cdense[b2] - z[b2] - aty[b2];
      rd2 += rd[b2].squaredNorm();
    }
    RealVector rf = fred - bred.transpose() * y;
    const double pobj = inner(cdense, x) + fred.dot(u);
    const double dobj = b.dot(y);
    KktResiduals kkt{rp.norm() / (1.0 + bnorm), std::sqrt(rd2 + rf.squaredNorm()) / (1.0 + cnorm),
                     std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj))};
    if (kkt.primal_feas <= opt.tolerance && kkt.dual_feas <= opt.tolerance &&
        kkt.duality_gap <= opt.tolerance) {
      fill_solution(SdpStatus::optimal, iter, kkt);
      return sol;
    }
    // Rays: a huge dual objective with small dual residual relative to |y|
    // certifies primal infeasibility, and symmetrically for the primal.
    {
      const double ynorm = y.norm();
      if (dobj > 1e10 && dobj > 1e8 * (1.0 + std::abs(pobj)) &&
          std::sqrt(rd2 + rf.squaredNorm()) / std::max(1.0, ynorm) < 1e-6) {
        fill_solution(SdpStatus::infeasible_certificate, iter, kkt);
        sol.primal_infeasible = true;
        return sol;
      }
      double xnorm = 0;
      for (int b2 = 0; b2 < nb; ++b2) xnorm += x[b2].squaredNorm();
      xnorm = std::sqrt(xnorm + u.squaredNorm());
      if (pobj < -1e10 && -pobj > 1e8 * (1.0 + std::abs(dobj)) &&
          rp.norm() / std::max(1.0, xnorm) < 1e-6) {
        fill_solution(SdpStatus::infeasible_certificate, iter, kkt);
        sol.primal_infeasible = false;
        return sol;
      }
    }
    if (iter == opt.max_iterations) {
      fill_solution(SdpStatus::max_iterations, iter, kkt);
      return sol;
    }

    // NT scaling point per block: W = G G', G^-1 X G^-T = G' Z G = diag(lambda).
    std::vector<RealMatrix> g(nb), w(nb);
    std::vector<RealVector> lambda(nb);
    bool scaling_failed = false;
    for (int b2 = 0; b2 < nb; ++b2) {
      Eigen::LLT<RealMatrix> lx(x[b2]), lz(z[b2]);
      if (lx.info() != Eigen::Success || lz.info() != Eigen::Success) {
        scaling_failed = true;
        break;
      }
      RealMatrix lxm = lx.matrixL();
      RealMatrix lzm = lz.matrixL();
      Eigen::JacobiSVD<RealMatrix> sv(lzm.transpose() * lxm, Eigen::ComputeFullU | Eigen::ComputeFullV);
      lambda[b2] = sv.singularValues();
      RealVector isq = lambda[b2].cwiseSqrt().cwiseInverse();
      g[b2] = lxm * sv.matrixV() * isq.asDiagonal();
      w[b2] = g[b2] * g[b2].transpose();
    }
    if (scaling_failed) {
      fill_solution(SdpStatus::max_iterations, iter, kkt);
      return sol;
    }
    const double mu = inner(x, z) / ntotal;

    // Schur complement M_ij = <A_i, W A_j W>.
    RealMatrix schur = RealMatrix::Zero(m, m);
    for (int b2 = 0; b2 < nb; ++b2) {
      const auto& tb = terms[b2];
      if (tb.empty()) continue;
      const int n = problem.block_dims[b2];
      const RealMatrix& wb = w[b2];
      std::vector<double> suffix_nnz(tb.size() + 1, 0.0);
      for (int j = static_cast<int>(tb.size()) - 1; j >= 0; --j)
        suffix_nnz[j] = suffix_nnz[j + 1] + static_cast<double>(tb[j].entries.size());
      RealMatrix tmat(n, n), aw(n, n);
      for (std::size_t j = 0; j < tb.size(); ++j) {
        const auto& ej = tb[j].entries;
        const double cost_entry = 4.0 * static_cast<double>(ej.size()) * suffix_nnz[j];
        const double cost_dense = 2.0 * n * static_cast<double>(n) * n +
                                  2.0 * n * static_cast<double>(ej.size()) + suffix_nnz[j];
        if (cost_entry <= cost_dense) {
          for (std::size_t i = j; i < tb.size(); ++i) {
            double val = 0;
            for (const auto& ep : tb[i].entries) {
              double tpq = 0;
              for (const auto& er : ej) {
                if (er.row == er.col) {
                  tpq += er.value * wb(ep.row, er.row) * wb(er.row, ep.col);
                } else {
                  tpq += er.value * (wb(ep.row, er.row) * wb(er.col, ep.col) +
                                     wb(ep.row, er.col) * wb(er.row, ep.col));
                }
              }
              val += (ep.row == ep.col ? 1.0 : 2.0) * ep.value * tpq;
            }
            schur(tb[i].constraint, tb[j].constraint) += val;
          }
        } else {
          aw.setZero();
          for (const auto& er : ej) {
            aw.row(er.row) += er.value * wb.row(er.col);
            if (er.row != er.col) aw.row(er.col) += er.value * wb.row(er.row);
          }
          tmat.noalias() = wb * aw;
          for (std::size_t i = j; i < tb.size(); ++i)
            schur(tb[i].constraint, tb[j].constraint) += detail::sym_inner(tb[i].entries, tmat);
        }
      }
    }
    // Terms were visited with i >= j in per-block order, which follows
    // constraint order, so only the lower triangle is filled.
    schur = RealMatrix(schur.selfadjointView<Eigen::Lower>());

    Eigen::LLT<RealMatrix> chol;
    {
      double reg = 0;
      const double diag_scale = std::max(1e-300, schur.diagonal().cwiseAbs().maxCoeff());
      for (int attempt = 0; attempt < 8; ++attempt) {
        RealMatrix mm = schur;
        if (reg > 0) mm.diagonal().array() += reg;
        chol.compute(mm);
        if (chol.info() == Eigen::Success) break;
        reg = reg == 0 ? 1e-14 * diag_scale : reg * 100;
      }
      if (chol.info() != Eigen::Success) {
        fill_solution(SdpStatus::max_iterations, iter, kkt);
        return sol;
      }
    }
    RealMatrix minv_b;
    Eigen::LDLT<RealMatrix> kfac;
    if (nu > 0) {
      minv_b = chol.solve(bred);
      kfac.compute(bred.transpose() * minv_b);
    }

    // W R_d W is shared by predictor and corrector.
    std::vector<RealMatrix> wrdw(nb);
    for (int b2 = 0; b2 < nb; ++b2) wrdw[b2] = w[b2] * rd[b2] * w[b2];
    const RealVector a_wrdw = apply_a(wrdw);

    struct Direction {
      std::vector<RealMatrix> dx, dz, dxt, dzt;
      RealVector dy, du;
    };
    auto direction = [&](const std::vector<RealMatrix>& s) {
      Direction d;
      std::vector<RealMatrix> gsg(nb);
      for (int b2 = 0; b2 < nb; ++b2) gsg[b2] = g[b2] * s[b2] * g[b2].transpose();
      RealVector h = rp - apply_a(gsg) + a_wrdw;
      // [M B; B' 0] [dy; du] = [h; rf], with refinement against the
      // unregularized M since late iterations are badly conditioned.
      auto kkt_solve = [&](const RealVector& r1, const RealVector& r2, RealVector& dy, RealVector& du) {
        if (nu > 0) {
          RealVector minv_h = chol.solve(r1);
          du = kfac.solve(bred.transpose() * minv_h - r2);
          dy = minv_h - minv_b * du;
        } else {
          du = RealVector::Zero(0);
          dy = chol.solve(r1);
        }
      };
      kkt_solve(h, rf, d.dy, d.du);
      for (int refine = 0; refine < 2; ++refine) {
        RealVector r1 = h - schur * d.dy;
        if (nu > 0) r1 -= bred * d.du;
        RealVector r2 = nu > 0 ? RealVector(rf - bred.transpose() * d.dy) : RealVector::Zero(0);
        RealVector cy, cu;
        kkt_solve(r1, r2, cy, cu);
        d.dy += cy;
        if (nu > 0) d.du += cu;
      }
      std::vector<RealMatrix> atdy = apply_at(d.dy);
      d.dx.resize(nb);
      d.dz.resize(nb);
      d.dxt.resize(nb);
      d.dzt.resize(nb);
      for (int b2 = 0; b2 < nb; ++b2) {
        d.dz[b2] = detail::symmetrize(rd[b2] - atdy[b2]);
        d.dx[b2] = detail::symmetrize(gsg[b2] - w[b2] * d.dz[b2] * w[b2]);
        d.dzt[b2] = detail::symmetrize(g[b2].transpose() * d.dz[b2] * g[b2]);
        d.dxt[b2] = detail::symmetrize(s[b2] - d.dzt[b2]);
      }
      return d;
    };
    auto step_lengths = [&](const Direction& d) {
      double ap = std::numeric_limits<double>::infinity();
      double ad = ap;
      for (int b2 = 0; b2 < nb; ++b2) {
        ap = std::min(ap, detail::max_step(lambda[b2], d.dxt[b2]));
        ad = std::min(ad, detail::max_step(lambda[b2], d.dzt[b2]));
      }
      return std::pair{ap, ad};
    };

    // Predictor (affine scaling): S = -Lambda.
    std::vector<RealMatrix> s_aff(nb);
    for (int b2 = 0; b2 < nb; ++b2) s_aff[b2] = -RealMatrix(lambda[b2].asDiagonal());
    Direction pred = direction(s_aff);
    auto [ap_a, ad_a] = step_lengths(pred);
    ap_a = std::min(1.0, ap_a);
    ad_a = std::min(1.0, ad_a);
    double mu_aff = 0;
    for (int b2 = 0; b2 < nb; ++b2) {
      mu_aff += (x[b2] + ap_a * pred.dx[b2]).cwiseProduct(z[b2] + ad_a * pred.dz[b2]).sum();
    }
    mu_aff /= ntotal;
    double sigma = std::pow(std::max(0.0, mu_aff) / mu, 3);
    sigma = std::clamp(sigma, 0.0, 1.0);

    // Corrector.
    std::vector<RealMatrix> s_cor(nb);
    for (int b2 = 0; b2 < nb; ++b2) {
      const RealVector& lam = lambda[b2];
      const int n = problem.block_dims[b2];
      RealMatrix cross = pred.dxt[b2] * pred.dzt[b2];
      RealMatrix rc = -(cross + cross.transpose());
      rc.diagonal().array() += 2.0 * sigma * mu;
      rc.diagonal() -= 2.0 * lam.cwiseProduct(lam);
      RealMatrix s(n, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) s(r, c) = rc(r, c) / (lam(r) + lam(c));
      s_cor[b2] = s;
    }
    Direction dir = direction(s_cor);
    auto [ap, ad] = step_lengths(dir);
    const double gamma = 0.9 + 0.09 * std::min({1.0, ap_a, ad_a});
    ap = std::min(1.0, gamma * ap);
    ad = std::min(1.0, gamma * ad);

    for (int b2 = 0; b2 < nb; ++b2) {
      x[b2] = detail::symmetrize(x[b2] + ap * dir.dx[b2]);
      z[b2] = detail::symmetrize(z[b2] + ad * dir.dz[b2]);
    }
    u += ap * dir.du;
    y += ad * dir.dy;
  }
  return sol;  // unreachable
}

inline constexpr double kMarginBand = 1e-7;

struct MarginResult {
  double margin = 0;
  SdpSolution witness;
};

/// max t s.t. the equality constraints of `problem` hold with every block
/// X_j (j in slack_blocks) replaced by X_j - t*I, all blocks PSD. The
/// problem's objective is ignored.
inline MarginResult feasibility_margin(const SdpProblem& problem,
                                       const std::vector<int>& slack_blocks,
                                       const SolverOptions& opt = {}) {
  if (slack_blocks.empty()) throw std::invalid_argument("feasibility_margin: no slack blocks");
  for (int s : slack_blocks)
    if (s < 0 || s >= static_cast<int>(problem.block_dims.size()))
      throw std::invalid_argument("feasibility_margin: slack block out of range");
  problem.validate();
  SdpProblem aug;
  aug.block_dims = problem.block_dims;
  aug.sense = Sense::minimize;
  aug.free_objective = problem.free_objective;
  std::fill(aug.free_objective.begin(), aug.free_objective.end(), 0.0);
  const int t_index = aug.num_free();
  aug.free_objective.push_back(-1.0);  // minimize -t
  std::vector<char> is_slack(problem.block_dims.size(), 0);
  for (int s : slack_blocks) is_slack[s] = 1;
  for (const auto& c : problem.constraints) {
    Constraint cc = c;
    double trace_on_slack = 0;
    for (const auto& e : c.matrix.entries)
      if (is_slack[e.block] && e.row == e.col) trace_on_slack += e.value;
    if (trace_on_slack != 0.0) cc.free_terms.emplace_back(t_index, trace_on_slack);
    aug.constraints.push_back(std::move(cc));
  }
  MarginResult out;
  out.witness = solve(aug, opt);
  const auto& w = out.witness;
  out.margin = 0.5 * (-w.primal_objective + -w.dual_objective);
  // The reported blocks are X_j = X'_j + t*I.
  if (w.free_values.size() > t_index) {
    const double t = w.free_values(t_index);
    for (int s : slack_blocks) out.witness.primal_blocks[s].diagonal().array() += t;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear matrix inequalities over Hermitian blocks.

/// Affine Hermitian blocks F_b(y) = F_b0 + sum_k y_k F_bk with linear
/// equalities on y. Entries are given on the upper triangle; the lower
/// triangle is implied by Hermiticity.
class LmiProblem {
 public:
  struct Term {
    int block;
    int row;
    int col;
    cplx value;
  };

  int add_block(int dim, bool complex_valued, bool slack) {
    if (dim < 1) throw std::invalid_argument("lmi: block dimension < 1");
    blocks_.push_back({dim, complex_valued, slack});
    return static_cast<int>(blocks_.size()) - 1;
  }

  int add_variable() {
    coefficients_.emplace_back();
    objective_.push_back(0.0);
    return static_cast<int>(coefficients_.size()) - 1;
  }

  void add_constant(int block, int row, int col, cplx value) {
    push(constant_, block, row, col, value);
  }

  void add_coefficient(int var, int block, int row, int col, cplx value) {
    push(coefficients_.at(var), block, row, col, value);
  }

  void add_equality(std::vector<std::pair<int, double>> terms, double rhs) {
    equalities_.push_back({std::move(terms), rhs});
  }

  void set_objective(int var, double c) { objective_.at(var) = c; }

  [[nodiscard]] int num_variables() const { return static_cast<int>(coefficients_.size()); }
  [[nodiscard]] int num_blocks() const { return static_cast<int>(blocks_.size()); }
  [[nodiscard]] int num_equalities() const { return static_cast<int>(equalities_.size()); }

  /// Largest uniform slack t with F_b(y) - t*I >= 0 on slack blocks.
  /// When `with_margin` is false the objective max c'y is used instead.
  [[nodiscard]] SdpProblem to_sdp(bool with_margin) const {
    SdpProblem p;
    std::vector<int> real_dim(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      real_dim[b] = blocks_[b].complex_valued ? 2 * blocks_[b].dim : blocks_[b].dim;
      p.block_dims.push_back(real_dim[b]);
    }
    // Z = C - sum y_k A_k with C = F0 and A_k = -F_k.
    embed_terms(constant_, 1.0, p.objective);
    const int nvar = num_variables();
    p.constraints.resize(nvar + (with_margin ? 1 : 0));
    for (int k = 0; k < nvar; ++k) {
      embed_terms(coefficients_[k], -1.0, p.constraints[k].matrix);
      p.constraints[k].rhs = with_margin ? 0.0 : objective_[k];
    }
    if (with_margin) {
      bool any = false;
      for (std::size_t b = 0; b < blocks_.size(); ++b) {
        if (!blocks_[b].slack) continue;
        any = true;
        for (int i = 0; i < real_dim[b]; ++i)
          p.constraints[nvar].matrix.add(static_cast<int>(b), i, i, 1.0);
      }
      if (!any) throw std::invalid_argument("lmi: margin requested without slack blocks");
      p.constraints[nvar].rhs = 1.0;
    }
    // Equalities E y = e become free primal variables with B = E'.
    for (std::size_t e = 0; e < equalities_.size(); ++e) {
      p.free_objective.push_back(equalities_[e].rhs);
      for (auto [k, v] : equalities_[e].terms)
        p.constraints.at(k).free_terms.emplace_back(static_cast<int>(e), v);
    }
    p.sense = Sense::minimize;
    return p;
  }

  struct Result {
    double margin = 0;        // or optimal objective without margin
    RealVector values;        // y
    SdpSolution solution;
  };

  [[nodiscard]] Result solve_margin(const SolverOptions& opt = {}) const {
    SdpProblem p = to_sdp(true);
    Result r;
    r.solution = solve(p, opt);
    const int nvar = num_variables();
    r.values = r.solution.dual_vector.head(nvar);
    // (D) maximizes t = b'y; its value bounds the margin from below when y
    // is feasible, the primal value from above.
    r.margin = 0.5 * (r.solution.primal_objective + r.solution.dual_objective);
    return r;
  }

  [[nodiscard]] Result solve_objective(const SolverOptions& opt = {}) const {
    SdpProblem p = to_sdp(false);
    Result r;
    r.solution = solve(p, opt);
    r.values = r.solution.dual_vector.head(num_variables());
    r.margin = 0.5 * (r.solution.primal_objective + r.solution.dual_objective);
    return r;
  }

  /// Evaluates block b at y (complex Hermitian, not embedded).
  [[nodiscard]] ComplexMatrix evaluate_block(int block, const RealVector& y) const {
    const int n = blocks_.at(block).dim;
    ComplexMatrix out = ComplexMatrix::Zero(n, n);
    auto acc = [&](const std::vector<Term>& ts, double w) {
      for (const auto& t : ts) {
        if (t.block != block) continue;
        out(t.row, t.col) += w * t.value;
        if (t.row != t.col) out(t.col, t.row) += w * std::conj(t.value);
      }
    };
    acc(constant_, 1.0);
    for (int k = 0; k < num_variables(); ++k)
      if (y(k) != 0.0) acc(coefficients_[k], y(k));
    return out;
  }

  /// Rough size estimate of the dense Schur complement in bytes.
  [[nodiscard]] double schur_bytes() const {
    const double m = num_variables() + 1.0;
    return 8.0 * m * m;
  }

 private:
  struct BlockSpec {
    int dim;
    bool complex_valued;
    bool slack;
  };
  struct Equality {
    std::vector<std::pair<int, double>> terms;
    double rhs;
  };

  void push(std::vector<Term>& where, int block, int row, int col, cplx value) const {
    if (block < 0 || block >= static_cast<int>(blocks_.size()))
      throw std::invalid_argument("lmi: block out of range");
    const int n = blocks_[block].dim;
    if (row < 0 || col < 0 || row >= n || col >= n)
      throw std::invalid_argument("lmi: entry out of range");
    if (value == cplx(0.0)) return;
    if (row > col) {
      std::swap(row, col);
      value = std::conj(value);
    }
    if (row == col && std::abs(value.imag()) > 1e-14)
      throw std::invalid_argument("lmi: non-real diagonal entry");
    if (!blocks_[block].complex_valued && std::abs(value.imag()) > 0)
      throw std::invalid_argument("lmi: complex entry in a real block");
    where.push_back({block, row, col, value});
  }

  void embed_terms(const std::vector<Term>& ts, double sign, SparseSym& out) const {
    for (const auto& t : ts) {
      const double re = sign * t.value.real();
      const double im = sign * t.value.imag();
      if (!blocks_[t.block].complex_valued) {
        out.add(t.block, t.row, t.col, re);
        continue;
      }
      const int n = blocks_[t.block].dim;
      out.add(t.block, t.row, t.col, re);
      out.add(t.block, t.row + n, t.col + n, re);
      if (t.row != t.col && im != 0.0) {
        // [[Re, -Im], [Im, Re]] restricted to the upper triangle.
        out.add(t.block, t.col, t.row + n, im);
        out.add(t.block, t.row, t.col + n, -im);
      }
    }
    out.compact();
  }

  std::vector<BlockSpec> blocks_;
  std::vector<Term> constant_;
  std::vector<std::vector<Term>> coefficients_;
  std::vector<double> objective_;
  std::vector<Equality> equalities_;
};

// ---------------------------------------------------------------------------
// SDPA sparse export.

/// Writes `problem` in SDPA sparse format as  max <F0,X> s.t. <Fi,X> = c_i.
/// F0 = -C for a minimization. Free variables u are split u = u+ - u- into a
/// trailing diagonal block (negative size in the header).
inline void write_sdpa(const SdpProblem& problem, std::ostream& os) {
  problem.validate();
  const int nb = static_cast<int>(problem.block_dims.size());
  const int nf = problem.num_free();
  const double f0_sign = problem.sense == Sense::maximize ? 1.0 : -1.0;
  os << "\"schmidt_scope SDPA sparse export\n";
  os << problem.constraints.size() << "\n";
  os << nb + (nf > 0 ? 1 : 0) << "\n";
  for (int b = 0; b < nb; ++b) os << problem.block_dims[b] << (b + 1 < nb || nf > 0 ? " " : "");
  if (nf > 0) os << -2 * nf;
  os << "\n";
  os.precision(17);
  for (std::size_t i = 0; i < problem.constraints.size(); ++i)
    os << problem.constraints[i].rhs << (i + 1 < problem.constraints.size() ? " " : "");
  os << "\n";
  auto emit = [&](std::size_t mat, const SparseSym& s, double scale) {
    SparseSym c = s;
    c.compact();
    for (const auto& e : c.entries)
      os << mat << " " << e.block + 1 << " " << e.row + 1 << " " << e.col + 1 << " "
         << scale * e.value << "\n";
  };
  emit(0, problem.objective, f0_sign);
  for (int k = 0; k < nf; ++k) {
    const double f = f0_sign * problem.free_objective[k];
    if (f != 0.0) {
      os << 0 << " " << nb + 1 << " " << 2 * k + 1 << " " << 2 * k + 1 << " " << f << "\n";
      os << 0 << " " << nb + 1 << " " << 2 * k + 2 << " " << 2 * k + 2 << " " << -f << "\n";
    }
  }
  for (std::size_t i = 0; i < problem.constraints.size(); ++i) {
    emit(i + 1, problem.constraints[i].matrix, 1.0);
    for (auto [k, v] : problem.constraints[i].free_terms) {
      os << i + 1 << " " << nb + 1 << " " << 2 * k + 1 << " " << 2 * k + 1 << " " << v << "\n";
      os << i + 1 << " " << nb + 1 << " " << 2 * k + 2 << " " << 2 * k + 2 << " " << -v << "\n";
    }
  }
}

}  // namespace schmidt_scope::sdp
