// criteria.hpp
// Membership tests for bipartite states: PPT, DPS symmetric extensions,
// the Schmidt-number hierarchy S_D^k, the unfaithfulness inner set U~_D,
// the reduction criterion, and pure-state fidelity witnesses.
//
// Every test reports a signed margin. Positive beyond kMarginBand means the
// underlying cone problem is strictly feasible; negative beyond the band
// means it is infeasible. What that implies for the true set depends on the
// criterion (see Interpretation).

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "schmidt_scope/hermlin.hpp"
#include "schmidt_scope/qstate.hpp"
#include "schmidt_scope/sdp.hpp"
#include "schmidt_scope/twirl.hpp"

namespace schmidt_scope {

using sdp::kMarginBand;

enum class Band { inside, outside, inconclusive };
enum class Interpretation { certifies_membership, certifies_nonmembership, inconclusive };

inline const char* to_string(Band b) {
  switch (b) {
    case Band::inside: return "inside";
    case Band::outside: return "outside";
    case Band::inconclusive: return "inconclusive";
  }
  return "?";
}

inline const char* to_string(Interpretation i) {
  switch (i) {
    case Interpretation::certifies_membership: return "certifies_membership";
    case Interpretation::certifies_nonmembership: return "certifies_nonmembership";
    case Interpretation::inconclusive: return "inconclusive";
  }
  return "?";
}

/// How a criterion relates to the set it reports on.
enum class Character {
  exact,  // both bands decide
  outer,  // relaxation: only "outside" decides
  inner,  // restriction: only "inside" decides
};

struct CriterionVerdict {
  std::string criterion;   // e.g. "ppt", "schmidt(D=2,k=1)"
  std::string target_set;  // set the interpretation refers to
  double margin = std::numeric_limits<double>::quiet_NaN();
  Band band = Band::inconclusive;
  Interpretation interpretation = Interpretation::inconclusive;
  bool solver_used = false;
  bool solver_failed = false;
  std::string solver_status = "n/a";
  int iterations = 0;
  double kkt_max = 0;  // largest relative KKT residual of the SDP, 0 for eigenvalue tests
};

inline Band band_of(double margin) {
  if (margin > kMarginBand) return Band::inside;
  if (margin < -kMarginBand) return Band::outside;
  return Band::inconclusive;
}

inline Interpretation interpret(Band band, Character c) {
  if (band == Band::inside && c != Character::outer) return Interpretation::certifies_membership;
  if (band == Band::outside && c != Character::inner) return Interpretation::certifies_nonmembership;
  return Interpretation::inconclusive;
}

inline CriterionVerdict make_verdict(std::string criterion, std::string target, double margin,
                                     Character c) {
  CriterionVerdict v;
  v.criterion = std::move(criterion);
  v.target_set = std::move(target);
  v.margin = margin;
  v.band = band_of(margin);
  v.interpretation = interpret(v.band, c);
  return v;
}

/// Thrown when an SDP would exceed the configured memory estimate.
class MemoryGuard : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class HierarchyRoute {
  automatic,  // twirl-reduced form for k <= 2, full lift otherwise
  reduced,    // k <= 2 only
  full,
};

struct CriteriaOptions {
  sdp::SolverOptions solver;
  double memory_cap_bytes = 4e9;
  HierarchyRoute route = HierarchyRoute::automatic;
};

// ---------------------------------------------------------------------------
// Eigenvalue criteria.

inline CriterionVerdict ppt_check(const BipartiteState& rho) {
  const double m = min_eigenvalue(partial_transpose(rho.rho, rho.layout(), Side::right), 1e-9);
  return make_verdict("ppt", "S^1", m, Character::exact);
}

/// max over the two sides of lambda_min(rho_A (x) I - rho), lambda_min(I (x) rho_B - rho).
inline CriterionVerdict reduction_check(const BipartiteState& rho) {
  const ComplexMatrix ra = marginal_a(rho);
  const ComplexMatrix rb = marginal_b(rho);
  const double left = min_eigenvalue(kron(ra, identity(rho.d_b)) - rho.rho, 1e-9);
  const double right = min_eigenvalue(kron(identity(rho.d_a), rb) - rho.rho, 1e-9);
  return make_verdict("reduction", "U_2", std::max(left, right), Character::inner);
}

// ---------------------------------------------------------------------------
// Fidelity witnesses.

/// Sum of the D-1 largest squared Schmidt coefficients of `target`.
inline double min_fidelity(const PureBipartiteState& target, int D) {
  if (D < 2) throw std::invalid_argument("min_fidelity: D must be >= 2");
  if (D > std::min(target.d_a, target.d_b) + 1)
    throw std::invalid_argument("min_fidelity: D exceeds min(d_a, d_b) + 1");
  return schmidt_decompose(target).spectrum.head_sum(D - 1);
}

struct FidelityWitness {
  PureBipartiteState target;
  int dimension = 2;
  double fidelity_bound = 1.0;

  void validate() const {
    target.validate();
    if (dimension < 2) throw std::invalid_argument("FidelityWitness: dimension must be >= 2");
    if (fidelity_bound < min_fidelity(target, dimension) - 1e-12)
      throw std::invalid_argument("FidelityWitness: fidelity bound below the minimal valid F");
  }
};

inline FidelityWitness optimal_witness(const PureBipartiteState& target, int D) {
  return {target, D, min_fidelity(target, D)};
}

/// tr[(F I - |psi><psi|) rho]; negative certifies rho is not in S_{D-1}.
inline double eval_fidelity_witness(const FidelityWitness& w, const BipartiteState& rho) {
  if (w.target.d_a != rho.d_a || w.target.d_b != rho.d_b)
    throw std::invalid_argument("eval_fidelity_witness: dimension mismatch");
  return w.fidelity_bound * rho.rho.trace().real() - fidelity(rho, w.target);
}

// ---------------------------------------------------------------------------
// SDP building blocks.

namespace detail {

/// A Hermitian matrix variable: one real LMI variable per diagonal entry and
/// two (real, imaginary part) per upper off-diagonal entry.
class HermitianVar {
 public:
  HermitianVar() = default;
  HermitianVar(sdp::LmiProblem& lmi, int n) : n_(n), pos_(static_cast<std::size_t>(n) * n, -1) {
    for (int r = 0; r < n; ++r)
      for (int c = r; c < n; ++c) {
        pos_[static_cast<std::size_t>(r) * n + c] = lmi.add_variable();
        if (r != c) lmi.add_variable();
      }
  }

  [[nodiscard]] int dim() const { return n_; }

  /// Calls f(variable, coefficient) for X(r, c) * scale = sum coefficient * y.
  template <class F>
  void terms(int r, int c, cplx scale, F&& f) const {
    if (r == c) {
      f(pos_[static_cast<std::size_t>(r) * n_ + r], scale);
    } else if (r < c) {
      const int v = pos_[static_cast<std::size_t>(r) * n_ + c];
      f(v, scale);
      f(v + 1, scale * cplx(0, 1));
    } else {
      const int v = pos_[static_cast<std::size_t>(c) * n_ + r];
      f(v, scale);
      f(v + 1, scale * cplx(0, -1));
    }
  }

  [[nodiscard]] ComplexMatrix value(const RealVector& y) const {
    ComplexMatrix m(n_, n_);
    for (int r = 0; r < n_; ++r)
      for (int c = 0; c < n_; ++c) {
        cplx s = 0;
        terms(r, c, 1.0, [&](int v, cplx k) { s += k * y(v); });
        m(r, c) = s;
      }
    return m;
  }

 private:
  int n_ = 0;
  std::vector<int> pos_;
};

/// Sparse complex linear form over LMI variables.
class LinearForm {
 public:
  void add(int var, cplx coeff) {
    if (var >= static_cast<int>(slot_.size())) slot_.resize(var + 1, -1);
    if (slot_[var] < 0) {
      slot_[var] = static_cast<int>(terms_.size());
      terms_.push_back({var, 0.0});
    }
    terms_[slot_[var]].second += coeff;
  }

  void clear() {
    for (const auto& t : terms_) slot_[t.first] = -1;
    terms_.clear();
  }

  [[nodiscard]] const std::vector<std::pair<int, cplx>>& terms() const { return terms_; }
  [[nodiscard]] std::vector<std::pair<int, double>> real_part() const { return part(true); }
  [[nodiscard]] std::vector<std::pair<int, double>> imag_part() const { return part(false); }

 private:
  [[nodiscard]] std::vector<std::pair<int, double>> part(bool re) const {
    std::vector<std::pair<int, double>> out;
    for (const auto& [v, c] : terms_) {
      const double x = re ? c.real() : c.imag();
      if (std::abs(x) > 1e-15) out.emplace_back(v, x);
    }
    return out;
  }

  std::vector<int> slot_;
  std::vector<std::pair<int, cplx>> terms_;
};

/// Imposes  L(r, c) = target(r, c)  for a Hermitian linear map given entrywise
/// by `entry(r, c, form)`, on the real and imaginary parts of the upper triangle.
template <class EntryFn>
void add_hermitian_equalities(sdp::LmiProblem& lmi, const ComplexMatrix& target, EntryFn&& entry) {
  LinearForm form;
  const long n = target.rows();
  for (long r = 0; r < n; ++r)
    for (long c = r; c < n; ++c) {
      form.clear();
      entry(static_cast<int>(r), static_cast<int>(c), form);
      lmi.add_equality(form.real_part(), target(r, c).real());
      if (r != c) lmi.add_equality(form.imag_part(), target(r, c).imag());
    }
}

/// Extension operator on C^{d1} (x) (C^{d2})^{(x)k} supported on the symmetric
/// subspace of the k copies: (I (x) V) Omega (I (x) V)^dagger with Omega a
/// Hermitian variable on C^{d1} (x) Sym^k(C^{d2}).
class SymmetricExtension {
 public:
  SymmetricExtension(sdp::LmiProblem& lmi, int d1, int d2, int k) : d1_(d1), d2_(d2), k_(k) {
    if (d1 < 1 || d2 < 1 || k < 1) throw std::invalid_argument("extension: bad dimensions");
    ComplexMatrix v = sym_isometry(d2, k);
    sym_ = static_cast<int>(v.cols());
    copies_dim_ = static_cast<int>(v.rows());
    col_of_.resize(copies_dim_);
    amp_.resize(copies_dim_);
    for (int s = 0; s < copies_dim_; ++s) {
      for (int j = 0; j < sym_; ++j)
        if (std::abs(v(s, j)) > 0) {
          col_of_[s] = j;
          amp_[s] = v(s, j).real();
          break;
        }
    }
    omega_ = HermitianVar(lmi, d1 * sym_);
  }

  [[nodiscard]] int ext_dim() const { return d1_ * copies_dim_; }
  [[nodiscard]] int omega_dim() const { return d1_ * sym_; }
  [[nodiscard]] const HermitianVar& omega() const { return omega_; }

  /// Entry (p, q) of the extension operator.
  template <class F>
  void ext_terms(int p, int q, cplx scale, F&& f) const {
    const int a = p / copies_dim_, s = p % copies_dim_;
    const int b = q / copies_dim_, t = q % copies_dim_;
    omega_.terms(a * sym_ + col_of_[s], b * sym_ + col_of_[t], scale * amp_[s] * amp_[t], f);
  }

  /// Entry (x, y) of the marginal on party 1 and the first copy.
  template <class F>
  void marginal_terms(int x, int y, cplx scale, F&& f) const {
    const int rest = copies_dim_ / d2_;
    const int a = x / d2_, b = x % d2_, a2 = y / d2_, b2 = y % d2_;
    for (int t = 0; t < rest; ++t)
      ext_terms(a * copies_dim_ + b * rest + t, a2 * copies_dim_ + b2 * rest + t, scale, f);
  }

  /// Adds the PSD block for Omega itself.
  int add_omega_block(sdp::LmiProblem& lmi, bool slack) const {
    const int n = omega_dim();
    const int blk = lmi.add_block(n, true, slack);
    for (int r = 0; r < n; ++r)
      for (int c = r; c < n; ++c)
        omega_.terms(r, c, 1.0, [&](int v, cplx k) { lmi.add_coefficient(v, blk, r, c, k); });
    return blk;
  }

  /// Adds the block  (extension)^{T on the last m copies}, compressed to
  /// C^{d1} (x) Sym^{k-m} (x) Sym^m where it is supported; the full-size
  /// operator always has a kernel off that subspace.
  int add_pt_block(sdp::LmiProblem& lmi, int m, bool slack) const {
    const ComplexMatrix w = kron(sym_isometry_or_one(d2_, k_ - m), sym_isometry_or_one(d2_, m));
    const int cols = static_cast<int>(w.cols());
    std::vector<std::vector<std::pair<int, double>>> support(cols);
    for (int s = 0; s < copies_dim_; ++s)
      for (int j = 0; j < cols; ++j)
        if (std::abs(w(s, j)) > 0) support[j].emplace_back(s, w(s, j).real());
    const int n = d1_ * cols;
    const int blk = lmi.add_block(n, true, slack);
    std::vector<int> dims(k_, d2_);
    std::vector<int> rd, cd;
    for (int p = 0; p < n; ++p) {
      const int a = p / cols, pc = p % cols;
      for (int q = p; q < n; ++q) {
        const int b = q / cols, qc = q % cols;
        for (const auto& [s, ws] : support[pc]) {
          schmidt_scope::detail::split_index(s, dims, rd);
          for (const auto& [t, wt] : support[qc]) {
            schmidt_scope::detail::split_index(t, dims, cd);
            std::vector<int> r2 = rd, c2 = cd;
            for (int j = k_ - m; j < k_; ++j) std::swap(r2[j], c2[j]);
            const int ss = static_cast<int>(schmidt_scope::detail::join_index(r2, dims));
            const int tt = static_cast<int>(schmidt_scope::detail::join_index(c2, dims));
            ext_terms(a * copies_dim_ + ss, b * copies_dim_ + tt, ws * wt,
                      [&](int v, cplx k) { lmi.add_coefficient(v, blk, p, q, k); });
          }
        }
      }
    }
    return blk;
  }

  static ComplexMatrix sym_isometry_or_one(int d, int k) {
    return k == 0 ? ComplexMatrix::Identity(1, 1) : sym_isometry(d, k);
  }

  static int pt_block_dim(int d1, int d2, int k, int m) {
    return d1 * static_cast<int>(schmidt_scope::detail::binomial(d2 + k - m - 1, k - m) *
                                 schmidt_scope::detail::binomial(d2 + m - 1, m));
  }

  /// Memory estimate (bytes) for an SDP carrying this extension and
  /// `pt_blocks` partial-transpose blocks.
  static double estimate_bytes(int d1, int d2, int k, int pt_blocks) {
    const double sym = static_cast<double>(schmidt_scope::detail::binomial(d2 + k - 1, k));
    const double nomega = d1 * sym;
    const double m = nomega * nomega + 2;
    double next = 0;
    for (int m = 1; m <= pt_blocks; ++m) next = std::max(next, static_cast<double>(pt_block_dim(d1, d2, k, m)));
    const double block_bytes = 12.0 * 8.0 * (4 * nomega * nomega + pt_blocks * 4 * next * next);
    // Schur complement and its factor, plus stored coefficient entries.
    const double entry_bytes = 32.0 * m * (1 + pt_blocks) * 4 * std::max(1.0, next / nomega);
    return 2 * 8.0 * m * m + block_bytes + entry_bytes;
  }

 private:
  int d1_, d2_, k_;
  int sym_ = 0;
  int copies_dim_ = 0;
  std::vector<int> col_of_;
  std::vector<double> amp_;
  HermitianVar omega_;
};

inline ComplexMatrix swap_parties(const ComplexMatrix& m, int d_a, int d_b) {
  return permute_subsystems(m, {d_a, d_b}, {1, 0});
}

inline void fill_solver_fields(CriterionVerdict& v, const sdp::LmiProblem::Result& r) {
  v.solver_used = true;
  v.solver_status = sdp::to_string(r.solution.status);
  v.iterations = r.solution.iterations;
  v.kkt_max = std::max({r.solution.kkt.primal_feas, r.solution.kkt.dual_feas, r.solution.kkt.duality_gap});
  if (r.solution.status != sdp::SdpStatus::optimal) {
    v.solver_failed = true;
    v.band = Band::inconclusive;
    v.interpretation = Interpretation::inconclusive;
  }
}

inline void guard_memory(double bytes, const CriteriaOptions& opt, const std::string& what) {
  if (bytes > opt.memory_cap_bytes)
    throw MemoryGuard(what + ": estimated " + std::to_string(bytes / 1e9) +
                      " GB exceeds the memory cap of " + std::to_string(opt.memory_cap_bytes / 1e9) +
                      " GB");
}

// The extension block carries no slack, so a state with no PSD extension at
// all makes the margin problem infeasible and the solve ends on a ray or a
// breakdown. Re-solve with slack on the extension too; that problem is always
// feasible, and its margin is negative whenever the first one was infeasible.
template <class Build>
sdp::LmiProblem::Result solve_with_omega_fallback(const CriteriaOptions& opt, Build&& build) {
  sdp::LmiProblem lmi;
  build(lmi, false);
  auto res = lmi.solve_margin(opt.solver);
  if (res.solution.status == sdp::SdpStatus::optimal) return res;
  sdp::LmiProblem relaxed;
  build(relaxed, true);
  return relaxed.solve_margin(opt.solver);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DPS hierarchy.

/// Feasibility margin of a PPT k-symmetric extension of rho, taken on the
/// party with the smaller dimension. Slack sits on the partial-transpose blocks.
inline CriterionVerdict dps_margin(const BipartiteState& rho, int k, const CriteriaOptions& opt = {}) {
  if (k < 1) throw std::invalid_argument("dps_margin: k must be >= 1");
  rho.validate();
  const bool extend_a = rho.d_a < rho.d_b;
  const int d1 = extend_a ? rho.d_b : rho.d_a;
  const int d2 = extend_a ? rho.d_a : rho.d_b;
  const ComplexMatrix target = extend_a ? detail::swap_parties(rho.rho, rho.d_a, rho.d_b) : rho.rho;
  detail::guard_memory(detail::SymmetricExtension::estimate_bytes(d1, d2, k, k), opt, "dps_margin");

  auto res = detail::solve_with_omega_fallback(opt, [&](sdp::LmiProblem& lmi, bool omega_slack) {
    detail::SymmetricExtension ext(lmi, d1, d2, k);
    // At k = 1 the extension is rho itself, already known to be PSD.
    if (k > 1) ext.add_omega_block(lmi, omega_slack);
    for (int m = 1; m <= k; ++m) ext.add_pt_block(lmi, m, true);
    detail::add_hermitian_equalities(lmi, target, [&](int r, int c, detail::LinearForm& f) {
      ext.marginal_terms(r, c, 1.0, [&](int v, cplx x) { f.add(v, x); });
    });
  });
  auto v = make_verdict("dps(k=" + std::to_string(k) + ")", "S", res.margin, Character::outer);
  detail::fill_solver_fields(v, res);
  return v;
}

// ---------------------------------------------------------------------------
// Schmidt-number hierarchy.

/// Pi_D = I_A (x) |psi+_D>_{A'B'} (x) I_B as a (d_a D D d_b) x (d_a d_b) matrix.
inline ComplexMatrix pi_operator(int d_a, int d_b, int D) {
  const long rows = static_cast<long>(d_a) * D * D * d_b;
  ComplexMatrix pi = ComplexMatrix::Zero(rows, static_cast<long>(d_a) * d_b);
  for (int a = 0; a < d_a; ++a)
    for (int b = 0; b < d_b; ++b)
      for (int j = 0; j < D; ++j) pi(((static_cast<long>(a) * D + j) * D + j) * d_b + b, a * d_b + b) = 1.0;
  return pi;
}

namespace detail {

// k = 1 after twirling the ancillas with U (x) conj(U): omega = X (x) (I - P) +
// (sigma/D) (x) P with P the normalized projector onto psi+_D. Then
//   omega >= 0          <=> X >= 0,
//   tr omega = D        <=> tr X = 1/D,
//   omega^Gamma on the symmetric/antisymmetric ancilla subspaces
//                        =  ((D-1) X + sigma/D)^Gamma / D,  ((D+1) X - sigma/D)^Gamma / D.
inline CriterionVerdict schmidt_reduced(const BipartiteState& sigma, int D, const CriteriaOptions& opt) {
  const int da = sigma.d_a, db = sigma.d_b, n = da * db;
  sdp::LmiProblem lmi;
  const ComplexMatrix sg = partial_transpose(sigma.rho, sigma.layout(), Side::right);
  HermitianVar x;
  if (D > 1) {
    x = HermitianVar(lmi, n);
    const int xb = lmi.add_block(n, true, false);
    for (int r = 0; r < n; ++r)
      for (int c = r; c < n; ++c)
        x.terms(r, c, 1.0, [&](int v, cplx k) { lmi.add_coefficient(v, xb, r, c, k); });
    LinearForm tr;
    for (int r = 0; r < n; ++r) x.terms(r, r, 1.0, [&](int v, cplx k) { tr.add(v, k); });
    lmi.add_equality(tr.real_part(), 1.0 / D);
  }
  // Partial transpose on B of X, entry (p, q) = X(a b', a' b).
  auto pt_index = [&](int p, int q) {
    const int a = p / db, b = p % db, a2 = q / db, b2 = q % db;
    return std::pair{a * db + b2, a2 * db + b};
  };
  auto add_pt_block = [&](double x_coeff, double sigma_coeff) {
    const int blk = lmi.add_block(n, true, true);
    for (int p = 0; p < n; ++p)
      for (int q = p; q < n; ++q) {
        lmi.add_constant(blk, p, q, sigma_coeff * sg(p, q));
        if (D > 1 && x_coeff != 0.0) {
          auto [r, c] = pt_index(p, q);
          x.terms(r, c, x_coeff, [&](int v, cplx k) { lmi.add_coefficient(v, blk, p, q, k); });
        }
      }
  };
  const double dd = D;
  add_pt_block((dd - 1) / dd, 1.0 / (dd * dd));
  if (D > 1) add_pt_block((dd + 1) / dd, -1.0 / (dd * dd));
  auto res = lmi.solve_margin(opt.solver);
  auto v = make_verdict("schmidt(D=" + std::to_string(D) + ",k=1)", "S_" + std::to_string(D),
                        res.margin, Character::outer);
  fill_solver_fields(v, res);
  return v;
}

inline CriterionVerdict schmidt_full(const BipartiteState& sigma, int D, int k, const CriteriaOptions& opt) {
  // Parties of omega: AA' (d_a D) and B'B (D d_b); copies go to the smaller one.
  const bool swap = sigma.d_a * D < D * sigma.d_b;
  const int da = swap ? sigma.d_b : sigma.d_a;
  const int db = swap ? sigma.d_a : sigma.d_b;
  const ComplexMatrix target = swap ? swap_parties(sigma.rho, sigma.d_a, sigma.d_b) : sigma.rho;
  const int d1 = da * D, d2 = D * db;
  guard_memory(SymmetricExtension::estimate_bytes(d1, d2, k, k), opt, "schmidt_hierarchy_margin");

  auto res = solve_with_omega_fallback(opt, [&](sdp::LmiProblem& lmi, bool omega_slack) {
    SymmetricExtension ext(lmi, d1, d2, k);
    ext.add_omega_block(lmi, omega_slack);
    for (int m = 1; m <= k; ++m) ext.add_pt_block(lmi, m, true);
    // (Pi^dagger omega Pi)(a b, a' b') = sum_{j, j'} omega((a j)(j b), (a' j')(j' b')).
    add_hermitian_equalities(lmi, target, [&](int r, int c, LinearForm& f) {
      const int a = r / db, b = r % db, a2 = c / db, b2 = c % db;
      for (int j = 0; j < D; ++j)
        for (int j2 = 0; j2 < D; ++j2) {
          const int x = (a * D + j) * d2 + (j * db + b);
          const int y = (a2 * D + j2) * d2 + (j2 * db + b2);
          ext.marginal_terms(x, y, 1.0, [&](int v, cplx w) { f.add(v, w); });
        }
    });
    LinearForm tr;
    for (int x = 0; x < d1 * d2; ++x) ext.marginal_terms(x, x, 1.0, [&](int v, cplx w) { tr.add(v, w); });
    lmi.add_equality(tr.real_part(), static_cast<double>(D));
  });
  auto v = make_verdict("schmidt(D=" + std::to_string(D) + ",k=" + std::to_string(k) + ")",
                        "S_" + std::to_string(D), res.margin, Character::outer);
  fill_solver_fields(v, res);
  return v;
}

// ---- k = 2 with the ancillas twirled.
//
// Omega lives on sys (x) anc with sys = A B1 B2 and anc = A' B'1 B'2. The
// problem is invariant under U on A' and conj(U) on both B' copies, so Omega
// can be taken in the commutant: on each irreducible component J of that
// algebra, Omega = X_J (x) I_{d_J} with X_J on sys (x) C^{m_J}. The partial
// transposes move Omega into the commutant of a different representation and
// are block diagonalized the same way.

struct AncillaSector {
  IrrepComponent comp;
  std::vector<int> parity;  // eigenvalue of the B' copy swap per copy, bosonic only
};

inline std::vector<AncillaSector> ancilla_sectors(int D, const std::vector<bool>& conj, bool bosonic) {
  std::vector<AncillaSector> out;
  const ComplexMatrix swap = permutation_operator(D, {0, 2, 1});
  for (const auto& c : decompose_star_algebra(unitary_commutant_span(D, conj))) {
    AncillaSector s;
    if (!bosonic) {
      s.comp = c;
      out.push_back(std::move(s));
      continue;
    }
    ComplexMatrix tau = multiplicity_matrix(c, swap);
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(ComplexMatrix(0.5 * (tau + tau.adjoint())));
    s.comp = rotate_multiplicity(c, es.eigenvectors());
    for (long t = 0; t < es.eigenvalues().size(); ++t) {
      const double e = es.eigenvalues()(t);
      if (std::abs(std::abs(e) - 1.0) > 1e-8) throw std::runtime_error("ancilla_sectors: swap is not an involution");
      s.parity.push_back(e > 0 ? 1 : -1);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Sparse columns of the isometry onto the block's support, over the index
// sigma * m + t. Bosonic blocks keep the +1 eigenspace of the joint copy swap:
// sym(B1 B2) with even copies, antisym(B1 B2) with odd ones.
using SparseVec = std::vector<std::pair<int, double>>;

inline std::vector<SparseVec> sector_columns(int da, int db, const AncillaSector& s, bool bosonic) {
  const int m = s.comp.multiplicity();
  auto idx = [&](int a, int b1, int b2, int t) { return ((a * db + b1) * db + b2) * m + t; };
  std::vector<SparseVec> cols;
  const double h = 1.0 / std::sqrt(2.0);
  for (int t = 0; t < m; ++t)
    for (int a = 0; a < da; ++a)
      for (int b1 = 0; b1 < db; ++b1)
        for (int b2 = bosonic ? b1 : 0; b2 < db; ++b2) {
          if (!bosonic) {
            cols.push_back({{idx(a, b1, b2, t), 1.0}});
          } else if (s.parity[t] > 0) {
            if (b1 == b2) cols.push_back({{idx(a, b1, b1, t), 1.0}});
            else cols.push_back({{idx(a, b1, b2, t), h}, {idx(a, b2, b1, t), h}});
          } else if (b1 != b2) {
            cols.push_back({{idx(a, b1, b2, t), h}, {idx(a, b2, b1, t), -h}});
          }
        }
  return cols;
}

inline std::vector<SparseVec> transpose_columns(const std::vector<SparseVec>& cols, int rows) {
  std::vector<SparseVec> out(rows);
  for (int c = 0; c < static_cast<int>(cols.size()); ++c)
    for (const auto& [r, v] : cols[c]) out[r].emplace_back(c, v);
  return out;
}

// sum_M |J M t><J M s|
inline ComplexMatrix matrix_unit(const IrrepComponent& c, int t, int s) {
  return c.copies[t] * c.copies[s].adjoint();
}

inline CriterionVerdict schmidt_twirled_k2(const BipartiteState& sigma, int D, const CriteriaOptions& opt) {
  const bool swap = sigma.d_a < sigma.d_b;
  const int da = swap ? sigma.d_b : sigma.d_a;
  const int db = swap ? sigma.d_a : sigma.d_b;
  const ComplexMatrix target = swap ? swap_parties(sigma.rho, sigma.d_a, sigma.d_b) : sigma.rho;
  const int ns = da * db * db;
  const std::vector<int> sys_dims{da, db, db};

  const auto om = ancilla_sectors(D, {false, true, true}, true);
  struct PtKind {
    std::vector<AncillaSector> sectors;
    std::vector<bool> sys_t, anc_t;
    bool bosonic;
  };
  std::vector<PtKind> pts;
  pts.push_back({ancilla_sectors(D, {false, true, false}, false), {false, false, true}, {false, false, true}, false});
  pts.push_back({ancilla_sectors(D, {false, false, false}, true), {false, true, true}, {false, true, true}, true});

  std::vector<std::vector<SparseVec>> om_rows;
  std::vector<int> om_size;
  double nvars = 0;
  for (const auto& s : om) {
    const auto cols = sector_columns(da, db, s, true);
    om_size.push_back(static_cast<int>(cols.size()));
    om_rows.push_back(transpose_columns(cols, ns * s.comp.multiplicity()));
    nvars += static_cast<double>(cols.size()) * cols.size();
  }
  guard_memory(3 * 8.0 * nvars * nvars, opt, "schmidt_hierarchy_margin");

  // Coupling of Omega's matrix units to each partial-transpose sector, and to
  // the marginal functional K = |psi+><psi+|_{A'B'1} (x) I_{B'2}.
  const std::vector<int> anc_dims{D, D, D};
  ComplexMatrix psi_plus = ComplexMatrix::Zero(static_cast<long>(D) * D, 1);
  for (int j = 0; j < D; ++j) psi_plus(static_cast<long>(j) * D + j, 0) = 1.0;
  const ComplexMatrix kmarg = kron(ComplexMatrix(psi_plus * psi_plus.adjoint()), identity(D));
  std::vector<ComplexMatrix> kappa;
  // lambda[pt][J][J'][t * m + s] = multiplicity matrix of (E^J_ts)^Gamma on J'.
  std::vector<std::vector<std::vector<std::vector<ComplexMatrix>>>> lambda(pts.size());
  for (std::size_t j = 0; j < om.size(); ++j) {
    const int m = om[j].comp.multiplicity();
    ComplexMatrix kj(m, m);
    for (int t = 0; t < m; ++t)
      for (int s2 = 0; s2 < m; ++s2) kj(t, s2) = (matrix_unit(om[j].comp, t, s2) * kmarg).trace();
    kappa.push_back(kj);
  }
  for (std::size_t k = 0; k < pts.size(); ++k) {
    lambda[k].resize(om.size());
    for (std::size_t j = 0; j < om.size(); ++j) {
      const int m = om[j].comp.multiplicity();
      lambda[k][j].resize(pts[k].sectors.size());
      for (int t = 0; t < m; ++t)
        for (int s2 = 0; s2 < m; ++s2) {
          const ComplexMatrix e = partial_transpose_factors(matrix_unit(om[j].comp, t, s2), anc_dims, pts[k].anc_t);
          for (std::size_t jp = 0; jp < pts[k].sectors.size(); ++jp)
            lambda[k][j][jp].push_back(multiplicity_matrix(pts[k].sectors[jp].comp, e));
        }
    }
  }

  auto res = solve_with_omega_fallback(opt, [&](sdp::LmiProblem& lmi, bool omega_slack) {
    std::vector<HermitianVar> y;
    for (std::size_t j = 0; j < om.size(); ++j) {
      y.emplace_back(lmi, om_size[j]);
      const int n = om_size[j];
      const int blk = lmi.add_block(n, true, omega_slack);
      for (int r = 0; r < n; ++r)
        for (int c = r; c < n; ++c) y[j].terms(r, c, 1.0, [&](int v, cplx k) { lmi.add_coefficient(v, blk, r, c, k); });
    }
    // X_J(i, j) through the support isometry.
    auto x_terms = [&](std::size_t j, int i1, int i2, cplx scale, LinearForm& f) {
      for (const auto& [r, a] : om_rows[j][i1])
        for (const auto& [c, b] : om_rows[j][i2]) y[j].terms(r, c, scale * a * b, [&](int v, cplx k) { f.add(v, k); });
    };

    LinearForm form;
    std::vector<int> rd, cd;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const auto& pk = pts[k];
      for (std::size_t jp = 0; jp < pk.sectors.size(); ++jp) {
        const int mp = pk.sectors[jp].comp.multiplicity();
        const auto cols = sector_columns(da, db, pk.sectors[jp], pk.bosonic);
        const int n = static_cast<int>(cols.size());
        if (n == 0) continue;
        const int blk = lmi.add_block(n, true, true);
        for (int p = 0; p < n; ++p)
          for (int q = p; q < n; ++q) {
            form.clear();
            for (const auto& [ip, a] : cols[p])
              for (const auto& [iq, b] : cols[q]) {
                schmidt_scope::detail::split_index(ip / mp, sys_dims, rd);
                schmidt_scope::detail::split_index(iq / mp, sys_dims, cd);
                const int tp = ip % mp, tq = iq % mp;
                for (int f = 0; f < 3; ++f)
                  if (pk.sys_t[f]) std::swap(rd[f], cd[f]);
                const int s1 = static_cast<int>(schmidt_scope::detail::join_index(rd, sys_dims));
                const int s2 = static_cast<int>(schmidt_scope::detail::join_index(cd, sys_dims));
                for (std::size_t j = 0; j < om.size(); ++j) {
                  const int m = om[j].comp.multiplicity();
                  for (int t = 0; t < m; ++t)
                    for (int u = 0; u < m; ++u) {
                      const cplx lam = lambda[k][j][jp][t * m + u](tp, tq);
                      if (std::abs(lam) < 1e-13) continue;
                      x_terms(j, s1 * m + t, s2 * m + u, a * b * lam, form);
                    }
                }
              }
            for (const auto& [v, coef] : form.terms())
              if (std::abs(coef) > 1e-14) lmi.add_coefficient(v, blk, p, q, coef);
          }
      }
    }

    // Pi^dag (tr_2 Omega) Pi = sigma and tr Omega = D.
    add_hermitian_equalities(lmi, target, [&](int r, int c, LinearForm& f) {
      const int a = r / db, b = r % db, a2 = c / db, b2 = c % db;
      for (std::size_t j = 0; j < om.size(); ++j) {
        const int m = om[j].comp.multiplicity();
        for (int beta = 0; beta < db; ++beta) {
          const int s1 = (a * db + b) * db + beta, s2 = (a2 * db + b2) * db + beta;
          for (int t = 0; t < m; ++t)
            for (int u = 0; u < m; ++u) {
              const cplx kv = kappa[j](t, u);
              if (std::abs(kv) < 1e-13) continue;
              x_terms(j, s1 * m + t, s2 * m + u, kv, f);
            }
        }
      }
    });
    LinearForm tr;
    for (std::size_t j = 0; j < om.size(); ++j)
      for (int r = 0; r < om_size[j]; ++r)
        y[j].terms(r, r, static_cast<double>(om[j].comp.dim), [&](int v, cplx k) { tr.add(v, k); });
    lmi.add_equality(tr.real_part(), static_cast<double>(D));
  });
  auto v = make_verdict("schmidt(D=" + std::to_string(D) + ",k=2)", "S_" + std::to_string(D), res.margin,
                        Character::outer);
  fill_solver_fields(v, res);
  return v;
}

}  // namespace detail

/// Feasibility margin of sigma in S_D^k. Outside certifies Schmidt number > D.
inline CriterionVerdict schmidt_hierarchy_margin(const BipartiteState& sigma, int D, int k,
                                                 const CriteriaOptions& opt = {}) {
  if (D < 1) throw std::invalid_argument("schmidt_hierarchy_margin: D must be >= 1");
  if (k < 1) throw std::invalid_argument("schmidt_hierarchy_margin: k must be >= 1");
  sigma.validate();
  HierarchyRoute route = opt.route;
  if (route == HierarchyRoute::automatic) route = k <= 2 ? HierarchyRoute::reduced : HierarchyRoute::full;
  if (route == HierarchyRoute::reduced) {
    if (k > 2) throw std::invalid_argument("schmidt_hierarchy_margin: reduced route requires k <= 2");
    return k == 1 ? detail::schmidt_reduced(sigma, D, opt) : detail::schmidt_twirled_k2(sigma, D, opt);
  }
  return detail::schmidt_full(sigma, D, k, opt);
}

// ---------------------------------------------------------------------------
// Unfaithfulness inner approximation.

/// Feasibility margin of: mu in [0, 1], M_A, M_B >= 0 with
///   M_A (x) I + I (x) M_B >= rho,
///   tr M_A = mu (D-1),      M_A <= mu I,
///   tr M_B = (1-mu)(D-1),   M_B <= (1-mu) I.
/// Slack sits on the first inequality. A side whose dimension equals D-1 is
/// pinned to M = mu I (resp. (1-mu) I); a side with dimension below D-1 forces
/// its weight to zero.
inline CriterionVerdict unfaithful_margin(const BipartiteState& rho, int D, const CriteriaOptions& opt = {}) {
  if (D < 2) throw std::invalid_argument("unfaithful_margin: D must be >= 2");
  rho.validate();
  const int da = rho.d_a, db = rho.d_b, n = da * db;
  const int r = D - 1;
  if (r > da && r > db)
    throw std::invalid_argument("unfaithful_margin: D - 1 exceeds both local dimensions");
  enum class Kind { free, pinned, zero };
  const Kind ka = r < da ? Kind::free : (r == da ? Kind::pinned : Kind::zero);
  const Kind kb = r < db ? Kind::free : (r == db ? Kind::pinned : Kind::zero);

  sdp::LmiProblem lmi;
  // mu is a variable unless one side is forced to zero weight.
  const bool mu_fixed = ka == Kind::zero || kb == Kind::zero;
  const double mu_value = ka == Kind::zero ? 0.0 : 1.0;
  int mu = -1;
  if (!mu_fixed) {
    mu = lmi.add_variable();
    const int lo = lmi.add_block(1, false, false);
    lmi.add_coefficient(mu, lo, 0, 0, 1.0);
    const int hi = lmi.add_block(1, false, false);
    lmi.add_constant(hi, 0, 0, 1.0);
    lmi.add_coefficient(mu, hi, 0, 0, -1.0);
  }
  const int main_block = lmi.add_block(n, true, true);
  for (int p = 0; p < n; ++p)
    for (int q = p; q < n; ++q) lmi.add_constant(main_block, p, q, -rho.rho(p, q));

  // Adds one side. `weight_sign` is +1 for A (weight mu) and -1 for B (weight 1 - mu).
  auto add_side = [&](Kind kind, int dim, bool side_a) {
    const int other = side_a ? db : da;
    auto main_index = [&](int i, int j, int t) {  // M_side(i, j) (x) I  embedded at copy t
      return side_a ? std::pair{i * db + t, j * db + t} : std::pair{t * db + i, t * db + j};
    };
    // weight(y) = w0 + w1 * mu
    const double w0 = side_a ? 0.0 : 1.0;
    const double w1 = side_a ? 1.0 : -1.0;
    if (kind == Kind::zero) return;
    if (kind == Kind::pinned) {
      // M = weight * I contributes weight * I_AB to the main block.
      for (int p = 0; p < n; ++p) {
        if (mu_fixed) {
          const double w = w0 + w1 * mu_value;
          lmi.add_constant(main_block, p, p, w);
        } else {
          lmi.add_constant(main_block, p, p, w0);
          lmi.add_coefficient(mu, main_block, p, p, w1);
        }
      }
      return;
    }
    detail::HermitianVar m(lmi, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j)
        for (int t = 0; t < other; ++t) {
          auto [p, q] = main_index(i, j, t);
          m.terms(i, j, 1.0, [&](int v, cplx k) { lmi.add_coefficient(v, main_block, p, q, k); });
        }
    const int pos = lmi.add_block(dim, true, false);
    const int cap = lmi.add_block(dim, true, false);
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j) {
        m.terms(i, j, 1.0, [&](int v, cplx k) { lmi.add_coefficient(v, pos, i, j, k); });
        m.terms(i, j, -1.0, [&](int v, cplx k) { lmi.add_coefficient(v, cap, i, j, k); });
      }
    detail::LinearForm tr;
    for (int i = 0; i < dim; ++i) m.terms(i, i, 1.0, [&](int v, cplx k) { tr.add(v, k); });
    auto eq = tr.real_part();
    for (int i = 0; i < dim; ++i) {
      if (mu_fixed) {
        lmi.add_constant(cap, i, i, w0 + w1 * mu_value);
      } else {
        lmi.add_constant(cap, i, i, w0);
        lmi.add_coefficient(mu, cap, i, i, w1);
      }
    }
    // tr M = r * (w0 + w1 mu)
    double rhs = r * w0;
    if (mu_fixed) {
      rhs = r * (w0 + w1 * mu_value);
    } else {
      eq.emplace_back(mu, -r * w1);
    }
    lmi.add_equality(eq, rhs);
  };
  add_side(ka, da, true);
  add_side(kb, db, false);

  auto res = lmi.solve_margin(opt.solver);
  auto v = make_verdict("unfaithful(D=" + std::to_string(D) + ")", "U_" + std::to_string(D),
                        res.margin, Character::inner);
  detail::fill_solver_fields(v, res);
  return v;
}

/// Cheap sufficient test for U~_2: M_A = mu rho_A, M_B = (1 - mu) rho_B
/// satisfies every constraint but the first, so any mu with
/// lambda_min(mu rho_A (x) I + (1 - mu) I (x) rho_B - rho) > 0 certifies
/// membership. Returns the best value over a fixed grid of mu.
inline double unfaithful2_marginal_bound(const BipartiteState& rho) {
  const ComplexMatrix ra = kron(marginal_a(rho), identity(rho.d_b));
  const ComplexMatrix rb = kron(identity(rho.d_a), marginal_b(rho));
  double best = -std::numeric_limits<double>::infinity();
  for (double mu : {0.5, 0.0, 1.0, 0.25, 0.75}) {
    best = std::max(best, min_eigenvalue(mu * ra + (1 - mu) * rb - rho.rho, 1e-9));
    if (best > kMarginBand) break;
  }
  return best;
}

}  // namespace schmidt_scope
