// qstate.hpp
// Bipartite density matrices and pure states, Schmidt decomposition,
// random-state samplers (Hilbert-Schmidt, Bures, real Wishart, Haar pure),
// noisy families, embeddings, tensor powers and the JSON state format.

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "schmidt_scope/hermlin.hpp"

namespace schmidt_scope {

inline constexpr double kStateTolerance = 1e-10;
inline constexpr double kPureNormTolerance = 1e-12;

/// Raised when a state violates one of its invariants; `invariant()` names it.
class InvariantViolation : public std::invalid_argument {
 public:
  InvariantViolation(std::string invariant, const std::string& detail)
      : std::invalid_argument(invariant + ": " + detail), invariant_(std::move(invariant)) {}
  [[nodiscard]] const std::string& invariant() const { return invariant_; }

 private:
  std::string invariant_;
};

// ---------------------------------------------------------------------------
// Random streams.

/// Independent, reproducible stream of random numbers. The engine key is
/// derived from (seed, stream_index) with SplitMix64, so sample k of a survey
/// depends on nothing but the seed and k.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_index)
      : seed_(seed), stream_index_(stream_index), engine_(derive_key(seed, stream_index)) {}

  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] std::uint64_t stream_index() const { return stream_index_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; always consumes exactly two uniforms.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  cplx complex_normal() {
    const double re = normal();
    return {re, normal()};
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  static std::uint64_t derive_key(std::uint64_t seed, std::uint64_t stream_index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream_index + 0x632be59bd9b4e019ULL));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_index_;
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// State types.

struct BipartiteState {
  ComplexMatrix rho;
  int d_a = 0;
  int d_b = 0;

  [[nodiscard]] long dim() const { return static_cast<long>(d_a) * d_b; }
  [[nodiscard]] BipartitionLayout layout() const { return BipartitionLayout::bipartite(d_a, d_b); }

  /// Throws InvariantViolation naming the first violated invariant.
  void validate(double tol = kStateTolerance) const {
    if (d_a < 1 || d_b < 1)
      throw InvariantViolation("dimensions", "d_a and d_b must be positive");
    if (rho.rows() != dim() || rho.cols() != dim())
      throw InvariantViolation("shape", "rho must be (d_a*d_b) x (d_a*d_b) = " +
                                            std::to_string(dim()) + " square, got " +
                                            std::to_string(rho.rows()) + "x" +
                                            std::to_string(rho.cols()));
    for (long r = 0; r < rho.rows(); ++r)
      for (long c = 0; c < rho.cols(); ++c)
        if (!std::isfinite(rho(r, c).real()) || !std::isfinite(rho(r, c).imag()))
          throw InvariantViolation("finite", "rho has a non-finite entry");
    if (!is_hermitian(rho, tol)) throw InvariantViolation("hermitian", "rho != rho^dagger");
    const double tr = rho.trace().real();
    if (std::abs(tr - 1.0) > tol)
      throw InvariantViolation("unit_trace", "trace(rho) = " + std::to_string(tr));
    const double lmin = min_eigenvalue(rho, tol);
    if (lmin < -tol)
      throw InvariantViolation("positive_semidefinite",
                               "minimum eigenvalue " + std::to_string(lmin));
  }

  [[nodiscard]] bool valid(double tol = kStateTolerance) const {
    try {
      validate(tol);
      return true;
    } catch (const InvariantViolation&) {
      return false;
    }
  }
};

struct PureBipartiteState {
  ComplexVector amplitudes;
  int d_a = 0;
  int d_b = 0;

  void validate(double tol = kPureNormTolerance) const {
    if (d_a < 1 || d_b < 1)
      throw InvariantViolation("dimensions", "d_a and d_b must be positive");
    if (amplitudes.size() != static_cast<long>(d_a) * d_b)
      throw InvariantViolation("shape", "amplitude count must equal d_a*d_b");
    const double nrm = amplitudes.norm();
    if (std::abs(nrm - 1.0) > tol)
      throw InvariantViolation("unit_norm", "norm = " + std::to_string(nrm));
  }
};

/// Builds a pure state, normalizing the amplitudes.
inline PureBipartiteState make_pure(ComplexVector amplitudes, int d_a, int d_b) {
  if (amplitudes.size() != static_cast<long>(d_a) * d_b)
    throw InvariantViolation("shape", "amplitude count must equal d_a*d_b");
  const double nrm = amplitudes.norm();
  if (!(nrm > 0)) throw InvariantViolation("unit_norm", "zero vector");
  PureBipartiteState p{amplitudes / nrm, d_a, d_b};
  return p;
}

/// |i j> in C^{d_a} (x) C^{d_b}.
inline PureBipartiteState basis_state(int i, int j, int d_a, int d_b) {
  if (i < 0 || j < 0 || i >= d_a || j >= d_b)
    throw std::invalid_argument("basis_state: index out of range");
  ComplexVector v = ComplexVector::Zero(static_cast<long>(d_a) * d_b);
  v(static_cast<long>(i) * d_b + j) = 1.0;
  return {v, d_a, d_b};
}

/// (1/sqrt(D)) sum_{j<D} |jj> in C^{d_a} (x) C^{d_b}.
inline PureBipartiteState maximally_entangled(int D, int d_a, int d_b) {
  if (D < 1 || D > std::min(d_a, d_b))
    throw std::invalid_argument("maximally_entangled: D must lie in [1, min(d_a, d_b)]");
  ComplexVector v = ComplexVector::Zero(static_cast<long>(d_a) * d_b);
  for (int j = 0; j < D; ++j) v(static_cast<long>(j) * d_b + j) = 1.0 / std::sqrt(D);
  return {v, d_a, d_b};
}

inline PureBipartiteState maximally_entangled(int d) { return maximally_entangled(d, d, d); }

inline BipartiteState projector_state(const PureBipartiteState& psi) {
  return {projector(psi.amplitudes), psi.d_a, psi.d_b};
}

inline BipartiteState maximally_mixed(int d_a, int d_b) {
  const long n = static_cast<long>(d_a) * d_b;
  return {identity(n) / static_cast<double>(n), d_a, d_b};
}

inline ComplexMatrix marginal_a(const BipartiteState& s) {
  return partial_trace(s.rho, s.layout(), Side::left);
}

inline ComplexMatrix marginal_b(const BipartiteState& s) {
  return partial_trace(s.rho, s.layout(), Side::right);
}

/// Expectation <psi|rho|psi>.
inline double fidelity(const BipartiteState& rho, const PureBipartiteState& psi) {
  if (rho.d_a != psi.d_a || rho.d_b != psi.d_b)
    throw std::invalid_argument("fidelity: dimension mismatch");
  return psi.amplitudes.dot(rho.rho * psi.amplitudes).real();
}

// ---------------------------------------------------------------------------
// Schmidt decomposition.

struct SchmidtSpectrum {
  std::vector<double> lambdas;  // squared Schmidt coefficients, descending

  /// Sum of the `count` largest coefficients.
  [[nodiscard]] double head_sum(int count) const {
    double s = 0;
    for (int i = 0; i < count && i < static_cast<int>(lambdas.size()); ++i) s += lambdas[i];
    return s;
  }

  [[nodiscard]] int rank(double tol = 1e-12) const {
    int r = 0;
    for (double l : lambdas)
      if (l > tol) ++r;
    return r;
  }
};

struct SchmidtDecomposition {
  SchmidtSpectrum spectrum;
  ComplexMatrix left;   // d_a x r, columns |phi_j>
  ComplexMatrix right;  // d_b x r, columns |xi_j>
};

/// Coefficient matrix C(i, j) = <ij|psi>.
inline ComplexMatrix coefficient_matrix(const PureBipartiteState& psi) {
  ComplexMatrix c(psi.d_a, psi.d_b);
  for (int i = 0; i < psi.d_a; ++i)
    for (int j = 0; j < psi.d_b; ++j) c(i, j) = psi.amplitudes(static_cast<long>(i) * psi.d_b + j);
  return c;
}

/// psi = sum_j sqrt(lambda_j) |phi_j>|xi_j>.
inline SchmidtDecomposition schmidt_decompose(const PureBipartiteState& psi) {
  psi.validate();
  SvdResult s = svd(coefficient_matrix(psi));
  const long r = s.singular_values.size();
  SchmidtDecomposition out;
  out.spectrum.lambdas.resize(r);
  for (long j = 0; j < r; ++j) out.spectrum.lambdas[j] = s.singular_values(j) * s.singular_values(j);
  out.left = s.u.leftCols(r);
  out.right = s.v.leftCols(r).conjugate();
  return out;
}

// ---------------------------------------------------------------------------
// Samplers.

inline ComplexMatrix ginibre(long rows, long cols, RngStream& rng) {
  ComplexMatrix m(rows, cols);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = rng.complex_normal();
  return m;
}

/// Haar-random unitary: QR of a Ginibre matrix with the phases of R's
/// diagonal moved into Q.
inline ComplexMatrix haar_unitary(long n, RngStream& rng) {
  Eigen::MatrixXcd g = ginibre(n, n, rng);
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(g);
  Eigen::MatrixXcd q = qr.householderQ();
  const Eigen::MatrixXcd& r = qr.matrixQR();
  for (long j = 0; j < n; ++j) {
    const double a = std::abs(r(j, j));
    const cplx phase = a > 0 ? r(j, j) / a : cplx(1.0);
    q.col(j) *= phase;
  }
  return q;
}

namespace detail {

inline BipartiteState normalized_gram(const ComplexMatrix& m, int d_a, int d_b) {
  ComplexMatrix g = m * m.adjoint();
  g = hermitian_part(g);
  g /= g.trace().real();
  return {g, d_a, d_b};
}

inline void require_sampler_dim(int d) {
  if (d < 2) throw std::invalid_argument("sampler: d must be at least 2");
}

}  // namespace detail

/// Hilbert-Schmidt random state on C^d (x) C^d.
inline BipartiteState sample_hs(int d, RngStream& rng) {
  detail::require_sampler_dim(d);
  const long n = static_cast<long>(d) * d;
  return detail::normalized_gram(ginibre(n, n, rng), d, d);
}

/// Bures random state: (1 + U) M M^dagger (1 + U^dagger), normalized.
inline BipartiteState sample_bures(int d, RngStream& rng) {
  detail::require_sampler_dim(d);
  const long n = static_cast<long>(d) * d;
  ComplexMatrix m = ginibre(n, n, rng);
  ComplexMatrix u = haar_unitary(n, rng);
  ComplexMatrix a = (identity(n) + u) * m;
  return detail::normalized_gram(a, d, d);
}

/// Real Wishart state M M^T / tr.
inline BipartiteState sample_real(int d, RngStream& rng) {
  detail::require_sampler_dim(d);
  const long n = static_cast<long>(d) * d;
  RealMatrix m(n, n);
  for (long r = 0; r < n; ++r)
    for (long c = 0; c < n; ++c) m(r, c) = rng.normal();
  RealMatrix g = m * m.transpose();
  g = (g + g.transpose()) * 0.5;
  g /= g.trace();
  return {g.cast<cplx>(), d, d};
}

inline PureBipartiteState sample_haar_pure(int d_a, int d_b, RngStream& rng) {
  if (d_a < 1 || d_b < 1) throw std::invalid_argument("sample_haar_pure: dims must be positive");
  const long n = static_cast<long>(d_a) * d_b;
  ComplexVector v(n);
  for (long i = 0; i < n; ++i) v(i) = rng.complex_normal();
  return make_pure(v, d_a, d_b);
}

enum class Measure { hs, bures, real };

inline const char* to_string(Measure m) {
  switch (m) {
    case Measure::hs: return "hs";
    case Measure::bures: return "bures";
    case Measure::real: return "real";
  }
  return "?";
}

inline Measure parse_measure(const std::string& s) {
  if (s == "hs") return Measure::hs;
  if (s == "bures") return Measure::bures;
  if (s == "real") return Measure::real;
  throw std::invalid_argument("unknown measure '" + s + "' (expected hs, bures or real)");
}

inline BipartiteState sample_state(Measure m, int d, RngStream& rng) {
  switch (m) {
    case Measure::hs: return sample_hs(d, rng);
    case Measure::bures: return sample_bures(d, rng);
    case Measure::real: return sample_real(d, rng);
  }
  throw std::invalid_argument("sample_state: bad measure");
}

// ---------------------------------------------------------------------------
// Families and constructions.

/// p * I/(d_a d_b) + (1 - p) |psi><psi|.
inline BipartiteState noisy_state(const PureBipartiteState& psi, double p) {
  psi.validate();
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("noisy_state: p must lie in [0, 1]");
  const long n = static_cast<long>(psi.d_a) * psi.d_b;
  ComplexMatrix rho = (1.0 - p) * projector(psi.amplitudes) + (p / static_cast<double>(n)) * identity(n);
  return {rho, psi.d_a, psi.d_b};
}

/// Places psi on the leading psi.d_a x psi.d_b block of C^{d_a2} (x) C^{d_b2}.
inline PureBipartiteState embed(const PureBipartiteState& psi, int d_a2, int d_b2) {
  if (d_a2 < psi.d_a || d_b2 < psi.d_b)
    throw std::invalid_argument("embed: target dimensions must not shrink");
  ComplexVector v = ComplexVector::Zero(static_cast<long>(d_a2) * d_b2);
  for (int i = 0; i < psi.d_a; ++i)
    for (int j = 0; j < psi.d_b; ++j)
      v(static_cast<long>(i) * d_b2 + j) = psi.amplitudes(static_cast<long>(i) * psi.d_b + j);
  return {v, d_a2, d_b2};
}

/// rho^{(x)n} regrouped from A1 B1 A2 B2 ... into A1..An | B1..Bn.
inline BipartiteState tensor_power_bipartite(const BipartiteState& rho, int n) {
  if (n < 1) throw std::invalid_argument("tensor_power_bipartite: n must be >= 1");
  if (n == 1) return rho;
  ComplexMatrix big = rho.rho;
  for (int i = 1; i < n; ++i) big = kron(big, rho.rho);
  std::vector<int> dims, perm;
  for (int i = 0; i < n; ++i) {
    dims.push_back(rho.d_a);
    dims.push_back(rho.d_b);
  }
  for (int i = 0; i < n; ++i) perm.push_back(2 * i);
  for (int i = 0; i < n; ++i) perm.push_back(2 * i + 1);
  int da = 1, db = 1;
  for (int i = 0; i < n; ++i) {
    da *= rho.d_a;
    db *= rho.d_b;
  }
  return {permute_subsystems(big, dims, perm), da, db};
}

/// Convex combination; weights must be non-negative and sum to 1.
inline BipartiteState mix(const std::vector<std::pair<double, BipartiteState>>& components) {
  if (components.empty()) throw std::invalid_argument("mix: no components");
  const int da = components.front().second.d_a;
  const int db = components.front().second.d_b;
  double total = 0;
  ComplexMatrix rho = ComplexMatrix::Zero(components.front().second.rho.rows(),
                                          components.front().second.rho.cols());
  for (const auto& [w, s] : components) {
    if (!(w >= 0.0)) throw std::invalid_argument("mix: negative weight");
    if (s.d_a != da || s.d_b != db) throw std::invalid_argument("mix: dimension mismatch");
    total += w;
    rho += w * s.rho;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("mix: weights sum to " + std::to_string(total));
  return {rho, da, db};
}

/// Random pure state of Schmidt rank at most D: Haar-random local bases with
/// Gaussian Schmidt coefficients on the first D vectors.
inline PureBipartiteState random_schmidt_rank_pure(int d_a, int d_b, int D, RngStream& rng) {
  if (D < 1 || D > std::min(d_a, d_b))
    throw std::invalid_argument("random_schmidt_rank_pure: D out of range");
  ComplexMatrix ua = haar_unitary(d_a, rng);
  ComplexMatrix ub = haar_unitary(d_b, rng);
  ComplexVector v = ComplexVector::Zero(static_cast<long>(d_a) * d_b);
  for (int j = 0; j < D; ++j) v += rng.normal() * kron(ComplexVector(ua.col(j)), ComplexVector(ub.col(j)));
  return make_pure(v, d_a, d_b);
}

inline PureBipartiteState random_product_pure(int d_a, int d_b, RngStream& rng) {
  return random_schmidt_rank_pure(d_a, d_b, 1, rng);
}

/// Mixture of `components` random pure states of Schmidt rank <= D with
/// uniform-simplex weights. D = 1 gives a separable state.
inline BipartiteState random_schmidt_rank_mixture(int d_a, int d_b, int D, int components,
                                                  RngStream& rng) {
  if (components < 1) throw std::invalid_argument("random_schmidt_rank_mixture: components < 1");
  std::vector<double> w(components);
  double total = 0;
  for (auto& x : w) total += (x = -std::log(1.0 - rng.uniform()));
  const long n = static_cast<long>(d_a) * d_b;
  ComplexMatrix rho = ComplexMatrix::Zero(n, n);
  for (int i = 0; i < components; ++i)
    rho += (w[i] / total) * projector(random_schmidt_rank_pure(d_a, d_b, D, rng).amplitudes);
  return {hermitian_part(rho), d_a, d_b};
}

inline BipartiteState random_separable_mixture(int d_a, int d_b, int components, RngStream& rng) {
  return random_schmidt_rank_mixture(d_a, d_b, 1, components, rng);
}

// ---------------------------------------------------------------------------
// JSON state format {"d_a", "d_b", "re", "im"}.

inline nlohmann::json state_to_json(const BipartiteState& s) {
  nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
  for (long r = 0; r < s.rho.rows(); ++r) {
    nlohmann::json rr = nlohmann::json::array(), ir = nlohmann::json::array();
    for (long c = 0; c < s.rho.cols(); ++c) {
      rr.push_back(s.rho(r, c).real());
      ir.push_back(s.rho(r, c).imag());
    }
    re.push_back(std::move(rr));
    im.push_back(std::move(ir));
  }
  return {{"d_a", s.d_a}, {"d_b", s.d_b}, {"re", std::move(re)}, {"im", std::move(im)}};
}

/// Parses and validates; throws InvariantViolation on any defect.
inline BipartiteState state_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvariantViolation("format", "state must be a JSON object");
  for (const char* key : {"d_a", "d_b", "re"})
    if (!j.contains(key)) throw InvariantViolation("format", std::string("missing key '") + key + "'");
  if (!j["d_a"].is_number_integer() || !j["d_b"].is_number_integer())
    throw InvariantViolation("format", "d_a and d_b must be integers");
  BipartiteState s;
  s.d_a = j["d_a"].get<int>();
  s.d_b = j["d_b"].get<int>();
  if (s.d_a < 1 || s.d_b < 1) throw InvariantViolation("dimensions", "d_a and d_b must be positive");
  const long n = s.dim();
  auto read = [&](const char* key, bool required) {
    RealMatrix m = RealMatrix::Zero(n, n);
    if (!j.contains(key)) {
      if (required) throw InvariantViolation("format", std::string("missing key '") + key + "'");
      return m;
    }
    const auto& a = j[key];
    if (!a.is_array() || static_cast<long>(a.size()) != n)
      throw InvariantViolation("shape", std::string("'") + key + "' must have d_a*d_b = " +
                                            std::to_string(n) + " rows");
    for (long r = 0; r < n; ++r) {
      const auto& row = a[r];
      if (!row.is_array() || static_cast<long>(row.size()) != n)
        throw InvariantViolation("shape", std::string("'") + key + "' row " + std::to_string(r) +
                                              " must have " + std::to_string(n) + " entries");
      for (long c = 0; c < n; ++c) {
        if (!row[c].is_number())
          throw InvariantViolation("format", std::string("'") + key + "' has a non-numeric entry");
        m(r, c) = row[c].get<double>();
      }
    }
    return m;
  };
  RealMatrix re = read("re", true);
  RealMatrix im = read("im", false);
  s.rho = ComplexMatrix(n, n);
  for (long r = 0; r < n; ++r)
    for (long c = 0; c < n; ++c) s.rho(r, c) = cplx(re(r, c), im(r, c));
  s.validate();
  return s;
}

inline void write_state(const BipartiteState& s, std::ostream& os) {
  os << state_to_json(s).dump(2) << "\n";
}

inline BipartiteState read_state(std::istream& is) {
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw InvariantViolation("format", std::string("malformed JSON: ") + e.what());
  }
  return state_from_json(j);
}

}  // namespace schmidt_scope
