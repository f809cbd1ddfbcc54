// experiments.hpp
// Drivers behind the command-line tool: Monte-Carlo surveys of the
// PPT / U~_2 cells, noisy-state scans with bisection, single-state
// certification and the faithfulness self-activation check. Reports carry
// JSON (and for scans CSV) serialization.

#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "schmidt_scope/criteria.hpp"
#include "schmidt_scope/qstate.hpp"
#include "schmidt_scope/witness.hpp"

namespace schmidt_scope {

// ---------------------------------------------------------------------------
// Shared helpers.

/// An SDP the driver depends on did not reach an optimal status.
class SolverFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wilson score interval for k successes out of n at the given z.
inline std::pair<double, double> wilson_interval(long k, long n, double z = 1.959963984540054) {
  if (n <= 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double phat = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (phat + z2 / (2 * nn)) / denom;
  const double half = z * std::sqrt(phat * (1 - phat) / nn + z2 / (4 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Runs body(i) for i in [0, n) on up to `workers` threads.
inline void parallel_for(long n, int workers, const std::function<void(long)>& body) {
  const int nthreads = static_cast<int>(std::clamp<long>(workers, 1, std::max<long>(n, 1)));
  if (nthreads == 1) {
    for (long i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<long> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&]() {
    for (long i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(run);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Nulls stand in for NaN, which JSON cannot carry.
inline nlohmann::json number_or_null(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

inline double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline bool same_number(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

inline Band parse_band(const std::string& s) {
  if (s == "inside") return Band::inside;
  if (s == "outside") return Band::outside;
  if (s == "inconclusive") return Band::inconclusive;
  throw std::invalid_argument("unknown band '" + s + "'");
}

inline Interpretation parse_interpretation(const std::string& s) {
  if (s == "certifies_membership") return Interpretation::certifies_membership;
  if (s == "certifies_nonmembership") return Interpretation::certifies_nonmembership;
  if (s == "inconclusive") return Interpretation::inconclusive;
  throw std::invalid_argument("unknown interpretation '" + s + "'");
}

inline nlohmann::json verdict_to_json(const CriterionVerdict& v) {
  return {{"criterion", v.criterion},
          {"target_set", v.target_set},
          {"margin", number_or_null(v.margin)},
          {"band", to_string(v.band)},
          {"interpretation", to_string(v.interpretation)},
          {"solver_used", v.solver_used},
          {"solver_failed", v.solver_failed},
          {"solver_status", v.solver_status},
          {"iterations", v.iterations},
          {"kkt_max", v.kkt_max}};
}

inline CriterionVerdict verdict_from_json(const nlohmann::json& j) {
  CriterionVerdict v;
  v.criterion = j.at("criterion").get<std::string>();
  v.target_set = j.at("target_set").get<std::string>();
  v.margin = number_from(j.at("margin"));
  v.band = parse_band(j.at("band").get<std::string>());
  v.interpretation = parse_interpretation(j.at("interpretation").get<std::string>());
  v.solver_used = j.at("solver_used").get<bool>();
  v.solver_failed = j.at("solver_failed").get<bool>();
  v.solver_status = j.at("solver_status").get<std::string>();
  v.iterations = j.at("iterations").get<int>();
  v.kkt_max = j.at("kkt_max").get<double>();
  return v;
}

inline nlohmann::json pure_to_json(const PureBipartiteState& psi) {
  nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
  for (long i = 0; i < psi.amplitudes.size(); ++i) {
    re.push_back(psi.amplitudes(i).real());
    im.push_back(psi.amplitudes(i).imag());
  }
  return {{"d_a", psi.d_a}, {"d_b", psi.d_b}, {"re", re}, {"im", im}};
}

inline PureBipartiteState pure_from_json(const nlohmann::json& j) {
  PureBipartiteState psi;
  psi.d_a = j.at("d_a").get<int>();
  psi.d_b = j.at("d_b").get<int>();
  const auto& re = j.at("re");
  psi.amplitudes.resize(static_cast<long>(re.size()));
  for (std::size_t i = 0; i < re.size(); ++i) {
    const double im = j.contains("im") ? j["im"].at(i).get<double>() : 0.0;
    psi.amplitudes(static_cast<long>(i)) = cplx(re[i].get<double>(), im);
  }
  psi.validate(1e-9);
  return psi;
}

// ---------------------------------------------------------------------------
// Survey.

enum class SurveyCell { s1 = 0, u2_minus_s1 = 1, other = 2, error = 3 };
inline constexpr int kSurveyCells = 4;

inline const char* cell_label(SurveyCell c) {
  switch (c) {
    case SurveyCell::s1: return "S¹";
    case SurveyCell::u2_minus_s1: return "Ũ₂\\S¹";
    case SurveyCell::other: return "other";
    case SurveyCell::error: return "error";
  }
  return "?";
}

struct SurveyConfig {
  int d = 2;
  Measure measure = Measure::hs;
  long samples = 1000;
  std::uint64_t seed = 0;
  // "ppt" and "unfaithful" define the cells; "reduction" adds a tally.
  std::vector<std::string> criteria{"ppt", "unfaithful"};
  int workers = 1;
  // Certify U~_2 from the marginal ansatz before falling back to the SDP.
  bool fast_path = true;
  CriteriaOptions options;

  void validate() const {
    if (samples < 1) throw std::invalid_argument("survey: samples must be >= 1");
    if (criteria.empty()) throw std::invalid_argument("survey: criteria list must be nonempty");
    detail::require_sampler_dim(d);
    bool ppt = false, unf = false;
    for (const auto& c : criteria) {
      if (c == "ppt") ppt = true;
      else if (c == "unfaithful") unf = true;
      else if (c != "reduction") throw std::invalid_argument("survey: unknown criterion '" + c + "'");
    }
    if (!ppt || !unf) throw std::invalid_argument("survey: criteria must include ppt and unfaithful");
    if (workers < 1) throw std::invalid_argument("survey: workers must be >= 1");
  }

  [[nodiscard]] bool wants(const std::string& c) const {
    return std::find(criteria.begin(), criteria.end(), c) != criteria.end();
  }
};

inline nlohmann::json survey_config_to_json(const SurveyConfig& c) {
  return {{"d", c.d},           {"measure", to_string(c.measure)}, {"samples", c.samples},
          {"seed", c.seed},     {"criteria", c.criteria},          {"workers", c.workers},
          {"fast_path", c.fast_path}};
}

/// Missing keys keep the defaults in `base`.
inline SurveyConfig survey_config_from_json(const nlohmann::json& j, SurveyConfig base = {}) {
  if (j.contains("d")) base.d = j["d"].get<int>();
  if (j.contains("measure")) base.measure = parse_measure(j["measure"].get<std::string>());
  if (j.contains("samples")) base.samples = j["samples"].get<long>();
  if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("criteria")) base.criteria = j["criteria"].get<std::vector<std::string>>();
  if (j.contains("workers")) base.workers = j["workers"].get<int>();
  if (j.contains("fast_path")) base.fast_path = j["fast_path"].get<bool>();
  return base;
}

struct SampleOutcome {
  SurveyCell cell = SurveyCell::other;
  bool reduction_inside = false;
  bool sdp_used = false;
  double kkt = 0;
};

inline SampleOutcome classify_sample(const BipartiteState& s, const SurveyConfig& cfg) {
  SampleOutcome out;
  try {
    if (cfg.wants("reduction")) out.reduction_inside = reduction_check(s).band == Band::inside;
    const Band ppt = ppt_check(s).band;
    if (ppt == Band::inside) {
      out.cell = SurveyCell::s1;
      return out;
    }
    bool in_u2 = false;
    if (cfg.fast_path && unfaithful2_marginal_bound(s) > kMarginBand) {
      in_u2 = true;
    } else {
      const auto v = unfaithful_margin(s, 2, cfg.options);
      out.sdp_used = true;
      out.kkt = v.kkt_max;
      if (v.solver_failed) {
        out.cell = SurveyCell::error;
        return out;
      }
      in_u2 = v.band == Band::inside;
    }
    out.cell = in_u2 && ppt == Band::outside ? SurveyCell::u2_minus_s1 : SurveyCell::other;
  } catch (const std::exception&) {
    out.cell = SurveyCell::error;
  }
  return out;
}

struct SurveyResult {
  int d = 0;
  Measure measure = Measure::hs;
  long samples = 0;
  std::uint64_t seed = 0;
  std::array<long, kSurveyCells> counts{};
  long reduction_inside = -1;  // -1 when not requested
  long sdp_solves = 0;
  double kkt_max = 0;
  double wall_seconds = 0;

  [[nodiscard]] long count(SurveyCell c) const { return counts[static_cast<int>(c)]; }
  [[nodiscard]] double fraction(SurveyCell c) const {
    return static_cast<double>(count(c)) / static_cast<double>(samples);
  }
  [[nodiscard]] std::pair<double, double> interval(SurveyCell c) const {
    return wilson_interval(count(c), samples);
  }

  bool operator==(const SurveyResult& o) const {
    return d == o.d && measure == o.measure && samples == o.samples && seed == o.seed &&
           counts == o.counts && reduction_inside == o.reduction_inside && sdp_solves == o.sdp_solves &&
           kkt_max == o.kkt_max && wall_seconds == o.wall_seconds;
  }
};

inline SurveyResult run_survey(const SurveyConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<SampleOutcome> outcomes(static_cast<std::size_t>(cfg.samples));
  parallel_for(cfg.samples, cfg.workers, [&](long i) {
    RngStream rng(cfg.seed, static_cast<std::uint64_t>(i));
    try {
      outcomes[static_cast<std::size_t>(i)] = classify_sample(sample_state(cfg.measure, cfg.d, rng), cfg);
    } catch (const std::exception&) {
      outcomes[static_cast<std::size_t>(i)].cell = SurveyCell::error;
    }
  });
  SurveyResult r;
  r.d = cfg.d;
  r.measure = cfg.measure;
  r.samples = cfg.samples;
  r.seed = cfg.seed;
  if (cfg.wants("reduction")) r.reduction_inside = 0;
  for (const auto& o : outcomes) {
    ++r.counts[static_cast<int>(o.cell)];
    if (o.reduction_inside) ++r.reduction_inside;
    if (o.sdp_used) ++r.sdp_solves;
    r.kkt_max = std::max(r.kkt_max, o.kkt);
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline nlohmann::json survey_to_json(const SurveyResult& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (int c = 0; c < kSurveyCells; ++c) {
    const auto cell = static_cast<SurveyCell>(c);
    const auto [lo, hi] = r.interval(cell);
    cells.push_back({{"cell", cell_label(cell)},
                     {"count", r.count(cell)},
                     {"fraction", r.fraction(cell)},
                     {"ci95", {lo, hi}}});
  }
  nlohmann::json j = {{"d", r.d},
                      {"measure", to_string(r.measure)},
                      {"samples", r.samples},
                      {"seed", r.seed},
                      {"cells", cells},
                      {"sdp_solves", r.sdp_solves},
                      {"kkt_max", r.kkt_max},
                      {"wall_seconds", r.wall_seconds}};
  if (r.reduction_inside >= 0) j["reduction_inside"] = r.reduction_inside;
  return j;
}

inline SurveyResult survey_from_json(const nlohmann::json& j) {
  SurveyResult r;
  r.d = j.at("d").get<int>();
  r.measure = parse_measure(j.at("measure").get<std::string>());
  r.samples = j.at("samples").get<long>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& c : j.at("cells")) {
    const auto label = c.at("cell").get<std::string>();
    bool found = false;
    for (int k = 0; k < kSurveyCells; ++k)
      if (label == cell_label(static_cast<SurveyCell>(k))) {
        r.counts[k] = c.at("count").get<long>();
        found = true;
      }
    if (!found) throw std::invalid_argument("survey: unknown cell '" + label + "'");
  }
  long total = 0;
  for (long c : r.counts) total += c;
  if (total != r.samples) throw std::invalid_argument("survey: cell counts do not sum to samples");
  r.reduction_inside = j.contains("reduction_inside") ? j["reduction_inside"].get<long>() : -1;
  r.sdp_solves = j.at("sdp_solves").get<long>();
  r.kkt_max = j.at("kkt_max").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

inline void write_survey_csv(const SurveyResult& r, std::ostream& os) {
  os << "cell,count,fraction,ci95_low,ci95_high\n" << std::setprecision(12);
  for (int c = 0; c < kSurveyCells; ++c) {
    const auto cell = static_cast<SurveyCell>(c);
    const auto [lo, hi] = r.interval(cell);
    os << cell_label(cell) << ',' << r.count(cell) << ',' << r.fraction(cell) << ',' << lo << ',' << hi << '\n';
  }
}

// ---------------------------------------------------------------------------
// Noisy-state scans.

/// Parses "psiK": the rank-K maximally entangled state on the leading K x K
/// block of C^d (x) C^d.
inline PureBipartiteState named_target(const std::string& name, int d) {
  if (name.size() < 4 || name.compare(0, 3, "psi") != 0)
    throw std::invalid_argument("unknown target '" + name + "' (expected psiK, e.g. psi2)");
  int k = 0;
  try {
    std::size_t used = 0;
    k = std::stoi(name.substr(3), &used);
    if (used != name.size() - 3) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw std::invalid_argument("unknown target '" + name + "' (expected psiK, e.g. psi2)");
  }
  if (k < 1 || k > d) throw std::invalid_argument("target '" + name + "' does not fit in d = " + std::to_string(d));
  return embed(maximally_entangled(k), d, d);
}

struct ScanConfig {
  PureBipartiteState target;
  std::string target_label = "custom";
  int D = 2;
  double lo = 0.0;
  double hi = 1.0;
  double tolerance = 1e-4;
  std::vector<double> grid;
  int workers = 1;
  CriteriaOptions options;

  void validate() const {
    target.validate(1e-9);
    if (D < 2) throw std::invalid_argument("scan: D must be >= 2");
    if (D - 1 > std::max(target.d_a, target.d_b))
      throw std::invalid_argument("scan: D - 1 exceeds both local dimensions");
    if (!(tolerance >= 1e-6)) throw std::invalid_argument("scan: bisection tolerance must be >= 1e-6");
    if (!(lo >= 0.0 && hi <= 1.0 && lo < hi)) throw std::invalid_argument("scan: need 0 <= lo < hi <= 1");
    for (double p : grid)
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("scan: grid points must lie in [0, 1]");
    if (workers < 1) throw std::invalid_argument("scan: workers must be >= 1");
  }
};

struct ScanPoint {
  double p = 0;
  double ppt_margin = 0;
  double schmidt_margin = 0;     // S_{D-1}^1
  double unfaithful_margin = 0;  // U~_D
  double reduction_margin = 0;

  bool operator==(const ScanPoint& o) const {
    return same_number(p, o.p) && same_number(ppt_margin, o.ppt_margin) &&
           same_number(schmidt_margin, o.schmidt_margin) && same_number(unfaithful_margin, o.unfaithful_margin) &&
           same_number(reduction_margin, o.reduction_margin);
  }
};

struct Threshold {
  std::string criterion;
  bool bracketed = false;
  double p = std::numeric_limits<double>::quiet_NaN();
  double margin_below = std::numeric_limits<double>::quiet_NaN();  // at the lower end of the final bracket
  double margin_above = std::numeric_limits<double>::quiet_NaN();
  int evaluations = 0;
  std::string note;

  bool operator==(const Threshold& o) const {
    return criterion == o.criterion && bracketed == o.bracketed && same_number(p, o.p) &&
           same_number(margin_below, o.margin_below) && same_number(margin_above, o.margin_above) &&
           evaluations == o.evaluations && note == o.note;
  }
};

/// Bisects the sign change of margin(p) on [lo, hi] until the bracket is no
/// wider than tol; reports its midpoint.
inline Threshold bisect_threshold(std::string criterion, const std::function<double(double)>& margin, double lo,
                                  double hi, double tol) {
  Threshold t;
  t.criterion = std::move(criterion);
  double flo = margin(lo), fhi = margin(hi);
  t.evaluations = 2;
  if (!(flo < 0) == !(fhi < 0)) {
    std::ostringstream os;
    os << std::setprecision(6) << "bounds do not bracket a sign change: margin(" << lo << ") = " << flo
       << ", margin(" << hi << ") = " << fhi;
    t.note = os.str();
    t.margin_below = flo;
    t.margin_above = fhi;
    return t;
  }
  const bool rising = flo < 0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double fm = margin(mid);
    ++t.evaluations;
    if ((fm < 0) == rising) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
      fhi = fm;
    }
  }
  t.bracketed = true;
  t.p = 0.5 * (lo + hi);
  t.margin_below = flo;
  t.margin_above = fhi;
  return t;
}

struct ScanReport {
  std::string target_label;
  int d_a = 0;
  int d_b = 0;
  int D = 2;
  double tolerance = 0;
  // ppt, schmidt (S_{D-1}^1), unfaithful (U~_D), reduction
  std::vector<Threshold> thresholds;
  // Unfaithful-but-D-dimensionally-entangled window (U~_D entry, S_{D-1}^1 entry).
  bool window_empty = true;
  double window_lo = std::numeric_limits<double>::quiet_NaN();
  double window_hi = std::numeric_limits<double>::quiet_NaN();
  std::vector<ScanPoint> grid;
  double kkt_max = 0;

  [[nodiscard]] const Threshold& threshold(const std::string& criterion) const {
    for (const auto& t : thresholds)
      if (t.criterion == criterion) return t;
    throw std::out_of_range("scan: no threshold for '" + criterion + "'");
  }

  bool operator==(const ScanReport& o) const {
    return target_label == o.target_label && d_a == o.d_a && d_b == o.d_b && D == o.D &&
           tolerance == o.tolerance && thresholds == o.thresholds && window_empty == o.window_empty &&
           same_number(window_lo, o.window_lo) && same_number(window_hi, o.window_hi) && grid == o.grid &&
           kkt_max == o.kkt_max;
  }
};

namespace detail {

class KktTracker {
 public:
  void note(const CriterionVerdict& v) {
    std::lock_guard<std::mutex> lock(m_);
    max_ = std::max(max_, v.kkt_max);
  }
  [[nodiscard]] double max() const { return max_; }

 private:
  std::mutex m_;
  double max_ = 0;
};

// Margins of the noisy family rho(p) for each scanned criterion.
struct ScanMargins {
  const ScanConfig& cfg;
  KktTracker& kkt;

  [[nodiscard]] BipartiteState state(double p) const { return noisy_state(cfg.target, p); }

  double ppt(double p) const { return ppt_check(state(p)).margin; }
  double reduction(double p) const { return reduction_check(state(p)).margin; }
  double schmidt(double p) const { return checked(schmidt_hierarchy_margin(state(p), cfg.D - 1, 1, cfg.options)); }
  double unfaithful(double p) const { return checked(unfaithful_margin(state(p), cfg.D, cfg.options)); }

  double checked(const CriterionVerdict& v) const {
    kkt.note(v);
    if (v.solver_failed) throw SolverFailure(v.criterion + ": solver status " + v.solver_status);
    return v.margin;
  }
};

}  // namespace detail

inline std::string schmidt_label(int D) { return "schmidt(D=" + std::to_string(D) + ",k=1)"; }
inline std::string unfaithful_label(int D) { return "unfaithful(D=" + std::to_string(D) + ")"; }

inline ScanReport run_scan(const ScanConfig& cfg) {
  cfg.validate();
  detail::KktTracker kkt;
  const detail::ScanMargins m{cfg, kkt};
  ScanReport r;
  r.target_label = cfg.target_label;
  r.d_a = cfg.target.d_a;
  r.d_b = cfg.target.d_b;
  r.D = cfg.D;
  r.tolerance = cfg.tolerance;

  const std::vector<std::pair<std::string, std::function<double(double)>>> criteria = {
      {"ppt", [&](double p) { return m.ppt(p); }},
      {schmidt_label(cfg.D - 1), [&](double p) { return m.schmidt(p); }},
      {unfaithful_label(cfg.D), [&](double p) { return m.unfaithful(p); }},
      {"reduction", [&](double p) { return m.reduction(p); }},
  };
  r.thresholds.resize(criteria.size());
  parallel_for(static_cast<long>(criteria.size()), cfg.workers, [&](long i) {
    r.thresholds[i] = bisect_threshold(criteria[i].first, criteria[i].second, cfg.lo, cfg.hi, cfg.tolerance);
  });

  const Threshold& s = r.thresholds[1];
  const Threshold& u = r.thresholds[2];
  if (s.bracketed && u.bracketed) {
    r.window_lo = u.p;
    r.window_hi = s.p;
    r.window_empty = s.p - u.p <= 2 * cfg.tolerance;
  }

  r.grid.resize(cfg.grid.size());
  parallel_for(static_cast<long>(cfg.grid.size()), cfg.workers, [&](long i) {
    const double p = cfg.grid[i];
    r.grid[i] = {p, m.ppt(p), m.schmidt(p), m.unfaithful(p), m.reduction(p)};
  });
  r.kkt_max = kkt.max();
  return r;
}

inline nlohmann::json threshold_to_json(const Threshold& t) {
  nlohmann::json j = {{"criterion", t.criterion},       {"bracketed", t.bracketed},
                      {"p", number_or_null(t.p)},       {"margin_below", number_or_null(t.margin_below)},
                      {"margin_above", number_or_null(t.margin_above)}, {"evaluations", t.evaluations}};
  if (!t.note.empty()) j["note"] = t.note;
  return j;
}

inline Threshold threshold_from_json(const nlohmann::json& j) {
  Threshold t;
  t.criterion = j.at("criterion").get<std::string>();
  t.bracketed = j.at("bracketed").get<bool>();
  t.p = number_from(j.at("p"));
  t.margin_below = number_from(j.at("margin_below"));
  t.margin_above = number_from(j.at("margin_above"));
  t.evaluations = j.at("evaluations").get<int>();
  t.note = j.value("note", std::string());
  return t;
}

inline nlohmann::json scan_to_json(const ScanReport& r) {
  nlohmann::json th = nlohmann::json::array();
  for (const auto& t : r.thresholds) th.push_back(threshold_to_json(t));
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& g : r.grid)
    grid.push_back({number_or_null(g.p), number_or_null(g.ppt_margin), number_or_null(g.schmidt_margin),
                    number_or_null(g.unfaithful_margin), number_or_null(g.reduction_margin)});
  return {{"target", r.target_label},
          {"d_a", r.d_a},
          {"d_b", r.d_b},
          {"D", r.D},
          {"tolerance", r.tolerance},
          {"thresholds", th},
          {"window", {{"empty", r.window_empty}, {"lo", number_or_null(r.window_lo)}, {"hi", number_or_null(r.window_hi)}}},
          {"grid_columns", {"p", "ppt_margin", "schmidt_margin", "unfaithful_margin", "reduction_margin"}},
          {"grid", grid},
          {"kkt_max", r.kkt_max}};
}

inline ScanReport scan_from_json(const nlohmann::json& j) {
  ScanReport r;
  r.target_label = j.at("target").get<std::string>();
  r.d_a = j.at("d_a").get<int>();
  r.d_b = j.at("d_b").get<int>();
  r.D = j.at("D").get<int>();
  r.tolerance = j.at("tolerance").get<double>();
  for (const auto& t : j.at("thresholds")) r.thresholds.push_back(threshold_from_json(t));
  const auto& w = j.at("window");
  r.window_empty = w.at("empty").get<bool>();
  r.window_lo = number_from(w.at("lo"));
  r.window_hi = number_from(w.at("hi"));
  for (const auto& g : j.at("grid")) {
    if (!g.is_array() || g.size() != 5) throw std::invalid_argument("scan: grid rows need 5 entries");
    r.grid.push_back({number_from(g[0]), number_from(g[1]), number_from(g[2]), number_from(g[3]), number_from(g[4])});
  }
  r.kkt_max = j.at("kkt_max").get<double>();
  return r;
}

inline constexpr const char* kScanCsvHeader = "p,ppt_margin,schmidt_margin,unfaithful_margin,reduction_margin";

/// One row per grid point at 12 significant digits.
inline void write_scan_csv(const std::vector<ScanPoint>& grid, std::ostream& os) {
  os << kScanCsvHeader << '\n';
  std::ostringstream line;
  line << std::setprecision(12);
  for (const auto& g : grid) {
    line.str("");
    line << g.p << ',' << g.ppt_margin << ',' << g.schmidt_margin << ',' << g.unfaithful_margin << ','
         << g.reduction_margin;
    os << line.str() << '\n';
  }
}

inline std::vector<ScanPoint> read_scan_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kScanCsvHeader)
    throw std::invalid_argument("scan csv: missing or unexpected header");
  std::vector<ScanPoint> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::array<double, 5> v{};
    std::istringstream row(line);
    std::string cell;
    int k = 0;
    while (std::getline(row, cell, ',')) {
      if (k >= 5) throw std::invalid_argument("scan csv: too many columns");
      try {
        v[k++] = std::stod(cell);
      } catch (const std::exception&) {
        if (cell == "nan" || cell == "-nan") v[k - 1] = std::numeric_limits<double>::quiet_NaN();
        else throw std::invalid_argument("scan csv: bad number '" + cell + "'");
      }
    }
    if (k != 5) throw std::invalid_argument("scan csv: expected 5 columns");
    out.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  return out;
}

/// Rounds every value to 12 significant digits, i.e. to what the CSV keeps.
inline ScanPoint rounded_for_csv(const ScanPoint& g) {
  std::ostringstream os;
  write_scan_csv({g}, os);
  std::istringstream is(os.str());
  return read_scan_csv(is).front();
}

// ---------------------------------------------------------------------------
// Certification of a single state.

struct CertifyOptions {
  int D = 2;
  int k = 1;
  bool witness = true;
  int restarts = kDefaultWitnessRestarts;
  std::uint64_t seed = 0;
  int workers = 1;
  CriteriaOptions options;
};

struct WitnessSummary {
  int D = 2;
  double violation = 0;
  int restarts = 0;
  PureBipartiteState psi;
};

struct CertifyReport {
  int d_a = 0;
  int d_b = 0;
  int D = 2;
  int k = 1;
  std::vector<CriterionVerdict> verdicts;
  std::vector<WitnessSummary> witnesses;

  [[nodiscard]] bool solver_failed() const {
    return std::any_of(verdicts.begin(), verdicts.end(), [](const auto& v) { return v.solver_failed; });
  }
  [[nodiscard]] const CriterionVerdict& verdict(const std::string& criterion) const {
    for (const auto& v : verdicts)
      if (v.criterion == criterion) return v;
    throw std::out_of_range("certify: no verdict for '" + criterion + "'");
  }
  [[nodiscard]] double kkt_max() const {
    double m = 0;
    for (const auto& v : verdicts) m = std::max(m, v.kkt_max);
    return m;
  }
};

/// PPT, reduction, DPS level k, S_{D-1}^k, U~_{D'} for 2 <= D' <= D, and a
/// witness search for every D' in the same range.
inline CertifyReport certify_state(const BipartiteState& rho, const CertifyOptions& o) {
  rho.validate();
  if (o.D < 2) throw std::invalid_argument("certify: D must be >= 2");
  if (o.k < 1) throw std::invalid_argument("certify: k must be >= 1");
  CertifyReport r;
  r.d_a = rho.d_a;
  r.d_b = rho.d_b;
  r.D = o.D;
  r.k = o.k;
  r.verdicts.push_back(ppt_check(rho));
  r.verdicts.push_back(reduction_check(rho));
  auto dps = dps_margin(rho, o.k, o.options);
  dps.criterion = "dps(k=" + std::to_string(o.k) + ")";
  r.verdicts.push_back(dps);
  auto sch = schmidt_hierarchy_margin(rho, o.D - 1, o.k, o.options);
  sch.criterion = "schmidt(D=" + std::to_string(o.D - 1) + ",k=" + std::to_string(o.k) + ")";
  r.verdicts.push_back(sch);
  const int dmax = std::max(rho.d_a, rho.d_b);
  for (int Dp = 2; Dp <= o.D && Dp - 1 <= dmax; ++Dp) r.verdicts.push_back(unfaithful_margin(rho, Dp, o.options));
  if (o.witness) {
    const int dmin = std::min(rho.d_a, rho.d_b);
    for (int Dp = 2; Dp <= o.D && Dp <= dmin; ++Dp) {
      const auto c = search_witness(rho, Dp, o.restarts, RngStream(o.seed, static_cast<std::uint64_t>(Dp)), o.workers);
      r.witnesses.push_back({Dp, c.violation, c.restarts_used, c.psi});
    }
  }
  return r;
}

inline nlohmann::json certify_to_json(const CertifyReport& r) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& x : r.verdicts) v.push_back(verdict_to_json(x));
  nlohmann::json w = nlohmann::json::array();
  for (const auto& x : r.witnesses)
    w.push_back({{"D", x.D}, {"violation", x.violation}, {"restarts", x.restarts},
                 {"detects", x.violation > kMarginBand}, {"target", pure_to_json(x.psi)}});
  return {{"d_a", r.d_a}, {"d_b", r.d_b}, {"D", r.D}, {"k", r.k}, {"verdicts", v}, {"witnesses", w},
          {"solver_failed", r.solver_failed()}};
}

inline CertifyReport certify_from_json(const nlohmann::json& j) {
  CertifyReport r;
  r.d_a = j.at("d_a").get<int>();
  r.d_b = j.at("d_b").get<int>();
  r.D = j.at("D").get<int>();
  r.k = j.at("k").get<int>();
  for (const auto& v : j.at("verdicts")) r.verdicts.push_back(verdict_from_json(v));
  for (const auto& w : j.at("witnesses"))
    r.witnesses.push_back({w.at("D").get<int>(), w.at("violation").get<double>(), w.at("restarts").get<int>(),
                           pure_from_json(w.at("target"))});
  return r;
}

// ---------------------------------------------------------------------------
// Faithfulness self-activation.

/// 0.999 (0.50179 phi1 + 0.49821 phi2) + 0.001 I/9 on C^3 (x) C^3, with the
/// printed (slightly unnormalized) amplitudes normalized.
inline BipartiteState activation_state() {
  ComplexVector phi1 = ComplexVector::Zero(9);
  phi1(1 * 3 + 1) = 0.628;
  phi1(2 * 3 + 2) = -0.778;
  ComplexVector phi2(9);
  phi2 << 0.0, 0.807, -0.185, -0.102, -0.027, 0.011, 0.551, -0.024, -0.022;
  const auto p1 = projector_state(make_pure(phi1, 3, 3));
  const auto p2 = projector_state(make_pure(phi2, 3, 3));
  return mix({{0.999 * 0.50179, p1}, {0.999 * 0.49821, p2}, {0.001, maximally_mixed(3, 3)}});
}

/// Entangled state satisfying the reduction criterion: Psi_2 in C^3 (x) C^3
/// with white-noise weight 3/4 (reducible from 9/13, NPT below 9/11).
inline BipartiteState reduction_control_state() { return noisy_state(embed(maximally_entangled(2), 3, 3), 0.75); }

struct ActivationReport {
  CriterionVerdict unfaithful;  // leg (a), rho in U~_2
  double violation = 0;         // leg (b), witness on rho^(x)2
  int restarts = 0;
  PureBipartiteState witness_target;
  double control_ppt_margin = 0;
  double control_reduction_margin = 0;            // reduction on the control's square
  double control_violation = 0;                   // witness search on the control's square
  [[nodiscard]] bool leg_a() const { return unfaithful.margin > kMarginBand && !unfaithful.solver_failed; }
  [[nodiscard]] bool leg_b() const { return violation > kMarginBand; }
  [[nodiscard]] bool control_ok() const {
    return control_reduction_margin >= -kMarginBand && control_violation <= kMarginBand;
  }
  [[nodiscard]] bool passed() const { return leg_a() && leg_b() && control_ok(); }
};

inline ActivationReport run_activation(int restarts = kActivationWitnessRestarts, std::uint64_t seed = 0,
                                       int workers = 1, int control_restarts = kDefaultWitnessRestarts,
                                       const CriteriaOptions& opt = {}) {
  ActivationReport r;
  const auto rho = activation_state();
  r.unfaithful = unfaithful_margin(rho, 2, opt);
  const auto sq = tensor_power_bipartite(rho, 2);
  const auto c = search_witness(sq, 2, restarts, RngStream(seed, 0), workers);
  r.violation = c.violation;
  r.restarts = c.restarts_used;
  r.witness_target = c.psi;

  const auto ctrl = reduction_control_state();
  r.control_ppt_margin = ppt_check(ctrl).margin;
  const auto csq = tensor_power_bipartite(ctrl, 2);
  r.control_reduction_margin = reduction_check(csq).margin;
  r.control_violation = search_witness(csq, 2, control_restarts, RngStream(seed, 1), workers).violation;
  return r;
}

inline nlohmann::json activation_to_json(const ActivationReport& r) {
  return {{"leg_a", {{"verdict", verdict_to_json(r.unfaithful)}, {"passed", r.leg_a()}}},
          {"leg_b",
           {{"violation", r.violation}, {"restarts", r.restarts}, {"passed", r.leg_b()},
            {"target", pure_to_json(r.witness_target)}}},
          {"control",
           {{"ppt_margin", r.control_ppt_margin},
            {"square_reduction_margin", r.control_reduction_margin},
            {"square_violation", r.control_violation},
            {"passed", r.control_ok()}}},
          {"passed", r.passed()}};
}

}  // namespace schmidt_scope
