// schmidt_scope: command-line front end for surveys, noisy-state scans,
// single-state certification, witness search and the activation check.
//
// Exit codes: 0 completed, 1 activation reproduction failed,
// 2 malformed input, 3 solver failure.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "schmidt_scope/experiments.hpp"

using namespace schmidt_scope;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitReproductionFailed = 1;
constexpr int kExitMalformed = 2;
constexpr int kExitSolver = 3;

struct MalformedInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  std::optional<std::uint64_t> seed_flag;
  int workers = 1;
  std::optional<double> tolerance;
  std::string out;
  std::string format = "json";
};

std::uint64_t resolve_seed(const Globals& g) {
  if (g.seed_flag) return *g.seed_flag;
  if (const char* env = std::getenv("SCHMIDT_SCOPE_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw MalformedInput(std::string("SCHMIDT_SCOPE_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  return 0;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open '" + path + "'");
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedInput("'" + path + "': " + e.what());
  }
}

BipartiteState read_state_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedInput("cannot open '" + path + "'");
  return read_state(in);
}

void emit(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream os(g.out);
  if (!os) throw MalformedInput("cannot write '" + g.out + "'");
  os << text;
}

std::string fmt(double x, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << x;
  return os.str();
}

// "a:b:n" for n evenly spaced points, or a comma-separated list.
std::vector<double> parse_grid(const std::string& spec) {
  std::vector<double> out;
  if (spec.empty()) return out;
  try {
    if (spec.find(':') != std::string::npos) {
      std::istringstream is(spec);
      std::string a, b, n;
      std::getline(is, a, ':');
      std::getline(is, b, ':');
      std::getline(is, n);
      const double lo = std::stod(a), hi = std::stod(b);
      const int count = std::stoi(n);
      if (count < 1) throw std::invalid_argument("count");
      for (int i = 0; i < count; ++i) out.push_back(count == 1 ? lo : lo + (hi - lo) * i / (count - 1));
    } else {
      std::istringstream is(spec);
      std::string cell;
      while (std::getline(is, cell, ',')) out.push_back(std::stod(cell));
    }
  } catch (const std::exception&) {
    throw MalformedInput("bad --grid '" + spec + "' (expected lo:hi:n or a comma-separated list)");
  }
  return out;
}

std::string survey_text(const SurveyResult& r) {
  std::ostringstream os;
  os << "survey d=" << r.d << " measure=" << to_string(r.measure) << " samples=" << r.samples
     << " seed=" << r.seed << "\n";
  os << std::left << std::setw(10) << "cell" << std::right << std::setw(10) << "count" << std::setw(12) << "percent"
     << std::setw(22) << "95% CI" << "\n";
  for (int c = 0; c < kSurveyCells; ++c) {
    const auto cell = static_cast<SurveyCell>(c);
    const auto [lo, hi] = r.interval(cell);
    // Pad by display width; the labels carry multibyte characters.
    const std::string label = cell_label(cell);
    int width = 0;
    for (unsigned char ch : label) width += (ch & 0xC0) != 0x80;
    os << label << std::string(std::max(0, 10 - width), ' ') << std::setw(10) << r.count(cell) << std::setw(11)
       << std::fixed << std::setprecision(2) << 100 * r.fraction(cell) << "%" << std::setw(10) << 100 * lo
       << "% - " << std::setw(6) << 100 * hi << "%" << std::defaultfloat << "\n";
  }
  if (r.reduction_inside >= 0) os << "reduction inside: " << r.reduction_inside << "\n";
  os << "sdp solves: " << r.sdp_solves << "  max kkt: " << fmt(r.kkt_max, 3) << "  wall: " << fmt(r.wall_seconds, 3)
     << " s\n";
  return os.str();
}

std::string scan_text(const ScanReport& r) {
  std::ostringstream os;
  os << "scan target=" << r.target_label << " d=" << r.d_a << "x" << r.d_b << " D=" << r.D
     << " tolerance=" << r.tolerance << "\n";
  for (const auto& t : r.thresholds) {
    os << "  " << std::left << std::setw(20) << t.criterion << std::right;
    if (t.bracketed) os << "p* = " << std::fixed << std::setprecision(6) << t.p << std::defaultfloat << "\n";
    else os << "not bracketed: " << t.note << "\n";
  }
  if (std::isnan(r.window_lo)) os << "  window: undetermined\n";
  else if (r.window_empty) os << "  window: empty (edges " << fmt(r.window_lo) << ", " << fmt(r.window_hi) << ")\n";
  else os << "  window: (" << fmt(r.window_lo) << ", " << fmt(r.window_hi) << ")\n";
  if (!r.grid.empty()) {
    os << "\n";
    write_scan_csv(r.grid, os);
  }
  return os.str();
}

std::string certify_text(const CertifyReport& r) {
  std::ostringstream os;
  os << "state " << r.d_a << "x" << r.d_b << "\n";
  for (const auto& v : r.verdicts)
    os << "  " << std::left << std::setw(20) << v.criterion << std::setw(14) << to_string(v.band)
       << std::setw(26) << to_string(v.interpretation) << std::right << "margin " << fmt(v.margin, 9) << "\n";
  for (const auto& w : r.witnesses)
    os << "  witness(D=" << w.D << ")" << std::string(9, ' ') << (w.violation > kMarginBand ? "detects " : "silent  ")
       << "violation " << fmt(w.violation, 9) << " (" << w.restarts << " restarts)\n";
  return os.str();
}

std::string activation_text(const ActivationReport& r) {
  std::ostringstream os;
  os << "leg a  unfaithful(D=2) margin " << fmt(r.unfaithful.margin, 6) << "  " << (r.leg_a() ? "pass" : "FAIL")
     << "\n";
  os << "leg b  witness on square violation " << fmt(r.violation, 6) << " (" << r.restarts << " restarts)  "
     << (r.leg_b() ? "pass" : "FAIL") << "\n";
  os << "control  reduction on square " << fmt(r.control_reduction_margin, 6) << ", violation "
     << fmt(r.control_violation, 6) << "  " << (r.control_ok() ? "pass" : "FAIL") << "\n";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unfaithful-state and Schmidt-number experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "RNG seed (overrides SCHMIDT_SCOPE_SEED)");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
  double tolerance_value = 0;
  auto* tol_opt = app.add_option("--tolerance", tolerance_value, "Bisection tolerance in p (scan)");
  app.add_option("--out", g.out, "Write the report here instead of stdout");
  app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"json", "csv", "text"}));

  // survey
  auto* survey = app.add_subcommand("survey", "Monte-Carlo classification into S¹ / Ũ₂\\S¹ / other");
  SurveyConfig scfg;
  std::string survey_config, measure = "hs";
  bool no_fast_path = false;
  auto* s_d = survey->add_option("--d", scfg.d, "Local dimension");
  auto* s_m = survey->add_option("--measure", measure, "hs, bures or real");
  auto* s_n = survey->add_option("--samples", scfg.samples, "Number of samples");
  auto* s_c = survey->add_option("--criteria", scfg.criteria, "ppt, unfaithful[, reduction]")->delimiter(',');
  survey->add_flag("--no-fast-path", no_fast_path, "Always solve the SDP for non-PPT states");
  survey->add_option("--config", survey_config, "JSON config; flags given explicitly take precedence");

  // scan
  auto* scan = app.add_subcommand("scan", "Noise thresholds of p I/d^2 + (1-p)|psi><psi|");
  std::string target = "psi2", target_file, grid_spec, scan_config;
  int scan_d = 2;
  std::optional<int> scan_D;
  double scan_lo = 0, scan_hi = 1;
  scan->add_option("--target", target, "psiK: rank-K maximally entangled state embedded in d");
  scan->add_option("--target-file", target_file, "Pure target as a rank-one state JSON");
  scan->add_option("--d", scan_d, "Local dimension");
  scan->add_option("--D", scan_D, "Schmidt number of interest (default: K of psiK)");
  scan->add_option("--lo", scan_lo, "Lower bisection bound");
  scan->add_option("--hi", scan_hi, "Upper bisection bound");
  scan->add_option("--grid", grid_spec, "Grid for the margin table: lo:hi:n or a list");
  scan->add_option("--config", scan_config, "JSON config with d, D, target, lo, hi, tolerance, grid");

  // certify
  auto* certify = app.add_subcommand("certify", "All criteria on one state");
  std::string state_file;
  CertifyOptions copt;
  bool no_witness = false;
  certify->add_option("state", state_file, "State JSON")->required();
  certify->add_option("--D", copt.D, "Schmidt number of interest");
  certify->add_option("--k", copt.k, "Hierarchy level");
  certify->add_option("--restarts", copt.restarts, "Witness-search restarts")->check(CLI::PositiveNumber);
  certify->add_flag("--no-witness", no_witness, "Skip the witness search");

  // witness
  auto* witness = app.add_subcommand("witness", "Fidelity-witness search");
  std::string witness_file;
  int witness_D = 2, witness_restarts = kDefaultWitnessRestarts;
  witness->add_option("state", witness_file, "State JSON")->required();
  witness->add_option("--D", witness_D, "Schmidt number of the witness");
  witness->add_option("--restarts", witness_restarts, "Restarts")->check(CLI::PositiveNumber);

  // activation
  auto* activation = app.add_subcommand("activation", "Faithfulness self-activation check");
  int act_restarts = kActivationWitnessRestarts;
  activation->add_option("--restarts", act_restarts, "Witness restarts on the tensor square")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitMalformed;
  }

  try {
    if (*seed_opt) g.seed_flag = seed_value;
    if (*tol_opt) g.tolerance = tolerance_value;
    const std::uint64_t seed = resolve_seed(g);

    if (*survey) {
      SurveyConfig cfg;
      if (!survey_config.empty()) cfg = survey_config_from_json(read_json_file(survey_config));
      if (*s_d) cfg.d = scfg.d;
      if (*s_m) cfg.measure = parse_measure(measure);
      if (*s_n) cfg.samples = scfg.samples;
      if (*s_c) cfg.criteria = scfg.criteria;
      if (no_fast_path) cfg.fast_path = false;
      if (g.seed_flag || survey_config.empty() || std::getenv("SCHMIDT_SCOPE_SEED")) cfg.seed = seed;
      cfg.workers = g.workers;
      const auto r = run_survey(cfg);
      if (g.format == "json") emit(g, survey_to_json(r).dump(2) + "\n");
      else if (g.format == "csv") {
        std::ostringstream os;
        write_survey_csv(r, os);
        emit(g, os.str());
      } else emit(g, survey_text(r));
      return kExitOk;
    }

    if (*scan) {
      ScanConfig cfg;
      nlohmann::json j = scan_config.empty() ? nlohmann::json::object() : read_json_file(scan_config);
      if (!scan->count("--d") && j.contains("d")) scan_d = j["d"].get<int>();
      if (!scan->count("--target") && j.contains("target")) target = j["target"].get<std::string>();
      if (!scan->count("--D") && j.contains("D")) scan_D = j["D"].get<int>();
      if (!scan->count("--lo") && j.contains("lo")) scan_lo = j["lo"].get<double>();
      if (!scan->count("--hi") && j.contains("hi")) scan_hi = j["hi"].get<double>();
      if (!g.tolerance && j.contains("tolerance")) g.tolerance = j["tolerance"].get<double>();
      if (!target_file.empty()) {
        const auto rho = read_state_file(target_file);
        const auto eig = hermitian_eig(rho.rho);
        if (eig.values(0) < 1 - 1e-8) throw MalformedInput("target file is not a pure state");
        cfg.target = make_pure(eig.vectors.col(0), rho.d_a, rho.d_b);
        cfg.target_label = target_file;
        if (!scan_D) throw MalformedInput("--D is required with --target-file");
      } else {
        cfg.target = named_target(target, scan_d);
        cfg.target_label = target;
        if (!scan_D) scan_D = std::stoi(target.substr(3));
      }
      cfg.D = *scan_D;
      cfg.lo = scan_lo;
      cfg.hi = scan_hi;
      if (g.tolerance) cfg.tolerance = *g.tolerance;
      if (!grid_spec.empty()) cfg.grid = parse_grid(grid_spec);
      else if (j.contains("grid")) cfg.grid = j["grid"].get<std::vector<double>>();
      cfg.workers = g.workers;
      const auto r = run_scan(cfg);
      if (g.format == "json") emit(g, scan_to_json(r).dump(2) + "\n");
      else if (g.format == "csv") {
        std::ostringstream os;
        write_scan_csv(r.grid, os);
        emit(g, os.str());
      } else emit(g, scan_text(r));
      return kExitOk;
    }

    if (*certify) {
      const auto rho = read_state_file(state_file);
      copt.witness = !no_witness;
      copt.seed = seed;
      copt.workers = g.workers;
      const auto r = certify_state(rho, copt);
      if (g.format == "text") emit(g, certify_text(r));
      else if (g.format == "csv") throw MalformedInput("certify has no CSV form; use json or text");
      else emit(g, certify_to_json(r).dump(2) + "\n");
      if (r.solver_failed()) {
        std::cerr << "solver failure in at least one criterion\n";
        return kExitSolver;
      }
      return kExitOk;
    }

    if (*witness) {
      const auto rho = read_state_file(witness_file);
      const auto c = search_witness(rho, witness_D, witness_restarts, RngStream(seed, 0), g.workers);
      nlohmann::json j = {{"D", c.D},
                          {"violation", c.violation},
                          {"detects", c.violation > kMarginBand},
                          {"restarts", c.restarts_used},
                          {"fidelity_bound", to_witness(c).fidelity_bound},
                          {"target", pure_to_json(c.psi)}};
      if (g.format == "text")
        emit(g, "witness(D=" + std::to_string(c.D) + ") violation " + fmt(c.violation, 9) + "\n");
      else if (g.format == "csv") throw MalformedInput("witness has no CSV form; use json or text");
      else emit(g, j.dump(2) + "\n");
      return kExitOk;
    }

    if (*activation) {
      const auto r = run_activation(act_restarts, seed, g.workers);
      if (g.format == "text") emit(g, activation_text(r));
      else if (g.format == "csv") throw MalformedInput("activation has no CSV form; use json or text");
      else emit(g, activation_to_json(r).dump(2) + "\n");
      if (r.unfaithful.solver_failed) return kExitSolver;
      return r.passed() ? kExitOk : kExitReproductionFailed;
    }
  } catch (const InvariantViolation& e) {
    std::cerr << "malformed input: invariant '" << e.invariant() << "' violated: " << e.what() << "\n";
    return kExitMalformed;
  } catch (const MalformedInput& e) {
    std::cerr << "malformed input: " << e.what() << "\n";
    return kExitMalformed;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "malformed input: " << e.what() << "\n";
    return kExitMalformed;
  } catch (const SolverFailure& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  } catch (const MemoryGuard& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::invalid_argument& e) {
    std::cerr << "malformed input: " << e.what() << "\n";
    return kExitMalformed;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}
