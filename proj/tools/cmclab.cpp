// cmclab: simulate conditional Markov chains, verify transition fields,
// run martingale diagnostics on stored ensembles, and enumerate the exact
// discrete oracle.
//
// Exit codes: 0 all checks pass, 1 a verification or diagnostic failed,
// 2 bad arguments / schema / validation, 3 I/O or internal failure.
// stdout carries only deterministic report content; timing goes to stderr.

#include <chrono>
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmclab/diagnostics.hpp"
#include "cmclab/ensemble_io.hpp"
#include "cmclab/kolmogorov.hpp"
#include "cmclab/oracle.hpp"
#include "cmclab/scenario.hpp"

namespace {

using nlohmann::json;
using namespace cmclab;

constexpr double kRouteTol = 1e-6;
constexpr double kIdentityTol = 1e-9;
constexpr double kOracleTol = 1e-12;
constexpr double kEquivalenceTol = 1e-9;

json tool_stamp() {
  return {{"name", kToolName}, {"version", kToolVersion}};
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.dim(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.dim(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

std::size_t node_for_time(const TimeGrid& grid, double t, const char* what) {
  const double dt = grid.horizon / static_cast<double>(grid.steps);
  const double raw = t / dt;
  const double node = std::round(raw);
  if (node < 0.0 || node > static_cast<double>(grid.steps) ||
      std::abs(t - node * dt) > 1e-9 * std::max(1.0, grid.horizon))
    throw std::invalid_argument(std::string(what) +
                                " must sit on a grid node (horizon " +
                                fmt_double(grid.horizon) + ", " +
                                std::to_string(grid.steps) + " steps)");
  return static_cast<std::size_t>(node);
}

FactorPath load_factor_file(const std::string& path, const TimeGrid& grid) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& ex) {
    throw SchemaError(path + ": " + ex.what());
  }
  if (!j.is_object() || !j.contains("values") || !j["values"].is_array())
    throw SchemaError(path + ": expected {\"values\": [...]} factor file");
  FactorPath f;
  f.dims = 1;
  for (const auto& v : j["values"]) {
    if (!v.is_number()) throw SchemaError(path + ": non-numeric value");
    f.values.push_back(v.get<double>());
  }
  if (f.values.size() != grid.steps + 1)
    throw SchemaError(path + ": wants " + std::to_string(grid.steps + 1) +
                      " node values, got " + std::to_string(f.values.size()));
  if (j.contains("jump_times"))
    for (const auto& v : j["jump_times"]) f.jump_times.push_back(v.get<double>());
  return f;
}

const ContinuousScenario& continuous_or_throw(const LoadedScenario& sc) {
  if (sc.kind != LoadedScenario::Kind::kContinuous)
    throw SchemaError("this command wants a continuous scenario");
  return sc.continuous;
}

struct Timer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  void report(const char* label) const {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    std::fprintf(stderr, "%s: %lld ms\n", label,
                 static_cast<long long>(ms));
  }
};

// ---------------------------------------------------------------- simulate

int run_simulate(const std::string& scenario_path, std::size_t n,
                 std::uint64_t seed, const std::string& out_dir) {
  Timer timer;
  const LoadedScenario sc = load_scenario(scenario_path);
  const ContinuousScenario& c = continuous_or_throw(sc);
  const WeightedEnsemble e = build_ensemble(c, n, seed);
  write_ensemble(out_dir, e, c.name);
  const json manifest = ensemble_manifest(e, c.name, ensemble_csv(e));
  std::cout << manifest.dump(2) << "\n";
  timer.report("simulate");
  return 0;
}

// ------------------------------------------------------------------- field

int run_field(const std::string& scenario_path, std::uint64_t factor_seed,
              const std::string& factor_file, double s_time, double t_time,
              bool t_given, const std::string& out_file) {
  Timer timer;
  const LoadedScenario sc = load_scenario(scenario_path);
  const ContinuousScenario& c = continuous_or_throw(sc);
  const TimeGrid& grid = c.grid;

  FactorPath f;
  if (!factor_file.empty()) {
    f = load_factor_file(factor_file, grid);
  } else {
    f = sample_factor(c.driver, grid,
                      mix_seed(factor_seed, 0,
                               static_cast<std::uint64_t>(Stream::kFactor)));
  }

  const std::size_t s_node = node_for_time(grid, s_time, "--s");
  const std::size_t t_node =
      t_given ? node_for_time(grid, t_time, "--t") : grid.steps;
  if (s_node >= t_node)
    throw std::invalid_argument("--s must lie strictly before --t");

  const TransitionField field = transition_field(*c.model, f, grid);
  const FieldCheck check = field.check();
  const KolmogorovResidual resid = kolmogorov_residual(field, *c.model, f);
  const RouteAgreement routes =
      route_agreement(*c.model, f, grid, s_node, t_node);

  const bool identity_ok = check.max_inverse_dev < kIdentityTol &&
                           check.max_row_sum_dev < kIdentityTol &&
                           check.min_entry > -kIdentityTol &&
                           check.max_entry < 1.0 + kIdentityTol;
  const bool routes_ok =
      routes.peano_converged && routes.max_pairwise_diff < kRouteTol;
  const bool pass = identity_ok && routes_ok;

  json rep;
  rep["tool"] = tool_stamp();
  rep["scenario"] = {{"name", c.name}, {"hash", c.hash}};
  rep["grid"] = {{"horizon", grid.horizon}, {"steps", grid.steps}};
  rep["factor"] = {{"seed", factor_seed},
                   {"file", factor_file.empty() ? json() : json(factor_file)},
                   {"jumps", f.jump_times.size()}};
  rep["window"] = {{"s_node", s_node},
                   {"t_node", t_node},
                   {"s", grid.node(s_node)},
                   {"t", grid.node(t_node)}};
  rep["field_check"] = {{"max_inverse_dev", check.max_inverse_dev},
                        {"max_row_sum_dev", check.max_row_sum_dev},
                        {"min_entry", check.min_entry},
                        {"max_entry", check.max_entry},
                        {"min_det", check.min_det}};
  rep["kolmogorov_residual"] = {{"backward", resid.backward},
                                {"forward", resid.forward}};
  rep["routes"] = {{"piecewise", matrix_json(routes.piecewise)},
                   {"peano_baker",
                    {{"matrix", matrix_json(routes.peano)},
                     {"order", routes.peano_order},
                     {"converged", routes.peano_converged}}},
                   {"magnus2", matrix_json(routes.magnus)},
                   {"max_pairwise_diff", routes.max_pairwise_diff}};
  rep["tolerances"] = {{"route", kRouteTol}, {"identity", kIdentityTol}};
  rep["pass"] = pass;

  const std::string text = rep.dump(2) + "\n";
  std::cout << text;
  if (!out_file.empty()) write_file_atomic(out_file, text);
  timer.report("field");
  return pass ? 0 : 1;
}

// ----------------------------------------------------------------- diagnose

json report_to_json(const MartingaleTestReport& r) {
  return {{"suite", r.suite},
          {"tests", r.entries.size()},
          {"max_abs_z", r.max_abs_z},
          {"pass", r.pass}};
}

json cmc_to_json(const CmcTestReport& r) {
  return {{"t_node", r.t_node},
          {"t1_node", r.t1_node},
          {"cells", r.cells.size()},
          {"scored_cells", r.scored_cells},
          {"thin_cells", r.thin_cells},
          {"empty_cells", r.empty_cells},
          {"bucket_edges", r.bucket_edges},
          {"max_abs_z", r.max_abs_z},
          {"pass", r.pass}};
}

void append_zscores(std::string& csv, const std::string& suite,
                    const MartingaleTestReport& r) {
  char buf[256];
  for (const TestEntry& e : r.entries) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%zu,%s,%.17g,%.17g,%.17g\n",
                  suite.c_str(), e.process.c_str(), e.s_node, e.t_node,
                  e.phi.c_str(), e.estimate, e.se, e.z);
    csv += buf;
  }
}

void append_cmc_zscores(std::string& csv, const std::string& suite,
                        const CmcTestReport& r) {
  char buf[256];
  for (const CmcCell& c : r.cells) {
    if (c.count == 0) continue;
    std::snprintf(buf, sizeof buf,
                  "%s,cell,%zu,%zu,b%d|past%d|%d->%d%s,%.17g,%.17g,%.17g\n",
                  suite.c_str(), r.t_node, r.t1_node, c.bucket, c.past,
                  c.x + 1, c.y + 1, c.thin ? "|thin" : "", c.estimate, c.se,
                  c.z);
    csv += buf;
  }
}

void print_suite_line(const std::string& name, bool pass,
                      const std::string& detail) {
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << name << "  " << detail
            << "\n";
}

int run_diagnose(const std::string& scenario_path,
                 const std::string& ensemble_dir, const std::string& suite,
                 double override_scale, bool override_given,
                 std::string out_dir) {
  Timer timer;
  const LoadedScenario sc = load_scenario(scenario_path);
  const ContinuousScenario& c = continuous_or_throw(sc);
  const WeightedEnsemble e = load_ensemble(ensemble_dir, c);
  if (out_dir.empty()) out_dir = ensemble_dir;

  std::shared_ptr<const IntensityModel> model = c.model;
  if (override_given)
    model = std::make_shared<ScaledIntensity>(c.model, override_scale);

  const bool all = suite == "all";
  if (suite == "equivalence" && !override_given)
    throw std::invalid_argument(
        "equivalence wants --override-intensity-scale to compare against");

  json suites;
  std::string zcsv = "suite,process,s_node,t_node,phi,estimate,se,z\n";
  bool pass = true;
  const Dictionary dict = Dictionary::standard(c.states, c.factor_cut);
  const std::vector<NodePair> pairs = default_node_pairs(e.grid);

  auto take = [&](const MartingaleTestReport& r, const char* name) {
    suites[name] = report_to_json(r);
    append_zscores(zcsv, name, r);
    pass = pass && r.pass;
    char d[128];
    std::snprintf(d, sizeof d, "max|z| = %.3f over %zu tests", r.max_abs_z,
                  r.entries.size());
    print_suite_line(name, r.pass, d);
  };

  if (all || suite == "M") take(residual_M(e, *model, dict, pairs), "residual_M");
  if (all || suite == "K") take(residual_K(e, *model, dict, pairs), "residual_K");
  if (all || suite == "L") take(residual_L(e, *model, dict, pairs), "residual_L");
  if (all || suite == "N")
    take(residual_N(e, *model, e.grid.steps, dict, pairs), "residual_N");

  if (all || suite == "cmc") {
    const std::size_t K = e.grid.steps;
    const CmcTestReport plain = cmc_conditional_test(e, *model, K / 2, K);
    suites["cmc"] = cmc_to_json(plain);
    append_cmc_zscores(zcsv, "cmc", plain);
    pass = pass && plain.pass;
    char d[128];
    std::snprintf(d, sizeof d,
                  "max|z| = %.3f over %zu scored cells (%zu thin, %zu empty)",
                  plain.max_abs_z, plain.scored_cells, plain.thin_cells,
                  plain.empty_cells);
    print_suite_line("cmc", plain.pass, d);
    if (K / 4 < K / 2) {
      CmcOptions opt;
      opt.extra_past_node = K / 4;
      const CmcTestReport past = cmc_conditional_test(e, *model, K / 2, K, opt);
      suites["cmc_past"] = cmc_to_json(past);
      append_cmc_zscores(zcsv, "cmc_past", past);
      pass = pass && past.pass;
      std::snprintf(d, sizeof d,
                    "max|z| = %.3f over %zu scored cells (%zu thin, %zu empty)",
                    past.max_abs_z, past.scored_cells, past.thin_cells,
                    past.empty_cells);
      print_suite_line("cmc_past", past.pass, d);
    }
  }

  if (all || suite == "jumps") {
    const std::size_t hits = common_jump_scan(e);
    suites["jumps"] = {{"common_jumps", hits}, {"pass", hits == 0}};
    pass = pass && hits == 0;
    print_suite_line("jumps", hits == 0,
                     "common factor/chain jump times: " +
                         std::to_string(hits));
  }

  if ((all && override_given) || suite == "equivalence") {
    const EquivalenceReport eq = equivalence_check(e, *c.model, *model);
    const bool ok = eq.max_abs_weighted < kEquivalenceTol;
    suites["equivalence"] = {{"max_abs_all", eq.max_abs_all},
                             {"max_abs_weighted", eq.max_abs_weighted},
                             {"tolerance", kEquivalenceTol},
                             {"pass", ok}};
    pass = pass && ok;
    char d[128];
    std::snprintf(d, sizeof d, "weighted max = %.3g, all-paths max = %.3g",
                  eq.max_abs_weighted, eq.max_abs_all);
    print_suite_line("equivalence", ok, d);
  }

  json rep;
  rep["tool"] = tool_stamp();
  rep["scenario"] = {{"name", c.name}, {"hash", c.hash}};
  rep["ensemble"] = {{"dir", ensemble_dir},
                     {"paths", e.size()},
                     {"seed", e.base_seed},
                     {"ess", effective_sample_size(e.weights)}};
  rep["model"] = {{"override_scale",
                   override_given ? json(override_scale) : json()}};
  rep["threshold"] = kBonferroniThreshold;
  rep["suites"] = suites;
  rep["pass"] = pass;

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir);
  write_file_atomic(out_dir + "/report.json", rep.dump(2) + "\n");
  write_file_atomic(out_dir + "/zscores.csv", zcsv);
  print_suite_line("overall", pass, "report in " + out_dir);
  timer.report("diagnose");
  return pass ? 0 : 1;
}

// ------------------------------------------------------------------ oracle

int run_oracle(const std::string& scenario_path, const std::string& out_file,
               double tol) {
  Timer timer;
  const LoadedScenario sc = load_scenario(scenario_path);
  if (sc.kind != LoadedScenario::Kind::kDiscrete)
    throw SchemaError("oracle wants a discrete scenario");
  const oracle::DiscreteScenario& d = sc.discrete;

  const oracle::AtomTable table =
      oracle::enumerate_atoms(d, oracle::Measure::kTarget);
  const double cmc = oracle::verify_cmc(table);
  const oracle::DsmcTpCheck dsmc = oracle::verify_dsmc_and_tp(d, table);
  const oracle::FidisCheck fidis =
      oracle::verify_c_fidis_and_immersion(d, table);
  const oracle::GirsanovCheck gir = oracle::verify_discrete_girsanov(d);

  const double worst =
      std::max({cmc, dsmc.max(), fidis.max(), gir.max()});
  const bool pass = worst < tol;

  json rep;
  rep["tool"] = tool_stamp();
  rep["scenario"] = {{"name", d.name}, {"hash", d.hash}};
  rep["states"] = d.states;
  rep["steps"] = d.steps;
  rep["dt"] = d.dt;
  rep["atoms"] = table.atoms.size();
  rep["checks"] = {{"cmc", cmc},
                   {"dsmc", dsmc.dsmc},
                   {"tp", dsmc.tp},
                   {"fidis", fidis.fidis},
                   {"immersion", fidis.immersion},
                   {"girsanov_recoupling", gir.recoupling},
                   {"girsanov_weight_mean", gir.weight_mean_err},
                   {"girsanov_bit_marginal", gir.bit_marginal_err}};
  rep["max_defect"] = worst;
  rep["threshold"] = tol;
  rep["pass"] = pass;

  const std::string text = rep.dump(2) + "\n";
  std::cout << text;
  if (!out_file.empty()) write_file_atomic(out_file, text);
  timer.report("oracle");
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional Markov chain laboratory"};
  app.set_version_flag("--version", std::string(cmclab::kToolVersion));
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand(
      "simulate", "sample a weighted ensemble and store it");
  std::string sim_scenario, sim_out;
  std::size_t sim_n = 10000;
  std::uint64_t sim_seed = 1;
  sim->add_option("--scenario", sim_scenario, "scenario JSON path")
      ->required();
  sim->add_option("--n", sim_n, "number of paths")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "base seed");
  sim->add_option("--out", sim_out, "output directory")->required();

  // field
  auto* fld = app.add_subcommand(
      "field", "build the transition field on one factor path and verify it");
  std::string fld_scenario, fld_factor_file, fld_out;
  std::uint64_t fld_seed = 1;
  double fld_s = 0.0, fld_t = 0.0;
  fld->add_option("--scenario", fld_scenario, "scenario JSON path")
      ->required();
  fld->add_option("--factor-seed", fld_seed,
                  "seed for the sampled factor path");
  fld->add_option("--factor-file", fld_factor_file,
                  "JSON file with node values, overrides sampling");
  fld->add_option("--s", fld_s, "window start time (grid node)");
  auto* fld_t_opt =
      fld->add_option("--t", fld_t, "window end time (default horizon)");
  fld->add_option("--out", fld_out, "also write the report here");

  // diagnose
  auto* dia = app.add_subcommand(
      "diagnose", "run martingale and conditional-law tests on an ensemble");
  std::string dia_scenario, dia_ensemble, dia_suite = "all", dia_out;
  double dia_scale = 1.0;
  dia->add_option("--scenario", dia_scenario, "scenario JSON path")
      ->required();
  dia->add_option("--ensemble", dia_ensemble, "ensemble directory")
      ->required();
  dia->add_option("--suite", dia_suite, "all|M|K|L|N|cmc|jumps|equivalence")
      ->check(CLI::IsMember(
          {"all", "M", "K", "L", "N", "cmc", "jumps", "equivalence"}));
  auto* dia_scale_opt = dia->add_option(
      "--override-intensity-scale", dia_scale,
      "diagnose against the declared rule with off-diagonals scaled");
  dia->add_option("--out", dia_out, "report directory (default: ensemble)");

  // oracle
  auto* orc = app.add_subcommand(
      "oracle", "exhaustively verify a discrete scenario by atom enumeration");
  std::string orc_scenario, orc_out;
  double orc_tol = kOracleTol;
  orc->add_option("--scenario", orc_scenario, "scenario JSON path")
      ->required();
  orc->add_option("--out", orc_out, "also write the report here");
  orc->add_option("--tol", orc_tol, "defect threshold")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed())
      return run_simulate(sim_scenario, sim_n, sim_seed, sim_out);
    if (fld->parsed())
      return run_field(fld_scenario, fld_seed, fld_factor_file, fld_s, fld_t,
                       fld_t_opt->count() > 0, fld_out);
    if (dia->parsed())
      return run_diagnose(dia_scenario, dia_ensemble, dia_suite, dia_scale,
                          dia_scale_opt->count() > 0, dia_out);
    if (orc->parsed())
      return run_oracle(orc_scenario, orc_out, orc_tol);
  } catch (const cmclab::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cmclab::ModelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cmclab::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
