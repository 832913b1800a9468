// Acceptance gate: every criterion prints one PASS/FAIL line with its
// pinned tolerance; the exit code is the number of failures.
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cmclab/diagnostics.hpp"
#include "cmclab/kolmogorov.hpp"
#include "cmclab/models.hpp"
#include "cmclab/oracle.hpp"
#include "cmclab/scenario.hpp"
#include "cmclab/simulate.hpp"

using namespace cmclab;
namespace fs = std::filesystem;

namespace {

const std::string kScen = CMCLAB_SCENARIO_DIR;
const std::string kBin = CMCLAB_BIN_PATH;

int g_failures = 0;

void criterion(int idx, const std::string& label,
               const std::function<bool(std::string&)>& body) {
  std::string detail;
  bool ok = false;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    ok = body(detail);
  } catch (const std::exception& ex) {
    detail = std::string("exception: ") + ex.what();
  }
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
  std::printf("[%s] criterion %d: %s — %s (%lld ms)\n", ok ? "PASS" : "FAIL",
              idx, label.c_str(), detail.c_str(),
              static_cast<long long>(ms));
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

ContinuousScenario load_cont(const std::string& name) {
  return load_scenario(kScen + "/" + name).continuous;
}

int run_cmd(const std::string& cmd) {
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in.good()) return "<unreadable " + p.string() + ">";
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- 1. weight normalization -------------------------------------------

bool c1(std::string& d) {
  const auto sc = load_cont("twostate_brownian.json");
  const std::size_t n = 100000;
  const auto e = build_ensemble(sc, n, 11);
  const double m = mean(e.weights);
  const double se = std::sqrt(sample_variance(e.weights) / double(n));
  d = fmt("|E[eta] - 1| = %.2e vs 3*SE = %.2e (n = %zu)", std::abs(m - 1.0),
          3.0 * se, n);
  return std::abs(m - 1.0) <= 3.0 * se;
}

// ---- 2. two-sampler agreement ------------------------------------------

bool c2(std::string& d) {
  const auto sc = load_cont("threestate_factor.json");
  const std::size_t n = 100000;
  const auto ew = build_ensemble(sc, n, 21);
  const auto ed = build_direct(sc, n, 21);
  const double t = sc.grid.horizon;
  double worst = 0.0;
  for (int y = 0; y < 3; ++y) {
    double sw = 0.0, sw2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v =
          ew.weights[i] * (ew.chains[i].state_at(t) == y ? 1.0 : 0.0);
      sw += v;
      sw2 += v * v;
    }
    std::size_t cd = 0;
    for (std::size_t i = 0; i < n; ++i) cd += ed.chains[i].state_at(t) == y;
    const double pw = sw / double(n);
    const double pd = double(cd) / double(n);
    const double se_w =
        std::sqrt((sw2 - sw * sw / double(n)) / double(n - 1) / double(n));
    const double se_d = std::sqrt(pd * (1.0 - pd) / double(n));
    const double band = 3.0 * std::sqrt(se_w * se_w + se_d * se_d);
    worst = std::max(worst, std::abs(pw - pd) / band);
  }
  d = fmt("worst |weighted - direct| = %.2f of its 3-SE band", worst);
  return worst <= 1.0;
}

// ---- 3. closed-form transition probabilities ---------------------------

bool c3(std::string& d) {
  const auto sc = load_cont("twostate_reference.json");
  FactorPath f;
  f.values.assign(sc.grid.steps + 1, 0.0);
  const double closed = (1.0 + std::exp(-2.0)) / 2.0;
  const auto field = transition_field(*sc.model, f, sc.grid);
  const double via_field = field.p(0, sc.grid.steps)(0, 0);
  const auto routes =
      route_agreement(*sc.model, f, sc.grid, 0, sc.grid.steps, 1e-10);
  const double e1 = std::abs(via_field - closed);
  const double e2 = std::abs(routes.peano(0, 0) - closed);
  const double e3 = std::abs(routes.magnus(0, 0) - closed);
  d = fmt("p11 errors: exponentials %.1e (tol 1e-9), peano %.1e, "
          "magnus %.1e (tol 1e-6)",
          e1, e2, e3);
  return e1 < 1e-9 && e2 < 1e-6 && e3 < 1e-6 && routes.peano_converged;
}

// ---- 4. inverse identity and stochasticity ------------------------------

bool c4(std::string& d) {
  const char* names[] = {"twostate_brownian.json",  "twostate_reference.json",
                         "threestate_factor.json",  "threestate_timeswitch.json",
                         "telegraph_factor.json",   "unreachable_state.json"};
  double worst_inv = 0.0, worst_row = 0.0, worst_entry = 0.0;
  for (const char* name : names) {
    const auto sc = load_cont(name);
    const auto f = sample_factor(sc.driver, sc.grid,
                                 mix_seed(5, 0, std::uint64_t(Stream::kFactor)));
    const auto check = transition_field(*sc.model, f, sc.grid).check();
    worst_inv = std::max(worst_inv, check.max_inverse_dev);
    worst_row = std::max(worst_row, check.max_row_sum_dev);
    worst_entry = std::max({worst_entry, -check.min_entry,
                            check.max_entry - 1.0});
  }
  d = fmt("6 scenarios: max ||ZY - I|| = %.1e, row-sum dev = %.1e, "
          "entry overshoot = %.1e (tol 1e-9)",
          worst_inv, worst_row, worst_entry);
  return worst_inv < 1e-9 && worst_row < 1e-9 && worst_entry < 1e-9;
}

// ---- 5. martingale suite accepts truth, rejects 2x ----------------------

bool c5(std::string& d) {
  const auto sc = load_cont("twostate_brownian.json");
  const std::size_t n = 100000;
  const auto e = build_ensemble(sc, n, 31);
  const auto good = run_martingale_suite(e, *sc.model, sc.factor_cut);
  const ScaledIntensity twice(sc.model, 2.0);
  const auto bad = run_martingale_suite(e, twice, sc.factor_cut);
  double good_max = 0.0, bad_min = 1e300, bad_max = 0.0;
  bool good_all = true, bad_all = true;
  for (const auto& r : good) {
    good_all = good_all && r.pass;
    good_max = std::max(good_max, r.max_abs_z);
  }
  for (const auto& r : bad) {
    bad_all = bad_all && !r.pass;
    bad_min = std::min(bad_min, r.max_abs_z);
    bad_max = std::max(bad_max, r.max_abs_z);
  }
  d = fmt("truth max|z| = %.2f (< 3.9), doubled rule per-suite max|z| in "
          "[%.1f, %.1f] (> 10 somewhere)",
          good_max, bad_min, bad_max);
  return good_all && bad_all && bad_max > 10.0;
}

// ---- 6. conditional Markov property --------------------------------------

bool c6(std::string& d) {
  const auto sc = load_cont("threestate_factor.json");
  const std::size_t n = 100000;
  const auto e = build_ensemble(sc, n, 41);
  const std::size_t K = e.grid.steps;
  const auto plain = cmc_conditional_test(e, *sc.model, K / 2, K);
  CmcOptions opt;
  opt.extra_past_node = K / 4;
  const auto past = cmc_conditional_test(e, *sc.model, K / 2, K, opt);
  d = fmt("max|z| = %.2f plain (%zu cells), %.2f with past conditioning "
          "(%zu cells); threshold 3.9",
          plain.max_abs_z, plain.scored_cells, past.max_abs_z,
          past.scored_cells);
  return plain.pass && past.pass && plain.scored_cells > 0 &&
         past.scored_cells > 0;
}

// ---- 7. exact discrete oracle -------------------------------------------

bool c7(std::string& d) {
  using namespace oracle;
  double clean_worst = 0.0;
  for (const char* name : {"discrete_k3.json", "discrete_k2_absorbing.json"}) {
    const auto sc = load_scenario(kScen + "/" + name).discrete;
    const auto t = enumerate_atoms(sc, Measure::kTarget);
    clean_worst = std::max(clean_worst, verify_cmc(t));
    clean_worst = std::max(clean_worst, verify_dsmc_and_tp(sc, t).max());
    clean_worst = std::max(clean_worst, verify_c_fidis_and_immersion(sc, t).max());
    clean_worst = std::max(clean_worst, verify_discrete_girsanov(sc).max());
  }
  // frozen hand value: absorbing fixture, P(X_2 = 2) = (0.19 + 0.36) / 2
  const auto abs_sc =
      load_scenario(kScen + "/discrete_k2_absorbing.json").discrete;
  const auto abs_t = enumerate_atoms(abs_sc, Measure::kTarget);
  double hit = 0.0;
  for (const auto& a : abs_t.atoms)
    if (a.x[2] == 1) hit += a.p;
  const double frozen_err = std::abs(hit - 0.275);

  const auto nm =
      load_scenario(kScen + "/discrete_k3_tamper_nonmarkov.json").discrete;
  const double nm_defect =
      verify_cmc(enumerate_atoms(nm, Measure::kTarget));
  const auto fm =
      load_scenario(kScen + "/discrete_k3_tamper_future_mu.json").discrete;
  const double fm_defect =
      verify_c_fidis_and_immersion(fm, enumerate_atoms(fm, Measure::kTarget))
          .immersion;

  d = fmt("clean max defect %.1e (tol 1e-12), frozen marginal err %.1e; "
          "tampers: non-markov %.2e, future-bit immersion %.2e (> 1e-3)",
          clean_worst, frozen_err, nm_defect, fm_defect);
  return clean_worst < 1e-12 && frozen_err < 1e-14 && nm_defect > 1e-3 &&
         fm_defect > 1e-3;
}

// ---- 8. discrete-to-continuous convergence ------------------------------

bool c8(std::string& d) {
  using namespace oracle;
  const Matrix lam = Matrix::from_rows({{-1.0, 1.0}, {0.5, -0.5}});
  const double T = 0.8;
  const std::vector<double> mu = {0.6, 0.4};
  const Matrix exact = expm(lam * T);
  const Vector target = vec_mat(Vector{0.6, 0.4}, exact);

  std::vector<double> logdt, logerr;
  double first_err = 0.0;
  for (const std::size_t k : {std::size_t(8), std::size_t(16), std::size_t(32)}) {
    const double dt = T / double(k);
    const Matrix power = discrete_transition_power(lam, dt, k);
    const Vector got = vec_mat(Vector{0.6, 0.4}, power);
    double err = 0.0;
    for (std::size_t y = 0; y < 2; ++y)
      err = std::max(err, std::abs(got[y] - target[y]));
    if (k == 8) first_err = err;
    logdt.push_back(std::log(dt));
    logerr.push_back(std::log(err));
  }
  // least-squares slope of log err against log dt
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    sx += logdt[i];
    sy += logerr[i];
    sxx += logdt[i] * logdt[i];
    sxy += logdt[i] * logerr[i];
  }
  const double slope = (3.0 * sxy - sx * sy) / (3.0 * sxx - sx * sx);

  // tie the matrix-power shortcut to the enumerated oracle at K = 8
  DiscreteScenario sc;
  sc.states = 2;
  sc.steps = 8;
  sc.dt = T / 8.0;
  sc.initial_law = mu;
  sc.reference = Matrix::from_rows({{-1.0, 1.0}, {1.0, -1.0}});
  sc.bit0 = lam;
  sc.bit1 = lam;
  sc.bit_index = 0;
  const auto atoms = enumerate_atoms(sc, Measure::kTarget);
  const Matrix power8 = discrete_transition_power(lam, sc.dt, 8);
  const Vector via_power = vec_mat(Vector{0.6, 0.4}, power8);
  double tie_err = 0.0;
  for (std::size_t y = 0; y < 2; ++y) {
    double m = 0.0;
    for (const auto& a : atoms.atoms)
      if (a.x[8] == y) m += a.p;
    tie_err = std::max(tie_err, std::abs(m - via_power[y]));
  }

  d = fmt("error(dt=0.1) = %.2e, slope = %.2f (want 1 +/- 0.3), "
          "enumeration ties power route within %.1e",
          first_err, slope, tie_err);
  return slope > 0.7 && slope < 1.3 && tie_err < 1e-12;
}

// ---- 9. equivalence relative to the chain --------------------------------

bool c9(std::string& d) {
  const auto sc = load_cont("unreachable_state.json");
  const auto e = build_ensemble(sc, 10000, 4);
  const Matrix other_base = Matrix::from_rows(
      {{-1.0, 1.0, 0.0}, {0.7, -0.7, 0.0}, {0.1, 0.3, -0.4}});
  const LogisticScaleIntensity other(other_base, 0.8, 1.5, 1.5, 0.0);
  const auto eq = equivalence_check(e, *sc.model, other);
  const Dictionary dict = Dictionary::standard(3, sc.factor_cut);
  const auto rep =
      residual_M(e, other, dict, default_node_pairs(e.grid), 3.9);
  d = fmt("charged-path integral max = %.1e (tol 1e-12), all-path max = "
          "%.2e (> 1e-4), residual_M max|z| = %.2f",
          eq.max_abs_weighted, eq.max_abs_all, rep.max_abs_z);
  return eq.max_abs_weighted <= 1e-12 && eq.max_abs_all > 1e-4 && rep.pass;
}

// ---- 10. CLI determinism --------------------------------------------------

bool c10(std::string& d) {
  const fs::path root =
      fs::temp_directory_path() / ("cmclab_acc_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  auto shell = [&](const std::string& tail, const char* log) {
    return run_cmd(kBin + " " + tail + " > " + (root / log).string() + " 2> " +
                   (root / (std::string(log) + ".err")).string());
  };

  // simulate twice, plus a third run under a different worker count
  const std::string sim = "simulate --scenario " + kScen +
                          "/twostate_brownian.json --n 2000 --seed 9 --out ";
  if (shell(sim + (root / "ens_a").string(), "sim_a") != 0) {
    d = "simulate exited nonzero";
    return false;
  }
  shell(sim + (root / "ens_b").string(), "sim_b");
  run_cmd("CMC_THREADS=3 " + kBin + " " + sim + (root / "ens_c").string() +
          " > " + (root / "sim_c").string() + " 2> /dev/null");
  const bool sim_ok =
      slurp(root / "ens_a/events.csv") == slurp(root / "ens_b/events.csv") &&
      slurp(root / "ens_a/events.csv") == slurp(root / "ens_c/events.csv") &&
      slurp(root / "ens_a/manifest.json") == slurp(root / "ens_b/manifest.json");

  const std::string fld = "field --scenario " + kScen +
                          "/threestate_factor.json --factor-seed 5 --out ";
  shell(fld + (root / "f_a.json").string(), "fld_a");
  shell(fld + (root / "f_b.json").string(), "fld_b");
  const bool fld_ok =
      slurp(root / "f_a.json") == slurp(root / "f_b.json");

  const std::string dia = "diagnose --scenario " + kScen +
                          "/twostate_brownian.json --ensemble " +
                          (root / "ens_a").string() + " --suite all --out ";
  shell(dia + (root / "d_a").string(), "dia_a");
  run_cmd("CMC_THREADS=3 " + kBin + " " + dia + (root / "d_b").string() +
          " > " + (root / "dia_b").string() + " 2> /dev/null");
  const bool dia_ok =
      slurp(root / "d_a/zscores.csv") == slurp(root / "d_b/zscores.csv") &&
      slurp(root / "d_a/report.json") == slurp(root / "d_b/report.json");

  const std::string orc = "oracle --scenario " + kScen + "/discrete_k3.json";
  shell(orc, "orc_a");
  shell(orc, "orc_b");
  const bool orc_ok = slurp(root / "orc_a") == slurp(root / "orc_b");

  d = fmt("byte-identical reruns: simulate %s (incl. 3 workers), field %s, "
          "diagnose %s (1 vs 3 workers), oracle %s",
          sim_ok ? "yes" : "NO", fld_ok ? "yes" : "NO",
          dia_ok ? "yes" : "NO", orc_ok ? "yes" : "NO");
  return sim_ok && fld_ok && dia_ok && orc_ok;
}

}  // namespace

int main() {
  criterion(1, "weight normalization E_Q[eta] = 1", c1);
  criterion(2, "weighted and direct samplers agree", c2);
  criterion(3, "closed-form transition probabilities", c3);
  criterion(4, "inverse identity and stochasticity", c4);
  criterion(5, "martingale suite detects the doubled rule", c5);
  criterion(6, "conditional Markov property holds in cells", c6);
  criterion(7, "exact discrete oracle and planted violations", c7);
  criterion(8, "discrete-to-continuous convergence slope", c8);
  criterion(9, "equivalence relative to the chain", c9);
  criterion(10, "CLI determinism across reruns and workers", c10);
  if (g_failures == 0)
    std::printf("acceptance: all 10 criteria pass\n");
  else
    std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
  return g_failures;
}
