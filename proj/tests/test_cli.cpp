#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kBin = CMCLAB_BIN_PATH;
const std::string kScen = CMCLAB_SCENARIO_DIR;

fs::path work_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() /
                 ("cmclab_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  fs::path p = work_root() / (tag + "_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args, const std::string& tag) {
  const fs::path dir = fresh_dir(tag);
  const fs::path out = dir / "stdout.txt";
  const std::string cmd = kBin + " " + args + " > " + out.string() +
                          " 2> " + (dir / "stderr.txt").string();
  const int st = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  std::ifstream in(out);
  std::ostringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("version flag exits cleanly") {
  CHECK(run("--version", "version").code == 0);
}

TEST_CASE("simulate writes a loadable, deterministic ensemble") {
  const fs::path a = fresh_dir("sim_a") / "ens";
  const fs::path b = fresh_dir("sim_b") / "ens";
  const std::string common = "simulate --scenario " + kScen +
                             "/twostate_brownian.json --n 500 --seed 3 --out ";
  const auto ra = run(common + a.string(), "sim_run_a");
  REQUIRE(ra.code == 0);
  const json manifest = json::parse(ra.out);
  CHECK(manifest.at("format") == "cmc-ensemble/1");
  CHECK(manifest.at("paths") == 500);
  CHECK(manifest.at("files").at("events.csv").at("rows").get<long>() > 500);
  CHECK(fs::exists(a / "events.csv"));
  CHECK(fs::exists(a / "manifest.json"));

  const auto rb = run(common + b.string(), "sim_run_b");
  REQUIRE(rb.code == 0);
  CHECK(slurp(a / "events.csv") == slurp(b / "events.csv"));
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
}

TEST_CASE("field reports agreeing routes on a clean scenario") {
  const fs::path out = fresh_dir("field") / "field.json";
  const auto r = run("field --scenario " + kScen +
                         "/twostate_brownian.json --factor-seed 2 --out " +
                         out.string(),
                     "field_run");
  REQUIRE(r.code == 0);
  const json rep = json::parse(slurp(out));
  CHECK(rep.at("pass") == true);
  CHECK(rep.at("routes").at("max_pairwise_diff").get<double>() < 1e-6);
  CHECK(rep.at("field_check").at("max_inverse_dev").get<double>() < 1e-9);
  CHECK(rep.at("kolmogorov_residual").at("backward").get<double>() < 1e-2);
}

TEST_CASE("field rejects an off-grid window") {
  const auto r = run("field --scenario " + kScen +
                         "/twostate_brownian.json --t 0.123456",
                     "field_offgrid");
  CHECK(r.code == 2);
}

TEST_CASE("field rejects a discrete scenario") {
  const auto r =
      run("field --scenario " + kScen + "/discrete_k3.json", "field_discrete");
  CHECK(r.code == 2);
}

TEST_CASE("factor files must match the scenario grid") {
  const fs::path good = fresh_dir("factor") / "good.json";
  const fs::path bad = fresh_dir("factor") / "bad.json";
  {
    // twostate_brownian has 40 steps -> 41 nodes
    json j;
    j["values"] = std::vector<double>(41, 0.25);
    std::ofstream(good) << j.dump();
    j["values"] = std::vector<double>(2, 0.25);
    std::ofstream(bad) << j.dump();
  }
  const std::string base =
      "field --scenario " + kScen + "/twostate_brownian.json --factor-file ";
  CHECK(run(base + bad.string(), "factor_bad").code == 2);
  CHECK(run(base + good.string(), "factor_good").code == 0);
}

TEST_CASE("diagnose clears a clean ensemble and writes both reports") {
  const fs::path ens = fresh_dir("diag_ens") / "ens";
  REQUIRE(run("simulate --scenario " + kScen +
                  "/twostate_brownian.json --n 4000 --seed 5 --out " +
                  ens.string(),
              "diag_sim")
              .code == 0);

  const fs::path out = fresh_dir("diag_out");
  const auto r = run("diagnose --scenario " + kScen +
                         "/twostate_brownian.json --ensemble " + ens.string() +
                         " --suite all --out " + out.string(),
                     "diag_run");
  REQUIRE(r.code == 0);
  const json rep = json::parse(slurp(out / "report.json"));
  CHECK(rep.at("pass") == true);
  CHECK(rep.at("suites").contains("residual_M"));
  CHECK(rep.at("suites").contains("cmc"));
  const std::string z = slurp(out / "zscores.csv");
  CHECK(z.rfind("suite,process,s_node,t_node,phi,estimate,se,z\n", 0) == 0);

  SECTION("a doubled rule fails the same ensemble") {
    const fs::path out2 = fresh_dir("diag_fail");
    const auto r2 =
        run("diagnose --scenario " + kScen +
                "/twostate_brownian.json --ensemble " + ens.string() +
                " --suite all --override-intensity-scale 2 --out " +
                out2.string(),
            "diag_doubled");
    CHECK(r2.code == 1);
    const json rep2 = json::parse(slurp(out2 / "report.json"));
    CHECK(rep2.at("pass") == false);
  }

  SECTION("equivalence suite demands an override rule") {
    const auto r2 = run("diagnose --scenario " + kScen +
                            "/twostate_brownian.json --ensemble " +
                            ens.string() + " --suite equivalence",
                        "diag_eq_missing");
    CHECK(r2.code == 2);
  }

  SECTION("unknown suite names are rejected by the parser") {
    const auto r2 = run("diagnose --scenario " + kScen +
                            "/twostate_brownian.json --ensemble " +
                            ens.string() + " --suite bogus",
                        "diag_bogus");
    CHECK(r2.code == 2);
  }

  SECTION("scenario hash must match the stored manifest") {
    const auto r2 = run("diagnose --scenario " + kScen +
                            "/telegraph_factor.json --ensemble " +
                            ens.string() + " --suite M",
                        "diag_hash");
    CHECK(r2.code == 2);
  }
}

TEST_CASE("missing scenario files exit with the io code") {
  const auto r = run("simulate --scenario " + kScen +
                         "/no_such_scenario.json --out " +
                         (fresh_dir("io") / "x").string(),
                     "missing");
  CHECK(r.code == 3);
}

TEST_CASE("oracle passes the clean fixture and flags the tampered ones") {
  const auto ok =
      run("oracle --scenario " + kScen + "/discrete_k3.json", "oracle_ok");
  REQUIRE(ok.code == 0);
  const json rep = json::parse(ok.out);
  CHECK(rep.at("pass") == true);
  CHECK(rep.at("max_defect").get<double>() < 1e-12);

  const auto bad1 = run("oracle --scenario " + kScen +
                            "/discrete_k3_tamper_nonmarkov.json",
                        "oracle_nm");
  CHECK(bad1.code == 1);
  const auto bad2 = run("oracle --scenario " + kScen +
                            "/discrete_k3_tamper_future_mu.json",
                        "oracle_mu");
  CHECK(bad2.code == 1);
  CHECK(json::parse(bad2.out).at("checks").at("immersion").get<double>() >
        1e-3);
}
