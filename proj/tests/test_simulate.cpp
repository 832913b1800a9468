#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include "cmclab/models.hpp"
#include "cmclab/scenario.hpp"
#include "cmclab/simulate.hpp"

using namespace cmclab;

namespace {

const std::string kDir = CMCLAB_SCENARIO_DIR;

FactorPath flat_factor(std::size_t nodes) {
  FactorPath f;
  f.dims = 1;
  f.values.assign(nodes, 0.0);
  return f;
}

}  // namespace

TEST_CASE("density of a path without jumps is the survival ratio") {
  // lambda_1 = 2, a_1 = 1 on [0, 1]: eta = exp(-(2 - 1)) = e^{-1}
  const ConstantIntensity m(Matrix::from_rows({{-2.0, 2.0}, {1.0, -1.0}}));
  const Matrix a = Matrix::from_rows({{-1.0, 1.0}, {1.0, -1.0}});
  const TimeGrid grid(1.0, 10);
  ChainPath still;
  still.initial_state = 0;
  const auto w = radon_nikodym_weight(still, flat_factor(11), m, a, grid);
  CHECK(std::abs(w.eta - std::exp(-1.0)) < 1e-15);
  CHECK(w.eta_nodes[0] == 1.0);
  for (std::size_t k = 0; k <= 10; ++k)
    CHECK(std::abs(w.eta_nodes[k] - std::exp(-0.1 * double(k))) < 1e-15);
}

TEST_CASE("density of a one-jump path carries the rate ratio") {
  // jump 1 -> 2 at t = 0.5: eta = (2/1) exp(-(2-1)*0.5) * exp(-0*(1-0.5))
  const ConstantIntensity m(Matrix::from_rows({{-2.0, 2.0}, {1.0, -1.0}}));
  const Matrix a = Matrix::from_rows({{-1.0, 1.0}, {1.0, -1.0}});
  const TimeGrid grid(1.0, 10);
  ChainPath p;
  p.initial_state = 0;
  p.jumps = {{0.5, 0, 1}};
  const auto w = radon_nikodym_weight(p, flat_factor(11), m, a, grid);
  CHECK(std::abs(w.eta - 2.0 * std::exp(-0.5)) < 1e-15);
}

TEST_CASE("a jump the modulated rule forbids kills the weight exactly") {
  // state 1 cannot leave under the rule, but the reference path jumps
  const ConstantIntensity m(Matrix::from_rows({{0.0, 0.0}, {1.0, -1.0}}));
  const Matrix a = Matrix::from_rows({{-1.0, 1.0}, {1.0, -1.0}});
  const TimeGrid grid(1.0, 10);
  ChainPath p;
  p.initial_state = 0;
  p.jumps = {{0.33, 0, 1}};
  const auto w = radon_nikodym_weight(p, flat_factor(11), m, a, grid);
  CHECK(w.eta == 0.0);
  CHECK(w.eta_nodes[2] > 0.0);   // alive before the jump interval
  CHECK(w.eta_nodes[5] == 0.0);  // dead after it
}

TEST_CASE("rule equal to the reference gives unit weights bitwise") {
  const Matrix a = Matrix::from_rows({{-1.0, 1.0}, {1.0, -1.0}});
  const ConstantIntensity m(a);
  FactorDriverSpec driver;  // constant 0
  InitialLawSpec law;
  law.probs = {1.0, 0.0};
  const auto e =
      build_weighted_ensemble(m, driver, law, a, TimeGrid(1.0, 10), 200, 7);
  for (double w : e.weights) CHECK(w == 1.0);
}

TEST_CASE("brownian factor has the declared variance") {
  FactorDriverSpec spec;
  spec.kind = DriverKind::kBrownian;
  spec.brownian_start = 0.4;
  spec.brownian_vol = 1.3;
  const TimeGrid grid(1.0, 20);
  const std::size_t n = 20000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = sample_factor(
        spec, grid, mix_seed(11, i, std::uint64_t(Stream::kFactor)));
    REQUIRE(f.values[0] == 0.4);
    const double inc = f.values[20] - 0.4;
    s += inc;
    s2 += inc * inc;
  }
  const double var = (s2 - s * s / double(n)) / double(n - 1);
  const double true_var = 1.3 * 1.3;
  CHECK(std::abs(s / double(n)) < 4.0 * 1.3 / std::sqrt(double(n)));
  CHECK(std::abs(var - true_var) <
        5.0 * true_var * std::sqrt(2.0 / double(n - 1)));
}

TEST_CASE("telegraph factor flips between its levels at its jump times") {
  FactorDriverSpec spec;
  spec.kind = DriverKind::kTelegraph;
  spec.telegraph_levels = {-1.0, 2.0};
  spec.telegraph_rate = 3.0;
  spec.telegraph_start_probs = {0.5, 0.5};
  const TimeGrid grid(1.0, 10);
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const auto f = sample_factor(spec, grid, seed);
    double prev = 0.0;
    for (double t : f.jump_times) {
      CHECK(t > prev);
      CHECK(t <= grid.horizon);
      prev = t;
    }
    const bool start_hi = f.values[0] == 2.0;
    for (std::size_t k = 0; k <= 10; ++k) {
      std::size_t flips = 0;
      for (double t : f.jump_times)
        if (t <= grid.node(k)) ++flips;
      const double expect =
          spec.telegraph_levels[(std::size_t(start_hi) + flips) % 2];
      CHECK(f.values[k] == expect);
    }
  }
}

TEST_CASE("initial law frequencies match the declared vector") {
  InitialLawSpec law;
  law.probs = {0.3, 0.7};
  const FactorPath f = flat_factor(2);
  const std::size_t n = 20000;
  std::size_t ones = 0;
  for (std::size_t i = 0; i < n; ++i)
    ones += sample_initial_state(
                law, f, mix_seed(3, i, std::uint64_t(Stream::kInitial))) == 1;
  const double freq = double(ones) / double(n);
  CHECK(std::abs(freq - 0.7) < 4.0 * std::sqrt(0.3 * 0.7 / double(n)));
}

TEST_CASE("factor-sign initial law follows the factor at node zero") {
  InitialLawSpec law;
  law.kind = InitialLawKind::kFactorSign;
  law.negative = {0.9, 0.1};
  law.positive = {0.2, 0.8};
  law.cut = 0.0;
  FactorPath f = flat_factor(2);
  f.values[0] = -0.5;
  std::size_t ones = 0;
  const std::size_t n = 20000;
  for (std::size_t i = 0; i < n; ++i)
    ones += sample_initial_state(law, f, mix_seed(5, i, 2)) == 1;
  CHECK(std::abs(double(ones) / double(n) - 0.1) <
        4.0 * std::sqrt(0.9 * 0.1 / double(n)));
  f.values[0] = 0.5;
  ones = 0;
  for (std::size_t i = 0; i < n; ++i)
    ones += sample_initial_state(law, f, mix_seed(5, i, 2)) == 1;
  CHECK(std::abs(double(ones) / double(n) - 0.8) <
        4.0 * std::sqrt(0.2 * 0.8 / double(n)));
}

TEST_CASE("weights average to one and keep a healthy ESS") {
  const auto sc = load_scenario(kDir + "/twostate_brownian.json").continuous;
  const std::size_t n = 20000;
  const auto e = build_ensemble(sc, n, 1);
  const double m = mean(e.weights);
  const double sd = std::sqrt(sample_variance(e.weights));
  CHECK(std::abs(m - 1.0) < 4.0 * sd / std::sqrt(double(n)));
  CHECK(effective_sample_size(e.weights) / double(n) > 0.5);
}

TEST_CASE("weighting leaves factor functionals untouched") {
  // E_P[g(factor)] = E_Q[g(factor)], i.e. E_Q[(w - 1) g(factor)] = 0
  const auto sc = load_scenario(kDir + "/twostate_brownian.json").continuous;
  const std::size_t n = 20000;
  const auto e = build_ensemble(sc, n, 2);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = e.factors[i].values[e.grid.steps] > 0.0 ? 1.0 : 0.0;
    const double v = (e.weights[i] - 1.0) * g;
    s += v;
    s2 += v * v;
  }
  const double est = s / double(n);
  const double se = std::sqrt((s2 - s * s / double(n)) / double(n - 1) /
                              double(n));
  CHECK(std::abs(est) < 4.0 * se);
}

TEST_CASE("weighted and direct samplers agree on the horizon marginal") {
  const auto sc = load_scenario(kDir + "/threestate_factor.json").continuous;
  const std::size_t n = 30000;
  const auto ew = build_ensemble(sc, n, 7);
  const auto ed = build_direct(sc, n, 7);
  const double t = sc.grid.horizon;
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
    const double se_w = std::sqrt(
        (sw2 - sw * sw / double(n)) / double(n - 1) / double(n));
    const double se_d = std::sqrt(pd * (1.0 - pd) / double(n));
    CHECK(std::abs(pw - pd) <
          4.0 * std::sqrt(se_w * se_w + se_d * se_d) + 1e-12);
  }
}

TEST_CASE("eta at the last node is the path weight") {
  const auto sc = load_scenario(kDir + "/twostate_brownian.json").continuous;
  const auto e = build_ensemble(sc, 500, 3);
  for (std::size_t i = 0; i < e.size(); ++i) {
    CHECK(e.eta_node(i, 0) == 1.0);
    CHECK(e.eta_node(i, e.grid.steps) == e.weights[i]);
  }
}

TEST_CASE("paths through a rule-forbidden state keep weight zero") {
  const auto sc = load_scenario(kDir + "/unreachable_state.json").continuous;
  const std::size_t n = 5000;
  const auto e = build_ensemble(sc, n, 4);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool visits = e.chains[i].initial_state == 2;
    for (const auto& j : e.chains[i].jumps) visits = visits || j.to == 2;
    if (e.weights[i] == 0.0) {
      ++zeros;
      CHECK(visits);  // zero weight only via the forbidden state
    } else {
      CHECK_FALSE(visits);
    }
  }
  CHECK(zeros > 50);  // reference pushes ~5% of paths through state 3
  CHECK(zeros < n / 2);
}
