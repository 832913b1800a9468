#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmclab/core.hpp"
#include "cmclab/parallel.hpp"
#include "cmclab/rng.hpp"

namespace cmclab {

/// Substream purposes. Path i's randomness is mix_seed(base, i, purpose), so
/// any path can be regenerated in isolation and ensembles are independent of
/// worker count.
enum class Stream : std::uint64_t {
  kFactor = 1,
  kInitial = 2,
  kChain = 3,
  kDirect = 4,
};

inline Rng path_rng(std::uint64_t base_seed, std::size_t path, Stream s) {
  return Rng(mix_seed(base_seed, path, static_cast<std::uint64_t>(s)));
}

enum class DriverKind { kConstant, kBrownian, kTelegraph };

struct FactorDriverSpec {
  DriverKind kind = DriverKind::kConstant;
  double constant_value = 0.0;
  double brownian_start = 0.0;
  double brownian_vol = 1.0;
  std::vector<double> telegraph_levels;       // exactly two
  double telegraph_rate = 1.0;
  std::vector<double> telegraph_start_probs;  // over levels

  /// Natural center of the driver, used as the default factor cut in
  /// diagnostics dictionaries and bucket splits.
  double default_cut() const {
    switch (kind) {
      case DriverKind::kConstant:
        return constant_value - 1.0;
      case DriverKind::kBrownian:
        return brownian_start;
      case DriverKind::kTelegraph:
        return 0.5 * (telegraph_levels[0] + telegraph_levels[1]);
    }
    return 0.0;
  }
};

inline FactorPath sample_factor(const FactorDriverSpec& spec,
                                const TimeGrid& grid, std::uint64_t seed) {
  FactorPath p;
  p.dims = 1;
  p.values.resize(grid.steps + 1);
  Rng rng(seed);
  switch (spec.kind) {
    case DriverKind::kConstant: {
      for (double& v : p.values) v = spec.constant_value;
      break;
    }
    case DriverKind::kBrownian: {
      double x = spec.brownian_start;
      p.values[0] = x;
      for (std::size_t k = 0; k < grid.steps; ++k) {
        const double len = grid.node(k + 1) - grid.node(k);
        x += spec.brownian_vol * std::sqrt(len) * rng.normal();
        p.values[k + 1] = x;
      }
      break;
    }
    case DriverKind::kTelegraph: {
      const std::size_t start =
          rng.categorical(std::span<const double>(spec.telegraph_start_probs));
      double t = rng.exponential(spec.telegraph_rate);
      while (t <= grid.horizon) {
        p.jump_times.push_back(t);
        t += rng.exponential(spec.telegraph_rate);
      }
      std::size_t flips = 0;
      for (std::size_t k = 0; k <= grid.steps; ++k) {
        const double node = grid.node(k);
        while (flips < p.jump_times.size() && p.jump_times[flips] <= node)
          ++flips;
        p.values[k] = spec.telegraph_levels[(start + flips) % 2];
      }
      break;
    }
  }
  return p;
}

enum class InitialLawKind { kVector, kFactorSign };

struct InitialLawSpec {
  InitialLawKind kind = InitialLawKind::kVector;
  std::vector<double> probs;
  std::vector<double> negative, positive;  // FactorSign regimes
  double cut = 0.0;

  /// mu as a function of the factor at node 0 only (F_0-measurable).
  std::vector<double> eval(const FactorView& f) const {
    if (kind == InitialLawKind::kVector) return probs;
    return f.value(0) > cut ? positive : negative;
  }
};

inline void check_probability_vector(std::span<const double> p,
                                     const char* who, double tol = 1e-9) {
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0) throw std::invalid_argument(std::string(who) + ": negative mass");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol)
    throw std::invalid_argument(std::string(who) + ": mass must sum to 1");
}

inline int sample_initial_state(const InitialLawSpec& law, const FactorPath& f,
                                std::uint64_t seed) {
  const std::vector<double> mu = law.eval(FactorView(f, 0));
  check_probability_vector(mu, "initial law");
  Rng rng(seed);
  return static_cast<int>(rng.categorical(std::span<const double>(mu)));
}

/// Reference rates: a generator with strictly positive off-diagonals, so the
/// reference chain can reach every state and the density below is defined.
inline Matrix checked_reference(Matrix a) {
  if (const auto rep = validate_generator(a); !rep.ok)
    throw std::invalid_argument("reference rates: not a generator");
  for (std::size_t i = 0; i < a.dim(); ++i)
    for (std::size_t j = 0; j < a.dim(); ++j)
      if (i != j && !(a(i, j) > 0.0))
        throw std::invalid_argument(
            "reference rates: off-diagonals must be strictly positive");
  return a;
}

/// Time-homogeneous chain under the reference measure by competing
/// exponentials; exact, no time discretisation.
inline ChainPath simulate_reference_chain(const Matrix& a, int initial,
                                          const TimeGrid& grid,
                                          std::uint64_t seed) {
  ChainPath path;
  path.initial_state = initial;
  Rng rng(seed);
  const std::size_t d = a.dim();
  int s = initial;
  double t = 0.0;
  std::vector<double> w(d);
  while (true) {
    const double rate = -a(s, s);
    if (!(rate > 0.0)) break;
    t += rng.exponential(rate);
    if (t > grid.horizon) break;
    for (std::size_t y = 0; y < d; ++y)
      w[y] = y == static_cast<std::size_t>(s) ? 0.0 : a(s, y);
    const int to = static_cast<int>(rng.categorical(std::span<const double>(w)));
    path.jumps.push_back({t, s, to});
    s = to;
  }
  return path;
}

/// Direct sampler of the modulated chain given a factor path: competing
/// exponentials within each constant piece. Exact for piecewise-constant
/// rates; used as the independent cross-check of the weighted sampler.
inline ChainPath simulate_direct_chain(const IntensityModel& m,
                                       const FactorPath& f,
                                       const TimeGrid& grid, int initial,
                                       std::uint64_t seed) {
  ChainPath path;
  path.initial_state = initial;
  Rng rng(seed);
  const std::size_t d = m.dim();
  int s = initial;
  std::vector<double> w(d);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const Matrix lam = intensity_on_interval(m, f, grid, k);
    double t = grid.node(k);
    const double end = grid.node(k + 1);
    while (true) {
      const double rate = -lam(s, s);
      if (!(rate > 0.0)) break;
      t += rng.exponential(rate);
      if (t >= end) break;
      for (std::size_t y = 0; y < d; ++y)
        w[y] = y == static_cast<std::size_t>(s) ? 0.0 : lam(s, y);
      const int to =
          static_cast<int>(rng.categorical(std::span<const double>(w)));
      path.jumps.push_back({t, s, to});
      s = to;
    }
  }
  return path;
}

struct WeightResult {
  double eta = 1.0;
  std::vector<double> eta_nodes;  // eta at every grid node, eta_nodes[0] = 1
};

/// Radon-Nikodym density of the modulated law w.r.t. the reference law on one
/// path: survival factors exp(-int (lambda - a) dt) over occupied states and
/// ratio factors lambda/a at jumps, accumulated in log space. A jump whose
/// target rate is zero kills the weight exactly (path impossible under the
/// modulated law); such paths are kept with weight 0.
inline WeightResult radon_nikodym_weight(const ChainPath& chain,
                                         const FactorPath& f,
                                         const IntensityModel& m,
                                         const Matrix& a,
                                         const TimeGrid& grid) {
  WeightResult out;
  out.eta_nodes.assign(grid.steps + 1, 1.0);
  double log_eta = 0.0;
  bool dead = false;
  std::size_t next_jump = 0;
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const Matrix lam = intensity_on_interval(m, f, grid, k);
    double cur = grid.node(k);
    const double end = grid.node(k + 1);
    int s = chain.state_at(cur);
    while (next_jump < chain.jumps.size() &&
           chain.jumps[next_jump].time <= end) {
      const JumpRecord& j = chain.jumps[next_jump];
      log_eta += (lam(s, s) - a(s, s)) * (j.time - cur);
      if (lam(j.from, j.to) > 0.0) {
        log_eta += std::log(lam(j.from, j.to) / a(j.from, j.to));
      } else {
        dead = true;
      }
      cur = j.time;
      s = j.to;
      ++next_jump;
    }
    log_eta += (lam(s, s) - a(s, s)) * (end - cur);
    out.eta_nodes[k + 1] = dead ? 0.0 : std::exp(log_eta);
  }
  out.eta = out.eta_nodes[grid.steps];
  return out;
}

/// Reference-measure sample with importance weights: the weighted empirical
/// measure represents the modulated law. Zero-weight paths are retained.
struct WeightedEnsemble {
  std::uint64_t base_seed = 0;
  std::string scenario_hash;
  TimeGrid grid;
  std::vector<FactorPath> factors;
  std::vector<ChainPath> chains;
  std::vector<double> weights;
  std::vector<double> eta_nodes;  // flattened size() x (steps + 1)

  std::size_t size() const { return chains.size(); }
  double eta_node(std::size_t i, std::size_t k) const {
    return eta_nodes[i * (grid.steps + 1) + k];
  }
};

inline WeightedEnsemble build_weighted_ensemble(
    const IntensityModel& m, const FactorDriverSpec& driver,
    const InitialLawSpec& law, const Matrix& reference, const TimeGrid& grid,
    std::size_t n, std::uint64_t base_seed, std::string scenario_hash = {}) {
  if (n == 0) throw std::invalid_argument("ensemble needs n >= 1");
  WeightedEnsemble e;
  e.base_seed = base_seed;
  e.scenario_hash = std::move(scenario_hash);
  e.grid = grid;
  e.factors.resize(n);
  e.chains.resize(n);
  e.weights.resize(n);
  e.eta_nodes.resize(n * (grid.steps + 1));
  parallel_for(n, [&](std::size_t i) {
    e.factors[i] =
        sample_factor(driver, grid, mix_seed(base_seed, i,
                                             static_cast<std::uint64_t>(Stream::kFactor)));
    const int x0 = sample_initial_state(
        law, e.factors[i],
        mix_seed(base_seed, i, static_cast<std::uint64_t>(Stream::kInitial)));
    e.chains[i] = simulate_reference_chain(
        reference, x0, grid,
        mix_seed(base_seed, i, static_cast<std::uint64_t>(Stream::kChain)));
    const WeightResult w =
        radon_nikodym_weight(e.chains[i], e.factors[i], m, reference, grid);
    e.weights[i] = w.eta;
    for (std::size_t k = 0; k <= grid.steps; ++k)
      e.eta_nodes[i * (grid.steps + 1) + k] = w.eta_nodes[k];
  });
  return e;
}

/// Same factor substreams as the weighted sampler, chain drawn directly from
/// the modulated law. Independent route to the same joint distribution.
struct DirectEnsemble {
  std::uint64_t base_seed = 0;
  TimeGrid grid;
  std::vector<FactorPath> factors;
  std::vector<ChainPath> chains;
  std::size_t size() const { return chains.size(); }
};

inline DirectEnsemble build_direct_ensemble(const IntensityModel& m,
                                            const FactorDriverSpec& driver,
                                            const InitialLawSpec& law,
                                            const TimeGrid& grid, std::size_t n,
                                            std::uint64_t base_seed) {
  DirectEnsemble e;
  e.base_seed = base_seed;
  e.grid = grid;
  e.factors.resize(n);
  e.chains.resize(n);
  parallel_for(n, [&](std::size_t i) {
    e.factors[i] =
        sample_factor(driver, grid, mix_seed(base_seed, i,
                                             static_cast<std::uint64_t>(Stream::kFactor)));
    const int x0 = sample_initial_state(
        law, e.factors[i],
        mix_seed(base_seed, i, static_cast<std::uint64_t>(Stream::kInitial)));
    e.chains[i] = simulate_direct_chain(
        m, e.factors[i], grid, x0,
        mix_seed(base_seed, i, static_cast<std::uint64_t>(Stream::kDirect)));
  });
  return e;
}

inline double effective_sample_size(std::span<const double> w) {
  if (w.empty()) throw std::invalid_argument("ESS of empty weight vector");
  double s = 0.0, s2 = 0.0;
  for (double v : w) {
    s += v;
    s2 += v * v;
  }
  if (!(s2 > 0.0)) return 0.0;
  return s * s / s2;
}

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace cmclab
