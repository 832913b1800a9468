#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cmclab/matrix.hpp"

namespace cmclab::oracle {

// Finite world, enumerated exactly: K i.i.d. fair bits eps_1..eps_K revealed
// one per epoch, a chain on <= 3 states moved by one-step matrices
// I + Lambda_k * dt where Lambda_k may read bits with index <= k. Everything
// downstream (conditionals, martingale identities, measure changes) reduces
// to finite sums over atoms, so discrepancies are pure arithmetic noise.

enum class Tamper { kNone, kNonMarkovStep, kFutureBitInitial };
enum class Measure { kTarget, kReference };

struct DiscreteScenario {
  std::string name;
  std::size_t states = 2;  // <= 3
  std::size_t steps = 2;   // <= 8
  double dt = 0.1;
  std::vector<double> initial_law;
  Matrix reference;  // strictly positive off-diagonals
  // Step rule: step k (k = 1..steps, moving x_{k-1} to x_k) uses the matrix
  // selected by bit eps_{j(k)}, j(k) = k when bit_index == 0 ("current"),
  // else j(k) = min(bit_index, k). j(k) <= k keeps the rule adapted.
  Matrix bit0, bit1;
  std::size_t bit_index = 0;

  // Planted violations, applied during enumeration only; the declared rule
  // above stays clean so the checks can see the inconsistency.
  Tamper tamper = Tamper::kNone;
  Matrix tamper_matrix;  // kNonMarkovStep: replaces step 2 when x_0 == 0
  std::vector<double> tamper_mu0, tamper_mu1;  // kFutureBitInitial, by eps_K

  std::string hash;

  /// Generator used at step k under bit pattern `bits` (bit i-1 = eps_i).
  const Matrix& intensity(std::size_t k, std::uint32_t bits) const {
    const std::size_t j = bit_index == 0 ? k : std::min(bit_index, k);
    return ((bits >> (j - 1)) & 1u) ? bit1 : bit0;
  }
};

/// One-step transition matrix I + lambda * dt; requires 1 + diag * dt >= 0.
inline Matrix step_matrix(const Matrix& lambda, double dt) {
  Matrix q = Matrix::identity(lambda.dim());
  q += lambda * dt;
  for (std::size_t i = 0; i < q.dim(); ++i)
    if (q(i, i) < 0.0)
      throw std::invalid_argument("step_matrix: dt too large for rates");
  return q;
}

inline Matrix discrete_transition_power(const Matrix& lambda, double dt,
                                        std::size_t steps) {
  return matrix_power(step_matrix(lambda, dt), steps);
}

struct Atom {
  std::uint32_t bits = 0;
  std::array<std::uint8_t, 9> x{};  // trajectory x_0..x_steps
  double p = 0.0;
};

struct AtomTable {
  std::size_t states = 0;
  std::size_t steps = 0;
  double dt = 0.0;
  Measure measure = Measure::kTarget;
  std::vector<Atom> atoms;  // zero-probability trajectories pruned
};

inline void validate_discrete(const DiscreteScenario& sc) {
  if (sc.states < 2 || sc.states > 3)
    throw std::invalid_argument("discrete oracle: states must be 2 or 3");
  if (sc.steps < 1 || sc.steps > 8)
    throw std::invalid_argument("discrete oracle: steps must be 1..8");
  if (!(sc.dt > 0.0)) throw std::invalid_argument("discrete oracle: dt <= 0");
  const double atoms = std::ldexp(1.0, static_cast<int>(sc.steps)) *
                       std::pow(static_cast<double>(sc.states),
                                static_cast<double>(sc.steps + 1));
  if (atoms > 2e6)
    throw std::invalid_argument("discrete oracle: atom count above 2e6");
  if (sc.bit_index > sc.steps)
    throw std::invalid_argument("discrete oracle: bit_index past last step");
}

inline AtomTable enumerate_atoms(const DiscreteScenario& sc, Measure measure) {
  validate_discrete(sc);
  const std::size_t d = sc.states;
  const std::size_t K = sc.steps;
  const double bit_mass = std::ldexp(1.0, -static_cast<int>(K));

  AtomTable table;
  table.states = d;
  table.steps = K;
  table.dt = sc.dt;
  table.measure = measure;

  const Matrix ref_step = step_matrix(sc.reference, sc.dt);
  for (std::uint32_t bits = 0; bits < (1u << K); ++bits) {
    // initial law for this bit pattern
    const std::vector<double>* mu = &sc.initial_law;
    if (measure == Measure::kTarget && sc.tamper == Tamper::kFutureBitInitial)
      mu = ((bits >> (K - 1)) & 1u) ? &sc.tamper_mu1 : &sc.tamper_mu0;
    // step matrices for this bit pattern (target) or the reference table
    std::vector<Matrix> q(K + 1);
    for (std::size_t k = 1; k <= K; ++k)
      q[k] = measure == Measure::kTarget
                 ? step_matrix(sc.intensity(k, bits), sc.dt)
                 : ref_step;

    Atom a;
    a.bits = bits;
    // depth-first over trajectories, pruning zero probability
    std::function<void(std::size_t, double)> walk = [&](std::size_t k,
                                                        double p) {
      if (k == K) {
        a.p = bit_mass * p;
        table.atoms.push_back(a);
        return;
      }
      const Matrix* step = &q[k + 1];
      Matrix tampered;
      if (measure == Measure::kTarget &&
          sc.tamper == Tamper::kNonMarkovStep && k + 1 == 2 && a.x[0] == 0) {
        tampered = step_matrix(sc.tamper_matrix, sc.dt);
        step = &tampered;
      }
      for (std::size_t y = 0; y < d; ++y) {
        const double e = (*step)(a.x[k], y);
        if (e <= 0.0) continue;
        a.x[k + 1] = static_cast<std::uint8_t>(y);
        walk(k + 1, p * e);
      }
    };
    for (std::size_t x0 = 0; x0 < d; ++x0) {
      if ((*mu)[x0] <= 0.0) continue;
      a.x[0] = static_cast<std::uint8_t>(x0);
      walk(0, (*mu)[x0]);
    }
  }
  return table;
}

namespace detail {

/// Sentinel-packed base-4 key of x[from..to] (states <= 3 fit in 2 bits).
inline std::uint64_t traj_key(const Atom& a, std::size_t from, std::size_t to) {
  std::uint64_t k = 1;
  for (std::size_t i = from; i <= to; ++i) k = (k << 2) | a.x[i];
  return k;
}

inline std::uint64_t cell_key(std::uint32_t bits, std::uint64_t traj) {
  return (static_cast<std::uint64_t>(bits) << 32) | traj;
}

using PairMap = std::map<std::pair<std::uint64_t, std::uint64_t>, double>;
using CellMap = std::map<std::uint64_t, double>;

inline double get(const CellMap& m, std::uint64_t k) {
  auto it = m.find(k);
  return it == m.end() ? 0.0 : it->second;
}
inline double get(const PairMap& m, std::pair<std::uint64_t, std::uint64_t> k) {
  auto it = m.find(k);
  return it == m.end() ? 0.0 : it->second;
}

/// Product of one-step matrices for steps j+1..k under the declared rule.
inline Matrix rule_product(const DiscreteScenario& sc, std::uint32_t bits,
                           std::size_t j, std::size_t k) {
  Matrix p = Matrix::identity(sc.states);
  for (std::size_t m = j + 1; m <= k; ++m)
    p = p * step_matrix(sc.intensity(m, bits), sc.dt);
  return p;
}

}  // namespace detail

/// Conditional Markov property in the observed filtration: for each epoch k,
/// the law of the future trajectory given (eps_{<=k}, x_0..x_k) must agree
/// with the law given (eps_{<=k}, x_k). Returns the worst absolute
/// discrepancy between the two conditionals over everything enumerable.
inline double verify_cmc(const AtomTable& t) {
  using namespace detail;
  double worst = 0.0;
  for (std::size_t k = 0; k < t.steps; ++k) {
    const std::uint32_t mask = (1u << k) - 1u;
    CellMap total_full, total_mk;
    PairMap joint_full, joint_mk;
    std::set<std::pair<std::uint64_t, std::uint64_t>> links;  // (mk, full)
    for (const Atom& a : t.atoms) {
      const std::uint32_t bm = a.bits & mask;
      const std::uint64_t cf = cell_key(bm, traj_key(a, 0, k));
      const std::uint64_t cm = cell_key(bm, traj_key(a, k, k));
      const std::uint64_t fut = traj_key(a, k + 1, t.steps);
      total_full[cf] += a.p;
      total_mk[cm] += a.p;
      joint_full[{cf, fut}] += a.p;
      joint_mk[{cm, fut}] += a.p;
      links.insert({cm, cf});
    }
    for (const auto& [key, pj] : joint_mk) {
      const auto& [cm, fut] = key;
      const double cond_mk = pj / total_mk[cm];
      auto it = links.lower_bound({cm, 0});
      for (; it != links.end() && it->first == cm; ++it) {
        const std::uint64_t cf = it->second;
        const double cond_full = get(joint_full, {cf, fut}) / total_full[cf];
        worst = std::max(worst, std::abs(cond_full - cond_mk));
      }
    }
  }
  return worst;
}

struct DsmcTpCheck {
  double dsmc = 0.0;  // doubly stochastic Markov property
  double tp = 0.0;    // step-product field vs enumerated quotient
  double max() const { return std::max(dsmc, tp); }
};

/// (1) For epochs j < k: the law of X_k given (all bits, x_0..x_j) equals the
/// law given (bits <= k, x_j). (2) The step-matrix product of the declared
/// rule equals the enumerated quotient P(X_k = y, X_j = x | bits <= k) /
/// P(X_j = x | bits <= k) on positive cells; zero-probability cells carry the
/// identity-row convention by definition and are not quotients to test.
inline DsmcTpCheck verify_dsmc_and_tp(const DiscreteScenario& sc,
                                      const AtomTable& t) {
  using namespace detail;
  DsmcTpCheck out;
  const std::size_t d = t.states;
  for (std::size_t j = 0; j < t.steps; ++j) {
    for (std::size_t k = j + 1; k <= t.steps; ++k) {
      const std::uint32_t mask_k =
          k >= 32 ? 0xffffffffu : ((1u << k) - 1u);
      CellMap total_lhs, total_rhs;
      PairMap joint_lhs, joint_rhs;
      std::set<std::pair<std::uint64_t, std::uint64_t>> links;  // (lhs, rhs)
      for (const Atom& a : t.atoms) {
        const std::uint64_t cl = cell_key(a.bits, traj_key(a, 0, j));
        const std::uint64_t cr =
            cell_key(a.bits & mask_k, traj_key(a, j, j));
        total_lhs[cl] += a.p;
        total_rhs[cr] += a.p;
        joint_lhs[{cl, a.x[k]}] += a.p;
        joint_rhs[{cr, a.x[k]}] += a.p;
        links.insert({cl, cr});
      }
      for (const auto& [cl, cr] : links)
        for (std::size_t y = 0; y < d; ++y) {
          const double p1 = get(joint_lhs, {cl, y}) / total_lhs[cl];
          const double p2 = get(joint_rhs, {cr, y}) / total_rhs[cr];
          out.dsmc = std::max(out.dsmc, std::abs(p1 - p2));
        }
      // (2) quotient vs rule product, cells keyed by bits <= k alone
      CellMap cell_total;
      PairMap at_j, at_jk;
      for (const Atom& a : t.atoms) {
        const std::uint64_t c = a.bits & mask_k;
        cell_total[c] += a.p;
        at_j[{c, a.x[j]}] += a.p;
        at_jk[{c, static_cast<std::uint64_t>(a.x[j]) * 4 + a.x[k]}] += a.p;
      }
      for (const auto& [c, total] : cell_total) {
        const Matrix prod =
            rule_product(sc, static_cast<std::uint32_t>(c), j, k);
        for (std::size_t x = 0; x < d; ++x) {
          const double px = get(at_j, {c, x});
          if (px <= 0.0) continue;
          for (std::size_t y = 0; y < d; ++y) {
            const double q = get(at_jk, {c, x * 4 + y}) / px;
            out.tp = std::max(out.tp, std::abs(q - prod(x, y)));
          }
        }
      }
    }
  }
  return out;
}

struct FidisCheck {
  double fidis = 0.0;      // product formula for conditional fidis
  double immersion = 0.0;  // conditioning on future bits changes nothing
  double max() const { return std::max(fidis, immersion); }
};

/// (a) For every bit pattern and epoch subset 0 < k_1 < ... < k_n:
///     P(X_{k_1} = x_1, ..., X_{k_n} = x_n | all bits)
///       = sum_{x_0} P(X_0 = x_0 | bits) prod_i ptilde_{x_{i-1} x_i}(k_{i-1}, k_i)
///     with k_0 = 0 and ptilde the declared step-matrix products.
/// (b) With m = max k_i, conditioning on all bits equals conditioning on
///     bits <= m: bits after m are independent of the trajectory up to m.
inline FidisCheck verify_c_fidis_and_immersion(const DiscreteScenario& sc,
                                               const AtomTable& t) {
  using namespace detail;
  FidisCheck out;
  const std::size_t d = t.states;
  const std::size_t K = t.steps;

  CellMap total_bits;              // P(bits)
  PairMap initial;                 // P(bits, X_0 = x)
  for (const Atom& a : t.atoms) {
    total_bits[a.bits] += a.p;
    initial[{a.bits, a.x[0]}] += a.p;
  }

  // declared-rule products ptilde(j, k) per bit pattern, index j * (K+1) + k
  std::map<std::uint64_t, std::vector<Matrix>> prods;
  for (const auto& [bits, pb] : total_bits) {
    (void)pb;
    auto& v = prods[bits];
    v.resize((K + 1) * (K + 1));
    for (std::size_t j = 0; j <= K; ++j)
      for (std::size_t k = j; k <= K; ++k)
        v[j * (K + 1) + k] =
            rule_product(sc, static_cast<std::uint32_t>(bits), j, k);
  }

  std::vector<std::size_t> epochs;
  for (std::uint32_t subset = 1; subset < (1u << K); ++subset) {
    epochs.clear();
    for (std::size_t k = 1; k <= K; ++k)
      if (subset & (1u << (k - 1))) epochs.push_back(k);
    const std::size_t m = epochs.back();
    const std::uint32_t mask_m = (m >= 32) ? 0xffffffffu : ((1u << m) - 1u);

    // assignment key: base-4 pack of states at the chosen epochs
    auto assign_key = [&](const Atom& a) {
      std::uint64_t key = 1;
      for (std::size_t k : epochs) key = (key << 2) | a.x[k];
      return key;
    };
    PairMap joint_full, joint_m;
    CellMap total_m;
    for (const Atom& a : t.atoms) {
      joint_full[{a.bits, assign_key(a)}] += a.p;
      joint_m[{a.bits & mask_m, assign_key(a)}] += a.p;
      total_m[a.bits & mask_m] += a.p;
    }

    // enumerate every assignment (d^n of them), not only those realised:
    // a zero enumerated probability must match a zero product formula.
    std::vector<std::size_t> x(epochs.size(), 0);
    while (true) {
      std::uint64_t key = 1;
      for (std::size_t v : x) key = (key << 2) | v;
      for (const auto& [bits, pb] : total_bits) {
        const std::vector<Matrix>& ptilde = prods[bits];
        const double lhs = get(joint_full, {bits, key}) / pb;
        // (a) product formula
        double rhs = 0.0;
        for (std::size_t x0 = 0; x0 < d; ++x0) {
          double term = get(initial, {bits, x0}) / pb;
          std::size_t prev_epoch = 0, prev_state = x0;
          for (std::size_t i = 0; i < epochs.size() && term != 0.0; ++i) {
            term *= ptilde[prev_epoch * (K + 1) + epochs[i]](prev_state, x[i]);
            prev_epoch = epochs[i];
            prev_state = x[i];
          }
          rhs += term;
        }
        out.fidis = std::max(out.fidis, std::abs(lhs - rhs));
        // (b) immersion
        const double lhs_m =
            get(joint_m, {bits & mask_m, key}) / total_m[bits & mask_m];
        out.immersion = std::max(out.immersion, std::abs(lhs - lhs_m));
      }
      // next assignment
      std::size_t i = 0;
      for (; i < x.size(); ++i) {
        if (++x[i] < d) break;
        x[i] = 0;
      }
      if (i == x.size()) break;
    }
  }
  return out;
}

struct GirsanovCheck {
  double recoupling = 0.0;       // max |Q(atom) * w(atom) - P(atom)|
  double weight_mean_err = 0.0;  // |E_Q[w] - 1|
  double bit_marginal_err = 0.0; // bit law must be identical under P and Q
  double max() const {
    return std::max({recoupling, weight_mean_err, bit_marginal_err});
  }
};

/// Discrete change of measure from the reference table to the target table:
///   w = (mu-ratio) * prod_k [ jump x != y : lambda^{xy}_k / a^{xy}
///                           | stay       : (1 + lambda^{xx}_k dt) / (1 + a^{xx} dt) ]
/// Exact identity, so discrepancies are pure rounding.
inline GirsanovCheck verify_discrete_girsanov(const DiscreteScenario& sc) {
  using namespace detail;
  const AtomTable tp = enumerate_atoms(sc, Measure::kTarget);
  const AtomTable tq = enumerate_atoms(sc, Measure::kReference);
  const std::size_t K = sc.steps;

  PairMap p_by_key;
  for (const Atom& a : tp.atoms)
    p_by_key[{a.bits, traj_key(a, 0, K)}] = a.p;

  GirsanovCheck out;
  double mean_w = 0.0;
  CellMap bits_p, bits_q;
  for (const Atom& a : tp.atoms) bits_p[a.bits] += a.p;

  std::set<std::pair<std::uint64_t, std::uint64_t>> hit;
  for (const Atom& a : tq.atoms) {
    bits_q[a.bits] += a.p;
    double w = 1.0;  // mu-ratio: same declared initial law on both sides
    for (std::size_t k = 1; k <= K; ++k) {
      const Matrix& lam = sc.intensity(k, a.bits);
      const int xp = a.x[k - 1], xn = a.x[k];
      if (xp != xn)
        w *= lam(xp, xn) / sc.reference(xp, xn);
      else
        w *= (1.0 + lam(xp, xp) * sc.dt) / (1.0 + sc.reference(xp, xp) * sc.dt);
    }
    mean_w += a.p * w;
    const std::pair<std::uint64_t, std::uint64_t> key{a.bits,
                                                      traj_key(a, 0, K)};
    hit.insert(key);
    out.recoupling =
        std::max(out.recoupling, std::abs(a.p * w - get(p_by_key, key)));
  }
  for (const auto& [key, p] : p_by_key)
    if (!hit.count(key)) out.recoupling = std::max(out.recoupling, p);

  out.weight_mean_err = std::abs(mean_w - 1.0);
  for (const auto& [bits, p] : bits_p)
    out.bit_marginal_err =
        std::max(out.bit_marginal_err, std::abs(p - get(bits_q, bits)));
  for (const auto& [bits, q] : bits_q)
    out.bit_marginal_err =
        std::max(out.bit_marginal_err, std::abs(q - get(bits_p, bits)));
  return out;
}

struct CellConditional {
  std::int64_t cell = 0;
  double cell_prob = 0.0;
  double conditional = 0.0;
};

/// P(event | cell) for every cell of the partition realised by some atom.
/// Cells are discovered from atoms, so cell_prob > 0 by construction;
/// unrealised cells are a matter of convention for the caller (the
/// transition-field convention puts the identity row there).
inline std::vector<CellConditional> conditional_probability(
    const AtomTable& t, const std::function<bool(const Atom&)>& event,
    const std::function<std::int64_t(const Atom&)>& partition) {
  std::map<std::int64_t, std::pair<double, double>> cells;  // total, hit
  for (const Atom& a : t.atoms) {
    auto& [total, hit] = cells[partition(a)];
    total += a.p;
    if (event(a)) hit += a.p;
  }
  std::vector<CellConditional> out;
  out.reserve(cells.size());
  for (const auto& [cell, acc] : cells)
    out.push_back({cell, acc.first, acc.second / acc.first});
  return out;
}

}  // namespace cmclab::oracle
