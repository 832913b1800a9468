#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmclab/matrix.hpp"

namespace cmclab {

/// States carry external labels 1..d; all internal indices are 0-based.
/// Conversion happens only at I/O boundaries (JSON, CSV, reports).
struct StateSpace {
  std::size_t d = 0;
  explicit StateSpace(std::size_t dim) : d(dim) {
    if (d < 2) throw std::invalid_argument("state space needs d >= 2");
  }
};

/// Uniform grid t_k = k * (T / K) realised as T * (k / K) so that node(K) == T
/// exactly and nodes are strictly increasing.
struct TimeGrid {
  double horizon = 1.0;
  std::size_t steps = 1;

  TimeGrid() = default;
  TimeGrid(double T, std::size_t K) : horizon(T), steps(K) {
    if (!(T > 0.0) || K < 1) throw std::invalid_argument("bad time grid");
  }

  double dt() const { return horizon / static_cast<double>(steps); }

  double node(std::size_t k) const {
    return horizon * (static_cast<double>(k) / static_cast<double>(steps));
  }

  /// Index k with node(k) <= t < node(k+1); t == horizon maps to the last
  /// interval (cadlag pieces, the final piece is closed on the right).
  std::size_t interval_index(double t) const {
    if (t < 0.0 || t > horizon) throw std::out_of_range("t outside [0, T]");
    if (t >= horizon) return steps - 1;
    auto k = static_cast<std::size_t>(t / dt());
    if (k >= steps) k = steps - 1;
    while (k + 1 < steps && node(k + 1) <= t) ++k;
    while (k > 0 && node(k) > t) --k;
    return k;
  }

  /// Index k with node(k) < u <= node(k+1): the interval carrying the left
  /// limit at u. Defined for u in (0, T].
  std::size_t left_interval_index(double u) const {
    if (!(u > 0.0) || u > horizon) throw std::out_of_range("u outside (0, T]");
    std::size_t k = interval_index(u);
    if (k > 0 && node(k) == u) --k;
    return k;
  }
};

/// Factor sample path: values at grid nodes (node-major, dims components per
/// node) plus the driver's own jump times, if any, inside (0, T].
struct FactorPath {
  std::size_t dims = 1;
  std::vector<double> values;
  std::vector<double> jump_times;

  std::size_t nodes() const { return dims == 0 ? 0 : values.size() / dims; }
  double value(std::size_t node, std::size_t dim = 0) const {
    return values[node * dims + dim];
  }
};

struct AdaptednessError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Read-only window onto a factor path, cut at a node index. Any access past
/// the cutoff throws: evaluation rules get history up to t and nothing else,
/// so adaptedness holds by construction rather than by convention.
class FactorView {
 public:
  FactorView(const FactorPath& p, std::size_t cutoff_node)
      : path_(&p), cutoff_(cutoff_node) {}

  std::size_t cutoff() const { return cutoff_; }
  std::size_t dims() const { return path_->dims; }

  double value(std::size_t node, std::size_t dim = 0) const {
    if (node > cutoff_)
      throw AdaptednessError("factor access past truncation node " +
                             std::to_string(cutoff_));
    return path_->value(node, dim);
  }

 private:
  const FactorPath* path_;
  std::size_t cutoff_;
};

struct GeneratorViolation {
  std::size_t row = 0;
  std::size_t col = 0;
  std::string what;
  double value = 0.0;
};

struct GeneratorReport {
  bool ok = true;
  std::vector<GeneratorViolation> violations;
};

/// Intensity matrix constraints: off-diagonals >= 0 and row sums within
/// row_sum_tol of zero.
inline GeneratorReport validate_generator(const Matrix& g,
                                          double row_sum_tol = 1e-12) {
  GeneratorReport rep;
  const std::size_t n = g.dim();
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row_sum += g(i, j);
      if (i != j && g(i, j) < 0.0) {
        rep.ok = false;
        rep.violations.push_back({i, j, "negative off-diagonal", g(i, j)});
      }
    }
    if (std::abs(row_sum) > row_sum_tol) {
      rep.ok = false;
      rep.violations.push_back({i, i, "row sum", row_sum});
    }
  }
  return rep;
}

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Time-and-factor functional intensity rule, piecewise constant on grid
/// intervals: on_interval(f, grid, k) is the generator held on
/// [t_k, t_{k+1}), and the view it receives is already cut at node k.
class IntensityModel {
 public:
  virtual ~IntensityModel() = default;
  virtual std::size_t dim() const = 0;
  /// Finite bound on every off-diagonal rate the rule can produce.
  virtual double lambda_max() const = 0;
  virtual Matrix on_interval(const FactorView& f, const TimeGrid& grid,
                             std::size_t k) const = 0;
};

/// Evaluates the model on interval k with the factor history truncated at
/// node k, then validates the output. A rule that emits a non-generator is a
/// model bug, reported as ModelError.
inline Matrix intensity_on_interval(const IntensityModel& m,
                                    const FactorPath& f, const TimeGrid& grid,
                                    std::size_t k) {
  if (k >= grid.steps) throw std::out_of_range("interval index past grid");
  const Matrix g = m.on_interval(FactorView(f, k), grid, k);
  if (g.dim() != m.dim()) throw ModelError("model emitted wrong dimension");
  if (const auto rep = validate_generator(g); !rep.ok) {
    const auto& v = rep.violations.front();
    throw ModelError("model emitted invalid generator (" + v.what + " at " +
                     std::to_string(v.row) + "," + std::to_string(v.col) +
                     " = " + std::to_string(v.value) + ")");
  }
  return g;
}

/// Lambda_t: the value held on the interval containing t, computed from the
/// factor truncated to nodes <= t.
inline Matrix evaluate_intensity(const IntensityModel& m, const FactorPath& f,
                                 const TimeGrid& grid, double t) {
  return intensity_on_interval(m, f, grid, grid.interval_index(t));
}

struct JumpRecord {
  double time = 0.0;
  int from = 0;
  int to = 0;
};

/// Cadlag step path of the chain: initial state plus strictly increasing
/// jumps in (0, T].
struct ChainPath {
  int initial_state = 0;
  std::vector<JumpRecord> jumps;

  int state_at(double t) const {
    int s = initial_state;
    for (const auto& j : jumps) {
      if (j.time > t) break;
      s = j.to;
    }
    return s;
  }

  void validate(const TimeGrid& grid, std::size_t d) const {
    if (initial_state < 0 || static_cast<std::size_t>(initial_state) >= d)
      throw std::invalid_argument("initial state out of range");
    double prev = 0.0;
    int s = initial_state;
    for (const auto& j : jumps) {
      if (!(j.time > prev) || j.time > grid.horizon)
        throw std::invalid_argument("jump times must increase within (0, T]");
      if (j.from != s || j.to == j.from || j.to < 0 ||
          static_cast<std::size_t>(j.to) >= d)
        throw std::invalid_argument("inconsistent jump record");
      prev = j.time;
      s = j.to;
    }
  }
};

/// Indicator vector H_t: unit mass on the current state.
inline std::vector<int> indicators(const ChainPath& p, double t,
                                   std::size_t d) {
  std::vector<int> h(d, 0);
  h[static_cast<std::size_t>(p.state_at(t))] = 1;
  return h;
}

/// Number of x -> y transitions in (0, t].
inline std::size_t transition_count(const ChainPath& p, int x, int y,
                                    double t) {
  if (x == y) throw std::invalid_argument("transition_count: x == y");
  std::size_t c = 0;
  for (const auto& j : p.jumps) {
    if (j.time > t) break;
    if (j.from == x && j.to == y) ++c;
  }
  return c;
}

}  // namespace cmclab
