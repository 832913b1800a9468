#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "cmclab/core.hpp"
#include "cmclab/matrix.hpp"

namespace cmclab {

/// Fundamental pair of the random linear systems
///   dZ = -Lambda Z dt,   dY = Y Lambda dt,   Z_0 = Y_0 = I,
/// advanced exactly across each constant piece by the interval exponential:
///   Z_{k+1} = exp(-Lambda_k dt) Z_k,   Y_{k+1} = Y_k exp(Lambda_k dt).
struct ZYPath {
  std::vector<Matrix> z;  // node-indexed, size steps + 1
  std::vector<Matrix> y;
};

inline ZYPath solve_zy(const IntensityModel& m, const FactorPath& f,
                       const TimeGrid& grid, double expm_tol = 1e-14) {
  ZYPath out;
  out.z.reserve(grid.steps + 1);
  out.y.reserve(grid.steps + 1);
  out.z.push_back(Matrix::identity(m.dim()));
  out.y.push_back(Matrix::identity(m.dim()));
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const Matrix g = intensity_on_interval(m, f, grid, k);
    const double len = grid.node(k + 1) - grid.node(k);
    const Matrix e = expm(g * len, expm_tol);
    const Matrix einv = expm(g * (-len), expm_tol);
    out.z.push_back(einv * out.z.back());
    out.y.push_back(out.y.back() * e);
  }
  return out;
}

struct FieldCheck {
  double max_inverse_dev = 0.0;   // max over nodes of ||Z_t Y_t - I||
  double max_row_sum_dev = 0.0;   // Markov property of P(s, t)
  double min_entry = 1.0;         // entries of P(s, t) live in [0, 1]
  double max_entry = 0.0;
  double min_det = 1.0;           // P(s, t) stays invertible
};

/// Conditional transition field p_{xy}(s, t) = [Z_s Y_t]_{xy} over all grid
/// node pairs s <= t of one factor path.
class TransitionField {
 public:
  TransitionField(TimeGrid grid, ZYPath zy)
      : grid_(grid), zy_(std::move(zy)) {}

  const TimeGrid& grid() const { return grid_; }
  const Matrix& z(std::size_t node) const { return zy_.z[node]; }
  const Matrix& y(std::size_t node) const { return zy_.y[node]; }

  Matrix p(std::size_t s_node, std::size_t t_node) const {
    if (s_node > t_node || t_node > grid_.steps)
      throw std::out_of_range("field wants s <= t grid nodes");
    return zy_.z[s_node] * zy_.y[t_node];
  }

  FieldCheck check() const {
    FieldCheck c;
    const std::size_t n = zy_.z.front().dim();
    const Matrix id = Matrix::identity(n);
    for (std::size_t k = 0; k <= grid_.steps; ++k)
      c.max_inverse_dev =
          std::max(c.max_inverse_dev, max_abs_diff(zy_.z[k] * zy_.y[k], id));
    for (std::size_t s = 0; s <= grid_.steps; ++s)
      for (std::size_t t = s; t <= grid_.steps; ++t) {
        const Matrix pm = p(s, t);
        c.min_det = std::min(c.min_det, det(pm));
        for (std::size_t i = 0; i < n; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            row += pm(i, j);
            c.min_entry = std::min(c.min_entry, pm(i, j));
            c.max_entry = std::max(c.max_entry, pm(i, j));
          }
          c.max_row_sum_dev = std::max(c.max_row_sum_dev, std::abs(row - 1.0));
        }
      }
    return c;
  }

 private:
  TimeGrid grid_;
  ZYPath zy_;
};

inline TransitionField transition_field(const IntensityModel& m,
                                        const FactorPath& f,
                                        const TimeGrid& grid,
                                        double expm_tol = 1e-14) {
  return TransitionField(grid, solve_zy(m, f, grid, expm_tol));
}

struct PeanoBakerResult {
  Matrix value;
  std::size_t order = 0;  // highest order summed before the cutoff hit
  bool converged = false;
};

/// Peano-Baker series P(v,t) = I + sum_n over the ordered simplex
/// v <= v_1 <= ... <= v_n <= t of Gamma_{v_1} ... Gamma_{v_n}. With constant
/// pieces Gamma_j held for length L_j on [v, t), the order-n term collapses
/// to a sum over ordered products of Taylor blocks,
///   T_n = sum_{i_1+...+i_m = n} A_1^{i_1}/i_1! ... A_m^{i_m}/i_m!,
/// A_j = Gamma_j L_j, pieces ordered left to right. Computed by a running
/// convolution per piece, which reproduces the nested simplex integrals
/// exactly for piecewise-constant input. Stops once a term's max-abs norm
/// falls below tol; if max_order is hit first the result is flagged
/// unconverged and the caller may split the interval.
inline PeanoBakerResult peano_baker(const IntensityModel& m,
                                    const FactorPath& f, const TimeGrid& grid,
                                    std::size_t v_node, std::size_t t_node,
                                    double tol = 1e-10,
                                    std::size_t max_order = 48) {
  if (v_node > t_node || t_node > grid.steps)
    throw std::out_of_range("peano_baker wants v <= t grid nodes");
  const std::size_t d = m.dim();
  // terms[n] accumulates T_n over the pieces processed so far.
  std::vector<Matrix> terms(max_order + 1, Matrix(d));
  terms[0] = Matrix::identity(d);
  for (std::size_t k = v_node; k < t_node; ++k) {
    const Matrix a =
        intensity_on_interval(m, f, grid, k) * (grid.node(k + 1) - grid.node(k));
    // Taylor blocks a^i / i! of the new piece, multiplied on the right.
    std::vector<Matrix> block(max_order + 1, Matrix(d));
    block[0] = Matrix::identity(d);
    for (std::size_t i = 1; i <= max_order; ++i)
      block[i] = block[i - 1] * a * (1.0 / static_cast<double>(i));
    std::vector<Matrix> next(max_order + 1, Matrix(d));
    for (std::size_t n = 0; n <= max_order; ++n)
      for (std::size_t i = 0; i <= n; ++i) next[n] += terms[n - i] * block[i];
    terms = std::move(next);
  }
  PeanoBakerResult res;
  res.value = Matrix(d);
  for (std::size_t n = 0; n <= max_order; ++n) {
    if (terms[n].max_abs() < tol) {
      res.converged = true;
      res.order = n == 0 ? 0 : n - 1;
      return res;
    }
    res.value += terms[n];
    res.order = n;
  }
  res.converged = false;
  return res;
}

struct MagnusOptions {
  /// Hard rotation guard; segments are bisected (node-aligned) until the
  /// summed exposure ||Gamma_j||_inf * L_j drops below this. Lowering it
  /// below pi trades work for accuracy of the order-2 truncation.
  double max_exposure = std::numbers::pi;
  double expm_tol = 1e-14;
};

namespace detail {

inline Matrix magnus2_segment(const IntensityModel& m, const FactorPath& f,
                              const TimeGrid& grid, std::size_t v_node,
                              std::size_t t_node, const MagnusOptions& opt) {
  std::vector<Matrix> a;
  double exposure = 0.0;
  for (std::size_t k = v_node; k < t_node; ++k) {
    const Matrix g = intensity_on_interval(m, f, grid, k);
    const double len = grid.node(k + 1) - grid.node(k);
    exposure += g.inf_norm() * len;
    a.push_back(g * len);
  }
  if (exposure >= opt.max_exposure && t_node - v_node > 1) {
    const std::size_t mid = v_node + (t_node - v_node) / 2;
    return magnus2_segment(m, f, grid, v_node, mid, opt) *
           magnus2_segment(m, f, grid, mid, t_node, opt);
  }
  // Order-2 Magnus for the right system dP = P Gamma dt:
  //   Phi_1 = sum_j A_j (exact),
  //   Phi_2 = 1/2 sum_{j<k} [A_j, A_k], earlier piece first.
  // Commuting pieces kill Phi_2 and the result is exact.
  const std::size_t d = m.dim();
  Matrix phi(d);
  for (const Matrix& aj : a) phi += aj;
  for (std::size_t j = 0; j < a.size(); ++j)
    for (std::size_t k = j + 1; k < a.size(); ++k)
      phi += commutator(a[j], a[k]) * 0.5;
  return expm(phi, opt.expm_tol);
}

}  // namespace detail

/// Order-2 Magnus approximation of P(v, t) on grid nodes.
inline Matrix magnus2(const IntensityModel& m, const FactorPath& f,
                      const TimeGrid& grid, std::size_t v_node,
                      std::size_t t_node, MagnusOptions opt = {}) {
  if (v_node > t_node || t_node > grid.steps)
    throw std::out_of_range("magnus2 wants v <= t grid nodes");
  if (v_node == t_node) return Matrix::identity(m.dim());
  return detail::magnus2_segment(m, f, grid, v_node, t_node, opt);
}

struct KolmogorovResidual {
  double backward = 0.0;
  double forward = 0.0;
  double max() const { return std::max(backward, forward); }
};

/// Max-abs defect of the integral forms over all node pairs v <= t:
///   backward: P(v,t) - I - int_v^t Gamma_u P(u,t) du
///   forward:  P(v,t) - I - int_v^t P(v,u) Gamma_u du
/// The integrand is piecewise smooth with jumps at piece boundaries, so the
/// trapezoid rule is applied per interval (endpoints of each piece), giving
/// an O(dt^2) defect for a matching model.
inline KolmogorovResidual kolmogorov_residual(const TransitionField& field,
                                              const IntensityModel& m,
                                              const FactorPath& f) {
  const TimeGrid& grid = field.grid();
  const std::size_t K = grid.steps;
  std::vector<Matrix> gamma(K);
  std::vector<double> len(K);
  for (std::size_t k = 0; k < K; ++k) {
    gamma[k] = intensity_on_interval(m, f, grid, k);
    len[k] = grid.node(k + 1) - grid.node(k);
  }
  const Matrix id = Matrix::identity(m.dim());
  KolmogorovResidual res;
  for (std::size_t t = 0; t <= K; ++t) {
    // backward sweep in v for fixed t
    Matrix integral(m.dim());
    Matrix p_right = id;  // P(v+1, t) from the previous iteration
    for (std::size_t v = t; v-- > 0;) {
      const Matrix p_left = field.p(v, t);
      integral += gamma[v] * ((p_left + p_right) * (0.5 * len[v]));
      res.backward =
          std::max(res.backward, max_abs_diff(p_left, id + integral));
      p_right = p_left;
    }
  }
  for (std::size_t v = 0; v <= K; ++v) {
    Matrix integral(m.dim());
    Matrix p_left = id;  // P(v, t-1)
    for (std::size_t t = v + 1; t <= K; ++t) {
      const Matrix p_right = field.p(v, t);
      integral += ((p_left + p_right) * (0.5 * len[t - 1])) * gamma[t - 1];
      res.forward = std::max(res.forward, max_abs_diff(p_right, id + integral));
      p_left = p_right;
    }
  }
  return res;
}

struct RouteAgreement {
  Matrix piecewise;  // product of interval exponentials
  Matrix peano;
  Matrix magnus;
  std::size_t peano_order = 0;
  bool peano_converged = false;
  double max_pairwise_diff = 0.0;
};

/// Runs the three independent routes to P(v, t) on one factor path and
/// reports the worst pairwise entry difference.
inline RouteAgreement route_agreement(const IntensityModel& m,
                                      const FactorPath& f,
                                      const TimeGrid& grid,
                                      std::size_t v_node, std::size_t t_node,
                                      double peano_tol = 1e-12,
                                      std::size_t peano_max_order = 60,
                                      double magnus_exposure = 0.02) {
  RouteAgreement r;
  r.piecewise = Matrix::identity(m.dim());
  for (std::size_t k = v_node; k < t_node; ++k) {
    const double l = grid.node(k + 1) - grid.node(k);
    r.piecewise = r.piecewise * expm(intensity_on_interval(m, f, grid, k) * l);
  }
  auto pb = peano_baker(m, f, grid, v_node, t_node, peano_tol, peano_max_order);
  r.peano = pb.value;
  r.peano_order = pb.order;
  r.peano_converged = pb.converged;
  MagnusOptions opt;
  opt.max_exposure = magnus_exposure;
  r.magnus = magnus2(m, f, grid, v_node, t_node, opt);
  r.max_pairwise_diff = std::max({max_abs_diff(r.piecewise, r.peano),
                                  max_abs_diff(r.piecewise, r.magnus),
                                  max_abs_diff(r.peano, r.magnus)});
  return r;
}

}  // namespace cmclab
