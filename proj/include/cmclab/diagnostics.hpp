#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cmclab/core.hpp"
#include "cmclab/matrix.hpp"
#include "cmclab/parallel.hpp"
#include "cmclab/simulate.hpp"

namespace cmclab {

/// Bonferroni-calibrated two-sided z gate for up to 200 simultaneous tests
/// at family level ~0.01. Default dictionaries and node pairs stay below
/// that count.
inline constexpr double kBonferroniThreshold = 3.9;

struct NodePair {
  std::size_t s = 0, t = 0;
};

inline std::vector<NodePair> default_node_pairs(const TimeGrid& g) {
  const std::size_t K = g.steps;
  std::vector<NodePair> raw{
      {0, K / 2}, {K / 2, K}, {K / 4, (3 * K) / 4}, {0, K}};
  std::vector<NodePair> out;
  for (const NodePair& p : raw) {
    if (p.s >= p.t) continue;
    bool dup = false;
    for (const NodePair& q : out) dup = dup || (q.s == p.s && q.t == p.t);
    if (!dup) out.push_back(p);
  }
  return out;
}

/// Adapted test functions evaluated at the pair's left node: constants,
/// state indicators, a factor threshold, and their products.
struct Phi {
  enum class Kind { kOne, kState, kFactorAbove, kStateFactor };
  Kind kind = Kind::kOne;
  int state = 0;
  double cut = 0.0;
  std::string id;

  double eval(int state_at_s, double factor_at_s) const {
    switch (kind) {
      case Kind::kOne:
        return 1.0;
      case Kind::kState:
        return state_at_s == state ? 1.0 : 0.0;
      case Kind::kFactorAbove:
        return factor_at_s > cut ? 1.0 : 0.0;
      case Kind::kStateFactor:
        return (state_at_s == state && factor_at_s > cut) ? 1.0 : 0.0;
    }
    return 0.0;
  }
};

struct Dictionary {
  std::vector<Phi> phis;

  static Dictionary standard(std::size_t d, double factor_cut) {
    Dictionary dict;
    dict.phis.push_back({Phi::Kind::kOne, 0, 0.0, "one"});
    for (std::size_t x = 0; x < d; ++x)
      dict.phis.push_back({Phi::Kind::kState, static_cast<int>(x), 0.0,
                           "state_" + std::to_string(x + 1)});
    dict.phis.push_back({Phi::Kind::kFactorAbove, 0, factor_cut, "f_high"});
    for (std::size_t x = 0; x < d; ++x)
      dict.phis.push_back({Phi::Kind::kStateFactor, static_cast<int>(x),
                           factor_cut,
                           "state_" + std::to_string(x + 1) + "_f_high"});
    return dict;
  }
};

struct TestEntry {
  std::string process;
  std::size_t s_node = 0, t_node = 0;
  std::string phi;
  double estimate = 0.0, se = 0.0, z = 0.0;
};

struct MartingaleTestReport {
  std::string suite;
  std::size_t n_paths = 0;
  double threshold = kBonferroniThreshold;
  std::vector<TestEntry> entries;
  double max_abs_z = 0.0;
  bool pass = true;

  void finalize() {
    max_abs_z = 0.0;
    for (const TestEntry& e : entries)
      max_abs_z = std::max(max_abs_z, std::abs(e.z));
    pass = max_abs_z < threshold;
  }
};

namespace detail {

/// Per-path data at the distinct nodes the pair set touches.
struct DiagContext {
  std::vector<std::size_t> nodes;  // sorted distinct node indices
  std::size_t width = 0;
  std::vector<std::uint8_t> state;  // n x width
  std::vector<double> factor;       // n x width

  std::size_t slot(std::size_t node) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i] == node) return i;
    throw std::logic_error("node not in context");
  }
};

inline DiagContext make_context(const WeightedEnsemble& e,
                                const std::vector<NodePair>& pairs,
                                std::size_t extra_node =
                                    std::numeric_limits<std::size_t>::max()) {
  DiagContext ctx;
  for (const NodePair& p : pairs) {
    ctx.nodes.push_back(p.s);
    ctx.nodes.push_back(p.t);
  }
  if (extra_node != std::numeric_limits<std::size_t>::max())
    ctx.nodes.push_back(extra_node);
  std::sort(ctx.nodes.begin(), ctx.nodes.end());
  ctx.nodes.erase(std::unique(ctx.nodes.begin(), ctx.nodes.end()),
                  ctx.nodes.end());
  ctx.width = ctx.nodes.size();
  const std::size_t n = e.size();
  ctx.state.resize(n * ctx.width);
  ctx.factor.resize(n * ctx.width);
  parallel_for(n, [&](std::size_t i) {
    const ChainPath& c = e.chains[i];
    std::size_t jump = 0;
    int s = c.initial_state;
    for (std::size_t w = 0; w < ctx.width; ++w) {
      const double t = e.grid.node(ctx.nodes[w]);
      while (jump < c.jumps.size() && c.jumps[jump].time <= t) {
        s = c.jumps[jump].to;
        ++jump;
      }
      ctx.state[i * ctx.width + w] = static_cast<std::uint8_t>(s);
      ctx.factor[i * ctx.width + w] = e.factors[i].value(ctx.nodes[w]);
    }
  });
  return ctx;
}

/// Weighted orthogonality scores: for each (component, pair, phi), the mean
/// and standard error of g_i = w_i * phi_i(s) * dV_i over paths in index
/// order. Tests are scored in parallel; each test's reduction is serial, so
/// results do not depend on the worker count.
inline MartingaleTestReport score_increments(
    std::string suite, const WeightedEnsemble& e, const DiagContext& ctx,
    const std::vector<NodePair>& pairs, const Dictionary& dict,
    const std::vector<std::string>& comp_names,
    const std::vector<double>& inc,  // n x comps x pairs
    double threshold) {
  const std::size_t n = e.size();
  const std::size_t ncomp = comp_names.size();
  const std::size_t npair = pairs.size();
  const std::size_t nphi = dict.phis.size();

  MartingaleTestReport rep;
  rep.suite = std::move(suite);
  rep.n_paths = n;
  rep.threshold = threshold;
  rep.entries.resize(ncomp * npair * nphi);
  parallel_for(ncomp * npair * nphi, [&](std::size_t idx) {
    const std::size_t c = idx / (npair * nphi);
    const std::size_t p = (idx / nphi) % npair;
    const std::size_t q = idx % nphi;
    const Phi& phi = dict.phis[q];
    const std::size_t slot_s = ctx.slot(pairs[p].s);
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double f = phi.eval(ctx.state[i * ctx.width + slot_s],
                                ctx.factor[i * ctx.width + slot_s]);
      const double g =
          e.weights[i] * f * inc[(i * ncomp + c) * npair + p];
      sum += g;
      sum2 += g * g;
    }
    TestEntry& t = rep.entries[idx];
    t.process = comp_names[c];
    t.s_node = pairs[p].s;
    t.t_node = pairs[p].t;
    t.phi = phi.id;
    t.estimate = sum / static_cast<double>(n);
    const double var =
        n > 1 ? std::max(0.0, (sum2 - sum * sum / static_cast<double>(n)) /
                                  static_cast<double>(n - 1))
              : 0.0;
    t.se = std::sqrt(var / static_cast<double>(n));
    if (t.se > 0.0)
      t.z = t.estimate / t.se;
    else
      t.z = t.estimate == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  });
  rep.finalize();
  return rep;
}

/// Shared per-path interval walk: applies `segment(state, k, lam, len)` for
/// every maximal constant-state piece of path i within interval k, then
/// `at_node(k + 1)` after finishing interval k. `at_node(0)` fires first.
template <typename SegmentFn, typename NodeFn>
void walk_path(const WeightedEnsemble& e, const IntensityModel& m,
               std::size_t i, SegmentFn&& segment, NodeFn&& at_node) {
  const TimeGrid& grid = e.grid;
  const ChainPath& chain = e.chains[i];
  at_node(0);
  std::size_t jump = 0;
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const Matrix lam = intensity_on_interval(m, e.factors[i], grid, k);
    double cur = grid.node(k);
    const double end = grid.node(k + 1);
    int s = chain.state_at(cur);
    while (jump < chain.jumps.size() && chain.jumps[jump].time <= end) {
      const JumpRecord& j = chain.jumps[jump];
      segment(s, k, lam, j.time - cur, &j);
      cur = j.time;
      s = j.to;
      ++jump;
    }
    segment(s, k, lam, end - cur, nullptr);
    at_node(k + 1);
  }
}

}  // namespace detail

/// M_t = H_t - int_0^t Lambda_u^T H_u du componentwise: increments between
/// node pairs scored against the dictionary under the weighted measure.
inline MartingaleTestReport residual_M(const WeightedEnsemble& e,
                                       const IntensityModel& m,
                                       const Dictionary& dict,
                                       const std::vector<NodePair>& pairs,
                                       double threshold = kBonferroniThreshold) {
  const std::size_t n = e.size();
  const std::size_t d = m.dim();
  const detail::DiagContext ctx = detail::make_context(e, pairs);
  std::vector<std::string> comps(d);
  for (std::size_t x = 0; x < d; ++x)
    comps[x] = "M[" + std::to_string(x + 1) + "]";
  std::vector<double> inc(n * d * pairs.size());
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> cum(d, 0.0);                    // int lambda^{X_u, x} du
    std::vector<double> at_nodes(ctx.width * d, 0.0);   // cum at context nodes
    std::size_t w = 0;
    detail::walk_path(
        e, m, i,
        [&](int s, std::size_t, const Matrix& lam, double len,
            const JumpRecord*) {
          for (std::size_t x = 0; x < d; ++x) cum[x] += lam(s, x) * len;
        },
        [&](std::size_t node) {
          if (w < ctx.width && ctx.nodes[w] == node) {
            for (std::size_t x = 0; x < d; ++x)
              at_nodes[w * d + x] = cum[x];
            ++w;
          }
        });
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        const std::size_t ss = ctx.slot(pairs[p].s), tt = ctx.slot(pairs[p].t);
        const double hs =
            ctx.state[i * ctx.width + ss] == x ? 1.0 : 0.0;
        const double ht =
            ctx.state[i * ctx.width + tt] == x ? 1.0 : 0.0;
        inc[(i * d + x) * pairs.size() + p] =
            (ht - hs) - (at_nodes[tt * d + x] - at_nodes[ss * d + x]);
      }
  });
  return detail::score_increments("residual_M", e, ctx, pairs, dict, comps,
                                  inc, threshold);
}

/// K^{xy}_t = #{x->y jumps in (0, t]} - int_0^t H^x_u lambda^{xy}_u du.
inline MartingaleTestReport residual_K(const WeightedEnsemble& e,
                                       const IntensityModel& m,
                                       const Dictionary& dict,
                                       const std::vector<NodePair>& pairs,
                                       double threshold = kBonferroniThreshold) {
  const std::size_t n = e.size();
  const std::size_t d = m.dim();
  const detail::DiagContext ctx = detail::make_context(e, pairs);
  std::vector<std::string> comps;
  std::vector<std::pair<int, int>> xy;
  for (std::size_t x = 0; x < d; ++x)
    for (std::size_t y = 0; y < d; ++y)
      if (x != y) {
        comps.push_back("K[" + std::to_string(x + 1) + "->" +
                        std::to_string(y + 1) + "]");
        xy.emplace_back(static_cast<int>(x), static_cast<int>(y));
      }
  const std::size_t ncomp = xy.size();
  std::vector<double> inc(n * ncomp * pairs.size());
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> val(ncomp, 0.0);  // counts minus compensator
    std::vector<double> at_nodes(ctx.width * ncomp, 0.0);
    std::size_t w = 0;
    detail::walk_path(
        e, m, i,
        [&](int s, std::size_t, const Matrix& lam, double len,
            const JumpRecord* j) {
          for (std::size_t c = 0; c < ncomp; ++c)
            if (xy[c].first == s) val[c] -= lam(s, xy[c].second) * len;
          if (j)
            for (std::size_t c = 0; c < ncomp; ++c)
              if (xy[c].first == j->from && xy[c].second == j->to)
                val[c] += 1.0;
        },
        [&](std::size_t node) {
          if (w < ctx.width && ctx.nodes[w] == node) {
            for (std::size_t c = 0; c < ncomp; ++c)
              at_nodes[w * ncomp + c] = val[c];
            ++w;
          }
        });
    for (std::size_t c = 0; c < ncomp; ++c)
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        const std::size_t ss = ctx.slot(pairs[p].s), tt = ctx.slot(pairs[p].t);
        inc[(i * ncomp + c) * pairs.size() + p] =
            at_nodes[tt * ncomp + c] - at_nodes[ss * ncomp + c];
      }
  });
  return detail::score_increments("residual_K", e, ctx, pairs, dict, comps,
                                  inc, threshold);
}

namespace detail {

/// Fills, per path, L-values Z_t(X_t, x) at every context node and, when
/// target != npos, N-values P(s, target)(X_s, x) = Z_s(X_s, :) Y_target.
/// One interval exponential pair per step, shared by both suites.
inline void zy_rows(const WeightedEnsemble& e, const IntensityModel& m,
                    const DiagContext& ctx, std::size_t i, std::size_t target,
                    std::vector<double>& lvals,  // width x d
                    std::vector<double>& nvals,  // width x d
                    double expm_tol = 1e-14) {
  const TimeGrid& grid = e.grid;
  const std::size_t d = m.dim();
  Matrix z = Matrix::identity(d);
  Matrix y = Matrix::identity(d);
  Matrix y_target;
  std::vector<Matrix> zmats(ctx.width);
  std::size_t w = 0;
  auto record = [&](std::size_t node) {
    if (w < ctx.width && ctx.nodes[w] == node) {
      zmats[w] = z;
      const int s = ctx.state[i * ctx.width + w];
      for (std::size_t x = 0; x < d; ++x) lvals[w * d + x] = z(s, x);
      ++w;
    }
    if (node == target) y_target = y;
  };
  record(0);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const Matrix lam = intensity_on_interval(m, e.factors[i], grid, k);
    const double len = grid.node(k + 1) - grid.node(k);
    z = expm(lam * (-len), expm_tol) * z;
    y = y * expm(lam * len, expm_tol);
    record(k + 1);
  }
  if (target != std::numeric_limits<std::size_t>::max()) {
    for (std::size_t s = 0; s < ctx.width; ++s) {
      if (ctx.nodes[s] > target) break;
      const int xs = ctx.state[i * ctx.width + s];
      for (std::size_t x = 0; x < d; ++x) {
        double v = 0.0;
        for (std::size_t yy = 0; yy < d; ++yy)
          v += zmats[s](xs, yy) * y_target(yy, x);
        nvals[s * d + x] = v;
      }
    }
  }
}

}  // namespace detail

/// L_t = Z_t^T H_t: component x is Z_t(X_t, x).
inline MartingaleTestReport residual_L(const WeightedEnsemble& e,
                                       const IntensityModel& m,
                                       const Dictionary& dict,
                                       const std::vector<NodePair>& pairs,
                                       double threshold = kBonferroniThreshold) {
  const std::size_t n = e.size();
  const std::size_t d = m.dim();
  const detail::DiagContext ctx = detail::make_context(e, pairs);
  std::vector<std::string> comps(d);
  for (std::size_t x = 0; x < d; ++x)
    comps[x] = "L[" + std::to_string(x + 1) + "]";
  std::vector<double> inc(n * d * pairs.size());
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> lvals(ctx.width * d), nvals;
    detail::zy_rows(e, m, ctx, i,
                    std::numeric_limits<std::size_t>::max(), lvals, nvals);
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        const std::size_t ss = ctx.slot(pairs[p].s), tt = ctx.slot(pairs[p].t);
        inc[(i * d + x) * pairs.size() + p] =
            lvals[tt * d + x] - lvals[ss * d + x];
      }
  });
  return detail::score_increments("residual_L", e, ctx, pairs, dict, comps,
                                  inc, threshold);
}

/// N^t_s = P(s, t)^T H_s for a fixed target node t: component x is
/// P(s, t)(X_s, x), a martingale in s <= t.
inline MartingaleTestReport residual_N(const WeightedEnsemble& e,
                                       const IntensityModel& m,
                                       std::size_t target_node,
                                       const Dictionary& dict,
                                       const std::vector<NodePair>& pairs,
                                       double threshold = kBonferroniThreshold) {
  for (const NodePair& p : pairs)
    if (p.t > target_node)
      throw std::invalid_argument("residual_N: pair beyond target node");
  const std::size_t n = e.size();
  const std::size_t d = m.dim();
  const detail::DiagContext ctx = detail::make_context(e, pairs, target_node);
  std::vector<std::string> comps(d);
  for (std::size_t x = 0; x < d; ++x)
    comps[x] = "N[" + std::to_string(x + 1) + "]";
  std::vector<double> inc(n * d * pairs.size());
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> lvals(ctx.width * d), nvals(ctx.width * d);
    detail::zy_rows(e, m, ctx, i, target_node, lvals, nvals);
    for (std::size_t x = 0; x < d; ++x)
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        const std::size_t ss = ctx.slot(pairs[p].s), tt = ctx.slot(pairs[p].t);
        inc[(i * d + x) * pairs.size() + p] =
            nvals[tt * d + x] - nvals[ss * d + x];
      }
  });
  return detail::score_increments("residual_N", e, ctx, pairs, dict, comps,
                                  inc, threshold);
}

/// All four suites with shared defaults; target of N is the horizon node.
inline std::vector<MartingaleTestReport> run_martingale_suite(
    const WeightedEnsemble& e, const IntensityModel& m, double factor_cut,
    double threshold = kBonferroniThreshold) {
  const Dictionary dict = Dictionary::standard(m.dim(), factor_cut);
  const std::vector<NodePair> pairs = default_node_pairs(e.grid);
  return {residual_M(e, m, dict, pairs, threshold),
          residual_K(e, m, dict, pairs, threshold),
          residual_L(e, m, dict, pairs, threshold),
          residual_N(e, m, e.grid.steps, dict, pairs, threshold)};
}

struct CmcCell {
  int bucket = 0;
  int past = -1;  // extra conditioning state, -1 when unused
  int x = 0, y = 0;
  std::size_t count = 0;
  double exposure = 0.0;  // sum over the cell of p(1-p), the model variance
  bool thin = false;      // too little exposure for the normal approximation
  double estimate = 0.0, se = 0.0, z = 0.0;
};

struct CmcTestReport {
  std::size_t n_paths = 0;
  std::size_t t_node = 0, t1_node = 0;
  double threshold = kBonferroniThreshold;
  std::vector<CmcCell> cells;
  std::vector<double> bucket_edges;
  std::size_t empty_cells = 0;
  std::size_t thin_cells = 0;
  std::size_t scored_cells = 0;
  double max_abs_z = 0.0;
  bool pass = true;
};

struct CmcOptions {
  std::size_t buckets = 4;
  std::size_t extra_past_node = std::numeric_limits<std::size_t>::max();
  double threshold = kBonferroniThreshold;
  // Cells whose predicted variance mass sum p(1-p) falls below this are
  // reported but not scored: with a handful of expected successes the
  // estimated-SE z statistic has far heavier tails than normal (a zero-hit
  // cell collapses the SE while the estimate stays put), so scoring them
  // would fail calibrated data on noise alone.
  double min_exposure = 10.0;
};

/// Empirical check of the defining conditional property: within factor
/// buckets at t (and optionally an extra past state at an earlier node),
/// the weighted frequency of X_{t1} = y among paths with X_t = x matches
/// the path's own field entry p_{xy}(t, t1). Empty and thin cells are
/// reported, not failed.
inline CmcTestReport cmc_conditional_test(const WeightedEnsemble& e,
                                          const IntensityModel& m,
                                          std::size_t t_node,
                                          std::size_t t1_node,
                                          CmcOptions opt = {}) {
  if (t_node >= t1_node || t1_node > e.grid.steps)
    throw std::invalid_argument("cmc test wants t < t1 grid nodes");
  const bool with_past =
      opt.extra_past_node != std::numeric_limits<std::size_t>::max();
  if (with_past && opt.extra_past_node > t_node)
    throw std::invalid_argument("cmc test: past node beyond t");
  const std::size_t n = e.size();
  const std::size_t d = m.dim();

  // per-path field row p_{X_t, .}(t, t1) along its own factor path
  std::vector<double> prow(n * d);
  parallel_for(n, [&](std::size_t i) {
    const int xt = e.chains[i].state_at(e.grid.node(t_node));
    Vector row(d, 0.0);
    row[xt] = 1.0;
    for (std::size_t k = t_node; k < t1_node; ++k) {
      const Matrix lam = intensity_on_interval(m, e.factors[i], e.grid, k);
      const double len = e.grid.node(k + 1) - e.grid.node(k);
      row = vec_mat(row, expm(lam * len));
    }
    for (std::size_t y = 0; y < d; ++y) prow[i * d + y] = row[y];
  });

  // deterministic bucket edges: empirical quantiles of f_t
  std::vector<double> ft(n);
  for (std::size_t i = 0; i < n; ++i) ft[i] = e.factors[i].value(t_node);
  std::vector<double> sorted = ft;
  std::sort(sorted.begin(), sorted.end());
  CmcTestReport rep;
  rep.n_paths = n;
  rep.t_node = t_node;
  rep.t1_node = t1_node;
  rep.threshold = opt.threshold;
  for (std::size_t b = 1; b < opt.buckets; ++b)
    rep.bucket_edges.push_back(sorted[(n * b) / opt.buckets]);

  const std::size_t npast = with_past ? d : 1;
  const std::size_t ncell = opt.buckets * npast * d * d;
  std::vector<double> sum(ncell, 0.0), sum2(ncell, 0.0), expo(ncell, 0.0);
  std::vector<std::size_t> count(ncell, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t b = 0;
    for (double edge : rep.bucket_edges)
      if (ft[i] > edge) ++b;
    const int xt = e.chains[i].state_at(e.grid.node(t_node));
    const int xt1 = e.chains[i].state_at(e.grid.node(t1_node));
    const std::size_t past =
        with_past
            ? static_cast<std::size_t>(
                  e.chains[i].state_at(e.grid.node(opt.extra_past_node)))
            : 0;
    for (std::size_t y = 0; y < d; ++y) {
      const std::size_t cell =
          ((b * npast + past) * d + static_cast<std::size_t>(xt)) * d + y;
      const double p = prow[i * d + y];
      const double g =
          e.weights[i] * ((xt1 == static_cast<int>(y) ? 1.0 : 0.0) - p);
      sum[cell] += g;
      sum2[cell] += g * g;
      expo[cell] += p * (1.0 - p);
      ++count[cell];
    }
  }
  for (std::size_t cell = 0; cell < ncell; ++cell) {
    CmcCell c;
    c.bucket = static_cast<int>(cell / (npast * d * d));
    c.past = with_past ? static_cast<int>((cell / (d * d)) % npast) : -1;
    c.x = static_cast<int>((cell / d) % d);
    c.y = static_cast<int>(cell % d);
    c.count = count[cell];
    c.exposure = expo[cell];
    if (c.count == 0) {
      ++rep.empty_cells;
      rep.cells.push_back(c);
      continue;
    }
    const double nn = static_cast<double>(n);
    c.estimate = sum[cell] / nn;
    const double var =
        n > 1 ? std::max(0.0, (sum2[cell] - sum[cell] * sum[cell] / nn) /
                                  (nn - 1.0))
              : 0.0;
    c.se = std::sqrt(var / nn);
    if (c.se > 0.0)
      c.z = c.estimate / c.se;
    else
      c.z = c.estimate == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    c.thin = c.exposure < opt.min_exposure;
    if (c.thin) {
      ++rep.thin_cells;
    } else {
      ++rep.scored_cells;
      rep.max_abs_z = std::max(rep.max_abs_z, std::abs(c.z));
    }
    rep.cells.push_back(c);
  }
  rep.pass = rep.max_abs_z < rep.threshold;
  return rep;
}

struct EquivalenceReport {
  double max_abs_all = 0.0;       // over every path
  double max_abs_weighted = 0.0;  // over paths the weighted measure charges
};

/// Pathwise int_0^T (Lambda - LambdaHat)^T H_u du: zero over charged paths
/// means the two rules are indistinguishable relative to the chain.
inline EquivalenceReport equivalence_check(const WeightedEnsemble& e,
                                           const IntensityModel& a,
                                           const IntensityModel& b) {
  if (a.dim() != b.dim())
    throw std::invalid_argument("equivalence_check: dimension mismatch");
  const std::size_t n = e.size();
  const std::size_t d = a.dim();
  std::vector<double> worst(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    const TimeGrid& grid = e.grid;
    const ChainPath& chain = e.chains[i];
    std::vector<double> acc(d, 0.0);
    std::size_t jump = 0;
    for (std::size_t k = 0; k < grid.steps; ++k) {
      const Matrix la = intensity_on_interval(a, e.factors[i], grid, k);
      const Matrix lb = intensity_on_interval(b, e.factors[i], grid, k);
      double cur = grid.node(k);
      const double end = grid.node(k + 1);
      int s = chain.state_at(cur);
      auto add = [&](int st, double len) {
        for (std::size_t x = 0; x < d; ++x)
          acc[x] += (la(st, x) - lb(st, x)) * len;
      };
      while (jump < chain.jumps.size() && chain.jumps[jump].time <= end) {
        add(s, chain.jumps[jump].time - cur);
        cur = chain.jumps[jump].time;
        s = chain.jumps[jump].to;
        ++jump;
      }
      add(s, end - cur);
    }
    for (double v : acc) worst[i] = std::max(worst[i], std::abs(v));
  });
  EquivalenceReport rep;
  for (std::size_t i = 0; i < n; ++i) {
    rep.max_abs_all = std::max(rep.max_abs_all, worst[i]);
    if (e.weights[i] > 0.0)
      rep.max_abs_weighted = std::max(rep.max_abs_weighted, worst[i]);
  }
  return rep;
}

/// Counts exact coincidences between chain jump times and factor jump times.
/// The orthogonality convention demands zero almost surely.
inline std::size_t common_jump_scan(const WeightedEnsemble& e) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (const JumpRecord& j : e.chains[i].jumps)
      for (double ft : e.factors[i].jump_times)
        if (j.time == ft) ++hits;
  return hits;
}

}  // namespace cmclab
