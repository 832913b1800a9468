#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>

#include "cmclab/core.hpp"

namespace cmclab {

inline double max_offdiag(const Matrix& g) {
  double m = 0.0;
  for (std::size_t i = 0; i < g.dim(); ++i)
    for (std::size_t j = 0; j < g.dim(); ++j)
      if (i != j) m = std::max(m, g(i, j));
  return m;
}

inline Matrix checked_generator(Matrix g, const char* who) {
  if (const auto rep = validate_generator(g); !rep.ok)
    throw std::invalid_argument(std::string(who) + ": not a generator matrix");
  return g;
}

class ConstantIntensity final : public IntensityModel {
 public:
  explicit ConstantIntensity(Matrix g)
      : g_(checked_generator(std::move(g), "constant intensity")) {}
  std::size_t dim() const override { return g_.dim(); }
  double lambda_max() const override { return max_offdiag(g_); }
  Matrix on_interval(const FactorView&, const TimeGrid&,
                     std::size_t) const override {
    return g_;
  }

 private:
  Matrix g_;
};

/// base generator modulated by a logistic function of the factor read at the
/// left node of the interval: scale in (scale_min, scale_max).
class LogisticScaleIntensity final : public IntensityModel {
 public:
  LogisticScaleIntensity(Matrix base, double scale_min, double scale_max,
                         double slope, double center)
      : base_(checked_generator(std::move(base), "logistic_scale base")),
        lo_(scale_min),
        hi_(scale_max),
        slope_(slope),
        center_(center) {
    if (!(lo_ > 0.0) || !(hi_ >= lo_))
      throw std::invalid_argument("logistic_scale: need 0 < scale_min <= scale_max");
  }
  std::size_t dim() const override { return base_.dim(); }
  double lambda_max() const override { return hi_ * max_offdiag(base_); }
  Matrix on_interval(const FactorView& f, const TimeGrid&,
                     std::size_t k) const override {
    const double x = f.value(k);
    const double s = lo_ + (hi_ - lo_) / (1.0 + std::exp(-slope_ * (x - center_)));
    Matrix g = base_;
    g.scale(s);
    return g;
  }

 private:
  Matrix base_;
  double lo_, hi_, slope_, center_;
};

/// Two regimes switched by the sign of (factor - cut) at the left node.
class ThresholdIntensity final : public IntensityModel {
 public:
  ThresholdIntensity(Matrix low, Matrix high, double cut)
      : low_(checked_generator(std::move(low), "threshold low")),
        high_(checked_generator(std::move(high), "threshold high")),
        cut_(cut) {
    if (low_.dim() != high_.dim())
      throw std::invalid_argument("threshold: regime dimensions differ");
  }
  std::size_t dim() const override { return low_.dim(); }
  double lambda_max() const override {
    return std::max(max_offdiag(low_), max_offdiag(high_));
  }
  Matrix on_interval(const FactorView& f, const TimeGrid&,
                     std::size_t k) const override {
    return f.value(k) > cut_ ? high_ : low_;
  }

 private:
  Matrix low_, high_;
  double cut_;
};

/// Deterministic two-piece rule: `before` on intervals k < switch_node,
/// `after` from the switch node on. Factor-independent test fixture.
class TimeSwitchIntensity final : public IntensityModel {
 public:
  TimeSwitchIntensity(Matrix before, Matrix after, std::size_t switch_node)
      : before_(checked_generator(std::move(before), "time_switch before")),
        after_(checked_generator(std::move(after), "time_switch after")),
        switch_(switch_node) {
    if (before_.dim() != after_.dim())
      throw std::invalid_argument("time_switch: piece dimensions differ");
  }
  std::size_t dim() const override { return before_.dim(); }
  double lambda_max() const override {
    return std::max(max_offdiag(before_), max_offdiag(after_));
  }
  Matrix on_interval(const FactorView&, const TimeGrid&,
                     std::size_t k) const override {
    return k < switch_ ? before_ : after_;
  }

 private:
  Matrix before_, after_;
  std::size_t switch_;
};

/// Off-diagonal rates of a wrapped rule scaled by a positive factor, with
/// diagonals recomputed. Used for deliberate misspecification (e.g. 2x).
class ScaledIntensity final : public IntensityModel {
 public:
  ScaledIntensity(std::shared_ptr<const IntensityModel> base, double scale)
      : base_(std::move(base)), scale_(scale) {
    if (!base_ || !(scale_ > 0.0))
      throw std::invalid_argument("scaled intensity: need base and scale > 0");
  }
  std::size_t dim() const override { return base_->dim(); }
  double lambda_max() const override { return scale_ * base_->lambda_max(); }
  Matrix on_interval(const FactorView& f, const TimeGrid& grid,
                     std::size_t k) const override {
    Matrix g = base_->on_interval(f, grid, k);
    for (std::size_t i = 0; i < g.dim(); ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < g.dim(); ++j)
        if (i != j) row += (g(i, j) *= scale_);
      g(i, i) = -row;
    }
    return g;
  }

 private:
  std::shared_ptr<const IntensityModel> base_;
  double scale_;
};

/// Adversarial fixture: reads the factor at a fixed node regardless of the
/// interval, so evaluating early intervals trips the truncation guard.
class FixedNodeIntensity final : public IntensityModel {
 public:
  FixedNodeIntensity(Matrix base, std::size_t node)
      : base_(checked_generator(std::move(base), "fixed_node base")),
        node_(node) {}
  std::size_t dim() const override { return base_.dim(); }
  double lambda_max() const override { return 2.0 * max_offdiag(base_); }
  Matrix on_interval(const FactorView& f, const TimeGrid&,
                     std::size_t) const override {
    Matrix g = base_;
    if (f.value(node_) > 0.0) g.scale(2.0);
    return g;
  }

 private:
  Matrix base_;
  std::size_t node_;
};

}  // namespace cmclab
