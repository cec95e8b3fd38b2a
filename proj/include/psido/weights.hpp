#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "psido/common.hpp"

namespace psido {

enum class WeightKind { constant, linear_conical, sinh_hyperbolic, exp, custom };

inline const char* to_string(WeightKind k) {
  switch (k) {
    case WeightKind::constant: return "constant";
    case WeightKind::linear_conical: return "linear_conical";
    case WeightKind::sinh_hyperbolic: return "sinh_hyperbolic";
    case WeightKind::exp: return "exp";
    case WeightKind::custom: return "custom";
  }
  return "?";
}

inline WeightKind weight_kind_from_string(const std::string& s) {
  if (s == "constant") return WeightKind::constant;
  if (s == "linear_conical") return WeightKind::linear_conical;
  if (s == "sinh_hyperbolic") return WeightKind::sinh_hyperbolic;
  if (s == "exp") return WeightKind::exp;
  if (s == "custom") return WeightKind::custom;
  throw std::invalid_argument("unknown weight kind: " + s);
}

namespace detail {
// d^j/dr^j log(sinh r) is a polynomial in c = coth r:
//   p_1(c) = c,  p_{j+1}(c) = p_j'(c) * (1 - c^2).
// Coefficient rows are cached; evaluation is a Horner pass.
inline const std::vector<double>& coth_poly(int j) {
  static std::vector<std::vector<double>> rows = {{0.0, 1.0}};  // p_1
  while (static_cast<int>(rows.size()) < j) {
    const auto& p = rows.back();
    std::vector<double> d(p.size() >= 1 ? p.size() - 1 : 0, 0.0);
    for (std::size_t k = 1; k < p.size(); ++k) d[k - 1] = k * p[k];
    // multiply derivative by (1 - c^2)
    std::vector<double> next(d.size() + 2, 0.0);
    for (std::size_t k = 0; k < d.size(); ++k) {
      next[k] += d[k];
      next[k + 2] -= d[k];
    }
    rows.push_back(std::move(next));
  }
  return rows[j - 1];
}

inline double eval_poly(const std::vector<double>& p, double x) {
  double acc = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * x + *it;
  return acc;
}
}  // namespace detail

// A radial weight r -> lambda(r) > 0 together with its registered
// log-derivatives d^j/dr^j log(lambda). Immutable after construction.
class WeightFunction {
 public:
  using EvalFn = std::function<double(double)>;
  using LogDerivFn = std::function<double(int, double)>;

  WeightFunction(WeightKind kind, std::vector<double> params, double r_min, double r_max)
      : kind_(kind), params_(std::move(params)), r_min_(r_min), r_max_(r_max) {
    if (!(r_min_ < r_max_)) throw std::invalid_argument("weight: empty r domain");
    switch (kind_) {
      case WeightKind::constant:
        scale_ = params_.empty() ? 1.0 : params_[0];
        if (!(scale_ > 0.0)) throw std::invalid_argument("weight: constant must be positive");
        jmax_ = -1;  // unlimited
        break;
      case WeightKind::linear_conical:
        if (r_min_ <= 0.0)
          throw std::invalid_argument("weight: linear_conical needs r_min > 0");
        jmax_ = -1;
        break;
      case WeightKind::sinh_hyperbolic:
        if (r_min_ <= 0.0)
          throw std::invalid_argument("weight: sinh_hyperbolic needs r_min > 0");
        jmax_ = -1;
        break;
      case WeightKind::exp:
        rate_ = params_.empty() ? 1.0 : params_[0];
        jmax_ = -1;
        break;
      case WeightKind::custom:
        throw std::invalid_argument("weight: custom kind requires explicit evaluators");
    }
  }

  // Custom weight: caller supplies eval and log-derivatives up to jmax.
  WeightFunction(EvalFn eval, LogDerivFn log_deriv, int jmax, double r_min, double r_max,
                 std::string label = "custom")
      : kind_(WeightKind::custom),
        r_min_(r_min),
        r_max_(r_max),
        custom_eval_(std::move(eval)),
        custom_log_deriv_(std::move(log_deriv)),
        jmax_(jmax),
        label_(std::move(label)) {
    if (!(r_min_ < r_max_)) throw std::invalid_argument("weight: empty r domain");
  }

  double eval(double r) const {
    switch (kind_) {
      case WeightKind::constant: return scale_;
      case WeightKind::linear_conical: return r;
      case WeightKind::sinh_hyperbolic: return std::sinh(r);
      case WeightKind::exp: return std::exp(rate_ * r);
      case WeightKind::custom: return custom_eval_(r);
    }
    return 0.0;
  }

  // d^j/dr^j log(lambda) for j >= 1; j = 0 returns log(lambda).
  double log_deriv(int j, double r) const {
    if (j == 0) return std::log(eval(r));
    if (jmax_ >= 0 && j > jmax_)
      throw std::domain_error("weight '" + label() + "': log derivative order " +
                              std::to_string(j) + " exceeds registered maximum " +
                              std::to_string(jmax_));
    switch (kind_) {
      case WeightKind::constant: return 0.0;
      case WeightKind::linear_conical: {
        // log r: j-th derivative (-1)^(j-1) (j-1)! r^-j
        double v = (j % 2 == 1) ? 1.0 : -1.0;
        for (int i = 1; i < j; ++i) v *= i;
        return v * std::pow(r, -j);
      }
      case WeightKind::sinh_hyperbolic:
        return detail::eval_poly(detail::coth_poly(j), 1.0 / std::tanh(r));
      case WeightKind::exp: return j == 1 ? rate_ : 0.0;
      case WeightKind::custom: return custom_log_deriv_(j, r);
    }
    return 0.0;
  }

  WeightKind kind() const { return kind_; }
  double r_min() const { return r_min_; }
  double r_max() const { return r_max_; }
  bool contains(double r) const { return r >= r_min_ && r <= r_max_; }
  int jmax() const { return jmax_; }  // -1 means any order
  std::string label() const {
    if (kind_ == WeightKind::custom) return label_;
    return to_string(kind_);
  }

 private:
  WeightKind kind_;
  std::vector<double> params_;
  double r_min_, r_max_;
  double scale_ = 1.0;
  double rate_ = 1.0;
  EvalFn custom_eval_;
  LogDerivFn custom_log_deriv_;
  int jmax_ = -1;
  std::string label_;
};

using WeightPtr = std::shared_ptr<const WeightFunction>;

inline WeightPtr make_weight(WeightKind kind, const std::vector<double>& params, double r_min,
                             double r_max) {
  auto w = std::make_shared<WeightFunction>(kind, params, r_min, r_max);
  // Positivity on a sample of the domain.
  for (double r : linspace(r_min, r_max, 64)) {
    if (!(w->eval(r) > 0.0))
      throw std::invalid_argument("weight: lambda not positive at r = " + std::to_string(r));
  }
  return w;
}

inline WeightPtr make_weight(const std::string& kind, const std::vector<double>& params,
                             double r_min, double r_max) {
  return make_weight(weight_kind_from_string(kind), params, r_min, r_max);
}

inline WeightPtr make_custom_weight(WeightFunction::EvalFn eval,
                                    WeightFunction::LogDerivFn log_deriv, int jmax, double r_min,
                                    double r_max, std::string label = "custom") {
  return std::make_shared<WeightFunction>(std::move(eval), std::move(log_deriv), jmax, r_min,
                                          r_max, std::move(label));
}

// Sampling-based certificate for the weight admissibility conditions.
// Records the lattice it was computed on so results are reproducible.
struct WeightCertificate {
  double slow_variation_C = 1.0;       // two-sided ratio constant over |r - r'| <= 1
  bool slow_variation_pass = true;     // vs. caller threshold
  std::vector<std::pair<int, double>> log_deriv_bounds;  // (j, sup |d^j log lambda|)
  bool log_deriv_pass = true;
  int jmax = 0;
  std::vector<double> lattice;
};

// sup over sampled pairs |r - r'| <= 1 of max(lam(r)/lam(r'), lam(r')/lam(r)).
inline WeightCertificate check_slow_variation(const WeightFunction& lam,
                                              const std::vector<double>& lattice,
                                              double threshold = 1e6) {
  if (lattice.empty()) throw std::invalid_argument("check_slow_variation: empty lattice");
  WeightCertificate cert;
  cert.lattice = lattice;
  std::vector<double> vals(lattice.size());
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    if (!lam.contains(lattice[i]))
      throw std::invalid_argument("check_slow_variation: lattice point outside r domain");
    vals[i] = lam.eval(lattice[i]);
  }
  double c = 1.0;
  for (std::size_t i = 0; i < lattice.size(); ++i)
    for (std::size_t j = i + 1; j < lattice.size(); ++j) {
      if (std::abs(lattice[i] - lattice[j]) > 1.0) continue;
      double ratio = vals[i] / vals[j];
      c = std::max(c, std::max(ratio, 1.0 / ratio));
    }
  cert.slow_variation_C = c;
  cert.slow_variation_pass = (c <= threshold);
  return cert;
}

// Reports sup over the lattice of |d^j log lambda| for 1 <= j <= jmax.
inline WeightCertificate check_log_derivative_bounds(const WeightFunction& lam, int jmax,
                                                     const std::vector<double>& lattice,
                                                     double threshold = 1e6) {
  if (jmax < 1) throw std::invalid_argument("check_log_derivative_bounds: jmax >= 1 required");
  if (lattice.empty())
    throw std::invalid_argument("check_log_derivative_bounds: empty lattice");
  WeightCertificate cert;
  cert.lattice = lattice;
  cert.jmax = jmax;
  for (int j = 1; j <= jmax; ++j) {
    double sup = 0.0;
    for (double r : lattice) sup = std::max(sup, std::abs(lam.log_deriv(j, r)));
    cert.log_deriv_bounds.emplace_back(j, sup);
    if (!(sup <= threshold) || !std::isfinite(sup)) cert.log_deriv_pass = false;
  }
  return cert;
}

}  // namespace psido
