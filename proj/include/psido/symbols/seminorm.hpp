#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "psido/symbols/expr.hpp"

namespace psido {

struct SymbolClassTag {
  double m = 0.0;
  double sigma = 0.0;  // decay gain per momentum derivative, in [0, 1]
  WeightPtr weight;
  std::optional<double> bisymbol_t;

  SymbolClassTag(double m_, double sigma_, WeightPtr w, std::optional<double> t = std::nullopt)
      : m(m_), sigma(sigma_), weight(std::move(w)), bisymbol_t(t) {
    if (sigma < 0.0 || sigma > 1.0) throw std::invalid_argument("tag: sigma must be in [0,1]");
    if (bisymbol_t && (*bisymbol_t < 0.0 || *bisymbol_t > 1.0))
      throw std::invalid_argument("tag: t must be in [0,1]");
  }
};

struct SeminormEstimate {
  int M = 0;
  double value = 0.0;
  std::map<std::string, double> per_multiindex;  // "(A|B)" or "(A|B|A')" -> contributing sup
  std::string lattice;
};

namespace detail {
inline std::string midx_key(const MIdx& a, int n) {
  std::ostringstream os;
  os << a.rad;
  for (int d = 0; d < n - 1; ++d) os << "," << a.ang[d];
  return os.str();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Weighted derivatives

// (lambda^-1 d_theta)^alpha (lambda d_eta)^beta d_r^alpha0 d_rho^beta0 applied
// to a. The lambda factors depend on r only and commute with the angular
// derivatives, so they collapse to a single power lambda^(|beta| - |alpha|)
// in front of the plain mixed partial.
inline Expr weighted_derivative(const Expr& a, const MIdx& A, const MIdx& B,
                                const WeightPtr& lam) {
  Expr d = a;
  for (int j = 0; j < B.rad; ++j) d = differentiate(d, VarClass::Rho);
  for (int j = 0; j < A.rad; ++j) d = differentiate(d, VarClass::R);
  for (int ax = 0; ax < 2; ++ax) {
    for (int j = 0; j < B.ang[ax]; ++j) d = differentiate(d, VarClass::Eta, ax);
    for (int j = 0; j < A.ang[ax]; ++j) d = differentiate(d, VarClass::Theta, ax);
  }
  int pow = B.ang_order() - A.ang_order();
  if (pow != 0) d = intpow(Expr::weight(lam, 0, var_r()), pow) * d;
  return d;
}

// Plain mixed partial over (q, p, q'); used by the bisymbol seminorms where
// the weight enters as the frozen constant of each unit cell.
inline Expr mixed_partial(const Expr& a, const MIdx& A, const MIdx& B, const MIdx& Ap) {
  Expr d = a;
  for (int j = 0; j < B.rad; ++j) d = differentiate(d, VarClass::Rho);
  for (int j = 0; j < A.rad; ++j) d = differentiate(d, VarClass::R);
  for (int j = 0; j < Ap.rad; ++j) d = differentiate(d, VarClass::RPrime);
  for (int ax = 0; ax < 2; ++ax) {
    for (int j = 0; j < B.ang[ax]; ++j) d = differentiate(d, VarClass::Eta, ax);
    for (int j = 0; j < A.ang[ax]; ++j) d = differentiate(d, VarClass::Theta, ax);
    for (int j = 0; j < Ap.ang[ax]; ++j) d = differentiate(d, VarClass::ThetaPrime, ax);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Lattices

// Sample set for sup estimation over (q, p): uniform r window, uniform
// angles, momenta on log-spaced radial shells with angular directions.
struct QPLattice {
  int n = 2;
  std::vector<double> r;
  std::vector<double> theta;
  std::vector<double> p_radii;
  std::vector<std::array<double, 3>> p_dirs;

  static QPLattice make(int n, double r0, double r1, int nr, int ntheta = 4,
                        double p_max = 1e3, int shells = 12, int ndirs = 8) {
    QPLattice lat;
    lat.n = n;
    lat.r = linspace(r0, r1, nr);
    // offset keeps angle samples away from special points
    for (int k = 0; k < ntheta; ++k) lat.theta.push_back(2.0 * pi * (k + 0.37) / ntheta);
    lat.p_radii.push_back(0.0);
    int per = std::max(1, shells - 1);
    for (int k = 0; k < per; ++k)
      lat.p_radii.push_back(0.5 * std::pow(p_max / 0.5, double(k) / std::max(1, per - 1)));
    if (n == 2) {
      for (int k = 0; k < ndirs; ++k) {
        double phi = 2.0 * pi * (k + 0.29) / ndirs;
        lat.p_dirs.push_back({std::cos(phi), std::sin(phi), 0.0});
      }
    } else {
      int na = std::max(2, ndirs / 2);
      for (int k = 0; k < na; ++k)
        for (int l = 0; l < 2; ++l) {
          double phi = 2.0 * pi * (k + 0.29) / na;
          double psi = pi * (l + 0.37) / 2;
          lat.p_dirs.push_back({std::cos(phi) * std::sin(psi),
                                std::sin(phi) * std::sin(psi), std::cos(psi)});
        }
    }
    return lat;
  }

  QPLattice refined(int factor = 2) const {
    QPLattice lat = *this;
    lat.r = linspace(r.front(), r.back(), static_cast<int>(r.size()) * factor);
    std::vector<double> th;
    int nt = static_cast<int>(theta.size()) * factor;
    for (int k = 0; k < nt; ++k) th.push_back(2.0 * pi * (k + 0.37) / nt);
    lat.theta = th;
    std::vector<double> radii{0.0};
    double pmax = p_radii.back();
    int per = (static_cast<int>(p_radii.size()) - 1) * factor;
    for (int k = 0; k < per; ++k)
      radii.push_back(0.5 * std::pow(pmax / 0.5, double(k) / (per - 1)));
    lat.p_radii = radii;
    return lat;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "qp[r:" << r.size() << " in [" << r.front() << "," << r.back()
       << "], theta:" << theta.size() << ", shells:" << p_radii.size()
       << " to " << p_radii.back() << ", dirs:" << p_dirs.size() << "]";
    return os.str();
  }
};

// Sample set for the bisymbol seminorms: integer cells l = (j, k) with local
// boxes |r - j| <= 1, |r' - k| <= 1.
struct BisymbolLattice {
  int n = 2;
  int j_lo = 0, j_hi = 0, k_lo = 0, k_hi = 0;
  std::vector<double> cell_offsets{-0.9, -0.45, 0.0, 0.45, 0.9};
  std::vector<double> theta;
  std::vector<double> p_radii;
  std::vector<std::array<double, 3>> p_dirs;

  static BisymbolLattice make(int n, int j_lo, int j_hi, int k_lo, int k_hi,
                              double p_max = 1e3, int shells = 10, int ndirs = 6) {
    BisymbolLattice lat;
    lat.n = n;
    lat.j_lo = j_lo;
    lat.j_hi = j_hi;
    lat.k_lo = k_lo;
    lat.k_hi = k_hi;
    QPLattice qp = QPLattice::make(n, 0, 1, 2, 3, p_max, shells, ndirs);
    lat.theta = qp.theta;
    lat.p_radii = qp.p_radii;
    lat.p_dirs = qp.p_dirs;
    return lat;
  }

  std::string describe() const {
    std::ostringstream os;
    os << "bs[j:" << j_lo << ".." << j_hi << ", k:" << k_lo << ".." << k_hi
       << ", offs:" << cell_offsets.size() << ", shells:" << p_radii.size()
       << ", dirs:" << p_dirs.size() << "]";
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Seminorm estimation

// value = sum over |A|+|B| <= M of sup over the lattice of
//   <rho (+) lambda^-1 eta>^(-m + sigma |B|) |weighted_derivative(a, A, B)|.
inline SeminormEstimate estimate_seminorm(const Expr& a, const SymbolClassTag& tag, int M,
                                          const QPLattice& lat, const Params& params = {}) {
  if (coord_usage(a).any_qprime())
    throw std::invalid_argument("estimate_seminorm: symbol must not reference q'");
  const int n = lat.n;
  SeminormEstimate est;
  est.M = M;
  est.lattice = lat.describe();

  std::vector<cplx> buf;
  for (const MIdx& A : multiindices_up_to(n, M)) {
    for (const MIdx& B : multiindices_up_to(n, M - A.order())) {
      Expr d = weighted_derivative(a, A, B, tag.weight);
      Tape tape(d, params);
      double expo = -tag.m + tag.sigma * B.order();
      double sup = 0.0;
      for (double rv : lat.r) {
        double lamv = tag.weight->eval(rv);
        for (double th : lat.theta) {
          EvalContext ctx;
          ctx.n = n;
          ctx.q = {rv, th, th * 0.7};
          for (double rad : lat.p_radii) {
            for (const auto& dir : lat.p_dirs) {
              ctx.p = {rad * dir[0], rad * dir[1], rad * dir[2]};
              double br = jbracket(ctx.p[0], {ctx.p[1] / lamv, ctx.p[2] / lamv}, n);
              ctx.params = &params;
              cplx v = tape.eval(ctx, buf);
              if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
                throw std::domain_error("estimate_seminorm: pole on lattice at r=" +
                                        std::to_string(rv));
              sup = std::max(sup, std::pow(br, expo) * std::abs(v));
              if (rad == 0.0) break;  // all directions coincide at |p| = 0
            }
          }
        }
      }
      est.per_multiindex[ "(" + detail::midx_key(A, n) + "|" + detail::midx_key(B, n) + ")"] =
          sup;
      est.value += sup;
    }
  }
  return est;
}

// Bisymbol version: the double sup over cells l = (j,k) and local boxes, with
// lambda frozen to lambda(t j + (1-t) k) both in the derivative factors and in
// the bracket.
inline SeminormEstimate estimate_bisymbol_seminorm(const Expr& a, const SymbolClassTag& tag,
                                                   int M, const BisymbolLattice& lat,
                                                   const Params& params = {}) {
  if (!tag.bisymbol_t)
    throw std::invalid_argument("estimate_bisymbol_seminorm: tag needs bisymbol t");
  const double t = *tag.bisymbol_t;
  const int n = lat.n;
  SeminormEstimate est;
  est.M = M;
  est.lattice = lat.describe();

  std::vector<cplx> buf;
  for (const MIdx& A : multiindices_up_to(n, M)) {
    for (const MIdx& B : multiindices_up_to(n, M - A.order())) {
      for (const MIdx& Ap : multiindices_up_to(n, M - A.order() - B.order())) {
        Expr d = mixed_partial(a, A, B, Ap);
        Tape tape(d, params);
        int cpow = B.ang_order() - A.ang_order() - Ap.ang_order();
        double expo = -tag.m + tag.sigma * B.order();
        double sup = 0.0;
        for (int j = lat.j_lo; j <= lat.j_hi; ++j) {
          for (int k = lat.k_lo; k <= lat.k_hi; ++k) {
            double anchor = t * j + (1.0 - t) * k;
            if (!tag.weight->contains(anchor)) continue;
            double c = tag.weight->eval(anchor);
            double cfac = std::pow(c, cpow);
            for (double orr : lat.cell_offsets) {
              for (double orp : lat.cell_offsets) {
                for (double th : lat.theta) {
                  EvalContext ctx;
                  ctx.n = n;
                  ctx.q = {j + orr, th, th * 0.7};
                  ctx.qp = {k + orp, th * 1.3, th * 0.5};
                  ctx.params = &params;
                  for (double rad : lat.p_radii) {
                    for (const auto& dir : lat.p_dirs) {
                      ctx.p = {rad * dir[0], rad * dir[1], rad * dir[2]};
                      double br = jbracket(ctx.p[0], {ctx.p[1] / c, ctx.p[2] / c}, n);
                      cplx v = tape.eval(ctx, buf);
                      if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
                        throw std::domain_error(
                            "estimate_bisymbol_seminorm: pole on lattice");
                      sup = std::max(sup, std::pow(br, expo) * cfac * std::abs(v));
                      if (rad == 0.0) break;
                    }
                  }
                }
              }
            }
          }
        }
        est.per_multiindex["(" + detail::midx_key(A, n) + "|" + detail::midx_key(B, n) + "|" +
                           detail::midx_key(Ap, n) + ")"] = sup;
        est.value += sup;
      }
    }
  }
  return est;
}

// ---------------------------------------------------------------------------
// Bisymbol constructions

// a_t(q, p, q') = a(t q + (1-t) q', p), substituted exactly in the tree.
inline Expr freeze_bisymbol(const Expr& a0, double t) {
  if (coord_usage(a0).any_qprime())
    throw std::invalid_argument("freeze_bisymbol: input already references q'");
  if (t == 1.0) return a0;
  std::vector<std::pair<VarRef, Expr>> subs;
  auto mix = [&](Expr x, Expr xp) {
    return Expr::constant(t) * x + Expr::constant(1.0 - t) * xp;
  };
  subs.push_back({{VarClass::R, 0}, mix(var_r(), var_rprime())});
  for (int ax = 0; ax < 2; ++ax)
    subs.push_back({{VarClass::Theta, ax}, mix(var_theta(ax), var_thetaprime(ax))});
  return substitute(a0, subs);
}

// a^dagger(q, p, q') = conj(a(q', p, q)).
inline Expr adjoint_bisymbol(const Expr& a) {
  std::vector<std::pair<VarRef, Expr>> swap;
  swap.push_back({{VarClass::R, 0}, var_rprime()});
  swap.push_back({{VarClass::RPrime, 0}, var_r()});
  for (int ax = 0; ax < 2; ++ax) {
    swap.push_back({{VarClass::Theta, ax}, var_thetaprime(ax)});
    swap.push_back({{VarClass::ThetaPrime, ax}, var_theta(ax)});
  }
  return conjugate_expr(substitute(a, swap));
}

// Momentum rescaling p -> hbar p (semiclassical symbols).
inline Expr rescale_momentum(const Expr& a, double hbar) {
  std::vector<std::pair<VarRef, Expr>> subs;
  subs.push_back({{VarClass::Rho, 0}, Expr::constant(hbar) * var_rho()});
  for (int ax = 0; ax < 2; ++ax)
    subs.push_back({{VarClass::Eta, ax}, Expr::constant(hbar) * var_eta(ax)});
  return substitute(a, subs);
}

}  // namespace psido
