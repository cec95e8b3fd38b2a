#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "psido/symbols/expr.hpp"
#include "psido/symbols/parse.hpp"

using namespace psido;
using Catch::Approx;

namespace {

EvalContext random_context(std::mt19937_64& rng, int n = 2) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  EvalContext ctx;
  ctx.n = n;
  ctx.q = {2.0 + unif(rng), unif(rng), unif(rng)};
  ctx.p = {unif(rng) * 2, unif(rng) * 2, unif(rng)};
  ctx.qp = {2.0 + unif(rng), unif(rng), unif(rng)};
  return ctx;
}

// Central finite difference of the expression along one coordinate.
cplx fd_eval(const Expr& e, EvalContext ctx, const Params& params, VarRef v, double h = 1e-5) {
  ctx.params = &params;
  auto shift = [&](double sign) {
    EvalContext c = ctx;
    switch (v.cls) {
      case VarClass::R: c.q[0] += sign * h; break;
      case VarClass::Theta: c.q[1 + v.idx] += sign * h; break;
      case VarClass::Rho: c.p[0] += sign * h; break;
      case VarClass::Eta: c.p[1 + v.idx] += sign * h; break;
      case VarClass::RPrime: c.qp[0] += sign * h; break;
      case VarClass::ThetaPrime: c.qp[1 + v.idx] += sign * h; break;
    }
    return evaluate(e, c);
  };
  return (shift(1.0) - shift(-1.0)) / (2.0 * h);
}

// Random expression tree over the full coordinate set.
Expr random_tree(std::mt19937_64& rng, const WeightPtr& lam, int depth) {
  std::uniform_int_distribution<int> pick(0, 9);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  if (depth == 0) {
    switch (pick(rng) % 7) {
      case 0: return var_r();
      case 1: return var_rho();
      case 2: return var_eta(0);
      case 3: return Expr::constant(unif(rng));
      case 4: return lambda_of_r(lam);
      case 5: return var_theta(0);
      default: return var_rprime();
    }
  }
  Expr a = random_tree(rng, lam, depth - 1);
  Expr b = random_tree(rng, lam, depth - 1);
  switch (pick(rng)) {
    case 0: return a + b;
    case 1: return a - b;
    case 2: return a * b;
    case 3: return a / (4.0 + b * b);  // keep denominators away from zero
    case 4: return sin_(a);
    case 5: return cos_(a);
    case 6: return exp_(a * 0.25);
    case 7: return intpow(1.0 + a * a, -1);
    case 8: return sqrt_(1.0 + a * a);
    default: return tanh_(a);
  }
}

}  // namespace

TEST_CASE("evaluation of basic trees") {
  auto sh = make_weight(WeightKind::sinh_hyperbolic, {}, 0.5, 30.0);
  Params params{{"z", cplx(0.0, 1.0)}};
  EvalContext ctx;
  ctx.n = 2;
  ctx.q = {2.0, 0.5, 0.0};
  ctx.p = {1.5, -0.5, 0.0};
  ctx.params = &params;

  Expr a = intpow(var_rho(), 2) + intpow(lambda_of_r(sh), -2) * intpow(var_eta(0), 2);
  double lam = std::sinh(2.0);
  CHECK(evaluate(a, ctx).real() == Approx(1.5 * 1.5 + 0.25 / (lam * lam)));

  Expr res = Expr::constant(1.0) / (Expr::param("z") - intpow(var_rho(), 2));
  cplx expect = 1.0 / (cplx(0, 1) - cplx(2.25));
  CHECK(std::abs(evaluate(res, ctx) - expect) < 1e-15);
}

TEST_CASE("differentiate: stated cases") {
  auto sh = make_weight(WeightKind::sinh_hyperbolic, {}, 0.5, 30.0);

  SECTION("d/drho of rho^2 + eta^2 lambda^-2 is 2 rho") {
    Expr a = intpow(var_rho(), 2) + intpow(var_eta(0), 2) * intpow(lambda_of_r(sh), -2);
    Expr d = differentiate(a, VarClass::Rho);
    EvalContext ctx;
    ctx.q = {3.0, 0, 0};
    ctx.p = {1.25, 2.0, 0};
    CHECK(evaluate(d, ctx).real() == Approx(2.5));
  }

  SECTION("d/dr of lambda^-2 forces the chain rule through log lambda") {
    Expr a = intpow(lambda_of_r(sh), -2);
    Expr d = differentiate(a, VarClass::R);
    EvalContext ctx;
    ctx.q = {2.0, 0, 0};
    double lam = std::sinh(2.0), cth = 1.0 / std::tanh(2.0);
    CHECK(evaluate(d, ctx).real() == Approx(-2.0 * cth / (lam * lam)).epsilon(1e-12));
  }

  SECTION("z-resolvent has no r dependence") {
    Expr a = Expr::constant(1.0) / (Expr::param("z") - intpow(var_rho(), 2));
    Expr d = differentiate(a, VarClass::R);
    CHECK(d.is_const(0.0));
  }
}

TEST_CASE("differentiate matches finite differences on random trees") {
  auto sh = make_weight(WeightKind::sinh_hyperbolic, {}, 0.5, 30.0);
  std::mt19937_64 rng(20240817);
  Params params;
  const std::vector<VarRef> vars = {{VarClass::R, 0},   {VarClass::Theta, 0},
                                    {VarClass::Rho, 0}, {VarClass::Eta, 0},
                                    {VarClass::RPrime, 0}};
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Expr e = random_tree(rng, sh, 2 + trial % 5);
    for (const VarRef& v : vars) {
      Expr d = differentiate(e, v);
      EvalContext ctx = random_context(rng);
      ctx.params = &params;
      cplx exact = evaluate(d, ctx);
      cplx numeric = fd_eval(e, ctx, params, v);
      double scale = std::max({std::abs(exact), std::abs(numeric), 1e-3});
      if (std::abs(exact) > 1e7) continue;  // ill-conditioned sample, skip
      CHECK(std::abs(exact - numeric) / scale < 1e-5);
      ++checked;
    }
  }
  CHECK(checked > 400);
}

TEST_CASE("substitute and conjugate") {
  SECTION("conjugation swaps z and zbar and is an involution") {
    Expr a = Expr::constant(cplx(0, 1)) * var_r() +
             Expr::constant(1.0) / (Expr::param("z") - intpow(var_rho(), 2));
    Expr c = conjugate_expr(a);
    Params params{{"z", cplx(1.0, 2.0)}, {"zbar", cplx(1.0, -2.0)}};
    EvalContext ctx;
    ctx.q = {1.5, 0, 0};
    ctx.p = {0.5, 0, 0};
    ctx.params = &params;
    CHECK(std::abs(evaluate(c, ctx) - std::conj(evaluate(a, ctx))) < 1e-15);
    Expr cc = conjugate_expr(c);
    CHECK(std::abs(evaluate(cc, ctx) - evaluate(a, ctx)) < 1e-15);
  }
}

TEST_CASE("smoothstep primitive") {
  CHECK(detail::sstep_eval(0, -0.5) == 0.0);
  CHECK(detail::sstep_eval(0, 1.5) == 1.0);
  CHECK(detail::sstep_eval(0, 0.5) == Approx(0.5));  // odd symmetry about midpoint
  // derivatives vanish identically outside [0,1] up to the smoothness order,
  // and decay to zero approaching the knots from inside
  for (int j = 1; j <= 8; ++j) {
    CHECK(detail::sstep_eval(j, -1e-12) == 0.0);
    CHECK(detail::sstep_eval(j, 1.0 + 1e-12) == 0.0);
    double near = std::abs(detail::sstep_eval(j, 1e-4));
    double far = std::abs(detail::sstep_eval(j, 1e-2));
    CHECK(near < far);
    CHECK(std::abs(detail::sstep_eval(j, 1e-12)) < 1e-2);
  }
  // interior derivative matches finite differences
  Expr s = Expr::sstep(var_r());
  Expr ds = differentiate(s, VarClass::R);
  EvalContext ctx;
  ctx.q = {0.37, 0, 0};
  double h = 1e-6;
  EvalContext cl = ctx, cr = ctx;
  cl.q[0] -= h;
  cr.q[0] += h;
  double numeric = (evaluate(s, cr).real() - evaluate(s, cl).real()) / (2 * h);
  CHECK(evaluate(ds, ctx).real() == Approx(numeric).epsilon(1e-7));
}

TEST_CASE("plateau is one on the core and zero outside") {
  Expr chi = plateau(var_r(), 2.0, 8.0, 1.0);
  auto at = [&](double r) {
    EvalContext ctx;
    ctx.q = {r, 0, 0};
    return evaluate(chi, ctx).real();
  };
  CHECK(at(3.0) == 1.0);
  CHECK(at(5.0) == 1.0);
  CHECK(at(7.0) == 1.0);
  CHECK(at(1.9) == 0.0);
  CHECK(at(8.1) == 0.0);
  CHECK(at(2.5) > 0.0);
  CHECK(at(2.5) < 1.0);
}

TEST_CASE("parse / print round trip") {
  auto sh = make_weight(WeightKind::sinh_hyperbolic, {}, 0.5, 30.0);
  std::vector<std::string> cases = {
      "(+ (^ rho 2) (* (^ lambda -2) (^ eta1 2)))",
      "(/ 1 (- z (^ rho 2)))",
      "(* (- 0 i) (coth r))",
      "(exp (* -1 (+ (^ rho 2) (^ eta1 2))))",
      "(sqrt (+ 1 (^ r 2)))",
      "(* (sstep (/ (- r 2) 1)) (sinh rho))",
      "(+ rprime (* hbar thetaprime1))",
      "(dloglambda2 (* 0.5 (+ r rprime)))",
  };
  std::mt19937_64 rng(7);
  Params params{{"z", cplx(0.3, 1.0)}, {"hbar", 0.5}};
  for (const auto& text : cases) {
    Expr e = parse_symbol(text, sh);
    Expr e2 = parse_symbol(to_text(e), sh);
    for (int k = 0; k < 5; ++k) {
      EvalContext ctx = random_context(rng);
      ctx.params = &params;
      cplx a = evaluate(e, ctx), b = evaluate(e2, ctx);
      double scale = std::max(std::abs(a), 1e-12);
      CHECK(std::abs(a - b) / scale < 1e-15);
    }
  }
  CHECK_THROWS_AS(parse_symbol("(bogus 1 2)"), std::invalid_argument);
  CHECK_THROWS_AS(parse_symbol("(^ rho 0.5)"), std::invalid_argument);
  CHECK_THROWS_AS(parse_symbol("lambda"), std::invalid_argument);  // no weight bound
}

TEST_CASE("tape evaluation agrees with tree evaluation") {
  auto sh = make_weight(WeightKind::sinh_hyperbolic, {}, 0.5, 30.0);
  std::mt19937_64 rng(99);
  Params params{{"z", cplx(0.2, 0.8)}};
  for (int trial = 0; trial < 20; ++trial) {
    Expr e = random_tree(rng, sh, 4);
    Tape tape(e, params);
    std::vector<cplx> buf;
    for (int k = 0; k < 5; ++k) {
      EvalContext ctx = random_context(rng);
      ctx.params = &params;
      cplx a = evaluate(e, ctx);
      cplx b = tape.eval(ctx, buf);
      CHECK(std::abs(a - b) <= 1e-13 * std::max(1.0, std::abs(a)));
    }
  }
}

TEST_CASE("tape two-phase momentum sweep") {
  auto sh = make_weight(WeightKind::sinh_hyperbolic, {}, 0.5, 30.0);
  Expr e = plateau(var_r(), 1.0, 9.0, 1.0) /
           (Expr::param("z") - intpow(var_rho(), 2) -
            intpow(lambda_of_r(sh), -2) * intpow(var_eta(0), 2));
  Params params{{"z", cplx(0, 1)}};
  Tape tape(e, params);
  std::vector<cplx> buf;
  EvalContext ctx;
  ctx.q = {3.0, 0.2, 0};
  tape.eval_base(ctx, buf);
  for (double rho : {0.0, 0.5, 2.0}) {
    for (double eta : {-1.0, 1.0}) {
      ctx.p = {rho, eta, 0};
      cplx fast = tape.eval_p(ctx, buf);
      cplx full = evaluate(e, [&] {
        EvalContext c = ctx;
        c.params = &params;
        return c;
      }());
      CHECK(std::abs(fast - full) < 1e-14);
    }
  }
}

TEST_CASE("coordinate usage analysis") {
  Expr a = var_rho() * var_r();
  auto u1 = coord_usage(a);
  CHECK(u1.any_q());
  CHECK(u1.any_p());
  CHECK_FALSE(u1.any_qprime());
  CHECK(u1.axis_coupled(0));
  CHECK_FALSE(u1.axis_coupled(1));

  Expr b = var_eta(0) * var_thetaprime(0);
  auto u2 = coord_usage(b);
  CHECK(u2.axis_coupled(1));
  CHECK_FALSE(u2.axis_coupled(0));
}
