#include <catch2/catch_amalgamated.hpp>

#include "psido/weights.hpp"

using namespace psido;
using Catch::Approx;

namespace {
// Centered finite difference of f at r.
double fd(const std::function<double(double)>& f, double r, double h = 1e-4) {
  return (f(r + h) - f(r - h)) / (2.0 * h);
}
}  // namespace

TEST_CASE("builtin weights evaluate as expected") {
  auto one = make_weight(WeightKind::constant, {1.0}, -10.0, 10.0);
  auto lin = make_weight(WeightKind::linear_conical, {}, 1.0, 20.0);
  auto sh = make_weight(WeightKind::sinh_hyperbolic, {}, 1.0, 20.0);
  auto ex = make_weight(WeightKind::exp, {}, -5.0, 5.0);

  CHECK(one->eval(3.0) == 1.0);
  CHECK(lin->eval(3.0) == 3.0);
  CHECK(sh->eval(2.0) == Approx(std::sinh(2.0)));
  CHECK(ex->eval(1.5) == Approx(std::exp(1.5)));

  // log-derivative identities
  CHECK(one->log_deriv(1, 0.0) == 0.0);
  CHECK(lin->log_deriv(1, 4.0) == Approx(0.25));
  CHECK(sh->log_deriv(1, 2.0) == Approx(1.0 / std::tanh(2.0)));
  CHECK(ex->log_deriv(1, 2.0) == Approx(1.0));
  CHECK(ex->log_deriv(2, 2.0) == 0.0);
}

TEST_CASE("log_deriv agrees with finite differences of log(eval)") {
  auto weights = std::vector<WeightPtr>{
      make_weight(WeightKind::linear_conical, {}, 1.0, 20.0),
      make_weight(WeightKind::sinh_hyperbolic, {}, 1.0, 20.0),
      make_weight(WeightKind::exp, {0.7}, -5.0, 5.0),
  };
  for (const auto& w : weights) {
    for (double r : linspace(w->r_min() + 0.5, w->r_max() - 0.5, 7)) {
      double num = fd([&](double x) { return std::log(w->eval(x)); }, r);
      CHECK(w->log_deriv(1, r) == Approx(num).epsilon(1e-6));
    }
  }
}

TEST_CASE("higher log-derivatives chain consistently") {
  // log_deriv(j) should match finite differences of log_deriv(j-1).
  auto weights = std::vector<WeightPtr>{
      make_weight(WeightKind::linear_conical, {}, 1.0, 20.0),
      make_weight(WeightKind::sinh_hyperbolic, {}, 1.0, 20.0),
      make_weight(WeightKind::exp, {}, -5.0, 5.0),
      make_weight(WeightKind::constant, {2.5}, -5.0, 5.0),
  };
  for (const auto& w : weights) {
    for (int j = 1; j <= 4; ++j) {
      for (double r : linspace(w->r_min() + 1.0, w->r_max() - 1.0, 5)) {
        double num = fd([&](double x) { return w->log_deriv(j - 1, x); }, r, 1e-5);
        double exact = w->log_deriv(j, r);
        // below ~1e-6 the centered difference is cancellation noise
        if (std::abs(exact) < 1e-6) {
          CHECK(std::abs(num - exact) < 1e-8);
        } else {
          CHECK(exact == Approx(num).epsilon(1e-5));
        }
      }
    }
  }
}

TEST_CASE("make_weight rejects bad input") {
  CHECK_THROWS_AS(make_weight("no_such_kind", {}, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_weight(WeightKind::constant, {-1.0}, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_weight(WeightKind::sinh_hyperbolic, {}, -1.0, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_weight(WeightKind::constant, {1.0}, 2.0, 1.0), std::invalid_argument);
}

TEST_CASE("slow variation constants") {
  SECTION("identity weight gives C = 1") {
    auto one = make_weight(WeightKind::constant, {1.0}, -10.0, 10.0);
    auto cert = check_slow_variation(*one, linspace(-9.0, 9.0, 40));
    CHECK(cert.slow_variation_C == 1.0);
    CHECK(cert.slow_variation_pass);
  }

  SECTION("exp weight estimate converges to e from below") {
    auto ex = make_weight(WeightKind::exp, {}, -5.0, 5.0);
    double prev = 0.0;
    for (int count : {11, 41, 161}) {
      auto cert = check_slow_variation(*ex, linspace(-4.0, 4.0, count));
      CHECK(cert.slow_variation_C <= std::exp(1.0) + 1e-12);
      CHECK(cert.slow_variation_C >= prev - 1e-12);  // refining never decreases
      prev = cert.slow_variation_C;
    }
    CHECK(prev == Approx(std::exp(1.0)).epsilon(1e-2));
  }

  SECTION("e^{r^2} fails a threshold of 100") {
    auto w = make_custom_weight([](double r) { return std::exp(r * r); },
                                [](int j, double r) {
                                  if (j == 1) return 2.0 * r;
                                  if (j == 2) return 2.0;
                                  return 0.0;
                                },
                                8, 1.0, 10.0, "exp_r_squared");
    auto cert = check_slow_variation(*w, linspace(1.0, 10.0, 60), 100.0);
    CHECK_FALSE(cert.slow_variation_pass);
    CHECK(cert.slow_variation_C > 100.0);
  }

  SECTION("finite C for the builtin family") {
    // worst unit-distance ratio on [1, 30]: 1 for constant, 2 for r,
    // sinh(2)/sinh(1) ~ 3.086 for sinh, e for exp
    double expected[] = {1.0, 2.0, std::sinh(2.0) / std::sinh(1.0), std::exp(1.0)};
    int i = 0;
    for (auto& w : {make_weight(WeightKind::constant, {1.0}, 1.0, 30.0),
                    make_weight(WeightKind::linear_conical, {}, 1.0, 30.0),
                    make_weight(WeightKind::sinh_hyperbolic, {}, 1.0, 30.0),
                    make_weight(WeightKind::exp, {}, 1.0, 30.0)}) {
      auto cert = check_slow_variation(*w, linspace(1.0, 30.0, 120));
      CHECK(std::isfinite(cert.slow_variation_C));
      CHECK(cert.slow_variation_C <= expected[i] + 1e-12);
      CHECK(cert.slow_variation_C >= 0.9 * expected[i]);
      ++i;
    }
  }

  SECTION("empty lattice is an error") {
    auto one = make_weight(WeightKind::constant, {1.0}, -1.0, 1.0);
    CHECK_THROWS_AS(check_slow_variation(*one, {}), std::invalid_argument);
  }
}

TEST_CASE("log-derivative bound reports") {
  SECTION("sinh weight, jmax = 3") {
    auto sh = make_weight(WeightKind::sinh_hyperbolic, {}, 1.0, 20.0);
    auto cert = check_log_derivative_bounds(*sh, 3, linspace(1.0, 20.0, 100));
    REQUIRE(cert.log_deriv_bounds.size() == 3);
    // j = 1: sup of coth r on [1, 20] is coth(1)
    CHECK(cert.log_deriv_bounds[0].second == Approx(1.0 / std::tanh(1.0)).epsilon(1e-12));
    // j = 2: sup of |1 - coth^2 r| = csch^2(1)
    double csch1 = 1.0 / std::sinh(1.0);
    CHECK(cert.log_deriv_bounds[1].second == Approx(csch1 * csch1).epsilon(1e-12));
    CHECK(cert.log_deriv_pass);
  }

  SECTION("constant weight: all bounds zero") {
    auto one = make_weight(WeightKind::constant, {3.0}, -5.0, 5.0);
    auto cert = check_log_derivative_bounds(*one, 4, linspace(-5.0, 5.0, 20));
    for (auto& [j, b] : cert.log_deriv_bounds) CHECK(b == 0.0);
  }

  SECTION("exp weight: j = 1 gives the rate, higher orders vanish") {
    auto ex = make_weight(WeightKind::exp, {}, -5.0, 5.0);
    auto cert = check_log_derivative_bounds(*ex, 4, linspace(-5.0, 5.0, 20));
    CHECK(cert.log_deriv_bounds[0].second == Approx(1.0));
    for (std::size_t i = 1; i < cert.log_deriv_bounds.size(); ++i)
      CHECK(cert.log_deriv_bounds[i].second == 0.0);
  }

  SECTION("custom weight beyond registered order throws") {
    auto w = make_custom_weight([](double r) { return std::exp(r); },
                                [](int j, double) { return j == 1 ? 1.0 : 0.0; }, 2, 0.0, 1.0);
    CHECK_THROWS_AS(check_log_derivative_bounds(*w, 5, linspace(0.1, 0.9, 5)),
                    std::domain_error);
  }
}
