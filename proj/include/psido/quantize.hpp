#pragma once

#include <functional>
#include <random>

#include "psido/grid.hpp"
#include "psido/symbols/seminorm.hpp"

namespace psido {

// Discretized quantization. The continuum double integral (2pi)^-n /int dp
// /int dq' a e^{ip(q-q')} u(q') becomes a finite sum over the dual lattice
// and the grid; with the trapezoid weights on a periodic box the combined
// normalization is exactly 1/N_total.
//
// Axes the symbol does not couple in position (neither q_d nor q'_d appears)
// are diagonal in frequency and are handled by FFTs; only the coupled axes
// pay the dense quadrature cost. These reductions are exact rearrangements
// of the same finite sum, not approximations.

namespace detail {

struct AxisSplit {
  std::vector<int> coupled, free_;
};

inline AxisSplit split_axes(const CoordUsage& use, int n) {
  AxisSplit s;
  for (int a = 0; a < n; ++a)
    (use.axis_coupled(a) ? s.coupled : s.free_).push_back(a);
  return s;
}

// Unit-root table for one axis: w[m] = e^{2 pi i m / N}.
inline std::vector<cplx> root_table(int n) {
  std::vector<cplx> w(n);
  for (int m = 0; m < n; ++m) w[m] = std::polar(1.0, 2.0 * pi * m / n);
  return w;
}

// Enumerate index tuples over a subset of axes.
struct SubIndexer {
  std::vector<int> axes;
  std::vector<int> dims;
  std::size_t count = 1;
  SubIndexer(const std::vector<int>& ax, const Grid& g) : axes(ax) {
    for (int a : axes) {
      dims.push_back(g.dims()[a]);
      count *= g.dims()[a];
    }
  }
  void decode(std::size_t f, std::array<int, max_dim>& idx) const {
    for (int i = static_cast<int>(axes.size()) - 1; i >= 0; --i) {
      idx[axes[i]] = static_cast<int>(f % dims[i]);
      f /= dims[i];
    }
  }
};

inline void scale_by_quarter(GridFunction& u, const DensityWeight& g, bool inverse) {
  if (g.trivial) return;
  const auto& fac = inverse ? g.inv_quarter : g.quarter;
  for (std::size_t f = 0; f < u.values.size(); ++f) u.values[f] *= fac[f];
}

}  // namespace detail

// Op with a bisymbol a(q, p, q'):
//   out(q) = g(q)^-1/4 (1/N) sum_p sum_q' a(q,p,q') e^{ip(q-q')} g(q')^1/4 u(q').
inline GridFunction apply_bisymbol_op(const Expr& a, const GridFunction& u,
                                      const DensityWeight& g, const Params& params = {},
                                      bool check_admissible = true) {
  const GridPtr& grid = u.grid;
  const int n = grid->n();
  if (grid->total() > (1u << 14))
    throw std::invalid_argument("apply_bisymbol_op: grid exceeds the dense-path size guard");
  if (check_admissible && !u.admissible())
    throw std::invalid_argument("apply_bisymbol_op: input not admissible (mass in pad region)");

  GridFunction v = u;
  detail::scale_by_quarter(v, g, false);

  const CoordUsage use = coord_usage(a);
  const auto& dims = grid->dims();
  const std::size_t total = grid->total();
  Tape tape(a, params);
  std::vector<cplx> buf;

  GridFunction out(grid);

  // Frequency values per axis slot.
  std::array<std::vector<double>, max_dim> freqs;
  for (int ax = 0; ax < n; ++ax) {
    freqs[ax].resize(dims[ax]);
    for (int k = 0; k < dims[ax]; ++k) freqs[ax][k] = grid->freq(ax, k);
  }

  if (!use.any_q() && !use.any_qprime()) {
    // Pure Fourier multiplier.
    fft_all(v.values, dims, false);
    for (std::size_t f = 0; f < total; ++f) {
      auto k = grid->unflatten(f);
      EvalContext ctx;
      ctx.n = n;
      for (int ax = 0; ax < n; ++ax) ctx.p[ax] = freqs[ax][k[ax]];
      v.values[f] *= tape.eval(ctx, buf);
    }
    fft_all(v.values, dims, true);
    const double scale = 1.0 / double(total);
    for (std::size_t f = 0; f < total; ++f) out.values[f] = v.values[f] * scale;
    detail::scale_by_quarter(out, g, true);
    return out;
  }

  auto roots = [&](int ax) { return detail::root_table(dims[ax]); };
  std::array<std::vector<cplx>, max_dim> w;
  for (int ax = 0; ax < n; ++ax) w[ax] = roots(ax);

  if (!use.any_qprime()) {
    // Kohn-Nirenberg shape: out(q) = (1/N) sum_k a(q,p_k) V(k) w^{qk}.
    const detail::AxisSplit split = detail::split_axes(use, n);
    detail::SubIndexer ci(split.coupled, *grid);
    fft_all(v.values, dims, false);
    std::vector<cplx> T(total, cplx{});
    std::array<int, max_dim> qidx{0, 0, 0};
    for (std::size_t qc = 0; qc < ci.count; ++qc) {
      ci.decode(qc, qidx);
      EvalContext ctx;
      ctx.n = n;
      for (int ax : split.coupled) ctx.q[ax] = grid->coord(ax, qidx[ax]);
      tape.eval_base(ctx, buf);
      for (std::size_t f = 0; f < total; ++f) {
        auto k = grid->unflatten(f);
        for (int ax = 0; ax < n; ++ax) ctx.p[ax] = freqs[ax][k[ax]];
        cplx av = tape.eval_p(ctx, buf);
        cplx phase(1.0, 0.0);
        std::size_t tslot = 0;
        for (int ax = 0; ax < n; ++ax) {
          bool coupled = std::find(split.coupled.begin(), split.coupled.end(), ax) !=
                         split.coupled.end();
          tslot = tslot * dims[ax] + (coupled ? qidx[ax] : k[ax]);
          if (coupled)
            phase *= w[ax][std::size_t(k[ax]) * qidx[ax] % dims[ax]];
        }
        T[tslot] += av * v.values[f] * phase;
      }
    }
    for (int ax : split.free_) fft_axis(T, dims, ax, true);
    const double scale = 1.0 / double(total);
    for (std::size_t f = 0; f < total; ++f) out.values[f] = T[f] * scale;
    detail::scale_by_quarter(out, g, true);
    return out;
  }

  if (!use.any_q()) {
    // Mirror shape: W(k) = sum_{q'_C} a(p_k, q'_C) w^{-k q'_C} V~(q'_C, k_F).
    const detail::AxisSplit split = detail::split_axes(use, n);
    detail::SubIndexer ci(split.coupled, *grid);
    for (int ax : split.free_) fft_axis(v.values, dims, ax, false);
    std::vector<cplx> W(total, cplx{});
    std::array<int, max_dim> qpidx{0, 0, 0};
    for (std::size_t qc = 0; qc < ci.count; ++qc) {
      ci.decode(qc, qpidx);
      EvalContext ctx;
      ctx.n = n;
      for (int ax : split.coupled) ctx.qp[ax] = grid->coord(ax, qpidx[ax]);
      tape.eval_base(ctx, buf);
      for (std::size_t f = 0; f < total; ++f) {
        auto k = grid->unflatten(f);
        for (int ax = 0; ax < n; ++ax) ctx.p[ax] = freqs[ax][k[ax]];
        cplx av = tape.eval_p(ctx, buf);
        cplx phase(1.0, 0.0);
        std::size_t vslot = 0;
        for (int ax = 0; ax < n; ++ax) {
          bool coupled = std::find(split.coupled.begin(), split.coupled.end(), ax) !=
                         split.coupled.end();
          vslot = vslot * dims[ax] + (coupled ? qpidx[ax] : k[ax]);
          if (coupled) {
            std::size_t m = std::size_t(k[ax]) * qpidx[ax] % dims[ax];
            phase *= std::conj(w[ax][m]);
          }
        }
        W[f] += av * v.values[vslot] * phase;
      }
    }
    fft_all(W, dims, true);
    const double scale = 1.0 / double(total);
    for (std::size_t f = 0; f < total; ++f) out.values[f] = W[f] * scale;
    detail::scale_by_quarter(out, g, true);
    return out;
  }

  // General coupled path.
  {
    const detail::AxisSplit split = detail::split_axes(use, n);
    detail::SubIndexer ci(split.coupled, *grid);
    for (int ax : split.free_) fft_axis(v.values, dims, ax, false);
    std::vector<cplx> T(total, cplx{});  // indexed (q_C, k_F)

    // Free-axis slot enumeration: iterate full lattice once, with coupled
    // positions substituted per outer loop.
    detail::SubIndexer fi(split.free_, *grid);
    std::array<int, max_dim> qidx{0, 0, 0}, qpidx{0, 0, 0}, slot{0, 0, 0};

    std::size_t ncoupled_freq = 1;
    for (int ax : split.coupled) ncoupled_freq *= dims[ax];
    detail::SubIndexer cfi(split.coupled, *grid);

    for (std::size_t qc = 0; qc < ci.count; ++qc) {
      ci.decode(qc, qidx);
      EvalContext ctx;
      ctx.n = n;
      for (int ax : split.coupled) ctx.q[ax] = grid->coord(ax, qidx[ax]);
      for (std::size_t qpc = 0; qpc < ci.count; ++qpc) {
        ci.decode(qpc, qpidx);
        for (int ax : split.coupled) ctx.qp[ax] = grid->coord(ax, qpidx[ax]);
        tape.eval_base(ctx, buf);
        for (std::size_t kf = 0; kf < fi.count; ++kf) {
          fi.decode(kf, slot);
          for (int ax : split.free_) ctx.p[ax] = freqs[ax][slot[ax]];
          // T slot for (q_C, k_F) and V slot for (q'_C, k_F)
          std::size_t tslot = 0, vslot = 0;
          for (int ax = 0; ax < n; ++ax) {
            bool coupled = std::find(split.coupled.begin(), split.coupled.end(), ax) !=
                           split.coupled.end();
            tslot = tslot * dims[ax] + (coupled ? qidx[ax] : slot[ax]);
            vslot = vslot * dims[ax] + (coupled ? qpidx[ax] : slot[ax]);
          }
          cplx vin = v.values[vslot];
          if (vin == cplx{} && ncoupled_freq > 4) continue;
          cplx acc{};
          for (std::size_t kc = 0; kc < cfi.count; ++kc) {
            cfi.decode(kc, slot);
            cplx phase(1.0, 0.0);
            for (int ax : split.coupled) {
              ctx.p[ax] = freqs[ax][slot[ax]];
              int delta = qidx[ax] - qpidx[ax];
              int m = static_cast<int>((std::int64_t(slot[ax]) * delta) % dims[ax]);
              if (m < 0) m += dims[ax];
              phase *= w[ax][m];
            }
            acc += tape.eval_p(ctx, buf) * phase;
          }
          T[tslot] += acc * vin;
        }
      }
    }
    for (int ax : split.free_) fft_axis(T, dims, ax, true);
    const double scale = 1.0 / double(total);
    for (std::size_t f = 0; f < total; ++f) out.values[f] = T[f] * scale;
    detail::scale_by_quarter(out, g, true);
    return out;
  }
}

// Op^{g,t}(a) for a symbol a(q, p). t = 1 is the fast path; t < 1 freezes the
// symbol into a bisymbol along the t-line and runs the dense quadrature.
inline GridFunction apply_op(const Expr& a, const GridFunction& u, double t,
                             const DensityWeight& g, const Params& params = {},
                             bool check_admissible = true) {
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("apply_op: t must be in [0,1]");
  if (coord_usage(a).any_qprime())
    throw std::invalid_argument("apply_op: symbol must not reference q'");
  if (t == 1.0) return apply_bisymbol_op(a, u, g, params, check_admissible);
  return apply_bisymbol_op(freeze_bisymbol(a, t), u, g, params, check_admissible);
}

// Op^{g,t}_hbar(a) = Op^{g,t}(a(q, hbar p)).
inline GridFunction apply_semiclassical(const Expr& a, const GridFunction& u, double hbar,
                                        double t, const DensityWeight& g,
                                        const Params& params = {},
                                        bool check_admissible = true) {
  if (!(hbar > 0.0 && hbar <= 1.0))
    throw std::invalid_argument("apply_semiclassical: hbar must be in (0, 1]");
  return apply_op(rescale_momentum(a, hbar), u, t, g, params, check_admissible);
}

// ---------------------------------------------------------------------------
// Operator norm estimation (power iteration on A*A in the g-weighted inner
// product). Deterministic for a fixed seed and iteration budget.

struct LinearOperator {
  std::function<GridFunction(const GridFunction&)> apply;
  std::function<GridFunction(const GridFunction&)> apply_adjoint;
};

inline LinearOperator op_from_bisymbol(const Expr& a, const DensityWeight& g,
                                       const Params& params = {}) {
  Expr adag = adjoint_bisymbol(a);
  Params conj_params = params;
  // Provide conjugate bindings for swapped parameters when present.
  for (const auto& [k, v] : params) {
    if (k == "z") conj_params["zbar"] = std::conj(v);
    if (k == "zbar") conj_params["z"] = std::conj(v);
  }
  return LinearOperator{
      [a, g, params](const GridFunction& u) {
        return apply_bisymbol_op(a, u, g, params, false);
      },
      [adag, g, conj_params](const GridFunction& u) {
        return apply_bisymbol_op(adag, u, g, conj_params, false);
      }};
}

// Pointwise multiplication by samples of f; self-adjoint up to conjugation in
// any g-weighted product.
inline LinearOperator op_multiplication(const GridFunction& f) {
  GridFunction fc = f;
  for (cplx& v : fc.values) v = std::conj(v);
  return LinearOperator{
      [f](const GridFunction& u) {
        GridFunction out = u;
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= f.values[i];
        return out;
      },
      [fc](const GridFunction& u) {
        GridFunction out = u;
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= fc.values[i];
        return out;
      }};
}

inline LinearOperator op_compose(const LinearOperator& A, const LinearOperator& B) {
  return LinearOperator{[A, B](const GridFunction& u) { return A.apply(B.apply(u)); },
                        [A, B](const GridFunction& u) {
                          return B.apply_adjoint(A.apply_adjoint(u));
                        }};
}

inline LinearOperator op_sum(const LinearOperator& A, const LinearOperator& B, cplx ca = 1.0,
                             cplx cb = 1.0) {
  return LinearOperator{
      [A, B, ca, cb](const GridFunction& u) {
        GridFunction x = A.apply(u), y = B.apply(u);
        for (std::size_t i = 0; i < x.values.size(); ++i)
          x.values[i] = ca * x.values[i] + cb * y.values[i];
        return x;
      },
      [A, B, ca, cb](const GridFunction& u) {
        GridFunction x = A.apply_adjoint(u), y = B.apply_adjoint(u);
        for (std::size_t i = 0; i < x.values.size(); ++i)
          x.values[i] = std::conj(ca) * x.values[i] + std::conj(cb) * y.values[i];
        return x;
      }};
}

struct NormEstimate {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  double rel_change = 0.0;
};

inline GridFunction random_start_vector(const GridPtr& grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  GridFunction v(grid);
  for (cplx& x : v.values) x = cplx(normal(rng), normal(rng));
  return v;
}

inline NormEstimate operator_norm_estimate(const LinearOperator& A, const GridPtr& grid,
                                           const DensityWeight& g, int iterations = 50,
                                           std::uint64_t seed = 1234,
                                           double rel_tol = 1e-6) {
  if (iterations < 1) throw std::invalid_argument("operator_norm_estimate: iterations >= 1");
  GridFunction v = random_start_vector(grid, seed);
  double nv = norm_l2(v, g);
  for (cplx& x : v.values) x /= nv;

  NormEstimate est;
  double sigma2 = 0.0;
  for (int it = 0; it < iterations; ++it) {
    GridFunction w = A.apply(v);
    GridFunction s = A.apply_adjoint(w);
    double new_sigma2 = std::abs(inner_product(s, v, g));
    double ns = norm_l2(s, g);
    est.iterations = it + 1;
    if (ns < 1e-300) {
      est.value = 0.0;
      est.converged = true;
      est.rel_change = 0.0;
      return est;
    }
    est.rel_change = std::abs(new_sigma2 - sigma2) / std::max(new_sigma2, 1e-300);
    sigma2 = new_sigma2;
    if (it > 0 && est.rel_change < rel_tol) {
      est.converged = true;
      for (cplx& x : s.values) x /= ns;
      v = std::move(s);
      break;
    }
    for (cplx& x : s.values) x /= ns;
    v = std::move(s);
  }
  est.value = std::sqrt(sigma2);
  est.converged = est.converged || est.rel_change < rel_tol;
  return est;
}

// Dense cross-check for small grids: assembles the matrix column by column
// and runs the same power iteration with the conjugate-transpose adjoint.
inline NormEstimate operator_norm_via_matrix(
    const std::function<GridFunction(const GridFunction&)>& apply, const GridPtr& grid,
    const DensityWeight& g, int iterations = 80, std::uint64_t seed = 1234) {
  const std::size_t N = grid->total();
  if (N > 4096) throw std::invalid_argument("operator_norm_via_matrix: grid too large");
  std::vector<std::vector<cplx>> M(N);
  GridFunction e(grid);
  for (std::size_t j = 0; j < N; ++j) {
    std::fill(e.values.begin(), e.values.end(), cplx{});
    e.values[j] = 1.0;
    M[j] = apply(e).values;  // column j
  }
  // weights of the inner product
  std::vector<double> wgt(N);
  for (std::size_t i = 0; i < N; ++i) wgt[i] = g.half_power(i);
  LinearOperator op{
      [&M, N, grid](const GridFunction& u) {
        GridFunction out(grid);
        for (std::size_t j = 0; j < N; ++j) {
          cplx uj = u.values[j];
          if (uj == cplx{}) continue;
          const auto& col = M[j];
          for (std::size_t i = 0; i < N; ++i) out.values[i] += col[i] * uj;
        }
        return out;
      },
      [&M, &wgt, N, grid](const GridFunction& u) {
        // adjoint w.r.t. weighted product: A* = W^-1 A^H W
        GridFunction out(grid);
        for (std::size_t j = 0; j < N; ++j) {
          const auto& col = M[j];
          cplx acc{};
          for (std::size_t i = 0; i < N; ++i)
            acc += std::conj(col[i]) * wgt[i] * u.values[i];
          out.values[j] = acc / wgt[j];
        }
        return out;
      }};
  return operator_norm_estimate(op, grid, g, iterations, seed);
}

}  // namespace psido
