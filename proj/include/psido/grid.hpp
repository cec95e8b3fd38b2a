#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "psido/fft.hpp"
#include "psido/symbols/expr.hpp"

namespace psido {

// Tensor grid in polar coordinates. The r axis covers [r_min, r_max] and is
// treated periodically; admissible data must vanish inside the pad region so
// the seam never sees mass. Angular axes are periodic with extent 2*pi by
// default; scaled-block grids use other extents (the frequency lattice scales
// with the extent, which is what makes the dilation operators exact on the
// grid).
class Grid {
 public:
  static std::shared_ptr<const Grid> make(int n, std::vector<int> dims, double r_min,
                                          double r_max, double pad = 0.25,
                                          std::vector<double> theta_extent = {}) {
    auto g = std::make_shared<Grid>();
    if (n < 2 || n > 3) throw std::invalid_argument("grid: dimension must be 2 or 3");
    if (static_cast<int>(dims.size()) != n) throw std::invalid_argument("grid: dims size");
    for (int d : dims)
      if (!std::has_single_bit(static_cast<unsigned>(d)))
        throw std::invalid_argument("grid: point counts must be powers of two");
    if (!(pad > 0.0 && pad < 0.5)) throw std::invalid_argument("grid: pad in (0, 1/2)");
    if (pad * dims[0] < 8.0)
      throw std::invalid_argument("grid: need at least 8 pad samples per r side");
    if (!(r_min < r_max)) throw std::invalid_argument("grid: empty r range");
    g->n_ = n;
    g->dims_ = std::move(dims);
    g->r_min_ = r_min;
    g->r_max_ = r_max;
    g->pad_ = pad;
    g->theta_extent_.assign(n - 1, 2.0 * pi);
    if (!theta_extent.empty()) {
      if (static_cast<int>(theta_extent.size()) != n - 1)
        throw std::invalid_argument("grid: theta extent size");
      g->theta_extent_ = std::move(theta_extent);
    }
    return g;
  }

  int n() const { return n_; }
  const std::vector<int>& dims() const { return dims_; }
  double r_min() const { return r_min_; }
  double r_max() const { return r_max_; }
  double pad() const { return pad_; }

  double extent(int axis) const {
    return axis == 0 ? r_max_ - r_min_ : theta_extent_[axis - 1];
  }
  double spacing(int axis) const { return extent(axis) / dims_[axis]; }
  double coord(int axis, int i) const {
    return (axis == 0 ? r_min_ : 0.0) + spacing(axis) * i;
  }
  // Physical frequency of transform slot k along an axis.
  double freq(int axis, int k) const {
    return 2.0 * pi * signed_freq(k, dims_[axis]) / extent(axis);
  }

  std::size_t total() const {
    std::size_t t = 1;
    for (int d : dims_) t *= d;
    return t;
  }
  double cell_volume() const {
    double v = 1.0;
    for (int a = 0; a < n_; ++a) v *= spacing(a);
    return v;
  }

  // Core window of the r axis (outside it admissible data must vanish).
  double core_r_lo() const { return r_min_ + pad_ * (r_max_ - r_min_); }
  double core_r_hi() const { return r_max_ - pad_ * (r_max_ - r_min_); }

  std::size_t flat_index(const std::array<int, max_dim>& idx) const {
    std::size_t f = idx[0];
    for (int a = 1; a < n_; ++a) f = f * dims_[a] + idx[a];
    return f;
  }
  std::array<int, max_dim> unflatten(std::size_t f) const {
    std::array<int, max_dim> idx{0, 0, 0};
    for (int a = n_ - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(f % dims_[a]);
      f /= dims_[a];
    }
    return idx;
  }

  bool same_layout(const Grid& o) const {
    return n_ == o.n_ && dims_ == o.dims_;
  }

 private:
  int n_ = 2;
  std::vector<int> dims_;
  double r_min_ = 0.0, r_max_ = 1.0, pad_ = 0.25;
  std::vector<double> theta_extent_;
};

using GridPtr = std::shared_ptr<const Grid>;

struct GridFunction {
  GridPtr grid;
  std::vector<cplx> values;

  GridFunction() = default;
  explicit GridFunction(GridPtr g) : grid(std::move(g)), values(grid->total(), cplx{}) {}

  double sup_abs() const {
    double s = 0.0;
    for (const cplx& v : values) s = std::max(s, std::abs(v));
    return s;
  }

  // Admissible means no visible mass in the pad region of the r axis.
  bool admissible(double tol = 1e-12) const {
    double s = sup_abs();
    if (s == 0.0) return true;
    double lo = grid->core_r_lo(), hi = grid->core_r_hi();
    const int nr = grid->dims()[0];
    const std::size_t row = grid->total() / nr;
    for (int i = 0; i < nr; ++i) {
      double r = grid->coord(0, i);
      if (r >= lo && r <= hi) continue;
      for (std::size_t j = 0; j < row; ++j)
        if (std::abs(values[i * row + j]) > tol * s) return false;
    }
    return true;
  }
};

// Positive density g(q) with precomputed g^{+-1/4} samples.
struct DensityWeight {
  Expr g_expr;
  GridPtr grid;
  std::vector<double> quarter, inv_quarter;  // g^{1/4}, g^{-1/4}
  double min_g = 1.0;
  bool trivial = false;  // g == 1

  static DensityWeight unit(GridPtr grid) {
    DensityWeight w;
    w.g_expr = Expr::constant(1.0);
    w.grid = std::move(grid);
    w.trivial = true;
    return w;
  }

  static DensityWeight make(Expr g, GridPtr grid, const Params& params = {}) {
    if (coord_usage(g).any_p() || coord_usage(g).any_qprime())
      throw std::invalid_argument("density: g must depend on q only");
    DensityWeight w;
    w.g_expr = g;
    w.grid = grid;
    if (g.is_const(1.0)) {
      w.trivial = true;
      return w;
    }
    Tape tape(g, params);
    std::vector<cplx> buf;
    const std::size_t total = grid->total();
    w.quarter.resize(total);
    w.inv_quarter.resize(total);
    w.min_g = 1e300;
    for (std::size_t f = 0; f < total; ++f) {
      auto idx = grid->unflatten(f);
      EvalContext ctx;
      ctx.n = grid->n();
      for (int a = 0; a < grid->n(); ++a) ctx.q[a] = grid->coord(a, idx[a]);
      double gv = tape.eval(ctx, buf).real();
      if (!(gv > 0.0)) throw std::invalid_argument("density: g must be positive on the grid");
      w.min_g = std::min(w.min_g, gv);
      w.quarter[f] = std::pow(gv, 0.25);
      w.inv_quarter[f] = 1.0 / w.quarter[f];
    }
    return w;
  }

  double half_power(std::size_t f) const {  // g^{1/2}
    return trivial ? 1.0 : quarter[f] * quarter[f];
  }
};

// Weighted L^2 inner product <u, v> = sum w_cell g^(1/2) u conj(v).
inline cplx inner_product(const GridFunction& u, const GridFunction& v,
                          const DensityWeight& g) {
  if (!u.grid->same_layout(*v.grid))
    throw std::invalid_argument("inner_product: grid mismatch");
  cplx acc{};
  for (std::size_t f = 0; f < u.values.size(); ++f)
    acc += u.values[f] * std::conj(v.values[f]) * g.half_power(f);
  return acc * u.grid->cell_volume();
}

inline double norm_l2(const GridFunction& u, const DensityWeight& g) {
  double acc = 0.0;
  for (std::size_t f = 0; f < u.values.size(); ++f)
    acc += std::norm(u.values[f]) * g.half_power(f);
  return std::sqrt(acc * u.grid->cell_volume());
}

inline double norm_l2(const GridFunction& u) {
  double acc = 0.0;
  for (const cplx& v : u.values) acc += std::norm(v);
  return std::sqrt(acc * u.grid->cell_volume());
}

// ---------------------------------------------------------------------------
// Band limiting: raised-cosine rolloff per axis, flat below 1/3 Nyquist and
// zero at and beyond 2/3 Nyquist. Keeps the highest modes out of quadratures.
inline void bandlimit_filter(GridFunction& u) {
  const auto& dims = u.grid->dims();
  fft_all(u.values, dims, false);
  const std::size_t total = u.values.size();
  for (std::size_t f = 0; f < total; ++f) {
    auto idx = u.grid->unflatten(f);
    double factor = 1.0;
    for (int a = 0; a < u.grid->n(); ++a) {
      double x = std::abs(double(signed_freq(idx[a], dims[a]))) / (dims[a] / 2.0);
      if (x <= 1.0 / 3.0) continue;
      if (x >= 2.0 / 3.0) {
        factor = 0.0;
        break;
      }
      double s = std::cos(0.5 * pi * (x - 1.0 / 3.0) * 3.0);
      factor *= s * s;
    }
    u.values[f] *= factor;
  }
  fft_all(u.values, dims, true);
  const double scale = 1.0 / double(total);
  for (cplx& v : u.values) v *= scale;
}

// Sample a closed-form function of q on the grid.
inline GridFunction sample(const GridPtr& grid, const Expr& f, const Params& params = {}) {
  GridFunction u(grid);
  Tape tape(f, params);
  std::vector<cplx> buf;
  for (std::size_t fl = 0; fl < u.values.size(); ++fl) {
    auto idx = grid->unflatten(fl);
    EvalContext ctx;
    ctx.n = grid->n();
    for (int a = 0; a < grid->n(); ++a) ctx.q[a] = grid->coord(a, idx[a]);
    u.values[fl] = tape.eval(ctx, buf);
  }
  return u;
}

// Band-limited bump supported in [r_lo, r_hi] with an oscillatory angular
// factor; the workhorse test input.
inline GridFunction make_test_bump(const GridPtr& grid, double r_lo, double r_hi,
                                   std::array<int, 2> angular_mode = {1, 0},
                                   double radial_osc = 0.0) {
  double w = 0.25 * (r_hi - r_lo);
  Expr prof = plateau(var_r(), r_lo, r_hi, w);
  if (radial_osc != 0.0) prof = prof * cos_(Expr::constant(radial_osc) * var_r());
  GridFunction u = sample(grid, prof);
  for (std::size_t f = 0; f < u.values.size(); ++f) {
    auto idx = grid->unflatten(f);
    double phase = 0.0;
    for (int a = 1; a < grid->n(); ++a)
      phase += angular_mode[a - 1] * 2.0 * pi * idx[a] / grid->dims()[a];
    u.values[f] *= std::polar(1.0, phase);
  }
  bandlimit_filter(u);
  return u;
}

// Deterministic pseudo-random admissible input.
inline GridFunction make_random_bump(const GridPtr& grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double lo = grid->core_r_lo(), hi = grid->core_r_hi();
  double margin = 0.05 * (hi - lo);
  lo += margin;
  hi -= margin;
  double a = lo + unif(rng) * 0.4 * (hi - lo);
  double b = hi - unif(rng) * 0.4 * (hi - lo);
  int mode = static_cast<int>(unif(rng) * 3) - 1;
  double osc = 2.0 * unif(rng);
  GridFunction u = make_test_bump(grid, a, b, {mode, 0}, osc);
  GridFunction v = make_test_bump(grid, a + 0.2 * (b - a), b, {-mode, 1}, 0.5 * osc);
  for (std::size_t f = 0; f < u.values.size(); ++f)
    u.values[f] += cplx(0.0, 0.7) * v.values[f];
  return u;
}

// ---------------------------------------------------------------------------
// Flat binary format: magic "PSIGRID1", then little-endian int64 n, N_r,
// N_theta..., float64 r_min, r_max, then row-major complex128 samples.

inline void save_gridfunction(const GridFunction& u, const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "file format is little-endian");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("PSIGRID1", 8);
  auto put_i64 = [&](std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
  auto put_f64 = [&](double v) { os.write(reinterpret_cast<const char*>(&v), 8); };
  put_i64(u.grid->n());
  for (int d : u.grid->dims()) put_i64(d);
  put_f64(u.grid->r_min());
  put_f64(u.grid->r_max());
  os.write(reinterpret_cast<const char*>(u.values.data()),
           static_cast<std::streamsize>(u.values.size() * sizeof(cplx)));
}

inline GridFunction load_gridfunction(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (std::memcmp(magic, "PSIGRID1", 8) != 0)
    throw std::runtime_error("bad magic in " + path);
  auto get_i64 = [&] {
    std::int64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  auto get_f64 = [&] {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  int n = static_cast<int>(get_i64());
  std::vector<int> dims(n);
  for (int& d : dims) d = static_cast<int>(get_i64());
  double r0 = get_f64(), r1 = get_f64();
  GridFunction u(Grid::make(n, dims, r0, r1));
  is.read(reinterpret_cast<char*>(u.values.data()),
          static_cast<std::streamsize>(u.values.size() * sizeof(cplx)));
  if (!is) throw std::runtime_error("truncated grid file: " + path);
  return u;
}

inline void export_csv(const GridFunction& u, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "r";
  for (int a = 1; a < u.grid->n(); ++a) os << ",theta" << a;
  os << ",re,im\n";
  char buf[128];
  for (std::size_t f = 0; f < u.values.size(); ++f) {
    auto idx = u.grid->unflatten(f);
    for (int a = 0; a < u.grid->n(); ++a) {
      std::snprintf(buf, sizeof(buf), "%.17g", u.grid->coord(a, idx[a]));
      os << (a ? "," : "") << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", u.values[f].real(), u.values[f].imag());
    os << buf << "\n";
  }
}

}  // namespace psido
