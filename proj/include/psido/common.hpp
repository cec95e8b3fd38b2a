#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace psido {

using cplx = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;

// Coordinates are always split radial/angular: q = (r, theta), p = (rho, eta).
// Dimension n is 2 or 3, so there are at most two angular axes.
inline constexpr int max_dim = 3;

// Multiindex over one coordinate group, split as (radial order, angular orders).
struct MIdx {
  int rad = 0;
  std::array<int, max_dim - 1> ang{0, 0};

  int order() const { return rad + ang[0] + ang[1]; }
  int ang_order() const { return ang[0] + ang[1]; }
  bool operator==(const MIdx&) const = default;
};

// All multiindices of the given dimension with order() <= max_order,
// in a fixed lexicographic order (deterministic reductions rely on this).
inline std::vector<MIdx> multiindices_up_to(int n, int max_order) {
  std::vector<MIdx> out;
  const int na = n - 1;
  for (int total = 0; total <= max_order; ++total)
    for (int rad = total; rad >= 0; --rad) {
      int rem = total - rad;
      if (na == 0) {
        if (rem == 0) out.push_back({rad, {0, 0}});
      } else if (na == 1) {
        out.push_back({rad, {rem, 0}});
      } else {
        for (int a1 = rem; a1 >= 0; --a1) out.push_back({rad, {a1, rem - a1}});
      }
    }
  return out;
}

inline std::int64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::int64_t b = 1;
  for (int i = 0; i < k; ++i) b = b * (n - i) / (i + 1);
  return b;
}

// Product of per-component binomials C(G, B); zero unless B <= G componentwise.
inline std::int64_t multi_binomial(const MIdx& g, const MIdx& b) {
  if (b.rad > g.rad || b.ang[0] > g.ang[0] || b.ang[1] > g.ang[1]) return 0;
  return binomial(g.rad, b.rad) * binomial(g.ang[0], b.ang[0]) * binomial(g.ang[1], b.ang[1]);
}

// <rho (+) w> = (1 + rho^2 + |w|^2)^(1/2), the weighted momentum bracket.
inline double jbracket(double rho, const std::array<double, 2>& w, int n) {
  double s = 1.0 + rho * rho;
  for (int d = 0; d < n - 1; ++d) s += w[d] * w[d];
  return std::sqrt(s);
}

inline std::vector<double> linspace(double a, double b, int count, bool include_end = true) {
  std::vector<double> v(count);
  if (count == 1) {
    v[0] = a;
    return v;
  }
  double h = (b - a) / (include_end ? count - 1 : count);
  for (int i = 0; i < count; ++i) v[i] = a + h * i;
  return v;
}

// Thread cap comes from PSIDO_THREADS; default is sequential so that every
// run is reproducible without environment setup.
inline int thread_count() {
  static int cached = [] {
    if (const char* env = std::getenv("PSIDO_THREADS")) {
      int t = std::atoi(env);
      if (t >= 1) return t;
    }
    return 1;
  }();
  return cached;
}

// Chunked parallel loop. Chunk results are merged in index order by the
// caller when a reduction is needed, so results do not depend on the
// number of threads.
inline void parallel_for(std::int64_t begin, std::int64_t end,
                         const std::function<void(std::int64_t, std::int64_t)>& body) {
  const int nt = thread_count();
  const std::int64_t count = end - begin;
  if (nt <= 1 || count < 2) {
    body(begin, end);
    return;
  }
  const std::int64_t chunk = (count + nt - 1) / nt;
  std::vector<std::thread> workers;
  for (std::int64_t lo = begin; lo < end; lo += chunk) {
    std::int64_t hi = std::min(end, lo + chunk);
    workers.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& w : workers) w.join();
}

}  // namespace psido
