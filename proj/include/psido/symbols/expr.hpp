#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "psido/common.hpp"
#include "psido/weights.hpp"

namespace psido {

// Expression trees over the phase-space coordinates
//   q = (r, theta1, theta2), p = (rho, eta1, eta2), q' = (rprime, thetaprime1, thetaprime2)
// plus named parameters (z, zbar, hbar). The weight lambda enters only through
// Weight nodes so differentiation can use its registered log-derivatives exactly;
// arbitrary user closures cannot appear inside a tree.

enum class NodeKind : std::uint8_t {
  Const, Coord, Param, Weight, SStep,
  Add, Sub, Mul, Div, IntPow, Sqrt, Exp, Log, Sin, Cos, Sinh, Cosh, Tanh, Coth
};

enum class VarClass : std::uint8_t { R, Theta, Rho, Eta, RPrime, ThetaPrime };

struct VarRef {
  VarClass cls = VarClass::R;
  int idx = 0;  // angular axis index, 0-based; unused for radial classes
  bool operator==(const VarRef&) const = default;
};

struct Node;
using ExprPtr = std::shared_ptr<const Node>;

struct Node {
  NodeKind kind;
  cplx cval{};          // Const
  VarRef var{};         // Coord
  std::string pname;    // Param
  WeightPtr weight;     // Weight
  int iarg = 0;         // IntPow exponent; Weight log-derivative order; SStep derivative order
  std::vector<ExprPtr> kids;
};

namespace detail {
// Smoothstep with vanishing derivatives up to order 8 at both ends
// (degree-17 polynomial), used for every bump/plateau/partition primitive.
inline constexpr int sstep_smoothness = 8;

inline const std::vector<double>& sstep_poly_deriv(int j) {
  static std::vector<std::vector<double>> cache = [] {
    std::vector<double> base(18, 0.0);
    const int N = sstep_smoothness;
    for (int k = 0; k <= N; ++k) {
      double coeff = static_cast<double>(binomial(N + k, k)) *
                     static_cast<double>(binomial(2 * N + 1, N - k));
      if (k % 2 == 1) coeff = -coeff;
      base[N + 1 + k] = coeff;
    }
    return std::vector<std::vector<double>>{base};
  }();
  while (static_cast<int>(cache.size()) <= j) {
    const auto& p = cache.back();
    std::vector<double> d(p.size() > 1 ? p.size() - 1 : 1, 0.0);
    for (std::size_t k = 1; k < p.size(); ++k) d[k - 1] = static_cast<double>(k) * p[k];
    cache.push_back(std::move(d));
  }
  return cache[j];
}

inline double sstep_eval(int j, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return j == 0 ? 1.0 : 0.0;
  const auto& p = sstep_poly_deriv(j);
  double acc = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) acc = acc * x + *it;
  return acc;
}
}  // namespace detail

class Expr {
 public:
  Expr() = default;
  explicit Expr(ExprPtr p) : p_(std::move(p)) {}

  const Node& node() const { return *p_; }
  const ExprPtr& ptr() const { return p_; }
  bool valid() const { return static_cast<bool>(p_); }

  bool is_const() const { return p_ && p_->kind == NodeKind::Const; }
  bool is_const(cplx v) const { return is_const() && p_->cval == v; }
  cplx const_value() const { return p_->cval; }

  static Expr constant(cplx v) {
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Const;
    n->cval = v;
    return Expr(std::move(n));
  }
  static Expr constant(double v) { return constant(cplx(v, 0.0)); }

  static Expr coord(VarClass cls, int idx = 0) {
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Coord;
    n->var = {cls, idx};
    return Expr(std::move(n));
  }

  static Expr param(std::string name) {
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Param;
    n->pname = std::move(name);
    return Expr(std::move(n));
  }

  // order 0: lambda(arg); order j >= 1: d^j/dr^j log(lambda) evaluated at arg.
  static Expr weight(WeightPtr w, int order, Expr arg) {
    if (!w) throw std::invalid_argument("expr: null weight");
    if (w->jmax() >= 0 && order > w->jmax())
      throw std::domain_error("expr: weight log-derivative order " + std::to_string(order) +
                              " exceeds registered maximum for '" + w->label() + "'");
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::Weight;
    n->weight = std::move(w);
    n->iarg = order;
    n->kids = {arg.ptr()};
    return Expr(std::move(n));
  }

  static Expr sstep(Expr arg, int deriv_order = 0) {
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::SStep;
    n->iarg = deriv_order;
    n->kids = {arg.ptr()};
    return Expr(std::move(n));
  }

  static Expr make(NodeKind kind, std::vector<Expr> kids, int iarg = 0);

 private:
  ExprPtr p_;
};

inline Expr operator+(const Expr& a, const Expr& b) { return Expr::make(NodeKind::Add, {a, b}); }
inline Expr operator-(const Expr& a, const Expr& b) { return Expr::make(NodeKind::Sub, {a, b}); }
inline Expr operator*(const Expr& a, const Expr& b) { return Expr::make(NodeKind::Mul, {a, b}); }
inline Expr operator/(const Expr& a, const Expr& b) { return Expr::make(NodeKind::Div, {a, b}); }
inline Expr operator-(const Expr& a) { return Expr::constant(-1.0) * a; }
inline Expr operator+(const Expr& a, double b) { return a + Expr::constant(b); }
inline Expr operator+(double a, const Expr& b) { return Expr::constant(a) + b; }
inline Expr operator-(const Expr& a, double b) { return a - Expr::constant(b); }
inline Expr operator-(double a, const Expr& b) { return Expr::constant(a) - b; }
inline Expr operator*(const Expr& a, double b) { return a * Expr::constant(b); }
inline Expr operator*(double a, const Expr& b) { return Expr::constant(a) * b; }
inline Expr operator/(const Expr& a, double b) { return a / Expr::constant(b); }
inline Expr operator/(double a, const Expr& b) { return Expr::constant(a) / b; }

inline Expr intpow(const Expr& a, int k) { return Expr::make(NodeKind::IntPow, {a}, k); }
inline Expr sqrt_(const Expr& a) { return Expr::make(NodeKind::Sqrt, {a}); }
inline Expr exp_(const Expr& a) { return Expr::make(NodeKind::Exp, {a}); }
inline Expr log_(const Expr& a) { return Expr::make(NodeKind::Log, {a}); }
inline Expr sin_(const Expr& a) { return Expr::make(NodeKind::Sin, {a}); }
inline Expr cos_(const Expr& a) { return Expr::make(NodeKind::Cos, {a}); }
inline Expr sinh_(const Expr& a) { return Expr::make(NodeKind::Sinh, {a}); }
inline Expr cosh_(const Expr& a) { return Expr::make(NodeKind::Cosh, {a}); }
inline Expr tanh_(const Expr& a) { return Expr::make(NodeKind::Tanh, {a}); }
inline Expr coth_(const Expr& a) { return Expr::make(NodeKind::Coth, {a}); }

// Shorthand leaves.
inline Expr var_r() { return Expr::coord(VarClass::R); }
inline Expr var_theta(int i = 0) { return Expr::coord(VarClass::Theta, i); }
inline Expr var_rho() { return Expr::coord(VarClass::Rho); }
inline Expr var_eta(int i = 0) { return Expr::coord(VarClass::Eta, i); }
inline Expr var_rprime() { return Expr::coord(VarClass::RPrime); }
inline Expr var_thetaprime(int i = 0) { return Expr::coord(VarClass::ThetaPrime, i); }
inline Expr lambda_of_r(const WeightPtr& w) { return Expr::weight(w, 0, var_r()); }
inline Expr dloglambda(const WeightPtr& w, int j) { return Expr::weight(w, j, var_r()); }

inline cplx fold_unary(NodeKind kind, cplx v, int iarg) {
  switch (kind) {
    case NodeKind::IntPow: return std::pow(v, iarg);
    case NodeKind::Sqrt: return std::sqrt(v);
    case NodeKind::Exp: return std::exp(v);
    case NodeKind::Log: return std::log(v);
    case NodeKind::Sin: return std::sin(v);
    case NodeKind::Cos: return std::cos(v);
    case NodeKind::Sinh: return std::sinh(v);
    case NodeKind::Cosh: return std::cosh(v);
    case NodeKind::Tanh: return std::tanh(v);
    case NodeKind::Coth: return cplx(1.0, 0.0) / std::tanh(v);
    default: throw std::logic_error("fold_unary: not a unary function");
  }
}

// Builder with light constant folding; keeps recursion-generated trees lean.
inline Expr Expr::make(NodeKind kind, std::vector<Expr> kids, int iarg) {
  switch (kind) {
    case NodeKind::Add:
      if (kids[0].is_const() && kids[1].is_const())
        return constant(kids[0].const_value() + kids[1].const_value());
      if (kids[0].is_const(0.0)) return kids[1];
      if (kids[1].is_const(0.0)) return kids[0];
      break;
    case NodeKind::Sub:
      if (kids[0].is_const() && kids[1].is_const())
        return constant(kids[0].const_value() - kids[1].const_value());
      if (kids[1].is_const(0.0)) return kids[0];
      break;
    case NodeKind::Mul:
      if (kids[0].is_const() && kids[1].is_const())
        return constant(kids[0].const_value() * kids[1].const_value());
      if (kids[0].is_const(0.0) || kids[1].is_const(0.0)) return constant(0.0);
      if (kids[0].is_const(1.0)) return kids[1];
      if (kids[1].is_const(1.0)) return kids[0];
      break;
    case NodeKind::Div:
      if (kids[0].is_const(0.0)) return constant(0.0);
      if (kids[1].is_const(1.0)) return kids[0];
      if (kids[0].is_const() && kids[1].is_const())
        return constant(kids[0].const_value() / kids[1].const_value());
      break;
    case NodeKind::IntPow:
      if (iarg == 0) return constant(1.0);
      if (iarg == 1) return kids[0];
      if (kids[0].is_const()) return constant(std::pow(kids[0].const_value(), iarg));
      break;
    default:
      if (kids.size() == 1 && kids[0].is_const())
        return constant(fold_unary(kind, kids[0].const_value(), iarg));
      break;
  }
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->iarg = iarg;
  n->kids.reserve(kids.size());
  for (auto& k : kids) n->kids.push_back(k.ptr());
  return Expr(std::move(n));
}

// ---------------------------------------------------------------------------
// Evaluation

using Params = std::map<std::string, cplx>;

struct EvalContext {
  int n = 2;
  std::array<double, max_dim> q{};   // r, theta1, theta2
  std::array<double, max_dim> p{};   // rho, eta1, eta2
  std::array<double, max_dim> qp{};  // rprime, thetaprime1, thetaprime2
  const Params* params = nullptr;

  double coord(const VarRef& v) const {
    switch (v.cls) {
      case VarClass::R: return q[0];
      case VarClass::Theta: return q[1 + v.idx];
      case VarClass::Rho: return p[0];
      case VarClass::Eta: return p[1 + v.idx];
      case VarClass::RPrime: return qp[0];
      case VarClass::ThetaPrime: return qp[1 + v.idx];
    }
    return 0.0;
  }
};

namespace detail {
inline cplx eval_node(const Node* nd, const EvalContext& ctx,
                      std::unordered_map<const Node*, cplx>& memo) {
  auto it = memo.find(nd);
  if (it != memo.end()) return it->second;
  cplx v;
  switch (nd->kind) {
    case NodeKind::Const: v = nd->cval; break;
    case NodeKind::Coord: v = cplx(ctx.coord(nd->var), 0.0); break;
    case NodeKind::Param: {
      if (!ctx.params)
        throw std::invalid_argument("eval: unbound parameter '" + nd->pname + "'");
      auto p = ctx.params->find(nd->pname);
      if (p == ctx.params->end())
        throw std::invalid_argument("eval: unbound parameter '" + nd->pname + "'");
      v = p->second;
      break;
    }
    case NodeKind::Weight: {
      double arg = eval_node(nd->kids[0].get(), ctx, memo).real();
      v = nd->iarg == 0 ? cplx(nd->weight->eval(arg), 0.0)
                        : cplx(nd->weight->log_deriv(nd->iarg, arg), 0.0);
      break;
    }
    case NodeKind::SStep: {
      double arg = eval_node(nd->kids[0].get(), ctx, memo).real();
      v = cplx(sstep_eval(nd->iarg, arg), 0.0);
      break;
    }
    case NodeKind::Add:
      v = eval_node(nd->kids[0].get(), ctx, memo) + eval_node(nd->kids[1].get(), ctx, memo);
      break;
    case NodeKind::Sub:
      v = eval_node(nd->kids[0].get(), ctx, memo) - eval_node(nd->kids[1].get(), ctx, memo);
      break;
    case NodeKind::Mul:
      v = eval_node(nd->kids[0].get(), ctx, memo) * eval_node(nd->kids[1].get(), ctx, memo);
      break;
    case NodeKind::Div:
      v = eval_node(nd->kids[0].get(), ctx, memo) / eval_node(nd->kids[1].get(), ctx, memo);
      break;
    default:
      v = fold_unary(nd->kind, eval_node(nd->kids[0].get(), ctx, memo), nd->iarg);
      break;
  }
  memo.emplace(nd, v);
  return v;
}
}  // namespace detail

inline cplx evaluate(const Expr& e, const EvalContext& ctx) {
  std::unordered_map<const Node*, cplx> memo;
  return detail::eval_node(e.ptr().get(), ctx, memo);
}

// ---------------------------------------------------------------------------
// Exact differentiation. Shared subtrees stay shared through the per-call memo.

namespace detail {
struct DiffMemo {
  VarRef var;
  std::unordered_map<const Node*, Expr> memo;
};

inline Expr diff_node(const ExprPtr& e, DiffMemo& m) {
  auto it = m.memo.find(e.get());
  if (it != m.memo.end()) return it->second;
  const Node& nd = *e;
  Expr a = nd.kids.size() > 0 ? Expr(nd.kids[0]) : Expr();
  Expr b = nd.kids.size() > 1 ? Expr(nd.kids[1]) : Expr();
  Expr da = a.valid() ? diff_node(nd.kids[0], m) : Expr();
  Expr db = b.valid() ? diff_node(nd.kids[1], m) : Expr();
  Expr self(e);
  Expr result;
  switch (nd.kind) {
    case NodeKind::Const:
    case NodeKind::Param: result = Expr::constant(0.0); break;
    case NodeKind::Coord:
      result = Expr::constant(nd.var == m.var ? 1.0 : 0.0);
      break;
    case NodeKind::Weight:
      // d lambda(u) = lambda(u) * (log lambda)'(u) * u';
      // d (log lambda)^(j)(u) = (log lambda)^(j+1)(u) * u'.
      if (da.is_const(0.0)) {
        result = Expr::constant(0.0);
      } else if (nd.iarg == 0) {
        result = self * Expr::weight(nd.weight, 1, a) * da;
      } else {
        result = Expr::weight(nd.weight, nd.iarg + 1, a) * da;
      }
      break;
    case NodeKind::SStep:
      result = da.is_const(0.0) ? Expr::constant(0.0) : Expr::sstep(a, nd.iarg + 1) * da;
      break;
    case NodeKind::Add: result = da + db; break;
    case NodeKind::Sub: result = da - db; break;
    case NodeKind::Mul: result = da * b + a * db; break;
    case NodeKind::Div: result = da / b - self * db / b; break;
    case NodeKind::IntPow:
      result = Expr::constant(static_cast<double>(nd.iarg)) * intpow(a, nd.iarg - 1) * da;
      break;
    case NodeKind::Sqrt: result = da / (Expr::constant(2.0) * self); break;
    case NodeKind::Exp: result = self * da; break;
    case NodeKind::Log: result = da / a; break;
    case NodeKind::Sin: result = cos_(a) * da; break;
    case NodeKind::Cos: result = -(sin_(a) * da); break;
    case NodeKind::Sinh: result = cosh_(a) * da; break;
    case NodeKind::Cosh: result = sinh_(a) * da; break;
    case NodeKind::Tanh: result = (1.0 - self * self) * da; break;
    case NodeKind::Coth: result = (1.0 - self * self) * da; break;
  }
  m.memo.emplace(e.get(), result);
  return result;
}
}  // namespace detail

inline Expr differentiate(const Expr& e, VarRef var) {
  detail::DiffMemo m{var, {}};
  return detail::diff_node(e.ptr(), m);
}

inline Expr differentiate(const Expr& e, VarClass cls, int idx = 0) {
  return differentiate(e, VarRef{cls, idx});
}

// ---------------------------------------------------------------------------
// Structural transforms

// Substitute coordinates by expressions (identity for unlisted ones).
inline Expr substitute(const Expr& e,
                       const std::vector<std::pair<VarRef, Expr>>& subs) {
  std::unordered_map<const Node*, Expr> memo;
  std::function<Expr(const ExprPtr&)> rec = [&](const ExprPtr& p) -> Expr {
    auto it = memo.find(p.get());
    if (it != memo.end()) return it->second;
    const Node& nd = *p;
    Expr result;
    if (nd.kind == NodeKind::Coord) {
      result = Expr(p);
      for (const auto& [v, repl] : subs)
        if (nd.var == v) {
          result = repl;
          break;
        }
    } else if (nd.kids.empty()) {
      result = Expr(p);
    } else {
      std::vector<Expr> kids;
      bool changed = false;
      for (const auto& k : nd.kids) {
        Expr nk = rec(k);
        changed |= (nk.ptr() != k);
        kids.push_back(nk);
      }
      if (!changed) {
        result = Expr(p);
      } else if (nd.kind == NodeKind::Weight) {
        result = Expr::weight(nd.weight, nd.iarg, kids[0]);
      } else if (nd.kind == NodeKind::SStep) {
        result = Expr::sstep(kids[0], nd.iarg);
      } else {
        result = Expr::make(nd.kind, kids, nd.iarg);
      }
    }
    memo.emplace(p.get(), result);
    return result;
  };
  return rec(e.ptr());
}

// Complex conjugation pushed to the leaves. All function nodes have real
// Taylor coefficients, so conj(f(w)) = f(conj(w)); the parameter z maps to a
// distinct parameter zbar which evaluation contexts must bind consistently.
inline Expr conjugate_expr(const Expr& e) {
  std::unordered_map<const Node*, Expr> memo;
  std::function<Expr(const ExprPtr&)> rec = [&](const ExprPtr& p) -> Expr {
    auto it = memo.find(p.get());
    if (it != memo.end()) return it->second;
    const Node& nd = *p;
    Expr result;
    switch (nd.kind) {
      case NodeKind::Const: result = Expr::constant(std::conj(nd.cval)); break;
      case NodeKind::Coord: result = Expr(p); break;
      case NodeKind::Param: {
        std::string nm = nd.pname;
        if (nm == "z") nm = "zbar";
        else if (nm == "zbar") nm = "z";
        result = Expr::param(nm);
        break;
      }
      case NodeKind::Weight: result = Expr::weight(nd.weight, nd.iarg, rec(nd.kids[0])); break;
      case NodeKind::SStep: result = Expr::sstep(rec(nd.kids[0]), nd.iarg); break;
      default: {
        std::vector<Expr> kids;
        for (const auto& k : nd.kids) kids.push_back(rec(k));
        result = Expr::make(nd.kind, kids, nd.iarg);
        break;
      }
    }
    memo.emplace(p.get(), result);
    return result;
  };
  return rec(e.ptr());
}

// Which coordinate classes / axes a tree references.
struct CoordUsage {
  bool r = false, rprime = false, rho = false;
  std::array<bool, 2> theta{false, false};
  std::array<bool, 2> eta{false, false};
  std::array<bool, 2> thetaprime{false, false};

  bool any_q() const { return r || theta[0] || theta[1]; }
  bool any_qprime() const { return rprime || thetaprime[0] || thetaprime[1]; }
  bool any_p() const { return rho || eta[0] || eta[1]; }
  // Axis 0 is radial, axes 1.. are angular.
  bool axis_coupled(int axis) const {
    if (axis == 0) return r || rprime;
    return theta[axis - 1] || thetaprime[axis - 1];
  }
};

inline void collect_usage(const Node* nd, CoordUsage& u,
                          std::unordered_map<const Node*, bool>& seen) {
  if (seen.count(nd)) return;
  seen.emplace(nd, true);
  if (nd->kind == NodeKind::Coord) {
    switch (nd->var.cls) {
      case VarClass::R: u.r = true; break;
      case VarClass::Theta: u.theta[nd->var.idx] = true; break;
      case VarClass::Rho: u.rho = true; break;
      case VarClass::Eta: u.eta[nd->var.idx] = true; break;
      case VarClass::RPrime: u.rprime = true; break;
      case VarClass::ThetaPrime: u.thetaprime[nd->var.idx] = true; break;
    }
  }
  for (const auto& k : nd->kids) collect_usage(k.get(), u, seen);
}

inline CoordUsage coord_usage(const Expr& e) {
  CoordUsage u;
  std::unordered_map<const Node*, bool> seen;
  collect_usage(e.ptr().get(), u, seen);
  return u;
}

// ---------------------------------------------------------------------------
// Compiled form: a flat, topologically ordered tape. Shared subtrees are
// evaluated once per point, and sweeps over the momentum grid can re-evaluate
// only the momentum-dependent slots.

enum : std::uint8_t { DEP_Q = 1, DEP_P = 2, DEP_QP = 4 };

class Tape {
 public:
  Tape() = default;
  Tape(const Expr& e, const Params& params = {}) { compile(e, params); }

  void compile(const Expr& e, const Params& params = {}) {
    ops_.clear();
    slot_of_.clear();
    root_ = add_node(e.ptr(), params);
    p_slots_.clear();
    nonp_slots_.clear();
    for (std::size_t i = 0; i < ops_.size(); ++i)
      (ops_[i].deps & DEP_P ? p_slots_ : nonp_slots_).push_back(static_cast<int>(i));
  }

  std::size_t size() const { return ops_.size(); }
  std::uint8_t deps() const { return ops_.empty() ? 0 : ops_[root_].deps; }

  // Full evaluation. buf is resized as needed and may be reused across calls.
  cplx eval(const EvalContext& ctx, std::vector<cplx>& buf) const {
    buf.resize(ops_.size());
    for (std::size_t i = 0; i < ops_.size(); ++i) eval_slot(static_cast<int>(i), ctx, buf);
    return buf[root_];
  }

  cplx eval(const EvalContext& ctx) const {
    std::vector<cplx> buf;
    return eval(ctx, buf);
  }

  // Evaluate the momentum-independent slots (call once per (q, q') pair)...
  void eval_base(const EvalContext& ctx, std::vector<cplx>& buf) const {
    buf.resize(ops_.size());
    for (int i : nonp_slots_) eval_slot(i, ctx, buf);
  }
  // ...then sweep momenta re-evaluating only the dependent slots.
  cplx eval_p(const EvalContext& ctx, std::vector<cplx>& buf) const {
    for (int i : p_slots_) eval_slot(i, ctx, buf);
    return buf[root_];
  }

 private:
  struct Op {
    NodeKind kind;
    int a = -1, b = -1;
    cplx cval{};
    VarRef var{};
    const WeightFunction* w = nullptr;
    int iarg = 0;
    std::uint8_t deps = 0;
  };

  void eval_slot(int i, const EvalContext& ctx, std::vector<cplx>& buf) const {
    const Op& op = ops_[i];
    cplx v;
    switch (op.kind) {
      case NodeKind::Const: v = op.cval; break;
      case NodeKind::Coord: v = cplx(ctx.coord(op.var), 0.0); break;
      case NodeKind::Weight:
        v = op.iarg == 0 ? cplx(op.w->eval(buf[op.a].real()), 0.0)
                         : cplx(op.w->log_deriv(op.iarg, buf[op.a].real()), 0.0);
        break;
      case NodeKind::SStep: v = cplx(detail::sstep_eval(op.iarg, buf[op.a].real()), 0.0); break;
      case NodeKind::Add: v = buf[op.a] + buf[op.b]; break;
      case NodeKind::Sub: v = buf[op.a] - buf[op.b]; break;
      case NodeKind::Mul: v = buf[op.a] * buf[op.b]; break;
      case NodeKind::Div: v = buf[op.a] / buf[op.b]; break;
      case NodeKind::IntPow: {
        // small integer powers dominate; handle them without pow()
        cplx base = buf[op.a];
        int k = op.iarg;
        bool inv = k < 0;
        if (inv) k = -k;
        cplx acc(1.0, 0.0);
        if (k <= 4) {
          for (int j = 0; j < k; ++j) acc *= base;
        } else {
          acc = std::pow(base, k);
        }
        v = inv ? cplx(1.0, 0.0) / acc : acc;
        break;
      }
      default: v = fold_unary(op.kind, buf[op.a], op.iarg); break;
    }
    buf[i] = v;
  }

  int add_node(const ExprPtr& e, const Params& params) {
    auto it = slot_of_.find(e.get());
    if (it != slot_of_.end()) return it->second;
    const Node& nd = *e;
    Op op;
    op.kind = nd.kind;
    op.iarg = nd.iarg;
    switch (nd.kind) {
      case NodeKind::Const: op.cval = nd.cval; break;
      case NodeKind::Coord:
        op.var = nd.var;
        switch (nd.var.cls) {
          case VarClass::R:
          case VarClass::Theta: op.deps = DEP_Q; break;
          case VarClass::Rho:
          case VarClass::Eta: op.deps = DEP_P; break;
          default: op.deps = DEP_QP; break;
        }
        break;
      case NodeKind::Param: {
        auto p = params.find(nd.pname);
        if (p == params.end())
          throw std::invalid_argument("tape: unbound parameter '" + nd.pname + "'");
        op.kind = NodeKind::Const;
        op.cval = p->second;
        break;
      }
      case NodeKind::Weight:
        op.w = nd.weight.get();
        op.a = add_node(nd.kids[0], params);
        op.deps = ops_[op.a].deps;
        break;
      default:
        op.a = add_node(nd.kids[0], params);
        op.deps = ops_[op.a].deps;
        if (nd.kids.size() > 1) {
          op.b = add_node(nd.kids[1], params);
          op.deps |= ops_[op.b].deps;
        }
        break;
    }
    ops_.push_back(op);
    int slot = static_cast<int>(ops_.size()) - 1;
    slot_of_.emplace(e.get(), slot);
    return slot;
  }

  std::vector<Op> ops_;
  std::vector<int> p_slots_, nonp_slots_;
  std::unordered_map<const Node*, int> slot_of_;
  int root_ = -1;
};

// ---------------------------------------------------------------------------
// Bump and plateau primitives built from the smoothstep.

// Rises 0 -> 1 across [a, a + w].
inline Expr rising_step(const Expr& x, double a, double w) {
  return Expr::sstep((x - a) / w);
}

// 1 on [a + w, b - w], 0 outside (a, b).
inline Expr plateau(const Expr& x, double a, double b, double w) {
  return rising_step(x, a, w) * Expr::sstep((Expr::constant(b) - x) / w);
}

}  // namespace psido
