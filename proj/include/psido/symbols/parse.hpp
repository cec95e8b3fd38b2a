#pragma once

#include <cctype>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "psido/symbols/expr.hpp"

namespace psido {

// Prefix expression format used in config files, e.g.
//   (+ (^ rho 2) (* (^ lambda -2) (^ eta1 2)))
// Operators: + - * / ^ (integer exponent). Functions: exp log sqrt sin cos
// sinh cosh tanh coth sstep. Leaves: r theta1.. rho eta1.. rprime
// thetaprime1.. z zbar hbar i pi lambda dloglambda<k> and numeric literals.

namespace detail {
struct SymTokens {
  std::vector<std::string> toks;
  std::size_t pos = 0;
  const std::string& peek() const {
    static const std::string empty;
    return pos < toks.size() ? toks[pos] : empty;
  }
  std::string next() {
    if (pos >= toks.size()) throw std::invalid_argument("symbol parse: unexpected end");
    return toks[pos++];
  }
  bool done() const { return pos >= toks.size(); }
};

inline SymTokens tokenize_symbol(const std::string& text) {
  SymTokens t;
  std::string cur;
  for (char c : text) {
    if (c == '(' || c == ')') {
      if (!cur.empty()) {
        t.toks.push_back(cur);
        cur.clear();
      }
      t.toks.push_back(std::string(1, c));
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        t.toks.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) t.toks.push_back(cur);
  return t;
}

inline bool is_number(const std::string& s, double& out) {
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end && *end == '\0' && end != s.c_str();
}

inline Expr parse_leaf(const std::string& tok, const WeightPtr& lam) {
  double num;
  if (is_number(tok, num)) return Expr::constant(num);
  if (tok == "r") return var_r();
  if (tok == "rprime") return var_rprime();
  if (tok == "rho") return var_rho();
  if (tok == "theta1") return var_theta(0);
  if (tok == "theta2") return var_theta(1);
  if (tok == "eta1") return var_eta(0);
  if (tok == "eta2") return var_eta(1);
  if (tok == "thetaprime1") return var_thetaprime(0);
  if (tok == "thetaprime2") return var_thetaprime(1);
  if (tok == "i") return Expr::constant(cplx(0.0, 1.0));
  if (tok == "pi") return Expr::constant(pi);
  if (tok == "z" || tok == "zbar" || tok == "hbar") return Expr::param(tok);
  if (tok == "lambda") {
    if (!lam) throw std::invalid_argument("symbol parse: 'lambda' used without a bound weight");
    return lambda_of_r(lam);
  }
  if (tok.rfind("dloglambda", 0) == 0) {
    if (!lam) throw std::invalid_argument("symbol parse: weight leaf without a bound weight");
    int j = std::atoi(tok.c_str() + 10);
    if (j < 1) throw std::invalid_argument("symbol parse: bad leaf '" + tok + "'");
    return dloglambda(lam, j);
  }
  throw std::invalid_argument("symbol parse: unknown leaf '" + tok + "'");
}

inline Expr parse_expr(SymTokens& t, const WeightPtr& lam) {
  std::string tok = t.next();
  if (tok != "(") return parse_leaf(tok, lam);
  std::string head = t.next();
  std::vector<Expr> args;
  while (t.peek() != ")") args.push_back(parse_expr(t, lam));
  t.next();  // ')'

  auto need = [&](std::size_t k) {
    if (args.size() != k)
      throw std::invalid_argument("symbol parse: '" + head + "' expects " + std::to_string(k) +
                                  " arguments");
  };
  if (head == "+" || head == "*") {
    if (args.empty()) throw std::invalid_argument("symbol parse: empty '" + head + "'");
    Expr acc = args[0];
    for (std::size_t k = 1; k < args.size(); ++k)
      acc = head == "+" ? acc + args[k] : acc * args[k];
    return acc;
  }
  if (head == "-") {
    if (args.size() == 1) return -args[0];
    need(2);
    return args[0] - args[1];
  }
  if (head == "/") {
    need(2);
    return args[0] / args[1];
  }
  if (head == "^") {
    need(2);
    if (!args[1].is_const() || args[1].const_value().imag() != 0.0)
      throw std::invalid_argument("symbol parse: '^' needs an integer exponent");
    double k = args[1].const_value().real();
    int ki = static_cast<int>(k);
    if (ki != k) throw std::invalid_argument("symbol parse: '^' needs an integer exponent");
    return intpow(args[0], ki);
  }
  if (head == "complex") {
    need(2);
    return Expr::constant(cplx(args[0].const_value().real(), args[1].const_value().real()));
  }
  if (head == "lambda") {
    need(1);
    if (!lam) throw std::invalid_argument("symbol parse: 'lambda' without a bound weight");
    return Expr::weight(lam, 0, args[0]);
  }
  if (head.rfind("dloglambda", 0) == 0) {
    need(1);
    if (!lam) throw std::invalid_argument("symbol parse: weight head without a bound weight");
    return Expr::weight(lam, std::atoi(head.c_str() + 10), args[0]);
  }
  if (head.rfind("sstep", 0) == 0) {
    need(1);
    int j = head.size() > 5 ? std::atoi(head.c_str() + 5) : 0;
    return Expr::sstep(args[0], j);
  }
  need(1);
  if (head == "exp") return exp_(args[0]);
  if (head == "log") return log_(args[0]);
  if (head == "sqrt") return sqrt_(args[0]);
  if (head == "sin") return sin_(args[0]);
  if (head == "cos") return cos_(args[0]);
  if (head == "sinh") return sinh_(args[0]);
  if (head == "cosh") return cosh_(args[0]);
  if (head == "tanh") return tanh_(args[0]);
  if (head == "coth") return coth_(args[0]);
  throw std::invalid_argument("symbol parse: unknown operator '" + head + "'");
}
}  // namespace detail

inline Expr parse_symbol(const std::string& text, const WeightPtr& lam = nullptr) {
  auto toks = detail::tokenize_symbol(text);
  Expr e = detail::parse_expr(toks, lam);
  if (!toks.done()) throw std::invalid_argument("symbol parse: trailing tokens");
  return e;
}

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string to_text(const Expr& e) {
  const Node& nd = e.node();
  auto bin = [&](const char* op) {
    return "(" + std::string(op) + " " + to_text(Expr(nd.kids[0])) + " " +
           to_text(Expr(nd.kids[1])) + ")";
  };
  auto un = [&](const std::string& op) {
    return "(" + op + " " + to_text(Expr(nd.kids[0])) + ")";
  };
  switch (nd.kind) {
    case NodeKind::Const:
      if (nd.cval.imag() == 0.0) return format_number(nd.cval.real());
      return "(complex " + format_number(nd.cval.real()) + " " + format_number(nd.cval.imag()) +
             ")";
    case NodeKind::Coord:
      switch (nd.var.cls) {
        case VarClass::R: return "r";
        case VarClass::Theta: return "theta" + std::to_string(nd.var.idx + 1);
        case VarClass::Rho: return "rho";
        case VarClass::Eta: return "eta" + std::to_string(nd.var.idx + 1);
        case VarClass::RPrime: return "rprime";
        case VarClass::ThetaPrime: return "thetaprime" + std::to_string(nd.var.idx + 1);
      }
      return "?";
    case NodeKind::Param: return nd.pname;
    case NodeKind::Weight: {
      std::string name = nd.iarg == 0 ? "lambda" : "dloglambda" + std::to_string(nd.iarg);
      const Node& arg = *nd.kids[0];
      if (arg.kind == NodeKind::Coord && arg.var.cls == VarClass::R) return name;
      return "(" + name + " " + to_text(Expr(nd.kids[0])) + ")";
    }
    case NodeKind::SStep:
      return un(nd.iarg == 0 ? "sstep" : "sstep" + std::to_string(nd.iarg));
    case NodeKind::Add: return bin("+");
    case NodeKind::Sub: return bin("-");
    case NodeKind::Mul: return bin("*");
    case NodeKind::Div: return bin("/");
    case NodeKind::IntPow:
      return "(^ " + to_text(Expr(nd.kids[0])) + " " + std::to_string(nd.iarg) + ")";
    case NodeKind::Sqrt: return un("sqrt");
    case NodeKind::Exp: return un("exp");
    case NodeKind::Log: return un("log");
    case NodeKind::Sin: return un("sin");
    case NodeKind::Cos: return un("cos");
    case NodeKind::Sinh: return un("sinh");
    case NodeKind::Cosh: return un("cosh");
    case NodeKind::Tanh: return un("tanh");
    case NodeKind::Coth: return un("coth");
  }
  return "?";
}

}  // namespace psido
