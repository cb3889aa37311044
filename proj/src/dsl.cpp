#include "magi/dsl.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <type_traits>
#include <vector>

namespace magi {

namespace {

// ---------------------------------------------------------------- lexer ---

enum class TokType { Ident, Number, Sym, Sep, End };

struct Token {
  TokType type = TokType::End;
  std::string text;
  double num = 0.0;
  char sym = 0;
  int line = 0;
  int col = 0;
};

std::vector<Token> lex(const std::string& src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  size_t i = 0;
  auto push_sep = [&](int l, int c) {
    // Collapse consecutive separators.
    if (!out.empty() && out.back().type == TokType::Sep) return;
    out.push_back({TokType::Sep, "", 0.0, ';', l, c});
  };
  while (i < src.size()) {
    const char ch = src[i];
    if (ch == '\n') {
      push_sep(line, col);
      ++line;
      col = 1;
      ++i;
      continue;
    }
    if (ch == '#') {  // comment to end of line
      while (i < src.size() && src[i] != '\n') ++i;
      continue;
    }
    if (ch == ' ' || ch == '\t' || ch == '\r') {
      ++col;
      ++i;
      continue;
    }
    if (ch == ';') {
      push_sep(line, col);
      ++col;
      ++i;
      continue;
    }
    const int tl = line, tc = col;
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
      size_t j = i;
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) {
        ++j;
      }
      out.push_back({TokType::Ident, src.substr(i, j - i), 0.0, 0, tl, tc});
      col += static_cast<int>(j - i);
      i = j;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(ch)) ||
        (ch == '.' && i + 1 < src.size() &&
         std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      const char* start = src.c_str() + i;
      char* end = nullptr;
      const double v = std::strtod(start, &end);
      const size_t len = static_cast<size_t>(end - start);
      out.push_back({TokType::Number, src.substr(i, len), v, 0, tl, tc});
      col += static_cast<int>(len);
      i += len;
      continue;
    }
    if (std::string("+-*/^()[],=:").find(ch) != std::string::npos) {
      out.push_back({TokType::Sym, std::string(1, ch), 0.0, ch, tl, tc});
      ++col;
      ++i;
      continue;
    }
    throw DslError(std::string("unexpected character '") + ch + "'", line, col);
  }
  push_sep(line, col);
  out.push_back({TokType::End, "", 0.0, 0, line, col});
  return out;
}

// ------------------------------------------------------------------ AST ---

struct Node;
using NodePtr = std::unique_ptr<Node>;

enum class NodeKind {
  Const, Ident, Time, State, Param,
  Neg, Add, Sub, Mul, Div, Pow,
  Exp, Log, Sin, Cos,
};

struct Node {
  NodeKind kind;
  double value = 0.0;      // Const
  arma::uword index = 0;   // State / Param
  std::string name;        // Ident (pre-resolution)
  int line = 0, col = 0;
  NodePtr a, b;
};

NodePtr make_node(NodeKind kind) {
  auto n = std::make_unique<Node>();
  n->kind = kind;
  return n;
}

// --------------------------------------------------------------- parser ---

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  const Token& peek() const { return toks_[pos_]; }
  const Token& get() { return toks_[pos_++]; }
  bool at_sym(char c) const {
    return peek().type == TokType::Sym && peek().sym == c;
  }
  void expect_sym(char c, const std::string& what) {
    if (!at_sym(c)) {
      throw DslError("expected '" + std::string(1, c) + "' " + what, peek().line,
                     peek().col);
    }
    ++pos_;
  }
  void skip_seps() {
    while (peek().type == TokType::Sep) ++pos_;
  }

  NodePtr parse_expr() { return parse_add(); }

 private:
  NodePtr parse_add() {
    NodePtr lhs = parse_mul();
    while (at_sym('+') || at_sym('-')) {
      const char op = get().sym;
      NodePtr rhs = parse_mul();
      NodePtr node = make_node(op == '+' ? NodeKind::Add : NodeKind::Sub);
      node->a = std::move(lhs);
      node->b = std::move(rhs);
      lhs = std::move(node);
    }
    return lhs;
  }

  NodePtr parse_mul() {
    NodePtr lhs = parse_unary();
    while (at_sym('*') || at_sym('/')) {
      const char op = get().sym;
      NodePtr rhs = parse_unary();
      NodePtr node = make_node(op == '*' ? NodeKind::Mul : NodeKind::Div);
      node->a = std::move(lhs);
      node->b = std::move(rhs);
      lhs = std::move(node);
    }
    return lhs;
  }

  NodePtr parse_unary() {
    if (at_sym('-')) {
      const Token tok = get();
      NodePtr node = make_node(NodeKind::Neg);
      node->line = tok.line;
      node->col = tok.col;
      node->a = parse_unary();
      return node;
    }
    if (at_sym('+')) {
      get();
      return parse_unary();
    }
    return parse_pow();
  }

  NodePtr parse_pow() {
    NodePtr base = parse_primary();
    if (at_sym('^')) {
      get();
      NodePtr node = make_node(NodeKind::Pow);
      node->a = std::move(base);
      node->b = parse_unary();  // right-associative; allows x^-2
      return node;
    }
    return base;
  }

  NodePtr parse_primary() {
    const Token& tok = peek();
    if (tok.type == TokType::Number) {
      get();
      NodePtr node = make_node(NodeKind::Const);
      node->value = tok.num;
      return node;
    }
    if (tok.type == TokType::Ident) {
      const Token id = get();
      if (at_sym('(')) {
        static const std::map<std::string, NodeKind> funcs = {
            {"exp", NodeKind::Exp},
            {"log", NodeKind::Log},
            {"sin", NodeKind::Sin},
            {"cos", NodeKind::Cos}};
        const auto it = funcs.find(id.text);
        if (it == funcs.end()) {
          throw DslError("unknown function '" + id.text +
                             "' (available: exp, log, sin, cos)",
                         id.line, id.col);
        }
        get();  // '('
        NodePtr node = make_node(it->second);
        node->a = parse_expr();
        expect_sym(')', "to close the call to " + id.text);
        return node;
      }
      NodePtr node = make_node(NodeKind::Ident);
      node->name = id.text;
      node->line = id.line;
      node->col = id.col;
      return node;
    }
    if (at_sym('(')) {
      get();
      NodePtr inner = parse_expr();
      expect_sym(')', "to close the parenthesized expression");
      return inner;
    }
    throw DslError("expected a number, identifier, or '(' in expression", tok.line,
                   tok.col);
  }

  std::vector<Token> toks_;
  size_t pos_ = 0;
};

// ------------------------------------------------------------- compiler ---

// Flattened postfix program with an explicit stack machine; the dual pass
// carries gradients with respect to (states..., params...).
enum class Op {
  PushConst, PushState, PushParam, PushTime,
  Neg, Add, Sub, Mul, Div, Pow, PowConst,
  Exp, Log, Sin, Cos,
};

struct Instr {
  Op op;
  double value = 0.0;     // PushConst / PowConst exponent
  arma::uword index = 0;  // PushState / PushParam
};

struct Program {
  std::vector<Instr> code;
  arma::uword max_depth = 0;
};

void flatten(const Node& node, std::vector<Instr>& code) {
  switch (node.kind) {
    case NodeKind::Const:
      code.push_back({Op::PushConst, node.value, 0});
      return;
    case NodeKind::State:
      code.push_back({Op::PushState, 0.0, node.index});
      return;
    case NodeKind::Param:
      code.push_back({Op::PushParam, 0.0, node.index});
      return;
    case NodeKind::Time:
      code.push_back({Op::PushTime, 0.0, 0});
      return;
    case NodeKind::Neg:
      flatten(*node.a, code);
      code.push_back({Op::Neg, 0.0, 0});
      return;
    case NodeKind::Add:
    case NodeKind::Sub:
    case NodeKind::Mul:
    case NodeKind::Div:
      flatten(*node.a, code);
      flatten(*node.b, code);
      code.push_back({node.kind == NodeKind::Add   ? Op::Add
                      : node.kind == NodeKind::Sub ? Op::Sub
                      : node.kind == NodeKind::Mul ? Op::Mul
                                                   : Op::Div,
                      0.0, 0});
      return;
    case NodeKind::Pow:
      flatten(*node.a, code);
      if (node.b->kind == NodeKind::Const) {
        code.push_back({Op::PowConst, node.b->value, 0});
      } else {
        flatten(*node.b, code);
        code.push_back({Op::Pow, 0.0, 0});
      }
      return;
    case NodeKind::Exp:
    case NodeKind::Log:
    case NodeKind::Sin:
    case NodeKind::Cos:
      flatten(*node.a, code);
      code.push_back({node.kind == NodeKind::Exp   ? Op::Exp
                      : node.kind == NodeKind::Log ? Op::Log
                      : node.kind == NodeKind::Sin ? Op::Sin
                                                   : Op::Cos,
                      0.0, 0});
      return;
    case NodeKind::Ident:
      throw std::logic_error("flatten: unresolved identifier survived resolution");
  }
}

Program compile(const Node& root) {
  Program prog;
  flatten(root, prog.code);
  arma::uword depth = 0;
  for (const Instr& ins : prog.code) {
    switch (ins.op) {
      case Op::PushConst:
      case Op::PushState:
      case Op::PushParam:
      case Op::PushTime:
        ++depth;
        prog.max_depth = std::max(prog.max_depth, depth);
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
      case Op::Pow:
        --depth;
        break;
      default:
        break;  // unary: depth unchanged
    }
  }
  return prog;
}

double eval_plain(const Program& prog, const double* state, const double* param,
                  double t, std::vector<double>& stack) {
  size_t sp = 0;
  for (const Instr& ins : prog.code) {
    switch (ins.op) {
      case Op::PushConst: stack[sp++] = ins.value; break;
      case Op::PushState: stack[sp++] = state[ins.index]; break;
      case Op::PushParam: stack[sp++] = param[ins.index]; break;
      case Op::PushTime: stack[sp++] = t; break;
      case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
      case Op::Add: stack[sp - 2] += stack[sp - 1]; --sp; break;
      case Op::Sub: stack[sp - 2] -= stack[sp - 1]; --sp; break;
      case Op::Mul: stack[sp - 2] *= stack[sp - 1]; --sp; break;
      case Op::Div: stack[sp - 2] /= stack[sp - 1]; --sp; break;
      case Op::Pow:
        stack[sp - 2] = std::pow(stack[sp - 2], stack[sp - 1]);
        --sp;
        break;
      case Op::PowConst: stack[sp - 1] = std::pow(stack[sp - 1], ins.value); break;
      case Op::Exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
      case Op::Log: stack[sp - 1] = std::log(stack[sp - 1]); break;
      case Op::Sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
      case Op::Cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
    }
  }
  return stack[0];
}

// Dual evaluation: `grad` has one row per stack slot, one column per
// differentiation variable (states then params). Returns the value; the
// gradient of the result is left in grad.row(0).
double eval_dual(const Program& prog, const double* state, const double* param,
                 double t, arma::uword dim_x, std::vector<double>& stack,
                 arma::mat& grad) {
  size_t sp = 0;
  for (const Instr& ins : prog.code) {
    switch (ins.op) {
      case Op::PushConst:
        stack[sp] = ins.value;
        grad.row(sp++).zeros();
        break;
      case Op::PushState:
        stack[sp] = state[ins.index];
        grad.row(sp).zeros();
        grad(sp++, ins.index) = 1.0;
        break;
      case Op::PushParam:
        stack[sp] = param[ins.index];
        grad.row(sp).zeros();
        grad(sp++, dim_x + ins.index) = 1.0;
        break;
      case Op::PushTime:
        stack[sp] = t;
        grad.row(sp++).zeros();
        break;
      case Op::Neg:
        stack[sp - 1] = -stack[sp - 1];
        grad.row(sp - 1) *= -1.0;
        break;
      case Op::Add:
        stack[sp - 2] += stack[sp - 1];
        grad.row(sp - 2) += grad.row(sp - 1);
        --sp;
        break;
      case Op::Sub:
        stack[sp - 2] -= stack[sp - 1];
        grad.row(sp - 2) -= grad.row(sp - 1);
        --sp;
        break;
      case Op::Mul:
        grad.row(sp - 2) =
            stack[sp - 1] * grad.row(sp - 2) + stack[sp - 2] * grad.row(sp - 1);
        stack[sp - 2] *= stack[sp - 1];
        --sp;
        break;
      case Op::Div: {
        const double q = stack[sp - 2] / stack[sp - 1];
        grad.row(sp - 2) = (grad.row(sp - 2) - q * grad.row(sp - 1)) / stack[sp - 1];
        stack[sp - 2] = q;
        --sp;
        break;
      }
      case Op::Pow: {
        const double a = stack[sp - 2], b = stack[sp - 1];
        const double r = std::pow(a, b);
        grad.row(sp - 2) =
            r * (grad.row(sp - 1) * std::log(a) + (b / a) * grad.row(sp - 2));
        stack[sp - 2] = r;
        --sp;
        break;
      }
      case Op::PowConst: {
        const double c = ins.value;
        if (c == 0.0) {
          stack[sp - 1] = 1.0;
          grad.row(sp - 1).zeros();
        } else {
          grad.row(sp - 1) *= c * std::pow(stack[sp - 1], c - 1.0);
          stack[sp - 1] = std::pow(stack[sp - 1], c);
        }
        break;
      }
      case Op::Exp:
        stack[sp - 1] = std::exp(stack[sp - 1]);
        grad.row(sp - 1) *= stack[sp - 1];
        break;
      case Op::Log:
        grad.row(sp - 1) /= stack[sp - 1];
        stack[sp - 1] = std::log(stack[sp - 1]);
        break;
      case Op::Sin:
        grad.row(sp - 1) *= std::cos(stack[sp - 1]);
        stack[sp - 1] = std::sin(stack[sp - 1]);
        break;
      case Op::Cos:
        grad.row(sp - 1) *= -std::sin(stack[sp - 1]);
        stack[sp - 1] = std::cos(stack[sp - 1]);
        break;
    }
  }
  return stack[0];
}

// ------------------------------------------------------------ assembler ---

struct DslModel {
  std::vector<std::string> states;
  std::vector<std::string> params;
  arma::vec lower, upper;
  std::vector<Program> programs;  // one per state, in state order
};

struct Declaration {
  std::string name;
  double lower, upper;
};

}  // namespace

OdeSystem parse_ode_dsl(const std::string& source) {
  Parser p(lex(source));

  bool have_params = false, have_states = false;
  std::vector<Declaration> params;
  std::vector<std::string> states;
  struct Equation {
    std::string state;
    int line, col;
    NodePtr expr;
  };
  std::vector<Equation> equations;

  auto find_name = [](const auto& vec, const std::string& name) {
    for (size_t i = 0; i < vec.size(); ++i) {
      if constexpr (std::is_same_v<std::decay_t<decltype(vec[0])>, std::string>) {
        if (vec[i] == name) return static_cast<long>(i);
      } else {
        if (vec[i].name == name) return static_cast<long>(i);
      }
    }
    return -1L;
  };

  auto parse_bound = [&](const char* side) {
    double sign = 1.0;
    if (p.at_sym('-')) {
      p.get();
      sign = -1.0;
    } else if (p.at_sym('+')) {
      p.get();
    }
    const Token tok = p.get();
    if (tok.type == TokType::Number) return sign * tok.num;
    if (tok.type == TokType::Ident &&
        (tok.text == "inf" || tok.text == "Inf" || tok.text == "INF")) {
      return sign * arma::datum::inf;
    }
    throw DslError(std::string("expected a number or inf for the ") + side + " bound",
                   tok.line, tok.col);
  };

  p.skip_seps();
  while (p.peek().type != TokType::End) {
    const Token head = p.get();
    if (head.type != TokType::Ident) {
      throw DslError("expected 'params:', 'states:', or an equation 'd<state> = ...'",
                     head.line, head.col);
    }

    if (head.text == "params" && p.at_sym(':')) {
      if (have_params) throw DslError("duplicate params: line", head.line, head.col);
      have_params = true;
      p.get();  // ':'
      while (p.peek().type == TokType::Ident) {
        const Token name = p.get();
        if (name.text == "t") {
          throw DslError("'t' is reserved for the time symbol", name.line, name.col);
        }
        if (find_name(params, name.text) >= 0) {
          throw DslError("duplicate parameter '" + name.text + "'", name.line, name.col);
        }
        double lo = -arma::datum::inf, hi = arma::datum::inf;
        if (p.at_sym('[')) {
          p.get();
          lo = parse_bound("lower");
          p.expect_sym(',', "between the parameter bounds");
          hi = parse_bound("upper");
          p.expect_sym(']', "to close the parameter bounds");
          if (lo > hi) {
            throw DslError("lower bound exceeds upper bound for '" + name.text + "'",
                           name.line, name.col);
          }
        }
        params.push_back({name.text, lo, hi});
      }
      if (p.peek().type != TokType::Sep && p.peek().type != TokType::End) {
        throw DslError("unexpected token in params: line", p.peek().line, p.peek().col);
      }
      p.skip_seps();
      continue;
    }

    if (head.text == "states" && p.at_sym(':')) {
      if (have_states) throw DslError("duplicate states: line", head.line, head.col);
      have_states = true;
      p.get();  // ':'
      while (p.peek().type == TokType::Ident) {
        const Token name = p.get();
        if (name.text == "t") {
          throw DslError("'t' is reserved for the time symbol", name.line, name.col);
        }
        if (find_name(states, name.text) >= 0) {
          throw DslError("duplicate state '" + name.text + "'", name.line, name.col);
        }
        states.push_back(name.text);
      }
      if (states.empty()) {
        throw DslError("states: line declares no states", head.line, head.col);
      }
      if (p.peek().type != TokType::Sep && p.peek().type != TokType::End) {
        throw DslError("unexpected token in states: line", p.peek().line, p.peek().col);
      }
      p.skip_seps();
      continue;
    }

    // Equation: d<state> = expr
    if (head.text.size() < 2 || head.text[0] != 'd') {
      throw DslError("expected an equation of the form 'd<state> = ...', got '" +
                         head.text + "'",
                     head.line, head.col);
    }
    const std::string state_name = head.text.substr(1);
    p.expect_sym('=', "after '" + head.text + "'");
    Equation eq;
    eq.state = state_name;
    eq.line = head.line;
    eq.col = head.col;
    eq.expr = p.parse_expr();
    if (p.peek().type != TokType::Sep && p.peek().type != TokType::End) {
      throw DslError("unexpected token after the equation for '" + state_name + "'",
                     p.peek().line, p.peek().col);
    }
    for (const Equation& prev : equations) {
      if (prev.state == state_name) {
        throw DslError("duplicate equation for state '" + state_name + "'", eq.line,
                       eq.col);
      }
    }
    equations.push_back(std::move(eq));
    p.skip_seps();
  }

  if (equations.empty()) {
    throw DslError("no equations found", 1, 1);
  }

  // States: declared explicitly, or inferred from equation left-hand sides.
  if (have_states) {
    for (const Equation& eq : equations) {
      if (find_name(states, eq.state) < 0) {
        throw DslError("equation for undeclared state '" + eq.state + "'", eq.line,
                       eq.col);
      }
    }
    for (const std::string& s : states) {
      bool found = false;
      for (const Equation& eq : equations) found = found || eq.state == s;
      if (!found) {
        const Token& end = p.peek();
        throw DslError("missing equation for state '" + s + "'", end.line, end.col);
      }
    }
  } else {
    for (const Equation& eq : equations) states.push_back(eq.state);
  }

  // Resolve identifiers; undeclared names become implicit parameters only
  // when no params: line was given.
  std::function<void(Node&)> resolve = [&](Node& node) {
    if (node.a) resolve(*node.a);
    if (node.b) resolve(*node.b);
    if (node.kind != NodeKind::Ident) return;
    const long si = find_name(states, node.name);
    if (si >= 0) {
      node.kind = NodeKind::State;
      node.index = static_cast<arma::uword>(si);
      return;
    }
    const long pi = find_name(params, node.name);
    if (pi >= 0) {
      node.kind = NodeKind::Param;
      node.index = static_cast<arma::uword>(pi);
      return;
    }
    if (node.name == "t") {
      node.kind = NodeKind::Time;
      return;
    }
    if (have_params) {
      throw DslError("undefined symbol '" + node.name +
                         "' (not a declared state, parameter, or t)",
                     node.line, node.col);
    }
    params.push_back({node.name, -arma::datum::inf, arma::datum::inf});
    node.kind = NodeKind::Param;
    node.index = params.size() - 1;
  };

  auto model = std::make_shared<DslModel>();
  model->states = states;
  model->programs.resize(states.size());
  // Resolve in state order so implicit parameter numbering is deterministic.
  for (size_t d = 0; d < states.size(); ++d) {
    for (Equation& eq : equations) {
      if (eq.state == states[d]) {
        resolve(*eq.expr);
        model->programs[d] = compile(*eq.expr);
        break;
      }
    }
  }
  for (const Declaration& decl : params) model->params.push_back(decl.name);
  model->lower.set_size(params.size());
  model->upper.set_size(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    model->lower(i) = params[i].lower;
    model->upper(i) = params[i].upper;
  }

  const arma::uword dim_x = model->states.size();
  const arma::uword dim_theta = model->params.size();

  OdeSystem sys;
  sys.name = "dsl";
  sys.dim_x = dim_x;
  sys.dim_theta = dim_theta;
  sys.state_names = model->states;
  sys.theta_names = model->params;
  sys.theta_lower = model->lower;
  sys.theta_upper = model->upper;

  sys.f = [model, dim_x](const arma::vec& theta, const arma::mat& x,
                         const arma::vec& tvec) {
    arma::mat out(x.n_rows, dim_x);
    arma::uword depth = 1;
    for (const Program& prog : model->programs) depth = std::max(depth, prog.max_depth);
    std::vector<double> stack(depth);
    std::vector<double> state(dim_x);
    for (arma::uword r = 0; r < x.n_rows; ++r) {
      for (arma::uword i = 0; i < dim_x; ++i) state[i] = x(r, i);
      for (arma::uword d = 0; d < dim_x; ++d) {
        out(r, d) =
            eval_plain(model->programs[d], state.data(), theta.memptr(), tvec(r), stack);
      }
    }
    return out;
  };
  sys.jac_x = [model, dim_x, dim_theta](const arma::vec& theta, const arma::mat& x,
                                        const arma::vec& tvec) {
    arma::cube dx(x.n_rows, dim_x, dim_x, arma::fill::zeros);
    arma::uword depth = 1;
    for (const Program& prog : model->programs) depth = std::max(depth, prog.max_depth);
    std::vector<double> stack(depth);
    std::vector<double> state(dim_x);
    arma::mat grad(depth, dim_x + dim_theta);
    for (arma::uword r = 0; r < x.n_rows; ++r) {
      for (arma::uword i = 0; i < dim_x; ++i) state[i] = x(r, i);
      for (arma::uword d = 0; d < dim_x; ++d) {
        eval_dual(model->programs[d], state.data(), theta.memptr(), tvec(r), dim_x,
                  stack, grad);
        for (arma::uword i = 0; i < dim_x; ++i) dx(r, i, d) = grad(0, i);
      }
    }
    return dx;
  };
  sys.jac_theta = [model, dim_x, dim_theta](const arma::vec& theta, const arma::mat& x,
                                            const arma::vec& tvec) {
    arma::cube dt(x.n_rows, dim_theta, dim_x, arma::fill::zeros);
    arma::uword depth = 1;
    for (const Program& prog : model->programs) depth = std::max(depth, prog.max_depth);
    std::vector<double> stack(depth);
    std::vector<double> state(dim_x);
    arma::mat grad(depth, dim_x + dim_theta);
    for (arma::uword r = 0; r < x.n_rows; ++r) {
      for (arma::uword i = 0; i < dim_x; ++i) state[i] = x(r, i);
      for (arma::uword d = 0; d < dim_x; ++d) {
        eval_dual(model->programs[d], state.data(), theta.memptr(), tvec(r), dim_x,
                  stack, grad);
        for (arma::uword i = 0; i < dim_theta; ++i) dt(r, i, d) = grad(0, dim_x + i);
      }
    }
    return dt;
  };
  return sys;
}

}  // namespace magi
