"""Scalar expression trees: parsing, evaluation, exact differentiation.

Every coefficient function of a diffusion (``sigma``, drift, killing rate,
source, boundary data, cutoff profiles, test functions) is carried as an
immutable expression tree over the spatial variables ``x1..xn`` and the time
variable ``t``.  Trees are frozen dataclasses, so they are hashable, support
structural equality and are safe to share across threads.

Grammar (whitespace insensitive)::

    expr   := ['+'|'-'] term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' base)?
    base   := number | 'x'digits | 't' | ident '(' expr ')' | '(' expr ')'
              | '-' base

with ``ident`` one of ``sin cos exp log sqrt cosh sinh tanh abs``.  Integer
exponents with |k| <= 8 are expanded into repeated multiplication at parse
time, so that negative bases work; other exponents keep a ``pow`` node that
is only defined for positive bases.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "TimeVar",
    "Unary",
    "Binary",
    "BumpExp",
    "Predicate",
    "Comparison",
    "And",
    "Or",
    "TruePredicate",
    "BoxPredicate",
    "ExprError",
    "ExprSyntaxError",
    "ExprDomainError",
    "parse",
    "parse_predicate",
    "to_string",
    "eval_expr",
    "diff",
    "simplify",
    "max_var_index",
    "uses_time",
    "interval_eval",
    "compile_numpy",
    "compile_predicate_numpy",
    "bump_window",
    "smooth_step",
]


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self) -> None:
        v = float(self.value)
        if v == 0.0:
            v = 0.0  # normalize -0.0
        object.__setattr__(self, "value", v)


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class TimeVar:
    pass


@dataclass(frozen=True)
class Unary:
    op: str  # neg sin cos exp log sqrt cosh sinh tanh abs
    child: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class BumpExp:
    """Internal smooth-cutoff kernel: exp(-1/v)/v^order for v > 0, else 0.

    Not reachable from the grammar; used to build mollifiers and compactly
    supported test functions that stay C^infinity with exact derivatives:
    d/dv BumpExp(k, v) = BumpExp(k+2, v) - k*BumpExp(k+1, v).
    """

    order: int
    child: "Expr"


Expr = Union[Const, Var, TimeVar, Unary, Binary, BumpExp]

UNARY_OPS = ("neg", "sin", "cos", "exp", "log", "sqrt", "cosh", "sinh", "tanh", "abs")
FUNCTION_NAMES = tuple(op for op in UNARY_OPS if op != "neg")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class ExprDomainError(ExprError):
    pass


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op><=|>=|[-+*/^()<>,]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num ident op end
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            if source[pos:].strip() == "":
                break
            raise ExprSyntaxError(f"unexpected character {source[pos:].lstrip()[0]!r}", pos)
        if m.group("num") is not None:
            tokens.append(_Token("num", m.group("num"), m.start("num")))
        elif m.group("ident") is not None:
            tokens.append(_Token("ident", m.group("ident"), m.start("ident")))
        else:
            tokens.append(_Token("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


_VAR_RE = re.compile(r"^x(\d+)$")

_POW_EXPAND_MAX = 8


class _Parser:
    def __init__(self, source: str, n: int):
        self.source = source
        self.n = n
        self.tokens = _tokenize(source)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind != "op" or tok.text != text:
            raise ExprSyntaxError(f"expected {text!r}", tok.pos)
        return self.advance()

    # expr := ['+'|'-'] term (('+'|'-') term)*
    def parse_expr(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text in "+-":
            self.advance()
            node = self.parse_term()
            if tok.text == "-":
                node = Const(-node.value) if isinstance(node, Const) else Unary("neg", node)
        else:
            node = self.parse_term()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "+-":
                self.advance()
                rhs = self.parse_term()
                node = Binary(tok.text, node, rhs)
            else:
                return node

    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text in "*/":
                self.advance()
                rhs = self.parse_factor()
                node = Binary(tok.text, node, rhs)
            else:
                return node

    def parse_factor(self) -> Expr:
        base = self.parse_base()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.advance()
            exponent = self.parse_base()
            return _make_pow(base, exponent)
        return base

    def parse_base(self) -> Expr:
        tok = self.advance()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "op" and tok.text == "-":
            node = self.parse_base()
            return Const(-node.value) if isinstance(node, Const) else Unary("neg", node)
        if tok.kind == "op" and tok.text == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        if tok.kind == "ident":
            if tok.text == "t":
                return TimeVar()
            m = _VAR_RE.match(tok.text)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= self.n:
                    raise ExprSyntaxError(
                        f"variable index out of range: {tok.text} with n={self.n}", tok.pos
                    )
                return Var(idx)
            if tok.text in FUNCTION_NAMES:
                self.expect_op("(")
                inner = self.parse_expr()
                self.expect_op(")")
                return Unary(tok.text, inner)
            raise ExprSyntaxError(f"unknown identifier {tok.text!r}", tok.pos)
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.pos)


def _make_pow(base: Expr, exponent: Expr) -> Expr:
    """Expand small integer exponents as repeated multiplication."""
    if isinstance(exponent, Const):
        c = exponent.value
        if c == int(c) and abs(c) <= _POW_EXPAND_MAX:
            k = int(c)
            if k == 0:
                return Const(1.0)
            node = base
            for _ in range(abs(k) - 1):
                node = Binary("*", node, base)
            if k < 0:
                node = Binary("/", Const(1.0), node)
            return node
    return Binary("^", base, exponent)


def parse(source: str, n: int) -> Expr:
    """Parse ``source`` into an expression tree over x1..xn and t."""
    p = _Parser(source, n)
    node = p.parse_expr()
    tok = p.peek()
    if tok.kind != "end":
        raise ExprSyntaxError(f"trailing input {tok.text!r}", tok.pos)
    return node


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC_ATOM = 4
_PREC_POW = 3
_PREC_MUL = 2
_PREC_ADD = 1


def _prec(e: Expr) -> int:
    # anything printing with a leading '-' gets additive precedence so that
    # it is parenthesized inside products and quotients
    if isinstance(e, (Const, Var, TimeVar)):
        if isinstance(e, Const) and e.value < 0:
            return _PREC_ADD
        return _PREC_ATOM
    if isinstance(e, BumpExp):
        return _PREC_ATOM
    if isinstance(e, Unary):
        return _PREC_ADD if e.op == "neg" else _PREC_ATOM
    if e.op == "^":
        return _PREC_POW
    if e.op in "*/":
        return _PREC_MUL
    return _PREC_ADD


def _wrap(e: Expr, minimum: int) -> str:
    s = to_string(e)
    return f"({s})" if _prec(e) < minimum else s


def to_string(e: Expr) -> str:
    """Render an expression; round-trips through :func:`parse`."""
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, TimeVar):
        return "t"
    if isinstance(e, BumpExp):
        return f"__bump{e.order}({to_string(e.child)})"
    if isinstance(e, Unary):
        if e.op == "neg":
            # '-' binds tighter than '^' in the grammar, so wrap pow children
            return f"-{_wrap(e.child, _PREC_ATOM)}"
        return f"{e.op}({to_string(e.child)})"
    if e.op in "+-":
        return f"{_wrap(e.left, _PREC_ADD)} {e.op} {_wrap(e.right, _PREC_ADD + 1)}"
    if e.op in "*/":
        return f"{_wrap(e.left, _PREC_MUL)} {e.op} {_wrap(e.right, _PREC_MUL + 1)}"
    # '^': grammar only allows bases on both sides
    return f"{_wrap(e.left, _PREC_ATOM)}^{_wrap(e.right, _PREC_ATOM)}"


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def eval_expr(e: Expr, x: Sequence[float], t: float = 0.0) -> float:
    """Evaluate at a point; raises :class:`ExprDomainError` naming the node."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return float(x[e.index - 1])
    if isinstance(e, TimeVar):
        return float(t)
    if isinstance(e, BumpExp):
        v = eval_expr(e.child, x, t)
        if v <= 0.0:
            return 0.0
        return math.exp(-1.0 / v - e.order * math.log(v))
    if isinstance(e, Unary):
        v = eval_expr(e.child, x, t)
        try:
            if e.op == "neg":
                return -v
            if e.op == "log":
                if v <= 0.0:
                    raise ExprDomainError(f"log of non-positive value in {to_string(e)}")
                return math.log(v)
            if e.op == "sqrt":
                if v < 0.0:
                    raise ExprDomainError(f"sqrt of negative value in {to_string(e)}")
                return math.sqrt(v)
            return getattr(math, e.op)(v) if e.op != "abs" else abs(v)
        except OverflowError:
            raise ExprDomainError(f"overflow in {to_string(e)}") from None
    # Binary
    a = eval_expr(e.left, x, t)
    b = eval_expr(e.right, x, t)
    try:
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0.0:
                raise ExprDomainError(f"division by zero in {to_string(e)}")
            return a / b
        # pow
        if a < 0.0 and b != int(b):
            raise ExprDomainError(f"negative base with non-integer exponent in {to_string(e)}")
        if a == 0.0 and b < 0.0:
            raise ExprDomainError(f"zero base with negative exponent in {to_string(e)}")
        return math.pow(a, b)
    except OverflowError:
        raise ExprDomainError(f"overflow in {to_string(e)}") from None


# ---------------------------------------------------------------------------
# Simplifying constructors and differentiation
# ---------------------------------------------------------------------------

_ZERO = Const(0.0)
_ONE = Const(1.0)


def _is_const(e: Expr, v: float | None = None) -> bool:
    return isinstance(e, Const) and (v is None or e.value == v)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if a == b:
        return _ZERO
    return Binary("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Binary("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return _ZERO
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Binary("/", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.child
    return Unary("neg", a)


def _pow(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return _ONE
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            return Const(math.pow(a.value, b.value))
        except (ValueError, OverflowError):
            pass
    return Binary("^", a, b)


def _unary(op: str, child: Expr) -> Expr:
    if op == "neg":
        return _neg(child)
    if isinstance(child, Const):
        try:
            return Const(eval_expr(Unary(op, child), ()))
        except ExprError:
            pass
    return Unary(op, child)


def simplify(e: Expr) -> Expr:
    """One bottom-up pass of local rewrites (0/1 identities, constant folding)."""
    if isinstance(e, (Const, Var, TimeVar)):
        return e
    if isinstance(e, BumpExp):
        return BumpExp(e.order, simplify(e.child))
    if isinstance(e, Unary):
        return _unary(e.op, simplify(e.child))
    left = simplify(e.left)
    right = simplify(e.right)
    return {"+": _add, "-": _sub, "*": _mul, "/": _div, "^": _pow}[e.op](left, right)


def diff(e: Expr, wrt: int | str) -> Expr:
    """Exact symbolic derivative with respect to ``x<wrt>`` or ``'t'``."""
    by_time = wrt == "t"
    if not by_time and (not isinstance(wrt, int) or wrt < 1):
        raise ValueError(f"wrt must be a 1-based variable index or 't', got {wrt!r}")
    if isinstance(e, Const):
        return _ZERO
    if isinstance(e, Var):
        return _ONE if (not by_time and e.index == wrt) else _ZERO
    if isinstance(e, TimeVar):
        return _ONE if by_time else _ZERO
    if isinstance(e, BumpExp):
        du = diff(e.child, wrt)
        if _is_const(du, 0.0):
            return _ZERO
        k = e.order
        dkernel = _sub(BumpExp(k + 2, e.child), _mul(Const(float(k)), BumpExp(k + 1, e.child)))
        return _mul(dkernel, du)
    if isinstance(e, Unary):
        u = e.child
        du = diff(u, wrt)
        if _is_const(du, 0.0):
            return _ZERO
        op = e.op
        if op == "neg":
            return _neg(du)
        if op == "sin":
            return _mul(_unary("cos", u), du)
        if op == "cos":
            return _neg(_mul(_unary("sin", u), du))
        if op == "exp":
            return _mul(Unary("exp", u), du)
        if op == "log":
            return _div(du, u)
        if op == "sqrt":
            return _div(du, _mul(Const(2.0), Unary("sqrt", u)))
        if op == "cosh":
            return _mul(_unary("sinh", u), du)
        if op == "sinh":
            return _mul(_unary("cosh", u), du)
        if op == "tanh":
            th = Unary("tanh", u)
            return _mul(_sub(_ONE, _mul(th, th)), du)
        if op == "abs":
            return _div(_mul(u, du), Unary("abs", u))
        raise ExprError(f"cannot differentiate {op}")
    # Binary
    a, b = e.left, e.right
    da, db = diff(a, wrt), diff(b, wrt)
    if e.op == "+":
        return _add(da, db)
    if e.op == "-":
        return _sub(da, db)
    if e.op == "*":
        return _add(_mul(da, b), _mul(a, db))
    if e.op == "/":
        return _sub(_div(da, b), _div(_mul(a, db), _mul(b, b)))
    # pow
    if isinstance(b, Const):
        c = b.value
        return _mul(_mul(Const(c), _pow(a, Const(c - 1.0))), da)
    # general u^v: u^v * (dv*log(u) + v*du/u)
    return _mul(
        Binary("^", a, b),
        _add(_mul(db, _unary("log", a)), _div(_mul(b, da), a)),
    )


# ---------------------------------------------------------------------------
# Visitors
# ---------------------------------------------------------------------------

def max_var_index(e: Expr) -> int:
    if isinstance(e, Var):
        return e.index
    if isinstance(e, (Unary, BumpExp)):
        return max_var_index(e.child)
    if isinstance(e, Binary):
        return max(max_var_index(e.left), max_var_index(e.right))
    return 0


def uses_time(e: Expr) -> bool:
    if isinstance(e, TimeVar):
        return True
    if isinstance(e, (Unary, BumpExp)):
        return uses_time(e.child)
    if isinstance(e, Binary):
        return uses_time(e.left) or uses_time(e.right)
    return False


# ---------------------------------------------------------------------------
# Interval arithmetic (conservative bounds over a box)
# ---------------------------------------------------------------------------

def interval_eval(
    e: Expr,
    lows: Sequence[float],
    highs: Sequence[float],
    t_interval: tuple[float, float] = (0.0, 0.0),
) -> tuple[float, float]:
    """Conservative enclosure of the range of ``e`` over an axis-aligned box."""
    inf = math.inf

    def rec(node: Expr) -> tuple[float, float]:
        if isinstance(node, Const):
            return node.value, node.value
        if isinstance(node, Var):
            return float(lows[node.index - 1]), float(highs[node.index - 1])
        if isinstance(node, TimeVar):
            return t_interval
        if isinstance(node, BumpExp):
            k = node.order
            hi = 1.0 if k == 0 else (k / math.e) ** k
            return 0.0, hi
        if isinstance(node, Unary):
            lo, hi = rec(node.child)
            op = node.op
            if op == "neg":
                return -hi, -lo
            if op in ("sin", "cos"):
                return -1.0, 1.0
            if op == "tanh":
                return math.tanh(lo), math.tanh(hi)
            if op == "exp":
                return (math.exp(lo) if lo > -700 else 0.0,
                        math.exp(hi) if hi < 700 else inf)
            if op == "sinh":
                return math.sinh(max(lo, -700.0)), math.sinh(min(hi, 700.0))
            if op == "cosh":
                m = math.cosh(min(abs(lo), abs(hi))) if (lo > 0 or hi < 0) else 1.0
                return m, math.cosh(min(max(abs(lo), abs(hi)), 700.0))
            if op == "abs":
                if lo >= 0:
                    return lo, hi
                if hi <= 0:
                    return -hi, -lo
                return 0.0, max(-lo, hi)
            if op == "log":
                if lo <= 0:
                    return -inf, (math.log(hi) if hi > 0 else inf)
                return math.log(lo), math.log(hi)
            if op == "sqrt":
                return math.sqrt(max(lo, 0.0)), math.sqrt(max(hi, 0.0))
            raise ExprError(f"interval rule missing for {op}")
        la, ha = rec(node.left)
        lb, hb = rec(node.right)
        if node.op == "+":
            return la + lb, ha + hb
        if node.op == "-":
            return la - hb, ha - lb
        if node.op == "*":
            prods = [la * lb, la * hb, ha * lb, ha * hb]
            return min(prods), max(prods)
        if node.op == "/":
            if lb <= 0.0 <= hb:
                return -inf, inf
            quots = [la / lb, la / hb, ha / lb, ha / hb]
            return min(quots), max(quots)
        # pow: only tight for positive bases, otherwise give up
        if la > 0.0:
            corners = []
            for base in (la, ha):
                for expo in (lb, hb):
                    corners.append(math.pow(base, expo))
            return min(corners), max(corners)
        return -inf, inf

    return rec(e)


# ---------------------------------------------------------------------------
# Vectorized numpy compilation
# ---------------------------------------------------------------------------

def _phik(v: np.ndarray, k: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape, dtype=float)
    m = v > 0.0
    if np.any(m):
        vm = v[m]
        out[m] = np.exp(-1.0 / vm - k * np.log(vm))
    return out


def _emit_numpy(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return f"X[..., {e.index - 1}]"
    if isinstance(e, TimeVar):
        return "T"
    if isinstance(e, BumpExp):
        return f"_phik({_emit_numpy(e.child)}, {e.order})"
    if isinstance(e, Unary):
        inner = _emit_numpy(e.child)
        if e.op == "neg":
            return f"(-({inner}))"
        fn = {"abs": "np.abs"}.get(e.op, f"np.{e.op}")
        return f"{fn}({inner})"
    a, b = _emit_numpy(e.left), _emit_numpy(e.right)
    if e.op == "^":
        return f"np.power({a}, {b})"
    return f"(({a}) {e.op} ({b}))"


def compile_numpy(e: Expr) -> Callable[..., np.ndarray]:
    """Compile to ``f(X, t=0.0)`` with X of shape (..., n); fully vectorized.

    Out-of-domain inputs yield nan/inf rather than exceptions; callers that
    need precise diagnostics use :func:`eval_expr`.
    """
    src = _emit_numpy(e)
    code = (
        "def _f(X, t=0.0):\n"
        "    X = np.asarray(X, dtype=float)\n"
        "    T = np.asarray(t, dtype=float)\n"
        "    with np.errstate(all='ignore'):\n"
        f"        out = {src}\n"
        "    return np.broadcast_to(np.asarray(out, dtype=float), X.shape[:-1]).copy()\n"
    )
    ns = {"np": np, "_phik": _phik}
    exec(code, ns)
    return ns["_f"]


# ---------------------------------------------------------------------------
# Scalar source emission (consumed by the numba path engine)
# ---------------------------------------------------------------------------

class ScalarEmitter:
    """Emits SSA-style scalar statements for an expression tree.

    Spatial variables map to the names in ``var_names`` and time to
    ``t_name``; the generated lines use only ``math.*`` calls and arithmetic,
    so they can be compiled by numba in nopython mode.
    """

    def __init__(self, var_names: Sequence[str], t_name: str = "tcur", prefix: str = "v"):
        self.var_names = list(var_names)
        self.t_name = t_name
        self.prefix = prefix
        self.lines: list[str] = []
        self._count = 0

    def fresh(self) -> str:
        self._count += 1
        return f"{self.prefix}{self._count}"

    def emit(self, e: Expr) -> str:
        if isinstance(e, Const):
            return repr(e.value)
        if isinstance(e, Var):
            return self.var_names[e.index - 1]
        if isinstance(e, TimeVar):
            return self.t_name
        name = self.fresh()
        if isinstance(e, BumpExp):
            v = self.emit(e.child)
            tmp = self.fresh()
            self.lines.append(f"{tmp} = {v}")
            if e.order == 0:
                self.lines.append(
                    f"{name} = math.exp(-1.0 / {tmp}) if {tmp} > 0.0 else 0.0"
                )
            else:
                self.lines.append(
                    f"{name} = math.exp(-1.0 / {tmp} - {float(e.order)!r} * math.log({tmp}))"
                    f" if {tmp} > 0.0 else 0.0"
                )
            return name
        if isinstance(e, Unary):
            v = self.emit(e.child)
            if e.op == "neg":
                self.lines.append(f"{name} = -({v})")
            elif e.op == "abs":
                self.lines.append(f"{name} = abs({v})")
            else:
                self.lines.append(f"{name} = math.{e.op}({v})")
            return name
        a = self.emit(e.left)
        b = self.emit(e.right)
        if e.op == "^":
            self.lines.append(f"{name} = ({a}) ** ({b})")
        else:
            self.lines.append(f"{name} = ({a}) {e.op} ({b})")
        return name

    def emit_predicate(self, p: "Predicate") -> str:
        if isinstance(p, TruePredicate):
            return "True"
        if isinstance(p, BoxPredicate):
            parts = []
            for i, (lo, hi) in enumerate(zip(p.lows, p.highs)):
                if lo != -math.inf:
                    parts.append(f"({self.var_names[i]} > {repr(float(lo))})")
                if hi != math.inf:
                    parts.append(f"({self.var_names[i]} < {repr(float(hi))})")
            return " and ".join(parts) if parts else "True"
        if isinstance(p, Comparison):
            a = self.emit(p.left)
            b = self.emit(p.right)
            return f"(({a}) {p.op} ({b}))"
        if isinstance(p, And):
            return "(" + " and ".join(self.emit_predicate(q) for q in p.terms) + ")"
        if isinstance(p, Or):
            return "(" + " or ".join(self.emit_predicate(q) for q in p.terms) + ")"
        raise ExprError(f"unknown predicate {p!r}")


# ---------------------------------------------------------------------------
# Predicates (domain descriptions)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    op: str  # < <= > >=
    left: Expr
    right: Expr


@dataclass(frozen=True)
class And:
    terms: tuple["Predicate", ...]


@dataclass(frozen=True)
class Or:
    terms: tuple["Predicate", ...]


@dataclass(frozen=True)
class TruePredicate:
    pass


@dataclass(frozen=True)
class BoxPredicate:
    """Open axis-aligned box; the engine can apply exit corrections to it."""

    lows: tuple[float, ...]
    highs: tuple[float, ...]


Predicate = Union[Comparison, And, Or, TruePredicate, BoxPredicate]


def predicate_holds(p: Predicate, x: Sequence[float], t: float = 0.0) -> bool:
    if isinstance(p, TruePredicate):
        return True
    if isinstance(p, BoxPredicate):
        return all(lo < xi < hi for xi, lo, hi in zip(x, p.lows, p.highs))
    if isinstance(p, Comparison):
        a = eval_expr(p.left, x, t)
        b = eval_expr(p.right, x, t)
        return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[p.op]
    if isinstance(p, And):
        return all(predicate_holds(q, x, t) for q in p.terms)
    if isinstance(p, Or):
        return any(predicate_holds(q, x, t) for q in p.terms)
    raise ExprError(f"unknown predicate {p!r}")


def predicate_is_open(p: Predicate) -> bool:
    """True when only strict comparisons occur (the set is then open)."""
    if isinstance(p, (TruePredicate, BoxPredicate)):
        return True
    if isinstance(p, Comparison):
        return p.op in ("<", ">")
    return all(predicate_is_open(q) for q in p.terms)


def compile_predicate_numpy(p: Predicate) -> Callable[..., np.ndarray]:
    def emit(q: Predicate) -> str:
        if isinstance(q, TruePredicate):
            return "np.ones(X.shape[:-1], dtype=bool)"
        if isinstance(q, BoxPredicate):
            parts = []
            for i, (lo, hi) in enumerate(zip(q.lows, q.highs)):
                if lo != -math.inf:
                    parts.append(f"(X[..., {i}] > {repr(float(lo))})")
                if hi != math.inf:
                    parts.append(f"(X[..., {i}] < {repr(float(hi))})")
            return "(" + " & ".join(parts) + ")" if parts else "np.ones(X.shape[:-1], dtype=bool)"
        if isinstance(q, Comparison):
            return f"(({_emit_numpy(q.left)}) {q.op} ({_emit_numpy(q.right)}))"
        if isinstance(q, And):
            return "(" + " & ".join(emit(term) for term in q.terms) + ")"
        if isinstance(q, Or):
            return "(" + " | ".join(emit(term) for term in q.terms) + ")"
        raise ExprError(f"unknown predicate {q!r}")

    code = (
        "def _p(X, t=0.0):\n"
        "    X = np.asarray(X, dtype=float)\n"
        "    T = np.asarray(t, dtype=float)\n"
        "    with np.errstate(all='ignore'):\n"
        f"        out = {emit(p)}\n"
        "    return np.broadcast_to(np.asarray(out, dtype=bool), X.shape[:-1]).copy()\n"
    )
    ns = {"np": np, "_phik": _phik}
    exec(code, ns)
    return ns["_p"]


class _PredicateParser(_Parser):
    def parse_pred(self) -> Predicate:
        terms = [self.parse_and()]
        while self.peek().kind == "ident" and self.peek().text == "or":
            self.advance()
            terms.append(self.parse_and())
        return terms[0] if len(terms) == 1 else Or(tuple(terms))

    def parse_and(self) -> Predicate:
        terms = [self.parse_atom()]
        while self.peek().kind == "ident" and self.peek().text == "and":
            self.advance()
            terms.append(self.parse_atom())
        return terms[0] if len(terms) == 1 else And(tuple(terms))

    def parse_atom(self) -> Predicate:
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "true":
            self.advance()
            return TruePredicate()
        if tok.kind == "op" and tok.text == "(":
            save = self.i
            self.advance()
            try:
                inner = self.parse_pred()
                self.expect_op(")")
                if self.peek().kind == "op" and self.peek().text in ("<", "<=", ">", ">="):
                    self.i = save  # it was a parenthesized expression, not a predicate
                else:
                    return inner
            except ExprSyntaxError:
                self.i = save
        left = self.parse_expr()
        tok = self.peek()
        if tok.kind != "op" or tok.text not in ("<", "<=", ">", ">="):
            raise ExprSyntaxError("expected comparison operator", tok.pos)
        self.advance()
        right = self.parse_expr()
        return Comparison(tok.text, left, right)


def parse_predicate(source: str, n: int) -> Predicate:
    p = _PredicateParser(source, n)
    node = p.parse_pred()
    tok = p.peek()
    if tok.kind != "end":
        raise ExprSyntaxError(f"trailing input {tok.text!r}", tok.pos)
    return node


# ---------------------------------------------------------------------------
# Smooth window builders
# ---------------------------------------------------------------------------

def smooth_step(u: Expr) -> Expr:
    """C^infinity ramp: 0 for u <= 0, 1 for u >= 1, strictly increasing between."""
    phi_u = BumpExp(0, u)
    phi_cu = BumpExp(0, _sub(_ONE, u))
    return _div(phi_u, _add(phi_u, phi_cu))


def bump_window(var: Expr, lo: float, hi: float, margin: float) -> Expr:
    """Smooth 1-D window: 1 on [lo+margin, hi-margin], 0 outside (lo, hi)."""
    if not (hi - lo > 2.0 * margin > 0.0):
        raise ValueError("window needs hi - lo > 2*margin > 0")
    up = smooth_step(_div(_sub(var, Const(lo)), Const(margin)))
    down = smooth_step(_div(_sub(Const(hi), var), Const(margin)))
    return _mul(up, down)
