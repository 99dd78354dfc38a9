"""Symbolic scalar expressions: parse, print, evaluate, differentiate.

The expression language covers rational/decimal constants, named scalars
(plant states and parameters), measurement-derivative variables written
``w<i>_<j>`` (the j-th measured signal differentiated i times), the four
elementary functions exp/ln/sin/cos, and +, -, *, /, integer powers.

Trees are immutable; every operation returns a new tree.  `simplify` does
constant folding and light algebraic cleanup only.  It is deliberately not
canonical, so identity checking goes through `equivalent_numeric`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

FUNCTIONS = ("exp", "ln", "sin", "cos")

_W_NAME = re.compile(r"w(\d+)_(\d+)\Z")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ExprError(Exception):
    """Base class for expression-level failures."""


class ParseError(ExprError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} (column {pos} of {text!r})")
        self.text = text
        self.pos = pos


class EvalError(ExprError):
    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in '{subexpr}'")
        self.subexpr = subexpr


class IndeterminateEquivalence(ExprError):
    """Too many sample points failed to evaluate to decide equivalence."""


# ---------------------------------------------------------------------------
# nodes


@dataclass(frozen=True)
class Expr:
    def __str__(self) -> str:
        return to_text(self)

    def __add__(self, other):
        return Sum((self, as_expr(other)))

    def __radd__(self, other):
        return Sum((as_expr(other), self))

    def __sub__(self, other):
        return Sum((self, Neg(as_expr(other))))

    def __rsub__(self, other):
        return Sum((as_expr(other), Neg(self)))

    def __mul__(self, other):
        return Product((self, as_expr(other)))

    def __rmul__(self, other):
        return Product((as_expr(other), self))

    def __truediv__(self, other):
        return Quot(self, as_expr(other))

    def __rtruediv__(self, other):
        return Quot(as_expr(other), self)

    def __pow__(self, k):
        return Pow(self, k)

    def __neg__(self):
        return Neg(self)


@dataclass(frozen=True)
class Const(Expr):
    value: Fraction | float

    def __post_init__(self):
        if isinstance(self.value, bool) or not isinstance(self.value, (int, Fraction, float)):
            raise ExprError(f"bad constant {self.value!r}")
        if isinstance(self.value, int):
            object.__setattr__(self, "value", Fraction(self.value))


@dataclass(frozen=True)
class Sym(Expr):
    name: str

    def __post_init__(self):
        if not _IDENT.match(self.name):
            raise ExprError(f"bad symbol name {self.name!r}")


@dataclass(frozen=True)
class WVar(Expr):
    """Derivative of measured output j of order i, named ``w<i>_<j>``."""

    i: int
    j: int

    def __post_init__(self):
        if self.i < 0 or self.j < 1:
            raise ExprError(f"bad measurement-derivative index w{self.i}_{self.j}")

    @property
    def name(self) -> str:
        return f"w{self.i}_{self.j}"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Sum(Expr):
    terms: tuple[Expr, ...]


@dataclass(frozen=True)
class Product(Expr):
    factors: tuple[Expr, ...]


@dataclass(frozen=True)
class Quot(Expr):
    num: Expr
    den: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def __post_init__(self):
        if isinstance(self.exponent, bool) or not isinstance(self.exponent, int):
            raise ExprError(f"power exponent must be an integer, got {self.exponent!r}")


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr

    def __post_init__(self):
        if self.fn not in FUNCTIONS:
            raise ExprError(f"unknown function {self.fn!r}")


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, str):
        return parse(x)
    if isinstance(x, (int, Fraction, float)):
        return Const(x)
    raise ExprError(f"cannot interpret {x!r} as an expression")


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"(?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", text, pos)
        toks.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    toks.append(("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.k = 0

    def peek(self):
        return self.toks[self.k]

    def advance(self):
        tok = self.toks[self.k]
        self.k += 1
        return tok

    def fail(self, message):
        kind, val, pos = self.peek()
        raise ParseError(message, self.text, pos)

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek()[0] != "eof":
            self.fail(f"unexpected trailing input {self.peek()[1]!r}")
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.advance()[1]
            t = self.term()
            terms.append(t if op == "+" else Neg(t))
        return terms[0] if len(terms) == 1 else Sum(tuple(terms))

    def term(self) -> Expr:
        left = self.factor()
        run = [left]  # consecutive '*' factors collect into one n-ary product
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.advance()[1]
            f = self.factor()
            if op == "*":
                run.append(f)
            else:
                num = run[0] if len(run) == 1 else Product(tuple(run))
                run = [Quot(num, f)]
        return run[0] if len(run) == 1 else Product(tuple(run))

    def factor(self) -> Expr:
        b = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            sign = 1
            if self.peek()[0] == "op" and self.peek()[1] == "-":
                self.advance()
                sign = -1
            kind, val, pos = self.peek()
            if kind != "num" or "." in val or "e" in val or "E" in val:
                self.fail("exponent must be an integer literal")
            self.advance()
            return Pow(b, sign * int(val))
        return b

    def base(self) -> Expr:
        kind, val, pos = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Neg(self.base())
        if kind == "num":
            self.advance()
            if "." in val or "e" in val or "E" in val:
                return Const(float(val))
            return Const(Fraction(int(val)))
        if kind == "ident":
            self.advance()
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise ParseError(f"unknown function {val!r}", self.text, pos)
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            m = _W_NAME.match(val)
            if m:
                i, j = int(m.group(1)), int(m.group(2))
                if j < 1:
                    raise ParseError(
                        f"output index in {val!r} must be >= 1", self.text, pos
                    )
                return WVar(i, j)
            return Sym(val)
        if kind == "op" and val == "(":
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        if kind == "eof":
            self.fail("unexpected end of input")
        self.fail(f"unexpected token {val!r}")

    def expect(self, op):
        kind, val, pos = self.peek()
        if kind != "op" or val != op:
            self.fail(f"expected {op!r}")
        self.advance()


def parse(text: str) -> Expr:
    """Parse an expression string into a tree (no simplification)."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printing
#
# The printer inserts exactly the parentheses needed so that
# parse(to_text(parse(s))) == parse(s) for every parseable s.


def _fmt_const(v) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    return repr(v)


def _const_nonneg(e: Expr) -> bool:
    return isinstance(e, Const) and e.value >= 0


def _is_atom(e: Expr) -> bool:
    return isinstance(e, (Sym, WVar, Call)) or _const_nonneg(e)


def _pow_base_ok(e: Expr) -> bool:
    # a bare base reparses correctly if it is a symbol, a call, a nonnegative
    # integer or decimal constant, or a negation (unary minus binds tighter
    # than '^' in this grammar)
    if isinstance(e, (Sym, WVar, Call, Neg)):
        return True
    if isinstance(e, Const):
        v = e.value
        if isinstance(v, Fraction):
            return v >= 0 and v.denominator == 1
        return v >= 0
    return False


def to_text(e: Expr) -> str:
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Sym):
        return e.name
    if isinstance(e, WVar):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_text(e.arg)})"
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        return f"-{inner}" if _is_atom(e.arg) else f"-({inner})"
    if isinstance(e, Pow):
        b = to_text(e.base) if _pow_base_ok(e.base) else f"({to_text(e.base)})"
        return f"{b}^{e.exponent}"
    if isinstance(e, Quot):
        num = to_text(e.num) if not isinstance(e.num, Sum) else f"({to_text(e.num)})"
        den = (
            to_text(e.den)
            if _is_atom(e.den) or isinstance(e.den, Pow)
            else f"({to_text(e.den)})"
        )
        return f"{num}/{den}"
    if isinstance(e, Product):
        parts = []
        for idx, f in enumerate(e.factors):
            s = to_text(f)
            if isinstance(f, (Sum, Product)) or (idx > 0 and isinstance(f, (Neg, Quot))):
                s = f"({s})"
            parts.append(s)
        return "*".join(parts)
    if isinstance(e, Sum):
        out = []
        for idx, t in enumerate(e.terms):
            if idx > 0 and isinstance(t, Neg):
                body = to_text(t.arg)
                if isinstance(t.arg, Sum):
                    body = f"({body})"
                out.append(f" - {body}")
            else:
                body = to_text(t)
                if isinstance(t, Sum):
                    body = f"({body})"
                out.append(f" + {body}" if idx > 0 else body)
        return "".join(out)
    raise ExprError(f"cannot print {e!r}")


# ---------------------------------------------------------------------------
# free symbols


def free_symbols(e: Expr) -> tuple[set[str], set[tuple[int, int]]]:
    """Return (named symbols, measurement-derivative indices) used in e."""
    names: set[str] = set()
    wvars: set[tuple[int, int]] = set()

    def walk(x):
        if isinstance(x, Sym):
            names.add(x.name)
        elif isinstance(x, WVar):
            wvars.add((x.i, x.j))
        elif isinstance(x, Neg):
            walk(x.arg)
        elif isinstance(x, Sum):
            for t in x.terms:
                walk(t)
        elif isinstance(x, Product):
            for f in x.factors:
                walk(f)
        elif isinstance(x, Quot):
            walk(x.num)
            walk(x.den)
        elif isinstance(x, Pow):
            walk(x.base)
        elif isinstance(x, Call):
            walk(x.arg)

    walk(e)
    return names, wvars


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, bindings: dict | None = None, wvals: dict | None = None) -> float:
    """Evaluate to an IEEE double.

    `bindings` maps names to reals; `wvals` maps (i, j) index pairs to reals.
    Measurement-derivative variables also fall back to a `bindings` entry
    under their textual name, so a single flat map works too.
    """
    bindings = bindings or {}
    wvals = wvals or {}

    def ev(x) -> float:
        if isinstance(x, Const):
            return float(x.value)
        if isinstance(x, Sym):
            try:
                return float(bindings[x.name])
            except KeyError:
                raise EvalError(f"unbound symbol '{x.name}'", x) from None
        if isinstance(x, WVar):
            if (x.i, x.j) in wvals:
                return float(wvals[(x.i, x.j)])
            if x.name in bindings:
                return float(bindings[x.name])
            raise EvalError(f"unbound measurement derivative '{x.name}'", x)
        if isinstance(x, Neg):
            return -ev(x.arg)
        if isinstance(x, Sum):
            return math.fsum(ev(t) for t in x.terms)
        if isinstance(x, Product):
            acc = 1.0
            for f in x.factors:
                acc *= ev(f)
            return acc
        if isinstance(x, Quot):
            den = ev(x.den)
            if den == 0.0:
                raise EvalError("division by zero", x)
            return ev(x.num) / den
        if isinstance(x, Pow):
            b = ev(x.base)
            try:
                return float(b**x.exponent)
            except ZeroDivisionError:
                raise EvalError("zero raised to a negative power", x) from None
            except OverflowError:
                raise EvalError("overflow in power", x) from None
        if isinstance(x, Call):
            a = ev(x.arg)
            try:
                if x.fn == "exp":
                    return math.exp(a)
                if x.fn == "ln":
                    if a <= 0.0:
                        raise EvalError(f"ln of non-positive value {a!r}", x)
                    return math.log(a)
                if x.fn == "sin":
                    return math.sin(a)
                return math.cos(a)
            except OverflowError:
                raise EvalError("overflow in function evaluation", x) from None
        raise ExprError(f"cannot evaluate {x!r}")

    out = ev(e)
    if math.isnan(out) or math.isinf(out):
        raise EvalError("non-finite result", e)
    return out


# ---------------------------------------------------------------------------
# differentiation


def differentiate(e: Expr, var: str) -> Expr:
    """Exact symbolic partial derivative with respect to the named variable.

    `var` may be a state/parameter name or a measurement-derivative name
    such as ``w1_2``.  Symbols other than `var` are treated as constants.
    """

    def d(x) -> Expr:
        if isinstance(x, Const):
            return Const(0)
        if isinstance(x, Sym):
            return Const(1) if x.name == var else Const(0)
        if isinstance(x, WVar):
            return Const(1) if x.name == var else Const(0)
        if isinstance(x, Neg):
            return Neg(d(x.arg))
        if isinstance(x, Sum):
            return Sum(tuple(d(t) for t in x.terms))
        if isinstance(x, Product):
            terms = []
            for i in range(len(x.factors)):
                fs = list(x.factors)
                fs[i] = d(fs[i])
                terms.append(Product(tuple(fs)))
            return Sum(tuple(terms)) if len(terms) > 1 else terms[0]
        if isinstance(x, Quot):
            return Quot(
                Sum((Product((d(x.num), x.den)), Neg(Product((x.num, d(x.den)))))),
                Pow(x.den, 2),
            )
        if isinstance(x, Pow):
            return Product((Const(x.exponent), Pow(x.base, x.exponent - 1), d(x.base)))
        if isinstance(x, Call):
            da = d(x.arg)
            if x.fn == "exp":
                return Product((x, da))
            if x.fn == "ln":
                return Quot(da, x.arg)
            if x.fn == "sin":
                return Product((Call("cos", x.arg), da))
            return Neg(Product((Call("sin", x.arg), da)))
        raise ExprError(f"cannot differentiate {x!r}")

    return simplify(d(e))


# ---------------------------------------------------------------------------
# substitution


def substitute(e: Expr, repl: dict) -> Expr:
    """Simultaneous substitution, then simplification.

    Keys are names (strings) or (i, j) pairs for measurement derivatives;
    a string key matching the ``w<i>_<j>`` convention addresses the same
    variable as the corresponding pair.  Values are expressions or strings.
    """
    by_name: dict[str, Expr] = {}
    by_w: dict[tuple[int, int], Expr] = {}
    for key, val in repl.items():
        ve = as_expr(val)
        if isinstance(key, tuple):
            by_w[(int(key[0]), int(key[1]))] = ve
        elif isinstance(key, str):
            m = _W_NAME.match(key)
            if m:
                by_w[(int(m.group(1)), int(m.group(2)))] = ve
            else:
                by_name[key] = ve
        else:
            raise ExprError(f"bad substitution key {key!r}")

    def sub(x) -> Expr:
        if isinstance(x, Sym):
            return by_name.get(x.name, x)
        if isinstance(x, WVar):
            return by_w.get((x.i, x.j), x)
        if isinstance(x, Const):
            return x
        if isinstance(x, Neg):
            return Neg(sub(x.arg))
        if isinstance(x, Sum):
            return Sum(tuple(sub(t) for t in x.terms))
        if isinstance(x, Product):
            return Product(tuple(sub(f) for f in x.factors))
        if isinstance(x, Quot):
            return Quot(sub(x.num), sub(x.den))
        if isinstance(x, Pow):
            return Pow(sub(x.base), x.exponent)
        if isinstance(x, Call):
            return Call(x.fn, sub(x.arg))
        raise ExprError(f"cannot substitute into {x!r}")

    return simplify(sub(e))


# ---------------------------------------------------------------------------
# simplification
#
# Bottom-up: fold constants (rationals exactly), flatten nested sums and
# products, collect like terms by structural equality, cancel shared
# multiplicative factors across numerator and denominator.


def _is_zero(c) -> bool:
    return c == 0


def _cadd(a, b):
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a + b
    return float(a) + float(b)


def _cmul(a, b):
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a * b
    return float(a) * float(b)


def _cdiv(a, b):
    if isinstance(a, Fraction) and isinstance(b, Fraction) and b != 0:
        return a / b
    return float(a) / float(b)


def simplify(e: Expr) -> Expr:
    return _simp(e)


def _simp(e: Expr) -> Expr:
    if isinstance(e, (Const, Sym, WVar)):
        return e
    if isinstance(e, Neg):
        a = _simp(e.arg)
        if isinstance(a, Const):
            return Const(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)
    if isinstance(e, Call):
        a = _simp(e.arg)
        if isinstance(a, Const) and a.value == 0:
            if e.fn in ("exp", "cos"):
                return Const(1)
            if e.fn == "sin":
                return Const(0)
        if e.fn == "ln" and isinstance(a, Const) and a.value == 1:
            return Const(0)
        return Call(e.fn, a)
    if isinstance(e, Pow):
        return _simp_pow(e)
    if isinstance(e, Sum):
        return _simp_sum(e)
    if isinstance(e, (Product, Quot)):
        return _simp_mul(e)
    raise ExprError(f"cannot simplify {e!r}")


def _simp_pow(e: Pow) -> Expr:
    b = _simp(e.base)
    k = e.exponent
    if k == 0:
        return Const(1)
    if k == 1:
        return b
    if isinstance(b, Const):
        v = b.value
        if isinstance(v, Fraction):
            if v != 0 or k > 0:
                return Const(v**k)
            return Pow(b, k)  # 0^negative: leave, fails at evaluation
        try:
            return Const(v**k)
        except (OverflowError, ZeroDivisionError):
            return Pow(b, k)
    if isinstance(b, Pow):
        return _simp(Pow(b.base, b.exponent * k))
    if isinstance(b, Neg):
        inner = _simp(Pow(b.arg, k))
        return inner if k % 2 == 0 else _simp(Neg(inner))
    return Pow(b, k)


def _coeff_split(t: Expr):
    """Split a simplified term into (numeric coefficient, structural key)."""
    if isinstance(t, Const):
        return t.value, None
    if isinstance(t, Neg):
        c, key = _coeff_split(t.arg)
        return _cmul(Fraction(-1), c), key
    if isinstance(t, Product):
        c = Fraction(1)
        rest = []
        for f in t.factors:
            if isinstance(f, Const):
                c = _cmul(c, f.value)
            else:
                rest.append(f)
        if not rest:
            return c, None
        if len(rest) == 1:
            return c, rest[0]
        return c, Product(tuple(rest))
    if isinstance(t, Quot) and isinstance(t.den, Const) and t.den.value != 0:
        c, key = _coeff_split(t.num)
        return _cdiv(c, t.den.value), key
    return Fraction(1), t


def _coeff_term(c, key: Expr) -> Expr:
    if c == 1:
        return key
    if c == -1:
        return Neg(key)
    if isinstance(key, Product):
        return Product((Const(c),) + key.factors)
    return Product((Const(c), key))


def _simp_sum(e: Sum) -> Expr:
    flat: list[Expr] = []
    for t in e.terms:
        s = _simp(t)
        if isinstance(s, Sum):
            flat.extend(s.terms)
        else:
            flat.append(s)
    const = Fraction(0)
    order: list[Expr] = []
    coeffs: dict[Expr, object] = {}
    for t in flat:
        c, key = _coeff_split(t)
        if key is None:
            const = _cadd(const, c)
        else:
            if key not in coeffs:
                order.append(key)
                coeffs[key] = c
            else:
                coeffs[key] = _cadd(coeffs[key], c)
    parts = [_coeff_term(coeffs[k], k) for k in order if not _is_zero(coeffs[k])]
    if not _is_zero(const) or not parts:
        parts.append(Const(const))
    return parts[0] if len(parts) == 1 else Sum(tuple(parts))


def _simp_mul(e: Expr) -> Expr:
    if isinstance(e, Product):
        node: Expr = Product(tuple(_simp(f) for f in e.factors))
    else:
        node = Quot(_simp(e.num), _simp(e.den))

    sign = 1
    const = Fraction(1)
    factors: list[list] = []  # [base, net integer exponent]
    bad_div = False

    def bump_const(value, numside: bool, m: int):
        nonlocal const, bad_div
        if isinstance(value, Fraction):
            powed = value**m if (value != 0 or m > 0) else None
        else:
            try:
                powed = value**m
            except (OverflowError, ZeroDivisionError):
                powed = None
        if powed is None:
            bad_div = True
            return
        if numside:
            const = _cmul(const, powed)
        else:
            if powed == 0:
                bad_div = True
                return
            const = _cdiv(const, powed)

    def add_factor(b: Expr, k: int):
        for item in factors:
            if item[0] == b:
                item[1] += k
                return
        factors.append([b, k])

    def walk(x: Expr, numside: bool, m: int):
        nonlocal sign
        if isinstance(x, Product):
            for f in x.factors:
                walk(f, numside, m)
        elif isinstance(x, Quot):
            walk(x.num, numside, m)
            walk(x.den, not numside, m)
        elif isinstance(x, Neg):
            if m % 2:
                sign = -sign
            walk(x.arg, numside, m)
        elif isinstance(x, Pow):
            mk = m * x.exponent
            if mk < 0:
                walk(x.base, not numside, -mk)
            elif mk > 0:
                walk(x.base, numside, mk)
        elif isinstance(x, Const):
            bump_const(x.value, numside, m)
        else:
            add_factor(x, m if numside else -m)

    walk(node, True, 1)
    if bad_div:
        return node
    if const == 0:
        return Const(0)

    num_parts: list[Expr] = []
    den_parts: list[Expr] = []
    for b, k in factors:
        if k > 0:
            num_parts.append(Pow(b, k) if k > 1 else b)
        elif k < 0:
            den_parts.append(Pow(b, -k) if k < -1 else b)

    c = _cmul(const, Fraction(sign))
    negate = c < 0
    mag = -c if negate else c
    if mag != 1 or not num_parts:
        num_parts = [Const(mag)] + num_parts

    num_expr = num_parts[0] if len(num_parts) == 1 else Product(tuple(num_parts))
    if den_parts:
        den_expr = den_parts[0] if len(den_parts) == 1 else Product(tuple(den_parts))
        out: Expr = Quot(num_expr, den_expr)
    else:
        out = num_expr
    return Neg(out) if negate else out


# ---------------------------------------------------------------------------
# numeric equivalence


@dataclass
class EquivalenceReport:
    equivalent: bool
    max_residual: float
    rtol: float
    n_samples: int
    n_skipped: int
    worst_point: dict | None
    worst_values: tuple[float, float] | None
    errors: list[str]


def equivalent_numeric(
    e1: Expr,
    e2: Expr,
    box: dict[str, tuple[float, float]],
    n: int = 100,
    seed: int = 42,
    rtol: float = 1e-9,
) -> EquivalenceReport:
    """Seeded randomized check that e1 and e2 agree numerically on a box.

    Agreement at a sample means |e1 - e2| <= rtol * (1 + max(|e1|, |e2|)).
    Rational constants are exact, so residuals on purely rational inputs
    reflect only double rounding.  Sample points where either expression
    fails to evaluate are skipped and counted; if more than half of the
    samples are skipped the check refuses to conclude anything.
    """
    names1, w1 = free_symbols(e1)
    names2, w2 = free_symbols(e2)
    names = sorted(
        names1 | names2 | {f"w{i}_{j}" for (i, j) in (w1 | w2)}
    )
    missing = [nm for nm in names if nm not in box]
    if missing:
        raise ExprError(f"box does not cover variable(s) {missing}")

    rng = np.random.default_rng(seed)
    cols = {}
    for nm in names:
        lo, hi = box[nm]
        cols[nm] = rng.uniform(float(lo), float(hi), size=n)

    max_res = 0.0
    worst_point = None
    worst_values = None
    skipped = 0
    errors: list[str] = []
    ok = True
    for k in range(n):
        point = {nm: float(cols[nm][k]) for nm in names}
        try:
            v1 = evaluate(e1, point)
            v2 = evaluate(e2, point)
        except EvalError as exc:
            skipped += 1
            if len(errors) < 5:
                errors.append(str(exc))
            continue
        res = abs(v1 - v2) / (1.0 + max(abs(v1), abs(v2)))
        if res > max_res:
            max_res = res
            worst_point = point
            worst_values = (v1, v2)
        if res > rtol:
            ok = False
    if skipped > n // 2:
        raise IndeterminateEquivalence(
            f"{skipped}/{n} sample points failed to evaluate: {errors[:3]}"
        )
    return EquivalenceReport(
        equivalent=ok,
        max_residual=max_res,
        rtol=rtol,
        n_samples=n,
        n_skipped=skipped,
        worst_point=worst_point,
        worst_values=worst_values,
        errors=errors,
    )


# ---------------------------------------------------------------------------
# compilation to plain python callables (used by the simulators)

_PYFN = {"exp": "_exp", "ln": "_log", "sin": "_sin", "cos": "_cos"}


def _py_src(e: Expr, slots: dict[str, str], consts: dict[str, float]) -> str:
    if isinstance(e, Const):
        return f"({float(e.value)!r})"
    if isinstance(e, (Sym, WVar)):
        nm = e.name
        if nm in slots:
            return slots[nm]
        if nm in consts:
            return f"({float(consts[nm])!r})"
        raise ExprError(f"unbound symbol '{nm}' at compile time")
    if isinstance(e, Neg):
        return f"(-{_py_src(e.arg, slots, consts)})"
    if isinstance(e, Sum):
        return "(" + "+".join(_py_src(t, slots, consts) for t in e.terms) + ")"
    if isinstance(e, Product):
        return "(" + "*".join(_py_src(f, slots, consts) for f in e.factors) + ")"
    if isinstance(e, Quot):
        return f"({_py_src(e.num, slots, consts)}/{_py_src(e.den, slots, consts)})"
    if isinstance(e, Pow):
        return f"({_py_src(e.base, slots, consts)}**({e.exponent}))"
    if isinstance(e, Call):
        return f"{_PYFN[e.fn]}({_py_src(e.arg, slots, consts)})"
    raise ExprError(f"cannot compile {e!r}")


def compile_exprs(exprs, names, consts: dict[str, float] | None = None):
    """Compile expressions into one fast callable.

    Returns f(vals) -> tuple of floats, with `vals` indexed positionally by
    `names`.  Symbols listed in `consts` are inlined as literals.  Domain
    errors surface as ZeroDivisionError/ValueError/OverflowError.
    """
    consts = consts or {}
    slots = {nm: f"_a[{k}]" for k, nm in enumerate(names)}
    bodies = [_py_src(e, slots, consts) for e in exprs]
    src = "def _f(_a):\n    return (" + ", ".join(bodies) + ("," if len(bodies) == 1 else "") + ")"
    ns = {"_exp": math.exp, "_log": math.log, "_sin": math.sin, "_cos": math.cos}
    exec(compile(src, "<compiled-expr>", "exec"), ns)
    return ns["_f"]
