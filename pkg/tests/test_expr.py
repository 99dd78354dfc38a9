"""Expression engine: parsing, printing, evaluation, calculus, equivalence."""

import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from funcobs.expr import (
    Call,
    Const,
    EvalError,
    ExprError,
    IndeterminateEquivalence,
    Neg,
    ParseError,
    Pow,
    Product,
    Quot,
    Sum,
    Sym,
    WVar,
    compile_exprs,
    differentiate,
    equivalent_numeric,
    evaluate,
    free_symbols,
    parse,
    simplify,
    substitute,
    to_text,
)

# ---------------------------------------------------------------------------
# parsing and printing

ROUNDTRIP_CASES = [
    "x",
    "x + y",
    "x - y",
    "x*y + z",
    "a*b/c*d",
    "x^2",
    "-x^2",
    "x^-1",
    "2/3",
    "0.5*x",
    "exp(-t/tau)",
    "k1*cA - k2*cB^2",
    "w0_1 + w1_1",
    "(x + y)*(x - y)",
    "sin(x)*cos(y) - ln(z)",
    "1 - (a + b)",
    "-(w1_1 + k2*w0_1^2)",
]


@pytest.mark.parametrize("text", ROUNDTRIP_CASES)
def test_parse_print_parse_fixpoint(text):
    e = parse(text)
    printed = to_text(e)
    assert parse(printed) == e


def test_structures():
    assert parse("x + y") == Sum((Sym("x"), Sym("y")))
    assert parse("x - y") == Sum((Sym("x"), Neg(Sym("y"))))
    assert parse("x*y") == Product((Sym("x"), Sym("y")))
    assert parse("x/y") == Quot(Sym("x"), Sym("y"))
    assert parse("x^3") == Pow(Sym("x"), 3)
    assert parse("exp(x)") == Call("exp", Sym("x"))
    assert parse("w2_1") == WVar(2, 1)


def test_unary_minus_binds_before_power():
    # '-x^2' exponentiates the negated base
    assert parse("-x^2") == Pow(Neg(Sym("x")), 2)
    assert evaluate(parse("-x^2"), {"x": 3.0}) == 9.0


def test_division_left_associative():
    e = parse("a/b/c")
    assert evaluate(e, {"a": 12.0, "b": 3.0, "c": 2.0}) == 2.0


def test_rational_constants_exact():
    e = parse("1/3 + 1/3 + 1/3")
    assert simplify(e) == Const(Fraction(1))
    assert parse("2/4") != parse("0.5")  # Quot of ints vs float literal


def test_decimal_constants_are_floats():
    c = parse("0.1")
    assert isinstance(c, Const)
    assert isinstance(c.value, float)


def test_parse_errors_carry_position():
    with pytest.raises(ParseError) as err:
        parse("x + * y")
    assert "column" in str(err.value)
    with pytest.raises(ParseError):
        parse("foo(x)")  # unknown function
    with pytest.raises(ParseError):
        parse("x^y")  # exponent must be an integer literal
    with pytest.raises(ParseError):
        parse("(x + y")
    with pytest.raises(ExprError):
        parse("w0_0")  # output numbering starts at 1


def test_w_names_reserved():
    names, wvars = free_symbols(parse("w3_2 + cA"))
    assert names == {"cA"}
    assert wvars == {(3, 2)}


# ---------------------------------------------------------------------------
# evaluation

EVAL_CASES = [
    ("k1*cA - k2*cB^2", {"k1": 1.0, "k2": 0.5, "cA": 1.0, "cB": 0.2}, 0.98),
    ("exp(-1)", {}, math.exp(-1)),
    ("2^-2", {}, 0.25),
    ("ln(exp(3))", {}, 3.0),
    ("sin(0) + cos(0)", {}, 1.0),
    ("-(a - b)", {"a": 1.0, "b": 4.0}, 3.0),
    ("1/2 + 1/2", {}, 1.0),
]


@pytest.mark.parametrize("text,binds,expected", EVAL_CASES)
def test_evaluate_known_values(text, binds, expected):
    assert evaluate(parse(text), binds) == pytest.approx(expected, rel=1e-15)


def test_evaluate_wvars():
    e = parse("w0_1^2 + w1_1")
    assert evaluate(e, {}, {(0, 1): 3.0, (1, 1): 4.0}) == 13.0
    # w values may also arrive as plain named bindings
    assert evaluate(e, {"w0_1": 3.0, "w1_1": 4.0}) == 13.0


def test_evaluate_errors_name_subexpression():
    with pytest.raises(EvalError) as err:
        evaluate(parse("x/(y - y)"), {"x": 1.0, "y": 2.0})
    assert "y - y" in str(err.value)
    with pytest.raises(EvalError) as err:
        evaluate(parse("ln(x)"), {"x": -1.0})
    assert "ln" in str(err.value)
    with pytest.raises(EvalError):
        evaluate(parse("x + y"), {"x": 1.0})  # unbound symbol


def test_evaluate_rejects_nan_binding():
    with pytest.raises(EvalError):
        evaluate(parse("x"), {"x": float("nan")})


# ---------------------------------------------------------------------------
# differentiation: frozen hand results plus a finite-difference sweep

DERIV_CASES = [
    ("x^3", "x", {"x": 2.0}, 12.0),
    ("x*y", "x", {"x": 5.0, "y": 7.0}, 7.0),
    ("exp(-EoverR/theta)", "theta", {"EoverR": 1.0, "theta": 2.0},
     math.exp(-0.5) * 1.0 / 4.0),
    ("ln(x)", "x", {"x": 4.0}, 0.25),
    ("sin(2*x)", "x", {"x": 0.3}, 2.0 * math.cos(0.6)),
    ("a/x", "x", {"a": 3.0, "x": 2.0}, -0.75),
    ("w1_1^2", "w1_1", {"w1_1": 5.0}, 10.0),
]


@pytest.mark.parametrize("text,var,binds,expected", DERIV_CASES)
def test_differentiate_known_values(text, var, binds, expected):
    d = differentiate(parse(text), var)
    assert evaluate(d, binds) == pytest.approx(expected, rel=1e-12)


FD_EXPRS = [
    "x^2*y - y^3/x",
    "exp(x*y)/(1 + x^2)",
    "ln(2 + sin(x))*cos(y)",
    "(x + y)^3 - x/y",
    "exp(-x)*x^4",
]


def test_differentiate_matches_finite_differences():
    # central differences as an independent oracle
    import random

    rng = random.Random(7)
    h = 1e-5
    for text in FD_EXPRS:
        e = parse(text)
        d = differentiate(e, "x")
        for _ in range(20):
            x, y = rng.uniform(0.3, 1.7), rng.uniform(0.3, 1.7)
            fd = (
                evaluate(e, {"x": x + h, "y": y}) - evaluate(e, {"x": x - h, "y": y})
            ) / (2 * h)
            dv = evaluate(d, {"x": x, "y": y})
            assert abs(dv - fd) <= 1e-5 * (1.0 + abs(dv)), (text, x, y)


def test_derivative_of_constant_is_zero():
    assert differentiate(parse("k1*k2"), "x") == Const(Fraction(0))


# ---------------------------------------------------------------------------
# substitution

def test_substitute_names_and_wvars():
    e = parse("w1_1 + k2*w0_1^2")
    out = substitute(e, {(1, 1): parse("k1*cA - k2*cB^2"), (0, 1): parse("cB")})
    # the k2 terms cancel structurally
    assert to_text(out) in ("k1*cA", "cA*k1")


def test_substitute_is_simultaneous():
    e = parse("x + y")
    out = substitute(e, {"x": parse("y"), "y": parse("x")})
    assert evaluate(out, {"x": 1.0, "y": 10.0}) == 11.0


def test_substitution_then_eval_matches_eval_with_bindings():
    e = parse("a*x^2 + b/x")
    out = substitute(e, {"x": parse("1 + t")})
    for t in (0.0, 0.5, 2.0):
        direct = evaluate(e, {"a": 2.0, "b": 3.0, "x": 1.0 + t})
        subbed = evaluate(out, {"a": 2.0, "b": 3.0, "t": t})
        assert subbed == pytest.approx(direct, rel=1e-14)


# ---------------------------------------------------------------------------
# simplification

SIMPLIFY_CASES = [
    ("(1/k1)*(k1*cA)", "cA"),
    ("2 + 3*x - 3*x", "2"),
    ("x^3/x", "x^2"),
    ("x - x", "0"),
    ("0*y + x", "x"),
    ("1*x", "x"),
    ("x/1", "x"),
]


@pytest.mark.parametrize("text,expected", SIMPLIFY_CASES)
def test_simplify_frozen_forms(text, expected):
    assert to_text(simplify(parse(text))) == expected


@st.composite
def small_exprs(draw, depth=0):
    if depth > 3 or draw(st.booleans()):
        kind = draw(st.sampled_from(["sym", "const", "w"]))
        if kind == "sym":
            return Sym(draw(st.sampled_from(["x", "y", "z"])))
        if kind == "w":
            return WVar(draw(st.integers(0, 2)), draw(st.integers(1, 2)))
        return Const(draw(st.sampled_from([0, 1, 2, -1, Fraction(1, 2), 0.25])))
    kind = draw(st.sampled_from(["sum", "prod", "quot", "pow", "neg", "call"]))
    a = draw(small_exprs(depth=depth + 1))
    if kind == "neg":
        return Neg(a)
    if kind == "pow":
        return Pow(a, draw(st.integers(-2, 3)))
    if kind == "call":
        return Call(draw(st.sampled_from(["exp", "sin", "cos"])), a)
    b = draw(small_exprs(depth=depth + 1))
    if kind == "sum":
        return Sum((a, b))
    if kind == "prod":
        return Product((a, b))
    return Quot(a, b)


BINDS = {"x": 0.7, "y": 1.3, "z": -0.4}
WVALS = {(i, j): 0.3 * i + 0.9 * j for i in range(3) for j in (1, 2)}


@given(small_exprs())
def test_simplify_preserves_value(e):
    try:
        before = evaluate(e, BINDS, WVALS)
    except EvalError:
        return
    after = evaluate(simplify(e), BINDS, WVALS)
    assert abs(after - before) <= 1e-12 * (1.0 + abs(before))


@given(small_exprs())
def test_print_parse_roundtrip_random(e):
    assert parse(to_text(e)) is not None
    # value is preserved through printing, even if the tree is rebuilt
    try:
        before = evaluate(e, BINDS, WVALS)
    except EvalError:
        return
    after = evaluate(parse(to_text(e)), BINDS, WVALS)
    assert abs(after - before) <= 1e-12 * (1.0 + abs(before))


@given(small_exprs())
def test_derivative_linearity(e):
    # d/dx (e + e) == 2 * d/dx e pointwise
    d1 = differentiate(Sum((e, e)), "x")
    d2 = differentiate(e, "x")
    try:
        lhs = evaluate(d1, BINDS, WVALS)
        rhs = 2.0 * evaluate(d2, BINDS, WVALS)
    except EvalError:
        return
    assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(rhs))


# ---------------------------------------------------------------------------
# numeric equivalence

def test_equivalent_numeric_accepts_identity():
    r = equivalent_numeric(
        parse("(x + y)^2"),
        parse("x^2 + 2*x*y + y^2"),
        {"x": (-2.0, 2.0), "y": (-2.0, 2.0)},
    )
    assert r.equivalent
    assert r.max_residual <= 1e-12
    assert r.n_samples == 100


def test_equivalent_numeric_rejects_difference():
    r = equivalent_numeric(
        parse("x^2"), parse("x^2 + 0.001"), {"x": (0.0, 1.0)}
    )
    assert not r.equivalent
    assert r.worst_point is not None


def test_equivalent_numeric_seeded_determinism():
    box = {"x": (0.1, 2.0)}
    r1 = equivalent_numeric(parse("ln(x)"), parse("ln(x)"), box, seed=5)
    r2 = equivalent_numeric(parse("ln(x)"), parse("ln(x)"), box, seed=5)
    assert r1.max_residual == r2.max_residual
    assert r1.worst_point == r2.worst_point


def test_equivalent_numeric_needs_full_box():
    with pytest.raises(ExprError):
        equivalent_numeric(parse("x + y"), parse("x + y"), {"x": (0.0, 1.0)})


def test_equivalent_numeric_indeterminate_when_mostly_invalid():
    # ln of a negative box fails everywhere
    with pytest.raises(IndeterminateEquivalence):
        equivalent_numeric(
            parse("ln(x)"), parse("ln(x)"), {"x": (-2.0, -1.0)}
        )


def test_equivalence_skips_counted():
    # half the box is invalid for ln; skips are reported, verdict still usable
    r = equivalent_numeric(
        parse("ln(x)*0 + x"), parse("x"), {"x": (-0.5, 2.0)}, n=200
    )
    assert r.n_skipped > 0
    assert r.equivalent


# ---------------------------------------------------------------------------
# compiled evaluation

def test_compile_exprs_matches_evaluate():
    exprs = (parse("k1*cA - k2*cB^2"), parse("exp(-cA)"))
    fn = compile_exprs(exprs, ["cA", "cB"], {"k1": 1.0, "k2": 0.5})
    out = fn([1.0, 0.2])
    assert out[0] == pytest.approx(0.98, rel=1e-15)
    assert out[1] == pytest.approx(math.exp(-1.0), rel=1e-15)


def test_compile_exprs_rejects_unbound_symbol():
    with pytest.raises(ExprError):
        compile_exprs((parse("x + missing"),), ["x"], {})


def test_compile_exprs_raises_eval_errors():
    fn = compile_exprs((parse("1/x"),), ["x"], {})
    with pytest.raises(ZeroDivisionError):
        fn([0.0])
