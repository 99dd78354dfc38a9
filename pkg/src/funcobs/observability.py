"""Randomized local observability tests and functional representations.

All tests here sample the system box with a seeded generator and evaluate
gradient matrices pointwise.  Rank is counted against a relative
singular-value cutoff with an absolute floor, and mixed per-sample verdicts
are reported rather than averaged away: a condition "holds" only when it
holds at every sample that evaluated successfully.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .expr import (
    Const,
    EvalError,
    Expr,
    Product,
    Sum,
    WVar,
    differentiate,
    evaluate,
    free_symbols,
    parse,
    simplify,
    substitute,
    to_text,
)
from .lie import observability_jacobian, observability_set, q_derivatives
from .system import SystemDef, system_equivalence

RANK_RTOL = 1e-9
RANK_FLOOR = 1e-12


class ObservabilityError(RuntimeError):
    pass


def numeric_rank(mat: np.ndarray) -> int:
    """Singular values above max(RANK_RTOL * s_max, RANK_FLOOR) count."""
    a = np.atleast_2d(np.asarray(mat, dtype=float))
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > max(RANK_RTOL * s[0], RANK_FLOOR)))


def sample_states(sys: SystemDef, n_samples: int, seed: int) -> np.ndarray:
    """Deterministic uniform samples of the system box, one state per column."""
    rng = np.random.default_rng(seed)
    cols = []
    for nm in sys.state_names:
        lo, hi = sys.box[nm]
        cols.append(rng.uniform(lo, hi, size=n_samples))
    return np.column_stack(cols)


@dataclass
class RankReport:
    m: int
    ranks: list[int]
    max_rank: int
    fraction_max: float
    tol_rtol: float
    tol_floor: float
    n_failed: int
    verdict: str

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "max_rank": self.max_rank,
            "fraction_at_max": self.fraction_max,
            "n_samples_failed": self.n_failed,
            "verdict": self.verdict,
        }


def _rank_report(m: int, ranks: list[int], n_failed: int, full: int) -> RankReport:
    max_rank = max(ranks)
    frac = ranks.count(max_rank) / len(ranks)
    if max_rank == full:
        verdict = "locally state-observable on the sampled box (sufficient rank test)"
    else:
        verdict = f"rank saturates at {max_rank} < {full}: sufficient rank test not met"
    return RankReport(
        m=m,
        ranks=ranks,
        max_rank=max_rank,
        fraction_max=frac,
        tol_rtol=RANK_RTOL,
        tol_floor=RANK_FLOOR,
        n_failed=n_failed,
        verdict=verdict,
    )


def state_observability_rank(
    sys: SystemDef, m: int, n_samples: int = 100, seed: int = 42
) -> RankReport:
    """Rank of the stacked output-derivative gradients at sampled points."""
    os_ = observability_set(sys, m)
    pts = sample_states(sys, n_samples, seed)
    ranks: list[int] = []
    failed = 0
    for x in pts:
        try:
            J = observability_jacobian(os_, x)
        except EvalError:
            failed += 1
            continue
        ranks.append(numeric_rank(J))
    if not ranks:
        raise ObservabilityError("all sample points failed to evaluate")
    return _rank_report(m, ranks, failed, sys.n)


def observability_index(
    sys: SystemDef, m_max: int, n_samples: int = 100, seed: int = 42
) -> tuple[int | None, list[RankReport]]:
    """Smallest derivative order whose gradient stack reaches full rank.

    Returns (order, per-order reports); order is None when the rank table
    saturates below n everywhere up to m_max.
    """
    if m_max < 1:
        raise ObservabilityError("m_max must be >= 1")
    os_ = observability_set(sys, m_max)
    pts = sample_states(sys, n_samples, seed)
    per_m: list[list[int]] = [[] for _ in range(m_max)]
    failed = 0
    for x in pts:
        try:
            J = observability_jacobian(os_, x)
        except EvalError:
            failed += 1
            continue
        for m in range(1, m_max + 1):
            per_m[m - 1].append(numeric_rank(J[: sys.p * m]))
    if not per_m[0]:
        raise ObservabilityError("all sample points failed to evaluate")
    reports = [_rank_report(m, per_m[m - 1], failed, sys.n) for m in range(1, m_max + 1)]
    index = next((r.m for r in reports if r.max_rank == sys.n), None)
    return index, reports


@dataclass
class FunctionalRankCheck:
    m: int
    base: RankReport
    augmented: RankReport
    n_agree: int
    n_checked: int
    holds: bool
    verdict: str


def functional_rank_check(
    sys: SystemDef, m: int, n_samples: int = 100, seed: int = 42
) -> FunctionalRankCheck:
    """Does the target gradient stay inside the span of the output-derivative
    gradients?  Necessary for any representation of the target in terms of
    output derivatives up to order m-1; failure is a refutation, success is
    sampled evidence only.
    """
    os_ = observability_set(sys, m)
    qd = q_derivatives(sys, 0)
    pts = sample_states(sys, n_samples, seed)
    base_ranks: list[int] = []
    aug_ranks: list[int] = []
    agree = 0
    failed = 0
    for x in pts:
        b = sys.bindings(x)
        try:
            J = observability_jacobian(os_, x)
            gq = np.array([[evaluate(g, b) for g in qd.grads[0]]])
        except EvalError:
            failed += 1
            continue
        rb = numeric_rank(J)
        ra = numeric_rank(np.vstack([gq, J]))
        base_ranks.append(rb)
        aug_ranks.append(ra)
        if rb == ra:
            agree += 1
    if not base_ranks:
        raise ObservabilityError("all sample points failed to evaluate")
    holds = agree == len(base_ranks)
    verdict = (
        "target gradient lies in the measured span at every sample (necessary condition holds)"
        if holds
        else f"target gradient left the measured span at {len(base_ranks) - agree} of {len(base_ranks)} samples"
    )
    return FunctionalRankCheck(
        m=m,
        base=_rank_report(m, base_ranks, failed, sys.n),
        augmented=_rank_report(m, aug_ranks, failed, sys.n),
        n_agree=agree,
        n_checked=len(base_ranks),
        holds=holds,
        verdict=verdict,
    )


@dataclass
class SpanCheck:
    v: int
    k: int
    n_in_span: int
    n_checked: int
    holds: bool


@dataclass
class FunctionalIndexScan:
    candidate: int | None
    v_max: int
    checks: list[SpanCheck]
    note: str = (
        "candidate order from sampled gradient-span tests; necessary, not sufficient"
    )

    def checks_for(self, v: int) -> list[SpanCheck]:
        return [c for c in self.checks if c.v == v]


def functional_index_candidate(
    sys: SystemDef, v_max: int, n_samples: int = 100, seed: int = 42
) -> FunctionalIndexScan:
    """Scan candidate observer orders v = 1..v_max.

    For order v, every derivative of the target up to order v must have its
    gradient inside the span of the output-derivative gradients up to order
    v, at every sampled point.
    """
    if v_max < 1:
        raise ObservabilityError("v_max must be >= 1")
    os_ = observability_set(sys, v_max + 1)
    qd = q_derivatives(sys, v_max)
    pts = sample_states(sys, n_samples, seed)

    jacs = []
    qgrads = []
    for x in pts:
        b = sys.bindings(x)
        try:
            J = observability_jacobian(os_, x)
            G = np.array([[evaluate(g, b) for g in qd.grads[k]] for k in range(v_max + 1)])
        except EvalError:
            continue
        jacs.append(J)
        qgrads.append(G)
    if not jacs:
        raise ObservabilityError("all sample points failed to evaluate")

    checks: list[SpanCheck] = []
    candidate = None
    for v in range(1, v_max + 1):
        rows = sys.p * (v + 1)
        all_hold = True
        for k in range(v + 1):
            in_span = 0
            for J, G in zip(jacs, qgrads):
                Jv = J[:rows]
                if numeric_rank(Jv) == numeric_rank(np.vstack([Jv, G[k : k + 1]])):
                    in_span += 1
            holds = in_span == len(jacs)
            checks.append(SpanCheck(v=v, k=k, n_in_span=in_span, n_checked=len(jacs), holds=holds))
            all_hold = all_hold and holds
        if all_hold and candidate is None:
            candidate = v
    return FunctionalIndexScan(candidate=candidate, v_max=v_max, checks=checks)


# ---------------------------------------------------------------------------
# psi representations


@dataclass
class PsiRepresentation:
    """Expressions psi[0..v] over measurement derivatives w<i>_<j>, i <= v,
    meant to reproduce the target's derivatives of orders 0..v."""

    v: int
    psi: tuple[Expr, ...]
    verified: bool = False

    def __post_init__(self):
        self.psi = tuple(self.psi)
        if self.v < 1:
            raise ObservabilityError("observer order v must be >= 1")
        if len(self.psi) != self.v + 1:
            raise ObservabilityError(
                f"need {self.v + 1} psi expressions for order v={self.v}, got {len(self.psi)}"
            )
        for k, e in enumerate(self.psi):
            _, wvars = free_symbols(e)
            for i, j in sorted(wvars):
                if i > self.v:
                    raise ObservabilityError(
                        f"psi[{k}] uses w{i}_{j} of derivative order {i} > v={self.v}"
                    )

    def max_order(self) -> int:
        worst = 0
        for e in self.psi:
            _, wvars = free_symbols(e)
            for i, _ in wvars:
                worst = max(worst, i)
        return worst


def load_psi(path) -> PsiRepresentation:
    with open(path) as fh:
        raw = json.load(fh)
    if "v" not in raw or "psi" not in raw:
        raise ObservabilityError("psi file needs keys 'v' and 'psi'")
    return PsiRepresentation(v=int(raw["v"]), psi=tuple(parse(s) for s in raw["psi"]))


def save_psi(rep: PsiRepresentation, path):
    with open(path, "w") as fh:
        json.dump({"v": rep.v, "psi": [to_text(e) for e in rep.psi]}, fh, indent=2)
        fh.write("\n")


def _check_psi_against_system(sys: SystemDef, e: Expr, label: str):
    names, wvars = free_symbols(e)
    for nm in sorted(names):
        if nm in sys.state_names:
            raise ObservabilityError(
                f"{label} references state '{nm}' directly; only measurement "
                "derivatives and parameters are allowed"
            )
        if nm not in sys.params:
            raise ObservabilityError(f"unknown symbol '{nm}' in {label}")
    for i, j in sorted(wvars):
        if j > sys.p:
            raise ObservabilityError(
                f"{label} uses w{i}_{j} but the system has only {sys.p} output(s)"
            )


@dataclass
class PsiVerification:
    v: int
    residuals: list[float]
    passed: bool
    rtol: float
    reports: list = field(repr=False, default_factory=list)


def verify_psi(
    sys: SystemDef,
    rep: PsiRepresentation,
    n_samples: int = 100,
    seed: int = 42,
    rtol: float = 1e-9,
) -> PsiVerification:
    """Substitute the output-derivative expressions into each psi[k] and
    compare against the k-th derivative of the target, numerically over the
    box.  On success the representation is marked verified."""
    for k, e in enumerate(rep.psi):
        _check_psi_against_system(sys, e, f"psi[{k}]")
    os_ = observability_set(sys, rep.v + 1)
    qd = q_derivatives(sys, rep.v)
    subs = {(i, j): os_.table[i][j - 1] for i in range(rep.v + 1) for j in range(1, sys.p + 1)}
    residuals = []
    reports = []
    ok = True
    for k in range(rep.v + 1):
        realized = substitute(rep.psi[k], subs)
        r = system_equivalence(sys, qd.Q[k], realized, n=n_samples, seed=seed, rtol=rtol)
        residuals.append(r.max_residual)
        reports.append(r)
        ok = ok and r.equivalent
    if ok:
        rep.verified = True
    return PsiVerification(v=rep.v, residuals=residuals, passed=ok, rtol=rtol, reports=reports)


@dataclass
class LiftResult:
    candidate: Expr
    exceeds_order: bool
    max_order: int


def lift_psi(psi_k: Expr, p: int, v_cap: int) -> LiftResult:
    """Formal time derivative of an expression over measurement derivatives:
    each w<i>_<j> advances to w<i+1>_<j> via the chain rule.  The result is
    flagged when it needs derivative orders beyond v_cap, which is exactly
    the evidence that the candidate order is too small."""
    _, wvars = free_symbols(psi_k)
    for i, j in sorted(wvars):
        if j > p:
            raise ObservabilityError(f"w{i}_{j} exceeds the declared output count {p}")
    terms = []
    for i, j in sorted(wvars):
        partial = differentiate(psi_k, f"w{i}_{j}")
        if isinstance(partial, Const) and partial.value == 0:
            continue
        terms.append(Product((partial, WVar(i + 1, j))))
    if not terms:
        lifted: Expr = Const(0)
    else:
        lifted = simplify(terms[0] if len(terms) == 1 else Sum(tuple(terms)))
    _, out_w = free_symbols(lifted)
    max_order = max((i for i, _ in out_w), default=0)
    return LiftResult(candidate=lifted, exceeds_order=max_order > v_cap, max_order=max_order)
