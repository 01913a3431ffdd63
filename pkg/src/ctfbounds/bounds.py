"""Credible intervals and baseline bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .data import Dataset, EmpiricalDistribution, format_tag
from .exceptions import InfeasibleConstraintsError, ValidationError
from .graph import CausalDiagram
from .query import CtfQuery, EXPECTATION
from .scm import CanonicalSCM, evaluate_worlds, response_function_mu

LP_CONFIG_BUDGET = 10**6


@dataclass(frozen=True)
class CredibleInterval:
    alpha: float
    lower: float
    upper: float
    T: int
    epsilon: Optional[float] = None
    delta: Optional[float] = None

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= value <= self.upper + tol


@dataclass(frozen=True)
class BaselineBound:
    method: str
    lower: float
    upper: float
    detail: Dict = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= value <= self.upper + tol


def required_draws(epsilon: float, delta: float) -> int:
    """Smallest ``T`` with ``T >= 2 ln(4 / delta) / epsilon**2``."""
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValidationError("delta must lie in (0, 1)")
    return math.ceil(2.0 * math.log(4.0 / delta) / epsilon**2 - 1e-9)


def estimator_error(T: int, delta: float) -> float:
    """Half-width ``sqrt(2 ln(4 / delta) / T)`` guaranteed with probability ``1 - delta``."""
    if T < 1 or not 0 < delta < 1:
        raise ValidationError("need T >= 1 and delta in (0, 1)")
    return math.sqrt(2.0 * math.log(4.0 / delta) / T)


def _order_index(q: float, T: int) -> int:
    k = math.ceil(q * T - 1e-9)
    return min(max(k, 1), T)


def credible_interval(draws, alpha: float = 0.0, epsilon: float = None, delta: float = None) -> CredibleInterval:
    """Order-statistic interval ``[theta_(ceil(a/2 T)), theta_(ceil((1 - a/2) T))]``.

    Indices are 1-based and clamped to ``[1, T]``, so ``alpha = 0`` returns
    the sample minimum and maximum.
    """
    values = np.asarray(getattr(draws, "draws", draws), dtype=float).ravel()
    T = len(values)
    if T == 0:
        raise ValidationError("no posterior draws")
    if not 0 <= alpha < 1:
        raise ValidationError("alpha must lie in [0, 1)")
    s = np.sort(values)
    lo = s[_order_index(alpha / 2.0, T) - 1]
    hi = s[_order_index(1.0 - alpha / 2.0, T) - 1]
    return CredibleInterval(alpha, float(lo), float(hi), T, epsilon, delta)


# -- natural bounds ---------------------------------------------------------------


def _single_term(query: CtfQuery):
    if len(query.terms) != 1 or not query.terms[0].intervention:
        raise ValidationError("natural bounds need a single interventional term such as P[Y@{X=x}=y] or E[Y@{X=x}]")
    t = query.terms[0]
    if query.kind == EXPECTATION:
        if query.expr.coefs != ((t.alias, 1),) or query.expr.const != 0:
            raise ValidationError("natural bounds support E[Y@{X=x}] only")
        return t, None
    if len(query.body) != 1 or query.body[0].op != "=" or query.body[0].lhs.coefs != ((t.alias, 1),):
        raise ValidationError("natural bounds support P[Y@{X=x}=y] only")
    return t, query.body[0].rhs


def natural_bounds(empirical: EmpiricalDistribution, query: CtfQuery,
                   diagram: Optional[CausalDiagram] = None) -> BaselineBound:
    """Assumption-free bounds from the observational regime.

    ``P(y_x)`` lies in ``[P(x, y), P(x, y) + 1 - P(x)]``; for ``E[Y_x]`` the
    unobserved mass is filled with the smallest or largest value of Y.
    """
    if empirical.tag:
        raise ValidationError("natural bounds use the observational regime")
    if empirical.total == 0:
        raise ValidationError("empty observational regime")
    term, y = _single_term(query)
    x = dict(term.intervention)
    p_x = empirical.prob(**x)
    if y is not None:
        p_xy = empirical.prob(**x, **{term.variable: y})
        return BaselineBound("natural", p_xy, p_xy + 1.0 - p_x, {"P(x)": p_x, "P(x,y)": p_xy})
    if diagram is None:
        raise ValidationError("expectation bounds need the diagram for the outcome range")
    card = diagram.card(term.variable)
    mean = math.fsum(v * empirical.prob(**x, **{term.variable: v}) for v in range(card))
    return BaselineBound("natural", mean, mean + (card - 1) * (1.0 - p_x), {"P(x)": p_x})


# -- frontdoor adjustment ---------------------------------------------------------


def frontdoor_roles(diagram: CausalDiagram):
    """Identify ``(X, W, Y)`` in an ``X -> W -> Y`` diagram with ``X <-> Y`` confounding only."""
    if len(diagram.names) != 3:
        raise ValidationError("frontdoor adjustment needs exactly three endogenous variables")
    order = diagram.topological_order
    X, W, Y = order
    ok = (diagram.parents_ordered(X) == () and diagram.parents_ordered(W) == (X,)
          and diagram.parents_ordered(Y) == (W,))
    comps = sorted(sorted(s) for s in diagram.c_components.as_sets())
    ok = ok and comps == sorted([sorted([X, Y]), [W]])
    if not ok:
        raise ValidationError("diagram does not have the frontdoor shape X -> W -> Y with X, Y confounded")
    return X, W, Y


def frontdoor_estimate(dataset: Dataset, x: int = 0, y: int = 1) -> BaselineBound:
    """``sum_w P(w | x) sum_x' P(y | x', w) P(x')`` from observational frequencies."""
    X, W, Y = frontdoor_roles(dataset.diagram)
    emp = dataset.empirical(())
    p = lambda **kv: emp.prob(**kv)
    p_x = p(**{X: x})
    if p_x == 0:
        raise ValidationError(f"empty conditioning cell {X}={x}")
    total = []
    for w in range(dataset.diagram.card(W)):
        p_w_given_x = p(**{X: x, W: w}) / p_x
        if p_w_given_x == 0:
            continue
        inner = []
        for xp in range(dataset.diagram.card(X)):
            p_xw = p(**{X: xp, W: w})
            p_xp = p(**{X: xp})
            if p_xp == 0:
                continue
            if p_xw == 0:
                raise ValidationError(f"empty conditioning cell {X}={xp}, {W}={w}")
            inner.append(p(**{X: xp, W: w, Y: y}) / p_xw * p_xp)
        total.append(p_w_given_x * math.fsum(inner))
    v = math.fsum(total)
    return BaselineBound("frontdoor-point", v, v)


# -- exact LP -------------------------------------------------------------------------


def _lp_matrices(diagram: CausalDiagram, query: CtfQuery, constraints: Sequence[EmpiricalDistribution]):
    if len(diagram.exogenous) != 1:
        raise ValidationError("lp_exact_bound needs a diagram with exactly one exogenous variable")
    (U,) = diagram.exogenous
    d = diagram.exo_cardinality(U)
    if d > LP_CONFIG_BUDGET:
        raise ValidationError(f"{d} response-function types exceed the LP budget")
    query.validate(diagram)
    mu = response_function_mu(diagram, {U: d})
    model = CanonicalSCM(diagram, {U: np.full(d, 1.0 / d)}, mu)
    u = {U: np.arange(d, dtype=np.int64)}
    lookup = {var.name: (mu[var.name], u[U]) for var in model.layout.order}
    c = evaluate_worlds(model.layout, diagram, query, lookup, d)
    cards = [diagram.card(v) for v in diagram.names]
    n_cfg = math.prod(cards)
    rows, rhs, tags = [], [], []
    for emp in constraints:
        if emp.total == 0:
            raise ValidationError("empty regime in LP constraints")
        vals = model.values_at(u, dict(emp.tag))
        flat = np.zeros(d, dtype=np.int64)
        for name, card in zip(diagram.names, cards):
            flat = flat * card + vals[name]
        if n_cfg * d > LP_CONFIG_BUDGET * 10:
            raise ValidationError("too many configurations for the LP")
        A = np.zeros((n_cfg, d))
        A[flat, np.arange(d)] = 1.0
        b = np.zeros(n_cfg)
        for cfg, cnt in emp.counts.items():
            k = 0
            for v, card in zip(cfg, cards):
                k = k * card + v
            b[k] = cnt / emp.total
        for k in range(n_cfg):
            cfg, r = [], k
            for card in reversed(cards):
                cfg.append(r % card)
                r //= card
            cfg = cfg[::-1]
            tag = (format_tag(emp.tag) or "obs") + ":" + ",".join(f"{n}={v}" for n, v in zip(diagram.names, cfg))
            rows.append(A[k])
            rhs.append(b[k])
            tags.append(tag)
    A = np.array(rows).reshape(len(rows), d)
    return c, A, np.array(rhs), tags, d


def _max_violation(A, b, d):
    """Phase 1: smallest uniform slack that makes the constraints feasible."""
    m = len(b)
    if m == 0:
        return 0.0
    # variables: theta (d), t
    cost = np.zeros(d + 1)
    cost[-1] = 1.0
    A_ub = np.vstack([np.hstack([A, -np.ones((m, 1))]), np.hstack([-A, -np.ones((m, 1))])])
    b_ub = np.concatenate([b, -b])
    A_eq = np.hstack([np.ones((1, d)), np.zeros((1, 1))])
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * (d + 1), method="highs")
    return float(res.fun)


def lp_exact_bound(diagram: CausalDiagram, query: CtfQuery, constraints: Sequence[EmpiricalDistribution],
                   slack: float = 0.0, feas_tol: float = 1e-9) -> BaselineBound:
    """Exact bounds of ``query`` over response-function distributions matching the data.

    The single exogenous variable takes one value per joint response
    function, so the query and every regime probability are linear in
    ``theta``. Equalities may be relaxed to ``|A theta - b| <= slack``.
    """
    if slack < 0:
        raise ValidationError("slack must be non-negative")
    c, A, b, tags, d = _lp_matrices(diagram, query, constraints)
    viol = _max_violation(A, b, d)
    if viol > slack + feas_tol:
        raise InfeasibleConstraintsError(
            f"empirical distributions are outside the model polytope (max violation {viol:.3g})", max_violation=viol)
    kwargs = dict(A_eq=np.ones((1, d)), b_eq=[1.0], bounds=[(0, None)] * d, method="highs")
    if slack > 0:
        s = slack
        kwargs["A_ub"] = np.vstack([A, -A])
        kwargs["b_ub"] = np.concatenate([b + s, -(b - s)])
    else:
        kwargs["A_eq"] = np.vstack([kwargs["A_eq"], A])
        kwargs["b_eq"] = np.concatenate([[1.0], b])
    lo = linprog(c, **kwargs)
    hi = linprog(-c, **kwargs)
    if lo.status != 0 or hi.status != 0:
        raise InfeasibleConstraintsError(f"LP solver failed: {lo.message} / {hi.message}", max_violation=viol)
    theta_lo, theta_hi = lo.x, hi.x
    residuals = {t: float(abs(A[i] @ theta_lo - b[i])) for i, t in enumerate(tags)}
    lower = float(c @ theta_lo)
    upper = float(c @ theta_hi)
    return BaselineBound("lp-exact", min(lower, upper), max(lower, upper),
                         {"max_violation": viol, "slack": slack, "residuals": residuals, "n_types": d})
