"""Canonical discrete SCMs.

Parameters follow two conventions that every module shares:

* ``mu[V]`` is an integer array of shape ``(n_pa, n_uv)``. Row ``k`` is the
  mixed-radix index of the parent configuration, parents sorted
  topologically with the first parent as the most significant digit.
  Column ``j`` is the mixed-radix index of ``u_V`` over ``U_V`` in
  exogenous declaration order, first exogenous most significant.
* ``theta[U]`` is a probability vector of length ``d_U``.

A response-function index ``i`` for V encodes the function whose output on
the ``k``-th parent configuration is the ``k``-th base-``|Omega_V|`` digit
of ``i`` (least significant digit first).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import rng as _rng
from .exceptions import BudgetExceededError, ValidationError
from .graph import CausalDiagram
from .query import CtfQuery, EXPECTATION, evaluate_event

ENUM_BUDGET = 10**7
MATERIALIZE_BUDGET = 10**7
_CHUNK = 1 << 16


# -- response functions -------------------------------------------------------


@dataclass(frozen=True)
class ResponseFunctionIndex:
    variable: str
    index: int


def n_functions(card: int, n_pa: int) -> int:
    return card**n_pa


def decode_response(card: int, n_pa: int, index: int, pa: int) -> int:
    """Output of response function ``index`` on parent configuration ``pa``."""
    if not 0 <= index < card**n_pa:
        raise ValidationError(f"response index {index} out of range [0, {card ** n_pa})")
    if not 0 <= pa < n_pa:
        raise ValidationError(f"parent configuration {pa} out of range [0, {n_pa})")
    return (index // card**pa) % card


def decode_table(card: int, n_pa: int, index: int) -> Tuple[int, ...]:
    return tuple(decode_response(card, n_pa, index, k) for k in range(n_pa))


def encode_table(card: int, table: Sequence[int]) -> int:
    return sum(int(v) * card**k for k, v in enumerate(table))


# -- compiled layout ----------------------------------------------------------


@dataclass(frozen=True)
class VarLayout:
    name: str
    card: int
    parents: Tuple[str, ...]
    pa_mult: Tuple[int, ...]
    n_pa: int
    exo: Tuple[str, ...]


@dataclass(frozen=True)
class Layout:
    order: Tuple[VarLayout, ...]

    def var(self, name) -> VarLayout:
        for v in self.order:
            if v.name == name:
                return v
        raise ValidationError(f"unknown endogenous variable {name!r}")


def radix_multipliers(radices: Sequence[int]) -> Tuple[int, ...]:
    """Place values for mixed-radix digits, first digit most significant."""
    mult, acc = [], 1
    for r in reversed(radices):
        mult.append(acc)
        acc *= r
    return tuple(reversed(mult))


@lru_cache(maxsize=256)
def layout_of(diagram: CausalDiagram) -> Layout:
    out = []
    for name in diagram.topological_order:
        parents = diagram.parents_ordered(name)
        cards = [diagram.card(p) for p in parents]
        out.append(VarLayout(name, diagram.card(name), parents, radix_multipliers(cards),
                             math.prod(cards), diagram.exo_parents_ordered(name)))
    return Layout(tuple(out))


def pa_index(var: VarLayout, values: Mapping[str, int]) -> int:
    return sum(int(values[p]) * m for p, m in zip(var.parents, var.pa_mult))


def uv_index(diagram, var: VarLayout, u: Mapping[str, int], d: Mapping[str, int]) -> int:
    idx = 0
    for U in var.exo:
        idx = idx * d[U] + int(u[U])
    return idx


# -- vectorized world evaluation ---------------------------------------------


def _needed(layout: Layout, diagram, targets):
    need = diagram.ancestors(targets)
    return [v for v in layout.order if v.name in need]


def evaluate_worlds(layout: Layout, diagram, query: CtfQuery, lookup, n: int) -> np.ndarray:
    """Evaluate ``query`` on ``n`` units at once.

    ``lookup[V]`` is ``(table, col)`` so that V's mechanism output for unit
    ``j`` at parent configuration ``k`` is ``table[k, col[j]]``. Returns the
    per-unit indicator (P queries) or value (E queries) as floats.
    """
    values = {}
    for iv in query.regimes():
        do = dict(iv)
        targets = [t.variable for t in query.terms if t.intervention == iv]
        vals = {}
        for var in _needed(layout, diagram, targets):
            if var.name in do:
                vals[var.name] = np.full(n, do[var.name], dtype=np.int64)
                continue
            pa = np.zeros(n, dtype=np.int64)
            for p, m in zip(var.parents, var.pa_mult):
                pa += vals[p] * m
            table, col = lookup[var.name]
            vals[var.name] = table[pa, col].astype(np.int64, copy=False)
        for t in query.terms:
            if t.intervention == iv:
                values[t.alias] = vals[t.variable]
    out = evaluate_event(query, values)
    if np.ndim(out) == 0:
        return np.full(n, float(out))
    return np.asarray(out, dtype=float)


def weighted_total(weights: np.ndarray, ind: np.ndarray) -> float:
    return math.fsum((weights * ind).tolist())


# -- canonical SCM -------------------------------------------------------------


class CanonicalSCM:
    """Dense canonical SCM with explicit ``theta`` and ``mu`` arrays.

    Parameters
    ----------
    diagram : CausalDiagram
    theta : mapping of exogenous name to probability vector of length ``d_U``
    mu : mapping of endogenous name to integer array ``(n_pa, n_uv)``
    """

    def __init__(self, diagram: CausalDiagram, theta: Mapping[str, np.ndarray], mu: Mapping[str, np.ndarray]):
        self.diagram = diagram
        self.layout = layout_of(diagram)
        self.theta = {U: np.asarray(theta[U], dtype=float) for U in diagram.exogenous}
        self.d = {U: len(self.theta[U]) for U in diagram.exogenous}
        self.mu = {V: np.asarray(mu[V], dtype=np.int64) for V in diagram.names}
        self._check()

    def _check(self):
        for U, t in self.theta.items():
            if t.ndim != 1 or len(t) < 1 or np.any(t < -1e-12) or abs(math.fsum(t.tolist()) - 1.0) > 1e-9:
                raise ValidationError(f"theta[{U}] is not a probability vector")
        for var in self.layout.order:
            m = self.mu[var.name]
            n_uv = math.prod(self.d[U] for U in var.exo)
            if m.shape != (var.n_pa, n_uv):
                raise ValidationError(f"mu[{var.name}] has shape {m.shape}, expected {(var.n_pa, n_uv)}")
            if m.size and (m.min() < 0 or m.max() >= var.card):
                raise ValidationError(f"mu[{var.name}] has values outside 0..{var.card - 1}")

    def n_joint(self) -> int:
        return math.prod(self.d.values())

    # single-unit semantics

    def potential_response(self, u: Mapping[str, int], intervention: Mapping[str, int] = None,
                           targets: Optional[Sequence[str]] = None) -> Dict[str, int]:
        """``Y_x(u)`` for every Y in ``targets`` (all variables by default)."""
        intervention = dict(intervention or {})
        for U in self.diagram.exogenous:
            if not 0 <= int(u[U]) < self.d[U]:
                raise ValidationError(f"exogenous value {u[U]} out of range for {U}")
        vals = {}
        for var in self.layout.order:
            if var.name in intervention:
                x = int(intervention[var.name])
                if not 0 <= x < var.card:
                    raise ValidationError(f"intervention value {x} out of range for {var.name}")
                vals[var.name] = x
            else:
                col = uv_index(self.diagram, var, u, self.d)
                vals[var.name] = int(self.mu[var.name][pa_index(var, vals), col])
        targets = targets if targets is not None else self.diagram.names
        return {t: vals[t] for t in targets}

    # vectorized helpers

    def _units_from_joint(self, joint: np.ndarray) -> Dict[str, np.ndarray]:
        u, rem = {}, joint.copy()
        for U in reversed(self.diagram.exogenous):
            u[U] = rem % self.d[U]
            rem //= self.d[U]
        return u

    def _lookup(self, u: Mapping[str, np.ndarray]):
        lookup = {}
        for var in self.layout.order:
            col = np.zeros(len(next(iter(u.values()))), dtype=np.int64)
            for U in var.exo:
                col = col * self.d[U] + u[U]
            lookup[var.name] = (self.mu[var.name], col)
        return lookup

    def _weights(self, u):
        w = None
        for U in self.diagram.exogenous:
            w = self.theta[U][u[U]] if w is None else w * self.theta[U][u[U]]
        return w

    def sample_exogenous(self, gen: np.random.Generator, n: int) -> Dict[str, np.ndarray]:
        out = {}
        for U in self.diagram.exogenous:
            cdf = np.cumsum(self.theta[U])
            idx = np.searchsorted(cdf, gen.random(n) * cdf[-1], side="right")
            out[U] = np.minimum(idx, self.d[U] - 1).astype(np.int64)
        return out

    def values_at(self, u: Mapping[str, np.ndarray], intervention: Mapping[str, int]) -> Dict[str, np.ndarray]:
        n = len(next(iter(u.values())))
        lookup = self._lookup(u)
        vals = {}
        for var in self.layout.order:
            if var.name in intervention:
                vals[var.name] = np.full(n, int(intervention[var.name]), dtype=np.int64)
                continue
            pa = np.zeros(n, dtype=np.int64)
            for p, m in zip(var.parents, var.pa_mult):
                pa += vals[p] * m
            table, col = lookup[var.name]
            vals[var.name] = table[pa, col]
        return vals

    # query evaluation

    def probability(self, query: CtfQuery, budget: int = ENUM_BUDGET) -> float:
        return ctf_probability_enumerate(self, query, budget)

    def to_dict(self) -> dict:
        return {
            "layout": "mu[V] is row-major (n_pa, n_uv); pa digits topological, u digits in exogenous declaration order; first digit most significant",
            "exo_card": {U: self.d[U] for U in self.diagram.exogenous},
            "theta": {U: self.theta[U].tolist() for U in self.diagram.exogenous},
            "mu": {V: {"shape": list(self.mu[V].shape), "values": self.mu[V].ravel().tolist()} for V in self.diagram.names},
        }


def ctf_probability_enumerate(m: CanonicalSCM, q: CtfQuery, budget: int = ENUM_BUDGET) -> float:
    """Exact ``sum_u 1{event at u} prod_U theta_U(u_U)`` by enumerating joint exogenous states."""
    q.validate(m.diagram)
    total = m.n_joint()
    if total > budget:
        raise BudgetExceededError(
            f"{total} joint exogenous states exceed the enumeration budget {budget}; use ctf_probability_mc")
    parts = []
    for start in range(0, total, _CHUNK):
        joint = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
        u = m._units_from_joint(joint)
        w = m._weights(u)
        keep = w > 0
        if not keep.any():
            continue
        u = {U: a[keep] for U, a in u.items()}
        ind = evaluate_worlds(m.layout, m.diagram, q, m._lookup(u), int(keep.sum()))
        parts.append(weighted_total(w[keep], ind))
    return math.fsum(parts)


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    n: int

    def __float__(self):
        return self.value


def ctf_probability_mc(m: CanonicalSCM, q: CtfQuery, n: int, seed: int) -> MCEstimate:
    """Monte-Carlo estimate over ``n`` exogenous draws; deterministic in ``seed``."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    q.validate(m.diagram)
    gen = _rng.derive(seed, 0x6D63)
    s1, s2 = [], []
    for start in range(0, n, _CHUNK):
        k = min(n, start + _CHUNK) - start
        u = m.sample_exogenous(gen, k)
        ind = evaluate_worlds(m.layout, m.diagram, q, m._lookup(u), k)
        s1.append(math.fsum(ind.tolist()))
        s2.append(math.fsum((ind * ind).tolist()))
    mean = math.fsum(s1) / n
    var = max(math.fsum(s2) / n - mean * mean, 0.0)
    return MCEstimate(mean, math.sqrt(var / n), n)


def potential_response(m: CanonicalSCM, u, intervention=None, targets=None):
    return m.potential_response(u, intervention, targets)


def forward_sample(m: CanonicalSCM, intervention: Mapping[str, int], n: int, seed: int):
    """``n`` i.i.d. rows from ``P(V_z)``, tagged with the intervention."""
    from .data import Dataset

    intervention = {k: int(v) for k, v in (intervention or {}).items()}
    for k, v in intervention.items():
        if not 0 <= v < m.diagram.card(k):
            raise ValidationError(f"intervention value {v} out of range for {k}")
    gen = _rng.derive(seed, 0x6673)
    if n == 0:
        return Dataset.empty(m.diagram)
    u = m.sample_exogenous(gen, n)
    vals = m.values_at(u, intervention)
    values = np.stack([vals[name] for name in m.diagram.names], axis=1)
    return Dataset.from_arrays(m.diagram, values, [intervention] * n)


# -- constructors ----------------------------------------------------------------


def response_function_mu(diagram: CausalDiagram, d: Optional[Mapping[str, int]] = None) -> Dict[str, np.ndarray]:
    """Response-function parametrization of ``mu``.

    V reads its mechanism from its first exogenous parent ``U0``: the value
    ``u0`` is split into mixed-radix digits over the variables of ``C(U0)``
    in topological order (first variable least significant, base
    ``|Omega_V| ** n_pa``) and V's digit is decoded as a response function.
    With the canonical cardinality this is a bijection between ``u0`` and
    the tuple of response functions of ``C(U0)``.
    """
    d = dict(d) if d is not None else {U: diagram.effective_cardinality(U) for U in diagram.exogenous}
    layout = layout_of(diagram)
    mu = {}
    for var in layout.order:
        u0 = var.exo[0]
        comp = diagram.c_components.of_exogenous(u0).endogenous
        stride = 1
        for w in diagram.topological_order:
            if w == var.name:
                break
            if w in comp:
                stride *= diagram.n_response_functions(w)
        m_v = var.card**var.n_pa
        n_uv = math.prod(d[U] for U in var.exo)
        if var.n_pa * n_uv > MATERIALIZE_BUDGET:
            raise BudgetExceededError(f"mu table for {var.name} has {var.n_pa * n_uv} entries")
        tail = math.prod(d[U] for U in var.exo[1:])
        u0_vals = np.arange(d[u0], dtype=object)
        r = (u0_vals // stride) % m_v
        table = np.empty((var.n_pa, d[u0]), dtype=np.int64)
        for k in range(var.n_pa):
            table[k] = [(int(ri) // var.card**k) % var.card for ri in r]
        mu[var.name] = np.repeat(table, tail, axis=1)
    return mu


def response_function_model(diagram: CausalDiagram, theta: Mapping[str, np.ndarray]) -> CanonicalSCM:
    d = {U: len(theta[U]) for U in diagram.exogenous}
    return CanonicalSCM(diagram, theta, response_function_mu(diagram, d))


def random_model(diagram: CausalDiagram, seed: int, exo_card: Optional[Mapping[str, int]] = None,
                 concentration: float = 1.0) -> CanonicalSCM:
    """Random canonical SCM: Dirichlet ``theta`` and uniform ``mu`` tables."""
    gen = _rng.derive(seed, 0x726D)
    d = {U: int((exo_card or {}).get(U, diagram.effective_cardinality(U))) for U in diagram.exogenous}
    theta = {U: _rng.dirichlet(gen, np.full(d[U], concentration)) for U in diagram.exogenous}
    layout = layout_of(diagram)
    mu = {}
    for var in layout.order:
        n_uv = math.prod(d[U] for U in var.exo)
        if var.n_pa * n_uv > MATERIALIZE_BUDGET:
            raise BudgetExceededError(f"mu table for {var.name} has {var.n_pa * n_uv} entries")
        mu[var.name] = gen.integers(0, var.card, size=(var.n_pa, n_uv))
    return CanonicalSCM(diagram, theta, mu)


def model_from_dict(diagram: CausalDiagram, obj: Mapping) -> CanonicalSCM:
    try:
        theta = {U: np.asarray(obj["theta"][U], dtype=float) for U in diagram.exogenous}
        mu = {}
        for V in diagram.names:
            ent = obj["mu"][V]
            mu[V] = np.asarray(ent["values"], dtype=np.int64).reshape(ent["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed model file: {exc}") from None
    return CanonicalSCM(diagram, theta, mu)


def load_model(diagram: CausalDiagram, path) -> CanonicalSCM:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(diagram, obj)


# -- atom-space model (collapsed sampler output) -----------------------------


class AtomSCM:
    """Canonical SCM restricted to occupied atoms plus one tail pseudo-atom per U.

    ``theta[U]`` has length ``K_U + 1``; the last entry is the aggregated
    mass of all unoccupied values. ``mu[V]`` has shape
    ``(n_pa, K_U1 + 1, ..., K_Um + 1)`` over ``U_V``; entries equal to
    ``-1`` are fresh: each unit that reaches one receives an independent
    uniform response, memoized for that unit across all worlds.
    """

    def __init__(self, diagram: CausalDiagram, theta: Mapping[str, np.ndarray], mu: Mapping[str, np.ndarray]):
        self.diagram = diagram
        self.layout = layout_of(diagram)
        self.theta = {U: np.asarray(theta[U], dtype=float) for U in diagram.exogenous}
        self.size = {U: len(self.theta[U]) for U in diagram.exogenous}
        self.mu = {V: np.asarray(mu[V], dtype=np.int64) for V in diagram.names}
        self._flat = {}
        for var in self.layout.order:
            self._flat[var.name] = self.mu[var.name].reshape(var.n_pa, -1)

    def n_joint(self) -> int:
        return math.prod(self.size.values())

    def _columns(self, u):
        cols, fresh = {}, {}
        for var in self.layout.order:
            col = np.zeros(len(next(iter(u.values()))), dtype=np.int64)
            for U in var.exo:
                col = col * self.size[U] + u[U]
            cols[var.name] = col
            fresh[var.name] = (self._flat[var.name][:, col] < 0).any(axis=0)
        return cols, fresh

    def _evaluate(self, q, u, gen):
        n = len(next(iter(u.values())))
        cols, fresh = self._columns(u)
        lookup = {}
        for var in self.layout.order:
            table, col, f = self._flat[var.name], cols[var.name], fresh[var.name]
            if f.any():
                idx = np.flatnonzero(f)
                ext = table[:, col[idx]].copy()
                draw = gen.integers(0, var.card, size=ext.shape)
                ext = np.where(ext < 0, draw, ext)
                col = col.copy()
                col[idx] = table.shape[1] + np.arange(len(idx))
                table = np.concatenate([table, ext], axis=1)
            lookup[var.name] = (table, col)
        return evaluate_worlds(self.layout, self.diagram, q, lookup, n)

    def probability(self, q: CtfQuery, gen: np.random.Generator, replicates: int = 32,
                    budget: int = 10**6, mc_samples: int = 20000) -> float:
        """Value of ``q`` under this draw.

        Joint atom tuples are enumerated when there are at most ``budget``;
        tuples touching a fresh entry are averaged over ``replicates``
        independent fresh-response draws. Beyond the budget, ``mc_samples``
        units are sampled instead.
        """
        total = self.n_joint()
        if total <= budget:
            joint = np.arange(total, dtype=np.int64)
            u, rem = {}, joint
            for U in reversed(self.diagram.exogenous):
                u[U] = rem % self.size[U]
                rem = rem // self.size[U]
            w = np.ones(total)
            for U in self.diagram.exogenous:
                w = w * self.theta[U][u[U]]
            keep = w > 0
            u = {U: a[keep] for U, a in u.items()}
            w = w[keep]
            _, fresh = self._columns(u)
            any_fresh = np.zeros(len(w), dtype=bool)
            for f in fresh.values():
                any_fresh |= f
            parts = []
            det = ~any_fresh
            if det.any():
                ud = {U: a[det] for U, a in u.items()}
                parts.append(weighted_total(w[det], self._evaluate(q, ud, gen)))
            if any_fresh.any():
                idx = np.repeat(np.flatnonzero(any_fresh), replicates)
                ur = {U: a[idx] for U, a in u.items()}
                parts.append(weighted_total(w[idx] / replicates, self._evaluate(q, ur, gen)))
            return math.fsum(parts)
        u = {}
        for U in self.diagram.exogenous:
            cdf = np.cumsum(self.theta[U])
            u[U] = np.minimum(np.searchsorted(cdf, gen.random(mc_samples) * cdf[-1], side="right"),
                              self.size[U] - 1).astype(np.int64)
        return math.fsum(self._evaluate(q, u, gen).tolist()) / mc_samples
