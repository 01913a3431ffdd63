"""Gibbs samplers over canonical SCM parameters.

Two samplers target the posterior of ``theta_ctf`` under symmetric
Dirichlet priors ``theta_U ~ Dir(alpha_U / d_U, ..., alpha_U / d_U)``:

``BlockedGibbs``
    Materializes ``theta`` and ``mu`` and alternates the u-, mu- and
    theta-steps. Rows sharing an intervention tag and a value vector are
    exchangeable, so the u-step draws multinomial counts per distinct
    pattern instead of one categorical per row.

``CollapsedGibbs``
    Integrates ``theta`` and ``mu`` out. Each row's exogenous values are
    resampled over occupied atoms plus one aggregated fresh option, with
    a forced-value table enforcing the response indicators. After every
    sweep a parameter draw is finalized in atom space.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from . import rng as _rng
from .data import Dataset
from .exceptions import BudgetExceededError, FeasibilityError, InvariantViolation, ValidationError
from .graph import CausalDiagram, saturates
from .query import CtfQuery
from .scm import AtomSCM, CanonicalSCM, evaluate_worlds, layout_of, response_function_mu, weighted_total

ENUM_BUDGET = 10**7
MATERIALIZE_BUDGET = 10**7
COLLAPSED_BUDGET = 10**6
DENSE_LIMIT = 6 * 10**7  # entries in the collapsed forced/refs tables at start-up
AUTO_ALPHA_LIMIT = 10**4


# -- configuration ---------------------------------------------------------------


@dataclass(frozen=True)
class PriorConfig:
    """Per-exogenous concentration ``alpha_U`` and effective cardinality ``d_U``."""

    alpha: Mapping[str, float]
    card: Mapping[str, int]

    @classmethod
    def build(cls, diagram: CausalDiagram, alpha: Union[None, float, Mapping[str, float]] = None,
              exo_card: Optional[Mapping[str, int]] = None) -> "PriorConfig":
        """Resolve defaults.

        ``d_U`` is the canonical cardinality unless overridden. Without an
        explicit ``alpha``, ``alpha_U = d_U`` (a flat Dirichlet) when
        ``d_U <= 10**4`` and ``alpha_U = 10`` otherwise.
        """
        if exo_card:
            diagram = diagram.with_override(exo_card)
        card = {U: diagram.effective_cardinality(U) for U in diagram.exogenous}
        out = {}
        for U in diagram.exogenous:
            if isinstance(alpha, Mapping):
                a = alpha.get(U)
            else:
                a = alpha
            if a is None:
                a = float(card[U]) if card[U] <= AUTO_ALPHA_LIMIT else 10.0
            a = float(a)
            if not a > 0 or not math.isfinite(a):
                raise ValidationError(f"alpha for {U} must be positive, got {a}")
            out[U] = a
        return cls(out, card)

    def atom_alpha(self, U: str) -> float:
        return self.alpha[U] / self.card[U]

    def fresh_ratio(self, U: str, K: int) -> float:
        """``(d_U - K) / d_U`` evaluated exactly before rounding."""
        d = self.card[U]
        if K >= d:
            return 0.0
        return float(Fraction(d - K, d))

    def to_dict(self):
        return {U: {"alpha": self.alpha[U], "d": str(self.card[U]) if saturates(self.card[U]) else self.card[U]}
                for U in self.alpha}


@dataclass(frozen=True)
class ChainConfig:
    sampler: str = "blocked"
    burn_in: int = 500
    n_draws: int = 1000
    thin: int = 1
    n_chains: int = 1
    seed: int = 0
    mc_samples: int = 20000
    fresh_replicates: int = 32
    enum_budget: int = ENUM_BUDGET
    collapsed_budget: int = COLLAPSED_BUDGET
    fixed_mu: bool = False

    def __post_init__(self):
        if self.sampler not in ("blocked", "collapsed"):
            raise ValidationError(f"unknown sampler {self.sampler!r}")
        for name in ("n_draws", "thin", "n_chains"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.burn_in < 0:
            raise ValidationError("burn_in must be >= 0")


@dataclass
class PosteriorRun:
    """``theta_ctf`` draws from one or more chains."""

    query: str
    draws: np.ndarray
    chain_draws: List[np.ndarray]
    chain_seeds: List[int]
    config: ChainConfig
    prior: PriorConfig
    diagnostics: Dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.draws)

    def summary(self) -> Dict:
        d = self.draws
        return {
            "T": int(len(d)), "mean": float(d.mean()), "sd": float(d.std(ddof=1)) if len(d) > 1 else 0.0,
            "min": float(d.min()), "max": float(d.max()),
            "q025": float(np.quantile(d, 0.025)), "q975": float(np.quantile(d, 0.975)),
        }


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("CTFBOUNDS_THREADS", "1")))
    except ValueError:
        return 1


# -- shared data layout --------------------------------------------------------------


class _Patterns:
    """Distinct (intervention tag, value vector) pairs with multiplicities."""

    def __init__(self, diagram: CausalDiagram, dataset: Dataset):
        self.layout = layout_of(diagram)
        keyed = {}
        for row, tag in zip(dataset.values.tolist(), dataset.tags):
            key = (tag, tuple(row))
            keyed[key] = keyed.get(key, 0) + 1
        self.keys = list(keyed)
        self.counts = np.array([keyed[k] for k in self.keys], dtype=np.int64)
        idx = diagram.index
        self.free = []  # per pattern: list of (var layout, pa index, value) for V not intervened
        for tag, row in self.keys:
            z = dict(tag)
            items = []
            for var in self.layout.order:
                if var.name in z:
                    continue
                pa = sum(row[idx[p]] * m for p, m in zip(var.parents, var.pa_mult))
                items.append((var, pa, row[idx[var.name]]))
            self.free.append(items)


# -- blocked sampler -----------------------------------------------------------------


class BlockedGibbs:
    """Blocked Gibbs sampler with materialized ``theta`` and ``mu``.

    Parameters
    ----------
    diagram, dataset, prior
    gen : numpy Generator driving every random choice
    fixed_mu : if True, ``mu`` stays at the response-function parametrization
    """

    def __init__(self, diagram: CausalDiagram, dataset: Dataset, prior: PriorConfig,
                 gen: np.random.Generator, fixed_mu: bool = False, enum_budget: int = ENUM_BUDGET):
        self.diagram = diagram
        self.prior = prior
        self.gen = gen
        self.fixed_mu = fixed_mu
        self.layout = layout_of(diagram)
        self.exo = diagram.exogenous
        self.d = {U: int(prior.card[U]) for U in self.exo}
        self.J = math.prod(self.d.values())
        if self.J > enum_budget:
            raise BudgetExceededError(
                f"blocked sampler needs {self.J} joint exogenous states (budget {enum_budget}); "
                "use the collapsed sampler or an exo_card override")
        cells = sum(v.n_pa * math.prod(self.d[U] for U in v.exo) for v in self.layout.order)
        if cells > MATERIALIZE_BUDGET:
            raise BudgetExceededError(f"mu tables need {cells} entries (budget {MATERIALIZE_BUDGET})")
        joint = np.arange(self.J, dtype=np.int64)
        self.u_of = {}
        rem = joint
        for U in reversed(self.exo):
            self.u_of[U] = rem % self.d[U]
            rem = rem // self.d[U]
        self.col = {}
        for var in self.layout.order:
            c = np.zeros(self.J, dtype=np.int64)
            for U in var.exo:
                c = c * self.d[U] + self.u_of[U]
            self.col[var.name] = c
        self.patterns = _Patterns(diagram, dataset)
        self.n_rows = int(self.patterns.counts.sum())
        self.theta = {U: np.full(self.d[U], 1.0 / self.d[U]) for U in self.exo}
        self.mu = response_function_mu(diagram, self.d)
        self.assign = np.zeros((len(self.patterns.keys), self.J), dtype=np.int64)
        self._initialize()

    # initialization

    def _likelihood(self, p: int) -> np.ndarray:
        L = np.ones(self.J, dtype=bool)
        for var, pa, v in self.patterns.free[p]:
            L &= self.mu[var.name][pa, self.col[var.name]] == v
        return L

    def _initialize(self):
        locked: Dict[str, set] = {v.name: set() for v in self.layout.order}
        chosen = []
        for p in range(len(self.patterns.keys)):
            L = self._likelihood(p)
            cand = np.flatnonzero(L)
            j = None
            for c in cand:
                if all((int(pa), int(self.col[var.name][c])) not in locked[var.name]
                       or self.mu[var.name][pa, self.col[var.name][c]] == v for var, pa, v in self.patterns.free[p]):
                    j = int(c)
                    break
            if j is None:
                if self.fixed_mu:
                    raise FeasibilityError(f"pattern {self.patterns.keys[p]} is impossible under the fixed mu")
                for c in self.gen.permutation(self.J)[:4096]:
                    if all(self.mu[var.name][pa, self.col[var.name][c]] == v
                           or (int(pa), int(self.col[var.name][c])) not in locked[var.name]
                           for var, pa, v in self.patterns.free[p]):
                        j = int(c)
                        break
                if j is None:
                    raise FeasibilityError("could not find a conflict-free initial state; increase exo_card")
                for var, pa, v in self.patterns.free[p]:
                    self.mu[var.name][pa, self.col[var.name][j]] = v
            for var, pa, v in self.patterns.free[p]:
                locked[var.name].add((int(pa), int(self.col[var.name][j])))
            chosen.append(j)
        for p, j in enumerate(chosen):
            if not self._likelihood(p)[j]:
                raise InvariantViolation("initial repair broke an earlier pattern")
            self.assign[p, j] = self.patterns.counts[p]
        self.step_u()

    # Gibbs steps

    def conditional_u(self, p: int) -> np.ndarray:
        """Normalized ``P(u | v_p, theta, mu)`` over joint exogenous states."""
        w = self._likelihood(p).astype(float)
        for U in self.exo:
            w *= self.theta[U][self.u_of[U]]
        s = math.fsum(w.tolist())
        if not s > 0:
            raise InvariantViolation(f"pattern {self.patterns.keys[p]} has zero likelihood under the current state")
        return w / s

    def step_u(self):
        for p, n in enumerate(self.patterns.counts):
            prob = self.conditional_u(p)
            self.assign[p] = self.gen.multinomial(int(n), prob)

    def forced_keys(self) -> Dict[str, Dict[tuple, int]]:
        forced: Dict[str, Dict[tuple, int]] = {v.name: {} for v in self.layout.order}
        for p in range(len(self.patterns.keys)):
            used = np.flatnonzero(self.assign[p])
            for var, pa, v in self.patterns.free[p]:
                table = forced[var.name]
                for c in np.unique(self.col[var.name][used]).tolist():
                    prev = table.setdefault((pa, c), v)
                    if prev != v:
                        raise InvariantViolation(f"rows disagree on mu[{var.name}] at key {(pa, c)}")
        return forced

    def step_mu(self):
        if self.fixed_mu:
            return
        forced = self.forced_keys()
        for var in self.layout.order:
            table = self.gen.integers(0, var.card, size=self.mu[var.name].shape)
            for (pa, c), v in forced[var.name].items():
                table[pa, c] = v
            self.mu[var.name] = table

    def exo_counts(self) -> Dict[str, np.ndarray]:
        total = self.assign.sum(axis=0)
        return {U: np.bincount(self.u_of[U], weights=total, minlength=self.d[U]) for U in self.exo}

    def step_theta(self):
        counts = self.exo_counts()
        for U in self.exo:
            self.theta[U] = _rng.dirichlet(self.gen, self.prior.atom_alpha(U) + counts[U])

    def sweep(self):
        self.step_u()
        self.step_mu()
        self.step_theta()

    # evaluation

    def model(self) -> CanonicalSCM:
        return CanonicalSCM(self.diagram, {U: t.copy() for U, t in self.theta.items()},
                            {V: m.copy() for V, m in self.mu.items()})

    def theta_ctf(self, q: CtfQuery) -> float:
        w = np.ones(self.J)
        for U in self.exo:
            w = w * self.theta[U][self.u_of[U]]
        lookup = {var.name: (self.mu[var.name], self.col[var.name]) for var in self.layout.order}
        ind = evaluate_worlds(self.layout, self.diagram, q, lookup, self.J)
        return weighted_total(w, ind)


def blocked_step_u(state: BlockedGibbs):
    state.step_u()


def blocked_step_mu(state: BlockedGibbs):
    state.step_mu()


def blocked_step_theta(state: BlockedGibbs):
    state.step_theta()


# -- collapsed sampler -----------------------------------------------------------


class CollapsedGibbs:
    """Collapsed (Polya-urn) Gibbs sampler over per-row exogenous atoms.

    Atoms are integer ids per exogenous variable; ``forced[V]`` and
    ``refs[V]`` are arrays of shape ``(n_pa, cap_U for U in U_V)`` holding
    the value each key is pinned to by the rows using it (``-1`` when no
    row does) and the number of such rows.
    """

    def __init__(self, diagram: CausalDiagram, dataset: Dataset, prior: PriorConfig,
                 gen: np.random.Generator, budget: int = COLLAPSED_BUDGET):
        self.diagram = diagram
        self.prior = prior
        self.gen = gen
        self.budget = budget
        self.layout = layout_of(diagram)
        self.exo = diagram.exogenous
        self.eidx = {U: i for i, U in enumerate(self.exo)}
        self.N = len(dataset)
        idx = diagram.index
        vals = dataset.values
        self.row_free = []
        for n in range(self.N):
            z = dict(dataset.tags[n])
            items = []
            for var in self.layout.order:
                if var.name in z:
                    continue
                pa = int(sum(vals[n, idx[p]] * m for p, m in zip(var.parents, var.pa_mult)))
                items.append((var, pa, int(vals[n, idx[var.name]])))
            self.row_free.append(items)
        # one atom per row is the natural start when d_U allows it, but the
        # tables are dense in atom ids, so large N starts from urn seating
        cap = max(8, 2 * self.N)
        dense = sum(var.n_pa * cap ** len(var.exo) for var in self.layout.order)
        self._own_atoms = all(self.prior.card[U] >= self.N for U in self.exo) and dense <= DENSE_LIMIT
        self.cap = {U: cap if self._own_atoms else 64 for U in self.exo}
        self.atom = np.full((self.N, len(self.exo)), -1, dtype=np.int64)
        self.count = {U: np.zeros(self.cap[U], dtype=np.int64) for U in self.exo}
        self.forced = {}
        self.refs = {}
        for var in self.layout.order:
            shape = (var.n_pa,) + tuple(self.cap[U] for U in var.exo)
            self.forced[var.name] = np.full(shape, -1, dtype=np.int32)
            self.refs[var.name] = np.zeros(shape, dtype=np.int32)
        self.fallback_rows = 0
        self._initialize()

    # bookkeeping

    def occupied(self, U) -> np.ndarray:
        return np.flatnonzero(self.count[U])

    def K(self, U) -> int:
        return int(np.count_nonzero(self.count[U]))

    def _grow(self, U):
        old = self.cap[U]
        new = old * 2
        self.count[U] = np.concatenate([self.count[U], np.zeros(new - old, dtype=np.int64)])
        for var in self.layout.order:
            if U not in var.exo:
                continue
            axis = 1 + var.exo.index(U)
            pad = [(0, 0)] * self.forced[var.name].ndim
            pad[axis] = (0, new - old)
            self.forced[var.name] = np.pad(self.forced[var.name], pad, constant_values=-1)
            self.refs[var.name] = np.pad(self.refs[var.name], pad, constant_values=0)
        self.cap[U] = new

    def _new_atom(self, U) -> int:
        free = np.flatnonzero(self.count[U] == 0)
        if free.size == 0:
            self._grow(U)
            free = np.flatnonzero(self.count[U] == 0)
        return int(free[0])

    def _key(self, var, pa, atoms):
        return (pa,) + tuple(int(atoms[self.eidx[U]]) for U in var.exo)

    def _remove(self, n):
        atoms = self.atom[n]
        for var, pa, v in self.row_free[n]:
            key = self._key(var, pa, atoms)
            self.refs[var.name][key] -= 1
            if self.refs[var.name][key] == 0:
                self.forced[var.name][key] = -1
        for U in self.exo:
            self.count[U][atoms[self.eidx[U]]] -= 1

    def _add(self, n, atoms):
        for var, pa, v in self.row_free[n]:
            key = self._key(var, pa, atoms)
            cur = self.forced[var.name][key]
            if cur == -1:
                self.forced[var.name][key] = v
            elif cur != v:
                raise InvariantViolation(f"row {n} conflicts with forced mu[{var.name}] at {key}")
            self.refs[var.name][key] += 1
        for U in self.exo:
            self.count[U][atoms[self.eidx[U]]] += 1
        self.atom[n] = atoms

    # initialization

    def _initialize(self):
        if self._own_atoms:
            for n in range(self.N):
                self._add(n, np.array([self._new_atom(U) for U in self.exo]))
            return
        # sequential urn seating when a small d_U cannot give every row its own atom
        for n in range(self.N):
            self.atom[n] = -1
            self._place(n, initial=True)

    # urn conditional

    def _factor_tables(self, n, occ, candidates_for):
        """Per-exogenous urn weights and per-V likelihood tensors for row ``n``."""
        W = {}
        for U in self.exo:
            cand = candidates_for[U]
            fresh_w = self.prior.alpha[U] * self.prior.fresh_ratio(U, len(occ[U]))
            W[U] = np.where(cand >= 0, self.count[U][cand] + self.prior.atom_alpha(U), fresh_w)
        L = []
        for var, pa, v in self.row_free[n]:
            sub = self.forced[var.name][pa]
            cands = [candidates_for[U] for U in var.exo]
            real = [np.where(c >= 0, c, 0) for c in cands]
            f = sub[np.ix_(*real)]
            fresh_any = np.zeros(f.shape, dtype=bool)
            for ax, c in enumerate(cands):
                shape = [1] * len(cands)
                shape[ax] = -1
                fresh_any = fresh_any | (c < 0).reshape(shape)
            lik = np.where(fresh_any | (f == -1), 1.0 / var.card, (f == v).astype(float))
            L.append((var, lik))
        return W, L

    def _joint_weights(self, n, candidates_for):
        occ = {U: self.occupied(U) for U in self.exo}
        W, L = self._factor_tables(n, occ, candidates_for)
        nd = len(self.exo)
        total = np.ones([len(candidates_for[U]) for U in self.exo])
        for U in self.exo:
            shape = [1] * nd
            shape[self.eidx[U]] = -1
            total = total * W[U].reshape(shape)
        for var, lik in L:
            axes = [self.eidx[U] for U in var.exo]
            order = np.argsort(axes)
            t = np.transpose(lik, order)
            shape = [1] * nd
            for ax, sz in zip(sorted(axes), t.shape):
                shape[ax] = sz
            total = total * t.reshape(shape)
        return total

    def _place(self, n, initial=False):
        occ = {U: self.occupied(U) for U in self.exo}
        size = math.prod(len(occ[U]) + 1 for U in self.exo)
        if size <= self.budget:
            cands = {U: np.append(occ[U], -1) for U in self.exo}
            w = self._joint_weights(n, cands).ravel()
            s = w.sum()
            if not s > 0:
                raise FeasibilityError(f"row {n} has no consistent exogenous assignment; "
                                       "the exo_card override is too small for the data")
            pick = np.unravel_index(self._choice(w / s), [len(cands[U]) for U in self.exo])
            choice = [int(cands[U][pick[self.eidx[U]]]) for U in self.exo]
        else:
            # coordinate-wise update when the joint product exceeds the budget
            self.fallback_rows += 1
            choice = [int(a) for a in self.atom[n]]
            for U in self.exo:
                cands = {V: np.array([choice[self.eidx[V]]]) for V in self.exo}
                cands[U] = np.append(occ[U], -1)
                w = self._joint_weights(n, cands).ravel()
                s = w.sum()
                if not s > 0:
                    raise InvariantViolation(f"row {n} lost its own assignment in a coordinate update")
                choice[self.eidx[U]] = int(cands[U][self._choice(w / s)])
        atoms = np.array([c if c >= 0 else self._new_atom(U) for U, c in zip(self.exo, choice)])
        for U, a in zip(self.exo, atoms):
            if a >= self.cap[U]:
                raise InvariantViolation("atom id beyond capacity")
        self._add(n, atoms)

    def _choice(self, p):
        c = np.cumsum(p)
        return int(min(np.searchsorted(c, self.gen.random() * c[-1], side="right"), len(p) - 1))

    def step_row(self, n):
        self._remove(n)
        self._place(n)

    def conditional_row(self, n):
        """Normalized urn conditional for row ``n`` with the row removed; restores state.

        Returns a dict mapping each joint candidate (atom ids, ``-1`` = fresh)
        to its probability.
        """
        saved = self.atom[n].copy()
        self._remove(n)
        occ = {U: self.occupied(U) for U in self.exo}
        cands = {U: np.append(occ[U], -1) for U in self.exo}
        w = self._joint_weights(n, cands)
        self._add(n, saved)
        w = w / w.sum()
        out = {}
        for ix in np.ndindex(*w.shape):
            out[tuple(int(cands[U][ix[self.eidx[U]]]) for U in self.exo)] = float(w[ix])
        return out

    def sweep(self):
        for n in range(self.N):
            self.step_row(n)

    def check(self):
        """Recount occupancy and forced values from rows; raise on mismatch."""
        for U in self.exo:
            recount = np.bincount(self.atom[:, self.eidx[U]], minlength=self.cap[U]) if self.N else np.zeros(self.cap[U])
            if not np.array_equal(recount, self.count[U]):
                raise InvariantViolation(f"occupancy counts for {U} drifted")
        for var in self.layout.order:
            refs = np.zeros_like(self.refs[var.name])
            for n in range(self.N):
                for w, pa, v in self.row_free[n]:
                    if w.name != var.name:
                        continue
                    key = self._key(var, pa, self.atom[n])
                    if self.forced[var.name][key] != v:
                        raise InvariantViolation(f"mu[{var.name}] indicator broken at row {n}")
                    refs[key] += 1
            if not np.array_equal(refs, self.refs[var.name]):
                raise InvariantViolation(f"reference counts for {var.name} drifted")
            if np.any((self.refs[var.name] == 0) != (self.forced[var.name] == -1)):
                raise InvariantViolation(f"stale forced entries for {var.name}")

    # finalize

    def finalize(self) -> AtomSCM:
        """Draw ``(theta, mu)`` given the atom assignment, in atom space."""
        occ = {U: self.occupied(U) for U in self.exo}
        theta = {}
        for U in self.exo:
            K = len(occ[U])
            shapes = self.prior.atom_alpha(U) + self.count[U][occ[U]].astype(float)
            tail = self.prior.alpha[U] * self.prior.fresh_ratio(U, K)
            log_g = _rng.log_gamma_variates(self.gen, np.append(shapes, tail if tail > 0 else 1.0))
            if not tail > 0:
                log_g[-1] = -np.inf
            log_g -= log_g.max()
            g = np.exp(log_g)
            theta[U] = g / g.sum()
        mu = {}
        for var in self.layout.order:
            sub = self.forced[var.name][np.ix_(np.arange(var.n_pa), *[occ[U] for U in var.exo])]
            drawn = self.gen.integers(0, var.card, size=sub.shape)
            sub = np.where(sub < 0, drawn, sub)
            pad = [(0, 0)] + [(0, 1)] * len(var.exo)
            mu[var.name] = np.pad(sub, pad, constant_values=-1)
        return AtomSCM(self.diagram, theta, mu)


def collapsed_step_u(state: CollapsedGibbs, n: int):
    state.step_row(n)


def collapsed_finalize(state: CollapsedGibbs) -> AtomSCM:
    return state.finalize()


# -- chains --------------------------------------------------------------------------


def _run_one(diagram, dataset, query, prior, config: ChainConfig, chain: int):
    gen = _rng.derive(config.seed, chain)
    draws = np.empty(config.n_draws)
    meta = {}
    if config.sampler == "blocked":
        s = BlockedGibbs(diagram, dataset, prior, gen, fixed_mu=config.fixed_mu, enum_budget=config.enum_budget)
        for _ in range(config.burn_in):
            s.sweep()
        for t in range(config.n_draws):
            for _ in range(config.thin):
                s.sweep()
            draws[t] = s.theta_ctf(query)
    else:
        s = CollapsedGibbs(diagram, dataset, prior, gen, budget=config.collapsed_budget)
        ks = []
        for _ in range(config.burn_in):
            s.sweep()
        for t in range(config.n_draws):
            for _ in range(config.thin):
                s.sweep()
            ks.append([s.K(U) for U in s.exo])
            m = s.finalize()
            draws[t] = m.probability(query, gen, replicates=config.fresh_replicates,
                                     budget=config.collapsed_budget, mc_samples=config.mc_samples)
        ks = np.asarray(ks)
        meta = {"mean_occupied": {U: float(ks[:, i].mean()) for i, U in enumerate(s.exo)},
                "coordinate_fallback_rows": int(s.fallback_rows)}
    return draws, meta


def split_rhat(chains: Sequence[np.ndarray]) -> float:
    """Split-chain potential scale reduction (diagnostic only)."""
    halves = []
    for c in chains:
        h = len(c) // 2
        if h < 2:
            return float("nan")
        halves += [c[:h], c[h:2 * h]]
    x = np.stack(halves)
    m, n = x.shape
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    return float(math.sqrt(((n - 1) / n * W + B / n) / W))


def run_chain(diagram: CausalDiagram, dataset: Dataset, query: CtfQuery, prior: PriorConfig,
              config: ChainConfig) -> PosteriorRun:
    """Run ``config.n_chains`` chains and collect ``theta_ctf`` draws."""
    query.validate(diagram)
    if dataset.diagram != diagram:
        raise ValidationError("dataset was loaded against a different diagram")
    if set(prior.card) != set(diagram.exogenous):
        raise ValidationError("prior does not cover the diagram's exogenous variables")
    for tag in dataset.regimes:
        for k, _ in tag:
            if k not in diagram.index:
                raise ValidationError(f"regime intervenes on unknown variable {k!r}")
    jobs = list(range(config.n_chains))
    workers = min(thread_cap(), len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _run_one(diagram, dataset, query, prior, config, c), jobs))
    else:
        results = [_run_one(diagram, dataset, query, prior, config, c) for c in jobs]
    chain_draws = [r[0] for r in results]
    lo, hi = (0.0, 1.0) if query.is_probability else query.outcome_range(diagram)
    for c in chain_draws:
        if np.any(c < lo - 1e-9) or np.any(c > hi + 1e-9):
            raise InvariantViolation("a posterior draw left the outcome range")
    diagnostics = {"chains": [r[1] for r in results]}
    if len(chain_draws) > 1:
        diagnostics["split_rhat"] = split_rhat(chain_draws)
    overridden = [U for U in diagram.exogenous if diagram.is_overridden(U)]
    if overridden:
        diagnostics["exo_card_override"] = overridden
    return PosteriorRun(str(query), np.concatenate(chain_draws), chain_draws,
                        [_rng.derive_seed(config.seed, c) for c in jobs], config, prior, diagnostics)
