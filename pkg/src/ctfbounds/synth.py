"""Synthetic SCMs with continuous exogenous noise.

Each kind couples its worlds through shared exogenous draws: Bernoulli
and Binomial outcomes use per-trial uniforms ``E`` fixed per unit, so
``V = sum_t 1{E_t < rho}`` changes only through ``rho`` across
interventions. Normal draws use Box-Muller and Logistic draws the
inverse CDF, both over the Philox uniform stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from . import rng as _rng
from .data import Dataset
from .exceptions import ValidationError
from .graph import CausalDiagram, make_diagram
from .query import CtfQuery, evaluate_event

_CHUNK = 1 << 20


def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-t))


def _trials(e, rho):
    """Binomial count from per-trial uniforms ``e`` of shape (n, k)."""
    return (e < rho[:, None]).sum(axis=1)


@dataclass(frozen=True)
class SyntheticScm:
    """A named generator: diagram, noise sampler and structural equations."""

    kind: str
    diagram: CausalDiagram
    noise: Callable[[np.random.Generator, int], Dict[str, np.ndarray]]
    equations: Callable[[Dict[str, np.ndarray], Mapping[str, int]], Dict[str, np.ndarray]]
    default_query: str
    mixed_regimes: bool = False

    def solve(self, u, do=None):
        do = {k: int(v) for k, v in (do or {}).items()}
        n = len(next(iter(u.values())))
        for k, v in do.items():
            if k not in self.diagram.index or not 0 <= v < self.diagram.card(k):
                raise ValidationError(f"invalid intervention {k}={v} for {self.kind}")
        out = self.equations(u, _Do(do, n))
        return {k: np.asarray(v, dtype=np.int64) for k, v in out.items()}


class _Do:
    """Helper so equations read ``x = do("X", computed)``."""

    def __init__(self, do, n):
        self.do, self.n = do, n

    def __call__(self, name, value):
        if name in self.do:
            return np.full(self.n, self.do[name], dtype=np.int64)
        return np.asarray(value, dtype=np.int64)


# -- kinds --------------------------------------------------------------------


def _frontdoor():
    g = make_diagram([("X", "W"), ("W", "Y")], {"U1": ["X", "Y"], "U2": ["W"]}, order=["X", "W", "Y"])

    def noise(gen, n):
        return {"U1": _rng.uniform_open(gen, n), "U2": _rng.standard_normal(gen, n),
                "EX": gen.random(n), "EW": gen.random(n), "EY": gen.random(n)}

    def eq(u, do):
        x = do("X", u["EX"] < u["U1"])
        w = do("W", u["EW"] < _sigmoid(x + u["U2"]))
        y = do("Y", u["EY"] < 1.0 / (1.0 + np.exp(w - u["U1"])))
        return {"X": x, "W": w, "Y": y}

    return SyntheticScm("frontdoor", g, noise, eq, "P[Y@{X=0}=1]")


def _bow():
    g = make_diagram([("X", "Y")], {"U": ["X", "Y"]})

    def noise(gen, n):
        return {"U": _rng.standard_normal(gen, n), "EX": gen.random(n), "E": _rng.standard_logistic(gen, n)}

    def eq(u, do):
        x = do("X", u["EX"] < 1.0 / (1.0 + np.exp(u["U"])))
        y = do("Y", x - u["U"] + u["E"] + 0.1 > 0)
        return {"X": x, "Y": y}

    return SyntheticScm("bow", g, noise, eq, "P[Y@{X=1}=1 & Y@{X=0}=0]")


def _iv():
    g = make_diagram([("Z", "X"), ("X", "Y")], {"U1": ["Z"], "U2": ["X", "Y"]})

    def noise(gen, n):
        return {"U1": _rng.standard_normal(gen, n), "U2": _rng.standard_normal(gen, n),
                "EZ": gen.random(n), "EX": gen.random(n), "EY": gen.random(n)}

    def eq(u, do):
        z = do("Z", u["EZ"] < _sigmoid(u["U1"]))
        x = do("X", u["EX"] < _sigmoid(z + u["U2"]))
        y = do("Y", u["EY"] < 1.0 / (1.0 + np.exp(x - u["U2"] + 0.5)))
        return {"Z": z, "X": x, "Y": y}

    return SyntheticScm("iv", g, noise, eq, "P[Y@{X=0}=1]")


def _double_bow():
    g = make_diagram([("Z", "X"), ("X", "Y")], {"U1": ["Z", "X"], "U2": ["X", "Y"]})

    def noise(gen, n):
        return {"U1": _rng.standard_normal(gen, n), "U2": _rng.standard_normal(gen, n),
                "EZ": gen.random(n), "EX": gen.random(n), "EY": gen.random(n)}

    def eq(u, do):
        z = do("Z", u["EZ"] < _sigmoid(u["U1"]))
        x = do("X", u["EX"] < _sigmoid(z + u["U1"] + u["U2"]))
        y = do("Y", u["EY"] < 1.0 / (1.0 + np.exp(x - u["U2"] + 0.5)))
        return {"Z": z, "X": x, "Y": y}

    return SyntheticScm("double_bow", g, noise, eq, "P[Y@{X=0}=1]")


def _m_bd():
    g = make_diagram([("Z", "X"), ("Z", "Y"), ("X", "Y")], {"U1": ["Z", "X"], "U2": ["Z", "Y"]},
                     order=["Z", "X", "Y"])

    def noise(gen, n):
        return {"U1": _rng.standard_normal(gen, n), "U2": _rng.standard_normal(gen, n),
                "EZ": gen.random(n), "EX": gen.random(n), "EY": gen.random(n)}

    def eq(u, do):
        z = do("Z", u["EZ"] < _sigmoid(u["U1"]))
        # the published X equation also reads U2, although the diagram has no U2 -> X edge
        x = do("X", u["EX"] < _sigmoid(z + u["U1"] + u["U2"]))
        y = do("Y", u["EY"] < 1.0 / (1.0 + np.exp(x - z - u["U2"])))
        return {"Z": z, "X": x, "Y": y}

    return SyntheticScm("m_bd", g, noise, eq, "P[Y@{X=0}=1]")


def _napkin():
    g = make_diagram([("W", "Z"), ("Z", "X"), ("X", "Y")], {"U1": ["W", "X"], "U2": ["W", "Y"], "U3": ["Z"]},
                     order=["W", "Z", "X", "Y"])

    def noise(gen, n):
        out = {f"U{i}": _rng.standard_normal(gen, n) for i in (1, 2, 3)}
        out.update({f"E{v}": gen.random(n) for v in "WZXY"})
        return out

    def eq(u, do):
        w = do("W", u["EW"] < 1.0 / (1.0 + np.exp(u["U1"] - u["U2"])))
        z = do("Z", u["EZ"] < 1.0 / (1.0 + np.exp(w - u["U3"])))
        x = do("X", u["EX"] < _sigmoid(z + u["U1"]))
        y = do("Y", u["EY"] < 1.0 / (1.0 + np.exp(x - u["U2"] - 0.5)))
        return {"W": w, "Z": z, "X": x, "Y": y}

    return SyntheticScm("napkin", g, noise, eq, "P[Y@{X=0}=1]")


def _triple_bow():
    g = make_diagram([("Z", "W"), ("W", "X"), ("X", "Y")],
                     {"U1": ["Z", "W"], "U2": ["W", "X"], "U3": ["X", "Y"]}, order=["Z", "W", "X", "Y"])

    def noise(gen, n):
        return {"U1": _rng.uniform_open(gen, n), "U2": _rng.standard_normal(gen, n),
                "U3": _rng.standard_normal(gen, n), "EW": gen.random(n), "EX": gen.random(n),
                "E": _rng.standard_logistic(gen, n)}

    def eq(u, do):
        # Z follows the floor equation; the separately listed rho_Z is never used
        z = do("Z", np.floor(1.5 * u["U1"]))
        w = do("W", u["EW"] < _sigmoid(z + u["U1"] + u["U2"]))
        x = do("X", u["EX"] < _sigmoid(w + u["U2"] + u["U3"]))
        y = do("Y", x - u["U3"] + u["E"] + 0.1 > 0)
        return {"Z": z, "W": w, "X": x, "Y": y}

    return SyntheticScm("triple_bow", g, noise, eq, "P[Y@{X=1}=1 & Y@{X=0}=0]", mixed_regimes=True)


def _see_do():
    g = make_diagram([("Z", "X"), ("X", "Y")], {"U1": ["Z", "Y"], "U2": ["X", "Y"]},
                     cards={"Z": 10, "X": 10, "Y": 10})

    def noise(gen, n):
        return {"U1": _rng.uniform_open(gen, n), "U2": _rng.uniform_open(gen, n),
                "EX": gen.random((n, 9)), "EY": gen.random((n, 9))}

    def eq(u, do):
        z = do("Z", np.minimum(np.floor(15.0 * u["U1"]), 9))
        x = do("X", _trials(u["EX"], _sigmoid(z + u["U2"])))
        y = do("Y", _trials(u["EY"], 1.0 / (1.0 + np.exp(x / 10.0 - u["U1"] * u["U2"]))))
        return {"Z": z, "X": x, "Y": y}

    return SyntheticScm("see_do", g, noise, eq, "P[Z + X@{Z=0} + Y@{X=0} >= 14]", mixed_regimes=True)


def _ist_iv_shape():
    g = make_diagram([("Z", "X"), ("X", "Y")], {"U1": ["Z"], "U2": ["X", "Y"]},
                     cards={"Z": 10, "X": 6, "Y": 4})

    def noise(gen, n):
        return {"U1": _rng.uniform_open(gen, n), "U2": 70.0 + 12.0 * _rng.standard_normal(gen, n),
                "EX": gen.random((n, 5)), "EY": gen.random((n, 3))}

    def eq(u, do):
        age = (u["U2"] - 70.0) / 12.0
        z = do("Z", np.floor(10.0 * u["U1"]))
        x = do("X", _trials(u["EX"], _sigmoid((z - 4.5) / 3.0 + age)))
        y = do("Y", _trials(u["EY"], _sigmoid(x / 5.0 - 0.5 - age)))
        return {"Z": z, "X": x, "Y": y}

    return SyntheticScm("ist_iv_shape", g, noise, eq, "E[Y@{X=3}]")


_FACTORIES = {
    "frontdoor": _frontdoor, "bow": _bow, "iv": _iv, "napkin": _napkin, "double_bow": _double_bow,
    "m_bd": _m_bd, "triple_bow": _triple_bow, "see_do": _see_do, "ist_iv_shape": _ist_iv_shape,
}
KINDS = tuple(_FACTORIES)
_CACHE: Dict[str, SyntheticScm] = {}


def get(kind: str) -> SyntheticScm:
    if kind not in _FACTORIES:
        raise ValidationError(f"unknown SCM kind {kind!r}; choose from {', '.join(KINDS)}")
    if kind not in _CACHE:
        _CACHE[kind] = _FACTORIES[kind]()
    return _CACHE[kind]


# -- sampling -----------------------------------------------------------------


def default_plan(kind: str, n: int) -> List[Tuple[Dict[str, int], int]]:
    """Observational rows, or for mixed kinds one third observational and the
    rest split as evenly as possible over ``do(Z=z)`` for every ``z``."""
    scm = get(kind)
    if not scm.mixed_regimes:
        return [({}, n)]
    n_obs = -(-n // 3)
    rest = n - n_obs
    zs = scm.diagram.card("Z")
    plan = [({}, n_obs)]
    for z in range(zs):
        plan.append(({"Z": z}, rest // zs + (1 if z < rest % zs else 0)))
    return plan


def sample(kind: str, plan: Sequence[Tuple[Mapping[str, int], int]], seed: int) -> Dataset:
    """Draw a dataset: each ``(intervention, count)`` block gets fresh units."""
    scm = get(kind)
    parts = []
    for b, (do, count) in enumerate(plan):
        count = int(count)
        if count < 0:
            raise ValidationError("regime counts must be non-negative")
        if count == 0:
            continue
        gen = _rng.derive(seed, 0x73, b)
        vals = scm.solve(scm.noise(gen, count), do)
        values = np.stack([vals[v] for v in scm.diagram.names], axis=1)
        parts.append(Dataset.from_arrays(scm.diagram, values, [dict(do)] * count))
    if not parts:
        return Dataset.empty(scm.diagram)
    return Dataset.concat(parts)


@dataclass(frozen=True)
class GroundTruth:
    query: str
    estimate: float
    n: int
    stderr: float


def ground_truth(kind: str, query: CtfQuery, n: int, seed: int) -> GroundTruth:
    """Monte-Carlo value of ``query`` with all terms evaluated on shared units."""
    scm = get(kind)
    query.validate(scm.diagram)
    if n < 1:
        raise ValidationError("n must be positive")
    sums, sq = [], []
    for shard, start in enumerate(range(0, n, _CHUNK)):
        k = min(n, start + _CHUNK) - start
        u = scm.noise(_rng.derive(seed, 0x74, shard), k)
        values = {}
        for iv in query.regimes():
            world = scm.solve(u, dict(iv))
            for t in query.terms:
                if t.intervention == iv:
                    values[t.alias] = world[t.variable]
        res = np.asarray(evaluate_event(query, values), dtype=float)
        res = np.broadcast_to(res, (k,))
        sums.append(math.fsum(res.tolist()))
        sq.append(math.fsum((res * res).tolist()))
    mean = math.fsum(sums) / n
    if query.is_probability:
        se = math.sqrt(max(mean * (1 - mean), 0.0) / n)
    else:
        se = math.sqrt(max(math.fsum(sq) / n - mean * mean, 0.0) / n)
    return GroundTruth(str(query), mean, n, se)
