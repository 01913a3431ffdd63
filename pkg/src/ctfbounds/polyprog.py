"""Polynomial-program reduction of counterfactual bounding problems.

Variables are ``theta.U.k`` (one simplex group per exogenous U) and
``mu.V.pa{i}.u{j}.v{y}`` (one indicator group per mechanism key, relaxed
to [0, 1] with ``v (1 - v) = 0`` rows). The objective expands the
counterfactual probability over joint exogenous states and over
assignments of every (world, variable) node; branches that give one
indicator group two different values vanish on the feasible set and are
omitted, while repeated identical factors merge into powers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from . import rng as _rng
from .data import EmpiricalDistribution, format_tag
from .exceptions import BudgetExceededError, ValidationError
from .graph import CausalDiagram
from .query import CtfQuery, EXPECTATION, evaluate_event
from .scm import CanonicalSCM, layout_of, response_function_mu

MONOMIAL_BUDGET = 2 * 10**6

Monomial = Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class Variable:
    name: str
    group: str
    kind: str  # "simplex" or "binary"


@dataclass(frozen=True)
class Constraint:
    terms: Tuple[Tuple[float, Monomial], ...]
    rel: str
    rhs: float
    tag: str


@dataclass
class PolynomialProgram:
    variables: List[Variable]
    objective: List[Tuple[float, Monomial]]
    constraints: List[Constraint]
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = {v.name: i for i, v in enumerate(self.variables)}

    def groups(self) -> Dict[str, List[int]]:
        out: Dict[str, List[int]] = {}
        for i, v in enumerate(self.variables):
            out.setdefault(v.group, []).append(i)
        return out

    # serialization

    def to_dict(self) -> dict:
        names = [v.name for v in self.variables]

        def mono(m):
            return [[names[i], p] for i, p in m]

        return {
            "variables": [{"name": v.name, "group": v.group, "kind": v.kind} for v in self.variables],
            "objective": [{"c": c, "m": mono(m)} for c, m in self.objective],
            "constraints": [{"m": [{"c": c, "m": mono(m)} for c, m in k.terms], "rel": k.rel, "rhs": k.rhs,
                             "tag": k.tag} for k in self.constraints],
            "metadata": self.metadata,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False)


def parse_program(text: str) -> PolynomialProgram:
    try:
        obj = json.loads(text)
        variables = [Variable(v["name"], v["group"], v["kind"]) for v in obj["variables"]]
        index = {v.name: i for i, v in enumerate(variables)}

        def mono(m):
            return tuple((index[n], int(p)) for n, p in m)

        objective = [(float(t["c"]), mono(t["m"])) for t in obj["objective"]]
        constraints = [Constraint(tuple((float(t["c"]), mono(t["m"])) for t in k["m"]), k["rel"], float(k["rhs"]),
                                  k["tag"]) for k in obj["constraints"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed program file: {exc}") from None
    return PolynomialProgram(variables, objective, constraints, obj.get("metadata", {}))


def emit(program: PolynomialProgram, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(program.dumps())
        fh.write("\n")


# -- reduction -----------------------------------------------------------------


class _Namer:
    def __init__(self, diagram: CausalDiagram, d: Mapping[str, int]):
        self.diagram, self.d = diagram, d
        self.layout = layout_of(diagram)
        self.variables: List[Variable] = []
        self.theta: Dict[str, int] = {}
        self.mu: Dict[str, int] = {}
        self.n_uv = {}
        for U in diagram.exogenous:
            for k in range(d[U]):
                self.theta[(U, k)] = len(self.variables)
                self.variables.append(Variable(f"theta.{U}.{k}", f"theta:{U}", "simplex"))
        for var in self.layout.order:
            n_uv = math.prod(d[U] for U in var.exo)
            self.n_uv[var.name] = n_uv
            for i in range(var.n_pa):
                for j in range(n_uv):
                    for y in range(var.card):
                        self.mu[(var.name, i, j, y)] = len(self.variables)
                        self.variables.append(Variable(f"mu.{var.name}.pa{i}.u{j}.v{y}",
                                                       f"mu:{var.name}:pa{i}:u{j}", "binary"))


def _joint_states(diagram, d):
    total = math.prod(d[U] for U in diagram.exogenous)
    for j in range(total):
        u, rem = {}, j
        for U in reversed(diagram.exogenous):
            u[U] = rem % d[U]
            rem //= d[U]
        yield u


def _canon(factors: Mapping[int, int]) -> Monomial:
    return tuple(sorted(factors.items()))


def _regime_tag(tag) -> str:
    return f"do({format_tag(tag)})" if tag else "obs"


def reduce(diagram: CausalDiagram, query: CtfQuery, regimes: Sequence[EmpiricalDistribution],
           exo_card: Optional[Mapping[str, int]] = None) -> PolynomialProgram:
    """Build the polynomial program for bounding ``query`` under the given regimes."""
    query.validate(diagram)
    d = {U: int((exo_card or {}).get(U, diagram.effective_cardinality(U))) for U in diagram.exogenous}
    J = math.prod(d.values())
    names = _Namer(diagram, d)
    layout = names.layout
    cards = {v.name: v.card for v in layout.order}
    n_cfg = math.prod(cards.values())
    if J * max(1, n_cfg) * max(1, len(regimes)) > MONOMIAL_BUDGET or J > MONOMIAL_BUDGET:
        raise BudgetExceededError(f"reduction would enumerate {J} exogenous states; override exo_card to shrink")

    def uv(var, u):
        j = 0
        for U in var.exo:
            j = j * d[U] + u[U]
        return j

    # objective: DFS over (world, variable) nodes
    worlds = []
    for iv in query.regimes():
        targets = [t.variable for t in query.terms if t.intervention == iv]
        need = diagram.ancestors(targets)
        worlds.append((dict(iv), [v for v in layout.order if v.name in need], iv))
    nodes = [(wi, var) for wi, (_, vs, _) in enumerate(worlds) for var in vs]
    obj: Dict[Monomial, float] = {}
    for u in _joint_states(diagram, d):
        theta_f = {names.theta[(U, u[U])]: 1 for U in diagram.exogenous}
        vals = [dict() for _ in worlds]
        keys: Dict[tuple, int] = {}
        factors: Dict[int, int] = dict(theta_f)

        def dfs(pos):
            if pos == len(nodes):
                values = {}
                for wi, (do, _, iv) in enumerate(worlds):
                    for t in query.terms:
                        if t.intervention == iv:
                            values[t.alias] = vals[wi][t.variable]
                c = float(evaluate_event(query, values))
                if c != 0.0:
                    m = _canon(factors)
                    obj[m] = obj.get(m, 0.0) + c
                return
            wi, var = nodes[pos]
            do = worlds[wi][0]
            if var.name in do:
                vals[wi][var.name] = do[var.name]
                dfs(pos + 1)
                del vals[wi][var.name]
                return
            pa = sum(vals[wi][p] * m for p, m in zip(var.parents, var.pa_mult))
            key = (var.name, pa, uv(var, u))
            choices = [keys[key]] if key in keys else range(var.card)
            for y in choices:
                fresh = key not in keys
                if fresh:
                    keys[key] = y
                vi = names.mu[key + (y,)]
                factors[vi] = factors.get(vi, 0) + 1
                vals[wi][var.name] = y
                dfs(pos + 1)
                del vals[wi][var.name]
                factors[vi] -= 1
                if factors[vi] == 0:
                    del factors[vi]
                if fresh:
                    del keys[key]

        dfs(0)
        if len(obj) > MONOMIAL_BUDGET:
            raise BudgetExceededError("objective expansion exceeds the monomial budget")
    objective = sorted(((c, m) for m, c in obj.items() if c != 0.0), key=lambda t: t[1])

    constraints: List[Constraint] = []
    order_names = list(diagram.names)
    for emp in regimes:
        do = dict(emp.tag)
        rows: Dict[tuple, Dict[Monomial, float]] = {}
        for cfg in np.ndindex(*[cards[n] for n in order_names]):
            if any(cfg[diagram.index[k]] != v for k, v in do.items()):
                continue
            rows[cfg] = {}
        for u in _joint_states(diagram, d):
            theta_f = {names.theta[(U, u[U])]: 1 for U in diagram.exogenous}
            for cfg, acc in rows.items():
                f = dict(theta_f)
                for var in layout.order:
                    if var.name in do:
                        continue
                    pa = sum(cfg[diagram.index[p]] * m for p, m in zip(var.parents, var.pa_mult))
                    vi = names.mu[(var.name, pa, uv(var, u), cfg[diagram.index[var.name]])]
                    f[vi] = f.get(vi, 0) + 1
                m = _canon(f)
                acc[m] = acc.get(m, 0.0) + 1.0
        for cfg, acc in rows.items():
            rhs = emp.counts.get(tuple(cfg), 0) / emp.total if emp.total else 0.0
            tag = _regime_tag(emp.tag) + ":" + ",".join(f"{n}={v}" for n, v in zip(order_names, cfg))
            constraints.append(Constraint(tuple(sorted(((c, m) for m, c in acc.items()), key=lambda t: t[1])),
                                          "=", float(rhs), tag))
    for group, members in _group_members(names.variables).items():
        kind = names.variables[members[0]].kind
        if kind == "simplex":
            for i in members:
                constraints.append(Constraint(((-1.0, ((i, 1),)),), "<=", 0.0, f"nonneg:{names.variables[i].name}"))
        else:
            for i in members:
                constraints.append(Constraint(((1.0, ((i, 1),)), (-1.0, ((i, 2),))), "=", 0.0,
                                              f"binary:{names.variables[i].name}"))
        constraints.append(Constraint(tuple((1.0, ((i, 1),)) for i in members), "=", 1.0, f"sum:{group}"))
    meta = {"query": str(query), "regimes": [_regime_tag(e.tag) for e in regimes],
            "exo_card": {U: d[U] for U in diagram.exogenous}, "diagram": diagram.to_dict()}
    return PolynomialProgram(names.variables, objective, constraints, meta)


def _group_members(variables):
    out: Dict[str, List[int]] = {}
    for i, v in enumerate(variables):
        out.setdefault(v.group, []).append(i)
    return out


# -- evaluation ----------------------------------------------------------------


def _mono_value(m: Monomial, x: Sequence[float]) -> float:
    out = 1.0
    for i, p in m:
        out *= x[i] ** p
    return out


def _as_vector(program: PolynomialProgram, assignment) -> List[float]:
    if isinstance(assignment, Mapping):
        missing = [v.name for v in program.variables if v.name not in assignment]
        if missing:
            raise ValidationError(f"assignment is missing {len(missing)} variables, e.g. {missing[0]!r}")
        return [float(assignment[v.name]) for v in program.variables]
    x = [float(a) for a in assignment]
    if len(x) != len(program.variables):
        raise ValidationError("assignment length does not match the variable count")
    return x


def constraint_residuals(program: PolynomialProgram, assignment) -> List[float]:
    """Signed ``lhs - rhs`` per constraint."""
    x = _as_vector(program, assignment)
    return [math.fsum(c * _mono_value(m, x) for c, m in k.terms) - k.rhs for k in program.constraints]


def evaluate(program: PolynomialProgram, assignment) -> Tuple[float, float]:
    """Objective value and maximum constraint violation at ``assignment``."""
    x = _as_vector(program, assignment)
    value = math.fsum(c * _mono_value(m, x) for c, m in program.objective)
    worst = 0.0
    for k, r in zip(program.constraints, constraint_residuals(program, x)):
        worst = max(worst, abs(r) if k.rel == "=" else max(r, 0.0))
    return value, worst


def encode(program: PolynomialProgram, model: CanonicalSCM) -> Dict[str, float]:
    """Program assignment reproducing a canonical SCM (theta values, mu one-hot)."""
    out = {}
    for U, t in model.theta.items():
        for k, p in enumerate(t):
            out[f"theta.{U}.{k}"] = float(p)
    for V, table in model.mu.items():
        card = model.diagram.card(V)
        for i in range(table.shape[0]):
            for j in range(table.shape[1]):
                for y in range(card):
                    out[f"mu.{V}.pa{i}.u{j}.v{y}"] = 1.0 if table[i, j] == y else 0.0
    return out


# -- heuristic local solver -----------------------------------------------------------


@dataclass
class ProgramSolution:
    assignment: Dict[str, float]
    objective: float
    max_violation: float
    restarts: int
    direction: str


class _Compiled:
    """Array form of the objective and data constraints for fast block updates."""

    def __init__(self, program: PolynomialProgram):
        self.program = program
        groups = _group_members(program.variables)
        self.theta_groups = [g for g in groups if program.variables[groups[g][0]].kind == "simplex"]
        self.mu_groups = [g for g in groups if program.variables[groups[g][0]].kind == "binary"]
        self.groups = groups
        self.group_of = {i: g for g, ms in groups.items() for i in ms}
        self.is_theta = np.array([v.kind == "simplex" for v in program.variables])
        data = [k for k in program.constraints if not k.tag.startswith(("nonneg:", "binary:", "sum:"))]
        self.rhs = np.array([k.rhs for k in data])
        self.rel = [k.rel for k in data]
        self.obj = self._pack([(c, m, -1) for c, m in program.objective])
        self.con = self._pack([(c, m, r) for r, k in enumerate(data) for c, m in k.terms])
        self.n_rows = len(data)

    def _pack(self, items):
        G = len(self.theta_groups)
        gpos = {g: i for i, g in enumerate(self.theta_groups)}
        M = len(items)
        coef = np.array([c for c, _, _ in items], dtype=float)
        row = np.array([r for _, _, r in items], dtype=np.int64)
        th = np.full((M, G), -1, dtype=np.int64)
        mu_vars, mu_pows = [], []
        for a, (_, m, _) in enumerate(items):
            mv, mp = [], []
            for i, p in m:
                if self.is_theta[i]:
                    th[a, gpos[self.group_of[i]]] = i
                    if p != 1:
                        raise ValidationError("theta variables must enter monomials linearly")
                else:
                    mv.append(i)
                    mp.append(p)
            mu_vars.append(mv)
            mu_pows.append(mp)
        width = max([len(v) for v in mu_vars] + [1])
        mv = np.full((M, width), -1, dtype=np.int64)
        mp = np.zeros((M, width), dtype=float)
        for a, (v, p) in enumerate(zip(mu_vars, mu_pows)):
            mv[a, :len(v)] = v
            mp[a, :len(p)] = p
        return {"coef": coef, "row": row, "th": th, "mv": mv, "mp": mp}

    def mu_part(self, pack, x):
        vals = np.where(pack["mv"] >= 0, x[np.maximum(pack["mv"], 0)], 1.0)
        return np.prod(vals ** pack["mp"], axis=1)

    def theta_part(self, pack, x, skip=None):
        out = np.ones(len(pack["coef"]))
        for gi in range(pack["th"].shape[1]):
            if gi == skip:
                continue
            idx = pack["th"][:, gi]
            out = out * np.where(idx >= 0, x[np.maximum(idx, 0)], 1.0)
        return out

    def block_linear(self, x, gi):
        """Objective vector and constraint matrix linear in theta group ``gi``."""
        members = np.array(self.groups[self.theta_groups[gi]])
        pos = {int(v): k for k, v in enumerate(members)}
        d = len(members)
        res = []
        for pack, n_rows in ((self.obj, 1), (self.con, self.n_rows)):
            w = pack["coef"] * self.mu_part(pack, x) * self.theta_part(pack, x, skip=gi)
            idx = pack["th"][:, gi]
            col = np.array([pos.get(int(i), -1) for i in idx])
            row = np.maximum(pack["row"], 0)
            A = np.zeros((max(n_rows, 1), d))
            const = np.zeros(max(n_rows, 1))
            hit = col >= 0
            np.add.at(A, (row[hit], col[hit]), w[hit])
            np.add.at(const, row[~hit], w[~hit])
            res.append((A, const))
        (c_obj, k_obj), (A, k_con) = res
        return members, c_obj[0], k_obj[0], A[: self.n_rows], k_con[: self.n_rows]

    def value(self, x):
        obj = math.fsum((self.obj["coef"] * self.mu_part(self.obj, x) * self.theta_part(self.obj, x)).tolist())
        w = self.con["coef"] * self.mu_part(self.con, x) * self.theta_part(self.con, x)
        lhs = np.bincount(self.con["row"], weights=w, minlength=self.n_rows) if self.n_rows else np.zeros(0)
        r = lhs - self.rhs
        viol = 0.0
        for v, rel in zip(r, self.rel):
            viol = max(viol, abs(v) if rel == "=" else max(v, 0.0))
        return obj, viol


def _theta_block(comp: _Compiled, x, gi, sign, tol):
    members, c, _, A, k = comp.block_linear(x, gi)
    d = len(members)
    b = comp.rhs - k
    eq = np.array([r == "=" for r in comp.rel], dtype=bool)
    # phase 1: minimize the largest violation t
    cost = np.zeros(d + 1)
    cost[-1] = 1.0
    ones = np.ones((len(b), 1))
    A_ub = np.vstack([np.hstack([A, -ones]), np.hstack([-A[eq], -ones[eq]])]) if len(b) else np.zeros((0, d + 1))
    b_ub = np.concatenate([b, -b[eq]]) if len(b) else np.zeros(0)
    bounds = [(0, None)] * (d + 1)
    A_eq = np.hstack([np.ones((1, d)), np.zeros((1, 1))])
    r1 = linprog(cost, A_ub=A_ub if len(b) else None, b_ub=b_ub if len(b) else None, A_eq=A_eq, b_eq=[1.0],
                 bounds=bounds, method="highs")
    if r1.status != 0:
        return x
    vstar = max(float(r1.fun), 0.0)
    # phase 2: optimize the objective within that violation
    lim = vstar + tol
    if len(b):
        A2 = np.vstack([A, -A[eq]])
        b2 = np.concatenate([b + lim, -(b[eq] - lim)])
    r2 = linprog(sign * c, A_ub=A2 if len(b) else None, b_ub=b2 if len(b) else None, A_eq=np.ones((1, d)),
                 b_eq=[1.0], bounds=[(0, None)] * d, method="highs")
    y = x.copy()
    y[members] = np.clip(r2.x if r2.status == 0 else r1.x[:d], 0.0, None)
    y[members] /= y[members].sum()
    return y


def _better(a, b, sign, tol):
    """Is (objective, violation) ``a`` preferable to ``b``?"""
    fa, fb = a[1] <= tol, b[1] <= tol
    if fa != fb:
        return fa
    if not fa:
        return a[1] < b[1] - 1e-12
    return sign * a[0] < sign * b[0] - 1e-12


def _solve_theta(comp, x, sign, tol, passes=20):
    cur = comp.value(x)
    for _ in range(passes):
        for gi in range(len(comp.theta_groups)):
            x = _theta_block(comp, x, gi, sign, tol)
        new = comp.value(x)
        if not _better(new, cur, sign, tol):
            return x, new
        cur = new
    return x, cur


def _canonical_mu(program: PolynomialProgram, diagram: Optional[CausalDiagram], gen=None):
    """One-hot mu for the response-function table, optionally with exogenous values permuted."""
    meta = program.metadata
    if diagram is None and "diagram" in meta:
        from .graph import diagram_from_dict

        diagram = diagram_from_dict(meta["diagram"])
    if diagram is None or "exo_card" not in meta:
        return None
    d = {U: int(meta["exo_card"][U]) for U in diagram.exogenous}
    mu = response_function_mu(diagram, d)
    perm = {U: (gen.permutation(d[U]) if gen is not None else np.arange(d[U])) for U in diagram.exogenous}
    x = {}
    for var in layout_of(diagram).order:
        table = mu[var.name]
        n_uv = table.shape[1]
        for j in range(n_uv):
            digits, rem = [], j
            for U in reversed(var.exo):
                digits.append(rem % d[U])
                rem //= d[U]
            src = 0
            for U, u in zip(var.exo, reversed(digits)):
                src = src * d[U] + int(perm[U][u])
            for i in range(table.shape[0]):
                x[f"mu.{var.name}.pa{i}.u{j}.v{int(table[i, src])}"] = 1.0
    return x


def local_solve(program: PolynomialProgram, direction: str = "min", restarts: int = 10, seed: int = 0,
                diagram: Optional[CausalDiagram] = None, tol: float = 1e-9, max_passes: int = 3) -> ProgramSolution:
    """Multi-start block-coordinate search; no optimality guarantee.

    Each restart fixes binary ``mu`` groups (the response-function table on
    even restarts, with exogenous values shuffled after restart 0; random
    one-hot on odd restarts), solves
    each theta block by a two-phase LP (least violation, then best
    objective), and then tries single-group flips of ``mu`` while they
    improve. Restart ``r`` uses the stream ``(seed, r)``, so the best of
    ``R`` restarts never gets worse as ``R`` grows.
    """
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    if direction not in ("min", "max"):
        raise ValidationError("direction must be 'min' or 'max'")
    sign = 1.0 if direction == "min" else -1.0
    comp = _Compiled(program)
    n = len(program.variables)
    best = None
    for r in range(restarts):
        gen = _rng.derive(seed, 0x7073, r)
        x = np.zeros(n)
        for g in comp.theta_groups:
            ms = comp.groups[g]
            x[ms] = 1.0 / len(ms)
        canonical = None
        if r % 2 == 0:
            canonical = _canonical_mu(program, diagram, gen if r else None)
        for g in comp.mu_groups:
            ms = comp.groups[g]
            if canonical is not None:
                pick = next((i for i in ms if canonical.get(program.variables[i].name)), ms[0])
            else:
                pick = ms[int(gen.integers(len(ms)))]
            x[pick] = 1.0
        x, cur = _solve_theta(comp, x, sign, tol)
        for _ in range(max_passes):
            improved = False
            for gidx in gen.permutation(len(comp.mu_groups)):
                ms = comp.groups[comp.mu_groups[gidx]]
                on = next(i for i in ms if x[i] > 0.5)
                for alt in ms:
                    if alt == on:
                        continue
                    y = x.copy()
                    y[on], y[alt] = 0.0, 1.0
                    y, val = _solve_theta(comp, y, sign, tol, passes=3)
                    if _better(val, cur, sign, tol):
                        x, cur, on, improved = y, val, alt, True
            if not improved:
                break
        if best is None or _better(cur, best[1], sign, tol):
            best = (x, cur)
    x, (obj, viol) = best
    value, viol_full = evaluate(program, x.tolist())
    assignment = {v.name: float(x[i]) for i, v in enumerate(program.variables)}
    return ProgramSolution(assignment, value, viol_full, restarts, direction)
