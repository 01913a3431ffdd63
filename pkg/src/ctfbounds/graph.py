"""Causal diagrams over finite endogenous domains.

A diagram lists endogenous variables (with cardinality, endogenous
parents and exogenous parents) and exogenous variables. Diagrams are
immutable; all derived structure (topological order, c-components,
canonical exogenous cardinalities) is computed on demand and cached.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .exceptions import CycleError, ValidationError

INT64_MAX = (1 << 63) - 1

_TOP_KEYS = {"endogenous", "exogenous", "exo_card_override"}
_VAR_KEYS = {"name", "card", "parents", "exo_parents"}


@dataclass(frozen=True)
class EndogenousSpec:
    name: str
    card: int
    parents: Tuple[str, ...] = ()
    exo_parents: Tuple[str, ...] = ()


@dataclass(frozen=True)
class CComponent:
    exogenous: frozenset
    endogenous: frozenset


@dataclass(frozen=True)
class CComponentPartition:
    components: Tuple[CComponent, ...]

    def of_exogenous(self, u: str) -> CComponent:
        for comp in self.components:
            if u in comp.exogenous:
                return comp
        raise ValidationError(f"unknown exogenous variable {u!r}")

    def of_endogenous(self, v: str) -> CComponent:
        for comp in self.components:
            if v in comp.endogenous:
                return comp
        raise ValidationError(f"unknown endogenous variable {v!r}")

    def as_sets(self):
        """Endogenous sets of each component, convenient for comparisons."""
        return [set(c.endogenous) for c in self.components]


@dataclass(frozen=True, eq=False)
class CausalDiagram:
    endogenous: Tuple[EndogenousSpec, ...]
    exogenous: Tuple[str, ...]
    exo_card_override: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "endogenous", tuple(self.endogenous))
        object.__setattr__(self, "exogenous", tuple(self.exogenous))
        object.__setattr__(self, "exo_card_override", dict(self.exo_card_override))
        self._validate()

    # -- identity ---------------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, CausalDiagram):
            return NotImplemented
        return (
            self.endogenous == other.endogenous
            and self.exogenous == other.exogenous
            and self.exo_card_override == other.exo_card_override
        )

    def __hash__(self):
        return hash((self.endogenous, self.exogenous, tuple(sorted(self.exo_card_override.items()))))

    def __repr__(self):
        names = ", ".join(v.name for v in self.endogenous)
        return f"CausalDiagram([{names}]; exo=[{', '.join(self.exogenous)}])"

    # -- validation -------------------------------------------------------

    def _validate(self):
        names = [v.name for v in self.endogenous]
        seen = set()
        for n in names + list(self.exogenous):
            if not isinstance(n, str) or not n.isidentifier():
                raise ValidationError(f"invalid variable name {n!r}")
            if n in seen:
                raise ValidationError(f"duplicate variable name {n!r}")
            seen.add(n)
        if not names:
            raise ValidationError("diagram has no endogenous variables")
        endo = set(names)
        exo = set(self.exogenous)
        for v in self.endogenous:
            if isinstance(v.card, bool) or not isinstance(v.card, int) or v.card < 2:
                raise ValidationError(f"variable {v.name!r} must have integer card >= 2, got {v.card!r}")
            if len(set(v.parents)) != len(v.parents) or len(set(v.exo_parents)) != len(v.exo_parents):
                raise ValidationError(f"variable {v.name!r} lists a parent twice")
            for p in v.parents:
                if p == v.name:
                    raise CycleError(f"self-loop on {v.name!r}")
                if p not in endo:
                    raise ValidationError(f"unknown parent {p!r} of {v.name!r}")
            if not v.exo_parents:
                raise ValidationError(f"variable {v.name!r} has no exogenous parent")
            for u in v.exo_parents:
                if u not in exo:
                    raise ValidationError(f"unknown exogenous parent {u!r} of {v.name!r}")
        for u in self.exogenous:
            if not any(u in v.exo_parents for v in self.endogenous):
                raise ValidationError(f"exogenous variable {u!r} has no children")
        for u, d in self.exo_card_override.items():
            if u not in exo:
                raise ValidationError(f"override for unknown exogenous {u!r}")
            if isinstance(d, bool) or not isinstance(d, int) or d < 1:
                raise ValidationError(f"override for {u!r} must be a positive integer")
        self.topological_order  # raises on cycles

    # -- lookups ----------------------------------------------------------

    @cached_property
    def names(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.endogenous)

    @cached_property
    def index(self) -> Dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}

    @cached_property
    def exo_index(self) -> Dict[str, int]:
        return {u: i for i, u in enumerate(self.exogenous)}

    def spec(self, name: str) -> EndogenousSpec:
        try:
            return self.endogenous[self.index[name]]
        except KeyError:
            raise ValidationError(f"unknown endogenous variable {name!r}") from None

    def card(self, name: str) -> int:
        return self.spec(name).card

    @cached_property
    def topological_order(self) -> Tuple[str, ...]:
        """Kahn's algorithm; ties go to the earliest-declared variable."""
        indeg = {v.name: len(v.parents) for v in self.endogenous}
        children = {v.name: [] for v in self.endogenous}
        for v in self.endogenous:
            for p in v.parents:
                children[p].append(v.name)
        order = []
        ready = [n for n in self.names if indeg[n] == 0]
        while ready:
            ready.sort(key=self.index.__getitem__)
            n = ready.pop(0)
            order.append(n)
            for c in children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.names):
            stuck = sorted(set(self.names) - set(order), key=self.index.__getitem__)
            raise CycleError(f"cycle detected among {stuck}")
        return tuple(order)

    @cached_property
    def _topo_rank(self) -> Dict[str, int]:
        return {n: i for i, n in enumerate(self.topological_order)}

    def parents_ordered(self, name: str) -> Tuple[str, ...]:
        """Endogenous parents sorted topologically (pa-configuration digit order)."""
        return tuple(sorted(self.spec(name).parents, key=self._topo_rank.__getitem__))

    def exo_parents_ordered(self, name: str) -> Tuple[str, ...]:
        """Exogenous parents in declaration order (u-configuration digit order)."""
        return tuple(sorted(self.spec(name).exo_parents, key=self.exo_index.__getitem__))

    def children_of_exogenous(self, u: str) -> Tuple[str, ...]:
        if u not in self.exo_index:
            raise ValidationError(f"unknown exogenous variable {u!r}")
        return tuple(v.name for v in self.endogenous if u in v.exo_parents)

    def n_pa_configs(self, name: str) -> int:
        return math.prod(self.card(p) for p in self.spec(name).parents)

    def n_response_functions(self, name: str) -> int:
        """``|Omega_PA -> Omega_V| = |Omega_V| ** |Omega_PA|``."""
        return self.card(name) ** self.n_pa_configs(name)

    def ancestors(self, names) -> set:
        out, stack = set(), list(names)
        while stack:
            n = stack.pop()
            if n in out:
                continue
            out.add(n)
            stack.extend(self.spec(n).parents)
        return out

    # -- c-components and cardinalities -----------------------------------

    @cached_property
    def c_components(self) -> CComponentPartition:
        parent = {u: u for u in self.exogenous}

        def find(u):
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        for v in self.endogenous:
            first, *rest = v.exo_parents
            for u in rest:
                a, b = find(first), find(u)
                if a != b:
                    parent[b] = a
        groups: Dict[str, List[str]] = {}
        for u in self.exogenous:
            groups.setdefault(find(u), []).append(u)
        comps = []
        for members in groups.values():
            endo = {v.name for v in self.endogenous if set(v.exo_parents) & set(members)}
            comps.append(CComponent(frozenset(members), frozenset(endo)))
        return CComponentPartition(tuple(comps))

    def exo_cardinality(self, u: str) -> int:
        """Canonical domain size ``prod_{V in C(U)} |Omega_V| ** |Omega_PA_V|`` (exact)."""
        comp = self.c_components.of_exogenous(u)
        return math.prod(self.n_response_functions(v) for v in comp.endogenous)

    def effective_cardinality(self, u: str) -> int:
        return self.exo_card_override.get(u, self.exo_cardinality(u))

    def is_overridden(self, u: str) -> bool:
        return u in self.exo_card_override

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "endogenous": [
                {"name": v.name, "card": v.card, "parents": list(v.parents), "exo_parents": list(v.exo_parents)}
                for v in self.endogenous
            ],
            "exogenous": list(self.exogenous),
        }
        if self.exo_card_override:
            out["exo_card_override"] = dict(self.exo_card_override)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def with_override(self, override: Mapping[str, int]) -> "CausalDiagram":
        merged = dict(self.exo_card_override)
        merged.update(override)
        return CausalDiagram(self.endogenous, self.exogenous, merged)


def saturates(d: int) -> bool:
    """True when a cardinality no longer fits a signed 64-bit integer."""
    return d > INT64_MAX


def _fresh_name(base, taken):
    name, k = base, 1
    while name in taken:
        k += 1
        name = f"{base}{k}"
    return name


def diagram_from_dict(obj: Mapping) -> CausalDiagram:
    if not isinstance(obj, Mapping):
        raise ValidationError("diagram must be a JSON object")
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown diagram keys: {sorted(unknown)}")
    if "endogenous" not in obj:
        raise ValidationError("diagram is missing 'endogenous'")
    exogenous = list(obj.get("exogenous", []))
    specs_raw = obj["endogenous"]
    if not isinstance(specs_raw, list):
        raise ValidationError("'endogenous' must be a list")
    taken = {s.get("name") for s in specs_raw if isinstance(s, Mapping)} | set(exogenous)
    specs = []
    for s in specs_raw:
        if not isinstance(s, Mapping):
            raise ValidationError("each endogenous entry must be an object")
        bad = set(s) - _VAR_KEYS
        if bad:
            raise ValidationError(f"unknown keys {sorted(bad)} in variable {s.get('name')!r}")
        if "name" not in s or "card" not in s:
            raise ValidationError("each endogenous variable needs 'name' and 'card'")
        exo_parents = list(s.get("exo_parents", []))
        if not exo_parents:
            fresh = _fresh_name(f"U_{s['name']}", taken)
            taken.add(fresh)
            exogenous.append(fresh)
            exo_parents = [fresh]
        specs.append(EndogenousSpec(s["name"], s["card"], tuple(s.get("parents", [])), tuple(exo_parents)))
    override = obj.get("exo_card_override", {})
    if not isinstance(override, Mapping):
        raise ValidationError("'exo_card_override' must be an object")
    return CausalDiagram(tuple(specs), tuple(exogenous), dict(override))


def parse_diagram(text: str) -> CausalDiagram:
    """Parse diagram-file JSON text into a validated :class:`CausalDiagram`."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"diagram file is not valid JSON: {exc}") from None
    return diagram_from_dict(obj)


def load_diagram(path) -> CausalDiagram:
    with open(path, encoding="utf-8") as fh:
        return parse_diagram(fh.read())


def make_diagram(edges: Sequence[Tuple[str, str]], exo: Mapping[str, Sequence[str]],
                 cards: Optional[Mapping[str, int]] = None, order: Optional[Sequence[str]] = None,
                 default_card: int = 2) -> CausalDiagram:
    """Build a diagram from an edge list; handy for tests and built-in models.

    ``exo`` maps each exogenous name to its endogenous children.
    """
    cards = dict(cards or {})
    if order is None:
        order = []
        for a, b in edges:
            for n in (a, b):
                if n not in order:
                    order.append(n)
        for kids in exo.values():
            for n in kids:
                if n not in order:
                    order.append(n)
    specs = []
    for n in order:
        pa = tuple(a for a, b in edges if b == n)
        ex = tuple(u for u, kids in exo.items() if n in kids)
        specs.append({"name": n, "card": cards.get(n, default_card), "parents": list(pa), "exo_parents": list(ex)})
    return diagram_from_dict({"endogenous": specs, "exogenous": list(exo)})
