"""Counterfactual query language.

Grammar::

    query := "P[" conj "]" | "E[" lin "]"
    conj  := cmp ("&" cmp)*
    cmp   := lin ("=" | "<=" | ">=" | "<" | ">") int
    lin   := ["-"] coterm (("+" | "-") coterm)*
    coterm:= [int "*"] term
    term  := IDENT ["@{" IDENT "=" int ("," IDENT "=" int)* "}"] | int

A term ``Y@{X=0}`` denotes the counterfactual variable Y under do(X=0);
a bare ``Y`` is the factual value. Strict comparisons are rewritten using
integrality (``a < b`` becomes ``a <= b - 1``). Linear forms are
normalized: coefficients of the same term are merged, zero coefficients
dropped, and constants moved to the right-hand side of comparisons.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .exceptions import ParseError, ValidationError

PROBABILITY = "P"
EXPECTATION = "E"


@dataclass(frozen=True, order=True)
class CtfTerm:
    """Counterfactual variable ``variable`` under ``do(intervention)``."""

    variable: str
    intervention: Tuple[Tuple[str, int], ...] = ()

    def __post_init__(self):
        iv = tuple(sorted((str(k), int(v)) for k, v in dict(self.intervention).items()))
        object.__setattr__(self, "intervention", iv)
        if any(k == self.variable for k, _ in iv):
            raise ValidationError(f"term {self.variable!r} intervenes on itself")

    @property
    def alias(self) -> str:
        if not self.intervention:
            return self.variable
        inner = ",".join(f"{k}={v}" for k, v in self.intervention)
        return f"{self.variable}@{{{inner}}}"

    @property
    def do(self) -> Dict[str, int]:
        return dict(self.intervention)

    def __str__(self):
        return self.alias


@dataclass(frozen=True)
class LinearForm:
    """``sum(coef * term) + const`` over term aliases."""

    coefs: Tuple[Tuple[str, int], ...]
    const: int = 0

    @classmethod
    def build(cls, pairs: Iterable[Tuple[str, int]], const: int = 0) -> "LinearForm":
        merged: Dict[str, int] = {}
        for alias, c in pairs:
            merged[alias] = merged.get(alias, 0) + int(c)
        return cls(tuple((a, c) for a, c in merged.items() if c != 0), int(const))

    @property
    def aliases(self) -> Tuple[str, ...]:
        return tuple(a for a, _ in self.coefs)

    def value(self, values: Mapping[str, int]):
        total = self.const
        for alias, c in self.coefs:
            try:
                total = total + c * values[alias]
            except KeyError:
                raise ValidationError(f"missing value for term {alias!r}") from None
        return total

    def __str__(self):
        parts: List[str] = []
        for alias, c in self.coefs:
            sign = "-" if c < 0 else "+"
            mag = abs(c)
            body = alias if mag == 1 else f"{mag}*{alias}"
            if not parts:
                parts.append(body if sign == "+" else f"-{body}")
            else:
                parts.append(f"{sign} {body}")
        if self.const or not parts:
            if not parts:
                parts.append(str(self.const))
            else:
                parts.append(f"{'-' if self.const < 0 else '+'} {abs(self.const)}")
        return " ".join(parts)


@dataclass(frozen=True)
class Comparison:
    lhs: LinearForm
    op: str
    rhs: int

    def holds(self, values: Mapping[str, int]):
        v = self.lhs.value(values)
        if self.op == "=":
            return v == self.rhs
        if self.op == "<=":
            return v <= self.rhs
        return v >= self.rhs

    def __str__(self):
        return f"{self.lhs} {self.op} {self.rhs}"


@dataclass(frozen=True)
class CtfQuery:
    kind: str
    terms: Tuple[CtfTerm, ...]
    body: Tuple[Comparison, ...] = ()
    expr: Optional[LinearForm] = None

    @property
    def aliases(self) -> Tuple[str, ...]:
        return tuple(t.alias for t in self.terms)

    @property
    def is_probability(self) -> bool:
        return self.kind == PROBABILITY

    def term(self, alias: str) -> CtfTerm:
        for t in self.terms:
            if t.alias == alias:
                return t
        raise ValidationError(f"unknown term {alias!r}")

    def regimes(self) -> Tuple[Tuple[Tuple[str, int], ...], ...]:
        """Distinct interventions (worlds) referenced by the query."""
        out = []
        for t in self.terms:
            if t.intervention not in out:
                out.append(t.intervention)
        return tuple(out)

    def __str__(self):
        if self.kind == PROBABILITY:
            return "P[" + " & ".join(str(c) for c in self.body) + "]"
        return f"E[{self.expr}]"

    def validate(self, diagram) -> "CtfQuery":
        """Check names and value ranges against ``diagram``; returns self."""
        for t in self.terms:
            if t.variable not in diagram.index:
                raise ValidationError(f"unknown variable {t.variable!r} in query")
            for k, v in t.intervention:
                if k not in diagram.index:
                    raise ValidationError(f"unknown intervened variable {k!r} in query")
                if not 0 <= v < diagram.card(k):
                    raise ValidationError(f"value {v} out of range for {k!r} (card {diagram.card(k)})")
        return self

    def outcome_range(self, diagram) -> Tuple[float, float]:
        """Range of the query value: [0, 1] or the range of the linear form."""
        if self.kind == PROBABILITY:
            return 0.0, 1.0
        lo = hi = self.expr.const
        for alias, c in self.expr.coefs:
            top = c * (diagram.card(self.term(alias).variable) - 1)
            lo += min(0, top)
            hi += max(0, top)
        return float(lo), float(hi)


def evaluate_event(q: CtfQuery, values: Mapping[str, int]):
    """Truth of the conjunction (P queries) or value of the linear form (E queries).

    ``values`` maps term aliases to integers; numpy arrays are accepted and
    evaluated elementwise.
    """
    if q.kind == EXPECTATION:
        return q.expr.value(values)
    result = True
    for cmp in q.body:
        result = result & cmp.holds(values)
    return result


def evaluate_array(q: CtfQuery, values: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorized :func:`evaluate_event`, always returning a float array."""
    n = None
    for v in values.values():
        n = np.shape(v)
        break
    out = evaluate_event(q, {k: np.asarray(v, dtype=np.int64) for k, v in values.items()})
    if np.isscalar(out) or np.ndim(out) == 0:
        return np.full(n if n is not None else (), float(out))
    return np.asarray(out, dtype=float)


def expectation_as_probabilities(q: CtfQuery, diagram) -> Tuple[float, List[Tuple[float, CtfQuery]]]:
    """Write ``E[lin]`` as ``const + sum_k w_k * P[q_k]`` over each term's value grid."""
    if q.kind != EXPECTATION:
        return 0.0, [(1.0, q)]
    parts = []
    for alias, c in q.expr.coefs:
        t = q.term(alias)
        for y in range(1, diagram.card(t.variable)):
            cmp = Comparison(LinearForm(((alias, 1),), 0), "=", y)
            parts.append((float(c * y), CtfQuery(PROBABILITY, (t,), (cmp,))))
    return float(q.expr.const), parts


# -- parser -----------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<int>\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op><=|>=|@\{|[=<>&+\-*,{}\[\]]))")


def _tokenize(text):
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", position=pos)
        kind = m.lastgroup
        out.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0
        self.terms: Dict[str, CtfTerm] = {}

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None, value=None):
        tok = self.toks[self.i]
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = value if value is not None else kind
            got = tok[1] or "end of input"
            raise ParseError(f"expected {want!r}, found {got!r}", position=tok[2])
        self.i += 1
        return tok

    def accept(self, value):
        if self.peek()[1] == value and self.peek()[0] == "op":
            self.i += 1
            return True
        return False

    def parse(self):
        kind_tok = self.take("ident")
        if kind_tok[1] not in (PROBABILITY, EXPECTATION):
            raise ParseError("query must start with 'P[' or 'E['", position=kind_tok[2])
        self.take("op", "[")
        if kind_tok[1] == PROBABILITY:
            body = [self.comparison()]
            while self.accept("&"):
                body.append(self.comparison())
            expr = None
        else:
            pairs, const = self.linear()
            expr = LinearForm.build(pairs, const)
            body = []
        self.take("op", "]")
        self.take("end")
        used = []
        for form in [c.lhs for c in body] + ([expr] if expr else []):
            for a in form.aliases:
                if a not in used:
                    used.append(a)
        if not used:
            raise ParseError("query must reference at least one counterfactual term", position=0)
        terms = tuple(self.terms[a] for a in used)
        return CtfQuery(kind_tok[1], terms, tuple(body), expr)

    def comparison(self):
        pairs, const = self.linear()
        op_tok = self.take("op")
        op = op_tok[1]
        if op not in ("=", "<=", ">=", "<", ">"):
            raise ParseError(f"expected comparator, found {op!r}", position=op_tok[2])
        neg = self.accept("-")
        rhs = int(self.take("int")[1]) * (-1 if neg else 1) - const
        if op == "<":
            op, rhs = "<=", rhs - 1
        elif op == ">":
            op, rhs = ">=", rhs + 1
        return Comparison(LinearForm.build(pairs), op, rhs)

    def linear(self):
        pairs, const = [], 0
        sign = -1 if self.accept("-") else 1
        while True:
            alias, c = self.coterm()
            if alias is None:
                const += sign * c
            else:
                pairs.append((alias, sign * c))
            if self.accept("+"):
                sign = 1
            elif self.accept("-"):
                sign = -1
            else:
                return pairs, const

    def coterm(self):
        tok = self.peek()
        if tok[0] == "int":
            self.i += 1
            k = int(tok[1])
            if self.accept("*"):
                return self.term(), k
            return None, k
        return self.term(), 1

    def term(self):
        name = self.take("ident")[1]
        iv = {}
        if self.peek()[1] == "@{":
            self.i += 1
            while True:
                key_tok = self.take("ident")
                self.take("op", "=")
                val = int(self.take("int")[1])
                if key_tok[1] in iv and iv[key_tok[1]] != val:
                    raise ParseError(f"conflicting values for {key_tok[1]!r}", position=key_tok[2])
                iv[key_tok[1]] = val
                if not self.accept(","):
                    break
            self.take("op", "}")
        try:
            t = CtfTerm(name, tuple(iv.items()))
        except ValidationError as exc:
            raise ParseError(str(exc), position=self.peek()[2]) from None
        self.terms.setdefault(t.alias, t)
        return t.alias


def parse_query(text: str, diagram=None) -> CtfQuery:
    """Parse and normalize a query string; validate against ``diagram`` if given."""
    q = _Parser(text).parse()
    if diagram is not None:
        q.validate(diagram)
    return q
