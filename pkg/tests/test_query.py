import pytest
from hypothesis import assume, given, settings, strategies as st

from ctfbounds.exceptions import ParseError, ValidationError
from ctfbounds.query import evaluate_event, expectation_as_probabilities, parse_query


def test_single_term():
    q = parse_query("P[Y@{X=0}=1]")
    assert q.kind == "P"
    assert [(t.variable, t.intervention) for t in q.terms] == [("Y", (("X", 0),))]
    (c,) = q.body
    assert c.lhs.coefs == (("Y@{X=0}", 1),) and c.op == "=" and c.rhs == 1


def test_pns():
    q = parse_query("P[Y@{X=1}=1 & Y@{X=0}=0]")
    assert len(q.terms) == 2 and len(q.body) == 2
    assert evaluate_event(q, {"Y@{X=1}": 1, "Y@{X=0}": 0})
    assert not evaluate_event(q, {"Y@{X=1}": 1, "Y@{X=0}": 1})


def test_threshold_query_boundary():
    q = parse_query("P[Z + X@{Z=0} + Y@{X=0} >= 14]")
    assert [t.alias for t in q.terms] == ["Z", "X@{Z=0}", "Y@{X=0}"]
    assert evaluate_event(q, {"Z": 9, "X@{Z=0}": 5, "Y@{X=0}": 0})
    assert not evaluate_event(q, {"Z": 9, "X@{Z=0}": 4, "Y@{X=0}": 0})


def test_expectation():
    q = parse_query("E[Y@{X=1}]")
    assert evaluate_event(q, {"Y@{X=1}": 3}) == 3


def test_strict_comparators_are_rewritten():
    assert str(parse_query("P[2*Y - X < 1]")) == "P[2*Y - X <= 0]"
    assert str(parse_query("P[Y > 0]")) == "P[Y >= 1]"


def test_duplicate_terms_merge():
    q = parse_query("P[Y@{X=1} = 1 & Y@{X=1} + Z >= 1]")
    assert len(q.terms) == 2


def test_intervention_order_is_canonical():
    a = parse_query("P[Y@{X=1,Z=0}=1]")
    b = parse_query("P[Y@{Z=0,X=1}=1]")
    assert a == b


def test_expectation_expansion(iv):
    const, parts = expectation_as_probabilities(parse_query("E[2*Y@{X=1} + 1]"), iv)
    assert const == 1.0
    assert [(w, str(p)) for w, p in parts] == [(2.0, "P[Y@{X=1} = 1]")]


@pytest.mark.parametrize("text", ["P[Y@{X=0}=1", "Q[Y=1]", "P[Y@{X=}=1]", "P[Y = ]", "P[]", "E[Y = 1]"])
def test_syntax_errors(text):
    with pytest.raises(ParseError):
        parse_query(text)


def test_syntax_error_carries_position():
    with pytest.raises(ParseError) as err:
        parse_query("P[Y@{X=0} = 1 & $]")
    assert err.value.position is not None


def test_diagram_validation(iv):
    with pytest.raises(ValidationError, match="unknown variable"):
        parse_query("P[Q=1]", iv)
    with pytest.raises(ValidationError, match="out of range"):
        parse_query("P[Y@{X=2}=1]", iv)


def test_self_intervention_rejected():
    with pytest.raises(ValidationError):
        parse_query("P[X@{X=1}=1]")


def test_outcome_range(iv):
    assert parse_query("E[Y@{X=1} - Y@{X=0} + 3]").outcome_range(iv) == (2.0, 4.0)


# -- properties ------------------------------------------------------------------

VARS = ["X", "Y", "Z", "W"]


@st.composite
def terms(draw):
    var = draw(st.sampled_from(VARS))
    others = [v for v in VARS if v != var]
    do = draw(st.dictionaries(st.sampled_from(others), st.integers(0, 3), max_size=2))
    if not do:
        return var
    return var + "@{" + ",".join(f"{k}={v}" for k, v in sorted(do.items())) + "}"


@st.composite
def linear(draw):
    parts = draw(st.lists(st.tuples(st.integers(-3, 3).filter(bool), terms()), min_size=1, max_size=3))
    out = ""
    for i, (c, t) in enumerate(parts):
        sign = "-" if c < 0 else "+"
        body = (f"{abs(c)}*" if abs(c) != 1 else "") + t
        out += (("-" if c < 0 else "") if i == 0 else f" {sign} ") + body
    return out


@st.composite
def queries(draw):
    if draw(st.booleans()):
        return "E[" + draw(linear()) + "]"
    cmps = draw(st.lists(st.tuples(linear(), st.sampled_from(["=", "<=", ">=", "<", ">"]), st.integers(-5, 5)),
                         min_size=1, max_size=3))
    return "P[" + " & ".join(f"{l} {op} {r}" for l, op, r in cmps) + "]"


def _parse_or_discard(text):
    """Parse a generated query, discarding draws whose terms all cancel."""
    try:
        return parse_query(text)
    except ParseError as exc:
        assume("at least one counterfactual term" not in str(exc))
        raise


def test_cancelling_terms_leave_no_query():
    with pytest.raises(ParseError, match="at least one counterfactual term"):
        parse_query("E[2*X@{W=0} - 2*X@{W=0}]")


@settings(max_examples=150, deadline=None)
@given(queries())
def test_round_trip(text):
    q = _parse_or_discard(text)
    assert parse_query(str(q)) == q


@settings(max_examples=150, deadline=None)
@given(queries(), st.data())
def test_unused_alias_never_matters(text, data):
    q = _parse_or_discard(text)
    values = {a: data.draw(st.integers(0, 3)) for a in q.aliases}
    base = evaluate_event(q, values)
    extra = dict(values, **{"unused@{Q=1}": data.draw(st.integers(0, 9))})
    assert evaluate_event(q, extra) == base
