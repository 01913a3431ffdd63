import math

import numpy as np
import pytest

from ctfbounds import synth
from ctfbounds.exceptions import ValidationError
from ctfbounds.query import parse_query


@pytest.mark.parametrize("kind", synth.KINDS)
def test_sampling_is_deterministic(kind):
    plan = synth.default_plan(kind, 60)
    a, b = synth.sample(kind, plan, seed=5), synth.sample(kind, plan, seed=5)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv() != synth.sample(kind, plan, seed=6).to_csv()


def test_empty_plan():
    assert len(synth.sample("bow", [({}, 0)], seed=1)) == 0
    assert len(synth.sample("bow", [], seed=1)) == 0


def test_see_do_mixed_plan():
    plan = synth.default_plan("see_do", 1000)
    assert plan[0] == ({}, 334)
    assert [do for do, _ in plan[1:]] == [{"Z": z} for z in range(10)]
    assert sum(c for _, c in plan) == 1000
    assert max(c for _, c in plan[1:]) - min(c for _, c in plan[1:]) <= 1
    ds = synth.sample("see_do", plan, seed=3)
    assert len(ds) == 1000
    for z in range(10):
        assert np.all(ds.empirical({"Z": z}).names == ("Z", "X", "Y"))
        assert set(k[0] for k in ds.empirical({"Z": z}).counts) == {z}


def test_invalid_regimes():
    with pytest.raises(ValidationError):
        synth.sample("bow", [({"Q": 1}, 3)], seed=0)
    with pytest.raises(ValidationError):
        synth.sample("bow", [({"X": 2}, 3)], seed=0)
    with pytest.raises(ValidationError):
        synth.sample("bow", [({}, -1)], seed=0)
    with pytest.raises(ValidationError):
        synth.get("nope")


def test_outcome_domains():
    for kind in synth.KINDS:
        g = synth.get(kind).diagram
        ds = synth.sample(kind, synth.default_plan(kind, 2000), seed=11)
        for V in g.names:
            col = ds.column(V)
            assert col.min() >= 0 and col.max() < g.card(V)


@pytest.mark.parametrize("kind", synth.KINDS)
def test_observational_marginal_matches_truth(kind):
    n = 10**6
    g = synth.get(kind).diagram
    ds = synth.sample(kind, [({}, n)], seed=21)
    for V in g.names:
        value = 1 if g.card(V) == 2 else g.card(V) // 2
        truth = synth.ground_truth(kind, parse_query(f"P[{V}={value}]"), n, seed=22)
        freq = float(np.mean(ds.column(V) == value))
        se = math.hypot(truth.stderr, math.sqrt(freq * (1 - freq) / n))
        assert abs(freq - truth.estimate) < 4 * se + 1e-12


def test_bow_coupling_identity():
    n = 10**6
    parts = [synth.ground_truth("bow", parse_query(q), n, seed=s) for q, s in
             [("P[Y@{X=1}=1 & Y@{X=0}=0]", 1), ("P[Y@{X=1}=1 & Y@{X=0}=1]", 2), ("P[Y@{X=1}=1]", 3)]]
    se = math.sqrt(sum(p.stderr**2 for p in parts))
    assert abs(parts[0].estimate + parts[1].estimate - parts[2].estimate) < 4 * se


def test_shared_units_make_the_identity_exact():
    a = synth.ground_truth("bow", parse_query("P[Y@{X=1}=1 & Y@{X=0}=0]"), 50000, seed=9)
    b = synth.ground_truth("bow", parse_query("P[Y@{X=1}=1 & Y@{X=0}=1]"), 50000, seed=9)
    c = synth.ground_truth("bow", parse_query("P[Y@{X=1}=1]"), 50000, seed=9)
    assert a.estimate + b.estimate == pytest.approx(c.estimate, abs=1e-12)


def test_ground_truth_stderr_and_expectation():
    gt = synth.ground_truth("iv", parse_query("P[Y@{X=0}=1]"), 40000, seed=1)
    assert gt.stderr == pytest.approx(math.sqrt(gt.estimate * (1 - gt.estimate) / 40000))
    ex = synth.ground_truth("ist_iv_shape", parse_query("E[Y@{X=3}]"), 40000, seed=1)
    assert 0 <= ex.estimate <= 3 and ex.stderr > 0
    with pytest.raises(ValidationError):
        synth.ground_truth("iv", parse_query("P[Y=1]"), 0, seed=1)


def test_interventions_fix_values():
    ds = synth.sample("frontdoor", [({"X": 1}, 500)], seed=2)
    assert np.all(ds.column("X") == 1)


def test_logistic_noise_is_inverse_cdf():
    from ctfbounds import rng
    gen_a, gen_b = rng.derive(4), rng.derive(4)
    e = rng.standard_logistic(gen_a, 1000)
    p = gen_b.random(1000)
    assert np.allclose(e, np.log(p / (1 - p)))
