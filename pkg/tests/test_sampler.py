import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from ctfbounds import rng
from ctfbounds.data import Dataset
from ctfbounds.exceptions import BudgetExceededError, ValidationError
from ctfbounds.graph import make_diagram
from ctfbounds.query import parse_query
from ctfbounds.sampler import (BlockedGibbs, ChainConfig, CollapsedGibbs, PriorConfig, blocked_step_mu,
                               blocked_step_theta, collapsed_finalize, collapsed_step_u, run_chain)
from ctfbounds.scm import CanonicalSCM, ctf_probability_enumerate, forward_sample, random_model

from oracles import urn_weights


def _blocked(diagram, rows, tags=None, exo_card=None, alpha=None, seed=0, **kw):
    ds = Dataset.from_arrays(diagram, np.array(rows, dtype=np.int64).reshape(len(rows), len(diagram.names)),
                             tags or [{}] * len(rows))
    g = diagram.with_override(exo_card) if exo_card else diagram
    prior = PriorConfig.build(g, alpha)
    return BlockedGibbs(g, ds, prior, rng.derive(seed), **kw)


# -- blocked complete conditionals ----------------------------------------------------


def test_step_u_example(bow):
    s = _blocked(bow, [[1, 1]], exo_card={"U": 2})
    s.theta["U"] = np.array([0.5, 0.5])
    s.mu["X"] = np.array([[1, 0]])
    s.mu["Y"] = np.array([[0, 1], [1, 1]])
    assert s.conditional_u(0).tolist() == [1.0, 0.0]


def test_step_u_flat_likelihood_returns_prior(bow):
    s = _blocked(bow, [[1, 1]], tags=[{"X": 1, "Y": 1}], exo_card={"U": 4})
    s.theta["U"] = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(s.conditional_u(0), s.theta["U"])


def test_step_mu_forced_and_uniform():
    g = make_diagram([("X", "Y")], {"U": ["X", "Y"]}, cards={"X": 2, "Y": 4})
    s = _blocked(g, [[0, 2]], exo_card={"U": 3})
    forced = s.forced_keys()
    ((key, value),) = forced["Y"].items()
    assert value == 2
    unseen = (1, 0)  # parent X=1 never observed
    hits = np.zeros(4, dtype=int)
    for _ in range(20000):
        blocked_step_mu(s)
        assert s.mu["Y"][key] == 2
        hits[s.mu["Y"][unseen]] += 1
    assert stats.chisquare(hits).pvalue > 1e-3


def test_shared_key_same_value_no_conflict(bow):
    s = _blocked(bow, [[1, 1], [1, 1], [1, 1]], exo_card={"U": 2})
    s.step_mu()
    assert all(v == 1 for v in s.forced_keys()["Y"].values())


def test_step_theta_arithmetic(monkeypatch):
    g = make_diagram([], {"U": ["V"]}, cards={"V": 3})
    s = _blocked(g, [[0], [0], [2]], alpha=3.0)
    assert s.d["U"] == 3
    assert s.exo_counts()["U"].tolist() == [2, 0, 1]
    seen = []
    monkeypatch.setattr(rng, "dirichlet", lambda gen, a: seen.append(np.asarray(a)) or np.full(len(a), 1 / len(a)))
    blocked_step_theta(s)
    assert seen[0].tolist() == [3.0, 1.0, 2.0]


def test_step_theta_posterior_mean():
    g = make_diagram([], {"U": ["V"]}, cards={"V": 3})
    s = _blocked(g, [[0], [0], [2]], alpha=3.0)
    draws = np.array([(s.step_theta(), s.theta["U"].copy())[1] for _ in range(20000)])
    expected = np.array([3, 1, 2]) / 6
    se = draws.std(axis=0) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 3 * se + 1e-12)


def test_no_data_theta_is_prior():
    g = make_diagram([], {"U": ["V"]}, cards={"V": 2})
    s = _blocked(g, [], alpha=2.0)
    draws = np.array([(s.step_theta(), s.theta["U"][0])[1] for _ in range(4000)])
    assert stats.kstest(draws, stats.beta(1, 1).cdf).pvalue > 0.01


def test_budget_guard(see_do_binary):
    ds = Dataset.empty(see_do_binary)
    with pytest.raises(BudgetExceededError):
        BlockedGibbs(see_do_binary, ds, PriorConfig.build(see_do_binary), rng.derive(0), enum_budget=100)


# -- collapsed conditionals -----------------------------------------------------------


def _collapsed(diagram, rows, tags=None, alpha=None, exo_card=None, seed=0):
    ds = Dataset.from_arrays(diagram, np.array(rows, dtype=np.int64).reshape(len(rows), len(diagram.names)),
                             tags or [{}] * len(rows))
    g = diagram.with_override(exo_card) if exo_card else diagram
    return CollapsedGibbs(g, ds, PriorConfig.build(g, alpha), rng.derive(seed))


def _reseat(s, n, atoms):
    s._remove(n)
    s._add(n, np.asarray(atoms))


def test_urn_example():
    g = make_diagram([], {"U": ["Y"]}, cards={"Y": 2})
    s = _collapsed(g, [[1]] * 3, tags=[{"Y": 1}] * 3, alpha=1.0, exo_card={"U": 16})
    _reseat(s, 2, s.atom[1])
    a = int(s.atom[1][0])
    cond = s.conditional_row(0)
    assert cond[(a,)] == pytest.approx(0.6875, abs=1e-15)
    assert cond[(-1,)] == pytest.approx(0.3125, abs=1e-15)
    oracle = urn_weights({a: 2}, 1, 16)
    assert cond[(a,)] == float(oracle[a]) and cond[(-1,)] == float(oracle["fresh"])


def test_conflicting_atom_has_zero_weight():
    g = make_diagram([], {"U": ["Y"]}, cards={"Y": 2})
    s = _collapsed(g, [[0], [1], [1]], alpha=1.0, exo_card={"U": 16})
    _reseat(s, 2, s.atom[1])
    cond = s.conditional_row(0)
    assert cond[(int(s.atom[1][0]),)] == 0.0


def test_single_row_is_always_fresh():
    g = make_diagram([], {"U": ["Y"]}, cards={"Y": 2})
    s = _collapsed(g, [[1]], alpha=1.0, exo_card={"U": 16})
    assert s.conditional_row(0) == {(-1,): 1.0}


def _reference_conditional(s, n):
    """Joint urn conditional computed by scanning the other rows directly."""
    others = [i for i in range(s.N) if i != n]
    occ = {U: sorted({int(s.atom[i][s.eidx[U]]) for i in others}) for U in s.exo}
    out = {}
    for combo in itertools.product(*[occ[U] + [-1] for U in s.exo]):
        w = Fraction(1)
        for U, a in zip(s.exo, combo):
            counts = {k: sum(1 for i in others if s.atom[i][s.eidx[U]] == k) for k in occ[U]}
            uw = urn_weights(counts, Fraction(str(s.prior.alpha[U])), s.prior.card[U])
            w *= uw["fresh" if a < 0 else a]
        for var, pa, v in s.row_free[n]:
            atoms = [combo[s.eidx[U]] for U in var.exo]
            if any(a < 0 for a in atoms):
                w *= Fraction(1, var.card)
                continue
            forced = set()
            for i in others:
                for w_, pa_, v_ in s.row_free[i]:
                    if w_.name == var.name and pa_ == pa and [int(s.atom[i][s.eidx[U]]) for U in var.exo] == atoms:
                        forced.add(v_)
            if not forced:
                w *= Fraction(1, var.card)
            elif forced != {v}:
                w = Fraction(0)
        out[combo] = w
    total = sum(out.values())
    return {k: float(v / total) for k, v in out.items()}


@pytest.mark.parametrize("seed", range(4))
def test_collapsed_conditional_matches_reference(iv, seed):
    m = random_model(iv, seed=seed)
    ds = Dataset.concat([forward_sample(m, {}, 12, seed), forward_sample(m, {"X": 1}, 6, seed + 1)])
    s = CollapsedGibbs(iv, ds, PriorConfig.build(iv, {"U1": 1.0, "U2": 3.0}), rng.derive(seed))
    for _ in range(3):
        s.sweep()
    for n in (0, 5, 13):
        got = s.conditional_row(n)
        ref = _reference_conditional(s, n)
        assert set(got) == set(ref)
        for k in ref:
            assert got[k] == pytest.approx(ref[k], abs=1e-12)
    s.check()


@pytest.mark.parametrize("seed", range(3))
def test_collapsed_state_invariants_hold_every_step(see_do_binary, seed):
    m = random_model(see_do_binary, seed=seed, exo_card={"U1": 3, "U2": 3})
    ds = Dataset.concat([forward_sample(m, {}, 20, seed), forward_sample(m, {"Z": 0}, 10, seed + 7)])
    for exo_card in (None, {"U1": 4, "U2": 4}):
        g = see_do_binary.with_override(exo_card) if exo_card else see_do_binary
        s = CollapsedGibbs(g, ds, PriorConfig.build(g, 1.0), rng.derive(seed))
        s.check()
        for _ in range(3):
            for n in range(s.N):
                collapsed_step_u(s, n)
                s.check()
        for U in s.exo:
            assert s.K(U) <= s.prior.card[U]


def test_coordinate_fallback_keeps_invariants(see_do_binary):
    m = random_model(see_do_binary, seed=2)
    ds = forward_sample(m, {}, 25, 1)
    s = CollapsedGibbs(see_do_binary, ds, PriorConfig.build(see_do_binary), rng.derive(0), budget=4)
    for _ in range(3):
        s.sweep()
        s.check()
    assert s.fallback_rows > 0


def test_finalize_point_mass_limit():
    g = make_diagram([], {"U": ["Y"]}, cards={"Y": 2})
    s = _collapsed(g, [[1]] * 5, alpha=1e-8, exo_card={"U": 16})
    for n in range(1, 5):
        _reseat(s, n, s.atom[0])
    a = collapsed_finalize(s)
    assert a.theta["U"][0] == pytest.approx(1.0, abs=1e-6)


def test_finalize_expected_weight():
    g = make_diagram([], {"U": ["Y"]}, cards={"Y": 2})
    s = _collapsed(g, [[1]] * 4, alpha=2.0, exo_card={"U": 8})
    _reseat(s, 1, s.atom[0])
    _reseat(s, 2, s.atom[0])
    k = int(np.flatnonzero(s.occupied("U") == s.atom[0][0])[0])
    w = np.array([s.finalize().theta["U"][k] for _ in range(20000)])
    expected = (2.0 / 8 + 3) / (2.0 + 4)
    assert abs(w.mean() - expected) < 3 * w.std() / math.sqrt(len(w))


def test_tail_ratio_is_exact_for_huge_domains():
    p = PriorConfig({"U": 1.0}, {"U": 10**21})
    assert p.fresh_ratio("U", 50) == float(Fraction(10**21 - 50, 10**21))
    assert p.fresh_ratio("U", 50) == pytest.approx(1.0)


# -- chains -------------------------------------------------------------------------


def test_prior_defaults(see_do_binary):
    p = PriorConfig.build(see_do_binary)
    assert p.alpha == {"U1": 32.0, "U2": 32.0}
    big = make_diagram([("X", "Y")], {"U": ["X", "Y"]}, cards={"X": 10, "Y": 10})
    assert PriorConfig.build(big).alpha["U"] == 10.0
    with pytest.raises(ValidationError):
        PriorConfig.build(see_do_binary, -1.0)


def test_chain_determinism(bow):
    m = random_model(bow, seed=1)
    ds = forward_sample(m, {}, 40, 2)
    q = parse_query("P[Y@{X=1}=1 & Y@{X=0}=0]")
    for sampler in ("blocked", "collapsed"):
        cfg = ChainConfig(sampler, burn_in=5, n_draws=20, n_chains=2, seed=9)
        a = run_chain(bow, ds, q, PriorConfig.build(bow), cfg)
        b = run_chain(bow, ds, q, PriorConfig.build(bow), cfg)
        assert np.array_equal(a.draws, b.draws)
        assert a.chain_seeds == b.chain_seeds and a.chain_seeds[0] != a.chain_seeds[1]


def test_draws_stay_in_outcome_range(iv):
    m = random_model(iv, seed=1)
    ds = forward_sample(m, {}, 30, 2)
    run = run_chain(iv, ds, parse_query("E[Y@{X=1} - 2*Y@{X=0}]"), PriorConfig.build(iv),
                    ChainConfig(burn_in=5, n_draws=50))
    assert run.draws.min() >= -2 and run.draws.max() <= 1


def _prior_pushforward(diagram, q, n, seed):
    gen = rng.derive(seed, 99)
    out = []
    for _ in range(n):
        theta = {U: rng.dirichlet(gen, np.ones(diagram.exo_cardinality(U))) for U in diagram.exogenous}
        d = {U: len(theta[U]) for U in diagram.exogenous}
        mu = {}
        for V in diagram.names:
            n_uv = math.prod(d[U] for U in diagram.exo_parents_ordered(V))
            mu[V] = gen.integers(0, diagram.card(V), size=(diagram.n_pa_configs(V), n_uv))
        out.append(ctf_probability_enumerate(CanonicalSCM(diagram, theta, mu), q))
    return np.array(out)


def test_empty_dataset_reproduces_prior(bow):
    q = parse_query("P[Y@{X=1}=1 & Y@{X=0}=0]")
    run = run_chain(bow, Dataset.empty(bow), q, PriorConfig.build(bow), ChainConfig(burn_in=0, n_draws=2000, seed=3))
    ref = _prior_pushforward(bow, q, 2000, 3)
    assert stats.ks_2samp(run.draws, ref).pvalue > 0.01


def test_conjugate_toy_matches_beta_posterior():
    g = make_diagram([], {"U": ["V"]}, cards={"V": 2})
    rows = [[1]] * 7 + [[0]] * 3
    ds = Dataset.from_arrays(g, rows, [{}] * 10)
    alpha = 2.0
    run = run_chain(g, ds, parse_query("P[V=1]"), PriorConfig.build(g, alpha),
                    ChainConfig(burn_in=10, n_draws=20000, seed=5, fixed_mu=True))
    expected = (alpha / 2 + 7) / (alpha + 10)
    se = run.draws.std() / math.sqrt(run.T)
    assert abs(run.draws.mean() - expected) < 3 * se


def test_exchangeability(bow):
    m = random_model(bow, seed=4)
    ds = forward_sample(m, {}, 60, 1)
    perm = ds.subset(rng.derive(2).permutation(len(ds)))
    q = parse_query("P[Y@{X=1}=1 & Y@{X=0}=0]")
    cfg = dict(burn_in=50, n_draws=4000, thin=2)
    a = run_chain(bow, ds, q, PriorConfig.build(bow), ChainConfig(seed=1, **cfg))
    b = run_chain(bow, perm, q, PriorConfig.build(bow), ChainConfig(seed=2, **cfg))
    assert stats.ks_2samp(a.draws, b.draws).pvalue > 0.01


@pytest.mark.slow
def test_blocked_and_collapsed_agree(bow):
    """Two independent routes to the same posterior on a small instance."""
    m = random_model(bow, seed=7)
    ds = forward_sample(m, {}, 40, 3)
    q = parse_query("P[Y@{X=1}=1]")
    prior = PriorConfig.build(bow)
    a = run_chain(bow, ds, q, prior, ChainConfig("blocked", burn_in=100, n_draws=3000, thin=2, seed=1))
    b = run_chain(bow, ds, q, prior, ChainConfig("collapsed", burn_in=100, n_draws=3000, thin=2, seed=1,
                                                 fresh_replicates=64))
    assert abs(a.draws.mean() - b.draws.mean()) < 0.02
    assert abs(np.quantile(a.draws, 0.9) - np.quantile(b.draws, 0.9)) < 0.04
