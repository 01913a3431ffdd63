import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ctfbounds import CounterfactualBoundEstimator
from ctfbounds.bounds import lp_exact_bound, required_draws
from ctfbounds.exceptions import ValidationError
from ctfbounds.query import parse_query
from ctfbounds.scm import forward_sample, random_model

PNS = "P[Y@{X=1}=1 & Y@{X=0}=0]"


@pytest.fixture(scope="module")
def bow_data(bow):
    return forward_sample(random_model(bow, seed=2), {}, 400, seed=1)


def test_params_round_trip(bow):
    est = CounterfactualBoundEstimator(bow, PNS, alpha=0.1, n_draws=10)
    again = clone(est)
    assert again.get_params()["alpha"] == 0.1 and again.diagram.to_dict() == bow.to_dict()


def test_fit_array_and_dataset_agree(bow, bow_data):
    kw = dict(diagram=bow, query=PNS, n_draws=60, burn_in=20, seed=4)
    a = CounterfactualBoundEstimator(**kw).fit(bow_data.values)
    b = CounterfactualBoundEstimator(**kw).fit(bow_data)
    assert np.array_equal(a.draws_, b.draws_)
    lo, hi = a.interval()
    assert (lo, hi) == (a.draws_.min(), a.draws_.max())


def test_interval_lies_in_lp_bound(bow, bow_data):
    est = CounterfactualBoundEstimator(bow, PNS, n_draws=200, burn_in=100, seed=1).fit(bow_data)
    lp = lp_exact_bound(bow, parse_query(PNS), [bow_data.empirical(())])
    lo, hi = est.interval()
    # posterior draws spread around the empirical table by about sqrt(p(1-p)/N) per cell
    assert lp.lower - 1e-9 <= lo <= hi <= lp.upper + 0.1


def test_default_draw_count_splits_over_chains(bow):
    est = CounterfactualBoundEstimator(bow, PNS, n_chains=3)
    assert est._draw_count() == -(-required_draws(0.05, 0.05) // 3)


def test_unfitted_and_bad_inputs(bow):
    est = CounterfactualBoundEstimator(bow, PNS, n_draws=5, burn_in=1)
    with pytest.raises(NotFittedError):
        est.interval()
    with pytest.raises(ValidationError):
        est.fit(np.zeros((3, 3), dtype=int))
    with pytest.raises(ValidationError):
        est.fit(np.zeros((3, 2), dtype=int), interventions=[{}])
    with pytest.raises(ValidationError):
        CounterfactualBoundEstimator(None, PNS).fit(np.zeros((1, 2), dtype=int))


def test_interventions_and_empty_data(bow):
    X = np.array([[1, 1], [1, 0], [0, 0]])
    est = CounterfactualBoundEstimator(bow, PNS, n_draws=10, burn_in=5).fit(X, [{"X": 1}, {"X": 1}, {}])
    assert est.run_.T == 10
    empty = CounterfactualBoundEstimator(bow, PNS, n_draws=10, burn_in=5).fit(np.zeros((0, 2), dtype=int))
    assert 0.0 <= empty.interval()[0] <= empty.interval()[1] <= 1.0


def test_exo_card_override(bow, bow_data):
    est = CounterfactualBoundEstimator(bow, PNS, n_draws=10, burn_in=5, exo_card={"U": 4}).fit(bow_data)
    assert est.run_.diagnostics is not None
    assert len(est.draws_) == 10
