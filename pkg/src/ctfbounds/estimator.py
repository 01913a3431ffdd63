"""scikit-learn style wrapper around the posterior samplers."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .bounds import credible_interval, required_draws
from .data import Dataset
from .exceptions import ValidationError
from .graph import CausalDiagram
from .query import parse_query
from .sampler import ChainConfig, PriorConfig, run_chain


class CounterfactualBoundEstimator(BaseEstimator):
    """Posterior credible interval for a counterfactual query.

    Parameters
    ----------
    diagram : CausalDiagram
    query : str
        Query text, e.g. ``"P[Y@{X=1}=1 & Y@{X=0}=0]"``.
    sampler : {"blocked", "collapsed"}
    alpha : float
        Credible level; ``0`` gives the ``[min, max]`` interval.
    epsilon, delta : float
        Accuracy target used to size the run when ``n_draws`` is None.
    prior_alpha : float or mapping, optional
        Dirichlet concentration per exogenous variable.
    exo_card : mapping, optional
        Override of the exogenous cardinalities.

    Attributes
    ----------
    run_ : PosteriorRun
    draws_ : ndarray
    interval_ : CredibleInterval
    """

    def __init__(self, diagram: Optional[CausalDiagram] = None, query: str = "", sampler: str = "blocked",
                 alpha: float = 0.0, epsilon: float = 0.05, delta: float = 0.05, n_draws: Optional[int] = None,
                 burn_in: int = 500, thin: int = 1, n_chains: int = 1, seed: int = 0,
                 prior_alpha=None, exo_card=None):
        self.diagram = diagram
        self.query = query
        self.sampler = sampler
        self.alpha = alpha
        self.epsilon = epsilon
        self.delta = delta
        self.n_draws = n_draws
        self.burn_in = burn_in
        self.thin = thin
        self.n_chains = n_chains
        self.seed = seed
        self.prior_alpha = prior_alpha
        self.exo_card = exo_card

    def _draw_count(self) -> int:
        if self.n_draws is not None:
            return int(self.n_draws)
        total = required_draws(self.epsilon, self.delta)
        return -(-total // int(self.n_chains))

    def fit(self, X, interventions: Optional[Sequence] = None):
        """Sample the posterior given rows ``X`` (columns in diagram order).

        ``X`` may also be a :class:`Dataset`, in which case ``interventions``
        must be omitted.
        """
        if self.diagram is None:
            raise ValidationError("a causal diagram is required")
        diagram = self.diagram
        if self.exo_card:
            diagram = diagram.with_override(self.exo_card)
        if isinstance(X, Dataset):
            if interventions is not None:
                raise ValidationError("interventions come from the Dataset itself")
            dataset = Dataset(diagram, X.values, X.tags)
        else:
            X = check_array(X, dtype=np.int64, ensure_min_samples=0)
            if X.shape[1] != len(diagram.names):
                raise ValidationError(f"expected {len(diagram.names)} columns, got {X.shape[1]}")
            tags = interventions if interventions is not None else [{}] * len(X)
            if len(tags) != len(X):
                raise ValidationError("one intervention per row is required")
            dataset = Dataset.from_arrays(diagram, X, tags)
        q = parse_query(self.query, diagram)
        prior = PriorConfig.build(diagram, self.prior_alpha)
        config = ChainConfig(self.sampler, burn_in=self.burn_in, n_draws=self._draw_count(), thin=self.thin,
                             n_chains=self.n_chains, seed=self.seed)
        self.run_ = run_chain(diagram, dataset, q, prior, config)
        self.draws_ = self.run_.draws
        self.interval_ = credible_interval(self.draws_, self.alpha, self.epsilon, self.delta)
        return self

    def interval(self):
        check_is_fitted(self, "interval_")
        return self.interval_.lower, self.interval_.upper
