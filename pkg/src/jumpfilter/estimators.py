"""scikit-learn style wrapper around the filter."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .filter import FilterConfig, run
from .validation import check_observation, check_positive, check_spec

__all__ = ["HistoryFilter"]


class HistoryFilter(BaseEstimator):
    """Filter an observation record with the sklearn fit/transform/predict protocol.

    ``X`` is an :class:`~jumpfilter.simulate.ObservationRecord` (or its dict
    form), not a feature matrix: one record is one sample path. Rows of the
    outputs are the grid nodes of the record.

    Parameters
    ----------
    spec : ModelSpec
        The model; validated on ``fit``.
    mode : {"exact", "particle"}
    n_particles : int
        Particle count in particle mode.
    functionals : tuple of str
        Functional ids estimated by :meth:`transform`.
    random_state : int or None
        Seed for particle mode.
    continuous_form : {"likelihood", "equation"}
        Continuous-time update used between events.

    Attributes
    ----------
    trajectory_ : FilterTrajectory
        Output of the last fitted record.
    labels_ : tuple
        Signal states, when the signal space is finite.
    """

    def __init__(
        self,
        spec=None,
        mode="exact",
        n_particles=1000,
        functionals=("one",),
        random_state=None,
        continuous_form="likelihood",
    ):
        self.spec = spec
        self.mode = mode
        self.n_particles = n_particles
        self.functionals = functionals
        self.random_state = random_state
        self.continuous_form = continuous_form

    def _config(self):
        if self.mode not in ("exact", "particle"):
            raise ValueError(f"mode must be 'exact' or 'particle', got {self.mode!r}")
        check_positive("n_particles", self.n_particles, integer=True)
        return FilterConfig(
            mode=self.mode,
            n_particles=int(self.n_particles),
            seed=self.random_state,
            functionals=tuple(self.functionals),
            continuous_form=self.continuous_form,
        )

    def _run(self, X):
        check_spec(self.spec)
        return run(self.spec, check_observation(X), self._config())

    def fit(self, X, y=None):
        self.trajectory_ = self._run(X)
        self._fitted_on = X
        self.labels_ = self.trajectory_.labels
        self.n_events_ = int(np.sum(~self.trajectory_.is_grid))
        return self

    def _trajectory(self, X):
        check_is_fitted(self, "trajectory_")
        if X is None or X is self._fitted_on:
            return self.trajectory_
        return self._run(X)

    def transform(self, X=None):
        """Filtered functional estimates, shape (n_grid, n_functionals)."""
        tr = self._trajectory(X)
        return tr.estimates[tr.is_grid]

    def predict_proba(self, X=None):
        """Filtered law of the current state, shape (n_grid, n_states)."""
        tr = self._trajectory(X)
        if tr.marginals is None:
            raise ValueError("state probabilities need a finite signal space")
        return tr.grid_marginals()

    def predict(self, X=None):
        """Most probable current state at each grid node."""
        proba = self.predict_proba(X)
        labels = np.asarray(self.labels_, dtype=object)
        return labels[np.argmax(proba, axis=1)]
