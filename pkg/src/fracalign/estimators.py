"""scikit-learn style wrappers around precoder design and detection.

The designers are fitted on a :class:`~fracalign.scenario.ChannelSet`
rather than a feature matrix, so they follow the estimator conventions
(constructor-only hyperparameters, ``fit`` returning ``self``, fitted
attributes with a trailing underscore, ``get_params``/``set_params``)
without being usable inside sklearn pipelines.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .alignment import (
    check_fia_constraints,
    fia_3user_mimo,
    fia_3user_siso,
    ia_3user_closed_form,
    kuser_siso_asymptotic,
    random_precoders,
)
from .constellation import enumerate_vectors, get_constellation
from .exceptions import ValidationError
from .gradient_opt import OptimizerOptions, objective, optimize_multistart
from .metrics import ObjectiveSpec
from .receivers import lmmse_detect_batch, md_detect_batch

__all__ = ["AlignmentPrecoder", "EIAPrecoder", "MDDetector", "LMMSEDetector"]


class AlignmentPrecoder(BaseEstimator):
    """Closed-form alignment design.

    Parameters
    ----------
    scheme : {"ia", "fia-mimo", "fia-siso", "kuser-asymptotic"}
    columns : int, optional
        Streams per user for ``fia-mimo``.
    max_power : sequence of float, optional

    Attributes
    ----------
    precoders_ : PrecoderSet
    reports_ : list of AlignmentReport
    """

    def __init__(self, scheme="ia", columns=None, max_power=None):
        self.scheme = scheme
        self.columns = columns
        self.max_power = max_power

    def fit(self, channels, y=None):
        if self.scheme == "ia":
            p = ia_3user_closed_form(channels, self.max_power)
        elif self.scheme == "fia-mimo":
            p = fia_3user_mimo(channels, self.columns or channels.dim - 1, self.max_power)
        elif self.scheme == "fia-siso":
            p = fia_3user_siso(channels, channels.dim, self.max_power)
        elif self.scheme == "kuser-asymptotic":
            p = kuser_siso_asymptotic(channels, channels.dim, self.max_power)
        else:
            raise ValidationError(f"unknown closed-form scheme {self.scheme!r}")
        self.precoders_ = p
        self.reports_ = check_fia_constraints(channels, p)
        return self


class EIAPrecoder(BaseEstimator):
    """Precoders optimized for a finite-alphabet objective.

    Parameters
    ----------
    objective : {"ser", "ber", "mi", "md"}
    noise_variance : float
    constellation : str
    eta, md_exponent : float
    max_iters, random_restarts : int
    init : {"ia", "random"}
    random_state : int
    """

    def __init__(self, objective="mi", noise_variance=0.1, constellation="qpsk", eta=2.0,
                 md_exponent=8.0, max_iters=500, random_restarts=0, init="ia", random_state=0):
        self.objective = objective
        self.noise_variance = noise_variance
        self.constellation = constellation
        self.eta = eta
        self.md_exponent = md_exponent
        self.max_iters = max_iters
        self.random_restarts = random_restarts
        self.init = init
        self.random_state = random_state

    def _spaces(self, streams):
        const = get_constellation(self.constellation)
        return [enumerate_vectors(const, n, i) for i, n in enumerate(streams)]

    def fit(self, channels, y=None, streams=None):
        rng = np.random.default_rng(self.random_state)
        if self.init == "ia":
            start = ia_3user_closed_form(channels)
        elif self.init == "random":
            if streams is None:
                raise ValidationError("random init needs the per-user stream counts")
            start = random_precoders(channels.dim, streams, rng)
        else:
            raise ValidationError(f"init must be 'ia' or 'random', got {self.init!r}")
        self.spec_ = ObjectiveSpec(self.objective, self.eta, self.md_exponent)
        opts = OptimizerOptions(max_iters=self.max_iters, random_restarts=self.random_restarts,
                                init="ia" if self.init == "ia" else "random")
        res = optimize_multistart(channels, start, self.spec_, self._spaces(start.streams),
                                  self.noise_variance, opts, rng=rng)
        self.precoders_ = res.precoders
        self.trace_ = res.trace
        self.n_iter_ = res.accepted_steps
        return self

    def score(self, channels, y=None):
        """Negative objective of the fitted precoders on ``channels``."""
        check_is_fitted(self, "precoders_")
        return -objective(channels, self.precoders_, self.spec_,
                          self._spaces(self.precoders_.streams), self.noise_variance)


class _Detector(BaseEstimator):
    _batch = None

    def __init__(self, user=0, noise_variance=0.1, constellation="qpsk"):
        self.user = user
        self.noise_variance = noise_variance
        self.constellation = constellation

    def fit(self, channels, precoders):
        self.channels_ = channels
        self.precoders_ = precoders
        self.space_ = enumerate_vectors(get_constellation(self.constellation),
                                        precoders[self.user].shape[1], self.user)
        return self

    def predict(self, Y):
        """Symbol-vector indices for observations ``Y`` of shape ``(T, N)``."""
        check_is_fitted(self, "space_")
        Y = np.atleast_2d(np.asarray(Y))
        return type(self)._batch(Y.T, self.user, self.channels_, self.precoders_.matrices,
                                 self.space_, self.noise_variance)[0]

    def predict_bits(self, Y):
        return self.space_.bits[self.predict(Y)]


class MDDetector(_Detector):
    """Exhaustive minimum-distance detection of one user."""

    _batch = staticmethod(md_detect_batch)


class LMMSEDetector(_Detector):
    """LMMSE combining with per-stream slicing for one user."""

    _batch = staticmethod(lmmse_detect_batch)
