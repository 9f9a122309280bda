"""Domain types, validation and continuous/discrete parameter maps.

States are labelled ``0..Q-1`` everywhere inside the package. File formats
written by :mod:`swhawkes.io` use ``1..Q``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, xlogy

from . import kernels
from .errors import (
    BetaOutOfRange,
    EmptySequence,
    InvalidRange,
    InvalidSimplex,
    NegativeRate,
    NonPositiveDelta,
    Supercritical,
    UnsortedEvents,
)

SIMPLEX_TOL = 1e-12


def _frozen(x, dtype=np.float64):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DiscreteParams:
    """Parameters ``(nu, pi, mu, alpha, beta)`` of the switching discrete Hawkes model.

    ``mu`` is in events per bin; the conditional mean of ``Y_k`` given
    ``Z_k = q`` is ``mu[q] + U_k``.
    """

    nu: np.ndarray
    pi: np.ndarray
    mu: np.ndarray
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "nu", _frozen(np.atleast_1d(self.nu)))
        object.__setattr__(self, "pi", _frozen(np.atleast_2d(self.pi)))
        object.__setattr__(self, "mu", _frozen(np.atleast_1d(self.mu)))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n_states(self) -> int:
        return self.mu.shape[0]

    @property
    def branching_ratio(self) -> float:
        return self.alpha / (1.0 - self.beta) if self.beta < 1 else math.inf

    def permuted(self, perm) -> "DiscreteParams":
        """Relabel states so that new state ``i`` is old state ``perm[i]``."""
        perm = np.asarray(perm)
        return DiscreteParams(
            self.nu[perm], self.pi[np.ix_(perm, perm)], self.mu[perm], self.alpha, self.beta
        )

    def to_dict(self) -> dict:
        return {
            "Q": self.n_states,
            "nu": self.nu.tolist(),
            "pi": self.pi.tolist(),
            "mu": self.mu.tolist(),
            "alpha": self.alpha,
            "beta": self.beta,
        }


@dataclass(frozen=True)
class ContinuousParams:
    """Continuous-time simulation parameters ``(p0, R, m, a, b)``.

    ``m`` is already multiplied by the intensity factor ``L``.
    """

    p0: np.ndarray
    R: np.ndarray
    m: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        object.__setattr__(self, "p0", _frozen(np.atleast_1d(self.p0)))
        object.__setattr__(self, "R", _frozen(np.atleast_2d(self.R)))
        object.__setattr__(self, "m", _frozen(np.atleast_1d(self.m)))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    @property
    def n_states(self) -> int:
        return self.m.shape[0]

    def validate(self) -> None:
        Q = self.n_states
        if self.p0.shape != (Q,) or self.R.shape != (Q, Q):
            raise InvalidRange(f"p0/R shapes {self.p0.shape}/{self.R.shape} do not match m of length {Q}")
        _check_simplex(self.p0, "p0")
        off = self.R[~np.eye(Q, dtype=bool)]
        if np.any(off < 0):
            raise InvalidRange("rate matrix R has negative off-diagonal entries")
        if np.any(np.abs(self.R.sum(axis=1)) > SIMPLEX_TOL * max(1.0, np.abs(self.R).max())):
            raise InvalidRange("rows of rate matrix R must sum to 0")
        if np.any(self.m < 0) or not np.all(np.isfinite(self.m)):
            raise InvalidRange("baseline rates m must be finite and nonnegative")
        if self.a < 0:
            raise InvalidRange("excitation a must be nonnegative")
        if not self.b > 0:
            raise InvalidRange("decay b must be positive")
        if self.a / self.b >= 1:
            raise Supercritical(f"a/b = {self.a / self.b:.6g} >= 1")


@dataclass(frozen=True)
class EventSequence:
    times: np.ndarray
    horizon: float = 1.0

    def __post_init__(self):
        times = _frozen(np.atleast_1d(np.asarray(self.times, dtype=np.float64)))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "horizon", float(self.horizon))
        if not self.horizon > 0:
            raise InvalidRange("horizon must be positive")
        if times.size and (np.any(np.diff(times) <= 0)):
            raise UnsortedEvents("event times must be strictly increasing")
        if times.size and (times[0] < 0 or times[-1] > self.horizon):
            raise InvalidRange("event times must lie in [0, horizon]")

    def __len__(self):
        return self.times.shape[0]


@dataclass(frozen=True)
class BinnedSeries:
    counts: np.ndarray
    delta: float = 1.0
    _lfact: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 1:
            raise EmptySequence("a binned series needs at least one bin")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise InvalidRange("counts must be nonnegative integers")
        if not self.delta > 0:
            raise NonPositiveDelta("bin width must be positive")
        object.__setattr__(self, "counts", _frozen(counts, dtype=np.int64))
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "_lfact", _frozen(gammaln(self.counts + 1.0)))

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def y(self) -> np.ndarray:
        """Counts as float64, the form the numeric kernels consume."""
        return self.counts.astype(np.float64)

    @property
    def log_factorials(self) -> np.ndarray:
        return self._lfact


def _check_simplex(p, name):
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise InvalidSimplex(f"{name} has entries outside [0, 1]")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise InvalidSimplex(f"{name} does not sum to 1")


def validate(theta: DiscreteParams) -> None:
    """Raise if ``theta`` violates any parameter-space constraint.

    Checks, in order: shapes, the ``nu``/``pi`` simplices, signs and ranges of
    ``mu``, ``alpha`` and ``beta``, and finally subcriticality
    ``alpha / (1 - beta) < 1``.
    """
    Q = theta.n_states
    if theta.nu.shape != (Q,) or theta.pi.shape != (Q, Q):
        raise InvalidSimplex(
            f"nu/pi shapes {theta.nu.shape}/{theta.pi.shape} do not match mu of length {Q}"
        )
    _check_simplex(theta.nu, "nu")
    _check_simplex(theta.pi, "pi")
    if np.any(theta.mu < 0) or not np.all(np.isfinite(theta.mu)):
        raise InvalidRange("baseline rates mu must be finite and nonnegative")
    if not theta.alpha >= 0:
        raise InvalidRange("alpha must be nonnegative")
    if not 0 <= theta.beta < 1:
        raise InvalidRange("beta must lie in [0, 1)")
    if theta.branching_ratio >= 1:
        raise Supercritical(f"alpha/(1-beta) = {theta.branching_ratio:.6g} >= 1")


def cont_to_disc(c: ContinuousParams, delta: float):
    """Map continuous rates to per-bin parameters for bin width ``delta``.

    Returns ``(mu, alpha, beta)`` with ``mu = m*delta``,
    ``alpha = (a/b)(1 - exp(-b*delta))`` and ``beta = exp(-b*delta)``.
    """
    if not delta > 0:
        raise NonPositiveDelta(f"delta must be positive, got {delta}")
    beta = math.exp(-c.b * delta)
    alpha = (c.a / c.b) * -math.expm1(-c.b * delta)
    return np.asarray(c.m, dtype=np.float64) * delta, alpha, beta


def disc_to_cont(mu, alpha: float, beta: float, delta: float):
    """Inverse of :func:`cont_to_disc`; returns ``(m, a, b)``."""
    if not 0 < beta < 1:
        raise BetaOutOfRange(f"beta must lie in (0, 1) to invert, got {beta}")
    if not delta > 0:
        raise NonPositiveDelta(f"delta must be positive, got {delta}")
    b = -math.log(beta) / delta
    a = alpha * b / (1.0 - beta)
    return np.asarray(mu, dtype=np.float64) / delta, a, b


def log_poisson_pmf(x, lam):
    """Log Poisson mass ``x log(lam) - lam - log(x!)``, with ``P(0; 0) = 1``.

    Vectorized over numpy inputs; scalars in give a float back.
    """
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(lam_arr < 0):
        raise NegativeRate("Poisson rate must be nonnegative")
    x_arr = np.asarray(x, dtype=np.float64)
    out = xlogy(x_arr, lam_arr) - lam_arr - gammaln(x_arr + 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def auxiliary_path(y: BinnedSeries, alpha: float, beta: float) -> np.ndarray:
    """Exponentially weighted memory ``U`` with ``U[0] = 0``.

    ``U[k] = alpha * Y[k-1] + beta * U[k-1]``.
    """
    if alpha < 0 or not 0 <= beta < 1:
        raise InvalidRange("auxiliary path needs alpha >= 0 and 0 <= beta < 1")
    return kernels.aux_path(y.y, float(alpha), float(beta))


class ModelKind(str, enum.Enum):
    """The four nested count models compared by AIC."""

    POISSON_HOMOG = "PoissonHomog"
    POISSON_HMM = "PoissonHMM"
    HAWKES_HOMOG = "HawkesHomog"
    HAWKES_HMM = "HawkesHMM"


def n_free_params(n_states: int, kind: ModelKind | str = ModelKind.HAWKES_HMM) -> int:
    kind = ModelKind(kind)
    if kind is ModelKind.HAWKES_HMM:
        return n_states**2 + 2
    if kind is ModelKind.POISSON_HMM:
        return n_states**2
    if kind is ModelKind.HAWKES_HOMOG:
        return 3
    return 1


def aic(log_lik: float, n_states: int, kind: ModelKind | str = ModelKind.HAWKES_HMM) -> float:
    """Penalized log-likelihood ``log_lik - D``; larger is better."""
    if n_states < 1:
        raise InvalidRange("number of states must be at least 1")
    return log_lik - n_free_params(n_states, kind)
