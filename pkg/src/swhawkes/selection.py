"""Choosing the number of hidden states, decoding, and scoring decoded paths."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .core import BinnedSeries, DiscreteParams, ModelKind, aic, n_free_params  # noqa: F401
from .errors import InvalidRange, LengthMismatch, SwitchingHawkesError
from .inference import EMConfig, FitReport, fit_em

log = logging.getLogger(__name__)

MAX_EXHAUSTIVE_STATES = 6


@dataclass(frozen=True)
class SelectionResult:
    per_q: list
    q_hat: int
    best: FitReport
    failures: dict = field(default_factory=dict)

    def aic_table(self):
        """``[(Q, log_lik, aic), ...]`` for every attempted ``Q`` (NaN on failure)."""
        rows = []
        for q, rep in enumerate(self.per_q, start=1):
            if rep is None:
                rows.append((q, float("nan"), float("nan")))
            else:
                rows.append((q, rep.log_lik, rep.aic))
        return rows

    def to_dict(self) -> dict:
        return {
            "q_hat": self.q_hat,
            "aic_table": [{"Q": q, "log_lik": ll, "aic": a} for q, ll, a in self.aic_table()],
            "failures": {str(k): v for k, v in self.failures.items()},
            "best": self.best.to_dict(),
        }


def select_q(y: BinnedSeries, q_max: int = 5, cfg: EMConfig = EMConfig()) -> SelectionResult:
    """Fit ``Q = 1..q_max`` and keep the largest AIC (ties go to the smaller ``Q``).

    A failing ``Q`` is recorded in ``failures`` and skipped.
    """
    if q_max < 1:
        raise InvalidRange("q_max must be at least 1")
    per_q, failures = [], {}
    for q in range(1, q_max + 1):
        try:
            per_q.append(fit_em(y, q, cfg))
        except SwitchingHawkesError as exc:
            log.warning("fit with Q=%d failed: %s", q, exc)
            failures[q] = str(exc)
            per_q.append(None)
    scored = [(rep.aic, -i) for i, rep in enumerate(per_q) if rep is not None]
    if not scored:
        raise SwitchingHawkesError(f"every fit failed: {failures}")
    best_i = -max(scored)[1]
    return SelectionResult(per_q, best_i + 1, per_q[best_i], failures)


def map_decode(tau) -> np.ndarray:
    """Per-bin most probable state; ties go to the lower label."""
    return np.argmax(np.asarray(tau), axis=1)


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=np.float64))


def viterbi(y: BinnedSeries, theta: DiscreteParams) -> np.ndarray:
    """Most probable hidden path given the counts.

    Uses the same time-varying emissions ``Poisson(mu[l] + U[k])`` as the
    forward filter. Ties resolve to the lower label.
    """
    u = kernels.aux_path(y.y, theta.alpha, theta.beta)
    log_em = kernels.log_emissions(y.y, y.log_factorials, u, theta.mu)
    path, _ = kernels.viterbi(_log(theta.nu), _log(theta.pi), log_em)
    return path


def aligned_accuracy(z_hat, z_true, n_states: int | None = None):
    """Best agreement between two labelings over relabelings of ``z_hat``.

    Returns ``(accuracy, perm)`` where ``perm[a]`` is the true label assigned
    to estimated label ``a``. Up to six labels the search is exhaustive and
    the lexicographically smallest maximizing permutation is returned; beyond
    that an assignment solver is used.
    """
    z_hat = np.asarray(z_hat, dtype=np.int64)
    z_true = np.asarray(z_true, dtype=np.int64)
    if z_hat.shape != z_true.shape:
        raise LengthMismatch(f"lengths differ: {z_hat.shape} vs {z_true.shape}")
    if z_hat.size == 0:
        raise LengthMismatch("empty label vectors")
    Q = n_states or int(max(z_hat.max(), z_true.max())) + 1
    if z_hat.min() < 0 or z_true.min() < 0 or max(z_hat.max(), z_true.max()) >= Q:
        raise InvalidRange(f"labels must lie in 0..{Q - 1}")
    conf = np.zeros((Q, Q), dtype=np.int64)
    np.add.at(conf, (z_hat, z_true), 1)
    if Q <= MAX_EXHAUSTIVE_STATES:
        best, best_perm = -1, None
        rows = np.arange(Q)
        for perm in itertools.permutations(range(Q)):
            score = int(conf[rows, perm].sum())
            if score > best:
                best, best_perm = score, perm
        perm = np.array(best_perm)
    else:
        _, perm = linear_sum_assignment(-conf)
        best = int(conf[np.arange(Q), perm].sum())
    return best / z_hat.size, perm
