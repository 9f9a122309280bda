"""EM inference for the switching discrete Hawkes model.

The hidden chain ``Z`` together with the memory process ``U`` is a hidden
Markov model whose emission law at bin ``k`` in state ``q`` is
``Poisson(mu[q] + U[k])``. The E-step is a scaled forward filter followed by
the two-slice backward smoother; the M-step updates ``nu`` and ``pi`` in
closed form and improves ``(mu, alpha, beta)`` by line-searched ascent in an
unconstrained parameterization.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit, logsumexp, xlogy

from . import kernels
from .core import (
    BinnedSeries,
    DiscreteParams,
    ModelKind,
    aic,
    validate,
)
from .errors import InvalidRange, NumericalUnderflow, TooLarge

log = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_HALVINGS = 40
MAX_RAW_STEP = 5.0


@dataclass(frozen=True)
class EMConfig:
    """Knobs of :func:`fit_em`.

    ``ratio_cap`` bounds the branching ratio ``alpha / (1 - beta)`` during the
    ascent; ``mu_floor`` keeps baseline rates strictly positive. With
    ``pin_alpha_zero`` the memory is switched off and the fit is a Poisson HMM.
    """

    max_iter: int = 500
    tau_tol: float = 1e-6
    mstep_max_steps: int = 50
    mstep_grad_tol: float = 1e-8
    seed: int = 0
    pin_alpha_zero: bool = False
    n_starts: int = 1
    ratio_cap: float = 0.999
    mu_floor: float = 1e-10
    init_max_iter: int = 200

    def __post_init__(self):
        if self.max_iter < 0 or self.mstep_max_steps < 1 or self.n_starts < 1:
            raise InvalidRange("iteration counts must be positive")
        if not (self.tau_tol > 0 and self.mstep_grad_tol > 0 and self.mu_floor > 0):
            raise InvalidRange("tolerances must be positive")
        if not 0 < self.ratio_cap < 1:
            raise InvalidRange("ratio_cap must lie in (0, 1)")


@dataclass(frozen=True)
class Posterior:
    tau: np.ndarray
    eta: np.ndarray
    log_lik: float


@dataclass(frozen=True)
class FitReport:
    theta_hat: DiscreteParams
    log_lik: float
    aic: float
    n_iter: int
    converged: bool
    tau: np.ndarray
    init_theta: DiscreteParams
    delta: float = 1.0
    kind: ModelKind = ModelKind.HAWKES_HMM
    trace: tuple = field(default=(), repr=False)

    @property
    def n_states(self) -> int:
        return self.theta_hat.n_states

    def to_dict(self) -> dict:
        th = self.theta_hat
        return {
            "Q": th.n_states,
            "nu": th.nu.tolist(),
            "pi": th.pi.tolist(),
            "mu": th.mu.tolist(),
            "alpha": th.alpha,
            "beta": th.beta,
            "log_lik": self.log_lik,
            "aic": self.aic,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "delta": self.delta,
        }


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------


def _log_emissions(y: BinnedSeries, u: np.ndarray, mu: np.ndarray) -> np.ndarray:
    return kernels.log_emissions(y.y, y.log_factorials, np.asarray(u, dtype=np.float64), mu)


def forward(y: BinnedSeries, u: np.ndarray, theta: DiscreteParams):
    """Filtered state probabilities and the marginal log-likelihood.

    Returns ``(F, log_lik)`` with ``F[k, q] = P(Z_k = q | Y_1..Y_k)``. The
    emission at step ``k`` uses the destination state's rate
    ``mu[l] + u[k]``.
    """
    log_em = _log_emissions(y, u, theta.mu)
    F, log_lik, bad = kernels.forward(theta.nu, theta.pi, log_em)
    if bad >= 0:
        raise NumericalUnderflow(
            f"no state can emit count {int(y.counts[bad])} at bin {bad} "
            f"(mu={theta.mu.tolist()}, U={float(u[bad]):.6g})"
        )
    return F, log_lik


def backward_smooth(F: np.ndarray, theta: DiscreteParams, log_lik: float = math.nan) -> Posterior:
    tau, eta = kernels.backward(np.ascontiguousarray(F), theta.pi)
    return Posterior(tau, eta, log_lik)


def e_step(y: BinnedSeries, theta: DiscreteParams) -> Posterior:
    u = kernels.aux_path(y.y, theta.alpha, theta.beta)
    F, log_lik = forward(y, u, theta)
    return backward_smooth(F, theta, log_lik)


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------


def _closed_form_memory(counts, alpha, beta):
    n = len(counts)
    return [alpha * sum(beta ** (l - 1) * counts[k - l] for l in range(1, k + 1)) for k in range(n)]


def _log_pmf_scalar(x, lam):
    if lam == 0.0:
        return 0.0 if x == 0 else -math.inf
    return x * math.log(lam) - lam - math.lgamma(x + 1)


def complete_log_lik(y: BinnedSeries, theta: DiscreteParams, z) -> float:
    """Joint log-density ``log p(Z = z, Y)`` of one hidden path.

    Computed with plain scalar arithmetic and the explicit memory sum, so it
    shares no code with the kernels it is used to check.
    """
    counts = [int(c) for c in y.counts]
    u = _closed_form_memory(counts, theta.alpha, theta.beta)

    def _log(p):
        return math.log(p) if p > 0 else -math.inf

    total = _log(theta.nu[z[0]])
    for k in range(1, len(z)):
        total += _log(theta.pi[z[k - 1], z[k]])
    for k, q in enumerate(z):
        total += _log_pmf_scalar(counts[k], theta.mu[q] + u[k])
    return total


def _check_enumerable(n, Q, max_bins=12, max_paths=10**6):
    if n > max_bins or Q**n > max_paths:
        raise TooLarge(f"{Q}^{n} paths is too many to enumerate")


def exact_log_lik(y: BinnedSeries, theta: DiscreteParams) -> float:
    """``log p(Y)`` by summing the complete likelihood over every hidden path."""
    _check_enumerable(y.n, theta.n_states)
    vals = [complete_log_lik(y, theta, z) for z in itertools.product(range(theta.n_states), repeat=y.n)]
    return float(logsumexp(vals))


def exact_posterior(y: BinnedSeries, theta: DiscreteParams) -> np.ndarray:
    """``P(Z_k = q | Y)`` by path enumeration."""
    Q = theta.n_states
    _check_enumerable(y.n, Q)
    paths = list(itertools.product(range(Q), repeat=y.n))
    vals = np.array([complete_log_lik(y, theta, z) for z in paths])
    w = np.exp(vals - logsumexp(vals))
    tau = np.zeros((y.n, Q))
    for z, wz in zip(paths, w):
        tau[np.arange(y.n), list(z)] += wz
    return tau


# ---------------------------------------------------------------------------
# M-step objective
# ---------------------------------------------------------------------------


def _weighted_log(weights, probs):
    return float(np.sum(xlogy(weights, probs)))


def q_function(theta: DiscreteParams, tau, eta, y: BinnedSeries) -> float:
    """Expected complete log-likelihood under the posterior ``(tau, eta)``.

    The memory ``U`` is recomputed from ``theta.alpha`` and ``theta.beta``.
    Zero-probability events with positive posterior weight give ``-inf``.
    """
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    value = _weighted_log(tau[0], theta.nu)
    if eta.shape[0]:
        value += _weighted_log(eta.sum(axis=0), theta.pi)
    em, _, _ = kernels.mstep_stats(
        y.y, y.log_factorials, tau, theta.mu, theta.alpha, theta.beta, False
    )
    value += em
    if value == -math.inf:
        log.debug("q_function is -inf: a zero-probability term carries posterior mass")
    return value


def grad_q(theta: DiscreteParams, tau, y: BinnedSeries):
    """Partial derivatives of :func:`q_function` in ``alpha``, ``beta`` and ``mu``.

    With rate ``lam[k, q] = mu[q] + U[k]``, each derivative is
    ``sum_kq tau[k, q] (Y[k] / lam[k, q] - 1) d lam[k, q]``, where the
    sensitivities ``dU/dalpha`` and ``dU/dbeta`` follow their own one-step
    recursions.
    """
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    _, g, _ = kernels.mstep_stats(y.y, y.log_factorials, tau, theta.mu, theta.alpha, theta.beta, False)
    Q = theta.n_states
    return float(g[Q]), float(g[Q + 1]), g[:Q].copy()


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------


def _chain_update(tau, eta):
    Q = tau.shape[1]
    nu = np.clip(tau[0], 0.0, None)
    nu = nu / nu.sum()
    counts = eta.sum(axis=0) if eta.shape[0] else np.zeros((Q, Q))
    rows = counts.sum(axis=1, keepdims=True)
    pi = np.where(rows > 0, counts / np.where(rows > 0, rows, 1.0), 1.0 / Q)
    return nu, pi


class _Reparam:
    """Unconstrained coordinates for ``(mu, alpha, beta)``.

    ``mu[q] = floor + exp(x[q])``; ``beta = expit(x[Q+1])``;
    ``alpha = cap * expit(x[Q]) * (1 - beta)``, so the branching ratio stays
    below ``cap`` by construction. With ``memory=False`` only the ``mu``
    coordinates exist and ``alpha = beta = 0``.
    """

    def __init__(self, Q, cfg: EMConfig, memory: bool):
        self.Q = Q
        self.cap = cfg.ratio_cap
        self.floor = cfg.mu_floor
        self.memory = memory

    def to_raw(self, mu, alpha, beta):
        x_mu = np.log(np.maximum(mu - self.floor, self.floor))
        if not self.memory:
            return x_mu
        eps = 1e-12
        b = min(max(beta, eps), 1.0 - eps)
        r = alpha / (1.0 - beta)
        r = min(max(r / self.cap, eps), 1.0 - eps)
        return np.concatenate([x_mu, [logit(r), logit(b)]])

    def from_raw(self, x):
        Q = self.Q
        mu = self.floor + np.exp(x[:Q])
        if not self.memory:
            return mu, 0.0, 0.0
        beta = float(expit(x[Q + 1]))
        alpha = float(self.cap * expit(x[Q]) * (1.0 - beta))
        return mu, alpha, beta

    def jacobian(self, x):
        """``d natural / d raw`` with natural order ``(mu..., alpha, beta)``."""
        Q = self.Q
        if not self.memory:
            return np.diag(np.exp(x[:Q]))
        J = np.zeros((Q + 2, Q + 2))
        J[np.arange(Q), np.arange(Q)] = np.exp(x[:Q])
        s = float(expit(x[Q]))
        beta = float(expit(x[Q + 1]))
        r = self.cap * s
        J[Q, Q] = (1.0 - beta) * r * (1.0 - s)
        J[Q, Q + 1] = -r * beta * (1.0 - beta)
        J[Q + 1, Q + 1] = beta * (1.0 - beta)
        return J


def _emission_stats(y, tau, mu, alpha, beta, want_info):
    return kernels.mstep_stats(y.y, y.log_factorials, tau, mu, alpha, beta, want_info)


def _ascend(y: BinnedSeries, tau, mu, alpha, beta, cfg: EMConfig, memory: bool):
    """Improve the emission objective from ``(mu, alpha, beta)``.

    Directions are Fisher-scoring steps in the unconstrained coordinates,
    falling back to the raw gradient when the scoring direction is not an
    ascent direction. Steps are accepted only under an Armijo condition, so
    the returned point never scores below the starting point.

    Returns ``(mu, alpha, beta, stationary)``.
    """
    Q = tau.shape[1]
    rp = _Reparam(Q, cfg, memory)
    P = Q + 2 if memory else Q
    base_value, _, _ = _emission_stats(y, tau, mu, alpha, beta, False)

    x = rp.to_raw(mu, alpha, beta)
    cur = rp.from_raw(x)
    value, g_nat, info_nat = _emission_stats(y, tau, *cur, True)
    stationary = False
    for _ in range(cfg.mstep_max_steps):
        T = rp.jacobian(x)
        g = T.T @ g_nat[:P]
        if not np.all(np.isfinite(g)):
            break
        if np.linalg.norm(g) <= cfg.mstep_grad_tol:
            stationary = True
            break
        H = T.T @ info_nat[:P, :P] @ T
        ridge = 1e-10 * max(float(np.max(np.diag(H))), 1e-300)
        try:
            d = np.linalg.solve(H + ridge * np.eye(P), g)
        except np.linalg.LinAlgError:
            d = g
        slope = float(g @ d)
        if not np.isfinite(slope) or slope <= 0:
            d = g
            slope = float(g @ g)
        big = float(np.max(np.abs(d)))
        t = min(1.0, MAX_RAW_STEP / big) if big > 0 else 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            x_new = x + t * d
            cand = rp.from_raw(x_new)
            v_new, g_new, info_new = _emission_stats(y, tau, *cand, True)
            if v_new > value and v_new >= value + ARMIJO * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            stationary = True
            break
        gain = v_new - value
        x, cur, value, g_nat, info_nat = x_new, cand, v_new, g_new, info_new
        if gain <= 1e-15 * max(1.0, abs(value)):
            stationary = True
            break

    if not value > base_value:
        return np.asarray(mu, dtype=np.float64), alpha, beta, stationary
    mu_new, alpha_new, beta_new = cur
    return mu_new, alpha_new, beta_new, stationary


def _m_step(tau, eta, y, theta, cfg):
    tau = np.ascontiguousarray(tau, dtype=np.float64)
    nu, pi = _chain_update(tau, np.asarray(eta))
    memory = not cfg.pin_alpha_zero
    alpha, beta = (theta.alpha, theta.beta) if memory else (0.0, 0.0)
    mu, alpha, beta, stationary = _ascend(y, tau, theta.mu, alpha, beta, cfg, memory)
    return DiscreteParams(nu, pi, mu, alpha, beta), stationary


def m_step(tau, eta, y: BinnedSeries, theta: DiscreteParams, cfg: EMConfig = EMConfig()) -> DiscreteParams:
    """One generalized M-step.

    ``nu`` and ``pi`` are set to their exact maximizers. ``(mu, alpha, beta)``
    move only if the ascent strictly improves the objective, otherwise they
    are returned unchanged.
    """
    return _m_step(tau, eta, y, theta, cfg)[0]


# ---------------------------------------------------------------------------
# initialization and driver
# ---------------------------------------------------------------------------


def _quantile_means(y: BinnedSeries, Q: int, rng) -> np.ndarray:
    # block means of the sorted counts, nudged apart so that tied blocks
    # (e.g. a constant series) do not start as exactly symmetric states;
    # the nudge is at most 1.5% of the overall mean
    blocks = np.array_split(np.sort(y.y), Q)
    base = np.array([b.mean() if b.size else 0.0 for b in blocks])
    scale = 0.01 * max(float(y.y.mean()), 1e-3)
    jitter = scale * (np.arange(1, Q + 1) + 0.5 * rng.uniform(-1.0, 1.0, size=Q)) / Q
    return base + jitter


def _sticky_chain(Q):
    if Q == 1:
        return np.ones(1), np.ones((1, 1))
    pi = np.full((Q, Q), 0.1 / (Q - 1))
    np.fill_diagonal(pi, 0.9)
    return np.full(Q, 1.0 / Q), pi


def init_params(y: BinnedSeries, Q: int, seed: int = 0, cfg: EMConfig | None = None) -> DiscreteParams:
    """Starting point for EM.

    ``alpha`` and ``beta`` come from a single-state fit of the full model;
    ``nu``, ``pi`` and the state means come from a Poisson HMM started at
    block means of the sorted counts. The state means are then shrunk by
    ``1 - alpha / (1 - beta)`` so the memory is not counted twice.
    """
    if Q < 1:
        raise InvalidRange("number of states must be at least 1")
    cfg = cfg or EMConfig(seed=seed)
    rng = np.random.default_rng([seed, Q])
    sub = replace(cfg, max_iter=cfg.init_max_iter, n_starts=1)
    ybar = max(float(y.y.mean()), 1e-6)

    if cfg.pin_alpha_zero:
        alpha0 = beta0 = 0.0
    else:
        start = DiscreteParams([1.0], [[1.0]], [0.5 * ybar], 0.25, 0.5)
        homog = fit_em(y, 1, replace(sub, pin_alpha_zero=False), init=start)
        alpha0, beta0 = homog.theta_hat.alpha, homog.theta_hat.beta

    nu, pi = _sticky_chain(Q)
    mu = _quantile_means(y, Q, rng)
    if Q > 1:
        phmm = fit_em(y, Q, replace(sub, pin_alpha_zero=True), init=DiscreteParams(nu, pi, mu))
        nu, pi, mu = phmm.theta_hat.nu, phmm.theta_hat.pi, phmm.theta_hat.mu
    else:
        mu = np.array([ybar])
    ratio = alpha0 / (1.0 - beta0) if alpha0 > 0 else 0.0
    mu = np.maximum(mu * (1.0 - ratio), 1e-8)
    theta = DiscreteParams(nu, pi, mu, alpha0, beta0)
    validate(theta)
    return theta


def _run_em(y: BinnedSeries, theta: DiscreteParams, cfg: EMConfig):
    Q = theta.n_states
    trace = []
    tau_prev = None
    converged = False
    stationary = False
    n_iter = 0
    while True:
        post = e_step(y, theta)
        trace.append(post.log_lik)
        if tau_prev is not None:
            change = float(np.max(np.abs(post.tau - tau_prev)))
            # with one state tau is constant, so also ask the M-step to have settled
            if change <= cfg.tau_tol and (Q > 1 or stationary):
                converged = True
                break
        if n_iter >= cfg.max_iter:
            break
        theta, stationary = _m_step(post.tau, post.eta, y, theta, cfg)
        tau_prev = post.tau
        n_iter += 1
    return theta, post, n_iter, converged, trace


def fit_em(y: BinnedSeries, Q: int, cfg: EMConfig = EMConfig(), init: DiscreteParams | None = None) -> FitReport:
    """Maximum-likelihood fit with ``Q`` hidden states.

    Iterates E- and M-steps until the largest change in any posterior state
    probability is at most ``cfg.tau_tol`` or ``cfg.max_iter`` M-steps have
    run. With ``cfg.n_starts > 1`` extra starts are drawn from derived seeds
    and the best final log-likelihood wins.
    """
    if Q < 1:
        raise InvalidRange("number of states must be at least 1")
    starts = []
    if init is not None:
        if init.n_states != Q:
            raise InvalidRange(f"initial parameters have {init.n_states} states, expected {Q}")
        if cfg.pin_alpha_zero:
            init = DiscreteParams(init.nu, init.pi, init.mu, 0.0, 0.0)
        validate(init)
        starts.append(init)
    seeds = np.random.SeedSequence([cfg.seed, Q]).generate_state(cfg.n_starts).tolist()
    while len(starts) < cfg.n_starts:
        starts.append(init_params(y, Q, int(seeds[len(starts)]) if starts else cfg.seed, cfg))

    best = None
    for theta0 in starts:
        try:
            theta, post, n_iter, converged, trace = _run_em(y, theta0, cfg)
        except NumericalUnderflow as exc:
            raise NumericalUnderflow(f"EM with Q={Q} failed: {exc}") from exc
        if best is None or post.log_lik > best[1].log_lik:
            best = (theta, post, n_iter, converged, trace, theta0)

    theta, post, n_iter, converged, trace, theta0 = best
    if cfg.pin_alpha_zero:
        kind = ModelKind.POISSON_HMM if Q > 1 else ModelKind.POISSON_HOMOG
    else:
        kind = ModelKind.HAWKES_HMM if Q > 1 else ModelKind.HAWKES_HOMOG
    return FitReport(
        theta_hat=theta,
        log_lik=post.log_lik,
        aic=aic(post.log_lik, Q, kind),
        n_iter=n_iter,
        converged=converged,
        tau=post.tau,
        init_theta=theta0,
        delta=y.delta,
        kind=kind,
        trace=tuple(trace),
    )
