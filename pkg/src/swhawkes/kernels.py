"""Hot numeric loops of the E-step, M-step and decoding.

Every kernel exists twice: a ``*_nb`` version written as explicit loops and
compiled with numba, and a ``*_np`` version built from vectorized numpy and
scipy calls. The public names (``forward``, ``backward`` ...) are bound to
one family at import time according to ``SWHAWKES_NUMBA``; both families are
importable for testing and benchmarking.

All kernels take float64 arrays. Counts are passed as float64 ``y`` together
with ``lfact = log(y!)``.
"""

import math

import numpy as np
from scipy.signal import lfilter
from scipy.special import xlogy

from ._jit import USE_NUMBA, njit

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# auxiliary process and its parameter sensitivities
# ---------------------------------------------------------------------------


@njit
def aux_path_nb(y, alpha, beta):
    n = y.shape[0]
    u = np.zeros(n)
    for k in range(1, n):
        u[k] = alpha * y[k - 1] + beta * u[k - 1]
    return u


def aux_path_np(y, alpha, beta):
    # U = alpha * (y shifted by one) filtered through 1 / (1 - beta z^-1)
    return alpha * lfilter([0.0, 1.0], [1.0, -beta], y)


def aux_sensitivities_np(y, alpha, beta):
    """Return ``U``, ``dU/dalpha`` and ``dU/dbeta``."""
    du_da = lfilter([0.0, 1.0], [1.0, -beta], y)
    u = alpha * du_da
    du_db = lfilter([0.0, 1.0], [1.0, -beta], u)
    return u, du_da, du_db


@njit
def aux_sensitivities_nb(y, alpha, beta):
    n = y.shape[0]
    u = np.zeros(n)
    du_da = np.zeros(n)
    du_db = np.zeros(n)
    for k in range(1, n):
        du_da[k] = y[k - 1] + beta * du_da[k - 1]
        du_db[k] = u[k - 1] + beta * du_db[k - 1]
        u[k] = alpha * y[k - 1] + beta * u[k - 1]
    return u, du_da, du_db


# ---------------------------------------------------------------------------
# emissions
# ---------------------------------------------------------------------------


@njit
def log_emissions_nb(y, lfact, u, mu):
    n = y.shape[0]
    Q = mu.shape[0]
    out = np.empty((n, Q))
    for k in range(n):
        for q in range(Q):
            lam = mu[q] + u[k]
            if lam > 0.0:
                out[k, q] = y[k] * math.log(lam) - lam - lfact[k]
            elif y[k] == 0.0:
                out[k, q] = -lfact[k]
            else:
                out[k, q] = -np.inf
    return out


def log_emissions_np(y, lfact, u, mu):
    lam = u[:, None] + mu[None, :]
    return xlogy(y[:, None], lam) - lam - lfact[:, None]


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


@njit
def forward_nb(nu, pi, log_em):
    """Normalized filter ``F[k, q] = P(Z_k = q | Y_1..Y_k)``.

    Returns ``(F, log_lik, bad)`` where ``bad`` is the first step at which no
    state can explain the observation, or -1.
    """
    n, Q = log_em.shape
    F = np.zeros((n, Q))
    pred = nu.copy()
    log_lik = 0.0
    for k in range(n):
        if k > 0:
            for l in range(Q):
                acc = 0.0
                for q in range(Q):
                    acc += F[k - 1, q] * pi[q, l]
                pred[l] = acc
        m = -np.inf
        for l in range(Q):
            if pred[l] > 0.0 and log_em[k, l] > m:
                m = log_em[k, l]
        if m == -np.inf:
            return F, -np.inf, k
        s = 0.0
        for l in range(Q):
            if pred[l] > 0.0:
                w = pred[l] * math.exp(log_em[k, l] - m)
            else:
                w = 0.0
            F[k, l] = w
            s += w
        for l in range(Q):
            F[k, l] /= s
        log_lik += m + math.log(s)
    return F, log_lik, -1


def forward_np(nu, pi, log_em):
    n, Q = log_em.shape
    F = np.zeros((n, Q))
    pred = nu
    log_lik = 0.0
    for k in range(n):
        if k > 0:
            pred = F[k - 1] @ pi
        live = pred > 0
        if not np.any(live):
            return F, -np.inf, k
        m = log_em[k, live].max()
        if m == -np.inf:
            return F, -np.inf, k
        w = np.where(live, pred * np.exp(log_em[k] - m), 0.0)
        s = w.sum()
        F[k] = w / s
        log_lik += m + math.log(s)
    return F, log_lik, -1


@njit
def backward_nb(F, pi):
    """Smoothed marginals from the filter via the two-slice recursion.

    ``eta[k, q, l] = F[k, q] pi[q, l] tau[k+1, l] / G[k+1, l]`` with
    ``G[k+1, l] = sum_q F[k, q] pi[q, l]``; zero where ``G`` vanishes.
    """
    n, Q = F.shape
    tau = np.zeros((n, Q))
    eta = np.zeros((max(n - 1, 0), Q, Q))
    for q in range(Q):
        tau[n - 1, q] = F[n - 1, q]
    for k in range(n - 2, -1, -1):
        for l in range(Q):
            g = 0.0
            for q in range(Q):
                g += F[k, q] * pi[q, l]
            if g > 0.0:
                r = tau[k + 1, l] / g
                for q in range(Q):
                    eta[k, q, l] = F[k, q] * pi[q, l] * r
        for q in range(Q):
            acc = 0.0
            for l in range(Q):
                acc += eta[k, q, l]
            tau[k, q] = acc
    return tau, eta


def backward_np(F, pi):
    n, Q = F.shape
    tau = np.zeros((n, Q))
    eta = np.zeros((max(n - 1, 0), Q, Q))
    tau[-1] = F[-1]
    for k in range(n - 2, -1, -1):
        g = F[k] @ pi
        ratio = np.divide(tau[k + 1], g, out=np.zeros(Q), where=g > 0)
        eta[k] = F[k][:, None] * pi * ratio[None, :]
        tau[k] = eta[k].sum(axis=1)
    return tau, eta


# ---------------------------------------------------------------------------
# Viterbi
# ---------------------------------------------------------------------------


@njit
def viterbi_nb(log_nu, log_pi, log_em):
    n, Q = log_em.shape
    score = np.empty(Q)
    new = np.empty(Q)
    back = np.zeros((n, Q), dtype=np.int64)
    for q in range(Q):
        score[q] = log_nu[q] + log_em[0, q]
    for k in range(1, n):
        for l in range(Q):
            best = -np.inf
            arg = 0
            for q in range(Q):
                v = score[q] + log_pi[q, l]
                if v > best:
                    best = v
                    arg = q
            back[k, l] = arg
            new[l] = best + log_em[k, l]
        for l in range(Q):
            score[l] = new[l]
    path = np.zeros(n, dtype=np.int64)
    best = -np.inf
    arg = 0
    for q in range(Q):
        if score[q] > best:
            best = score[q]
            arg = q
    path[n - 1] = arg
    for k in range(n - 1, 0, -1):
        path[k - 1] = back[k, path[k]]
    return path, best


def viterbi_np(log_nu, log_pi, log_em):
    n, Q = log_em.shape
    back = np.zeros((n, Q), dtype=np.int64)
    score = log_nu + log_em[0]
    for k in range(1, n):
        cand = score[:, None] + log_pi
        back[k] = np.argmax(cand, axis=0)
        score = cand[back[k], np.arange(Q)] + log_em[k]
    path = np.zeros(n, dtype=np.int64)
    path[-1] = int(np.argmax(score))
    for k in range(n - 1, 0, -1):
        path[k - 1] = back[k, path[k]]
    return path, float(score[path[-1]])


# ---------------------------------------------------------------------------
# M-step sufficient statistics
# ---------------------------------------------------------------------------


@njit
def mstep_stats_nb(y, lfact, tau, mu, alpha, beta, want_info):
    """Emission part of the EM objective, its gradient and expected information.

    Gradient and information are in natural coordinates ordered
    ``(mu_0..mu_{Q-1}, alpha, beta)``. The information matrix is
    ``sum_kq tau_kq grad(lam_kq) grad(lam_kq)^T / lam_kq``.
    """
    n, Q = tau.shape
    P = Q + 2
    grad = np.zeros(P)
    info = np.zeros((P, P))
    value = 0.0
    u = 0.0
    da = 0.0
    db = 0.0
    for k in range(n):
        if k > 0:
            da_new = y[k - 1] + beta * da
            db = u + beta * db
            da = da_new
            u = alpha * y[k - 1] + beta * u
        s = 0.0
        w = 0.0
        for q in range(Q):
            t = tau[k, q]
            if t == 0.0:
                continue
            lam = mu[q] + u
            if lam > 0.0:
                value += t * (y[k] * math.log(lam) - lam - lfact[k])
                r = y[k] / lam - 1.0
            elif y[k] == 0.0:
                value -= t * lfact[k]
                r = -1.0
            else:
                value = -np.inf
                r = np.inf
            grad[q] += t * r
            s += t * r
            if want_info and lam > 0.0:
                c = t / lam
                info[q, q] += c
                info[q, Q] += c * da
                info[q, Q + 1] += c * db
                w += c
        grad[Q] += s * da
        grad[Q + 1] += s * db
        if want_info:
            info[Q, Q] += w * da * da
            info[Q, Q + 1] += w * da * db
            info[Q + 1, Q + 1] += w * db * db
    if want_info:
        for i in range(P):
            for j in range(i):
                info[i, j] = info[j, i]
    return value, grad, info


def mstep_stats_np(y, lfact, tau, mu, alpha, beta, want_info):
    n, Q = tau.shape
    u, da, db = aux_sensitivities_np(y, alpha, beta)
    lam = u[:, None] + mu[None, :]
    live = tau > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.where(live, xlogy(y[:, None], lam) - lam - lfact[:, None], 0.0)
        ratio = np.where(lam > 0, y[:, None] / lam, np.where(y[:, None] > 0, np.inf, 0.0)) - 1.0
    value = float(np.sum(tau * ll)) if np.all(np.isfinite(ll[live])) else -np.inf
    tr = np.where(live, tau * ratio, 0.0)
    s = tr.sum(axis=1)
    grad = np.empty(Q + 2)
    grad[:Q] = tr.sum(axis=0)
    grad[Q] = s @ da
    grad[Q + 1] = s @ db
    info = np.zeros((Q + 2, Q + 2))
    if want_info:
        c = np.where(live & (lam > 0), tau / np.where(lam > 0, lam, 1.0), 0.0)
        w = c.sum(axis=1)
        info[np.arange(Q), np.arange(Q)] = c.sum(axis=0)
        info[:Q, Q] = c.T @ da
        info[:Q, Q + 1] = c.T @ db
        info[Q, Q] = w @ (da * da)
        info[Q, Q + 1] = w @ (da * db)
        info[Q + 1, Q + 1] = w @ (db * db)
        info = np.triu(info) + np.triu(info, 1).T
    return value, grad, info


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

BACKENDS = {
    "numba": {
        "aux_path": aux_path_nb,
        "aux_sensitivities": aux_sensitivities_nb,
        "log_emissions": log_emissions_nb,
        "forward": forward_nb,
        "backward": backward_nb,
        "viterbi": viterbi_nb,
        "mstep_stats": mstep_stats_nb,
    },
    "numpy": {
        "aux_path": aux_path_np,
        "aux_sensitivities": aux_sensitivities_np,
        "log_emissions": log_emissions_np,
        "forward": forward_np,
        "backward": backward_np,
        "viterbi": viterbi_np,
        "mstep_stats": mstep_stats_np,
    },
}

BACKEND = "numba" if USE_NUMBA else "numpy"

aux_path = BACKENDS[BACKEND]["aux_path"]
aux_sensitivities = BACKENDS[BACKEND]["aux_sensitivities"]
log_emissions = BACKENDS[BACKEND]["log_emissions"]
forward = BACKENDS[BACKEND]["forward"]
backward = BACKENDS[BACKEND]["backward"]
viterbi = BACKENDS[BACKEND]["viterbi"]
mstep_stats = BACKENDS[BACKEND]["mstep_stats"]
