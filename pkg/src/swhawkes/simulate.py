"""Samplers for the continuous switching Hawkes process and the discrete model.

Randomness comes from ``numpy.random.Generator`` (PCG64) seeded with a
single integer; replicate streams are derived with ``SeedSequence`` (see
:func:`derive_seed`), so every sampler is a pure function of its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BinnedSeries, ContinuousParams, DiscreteParams, EventSequence, validate
from .errors import EmptySequence, ExplosionGuard, InvalidRange

DEFAULT_EVENT_CAP = 10**7


def derive_seed(*keys: int) -> int:
    """Hash integer keys into an independent 63-bit seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass(frozen=True)
class StatePath:
    """Piecewise-constant hidden path: state ``states[i]`` on ``[jump_times[i], jump_times[i+1])``."""

    jump_times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_at(self, t) -> np.ndarray:
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        return self.states[np.clip(idx, 0, len(self.states) - 1)]

    @property
    def n_jumps(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class SimOutput:
    events: EventSequence
    z_path: StatePath
    seed: int

    def to_dict(self) -> dict:
        return {
            "times": self.events.times.tolist(),
            "horizon": self.events.horizon,
            "z_jump_times": self.z_path.jump_times.tolist(),
            "z_states": (self.z_path.states + 1).tolist(),
            "seed": self.seed,
        }


def _ctmc(p0, R, horizon, rng):
    Q = len(p0)
    state = int(rng.choice(Q, p=p0))
    times, states = [0.0], [state]
    t = 0.0
    while True:
        rate = -R[state, state]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        probs = np.clip(R[state], 0.0, None)
        probs[state] = 0.0
        state = int(rng.choice(Q, p=probs / probs.sum()))
        times.append(t)
        states.append(state)
    return StatePath(np.array(times), np.array(states, dtype=np.int64), float(horizon))


def sample_ctmc(p0, R, horizon: float, seed: int) -> StatePath:
    """Continuous-time Markov jump path on ``[0, horizon]``.

    A state with zero exit rate is absorbing and holds until the horizon.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if not horizon > 0:
        raise InvalidRange("horizon must be positive")
    return _ctmc(p0, R, horizon, np.random.default_rng(seed))


def _thinning(c: ContinuousParams, z: StatePath, horizon, rng, cap):
    # Ogata thinning. Between events the intensity m[z] + A(t) only decays,
    # so m[z(now)] + A(now) bounds it until the next hidden jump.
    m, a, b = c.m, c.a, c.b
    bounds = np.append(z.jump_times[1:], horizon)
    seg = 0
    t = 0.0
    excite = 0.0
    events = []
    while True:
        bound = m[z.states[seg]] + excite
        seg_end = bounds[seg]
        w = rng.exponential(1.0 / bound) if bound > 0 else math.inf
        if t + w >= seg_end:
            excite *= math.exp(-b * (seg_end - t))
            t = seg_end
            seg += 1
            if seg >= len(z.states):
                break
            continue
        t += w
        excite *= math.exp(-b * w)
        lam = m[z.states[seg]] + excite
        if rng.uniform() * bound <= lam:
            events.append(t)
            excite += a
            if len(events) > cap:
                raise ExplosionGuard(
                    f"more than {cap} events before t={t:.6g}; parameters look supercritical or mis-scaled"
                )
    return np.array(events)


def sample_switching_hawkes(
    c: ContinuousParams, horizon: float = 1.0, seed: int = 0, event_cap: int = DEFAULT_EVENT_CAP
) -> SimOutput:
    """Simulate the Hawkes process whose baseline switches with a hidden CTMC.

    Intensity ``m[Z(t)] + sum_{T_l < t} a exp(-b (t - T_l))``.
    """
    c.validate()
    if not horizon > 0:
        raise InvalidRange("horizon must be positive")
    rng = np.random.default_rng(seed)
    z = _ctmc(c.p0, c.R, horizon, rng)
    times = _thinning(c, z, horizon, rng, event_cap)
    # float rounding can produce ties for huge rates; they are measure-zero
    times = np.unique(times)
    return SimOutput(EventSequence(times, horizon), z, int(seed))


def sample_discrete(theta: DiscreteParams, n: int, seed: int = 0):
    """Draw ``(counts, states)`` of length ``n`` from the discrete model."""
    validate(theta)
    if n < 1:
        raise InvalidRange("n must be at least 1")
    rng = np.random.default_rng(seed)
    Q = theta.n_states
    cum_pi = np.cumsum(theta.pi, axis=1)
    z = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.int64)
    z[0] = rng.choice(Q, p=theta.nu)
    draws = rng.uniform(size=n)
    u = 0.0
    for k in range(n):
        if k > 0:
            z[k] = min(int(np.searchsorted(cum_pi[z[k - 1]], draws[k], side="right")), Q - 1)
            u = theta.alpha * y[k - 1] + theta.beta * u
        y[k] = rng.poisson(theta.mu[z[k]] + u)
    return y, z


def n_bins_for(n_events: int, coef_c: float) -> int:
    """``round(C * N)`` with halves rounded up, never below one bin."""
    return max(1, int(math.floor(coef_c * n_events + 0.5)))


def discretize(e: EventSequence, coef_c: float = 2.0) -> BinnedSeries:
    """Bin events into ``round(C * N)`` equal bins covering ``[0, horizon]``.

    Bin ``k`` is ``(k*delta, (k+1)*delta]``; the first bin also holds ``t = 0``.
    """
    if len(e) == 0:
        raise EmptySequence("cannot discretize an empty event sequence")
    if not coef_c > 0:
        raise InvalidRange("discretization coefficient must be positive")
    n = n_bins_for(len(e), coef_c)
    delta = e.horizon / n
    idx = np.ceil(e.times / delta).astype(np.int64) - 1
    idx = np.clip(idx, 0, n - 1)
    counts = np.bincount(idx, minlength=n)
    return BinnedSeries(counts, delta)


def bin_state_majority(z: StatePath, n: int) -> np.ndarray:
    """State holding the largest share of each of ``n`` equal bins (ties to the lower label)."""
    if n < 1:
        raise InvalidRange("n must be at least 1")
    Q = int(z.states.max()) + 1
    edges = np.linspace(0.0, z.horizon, n + 1)
    occ = np.zeros((n, Q))
    starts = z.jump_times
    ends = np.append(z.jump_times[1:], z.horizon)
    for s, e, q in zip(starts, ends, z.states):
        lo = max(int(np.searchsorted(edges, s, side="right")) - 1, 0)
        hi = min(int(np.searchsorted(edges, e, side="left")), n)
        for k in range(lo, hi):
            overlap = min(e, edges[k + 1]) - max(s, edges[k])
            if overlap > 0:
                occ[k, q] += overlap
    return np.argmax(occ, axis=1)
