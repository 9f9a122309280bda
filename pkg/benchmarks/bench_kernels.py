"""Time the numba and pure-numpy kernel backends side by side.

Run ``python3 benchmarks/bench_kernels.py [--n 20000] [--Q 3] [--repeat 5]``.
Both backends are imported in the same process from ``kernels.BACKENDS``;
the first numba call (compilation) is excluded by a warm-up.
Also times a full EM fit with each backend selected through the
``SWHAWKES_NUMBA`` environment flag, in a subprocess.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np
from scipy.special import gammaln

from swhawkes import kernels
from swhawkes._jit import NUMBA_AVAILABLE


def _inputs(n, Q, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.poisson(2.0, size=n).astype(np.float64)
    lfact = gammaln(y + 1)
    mu = rng.uniform(0.1, 4.0, size=Q)
    nu = np.full(Q, 1.0 / Q)
    pi = np.full((Q, Q), 0.1 / max(Q - 1, 1))
    np.fill_diagonal(pi, 0.9 if Q > 1 else 1.0)
    tau = rng.dirichlet(np.ones(Q), size=n)
    return y, lfact, mu, 0.2, 0.5, nu, pi, tau


def _calls(fam, args):
    y, lfact, mu, alpha, beta, nu, pi, tau = args
    u = fam["aux_path"](y, alpha, beta)
    le = fam["log_emissions"](y, lfact, u, mu)
    F, _, _ = fam["forward"](nu, pi, le)
    lnu, lpi = np.log(nu), np.log(pi)
    return {
        "aux_path": lambda: fam["aux_path"](y, alpha, beta),
        "log_emissions": lambda: fam["log_emissions"](y, lfact, u, mu),
        "forward": lambda: fam["forward"](nu, pi, le),
        "backward": lambda: fam["backward"](F, pi),
        "viterbi": lambda: fam["viterbi"](lnu, lpi, le),
        "mstep_stats": lambda: fam["mstep_stats"](y, lfact, tau, mu, alpha, beta, True),
    }


_FIT_SNIPPET = """
import time
import numpy as np
from swhawkes import BinnedSeries, DiscreteParams, fit_em, sample_discrete
th = DiscreteParams([0.5, 0.5], [[0.95, 0.05], [0.05, 0.95]], [0.3, 3.0], 0.2, 0.5)
y = BinnedSeries(sample_discrete(th, {n}, seed=1)[0])
fit_em(y, 2)  # warm-up / compilation
t = time.perf_counter()
fit_em(y, 2)
print(time.perf_counter() - t)
"""


def _fit_seconds(flag, n):
    env = dict(os.environ, SWHAWKES_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", _FIT_SNIPPET.format(n=n)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--Q", type=int, default=3)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--fit-n", type=int, default=5_000, help="series length for the end-to-end fit")
    args = p.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy backend can run", file=sys.stderr)
        return 1

    inputs = _inputs(args.n, args.Q)
    timings = {}
    for name in ("numba", "numpy"):
        calls = _calls(kernels.BACKENDS[name], inputs)
        for fn in calls.values():
            fn()  # compile / warm caches
        for kname, fn in calls.items():
            timings.setdefault(kname, {})[name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))

    print(f"kernels, n={args.n}, Q={args.Q}, best of {args.repeat} (milliseconds)")
    print(f"{'kernel':<15}{'numba':>10}{'numpy':>10}{'speedup':>10}")
    for kname, t in timings.items():
        print(f"{kname:<15}{1e3 * t['numba']:>10.3f}{1e3 * t['numpy']:>10.3f}{t['numpy'] / t['numba']:>9.1f}x")

    nb, npy = _fit_seconds("1", args.fit_n), _fit_seconds("0", args.fit_n)
    print(f"\nfull Q=2 EM fit, n={args.fit_n}: numba {nb:.3f}s, numpy {npy:.3f}s ({npy / nb:.1f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
