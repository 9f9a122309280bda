"""Simulation study and model comparison harness.

One continuous path is simulated per ``(q_star, L, replicate)`` cell and
reused for every discretization coefficient ``C``. Each discretized series is
fitted for ``Q = 1..q_max``; rows carry estimates, AIC, decoding accuracy and
timing. Everything except the timing column is a deterministic function of
the configuration.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .core import (
    BinnedSeries,
    ContinuousParams,
    DiscreteParams,
    ModelKind,
    aic,
    cont_to_disc,
    log_poisson_pmf,
)
from .errors import InvalidRange, SwitchingHawkesError, UnsupportedQStar
from .inference import EMConfig, fit_em
from .selection import aligned_accuracy, map_decode, select_q, viterbi
from .simulate import bin_state_majority, derive_seed, discretize, sample_switching_hawkes

log = logging.getLogger(__name__)

BASE_A = 40.0
BASE_B = 160.0
HORIZON = 1.0

_DESIGNS = {
    1: (np.zeros((1, 1)), [60.0]),
    2: (25.0 * np.array([[-1.0, 1.0], [1.0, -1.0]]), [1.0, 400.0]),
    3: ((50.0 / 3.0) * np.array([[-2.0, 1.0, 1.0], [1.0, -2.0, 1.0], [1.0, 1.0, -2.0]]), [1.0, 200.0, 1000.0]),
}


def default_design(q_star: int, L: float = 1.0) -> ContinuousParams:
    """Baseline simulation design with ``q_star`` hidden states, baselines scaled by ``L``."""
    if q_star not in _DESIGNS:
        raise UnsupportedQStar(f"no default design for q_star={q_star}; choose 1, 2 or 3")
    R, m = _DESIGNS[q_star]
    return ContinuousParams(np.full(q_star, 1.0 / q_star), R, L * np.asarray(m), BASE_A, BASE_B)


@dataclass(frozen=True)
class StudyConfig:
    q_stars: tuple = (1, 2, 3)
    intensities: tuple = (1.0, 2.0)
    coefs: tuple = (1.0, 2.0)
    replicates: int = 20
    q_max: int = 5
    seed: int = 0
    em: EMConfig = field(default_factory=EMConfig)
    record_timing: bool = True

    def __post_init__(self):
        if self.replicates < 1:
            raise InvalidRange("replicates must be at least 1")
        if self.q_max < max(self.q_stars):
            raise InvalidRange("q_max must be at least the largest q_star")
        for q in self.q_stars:
            if q not in _DESIGNS:
                raise UnsupportedQStar(f"q_star={q} is not 1, 2 or 3")
        if any(L <= 0 for L in self.intensities) or any(C <= 0 for C in self.coefs):
            raise InvalidRange("intensities and coefficients must be positive")

    @property
    def n_cells(self) -> int:
        return len(self.q_stars) * len(self.intensities) * self.replicates


PRESETS = {
    "smoke": dict(q_stars=(1, 2), intensities=(1.0,), coefs=(2.0,), replicates=2, q_max=3),
    "desk": dict(q_stars=(1, 2, 3), intensities=(1.0, 2.0), coefs=(1.0, 2.0), replicates=20, q_max=5),
    "paper": dict(
        q_stars=(1, 2, 3),
        intensities=(0.5, 1.0, 1.5, 2.0),
        coefs=(0.5, 1.0, 2.0, 4.0),
        replicates=100,
        q_max=5,
    ),
}


def preset(name: str, **overrides) -> StudyConfig:
    if name not in PRESETS:
        raise InvalidRange(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return StudyConfig(**{**PRESETS[name], **overrides})


@dataclass
class StudyRow:
    q_star: int
    L: float
    C: float
    rep: int
    seed: int
    n_events: int
    n_bins: int
    Q_fit: int
    log_lik: float = math.nan
    aic: float = math.nan
    alpha_hat: float = math.nan
    beta_hat: float = math.nan
    mu_hat: tuple = ()
    acc_map: float = math.nan
    acc_vit: float = math.nan
    q_hat_aic: int = 0
    cpu_seconds: float = math.nan
    status: str = "ok"


STUDY_HEADER = [f.name for f in fields(StudyRow)]


def _cell(args):
    cfg, q_star, li, rep = args
    L = cfg.intensities[li]
    seed = derive_seed(cfg.seed, q_star, li, rep)
    rows = []
    design = default_design(q_star, L)
    try:
        sim = sample_switching_hawkes(design, HORIZON, seed)
    except SwitchingHawkesError as exc:
        for C in cfg.coefs:
            rows.append(StudyRow(q_star, L, C, rep, seed, 0, 0, 0, status=f"simulation failed: {exc}"))
        return rows
    n_events = len(sim.events)
    for C in cfg.coefs:
        if n_events == 0:
            rows.append(StudyRow(q_star, L, C, rep, seed, 0, 0, 0, status="no events"))
            continue
        y = discretize(sim.events, C)
        truth = bin_state_majority(sim.z_path, y.n)
        started = time.perf_counter()
        try:
            sel = select_q(y, cfg.q_max, cfg.em)
        except SwitchingHawkesError as exc:
            rows.append(StudyRow(q_star, L, C, rep, seed, n_events, y.n, 0, status=f"selection failed: {exc}"))
            continue
        elapsed = time.perf_counter() - started if cfg.record_timing else math.nan
        for q, rep_q in enumerate(sel.per_q, start=1):
            row = StudyRow(q_star, L, C, rep, seed, n_events, y.n, q, q_hat_aic=sel.q_hat, cpu_seconds=elapsed)
            if rep_q is None:
                row.status = "fit failed: " + sel.failures.get(q, "")
                rows.append(row)
                continue
            th = rep_q.theta_hat
            n_lab = max(q, q_star)
            z_map = map_decode(rep_q.tau)
            z_vit = viterbi(y, th)
            row.acc_map, perm = aligned_accuracy(z_map, truth, n_lab)
            row.acc_vit, _ = aligned_accuracy(z_vit, truth, n_lab)
            mu = th.mu
            if q == q_star:
                # list estimates in true-label order so per-state bias is well defined
                order = np.argsort(perm)
                mu = mu[order]
            row.log_lik, row.aic = rep_q.log_lik, rep_q.aic
            row.alpha_hat, row.beta_hat, row.mu_hat = th.alpha, th.beta, tuple(float(v) for v in mu)
            if not rep_q.converged:
                row.status = "not converged"
            rows.append(row)
    return rows


def _sort_key(row: StudyRow):
    return (row.q_star, row.L, row.C, row.rep, row.Q_fit)


def run_study(cfg: StudyConfig, jobs: int = 1, progress=None) -> list:
    """Run every ``(q_star, L, rep)`` cell; rows come back in canonical order."""
    tasks = [
        (cfg, q, li, rep)
        for q in cfg.q_stars
        for li in range(len(cfg.intensities))
        for rep in range(cfg.replicates)
    ]
    rows = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, cell_rows in enumerate(pool.map(_cell, tasks)):
                rows.extend(cell_rows)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        for i, task in enumerate(tasks):
            rows.extend(_cell(task))
            if progress:
                progress(i + 1, len(tasks))
    rows.sort(key=_sort_key)
    return rows


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    if isinstance(v, tuple):
        return ";".join(repr(float(x)) for x in v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STUDY_HEADER)
    for r in rows:
        w.writerow([_fmt(getattr(r, name)) for name in STUDY_HEADER])
    return buf.getvalue()


def _parse(name, text):
    if name in ("q_star", "rep", "seed", "n_events", "n_bins", "Q_fit", "q_hat_aic"):
        return int(text)
    if name == "status":
        return text
    if name == "mu_hat":
        return tuple(float(x) for x in text.split(";")) if text else ()
    return float(text) if text else math.nan


def rows_from_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    return [StudyRow(**{k: _parse(k, v) for k, v in rec.items()}) for rec in reader]


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def _quartiles(values):
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return (math.nan,) * 3
    return tuple(float(x) for x in np.quantile(v, [0.25, 0.5, 0.75]))


def _truth(q_star, L, n_bins):
    return cont_to_disc(default_design(q_star, L), HORIZON / n_bins)


def parameter_errors(rows):
    """Yield ``(row, param, state, error)`` for fits with ``Q_fit == q_star``."""
    for r in rows:
        if r.Q_fit != r.q_star or r.Q_fit == 0 or not math.isfinite(r.alpha_hat):
            continue
        mu, alpha, beta = _truth(r.q_star, r.L, r.n_bins)
        yield r, "alpha", 0, r.alpha_hat - alpha
        yield r, "beta", 0, r.beta_hat - beta
        for q, (est, true) in enumerate(zip(r.mu_hat, mu), start=1):
            yield r, "mu", q, est - true


def summarize(rows) -> dict:
    """Per-cell summary tables, returned as ``{name: list of dict}``.

    ``params``: quartiles of estimate minus truth (truth taken at each row's
    bin width) for ``alpha``, ``beta`` and each aligned ``mu``, at
    ``Q_fit = q_star``. ``qhat``: histogram of the AIC choice. ``accuracy``:
    quartiles of MAP and Viterbi accuracy at ``Q_fit = q_star``. ``cpu``:
    quartiles of time per full selection.
    """
    if not rows:
        raise InvalidRange("nothing to summarize")
    cells = sorted({(r.q_star, r.L, r.C) for r in rows})
    by_cell = {c: [r for r in rows if (r.q_star, r.L, r.C) == c] for c in cells}

    params = []
    errs = {}
    for r, name, q, err in parameter_errors(rows):
        errs.setdefault((r.q_star, r.L, r.C, name, q), []).append(err)
    for key in sorted(errs):
        e = errs[key]
        q1, med, q3 = _quartiles(e)
        params.append(
            dict(q_star=key[0], L=key[1], C=key[2], param=key[3], state=key[4], count=len(e),
                 q25=q1, median=med, q75=q3, median_abs=_quartiles(np.abs(e))[1])
        )

    qhat, accuracy, cpu = [], [], []
    for (q_star, L, C), rs in by_cell.items():
        firsts = [r for r in rs if r.Q_fit == 1]
        hist = {}
        for r in firsts:
            hist[r.q_hat_aic] = hist.get(r.q_hat_aic, 0) + 1
        q_max = max((r.Q_fit for r in rs), default=1)
        for q in range(1, q_max + 1):
            qhat.append(dict(q_star=q_star, L=L, C=C, Q=q, count=hist.get(q, 0)))
        at_truth = [r for r in rs if r.Q_fit == q_star]
        for rule in ("map", "vit"):
            q1, med, q3 = _quartiles([getattr(r, f"acc_{rule}") for r in at_truth])
            accuracy.append(dict(q_star=q_star, L=L, C=C, rule=rule, q25=q1, median=med, q75=q3))
        q1, med, q3 = _quartiles([r.cpu_seconds for r in firsts])
        n_ev = _quartiles([r.n_events for r in firsts])
        cpu.append(dict(q_star=q_star, L=L, C=C, q25=q1, median=med, q75=q3, median_events=n_ev[1]))
    return {"params": params, "qhat": qhat, "accuracy": accuracy, "cpu": cpu}


def table_to_csv(records) -> str:
    buf = io.StringIO()
    if not records:
        return ""
    w = csv.writer(buf, lineterminator="\n")
    header = list(records[0])
    w.writerow(header)
    for rec in records:
        w.writerow([_fmt(rec[h]) for h in header])
    return buf.getvalue()


def render_svgs(summary: dict, outdir) -> list:
    """Bar/interval charts of the summary tables; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    cells = sorted({(r["q_star"], r["L"], r["C"]) for r in summary["qhat"]})
    fig, ax = plt.subplots(figsize=(max(6, len(cells)), 4))
    width = 0.8 / max(1, max(r["Q"] for r in summary["qhat"]))
    for r in summary["qhat"]:
        i = cells.index((r["q_star"], r["L"], r["C"]))
        ax.bar(i + (r["Q"] - 1) * width, r["count"], width, color=f"C{r['Q'] - 1}")
    ax.set_xticks(range(len(cells)))
    ax.set_xticklabels([f"Q*={q}\nL={L:g} C={C:g}" for q, L, C in cells], fontsize=7)
    ax.set_ylabel("replicates choosing Q")
    path = outdir / "qhat.svg"
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(max(6, len(cells)), 4))
    for j, rule in enumerate(("map", "vit")):
        recs = [r for r in summary["accuracy"] if r["rule"] == rule]
        xs = [cells.index((r["q_star"], r["L"], r["C"])) + 0.2 * j for r in recs]
        med = np.array([r["median"] for r in recs])
        lo = med - np.array([r["q25"] for r in recs])
        hi = np.array([r["q75"] for r in recs]) - med
        ax.errorbar(xs, med, yerr=[lo, hi], fmt="o", label=rule.upper())
    ax.set_xticks(range(len(cells)))
    ax.set_xticklabels([f"Q*={q}\nL={L:g} C={C:g}" for q, L, C in cells], fontsize=7)
    ax.set_ylabel("accuracy (median, IQR)")
    ax.legend()
    path = outdir / "accuracy.svg"
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# four-model comparison
# ---------------------------------------------------------------------------

KIND_ORDER = (ModelKind.POISSON_HOMOG, ModelKind.POISSON_HMM, ModelKind.HAWKES_HOMOG, ModelKind.HAWKES_HMM)


@dataclass(frozen=True)
class Comparison:
    rows: list
    best_kind: ModelKind
    best_Q: int

    def best_by_kind(self) -> dict:
        out = {}
        for r in self.rows:
            if r["status"] != "ok":
                continue
            cur = out.get(r["model_kind"])
            if cur is None or r["aic"] > cur["aic"]:
                out[r["model_kind"]] = r
        return out


def _spread_states(theta1, Q, rel=1e-6):
    # one-state fit copied into Q nearly identical states
    nu = np.full(Q, 1.0 / Q)
    pi = np.full((Q, Q), 0.1 / (Q - 1))
    np.fill_diagonal(pi, 0.9)
    mu = theta1.mu[0] * (1.0 + rel * (np.arange(Q) - (Q - 1) / 2.0))
    return DiscreteParams(nu, pi, mu, theta1.alpha, theta1.beta)


def _with_memory(theta, alpha, beta):
    return DiscreteParams(theta.nu, theta.pi, theta.mu, alpha, beta)


def compare_models(y: BinnedSeries, q_max: int = 5, cfg: EMConfig = EMConfig(), nested_starts: bool = True) -> Comparison:
    """Fit the four nested models and pick the AIC winner.

    HMM variants are fitted for ``Q = 2..q_max``; the single-state variants
    stand for ``Q = 1``. Ties go to the simpler model. With
    ``nested_starts`` each Hawkes HMM fit is also started from the Poisson HMM
    and single-state Hawkes solutions, so its likelihood cannot fall below
    theirs by more than the optimizer tolerance.
    """
    if q_max < 1:
        raise InvalidRange("q_max must be at least 1")
    rows = []

    def add(kind, Q, log_lik, status="ok"):
        rows.append(dict(model_kind=kind, Q=Q, log_lik=log_lik,
                         aic=aic(log_lik, Q, kind) if status == "ok" else math.nan, status=status))

    ybar = float(y.y.mean())
    add(ModelKind.POISSON_HOMOG, 1, float(np.sum(log_poisson_pmf(y.y, ybar))))

    pinned = replace(cfg, pin_alpha_zero=True)
    free = replace(cfg, pin_alpha_zero=False)
    phmm = {}
    for Q in range(2, q_max + 1):
        try:
            phmm[Q] = fit_em(y, Q, pinned)
            add(ModelKind.POISSON_HMM, Q, phmm[Q].log_lik)
        except SwitchingHawkesError as exc:
            add(ModelKind.POISSON_HMM, Q, math.nan, f"failed: {exc}")

    try:
        homog = fit_em(y, 1, free)
        add(ModelKind.HAWKES_HOMOG, 1, homog.log_lik)
    except SwitchingHawkesError as exc:
        homog = None
        add(ModelKind.HAWKES_HOMOG, 1, math.nan, f"failed: {exc}")

    for Q in range(2, q_max + 1):
        candidates = []
        starts = [None]
        if nested_starts:
            if Q in phmm:
                starts.append(_with_memory(phmm[Q].theta_hat, 1e-9, 0.5))
            if homog is not None:
                starts.append(_spread_states(homog.theta_hat, Q))
        for init in starts:
            try:
                candidates.append(fit_em(y, Q, free, init=init))
            except SwitchingHawkesError as exc:
                log.info("Hawkes HMM start failed for Q=%d: %s", Q, exc)
        if candidates:
            best = max(candidates, key=lambda r: r.log_lik)
            add(ModelKind.HAWKES_HMM, Q, best.log_lik)
        else:
            add(ModelKind.HAWKES_HMM, Q, math.nan, "failed: all starts")

    best_kind, best_Q, best_aic = None, 0, -math.inf
    for kind in KIND_ORDER:
        for r in rows:
            if r["model_kind"] == kind and r["status"] == "ok" and r["aic"] > best_aic:
                best_kind, best_Q, best_aic = kind, r["Q"], r["aic"]
    return Comparison(rows, best_kind, best_Q)


def comparison_to_csv(comp: Comparison) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_kind", "Q", "log_lik", "aic", "status"])
    for r in comp.rows:
        w.writerow([r["model_kind"].value, r["Q"], _fmt(r["log_lik"]), _fmt(r["aic"]), r["status"]])
    winner = comp.best_kind.value if comp.best_kind else "none"
    return buf.getvalue() + f"# winner={winner} Q={comp.best_Q}\n"
