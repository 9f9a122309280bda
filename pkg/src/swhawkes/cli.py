"""Command-line interface: ``swhawkes {simulate,fit,select,compare,study}``.

Exit codes: 0 success, 2 usage or validation error, 3 non-convergence under
``--strict``, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as fio
from .core import ContinuousParams
from .errors import SwitchingHawkesError
from .inference import EMConfig, fit_em
from .selection import map_decode, select_q, viterbi
from .simulate import discretize, sample_switching_hawkes
from .study import (
    PRESETS,
    StudyConfig,
    compare_models,
    comparison_to_csv,
    default_design,
    preset,
    render_svgs,
    rows_to_csv,
    run_study,
    summarize,
    table_to_csv,
)

EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4

log = logging.getLogger("swhawkes")


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _matrix(text):
    # rows separated by ';', entries by ','
    try:
        return [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a matrix like '-1,1;1,-1', got {text!r}") from None


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _default_seed():
    env = os.environ.get("SWHAWKES_SEED")
    return int(env) if env not in (None, "") else 0


def _add_input(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--events", type=Path, help="event-time file ('# horizon=T' header)")
    src.add_argument("--counts", type=Path, help="pre-binned counts, one integer per line")
    p.add_argument("--coef", type=_positive_float, default=None, help="bins per event for --events (default 2)")
    p.add_argument("--delta", type=_positive_float, default=None, help="bin width for --counts")


def _add_em(p):
    p.add_argument("--tol", type=_positive_float, default=1e-6, help="posterior-change stopping tolerance")
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--seed", type=int, default=None, help="defaults to $SWHAWKES_SEED or 0")
    p.add_argument("--n-starts", type=_positive_int, default=1)


def _load_series(args):
    if args.events is not None:
        if args.delta is not None:
            raise UsageError("--delta only applies to --counts input")
        coef = args.coef if args.coef is not None else 2.0
        return discretize(fio.read_events(args.events), coef)
    if args.coef is not None:
        raise UsageError("--coef only applies to --events input")
    if args.delta is None:
        raise UsageError("--counts needs --delta")
    return fio.read_counts(args.counts, args.delta)


def _em_config(args, **extra):
    seed = args.seed if args.seed is not None else _default_seed()
    return EMConfig(max_iter=args.max_iter, tau_tol=args.tol, seed=seed, n_starts=args.n_starts, **extra)


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    seed = args.seed if args.seed is not None else _default_seed()
    if args.design is not None:
        if any(v is not None for v in (args.rates, args.baselines, args.a, args.b)):
            raise UsageError("--design excludes --rates/--baselines/--a/--b")
        c = default_design(args.design, args.L)
    else:
        if any(v is None for v in (args.rates, args.baselines, args.a, args.b)):
            raise UsageError("give --design or all of --rates, --baselines, --a, --b")
        m = np.asarray(args.baselines) * args.L
        p0 = args.p0 if args.p0 is not None else np.full(len(m), 1.0 / len(m))
        c = ContinuousParams(p0, args.rates, m, args.a, args.b)
    sim = sample_switching_hawkes(c, args.horizon, seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    fio.write_events(out / "events.txt", sim.events)
    fio.write_json(out / "truth.json", sim.to_dict())
    print(f"{len(sim.events)} events written to {out / 'events.txt'}")
    return 0


def cmd_fit(args):
    y = _load_series(args)
    cfg = _em_config(args, pin_alpha_zero=args.pin_alpha_zero)
    rep = fit_em(y, args.Q, cfg)
    _emit(fio.dumps(rep.to_dict()), args.output)
    if args.tau_out:
        _emit(fio.tau_csv(rep.tau), args.tau_out)
    if args.paths_out:
        _emit(fio.paths_csv(map_decode(rep.tau), viterbi(y, rep.theta_hat)), args.paths_out)
    if args.strict and not rep.converged:
        print(f"EM did not converge in {rep.n_iter} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return 0


def cmd_select(args):
    y = _load_series(args)
    cfg = _em_config(args)
    sel = select_q(y, args.q_max, cfg)
    if args.output:
        fio.write_json(args.output, sel.to_dict())
    print(f"Q_hat={sel.q_hat}")
    print("Q,log_lik,aic")
    for q, ll, a in sel.aic_table():
        print(f"{q},{ll!r},{a!r}")
    if args.paths_out:
        _emit(fio.paths_csv(map_decode(sel.best.tau), viterbi(y, sel.best.theta_hat)), args.paths_out)
    if args.strict and not sel.best.converged:
        return EXIT_NOT_CONVERGED
    return 0


def cmd_compare(args):
    y = _load_series(args)
    comp = compare_models(y, args.q_max, _em_config(args))
    text = comparison_to_csv(comp)
    if args.output:
        _emit(text, args.output)
    sys.stdout.write(text)
    return 0


def cmd_study(args):
    seed = args.seed if args.seed is not None else _default_seed()
    base = dict(PRESETS[args.preset or "desk"])
    if args.q_stars is not None:
        base["q_stars"] = tuple(args.q_stars)
    for key in ("intensities", "coefs"):
        if getattr(args, key) is not None:
            base[key] = tuple(getattr(args, key))
    for key in ("replicates", "q_max"):
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    cfg = StudyConfig(**base, seed=seed, record_timing=not args.no_timing,
                      em=replace(EMConfig(), tau_tol=args.tol, max_iter=args.max_iter))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    def progress(done, total):
        print(f"[{done}/{total}] cells done", file=sys.stderr, flush=True)

    rows = run_study(cfg, jobs=args.jobs, progress=progress)
    (out / "study.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    summary = summarize(rows)
    for name, records in summary.items():
        (out / f"summary_{name}.csv").write_text(table_to_csv(records), encoding="utf-8")
    if args.plots:
        render_svgs(summary, out)
    failed = sum(r.status not in ("ok", "not converged") for r in rows)
    print(f"{len(rows)} rows written to {out / 'study.csv'} ({failed} failed)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swhawkes", description="Markov-switching discrete Hawkes toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the continuous switching Hawkes process")
    p.add_argument("--design", type=int, default=None, help="built-in design with this many states (1-3)")
    p.add_argument("--rates", type=_matrix, default=None, help="CTMC rate matrix, e.g. --rates=-25,25;25,-25")
    p.add_argument("--baselines", type=_floats, default=None, help="baseline rates per state, e.g. '1,400'")
    p.add_argument("--p0", type=_floats, default=None, help="initial state distribution (default uniform)")
    p.add_argument("--a", type=float, default=None, help="excitation jump")
    p.add_argument("--b", type=_positive_float, default=None, help="excitation decay rate")
    p.add_argument("--L", type=_positive_float, default=1.0, help="baseline intensity multiplier")
    p.add_argument("--horizon", type=_positive_float, default=1.0)
    p.add_argument("--seed", type=int, default=None, help="defaults to $SWHAWKES_SEED or 0")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model with a fixed number of states")
    _add_input(p)
    p.add_argument("--Q", type=_positive_int, required=True)
    _add_em(p)
    p.add_argument("--pin-alpha-zero", action="store_true", help="fit a Poisson HMM (alpha = beta = 0)")
    p.add_argument("--strict", action="store_true", help="exit 3 if EM does not converge")
    p.add_argument("--tau-out", default=None, help="write posterior state probabilities as CSV")
    p.add_argument("--paths-out", default=None, help="write MAP and Viterbi paths as CSV")
    p.add_argument("-o", "--output", default=None, help="report path (default stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="choose the number of states by AIC")
    _add_input(p)
    p.add_argument("--q-max", type=_positive_int, default=5)
    _add_em(p)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--paths-out", default=None, help="write MAP and Viterbi paths of the chosen fit")
    p.add_argument("-o", "--output", default=None, help="selection JSON path")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("compare", help="compare Poisson/Hawkes, homogeneous/HMM models by AIC")
    _add_input(p)
    p.add_argument("--q-max", type=_positive_int, default=5)
    _add_em(p)
    p.add_argument("-o", "--output", default=None, help="comparison CSV path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("study", help="run the simulation study")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--q-stars", type=_ints, default=None, help="e.g. '1,2,3'")
    p.add_argument("--intensities", type=_floats, default=None)
    p.add_argument("--coefs", type=_floats, default=None)
    p.add_argument("--replicates", type=_positive_int, default=None)
    p.add_argument("--q-max", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=None, help="defaults to $SWHAWKES_SEED or 0")
    p.add_argument("--tol", type=_positive_float, default=1e-6)
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--no-timing", action="store_true", help="leave cpu_seconds empty so output is byte-reproducible")
    p.add_argument("--plots", action="store_true", help="also write SVG charts")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except SwitchingHawkesError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
