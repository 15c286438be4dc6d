"""Command-line front end: ``thermo-cq run|validate|cq-weights``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config
from .cq import CQError, cq_weights, get_scheme, default_workers

log = logging.getLogger("thermocq")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _setup_logging(verbose: bool, logfile: Path | None = None,
                   quiet: bool = False) -> list[logging.Handler]:
    root = logging.getLogger("thermocq")
    root.setLevel(logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO)
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    handlers: list[logging.Handler] = []
    if not any(getattr(h, "_thermocq_console", False) for h in root.handlers):
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(fmt)
        console._thermocq_console = True
        root.addHandler(console)
        handlers.append(console)
    if logfile is not None:
        fh = logging.FileHandler(logfile, mode="w", encoding="utf-8")
        fh.setFormatter(fmt)
        root.addHandler(fh)
        handlers.append(fh)
    return handlers


def _teardown(handlers):
    root = logging.getLogger("thermocq")
    for h in handlers:
        root.removeHandler(h)
        h.close()


def run(cfg: RunConfig, outdir: Path) -> int:
    """Run the configured study and write its artifacts into ``outdir``."""
    from .scenarios import (
        StudyError, run_freq_convergence, run_scattering, run_time_convergence, write_snapshots,
    )

    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if cfg.study == "scatter":
            result = run_scattering(cfg)
            files = write_snapshots(result, outdir)
            log.info("wrote %d snapshot files", len(files))
        else:
            driver = run_freq_convergence if cfg.study.startswith("freq") else run_time_convergence
            report = driver(cfg)
            report.to_csv(outdir / "report.csv")
            log.info("convergence table:\n%s", report.summary())
    except StudyError as exc:
        exc.report.to_csv(outdir / "report.csv")
        log.error("numerical failure: %s (partial report written)", exc)
        return EXIT_NUMERIC
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    log.info("finished in %.1f s", time.perf_counter() - t0)
    return EXIT_OK


def _cmd_run(args) -> int:
    try:
        default_workers()
        cfg = parse_config(args.config)
    except (ConfigError, CQError) as exc:
        _setup_logging(args.verbose)
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    outdir = Path(args.output) if args.output else Path(cfg.output)
    if not outdir.is_absolute() and not args.output:
        outdir = Path(args.config).parent / outdir
    outdir.mkdir(parents=True, exist_ok=True)
    handlers = _setup_logging(args.verbose, outdir / "run.log")
    try:
        for key, val in cfg.to_dict().items():
            log.info("config %s = %s", key, val)
        return run(cfg, outdir)
    finally:
        _teardown(handlers)


def _cmd_validate(args) -> int:
    handlers = _setup_logging(args.verbose, quiet=not args.verbose)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    finally:
        _teardown(handlers)
    for key, val in cfg.to_dict().items():
        print(f"{key} = {val}")
    return EXIT_OK


def _cmd_weights(args) -> int:
    try:
        scheme = get_scheme(args.scheme)
        if not args.dt > 0 or args.n < 1:
            raise CQError("dt must be positive and n at least 1")
    except CQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    N = args.n
    w1 = cq_weights(lambda s: s, scheme, args.dt, N)
    w2 = cq_weights(lambda s: s * s, scheme, args.dt, N)
    print(f"# {scheme.name} weights, dt = {args.dt:g}")
    print(f"{'m':>4s} {'symbol s':>16s} {'symbol s^2':>16s}")
    for m in range(N + 1):
        print(f"{m:4d} {_clean(w1[m], args.dt):16.8g} {_clean(w2[m], args.dt ** 2):16.8g}")
    return EXIT_OK


def _clean(x: float, scale: float) -> float:
    # contour roundoff leaves ~1e-14 relative residue where the weight is zero
    return 0.0 if abs(x) * scale < 1e-10 else float(x)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermo-cq", description="Thermoelastic-acoustic FEM-BEM-CQ solver")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the study described by a configuration file")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides the config)")
    v = sub.add_parser("validate", help="parse and validate a configuration file")
    v.add_argument("config")
    w = sub.add_parser("cq-weights", help="print CQ weights of the symbols s and s^2")
    w.add_argument("--scheme", default="bdf2")
    w.add_argument("--dt", type=float, default=0.1)
    w.add_argument("--n", type=int, default=8)
    for sp in (r, v, w):
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "verbose"):
        args.verbose = False
    handler = {"run": _cmd_run, "validate": _cmd_validate, "cq-weights": _cmd_weights}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
