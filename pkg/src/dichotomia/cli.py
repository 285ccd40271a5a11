"""Command-line front end.

Exit codes
----------
0   success
1   a check or residual failed its tolerance
2   spectrum grid did not cover the spectrum
3   gap condition fails (gap-check; conjugate without --force)
4   spectrum lies on one side of the unit circle (gap-check)
5   conjugacy iteration cannot contract
64  malformed configuration or command line
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import LoadedConfig, load_config, parse_grid
from .dichotomy import test_scaled_dichotomy
from .errors import (
    ConfigError,
    ContractionError,
    CoverageError,
    DichotomiaError,
    DichotomyRejected,
    SpectralBoundaryError,
)
from .linearize import ConjugacyEvaluator, ConjugacyOptions, verify_conjugacy
from .spectrum import (
    SpectrumOptions,
    check_gap_condition,
    dichotomy_spectrum,
    dim_growth_subspace,
    spectrum_from_intervals,
)

log = logging.getLogger("dichotomia")

EXIT_OK, EXIT_FAIL, EXIT_COVERAGE, EXIT_GAP, EXIT_ONE_SIDED, EXIT_CONTRACTION = 0, 1, 2, 3, 4, 5
EXIT_CONFIG = 64
SCHEMA_VERSION = 1


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    log.info("wrote %s", out / name)


# ---------------------------------------------------------------------------
# pipelines


def run_spectrum(cfg: LoadedConfig):
    run = cfg.run
    opts = SpectrumOptions(tol=run.spectrum_tol, window=run.window, horizon=run.horizon,
                           threads=run.threads)
    if run.grid is not None:
        a, b, n = run.grid
        opts = SpectrumOptions(a_min=a, a_max=b, steps=n, tol=run.spectrum_tol,
                               window=run.window, horizon=run.horizon, threads=run.threads)
    return dichotomy_spectrum(cfg.system.linear, opts)


def spectrum_report(result, cfg: LoadedConfig) -> dict:
    doc = result.to_dict()
    if doc.get("options"):
        doc["options"].pop("threads", None)
    doc["run"] = cfg.run.to_dict()
    return doc


def _spectrum_for_gap(cfg: LoadedConfig):
    if cfg.spectrum is not None:
        return spectrum_from_intervals(cfg.spectrum), "config"
    return run_spectrum(cfg), "computed"


def cmd_spectrum(cfg: LoadedConfig) -> int:
    out = Path(cfg.run.out)
    try:
        result = run_spectrum(cfg)
    except CoverageError as exc:
        log.error("%s", exc)
        _write(out, "spectrum.json", _dump({"schema_version": SCHEMA_VERSION, "error": str(exc),
                                            "suggested": list(exc.suggested or ())}))
        return EXIT_COVERAGE
    _write(out, "spectrum.json", _dump(spectrum_report(result, cfg)))
    _write(out, "spectrum.csv", result.probes_csv())
    for w in result.warnings:
        log.warning("%s", w)
    for iv in result.intervals:
        print(f"[{iv.a:.6g}, {iv.b:.6g}]  dim {iv.bundle_dim}")
    return EXIT_OK


def gap_document(cfg: LoadedConfig):
    spec, source = _spectrum_for_gap(cfg)
    doc = {"schema_version": SCHEMA_VERSION, "source": source,
           "intervals": [[iv.a, iv.b] for iv in spec.intervals]}
    if not spec.hyperbolic:
        doc.update(all_pass=False, notice="spectrum contains 1; no gap condition applies")
        return spec, None, doc
    report = check_gap_condition(spec)
    doc.update(report.to_dict())
    return spec, report, doc


def cmd_gap_check(cfg: LoadedConfig) -> int:
    try:
        _, report, doc = gap_document(cfg)
    except CoverageError as exc:
        log.error("%s", exc)
        return EXIT_COVERAGE
    _write(Path(cfg.run.out), "gap.json", _dump(doc))
    if report is None:
        log.error("%s", doc["notice"])
        return EXIT_GAP
    for n in report.notices:
        log.warning("%s", n)
    if report.one_sided:
        print("one-sided spectrum: no gap condition to check")
        return EXIT_ONE_SIDED
    print("gap condition " + ("holds" if report.all_pass else "FAILS"))
    return EXIT_OK if report.all_pass else EXIT_GAP


def _grid(d: int, points: int, radius: float) -> np.ndarray:
    g = np.linspace(-radius, radius, points)
    return np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)


def conjugacy_evaluator(cfg: LoadedConfig):
    run = cfg.run
    T = run.conj_horizon
    reach = T + max(abs(run.m_range[0]), abs(run.m_range[1])) + 2
    cert = test_scaled_dichotomy(cfg.system, 1.0, window=reach, horizon=run.horizon)
    return ConjugacyEvaluator(cfg.system, cert, ConjugacyOptions(horizon=T))


def cmd_conjugate(cfg: LoadedConfig) -> int:
    run = cfg.run
    out = Path(run.out)
    try:
        _, report, _ = gap_document(cfg)
    except CoverageError as exc:
        log.error("%s", exc)
        return EXIT_COVERAGE
    if (report is None or not report.all_pass) and not run.force:
        log.error("gap condition does not hold; pass --force to construct anyway")
        return EXIT_GAP
    try:
        ev = conjugacy_evaluator(cfg)
        m_lo, m_hi = run.m_range
        ms = range(m_lo, m_hi + 1)
        kappa = max(ev.contraction_factor(m) for m in ms)
        if kappa >= 1.0:
            raise ContractionError(f"contraction factor {kappa:.3g} >= 1", ratio=kappa)
        grid = _grid(cfg.system.dimension, run.conj_grid_points, run.conj_radius)
        rep = verify_conjugacy(cfg.system, ev.cert, ms, grid, tol=run.tol, evaluator=ev)
        rt = float(np.abs(ev.forward(0, ev.inverse(0, grid)) - grid).max())
    except ContractionError as exc:
        log.error("%s", exc)
        return EXIT_CONTRACTION
    except DichotomyRejected as exc:
        log.error("no dichotomy at scale 1: %s", exc)
        return EXIT_GAP
    d = cfg.system.dimension
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m"] + [f"x{i + 1}" for i in range(d)] + [f"h{i + 1}" for i in range(d)]
               + ["residual"])
    for m in ms:
        h = ev.forward(m, grid)
        r = ev.residual(m, grid)
        for x, hx, rx in zip(grid, h, r):
            w.writerow([m] + [repr(float(t)) for t in x] + [repr(float(t)) for t in hx]
                       + [repr(float(rx))])
    _write(out, "conjugacy.csv", buf.getvalue())
    _write(out, "residuals.csv", rep.to_csv())
    doc = rep.to_dict()
    doc.update(roundtrip=rt, run=run.to_dict())
    _write(out, "residuals.json", _dump(doc))
    print(f"max residual {rep.max_residual:.3e} (tol {run.tol:g}), roundtrip {rt:.3e}")
    return EXIT_OK if rep.passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# invariant suite


def _check(value, tol, passed=None, **extra):
    value = float(value)
    ok = value <= tol if passed is None else passed
    return dict(extra, value=value, tol=tol, passed=bool(ok))


def _cocycle_check(lin, rng, samples, span):
    worst = 0.0
    for _ in range(samples):
        k, n, m = sorted(int(t) for t in rng.integers(-span, span + 1, size=3))
        Amn, Ank, Amk = lin.propagator(m, n), lin.propagator(n, k), lin.propagator(m, k)
        scale = np.linalg.norm(Amn, 2) * np.linalg.norm(Ank, 2)
        worst = max(worst, np.linalg.norm(Amn @ Ank - Amk, 2) / scale)
    return worst


def _resolvent_scale(spec):
    if spec is None or not spec.intervals:
        return 1.0
    if not any(iv.contains(1.0, enclosure=True) for iv in spec.intervals):
        return 1.0
    ivs = spec.intervals
    if len(ivs) > 1:
        return math.sqrt(ivs[0].b * ivs[1].a)
    return ivs[0].b * 2.0


def cmd_verify(cfg: LoadedConfig, hook=None) -> int:
    """Run the invariant suite; ``hook(system)`` runs after the propagator cache is warm."""
    run = cfg.run
    lin = cfg.system.linear
    rng = np.random.default_rng(run.seed)
    span = min(run.window, 30)
    checks = {}

    _cocycle_check(lin, np.random.default_rng(run.seed), run.verify_samples, span)
    if hook is not None:
        hook(cfg.system)
    checks["cocycle_identity"] = _check(_cocycle_check(lin, rng, run.verify_samples, span), 1e-10)

    try:
        spec = run_spectrum(cfg)
        spec_json = _dump(spectrum_report(spec, cfg))
    except DichotomiaError as exc:
        spec, spec_json = None, None
        checks["spectrum"] = _check(1.0, 0.0, passed=False, error=str(exc))

    a = _resolvent_scale(spec)
    try:
        cert = test_scaled_dichotomy(lin, a, window=min(run.window, 60), horizon=run.horizon)
        comm = idem = 0.0
        for n in range(-cert.window, cert.window):
            A = lin.matrix(n)
            P0, P1 = cert.projection(n), cert.projection(n + 1)
            nrm = np.linalg.norm(A, 2)
            comm = max(comm, np.linalg.norm(P1 @ A - A @ P0, 2) / nrm)
            idem = max(idem, np.linalg.norm(P0 @ P0 - P0, 2))
        checks["projection_commutation"] = _check(comm, 1e-8, scale=a)
        checks["projection_idempotent"] = _check(idem, 1e-8, scale=a)
    except DichotomiaError as exc:
        checks["projection_commutation"] = _check(1.0, 1e-8, passed=False, error=str(exc))

    if spec is not None:
        if run.grid is not None:
            lo, hi, steps = run.grid
        else:
            lo = spec.intervals[0].a / 2 if spec.intervals else 0.1
            hi = spec.intervals[-1].b * 2 if spec.intervals else 10.0
            steps = 24
        dims, viol = [], 0
        for s in np.geomspace(lo, hi, steps):
            try:
                dims.append(dim_growth_subspace(lin, float(s), window=run.window))
            except SpectralBoundaryError:
                continue
        viol = sum(1 for x, y in zip(dims, dims[1:]) if y < x)
        checks["dim_monotone"] = _check(viol, 0, probes=len(dims), dims=dims)

        lin.clear_cache()
        again = _dump(spectrum_report(run_spectrum(cfg), cfg))
        checks["report_determinism"] = _check(0 if again == spec_json else 1, 0)

    doc = {"schema_version": SCHEMA_VERSION, "run": run.to_dict(), "checks": checks,
           "all_pass": all(c["passed"] for c in checks.values())}
    _write(Path(run.out), "verify.json", _dump(doc))
    for name, c in sorted(checks.items()):
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}  value={c['value']:.3g}")
    return EXIT_OK if doc["all_pass"] else EXIT_FAIL


COMMANDS = {
    "spectrum": cmd_spectrum,
    "gap-check": cmd_gap_check,
    "conjugate": cmd_conjugate,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dichotomia", description="Dichotomy spectra and linearization reports.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="system/run configuration (JSON)")
        s.add_argument("--out", help="output directory (default: run.out or ./out)")
        s.add_argument("--window", type=int, help="window half-width N")
        s.add_argument("--tol", type=float,
                       help="bisection tolerance (spectrum) or residual tolerance (others)")
        s.add_argument("--grid", help="scale grid 'a:b:steps'")
        s.add_argument("--force", action="store_true", help="conjugate even if the gap fails")
        s.add_argument("--threads", type=int, help="worker threads (env DICHOTOMIA_THREADS)")
        s.add_argument("--seed", type=int, help="sampling seed")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("DICHOTOMIA_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"DICHOTOMIA_THREADS must be an integer, got {env!r}") from exc
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        over = dict(out=args.out, window=args.window, seed=args.seed,
                    threads=_threads(args.threads),
                    grid=parse_grid(args.grid) if args.grid else None,
                    force=True if args.force else None)
        if args.tol is not None:
            over["spectrum_tol" if args.command == "spectrum" else "tol"] = args.tol
        cfg = cfg.with_overrides(**over)
    except ConfigError as exc:
        print(f"dichotomia: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"dichotomia: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DichotomiaError as exc:
        print(f"dichotomia: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
