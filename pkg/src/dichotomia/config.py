"""JSON system descriptions and run configurations.

A configuration file looks like::

    {
      "dimension": 2,
      "generator": {"kind": "constant", "params": {"diag": [0.5, 3.0]}},
      "nonlinearity": {"kind": "tanh2", "eta": 0.05, "epsilon": 0.1},
      "run": {"window": 200, "tol": 1e-6}
    }

``generator.kind`` is one of ``constant``, ``periodic``, ``nonuniform-scalar``,
``diagonal-exponential``, ``tabulated`` or ``random``.  For the ``tanh2``
nonlinearity ``eta`` is the amplitude in front of ``tanh^2``; the Lipschitz
and second-derivative constants follow from it.  See ``docs/formats.md``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cocycle import (
    LinearSystem,
    NonautonomousSystem,
    SaturatingNonlinearity,
    ZeroNonlinearity,
)
from .errors import ConfigError, DichotomiaError

__all__ = ["RunConfig", "build_system", "load_config", "parse_grid"]

GENERATOR_KINDS = ("constant", "periodic", "nonuniform-scalar", "diagonal-exponential",
                   "tabulated", "random")
NONLINEARITY_KINDS = ("tanh2", "zero")
_TOP_KEYS = {"dimension", "generator", "nonlinearity", "run", "spectrum", "name"}


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI command needs besides the system itself."""

    window: int = 200
    horizon: int = 40
    conj_horizon: int = 60
    tol: float = 1e-6
    spectrum_tol: float = 1e-4
    grid: tuple[float, float, int] | None = None
    conj_grid_points: int = 21
    conj_radius: float = 1.0
    m_range: tuple[int, int] = (-5, 5)
    verify_samples: int = 40
    seed: int = 0
    threads: int = 1
    force: bool = False
    out: str = "out"

    def __post_init__(self):
        for name in ("tol", "spectrum_tol", "conj_radius"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        for name in ("window", "horizon", "conj_horizon", "conj_grid_points", "verify_samples",
                     "threads"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.window < max(self.horizon, self.conj_horizon):
            raise ConfigError(
                f"window ({self.window}) must be at least the horizons "
                f"({self.horizon}, {self.conj_horizon})")
        lo, hi = self.m_range
        if lo > hi:
            raise ConfigError("m_range must be ordered")
        if self.grid is not None:
            a, b, n = self.grid
            if not (0 < a < b and n >= 2):
                raise ConfigError("grid needs 0 < a < b and at least 2 steps")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        return d


def parse_grid(text: str) -> tuple[float, float, int]:
    """``"a:b:steps"`` to a tuple."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid must look like 'a:b:steps', got {text!r}")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"grid must look like 'a:b:steps', got {text!r}") from exc
    if not (0 < a < b and n >= 2):
        raise ConfigError("grid needs 0 < a < b and at least 2 steps")
    return a, b, n


def _require(mapping, key, where):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ConfigError(f"missing key '{where}{key}'")
    return mapping[key]


def _matrices(value, what):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be numeric") from exc
    return arr


def _linear(gen: dict) -> LinearSystem:
    kind = _require(gen, "kind", "generator.")
    params = gen.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("generator.params must be an object")
    if kind not in GENERATOR_KINDS:
        raise ConfigError(f"unknown generator.kind {kind!r}; expected one of {GENERATOR_KINDS}")
    try:
        if kind == "constant":
            if "matrix" in params:
                return LinearSystem.constant(_matrices(params["matrix"], "matrix"))
            return LinearSystem.constant(np.diag(_matrices(_require(params, "diag",
                                                                    "generator.params."), "diag")))
        if kind == "periodic":
            mats = _require(params, "matrices", "generator.params.")
            return LinearSystem.periodic([_matrices(M, "matrices") for M in mats])
        if kind == "tabulated":
            mats = _require(params, "matrices", "generator.params.")
            return LinearSystem.tabulated([_matrices(M, "matrices") for M in mats],
                                          int(params.get("start", 0)),
                                          params.get("extension", "wrap"))
        if kind == "nonuniform-scalar":
            lam = float(_require(params, "lam", "generator.params."))
            eps = float(_require(params, "eps", "generator.params."))
            if not lam > eps >= 0:
                raise ConfigError(f"need lam > eps >= 0 (got lam={lam}, eps={eps})")
            dim = int(params.get("dimension", 1))
            return LinearSystem.diagonal_exponential([-lam] * dim, [eps] * dim)
        if kind == "diagonal-exponential":
            rates = _require(params, "log_rates", "generator.params.")
            return LinearSystem.diagonal_exponential(rates, params.get("epsilons", 0.0))
        return LinearSystem.random_hyperbolic(_require(params, "base", "generator.params."),
                                              float(params.get("noise", 0.05)),
                                              int(params.get("seed", 0)))
    except ConfigError:
        raise
    except (DichotomiaError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid generator parameters: {exc}") from exc


def build_system(doc: dict) -> NonautonomousSystem:
    """System from a parsed configuration document."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    dim = _require(doc, "dimension", "")
    if not (isinstance(dim, int) and dim >= 1):
        raise ConfigError("dimension must be a positive integer")
    lin = _linear(_require(doc, "generator", ""))
    if lin.dimension != dim:
        raise ConfigError(f"generator has dimension {lin.dimension}, config says {dim}")
    nl_doc = doc.get("nonlinearity") or {"kind": "zero"}
    kind = nl_doc.get("kind", "tanh2")
    if kind not in NONLINEARITY_KINDS:
        raise ConfigError(f"unknown nonlinearity.kind {kind!r}; expected one of "
                          f"{NONLINEARITY_KINDS}")
    amp = float(nl_doc.get("eta", 0.0))
    if kind == "zero" or amp == 0.0:
        return NonautonomousSystem(lin, ZeroNonlinearity(dim))
    eps = float(nl_doc.get("epsilon", 0.0))
    if amp < 0 or eps < 0:
        raise ConfigError("nonlinearity.eta and nonlinearity.epsilon must be nonnegative")
    nl = SaturatingNonlinearity(dim, amp, eps)
    if "B" in nl_doc and float(nl_doc["B"]) < nl.B:
        raise ConfigError(f"declared B = {nl_doc['B']} is below the true bound {nl.B:.6g}")
    return NonautonomousSystem(lin, nl)


def _run(doc: dict) -> RunConfig:
    run = doc.get("run", {}) or {}
    if not isinstance(run, dict):
        raise ConfigError("run must be an object")
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(run) - known
    if unknown:
        raise ConfigError(f"unknown run keys: {sorted(unknown)}")
    kw = dict(run)
    if isinstance(kw.get("grid"), str):
        kw["grid"] = parse_grid(kw["grid"])
    elif kw.get("grid") is not None:
        kw["grid"] = tuple(kw["grid"])
    if "m_range" in kw:
        kw["m_range"] = tuple(int(v) for v in kw["m_range"])
    try:
        return RunConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class LoadedConfig:
    path: str
    document: dict
    system: NonautonomousSystem
    run: RunConfig
    spectrum: list | None = field(default=None)

    def with_overrides(self, **kw) -> "LoadedConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        try:
            run = replace(self.run, **kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return LoadedConfig(self.path, self.document, self.system, run, self.spectrum)


def load_config(path) -> LoadedConfig:
    """Read and validate a configuration file; every problem raises :class:`ConfigError`."""
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p} is not valid JSON: {exc}") from exc
    system = build_system(doc)
    spectrum = doc.get("spectrum")
    if spectrum is not None:
        try:
            spectrum = [(float(a), float(b)) for a, b in spectrum]
        except (TypeError, ValueError) as exc:
            raise ConfigError("spectrum must be a list of [a, b] pairs") from exc
        if any(not 0 < a <= b for a, b in spectrum):
            raise ConfigError("spectrum intervals need 0 < a <= b")
    return LoadedConfig(str(p), doc, system, _run(doc), spectrum)
