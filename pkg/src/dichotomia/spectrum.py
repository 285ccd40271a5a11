"""Dichotomy spectrum on the positive reals and the linearization gap conditions.

The spectrum is located by probing scales ``a`` with
:func:`~dichotomia.dichotomy.test_scaled_dichotomy`: a probe either accepts
with a stable dimension ``dim S_a`` or rejects.  Between two accepted probes
with different dimensions lies spectrum; its endpoints are refined by
bisection.  Equal dimensions on both sides of a stretch mean no spectrum
there, so jumps in ``a -> dim S_a`` are all that need resolving.

Complex scales are never probed; each positive interval ``[a_i, b_i]``
stands for the annulus ``a_i <= |z| <= b_i``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .cocycle import LinearSystem, NonautonomousSystem
from .dichotomy import DEFAULT_HORIZON, test_scaled_dichotomy
from .errors import (
    ConsistencyError,
    CoverageError,
    DichotomyRejected,
    SpectralBoundaryError,
)

__all__ = [
    "SpectralInterval",
    "SpectrumResult",
    "SpectrumOptions",
    "GapReport",
    "growth_rate_ranges",
    "dim_growth_subspace",
    "dichotomy_spectrum",
    "check_gap_condition",
    "spectrum_from_intervals",
    "choose_rates",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def _linear(sys) -> LinearSystem:
    return sys.linear if isinstance(sys, NonautonomousSystem) else sys


# ---------------------------------------------------------------------------
# QR-accumulated growth rates


def growth_rate_ranges(sys, window: int = 200, min_lag: int = 20, burn_in: int = 100,
                       offset_ratio: float = 0.05) -> np.ndarray:
    """Per-direction ranges ``[lo_i, hi_i]`` of logarithmic growth rates.

    The cocycle is pushed through a QR factorization at every step starting
    ``burn_in`` steps before ``-window``; ``log |R_ii|`` are the local
    growth increments.  For each direction the range is the inf/sup over
    window pairs ``n < m`` of the averaged increments, restricted to
    ``m - n >= min_lag`` and ``|n| <= offset_ratio * (m - n)`` so that the
    initial-time loss of a nonuniform cocycle averages out.

    Returns an array of shape ``(d, 2)`` sorted by lower end.
    """
    lin = _linear(sys)
    d = lin.dimension
    N = window
    Q = np.eye(d)
    incr = np.empty((2 * N, d))
    for k in range(-N - burn_in, N):
        Q, R = np.linalg.qr(lin.matrix(k) @ Q)
        if k >= -N:
            incr[k + N] = np.log(np.abs(np.diag(R)))
    S = np.vstack([np.zeros(d), np.cumsum(incr, axis=0)])   # S[i] = sum of first i
    lo = np.full(d, np.inf)
    hi = np.full(d, -np.inf)
    for L in range(min_lag, 2 * N + 1):
        nmax = int(math.floor(offset_ratio * L))
        n = np.arange(max(-N, -nmax), min(N - L, nmax) + 1)
        if n.size == 0:
            continue
        avg = (S[n + N + L] - S[n + N]) / L
        lo = np.minimum(lo, avg.min(axis=0))
        hi = np.maximum(hi, avg.max(axis=0))
    if not np.all(np.isfinite(lo)):
        raise CoverageError("window too short for the requested minimum lag")
    out = np.column_stack([lo, hi])
    return out[np.argsort(out[:, 0])]


def dim_growth_subspace(sys, a: float, window: int = 200, resolution: float = 1e-6,
                        **kw) -> int:
    """Number of growth directions whose whole rate range lies below ``log a``.

    Raises :class:`SpectralBoundaryError` if ``log a`` falls inside (or within
    ``resolution`` of) some direction's range.
    """
    if a <= 0:
        raise ValueError("scale must be positive")
    la = math.log(a)
    ranges = growth_rate_ranges(sys, window, **kw)
    for lo, hi in ranges:
        if lo - resolution <= la <= hi + resolution:
            raise SpectralBoundaryError(
                f"log a = {la:.6g} lies in the growth range [{lo:.6g}, {hi:.6g}]; "
                "locate the endpoint by bisection")
    return int(np.sum(ranges[:, 1] < la))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralInterval:
    a: float
    b: float
    bundle_dim: int
    below_unit: bool
    enclosure: tuple[float, float] = (0.0, 0.0)

    def contains(self, x: float, enclosure: bool = False) -> bool:
        lo, hi = self.enclosure if enclosure else (self.a, self.b)
        return lo <= x <= hi


@dataclass(frozen=True)
class SpectrumOptions:
    a_min: float | None = None
    a_max: float | None = None
    steps: int = 48
    tol: float = 1e-4
    window: int = 200
    horizon: int = DEFAULT_HORIZON
    refine_samples: int = 8
    max_depth: int = 6
    threads: int = 1


@dataclass
class SpectrumResult:
    intervals: list[SpectralInterval]
    dimension: int
    probe_log: list[tuple[float, bool, int | None]]
    options: SpectrumOptions | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def r(self) -> int:
        return len(self.intervals)

    @property
    def k(self) -> int:
        return sum(1 for iv in self.intervals if iv.b < 1.0)

    @property
    def hyperbolic(self) -> bool:
        # judged on enclosures: a point interval bisected next to 1 still counts
        return not any(iv.contains(1.0, enclosure=True) for iv in self.intervals)

    @property
    def endpoints(self) -> list[tuple[float, float]]:
        return [(iv.a, iv.b) for iv in self.intervals]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dimension": self.dimension,
            "intervals": [
                {"a": iv.a, "b": iv.b, "bundle_dim": iv.bundle_dim,
                 "below_unit": iv.below_unit, "enclosure": list(iv.enclosure)}
                for iv in self.intervals
            ],
            "k": self.k,
            "r": self.r,
            "hyperbolic": self.hyperbolic,
            "probe_log": [{"a": a, "accepted": ok, "dim": dim} for a, ok, dim in self.probe_log],
            "options": asdict(self.options) if self.options else None,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def probes_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a", "dim", "accept"])
        for a, ok, dim in self.probe_log:
            w.writerow([repr(a), "" if dim is None else dim, int(ok)])
        return buf.getvalue()


def spectrum_from_intervals(intervals, dims=None) -> SpectrumResult:
    """Build a :class:`SpectrumResult` from known endpoints (e.g. for gap checks)."""
    intervals = sorted((float(a), float(b)) for a, b in intervals)
    dims = dims or [1] * len(intervals)
    ivs = [SpectralInterval(a, b, int(dd), b < 1.0, (a, b)) for (a, b), dd in zip(intervals, dims)]
    return SpectrumResult(ivs, int(sum(dims)), [])


class _Prober:
    def __init__(self, lin, opts):
        self.lin = lin
        self.opts = opts
        self.memo: dict[float, tuple[bool, int | None]] = {}

    def __call__(self, a):
        a = float(a)
        hit = self.memo.get(a)
        if hit is None:
            try:
                cert = test_scaled_dichotomy(self.lin, a, self.opts.window,
                                             horizon=self.opts.horizon)
                hit = (True, cert.stable_dim)
            except DichotomyRejected:
                hit = (False, None)
            self.memo[a] = hit
        return hit

    def is_dim(self, a, dim):
        ok, dd = self(a)
        return ok and dd == dim

    def bisect(self, lo, hi, pred):
        """``pred(lo) != pred(hi)``; shrink to relative width ``tol``."""
        p_lo = pred(lo)
        while hi / lo - 1.0 > self.opts.tol:
            mid = math.sqrt(lo * hi)
            if pred(mid) == p_lo:
                lo = mid
            else:
                hi = mid
        return lo, hi

    def refine(self, aL, dL, aR, dR, depth=0):
        left = self.bisect(aL, aR, lambda a: self.is_dim(a, dL))
        right = self.bisect(aL, aR, lambda a: self.is_dim(a, dR))
        if depth < self.opts.max_depth and left[1] < right[0]:
            inner = np.geomspace(left[1], right[0], self.opts.refine_samples + 2)[1:-1]
            for c in inner:
                ok, dim = self(c)
                if not ok:
                    continue
                if dL <= dim <= dR:
                    lo_part = self.refine(aL, dL, c, dim, depth + 1) if dim > dL else []
                    hi_part = self.refine(c, dim, aR, dR, depth + 1) if dim < dR else []
                    return lo_part + hi_part
        a_i = math.sqrt(left[0] * left[1])
        b_i = math.sqrt(right[0] * right[1])
        if a_i > b_i:
            a_i = b_i = math.sqrt(a_i * b_i)
        return [SpectralInterval(a_i, b_i, dR - dL, b_i < 1.0, (left[0], right[1]))]


def dichotomy_spectrum(sys, opts: SpectrumOptions | None = None, **overrides) -> SpectrumResult:
    """Dichotomy spectrum of ``(A_m)`` as disjoint intervals of radii.

    Grid bounds default to the QR growth-rate ranges widened by a factor 2.

    Raises
    ------
    CoverageError
        Grid ends do not certify dimensions ``0`` and ``d``.
    ConsistencyError
        Accepted probes give a decreasing dimension sequence.
    """
    opts = opts or SpectrumOptions()
    if overrides:
        opts = SpectrumOptions(**{**asdict(opts), **overrides})
    lin = _linear(sys)
    d = lin.dimension
    a_min, a_max = opts.a_min, opts.a_max
    ranges = None
    if a_min is None or a_max is None:
        ranges = growth_rate_ranges(lin, opts.window)
        a_min = a_min if a_min is not None else math.exp(ranges[:, 0].min()) / 2
        a_max = a_max if a_max is not None else math.exp(ranges[:, 1].max()) * 2
        opts = SpectrumOptions(**{**asdict(opts), "a_min": a_min, "a_max": a_max})
    prober = _Prober(lin, opts)
    grid = [float(a) for a in np.geomspace(a_min, a_max, opts.steps)]
    if opts.threads > 1:
        with ThreadPoolExecutor(opts.threads) as pool:
            results = list(pool.map(prober, grid))
    else:
        results = [prober(a) for a in grid]

    def suggest():
        rr = ranges if ranges is not None else growth_rate_ranges(lin, opts.window)
        return (math.exp(rr[:, 0].min()) / 2, math.exp(rr[:, 1].max()) * 2)

    if not results[0][0] or results[0][1] != 0:
        raise CoverageError(f"lower grid bound {a_min:g} is not below the spectrum", suggest())
    if not results[-1][0] or results[-1][1] != d:
        raise CoverageError(f"upper grid bound {a_max:g} is not above the spectrum", suggest())

    accepted = [(a, dim) for a, (ok, dim) in zip(grid, results) if ok]
    dims = [dim for _, dim in accepted]
    if any(x > y for x, y in zip(dims, dims[1:])):
        raise ConsistencyError(f"stable dimension is not monotone along the grid: {dims}")

    warnings = []
    intervals: list[SpectralInterval] = []
    for (aL, dL), (aR, dR) in zip(accepted, accepted[1:]):
        if dR > dL:
            intervals.extend(prober.refine(aL, dL, aR, dR))
        elif any(not ok for a, (ok, _) in zip(grid, results) if aL < a < aR):
            warnings.append(f"rejected probes between {aL:g} and {aR:g} with equal dimension "
                            f"{dL}; treated as resolvent (near-endpoint unreliability)")
    if sum(iv.bundle_dim for iv in intervals) != d:
        raise ConsistencyError("interval dimensions do not sum to the state dimension")
    for w in warnings:
        log.warning(w)
    probe_log = [(a, ok, dim) for a, (ok, dim) in sorted(prober.memo.items())]
    return SpectrumResult(intervals, d, probe_log, opts, warnings)


# ---------------------------------------------------------------------------
# Gap conditions


@dataclass
class GapReport:
    k: int
    r: int
    one_sided: bool
    gb_main: bool
    gb_contract: list[bool]
    gb_expand: list[bool]
    nr22: bool
    unstable_fd: bool
    margins: dict
    notices: list[str]

    @property
    def all_pass(self) -> bool:
        return self.gb_main and all(self.gb_contract) and all(self.gb_expand)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["all_pass"] = self.all_pass
        out["schema_version"] = SCHEMA_VERSION
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def check_gap_condition(spec: SpectrumResult) -> GapReport:
    """Evaluate the linearization gap inequalities on interval endpoints.

    With ``k`` intervals below 1 and ``r`` in total:

    * ``gb_main``: ``a_{k+1} / b_k > max(b_r, 1 / a_1)``
    * ``gb_contract[i]``: ``b_i / a_i < 1 / b_k`` for ``i <= k``
    * ``gb_expand[j]``: ``b_j / a_j < a_{k+1}`` for ``j > k``
    * ``nr22``: ``b_k b_r < a_{k+1}`` (stable foliation)
    * ``unstable_fd``: ``a_1 a_{k+1} > b_k`` (unstable foliation)

    Comparisons use exact rational arithmetic on the float endpoints.  When
    one side of the unit circle is empty, the inequalities that mention it
    are vacuously true and a notice says so.
    """
    if not spec.hyperbolic:
        raise ValueError("gap conditions need a hyperbolic spectrum (no interval contains 1)")
    ivs = spec.intervals
    k, r = spec.k, spec.r
    A = [Fraction(iv.a) for iv in ivs]
    B = [Fraction(iv.b) for iv in ivs]
    notices = []
    margins = {}
    one_sided = k == 0 or k == r
    contract = [B[i] / A[i] < 1 / B[k - 1] for i in range(k)] if k > 0 else []
    expand = [B[j] / A[j] < A[k] for j in range(k, r)] if k < r else []
    if one_sided:
        notices.append(f"one-sided spectrum (k={k}, r={r}): gb_main, nr22 and unstable_fd "
                       "are vacuous")
        gb_main = nr22 = unstable_fd = True
    else:
        lhs = A[k] / B[k - 1]
        rhs = max(B[r - 1], 1 / A[0])
        gb_main = lhs > rhs
        nr22 = B[k - 1] * B[r - 1] < A[k]
        unstable_fd = A[0] * A[k] > B[k - 1]
        margins = {
            "gb_main": float(lhs - rhs),
            "nr22": float(A[k] - B[k - 1] * B[r - 1]),
            "unstable_fd": float(A[0] * A[k] - B[k - 1]),
        }
    if k > 0:
        margins["gb_contract"] = [float(1 / B[k - 1] - B[i] / A[i]) for i in range(k)]
    if k < r:
        margins["gb_expand"] = [float(A[k] - B[j] / A[j]) for j in range(k, r)]
    return GapReport(k, r, one_sided, gb_main, contract, expand, nr22, unstable_fd,
                     margins, notices)


def choose_rates(spec: SpectrumResult) -> tuple[float, float]:
    """Weights ``(g1, g2)`` with ``b_k < g1 < 1 < g2 < a_{k+1}`` and ``g1 b_r < g2``.

    ``g1`` is the geometric midpoint of ``(b_k, min(1, a_{k+1} / b_r))``;
    ``g2`` the geometric midpoint of ``(max(1, g1 b_r), a_{k+1})``.  For the
    diagonal example this gives ``g1 = sqrt(b_k)`` and lifts ``g2`` above
    ``sqrt(a_{k+1})`` only when needed.
    """
    from .errors import GapConditionError

    k, r = spec.k, spec.r
    if not spec.hyperbolic:
        raise GapConditionError("spectrum contains 1")
    if k == 0:
        raise GapConditionError("no spectrum below 1: stable foliation is trivial")
    b_k = spec.intervals[k - 1].b
    a_k1 = spec.intervals[k].a if k < r else math.inf
    b_r = spec.intervals[r - 1].b
    upper = min(1.0, a_k1 / b_r) if k < r else 1.0
    if not b_k < upper:
        raise GapConditionError(f"b_k b_r < a_(k+1) violated: {b_k} * {b_r} >= {a_k1}")
    g1 = math.sqrt(b_k * upper)
    lo2 = max(1.0, g1 * b_r)
    g2 = math.sqrt(lo2 * a_k1) if k < r else 2.0 * lo2
    return g1, g2
