"""Stable foliations, conjugacies and their global extension.

Everything here rests on one computation: the bounded solution of
``u_{n+1} = A_n u_n + g_n`` on a finite index range, written with the
dichotomy projections as

    u_p = sum_{n<p} A(p, n+1) P_{n+1} g_n  -  sum_{n>=p} A(p, n+1) Q_{n+1} g_n.

Both sums are accumulated by recursion (forward for the stable part,
backward for the unstable part) and re-projected after every step, so that
rounding never gets amplified by the opposite growth rate.

* The stable foliation solves the Lyapunov-Perron equation for the
  difference ``q_n`` between two orbits that approach each other, by Picard
  iteration of the pair ``(v, w) -> (T v, S(v, w))`` whose second component
  converges to the derivative of the first.
* The conjugacy ``h_m(v) = v + u_m`` takes ``g_n = -f_n(xi_n)`` along the
  nonlinear orbit through ``(m, v)``; its inverse is the Picard fixed point
  of the same series along the linear orbit.  This Green-kernel route needs
  ``sup_x |f_m(x)|`` finite so that the series converge for every ``v``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cocycle import NonautonomousSystem, nonlinear_orbit, tangent_orbit
from .dichotomy import DichotomyCertificate
from .errors import (
    AssumptionError,
    ContractionError,
    DivergenceError,
    DomainError,
    EscapeError,
    GapConditionError,
    HorizonError,
    RangeError,
)

__all__ = [
    "ConjugacyOptions",
    "FoliationSolveResult",
    "ResidualReport",
    "ConjugacyEvaluator",
    "solve_foliation_point",
    "foliation_fd_error",
    "conjugacy_forward",
    "conjugacy_derivative",
    "conjugacy_inverse",
    "verify_conjugacy",
    "extend_by_fundamental_domains",
    "check_nesting",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_STALL_SWEEPS = 5


@dataclass(frozen=True)
class ConjugacyOptions:
    horizon: int = 60
    picard_tol: float = 1e-13
    max_iters: int = 100
    require_bounded: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")


# ---------------------------------------------------------------------------
# bounded solutions


class _Kernel:
    """Projections and matrices on ``[lo, hi + 1]`` for the Green recursions."""

    def __init__(self, lin, cert: DichotomyCertificate, lo: int, hi: int):
        self.lo, self.hi = lo, hi
        try:
            self.P = np.stack([cert.extended_projection(n) for n in range(lo, hi + 2)])
        except RangeError as exc:
            raise HorizonError(
                f"certificate covers [-{cert.window + cert.pad}, {cert.window + cert.pad}] "
                f"but indices [{lo}, {hi + 1}] are needed; enlarge its window") from exc
        d = self.P.shape[-1]
        self.Q = np.eye(d) - self.P
        self.A = lin.matrices(lo, hi)
        self.Ainv = lin.inverses(lo, hi)

    def sums(self, g):
        """``(s, u)`` on ``p = lo..hi+1`` for forcing ``g[i] = g_{lo+i}``, ``i <= hi - lo``.

        ``s_p = sum_{lo<=n<p} A(p,n+1) P_{n+1} g_n`` and
        ``u_p = sum_{p<=n<=hi} A(p,n+1) Q_{n+1} g_n``.  ``g`` has shape
        ``(L, ..., d)``.
        """
        L = self.hi - self.lo + 1
        s = np.zeros((L + 1,) + g.shape[1:])
        u = np.zeros_like(s)
        for i in range(L):
            s[i + 1] = _mv(self.P[i + 1], _mv(self.A[i], s[i]) + g[i])
        for i in range(L - 1, -1, -1):
            u[i] = _mv(self.Q[i], _mv(self.Ainv[i], _mv(self.Q[i + 1], u[i + 1] + g[i])))
        return s, u


def _mv(M, x):
    return x @ M.T


def _mm(M, N):
    return M @ N


def _g_norm_sum(kernel: _Kernel, p: int) -> float:
    """``sum_{n<p} ||A(p,n+1)P_{n+1}|| + sum_{n>=p} ||A(p,n+1)Q_{n+1}||`` on the range."""
    i = p - kernel.lo
    L = kernel.hi - kernel.lo + 1
    total = 0.0
    X = kernel.P[i]                                        # n = p-1: P_p
    for k in range(i - 1, -1, -1):                         # n = lo + k
        total += np.linalg.norm(X, 2)
        X = X @ kernel.A[k] @ kernel.P[k]
    Y = kernel.Q[i]
    for k in range(i, L):                                  # n = lo + k: A(p, n+1) Q_{n+1}
        Y = Y @ kernel.Ainv[k] @ kernel.Q[k + 1]
        total += np.linalg.norm(Y, 2)
    return float(total)


# ---------------------------------------------------------------------------
# conjugacy


@dataclass
class ResidualReport:
    per_index: dict
    max_residual: float
    max_location: tuple
    tol: float
    tail_bound: float
    contraction_factor: float
    construction: str = "green-kernel"
    assumptions: tuple = ("sup_x |f_m(x)| exp(eps |m+1|) <= M < inf",)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_index"] = {str(k): v for k, v in sorted(self.per_index.items())}
        out["passed"] = self.passed
        out["schema_version"] = SCHEMA_VERSION
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "max_residual"])
        for m in sorted(self.per_index):
            w.writerow([m, repr(float(self.per_index[m]))])
        return buf.getvalue()


class ConjugacyEvaluator:
    """Evaluates ``h_m``, ``Dh_m`` and ``h_m^{-1}`` for one system and certificate.

    Inputs may be batches ``(..., d)``.  ``contraction_factor(m)`` is
    ``eta * sum_n ||G(m, n+1)||``; a value ``>= 1`` means the inverse Picard
    iteration is not guaranteed to contract and is refused.
    """

    def __init__(self, sys: NonautonomousSystem, cert: DichotomyCertificate,
                 opts: ConjugacyOptions | None = None):
        self.sys = sys
        self.cert = cert
        self.opts = opts or ConjugacyOptions()
        nl = sys.nonlinear
        if self.opts.require_bounded and nl.bound is None and not nl.is_zero:
            raise AssumptionError("the Green-kernel conjugacy needs a bounded nonlinearity")
        if cert.scale != 1.0:
            raise ValueError("conjugacy needs a certificate at scale 1")
        self._kernels: dict[tuple[int, int], _Kernel] = {}
        self.last_picard: list[float] = []

    @property
    def dimension(self):
        return self.sys.dimension

    def kernel(self, lo: int, hi: int) -> _Kernel:
        key = (lo, hi)
        k = self._kernels.get(key)
        if k is None:
            k = self._kernels[key] = _Kernel(self.sys.linear, self.cert, lo, hi)
        return k

    def _window(self, m):
        T = self.opts.horizon
        return m - T, m + T

    def contraction_factor(self, m: int = 0) -> float:
        lo, hi = self._window(m)
        return float(self.sys.nonlinear.eta) * _g_norm_sum(self.kernel(lo, hi), m)

    def tail_bound(self) -> float:
        c = self.cert
        M = self.sys.nonlinear.bound or 0.0
        lam = c.lam
        return c.D * math.exp(-lam * (self.opts.horizon + 1)) * M / (1.0 - math.exp(-lam))

    def _orbit(self, m, v):
        lo, hi = self._window(m)
        try:
            return nonlinear_orbit(self.sys, m, v, lo, hi), lo, hi
        except DivergenceError as exc:
            raise HorizonError(f"orbit through index {m} left the representable range") from exc

    def _forcing(self, orbit, lo):
        nl = self.sys.nonlinear
        return np.stack([nl(lo + i, orbit[i]) for i in range(orbit.shape[0])])

    def forward(self, m: int, v):
        """``h_m(v) = v - sum_{n<m} G P f_n(xi_n) + sum_{n>=m} G Q f_n(xi_n)``."""
        m = int(m)
        v = np.asarray(v, dtype=float)
        if self.sys.nonlinear.is_zero:
            return v.copy()
        orbit, lo, hi = self._orbit(m, v)
        s, u = self.kernel(lo, hi).sums(self._forcing(orbit, lo))
        out = v - s[m - lo] + u[m - lo]
        return np.where(np.all(v == 0, axis=-1, keepdims=True), 0.0, out)

    def derivative(self, m: int, v):
        """``Dh_m(v)``: the series differentiated along the tangent orbit."""
        m = int(m)
        v = np.asarray(v, dtype=float)
        d = self.dimension
        eye = np.broadcast_to(np.eye(d), v.shape + (d,)).copy()
        if self.sys.nonlinear.is_zero:
            return eye
        orbit, lo, hi = self._orbit(m, v)
        tan = tangent_orbit(self.sys, orbit, m, lo)              # (L, ..., d, d)
        nl = self.sys.nonlinear
        g = np.stack([nl.jacobian(lo + i, orbit[i]) @ tan[i] for i in range(orbit.shape[0])])
        g = np.swapaxes(g, -1, -2)                               # columns become batch rows
        s, u = self.kernel(lo, hi).sums(g)
        out = eye + np.swapaxes(-s[m - lo] + u[m - lo], -1, -2)
        zero = np.all(v == 0, axis=-1)[..., None, None]
        return np.where(zero, np.eye(d), out)

    def inverse(self, m: int, w):
        """``h_m^{-1}(w) = w + g_m`` with ``g`` the Picard fixed point along ``A(p, m) w``."""
        m = int(m)
        w = np.asarray(w, dtype=float)
        if self.sys.nonlinear.is_zero:
            return w.copy()
        kappa = self.contraction_factor(m)
        if kappa >= 1.0:
            raise ContractionError(
                f"a-priori contraction factor eta * sum ||G|| = {kappa:.3g} >= 1; "
                "nonlinearity too large for this spectral gap", ratio=kappa)
        lo, hi = self._window(m)
        ker = self.kernel(lo, hi)
        lin = self.sys.linear
        nl = self.sys.nonlinear
        L = hi - lo + 1
        z = np.empty((L,) + w.shape)
        z[m - lo] = w
        for p in range(m, hi):
            z[p + 1 - lo] = _mv(lin.matrix(p), z[p - lo])
        for p in range(m - 1, lo - 1, -1):
            z[p - lo] = _mv(lin.inverse(p), z[p + 1 - lo])
        if not np.all(np.isfinite(z)):
            raise HorizonError("linear orbit overflowed; reduce the horizon")
        gseq = np.zeros_like(z)
        history = []
        stalls = 0
        for _ in range(self.opts.max_iters):
            forcing = np.stack([nl(lo + i, z[i] + gseq[i]) for i in range(L)])
            s, u = ker.sums(forcing)
            new = s[:L] - u[:L]
            delta = float(np.max(np.abs(new - gseq), initial=0.0))
            gseq = new
            history.append(delta)
            if delta <= self.opts.picard_tol:
                break
            if len(history) > 1 and delta >= history[-2]:
                stalls += 1
                if stalls >= _STALL_SWEEPS:
                    raise ContractionError("Picard updates stopped decreasing",
                                           ratio=delta / history[-2])
            else:
                stalls = 0
        else:
            raise ContractionError(f"no convergence in {self.opts.max_iters} sweeps",
                                   ratio=_ratio(history))
        self.last_picard = history
        out = w + gseq[m - lo]
        return np.where(np.all(w == 0, axis=-1, keepdims=True), 0.0, out)

    def residual(self, m: int, x):
        """``|h_{m+1}(F_m(x)) - A_m h_m(x)|`` for a batch of points."""
        x = np.asarray(x, dtype=float)
        lhs = self.forward(m + 1, self.sys.step(m, x))
        rhs = _mv(self.sys.linear.matrix(m), self.forward(m, x))
        return np.linalg.norm(lhs - rhs, axis=-1)


def _ratio(history):
    if len(history) < 3:
        return None
    h = np.asarray(history[1:])
    h = h[h > 0]
    if h.size < 2:
        return 0.0
    return float(np.exp(np.mean(np.diff(np.log(h)))))


def conjugacy_forward(sys, cert, m, v, opts=None):
    return ConjugacyEvaluator(sys, cert, opts).forward(m, v)


def conjugacy_derivative(sys, cert, m, v, opts=None):
    return ConjugacyEvaluator(sys, cert, opts).derivative(m, v)


def conjugacy_inverse(sys, cert, m, w, opts=None):
    return ConjugacyEvaluator(sys, cert, opts).inverse(m, w)


def verify_conjugacy(sys, cert, m_range, grid, tol: float = 1e-6, opts=None,
                     evaluator: ConjugacyEvaluator | None = None) -> ResidualReport:
    """Tabulate the conjugacy residual over ``m in m_range`` and grid points."""
    ev = evaluator or ConjugacyEvaluator(sys, cert, opts)
    grid = np.asarray(grid, dtype=float)
    per = {}
    worst, where = -1.0, (None, None)
    for m in m_range:
        r = ev.residual(int(m), grid)
        i = int(np.argmax(r))
        per[int(m)] = float(r[i])
        if r[i] > worst:
            worst, where = float(r[i]), (int(m), [float(t) for t in grid[i]])
    kappa = max(ev.contraction_factor(int(m)) for m in m_range)
    return ResidualReport(per, worst, where, tol, ev.tail_bound(), kappa)


# ---------------------------------------------------------------------------
# stable foliation


@dataclass
class FoliationSolveResult:
    x: np.ndarray
    y_minus: np.ndarray
    q: np.ndarray            # (T+1, d)
    w: np.ndarray            # (T+1, d, 2d): [d/dx | d/dy]
    gamma1: float
    gamma2: float
    iterations: int
    residual: float
    updates: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.q.shape[0] - 1

    def weighted_norms(self) -> np.ndarray:
        n = np.arange(self.q.shape[0])
        return np.linalg.norm(self.q, axis=1) * self.gamma1 ** (-n)

    @property
    def weighted_sup(self) -> float:
        return float(self.weighted_norms().max())

    @property
    def contraction_ratio(self):
        return _ratio(self.updates)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["n", "norm_q", "weighted_norm_q"])
        for n, (a, b) in enumerate(zip(np.linalg.norm(self.q, axis=1), self.weighted_norms())):
            wr.writerow([n, repr(float(a)), repr(float(b))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "x": self.x.tolist(), "y_minus": self.y_minus.tolist(),
            "gamma1": self.gamma1, "gamma2": self.gamma2,
            "iterations": self.iterations, "residual": self.residual,
            "weighted_sup": self.weighted_sup, "contraction_ratio": self.contraction_ratio,
        }


def _foliation_step(sys, ker, base, xi, Xi, v, w, T):
    """One application of ``(v, w) -> (T v, S(v, w))``."""
    nl = sys.nonlinear
    z = xi + v
    g = np.stack([nl(k, z[k]) - nl(k, xi[k]) for k in range(T + 1)])
    s, u = ker.sums(g)
    v_new = base[0] + s[:T + 1] - u[:T + 1]
    d = xi.shape[1]
    Jz = np.stack([nl.jacobian(k, z[k]) for k in range(T + 1)])
    Jx = np.stack([nl.jacobian(k, xi[k]) for k in range(T + 1)])
    DF = np.concatenate([Xi, np.zeros_like(Xi)], axis=-1)          # d xi_k / d(x, y)
    dg = Jz @ (w + DF) - Jx @ DF                                   # (T+1, d, 2d)
    ds, du = ker.sums(np.swapaxes(dg, -1, -2))
    w_new = base[1] + np.swapaxes(ds[:T + 1] - du[:T + 1], -1, -2)
    return v_new, w_new


def solve_foliation_point(sys: NonautonomousSystem, cert: DichotomyCertificate, x, y_minus,
                          gamma1: float, gamma2: float, opts: ConjugacyOptions | None = None,
                          ) -> FoliationSolveResult:
    """Leaf of the stable foliation through ``x`` with stable coordinate ``y_minus``.

    Solves for ``q_n = z_n - xi_n`` (``xi`` the orbit of ``x`` from time 0,
    ``z`` the orbit with ``P_0 z_0 = y_minus``) the Lyapunov-Perron equation

        q_n = A(n,0) P_0 (y_minus - x) + sum_{k<n} A(n,k+1) P_{k+1} g_k
                                       - sum_{k=n}^{T} A(n,k+1) Q_{k+1} g_k,

    ``g_k = f_k(xi_k + q_k) - f_k(xi_k)``, jointly with the derivative
    ``w_n = d q_n / d(x, y_minus)``.  Convergence is measured in the
    ``gamma1``-weighted sup norm (``gamma2``-weighted for ``w``).
    """
    opts = opts or ConjugacyOptions()
    if not (0 < gamma1 < 1 < gamma2):
        raise GapConditionError(f"need 0 < gamma1 < 1 < gamma2, got {gamma1}, {gamma2}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y_minus, dtype=float)
    d = sys.dimension
    T = opts.horizon
    ker = _Kernel(sys.linear, cert, 0, T)
    P0 = ker.P[0]
    try:
        xi = nonlinear_orbit(sys, 0, x, 0, T)
    except DivergenceError as exc:
        raise HorizonError("base orbit overflowed within the horizon") from exc
    Xi = tangent_orbit(sys, xi, 0, 0)
    # first term A(n,0) P_0 (y - x), propagated with re-projection
    lead = np.empty((T + 1, d, d))
    lead[0] = P0
    for n in range(T):
        lead[n + 1] = ker.P[n + 1] @ ker.A[n] @ lead[n]
    base_v = lead @ (y - x)
    base_w = np.concatenate([-lead, lead], axis=-1)
    weights = gamma1 ** (-np.arange(T + 1))
    wweights = gamma2 ** (-np.arange(T + 1))

    def wnorm(a):
        return float(np.max(np.linalg.norm(a, axis=1) * weights))

    def wnorm_w(a):
        return float(np.max(np.linalg.norm(a, ord=2, axis=(1, 2)) * wweights))

    v = np.zeros((T + 1, d))
    w = np.zeros((T + 1, d, 2 * d))
    updates = []
    stalls = 0
    it = 0
    for it in range(1, opts.max_iters + 1):
        v_new, w_new = _foliation_step(sys, ker, (base_v, base_w), xi, Xi, v, w, T)
        if not (np.all(np.isfinite(v_new)) and np.all(np.isfinite(w_new))):
            raise ContractionError("foliation iterates overflowed")
        delta = max(wnorm(v_new - v), wnorm_w(w_new - w))
        v, w = v_new, w_new
        updates.append(delta)
        if delta <= opts.picard_tol:
            break
        if len(updates) > 1 and delta >= updates[-2]:
            stalls += 1
            if stalls >= _STALL_SWEEPS:
                raise ContractionError("foliation iteration does not contract; the spectral "
                                       "gap or the size of the nonlinearity is violated",
                                       ratio=delta / updates[-2])
        else:
            stalls = 0
    else:
        raise ContractionError(f"no convergence in {opts.max_iters} sweeps", ratio=_ratio(updates))
    Tv, _ = _foliation_step(sys, ker, (base_v, base_w), xi, Xi, v, w, T)
    residual = wnorm(Tv - v)
    return FoliationSolveResult(x, y, v, w, float(gamma1), float(gamma2), it, residual, updates)


def foliation_fd_error(sys, cert, result: FoliationSolveResult, h: float = 1e-6,
                       opts: ConjugacyOptions | None = None) -> float:
    """Largest ``gamma2``-weighted relative gap between ``w`` and central differences of ``q``."""
    opts = opts or ConjugacyOptions(horizon=result.horizon)
    d = result.x.size
    fd = np.empty_like(result.w)
    for j in range(2 * d):
        e = np.zeros(2 * d)
        e[j] = h
        plus = solve_foliation_point(sys, cert, result.x + e[:d], result.y_minus + e[d:],
                                     result.gamma1, result.gamma2, opts)
        minus = solve_foliation_point(sys, cert, result.x - e[:d], result.y_minus - e[d:],
                                      result.gamma1, result.gamma2, opts)
        fd[..., j] = (plus.q - minus.q) / (2 * h)
    wts = result.gamma2 ** (-np.arange(result.q.shape[0]))
    err = np.linalg.norm(fd - result.w, ord=2, axis=(1, 2)) * wts
    scale = np.max(np.linalg.norm(result.w, ord=2, axis=(1, 2)) * wts)
    return float(err.max() / max(scale, 1e-300))


# ---------------------------------------------------------------------------
# global extension


def check_nesting(F_inv, radius: float, dimension: int, samples: int = 64) -> float:
    """Largest ``|F^{-1}(b)| / radius`` over boundary samples ``|b| = radius``.

    ``U_0`` lies inside ``F(U_0)`` exactly when this is below 1.
    """
    if dimension == 1:
        pts = np.array([[-radius], [radius]])
    else:
        rng = np.random.default_rng(0)
        g = rng.standard_normal((samples, dimension))
        pts = radius * g / np.linalg.norm(g, axis=1, keepdims=True)
    back = np.array([np.atleast_1d(F_inv(p)) for p in pts])
    return float(np.max(np.linalg.norm(back, axis=1)) / radius)


def extend_by_fundamental_domains(psi, F_inv, A_plus, x, radius: float,
                                  max_steps: int = 200, check: bool = True):
    """Global extension ``A_+^j psi(F_+^{-j} x)`` with the least ``j`` landing in ``U_0``.

    ``U_0`` is the closed ball of the given radius.  ``psi`` is a local
    conjugacy on ``U_0`` (``psi(F x) = A_+ psi(x)`` whenever both sides are
    defined); the result conjugates ``F_+`` to ``A_+`` wherever evaluated.

    Returns ``(value, j)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    A = np.atleast_2d(np.asarray(A_plus, dtype=float))
    if check:
        ratio = check_nesting(F_inv, radius, x.size)
        if not ratio < 1.0:
            raise DomainError(f"U_0 is not inside F(U_0): boundary pulls back to {ratio:.3g} r")
    y = x
    for j in range(max_steps + 1):
        if np.linalg.norm(y) <= radius:
            val = np.atleast_1d(psi(y))
            return np.linalg.matrix_power(A, j) @ val, j
        y = np.atleast_1d(F_inv(y))
        if not np.all(np.isfinite(y)):
            break
    raise EscapeError(f"point did not reach U_0 within {max_steps} backward steps")
