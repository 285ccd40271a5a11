"""Nonautonomous linear cocycles, their perturbations, and orbits.

A :class:`LinearSystem` produces the invertible matrices ``A_m`` for every
integer ``m`` and the two-sided propagator

    A(m, n) = A_{m-1} ... A_n        (m > n)
    A(m, m) = Id
    A(m, n) = A_m^{-1} ... A_{n-1}^{-1}   (m < n)

A :class:`Nonlinearity` supplies the perturbation ``f_m`` with ``f_m(0) = 0``
and ``Df_m(0) = 0``.  Together they define the map ``F_m = A_m + f_m``.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DivergenceError,
    InvertibilityError,
    ParameterError,
    PropagatorRangeError,
)

__all__ = [
    "LinearSystem",
    "Nonlinearity",
    "ZeroNonlinearity",
    "SaturatingNonlinearity",
    "CallableNonlinearity",
    "NonautonomousSystem",
    "propagator",
    "nonlinear_orbit",
    "make_example",
    "oscillation",
    "MAX_DIRECT_LAG",
]

# Longest product formed by plain repeated multiplication.
MAX_DIRECT_LAG = 400

_SINGULAR_RCOND = 1e-14


def oscillation(m):
    """``(m+1)(-1)^{m+1} - m(-1)^m``, the exponent increment of the nonuniform family."""
    m = np.asarray(m)
    sign = np.where(m % 2 == 0, 1.0, -1.0)
    return -(2 * m + 1) * sign


class LinearSystem:
    """Deterministic generator of invertible ``d x d`` matrices indexed by ``Z``.

    Use the classmethod constructors rather than ``__init__`` directly.  The
    ``extension`` attribute documents how indices outside a tabulated window
    are handled (``None`` for generators defined on all of ``Z``).
    """

    def __init__(self, dimension: int, matrix_fn: Callable[[int], np.ndarray], kind: str,
                 params: dict | None = None, extension: str | None = None):
        if dimension < 1:
            raise ParameterError("dimension must be positive")
        self.dimension = int(dimension)
        self.kind = kind
        self.params = dict(params or {})
        self.extension = extension
        self._matrix_fn = matrix_fn
        self._mats: dict[int, np.ndarray] = {}
        self._invs: dict[int, np.ndarray] = {}
        self._cache: dict[tuple[int, int], np.ndarray] = {}
        self._window_cache: dict[tuple[int, int, int], tuple] = {}
        self._lock = threading.RLock()

    # -- constructors ---------------------------------------------------
    @classmethod
    def constant(cls, matrix) -> "LinearSystem":
        M = np.array(matrix, dtype=float, ndmin=2)
        _check_square(M)
        return cls(M.shape[0], lambda m: M, "constant", {"matrix": M.tolist()})

    @classmethod
    def periodic(cls, matrices: Sequence) -> "LinearSystem":
        mats = [np.array(M, dtype=float, ndmin=2) for M in matrices]
        if not mats:
            raise ParameterError("periodic generator needs at least one matrix")
        for M in mats:
            _check_square(M)
            if M.shape != mats[0].shape:
                raise ParameterError("periodic matrices must share a shape")
        p = len(mats)
        return cls(mats[0].shape[0], lambda m: mats[m % p], "periodic",
                   {"matrices": [M.tolist() for M in mats]})

    @classmethod
    def diagonal_exponential(cls, log_rates: Sequence[float],
                             epsilons: Sequence[float] | float = 0.0) -> "LinearSystem":
        """``A_m = diag(exp(c_i + e_i * ((m+1)(-1)^{m+1} - m(-1)^m)))``.

        Telescoping gives ``A(m, n)_ii = exp(c_i (m-n) + e_i (m(-1)^m - n(-1)^n))``.
        """
        c = np.atleast_1d(np.asarray(log_rates, dtype=float))
        e = np.broadcast_to(np.asarray(epsilons, dtype=float), c.shape).copy()

        def gen(m):
            return np.diag(np.exp(c + e * float(oscillation(m))))

        return cls(c.size, gen, "diagonal-exponential",
                   {"log_rates": c.tolist(), "epsilons": e.tolist()})

    @classmethod
    def tabulated(cls, matrices: Sequence, start: int = 0,
                  extension: str = "wrap") -> "LinearSystem":
        """Matrices given for ``start <= m < start + len(matrices)``.

        Outside the table ``extension='wrap'`` repeats it periodically and
        ``extension='freeze'`` holds the nearest endpoint matrix.
        """
        mats = [np.array(M, dtype=float, ndmin=2) for M in matrices]
        if not mats:
            raise ParameterError("tabulated generator needs at least one matrix")
        for M in mats:
            _check_square(M)
        L = len(mats)
        if extension == "wrap":
            def gen(m):
                return mats[(m - start) % L]
        elif extension == "freeze":
            def gen(m):
                return mats[min(max(m - start, 0), L - 1)]
        else:
            raise ParameterError(f"unknown extension rule {extension!r}")
        return cls(mats[0].shape[0], gen, "tabulated",
                   {"matrices": [M.tolist() for M in mats], "start": start},
                   extension=extension)

    @classmethod
    def random_hyperbolic(cls, base: Sequence[float], noise: float = 0.05,
                          seed: int = 0) -> "LinearSystem":
        """``A_m = diag(base) + noise * R_m`` with ``R_m`` standard normal,
        seeded by ``(seed, m)`` so each index is reproducible on its own."""
        b = np.asarray(base, dtype=float)
        d = b.size

        def gen(m):
            ss = np.random.SeedSequence([int(seed), int(m) + 2**31])
            R = np.random.default_rng(ss).standard_normal((d, d))
            return np.diag(b) + noise * R

        return cls(d, gen, "random", {"base": b.tolist(), "noise": noise, "seed": int(seed)})

    # -- matrices -------------------------------------------------------
    def matrix(self, m: int) -> np.ndarray:
        m = int(m)
        M = self._mats.get(m)
        if M is None:
            M = np.array(self._matrix_fn(m), dtype=float)
            M.setflags(write=False)
            self._mats[m] = M
        return M

    def inverse(self, m: int) -> np.ndarray:
        m = int(m)
        Minv = self._invs.get(m)
        if Minv is None:
            M = self.matrix(m)
            s = np.linalg.svd(M, compute_uv=False)
            if s[-1] <= _SINGULAR_RCOND * max(s[0], 1e-300):
                raise InvertibilityError(m)
            Minv = np.linalg.inv(M)
            Minv.setflags(write=False)
            self._invs[m] = Minv
        return Minv

    def matrices(self, lo: int, hi: int) -> np.ndarray:
        """Stack of ``A_m`` for ``lo <= m <= hi``."""
        return np.stack([self.matrix(m) for m in range(lo, hi + 1)])

    def inverses(self, lo: int, hi: int) -> np.ndarray:
        return np.stack([self.inverse(m) for m in range(lo, hi + 1)])

    def invertibility_margin(self, lo: int, hi: int) -> float:
        """Smallest ``|det A_m|`` over ``lo <= m <= hi``."""
        return float(min(abs(np.linalg.det(self.matrix(m))) for m in range(lo, hi + 1)))

    # -- propagator -----------------------------------------------------
    def propagator(self, m: int, n: int) -> np.ndarray:
        m, n = int(m), int(n)
        if abs(m - n) > MAX_DIRECT_LAG:
            raise PropagatorRangeError(
                f"|m - n| = {abs(m - n)} exceeds {MAX_DIRECT_LAG}; use QR accumulation")
        key = (m, n)
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                return cached
        P = self._compute_propagator(m, n)
        P.setflags(write=False)
        with self._lock:
            self._cache.setdefault(key, P)
            return self._cache[key]

    def _compute_propagator(self, m, n):
        d = self.dimension
        P = np.eye(d)
        if m > n:
            for k in range(n, m):
                P = self.matrix(k) @ P
        elif m < n:
            for k in range(n - 1, m - 1, -1):
                P = self.inverse(k) @ P
        return P

    @property
    def propagator_cache(self) -> dict:
        """The live cache, exposed for inspection and fault injection in tests."""
        return self._cache

    def clear_cache(self):
        with self._lock:
            self._cache.clear()
            self._window_cache.clear()

    def transport(self, m: int, lo: int, hi: int) -> np.ndarray:
        """Stack ``T[k - lo] = A(k, m)`` for ``lo <= k <= hi`` (uncached).

        Requires ``lo <= m <= hi``.
        """
        if not lo <= m <= hi:
            raise ValueError("transport window must contain m")
        d = self.dimension
        out = np.empty((hi - lo + 1, d, d))
        out[m - lo] = np.eye(d)
        for k in range(m, hi):
            out[k + 1 - lo] = self.matrix(k) @ out[k - lo]
        for k in range(m, lo, -1):
            out[k - 1 - lo] = self.inverse(k - 1) @ out[k - lo]
        return out

    def window_products(self, lo: int, hi: int, horizon: int):
        """Forward and backward products for base indices ``lo..hi``.

        Returns ``(fwd, bwd)`` of shape ``(horizon + 1, hi - lo + 1, d, d)``
        with ``fwd[j, i] = A(n + j, n)`` and ``bwd[j, i] = A(n - j, n)`` for
        ``n = lo + i``.
        """
        key = (lo, hi, horizon)
        with self._lock:
            hit = self._window_cache.get(key)
        if hit is not None:
            return hit
        d = self.dimension
        count = hi - lo + 1
        A = self.matrices(lo - horizon, hi + horizon)
        Ainv = self.inverses(lo - horizon, hi + horizon)
        off = horizon  # A[off + (n - lo)] is A_n
        fwd = np.empty((horizon + 1, count, d, d))
        bwd = np.empty((horizon + 1, count, d, d))
        fwd[0] = np.eye(d)
        bwd[0] = np.eye(d)
        base = np.arange(count)
        for j in range(1, horizon + 1):
            # A(n+j, n) = A_{n+j-1} A(n+j-1, n)
            fwd[j] = A[off + base + j - 1] @ fwd[j - 1]
            # A(n-j, n) = A_{n-j}^{-1} A(n-j+1, n)
            bwd[j] = Ainv[off + base - j] @ bwd[j - 1]
        fwd.setflags(write=False)
        bwd.setflags(write=False)
        with self._lock:
            self._window_cache[key] = (fwd, bwd)
        return fwd, bwd

    def describe(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension, "params": self.params,
                "extension": self.extension or "none (defined on all of Z)"}

    def __repr__(self):
        return f"LinearSystem(kind={self.kind!r}, d={self.dimension})"


def _check_square(M):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {M.shape}")


def propagator(sys, m: int, n: int) -> np.ndarray:
    """``A(m, n)`` for a :class:`LinearSystem` or :class:`NonautonomousSystem`."""
    lin = sys.linear if isinstance(sys, NonautonomousSystem) else sys
    return lin.propagator(m, n)


# ---------------------------------------------------------------------------
# Nonlinearities.  All evaluations broadcast over leading axes of ``x``.


class Nonlinearity:
    """Perturbation sequence ``f_m`` with its declared constants.

    Attributes
    ----------
    B : Lipschitz constant of ``Df_{m-1}`` after removing ``exp(-eps |m|)``.
    eta : bound on ``||Df_{m-1}(x)|| exp(eps |m|)``.
    epsilon : nonuniform decay rate.
    bound : ``sup_x ||f_{m-1}(x)|| exp(eps |m|)`` or ``None`` if unbounded.
    """

    kind = "abstract"
    B = 0.0
    eta = 0.0
    epsilon = 0.0
    bound: float | None = None

    def __init__(self, dimension: int):
        self.dimension = int(dimension)

    def __call__(self, m, x):
        raise NotImplementedError

    def jacobian(self, m, x):
        raise NotImplementedError

    @property
    def is_zero(self) -> bool:
        return False

    def describe(self) -> dict:
        return {"kind": self.kind, "B": self.B, "eta": self.eta,
                "epsilon": self.epsilon, "bound": self.bound}


class ZeroNonlinearity(Nonlinearity):
    kind = "none"
    bound = 0.0

    def __call__(self, m, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def jacobian(self, m, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.dimension,))

    @property
    def is_zero(self):
        return True


class SaturatingNonlinearity(Nonlinearity):
    """``f_m(v) = amplitude * exp(-eps |m+1|) * (tanh(v_1)^2, ..., tanh(v_d)^2)``.

    The scalar profile ``g = tanh^2`` has ``sup |g'| = 4 / (3 sqrt 3)`` and
    ``sup |g''| = 2``, which fixes ``eta`` and ``B``.
    """

    kind = "tanh2"
    G1 = 4.0 / (3.0 * math.sqrt(3.0))
    G2 = 2.0

    def __init__(self, dimension: int, amplitude: float, epsilon: float = 0.0):
        super().__init__(dimension)
        if amplitude < 0 or epsilon < 0:
            raise ParameterError("amplitude and epsilon must be nonnegative")
        self.amplitude = float(amplitude)
        self.epsilon = float(epsilon)
        self.eta = self.amplitude * self.G1
        self.B = self.amplitude * self.G2
        self.bound = self.amplitude * math.sqrt(dimension)

    def _scale(self, m):
        return self.amplitude * math.exp(-self.epsilon * abs(int(m) + 1))

    def __call__(self, m, x):
        return self._scale(m) * np.tanh(np.asarray(x, dtype=float)) ** 2

    def jacobian(self, m, x):
        t = np.tanh(np.asarray(x, dtype=float))
        diag = self._scale(m) * 2.0 * t * (1.0 - t * t)
        return diag[..., :, None] * np.eye(self.dimension)

    @property
    def is_zero(self):
        return self.amplitude == 0.0

    def describe(self):
        out = super().describe()
        out["amplitude"] = self.amplitude
        return out


class CallableNonlinearity(Nonlinearity):
    """Wraps user callables ``f(m, x)`` and ``df(m, x)`` with declared constants."""

    kind = "callable"

    def __init__(self, dimension, f, df, *, B, eta, epsilon=0.0, bound=None):
        super().__init__(dimension)
        self._f, self._df = f, df
        self.B, self.eta, self.epsilon, self.bound = float(B), float(eta), float(epsilon), bound

    def __call__(self, m, x):
        return np.asarray(self._f(m, np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, m, x):
        return np.asarray(self._df(m, np.asarray(x, dtype=float)), dtype=float)


@dataclass
class NonautonomousSystem:
    """``x_{m+1} = A_m x_m + f_m(x_m)``."""

    linear: LinearSystem
    nonlinear: Nonlinearity = field(default=None)
    backward_tol: float = 1e-12
    backward_maxiter: int = 200

    def __post_init__(self):
        if self.nonlinear is None:
            self.nonlinear = ZeroNonlinearity(self.linear.dimension)
        if self.nonlinear.dimension != self.linear.dimension:
            raise ParameterError("linear and nonlinear parts disagree on dimension")

    @property
    def dimension(self):
        return self.linear.dimension

    def step(self, m, x):
        """``F_m(x)``; ``x`` may carry leading batch axes."""
        x = np.asarray(x, dtype=float)
        return x @ self.linear.matrix(m).T + self.nonlinear(m, x)

    def step_jacobian(self, m, x):
        x = np.asarray(x, dtype=float)
        return self.linear.matrix(m) + self.nonlinear.jacobian(m, x)

    def inverse_step(self, m, y):
        """Solve ``F_m(x) = y`` by iterating ``x <- A_m^{-1} (y - f_m(x))``."""
        y = np.asarray(y, dtype=float)
        Ainv = self.linear.inverse(m)
        x = y @ Ainv.T
        if self.nonlinear.is_zero:
            return x
        prev = None
        for _ in range(self.backward_maxiter):
            x_new = (y - self.nonlinear(m, x)) @ Ainv.T
            delta = np.max(np.abs(x_new - x) / (1.0 + np.abs(x_new)), initial=0.0)
            x = x_new
            if delta <= self.backward_tol:
                return x
            if not np.isfinite(delta) or (prev is not None and delta > 10 * prev and delta > 1):
                break
            prev = delta
        raise InvertibilityError(
            m, f"backward step at index {m} did not contract (F_m not invertible by "
               f"fixed-point iteration)")


def nonlinear_orbit(sys: NonautonomousSystem, m: int, x, n_lo: int, n_hi: int) -> np.ndarray:
    """Orbit of ``F`` through ``(m, x)`` on ``n_lo <= n <= n_hi``.

    Returns an array whose row ``i`` is ``xi_{n_lo + i}``; ``x`` may be a
    batch of points of shape ``(..., d)``.
    """
    if not n_lo <= m <= n_hi:
        raise ValueError("need n_lo <= m <= n_hi")
    x = np.asarray(x, dtype=float)
    out = np.empty((n_hi - n_lo + 1,) + x.shape)
    out[m - n_lo] = x
    for n in range(m, n_hi):
        nxt = sys.step(n, out[n - n_lo])
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(n)
        out[n + 1 - n_lo] = nxt
    for n in range(m - 1, n_lo - 1, -1):
        prv = sys.inverse_step(n, out[n + 1 - n_lo])
        if not np.all(np.isfinite(prv)):
            raise DivergenceError(n + 1)
        out[n - n_lo] = prv
    return out


def tangent_orbit(sys: NonautonomousSystem, orbit: np.ndarray, m: int, n_lo: int) -> np.ndarray:
    """Derivatives ``d xi_n / d xi_m`` along an orbit from :func:`nonlinear_orbit`.

    Output has shape ``orbit.shape + (d,)``.
    """
    d = sys.dimension
    count = orbit.shape[0]
    batch = orbit.shape[1:-1]
    out = np.empty(orbit.shape + (d,))
    out[m - n_lo] = np.broadcast_to(np.eye(d), batch + (d, d))
    for i in range(m - n_lo, count - 1):
        n = n_lo + i
        out[i + 1] = sys.step_jacobian(n, orbit[i]) @ out[i]
    for i in range(m - n_lo, 0, -1):
        n = n_lo + i - 1
        out[i - 1] = np.linalg.solve(sys.step_jacobian(n, orbit[i - 1]), out[i])
    return out


# ---------------------------------------------------------------------------

EXAMPLE_KINDS = ("constant", "periodic", "nonuniform-scalar", "random")


def make_example(kind: str, params: dict | None = None) -> NonautonomousSystem:
    """Factory for the canonical test families.

    ``params`` keys per kind:

    * ``constant``: ``matrix`` or ``diag``
    * ``periodic``: ``matrices``
    * ``nonuniform-scalar``: ``lam``, ``eps``, optional ``dimension``
    * ``random``: ``base``, ``noise``, ``seed``

    Any kind accepts ``eta`` (tanh^2 amplitude) and ``nl_epsilon`` to attach
    the saturating nonlinearity.
    """
    p = dict(params or {})
    if kind == "constant":
        M = p.get("matrix")
        if M is None:
            M = np.diag(p["diag"])
        lin = LinearSystem.constant(M)
    elif kind == "periodic":
        lin = LinearSystem.periodic(p["matrices"])
    elif kind == "nonuniform-scalar":
        lam, eps = float(p["lam"]), float(p["eps"])
        if lam <= eps:
            raise ParameterError(f"need lam > eps (got lam={lam}, eps={eps})")
        dim = int(p.get("dimension", 1))
        lin = LinearSystem.diagonal_exponential([-lam] * dim, [eps] * dim)
    elif kind == "random":
        lin = LinearSystem.random_hyperbolic(p.get("base", [0.5, 3.0]),
                                             p.get("noise", 0.05), p.get("seed", 0))
    else:
        raise ParameterError(f"unknown example kind {kind!r}; expected one of {EXAMPLE_KINDS}")
    eta = p.get("eta")
    if eta:
        nl = SaturatingNonlinearity(lin.dimension, eta, p.get("nl_epsilon", 0.0))
    else:
        nl = ZeroNonlinearity(lin.dimension)
    return NonautonomousSystem(lin, nl)
