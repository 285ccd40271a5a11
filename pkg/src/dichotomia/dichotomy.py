"""Scaled strong exponential dichotomies on a finite window.

The splitting at scale ``a`` comes from QR-stabilized subspace iteration of
the cocycle and its inverse over a horizon ``T``.  Constants are then fitted
to the four growth families

    stable-forward     ||A(m,n) P_n||  a^{-(m-n)} <= D exp(-lam (m-n) + eps |n|)
    unstable-forward   ||A(m,n) Q_n||  a^{-(m-n)} <= D exp( mu (m-n) + eps |n|)
    unstable-backward  ||A(n,m) Q_m||  a^{ (m-n)} <= D exp(-lam (m-n) + eps |m|)
    stable-backward    ||A(n,m) P_m||  a^{ (m-n)} <= D exp( mu (m-n) + eps |m|)

for ``m >= n`` inside the window.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cocycle import LinearSystem, NonautonomousSystem
from .errors import (
    AmbiguousSplittingError,
    DiagnosticsError,
    DichotomyRejected,
    RangeError,
)

__all__ = [
    "DichotomyCertificate",
    "AdaptedNormFamily",
    "NormFamilyReport",
    "estimate_projections",
    "test_scaled_dichotomy",
    "adapted_norm",
    "verify_norm_family",
    "scaled_system",
    "uniform_dichotomy_constants",
    "FAMILIES",
]

DEFAULT_HORIZON = 40
DEFAULT_NORM_HORIZON = 60
# an averaged log growth rate this close to log a counts as on the spectrum
SPLIT_RESOLUTION = 1e-6
_MAX_SPLIT_COND = 1e12
_FRAME_SEED = 20240917

FAMILIES = ("stable-forward", "unstable-forward", "unstable-backward", "stable-backward")


def _linear(sys) -> LinearSystem:
    return sys.linear if isinstance(sys, NonautonomousSystem) else sys


def scaled_system(sys, a: float) -> LinearSystem:
    """The sequence ``(A_m / a)`` as a new :class:`LinearSystem`."""
    lin = _linear(sys)
    return LinearSystem(lin.dimension, lambda m: lin.matrix(m) / a, f"{lin.kind}/scaled",
                        dict(lin.params, scale=a), lin.extension)


def _norm2(M):
    """Spectral norm over the last two axes (closed forms for 1x1 and 2x2)."""
    if M.shape[-2:] == (1, 1):
        return np.abs(M[..., 0, 0])
    if M.shape[-2:] == (2, 2):
        fro2 = np.einsum("...ij,...ij->...", M, M)
        det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
        disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
        return np.sqrt(0.5 * (fro2 + disc))
    return np.linalg.norm(M, ord=2, axis=(-2, -1))


def _flag_iteration(mats: np.ndarray, steps: int, burn: int, count: int) -> tuple:
    """QR-stabilized subspace iteration, batched over ``count`` base points.

    ``mats[i + s]`` is the matrix applied at step ``s`` for base point ``i``.
    Returns the final orthonormal frames and the per-column log growth
    averaged over the last ``steps`` steps (the first ``burn`` steps only
    align the frame).
    """
    d = mats.shape[-1]
    q0, _ = np.linalg.qr(np.random.default_rng(_FRAME_SEED).standard_normal((d, d)))
    Q = np.broadcast_to(q0, (count, d, d)).copy()
    acc = np.zeros((count, d))
    total = steps + burn
    for s in range(total):
        Q, r = _gram_schmidt(mats[s:s + count] @ Q)
        if s >= burn:
            acc += np.log(r)
    return Q, acc / steps


def _gram_schmidt(X):
    """Batched modified Gram-Schmidt with one re-orthogonalization pass.

    Returns ``Q`` and the diagonal of ``R`` (column norms after projection).
    Each step multiplies an orthonormal frame by one matrix, so the input is
    only as ill-conditioned as a single ``A_m`` and MGS is accurate enough;
    for small ``d`` it is several times faster than batched LAPACK QR.
    """
    Q = X.copy()
    d = X.shape[-1]
    r = np.empty(X.shape[:-2] + (d,))
    for i in range(d):
        v = Q[..., :, i]
        for _ in range(2):
            for j in range(i):
                qj = Q[..., :, j]
                v = v - np.sum(qj * v, axis=-1, keepdims=True) * qj
        nrm = np.linalg.norm(v, axis=-1)
        r[..., i] = nrm
        Q[..., :, i] = v / nrm[..., None]
    return Q, r


def _splitting(lin: LinearSystem, a: float, window: int, horizon: int):
    """Projections on ``-window..window`` plus the smallest split margin.

    The stable subspace at ``n`` is the dominant flag of the inverse cocycle
    pulled back from ``n + T + B`` to ``n``; the unstable one is the dominant
    flag of the cocycle pushed from ``n - T - B`` to ``n``.  Growth rates are
    averaged over the final ``T`` steps once the frame has aligned.
    """
    if a <= 0:
        raise ValueError("scale must be positive")
    d = lin.dimension
    T = horizon
    B = horizon
    W = window
    count = 2 * W + 1
    la = math.log(a)
    # pulled back: step s uses A^{-1}_{n + T + B - 1 - s}
    inv = lin.inverses(-W, W + T + B - 1)[::-1]
    # first base point in the reversed stack is n = W
    Qs, rs = _flag_iteration(inv, T, B, count)
    Qs, rs = Qs[::-1], rs[::-1]
    fwd = lin.matrices(-W - T - B, W - 1)
    Qu, ru = _flag_iteration(fwd, T, B, count)
    gf = -rs - la      # forward exponent of stable-candidate columns, scaled
    gb = ru - la       # forward exponent of unstable-candidate columns, scaled
    margin = float(min(np.min(np.abs(gf)), np.min(np.abs(gb))))
    if margin < SPLIT_RESOLUTION:
        raise AmbiguousSplittingError(
            f"growth-rate gap at the split is {margin:.2e} (< {SPLIT_RESOLUTION}); "
            f"scale {a} is likely inside the spectrum")
    stable_mask = gf < 0
    unstable_mask = gb > 0
    k_stable = stable_mask.sum(axis=1)
    k_unstable = unstable_mask.sum(axis=1)
    ks = np.unique(k_stable)
    if ks.size != 1:
        i = int(np.argmax(k_stable != k_stable[0]))
        raise AmbiguousSplittingError(
            f"stable dimension varies over the window (first change at n = {i - window})")
    if np.any(k_stable + k_unstable != d):
        i = int(np.argmax(k_stable + k_unstable != d))
        raise AmbiguousSplittingError(
            f"stable and unstable dimensions do not add up to {d} at n = {i - window}")
    k = int(ks[0])
    if not (np.all(stable_mask[:, :k]) and np.all(unstable_mask[:, :d - k])):
        raise AmbiguousSplittingError("growth-rate flag did not order; horizon too short")
    if k == 0:
        P = np.zeros((count, d, d))
    elif k == d:
        P = np.broadcast_to(np.eye(d), (count, d, d)).copy()
    else:
        M = np.concatenate([Qs[:, :, :k], Qu[:, :, :d - k]], axis=-1)
        cond = np.linalg.cond(M)
        if np.any(cond > _MAX_SPLIT_COND):
            raise AmbiguousSplittingError("stable and unstable subspaces nearly coincide")
        E = np.zeros((d, d))
        E[:k, :k] = np.eye(k)
        P = M @ E @ np.linalg.inv(M)
    return P, k, margin


def estimate_projections(sys, a: float = 1.0, window: int = 50,
                         horizon: int = DEFAULT_HORIZON) -> np.ndarray:
    """Dichotomy projections ``P_n`` for ``(A_m / a)``, ``-window <= n <= window``.

    ``Range(P_n)`` is the subspace whose averaged growth under ``A_m / a``
    is negative, ``Null(P_n)`` the one that grows, both obtained by
    QR-stabilized subspace iteration over ``T`` steps after a burn-in.  Row ``i`` of the result is ``P_{i - window}``.

    Raises
    ------
    AmbiguousSplittingError
        If a scaled growth rate sits within resolution of zero, or the
        two subspaces are not complementary with constant dimension.
    """
    P, _, _ = _splitting(_linear(sys), a, window, horizon)
    return P


@dataclass
class DichotomyCertificate:
    """Fitted nonuniform dichotomy of ``(A_m / scale)`` on ``[-window, window]``."""

    scale: float
    window: int
    horizon: int
    projections: np.ndarray
    D: float
    lam: float
    mu: float
    eps: float
    stable_dim: int
    split_margin: float
    residuals: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)
    system: LinearSystem | None = field(default=None, repr=False, compare=False)
    # projections on the window widened by ``pad``, for transport beyond its edge
    extended: np.ndarray | None = field(default=None, repr=False, compare=False)
    pad: int = 0

    def extended_projection(self, n: int) -> np.ndarray:
        if self.extended is None:
            return self.projection(n)
        i = int(n) + self.window + self.pad
        if not 0 <= i < self.extended.shape[0]:
            raise RangeError(f"index {n} outside the padded window")
        return self.extended[i]

    @property
    def dimension(self) -> int:
        return self.projections.shape[-1]

    def _index(self, n):
        n = int(n)
        if abs(n) > self.window:
            raise RangeError(f"index {n} outside certificate window [-{self.window}, {self.window}]")
        return n + self.window

    def projection(self, n: int) -> np.ndarray:
        return self.projections[self._index(n)]

    def complement(self, n: int) -> np.ndarray:
        return np.eye(self.dimension) - self.projections[self._index(n)]

    def covers(self, lo: int, hi: int) -> bool:
        return -self.window <= lo and hi <= self.window

    def to_dict(self, include_projections: bool = False) -> dict:
        out = {
            "scale": self.scale,
            "window": self.window,
            "horizon": self.horizon,
            "constants": {"D": self.D, "lambda": self.lam, "mu": self.mu, "epsilon": self.eps},
            "stable_dim": self.stable_dim,
            "split_margin": self.split_margin,
            "rates": self.rates,
            "residuals": self.residuals,
        }
        if include_projections:
            out["projections"] = self.projections.tolist()
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2, sort_keys=True)

    def write_projections_csv(self, path):
        """One row per window index: ``n, P[0,0], P[0,1], ...`` (row-major)."""
        d = self.dimension
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n"] + [f"P{i}{j}" for i in range(d) for j in range(d)])
            for i, P in enumerate(self.projections):
                w.writerow([i - self.window] + [repr(float(v)) for v in P.ravel()])


def _projected_walk(lin, Pext, ext_lo, lo, hi, steps, forward, stable):
    """``Pi_{n+-j} A(n+-j, n) Pi_n`` for ``lo <= n <= hi`` and ``0 <= j <= steps``.

    ``Pi`` is ``P`` (stable) or ``I - P``; ``Pext[i]`` is ``P_{ext_lo + i}``.
    Projecting after every step stops rounding in the complementary
    direction from being amplified, which a plain product would do.
    """
    d = Pext.shape[-1]
    Pi = Pext if stable else np.eye(d) - Pext
    count = hi - lo + 1
    out = np.empty((steps + 1, count, d, d))
    X = Pi[lo - ext_lo: hi - ext_lo + 1].copy()
    out[0] = X
    if forward:
        M_all = lin.matrices(lo, hi + steps - 1)        # index i <-> A_{lo + i}
    else:
        M_all = lin.inverses(lo - steps, hi - 1)        # index i <-> A^{-1}_{lo - steps + i}
    for j in range(1, steps + 1):
        if forward:
            M = M_all[j - 1: j - 1 + count]
            tgt = Pi[lo + j - ext_lo: hi + j - ext_lo + 1]
        else:
            M = M_all[steps - j: steps - j + count]
            tgt = Pi[lo - j - ext_lo: hi - j - ext_lo + 1]
        X = tgt @ (M @ X)
        out[j] = X
    return out


def _growth_families(lin, a, Pext, window, pad, horizon):
    """Log-norms of the four families, each of shape ``(horizon, 2*window+1)``.

    Row ``j-1`` holds lag ``j``; column ``i`` the base index ``i - window``
    (the earlier time for forward families, the later one for backward).
    """
    j = np.arange(1, horizon + 1)[:, None]
    la = math.log(a)
    lo = -window - pad
    W = window

    def walk(forward, stable):
        X = _projected_walk(lin, Pext, lo, -W, W, horizon, forward, stable)
        return np.log(_norm2(X[1:]))

    with np.errstate(divide="ignore"):
        out = {
            "stable-forward": walk(True, True) - j * la,
            "unstable-forward": walk(True, False) - j * la,
            "unstable-backward": walk(False, False) + j * la,
            "stable-backward": walk(False, True) + j * la,
        }
    return out


def _pair(family, j, i, window):
    base, j = int(i) - window, int(j)
    if family.endswith("forward"):
        return (base + j, base)
    return (base, base - j)


def test_scaled_dichotomy(sys, a: float = 1.0, window: int = 50, tol: float = 0.01,
                          horizon: int = DEFAULT_HORIZON) -> DichotomyCertificate:
    """Certify a nonuniform strong dichotomy for ``(A_m / a)`` on the window.

    Rates come from least-squares slopes of the worst log-growth over base
    indices near the origin (``|n| <= max(2, window // 100)``), so a
    nonuniform loss ``eps |n|`` does not contaminate them.  ``eps`` is the
    slope of the residual envelope against ``|n|`` and ``D`` closes the
    envelope.  The four inequalities are then re-checked with multiplicative
    slack ``tol``.

    Raises
    ------
    DichotomyRejected
        ``reason="spectral"`` when no splitting exists, ``reason="growth"``
        when a contracting family shows no decay.
    DiagnosticsError
        Window or horizon too small to fit slopes.
    """
    lin = _linear(sys)
    if window < 2 or horizon < 3:
        raise DiagnosticsError("need window >= 2 and horizon >= 3 to fit slopes")
    pad = max(horizon, DEFAULT_NORM_HORIZON)
    try:
        Pext, k, margin = _splitting(lin, a, window + pad, horizon)
    except AmbiguousSplittingError as exc:
        raise DichotomyRejected("spectral", detail=str(exc)) from exc
    P = Pext[pad:-pad]
    d = lin.dimension
    logs = _growth_families(lin, a, Pext, window, pad, horizon)
    active = {
        "stable-forward": k > 0, "stable-backward": k > 0,
        "unstable-forward": k < d, "unstable-backward": k < d,
    }
    lags = np.arange(1, horizon + 1, dtype=float)
    absn = np.abs(np.arange(-window, window + 1))
    band = absn <= max(2, window // 100)

    slopes = {}
    for fam, L in logs.items():
        if active[fam]:
            worst = L[:, band].max(axis=1)
            slopes[fam] = float(np.polyfit(lags, worst, 1)[0])
    contracting = {f: -s for f, s in slopes.items() if f in ("stable-forward", "unstable-backward")}
    lam = min(contracting.values())
    if lam <= 0:
        fam = min(contracting, key=contracting.get)
        j, i = np.unravel_index(np.argmax(logs[fam] + lam * lags[:, None]), logs[fam].shape)
        raise DichotomyRejected("growth", fam, _pair(fam, j + 1, i, window),
                                f"fitted decay rate {lam:.3g} is not positive")
    growing = [s for f, s in slopes.items() if f in ("unstable-forward", "stable-backward")]
    mu = max([lam] + growing)

    env = np.full(absn.max() + 1, -np.inf)
    resid = {}
    for fam, L in logs.items():
        if not active[fam]:
            continue
        rate = -lam if fam in ("stable-forward", "unstable-backward") else mu
        r = L - rate * lags[:, None]
        resid[fam] = r
        np.maximum.at(env, absn, r.max(axis=0))
    idx = np.arange(env.size, dtype=float)
    eps = max(0.0, float(np.polyfit(idx, env, 1)[0]))
    lnD = float(np.max(env - eps * idx))
    D = math.exp(lnD)

    residuals = {}
    for fam in FAMILIES:
        if fam not in resid:
            residuals[fam] = {"active": False}
            continue
        ratio = np.exp(resid[fam] - lnD - eps * absn[None, :])
        j, i = np.unravel_index(np.argmax(ratio), ratio.shape)
        worst = float(ratio[j, i])
        if worst > 1.0 + tol:
            raise DichotomyRejected("growth", fam, _pair(fam, j + 1, i, window),
                                    f"envelope violated by factor {worst:.4g}")
        residuals[fam] = {"active": True, "worst_ratio": worst,
                          "at": list(_pair(fam, j + 1, i, window))}

    return DichotomyCertificate(
        scale=float(a), window=window, horizon=horizon, projections=P, D=D, lam=lam,
        mu=mu, eps=eps, stable_dim=k, split_margin=margin, residuals=residuals,
        rates={f: s for f, s in slopes.items()}, system=lin, extended=Pext, pad=pad)


test_scaled_dichotomy.__test__ = False  # keep pytest from collecting the import


class AdaptedNormFamily:
    """Norms ``||x||_m`` that make the certified dichotomy uniform.

    ``||x||_m`` is the sum of four truncated suprema (horizon ``K``)::

        sup_{m<=k<=m+K} e^{ lam (k-m)} |B(k,m) P_m x|
      + sup_{m-K<=k<=m} e^{-mu  (m-k)} |B(k,m) P_m x|
      + sup_{m-K<=k<=m} e^{ lam (m-k)} |B(k,m) Q_m x|
      + sup_{m<=k<=m+K} e^{-mu  (k-m)} |B(k,m) Q_m x|

    where ``B(k, m) = A(k, m) / a^{k-m}`` is the scaled propagator.  A
    positive ``delta`` replaces the weights by ``lam - delta`` and
    ``mu + delta`` so that each supremum decays along the lag and the
    truncation at ``K`` costs at most ``exp(-delta K)``.

    Shifting ``m -> m+1`` moves each pair of suprema by ``e^mu`` but the
    pairs can feed each other, hence the declared constant
    ``C = max(4 D, 2 e^mu)`` (plus 1% slack).
    """

    def __init__(self, certificate: DichotomyCertificate, system=None,
                 horizon: int = DEFAULT_NORM_HORIZON, delta: float = 0.0):
        self.certificate = certificate
        self.delta = min(float(delta), certificate.lam / 2)
        self.lam_w = certificate.lam - self.delta
        self.mu_w = certificate.mu + self.delta
        lin = system if system is not None else certificate.system
        if lin is None:
            raise ValueError("certificate carries no system; pass one explicitly")
        self.system = _linear(lin)
        self.horizon = int(horizon)
        self._terms: dict[int, tuple] = {}
        self.measured_C: float | None = None
        self.measured_eps: float | None = None

    @property
    def window(self):
        return self.certificate.window

    @property
    def declared_C(self) -> float:
        c = self.certificate
        return max(4.0 * c.D, 2.0 * math.exp(self.mu_w)) * 1.01

    @property
    def declared_eps(self) -> float:
        return self.certificate.eps

    def _stack(self, m):
        hit = self._terms.get(m)
        if hit is not None:
            return hit
        c = self.certificate
        K = min(self.horizon, c.pad) if c.extended is not None else self.horizon
        Pext = c.extended if c.extended is not None else c.projections
        ext_lo = -c.window - c.pad
        lag = np.arange(0, K + 1)
        scale_f = (c.scale ** -lag)[:, None, None]
        scale_b = (c.scale ** lag)[:, None, None]

        def walk(forward, stable):
            X = _projected_walk(self.system, Pext, ext_lo, m, m, K, forward, stable)[:, 0]
            return X * (scale_f if forward else scale_b)

        lam, mu = self.lam_w, self.mu_w
        groups = (
            np.exp(lam * lag)[:, None, None] * walk(True, True),
            np.exp(-mu * lag)[:, None, None] * walk(False, True),
            np.exp(lam * lag)[:, None, None] * walk(False, False),
            np.exp(-mu * lag)[:, None, None] * walk(True, False),
        )
        self._terms[m] = groups
        return groups

    def norm(self, m: int, x):
        """``||x||_m``; ``x`` may be a batch ``(..., d)``."""
        m = int(m)
        if abs(m) > self.window:
            raise RangeError(f"index {m} outside window [-{self.window}, {self.window}]")
        x = np.asarray(x, dtype=float)
        total = 0.0
        for G in self._stack(m):
            v = np.einsum("kij,...j->...ki", G, x)
            total = total + np.linalg.norm(v, axis=-1).max(axis=-1)
        return total

    __call__ = norm


def adapted_norm(fam: AdaptedNormFamily, m: int, x) -> float:
    return fam.norm(m, x)


@dataclass
class NormFamilyReport:
    samples: int
    measured_C: float
    measured_eps: float
    min_lower_ratio: float
    worst_ln1_upper: float
    worst_ln2: float
    declared_C: float
    declared_eps: float
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def verify_norm_family(fam: AdaptedNormFamily, samples: int = 1000, seed: int = 0) -> NormFamilyReport:
    """Sample both norm-equivalence properties on random ``(m, x)``.

    ``measured_eps`` is the least-squares slope, against ``|m|``, of the
    running maximum of ``log max ||x||_m / ||x||``; ``measured_C`` is the smallest
    constant realizing both properties with that ``eps``.  The pass flag
    checks every sample against the declared constants.
    """
    c = fam.certificate
    rng = np.random.default_rng(seed)
    N = fam.window
    ms = rng.integers(-N, N, size=samples)      # m + 1 must stay in the window
    xs = rng.standard_normal((samples, c.dimension))
    lower = np.empty(samples)
    ln2 = np.empty(samples)
    for i, (m, x) in enumerate(zip(ms, xs)):
        nm = fam.norm(m, x)
        y = fam.system.matrix(m) @ x / c.scale
        nm1 = fam.norm(m + 1, y)
        lower[i] = nm / np.linalg.norm(x)
        ln2[i] = max(nm1 / nm, nm / nm1)
    absm = np.abs(ms)
    env = {}
    for am, r in zip(absm, lower):
        env[am] = max(env.get(am, 0.0), r)
    keys = np.array(sorted(env), dtype=float)
    vals = np.maximum.accumulate(np.log([env[k] for k in sorted(env)]))
    eps_meas = max(0.0, float(np.polyfit(keys, vals, 1)[0])) if keys.size > 1 else 0.0
    C1 = float(np.max(lower * np.exp(-eps_meas * absm)))
    C2 = float(np.max(ln2))
    fam.measured_C = max(1.0, C1, C2)
    fam.measured_eps = eps_meas
    ln1_upper = float(np.max(lower / (fam.declared_C * np.exp(c.eps * absm))))
    passed = bool(np.min(lower) >= 1.0 - 1e-12
                  and ln1_upper <= 1.0
                  and C2 <= fam.declared_C)
    return NormFamilyReport(
        samples=samples, measured_C=fam.measured_C, measured_eps=eps_meas,
        min_lower_ratio=float(np.min(lower)), worst_ln1_upper=ln1_upper, worst_ln2=C2,
        declared_C=fam.declared_C, declared_eps=fam.declared_eps, passed=passed)


def uniform_dichotomy_constants(fam: AdaptedNormFamily, samples: int = 200, max_lag: int = 20,
                                seed: int = 0) -> dict:
    """Fitted ``D`` per family of the dichotomy measured in the adapted norms with ``eps = 0``.

    Each value is the largest ratio of the left side to
    ``exp(-lam (m-n)) ||x||_n`` (or ``exp(mu (m-n))`` for the growth families),
    with the norm family's weight rates.
    """
    c = fam.certificate
    lam, mu = fam.lam_w, fam.mu_w
    rng = np.random.default_rng(seed)
    N = fam.window
    d = c.dimension
    out = {f: 0.0 for f in FAMILIES}
    for _ in range(samples):
        lag = int(rng.integers(0, max_lag + 1))
        n = int(rng.integers(-N, N - lag + 1))
        m = n + lag
        x = rng.standard_normal(d)
        fw = fam.system.propagator(m, n) / c.scale ** lag
        bw = fam.system.propagator(n, m) * c.scale ** lag
        Pn, Pm = c.projection(n), c.projection(m)
        Qn, Qm = np.eye(d) - Pn, np.eye(d) - Pm
        xn, xm = fam.norm(n, x), fam.norm(m, x)
        vals = {
            "stable-forward": fam.norm(m, fw @ Pn @ x) / (math.exp(-lam * lag) * xn),
            "unstable-forward": fam.norm(m, fw @ Qn @ x) / (math.exp(mu * lag) * xn),
            "unstable-backward": fam.norm(n, bw @ Qm @ x) / (math.exp(-lam * lag) * xm),
            "stable-backward": fam.norm(n, bw @ Pm @ x) / (math.exp(mu * lag) * xm),
        }
        for f, v in vals.items():
            out[f] = max(out[f], float(v))
    return out
