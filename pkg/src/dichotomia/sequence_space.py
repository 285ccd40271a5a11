"""Finite sections of the sequence-space lift.

Sequences ``x = (x_n)_{|n| <= N}`` stand in for bounded two-sided sequences,
and the shift-type operator ``(A x)_n = A_{n-1} x_{n-1}`` becomes a block
lower-bidiagonal matrix.  Invertibility of ``a Id - A`` on bounded sequences
is equivalent to a dichotomy of ``(A_m / a)``; on a truncation it shows up as
a smallest singular value that plateaus in ``N`` instead of collapsing.

Three boundary rules close the truncation at ``n = -N``:

``zero``
    ``x_{-N-1} = 0`` (square, Dirichlet).  Unstable directions are pinned at
    the left edge, so the margin decays like ``(|A| / a)^{-2N}`` there.
``periodic``
    ``x_{-N-1} = x_N`` (square, wrap-around); the window becomes a cycle and
    the closing step uses ``A_N``.
``free``
    ``x_{-N-1}`` is an extra unknown (rectangular, ``(2N+1) d x (2N+2) d``).
    Neither stable nor unstable directions are pinned, which makes it the
    rule used by the resolvent probe.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .cocycle import LinearSystem, NonautonomousSystem
from .errors import ParameterError

__all__ = [
    "BOUNDARIES",
    "WindowVector",
    "TruncatedOperator",
    "build_truncated",
    "invertibility_margin",
    "resolvent_probe",
    "ProbeResult",
    "apply_F",
    "apply_DF",
    "apply_A",
    "OperatorGapReport",
    "check_operator_gap",
    "read_triplets",
]

BOUNDARIES = ("zero", "periodic", "free")
PLATEAU_RATIO = 0.6
MARGIN_THRESHOLD = 1e-4


def _linear(sys) -> LinearSystem:
    return sys.linear if isinstance(sys, NonautonomousSystem) else sys


@dataclass
class WindowVector:
    """Entries ``x_n`` for ``-N <= n <= N``; ``entries[i]`` is ``x_{i-N}``.

    With a norm family attached the sup-norm uses ``||x_n||_n``.
    """

    entries: np.ndarray
    norm_family: object | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2 or self.entries.shape[0] % 2 == 0:
            raise ParameterError("entries must have shape (2N+1, d)")

    @classmethod
    def zeros(cls, N: int, d: int, norm_family=None) -> "WindowVector":
        return cls(np.zeros((2 * N + 1, d)), norm_family)

    @classmethod
    def random(cls, N: int, d: int, rng, scale: float = 1.0, norm_family=None):
        return cls(rng.uniform(-scale, scale, (2 * N + 1, d)), norm_family)

    @property
    def N(self) -> int:
        return (self.entries.shape[0] - 1) // 2

    @property
    def dimension(self) -> int:
        return self.entries.shape[1]

    def __getitem__(self, n: int) -> np.ndarray:
        return self.entries[int(n) + self.N]

    def local_norms(self) -> np.ndarray:
        if self.norm_family is None:
            return np.linalg.norm(self.entries, axis=1)
        return np.array([self.norm_family.norm(n, x)
                         for n, x in zip(range(-self.N, self.N + 1), self.entries)])

    @property
    def norm_infty(self) -> float:
        return float(self.local_norms().max())

    def like(self, entries) -> "WindowVector":
        return WindowVector(entries, self.norm_family)

    def flat(self) -> np.ndarray:
        return self.entries.ravel()


@dataclass(frozen=True)
class TruncatedOperator:
    """Sparse ``a Id - A`` on the window ``[-N, N]`` (n-major, coordinate-minor)."""

    N: int
    scale: float
    boundary: str
    dimension: int
    matrix: sp.csr_matrix = field(repr=False)

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.dense(), compute_uv=False)

    def write_triplets(self, path) -> None:
        """Text export: a ``# rows cols nnz`` header, then ``i j value`` per entry (0-based)."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for k in order:
                fh.write(f"{int(coo.row[k])} {int(coo.col[k])} {float(coo.data[k])!r}\n")


def read_triplets(path) -> sp.csr_matrix:
    with open(path) as fh:
        head = fh.readline().split()
        rows, cols = int(head[1]), int(head[2])
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((rows, cols))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(rows, cols))


def build_truncated(sys, N: int, a: float, boundary: str = "zero") -> TruncatedOperator:
    """Assemble ``a Id - A`` on ``[-N, N]``.

    Block row ``n`` holds ``a I`` at column ``n`` and ``-A_{n-1}`` at column
    ``n - 1``.  For ``n = -N`` the left neighbour is dropped (``zero``),
    wrapped to column ``N`` with block ``-A_N`` (``periodic``), or kept as an
    extra leading unknown (``free``).  ``a = 0`` gives ``-A`` alone.
    """
    if N < 1:
        raise ParameterError("N must be at least 1")
    if a < 0:
        raise ParameterError("scale must be nonnegative")
    if boundary not in BOUNDARIES:
        raise ParameterError(f"boundary must be one of {BOUNDARIES}")
    lin = _linear(sys)
    d = lin.dimension
    size = 2 * N + 1
    shift = 1 if boundary == "free" else 0     # column offset of x_{-N}
    rows, cols, vals = [], [], []
    eye_r, eye_c = np.divmod(np.arange(d * d), d)
    for i in range(size):
        n = i - N
        if a != 0:
            rows.append(i * d + np.arange(d))
            cols.append((i + shift) * d + np.arange(d))
            vals.append(np.full(d, float(a)))
        src = n - 1
        if i > 0 or boundary == "free":
            j = i - 1 + shift
        elif boundary == "periodic":
            j, src = size - 1, N      # the window closes into a cycle through A_N
        else:
            continue
        rows.append(i * d + eye_r)
        cols.append(j * d + eye_c)
        vals.append(-lin.matrix(src).ravel())
    rows, cols, vals = (np.concatenate(v) for v in (rows, cols, vals))
    shape = (size * d, (size + shift) * d)
    M = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    M.sum_duplicates()
    M.eliminate_zeros()
    return TruncatedOperator(N, float(a), boundary, d, M)


def invertibility_margin(op: TruncatedOperator) -> float:
    """Smallest singular value of the truncated ``a Id - A``."""
    return float(op.singular_values()[-1])


@dataclass(frozen=True)
class ProbeResult:
    scale: float
    sizes: tuple
    margins: tuple
    invertible: bool

    @property
    def plateau_ratio(self) -> float:
        return self.margins[-1] / self.margins[0] if self.margins[0] > 0 else 0.0


def resolvent_probe(sys, a: float, N: int = 200, boundary: str = "free",
                    threshold: float = MARGIN_THRESHOLD,
                    plateau: float = PLATEAU_RATIO) -> ProbeResult:
    """Plateau-vs-collapse test of ``a Id - A``.

    Margins are computed at ``N/2`` and ``N``.  The scale counts as resolvent
    when the margin at ``N`` is at least ``threshold`` and has kept at least
    ``plateau`` of its value at ``N/2``.  At a spectral point the margin
    decays like ``1/N`` and the ratio is about 0.5; in the resolvent it tends
    to 1, though within a few percent of an endpoint it can sit near 0.6.
    """
    sizes = (max(1, N // 2), N)
    margins = tuple(invertibility_margin(build_truncated(sys, n, a, boundary)) for n in sizes)
    ok = margins[-1] >= threshold and margins[-1] >= plateau * margins[0]
    return ProbeResult(float(a), sizes, margins, bool(ok))


# ---------------------------------------------------------------------------
# lifted maps


def _left_neighbours(x: WindowVector, boundary: str) -> tuple[np.ndarray, np.ndarray | None]:
    """``x_{n-1}`` for every window index; ``None`` mask marks zero-extended entries."""
    prev = np.empty_like(x.entries)
    prev[1:] = x.entries[:-1]
    if boundary == "periodic":
        prev[0] = x.entries[-1]
        return prev, None
    if boundary != "zero":
        raise ParameterError("lifted maps support 'zero' and 'periodic' boundaries")
    prev[0] = 0.0
    return prev, np.arange(x.entries.shape[0]) > 0


def apply_A(sys, x: WindowVector, boundary: str = "zero") -> WindowVector:
    """``(A x)_n = A_{n-1} x_{n-1}``."""
    lin = _linear(sys)
    N = x.N
    prev, _ = _left_neighbours(x, boundary)
    mats = lin.matrices(-N - 1, N - 1)
    if boundary == "periodic":
        mats[0] = lin.matrix(N)
    return x.like(np.einsum("nij,nj->ni", mats, prev))


def _source_indices(N: int, boundary: str) -> list[int]:
    src = list(range(-N - 1, N))
    if boundary == "periodic":
        src[0] = N
    return src


def apply_F(sys: NonautonomousSystem, x: WindowVector, boundary: str = "zero") -> WindowVector:
    """``(F x)_n = A_{n-1} x_{n-1} + f_{n-1}(x_{n-1})``.

    Under the ``zero`` rule the missing ``x_{-N-1}`` is 0, and since
    ``f(0) = 0`` the first entry is 0 as well.
    """
    N = x.N
    prev, _ = _left_neighbours(x, boundary)
    out = apply_A(sys, x, boundary).entries
    nl = sys.nonlinear
    if not nl.is_zero:
        for i, k in enumerate(_source_indices(N, boundary)):
            out[i] = out[i] + nl(k, prev[i])
    return x.like(out)


def apply_DF(sys: NonautonomousSystem, x: WindowVector, xi: WindowVector,
             boundary: str = "zero") -> WindowVector:
    """``(DF(x) xi)_n = A_{n-1} xi_{n-1} + Df_{n-1}(x_{n-1}) xi_{n-1}``."""
    N = x.N
    prev_x, _ = _left_neighbours(x, boundary)
    prev_xi, _ = _left_neighbours(xi, boundary)
    out = apply_A(sys, xi, boundary).entries
    nl = sys.nonlinear
    if not nl.is_zero:
        for i, k in enumerate(_source_indices(N, boundary)):
            out[i] = out[i] + nl.jacobian(k, prev_x[i]) @ prev_xi[i]
    return xi.like(out)


@dataclass
class OperatorGapReport:
    samples: int
    measured_gap: float
    bound: float
    constant: float
    eta: float
    at_zero: float

    @property
    def passed(self) -> bool:
        return self.measured_gap <= self.bound * (1 + 1e-12) and self.at_zero == 0.0

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["passed"] = self.passed
        return out


def check_operator_gap(sys: NonautonomousSystem, samples: int = 50, N: int = 20,
                       norm_family=None, radius: float = 2.0, seed: int = 0) -> OperatorGapReport:
    """Sampled ``sup ||(DF(x) - A) xi||_inf / ||xi||_inf`` against ``C eta``.

    ``C`` is the norm family's declared constant (1 in raw norms).  With
    adapted norms the bound needs the nonlinearity to decay at least as fast
    as the certificate's ``eps``.
    """
    rng = np.random.default_rng(seed)
    d = sys.dimension
    C = 1.0 if norm_family is None else float(norm_family.declared_C)
    if norm_family is not None:
        N = min(N, norm_family.window)

    def gap(x, xi):
        diff = apply_DF(sys, x, xi).entries - apply_A(sys, xi).entries
        return xi.like(diff).norm_infty / xi.norm_infty

    worst = 0.0
    for _ in range(samples):
        x = WindowVector.random(N, d, rng, radius, norm_family)
        xi = WindowVector.random(N, d, rng, 1.0, norm_family)
        worst = max(worst, gap(x, xi))
    zero = WindowVector.zeros(N, d, norm_family)
    at_zero = gap(zero, WindowVector.random(N, d, rng, 1.0, norm_family))
    eta = float(sys.nonlinear.eta)
    return OperatorGapReport(samples, worst, C * eta, C, eta, float(at_zero))
