"""Sparse symmetric linear algebra: CSR storage, Jacobi-preconditioned CG,
dense Cholesky and Schur-complement solves for bordered systems."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DENSE_CAP = 2000


class SolverError(RuntimeError):
    pass


class NotSPDError(SolverError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


@dataclass
class CSRMatrix:
    """Square matrix in compressed sparse row form.

    Column indices are sorted and unique within each row.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n: int
    symmetric: bool = False
    _rows: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_coo(cls, rows, cols, vals, n, symmetric=False) -> "CSRMatrix":
        """Sum duplicate entries in a fixed order, so assembly is bit-stable."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            new = np.empty(len(rows), dtype=bool)
            new[0] = True
            new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(new)
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(np.cumsum(indptr), cols, vals, n, symmetric)

    @classmethod
    def identity(cls, n) -> "CSRMatrix":
        i = np.arange(n)
        return cls(np.arange(n + 1), i, np.ones(n), n, True)

    @classmethod
    def from_dense(cls, a, symmetric=False) -> "CSRMatrix":
        a = np.asarray(a, dtype=float)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape[0], symmetric)

    @property
    def row_of_entry(self) -> np.ndarray:
        if self._rows is None:
            self._rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return self._rows

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        prod = self.data * x[self.indices]
        return np.bincount(self.row_of_entry, weights=prod, minlength=self.n)

    __matmul__ = matvec

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.n)
        mask = self.indices == self.row_of_entry
        d[self.row_of_entry[mask]] = self.data[mask]
        return d

    def toarray(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.row_of_entry, self.indices] = self.data
        return a

    def submatrix(self, rows: np.ndarray, cols: np.ndarray) -> "RectCSR":
        rmap = np.full(self.n, -1, dtype=np.int64)
        rmap[rows] = np.arange(len(rows))
        cmap = np.full(self.n, -1, dtype=np.int64)
        cmap[cols] = np.arange(len(cols))
        r = rmap[self.row_of_entry]
        c = cmap[self.indices]
        keep = (r >= 0) & (c >= 0)
        return RectCSR(r[keep], c[keep], self.data[keep], (len(rows), len(cols)))

    def principal(self, idx: np.ndarray) -> "CSRMatrix":
        sub = self.submatrix(idx, idx)
        return CSRMatrix.from_coo(sub.rows, sub.cols, sub.vals, len(idx), self.symmetric)

    def is_symmetric(self, tol=1e-13, samples=None, rng=None) -> bool:
        rows, cols = self.row_of_entry, self.indices
        if samples is not None and samples < len(rows):
            rng = np.random.default_rng(rng)
            pick = rng.choice(len(rows), samples, replace=False)
        else:
            pick = np.arange(len(rows))
        scale = np.abs(self.data).max(initial=0.0)
        for k in pick:
            i, j = rows[k], cols[k]
            lo, hi = self.indptr[j], self.indptr[j + 1]
            pos = lo + np.searchsorted(self.indices[lo:hi], i)
            other = self.data[pos] if pos < hi and self.indices[pos] == i else 0.0
            if abs(other - self.data[k]) > tol * max(scale, 1.0):
                return False
        return True


@dataclass
class RectCSR:
    """Minimal rectangular sparse block in coordinate form."""

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    shape: tuple[int, int]

    def matvec(self, x):
        return np.bincount(self.rows, weights=self.vals * x[self.cols], minlength=self.shape[0])

    def rmatvec(self, y):
        return np.bincount(self.cols, weights=self.vals * y[self.rows], minlength=self.shape[1])

    __matmul__ = matvec


def _as_operator(a):
    if isinstance(a, (CSRMatrix, RectCSR)):
        return a.matvec
    if callable(a):
        return a
    a = np.asarray(a)
    return lambda x: a @ x


def cg_solve(A, b, rel_tol=1e-10, max_iter=None, preconditioner="jacobi", x0=None, info=None):
    """Preconditioned conjugate gradients for SPD ``A``.

    Stops when ||b - A x|| <= rel_tol * ||b||. ``info``, if a dict, receives
    the iteration count and the achieved relative residual.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = 10 * max(n, 1)
    matvec = _as_operator(A)
    if preconditioner == "jacobi":
        diag = A.diagonal() if isinstance(A, CSRMatrix) else np.diag(np.asarray(A))
        if np.any(diag <= 0):
            raise NotSPDError("matrix not SPD: non-positive diagonal entry")
        minv = 1.0 / diag
    elif preconditioner in (None, "none"):
        minv = None
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")

    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        if info is not None:
            info.update(iterations=0, residual=0.0)
        return np.zeros(n)
    r = b - matvec(x) if x0 is not None else b.copy()
    z = r * minv if minv is not None else r
    p = z.copy()
    rz = r @ z
    it = 0
    res = np.linalg.norm(r) / bnorm
    while res > rel_tol:
        if it >= max_iter:
            raise ConvergenceError(f"CG did not converge in {max_iter} iterations (relative residual {res:.3e})", res)
        ap = matvec(p)
        pap = p @ ap
        if not np.isfinite(pap):
            raise SolverError("non-finite value encountered in CG")
        if pap <= 0:
            raise NotSPDError("matrix not SPD: non-positive curvature in CG")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        it += 1
        # recompute the true residual occasionally against drift
        if it % 200 == 0:
            r = b - matvec(x)
        res = np.linalg.norm(r) / bnorm
        z = r * minv if minv is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if info is not None:
        info.update(iterations=it, residual=res)
    return x


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = m; raises NotSPDError on a bad pivot."""
    m = np.array(m, dtype=float)
    n = m.shape[0]
    if n > DENSE_CAP:
        raise ValueError(f"dense factorization capped at dimension {DENSE_CAP}")
    L = np.zeros_like(m)
    for j in range(n):
        piv = m[j, j] - L[j, :j] @ L[j, :j]
        if not piv > 0:
            raise NotSPDError("matrix not SPD")
        L[j, j] = np.sqrt(piv)
        L[j + 1 :, j] = (m[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def cholesky_solve(L: np.ndarray, r: np.ndarray) -> np.ndarray:
    from scipy.linalg import solve_triangular

    y = solve_triangular(L, r, lower=True)
    return solve_triangular(L.T, y, lower=False)


def dense_spd_solve(M, r) -> np.ndarray:
    return cholesky_solve(cholesky(M), np.asarray(r, dtype=float))


@dataclass
class BorderedSystem:
    """[[A, B], [B^T, D]] [x; alpha] = [b; g] with A sparse SPD and few columns in B."""

    A: CSRMatrix
    B: np.ndarray
    D: np.ndarray
    b: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float).reshape(self.A.n, -1)
        m = self.B.shape[1]
        self.D = np.asarray(self.D, dtype=float).reshape(m, m)
        self.g = np.asarray(self.g, dtype=float).reshape(m)

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def residual(self, x, alpha) -> float:
        r1 = self.b - self.A.matvec(x) - self.B @ alpha
        r2 = self.g - self.B.T @ x - self.D @ alpha
        rhs = np.sqrt(self.b @ self.b + self.g @ self.g)
        return float(np.sqrt(r1 @ r1 + r2 @ r2) / (rhs if rhs > 0 else 1.0))


@dataclass
class BorderedResult:
    x: np.ndarray
    alpha: np.ndarray
    redundant: list[bool]
    residual: float
    schur: np.ndarray


class BaseSolver:
    """Caches A^{-1} b and A^{-1} B_j between enrichment steps."""

    def __init__(self, A: CSRMatrix, rel_tol=1e-10, max_iter=None):
        self.A = A
        self.rel_tol = rel_tol
        self.max_iter = max_iter
        self.iterations = 0

    def solve(self, r):
        info = {}
        x = cg_solve(self.A, r, self.rel_tol, self.max_iter, info=info)
        self.iterations += info.get("iterations", 0)
        return x


def bordered_solve(system: BorderedSystem, rel_tol=1e-10, solver: BaseSolver | None = None,
                   cache: dict | None = None, schur_eps=1e-10) -> BorderedResult:
    """Solve a bordered SPD system through its Schur complement.

    Columns whose Schur pivot falls below ``schur_eps * trace(D)/m`` lie
    (numerically) in the range of the base block; they are flagged redundant
    and their amplitude is fixed at zero.
    """
    solver = solver or BaseSolver(system.A, rel_tol)
    cache = {} if cache is None else cache
    A, B, D = system.A, system.B, system.D
    m = system.m
    key = ("base", system.b.tobytes())
    if key not in cache:
        cache[key] = solver.solve(system.b)
    x0 = cache[key]
    if m == 0:
        return BorderedResult(x0.copy(), np.zeros(0), [], system.residual(x0, np.zeros(0)), np.zeros((0, 0)))

    Y = np.empty_like(B)
    for j in range(m):
        ck = ("col", B[:, j].tobytes())
        if ck not in cache:
            cache[ck] = solver.solve(B[:, j])
        Y[:, j] = cache[ck]
    AY = np.column_stack([A.matvec(Y[:, j]) for j in range(m)])
    # second-order accurate in the CG error, unlike D - B^T Y
    S = D - B.T @ Y - Y.T @ B + Y.T @ AY
    S = 0.5 * (S + S.T)

    eps = schur_eps * max(np.trace(D) / m, 0.0)
    keep, redundant = [], [False] * m
    for j in range(m):
        trial = keep + [j]
        try:
            L = cholesky(S[np.ix_(trial, trial)])
        except NotSPDError:
            redundant[j] = True
            continue
        if L[-1, -1] ** 2 < eps:
            redundant[j] = True
            continue
        keep = trial
    alpha = np.zeros(m)
    if keep:
        rhs = system.g - B.T @ x0
        alpha[keep] = dense_spd_solve(S[np.ix_(keep, keep)], rhs[keep])
    x = x0 - Y @ alpha
    res = system.residual(x, alpha)
    if res > rel_tol and keep:
        # one step of iterative refinement on the kept block
        kept = BorderedSystem(A, B[:, keep], D[np.ix_(keep, keep)], system.b, system.g[keep])
        r1 = kept.b - A.matvec(x) - kept.B @ alpha[keep]
        r2 = kept.g - kept.B.T @ x - kept.D @ alpha[keep]
        dx0 = solver.solve(r1) if np.any(r1) else np.zeros_like(r1)
        dal = dense_spd_solve(S[np.ix_(keep, keep)], r2 - kept.B.T @ dx0)
        x = x + dx0 - Y[:, keep] @ dal
        alpha[keep] += dal
        res = system.residual(x, alpha)
    if all(redundant):
        log.info("all %d enrichment columns are redundant; returning the base solution", m)
    return BorderedResult(x, alpha, redundant, res, S)


def dense_bordered_solve(system: BorderedSystem):
    """Reference solve of the full (n+m) system; small problems only."""
    n, m = system.A.n, system.m
    K = np.zeros((n + m, n + m))
    K[:n, :n] = system.A.toarray()
    K[:n, n:] = system.B
    K[n:, :n] = system.B.T
    K[n:, n:] = system.D
    sol = np.linalg.solve(K, np.concatenate([system.b, system.g]))
    return sol[:n], sol[n:]
