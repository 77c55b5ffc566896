"""Weak Galerkin discretization on polygonal meshes.

A weak function is a pair {v0, vb}: a P_k polynomial inside each cell and a
P_k polynomial on each edge. Global dofs are ordered as all cell-interior
blocks followed by all edge blocks. The discrete weak gradient lives in
[P_{k-1}(T)]^2, expanded in scaled monomials component by component (all
x-components first, then all y-components).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .linear_solver import CSRMatrix, cg_solve, cholesky, cholesky_solve
from .mesh import Mesh
from .quadrature import edge_rule, neural_rule, polygon_rule


def exponents(degree: int) -> list[tuple[int, int]]:
    """Monomial exponents (a, b) with a + b <= degree, graded order."""
    return [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]


def cell_basis(points, center, h, degree):
    """Scaled monomials ((x-xc)/h)^a ((y-yc)/h)^b and their gradients.

    Returns values of shape (n_points, n_basis) and gradients of shape
    (n_points, n_basis, 2).
    """
    pts = np.atleast_2d(points)
    xi = (pts[:, 0] - center[0]) / h
    eta = (pts[:, 1] - center[1]) / h
    exps = exponents(degree)
    vals = np.empty((len(pts), len(exps)))
    grads = np.zeros((len(pts), len(exps), 2))
    for i, (a, b) in enumerate(exps):
        vals[:, i] = xi**a * eta**b
        if a > 0:
            grads[:, i, 0] = a * xi ** (a - 1) * eta**b / h
        if b > 0:
            grads[:, i, 1] = b * xi**a * eta ** (b - 1) / h
    return vals, grads


def edge_basis(points, p0, p1, degree):
    """Monomials in the edge coordinate s = 2 (x - mid).t / |e| in [-1, 1]."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    t = p1 - p0
    length2 = t @ t
    s = 2.0 * ((np.atleast_2d(points) - 0.5 * (p0 + p1)) @ t) / length2
    return s[:, None] ** np.arange(degree + 1)[None, :]


@dataclass
class LocalOperator:
    """Per-cell WG operators in the local dof ordering [interior, edge_0, edge_1, ...]."""

    dofs: np.ndarray
    G: np.ndarray  # weak-gradient coefficients per local dof
    gram_q: np.ndarray  # Gram matrix of the scalar P_{k-1} basis
    S: np.ndarray  # stabilizer, already scaled by 1/h_T
    gram0: np.ndarray  # Gram matrix of the P_k cell basis
    center: np.ndarray
    h: float

    def mass_q(self, a=None) -> np.ndarray:
        a = np.eye(2) if a is None else np.asarray(a)
        return np.kron(a, self.gram_q)

    def stiffness(self, a=None) -> np.ndarray:
        return self.G.T @ self.mass_q(a) @ self.G

    def matrix(self, a=None) -> np.ndarray:
        K = self.stiffness(a) + self.S
        return 0.5 * (K + K.T)


class WgSpace:
    """The WG space V_h of order k on a mesh, with its dof maps and local operators."""

    def __init__(self, mesh: Mesh, k: int = 1, quad_degree: int | None = None,
                 proj_degree: int | None = None, proj_subdivisions: int = 1):
        if k not in (1, 2):
            raise ValueError("polynomial order k must be 1 or 2")
        self.mesh = mesh
        self.k = k
        self.quad_degree = 2 * k + 2 if quad_degree is None else quad_degree
        self.proj_degree = 2 * k + 6 if proj_degree is None else proj_degree
        self.proj_subdivisions = proj_subdivisions
        self.n_cell_dofs = (k + 1) * (k + 2) // 2
        self.n_edge_dofs = k + 1
        self.n_q = 2 * (k * (k + 1) // 2)
        self.n_interior = mesh.n_cells * self.n_cell_dofs
        self.n_dofs = self.n_interior + mesh.n_edges * self.n_edge_dofs
        bnd = mesh.boundary_edges
        self.boundary_dofs = np.sort(np.concatenate([self.edge_dofs(e) for e in bnd])) if len(bnd) else np.zeros(0, np.int64)
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary_dofs] = False
        self.free_dofs = np.flatnonzero(mask)
        self._assembled: dict = {}

    def cell_dofs(self, c: int) -> np.ndarray:
        return c * self.n_cell_dofs + np.arange(self.n_cell_dofs)

    def edge_dofs(self, e: int) -> np.ndarray:
        return self.n_interior + e * self.n_edge_dofs + np.arange(self.n_edge_dofs)

    def local_dofs(self, c: int) -> np.ndarray:
        return np.concatenate([self.cell_dofs(c)] + [self.edge_dofs(e) for e in self.mesh.cell_edges[c]])

    def outward_normal(self, c: int, i: int) -> np.ndarray:
        """Unit outward normal of local edge i (vertex i to vertex i+1) of cell c."""
        cell = self.mesh.cells[c]
        p0 = self.mesh.vertices[cell[i]]
        p1 = self.mesh.vertices[cell[(i + 1) % len(cell)]]
        t = p1 - p0
        return np.array([t[1], -t[0]]) / np.hypot(*t)

    def cell_rule(self, c, degree=None):
        return polygon_rule(self.mesh.cell_vertices(c), self.quad_degree if degree is None else degree)

    def projection_rule(self, c):
        if self.proj_subdivisions > 1:
            return neural_rule(self.mesh.cell_vertices(c), self.proj_subdivisions, self.proj_degree)
        return polygon_rule(self.mesh.cell_vertices(c), self.proj_degree)

    def edge_rule(self, e, degree=None):
        return edge_rule(self.mesh.edge_points(e), self.quad_degree if degree is None else degree)

    def q_values(self, c, points):
        """Scalar P_{k-1} basis values and gradients on cell c."""
        return cell_basis(points, self.mesh.centroids[c], self.mesh.diameters[c], self.k - 1)

    def v0_values(self, c, points):
        return cell_basis(points, self.mesh.centroids[c], self.mesh.diameters[c], self.k)

    def vb_values(self, e, points):
        p0, p1 = self.mesh.edge_points(e)
        return edge_basis(points, p0, p1, self.k)

    @cached_property
    def local(self) -> list[LocalOperator]:
        return [self._build_local(c) for c in range(self.mesh.n_cells)]

    def _build_local(self, c: int) -> LocalOperator:
        mesh, k = self.mesh, self.k
        nc, ne = self.n_cell_dofs, self.n_edge_dofs
        edges = mesh.cell_edges[c]
        nloc = nc + len(edges) * ne
        nqs = self.n_q // 2
        h = mesh.diameters[c]

        rule = self.cell_rule(c)
        phi, _ = self.v0_values(c, rule.points)
        qv, qg = self.q_values(c, rule.points)
        gram0 = (phi * rule.weights[:, None]).T @ phi
        gram_q = (qv * rule.weights[:, None]).T @ qv

        # right-hand side of the weak gradient: -(v0, div q)_T + <vb, q.n>_dT
        R = np.zeros((self.n_q, nloc))
        R[:nqs, :nc] = -(qg[:, :, 0] * rule.weights[:, None]).T @ phi
        R[nqs:, :nc] = -(qg[:, :, 1] * rule.weights[:, None]).T @ phi
        S = np.zeros((nloc, nloc))
        for i, e in enumerate(edges):
            er = self.edge_rule(e)
            n = self.outward_normal(c, i)
            qe, _ = self.q_values(c, er.points)
            psi = self.vb_values(e, er.points)
            cols = slice(nc + i * ne, nc + (i + 1) * ne)
            wq = qe * er.weights[:, None]
            R[:nqs, cols] += n[0] * wq.T @ psi
            R[nqs:, cols] += n[1] * wq.T @ psi
            ph, _ = self.v0_values(c, er.points)
            E = np.zeros((len(er), nloc))
            E[:, :nc] = ph
            E[:, cols] = -psi
            S += (E * er.weights[:, None]).T @ E
        S /= h
        try:
            Lq = cholesky(gram_q)
        except Exception as exc:
            raise ValueError(f"singular weak-gradient mass matrix on cell {c} (degenerate cell)") from exc
        G = np.vstack([cholesky_solve(Lq, R[:nqs]), cholesky_solve(Lq, R[nqs:])])
        return LocalOperator(self.local_dofs(c), G, gram_q, 0.5 * (S + S.T), gram0,
                             mesh.centroids[c], h)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_dofs)

    def split(self, v):
        """View v as (interior coefficients per cell, edge coefficients per edge)."""
        v = np.asarray(v)
        return (v[: self.n_interior].reshape(self.mesh.n_cells, self.n_cell_dofs),
                v[self.n_interior:].reshape(self.mesh.n_edges, self.n_edge_dofs))

    def constant(self, value=1.0) -> np.ndarray:
        v = self.zeros()
        v[: self.n_interior].reshape(-1, self.n_cell_dofs)[:, 0] = value
        v[self.n_interior:].reshape(-1, self.n_edge_dofs)[:, 0] = value
        return v

    def in_homogeneous_subspace(self, v, tol=0.0) -> bool:
        return bool(np.all(np.abs(np.asarray(v)[self.boundary_dofs]) <= tol))


# ---------------------------------------------------------------- coefficients

def coefficient_field(mesh: Mesh, a=None, a_min=1e-12) -> np.ndarray:
    """Per-cell constant SPD coefficient as an (n_cells, 2, 2) array.

    ``a`` may be None (identity), a scalar, a 2x2 matrix, an array of per-cell
    matrices, or a callable of the cell centroid returning any of those.
    """
    n = mesh.n_cells
    if a is None:
        vals = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    elif callable(a):
        vals = np.array([_as_matrix(a(x)) for x in mesh.centroids])
    else:
        arr = np.asarray(a, dtype=float)
        if arr.ndim == 3:
            vals = arr.copy()
        else:
            vals = np.broadcast_to(_as_matrix(arr), (n, 2, 2)).copy()
    if vals.shape != (n, 2, 2):
        raise ValueError("coefficient must give one 2x2 matrix per cell")
    if not np.allclose(vals, vals.transpose(0, 2, 1), rtol=0, atol=1e-14 * np.abs(vals).max()):
        raise ValueError("coefficient is not symmetric")
    if np.linalg.eigvalsh(vals).min() < a_min:
        raise ValueError(f"coefficient is not uniformly positive definite (a_min = {a_min})")
    return vals


def _as_matrix(v):
    v = np.asarray(v, dtype=float)
    return v * np.eye(2) if v.ndim == 0 else v.reshape(2, 2)


# ------------------------------------------------------------------- assembly

def weak_gradient_matrix(space: WgSpace, c: int) -> np.ndarray:
    return space.local[c].G


def stabilizer_matrix(space: WgSpace, c: int) -> np.ndarray:
    return space.local[c].S


def local_stiffness(space: WgSpace, c: int, a=None) -> np.ndarray:
    return space.local[c].matrix(a)


def assemble(space: WgSpace, coef=None) -> CSRMatrix:
    """Global a_w matrix on all of V_h (boundary dofs included)."""
    coef = coefficient_field(space.mesh, coef) if coef is None or np.ndim(coef) != 3 else coef
    key = ("A", coef.tobytes())
    if key in space._assembled:
        return space._assembled[key]
    rows, cols, vals = [], [], []
    for c, op in enumerate(space.local):
        K = op.matrix(coef[c])
        rows.append(np.repeat(op.dofs, len(op.dofs)))
        cols.append(np.tile(op.dofs, len(op.dofs)))
        vals.append(K.ravel())
    A = CSRMatrix.from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                           space.n_dofs, symmetric=True)
    space._assembled[key] = A
    return A


def assemble_load(space: WgSpace, f) -> np.ndarray:
    """b_i = (f, v0 of basis function i); edge entries are zero."""
    b = space.zeros()
    for c in range(space.mesh.n_cells):
        rule = space.projection_rule(c)
        phi, _ = space.v0_values(c, rule.points)
        b[space.cell_dofs(c)] = phi.T @ (rule.weights * f(rule.points))
    return b


# ---------------------------------------------------------------- projections

def project_Q0(space: WgSpace, u, c: int) -> np.ndarray:
    rule = space.projection_rule(c)
    phi, _ = space.v0_values(c, rule.points)
    return np.linalg.solve(space.local[c].gram0, phi.T @ (rule.weights * u(rule.points)))


def project_Qb(space: WgSpace, u, e: int) -> np.ndarray:
    er = edge_rule(space.mesh.edge_points(e), space.proj_degree)
    psi = space.vb_values(e, er.points)
    gram = (psi * er.weights[:, None]).T @ psi
    return np.linalg.solve(gram, psi.T @ (er.weights * u(er.points)))


def project_Qh(space: WgSpace, u, edges_only=False) -> np.ndarray:
    """{Q0 u, Qb u} as a global coefficient vector; ``u`` maps (N, 2) points to (N,) values."""
    v = space.zeros()
    if not edges_only:
        for c in range(space.mesh.n_cells):
            v[space.cell_dofs(c)] = project_Q0(space, u, c)
    for e in range(space.mesh.n_edges):
        v[space.edge_dofs(e)] = project_Qb(space, u, e)
    return v


def project_Qh_vec(space: WgSpace, grad, c: int) -> np.ndarray:
    """L2 projection of a vector field onto [P_{k-1}(T)]^2, in the weak-gradient basis."""
    rule = space.projection_rule(c)
    qv, _ = space.q_values(c, rule.points)
    g = np.asarray(grad(rule.points))
    gram = space.local[c].gram_q
    rhs = np.concatenate([qv.T @ (rule.weights * g[:, 0]), qv.T @ (rule.weights * g[:, 1])])
    n = len(gram)
    return np.concatenate([np.linalg.solve(gram, rhs[:n]), np.linalg.solve(gram, rhs[n:])])


def weak_gradient(space: WgSpace, v, c: int) -> np.ndarray:
    op = space.local[c]
    return op.G @ np.asarray(v)[op.dofs]


# ---------------------------------------------------------------------- norms

def inner_aw(space: WgSpace, u, v, coef=None) -> float:
    A = assemble(space, coef)
    return float(np.asarray(u) @ A.matvec(np.asarray(v, dtype=float)))


def norm_aw(space: WgSpace, v, coef=None) -> float:
    return float(np.sqrt(max(inner_aw(space, v, v, coef), 0.0)))


def norm_1h(space: WgSpace, v) -> float:
    """sum_T ||grad_w v||_T^2 + h_T^{-1} ||v0 - vb||_{dT}^2, square-rooted."""
    return norm_aw(space, v, None)


def l2_norm_interior(space: WgSpace, v) -> float:
    v = np.asarray(v)
    total = 0.0
    for c, op in enumerate(space.local):
        x = v[space.cell_dofs(c)]
        total += x @ op.gram0 @ x
    return float(np.sqrt(max(total, 0.0)))


def l2_error_interior(space: WgSpace, v, u) -> float:
    """||u - v0|| over the domain by quadrature."""
    v = np.asarray(v)
    total = 0.0
    for c in range(space.mesh.n_cells):
        rule = space.projection_rule(c)
        phi, _ = space.v0_values(c, rule.points)
        diff = u(rule.points) - phi @ v[space.cell_dofs(c)]
        total += rule.weights @ diff**2
    return float(np.sqrt(total))


# ---------------------------------------------------------- boundary and solve

@dataclass
class ReducedSystem:
    """Free-dof system after eliminating the boundary edge dofs."""

    A: CSRMatrix
    rhs: np.ndarray
    free: np.ndarray
    boundary: np.ndarray
    u_boundary: np.ndarray  # full-length vector carrying only boundary values

    def expand(self, x) -> np.ndarray:
        u = self.u_boundary.copy()
        u[self.free] = x
        return u


def apply_dirichlet(space: WgSpace, A: CSRMatrix, b, g=None) -> ReducedSystem:
    """Set boundary edge dofs to Q_b g and eliminate them."""
    ub = space.zeros()
    bnd = space.boundary_dofs
    if g is not None:
        for e in space.mesh.boundary_edges:
            ub[space.edge_dofs(e)] = project_Qb(space, g, e)
    free = space.free_dofs
    A_ff = A.principal(free)
    rhs = np.asarray(b, dtype=float)[free].copy()
    if np.any(ub[bnd]):
        rhs -= A.submatrix(free, bnd).matvec(ub[bnd])
    return ReducedSystem(A_ff, rhs, free, bnd, ub)


@dataclass
class WgSolution:
    u: np.ndarray
    system: ReducedSystem
    A: CSRMatrix
    b: np.ndarray
    coef: np.ndarray
    iterations: int
    residual: float


def wg_system(space: WgSpace, problem):
    coef = problem.coefficient(space.mesh)
    A = assemble(space, coef)
    b = assemble_load(space, problem.f)
    return coef, A, b, apply_dirichlet(space, A, b, problem.g)


def wg_solve(space: WgSpace, problem, rel_tol=1e-10, max_iter=None) -> WgSolution:
    coef, A, b, red = wg_system(space, problem)
    info = {}
    x = cg_solve(red.A, red.rhs, rel_tol, max_iter, info=info)
    return WgSolution(red.expand(x), red, A, b, coef, info["iterations"], info["residual"])


def galerkin_residual(sol: WgSolution) -> np.ndarray:
    """(f, v0) - a_w(u_h, v) for every free basis function v."""
    return (sol.b - sol.A.matvec(sol.u))[sol.system.free]


def discrete_energy(A: CSRMatrix, b, u) -> float:
    """J_h(u) = a_w(u, u)/2 - (f, u0)."""
    return float(0.5 * u @ A.matvec(u) - b @ u)


# ------------------------------------------------------------ consistency

def consistency_functional(space: WgSpace, problem, v=None, coef=None, Qhu=None):
    """l_u(v) = a_w(Q_h u, v) - (f, v0).

    Returns the scalar for a given v, or the vector over all free basis
    functions when v is None.
    """
    coef = problem.coefficient(space.mesh) if coef is None else coef
    A = assemble(space, coef)
    b = assemble_load(space, problem.f)
    Qhu = project_Qh(space, problem.u) if Qhu is None else Qhu
    ell = A.matvec(Qhu) - b
    if v is None:
        return ell[space.free_dofs]
    v = np.asarray(v)
    return float(ell[space.free_dofs] @ v[space.free_dofs])


def dual_norm_consistency(space: WgSpace, problem, rel_tol=1e-12) -> float:
    """sqrt(l^T A^{-1} l) over V_h^0: the a_w-Riesz norm of the consistency functional."""
    coef = problem.coefficient(space.mesh)
    ell = consistency_functional(space, problem, coef=coef)
    A_ff = assemble(space, coef).principal(space.free_dofs)
    y = cg_solve(A_ff, ell, rel_tol)
    return float(np.sqrt(max(ell @ y, 0.0)))
