"""Residual-driven neural enrichment of the WG space.

A candidate n = phi * net is brought into the discrete system in one of two
ways:

``projected``
    n_hat = {Q0 n, Qb n}, an ordinary member of V_h^0. Such columns can
    never change the Galerkin solution; they are detected as redundant.
``generalized``
    n_hat = {n|_T, n|_e} is kept non-polynomial. Its weak gradient is
    computed from the defining relation with n as both interior and edge
    values (giving the L2 projection of grad n onto [P_{k-1}]^2) and its
    stabilizer couplings vanish identically because n0 - nb = 0.

Either way the lifted object depends linearly on the candidate's values at a
fixed set of quadrature nodes, so every quantity used by the training
objective is an explicit function of those values.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .linear_solver import (BaseSolver, BorderedSystem, CSRMatrix, RectCSR,
                            bordered_solve, cholesky, cholesky_solve,
                            dense_spd_solve, NotSPDError)
from .neural import (AdamState, NeuralCandidate, NonFiniteError, PointEvaluator,
                     adam_step, cutoff, mlp_init)
from .quadrature import composite_edge_rule, neural_rule
from .wg_core import WgSpace, assemble, assemble_load, apply_dirichlet, project_Qh

log = logging.getLogger(__name__)

MODES = ("projected", "generalized")


class EnrichmentError(RuntimeError):
    pass


class ZeroEnergyCandidate(EnrichmentError):
    pass


@dataclass
class EnrichmentConfig:
    mode: str = "generalized"
    tol: float | None = None  # None: 1e-4 * ||reduced right-hand side||
    max_enrichments: int = 8
    widths: tuple = (2, 32, 32, 1)
    restarts: int = 4
    steps: int = 2000
    lr: float = 1e-3
    seed: int = 0
    neural_degree: int = 10
    subdivisions: int = 2
    delta_norm: float = 1e-10
    schur_eps: float = 1e-10
    rel_tol: float = 1e-10
    include_base: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown enrichment mode {self.mode!r}")
        if self.restarts < 1 or self.steps < 0 or self.max_enrichments < 0:
            raise ValueError("restarts must be >= 1, steps and max_enrichments >= 0")
        self.widths = tuple(int(w) for w in self.widths)


# -------------------------------------------------------------------- lifting

class LiftOperator:
    """Linear map from candidate values at fixed nodes to lifted WG objects.

    Lifted functions are represented by a vector ``z`` in an "energy space"
    with SPD operator ``K``: the full dof vector with the global a_w matrix
    (projected mode), or the per-cell weak-gradient coefficients with the
    block-diagonal a-weighted mass matrix (generalized mode). ``Phi`` maps
    node values to ``z`` and ``embed_base`` maps ordinary weak functions to
    ``z``, so a_w(v, n_hat) = (embed_base v)^T K Phi p plus, in projected
    mode only, nothing else; the generalized stabilizer coupling is zero.
    """

    def __init__(self, space: WgSpace, coef, f, mode="generalized", degree=10, subdivisions=2):
        if mode not in MODES:
            raise ValueError(f"unknown lifting mode {mode!r}")
        self.space, self.mode, self.coef = space, mode, coef
        self.degree, self.subdivisions = degree, subdivisions
        mesh = space.mesh
        self.A = assemble(space, coef)

        pts, vol_owner, edge_owner = [], [], []
        self.cell_rules = []
        for c in range(mesh.n_cells):
            r = neural_rule(mesh.cell_vertices(c), subdivisions, degree)
            self.cell_rules.append((sum(len(p) for p in pts), r))
            pts.append(r.points)
            vol_owner.append(np.full(len(r), c))
            edge_owner.append(np.full(len(r), -1))
        self.edge_rules = {}
        for e in np.flatnonzero(~mesh.is_boundary_edge):
            r = composite_edge_rule(mesh.edge_points(e), subdivisions, degree)
            self.edge_rules[e] = (sum(len(p) for p in pts), r)
            pts.append(r.points)
            vol_owner.append(np.full(len(r), -1))
            edge_owner.append(np.full(len(r), e))
        all_pts = np.concatenate(pts)
        n_all = len(all_pts)

        rows, cols, vals = [], [], []
        load = np.zeros(n_all)
        if mode == "projected":
            b = assemble_load(space, f)
            for c, (off, r) in enumerate(self.cell_rules):
                phi, _ = space.v0_values(c, r.points)
                M = np.linalg.solve(space.local[c].gram0, (phi * r.weights[:, None]).T)
                self._add_block(rows, cols, vals, space.cell_dofs(c), off + np.arange(len(r)), M)
            for e, (off, r) in self.edge_rules.items():
                psi = space.vb_values(e, r.points)
                gram = (psi * r.weights[:, None]).T @ psi
                M = np.linalg.solve(gram, (psi * r.weights[:, None]).T)
                self._add_block(rows, cols, vals, space.edge_dofs(e), off + np.arange(len(r)), M)
            n_rows = space.n_dofs
            L = RectCSR(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n_rows, n_all))
            load = L.rmatvec(b)
            self.K = self.A
        else:
            nq, nqs = space.n_q, space.n_q // 2
            for c, (off, r) in enumerate(self.cell_rules):
                fv = f(r.points)
                load[off:off + len(r)] = r.weights * fv
                _, qg = space.q_values(c, r.points)
                R = np.vstack([-(qg[:, :, 0] * r.weights[:, None]).T, -(qg[:, :, 1] * r.weights[:, None]).T])
                blocks = [(off + np.arange(len(r)), R)]
                for i, e in enumerate(mesh.cell_edges[c]):
                    if e not in self.edge_rules:
                        continue  # candidates vanish on the boundary
                    eoff, er = self.edge_rules[e]
                    n = space.outward_normal(c, i)
                    qv, _ = space.q_values(c, er.points)
                    wq = (qv * er.weights[:, None]).T
                    blocks.append((eoff + np.arange(len(er)), np.vstack([n[0] * wq, n[1] * wq])))
                Lq = cholesky(space.local[c].gram_q)
                qrows = c * nq + np.arange(nq)
                for pidx, Rb in blocks:
                    Mb = np.vstack([cholesky_solve(Lq, Rb[:nqs]), cholesky_solve(Lq, Rb[nqs:])])
                    self._add_block(rows, cols, vals, qrows, pidx, Mb)
            n_rows = mesh.n_cells * nq
            L = RectCSR(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n_rows, n_all))
            kr, kc, kv, gr, gc, gv = [], [], [], [], [], []
            for c, op in enumerate(space.local):
                qrows = c * nq + np.arange(nq)
                self._add_block(kr, kc, kv, qrows, qrows, op.mass_q(coef[c]))
                self._add_block(gr, gc, gv, qrows, op.dofs, op.G)
            self.K = CSRMatrix.from_coo(np.concatenate(kr), np.concatenate(kc), np.concatenate(kv), n_rows, True)
            self.Gbase = RectCSR(np.concatenate(gr), np.concatenate(gc), np.concatenate(gv), (n_rows, space.n_dofs))

        # drop nodes that influence nothing (e.g. volume nodes when k = 1 and f = 0)
        used = np.zeros(n_all, dtype=bool)
        used[L.cols[L.vals != 0]] = True
        used |= load != 0
        keep = np.flatnonzero(used)
        remap = np.full(n_all, -1)
        remap[keep] = np.arange(len(keep))
        nz = remap[L.cols] >= 0
        self.Phi = RectCSR(L.rows[nz], remap[L.cols[nz]], L.vals[nz], (L.shape[0], len(keep)))
        self.load = load[keep]
        self.kept = keep
        self.points = all_pts[keep]
        self.cell_of_point = np.concatenate(vol_owner)[keep]
        self.edge_of_point = np.concatenate(edge_owner)[keep]
        self.n_points_total = n_all

    @staticmethod
    def _add_block(rows, cols, vals, r, c, M):
        rows.append(np.repeat(r, len(c)))
        cols.append(np.tile(c, len(r)))
        vals.append(np.asarray(M).ravel())

    @property
    def n_points(self) -> int:
        return len(self.points)

    def embed_base(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return v if self.mode == "projected" else self.Gbase.matvec(v)

    def energy_matvec(self, z) -> np.ndarray:
        return self.K.matvec(z)

    def lift_values(self, values, check=True, delta_norm=1e-10) -> "LiftedNeuralFunction":
        values = np.asarray(values, dtype=float)
        z = self.Phi.matvec(values)
        Kz = self.K.matvec(z)
        energy = float(z @ Kz)
        if check and not energy > delta_norm**2:
            raise ZeroEnergyCandidate("zero-energy candidate")
        if self.mode == "projected":
            coupling = Kz
        else:
            coupling = self.Gbase.rmatvec(Kz)
        return LiftedNeuralFunction(self.mode, values, z, float(self.load @ values), energy, coupling, self)

    def lift(self, fn, check=True, delta_norm=1e-10) -> "LiftedNeuralFunction":
        return self.lift_values(fn(self.points), check, delta_norm)


@dataclass(eq=False)
class LiftedNeuralFunction:
    """A candidate inside the discrete system.

    ``z`` is the energy-space representation (dof vector or weak-gradient
    coefficients), ``coupling[i] = a_w(basis_i, n_hat)`` over all dofs,
    ``load = (f, n0)`` and ``energy = a_w(n_hat, n_hat)``.
    """

    mode: str
    values: np.ndarray
    z: np.ndarray
    load: float
    energy: float
    coupling: np.ndarray
    op: LiftOperator = field(repr=False)

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.energy))

    def inner(self, other: "LiftedNeuralFunction") -> float:
        return float(self.z @ self.op.K.matvec(other.z))

    @property
    def weak_function(self) -> np.ndarray:
        if self.mode != "projected":
            raise EnrichmentError("generalized lifts are not ordinary weak functions")
        return self.z

    def full_values(self) -> np.ndarray:
        """Values on every node of the lifting rules, zero where a node was pruned."""
        out = np.zeros(self.op.n_points_total)
        out[self.op.kept] = self.values
        return out

    def cell_values(self, c: int) -> np.ndarray:
        return self.values[self.op.cell_of_point == c]

    def edge_values(self, e: int) -> np.ndarray:
        return self.values[self.op.edge_of_point == e]

    def stabilizer_coupling(self) -> np.ndarray:
        """s(n_hat, basis_i) for all dofs.

        Generalized lifts use the same node values for the interior trace and
        the edge value, so n0 - nb is zero at every edge node.
        """
        space = self.op.space
        if self.mode == "projected":
            out = np.zeros(space.n_dofs)
            for op in space.local:
                out[op.dofs] += op.S @ self.z[op.dofs]
            return out
        out = np.zeros(space.n_dofs)
        mesh = space.mesh
        full = self.full_values()
        for e, (off, r) in self.op.edge_rules.items():
            nb = full[off:off + len(r)]
            n0 = full[off:off + len(r)]
            for c in mesh.edge_cells[e]:
                diff = r.weights * (n0 - nb) / mesh.diameters[c]
                phi, _ = space.v0_values(c, r.points)
                out[space.cell_dofs(c)] += phi.T @ diff
                out[space.edge_dofs(e)] -= space.vb_values(e, r.points).T @ diff
        return out


def lift(candidate, space: WgSpace, mode="generalized", coef=None, f=None, degree=10,
         subdivisions=2, op: LiftOperator | None = None) -> LiftedNeuralFunction:
    if op is None:
        from .wg_core import coefficient_field

        coef = coefficient_field(space.mesh, None) if coef is None else coef
        f = (lambda p: np.zeros(len(p))) if f is None else f
        op = LiftOperator(space, coef, f, mode, degree, subdivisions)
    return op.lift(candidate)


# ------------------------------------------------------------------ state

@dataclass
class StepRecord:
    m: int
    abs_J: float
    eta: float
    J_h: float
    redundant: list
    err_aw: float | None = None
    eps_m: float | None = None
    orthogonality: float | None = None
    loss_first: float | None = None
    loss_last: float | None = None
    rejected_steps: int = 0
    seconds: float = 0.0
    accepted: bool = True


class EnrichedState:
    """Base WG system, enrichment list and the current Galerkin solution."""

    def __init__(self, space: WgSpace, problem, config: EnrichmentConfig | None = None,
                 op: LiftOperator | None = None):
        self.space, self.problem = space, problem
        self.config = config or EnrichmentConfig()
        self.coef = problem.coefficient(space.mesh)
        self.A = assemble(space, self.coef)
        self.b = assemble_load(space, problem.f)
        self.red = apply_dirichlet(space, self.A, self.b, problem.g)
        self.op = op or LiftOperator(space, self.coef, problem.f, self.config.mode,
                                     self.config.neural_degree, self.config.subdivisions)
        self.solver = BaseSolver(self.red.A, self.config.rel_tol)
        self.cache: dict = {}
        self.lifts: list[LiftedNeuralFunction] = []
        self.networks: list[dict] = []
        self.redundant: list[bool] = []
        self.alpha = np.zeros(0)
        self.log: list[StepRecord] = []
        self.u_base = self.red.u_boundary.copy()
        self.residual = 0.0
        self.enriched_solve()
        self.u_full = self.u_base.copy() if self.config.include_base else None

    @property
    def m(self) -> int:
        return len(self.lifts)

    @property
    def tol(self) -> float:
        if self.config.tol is not None:
            return self.config.tol
        return 1e-4 * float(np.linalg.norm(self.red.rhs))

    def add(self, lifted: LiftedNeuralFunction, network: dict | None = None):
        if self.m >= self.config.max_enrichments:
            raise EnrichmentError("max_enrichments reached")
        self.lifts.append(lifted)
        self.networks.append(network or {})

    # -- Galerkin solve over W_h^m
    def _bordered(self):
        free, bnd = self.red.free, self.red.boundary
        norms = np.array([l.norm for l in self.lifts])
        B = np.column_stack([l.coupling[free] / s for l, s in zip(self.lifts, norms)]) if self.lifts \
            else np.zeros((len(free), 0))
        D = np.array([[li.inner(lj) for lj in self.lifts] for li in self.lifts]).reshape(self.m, self.m)
        D = D / np.outer(norms, norms) if self.m else D
        ub = self.red.u_boundary
        g = np.array([(l.load - l.coupling[bnd] @ ub[bnd]) / s for l, s in zip(self.lifts, norms)])
        return BorderedSystem(self.red.A, B, D, self.red.rhs, g), norms

    def enriched_solve(self):
        system, norms = self._bordered()
        cfg = self.config
        if cfg.include_base:
            res = bordered_solve(system, cfg.rel_tol, self.solver, self.cache, cfg.schur_eps)
            x, alpha, redundant, resid = res.x, res.alpha, res.redundant, res.residual
        else:
            x = np.zeros(len(self.red.free))
            alpha, redundant = _pivoted_spd_solve(system.D, system.g, cfg.schur_eps)
            resid = float(np.linalg.norm(system.g - system.D @ alpha) / max(np.linalg.norm(system.g), 1e-300))
        self.u_base = self.red.expand(x)
        self.alpha = alpha / norms if self.m else np.zeros(0)
        self.redundant = list(redundant)
        self.residual = resid
        return self

    # -- evaluation of forms at the current solution
    def coupling_total(self) -> np.ndarray:
        """a_w(u^(m), basis_i) over all dofs."""
        c = self.A.matvec(self.u_base)
        for a, l in zip(self.alpha, self.lifts):
            c = c + a * l.coupling
        return c

    def state_vector(self) -> np.ndarray:
        z = self.op.embed_base(self.u_base)
        for a, l in zip(self.alpha, self.lifts):
            z = z + a * l.z
        return z

    def energy_functional(self) -> float:
        """J_h(u) = a_w(u, u)/2 - (f, u0)."""
        u = self.u_base
        quad = u @ self.A.matvec(u)
        lin = self.b @ u
        for a, l in zip(self.alpha, self.lifts):
            quad += 2 * a * (l.coupling @ u)
            lin += a * l.load
        for a, li in zip(self.alpha, self.lifts):
            for c, lj in zip(self.alpha, self.lifts):
                quad += a * c * li.inner(lj)
        return float(0.5 * quad - lin)

    def orthogonality(self) -> float:
        """Relative Galerkin residual over the basis of W_h^m (normalized enrichments)."""
        system, norms = self._bordered()
        x = self.u_base[self.red.free]
        alpha = self.alpha * norms if self.m else np.zeros(0)
        parts, rhs = [], []
        if self.config.include_base:
            parts.append(system.b - system.A.matvec(x) - system.B @ alpha)
            rhs.append(system.b)
        if self.m:
            parts.append(system.g - system.B.T @ x - system.D @ alpha)
            rhs.append(system.g)
        if not parts:
            return 0.0
        r, s = np.concatenate(parts), np.linalg.norm(np.concatenate(rhs))
        return float(np.linalg.norm(r) / (s if s > 0 else 1.0))

    def energy_error(self, Qhu=None) -> float:
        """||Q_h u - u^(m)||_{a_w} for a problem with known exact solution."""
        if Qhu is None:
            Qhu = project_Qh(self.space, self.problem.u)
        e = Qhu - self.u_base
        val = e @ self.A.matvec(e)
        for a, l in zip(self.alpha, self.lifts):
            val -= 2 * a * (l.coupling @ e)
        for a, li in zip(self.alpha, self.lifts):
            for c, lj in zip(self.alpha, self.lifts):
                val += a * c * li.inner(lj)
        return float(np.sqrt(max(val, 0.0)))

    def checkpoint(self) -> dict:
        return {"alpha": list(map(float, self.alpha)), "redundant": self.redundant,
                "networks": self.networks}


def _pivoted_spd_solve(D, g, eps_rel):
    m = len(g)
    if m == 0:
        return np.zeros(0), []
    eps = eps_rel * max(np.trace(D) / m, 0.0)
    keep, redundant = [], [False] * m
    for j in range(m):
        trial = keep + [j]
        try:
            L = cholesky(D[np.ix_(trial, trial)])
        except NotSPDError:
            redundant[j] = True
            continue
        if L[-1, -1] ** 2 < eps:
            redundant[j] = True
            continue
        keep = trial
    alpha = np.zeros(m)
    if keep:
        alpha[keep] = dense_spd_solve(D[np.ix_(keep, keep)], g[keep])
    return alpha, redundant


def enriched_solve(state: EnrichedState) -> EnrichedState:
    return state.enriched_solve()


# ---------------------------------------------------- residual and indicator

def residual_functional(state: EnrichedState, v) -> float:
    """R(v) = (f, v0) - a_w(u^(m), v) for a weak function or a lifted candidate."""
    if isinstance(v, LiftedNeuralFunction):
        val = v.load - v.coupling @ state.u_base
        for a, l in zip(state.alpha, state.lifts):
            val -= a * l.inner(v)
        return float(val)
    v = np.asarray(v, dtype=float)
    return float(state.b @ v - state.coupling_total() @ v)


def _norm(state, v):
    if isinstance(v, LiftedNeuralFunction):
        return v.norm
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ state.A.matvec(v), 0.0)))


def indicator(state: EnrichedState, v) -> float:
    nv = _norm(state, v)
    if not nv > state.config.delta_norm:
        raise ZeroEnergyCandidate("indicator undefined for a zero-norm direction")
    return residual_functional(state, v) / nv


# ------------------------------------------------------- training objective

class TrainingObjective:
    """J(theta) = [(f, n0) - a_w(u^(m), n_hat)] / ||n_hat||_{a_w} and its gradient.

    Frozen at the current state: the numerator is rho . p with
    rho = load - Phi^T K z_state and the squared denominator is p^T N p with
    N = Phi^T K Phi, where p are the candidate values at the lifting nodes.
    """

    def __init__(self, state: EnrichedState, candidate: NeuralCandidate):
        self.state, self.candidate = state, candidate
        op = state.op
        self.op = op
        self.rho = op.load - op.Phi.rmatvec(op.K.matvec(state.state_vector()))
        self.evaluator = PointEvaluator(candidate, op.points)
        self.delta = state.config.delta_norm

    def value_and_grad(self, theta, need_grad=True):
        p = self.evaluator.values(theta)
        if not np.all(np.isfinite(p)):
            raise NonFiniteError("non-finite candidate values")
        z = self.op.Phi.matvec(p)
        Kz = self.op.K.matvec(z)
        s2 = float(z @ Kz)
        if not s2 > self.delta**2:
            return None, None
        s = np.sqrt(s2)
        num = float(self.rho @ p)
        J = num / s
        if not np.isfinite(J):
            raise NonFiniteError("non-finite objective")
        if not need_grad:
            return J, None
        Np = self.op.Phi.rmatvec(Kz)
        dJdp = self.rho / s - (num / s**3) * Np
        return J, self.evaluator.gradient(theta, dJdp)

    def __call__(self, theta) -> float:
        return self.value_and_grad(theta, need_grad=False)[0]


def training_objective(state: EnrichedState, candidate: NeuralCandidate, theta=None):
    theta = candidate.mlp.theta if theta is None else theta
    J, g = TrainingObjective(state, candidate).value_and_grad(theta)
    if J is None:
        raise ZeroEnergyCandidate("degenerate denominator")
    return J, g


@dataclass
class TrainedCandidate:
    candidate: NeuralCandidate
    lifted: LiftedNeuralFunction
    abs_J: float
    J: float
    restart: int
    loss_first: float
    loss_last: float
    rejected_steps: int


def train_candidate(state: EnrichedState, config: EnrichmentConfig | None = None,
                    seed_offset: int = 0) -> TrainedCandidate:
    """Adam on -|J| from several seeds; keeps the restart with the largest |J|."""
    cfg = config or state.config
    phi = cutoff(state.problem.domain, state.problem.params.get("cutoff"))
    best = None
    for r in range(cfg.restarts):
        seed = cfg.seed + seed_offset + r
        net = mlp_init(cfg.widths, seed)
        cand = NeuralCandidate(net, phi)
        obj = TrainingObjective(state, cand)
        theta = net.theta.copy()
        J, g = obj.value_and_grad(theta)
        if J is None:
            continue
        adam = AdamState.start(theta)
        lr = cfg.lr
        best_J, best_theta = J, theta.copy()
        first = -abs(J)
        rejected = 0
        for _ in range(cfg.steps):
            trial = adam_step(adam, -np.sign(J) * g, lr)
            Jt, gt = obj.value_and_grad(trial.theta)
            if Jt is None:
                rejected += 1
                lr *= 0.5
                continue
            adam, J, g = trial, Jt, gt
            if abs(J) > abs(best_J):
                best_J, best_theta = J, adam.theta.copy()
        net.theta = best_theta
        log.debug("restart %d (seed %d): |J| %.6e -> %.6e", r, seed, -first, abs(best_J))
        if best is None or abs(best_J) > best.abs_J:
            lifted = state.op.lift(cand, check=False)
            best = TrainedCandidate(cand, lifted, abs(best_J), best_J, r, first, -abs(best_J), rejected)
    if best is None:
        raise EnrichmentError("no admissible candidate")
    return best


# ------------------------------------------------------------- Algorithm

@dataclass
class EnrichmentReport:
    state: EnrichedState
    steps: list
    baseline_J_h: float
    baseline_err_aw: float | None
    stopped_by: str
    seconds: dict

    def rows(self):
        out = [{"m": 0, "abs_J": None, "eta": None, "J_h": self.baseline_J_h,
                "err_aw": self.baseline_err_aw, "eps_m": None, "redundant": []}]
        for s in self.steps:
            if s.accepted:
                out.append({"m": s.m, "abs_J": s.abs_J, "eta": s.eta, "J_h": s.J_h, "err_aw": s.err_aw,
                            "eps_m": s.eps_m, "redundant": s.redundant})
        return out


def run_algorithm1(problem, space: WgSpace, config: EnrichmentConfig | None = None,
                   singular_part=None, callback=None) -> EnrichmentReport:
    """Baseline solve, then train -> check -> extend -> re-solve until the indicator drops below tol."""
    cfg = config or EnrichmentConfig()
    timings = {"setup": 0.0, "train": 0.0, "solve": 0.0}
    t0 = time.perf_counter()
    state = EnrichedState(space, problem, cfg)
    timings["setup"] = time.perf_counter() - t0
    have_u = problem.u is not None
    Qhu = project_Qh(space, problem.u) if have_u else None
    base_err = state.energy_error(Qhu) if have_u else None
    base_Jh = state.energy_functional()
    steps, stopped_by = [], "max_enrichments"
    tol = state.tol
    for m in range(cfg.max_enrichments):
        t = time.perf_counter()
        try:
            tc = train_candidate(state, cfg, seed_offset=1000 * m)
        except (EnrichmentError, NonFiniteError) as exc:
            log.warning("training failed at step %d: %s", m + 1, exc)
            stopped_by = f"training failure: {exc}"
            break
        timings["train"] += time.perf_counter() - t
        eta = tc.J
        rec = StepRecord(m + 1, tc.abs_J, eta, state.energy_functional(), list(state.redundant),
                         loss_first=tc.loss_first, loss_last=tc.loss_last,
                         rejected_steps=tc.rejected_steps, seconds=time.perf_counter() - t)
        if abs(eta) < tol:
            rec.accepted = False
            steps.append(rec)
            stopped_by = "tol"
            break
        if not tc.lifted.energy > cfg.delta_norm**2:
            rec.accepted = False
            steps.append(rec)
            stopped_by = "zero-energy candidate"
            break
        t = time.perf_counter()
        state.add(tc.lifted, {"restart": tc.restart, **tc.candidate.mlp.to_dict()})
        state.enriched_solve()
        timings["solve"] += time.perf_counter() - t
        rec.J_h = state.energy_functional()
        rec.redundant = list(state.redundant)
        rec.orthogonality = state.orthogonality()
        if have_u:
            rec.err_aw = state.energy_error(Qhu)
        if singular_part is not None:
            rec.eps_m = singular_diagnostics(state, singular_part)
        steps.append(rec)
        if callback is not None:
            callback(rec)
    state.log = steps
    return EnrichmentReport(state, steps, base_Jh, base_err, stopped_by, timings)


# ------------------------------------------------------------- diagnostics

def singular_diagnostics(state: EnrichedState, u_s, lifts=None) -> float:
    """min over z in span(lifts) of ||Q_h u_s - z||_{a_w}."""
    lifts = state.lifts if lifts is None else lifts
    space, op = state.space, state.op
    Qs = project_Qh(space, u_s) if callable(u_s) else np.asarray(u_s, dtype=float)
    total = float(Qs @ state.A.matvec(Qs))
    if not lifts:
        return float(np.sqrt(max(total, 0.0)))
    norms = np.array([l.norm for l in lifts])
    D = np.array([[li.inner(lj) for lj in lifts] for li in lifts]) / np.outer(norms, norms)
    c = np.array([l.coupling @ Qs for l in lifts]) / norms
    beta, _ = _pivoted_spd_solve(D, c, state.config.schur_eps)
    # explicit residual in the energy space avoids the cancellation in total - c.D^{-1}.c
    r = op.embed_base(Qs) - sum(b / s * l.z for b, s, l in zip(beta, norms, lifts))
    val = float(r @ op.energy_matvec(r))
    if op.mode == "generalized":
        # generalized lifts carry no stabilizer part, so s(Q_h u_s, Q_h u_s) is untouched
        val += sum(float(Qs[o.dofs] @ o.S @ Qs[o.dofs]) for o in space.local)
    return float(np.sqrt(max(val, 0.0)))


def config_dict(cfg: EnrichmentConfig) -> dict:
    d = asdict(cfg)
    d["widths"] = list(cfg.widths)
    return d
