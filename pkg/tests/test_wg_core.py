import numpy as np
import pytest

from helpers import random_cell, random_polynomial, single_cell_mesh
from wgnet.mesh import generate_lshape_mesh, generate_square_mesh
from wgnet.problems import Problem, custom_problem, problem_smooth_square
from wgnet.wg_core import (WgSpace, apply_dirichlet, assemble, assemble_load, cell_basis,
                           coefficient_field, consistency_functional, dual_norm_consistency,
                           galerkin_residual, l2_norm_interior, local_stiffness, norm_1h, norm_aw,
                           project_Q0, project_Qh, project_Qh_vec, stabilizer_matrix, weak_gradient,
                           weak_gradient_matrix, wg_solve)
from wgnet.linear_solver import cg_solve

UNIT_SQ = [[0, 0], [1, 0], [1, 1], [0, 1]]


def unit_space(k=1):
    return WgSpace(single_cell_mesh(UNIT_SQ), k)


def test_cell_basis_sizes():
    c = np.zeros(2)
    assert cell_basis(np.zeros((1, 2)), c, 1.0, 1)[0].shape == (1, 3)
    vals, _ = cell_basis(np.random.default_rng(0).random((4, 2)), c, 1.0, 0)
    assert np.array_equal(vals, np.ones((4, 1)))


def test_dof_counts_one_cell():
    sp = unit_space(1)
    assert sp.n_dofs == 11
    assert assemble(sp).shape == (11, 11)
    assert unit_space(2).n_dofs == 6 + 4 * 3


def test_weak_gradient_of_matching_constant_is_zero():
    sp = unit_space(2)
    v = sp.constant(1.0)
    assert np.abs(weak_gradient(sp, v, 0)).max() < 1e-13


@pytest.mark.parametrize("kind", ["triangle", "quad", "polygon"])
def test_weak_gradient_of_x(rng, kind):
    sp = WgSpace(single_cell_mesh(random_cell(rng, kind)), 1)
    v = project_Qh(sp, lambda p: p[:, 0])
    g = weak_gradient(sp, v, 0)
    assert np.allclose(g, [1.0, 0.0], atol=1e-12)


def test_weak_gradient_single_edge_against_dense_oracle():
    sp = unit_space(1)
    e = sp.mesh.cell_edges[0][0]  # bottom edge, outward normal (0, -1)
    v = sp.zeros()
    v[sp.edge_dofs(e)[0]] = 1.0
    # k = 1: q ranges over constant vectors; (grad_w v, q)_T = <1, q.n>_e
    M = np.eye(2) * 1.0  # area of the unit square times the identity Gram
    rhs = np.array([0.0, -1.0]) * 1.0  # edge length times n
    assert np.allclose(weak_gradient(sp, v, 0), np.linalg.solve(M, rhs), atol=1e-14)


def test_stabilizer_examples():
    sp = unit_space(1)
    S = stabilizer_matrix(sp, 0)
    v = sp.constant(1.0)
    assert abs(v @ S @ v) < 1e-14
    v0 = sp.zeros()
    v0[0] = 1.0
    assert v0 @ S @ v0 == pytest.approx(4 / np.sqrt(2), rel=1e-13)
    vb = sp.zeros()
    vb[sp.edge_dofs(0)[0]] = 1.0
    assert vb @ S @ vb == pytest.approx(1 / np.sqrt(2), rel=1e-13)


def test_local_stiffness_examples(rng):
    sp = unit_space(1)
    K = local_stiffness(sp, 0, np.eye(2))
    one = sp.constant(1.0)
    assert abs(one @ K @ one) < 1e-13
    v = project_Qh(sp, lambda p: p[:, 0])
    Kt = sp.local[0].stiffness(np.eye(2))
    assert v @ Kt @ v == pytest.approx(1.0, rel=1e-12)
    assert abs(v @ stabilizer_matrix(sp, 0) @ v) < 1e-13
    for _ in range(20):
        w = rng.standard_normal(sp.n_dofs)
        assert w @ K @ w >= -1e-12
    assert np.linalg.eigvalsh(K).min() > -1e-12


def test_global_kernel_and_load():
    sp = WgSpace(generate_square_mesh(3, "quad"), 1)
    A = assemble(sp)
    assert np.abs(A.matvec(sp.constant(1.0))).max() < 1e-12
    assert A.is_symmetric()
    b = assemble_load(sp, lambda p: np.ones(len(p)))
    c0 = b[: sp.n_interior].reshape(-1, sp.n_cell_dofs)[:, 0]
    assert np.allclose(c0, sp.mesh.areas)
    assert np.all(b[sp.n_interior:] == 0)


def test_reduced_matrix_positive_definite():
    sp = WgSpace(generate_lshape_mesh(1, "triangle"), 2)
    A = assemble(sp).principal(sp.free_dofs).toarray()
    assert np.linalg.eigvalsh(A).min() > 1e-8


def test_projection_of_x_squared():
    sp = unit_space(1)
    q0 = project_Q0(sp, lambda p: p[:, 0] ** 2, 0)
    rule = sp.cell_rule(0, 4)
    phi, _ = sp.v0_values(0, rule.points)
    assert rule.weights @ (phi @ q0) == pytest.approx(1 / 3, rel=1e-13)
    # best linear fit: residual orthogonal to P_1
    resid = rule.points[:, 0] ** 2 - phi @ q0
    assert np.abs(phi.T @ (rule.weights * resid)).max() < 1e-14


def test_projection_reproduces_linear():
    sp = unit_space(1)
    # scaled monomials about the centroid (1/2, 1/2) with h = sqrt(2)
    assert np.allclose(project_Q0(sp, lambda p: p[:, 0], 0), [0.5, np.sqrt(2), 0.0], atol=1e-14)


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("kind", ["triangle", "quad", "polygon"])
def test_commutativity(rng, k, kind):
    for _ in range(3):
        sp = WgSpace(single_cell_mesh(random_cell(rng, kind)), k)
        u, grad = random_polynomial(rng, k + 1)
        diff = weak_gradient(sp, project_Qh(sp, u), 0) - project_Qh_vec(sp, grad, 0)
        assert np.abs(diff).max() <= 1e-10


def test_norms_zero():
    sp = unit_space(1)
    z = sp.zeros()
    assert norm_aw(sp, z) == 0 and norm_1h(sp, z) == 0 and l2_norm_interior(sp, z) == 0


def test_coefficient_validation():
    mesh = generate_square_mesh(2)
    with pytest.raises(ValueError, match="positive definite"):
        coefficient_field(mesh, -1.0)
    with pytest.raises(ValueError, match="symmetric"):
        coefficient_field(mesh, np.array([[1.0, 0.5], [0.0, 1.0]]))
    assert coefficient_field(mesh, 2.0).shape == (4, 2, 2)


def test_dirichlet_zero_keeps_rhs():
    sp = WgSpace(generate_square_mesh(2), 1)
    A = assemble(sp)
    b = assemble_load(sp, lambda p: np.ones(len(p)))
    red = apply_dirichlet(sp, A, b, lambda p: np.zeros(len(p)))
    assert np.array_equal(red.rhs, b[sp.free_dofs])
    assert red.A.n == len(sp.free_dofs)


@pytest.mark.parametrize("k", [1, 2])
def test_constant_boundary_data_gives_constant(k):
    sp = WgSpace(generate_square_mesh(3, "triangle"), k)
    sol = wg_solve(sp, custom_problem("0", "1"), rel_tol=1e-13)
    assert np.abs(sol.u - sp.constant(1.0)).max() < 1e-9


def test_linear_boundary_data_reproduced():
    sp = WgSpace(generate_square_mesh(4, "quad"), 1)
    sol = wg_solve(sp, custom_problem("0", "x"), rel_tol=1e-14)
    assert np.abs(sol.u - project_Qh(sp, lambda p: p[:, 0])).max() < 1e-9


def test_cg_matches_dense_solve():
    sp = WgSpace(generate_square_mesh(4, "triangle"), 2)
    sol = wg_solve(sp, problem_smooth_square(), rel_tol=1e-13)
    red = sol.system
    x = np.linalg.solve(red.A.toarray(), red.rhs)
    assert np.abs(sol.u[red.free] - x).max() < 1e-10
    assert np.abs(galerkin_residual(sol)).max() < 1e-9 * np.abs(red.rhs).max()


def test_consistency_vanishes_for_linear():
    sp = WgSpace(generate_lshape_mesh(2, "triangle"), 1)
    prob = custom_problem("0", "2*x - 3*y + 1", "2*x - 3*y + 1", domain="lshape")
    ell = consistency_functional(sp, prob)
    assert np.abs(ell).max() <= 1e-9


def test_consistency_vanishes_for_quadratic_k2():
    sp = WgSpace(generate_square_mesh(3, "quad"), 2)
    prob = custom_problem("-4", "x^2 + y^2 + x*y", "x^2 + y^2 + x*y")
    assert np.abs(consistency_functional(sp, prob)).max() <= 1e-9


@pytest.mark.parametrize("k", [1, 2])
def test_dual_norm_equals_energy_error(k):
    # the error Q_h u - u_h is the Riesz representer of l_u on V_h^0
    sp = WgSpace(generate_square_mesh(4, "quad"), k)
    prob = problem_smooth_square()
    sol = wg_solve(sp, prob, rel_tol=1e-14)
    e = project_Qh(sp, prob.u) - sol.u
    assert dual_norm_consistency(sp, prob) == pytest.approx(norm_aw(sp, e), rel=1e-8)


@pytest.mark.parametrize("k", [1, 2])
def test_consistency_flux_identity(k):
    """l_u(v) = s(Q_h u, v) - sum_T <(Qbar - I) grad u . n, v0 - vb>_dT for a = I."""
    sp = WgSpace(generate_square_mesh(2, "quad"), k)
    prob = problem_smooth_square()
    v = np.random.default_rng(7).standard_normal(sp.n_dofs)
    v[sp.boundary_dofs] = 0.0
    lhs = consistency_functional(sp, prob, v)
    Qhu = project_Qh(sp, prob.u)
    rhs = sum(v[op.dofs] @ op.S @ Qhu[op.dofs] for op in sp.local)
    mesh = sp.mesh
    for c in range(mesh.n_cells):
        coeffs = project_Qh_vec(sp, prob.grad_u, c)
        nqs = sp.n_q // 2
        for i, e in enumerate(mesh.cell_edges[c]):
            er = sp.edge_rule(e, 16)
            n = sp.outward_normal(c, i)
            qv, _ = sp.q_values(c, er.points)
            proj = np.column_stack([qv @ coeffs[:nqs], qv @ coeffs[nqs:]])
            flux = (proj - prob.grad_u(er.points)) @ n
            phi, _ = sp.v0_values(c, er.points)
            jump = phi @ v[sp.cell_dofs(c)] - sp.vb_values(e, er.points) @ v[sp.edge_dofs(e)]
            rhs -= er.weights @ (flux * jump)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-13)


def test_measured_rate_is_k():
    """The energy error of the scheme converges at rate h^k on smooth solutions."""
    prob = problem_smooth_square()
    for k, lo, hi in ((1, 0.95, 1.1), (2, 1.85, 2.1)):
        errs = []
        for n in (4, 8):
            sp = WgSpace(generate_square_mesh(n, "quad"), k)
            sol = wg_solve(sp, prob, rel_tol=1e-13)
            errs.append(norm_aw(sp, project_Qh(sp, prob.u) - sol.u))
        rate = np.log2(errs[0] / errs[1])
        assert lo <= rate <= hi


def test_interface_problem_solution_close():
    from wgnet.problems import problem_interface_strip
    prob = problem_interface_strip(10.0)
    sp = WgSpace(generate_square_mesh(4), 1)
    sol = wg_solve(sp, prob, rel_tol=1e-13)
    # the exact solution is piecewise linear and the mesh is aligned: Q_h u is reproduced
    assert np.abs(sol.u - project_Qh(sp, prob.u)).max() < 1e-8


def test_weak_gradient_matrix_shape():
    sp = unit_space(2)
    assert weak_gradient_matrix(sp, 0).shape == (sp.n_q, sp.n_dofs)
