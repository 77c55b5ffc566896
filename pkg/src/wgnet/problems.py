"""Benchmark elliptic problems -div(a grad u) = f with Dirichlet data g."""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import Mesh, check_interface_aligned
from .wg_core import (WgSpace, _as_matrix, assemble, coefficient_field,
                      l2_error_interior, project_Qh)

PointFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class Problem:
    name: str
    domain: str
    f: PointFn
    g: PointFn | None = None
    u: PointFn | None = None
    grad_u: PointFn | None = None
    a: Callable | float | None = None
    regularity: str = "smooth"
    params: dict = field(default_factory=dict)
    mesh_check: Callable[[Mesh], None] | None = None

    def coefficient(self, mesh: Mesh) -> np.ndarray:
        if self.mesh_check is not None:
            self.mesh_check(mesh)
        return coefficient_field(mesh, self.a)

    def coefficient_at(self, pts) -> np.ndarray:
        """Pointwise a(x) as an (N, 2, 2) array."""
        pts = np.atleast_2d(pts)
        if self.a is None:
            return np.broadcast_to(np.eye(2), (len(pts), 2, 2))
        if callable(self.a):
            return np.array([_as_matrix(self.a(p)) for p in pts])
        return np.broadcast_to(_as_matrix(self.a), (len(pts), 2, 2))


def _xy(p):
    p = np.atleast_2d(p)
    return p[:, 0], p[:, 1]


def problem_smooth_square() -> Problem:
    pi = np.pi

    def u(p):
        x, y = _xy(p)
        return np.sin(pi * x) * np.sin(pi * y)

    def grad_u(p):
        x, y = _xy(p)
        return np.column_stack([pi * np.cos(pi * x) * np.sin(pi * y), pi * np.sin(pi * x) * np.cos(pi * y)])

    def f(p):
        return 2 * pi**2 * u(p)

    return Problem("smooth_square", "square", f, g=lambda p: np.zeros(len(np.atleast_2d(p))),
                   u=u, grad_u=grad_u, regularity="smooth")


def polar_angle(p):
    """Angle in [0, 2pi) measured counterclockwise from the positive x axis."""
    x, y = _xy(p)
    return np.mod(np.arctan2(y, x), 2 * np.pi)


def singular_mode(p):
    x, y = _xy(p)
    r = np.hypot(x, y)
    return r ** (2.0 / 3.0) * np.sin(2.0 * polar_angle(p) / 3.0)


def singular_mode_grad(p):
    x, y = _xy(p)
    r = np.hypot(x, y)
    th = polar_angle(p)
    with np.errstate(divide="ignore"):
        s = (2.0 / 3.0) * r ** (-1.0 / 3.0)
    return np.column_stack([-s * np.sin(th / 3.0), s * np.cos(th / 3.0)])


def problem_lshape_singular() -> Problem:
    """u = r^{2/3} sin(2 theta/3) on the L-shape, harmonic, with its own trace as data."""
    return Problem("lshape_singular", "lshape", lambda p: np.zeros(len(np.atleast_2d(p))),
                   g=singular_mode, u=singular_mode, grad_u=singular_mode_grad,
                   regularity="singular")


def interface_coefficients(beta: float) -> tuple[float, float, float]:
    """(c1, c2, d) for the piecewise-linear interface solution."""
    return 2 * beta / (1 + beta), 2 / (1 + beta), (beta - 1) / (1 + beta)


def problem_interface_strip(beta: float = 10.0) -> Problem:
    if beta <= 0:
        raise ValueError("contrast beta must be positive")
    c1, c2, d = interface_coefficients(beta)

    def u(p):
        x, _ = _xy(p)
        return np.where(x < 0.5, c1 * x, c2 * x + d)

    def grad_u(p):
        x, _ = _xy(p)
        return np.column_stack([np.where(x < 0.5, c1, c2), np.zeros_like(x)])

    def a(x):
        return 1.0 if x[0] < 0.5 else beta

    def check(mesh):
        if not check_interface_aligned(mesh, 0.5):
            raise ValueError("mesh not aligned with the interface x = 1/2")

    return Problem("interface_strip", "square", lambda p: np.zeros(len(np.atleast_2d(p))),
                   g=u, u=u, grad_u=grad_u, a=a, regularity="interface",
                   params={"beta": beta}, mesh_check=check)


def oracle_singular_candidate():
    """cutoff * r^{2/3} sin(2 theta/3) on the L-shape: a hand-made enrichment function."""
    from .neural import cutoff

    phi = cutoff("lshape")

    def n(p):
        return phi(p) * singular_mode(p)

    return n


# ----------------------------------------------------------------- expressions

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "atan2": np.arctan2,
          "abs": np.abs, "log": np.log, "tan": np.tan}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide,
           ast.Pow: np.power}


class ExpressionError(ValueError):
    pass


def compile_expression(text: str) -> PointFn:
    """Compile an arithmetic expression in x, y into a vectorized point function.

    Supports + - * / ^ (or **), unary minus, sin cos tan exp log sqrt abs
    atan2 and the constants pi and e.
    """
    try:
        # ^ binds tighter than + in the expression grammar, unlike Python's xor
        tree = ast.parse(text.strip().replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return check(node.left) and check(node.right)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return check(node.operand)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return True
        if isinstance(node, ast.Name) and node.id in ("x", "y", *_CONSTS):
            return True
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
                and not node.keywords:
            return all(check(a) for a in node.args)
        raise ExpressionError(f"unsupported syntax in expression {text!r}: {ast.dump(node)[:40]}")

    check(tree)

    def ev(node, x, y):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left, x, y), ev(node.right, x, y))
        if isinstance(node, ast.UnaryOp):
            v = ev(node.operand, x, y)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return {"x": x, "y": y}.get(node.id, _CONSTS.get(node.id))
        return _FUNCS[node.func.id](*(ev(a, x, y) for a in node.args))

    def fn(p):
        x, y = _xy(np.asarray(p, dtype=float))
        return np.broadcast_to(ev(tree.body, x, y), x.shape).astype(float)

    fn.expression = text
    return fn


def custom_problem(f: str, g: str = "0", u: str | None = None, domain: str = "square",
                   a: float | None = None) -> Problem:
    uf = compile_expression(u) if u else None
    return Problem("custom", domain, compile_expression(f), g=compile_expression(g), u=uf,
                   a=a, regularity="smooth", params={"f": f, "g": g, "u": u})


PROBLEMS = {
    "smooth_square": problem_smooth_square,
    "lshape_singular": problem_lshape_singular,
    "interface_strip": problem_interface_strip,
}


def get_problem(name: str, **kwargs) -> Problem:
    try:
        return PROBLEMS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


# ---------------------------------------------------------------- error report

def pde_residual_check(problem: Problem, points, step=1e-4) -> float:
    """max |-div(a grad u) - f| at the points, by central differences on grad_u."""
    pts = np.atleast_2d(points)
    div = np.zeros(len(pts))
    for d in range(2):
        e = np.zeros(2)
        e[d] = step
        flux_p = np.einsum("nij,nj->ni", problem.coefficient_at(pts + e), problem.grad_u(pts + e))
        flux_m = np.einsum("nij,nj->ni", problem.coefficient_at(pts - e), problem.grad_u(pts - e))
        div += (flux_p[:, d] - flux_m[:, d]) / (2 * step)
    return float(np.max(np.abs(-div - problem.f(pts))))


def energy_error(space: WgSpace, uh, problem: Problem, Qhu=None) -> float:
    """||Q_h u - u_h||_{a_w}."""
    coef = problem.coefficient(space.mesh)
    Qhu = project_Qh(space, problem.u) if Qhu is None else Qhu
    e = Qhu - uh
    return float(np.sqrt(max(e @ assemble(space, coef).matvec(e), 0.0)))


def eoc(errors, hs) -> list[float]:
    errors, hs = np.asarray(errors, float), np.asarray(hs, float)
    return list(np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:]))


def error_report(space: WgSpace, uh, problem: Problem) -> dict:
    return {
        "h": space.mesh.h,
        "dofs": len(space.free_dofs),
        "err_aw": energy_error(space, uh, problem),
        "err_l2": l2_error_interior(space, uh, problem.u),
    }
