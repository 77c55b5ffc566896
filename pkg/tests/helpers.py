"""Shared builders for the test-suite."""

import numpy as np

from wgnet.mesh import Mesh


def single_cell_mesh(poly):
    poly = np.asarray(poly, dtype=float)
    return Mesh(poly, [tuple(range(len(poly)))])


def random_cell(rng, kind):
    """A random shape-regular triangle, quadrilateral or convex polygon."""
    if kind == "triangle":
        nv = 3
    elif kind == "quad":
        nv = 4
    else:
        nv = int(rng.integers(5, 8))
    # keep the angular gaps away from zero so the polygon is not degenerate
    ang = np.linspace(0, 2 * np.pi, nv, endpoint=False) + rng.uniform(-0.25, 0.25, nv) * (2 * np.pi / nv)
    rad = rng.uniform(0.6, 1.0, nv)
    scale = rng.uniform(0.2, 2.0)
    shift = rng.uniform(-2, 2, 2)
    return shift + scale * np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


def random_polynomial(rng, degree):
    """Random polynomial of total degree <= degree and its gradient."""
    exps = [(a, d - a) for d in range(degree + 1) for a in range(d + 1)]
    coef = rng.standard_normal(len(exps))

    def u(p):
        x, y = p[:, 0], p[:, 1]
        return sum(c * x**a * y**b for c, (a, b) in zip(coef, exps))

    def grad(p):
        x, y = p[:, 0], p[:, 1]
        gx = sum(c * a * x ** max(a - 1, 0) * y**b for c, (a, b) in zip(coef, exps) if a)
        gy = sum(c * b * x**a * y ** max(b - 1, 0) for c, (a, b) in zip(coef, exps) if b)
        return np.column_stack([np.broadcast_to(gx, x.shape), np.broadcast_to(gy, x.shape)])

    return u, grad
