"""Quadrature on edges, triangles and simple polygons.

Every rule is returned in physical coordinates. Triangle rules are collapsed
(Duffy) tensor products of Gauss-Legendre and Gauss-Jacobi points, so any
exactness degree is available with strictly positive weights. Polygons are
integrated through a fan about the area centroid, falling back to an ear
clipping triangulation for cells that are not star-shaped about it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.points)))

    def __len__(self) -> int:
        return len(self.weights)


def merge(rules, degree: int) -> QuadratureRule:
    rules = list(rules)
    return QuadratureRule(
        np.concatenate([r.points for r in rules]),
        np.concatenate([r.weights for r in rules]),
        degree,
    )


@lru_cache(maxsize=None)
def gauss_legendre_01(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def _npts_1d(degree: int) -> int:
    return max(1, -(-(degree + 1) // 2))


@lru_cache(maxsize=None)
def reference_triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the triangle (0,0), (1,0), (0,1); weights sum to 1/2."""
    m = _npts_1d(degree)
    u, wu = gauss_legendre_01(m)
    # the collapsed direction carries the Jacobian (1 - v)
    t, wt = roots_jacobi(m, 1.0, 0.0)
    v = 0.5 * (t + 1.0)
    wv = 0.25 * wt
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.column_stack([(U * (1.0 - V)).ravel(), V.ravel()])
    return pts, W.ravel()


def signed_area(poly) -> float:
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def centroid(poly) -> np.ndarray:
    poly = np.asarray(poly, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def edge_rule(edge, degree: int) -> QuadratureRule:
    """Gauss rule with ceil((degree+1)/2) points on the segment ``edge``."""
    if degree < 0:
        raise ValueError("quadrature degree must be non-negative")
    p0, p1 = (np.asarray(p, dtype=float) for p in edge)
    s, w = gauss_legendre_01(_npts_1d(degree))
    length = float(np.hypot(*(p1 - p0)))
    return QuadratureRule(p0 + np.outer(s, p1 - p0), w * length, degree)


def composite_edge_rule(edge, subdivisions: int, degree: int) -> QuadratureRule:
    p0, p1 = (np.asarray(p, dtype=float) for p in edge)
    ts = np.linspace(0.0, 1.0, subdivisions + 1)
    return merge(
        (edge_rule((p0 + a * (p1 - p0), p0 + b * (p1 - p0)), degree) for a, b in zip(ts[:-1], ts[1:])),
        degree,
    )


def triangle_rule(tri, degree: int) -> QuadratureRule:
    tri = np.asarray(tri, dtype=float)
    a, b, c = tri
    det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    scale = max(np.ptp(tri[:, 0]), np.ptp(tri[:, 1]), 1e-300)
    if abs(det) <= 1e-14 * scale**2:
        raise ValueError("degenerate triangle")
    ref, w = reference_triangle_rule(degree)
    pts = a + ref[:, :1] * (b - a) + ref[:, 1:] * (c - a)
    return QuadratureRule(pts, w * abs(det), degree)


def _segments_cross(p, q, r, s) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(r, s, p), orient(r, s, q)
    d3, d4 = orient(p, q, r), orient(p, q, s)
    return d1 * d2 < 0 and d3 * d4 < 0


def is_simple(poly) -> bool:
    poly = np.asarray(poly, dtype=float)
    m = len(poly)
    for i in range(m):
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue
            if _segments_cross(poly[i], poly[(i + 1) % m], poly[j], poly[(j + 1) % m]):
                return False
    return True


def _ear_clip(poly) -> list[np.ndarray]:
    idx = list(range(len(poly)))
    tris = []
    while len(idx) > 3:
        for n in range(len(idx)):
            i0, i1, i2 = idx[n - 1], idx[n], idx[(n + 1) % len(idx)]
            tri = poly[[i0, i1, i2]]
            if signed_area(tri) <= 0:
                continue
            others = [poly[j] for j in idx if j not in (i0, i1, i2)]
            if any(_inside_triangle(p, tri) for p in others):
                continue
            tris.append(tri)
            idx.pop(n)
            break
        else:
            raise ValueError("polygon could not be triangulated")
    tris.append(poly[idx])
    return tris


def _inside_triangle(p, tri) -> bool:
    a, b, c = tri
    s1 = signed_area([a, b, p])
    s2 = signed_area([b, c, p])
    s3 = signed_area([c, a, p])
    return s1 >= 0 and s2 >= 0 and s3 >= 0


def fan_triangles(cell) -> list[np.ndarray]:
    """Positively oriented triangles covering a counterclockwise simple polygon."""
    poly = np.asarray(cell, dtype=float)
    if len(poly) == 3:
        return [poly]
    if not is_simple(poly):
        raise ValueError("self-intersecting polygon")
    c = centroid(poly)
    tris = [np.array([c, poly[i], poly[(i + 1) % len(poly)]]) for i in range(len(poly))]
    area = abs(signed_area(poly))
    if all(signed_area(t) > 1e-12 * area for t in tris):
        return tris
    return _ear_clip(poly)


def polygon_rule(cell, degree: int) -> QuadratureRule:
    return merge((triangle_rule(t, degree) for t in fan_triangles(cell)), degree)


def subdivide_triangle(tri, s: int) -> list[np.ndarray]:
    """Split a triangle into s**2 congruent, equally oriented sub-triangles."""
    a, b, c = np.asarray(tri, dtype=float)

    def node(i, j):
        return a + (i / s) * (b - a) + (j / s) * (c - a)

    out = []
    for i in range(s):
        for j in range(s - i):
            out.append(np.array([node(i, j), node(i + 1, j), node(i, j + 1)]))
            if i + j <= s - 2:
                out.append(np.array([node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)]))
    return out


def neural_rule(cell, subdivisions: int, degree: int) -> QuadratureRule:
    """Composite rule for non-polynomial integrands such as network outputs."""
    if subdivisions < 1:
        raise ValueError("subdivisions must be >= 1")
    tris = [t for f in fan_triangles(cell) for t in subdivide_triangle(f, subdivisions)]
    return merge((triangle_rule(t, degree) for t in tris), degree)


def monomial_moment_table(max_degree: int) -> list[tuple[str, int, int, float]]:
    """Relative errors of the rules on x^a y^b against closed-form moments.

    Rows are (domain, a, b, relative error). Domains are the unit right
    triangle, where the moment is a! b! / (a+b+2)!, the unit square via the
    polygon rule and the unit interval via the edge rule.
    """
    from math import factorial

    tri = triangle_rule([[0, 0], [1, 0], [0, 1]], max_degree)
    sq = polygon_rule([[0, 0], [1, 0], [1, 1], [0, 1]], max_degree)
    seg = edge_rule(([0.0, 0.0], [1.0, 0.0]), max_degree)
    rows = []
    for d in range(max_degree + 1):
        for a in range(d + 1):
            b = d - a
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            got = np.dot(tri.weights, tri.points[:, 0] ** a * tri.points[:, 1] ** b)
            rows.append(("triangle", a, b, abs(got - exact) / exact))
            exact = 1.0 / ((a + 1) * (b + 1))
            got = np.dot(sq.weights, sq.points[:, 0] ** a * sq.points[:, 1] ** b)
            rows.append(("square", a, b, abs(got - exact) / exact))
        got = np.dot(seg.weights, seg.points[:, 0] ** d)
        rows.append(("interval", d, 0, abs(got - 1.0 / (d + 1)) * (d + 1)))
    return rows
