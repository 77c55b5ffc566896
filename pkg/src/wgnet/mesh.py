"""Polygonal meshes: generators, uniform refinement and a plain-text format."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quadrature import centroid, is_simple, signed_area

SHAPE_BOUND = 20.0


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable polygonal mesh of a 2D domain.

    ``cells`` are counterclockwise vertex index tuples. Edges are stored with
    ascending vertex indices; ``edge_cells[e]`` holds the incident cells with
    -1 marking the missing neighbour of a boundary edge. ``cell_edges[c][i]``
    is the edge joining local vertices i and i+1 of cell c.
    """

    vertices: np.ndarray
    cells: tuple[tuple[int, ...], ...]
    shape_bound: float = SHAPE_BOUND
    edges: np.ndarray = field(init=False)
    edge_cells: np.ndarray = field(init=False)
    cell_edges: tuple[tuple[int, ...], ...] = field(init=False)
    areas: np.ndarray = field(init=False)
    diameters: np.ndarray = field(init=False)
    centroids: np.ndarray = field(init=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        cells = tuple(tuple(int(i) for i in c) for c in self.cells)
        set_ = object.__setattr__
        set_(self, "vertices", verts)
        set_(self, "cells", cells)

        edge_index: dict[tuple[int, int], int] = {}
        edges, owners, cell_edges = [], [], []
        areas, diams, cents = [], [], []
        for c, cell in enumerate(cells):
            if len(cell) < 3:
                raise MeshError(f"cell {c} has fewer than 3 vertices")
            if len(set(cell)) != len(cell):
                raise MeshError(f"degenerate cell {c}: repeated vertex index")
            if min(cell) < 0 or max(cell) >= len(verts):
                raise MeshError(f"cell {c} references a missing vertex")
            poly = verts[list(cell)]
            area = signed_area(poly)
            diam = _diameter(poly)
            if area <= 1e-14 * diam**2:
                raise MeshError(f"cell {c} has zero or negative area (must be counterclockwise)")
            if len(cell) > 3 and not is_simple(poly):
                raise MeshError(f"cell {c} is not a simple polygon")
            if diam**2 / area > self.shape_bound:
                raise MeshError(f"cell {c} violates shape regularity (h^2/area = {diam**2 / area:.3g})")
            local = []
            for i in range(len(cell)):
                a, b = cell[i], cell[(i + 1) % len(cell)]
                key = (min(a, b), max(a, b))
                e = edge_index.get(key)
                if e is None:
                    e = edge_index[key] = len(edges)
                    edges.append(key)
                    owners.append([c])
                else:
                    if len(owners[e]) >= 2:
                        raise MeshError(f"non-manifold edge {key}: shared by more than two cells")
                    owners[e].append(c)
                local.append(e)
            cell_edges.append(tuple(local))
            areas.append(area)
            diams.append(diam)
            cents.append(centroid(poly))

        edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
        for e, own in enumerate(owners):
            edge_cells[e, : len(own)] = own
        set_(self, "edges", np.array(edges, dtype=np.int64).reshape(-1, 2))
        set_(self, "edge_cells", edge_cells)
        set_(self, "cell_edges", tuple(cell_edges))
        set_(self, "areas", np.array(areas))
        set_(self, "diameters", np.array(diams))
        set_(self, "centroids", np.array(cents).reshape(-1, 2))

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @property
    def is_boundary_edge(self) -> np.ndarray:
        return self.edge_cells[:, 1] < 0

    def cell_vertices(self, c: int) -> np.ndarray:
        return self.vertices[list(self.cells[c])]

    def edge_points(self, e: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.edges[e]
        return self.vertices[a], self.vertices[b]

    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def area(self) -> float:
        return float(self.areas.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        return self.cells == other.cells and np.array_equal(self.vertices, other.vertices)

    def __repr__(self) -> str:
        return f"Mesh(n_vertices={len(self.vertices)}, n_cells={self.n_cells}, n_edges={self.n_edges}, h={self.h:.4g})"


def _diameter(poly: np.ndarray) -> float:
    d = poly[:, None, :] - poly[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def _grid_cells(nx, ny, keep, cell_kind, vid):
    cells = []
    for j in range(ny):
        for i in range(nx):
            if not keep(i, j):
                continue
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if cell_kind == "quad":
                cells.append((a, b, c, d))
            elif cell_kind == "triangle":
                cells.append((a, b, c))
                cells.append((a, c, d))
            else:
                raise ValueError(f"unknown cell kind {cell_kind!r}")
    return cells


def _compact(vertices, cells):
    used = sorted({i for c in cells for i in c})
    remap = {old: new for new, old in enumerate(used)}
    return vertices[used], [tuple(remap[i] for i in c) for c in cells]


def generate_square_mesh(n: int, cell_kind: str = "quad") -> Mesh:
    """Uniform mesh of the unit square with n cells per side."""
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    cells = _grid_cells(n, n, lambda i, j: True, cell_kind, lambda i, j: j * (n + 1) + i)
    return Mesh(verts, cells)


def generate_lshape_mesh(n: int, cell_kind: str = "quad") -> Mesh:
    """Mesh of (-1,1)^2 minus [0,1]x[-1,0] with n cells per unit block side."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = 2 * n
    xs = np.linspace(-1.0, 1.0, m + 1)
    X, Y = np.meshgrid(xs, xs)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    cells = _grid_cells(m, m, lambda i, j: not (i >= n and j < n), cell_kind, lambda i, j: j * (m + 1) + i)
    verts, cells = _compact(verts, cells)
    return Mesh(verts, cells)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Split every triangle and quadrilateral into four children."""
    sizes = {len(c) for c in mesh.cells}
    if not sizes <= {3, 4}:
        raise MeshError("uniform refinement supports triangles and quadrilaterals only")
    nv, ne = len(mesh.vertices), mesh.n_edges
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    centers, cells = [], []
    for c, cell in enumerate(mesh.cells):
        m = [nv + e for e in mesh.cell_edges[c]]
        if len(cell) == 3:
            a, b, cc = cell
            cells += [(a, m[0], m[2]), (m[0], b, m[1]), (m[2], m[1], cc), (m[0], m[1], m[2])]
        else:
            z = nv + ne + len(centers)
            centers.append(mesh.vertices[list(cell)].mean(axis=0))
            a, b, cc, d = cell
            cells += [(a, m[0], z, m[3]), (m[0], b, m[1], z), (z, m[1], cc, m[2]), (m[3], z, m[2], d)]
    verts = np.vstack([mesh.vertices, mids] + ([np.array(centers)] if centers else []))
    return Mesh(verts, cells, shape_bound=mesh.shape_bound)


def save_mesh(mesh: Mesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("wgmesh 1\n")
        fh.write(f"{len(mesh.vertices)} {mesh.n_cells}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for cell in mesh.cells:
            fh.write(" ".join(str(v) for v in (len(cell), *cell)) + "\n")


def load_mesh(path) -> Mesh:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln and not ln.startswith("#")]

    def fail(lineno, msg):
        raise MeshError(f"{path}: line {lineno}: {msg}")

    if not lines or lines[0][1].split() != ["wgmesh", "1"]:
        fail(lines[0][0] if lines else 1, "expected header 'wgmesh 1'")
    if len(lines) < 2:
        fail(1, "missing counts line")
    lineno, text = lines[1]
    try:
        nv, nc = (int(t) for t in text.split())
    except ValueError:
        fail(lineno, "expected '<n_vertices> <n_cells>'")
    if len(lines) != 2 + nv + nc:
        fail(lines[-1][0], f"expected {nv} vertex lines and {nc} cell lines")
    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, text = lines[2 + i]
        parts = text.split()
        if len(parts) != 2:
            fail(lineno, "vertex line needs 2 fields")
        try:
            verts[i] = [float(p) for p in parts]
        except ValueError:
            fail(lineno, "vertex coordinate is not a number")
    cells = []
    for i in range(nc):
        lineno, text = lines[2 + nv + i]
        try:
            parts = [int(p) for p in text.split()]
        except ValueError:
            fail(lineno, "cell line must contain integers")
        if not parts or parts[0] != len(parts) - 1:
            fail(lineno, "cell vertex count does not match the number of indices")
        cells.append(tuple(parts[1:]))
    try:
        return Mesh(verts, cells)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None


def check_interface_aligned(mesh: Mesh, x_interface: float) -> bool:
    for cell in mesh.cells:
        xs = mesh.vertices[list(cell), 0] - x_interface
        if xs.min() < -1e-12 and xs.max() > 1e-12:
            return False
    return True
