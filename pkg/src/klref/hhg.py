"""Hierarchical hybrid grids: structured triangle lattices on top of a macro mesh.

Every macro triangle ``(v0, v1, v2)`` carries at level ``l`` the lattice of
points ``v0 + (i/N)(v1 - v0) + (j/N)(v2 - v0)`` with ``N = 2**l`` and
``i + j <= N``.  Lattice points are packed row by row (``j`` outer, ``i``
inner).

Global numbering per level puts all interface nodes first: used macro
vertices, then interior nodes of macro edges (sorted edges, nodes ordered
from the lower vertex id), then the interior nodes of each macro face.  A
macro edge node is owned by the first macro (lowest position) that touches
it; the other macros hold copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .macro_mesh import MacroMesh, MeshStructureError


def lattice_size(N: int) -> int:
    return (N + 1) * (N + 2) // 2


def lattice_index(i, j, N: int):
    return j * (N + 1) - j * (j - 1) // 2 + i


def lattice_ij(N: int) -> tuple[np.ndarray, np.ndarray]:
    j = np.repeat(np.arange(N + 1), np.arange(N + 1, 0, -1))
    i = np.arange(lattice_size(N)) - lattice_index(0, j, N)
    return i, j


@dataclass
class LevelData:
    """Index maps of one level.

    ``idx[m, p]`` is the global id of lattice point ``p`` of macro ``m``;
    ``owned[m, p]`` marks the copy that owns the node.
    """

    level: int
    N: int
    idx: np.ndarray
    owned: np.ndarray
    n: int
    n_if: int
    boundary: np.ndarray

    @property
    def P(self) -> int:
        return lattice_size(self.N)

    @property
    def n_elements(self) -> int:
        return self.idx.shape[0] * self.N * self.N


@dataclass
class GridHierarchy:
    """Nested lattices for levels ``0..L`` over a 2-d macro mesh."""

    macro: MacroMesh
    L: int
    levels: list[LevelData]
    corners: np.ndarray  # (M, 3, 2) macro vertex coordinates
    macro_ids: np.ndarray
    vertex_map: np.ndarray  # macro vertex id -> global id, -1 if unused
    edges: np.ndarray  # (E, 2) sorted macro edges
    boundary_edges: np.ndarray  # (E,) bool
    _coords_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_macros(self) -> int:
        return len(self.corners)

    def __getitem__(self, level: int) -> LevelData:
        return self.levels[level]

    def dofs(self, level: int | None = None) -> int:
        return self.levels[self.L if level is None else level].n

    def macro_areas(self) -> np.ndarray:
        c = self.corners
        d1 = c[:, 1] - c[:, 0]
        d2 = c[:, 2] - c[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def fine_areas(self, level: int) -> np.ndarray:
        return self.macro_areas() / 4.0**level

    def lattice_coords(self, level: int, macros=None) -> np.ndarray:
        """Coordinates ``(m, P, 2)`` of the lattice points of the given macros."""
        N = 2**level
        i, j = lattice_ij(N)
        c = self.corners if macros is None else self.corners[macros]
        s = (i / N)[None, :, None]
        t = (j / N)[None, :, None]
        return c[:, None, 0] + s * (c[:, None, 1] - c[:, None, 0]) + t * (c[:, None, 2] - c[:, None, 0])

    def interface_coords(self, level: int) -> np.ndarray:
        """Coordinates of the interface nodes ``0..n_if-1``."""
        lev = self.levels[level]
        out = np.empty((lev.n_if, 2))
        nv = int(np.count_nonzero(self.vertex_map >= 0))
        used = np.flatnonzero(self.vertex_map >= 0)
        out[self.vertex_map[used]] = self.macro.vertices[used]
        N = lev.N
        if N > 1:
            t = np.arange(1, N) / N
            a = self.macro.vertices[self.edges[:, 0]]
            b = self.macro.vertices[self.edges[:, 1]]
            pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
            out[nv:] = pts.reshape(-1, 2)
        return out

    def coordinates(self, level: int) -> np.ndarray:
        """Coordinates of all global nodes of a level, shape ``(n, 2)``."""
        if level not in self._coords_cache:
            lev = self.levels[level]
            x = np.empty((lev.n, 2))
            xl = self.lattice_coords(level)
            x[lev.idx[lev.owned]] = xl[lev.owned]
            self._coords_cache.clear()
            self._coords_cache[level] = x
        return self._coords_cache[level]

    def node_coordinates(self, macro_id: int, level: int, index) -> np.ndarray:
        """Point of lattice index ``(i, j)`` in the macro with element id ``macro_id``."""
        pos = np.searchsorted(self.macro_ids, macro_id)
        if pos >= len(self.macro_ids) or self.macro_ids[pos] != macro_id:
            raise MeshStructureError(f"unknown macro id {macro_id}")
        if not 0 <= level <= self.L:
            raise MeshStructureError(f"level {level} outside 0..{self.L}")
        N = 2**level
        i, j = index
        if i < 0 or j < 0 or i + j > N:
            raise MeshStructureError(f"lattice index {(i, j)} outside level-{level} lattice")
        c = self.corners[pos]
        return c[0] + (i / N) * (c[1] - c[0]) + (j / N) * (c[2] - c[0])

    def truncated(self, L: int) -> GridHierarchy:
        """The same hierarchy restricted to levels ``0..L`` (shares the index maps)."""
        if not 0 <= L <= self.L:
            raise MeshStructureError(f"cannot truncate a level-{self.L} hierarchy to {L}")
        return GridHierarchy(
            self.macro, L, self.levels[: L + 1], self.corners, self.macro_ids, self.vertex_map, self.edges,
            self.boundary_edges,
        )

    def fine_triangles(self, level: int) -> np.ndarray:
        """Global vertex ids of all fine triangles, shape ``(M * N**2, 3)``."""
        lev = self.levels[level]
        up, down = lattice_triangles(lev.N)
        tri = np.concatenate([lev.idx[:, up], lev.idx[:, down]], axis=1)
        return tri.reshape(-1, 3)


def lattice_triangles(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Local packed indices of the up and down triangles of an ``N`` lattice.

    Up: ``(i,j), (i+1,j), (i,j+1)``; down: ``(i+1,j+1), (i,j+1), (i+1,j)``.
    Both have the orientation of the macro triangle.
    """
    i, j = lattice_ij(N)
    sel = i + j <= N - 1
    iu, ju = i[sel], j[sel]
    up = np.stack([lattice_index(iu, ju, N), lattice_index(iu + 1, ju, N), lattice_index(iu, ju + 1, N)], axis=1)
    sel = i + j <= N - 2
    idn, jd = i[sel], j[sel]
    down = np.stack(
        [lattice_index(idn + 1, jd + 1, N), lattice_index(idn, jd + 1, N), lattice_index(idn + 1, jd, N)], axis=1
    )
    return up, down


def build_hierarchy(macro: MacroMesh, L: int) -> GridHierarchy:
    """Index maps for levels ``0..L`` over a conforming 2-d macro mesh."""
    if macro.dim != 2:
        raise MeshStructureError("structured hierarchies are only available for 2-d macro meshes")
    if L < 0:
        raise ValueError(f"L must be nonnegative, got {L}")
    cells = macro.cells
    M = len(cells)
    used = macro.used_vertices
    vertex_map = np.full(len(macro.vertices), -1, dtype=np.int64)
    vertex_map[used] = np.arange(len(used))
    edge_list = sorted(macro.edge_table)
    edges = np.array(edge_list, dtype=np.int64).reshape(-1, 2)
    edge_pos = {e: k for k, e in enumerate(edge_list)}
    bedges = macro.boundary_edges()
    boundary_edges = np.array([e in bedges for e in edge_list], dtype=bool)
    bverts = np.zeros(len(macro.vertices), dtype=bool)
    for f in macro.boundary_facets():
        bverts[list(f)] = True

    local = ((0, 1), (0, 2), (1, 2))
    eid = np.empty((M, 3), dtype=np.int64)
    forward = np.empty((M, 3), dtype=bool)
    for m, c in enumerate(cells):
        for k, (a, b) in enumerate(local):
            va, vb = int(c[a]), int(c[b])
            eid[m, k] = edge_pos[(min(va, vb), max(va, vb))]
            forward[m, k] = va < vb

    levels = []
    for level in range(L + 1):
        try:
            levels.append(_build_level(level, cells, vertex_map, eid, forward, edges, boundary_edges, bverts, len(used)))
        except MemoryError as exc:
            raise MemoryError(f"out of memory building level {level}") from exc
    corners = macro.vertices[cells]
    return GridHierarchy(
        macro,
        L,
        levels,
        corners,
        np.array(macro.element_ids, dtype=np.int64),
        vertex_map,
        edges,
        boundary_edges,
    )


def _build_level(level, cells, vertex_map, eid, forward, edges, boundary_edges, bverts, nv) -> LevelData:
    N = 2**level
    M = len(cells)
    P = lattice_size(N)
    ne = len(edges)
    ni = N - 1
    n_if = nv + ne * ni
    Q = (N - 1) * (N - 2) // 2
    n = n_if + M * Q
    if n >= np.iinfo(np.int32).max:
        raise MemoryError(f"level {level} has {n} nodes, beyond int32 indexing")
    idx = np.empty((M, P), dtype=np.int32)
    i, j = lattice_ij(N)
    inner = (i >= 1) & (j >= 1) & (i + j <= N - 1)
    idx[:, inner] = (n_if + np.arange(M)[:, None] * Q + np.arange(Q)[None, :]).astype(np.int32)
    idx[:, lattice_index(0, 0, N)] = vertex_map[cells[:, 0]]
    if N >= 1:
        idx[:, lattice_index(N, 0, N)] = vertex_map[cells[:, 1]]
        idx[:, lattice_index(0, N, N)] = vertex_map[cells[:, 2]]
    t = np.arange(1, N)
    if ni > 0:
        pos = [lattice_index(t, 0 * t, N), lattice_index(0 * t, t, N), lattice_index(N - t, t, N)]
        for k in range(3):
            frac = np.where(forward[:, k, None], t[None, :], N - t[None, :])
            idx[:, pos[k]] = nv + eid[:, k, None] * ni + frac - 1

    # ownership: first macro in storage order owns each interface node
    owned = np.zeros((M, P), dtype=bool)
    owned[:, inner] = True
    rim = np.flatnonzero(~inner)
    rim_ids = idx[:, rim].ravel()
    _, first = np.unique(rim_ids, return_index=True)
    flat = np.zeros(M * len(rim), dtype=bool)
    flat[first] = True
    owned[:, rim] = flat.reshape(M, len(rim))

    boundary = np.zeros(n, dtype=bool)
    used = np.flatnonzero(vertex_map >= 0)
    boundary[vertex_map[used]] = bverts[used]
    if ni > 0:
        bmask = np.repeat(boundary_edges, ni)
        boundary[nv:n_if] = bmask
    return LevelData(level, N, idx, owned, n, n_if, boundary)


@dataclass
class GridFunction:
    """P1 coefficients stored per macro, with copies of shared interface nodes."""

    hierarchy: GridHierarchy
    level: int
    values: np.ndarray  # (M, P)

    @classmethod
    def from_global(cls, h: GridHierarchy, level: int, vec) -> GridFunction:
        vec = np.asarray(vec, dtype=float)
        lev = h[level]
        if vec.shape != (lev.n,):
            raise MeshStructureError(f"vector of length {vec.size} does not match level {level} ({lev.n})")
        return cls(h, level, vec[lev.idx])

    @classmethod
    def zeros(cls, h: GridHierarchy, level: int) -> GridFunction:
        lev = h[level]
        return cls(h, level, np.zeros(lev.idx.shape))

    @classmethod
    def interpolate(cls, h: GridHierarchy, level: int, func) -> GridFunction:
        x = h.lattice_coords(level)
        return cls(h, level, np.asarray(func(x[..., 0], x[..., 1]), dtype=float))

    def to_global(self) -> np.ndarray:
        """Owner values as a flat vector."""
        lev = self.hierarchy[self.level]
        out = np.empty(lev.n)
        out[lev.idx[lev.owned]] = self.values[lev.owned]
        return out

    def copy(self) -> GridFunction:
        return GridFunction(self.hierarchy, self.level, self.values.copy())


def interface_sync(f: GridFunction, mode: str = "replace") -> GridFunction:
    """Make all copies of a node agree.

    ``replace`` copies the owner's value; ``additive`` sums all copies and
    hands the sum back to every copy.
    """
    lev = f.hierarchy[f.level]
    if mode == "replace":
        vec = f.to_global()
    elif mode == "additive":
        vec = np.bincount(lev.idx.ravel(), weights=f.values.ravel(), minlength=lev.n)
    else:
        raise ValueError(f"unknown sync mode {mode!r}")
    return GridFunction(f.hierarchy, f.level, vec[lev.idx])


def write_vtk(path, h: GridHierarchy, level: int, fields: dict[str, np.ndarray] | None = None) -> None:
    """Legacy ASCII VTK unstructured grid of a level, with optional point data."""
    x = h.coordinates(level)
    tri = h.fine_triangles(level)
    lines = ["# vtk DataFile Version 3.0", f"klref level {level}", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(x)} double")
    lines.extend(f"{p[0]:.17g} {p[1]:.17g} 0" for p in x)
    lines.append(f"CELLS {len(tri)} {4 * len(tri)}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in tri)
    lines.append(f"CELL_TYPES {len(tri)}")
    lines.extend("5" for _ in range(len(tri)))
    if fields:
        lines.append(f"POINT_DATA {len(x)}")
        for name, vals in fields.items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (len(x),):
                raise MeshStructureError(f"field {name} has wrong length")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.17g}" for v in vals)
    Path(path).write_text("\n".join(lines) + "\n")
