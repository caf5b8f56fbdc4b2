"""Unstructured macro meshes and conforming red-green refinement in 2-d and 3-d.

A :class:`MacroMesh` is the coarse simplicial grid underneath a block-structured
hierarchy.  It carries enough genealogy to revert green closure elements and to
detect hanging nodes combinatorially: every edge midpoint ever created is kept in
``midpoints`` and a hanging node is an existing midpoint of an element edge that
is used by another active element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations, permutations
from pathlib import Path

import numpy as np

UNREFINED = "unrefined"
RED = "red"
GREEN = "green"

GREEN_TYPES_3D = ("G1", "G2", "G3")

MarkSet = frozenset


class MeshStructureError(ValueError):
    """Inconsistent topology, genealogy or input data."""


class ClosureError(RuntimeError):
    """Red-green closure ended in a hanging-node pattern it cannot close."""


@dataclass(frozen=True)
class MacroVertex:
    id: int
    coords: tuple[float, ...]
    boundary_flag: bool


@dataclass(frozen=True)
class MacroElement:
    id: int
    vertex_ids: tuple[int, ...]
    state: str = UNREFINED
    parent_id: int | None = None
    green_type: str | None = None


def edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def _signed_volume(pts: np.ndarray) -> float:
    d = pts.shape[1]
    mat = pts[1:] - pts[0]
    return float(np.linalg.det(mat)) / math.factorial(d)


@dataclass(eq=False)
class MacroMesh:
    """Coarse simplicial mesh with red-green refinement genealogy.

    ``elements`` holds the active elements sorted by id.  ``green_parents`` keeps
    the elements that were replaced by green closure so the closure can be undone.
    """

    vertices: np.ndarray
    boundary: np.ndarray
    elements: list[MacroElement]
    generation: int = 0
    midpoints: dict[tuple[int, int], int] = field(default_factory=dict)
    green_parents: dict[int, MacroElement] = field(default_factory=dict)
    next_id: int = 0

    @classmethod
    def from_arrays(cls, coords, cells) -> MacroMesh:
        """Build a fresh (generation 0) mesh; elements are reoriented to positive volume."""
        coords = np.asarray(coords, dtype=float)
        cells = np.asarray(cells, dtype=int)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise MeshStructureError("coordinates must be an (n, 2) or (n, 3) array")
        d = coords.shape[1]
        if cells.ndim != 2 or cells.shape[1] != d + 1:
            raise MeshStructureError(f"cells must have {d + 1} vertices in {d}-d")
        if not np.all(np.isfinite(coords)):
            raise MeshStructureError("non-finite vertex coordinates")
        if cells.size and (cells.min() < 0 or cells.max() >= len(coords)):
            raise MeshStructureError("cell references unknown vertex")
        elements = []
        for i, c in enumerate(cells):
            vids = _orient(coords, tuple(int(v) for v in c))
            elements.append(MacroElement(i, vids))
        mesh = cls(coords, np.zeros(len(coords), dtype=bool), elements, next_id=len(elements))
        mesh._check_elements()
        mesh.boundary = mesh._boundary_vertex_flags()
        return mesh

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def element_ids(self) -> list[int]:
        return [e.id for e in self.elements]

    def vertex(self, vid: int) -> MacroVertex:
        return MacroVertex(vid, tuple(float(x) for x in self.vertices[vid]), bool(self.boundary[vid]))

    @cached_property
    def cells(self) -> np.ndarray:
        return np.array([e.vertex_ids for e in self.elements], dtype=np.int64).reshape(-1, self.dim + 1)

    @cached_property
    def used_vertices(self) -> np.ndarray:
        return np.unique(self.cells)

    def element_coords(self) -> np.ndarray:
        return self.vertices[self.cells]

    def volumes(self) -> np.ndarray:
        pts = self.element_coords()
        mats = pts[:, 1:, :] - pts[:, :1, :]
        return np.linalg.det(mats) / math.factorial(self.dim)

    def total_volume(self) -> float:
        return float(np.sum(self.volumes()))

    @cached_property
    def edge_table(self) -> dict[tuple[int, int], list[int]]:
        table: dict[tuple[int, int], list[int]] = {}
        for e in self.elements:
            for a, b in combinations(e.vertex_ids, 2):
                table.setdefault(edge_key(a, b), []).append(e.id)
        return table

    @cached_property
    def face_table(self) -> dict[tuple[int, ...], list[int]]:
        """Facets (edges in 2-d, triangles in 3-d) with their adjacent element ids."""
        table: dict[tuple[int, ...], list[int]] = {}
        for e in self.elements:
            for f in combinations(e.vertex_ids, self.dim):
                table.setdefault(tuple(sorted(f)), []).append(e.id)
        return table

    def boundary_facets(self) -> list[tuple[int, ...]]:
        return sorted(f for f, adj in self.face_table.items() if len(adj) == 1)

    def boundary_edges(self) -> set[tuple[int, int]]:
        edges = set()
        for f in self.boundary_facets():
            for a, b in combinations(f, 2):
                edges.add(edge_key(a, b))
        return edges

    def _boundary_vertex_flags(self) -> np.ndarray:
        flags = np.zeros(len(self.vertices), dtype=bool)
        for f in self.boundary_facets():
            flags[list(f)] = True
        return flags

    def _check_elements(self) -> None:
        seen = set()
        for e in self.elements:
            if e.id in seen:
                raise MeshStructureError(f"duplicate element id {e.id}")
            seen.add(e.id)
            if len(set(e.vertex_ids)) != len(e.vertex_ids):
                raise MeshStructureError(f"element {e.id} repeats a vertex")
            if _signed_volume(self.vertices[list(e.vertex_ids)]) <= 0.0:
                raise MeshStructureError(f"element {e.id} is degenerate")

    def copy(self) -> MacroMesh:
        return MacroMesh(
            self.vertices.copy(),
            self.boundary.copy(),
            list(self.elements),
            self.generation,
            dict(self.midpoints),
            dict(self.green_parents),
            self.next_id,
        )

    def same_as(self, other: MacroMesh) -> bool:
        """Bitwise equality of geometry and active elements."""
        return (
            self.vertices.shape == other.vertices.shape
            and bool(np.array_equal(self.vertices, other.vertices))
            and self.elements == other.elements
        )


def _orient(coords: np.ndarray, vids: tuple[int, ...]) -> tuple[int, ...]:
    if _signed_volume(coords[list(vids)]) < 0.0:
        vids = vids[:-2] + (vids[-1], vids[-2])
    return vids


def mark_top_fraction(mesh: MacroMesh, indicator, fraction: float) -> frozenset[int]:
    """Ids of the ``ceil(fraction * n)`` elements with largest indicator.

    Ties are broken by ascending element id.
    """
    indicator = np.asarray(indicator, dtype=float)
    if indicator.shape != (mesh.n_elements,):
        raise MeshStructureError(
            f"indicator has {indicator.size} entries for {mesh.n_elements} elements"
        )
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"mark fraction {fraction} outside (0, 1]")
    count = math.ceil(round(fraction * mesh.n_elements, 9))
    order = sorted(range(mesh.n_elements), key=lambda i: (-indicator[i], mesh.elements[i].id))
    return frozenset(mesh.elements[i].id for i in order[:count])


def green_parent_map(mesh: MacroMesh) -> dict[int, int]:
    """Element id -> id it has after green reversion."""
    return {e.id: (e.parent_id if e.state == GREEN else e.id) for e in mesh.elements}


def revert_green(mesh: MacroMesh, marks=frozenset()) -> tuple[MacroMesh, frozenset[int]]:
    """Replace every green closure family by its parent; marks move to the parent."""
    greens = [e for e in mesh.elements if e.state == GREEN]
    if not greens:
        return mesh, frozenset(marks)
    keep = [e for e in mesh.elements if e.state != GREEN]
    restored = {}
    for g in greens:
        if g.parent_id is None or g.parent_id not in mesh.green_parents:
            raise MeshStructureError(f"green element {g.id} has no recorded parent")
        restored[g.parent_id] = mesh.green_parents[g.parent_id]
    elements = sorted(keep + list(restored.values()), key=lambda e: e.id)
    ids = {e.id for e in mesh.elements}
    unknown = set(marks) - ids
    if unknown:
        raise MeshStructureError(f"marks reference unknown elements {sorted(unknown)}")
    parent_of = green_parent_map(mesh)
    new_marks = frozenset(parent_of[m] for m in marks)
    out = MacroMesh(
        mesh.vertices,
        mesh.boundary,
        elements,
        mesh.generation,
        dict(mesh.midpoints),
        {},
        mesh.next_id,
    )
    return out, new_marks


class _Refiner:
    """Mutable working state of one red-green refinement call."""

    def __init__(self, mesh: MacroMesh):
        self.dim = mesh.dim
        self.coords = [tuple(p) for p in mesh.vertices.tolist()]
        self.midpoints = dict(mesh.midpoints)
        self.active = {e.id: e for e in mesh.elements}
        self.green_parents: dict[int, MacroElement] = {}
        self.next_id = mesh.next_id
        self.pinned: set[int] = set()
        self._live: set[int] | None = None

    # -- vertices and hanging nodes -------------------------------------------
    def midpoint(self, a: int, b: int) -> int:
        key = edge_key(a, b)
        m = self.midpoints.get(key)
        if m is None:
            pa, pb = self.coords[a], self.coords[b]
            self.coords.append(tuple(0.5 * (x + y) for x, y in zip(pa, pb)))
            m = len(self.coords) - 1
            self.midpoints[key] = m
        return m

    def invalidate(self) -> None:
        self._live = None

    @property
    def live(self) -> set[int]:
        if self._live is None:
            live = set(self.pinned)
            for e in self.active.values():
                live.update(e.vertex_ids)
            self._live = live
        return self._live

    def split_mid(self, a: int, b: int) -> int | None:
        m = self.midpoints.get(edge_key(a, b))
        return m if m is not None and m in self.live else None

    def edge_nodes(self, a: int, b: int) -> list[int]:
        return _edge_nodes(self.split_mid, a, b)

    def hanging_count(self, vids) -> int:
        return len(_simplex_nodes(self.split_mid, vids))

    # -- element construction ---------------------------------------------------
    def new_element(self, vids, state, parent_id, green_type=None) -> MacroElement:
        pts = np.array([self.coords[v] for v in vids])
        if _signed_volume(pts) < 0.0:
            vids = tuple(vids[:-2]) + (vids[-1], vids[-2])
        el = MacroElement(self.next_id, tuple(vids), state, parent_id, green_type)
        self.next_id += 1
        return el

    def replace(self, parent: MacroElement, children: list[MacroElement]) -> None:
        del self.active[parent.id]
        for c in children:
            self.active[c.id] = c
        self.invalidate()

    def red(self, el: MacroElement) -> None:
        if self.dim == 2:
            children = self._red_tri(el)
        else:
            children = self._red_tet(el)
        self.replace(el, [self.new_element(c, RED, el.id) for c in children])

    def _red_tri(self, el):
        v0, v1, v2 = el.vertex_ids
        m01, m12, m02 = self.midpoint(v0, v1), self.midpoint(v1, v2), self.midpoint(v0, v2)
        return [(v0, m01, m02), (m01, v1, m12), (m02, m12, v2), (m01, m12, m02)]

    def _red_tet(self, el):
        x0, x1, x2, x3 = el.vertex_ids
        m = {(i, j): self.midpoint(el.vertex_ids[i], el.vertex_ids[j]) for i, j in combinations(range(4), 2)}
        children = [
            (x0, m[0, 1], m[0, 2], m[0, 3]),
            (m[0, 1], x1, m[1, 2], m[1, 3]),
            (m[0, 2], m[1, 2], x2, m[2, 3]),
            (m[0, 3], m[1, 3], m[2, 3], x3),
        ]
        # inner octahedron: opposite vertex pairs are its three diagonals
        pairs = [(m[0, 1], m[2, 3]), (m[0, 2], m[1, 3]), (m[0, 3], m[1, 2])]
        lengths = [math.dist(self.coords[p], self.coords[q]) for p, q in pairs]
        shortest = min(lengths)
        candidates = [i for i, ln in enumerate(lengths) if ln <= shortest * (1.0 + 1e-12)]
        k = min(candidates, key=lambda i: edge_key(*pairs[i]))
        p, q = pairs[k]
        (r, r2), (s, s2) = [pairs[i] for i in range(3) if i != k]
        ring = (r, s, r2, s2)
        for i in range(4):
            children.append((p, q, ring[i], ring[(i + 1) % 4]))
        return children

    def green(self, el: MacroElement) -> None:
        vids = el.vertex_ids
        split = [(a, b) for a, b in combinations(vids, 2) if self.split_mid(a, b) is not None]
        total = self.hanging_count(vids)
        if total != len(split):
            raise ClosureError(f"element {el.id}: nested hanging nodes survived closure")
        if self.dim == 2:
            if len(split) != 1:
                raise ClosureError(f"triangle {el.id} has {len(split)} hanging nodes")
            children, gtype = self._green_tri(vids, split[0]), "bisection"
        else:
            children, gtype = self._green_tet(el, split)
        self.green_parents[el.id] = el
        self.replace(el, [self.new_element(c, GREEN, el.id, gtype) for c in children])

    def _green_tri(self, vids, edge):
        a, b = edge
        c = next(v for v in vids if v not in edge)
        m = self.midpoints[edge_key(a, b)]
        # keep the parent's orientation: walk the vertex cycle
        i = vids.index(a)
        if vids[(i + 1) % 3] != b:
            a, b = b, a
        return [(a, m, c), (m, b, c)]

    def _green_tet(self, el, split):
        vids = el.vertex_ids
        n = len(split)
        if n == 1:
            (a, b), = split
            c, d = [v for v in vids if v not in (a, b)]
            m = self.midpoints[edge_key(a, b)]
            return [(a, m, c, d), (m, b, c, d)], "G1"
        if n == 2:
            (a, b), (c, d) = split
            if len({a, b, c, d}) != 4:
                raise ClosureError(f"tet {el.id}: two hanging nodes on adjacent edges")
            m = self.midpoints[edge_key(a, b)]
            q = self.midpoints[edge_key(c, d)]
            return [(a, m, c, q), (a, m, q, d), (m, b, c, q), (m, b, q, d)], "G2"
        if n == 3:
            face = set()
            for e in split:
                face.update(e)
            if len(face) != 3:
                raise ClosureError(f"tet {el.id}: three hanging nodes not on one face")
            a, b, c = sorted(face, key=vids.index)
            d = next(v for v in vids if v not in face)
            mab = self.midpoints[edge_key(a, b)]
            mbc = self.midpoints[edge_key(b, c)]
            mac = self.midpoints[edge_key(a, c)]
            return [(a, mab, mac, d), (mab, b, mbc, d), (mac, mbc, c, d), (mab, mbc, mac, d)], "G3"
        raise ClosureError(f"tet {el.id} has {n} hanging nodes after closure")

    def sorted_active(self) -> list[MacroElement]:
        return [self.active[i] for i in sorted(self.active)]

    def finish(self, mesh: MacroMesh) -> MacroMesh:
        coords = np.array(self.coords, dtype=float).reshape(-1, self.dim)
        out = MacroMesh(
            coords,
            np.zeros(len(coords), dtype=bool),
            self.sorted_active(),
            mesh.generation + 1,
            self.midpoints,
            self.green_parents,
            self.next_id,
        )
        flags = out._boundary_vertex_flags()
        flags[: len(mesh.boundary)] |= mesh.boundary & ~np.isin(
            np.arange(len(mesh.boundary)), out.used_vertices
        )
        out.boundary = flags
        return out


def _check_refinable(mesh: MacroMesh, marks, dim: int) -> list[int]:
    if mesh.dim != dim:
        raise MeshStructureError(f"expected a {dim}-d mesh, got {mesh.dim}-d")
    if any(e.state == GREEN for e in mesh.elements):
        raise MeshStructureError("green elements must be reverted before refinement")
    ids = {e.id for e in mesh.elements}
    unknown = set(marks) - ids
    if unknown:
        raise MeshStructureError(f"marks reference unknown elements {sorted(unknown)}")
    return sorted(marks)


def refine_rg_2d(mesh: MacroMesh, marks) -> MacroMesh:
    """Red refinement of the marked triangles followed by red-green closure."""
    todo = _check_refinable(mesh, marks, 2)
    rf = _Refiner(mesh)
    if not todo and not any(rf.hanging_count(e.vertex_ids) for e in mesh.elements):
        return mesh
    while todo:
        for eid in todo:
            rf.red(rf.active[eid])
        todo = [e.id for e in rf.sorted_active() if rf.hanging_count(e.vertex_ids) > 1]
    for e in rf.sorted_active():
        if rf.hanging_count(e.vertex_ids) == 1:
            rf.green(e)
    return rf.finish(mesh)


def refine_rg_3d(mesh: MacroMesh, marks) -> MacroMesh:
    """Red-green refinement of tetrahedra with face-wise 2-d closure rules."""
    todo = _check_refinable(mesh, marks, 3)
    rf = _Refiner(mesh)
    if not todo and not any(rf.hanging_count(e.vertex_ids) for e in mesh.elements):
        return mesh
    while True:
        for eid in todo:
            rf.red(rf.active[eid])
        while True:
            faces = set()
            for e in rf.active.values():
                for f in combinations(e.vertex_ids, 3):
                    if rf.hanging_count(f) > 1 and any(
                        rf.split_mid(a, b) is None for a, b in combinations(f, 2)
                    ):
                        faces.add(tuple(sorted(f)))
            if not faces:
                break
            for f in sorted(faces):
                for a, b in combinations(f, 2):
                    rf.pinned.add(rf.midpoint(a, b))
            rf.invalidate()
        todo = [e.id for e in rf.sorted_active() if rf.hanging_count(e.vertex_ids) > 3]
        if not todo:
            break
    for e in rf.sorted_active():
        if rf.hanging_count(e.vertex_ids) >= 1:
            rf.green(e)
    rf.pinned.clear()
    rf.invalidate()
    return rf.finish(mesh)


def refine(mesh: MacroMesh, marks) -> MacroMesh:
    """Revert green closure, then refine the marks with the rule set of the mesh dimension."""
    reverted, marks = revert_green(mesh, marks)
    return refine_marked(reverted, marks)


def _edge_nodes(split_mid, a, b) -> list[int]:
    m = split_mid(a, b)
    if m is None:
        return []
    return [m] + _edge_nodes(split_mid, a, m) + _edge_nodes(split_mid, m, b)


def _face_interior_nodes(split_mid, a, b, c) -> list[int]:
    # nodes strictly inside a triangular face that was split into four
    mab, mbc, mac = split_mid(a, b), split_mid(b, c), split_mid(a, c)
    if mab is None or mbc is None or mac is None:
        return []
    out = []
    for p, q in ((mab, mbc), (mbc, mac), (mac, mab)):
        out += _edge_nodes(split_mid, p, q)
    for f in ((a, mab, mac), (mab, b, mbc), (mac, mbc, c), (mab, mbc, mac)):
        out += _face_interior_nodes(split_mid, *f)
    return out


def _simplex_nodes(split_mid, vids) -> list[int]:
    """Existing vertices on the boundary of a simplex, excluding its own vertices."""
    out = []
    for a, b in combinations(vids, 2):
        out += _edge_nodes(split_mid, a, b)
    if len(vids) == 4:
        for f in combinations(vids, 3):
            out += _face_interior_nodes(split_mid, *f)
    return out


def refine_marked(mesh: MacroMesh, marks) -> MacroMesh:
    """Red-green refinement of a green-free mesh with the rules of its dimension."""
    if mesh.dim == 2:
        return refine_rg_2d(mesh, marks)
    return refine_rg_3d(mesh, marks)


def adapt(mesh: MacroMesh, indicator, fraction: float) -> tuple[MacroMesh, frozenset[int]]:
    """One adaptive step: revert green closure, mark, refine.

    Indicators of green siblings are merged into their parent as the root of
    the sum of squares before marking.  Returns the new mesh and the marks
    (ids in the reverted mesh).
    """
    indicator = np.asarray(indicator, dtype=float)
    if indicator.shape != (mesh.n_elements,):
        raise MeshStructureError(
            f"indicator has {indicator.size} entries for {mesh.n_elements} elements"
        )
    reverted, _ = revert_green(mesh)
    parent = green_parent_map(mesh)
    acc: dict[int, float] = {}
    for e, val in zip(mesh.elements, indicator):
        acc[parent[e.id]] = acc.get(parent[e.id], 0.0) + val * val
    merged = np.sqrt([acc[e.id] for e in reverted.elements])
    marks = mark_top_fraction(reverted, merged, fraction)
    return refine_marked(reverted, marks), marks


def conformity_check(mesh: MacroMesh) -> list[tuple[int, int]]:
    """Hanging nodes as ``(vertex id, element id)`` pairs, found through the midpoint genealogy."""
    live = set(mesh.used_vertices.tolist())

    def split_mid(a, b):
        m = mesh.midpoints.get(edge_key(a, b))
        return m if m is not None and m in live else None

    reports = []
    for e in mesh.elements:
        reports.extend((v, e.id) for v in _simplex_nodes(split_mid, e.vertex_ids))
    return reports


def geometric_conformity_check(mesh: MacroMesh, tol: float = 1e-10) -> list[tuple[int, int]]:
    """Hanging nodes found by point-in-facet tests, independent of the genealogy.

    A vertex that lies in the closure of a facet owned by a single element,
    without being one of that facet's vertices, is reported.  Quadratic in the
    mesh size; meant for input validation and testing.
    """
    pts = mesh.vertices[mesh.used_vertices]
    used = mesh.used_vertices
    scale = float(np.ptp(pts, axis=0).max()) or 1.0
    reports: dict[tuple[int, int], None] = {}
    for facet, adj in sorted(mesh.face_table.items()):
        if len(adj) != 1:
            continue
        fp = mesh.vertices[list(facet)]
        lo, hi = fp.min(axis=0) - tol * scale, fp.max(axis=0) + tol * scale
        cand = np.all((pts >= lo) & (pts <= hi), axis=1)
        for v in used[cand]:
            if v in facet:
                continue
            if _point_in_simplex(mesh.vertices[v], fp, tol * scale):
                reports[(int(v), adj[0])] = None
    return list(reports)


def _point_in_simplex(p: np.ndarray, simplex: np.ndarray, tol: float) -> bool:
    """Whether ``p`` lies in the closed simplex spanned by the rows of ``simplex``."""
    base = simplex[0]
    mat = (simplex[1:] - base).T
    coef, *_ = np.linalg.lstsq(mat, p - base, rcond=None)
    if np.linalg.norm(mat @ coef - (p - base)) > tol:
        return False
    lam = np.concatenate([[1.0 - coef.sum()], coef])
    return bool(np.all(lam >= -1e-9))


@dataclass
class MeshQuality:
    """Per-element shape data: minimum (dihedral) angle in radians and longest edge."""

    min_angle: np.ndarray
    h: np.ndarray
    barycenters: np.ndarray

    def r(self, point) -> np.ndarray:
        return np.linalg.norm(self.barycenters - np.asarray(point, dtype=float), axis=1)


def mesh_quality(mesh: MacroMesh) -> MeshQuality:
    pts = mesh.element_coords()
    edges = [pts[:, j] - pts[:, i] for i, j in combinations(range(mesh.dim + 1), 2)]
    h = np.max(np.stack([np.linalg.norm(e, axis=1) for e in edges], axis=1), axis=1)
    if mesh.dim == 2:
        angles = _triangle_min_angles(pts)
    else:
        angles = _tet_min_dihedral(pts)
    return MeshQuality(angles, h, pts.mean(axis=1))


def _angle(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.einsum("...i,...i->...", u, v) / (nu * nv)
    ang = np.arccos(np.clip(c, -1.0, 1.0))
    return np.where((nu > 0) & (nv > 0), ang, 0.0)


def _triangle_min_angles(pts: np.ndarray) -> np.ndarray:
    a = [_angle(pts[:, (i + 1) % 3] - pts[:, i], pts[:, (i + 2) % 3] - pts[:, i]) for i in range(3)]
    out = np.min(np.stack(a, axis=1), axis=1)
    d1, d2 = pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]
    vol = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return np.where(vol > 0, out, 0.0)


def _tet_min_dihedral(pts: np.ndarray) -> np.ndarray:
    out = np.full(len(pts), np.pi)
    for i, j in combinations(range(4), 2):
        k, l = [v for v in range(4) if v not in (i, j)]
        e = pts[:, j] - pts[:, i]
        n1 = np.cross(e, pts[:, k] - pts[:, i])
        n2 = np.cross(e, pts[:, l] - pts[:, i])
        out = np.minimum(out, _angle(n1, n2))
    vol = np.abs(np.einsum("ij,ij->i", np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), pts[:, 3] - pts[:, 0]))
    return np.where(vol > 0, out, 0.0)


def kuhn_box(n: int) -> MacroMesh:
    """Unit cube split into ``n**3`` cubes of six Kuhn tetrahedra each."""
    g = np.linspace(0.0, 1.0, n + 1)
    coords = np.array([(x, y, z) for x in g for y in g for z in g])

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    cells = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for perm in permutations(range(3)):
                    p = [i, j, k]
                    path = [vid(*p)]
                    for ax in perm:
                        p[ax] += 1
                        path.append(vid(*p))
                    cells.append(path)
    return MacroMesh.from_arrays(coords, np.array(cells))


# -- ASCII mesh format ----------------------------------------------------------

def format_mesh(mesh: MacroMesh) -> str:
    lines = [f"dim {mesh.dim}", f"vertices {len(mesh.vertices)}"]
    for i, (p, b) in enumerate(zip(mesh.vertices, mesh.boundary)):
        lines.append(" ".join([str(i), *(repr(float(x)) for x in p), str(int(b))]))
    lines.append(f"elements {mesh.n_elements}")
    for e in mesh.elements:
        lines.append(" ".join(str(v) for v in (e.id, *e.vertex_ids)))
    return "\n".join(lines) + "\n"


def parse_mesh(text: str) -> MacroMesh:
    """Parse the ASCII mesh format; rejects malformed or non-conforming input."""
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        if rows[0][0] != "dim":
            raise MeshStructureError("mesh file must start with 'dim d'")
        d = int(rows[0][1])
        if d not in (2, 3) or rows[1][0] != "vertices":
            raise MeshStructureError("bad header")
        nv = int(rows[1][1])
        vrows = rows[2 : 2 + nv]
        erow = rows[2 + nv]
        if erow[0] != "elements":
            raise MeshStructureError("missing 'elements' section")
        ne = int(erow[1])
        crows = rows[3 + nv : 3 + nv + ne]
    except (IndexError, ValueError) as exc:
        raise MeshStructureError(f"malformed mesh file: {exc}") from exc
    if len(vrows) != nv or len(crows) != ne:
        raise MeshStructureError("section lengths do not match the header counts")
    coords = np.zeros((nv, d))
    flags = np.zeros(nv, dtype=bool)
    seen = set()
    for r in vrows:
        if len(r) != d + 2:
            raise MeshStructureError(f"vertex line has {len(r)} fields: {' '.join(r)}")
        vid = int(r[0])
        if not 0 <= vid < nv or vid in seen:
            raise MeshStructureError(f"vertex ids must be a permutation of 0..{nv - 1}")
        seen.add(vid)
        coords[vid] = [float(x) for x in r[1 : d + 1]]
        flags[vid] = bool(int(r[d + 1]))
    elements = []
    for r in crows:
        if len(r) != d + 2:
            raise MeshStructureError(f"element line has {len(r)} fields: {' '.join(r)}")
        vids = tuple(int(x) for x in r[1:])
        if any(not 0 <= v < nv for v in vids):
            raise MeshStructureError(f"element {r[0]} references unknown vertex")
        elements.append(MacroElement(int(r[0]), _orient(coords, vids)))
    elements.sort(key=lambda e: e.id)
    next_id = max((e.id for e in elements), default=-1) + 1
    mesh = MacroMesh(coords, flags, elements, next_id=next_id)
    mesh._check_elements()
    hanging = geometric_conformity_check(mesh)
    if hanging:
        raise MeshStructureError(f"non-conforming mesh: {len(hanging)} hanging node(s), e.g. {hanging[0]}")
    return mesh


def read_mesh(path) -> MacroMesh:
    return parse_mesh(Path(path).read_text())


def write_mesh(mesh: MacroMesh, path) -> None:
    Path(path).write_text(format_mesh(mesh))
