"""Matrix-free P1 operators on a grid hierarchy.

Vectors are flat arrays over the global nodes of one level.  Face-interior
rows are applied with a constant 7-point stencil per macro; interface rows
(macro vertices and edges) use a small CSR block assembled from the fine
triangles touching the macro boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels as K
from .hhg import GridFunction, GridHierarchy, lattice_ij, lattice_triangles
from .macro_mesh import MeshStructureError
from .problems import Problem, evaluate

STIFFNESS = "stiffness"
MASS = "mass"

_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def stiffness_element_matrix(pts: np.ndarray) -> np.ndarray:
    """P1 stiffness matrix of a triangle with vertex rows ``pts`` (3, 2)."""
    d1 = pts[1] - pts[0]
    d2 = pts[2] - pts[0]
    det = d1[0] * d2[1] - d1[1] * d2[0]
    # gradients of the barycentric coordinates
    g1 = np.array([d2[1], -d2[0]]) / det
    g2 = np.array([-d1[1], d1[0]]) / det
    G = np.stack([-g1 - g2, g1, g2])
    return 0.5 * abs(det) * G @ G.T


def macro_element_matrices(h: GridHierarchy, level: int, kind: str) -> np.ndarray:
    """Element matrix shared by all fine triangles of each macro, shape (M, 3, 3)."""
    if kind == STIFFNESS:
        # invariant under scaling, so the macro's own matrix serves every level
        return np.stack([stiffness_element_matrix(c) for c in h.corners])
    if kind == MASS:
        return h.fine_areas(level)[:, None, None] * _MASS_REF[None]
    raise ValueError(f"unknown operator kind {kind!r}")


def _stencil(Ke: np.ndarray) -> np.ndarray:
    return np.stack(
        [2.0 * np.trace(Ke, axis1=1, axis2=2), 2.0 * Ke[:, 0, 1], 2.0 * Ke[:, 0, 2], 2.0 * Ke[:, 1, 2]], axis=1
    )


def _interface_block(h: GridHierarchy, level: int, Ke: np.ndarray) -> sp.csr_matrix:
    """Rows of the assembled operator belonging to interface nodes."""
    lev = h[level]
    N = lev.N
    i, j = lattice_ij(N)
    on_rim = (i == 0) | (j == 0) | (i + j == N)
    up, down = lattice_triangles(N)
    tris = np.concatenate([up, down])
    strip = tris[on_rim[tris].any(axis=1)]
    g = lev.idx[:, strip]  # (M, T, 3)
    M, T = g.shape[:2]
    rows = np.broadcast_to(g[:, :, :, None], (M, T, 3, 3))
    cols = np.broadcast_to(g[:, :, None, :], (M, T, 3, 3))
    vals = np.broadcast_to(Ke[:, None, :, :], (M, T, 3, 3))
    keep = rows < lev.n_if
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(lev.n_if, lev.n))
    mat = mat.tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


@dataclass
class OperatorP1:
    """Stiffness or mass operator of one level."""

    kind: str
    level: int
    hierarchy: GridHierarchy
    Ke: np.ndarray
    coef: np.ndarray
    interface: sp.csr_matrix
    diag: np.ndarray  # diagonal of the interface rows

    @classmethod
    def build(cls, h: GridHierarchy, level: int, kind: str = STIFFNESS) -> OperatorP1:
        Ke = np.ascontiguousarray(macro_element_matrices(h, level, kind))
        block = _interface_block(h, level, Ke)
        diag = np.asarray(block[:, : block.shape[0]].diagonal()).copy()
        return cls(kind, level, h, Ke, _stencil(Ke), block, diag)

    @property
    def n(self) -> int:
        return self.hierarchy[self.level].n

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Global operator applied to ``x`` (no boundary conditions)."""
        lev = self.hierarchy[self.level]
        x = np.asarray(x, dtype=float)
        if x.shape != (lev.n,):
            raise MeshStructureError(f"vector length {x.size} does not match level {self.level}")
        y = np.empty(lev.n)
        K.stencil_apply(lev.idx, lev.N, self.coef, x, y)
        y[: lev.n_if] = self.interface @ x
        return y

    def residual_rows(self, rows_if: np.ndarray, u, b, r) -> None:
        """``r = b - A u`` on the given interface rows and on all face interiors."""
        lev = self.hierarchy[self.level]
        B = self.interface
        K.csr_residual_rows(B.indptr, B.indices, B.data, rows_if, u, b, r)
        K.stencil_residual(lev.idx, lev.N, self.coef, u, b, r)

    def gauss_seidel(self, rows_if: np.ndarray, u, b, sweeps: int = 1) -> None:
        """Forward sweeps: interface rows first, then each macro interior."""
        lev = self.hierarchy[self.level]
        B = self.interface
        for _ in range(sweeps):
            K.csr_gs_rows(B.indptr, B.indices, B.data, self.diag, rows_if, u, b)
            K.stencil_gs(lev.idx, lev.N, self.coef, u, b)

    def dense(self) -> np.ndarray:
        """Dense matrix via repeated matvec; for small tests only."""
        n = self.n
        out = np.empty((n, n))
        e = np.zeros(n)
        for k in range(n):
            e[k] = 1.0
            out[:, k] = self.matvec(e)
            e[k] = 0.0
        return out


def apply_operator(op: OperatorP1, x):
    """Macro-local element loops followed by additive accumulation into owners.

    Accepts a :class:`GridFunction` (returned synced) or a flat vector.
    """
    h = op.hierarchy
    lev = h[op.level]
    if isinstance(x, GridFunction):
        if x.level != op.level or x.hierarchy is not h:
            raise MeshStructureError("grid function lives on another level or hierarchy")
        vec = x.to_global()
    else:
        vec = np.asarray(x, dtype=float)
        if vec.shape != (lev.n,):
            raise MeshStructureError(f"vector length {vec.size} does not match level {op.level}")
    y = np.zeros(lev.n)
    K.element_apply(lev.idx, lev.N, op.Ke, vec, y)
    if isinstance(x, GridFunction):
        return GridFunction.from_global(h, op.level, y)
    return y


def assemble_rhs(problem: Problem, h: GridHierarchy, level: int) -> np.ndarray:
    """Load vector by the edge-midpoint rule on every fine triangle."""
    lev = h[level]
    b = np.zeros(lev.n)
    K.load_vector(problem.f_nb, problem.params, np.ascontiguousarray(h.corners), lev.idx, lev.N, b)
    return b


def interpolate(problem: Problem, h: GridHierarchy, level: int, func=None) -> np.ndarray:
    """Nodal interpolant of ``func`` (default: the exact solution)."""
    func = problem.u_nb if func is None else func
    lev = h[level]
    out = np.empty(lev.n)
    xi = h.interface_coords(level)
    out[: lev.n_if] = evaluate(func, problem.params, xi[:, 0], xi[:, 1])
    K.interpolate_interior(func, problem.params, np.ascontiguousarray(h.corners), lev.idx, lev.N, out)
    return out


def boundary_values(problem: Problem, h: GridHierarchy, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of Dirichlet nodes and the data ``g`` there."""
    lev = h[level]
    nodes = np.flatnonzero(lev.boundary)
    xi = h.interface_coords(level)[nodes]
    return nodes, problem.u(xi[:, 0], xi[:, 1])


@dataclass
class DirichletSystem:
    """Symmetrically eliminated system: identity rows on the boundary.

    ``matvec`` acts as ``A`` on free-free couplings and as the identity on
    boundary rows; ``rhs`` carries ``g`` on the boundary and ``b - A_{fb} g``
    on free rows.
    """

    op: OperatorP1
    free: np.ndarray
    bnodes: np.ndarray
    rhs: np.ndarray
    x0: np.ndarray

    def matvec(self, x):
        xf = np.where(self.free, x, 0.0)
        y = self.op.matvec(xf)
        y[self.bnodes] = x[self.bnodes]
        return y


def apply_dirichlet(op: OperatorP1, b: np.ndarray, bnodes: np.ndarray, g: np.ndarray) -> DirichletSystem:
    lev = op.hierarchy[op.level]
    free = ~lev.boundary
    ext = np.zeros(lev.n)
    ext[bnodes] = g
    rhs = b - op.matvec(ext)
    rhs[bnodes] = g
    x0 = np.zeros(lev.n)
    x0[bnodes] = g
    return DirichletSystem(op, free, bnodes, rhs, x0)


def local_l2_norms(h: GridHierarchy, level: int, u) -> np.ndarray:
    """Per-macro L2 norms of the P1 function with coefficients ``u``."""
    if isinstance(u, GridFunction):
        u = u.to_global()
    lev = h[level]
    out = np.empty(h.n_macros)
    K.local_mass_norms_sq(lev.idx, lev.N, np.ascontiguousarray(h.fine_areas(level)), np.asarray(u, dtype=float), out)
    return np.sqrt(np.maximum(out, 0.0))


def l2_norm(h: GridHierarchy, level: int, u) -> float:
    loc = local_l2_norms(h, level, u)
    return float(np.sqrt(np.sum(loc * loc)))


def exact_error_norm(problem: Problem, h: GridHierarchy, level: int, uh) -> tuple[float, np.ndarray]:
    """``||u - u_h||`` by a degree-4 rule on every fine triangle, with per-macro parts."""
    if isinstance(uh, GridFunction):
        uh = uh.to_global()
    lev = h[level]
    out = np.empty(h.n_macros)
    K.exact_error_sq(
        problem.u_nb, problem.params, np.ascontiguousarray(h.corners), lev.idx, lev.N, np.asarray(uh, dtype=float), out
    )
    loc = np.sqrt(np.maximum(out, 0.0))
    return float(np.sqrt(np.sum(out))), loc
