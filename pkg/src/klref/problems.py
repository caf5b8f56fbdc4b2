"""Manufactured Poisson problems ``-Δu = f`` with Dirichlet data ``g = u``.

Pointwise data are numba scalar functions ``u(x, y, params)`` so that the
quadrature kernels can call them directly; :func:`evaluate` maps them over
arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numba as nb
import numpy as np

from .macro_mesh import MacroMesh

PROBLEM_IDS = ("waves2d", "lshape")
# extra ids for smoke tests with known discrete behaviour
TEST_PROBLEM_IDS = ("affine", "quadratic")


_jit = nb.njit(cache=True)


@_jit
def _waves_s(t, a, w):
    e = np.exp(a * (t - 1.0)) * w
    return e * t, e * (1.0 + a * t), e * a * (2.0 + a * t)


@_jit
def _waves_w(t, a, w):
    s = np.exp(a * (t - 1.0)) * w * t
    return 1.0 - np.cos(s)


@_jit
def _waves_w2(t, a, w):
    s, s1, s2 = _waves_s(t, a, w)
    return s2 * np.sin(s) + s1 * s1 * np.cos(s)


@_jit
def _waves_u(x, y, p):
    return _waves_w(x, p[0], p[1]) * _waves_w(y, p[0], p[1])


@_jit
def _waves_f(x, y, p):
    a, w = p[0], p[1]
    return -(_waves_w2(x, a, w) * _waves_w(y, a, w) + _waves_w(x, a, w) * _waves_w2(y, a, w))


@_jit
def _lshape_u(x, y, p):
    r = np.sqrt(x * x + y * y)
    phi = np.arctan2(y, x)
    if phi < 0.0:
        phi += 2.0 * np.pi
    return r ** (2.0 / 3.0) * np.sin(2.0 * phi / 3.0)


@_jit
def _zero_f(x, y, p):
    return 0.0


@_jit
def _affine_u(x, y, p):
    return p[0] + p[1] * x + p[2] * y


@_jit
def _quad_u(x, y, p):
    return x * x


@_jit
def _quad_f(x, y, p):
    return -2.0


@nb.njit
def _evaluate(func, params, x, y, out):
    for k in range(x.shape[0]):
        out[k] = func(x[k], y[k], params)


def evaluate(func, params, x, y) -> np.ndarray:
    """Apply a scalar kernel ``func(x, y, params)`` elementwise to arrays."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    xf = np.ascontiguousarray(x).ravel()
    yf = np.ascontiguousarray(y).ravel()
    out = np.empty(xf.shape)
    _evaluate(func, np.asarray(params, dtype=float), xf, yf, out)
    return out.reshape(x.shape)


@dataclass(frozen=True)
class Problem:
    """Exact solution, source and domain of a model problem."""

    name: str
    params: np.ndarray
    u_nb: Callable
    f_nb: Callable
    mesh_factory: Callable[[], MacroMesh]
    area: float
    corner: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def u(self, x, y):
        return evaluate(self.u_nb, self.params, x, y)

    def f(self, x, y):
        return evaluate(self.f_nb, self.params, x, y)

    g = u

    def initial_mesh(self) -> MacroMesh:
        return self.mesh_factory()


def waves_derivatives(alpha: float, omega: float, t):
    """``(w, w', w'')`` of ``w(t) = 1 - cos(exp(alpha (t-1)) omega t)``."""
    t = np.asarray(t, dtype=float)
    e = np.exp(alpha * (t - 1.0)) * omega
    s, s1, s2 = e * t, e * (1.0 + alpha * t), e * alpha * (2.0 + alpha * t)
    return 1.0 - np.cos(s), s1 * np.sin(s), s2 * np.sin(s) + s1 * s1 * np.cos(s)


def square_mesh(n: int = 4, x0=0.0, y0=0.0, size=1.0, skip=None) -> MacroMesh:
    """``n x n`` squares, each cut along its lower-left to upper-right diagonal.

    ``skip(ix, iy)`` may drop squares; unused vertices are dropped too.
    """
    h = size / n
    vid = {}
    coords = []
    cells = []

    def v(ix, iy):
        key = (ix, iy)
        if key not in vid:
            vid[key] = len(coords)
            coords.append((x0 + ix * h, y0 + iy * h))
        return vid[key]

    for iy in range(n):
        for ix in range(n):
            if skip is not None and skip(ix, iy):
                continue
            a, b, c, d = v(ix, iy), v(ix + 1, iy), v(ix + 1, iy + 1), v(ix, iy + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    return MacroMesh.from_arrays(np.array(coords), np.array(cells))


def waves_initial_mesh() -> MacroMesh:
    return square_mesh(4)


def lshape_initial_mesh() -> MacroMesh:
    # (-1,1)^2 without the quadrant x > 0, y < 0
    return square_mesh(4, -1.0, -1.0, 2.0, skip=lambda ix, iy: ix >= 2 and iy < 2)


def waves(alpha: float = 10.0, omega: float = 16.0 * np.pi) -> Problem:
    return Problem(
        "waves2d",
        np.array([alpha, omega]),
        _waves_u,
        _waves_f,
        waves_initial_mesh,
        1.0,
        meta={"alpha": alpha, "omega": omega},
    )


def lshape() -> Problem:
    return Problem(
        "lshape",
        np.zeros(1),
        _lshape_u,
        _zero_f,
        lshape_initial_mesh,
        3.0,
        corner=(0.0, 0.0),
    )


def affine(c0: float = 0.3, cx: float = 1.0, cy: float = 2.0, mesh_factory=waves_initial_mesh) -> Problem:
    """``u = c0 + cx x + cy y``; reproduced exactly by P1 elements."""
    return Problem("affine", np.array([c0, cx, cy]), _affine_u, _zero_f, mesh_factory, 1.0)


def quadratic() -> Problem:
    """``u = x^2`` on the unit square."""
    return Problem("quadratic", np.zeros(1), _quad_u, _quad_f, waves_initial_mesh, 1.0)


def get_problem(name: str, alpha: float | None = None, omega: float | None = None) -> Problem:
    if name == "waves2d":
        return waves(10.0 if alpha is None else alpha, 16.0 * np.pi if omega is None else omega)
    if name == "lshape":
        return lshape()
    if name == "affine":
        return affine()
    if name == "quadratic":
        return quadratic()
    raise KeyError(name)
