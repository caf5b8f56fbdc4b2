"""Geometric multigrid on a grid hierarchy: V(pre, post) cycles with forward
Gauss-Seidel, linear prolongation, CG on level 0 and a full multigrid driver
that keeps the prolongated coarse solutions for error estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import _kernels as K
from .fem import OperatorP1, STIFFNESS, assemble_rhs, boundary_values
from .hhg import GridHierarchy
from .problems import Problem

EXTRA_NONE = "none"
EXTRA_VALIDATION = "validation"
EXTRA_BLIND = "blind"


class SolverError(RuntimeError):
    """Iterative solver failed; ``residual`` holds the last residual norm."""

    def __init__(self, message: str, residual: float = math.nan, level: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.level = level


@dataclass
class SolverConfig:
    nu: int = 2
    pre: int = 2
    post: int = 2
    coarse_rtol: float = 1e-9
    coarse_atol: float = 1e-12
    coarse_maxiter: int = 20000
    extra_cycles: str = EXTRA_NONE
    max_extra_cycles: int = 30
    blind_factor: float = 1e-2
    telemetry: bool = True

    def __post_init__(self):
        if self.nu < 1:
            raise ValueError(f"nu must be at least 1, got {self.nu}")
        if not (0.0 < self.coarse_rtol < 1.0 and 0.0 < self.coarse_atol < 1.0):
            raise ValueError("coarse tolerances must lie in (0, 1)")
        if self.extra_cycles not in (EXTRA_NONE, EXTRA_VALIDATION, EXTRA_BLIND):
            raise ValueError(f"unknown extra-cycle policy {self.extra_cycles!r}")


@dataclass
class FmgState:
    """Result of one FMG run.

    ``u[l]`` is the solution on level ``l`` when that level finished (``u[L]``
    after any extra cycles); ``w[l]`` is the prolongation of ``u[l]`` to level
    ``l + 1``, recorded before further smoothing.
    """

    hierarchy: GridHierarchy
    config: SolverConfig
    u: list[np.ndarray]
    w: list[np.ndarray]
    b: list[np.ndarray]
    telemetry: list[tuple[int, int, float, float]] = field(default_factory=list)
    work: float = 0.0
    extra_cycles_run: int = 0
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def L(self) -> int:
        return len(self.u) - 1

    @property
    def solution(self) -> np.ndarray:
        return self.u[-1]


def prolongate(h: GridHierarchy, level: int, uc: np.ndarray) -> np.ndarray:
    """Linear interpolation from ``level`` to ``level + 1``."""
    hc, hf = h[level], h[level + 1]
    uf = np.empty(hf.n)
    K.prolongate(hc.idx, hf.idx, hc.N, uc, uf)
    return uf


def restrict(h: GridHierarchy, level: int, rf: np.ndarray) -> np.ndarray:
    """From ``level`` to ``level - 1``; the transpose of :func:`prolongate`."""
    hc, hf = h[level - 1], h[level]
    rc = np.zeros(hc.n)
    K.restrict(hc.idx, hf.idx, hf.owned, hc.N, rf, rc)
    return rc


def prolongate_to(h: GridHierarchy, level: int, target: int, u: np.ndarray) -> np.ndarray:
    """Composite interpolation from ``level`` up to ``target``."""
    for lev in range(level, target):
        u = prolongate(h, lev, u)
    return u


class Multigrid:
    """Level operators and cycle machinery for one hierarchy."""

    def __init__(self, h: GridHierarchy, config: SolverConfig | None = None):
        self.h = h
        self.config = config or SolverConfig()
        self.ops = [OperatorP1.build(h, lev, STIFFNESS) for lev in range(h.L + 1)]
        self.rows_if = [
            np.flatnonzero(~h[lev].boundary[: h[lev].n_if]).astype(np.int64) for lev in range(h.L + 1)
        ]
        A0 = self.ops[0].interface.tocsr()
        free0 = ~h[0].boundary
        self._free0 = np.flatnonzero(free0)
        self._A0ff = A0[self._free0][:, self._free0].tocsr()
        self._A0fb = A0[self._free0][:, np.flatnonzero(~free0)].tocsr()
        self._bnd0 = np.flatnonzero(~free0)
        self.work = 0.0
        self.telemetry: list[tuple[int, int, float, float]] = []

    def _units(self, level: int) -> float:
        return self.h[level].n / self.h[self.h.L].n

    # -- level building blocks ------------------------------------------------
    def smooth(self, level: int, u, b, sweeps: int) -> None:
        if level == 0:
            self.coarse_solve(u, b)
            return
        self.ops[level].gauss_seidel(self.rows_if[level], u, b, sweeps)
        self.work += sweeps * self._units(level)

    def residual(self, level: int, u, b) -> np.ndarray:
        """``b - A u`` on free rows, zero on Dirichlet rows."""
        r = np.zeros(self.h[level].n)
        self.ops[level].residual_rows(self.rows_if[level], u, b, r)
        self.work += self._units(level)
        return r

    def residual_norm(self, level: int, u, b) -> float:
        return float(np.linalg.norm(self.residual(level, u, b)))

    def prolongate(self, level: int, uc: np.ndarray) -> np.ndarray:
        return prolongate(self.h, level, uc)

    def restrict(self, level: int, rf: np.ndarray) -> np.ndarray:
        return restrict(self.h, level, rf)

    def coarse_solve(self, u, b) -> None:
        """CG on the free level-0 unknowns; Dirichlet values are taken from ``u``."""
        cfg = self.config
        rhs = b[self._free0] - self._A0fb @ u[self._bnd0]
        if not np.any(rhs):
            u[self._free0] = 0.0
            return
        x, info = spla.cg(
            self._A0ff, rhs, x0=u[self._free0].copy(), rtol=cfg.coarse_rtol, atol=cfg.coarse_atol, maxiter=cfg.coarse_maxiter
        )
        if info != 0:
            res = float(np.linalg.norm(rhs - self._A0ff @ x))
            raise SolverError(f"coarse CG did not converge (residual {res:.3e})", res, 0)
        u[self._free0] = x
        self.work += self._units(0)

    def v_cycle(self, level: int, u, b) -> None:
        cfg = self.config
        if level == 0:
            self.coarse_solve(u, b)
            return
        self.smooth(level, u, b, cfg.pre)
        r = self.residual(level, u, b)
        rc = self.restrict(level, r)
        rc[self.h[level - 1].boundary] = 0.0
        ec = np.zeros(self.h[level - 1].n)
        self.v_cycle(level - 1, ec, rc)
        u += self.prolongate(level - 1, ec)
        self.smooth(level, u, b, cfg.post)

    def _log(self, level: int, cycle: int, u, b) -> None:
        if self.config.telemetry:
            self.telemetry.append((level, cycle, self.residual_norm(level, u, b), self.work))


def _set_boundary(problem: Problem, h: GridHierarchy, level: int, u: np.ndarray) -> None:
    nodes, g = boundary_values(problem, h, level)
    u[nodes] = g


def _two_digits(x: float) -> str:
    return f"{x:.1e}"


def fmg(problem: Problem, h: GridHierarchy, config: SolverConfig | None = None, mg: Multigrid | None = None,
        error_fn=None) -> FmgState:
    """Full multigrid with ``nu`` V-cycles per level.

    ``error_fn(u_L)`` returns the exact L2 error and is needed by the
    ``validation`` extra-cycle policy.
    """
    cfg = config or SolverConfig()
    mg = mg or Multigrid(h, cfg)
    mg.config = cfg
    L = h.L
    b = [assemble_rhs(problem, h, lev) for lev in range(L + 1)]
    us: list[np.ndarray] = []
    ws: list[np.ndarray] = []
    u = np.zeros(h[0].n)
    _set_boundary(problem, h, 0, u)
    for lev in range(L + 1):
        if lev == 0:
            mg.coarse_solve(u, b[0])
            mg._log(0, 1, u, b[0])
        else:
            for c in range(cfg.nu):
                mg.v_cycle(lev, u, b[lev])
                mg._log(lev, c + 1, u, b[lev])
        us.append(u)
        if lev < L:
            w = mg.prolongate(lev, u)
            w.flags.writeable = False
            ws.append(w)
            u = w.copy()
            _set_boundary(problem, h, lev + 1, u)
    state = FmgState(h, cfg, us, ws, b, mg.telemetry, mg.work)
    _extra_cycles(problem, mg, state, error_fn)
    state.work = mg.work
    return state


def _extra_cycles(problem, mg: Multigrid, state: FmgState, error_fn) -> None:
    cfg = mg.config
    L = state.L
    if cfg.extra_cycles == EXTRA_NONE or L == 0:
        return
    u, b = state.u[L], state.b[L]
    cycle = cfg.nu
    if cfg.extra_cycles == EXTRA_VALIDATION:
        if error_fn is None:
            raise ValueError("validation extra cycles need the exact error")
        prev = _two_digits(error_fn(u))
        for _ in range(cfg.max_extra_cycles):
            mg.v_cycle(L, u, b)
            cycle += 1
            state.extra_cycles_run += 1
            mg._log(L, cycle, u, b)
            cur = _two_digits(error_fn(u))
            if cur == prev:
                break
            prev = cur
        return
    from .estimator import error_estimate, UNSCALED
    from .fem import l2_norm

    if L < 2:
        return
    eta = error_estimate(state, 1, UNSCALED).eta
    for _ in range(cfg.max_extra_cycles):
        before = u.copy()
        mg.v_cycle(L, u, b)
        cycle += 1
        state.extra_cycles_run += 1
        mg._log(L, cycle, u, b)
        if l2_norm(state.hierarchy, L, u - before) < cfg.blind_factor * eta:
            break


def solve_reference(problem: Problem, h: GridHierarchy, tol: float = 1e-13, max_cycles: int = 60,
                    mg: Multigrid | None = None) -> np.ndarray:
    """Over-solved discrete solution on the finest level (FMG plus V-cycles to ``tol``)."""
    cfg = SolverConfig(nu=2, telemetry=False, coarse_rtol=1e-12)
    state = fmg(problem, h, cfg, mg)
    mg = mg or Multigrid(h, cfg)
    u, b = state.u[-1].copy(), state.b[-1]
    r0 = mg.residual_norm(h.L, u, b)
    bn = float(np.linalg.norm(np.where(h[h.L].boundary, 0.0, b))) or 1.0
    for _ in range(max_cycles):
        mg.v_cycle(h.L, u, b)
        r = mg.residual_norm(h.L, u, b)
        if r <= tol * bn or r == 0.0:
            break
    else:
        raise SolverError(f"reference solve stalled (residual {r:.3e}, start {r0:.3e})", r, h.L)
    return u
