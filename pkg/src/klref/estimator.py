"""A posteriori error estimation from the coarse solutions stored by FMG.

With ``e~_l = u_L - I u_l`` (``u_l`` the FMG solution of level ``l``), the
estimated convergence factor is ``theta_l = ||e~_l|| / ||e~_{l-1}||`` and the
global estimate of ``||u - u_L||`` for offset ``j`` (``l = L - j``) is
``eta_j = theta_l**j ||e~_l||``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .fem import local_l2_norms
from .macro_mesh import MeshStructureError
from .multigrid import FmgState, prolongate_to

SCALED = "scaled"
UNSCALED = "unscaled"
LOCAL_FLOOR = 1e-14

ESTIMATE_COLUMNS = ("k", "l", "j", "kind", "macro_id", "eta_T", "exact_local_error", "gamma_T")


@dataclass
class EstimateReport:
    j: int
    level: int
    norm_prev: float
    norm: float
    theta: float
    eta: float
    macro_ids: np.ndarray
    eta_T: np.ndarray
    kind: str
    local_prev: np.ndarray
    local: np.ndarray

    @property
    def L(self) -> int:
        return self.level + self.j


def difference(state: FmgState, level: int) -> np.ndarray:
    """``e~_level = u_L - I w_level`` on the finest level."""
    L = state.L
    if not 0 <= level < L:
        raise MeshStructureError(f"difference level {level} outside 0..{L - 1}")
    return state.u[L] - prolongate_to(state.hierarchy, level + 1, L, state.w[level])


def difference_locals(state: FmgState, level: int) -> np.ndarray:
    """Per-macro norms of ``e~_level`` (cached on ``state``)."""
    key = ("diff", level)
    if key not in state.cache:
        state.cache[key] = local_l2_norms(state.hierarchy, state.L, difference(state, level))
    return state.cache[key]


def _norm(loc: np.ndarray) -> float:
    return float(np.sqrt(np.sum(loc * loc)))


def error_estimate(state: FmgState, j: int = 1, kind: str = UNSCALED) -> EstimateReport:
    """Global estimate ``eta_j`` and local indicators ``eta_T``."""
    L = state.L
    if not 1 <= j <= L - 1:
        raise MeshStructureError(f"offset j={j} needs 1 <= j <= L-1 (L={L})")
    if kind not in (SCALED, UNSCALED):
        raise ValueError(f"unknown estimator kind {kind!r}")
    level = L - j
    loc = difference_locals(state, level)
    loc_prev = difference_locals(state, level - 1)
    norm, norm_prev = _norm(loc), _norm(loc_prev)
    theta = norm / norm_prev if norm_prev > 0.0 else 0.0
    eta = theta**j * norm
    if kind == UNSCALED:
        eta_T = loc.copy()
    else:
        theta_T = np.full(loc.shape, theta)
        ok = loc_prev >= LOCAL_FLOOR * norm_prev
        theta_T[ok] = loc[ok] / loc_prev[ok]
        eta_T = theta_T**j * loc
    return EstimateReport(j, level, norm_prev, norm, theta, eta, state.hierarchy.macro_ids.copy(), eta_T, kind,
                          loc_prev, loc)


# -- closed-form bounds ----------------------------------------------------------

def _check_theta(theta_eps: float) -> None:
    if not 0.0 < theta_eps < 1.0:
        raise ValueError(f"saturation requires 0 < (1+eps) theta < 1, got {theta_eps}")


def constants_c1_c2(theta: float, eps: float = 0.0, j: int = 1) -> tuple[float, float]:
    """Equivalence constants with ``C1 ||e_L|| <= eta_j <= C2 ||e_L||``."""
    te = (1.0 + eps) * theta
    _check_theta(te)
    c1 = (1.0 + eps) ** (-j) * (1.0 - te**j) ** (j + 1) / (1.0 + te ** (j + 1)) ** j
    c2 = (1.0 + eps) ** j * (1.0 + te**j) ** (j + 1) / (1.0 - te ** (j + 1)) ** j
    return c1, c2


def dgamma_bound_scaled(theta_max: float, eps: float = 0.0, j: int = 1) -> float:
    """Bound on ``max gamma_T / min gamma_T`` for the scaled indicators."""
    _check_theta((1.0 + eps) * theta_max)
    t = theta_max
    return (
        (1.0 + eps) ** (2 * j)
        * ((1.0 + t ** (j + 1)) / (1.0 - t ** (j + 1))) ** j
        * ((1.0 + t**j) / (1.0 - t**j)) ** (j + 1)
    )


def dgamma_bound_unscaled(theta_min: float, theta_max: float, j: int = 1) -> float:
    """Bound on ``max gamma_T / min gamma_T`` for the unscaled indicators."""
    if not 0.0 < theta_min <= theta_max:
        raise ValueError("need 0 < theta_min <= theta_max")
    _check_theta(theta_max)
    return (theta_min ** (-j) + 1.0) / (theta_max ** (-j) - 1.0)


@dataclass(frozen=True)
class BoundsConstants:
    theta: float
    eps: float
    j: int
    q: int
    c1: float
    c2: float

    @property
    def theta_eps(self) -> float:
        return (1.0 + self.eps) * self.theta

    def contains(self, gamma: float) -> bool:
        return self.c1 <= gamma <= self.c2


def bounds_constants(theta: float | None = None, eps: float = 0.0, j: int = 1, q: float = 2) -> BoundsConstants:
    """Constants for ``theta`` (default ``2**-q``, the optimal rate for order ``q``)."""
    theta = 2.0 ** (-q) if theta is None else theta
    c1, c2 = constants_c1_c2(theta, eps, j)
    return BoundsConstants(theta, eps, j, q, c1, c2)


# -- effectivity ---------------------------------------------------------------

@dataclass
class Effectivity:
    gamma: float
    gamma_T: np.ndarray
    dgamma: float
    valid: bool


def effectivity_index(report: EstimateReport, exact_error: float, exact_local=None) -> Effectivity:
    """``gamma = eta_j / ||e_L||`` and the local spread ``max gamma_T / min gamma_T``.

    A zero exact error yields NaN values with ``valid=False``.
    """
    if not exact_error > 0.0:
        n = len(report.eta_T)
        return Effectivity(math.nan, np.full(n, math.nan), math.nan, False)
    gamma = report.eta / exact_error
    if exact_local is None:
        return Effectivity(gamma, np.full(len(report.eta_T), math.nan), math.nan, True)
    exact_local = np.asarray(exact_local, dtype=float)
    gamma_T = np.full(exact_local.shape, math.nan)
    ok = exact_local >= LOCAL_FLOOR * exact_error
    gamma_T[ok] = report.eta_T[ok] / exact_local[ok]
    g = gamma_T[ok]
    dgamma = float(g.max() / g.min()) if g.size and g.min() > 0 else math.nan
    return Effectivity(gamma, gamma_T, dgamma, True)


def report_rows(report: EstimateReport, k: int, exact_error=None, exact_local=None) -> list[dict]:
    """CSV rows: one per macro and a summary row with ``macro_id = all``."""
    eff = effectivity_index(report, exact_error, exact_local) if exact_error is not None else None
    rows = []
    for m, mid in enumerate(report.macro_ids):
        rows.append(
            {
                "k": k,
                "l": report.level,
                "j": report.j,
                "kind": report.kind,
                "macro_id": int(mid),
                "eta_T": repr(float(report.eta_T[m])),
                "exact_local_error": "" if exact_local is None else repr(float(exact_local[m])),
                "gamma_T": "" if eff is None or exact_local is None else repr(float(eff.gamma_T[m])),
            }
        )
    rows.append(
        {
            "k": k,
            "l": report.level,
            "j": report.j,
            "kind": report.kind,
            "macro_id": "all",
            "eta_T": repr(float(report.eta)),
            "exact_local_error": "" if exact_error is None else repr(float(exact_error)),
            "gamma_T": "" if eff is None else repr(float(eff.gamma)),
        }
    )
    return rows


def write_estimates(path, rows, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ESTIMATE_COLUMNS)
        if not append or fh.tell() == 0:
            w.writeheader()
        w.writerows(rows)
