"""Refinement drivers: uniform, k+l (adapt the coarse grid, then refine
uniformly) and kl (adapt the coarse grid using fine-grid solutions)."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimator import SCALED, UNSCALED, EstimateReport, effectivity_index, error_estimate
from .fem import exact_error_norm
from .hhg import build_hierarchy
from .macro_mesh import MacroMesh, adapt, mesh_quality
from .multigrid import EXTRA_NONE, FmgState, Multigrid, SolverConfig, SolverError, fmg
from .problems import Problem

UNIFORM = "uniform"
KPLUSL = "kplusl"
KL = "kl"
SCHEMES = (UNIFORM, KPLUSL, KL)
DRIVER_EXACT = "exact"
DRIVER_ESTIMATED = "estimated"

RECORD_COLUMNS = ("scheme", "label", "k", "l", "n_macros", "n_elements", "dofs", "hbar", "error", "eta", "errratio")


@dataclass
class AmrConfig:
    scheme: str = KL
    K: int = 10
    L: int = 8
    fraction: float = 0.10
    nu: int = 2
    j: int = 1
    estimator: str = UNSCALED
    driver: str = DRIVER_EXACT
    extra_cycles: str = EXTRA_NONE
    sweep_j: tuple[int, ...] = ()

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.K < 0 or self.L < 1:
            raise ValueError("need K >= 0 and L >= 1")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"mark fraction {self.fraction} outside (0, 1]")
        if self.estimator not in (SCALED, UNSCALED):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.driver not in (DRIVER_EXACT, DRIVER_ESTIMATED):
            raise ValueError(f"unknown driver {self.driver!r}")

    def solver(self, **kw) -> SolverConfig:
        return SolverConfig(nu=self.nu, extra_cycles=self.extra_cycles, **kw)


@dataclass
class ConvergenceRecord:
    scheme: str
    label: str  # "k" or "l": which loop produced the record
    k: int
    l: int
    n_macros: int
    n_elements: int
    dofs: int
    hbar: float
    error: float
    eta: float = math.nan
    errratio: float = math.nan

    def row(self) -> dict:
        return {key: (repr(v) if isinstance(v, float) else v) for key, v in asdict(self).items()}


def mean_width(area: float, n_elements: int, dim: int = 2) -> float:
    return (area / n_elements) ** (1.0 / dim)


def errratio(base: ConvergenceRecord, current: ConvergenceRecord) -> float:
    """``(H^2 e_h) / (h^2 e_H)``; NaN if the base error vanishes."""
    if not base.error > 0.0:
        return math.nan
    return (base.hbar**2 * current.error) / (current.hbar**2 * base.error)


@dataclass
class SolveResult:
    record: ConvergenceRecord
    state: FmgState
    local_errors: np.ndarray
    reports: dict = field(default_factory=dict)  # j -> EstimateReport


def solve_on(problem: Problem, mesh: MacroMesh, L: int, solver: SolverConfig, scheme: str, label: str, k: int,
             js=(), kind: str = UNSCALED) -> SolveResult:
    """FMG on ``T_L`` of ``mesh`` (plain CG for ``L = 0``) with exact error and estimates."""
    h = build_hierarchy(mesh, L)
    mg = Multigrid(h, solver)

    def err(u):
        return exact_error_norm(problem, h, L, u)[0]

    try:
        state = fmg(problem, h, solver, mg, error_fn=err)
    except SolverError as exc:
        exc.level = L if exc.level is None else exc.level
        raise
    e, loc = exact_error_norm(problem, h, L, state.solution)
    n_el = h[L].n_elements
    rec = ConvergenceRecord(scheme, label, k, L, h.n_macros, n_el, h.dofs(L), mean_width(problem.area, n_el), e)
    reports = {}
    for j in js:
        if 1 <= j <= L - 1:
            reports[j] = error_estimate(state, j, kind)
    if reports:
        rec.eta = reports[min(reports)].eta
    return SolveResult(rec, state, loc, reports)


def base_record(problem: Problem, mesh: MacroMesh, solver: SolverConfig, scheme: str) -> ConvergenceRecord:
    """The reference record on the initial coarse grid (CG solve on ``T_0^0``)."""
    res = solve_on(problem, mesh, 0, solver, scheme, "k", 0)
    res.record.errratio = 1.0
    return res.record


@dataclass
class AmrRun:
    config: AmrConfig
    base: ConvergenceRecord
    records: list[ConvergenceRecord] = field(default_factory=list)
    meshes: list[MacroMesh] = field(default_factory=list)
    estimates: list[tuple[int, EstimateReport, float, np.ndarray]] = field(default_factory=list)
    effectivity: list[dict] = field(default_factory=list)
    telemetry: list[tuple] = field(default_factory=list)

    @property
    def final(self) -> ConvergenceRecord:
        return self.records[-1]

    def add(self, rec: ConvergenceRecord) -> None:
        rec.errratio = errratio(self.base, rec)
        self.records.append(rec)


def run_uniform(problem: Problem, L_max: int, config: AmrConfig | None = None, mesh: MacroMesh | None = None,
                scheme: str = UNIFORM, k: int = 0, run: AmrRun | None = None, callback=None) -> AmrRun:
    """Solve on ``T_l`` of a fixed coarse grid for ``l = 1..L_max``.

    ``callback(k, result)`` is called after every solve.
    """
    config = config or AmrConfig(scheme=UNIFORM, K=0, L=max(L_max, 1))
    mesh = problem.initial_mesh() if mesh is None else mesh
    solver = config.solver()
    if run is None:
        run = AmrRun(config, base_record(problem, mesh, solver, scheme))
        run.meshes.append(mesh)
    for lev in range(1, L_max + 1):
        js = (config.j,) if lev >= config.j + 1 else ()
        res = solve_on(problem, mesh, lev, solver, scheme, "l", k, js, config.estimator)
        run.add(res.record)
        run.telemetry.extend((k,) + t for t in res.state.telemetry)
        if callback is not None:
            callback(k, res)
    return run


def _indicator(config: AmrConfig, res: SolveResult) -> np.ndarray:
    if config.driver == DRIVER_EXACT:
        return res.local_errors
    rep = res.reports.get(config.j)
    if rep is None:
        raise ValueError(f"estimated driver needs j={config.j} <= L-1")
    return rep.eta_T


def run_k_plus_l(problem: Problem, config: AmrConfig, mesh: MacroMesh | None = None, callback=None) -> AmrRun:
    """K adaptive steps driven by coarse-grid solutions, then uniform refinement."""
    if config.driver != DRIVER_EXACT:
        raise ValueError("the k+l scheme adapts on level 0, where no estimate exists; use the exact driver")
    mesh = problem.initial_mesh() if mesh is None else mesh
    solver = config.solver()
    run = AmrRun(config, base_record(problem, mesh, solver, KPLUSL))
    run.meshes.append(mesh)
    for k in range(config.K):
        res = solve_on(problem, mesh, 0, solver, KPLUSL, "k", k)
        run.add(res.record)
        if callback is not None:
            callback(k, res)
        mesh, _ = adapt(mesh, res.local_errors, config.fraction)
        run.meshes.append(mesh)
    if config.K > 0:
        res = solve_on(problem, mesh, 0, solver, KPLUSL, "k", config.K)
        run.add(res.record)
    return run_uniform(problem, config.L, config, mesh, KPLUSL, config.K, run, callback)


def run_kl(problem: Problem, config: AmrConfig, mesh: MacroMesh | None = None, callback=None) -> AmrRun:
    """Solve on ``T_L^k`` for ``k = 0..K``, adapting the coarse grid in between."""
    mesh = problem.initial_mesh() if mesh is None else mesh
    solver = config.solver()
    run = AmrRun(config, base_record(problem, mesh, solver, KL))
    run.meshes.append(mesh)
    js = sorted(set(config.sweep_j) | {config.j})
    for k in range(config.K + 1):
        res = solve_on(problem, mesh, config.L, solver, KL, "k", k, js, config.estimator)
        run.add(res.record)
        run.telemetry.extend((k,) + t for t in res.state.telemetry)
        for j, rep in res.reports.items():
            run.estimates.append((k, rep, res.record.error, res.local_errors))
            eff = effectivity_index(rep, res.record.error, res.local_errors)
            run.effectivity.append({"k": k, "j": j, "nu": config.nu, "gamma": eff.gamma, "dgamma": eff.dgamma,
                                    "theta": rep.theta})
        if callback is not None:
            callback(k, res)
        if k < config.K:
            mesh, _ = adapt(mesh, _indicator(config, res), config.fraction)
            run.meshes.append(mesh)
    return run


def run_scheme(problem: Problem, config: AmrConfig, callback=None) -> AmrRun:
    if config.scheme == UNIFORM:
        return run_uniform(problem, config.L, config, callback=callback)
    if config.scheme == KPLUSL:
        return run_k_plus_l(problem, config, callback=callback)
    return run_kl(problem, config, callback=callback)


def level_sequence(problem: Problem, mesh: MacroMesh, L: int, config: AmrConfig) -> list[ConvergenceRecord]:
    """Records of separate solves on ``T_l`` of ``mesh`` for ``l = 0..L``."""
    solver = config.solver()
    return [solve_on(problem, mesh, lev, solver, "levels", "l", 0).record for lev in range(L + 1)]


def loglog_slope(records: list[ConvergenceRecord]) -> float:
    """Least-squares slope of ``log error`` against ``log hbar``."""
    h = np.log([r.hbar for r in records])
    e = np.log([r.error for r in records])
    return float(np.polyfit(h, e, 1)[0])


# -- grading diagnostics ----------------------------------------------------------

@dataclass
class GradingRecord:
    macro_id: int
    h: float
    r: float
    h_max: float
    lower_bound: float
    upper_bound: float
    exempt: bool
    lower_ok: bool
    upper_ok: bool


def _fit(log_ratio: np.ndarray) -> float:
    # least-squares fit of log(h) = log(c) + log(bound) with unit slope
    return float(np.exp(np.mean(log_ratio))) if log_ratio.size else 1.0


def grading_report(mesh: MacroMesh, level: int, L: int, corner, slack: float = 2.0) -> list[GradingRecord]:
    """Check ``h_max r^(1/3) <~ h_T`` and the level-aware upper bound per macro.

    ``h_T`` is the fine width ``2**-level`` times the macro's longest edge.
    Constants are fitted in log space; a flag fails when the ratio misses the
    fitted constant by more than ``slack``.
    """
    q = mesh_quality(mesh)
    h = q.h * 2.0 ** (-level)
    r = q.r(corner)
    h_max = float(h.max())
    s = r - 0.5 * (1.0 - 2.0 ** (-L)) * q.h
    exempt = (r < 0.5 * h) | (s <= 0.0)
    lower = h_max * np.cbrt(r)
    upper = h_max * np.cbrt(np.where(s > 0, s, np.nan))
    ok = ~exempt
    c_lo = _fit(np.log(h[ok] / lower[ok]))
    c_up = _fit(np.log(h[ok] / upper[ok]))
    out = []
    for m, e in enumerate(mesh.elements):
        ex = bool(exempt[m])
        lo_ok = ex or h[m] >= c_lo * lower[m] / slack
        up_ok = ex or h[m] <= c_up * upper[m] * slack
        out.append(GradingRecord(e.id, float(h[m]), float(r[m]), h_max, float(c_lo * lower[m]),
                                 float(c_up * upper[m]) if not ex else math.nan, ex, bool(lo_ok), bool(up_ok)))
    return out


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow(r.row())


def write_grading(path, records: list[GradingRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["macro_id", "h_T", "r_T", "h_max", "lower_bound", "upper_bound", "exempt", "lower_ok", "upper_ok"])
        for g in records:
            w.writerow([g.macro_id, repr(g.h), repr(g.r), repr(g.h_max), repr(g.lower_bound), repr(g.upper_bound),
                        int(g.exempt), int(g.lower_ok), int(g.upper_ok)])

