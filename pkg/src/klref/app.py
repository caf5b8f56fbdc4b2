"""Command line front end.

Subcommands ``solve``, ``amr``, ``pipeline`` and ``refine3d``.  Options can
come from a flat ``key = value`` file (``--config``) whose keys are the flag
names; flags given on the command line win.  Exit status: 0 on success, 1 on
solver failure, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .amr import (
    DRIVER_ESTIMATED,
    DRIVER_EXACT,
    SCHEMES,
    AmrConfig,
    ConvergenceRecord,
    base_record,
    errratio,
    grading_report,
    mean_width,
    run_scheme,
    write_grading,
    write_records,
)
from .estimator import SCALED, UNSCALED, constants_c1_c2, error_estimate, report_rows, write_estimates
from .fem import exact_error_norm
from .hhg import build_hierarchy, write_vtk
from .macro_mesh import (
    MeshStructureError,
    adapt,
    conformity_check,
    geometric_conformity_check,
    kuhn_box,
    read_mesh,
    refine,
    write_mesh,
)
from .multigrid import EXTRA_BLIND, EXTRA_NONE, EXTRA_VALIDATION, Multigrid, SolverConfig, SolverError, fmg
from .problems import PROBLEM_IDS, TEST_PROBLEM_IDS, get_problem, waves_derivatives

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_USAGE = 2

COMMANDS = ("solve", "amr", "pipeline", "refine3d")


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    text = str(text).strip()
    if not text:
        return ()
    try:
        return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError as exc:
        raise ConfigError(f"not a comma separated integer list: {text!r}") from exc


@dataclass
class RunConfig:
    problem: str = "waves2d"
    alpha: float = 10.0
    omega: float = 16.0 * math.pi
    scheme: str = "kl"
    levels: int = 5
    ksteps: int = 5
    nu: int = 2
    j: int = 1
    estimator: str = UNSCALED
    mark_fraction: float = 0.10
    driver: str = DRIVER_EXACT
    extra_cycles: str = EXTRA_NONE
    sweep_j: tuple[int, ...] = ()
    validation: bool = True
    out: str = "klref_out"
    vtk: bool = False
    dim: int = 2
    box: int = 3
    mesh: str = ""
    marks: str = ""

    # -- flat key/value serialization ------------------------------------------
    @staticmethod
    def key(name: str) -> str:
        return name.replace("_", "-")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{self.key(f.name)} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def coerce(cls, name: str, value):
        ftype = {f.name: f.type for f in fields(cls)}[name]
        if not isinstance(value, str):
            return tuple(value) if ftype.startswith("tuple") else value
        try:
            if ftype == "bool":
                return _parse_bool(value)
            if ftype == "int":
                return int(value)
            if ftype == "float":
                return float(value)
            if ftype.startswith("tuple"):
                return _parse_ints(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {cls.key(name)}: {value!r}") from exc
        return value

    def updated(self, values: dict) -> RunConfig:
        names = {f.name for f in fields(self)}
        clean = {}
        for k, v in values.items():
            name = k.replace("-", "_")
            if name not in names:
                raise ConfigError(f"unknown config key {k!r}")
            clean[name] = self.coerce(name, v)
        return dataclasses.replace(self, **clean)

    @classmethod
    def from_text(cls, text: str, base: RunConfig | None = None) -> RunConfig:
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = v
        return (base or cls()).updated(values)

    # -- validation and derived configs ----------------------------------------
    def validate(self) -> None:
        if self.problem not in PROBLEM_IDS + TEST_PROBLEM_IDS:
            raise ConfigError(f"unknown problem id {self.problem!r} (choose from {', '.join(PROBLEM_IDS)})")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.estimator not in (SCALED, UNSCALED):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.driver not in (DRIVER_EXACT, DRIVER_ESTIMATED):
            raise ConfigError(f"unknown driver {self.driver!r}")
        if self.extra_cycles not in (EXTRA_NONE, EXTRA_VALIDATION, EXTRA_BLIND):
            raise ConfigError(f"unknown extra-cycle policy {self.extra_cycles!r}")
        if self.extra_cycles == EXTRA_VALIDATION and not self.validation:
            raise ConfigError("extra-cycles = validation needs validation = true")
        if self.levels < 0 or self.ksteps < 0 or self.nu < 1 or self.j < 1:
            raise ConfigError("need levels >= 0, ksteps >= 0, nu >= 1, j >= 1")
        if not 0.0 < self.mark_fraction <= 1.0:
            raise ConfigError(f"mark fraction {self.mark_fraction} outside (0, 1]")
        if self.dim not in (2, 3) or self.box < 1:
            raise ConfigError("need dim in {2, 3} and box >= 1")

    def get_problem(self):
        return get_problem(self.problem, self.alpha, self.omega)

    def solver(self) -> SolverConfig:
        return SolverConfig(nu=self.nu, extra_cycles=self.extra_cycles)

    def amr(self) -> AmrConfig:
        return AmrConfig(
            scheme=self.scheme,
            K=self.ksteps,
            L=max(self.levels, 1),
            fraction=self.mark_fraction,
            nu=self.nu,
            j=self.j,
            estimator=self.estimator,
            driver=self.driver,
            extra_cycles=self.extra_cycles,
            sweep_j=self.sweep_j,
        )

    def out_dir(self) -> Path:
        p = Path(self.out)
        p.mkdir(parents=True, exist_ok=True)
        return p


# -- shared writers ----------------------------------------------------------------

TELEMETRY_COLUMNS = ("k", "level", "cycle", "residual", "work_units")
EFFECTIVITY_COLUMNS = ("k", "j", "nu", "theta", "gamma", "dgamma", "c1", "c2", "within")
STEP_COLUMNS = ("step", "name", "seconds", "n_macros", "dofs")


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def effectivity_rows(entries, j_bounds_theta: float = 0.25) -> list[tuple]:
    """Rows of ``(k, j, nu, theta, gamma, dgamma, c1, c2, within)``.

    ``c1, c2`` are the constants for the optimal rate ``theta = 1/4``.
    """
    rows = []
    for e in entries:
        c1, c2 = constants_c1_c2(j_bounds_theta, 0.0, e["j"])
        g = e["gamma"]
        rows.append((e["k"], e["j"], e["nu"], e["theta"], g, e["dgamma"], c1, c2, int(c1 <= g <= c2)))
    return rows


def _save_config(cfg: RunConfig, out: Path) -> None:
    (out / "config.txt").write_text(cfg.to_text())


# -- commands --------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig) -> int:
    """One hierarchy, one FMG solve, one estimate."""
    problem = cfg.get_problem()
    out = cfg.out_dir()
    _save_config(cfg, out)
    mesh = problem.initial_mesh()
    L = cfg.levels
    h = build_hierarchy(mesh, L)
    solver = cfg.solver()
    mg = Multigrid(h, solver)

    def err(u):
        return exact_error_norm(problem, h, L, u)[0]

    state = fmg(problem, h, solver, mg, error_fn=err if cfg.validation else None)
    n_el = h[L].n_elements
    rec = ConvergenceRecord("solve", "l", 0, L, h.n_macros, n_el, h.dofs(L), mean_width(problem.area, n_el), math.nan)
    exact_local = None
    if cfg.validation:
        rec.error, exact_local = exact_error_norm(problem, h, L, state.solution)
        rec.errratio = errratio(base_record(problem, mesh, solver, "solve"), rec)
    rows = []
    if 1 <= cfg.j <= L - 1:
        rep = error_estimate(state, cfg.j, cfg.estimator)
        rec.eta = rep.eta
        rows = report_rows(rep, 0, rec.error if cfg.validation else None, exact_local)
    write_records(out / "records.csv", [rec])
    write_estimates(out / "estimates.csv", rows)
    write_rows(out / "telemetry.csv", TELEMETRY_COLUMNS, [(0,) + t for t in state.telemetry])
    if cfg.vtk:
        fields_ = {"u_h": state.solution}
        if cfg.validation:
            fields_["u"] = problem.u(*h.coordinates(L).T)
        write_vtk(out / f"solution_l{L}.vtk", h, L, fields_)
    print(f"solve: L={L} dofs={rec.dofs} error={rec.error:.6e} eta={rec.eta:.6e}")
    return EXIT_OK


def cmd_amr(cfg: RunConfig) -> int:
    """Run the configured refinement scheme and write the run directory."""
    problem = cfg.get_problem()
    acfg = cfg.amr()
    out = cfg.out_dir()
    _save_config(cfg, out)

    def on_solve(k, res):
        if cfg.vtk:
            st = res.state
            write_vtk(out / f"solution_k{k:02d}_l{st.L}.vtk", st.hierarchy, st.L, {"u_h": st.solution})

    run = run_scheme(problem, acfg, callback=on_solve)
    write_records(out / "records.csv", [run.base] + run.records)
    rows = []
    for k, rep, e, loc in run.estimates:
        rows += report_rows(rep, k, e, loc)
    write_estimates(out / "estimates.csv", rows)
    write_rows(out / "effectivity.csv", EFFECTIVITY_COLUMNS, effectivity_rows(run.effectivity))
    write_rows(out / "telemetry.csv", TELEMETRY_COLUMNS, run.telemetry)
    mesh_dir = out / "meshes"
    mesh_dir.mkdir(exist_ok=True)
    for k, m in enumerate(run.meshes):
        write_mesh(m, mesh_dir / f"mesh_k{k:02d}.txt")
    if problem.corner is not None:
        write_grading(out / "grading.csv", grading_report(run.meshes[-1], 0, acfg.L, problem.corner))
    f = run.final
    print(f"amr: scheme={acfg.scheme} macros={f.n_macros} dofs={f.dofs} error={f.error:.6e} errratio={f.errratio:.4g}")
    return EXIT_OK


def _timed(steps: list, name: str, fn, n_macros=0, dofs=0):
    t0 = time.perf_counter()
    res = fn()
    steps.append([len(steps) + 1, name, time.perf_counter() - t0, n_macros, dofs])
    return res


def waves3d_oscillation(mesh, alpha: float = 10.0, omega: float = 16.0 * math.pi) -> np.ndarray:
    """Spread of ``w(x) w(y) w(z)`` over the vertices and barycenter of each tetrahedron."""
    cells = mesh.cells
    pts = mesh.vertices[cells]
    samples = np.concatenate([pts, pts.mean(axis=1, keepdims=True)], axis=1)
    w = waves_derivatives(alpha, omega, samples)[0]
    u = w.prod(axis=2)
    return u.max(axis=1) - u.min(axis=1)


def _pipeline_3d(cfg: RunConfig, out: Path) -> int:
    steps: list = []
    mesh = _timed(steps, "build", lambda: kuhn_box(cfg.box))
    ind = _timed(steps, "indicator", lambda: waves3d_oscillation(mesh, cfg.alpha, cfg.omega), mesh.n_elements)
    new, marks = _timed(steps, "refine", lambda: adapt(mesh, ind, cfg.mark_fraction), mesh.n_elements)
    hanging = _timed(steps, "conformity", lambda: conformity_check(new), new.n_elements)
    _timed(steps, "write", lambda: write_mesh(new, out / "mesh_refined.txt"), new.n_elements)
    write_rows(out / "steps.csv", STEP_COLUMNS, steps)
    print(f"pipeline3d: {mesh.n_elements} -> {new.n_elements} elements, {len(marks)} marked, "
          f"hanging nodes: {len(hanging)}")
    return EXIT_OK if not hanging else EXIT_SOLVER


def cmd_pipeline(cfg: RunConfig) -> int:
    """Solve on ``T_L^0``, estimate, refine, rebuild and solve on ``T_L^1`` with step timings."""
    out = cfg.out_dir()
    _save_config(cfg, out)
    if cfg.dim == 3:
        return _pipeline_3d(cfg, out)
    problem = cfg.get_problem()
    L = cfg.levels
    if L < cfg.j + 1:
        raise ConfigError(f"pipeline needs levels >= j + 1 (levels={L}, j={cfg.j})")
    solver = cfg.solver()
    steps: list = []
    mesh0 = problem.initial_mesh()
    h0 = _timed(steps, "build", lambda: build_hierarchy(mesh0, L), mesh0.n_elements)
    steps[-1][4] = h0.dofs(L)
    st0 = _timed(steps, "solve", lambda: fmg(problem, h0, solver), h0.n_macros, h0.dofs(L))
    rep = _timed(steps, "estimate", lambda: error_estimate(st0, cfg.j, cfg.estimator), h0.n_macros, h0.dofs(L))
    mesh1, _ = _timed(steps, "refine", lambda: adapt(mesh0, rep.eta_T, cfg.mark_fraction), h0.n_macros,
                         h0.dofs(L))
    h1 = _timed(steps, "rebuild", lambda: build_hierarchy(mesh1, L), mesh1.n_elements)
    steps[-1][4] = h1.dofs(L)
    st1 = _timed(steps, "solve", lambda: fmg(problem, h1, solver), h1.n_macros, h1.dofs(L))
    write_rows(out / "steps.csv", STEP_COLUMNS, steps)
    recs = []
    for k, (h, st) in enumerate(((h0, st0), (h1, st1))):
        n_el = h[L].n_elements
        e = exact_error_norm(problem, h, L, st.solution)[0] if cfg.validation else math.nan
        recs.append(ConvergenceRecord("pipeline", "k", k, L, h.n_macros, n_el, h.dofs(L),
                                      mean_width(problem.area, n_el), e, rep.eta if k == 0 else math.nan))
    write_records(out / "records.csv", recs)
    write_mesh(mesh1, out / "mesh_k01.txt")
    total = sum(s[2] for s in steps)
    share = (steps[2][2] + steps[3][2]) / total if total > 0 else 0.0
    print(f"pipeline: {mesh0.n_elements} -> {mesh1.n_elements} macros, total {total:.3f}s, "
          f"estimate+refine share {100 * share:.2f}%")
    return EXIT_OK


def read_marks(path) -> list[int]:
    text = Path(path).read_text()
    try:
        return [int(tok) for tok in text.replace(",", " ").split() if not tok.startswith("#")]
    except ValueError as exc:
        raise ConfigError(f"marks file {path} must hold integer element ids") from exc


def cmd_refine3d(cfg: RunConfig) -> int:
    """One red-green pass over a mesh file; writes ``mesh_refined.txt``."""
    if not cfg.mesh:
        raise ConfigError("refine3d needs --mesh")
    mesh = read_mesh(cfg.mesh)
    if mesh.dim != 3:
        raise ConfigError(f"refine3d expects a 3-d mesh, got dim {mesh.dim}")
    marks = read_marks(cfg.marks) if cfg.marks else []
    known = set(mesh.element_ids)
    unknown = sorted(set(marks) - known)
    if unknown:
        raise ConfigError(f"marks reference unknown element ids {unknown[:5]}")
    new = refine(mesh, marks)
    out = cfg.out_dir()
    write_mesh(new, out / "mesh_refined.txt")
    hanging = geometric_conformity_check(new)
    print(f"refine3d: {mesh.n_elements} -> {new.n_elements} elements, hanging nodes: {len(hanging)}")
    return EXIT_OK if not hanging else EXIT_SOLVER


HANDLERS = {"solve": cmd_solve, "amr": cmd_amr, "pipeline": cmd_pipeline, "refine3d": cmd_refine3d}


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="flat 'key = value' file; keys are the flag names")
    common.add_argument("--problem", help="waves2d or lshape")
    common.add_argument("--alpha", type=float)
    common.add_argument("--omega", type=float)
    common.add_argument("--scheme", help="uniform, kplusl or kl")
    common.add_argument("--levels", type=int, help="number of uniform levels L")
    common.add_argument("--ksteps", type=int, help="number of adaptive steps K")
    common.add_argument("--nu", type=int, help="V-cycles per FMG level")
    common.add_argument("--j", type=int, help="estimator offset")
    common.add_argument("--estimator", help="scaled or unscaled")
    common.add_argument("--mark-fraction", type=float, dest="mark_fraction")
    common.add_argument("--driver", help="exact or estimated")
    common.add_argument("--extra-cycles", dest="extra_cycles", help="none, validation or blind")
    common.add_argument("--sweep-j", dest="sweep_j", help="comma separated offsets, e.g. 1,2,3,4")
    common.add_argument("--validation", dest="validation", action="store_const", const=True)
    common.add_argument("--no-validation", dest="validation", action="store_const", const=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--vtk", action="store_const", const=True)
    common.add_argument("--dim", type=int, help="pipeline dimension (3: mesh-only)")
    common.add_argument("--box", type=int, help="cubes per axis of the 3-d pipeline box")
    common.add_argument("--mesh", help="input mesh file (refine3d)")
    common.add_argument("--marks", help="file with marked element ids (refine3d)")
    parser = argparse.ArgumentParser(prog="klref", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HANDLERS[name].__doc__.splitlines()[0])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    cfg = RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = RunConfig.from_text(path.read_text())
    cfg = cfg.updated(values)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg)
    except SolverError as exc:
        print(f"klref: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, MeshStructureError, KeyError, ValueError, OSError) as exc:
        print(f"klref: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
