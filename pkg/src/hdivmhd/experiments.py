"""Manufactured-solution experiments: configs, single runs, convergence, nu sweeps, scheme comparison.

Config files are flat ``key = value`` text with ``#`` comments.  Mesh keys may
repeat to describe a list of meshes.  Every run writes one CSV row with the
fixed column set in :data:`CSV_COLUMNS`.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import (ErrorReport, RateTable, RegimeDiagnostics, compute_errors,
                       convergence_rates, regime_diagnostics, velocity_norm_1h)
from .fespace import FESpaceTriple, build_spaces
from .forms import FORM_VARIANTS, SCHEMES, PhysicalParams, StabParams
from .mesh import TetMesh, generate_structured_cube, load_tetgen_files, mesh_metrics
from .mms import AdvectionFields, boundary_data, exact_solution, forcing
from .system import (ProblemData, Solution, assemble_system, check_discrete_divergence,
                     solve)

CSV_COLUMNS = (
    "mesh_id", "h_max", "h_min", "h_mean", "ndof_u", "ndof_p", "ndof_B", "nu_s", "nu_m",
    "scheme", "err_u_L2", "err_u_H1", "err_u_S", "err_u_upw", "err_u_cip", "err_u_stab",
    "err_p_L2", "err_B_L2", "err_B_H1", "err_B_M", "lambda_S", "lambda_M", "residual",
    "t_assemble_s", "t_solve_s",
)

DEFAULT_NU_SWEEP = (1e-1, 1e-3, 1e-5, 1e-7, 1e-9, 1e-11)

# rate gates; the diffusive band is centred on k, the convective floor on k + 1/2
DIFFUSIVE_BAND = {1: (0.75, 1.35), 2: (1.75, 2.35)}
CONVECTIVE_FLOOR = {1: 1.3, 2: 2.2}
DIFFUSIVE_NU = 1e-2
CONVECTIVE_NU = 1e-4
SWEEP_RATIO = 2.0
COMPARE_RATIO = 1.5
COMPARE_AGREE = 0.10
COMPARE_RATE = 0.9
DIV_TOL = 1e-9
RESIDUAL_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class MeshSource:
    structured_n: int | None = None
    node_file: str | None = None
    ele_file: str | None = None

    @property
    def mesh_id(self) -> str:
        if self.structured_n is not None:
            return f"cube{self.structured_n}"
        return Path(self.node_file).stem

    def load(self) -> TetMesh:
        if self.structured_n is not None:
            return generate_structured_cube(self.structured_n)
        return load_tetgen_files(self.node_file, self.ele_file)


@dataclass(frozen=True)
class RunConfig:
    degree: int = 1
    meshes: tuple[MeshSource, ...] = (MeshSource(structured_n=2),)
    sigma_s: float = 1.0
    sigma_m: float = 1.0
    nu_s: float = 1.0
    nu_m: float = 1.0
    mu_a: float | None = None
    mu_c: float = 1.0
    mu_j1: float = 5.0
    mu_j2: float = 0.01
    scheme: str = "mfStab"
    forms: str = "full"
    chi: str = "u"
    theta: str = "B"
    nu_sweep: tuple[float, ...] = ()
    gate: bool = False
    output: str | None = None
    timings: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise ConfigError("degree", f"must be 1 or 2, got {self.degree}")
        if not self.meshes:
            raise ConfigError("mesh", "at least one mesh is required")
        for key in ("sigma_s", "sigma_m", "nu_s", "nu_m"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, f"must be positive, got {getattr(self, key)}")
        if self.mu_a is not None and not self.mu_a > 0:
            raise ConfigError("mu_a", f"must be positive, got {self.mu_a}")
        for key in ("mu_c", "mu_j1", "mu_j2"):
            if getattr(self, key) < 0:
                raise ConfigError(key, f"must be nonnegative, got {getattr(self, key)}")
        if self.scheme not in SCHEMES:
            raise ConfigError("scheme", f"must be one of {', '.join(SCHEMES)}")
        if self.forms not in FORM_VARIANTS:
            raise ConfigError("forms", f"must be one of {', '.join(FORM_VARIANTS)}")
        if self.chi not in ("u", "zero"):
            raise ConfigError("chi", "must be u or zero")
        if self.theta not in ("B", "zero"):
            raise ConfigError("theta", "must be B or zero")
        if any(not v > 0 for v in self.nu_sweep):
            raise ConfigError("nu_sweep", "values must be positive")
        if self.workers < 1:
            raise ConfigError("workers", "must be at least 1")

    def physical(self, nu_s: float | None = None, nu_m: float | None = None) -> PhysicalParams:
        return PhysicalParams(self.sigma_s, self.sigma_m,
                              self.nu_s if nu_s is None else nu_s,
                              self.nu_m if nu_m is None else nu_m)

    def stab(self, scheme: str | None = None) -> StabParams:
        over = dict(mu_c=self.mu_c, mu_j1=self.mu_j1, mu_j2=self.mu_j2,
                    scheme=self.scheme if scheme is None else scheme, form_variant=self.forms)
        if self.mu_a is not None:
            over["mu_a"] = self.mu_a
        return StabParams.defaults(self.degree, **over)


_FLOAT_KEYS = ("sigma_s", "sigma_m", "nu_s", "nu_m", "mu_a", "mu_c", "mu_j1", "mu_j2")
_STR_KEYS = ("scheme", "forms", "chi", "theta", "output")
_BOOL_KEYS = ("gate", "timings")
_INT_KEYS = ("degree", "workers")


def _parse_bool(key: str, value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {value!r}")


def _parse_number(key: str, value: str, kind=float):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(key, f"expected {kind.__name__}, got {value!r}") from None


def parse_config(text: str, base_dir: str | os.PathLike | None = None) -> RunConfig:
    """Parse ``key = value`` lines; relative mesh paths resolve against ``base_dir``."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    values: dict = {}
    structured: list[int] = []
    nodes: list[str] = []
    eles: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not value:
            raise ConfigError(key, "empty value")
        if key == "mesh.structured_n":
            n = _parse_number(key, value, int)
            if n < 1:
                raise ConfigError(key, f"must be at least 1, got {n}")
            structured.append(n)
        elif key == "mesh.node_file":
            nodes.append(str(base / value))
        elif key == "mesh.ele_file":
            eles.append(str(base / value))
        elif key in _FLOAT_KEYS:
            values[key] = _parse_number(key, value)
        elif key in _INT_KEYS:
            values[key] = _parse_number(key, value, int)
        elif key in _BOOL_KEYS:
            values[key] = _parse_bool(key, value)
        elif key in _STR_KEYS:
            values[key] = value
        elif key == "nu_sweep":
            values[key] = tuple(_parse_number(key, v.strip()) for v in value.split(",") if v.strip())
        else:
            raise ConfigError(key, "unknown key")
    if len(nodes) != len(eles):
        raise ConfigError("mesh.node_file", "node and ele files must come in pairs")
    meshes = [MeshSource(structured_n=n) for n in structured]
    meshes += [MeshSource(node_file=a, ele_file=b) for a, b in zip(nodes, eles)]
    if meshes:
        values["meshes"] = tuple(meshes)
    if values.get("output") is not None and not os.path.isabs(values["output"]):
        values["output"] = str(base / values["output"])
    return RunConfig(**values)


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError("config", f"cannot read {path}: {err.strerror}") from None
    return parse_config(text, path.parent)


# ---------------------------------------------------------------- runs


@dataclass
class RunResult:
    row: dict
    errors: ErrorReport
    diagnostics: RegimeDiagnostics
    solution: Solution
    spaces: FESpaceTriple
    div_max: float
    norm_1h: float

    @property
    def h(self) -> float:
        return self.row["h_max"]


@dataclass
class Case:
    """Mesh, spaces and an assembly cache shared by runs on one mesh."""

    source: MeshSource
    mesh: TetMesh
    spaces: FESpaceTriple
    metrics: dict
    caches: dict = field(default_factory=dict)

    @classmethod
    def build(cls, source: MeshSource, k: int) -> "Case":
        mesh = source.load()
        return cls(source, mesh, build_spaces(mesh, k), mesh_metrics(mesh))


def run_case(case: Case, config: RunConfig, params: PhysicalParams | None = None,
             scheme: str | None = None) -> RunResult:
    params = config.physical() if params is None else params
    stab = config.stab(scheme)
    exact = exact_solution()
    fields = AdvectionFields.bind(exact, config.chi, config.theta)
    f, G = forcing(params, exact, fields)
    data = ProblemData(f, G, boundary_data(exact, fields))
    cache = case.caches.setdefault((config.chi, config.theta), {})
    system = assemble_system(case.spaces, params, stab, fields, data,
                             workers=config.workers, cache=cache)
    sol = solve(system)
    errors = compute_errors(sol, exact, case.spaces, params, stab, fields)
    diag = regime_diagnostics(params, stab, fields, case.mesh)
    V, Q, W = case.spaces.velocity, case.spaces.pressure, case.spaces.magnetic
    e = errors.as_dict()
    row = {
        "mesh_id": case.source.mesh_id,
        **{key: case.metrics[key] for key in ("h_max", "h_min", "h_mean")},
        "ndof_u": V.n_dofs, "ndof_p": Q.n_dofs, "ndof_B": W.n_dofs,
        "nu_s": params.nu_s, "nu_m": params.nu_m, "scheme": stab.scheme,
        **{key: e[key] for key in CSV_COLUMNS if key.startswith("err_")},
        "lambda_S": diag.lambda_S, "lambda_M": diag.lambda_M,
        "residual": sol.residual,
        "t_assemble_s": system.t_assemble if config.timings else 0.0,
        "t_solve_s": sol.t_solve if config.timings else 0.0,
    }
    div = check_discrete_divergence(sol.u, case.spaces)
    n1h = velocity_norm_1h(case.spaces, sol.u, stab.mu_a)
    return RunResult(row, errors, diag, sol, case.spaces, div, n1h)


def _cases(config: RunConfig) -> list[Case]:
    return [Case.build(src, config.degree) for src in config.meshes]


def run_single(config: RunConfig) -> list[RunResult]:
    if len(config.meshes) != 1:
        raise ConfigError("mesh", f"run expects exactly one mesh, got {len(config.meshes)}")
    return [run_case(_cases(config)[0], config)]


def run_convergence(config: RunConfig) -> tuple[list[RunResult], RateTable]:
    if len(config.meshes) < 2:
        raise ConfigError("mesh", "convergence needs at least two meshes")
    results = [run_case(case, config) for case in _cases(config)]
    results.sort(key=lambda r: -r.h)
    return results, convergence_rates([(r.h, r.errors) for r in results])


def run_nu_sweep(config: RunConfig) -> list[RunResult]:
    """nu_S = nu_M = nu for each nu in the sweep, on the first mesh."""
    if len(config.meshes) != 1:
        raise ConfigError("mesh", f"sweep-nu expects exactly one mesh, got {len(config.meshes)}")
    case = _cases(config)[0]
    nus = config.nu_sweep or DEFAULT_NU_SWEEP
    return [run_case(case, config, config.physical(nu, nu)) for nu in nus]


def run_comparison(config: RunConfig) -> list[tuple[RunResult, RunResult]]:
    """(mfStab, fStab) pairs per mesh, ordered from coarse to fine."""
    pairs = []
    for case in _cases(config):
        pairs.append((run_case(case, config, scheme="mfStab"),
                      run_case(case, config, scheme="fStab")))
    pairs.sort(key=lambda p: -p[0].h)
    return pairs


# ---------------------------------------------------------------- output


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12e}"
    return str(value)


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_csv(rows: Sequence[dict], path: str | None) -> str:
    text = rows_to_csv(rows)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def rate_summary(table: RateTable, keys: Sequence[str] | None = None) -> str:
    keys = list(table.least_squares) if keys is None else list(keys)
    lines = ["norm,least_squares," + ",".join(f"pair{i}" for i in range(len(table.pairwise[keys[0]])))]
    for key in keys:
        lines.append(",".join([key, f"{table.least_squares[key]:.4f}"]
                              + [f"{r:.4f}" for r in table.pairwise[key]]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- gates


def _check(ok: bool, failures: list[str], message: str) -> None:
    if not ok:
        failures.append(message)


def gate_run(results: Sequence[RunResult]) -> list[str]:
    """Residual and exact mass conservation for every solved run."""
    failures: list[str] = []
    for r in results:
        tag = f"{r.row['mesh_id']} nu_s={r.row['nu_s']:g} {r.row['scheme']}"
        _check(r.solution.residual <= RESIDUAL_TOL, failures,
               f"{tag}: residual {r.solution.residual:.3e} > {RESIDUAL_TOL:g}")
        _check(r.div_max <= DIV_TOL * max(r.norm_1h, 1.0), failures,
               f"{tag}: divergence {r.div_max:.3e} above {DIV_TOL:g} relative")
    return failures


def gate_convergence(results: Sequence[RunResult], table: RateTable, k: int,
                     nu_s: float) -> list[str]:
    """Diffusive band on least-squares rates, or the convective floor on the finest pair.

    Runs with DIFFUSIVE_NU > nu_s > CONVECTIVE_NU are in the transition regime and
    only receive the per-run checks.
    """
    failures = gate_run(results)
    ls, pair = table.least_squares, table.pairwise
    if nu_s >= DIFFUSIVE_NU:
        lo, hi = DIFFUSIVE_BAND[k]
        for key in ("err_u_stab", "err_B_H1"):
            _check(lo <= ls[key] <= hi, failures,
                   f"{key} rate {ls[key]:.3f} outside [{lo}, {hi}]")
        _check(ls["err_p_L2"] >= lo, failures, f"err_p_L2 rate {ls['err_p_L2']:.3f} < {lo}")
    elif nu_s <= CONVECTIVE_NU:
        floor = CONVECTIVE_FLOOR[k]
        last = pair["err_u_stab"][-1]
        _check(last >= floor, failures, f"err_u_stab finest-pair rate {last:.3f} < {floor}")
    return failures


def spread(results: Sequence[RunResult], key: str) -> float:
    vals = np.array([r.row[key] for r in results], dtype=float)
    return float(vals.max() / vals.min())


def gate_sweep(results: Sequence[RunResult]) -> list[str]:
    failures = gate_run(results)
    for key in ("err_u_H1", "err_B_H1", "err_p_L2"):
        ratio = spread(results, key)
        _check(ratio <= SWEEP_RATIO, failures, f"{key} max/min {ratio:.3f} > {SWEEP_RATIO}")
    return failures


def comparison_ratios(pair: tuple[RunResult, RunResult]) -> dict[str, float]:
    mf, fs = pair
    return {key: fs.row[key] / mf.row[key] for key in ("err_u_H1", "err_u_L2", "err_B_H1", "err_p_L2")}


def gate_comparison(pairs: Sequence[tuple[RunResult, RunResult]]) -> list[str]:
    failures = gate_run([r for p in pairs for r in p])
    ratios = comparison_ratios(pairs[-1])
    _check(ratios["err_u_H1"] >= COMPARE_RATIO, failures,
           f"fStab/mfStab err_u_H1 ratio {ratios['err_u_H1']:.3f} < {COMPARE_RATIO}")
    for key in ("err_B_H1", "err_p_L2"):
        _check(abs(ratios[key] - 1.0) <= COMPARE_AGREE, failures,
               f"{key} schemes differ by {abs(ratios[key] - 1.0):.3f} > {COMPARE_AGREE}")
    if len(pairs) >= 2:
        mf = [p[0] for p in pairs]
        rate = math.log(mf[-2].row["err_u_H1"] / mf[-1].row["err_u_H1"]) / math.log(mf[-2].h / mf[-1].h)
        _check(rate >= COMPARE_RATE, failures, f"mfStab err_u_H1 rate {rate:.3f} < {COMPARE_RATE}")
    return failures
