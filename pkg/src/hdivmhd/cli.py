"""Command-line driver: ``hdivmhd {run,convergence,sweep-nu,compare} --config FILE [--gate]``.

CSV goes to the configured ``output`` path and to stdout.  Any failure exits
nonzero with one line on stderr of the form ``error kind=<kind>: <reason>``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex
from .fespace import UnsupportedDegreeError, UnsupportedGeometryError
from .mesh import MeshError
from .system import SingularSystemError

EXIT_GATE = 1
EXIT_CONFIG = 2
EXIT_MESH = 3
EXIT_SOLVER = 4


class CliFailure(Exception):
    def __init__(self, code: int, kind: str, reason: str):
        super().__init__(reason)
        self.code, self.kind = code, kind


def _sidecar(output: str | None, suffix: str) -> Path | None:
    if not output:
        return None
    p = Path(output)
    return p.with_name(p.stem + suffix)


def _emit(rows, config: ex.RunConfig, quiet: bool) -> None:
    text = ex.write_csv(rows, config.output)
    if not quiet:
        sys.stdout.write(text)


def cmd_run(config: ex.RunConfig, args) -> list[str]:
    results = ex.run_single(config)
    _emit([r.row for r in results], config, args.quiet)
    return ex.gate_run(results)


def cmd_convergence(config: ex.RunConfig, args) -> list[str]:
    results, table = ex.run_convergence(config)
    _emit([r.row for r in results], config, args.quiet)
    summary = ex.rate_summary(table, [c for c in ex.CSV_COLUMNS if c.startswith("err_")])
    side = _sidecar(config.output, "_rates.csv")
    if side is not None:
        side.write_text(summary)
    if not args.quiet:
        sys.stdout.write("\n" + summary)
    return ex.gate_convergence(results, table, config.degree, config.nu_s)


def cmd_sweep(config: ex.RunConfig, args) -> list[str]:
    results = ex.run_nu_sweep(config)
    _emit([r.row for r in results], config, args.quiet)
    if not args.quiet:
        for key in ("err_u_H1", "err_B_H1", "err_p_L2"):
            sys.stdout.write(f"# {key} max/min {ex.spread(results, key):.4f}\n")
    return ex.gate_sweep(results)


def cmd_compare(config: ex.RunConfig, args) -> list[str]:
    pairs = ex.run_comparison(config)
    _emit([r.row for p in pairs for r in p], config, args.quiet)
    lines = ["mesh_id," + ",".join(f"ratio_{k}" for k in ex.comparison_ratios(pairs[0]))]
    for p in pairs:
        lines.append(p[0].row["mesh_id"] + ","
                     + ",".join(f"{v:.6f}" for v in ex.comparison_ratios(p).values()))
    summary = "\n".join(lines) + "\n"
    side = _sidecar(config.output, "_ratios.csv")
    if side is not None:
        side.write_text(summary)
    if not args.quiet:
        sys.stdout.write("\n" + summary)
    return ex.gate_comparison(pairs)


COMMANDS = {"run": cmd_run, "convergence": cmd_convergence,
            "sweep-nu": cmd_sweep, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdivmhd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--gate", action="store_true", help="exit nonzero if acceptance gates fail")
        p.add_argument("--quiet", action="store_true", help="do not echo CSV to stdout")
    return parser


def _run(argv) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ex.load_config(args.config)
    except ex.ConfigError as err:
        raise CliFailure(EXIT_CONFIG, "config", str(err)) from None
    try:
        failures = COMMANDS[args.command](config, args)
    except ex.ConfigError as err:
        raise CliFailure(EXIT_CONFIG, "config", str(err)) from None
    except (UnsupportedDegreeError, UnsupportedGeometryError) as err:
        raise CliFailure(EXIT_CONFIG, "config", str(err)) from None
    except MeshError as err:
        raise CliFailure(EXIT_MESH, "mesh", f"{type(err).__name__}: {err}") from None
    except OSError as err:
        raise CliFailure(EXIT_MESH, "io", str(err)) from None
    except SingularSystemError as err:
        raise CliFailure(EXIT_SOLVER, "solver", str(err)) from None
    if failures and (args.gate or config.gate):
        raise CliFailure(EXIT_GATE, "gate", "; ".join(failures))
    return 0


def main(argv=None) -> int:
    try:
        return _run(argv)
    except CliFailure as err:
        reason = " ".join(str(err).split())
        print(f"error kind={err.kind}: {reason}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
