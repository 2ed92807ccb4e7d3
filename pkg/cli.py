"""
HHO magnetostatics command line

Run with:
    uv run python cli.py mesh gen cubic 2 --out outputs/cubic_2.msh
    uv run python cli.py mesh check outputs/cubic_2.msh
    uv run python cli.py solve field --mesh outputs/cubic_2.msh --k 1
    uv run python cli.py convergence --formulation field --family cubic --refinements 2,4,8 --k 0
    uv run python cli.py verify

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import pandas as pd

from hho.assembly import SOLVER_INACCURATE, SOLVER_OK, STABILIZATIONS, write_triplets
from hho.config import load_run_defaults
from hho.errors import CONFIG_ERRORS, NUMERICAL_ERRORS, ConfigError, error_payload, exit_code
from hho.localops import FORMULATIONS, Discretization, HybridVector
from hho.mesh import Mesh, load_mesh, validate
from hho.schemes import (
    CASES,
    DEFAULT_STABILIZATION,
    MESH_FAMILIES,
    CaseOptions,
    ErrorReport,
    build_mesh,
    default_case,
    eoc,
    solve_case,
)
from hho.verify import run_suite
from utils.convergence_plot import generate_convergence_plot

logger = logging.getLogger("hho.cli")

CSV_COLUMNS = [
    "meshsize", "n_dofs", "solve_time_s",
    "err_energy", "err_l2", "err_lagrange",
    "eoc_energy", "eoc_l2", "eoc_lagrange",
]
DUMP_COLUMNS = ["element", "block", "index", "value"]


@dataclass
class RunConfig:
    command: str
    formulation: str = "field"
    k: int = 0
    family: str = "cubic"
    n: int = 2
    mesh_path: str | None = None
    refinements: tuple[int, ...] = (2, 4, 8)
    stabilization: str | None = None
    case: str | None = None
    quad_elevation: int = 8
    out: str | None = None
    seed: int = 20211022
    threads: int = 1
    symmetric: bool = False
    full_curl: bool = False
    timing: bool = True
    dump_system: bool = False
    plot: bool = False
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def stab(self) -> str:
        return self.stabilization or DEFAULT_STABILIZATION[self.formulation]

    def options(self) -> CaseOptions:
        return CaseOptions(
            stabilization=self.stab,
            quad_elevation=self.quad_elevation,
            threads=self.threads,
            symmetric=self.symmetric,
            full_curl=self.full_curl,
        )

    def validate(self) -> "RunConfig":
        if self.formulation not in FORMULATIONS:
            raise ConfigError(f"unknown formulation {self.formulation!r} (choose field or potential)")
        if not 0 <= self.k <= 3:
            raise ConfigError(f"--k must be in 0..3, got {self.k}")
        if self.mesh_path is None and self.family not in MESH_FAMILIES:
            raise ConfigError(f"unknown mesh family {self.family!r} (choose from {', '.join(MESH_FAMILIES)})")
        if self.n < 1:
            raise ConfigError("--n must be >= 1")
        if self.stab not in STABILIZATIONS[self.formulation]:
            raise ConfigError(
                f"stabilization {self.stab!r} is not available for the {self.formulation} formulation "
                f"(choose from {', '.join(STABILIZATIONS[self.formulation])})"
            )
        if self.stab == "none" and self.mesh_path is None and self.family != "tetrahedral":
            raise ConfigError("stabilization 'none' requires the tetrahedral mesh family")
        if not self.refinements or any(n < 1 for n in self.refinements):
            raise ConfigError("--refinements must list positive integers")
        if any(b <= a for a, b in zip(self.refinements, self.refinements[1:])):
            raise ConfigError("--refinements must be strictly increasing")
        if self.quad_elevation < 0:
            raise ConfigError("--quad-elevation must be >= 0")
        if self.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if self.case is not None:
            if self.case not in CASES:
                raise ConfigError(f"unknown case {self.case!r} (choose from {', '.join(CASES)})")
            if CASES[self.case]().formulation != self.formulation:
                raise ConfigError(f"case {self.case!r} belongs to the {CASES[self.case]().formulation} formulation")
        if self.full_curl and self.formulation != "potential":
            raise ConfigError("--curl-variant full applies to the potential formulation only")
        return self

    def manufactured_case(self):
        return CASES[self.case]() if self.case else default_case(self.formulation)


# -- file helpers -------------------------------------------------------------


def _output_dir() -> str:
    path = load_run_defaults()["output_dir"]
    os.makedirs(path, exist_ok=True)
    return path


def _ensure_parent(path: str) -> str:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def read_mesh_file(path: str) -> Mesh:
    if not os.path.exists(path):
        raise FileNotFoundError(f"mesh file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return load_mesh(fh)


def write_mesh_file(mesh: Mesh, path: str) -> str:
    with open(_ensure_parent(path), "w", encoding="utf-8", newline="\n") as fh:
        mesh.dump(fh)
    return path


def solution_frame(disc: Discretization, u: HybridVector, p: HybridVector) -> pd.DataFrame:
    """Element-block coefficients: one row per (element, block, index)."""
    rows = []
    for t in range(disc.mesh.n_elements):
        for block, vec in (("u_T", u), ("p_T", p)):
            for i, v in enumerate(vec.element(t)):
                rows.append((t, block, i, float(v)))
    return pd.DataFrame(rows, columns=DUMP_COLUMNS)


def write_solution_dump(disc: Discretization, u: HybridVector, p: HybridVector, path: str) -> str:
    solution_frame(disc, u, p).to_csv(_ensure_parent(path), index=False, float_format="%.17g")
    return path


def read_solution_dump(path: str) -> dict[str, np.ndarray]:
    """Stacked element blocks keyed by block name, in element order."""
    df = pd.read_csv(path)
    missing = set(DUMP_COLUMNS) - set(df.columns)
    if missing:
        raise ConfigError(f"solution dump {path} lacks columns {sorted(missing)}")
    out = {}
    for block, part in df.groupby("block", sort=False):
        part = part.sort_values(["element", "index"], kind="stable")
        out[str(block)] = part["value"].to_numpy(dtype=float)
    return out


def convergence_frame(reports: Sequence[ErrorReport], timing: bool = True) -> pd.DataFrame:
    """One row per mesh: relative energy and L2 errors, absolute Lagrange-norm error of the multiplier."""
    rows = []
    prev = None
    for r in reports:
        row = {
            "meshsize": r.meshsize,
            "n_dofs": r.n_dofs,
            "solve_time_s": r.solve_time if timing else 0.0,
            "err_energy": r.energy_rel,
            "err_l2": r.l2_rel,
            "err_lagrange": r.lagrange,
            "eoc_energy": np.nan,
            "eoc_l2": np.nan,
            "eoc_lagrange": np.nan,
        }
        if prev is not None:
            row["eoc_energy"] = eoc(prev.energy_rel, r.energy_rel, prev.meshsize, r.meshsize)
            row["eoc_l2"] = eoc(prev.l2_rel, r.l2_rel, prev.meshsize, r.meshsize)
            row["eoc_lagrange"] = eoc(prev.lagrange, r.lagrange, prev.meshsize, r.meshsize)
        rows.append(row)
        prev = r
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def write_convergence_csv(df: pd.DataFrame, path: str) -> str:
    df.to_csv(_ensure_parent(path), index=False, float_format="%.10e")
    return path


# -- commands -----------------------------------------------------------------


def cmd_mesh(config: RunConfig) -> dict:
    action = config.extra.get("action", "gen")
    if action == "gen":
        mesh = build_mesh(config.family, config.n)
        path = config.out or os.path.join(_output_dir(), f"{config.family}_{config.n}.msh")
        write_mesh_file(mesh, path)
        report = validate(mesh)
        print(f"wrote {path}: {mesh.n_elements} elements, {mesh.n_faces} faces, h={mesh.h:.4f}")
        return {"status": "ok", "path": path, "report": report.to_dict()}
    mesh = read_mesh_file(config.mesh_path or "")
    report = validate(mesh)
    for key, value in report.to_dict().items():
        print(f"{key:32s} {value}")
    return {"status": "ok", "path": config.mesh_path, "report": report.to_dict()}


def _mesh_of(config: RunConfig) -> Mesh:
    if config.mesh_path:
        return read_mesh_file(config.mesh_path)
    return build_mesh(config.family, config.n)


def _dump_system(system, path: str) -> str:
    with open(_ensure_parent(path), "w", encoding="utf-8", newline="\n") as fh:
        write_triplets(system, fh)
    logger.info("condensed system written to %s", path)
    return path


def cmd_solve(config: RunConfig) -> dict:
    mesh = _mesh_of(config)
    case = config.manufactured_case()
    run = solve_case(mesh, config.k, case, config.options())
    report = run.report
    print(
        f"{case.name} k={config.k} stab={report.stabilization} elements={mesh.n_elements} "
        f"h={mesh.h:.4f} dofs={report.n_dofs}"
    )
    print(
        f"  energy {report.energy_rel:.6e}  l2 {report.l2_rel:.6e}  "
        f"lagrange {report.lagrange:.6e} (rel {report.lagrange_rel:.6e})  residual {report.residual:.2e}"
    )
    result: dict[str, Any] = {"status": report.solver_status, "case": case.name, "report": report.to_dict()}
    dump = config.extra.get("dump")
    if dump:
        result["dump"] = write_solution_dump(run.discretization, run.u, run.p, dump)
    defaults = load_run_defaults()
    if config.dump_system or defaults["debug"]:
        result["system"] = _dump_system(run.system, os.path.join(_output_dir(), "last_condensed_system.txt"))
    return result


def cmd_convergence(config: RunConfig) -> dict:
    case = config.manufactured_case()
    reports = []
    for n in config.refinements:
        mesh = build_mesh(config.family, n)
        reports.append(solve_case(mesh, config.k, case, config.options()).report)
    df = convergence_frame(reports, timing=config.timing)
    path = config.out or os.path.join(
        _output_dir(), f"convergence_{config.formulation}_{config.family}_k{config.k}_{config.stab}.csv"
    )
    write_convergence_csv(df, path)
    print(df.to_string(index=False, float_format=lambda v: f"{v:.4e}"))
    print(f"wrote {path}")
    inaccurate = [r.n_elements for r in reports if r.solver_status != SOLVER_OK]
    if inaccurate:
        logger.error("solver residual above tolerance on meshes with %s elements", inaccurate)
    result: dict[str, Any] = {
        "status": SOLVER_INACCURATE if inaccurate else "ok",
        "csv": path,
        "rows": df.to_dict(orient="records"),
    }
    if config.plot:
        result["plot"] = generate_convergence_plot(path)
    return result


def cmd_verify(config: RunConfig) -> dict:
    results = run_suite(seed=config.seed, k_max=config.extra.get("k_max", 3), only=config.extra.get("only"))
    failed = [r for r in results if not r.passed]
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"[{mark}] {r.name}: {r.value:.3e} (tol {r.tolerance:.0e}) {r.detail}".rstrip())
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return {
        "status": "ok" if not failed else "failed",
        "passed": len(results) - len(failed),
        "failed": [r.name for r in failed],
        "checks": [r.to_dict() for r in results],
    }


COMMANDS = {"mesh": cmd_mesh, "solve": cmd_solve, "convergence": cmd_convergence, "verify": cmd_verify}


# -- argument parsing -----------------------------------------------------------


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    defaults = load_run_defaults()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--k", type=int, default=0, help="polynomial degree k (0..3)")
    common.add_argument("--family", default="cubic", help="mesh family: cubic | tetrahedral")
    common.add_argument("--stab", choices=["ch", "dh", "none"], help="multiplier stabilization")
    common.add_argument("--case", help=f"manufactured case ({', '.join(CASES)})")
    common.add_argument("--quad-elevation", type=int, default=defaults["quad_elevation"])
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, default=defaults["seed"])
    common.add_argument("--threads", type=int, default=defaults["threads"])
    common.add_argument("--symmetric", action="store_true", help="solve the symmetric indefinite form")
    common.add_argument("--curl-variant", choices=["rot", "full"], default="rot")
    common.add_argument("--dump-system", action="store_true", help="write the condensed system as triplets")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="cli.py", description="HHO solvers for 3D magnetostatics")
    sub = ap.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="generate or check meshes")
    mesh_sub = mesh.add_subparsers(dest="action", required=True)
    gen = mesh_sub.add_parser("gen", parents=[common])
    gen.add_argument("mesh_family", choices=sorted(MESH_FAMILIES))
    gen.add_argument("n", type=int)
    check = mesh_sub.add_parser("check", parents=[common])
    check.add_argument("path")

    solve_p = sub.add_parser("solve", parents=[common], help="solve one manufactured case")
    solve_p.add_argument("formulation", choices=FORMULATIONS)
    solve_p.add_argument("--mesh", help="polymesh v1 file (overrides --family/--n)")
    solve_p.add_argument("--n", type=int, default=2)
    solve_p.add_argument("--dump", help="CSV path for the element-block coefficients")

    conv = sub.add_parser("convergence", parents=[common], help="convergence study over a mesh family")
    conv.add_argument("--formulation", choices=FORMULATIONS, default="field")
    conv.add_argument("--refinements", type=_int_list, default=(2, 4, 8))
    conv.add_argument("--no-timing", action="store_true", help="write solve_time_s as 0.0")
    conv.add_argument("--plot", action="store_true", help="also write a log-log HTML plot")

    ver = sub.add_parser("verify", parents=[common], help="run the property suite")
    ver.add_argument("--k-max", type=int, default=3)
    ver.add_argument("--only", type=lambda s: [x for x in s.split(",") if x], help="comma-separated check groups")
    return ap


def config_from_args(args: argparse.Namespace) -> RunConfig:
    extra: dict[str, Any] = {}
    if args.command == "mesh":
        extra["action"] = args.action
    if getattr(args, "dump", None):
        extra["dump"] = args.dump
    if args.command == "verify":
        extra["k_max"] = args.k_max
        extra["only"] = args.only
    family = getattr(args, "mesh_family", None) or args.family
    mesh_path = getattr(args, "mesh", None) or getattr(args, "path", None)
    return RunConfig(
        command=args.command,
        formulation=getattr(args, "formulation", "field"),
        k=args.k,
        family=family,
        n=getattr(args, "n", 2),
        mesh_path=mesh_path,
        refinements=getattr(args, "refinements", (2, 4, 8)),
        stabilization=args.stab,
        case=args.case,
        quad_elevation=args.quad_elevation,
        out=args.out,
        seed=args.seed,
        threads=args.threads,
        symmetric=args.symmetric,
        full_curl=args.curl_variant == "full",
        timing=not getattr(args, "no_timing", False),
        dump_system=args.dump_system,
        plot=getattr(args, "plot", False),
        extra=extra,
    )


def run(config: RunConfig) -> tuple[int, dict]:
    """Validate and dispatch; returns (exit code, result dict)."""
    try:
        config.validate()
        result = COMMANDS[config.command](config)
    except CONFIG_ERRORS as e:
        logger.error("%s", e)
        return exit_code(e), {"status": "error", "error": error_payload(e)}
    except NUMERICAL_ERRORS as e:
        logger.error("numerical failure: %s", e)
        return exit_code(e), {"status": "error", "error": error_payload(e)}
    return (0 if result.get("status") == "ok" else 1), result


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    code, result = run(config_from_args(args))
    if code:
        detail = result.get("error") or result.get("failed") or {"status": result.get("status")}
        print(json.dumps(detail, ensure_ascii=False), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
