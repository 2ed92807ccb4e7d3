"""
MCP HHO Magnetostatics Service

Run with:
    uv run python main.py
"""

import logging
import os
import platform
from datetime import datetime, timezone
from functools import wraps

from mcp.server.fastmcp import FastMCP

from cli import RunConfig, run, write_mesh_file
from hho.config import load_run_defaults
from hho.errors import ConfigError, error_payload, exit_code
from hho.mesh import validate
from hho.schemes import build_mesh
from utils.convergence_plot import generate_convergence_plot

logger = logging.getLogger("hho.mcp")

OUTPUT_DIR = load_run_defaults()["output_dir"]

# Prepare directories for later tools
os.makedirs(OUTPUT_DIR, exist_ok=True)
os.makedirs(os.path.join(OUTPUT_DIR, "meshes"), exist_ok=True)
os.makedirs(os.path.join(OUTPUT_DIR, "plots"), exist_ok=True)

SERVICE_NAME = "HHOMagnetostaticsMCP"
SERVICE_VERSION = "0.1.0"

# Create an MCP server
mcp = FastMCP(SERVICE_NAME)


def tool_guard(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as e:
            logger.error("%s failed: %s", fn.__name__, e)
            return {"status": "error", "error": error_payload(e), "exit_code": exit_code(e)}
    return wrapper


def _run(config: RunConfig) -> dict:
    code, result = run(config)
    result["exit_code"] = code
    return result


def _safe_name(name: str) -> str:
    if not isinstance(name, str) or len(name.strip()) == 0 or any(c in name for c in ("/", "\\", "..")):
        raise ConfigError(f"invalid mesh name {name!r}")
    return name


# Health tool
@mcp.tool()
@tool_guard
def health() -> dict:
    """Service healthcheck and version info."""
    return {
        "status": "ok",
        "service": SERVICE_NAME,
        "version": SERVICE_VERSION,
        "time": datetime.now(timezone.utc).isoformat(),
        "python": platform.python_version(),
    }


@mcp.tool()
@tool_guard
def mesh_generate(family: str = "cubic", n: int = 2, name: str | None = None) -> dict:
    """
    Generate a structured mesh of the unit cube (family: cubic | tetrahedral, n cells per side)
    and save it as outputs/meshes/{name}.msh in polymesh v1 format.
    """
    mesh = build_mesh(family, n)
    stem = _safe_name(name or f"{family}_{n}")
    path = write_mesh_file(mesh, os.path.join(OUTPUT_DIR, "meshes", f"{stem}.msh"))
    return {
        "status": "ok",
        "path": path,
        "n_elements": mesh.n_elements,
        "n_faces": mesh.n_faces,
        "meshsize": mesh.h,
        "report": validate(mesh).to_dict(),
    }


@mcp.tool()
@tool_guard
def mesh_check(path: str) -> dict:
    """Load a polymesh v1 file, validate it and return its regularity report."""
    return _run(RunConfig(command="mesh", mesh_path=path, extra={"action": "check"}))


@mcp.tool()
@tool_guard
def solve(
    formulation: str = "field",
    k: int = 0,
    family: str = "cubic",
    n: int = 2,
    mesh_path: str | None = None,
    stabilization: str | None = None,
    case: str | None = None,
    quad_elevation: int = 8,
    symmetric: bool = False,
    curl_variant: str = "rot",
    dump_path: str | None = None,
) -> dict:
    """
    Solve one manufactured case and return relative errors in the energy, L2 and Lagrange norms.
    formulation: field | potential; stabilization: ch | dh | none (none needs tetrahedral meshes).
    """
    defaults = load_run_defaults()
    extra = {"dump": dump_path} if dump_path else {}
    return _run(RunConfig(
        command="solve",
        formulation=formulation,
        k=k,
        family=family,
        n=n,
        mesh_path=mesh_path,
        stabilization=stabilization,
        case=case,
        quad_elevation=quad_elevation,
        seed=defaults["seed"],
        threads=defaults["threads"],
        symmetric=symmetric,
        full_curl=curl_variant == "full",
        extra=extra,
    ))


@mcp.tool()
@tool_guard
def convergence(
    formulation: str = "field",
    k: int = 0,
    family: str = "cubic",
    refinements: list[int] | None = None,
    stabilization: str | None = None,
    timing: bool = True,
    plot: bool = False,
) -> dict:
    """
    Convergence study over a mesh family; writes the CSV (meshsize, n_dofs, solve_time_s,
    err_*, eoc_*) and optionally a log-log HTML plot.
    """
    defaults = load_run_defaults()
    return _run(RunConfig(
        command="convergence",
        formulation=formulation,
        k=k,
        family=family,
        refinements=tuple(refinements or (2, 4, 8)),
        stabilization=stabilization,
        quad_elevation=defaults["quad_elevation"],
        seed=defaults["seed"],
        threads=defaults["threads"],
        timing=timing,
        plot=plot,
    ))


@mcp.tool()
@tool_guard
def verify(k_max: int = 3, only: list[str] | None = None) -> dict:
    """Run the property suite (quadrature, dimensions, commutation, decomposition, coercivity, condensation, structure)."""
    defaults = load_run_defaults()
    return _run(RunConfig(command="verify", seed=defaults["seed"], extra={"k_max": k_max, "only": only}))


@mcp.tool()
@tool_guard
def plot_convergence(csv_path: str) -> dict:
    """Render a convergence CSV as a log-log interactive HTML chart."""
    return generate_convergence_plot(csv_path, out_dir=os.path.join(OUTPUT_DIR, "plots"))


if __name__ == "__main__":
    mcp.run(transport="sse")
