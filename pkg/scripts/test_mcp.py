import os
import sys
from pathlib import Path

# 确保可导入项目根模块
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import pytest  # noqa: E402

import cli  # noqa: E402
import main  # noqa: E402
from hho.errors import SolverError  # noqa: E402
from hho.mesh import generate_cubic  # noqa: E402


@pytest.fixture(autouse=True)
def _outputs(tmp_path, monkeypatch):
    out = tmp_path / "outputs"
    (out / "meshes").mkdir(parents=True)
    monkeypatch.setattr(main, "OUTPUT_DIR", str(out))
    monkeypatch.setenv("HHO_OUTPUT_DIR", str(out))
    return out


def test_health():
    res = main.health()
    assert res["status"] == "ok"
    assert res["service"] == main.SERVICE_NAME


def test_mesh_generate_and_check(_outputs):
    gen = main.mesh_generate(family="tetrahedral", n=1)
    assert gen["status"] == "ok"
    assert gen["n_elements"] == 6
    assert os.path.exists(gen["path"])
    chk = main.mesh_check(path=gen["path"])
    assert chk["status"] == "ok"
    assert chk["report"]["n_boundary_faces"] == 12


def test_mesh_generate_rejects_path_names():
    res = main.mesh_generate(name="../escape")
    assert res["status"] == "error"
    assert res["error"]["type"] == "ConfigError"
    assert res["error"]["category"] == "config"
    assert res["exit_code"] == 2


def test_solve_tool():
    res = main.solve(formulation="potential", k=0, family="tetrahedral", n=1)
    assert res["status"] == "ok"
    assert res["exit_code"] == 0
    assert res["report"]["formulation"] == "potential"


def test_solve_tool_config_error():
    res = main.solve(formulation="field", stabilization="dh")
    assert res["status"] == "error"
    assert res["error"]["type"] == "ConfigError"


def test_convergence_and_plot(_outputs):
    conv = main.convergence(formulation="field", k=0, family="cubic", refinements=[1, 2], timing=False)
    assert conv["status"] == "ok"
    assert len(conv["rows"]) == 2
    plot = main.plot_convergence(csv_path=conv["csv"])
    assert plot["status"] == "ok"
    assert plot["kind"] == "loglog"
    assert "<html" in Path(plot["html_path"]).read_text(encoding="utf-8")


def test_plot_missing_csv():
    res = main.plot_convergence(csv_path="does/not/exist.csv")
    assert res["status"] == "error"
    assert res["error"]["type"] == "FileNotFoundError"


def test_mesh_check_reports_violated_invariant(tmp_path):
    lines = generate_cubic(1).dumps().splitlines()
    last = 1 + int(lines[1].split()[1])
    x, y, z = (float(v) for v in lines[last].split())
    lines[last] = f"{x!r} {y!r} {z + 0.2!r}"
    warped = tmp_path / "warped.msh"
    warped.write_text("\n".join(lines) + "\n", encoding="utf-8")
    res = main.mesh_check(path=str(warped))
    assert res["status"] == "error"
    assert res["exit_code"] == 2
    err = res["error"]
    assert err["type"] == "MeshValidationError"
    assert err["category"] == "config"
    assert err["invariant"] == "face not planar"
    assert err["entity"].startswith("face ")


def test_numerical_failure_maps_to_exit_1(monkeypatch):
    def fail(*args, **kwargs):
        raise SolverError("sparse factorization failed: singular matrix")

    monkeypatch.setattr(cli, "solve_case", fail)
    res = main.solve(formulation="field", k=0, family="cubic", n=1)
    assert res["status"] == "error"
    assert res["exit_code"] == 1
    assert res["error"]["type"] == "SolverError"
    assert res["error"]["category"] == "numerical"


def test_unexpected_errors_are_internal(monkeypatch):
    def boom(family, n):
        raise RuntimeError("disk full")

    monkeypatch.setattr(main, "build_mesh", boom)
    res = main.mesh_generate(family="cubic", n=1)
    assert res["error"] == {"type": "RuntimeError", "category": "internal", "message": "disk full"}
    assert res["exit_code"] == 1


def test_verify_tool_subset():
    res = main.verify(k_max=1, only=["meshes", "dimensions"])
    assert res["status"] == "ok"
    assert res["failed"] == []


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
