from __future__ import annotations

import argparse
import os
import sys

# Ensure project root on sys.path, then import the CLI
ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT_DIR not in sys.path:
    sys.path.insert(0, ROOT_DIR)

import cli  # noqa: E402


def main_entry():
    ap = argparse.ArgumentParser(description="Smoke test: mesh gen -> solve -> convergence -> plot")
    ap.add_argument("--family", default="cubic", help="cubic | tetrahedral")
    ap.add_argument("--formulation", default="field", help="field | potential")
    ap.add_argument("--k", type=int, default=0)
    ap.add_argument("--refinements", default="1,2,4")
    args = ap.parse_args()

    out_dir = os.path.join(ROOT_DIR, "outputs", "smoke")
    os.makedirs(out_dir, exist_ok=True)
    refinements = tuple(int(s) for s in args.refinements.split(","))

    print("[1/4] Generating mesh ...")
    msh = os.path.join(out_dir, f"{args.family}_{refinements[-1]}.msh")
    code, res = cli.run(cli.RunConfig(
        command="mesh", family=args.family, n=refinements[-1], out=msh, extra={"action": "gen"},
    ))
    if code:
        print(f"[ERR] mesh gen failed: {res}", file=sys.stderr)
        sys.exit(2)
    print(f"  path={res['path']}  elements={res['report']['n_elements']}  h={res['report']['meshsize']:.4f}")

    print("[2/4] Solving on the saved mesh ...")
    code, res = cli.run(cli.RunConfig(
        command="solve", formulation=args.formulation, k=args.k, mesh_path=msh,
        extra={"dump": os.path.join(out_dir, "solution.csv")},
    ))
    if code:
        print(f"[ERR] solve failed: {res}", file=sys.stderr)
        sys.exit(3)
    rep = res["report"]
    print(f"  dofs={rep['n_dofs']}  energy={rep['energy_rel']:.3e}  l2={rep['l2_rel']:.3e}  dump={res.get('dump')}")

    print("[3/4] Convergence study ...")
    csv = os.path.join(out_dir, "convergence.csv")
    code, res = cli.run(cli.RunConfig(
        command="convergence", formulation=args.formulation, k=args.k, family=args.family,
        refinements=refinements, out=csv, timing=False,
    ))
    if code:
        print(f"[ERR] convergence failed: {res}", file=sys.stderr)
        sys.exit(4)
    last = res["rows"][-1]
    print(f"  csv={csv}  eoc_energy={last['eoc_energy']:.2f}  eoc_l2={last['eoc_l2']:.2f}")

    print("[4/4] Plotting ...")
    plot = cli.generate_convergence_plot(csv, out_dir=out_dir)
    print(f"  html={plot['html_path']}")

    print("\nDONE.")


if __name__ == "__main__":
    main_entry()
