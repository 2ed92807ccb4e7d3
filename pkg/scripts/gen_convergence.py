import argparse
import sys
from pathlib import Path

# 确保可导入项目根模块
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import cli  # noqa: E402
from hho.schemes import default_refinements  # noqa: E402


def main_cli():
    parser = argparse.ArgumentParser(description="Regenerate the convergence tables of both formulations (k = 0..2).")
    parser.add_argument("--out-dir", type=str, default="outputs/convergence")
    parser.add_argument("--k-max", type=int, default=2)
    parser.add_argument("--plot", action="store_true")
    args = parser.parse_args()

    # 立方体网格 n=2,4,8，四面体网格 n=1,2,4；k=0 各加密一层（n=16 / n=8）
    runs = []
    for formulation in ("field", "potential"):
        for k in range(args.k_max + 1):
            for family in ("cubic", "tetrahedral"):
                runs.append((formulation, family, default_refinements(family, k), k, None))
        if formulation == "potential":
            runs.extend(
                ("potential", "tetrahedral", default_refinements("tetrahedral", k), k, "none")
                for k in range(args.k_max + 1)
            )

    failures = 0
    for formulation, family, refinements, k, stab in runs:
        name = f"{formulation}_{family}_k{k}_{stab or 'default'}.csv"
        code, res = cli.run(cli.RunConfig(
            command="convergence", formulation=formulation, family=family, refinements=refinements,
            k=k, stabilization=stab, out=str(Path(args.out_dir) / name), timing=False, plot=args.plot,
        ))
        if code:
            failures += 1
            print(f"[ERR] {name}: {res}")
            continue
        last = res["rows"][-1]
        print(f"{name}: eoc_energy={last['eoc_energy']:.2f} eoc_l2={last['eoc_l2']:.2f} eoc_lagrange={last['eoc_lagrange']:.2f}")
    sys.exit(1 if failures else 0)


if __name__ == "__main__":
    main_cli()
