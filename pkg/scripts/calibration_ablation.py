"""Compare runs with and without base-view calibration.

Runs the pipeline twice per seed (``calibration_passes`` from the config and
0) and prints chroma spread and long-term consistency side by side.

    python scripts/calibration_ablation.py --config configs/ring_ablation.json --seeds 0 1 2
"""

import argparse
import json
from pathlib import Path

from splatcolor.pipeline import load_config, run_pipeline


def run(cfg, out_dir: Path) -> dict:
    run_pipeline(cfg.replace(output_dir=str(out_dir)))
    return json.loads((out_dir / "report.json").read_text())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default="configs/ring_ablation.json")
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = parser.parse_args()

    base = load_config(args.config)
    rows = []
    for seed in args.seeds:
        cfg = base.replace(seed=seed)
        cal = run(cfg, Path(args.out) / f"seed{seed}_calibrated")
        nocal = run(cfg.replace(calibration_passes=0), Path(args.out) / f"seed{seed}_uncalibrated")
        c = cal["calibration"]
        rows.append({
            "seed": seed,
            "spread_initial": c["chroma_spread_initial"],
            "spread_calibrated": c["chroma_spread_calibrated"],
            "spread_drop": 1 - c["chroma_spread_calibrated"] / c["chroma_spread_initial"],
            "long_calibrated": cal["metrics"]["long_consistency"],
            "long_uncalibrated": nocal["metrics"]["long_consistency"],
            "long_ratio": cal["metrics"]["long_consistency"] / nocal["metrics"]["long_consistency"],
            "cdi_calibrated": cal["metrics"]["cdi"],
            "cdi_uncalibrated": nocal["metrics"]["cdi"],
        })

    keys = list(rows[0])
    print(" ".join(f"{k:>18}" for k in keys))
    for r in rows:
        print(" ".join(f"{r[k]:>18.6g}" for k in keys))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
