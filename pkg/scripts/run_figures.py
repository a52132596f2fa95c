#!/usr/bin/env python3
"""Run the three figure-style simulation presets and write CSV/JSON outputs.

Usage: python scripts/run_figures.py [--seed N] [--out-dir results/]
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from vqn.simulation import metrics_to_json_dict, preset, rows_to_csv


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out-dir", default="results")
    args = parser.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    for name in ("fig5", "fig6"):
        doc = preset(name, seed=args.seed)
        path = out / f"{name}.csv"
        path.write_text(rows_to_csv(doc["rows"], x_label=doc["x_label"]))
        print(f"{name}: wrote {path}")
        for x, m in doc["rows"]:
            print(f"  {doc['x_label']}={x:3d}  wait={m.avg_wait:8.2f}  qos={m.avg_qos:9.1f}  "
                  f"fairness={m.fairness:.4f}  throughput={m.throughput:6.1f}")

    doc = preset("fig7", seed=args.seed)
    path = out / "fig7.json"
    path.write_text(json.dumps(metrics_to_json_dict(doc["metrics"]), indent=2))
    m = doc["metrics"]
    queue = [q for _, q in m.queue_length_series]
    print(f"fig7: wrote {path}")
    print(f"  wait={m.avg_wait:.2f} fairness={m.fairness:.4f} completions={m.completions:.0f} "
          f"queue range [{min(queue)}, {max(queue)}]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
