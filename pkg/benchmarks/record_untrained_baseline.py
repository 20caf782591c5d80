"""Record the untrained-backbone MoF on the desk preset for the acceptance suite.

    python benchmarks/record_untrained_baseline.py [--seeds 0 1 2]

The end-to-end acceptance test derives its threshold (baseline + 15 points)
from these values and checks that a live untrained run still reproduces them.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from globalseg.config import RunConfig
from globalseg.metrics import shuffled_floor
from globalseg.pipeline import run_pipeline

OUT = Path(__file__).with_name("desk_untrained_baseline.json")
MARGIN = 0.15


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", type=Path, default=OUT)
    args = parser.parse_args(argv)

    base = RunConfig.for_preset("desk")
    rows = {}
    for seed in args.seeds:
        run = run_pipeline(base.reseeded(seed), untrained=True)
        rows[str(seed)] = {
            "untrained_mof": round(run.mof, 6),
            "shuffled_floor": round(shuffled_floor(run.manifest, run.segmentation, base.eval), 6),
            "threshold": round(run.mof + MARGIN, 6),
        }
        print(seed, rows[str(seed)], flush=True)
    record = {
        "preset": "desk",
        "margin": MARGIN,
        "run_config": base.dumps(),
        "seeds": rows,
        "mean_untrained_mof": round(float(np.mean([r["untrained_mof"] for r in rows.values()])), 6),
    }
    args.out.write_text(json.dumps(record, indent=2) + "\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
