"""Train classifiers over a grid of contrastive weights and denominator variants on one extracted set.

    python scripts/run_synthetic_pipeline.py --out /tmp/roadcond_run
    python scripts/lambda_sweep.py --run /tmp/roadcond_run [--lambdas 0,0.1,1,3 --seeds 7,8]
"""

import argparse
import json
from pathlib import Path

from roadcond.cli import run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--run", type=Path, required=True, help="output directory of run_synthetic_pipeline.py")
    ap.add_argument("--lambdas", default="0,0.1,1,3")
    ap.add_argument("--modes", default="paper,simclr")
    ap.add_argument("--seeds", default="7")
    args = ap.parse_args()
    data = args.run / "extracted"
    print(f"{'mode':7s} {'lambda':>6s} {'seed':>4s} {'val F1':>7s} {'margin':>7s} {'test F1':>7s}")
    for mode in args.modes.split(","):
        for lam in (float(v) for v in args.lambdas.split(",")):
            if lam == 0 and mode != args.modes.split(",")[0]:
                continue  # the denominator is irrelevant without the contrastive term
            for seed in args.seeds.split(","):
                out = args.run / "sweep" / f"{mode}_{lam:g}_{seed}"
                common = ["--log-level", "WARNING"]
                assert run(["train-cls", "--data", str(data), "--out", str(out / "cls"), "--seed", seed,
                            "--lambda", repr(lam), "--denominator", mode] + common) == 0
                assert run(["evaluate", "--data", str(data), "--out", str(out / "eval"),
                            "--checkpoint", str(out / "cls" / "classifier.ckpt")] + common) == 0
                s = json.loads((out / "cls" / "cls_summary.json").read_text())
                r = json.loads((out / "eval" / "report.json").read_text())
                m = s["val_separation_margin"]
                print(f"{mode:7s} {lam:6g} {seed:>4s} {s['val_macro_f1']:7.3f} "
                      f"{m if m is None else format(m, '7.3f'):>7} {r['macro']['f1']:7.3f}")


if __name__ == "__main__":
    main()
