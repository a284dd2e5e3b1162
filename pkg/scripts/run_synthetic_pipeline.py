"""Run synth -> train-seg -> extract-road -> train-cls -> evaluate and print timings and metrics.

    python scripts/run_synthetic_pipeline.py --out /tmp/roadcond_run [--scenes 150 --seed 7 --lambda 1]
"""

import argparse
import dataclasses
import logging
from pathlib import Path

from roadcond.pipeline import PipelineSpec, run_synthetic_pipeline


def main():
    d = PipelineSpec()
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--scenes", type=int, default=d.scenes)
    ap.add_argument("--seed", type=int, default=d.seed)
    ap.add_argument("--lambda", dest="lam", type=float, default=d.lam)
    ap.add_argument("--denominator", choices=["paper", "simclr"], default=d.denominator)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    spec = dataclasses.replace(d, scenes=args.scenes, seed=args.seed, lam=args.lam, denominator=args.denominator)
    res = run_synthetic_pipeline(args.out, spec)
    for step, s in res.seconds.items():
        print(f"{step:14s} {s:7.1f}s")
    print(f"{'total':14s} {sum(res.seconds.values()):7.1f}s")
    print(f"segmenter test DICE   {res.seg_metrics['test_dice']:.4f} (best epoch {res.seg_metrics['best_epoch']})")
    print(f"classifier val F1     {res.cls_summary['val_macro_f1']:.4f} (best epoch {res.cls_summary['best_epoch']})")
    print(f"val separation margin {res.cls_summary['val_separation_margin']}")
    print(f"test macro F1         {res.report['macro']['f1']:.4f} on {res.report['extra']['n']} images")
    print(f"confusion matrix      {res.report['confusion_matrix']['counts']}")


if __name__ == "__main__":
    main()
