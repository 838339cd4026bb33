"""Train the tiny preset on the desk archive and score it on held-out series.

    python3 scripts/desk_skill.py --steps 5000 --out runs/desk
"""

import argparse
import json

from anyvariate.experiments import DESK_BATCH, DESK_LR, DESK_STEPS, desk_config, desk_skill


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=DESK_STEPS)
    ap.add_argument("--batch-size", type=int, default=DESK_BATCH)
    ap.add_argument("--lr", type=float, default=DESK_LR)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--out", help="checkpoint and metrics.jsonl directory")
    args = ap.parse_args()

    def log(rec):
        if rec["step"] % 250 == 0:
            print(f"step {rec['step']:5d}  lr {rec['lr']:.2e}  nll {rec['nll']:.4f}", flush=True)

    cfg = desk_config(args.steps, args.batch_size, args.lr, args.seed)
    res = desk_skill(cfg, out_dir=args.out, n_samples=args.samples, log=log)
    report = res.report.to_dict()
    print(json.dumps(report["aggregate"], indent=2))
    print(f"train {res.train_seconds / 60:.1f} min, eval {res.eval_seconds / 60:.1f} min")


if __name__ == "__main__":
    main()
