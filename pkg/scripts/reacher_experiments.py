"""Planar reacher experiments: HCP-E vs BASELINE training, zero-shot on the
held-out family, damping stress and fine-tuning. All outputs are CSV/JSON."""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

import numpy as np

from hcp.hardware import BASELINE, HCP_E
from hcp.harness import damping_stress_test, finetune, make_pool, sign_test_p, train, zero_shot_eval
from hcp.presets import finetune_target, multi_type_reacher


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", default="runs/reacher")
    p.add_argument("--episodes", type=int, default=3000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--finetune-episodes", type=int, default=400)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out_dir)
    summary = {}
    runs = {}
    for alg in (HCP_E, BASELINE):
        cfg = multi_type_reacher(alg, args.episodes, tuple(args.seeds))
        runs[alg] = train(cfg, out / alg)
        summary[f"{alg}_final_eval_success"] = [r.final_metric for r in runs[alg]]
    for alg in (HCP_E, BASELINE):
        zs = zero_shot_eval(runs[alg][0].checkpoint_path, "P4", trials=10, robots_per_trial=100)
        summary[f"{alg}_zero_shot_P4"] = [zs.success_rate_mean, zs.success_rate_std]
    rows = damping_stress_test(runs[HCP_E][0].checkpoint_path, out_csv=out / "damping_stress.csv")
    summary["damping_stress"] = {f"{r['damping_low']}-{r['damping_high']}": r["success_rate"] for r in rows}
    cfg = finetune_target(multi_type_reacher(HCP_E, args.episodes, tuple(args.seeds)), args.finetune_episodes)
    pool = make_pool(cfg, cfg.train_types, cfg.pool_size, cfg.pool_seed + 1, "finetune")
    wins = 0
    for r in runs[HCP_E]:
        res = finetune(r.checkpoint_path, pool, cfg, out / "finetune" / f"seed_{r.seed}", seeds=(r.seed,))
        wins += res.pretrained_auc[0] > res.scratch_auc[0]
        summary[f"finetune_auc_seed_{r.seed}"] = [res.pretrained_auc[0], res.scratch_auc[0]]
    summary["finetune_sign_test_p"] = sign_test_p(wins, len(runs[HCP_E]))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
    print(json.dumps(summary, indent=2, default=float))
    print("mean final eval success:", {k: float(np.mean(v)) for k, v in summary.items() if k.endswith("success")})


if __name__ == "__main__":
    main()
