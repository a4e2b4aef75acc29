"""Hopper experiments: HCP-I vs vanilla PPO vs HCP-E+DYN on 50 variants, and
2-D embeddings of torso-mass variants exported with their masses."""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

import numpy as np

from hcp.embedding import embedding_report, write_report_csv
from hcp.hardware import BASELINE, HCP_E_DYN, HCP_I
from hcp.harness import load_agent, train, train_pool
from hcp.presets import hopper, torso_mass_hoppers


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", default="runs/hopper")
    p.add_argument("--steps", type=int, default=None, help="env steps per run (default: the preset budget)")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out_dir)
    summary = {}
    for alg in (HCP_I, BASELINE, HCP_E_DYN):
        cfg = hopper(alg, seeds=tuple(args.seeds))
        if args.steps:
            cfg = cfg.replace(total_steps=args.steps)
        runs = train(cfg, out / alg.replace("+", "_"))
        summary[alg] = float(np.mean([r.final_metric for r in runs]))
    cfg = torso_mass_hoppers()
    if args.steps:
        cfg = cfg.replace(total_steps=args.steps)
    run = train(cfg, out / "torso_mass")[0]
    rep = embedding_report(load_agent(run.checkpoint_path).provider.table, train_pool(cfg),
                           lambda s: s.links[0].mass)
    write_report_csv(rep, out / "torso_mass" / "embeddings.csv", "torso_mass")
    summary["torso_mass_spearman"] = rep.spearman_rho
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
