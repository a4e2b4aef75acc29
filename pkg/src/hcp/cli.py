"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 simulation or loss divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .embedding import embedding_report, write_report_csv
from .errors import ConfigError, MigrationError, ProtocolError, SimulationDiverged
from .harness import (DEFAULT_DAMPING_RANGES, ExperimentConfig, damping_stress_test, finetune, load_agent,
                      load_config, make_pool, train, train_pool, write_csv, zero_shot_eval)
from .kinematics import dynamics_vector, explicit_encoding
from .robots import read_pool, write_pool

log = logging.getLogger("hcp")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

VARIED_PARAMS = {
    "torso_mass": lambda s: s.links[0].mass,
    "total_mass": lambda s: sum(l.mass for l in s.links),
    "mean_damping": lambda s: float(np.mean([j.damping for j in s.joints])),
}


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seeds=(args.seed,))
    return cfg


def cmd_gen_pool(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace(pool_seed=args.seed)
    pool = train_pool(cfg)
    out = Path(args.out_dir) / "pool.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pool(out, pool)
    print(f"{len(pool)} robots -> {out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    pool = read_pool(args.pool) if args.pool else train_pool(cfg)
    dyn = args.with_dynamics
    rows = []
    for spec in pool:
        v = explicit_encoding(spec).values
        if dyn:
            v = np.concatenate([v, dynamics_vector(spec, cfg.sampling_ranges())])
        rows.append((spec.robot_id, spec.type_tag, *v))
    n = len(rows[0]) - 2 if rows else 0
    out = write_csv(Path(args.out_dir) / "encodings.csv", ["robot_id", "type", *[f"v{i}" for i in range(n)]], rows)
    print(f"{len(rows)} encodings -> {out}")
    return EXIT_OK


def _diverged(out_dir) -> bool:
    m = json.loads((Path(out_dir) / "manifest.json").read_text())
    return any(e.startswith(("SimulationDiverged", "FloatingPointError")) for e in m["errors"].values())


def cmd_train(args) -> int:
    cfg = _config(args)
    res = train(cfg, args.out_dir, init_checkpoint=args.checkpoint)
    for r in res:
        print(f"seed {r.seed}: final {r.final_metric:.3f} ({r.updates} updates) -> {r.checkpoint_path}")
    if _diverged(args.out_dir):
        return EXIT_DIVERGED
    return EXIT_OK if res else EXIT_CONFIG


def cmd_eval(args) -> int:
    ck = load_agent(args.checkpoint)
    target = args.target_type or ck.cfg.held_out_type
    if target is None:
        raise ConfigError("no --target-type given and the checkpoint has no held-out type")
    r = zero_shot_eval(args.checkpoint, target, args.trials, args.robots, seed=args.seed or 0)
    out = Path(args.out_dir)
    write_csv(out / "zero_shot_trials.csv", ["trial", "success_rate"], list(enumerate(r.trial_rates)))
    write_csv(out / "zero_shot_episodes.csv", ["episode", "final_distance", "length"],
              list(zip(range(len(r.episode_lengths)), r.final_distances or [float("nan")] * len(r.episode_lengths),
                       r.episode_lengths)))
    summary = {"target_type": target, "success_rate_mean": r.success_rate_mean,
               "success_rate_std": r.success_rate_std, "distance": r.distance_summary()}
    if r.returns:
        summary["mean_return"] = float(np.mean(r.returns))
    (out / "zero_shot_summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_finetune(args) -> int:
    ck = load_agent(args.checkpoint)
    cfg = load_config(args.config) if args.config else ck.cfg
    if args.seed is not None:
        cfg = cfg.replace(seeds=(args.seed,))
    if args.pool:
        pool = read_pool(args.pool)
    else:
        if cfg.held_out_type is None:
            raise ConfigError("finetune needs --pool or a config with held_out_type")
        pool = make_pool(cfg, [cfg.held_out_type], cfg.pool_size, cfg.pool_seed + 1, "finetune")
    res = finetune(args.checkpoint, pool, cfg, args.out_dir)
    if isinstance(res, Path):
        print(f"zero budget: checkpoint unchanged at {res}")
        return EXIT_OK
    print(f"pretrained AUC {res.pretrained_auc} scratch AUC {res.scratch_auc} -> {res.csv_path}")
    return EXIT_OK


def cmd_stress(args) -> int:
    ranges = DEFAULT_DAMPING_RANGES
    if args.ranges:
        ranges = [tuple(float(x) for x in r.split(":")) for r in args.ranges.split(",")]
    rows = damping_stress_test(args.checkpoint, ranges, args.robots, args.seed or 0,
                               Path(args.out_dir) / "damping_stress.csv")
    for r in rows:
        print(f"[{r['damping_low']}, {r['damping_high']}): {r['success_rate']:.1f}% "
              f"mean length {r['mean_length']:.1f}")
    return EXIT_OK


def cmd_embed_export(args) -> int:
    ck = load_agent(args.checkpoint)
    if not ck.provider.learnable:
        raise ConfigError("checkpoint has no learned embeddings")
    pool = read_pool(args.pool) if args.pool else train_pool(ck.cfg)
    if args.param not in VARIED_PARAMS:
        raise ConfigError(f"--param must be one of {sorted(VARIED_PARAMS)}")
    rep = embedding_report(ck.provider.table, pool, VARIED_PARAMS[args.param])
    out = Path(args.out_dir) / "embeddings.csv"
    write_report_csv(rep, out, args.param)
    print(f"{len(rep.rows)} rows -> {out}; spearman rho = {rep.spearman_rho}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hcp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, checkpoint=False, config=True):
        sp = sub.add_parser(name, help=help_)
        if config:
            sp.add_argument("--config", help="experiment YAML file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", default="runs")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)
        sp.set_defaults(fn=fn)
        return sp

    add("gen-pool", cmd_gen_pool, "sample the training robot pool")
    sp = add("encode", cmd_encode, "explicit hardware vectors for a pool")
    sp.add_argument("--pool", help="pool.jsonl (default: the config's training pool)")
    sp.add_argument("--with-dynamics", action="store_true", help="append scaled dynamics parameters")
    sp = add("train", cmd_train, "train per seed; writes curves, checkpoints and a manifest")
    sp.add_argument("--checkpoint", help="warm-start weights")
    sp = add("eval", cmd_eval, "zero-shot evaluation on fresh robots", checkpoint=True, config=False)
    sp.add_argument("--target-type")
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--robots", type=int, default=100)
    sp = add("finetune", cmd_finetune, "pretrained vs scratch on a new pool", checkpoint=True)
    sp.add_argument("--pool", help="pool.jsonl of new robots (default: held-out type)")
    sp = add("stress", cmd_stress, "success rate per damping range", checkpoint=True, config=False)
    sp.add_argument("--ranges", help="e.g. 0.01:2,2:10,10:20,20:30")
    sp.add_argument("--robots", type=int, default=100)
    sp = add("embed-export", cmd_embed_export, "learned embeddings with a physical parameter", checkpoint=True,
             config=False)
    sp.add_argument("--pool", help="pool.jsonl (default: the checkpoint's training pool)")
    sp.add_argument("--param", default="torso_mass")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, MigrationError, ProtocolError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationDiverged, FloatingPointError) as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
