"""Desk-scale experiment presets used by the acceptance suite and scripts/.

Every preset is an ordinary ``ExperimentConfig``; ``write_presets`` dumps them
as YAML so the CLI can run the same experiments.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .envs import HOPPER, Box, TaskConfig
from .harness import HOPPER_TORSO_MASS, PLANAR, PLANAR_TYPES, ExperimentConfig, planar_reacher_config, save_config
from .hardware import BASELINE, HCP_E, HCP_E_DYN, HCP_I
from .rl import PpoConfig

SEEDS = (0, 1, 2)
PLANAR_HALFWIDTH = 0.05
TRAIN_DAMPING = (0.01, 2.0)


def _planar_lengths(types, halfwidth=PLANAR_HALFWIDTH) -> dict:
    return {f"{t}_{j}": (m, halfwidth) for t in types for j, m in enumerate(PLANAR_TYPES[t])}


def multi_type_reacher(algorithm: str = HCP_E, episodes: int = 3000, seeds=SEEDS, types=("P2", "P3"),
                       held_out: str | None = "P4", per_type: int = 20) -> ExperimentConfig:
    """Two planar arm families with 20 variants each; goals in a 0.2 x 0.3 m patch."""
    cfg = planar_reacher_config(episodes=episodes, algorithm=algorithm, pool_size=per_type, seeds=seeds,
                                train_types=tuple(types), held_out_type=held_out, eval_every=250, eval_robots=40)
    task = dataclasses.replace(cfg.task, goal_box=Box((0.3, 0.0, 0.3), (0.2, 0.3, 0.0)))
    return cfg.replace(name=f"reacher-{'-'.join(types)}-{algorithm}", task=task,
                       ranges={"damping": TRAIN_DAMPING, "lengths": _planar_lengths(PLANAR_TYPES)})


def finetune_target(base: ExperimentConfig, episodes: int = 400, seeds=SEEDS) -> ExperimentConfig:
    """Fine-tuning run on the held-out planar family: trains and evaluates on that family only."""
    return base.replace(name=f"finetune-{base.held_out_type}", train_types=(base.held_out_type,),
                        held_out_type=None, episodes=episodes, seeds=seeds, eval_every=50,
                        ddpg=dataclasses.replace(base.ddpg, warmup_episodes=5))


def hopper(algorithm: str, total_steps: int = 1_000_000, seeds=SEEDS, pool_size: int = 50) -> ExperimentConfig:
    """Hopper variants with every sampled parameter varying."""
    return ExperimentConfig(
        name=f"hopper-{algorithm}", algorithm=algorithm, task=TaskConfig(task=HOPPER, max_steps=1000),
        train_types=(HOPPER,), held_out_type=None, pool_size=pool_size, seeds=seeds, total_steps=total_steps,
        eval_every=0, embedding_dim=32, embedding_lr=1e-2,
        ppo=PpoConfig(n_actors=8, horizon=512, hidden=(64, 64), lr=3e-4, minibatch=512, epochs=5))


def torso_mass_hoppers(total_steps: int = 1_000_000, seeds=(0,), pool_size: int = 50) -> ExperimentConfig:
    """HCP-I with 2-D embeddings on hoppers that differ only in torso mass."""
    return hopper(HCP_I, total_steps, seeds, pool_size).replace(
        name="hopper-torso-mass", robot_kind=HOPPER_TORSO_MASS, embedding_dim=2,
        ranges={"mass_multiplier": (0.5, 2.0)})


def presets() -> dict:
    out = {}
    for alg in (HCP_E, BASELINE):
        out[f"reacher_{alg}"] = multi_type_reacher(alg)
    out["finetune_P4"] = finetune_target(multi_type_reacher(HCP_E))
    for alg in (HCP_I, BASELINE, HCP_E_DYN):
        out[f"hopper_{alg}"] = hopper(alg)
    out["hopper_torso_mass"] = torso_mass_hoppers()
    return out


def write_presets(directory) -> list[Path]:
    d = Path(directory)
    paths = []
    for name, cfg in presets().items():
        p = d / f"{name.replace('+', '_')}.yaml"
        save_config(cfg, p)
        paths.append(p)
    return paths


__all__ = ["multi_type_reacher", "finetune_target", "hopper", "torso_mass_hoppers", "presets", "write_presets",
           "PLANAR"]
