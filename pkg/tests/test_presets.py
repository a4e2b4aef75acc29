from __future__ import annotations

from pathlib import Path

import pytest

from hcp.envs import HOPPER
from hcp.hardware import BASELINE, HCP_E, HCP_I
from hcp.harness import load_config, make_pool, train_pool
from hcp.presets import finetune_target, hopper, multi_type_reacher, presets, torso_mass_hoppers, write_presets

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_reacher_preset_pool():
    cfg = multi_type_reacher(HCP_E)
    pool = train_pool(cfg)
    assert len(pool) == 40
    families = [s.robot_id.split("-")[1] for s in pool]
    assert families.count("P2") == families.count("P3") == 20
    assert {s.dof for s in pool} == {2, 3}
    assert cfg.held_out_type == "P4" and cfg.ranges["damping"] == (0.01, 2.0)
    assert (cfg.episodes, cfg.seeds) == (3000, (0, 1, 2))


def test_finetune_preset_targets_held_out_family():
    cfg = finetune_target(multi_type_reacher(HCP_E))
    assert cfg.train_types == ("P4",) and cfg.held_out_type is None
    pool = make_pool(cfg, cfg.train_types, cfg.pool_size, cfg.pool_seed + 1, "finetune")
    assert {s.dof for s in pool} == {4}


def test_hopper_presets():
    for alg in (HCP_I, BASELINE):
        cfg = hopper(alg)
        assert cfg.task.task == HOPPER and cfg.pool_size == 50 and len(cfg.seeds) == 3
    t = torso_mass_hoppers()
    pool = train_pool(t)
    masses = [s.links[0].mass for s in pool]
    assert len(set(masses)) == len(pool)
    # only the torso differs
    assert len({s.links[1:] for s in pool}) == 1 and len({s.joints for s in pool}) == 1


def test_write_presets_roundtrip(tmp_path):
    paths = write_presets(tmp_path)
    cfgs = presets()
    assert len(paths) == len(cfgs)
    for (name, cfg), path in zip(cfgs.items(), paths):
        assert load_config(path) == cfg, name


@pytest.mark.parametrize("name", sorted(presets()))
def test_checked_in_configs_match_presets(name):
    path = CONFIGS / f"{name.replace('+', '_')}.yaml"
    assert load_config(path) == presets()[name]
