from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest
from scipy.stats import fisher_exact

from hcp.envs import HOPPER, TaskConfig
from hcp.errors import ConfigError, MigrationError, ProtocolError
from hcp.harness import (EvalResult, ExperimentConfig, build_agent, curve_auc, damping_stress_test, eval_pool,
                         evaluate_ddpg, file_sha256, finetune, load_agent, load_config, make_pool, make_provider,
                         planar_reacher_config, random_policy_success, read_csv, rerun_manifest, save_agent,
                         save_config, sign_test_p, train, train_pool, with_torso_mass, zero_shot_eval)
from hcp.hardware import BASELINE, HCP_E, HCP_E_DYN, HCP_I
from hcp.kinematics import DYN_DIM, EXPLICIT_DIM
from hcp.rl import DdpgConfig, PpoConfig
from hcp.rng import restore_rng


def tiny(episodes=12, **kw):
    cfg = planar_reacher_config(episodes=episodes, pool_size=2, eval_every=6, eval_robots=3)
    cfg = cfg.replace(task=dataclasses.replace(cfg.task, max_steps=15),
                      ddpg=DdpgConfig(hidden=(16, 16), batch_size=16, warmup_episodes=2, updates_per_episode=3))
    return cfg.replace(**kw) if kw else cfg


def tiny_hopper(**kw):
    cfg = ExperimentConfig(name="hop", algorithm=HCP_I, task=TaskConfig(task=HOPPER, max_steps=40),
                           train_types=("HOPPER",), held_out_type=None, pool_size=3, total_steps=160,
                           eval_every=1, eval_robots=2, embedding_dim=2,
                           ppo=PpoConfig(n_actors=2, horizon=40, hidden=(16, 16), minibatch=32, epochs=2))
    return cfg.replace(**kw) if kw else cfg


# -- configs ------------------------------------------------------------------


def test_config_yaml_roundtrip(tmp_path):
    cfg = tiny(seeds=(1, 2), ranges={"damping": (0.1, 0.5)})
    save_config(cfg, tmp_path / "c.yaml")
    back = load_config(tmp_path / "c.yaml")
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_config_defaults_follow_tables():
    cfg = ExperimentConfig()
    d = cfg.ddpg
    assert (d.actor_lr, d.critic_lr, d.critic_weight_decay, d.gamma, d.batch_size) == (1e-4, 1e-4, 1e-3, 0.99, 128)
    assert (d.buffer_size, d.warmup_episodes, d.updates_per_episode, d.tau, d.her_k) == (10 ** 6, 50, 100, 0.01, 4)
    assert d.hidden == (128, 256, 256)
    p = cfg.ppo
    assert (p.n_actors, p.horizon, p.lr, p.lam, p.clip, p.minibatch, p.epochs) == (8, 2048, 1e-4, 0.95, 0.2, 512, 5)
    assert (p.c1, p.c2, p.hidden) == (0.5, 0.015, (128, 128))
    assert cfg.protocol.trials == 10 and cfg.protocol.robots_per_trial == 100
    assert cfg.held_out_type not in cfg.train_types


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(train_types=("A", "B"), held_out_type="A")
    with pytest.raises(ConfigError):
        ExperimentConfig(algorithm="HCP-X")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"episodez": 3})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"ddpg": {"lr": 3}})
    with pytest.raises(ConfigError):
        ExperimentConfig(ranges={"dampening": (0, 1)})
    with pytest.raises(ConfigError):
        ExperimentConfig(task=TaskConfig(task=HOPPER), train_types=("A",))
    (tmp_path / "bad.yaml").write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")


# -- hardware conditioning ------------------------------------------------------


@pytest.mark.parametrize("alg,fixed,learned", [(BASELINE, 0, 0), (HCP_E, EXPLICIT_DIM, 0),
                                               (HCP_E_DYN, EXPLICIT_DIM + DYN_DIM, 0), (HCP_I, 0, 32)])
def test_agent_input_layout(alg, fixed, learned):
    cfg = ExperimentConfig(algorithm=alg, pool_size=1)
    agent = build_agent(cfg, make_provider(cfg, 0), 0)
    assert (agent.fixed_dim, agent.learned_dim) == (fixed, learned)
    assert agent.in_dim == 14 + 3 + fixed + learned


def test_dynamics_vector_scaled(mixed_pool):
    cfg = ExperimentConfig(algorithm=HCP_E_DYN)
    prov = make_provider(cfg, 0)
    for spec in mixed_pool:
        v = prov.fixed(spec)
        assert v.shape == (EXPLICIT_DIM + DYN_DIM,)
        dyn = v[EXPLICIT_DIM:]
        assert np.all(dyn >= 0) and np.all(dyn < 1)


# -- pools ----------------------------------------------------------------------


def test_pools_deterministic_and_fresh_eval():
    cfg = ExperimentConfig(train_types=("A", "E"), pool_size=4, eval_robots=6)
    p1, p2 = train_pool(cfg), train_pool(cfg)
    assert [s.robot_id for s in p1] == [s.robot_id for s in p2] and len(p1) == 8
    ev = eval_pool(cfg, p1)
    assert len(ev) == 6 and not {s.robot_id for s in ev} & {s.robot_id for s in p1}
    assert {s.type_tag for s in ev} == {"A", "E"}
    cfg_i = cfg.replace(algorithm=HCP_I)
    assert eval_pool(cfg_i, p1) == p1[:6]


def test_torso_mass_pool(hopper):
    cfg = tiny_hopper(robot_kind="hopper_torso_mass", ranges={"mass_multiplier": (0.5, 2.0)})
    pool = make_pool(cfg, (), 10, 0)
    masses = [s.links[0].mass for s in pool]
    assert len(set(masses)) == 10
    base = pool[0]
    for s in pool[1:]:
        assert s.joints == base.joints and s.links[1:] == base.links[1:]
    heavier = with_torso_mass(hopper, 2.0)
    assert np.isclose(heavier.links[0].mass, 2.0 * hopper.links[0].mass)


# -- training, manifests, checkpoints --------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny(seeds=(0, 1))
    res = train(cfg, out)
    return cfg, out, res


def test_train_outputs(trained):
    cfg, out, res = trained
    assert [r.seed for r in res] == [0, 1]
    for r in res:
        rows = read_csv(r.curve_path)
        assert list(rows[0]) == ["episode", "eval_success_rate", "train_success_rate", "critic_loss",
                                 "actor_loss", "updates"]
        assert [int(x["episode"]) for x in rows] == [0, 6, 12]
        assert r.updates == (12 - 1) * 3
    m = json.loads((out / "manifest.json").read_text())
    assert m["config_hash"] == cfg.config_hash() and m["seeds"] == [0, 1] and m["code_version"]
    assert set(m["outputs"]) == {"seed_0/learning_curve.csv", "seed_1/learning_curve.csv"}
    assert load_config(out / "config.yaml") == cfg


def test_seeds_differ(trained):
    _, _, res = trained
    a, b = load_agent(res[0].checkpoint_path), load_agent(res[1].checkpoint_path)
    assert not np.array_equal(a.agent.actor.params.values, b.agent.actor.params.values)


def test_manifest_rerun_bit_identical(trained, tmp_path):
    _, out, _ = trained
    same = rerun_manifest(out / "manifest.json", tmp_path / "again")
    assert same and all(same.values())


def test_checkpoint_roundtrip_and_rng(trained, tmp_path):
    cfg, _, res = trained
    ck = load_agent(res[0].checkpoint_path)
    assert ck.cfg == cfg
    assert set(ck.meta["rng_state"]) == {"train", "her", "updates"}
    restore_rng(ck.meta["rng_state"]["train"]).random()
    save_agent(tmp_path / "copy.npz", ck.cfg, ck.agent, ck.provider)
    ck2 = load_agent(tmp_path / "copy.npz")
    for name, net in ck.agent.networks().items():
        np.testing.assert_array_equal(net.params.values, ck2.agent.networks()[name].params.values)
        np.testing.assert_array_equal(net.params.m, ck2.agent.networks()[name].params.m)
    np.testing.assert_array_equal(ck.agent.norm.sum, ck2.agent.norm.sum)


def test_eval_does_not_mutate_checkpoint(trained):
    _, _, res = trained
    path = res[0].checkpoint_path
    before = file_sha256(path), file_sha256(path.with_suffix(".json"))
    r = zero_shot_eval(path, "P2", trials=2, robots_per_trial=3)
    assert (file_sha256(path), file_sha256(path.with_suffix(".json"))) == before
    assert len(r.trial_rates) == 2
    assert np.isclose(r.success_rate_std, np.std(r.trial_rates))  # across trials
    assert len(r.final_distances) == 6 and all(d >= 0 for d in r.final_distances)
    s = r.distance_summary()
    assert s["min"] <= s["median"] <= s["max"]


def test_random_weights_match_random_policy(tmp_path):
    cfg = planar_reacher_config(episodes=0)
    cfg = cfg.replace(task=dataclasses.replace(cfg.task, max_steps=50))
    prov = make_provider(cfg, 0)
    agent = build_agent(cfg, prov, 0)
    robots = make_pool(cfg, ("P2",), 100, 5, "null")
    s, _, _ = evaluate_ddpg(agent, prov, robots, cfg.task, seed=1)
    k_agent = int(np.sum(s))
    k_rand = int(round(random_policy_success(robots, cfg.task, seed=1)))
    p = fisher_exact([[k_agent, 100 - k_agent], [k_rand, 100 - k_rand]]).pvalue
    assert p > 0.01


def test_failing_seed_does_not_stop_others(tmp_path, monkeypatch):
    import hcp.harness as h
    real = h._train_ddpg

    def flaky(cfg, seed, *a, **k):
        if seed == 0:
            raise RuntimeError("boom")
        return real(cfg, seed, *a, **k)

    monkeypatch.setattr(h, "_train_ddpg", flaky)
    res = train(tiny(episodes=3, seeds=(0, 1)), tmp_path)
    assert [r.seed for r in res] == [1]
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert "boom" in m["errors"]["0"]


# -- protocols --------------------------------------------------------------------


def test_zero_shot_rejects_learned_embeddings(tmp_path):
    cfg = tiny(episodes=2, algorithm=HCP_I, embedding_dim=2)
    res = train(cfg, tmp_path)
    with pytest.raises(ProtocolError):
        zero_shot_eval(res[0].checkpoint_path, "P2", trials=1, robots_per_trial=1)


def test_finetune_zero_budget_and_migration(trained, tmp_path):
    cfg, _, res = trained
    ck = res[0].checkpoint_path
    before = file_sha256(ck)
    assert finetune(ck, [], cfg.replace(episodes=0), tmp_path) == ck
    assert file_sha256(ck) == before
    with pytest.raises(MigrationError):
        finetune(ck, make_pool(cfg, ("P2",), 2, 9), cfg.replace(algorithm=HCP_E, episodes=2), tmp_path)


def test_finetune_paired_arms(trained, tmp_path):
    cfg, _, res = trained
    pool = make_pool(cfg, ("P2",), 2, 77, "new")
    out = finetune(res[0].checkpoint_path, pool, cfg.replace(episodes=4, seeds=(3,)), tmp_path)
    rows = read_csv(out.csv_path)
    assert {r["arm"] for r in rows} == {"pretrained", "scratch"}
    assert len(out.pretrained_auc) == len(out.scratch_auc) == 1
    # same seed and pool, different starting weights
    pre = load_agent(tmp_path / "pretrained" / "seed_3" / "checkpoint.npz")
    scr = load_agent(tmp_path / "scratch" / "seed_3" / "checkpoint.npz")
    assert not np.array_equal(pre.agent.actor.params.values, scr.agent.actor.params.values)


def test_hcp_i_finetune_creates_fresh_rows(tmp_path):
    cfg = tiny(episodes=3, algorithm=HCP_I, embedding_dim=2)
    res = train(cfg, tmp_path / "pre")
    pool = make_pool(cfg, ("P2",), 2, 55, "new")
    out = finetune(res[0].checkpoint_path, pool, cfg, tmp_path / "ft", seeds=(0,))
    ck = load_agent(tmp_path / "ft" / "pretrained" / "seed_0" / "checkpoint.npz")
    assert ck.provider.table.ids == [s.robot_id for s in pool]
    src = load_agent(res[0].checkpoint_path)
    assert not set(src.provider.table.ids) & set(ck.provider.table.ids)
    assert out.csv_path.exists()


def test_curve_auc_and_sign_test():
    rows = [{"episode": "0", "m": "0"}, {"episode": "5", "m": "50"}, {"episode": "10", "m": "nan"}]
    assert curve_auc(rows, "episode", "m") == 25.0
    assert sign_test_p(3, 3) == pytest.approx(0.125)
    assert sign_test_p(10, 10) == pytest.approx(2 ** -10)


def test_damping_stress_rows(trained, tmp_path):
    _, _, res = trained
    rows = damping_stress_test(res[0].checkpoint_path, ((0.01, 2.0), (20.0, 30.0)), robots=3,
                               out_csv=tmp_path / "stress.csv")
    assert [r["damping_low"] for r in rows] == [0.01, 20.0]
    assert all(len(r["lengths"]) == 3 for r in rows)
    assert len(read_csv(tmp_path / "stress.csv")) == 2


def test_eval_result_validation():
    with pytest.raises(ValueError):
        EvalResult(120.0, 1.0, [], [])
    with pytest.raises(ValueError):
        EvalResult(50.0, -1.0, [], [])


# -- hopper / PPO ------------------------------------------------------------------


def test_ppo_run_and_embedding_rows(tmp_path):
    cfg = tiny_hopper()
    res = train(cfg, tmp_path)[0]
    rows = read_csv(res.curve_path)
    assert list(rows[0]) == ["steps", "episodes", "eval_return", "train_return", "policy_loss", "value_loss",
                             "entropy"]
    assert int(rows[-1]["steps"]) >= 160
    ck = load_agent(res.checkpoint_path)
    assert len(ck.provider.table) == 3 and ck.provider.table.dim == 2
    assert np.all(ck.provider.table.steps > 0)
    assert "log_std" in np.load(res.checkpoint_path).files


def test_stress_ranges_share_geometry():
    cfg = tiny(pool_size=3)
    pools = []
    for lo, hi in ((0.01, 2.0), (20.0, 30.0)):
        c = cfg.replace(ranges={**cfg.ranges, "damping": (lo, hi)})
        pools.append(make_pool(c, c.train_types, 3, 77, "stress"))
    for a, b in zip(*pools):
        assert a.links == b.links
        assert a.joints[0].damping < 2.0 <= 20.0 <= b.joints[0].damping
