"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavy end-to-end criteria share a session workspace so datasets and
dynamics ensembles are built once and reused across variants and seeds.
"""

import filecmp
import json
import os
import time

import numpy as np
import pytest
import torch

from redaug.data import (collect_dataset, load_checkpoints, load_dataset,
                         save_checkpoints, save_dataset, select_checkpoints,
                         train_behavior_policy)
from redaug.didactic import DidacticConfig, run_didactic_variant
from redaug.dynamics import (GaussianDynamicsModel, fit_dynamics, gaussian_nll,
                             uncertainty)
from redaug.encoder import (ContextEncoder, adversarial_reward,
                            info_nce_loss, make_window, representation_value)
from redaug.envs import TaskSpec
from redaug.evalproto import eval_off_policy, eval_on_policy
from redaug.metapolicy import MetaPolicy
from redaug.networks import SquashedGaussianActor, TwinCritic
from redaug.pipeline import (ExperimentConfig, run_data_stage,
                             run_encoder_stage, run_models_stage,
                             run_pipeline, run_policy_stage, run_report_stage)
from redaug.sac import actor_loss, critic_loss

from conftest import random_policy_dataset, scripted_point_mass_dataset
from oracles import (finite_difference_grads, gradient_relative_error,
                     info_nce_brute_force, least_squares_one_step_error,
                     representation_value_brute_force)


def _criterion(num, description, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    suffix = f" [{detail}]" if detail else ""
    print(f"\n[ACCEPTANCE] criterion {num}: {status} - {description}{suffix}")
    assert passed, f"criterion {num} failed: {description}{suffix}"


# ---------------------------------------------------------------- criterion 1

def test_criterion_1_contrastive_oracle_equivalence():
    rng = np.random.default_rng(10)
    start = time.time()
    worst = 0.0
    checked = 0
    while checked < 100:
        n_tasks = int(rng.integers(2, 5))
        n = int(rng.integers(n_tasks, 9))
        ids = np.array(list(range(n_tasks))
                       + rng.integers(0, n_tasks, size=n - n_tasks).tolist())
        rng.shuffle(ids)
        if all(np.sum(ids == t) < 2 for t in np.unique(ids)):
            continue
        z = rng.normal(size=(n, 6))
        got = info_nce_loss(torch.as_tensor(z), ids).item()
        want = info_nce_brute_force(z, ids)
        worst = max(worst, abs(got - want))

        pool = rng.normal(size=(int(rng.integers(2, 9)), 6))
        pos = rng.normal(size=(int(rng.integers(1, 4)), 6))
        probe = rng.normal(size=6)
        got_r = representation_value(torch.as_tensor(probe), torch.as_tensor(pos),
                                     torch.as_tensor(pool)).item()
        want_r = representation_value_brute_force(probe, pos, pool)
        worst = max(worst, abs(got_r - want_r))
        checked += 1
    elapsed = time.time() - start
    _criterion(1, "contrastive losses match the brute-force oracle on 100 batches",
               worst < 1e-6 and elapsed < 10.0,
               f"worst abs diff {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_stepwise_reward_telescopes():
    rng = np.random.default_rng(20)
    start = time.time()
    worst = 0.0
    for _ in range(50):
        length = int(rng.integers(2, 21))
        zs = torch.as_tensor(rng.normal(size=(length + 1, 5)))
        pos = torch.as_tensor(rng.normal(size=(int(rng.integers(1, 5)), 5)))
        pool = torch.as_tensor(rng.normal(size=(int(rng.integers(2, 9)), 5)))
        span = (representation_value(zs[-1], pos, pool)
                - representation_value(zs[0], pos, pool)).item()
        for flip, sign in ((False, 1.0), (True, -1.0)):
            total = sum(adversarial_reward(zs[t], zs[t + 1], pos, pool,
                                           reward_decrease=flip).item()
                        for t in range(length))
            worst = max(worst, abs(total - sign * span))
    elapsed = time.time() - start
    _criterion(2, "per-step rewards telescope to the endpoint difference "
                  "(both sign conventions)",
               worst < 1e-6 and elapsed < 10.0,
               f"worst abs diff {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 3

def _fd_check(loss_fn, params, eps=1e-6):
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.clone() for p in params]
    numeric = finite_difference_grads(loss_fn, [p.data for p in params], eps=eps)
    return gradient_relative_error(analytic, numeric)


def test_criterion_3_gradients_match_finite_differences():
    start = time.time()
    torch.manual_seed(30)
    rng = np.random.default_rng(30)
    errors = {}

    # contrastive loss through the attention encoder
    encoder = ContextEncoder(2, 1, embed_dim=8, z_dim=3).double()
    windows = [make_window(rng.normal(size=(3, 2)), rng.normal(size=(3, 1)),
                           rng.normal(size=2), rng.normal(size=1), 4)
               for _ in range(4)]
    ids = np.array([0, 0, 1, 1])
    enc_params = [p for p in encoder.parameters()]

    def enc_loss():
        return info_nce_loss(encoder.encode_batch(windows, dtype=torch.float64), ids)

    errors["contrastive"] = _fd_check(enc_loss, enc_params)

    # actor loss (fixed exploration noise, behavior-cloning term included, the
    # stop-gradient |Q| normalizer held at its batch value)
    actor = SquashedGaussianActor(3, 2, hidden=(8, 8)).double()
    critic = TwinCritic(5, hidden=(8, 8)).double()
    log_alpha = torch.tensor(-1.0, dtype=torch.float64, requires_grad=True)
    obs = torch.as_tensor(rng.normal(size=(4, 3)))
    noise = torch.as_tensor(rng.normal(size=(4, 2)))
    bc_actions = torch.as_tensor(rng.uniform(-1, 1, size=(4, 2)))
    actor_params = list(actor.parameters())
    with torch.no_grad():
        sampled, _ = actor.sample(obs, noise=noise)
        q_frozen = torch.min(*critic(obs, sampled)).abs().mean().clamp_min(1e-8)

    def a_loss():
        return actor_loss(actor, critic, log_alpha, obs, noise=noise,
                          bc_actions=bc_actions, bc_weight=2.5, q_scale=q_frozen)

    errors["actor"] = _fd_check(a_loss, actor_params)

    # critic loss against a frozen bootstrap target
    target = TwinCritic(5, hidden=(8, 8)).double()
    target.load_state_dict(critic.state_dict())
    batch = {
        "obs": obs, "action": bc_actions,
        "reward": torch.as_tensor(rng.normal(size=4)),
        "next_obs": torch.as_tensor(rng.normal(size=(4, 3))),
        "done": torch.zeros(4, dtype=torch.float64),
    }
    critic_params = list(critic.parameters())

    def c_loss():
        return critic_loss(actor, critic, target, log_alpha, batch, 0.99,
                           noise=noise)

    errors["critic"] = _fd_check(c_loss, critic_params)

    # dynamics negative log-likelihood
    model = GaussianDynamicsModel(3, 1, hidden=(8, 8)).double()
    s = torch.as_tensor(rng.normal(size=(4, 3)))
    a = torch.as_tensor(rng.normal(size=(4, 1)))
    s2 = torch.as_tensor(rng.normal(size=(4, 3)))
    model_params = list(model.parameters())

    def d_loss():
        return gaussian_nll(model, s, a, s2)

    errors["dynamics_nll"] = _fd_check(d_loss, model_params)

    elapsed = time.time() - start
    worst = max(errors.values())
    detail = ", ".join(f"{k} {v:.2e}" for k, v in errors.items())
    _criterion(3, "all four loss gradients match central finite differences",
               worst < 1e-4 and elapsed < 60.0, f"{detail}, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 4

def test_criterion_4_dynamics_fidelity_and_uncertainty_ordering():
    start = time.time()
    train = scripted_point_mass_dataset(n_episodes=50, gravity=0.5, seed=40)
    holdout = scripted_point_mass_dataset(n_episodes=10, gravity=0.5, seed=41)

    ensemble = fit_dynamics(train, m=3, epochs=120, seed=4)
    s = torch.as_tensor(holdout.states)
    a = torch.as_tensor(holdout.actions)
    s2 = torch.as_tensor(holdout.next_states)
    per_dim = []
    for member in ensemble.members:
        with torch.no_grad():
            per_dim.append((member.predict_mean(s, a) - s2).abs().mean(0).numpy())
    worst_dim_err = float(np.max(per_dim))

    floor = least_squares_one_step_error(
        (train.states, train.actions, train.next_states),
        (holdout.states, holdout.actions, holdout.next_states))

    rng = np.random.default_rng(42)
    u_in = uncertainty(ensemble, holdout.states, holdout.actions)
    far_states = np.concatenate([rng.uniform(-8, 8, (300, 2)),
                                 rng.uniform(-15, 15, (300, 2))], axis=1)
    far_actions = rng.uniform(-1, 1, (300, 2))
    u_out = uncertainty(ensemble, far_states.astype(np.float32),
                        far_actions.astype(np.float32))
    ratio = float(np.median(u_out) / np.median(u_in))

    elapsed = time.time() - start
    _criterion(4, "one-step error < 1e-2 per dimension and OOD uncertainty "
                  ">= 2x in-distribution",
               worst_dim_err < 1e-2 and ratio >= 2.0 and elapsed < 300.0,
               f"worst per-dim err {worst_dim_err:.2e} (affine floor "
               f"{float(floor.max()):.2e}), u ratio {ratio:.1f}, {elapsed:.0f}s")


# ------------------------------------------------------- criteria 5 and 7

DIDACTIC_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def didactic_workspace(tmp_path_factory):
    return str(tmp_path_factory.mktemp("didactic"))


@pytest.fixture(scope="session")
def didactic_cfg():
    return DidacticConfig()


@pytest.fixture(scope="session")
def didactic_results(didactic_workspace, didactic_cfg):
    """d_phi for full and no-model across the shared seeds (criterion 5);
    criterion 7 extends the same sweep with the remaining variants."""
    results = {}
    for variant in ("full", "no-model"):
        for seed in DIDACTIC_SEEDS:
            res = run_didactic_variant(didactic_cfg, variant, seed,
                                       workspace=didactic_workspace)
            results[(variant, seed)] = res["d_phi"]
    return results


def test_criterion_5_didactic_reproduction(didactic_results):
    start = time.time()
    full = [didactic_results[("full", s)] for s in DIDACTIC_SEEDS]
    base = [didactic_results[("no-model", s)] for s in DIDACTIC_SEEDS]
    strict = all(f < b for f, b in zip(full, base))
    ok = strict and float(np.mean(full)) < 0.5 and float(np.mean(base)) > 0.8
    detail = (f"full {['%.3f' % v for v in full]} (mean {np.mean(full):.3f}), "
              f"no-model {['%.3f' % v for v in base]} (mean {np.mean(base):.3f}), "
              f"{time.time() - start:.0f}s after shared setup")
    _criterion(5, "augmented encoder beats the augmentation-free one on "
                  "held-out contexts in every seed", ok, detail)


def test_criterion_7_ablation_harness(didactic_results, didactic_workspace,
                                      didactic_cfg, tmp_path):
    rows = []
    table = {}
    for variant in ("full", "no-model", "no-adv", "no-up", "no-tc"):
        for seed in DIDACTIC_SEEDS:
            if (variant, seed) in didactic_results:
                d_phi = didactic_results[(variant, seed)]
            else:
                d_phi = run_didactic_variant(didactic_cfg, variant, seed,
                                             workspace=didactic_workspace)["d_phi"]
            rows.append({"variant": variant, "seed": seed, "d_phi": d_phi})
            table[(variant, seed)] = d_phi

    report_path = tmp_path / "ablation.json"
    report_path.write_text(json.dumps(rows, indent=2, sort_keys=True))

    wins = 0
    for seed in DIDACTIC_SEEDS:
        per_variant = {v: table[(v, seed)] for v in
                       ("full", "no-model", "no-adv", "no-up", "no-tc")}
        if table[("full", seed)] <= min(per_variant.values()):
            wins += 1
    complete = len(rows) == 15 and all(np.isfinite(r["d_phi"]) for r in rows)
    lines = "; ".join(
        f"seed {s}: " + ", ".join(f"{v} {table[(v, s)]:.2f}" for v in
                                  ("full", "no-model", "no-adv", "no-up", "no-tc"))
        for s in DIDACTIC_SEEDS)
    _criterion(7, "all five variants complete and the full method attains the "
                  "smallest distance ratio in at least 2 of 3 seeds",
               complete and wins >= 2, f"wins {wins}/3; {lines}")


# ---------------------------------------------------------------- criterion 6

@pytest.fixture(scope="session")
def trend_workspace(tmp_path_factory):
    return str(tmp_path_factory.mktemp("trend"))


def _trend_config(variant, seed, out_root):
    return ExperimentConfig(
        family="point_mass_2d", varied="gravity", checkpoints_n=1,
        episode_horizon=100,
        behavior_steps=12000, checkpoint_interval=600,
        behavior_hidden=(128, 128), behavior_update_every=2,
        budget=12000, test_pool_size=2400, data_seed=0,
        ensemble_size=3, model_epochs=60, model_hidden=(200, 200, 200),
        variant=variant, rounds=40, policy_steps_per_round=40,
        encoder_steps_per_round=40, rollout_horizon=16, rollout_batch=64,
        window_length=16, windows_per_task=24,
        meta_epochs=8, meta_steps_per_epoch=1000,
        eval_episodes=5, include_unseen=True, unseen_pool_size=2000,
        diag_windows=128, seed=seed, out_root=out_root)


def _run_trend_variant(workspace, variant, seed):
    """Stages share the data directory; everything downstream is per run."""
    data_dir = os.path.join(workspace, "data")
    run_dir = os.path.join(workspace, f"{variant}-seed{seed}")
    config = _trend_config(variant, seed, run_dir)
    run_data_stage(config, data_dir)
    models_dir = None
    if variant != "no-model":
        models_dir = os.path.join(workspace, f"models-seed{seed}")
        run_models_stage(config, data_dir, models_dir)
    encoder_dir = os.path.join(run_dir, "encoder")
    policy_dir = os.path.join(run_dir, "policy")
    reports_dir = os.path.join(run_dir, "reports")
    run_encoder_stage(config, data_dir, models_dir, encoder_dir)
    run_policy_stage(config, data_dir, encoder_dir, policy_dir)
    run_report_stage(config, data_dir, encoder_dir, policy_dir, reports_dir)
    out = {}
    for protocol in ("on_policy", "off_policy"):
        with open(os.path.join(reports_dir, f"report_{protocol}.json")) as fh:
            report = json.load(fh)
        for kind in ("seen", "unseen"):
            means = [v["mean"] for k, v in report["per_task"].items()
                     if k.startswith(kind)]
            out[(protocol, kind)] = float(np.mean(means))
    return out


def test_criterion_6_protocol_trend(trend_workspace):
    start = time.time()
    seeds = (0, 1, 2, 3, 4)
    sums = {}
    for variant in ("full", "no-model"):
        for seed in seeds:
            result = _run_trend_variant(trend_workspace, variant, seed)
            for key, value in result.items():
                sums.setdefault((variant,) + key, []).append(value)

    checks = {}
    for protocol in ("on_policy", "off_policy"):
        for kind in ("seen", "unseen"):
            full_mean = float(np.mean(sums[("full", protocol, kind)]))
            base_mean = float(np.mean(sums[("no-model", protocol, kind)]))
            checks[f"{protocol}/{kind}"] = (full_mean, base_mean)
    ok = all(f >= b for f, b in checks.values())
    elapsed = time.time() - start
    detail = "; ".join(f"{k}: full {f:.1f} vs no-model {b:.1f}"
                       for k, (f, b) in checks.items())
    _criterion(6, "augmented training matches or beats the augmentation-free "
                  "variant under both protocols on seen and unseen tasks "
                  "(5-seed means)",
               ok and elapsed < 7200.0, f"{detail}; {elapsed:.0f}s")


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_determinism_and_persistence(tmp_path):
    def tiny(out_root):
        return ExperimentConfig(
            family="point_mass_2d", varied="gravity", checkpoints_n=1,
            episode_horizon=50, behavior_steps=2000, checkpoint_interval=100,
            behavior_hidden=(32, 32), behavior_update_every=4,
            budget=600, test_pool_size=200, data_seed=0,
            ensemble_size=2, model_epochs=8, model_hidden=(32, 32),
            variant="full", rounds=2, policy_steps_per_round=3,
            encoder_steps_per_round=3, rollout_horizon=3, rollout_batch=8,
            window_length=8, windows_per_task=6, meta_epochs=1,
            meta_steps_per_epoch=30, eval_episodes=2, unseen_pool_size=150,
            diag_windows=8, seed=0, out_root=out_root)

    run_a = run_pipeline(tiny(str(tmp_path / "a")))
    run_b = run_pipeline(tiny(str(tmp_path / "b")))
    identical = all(
        filecmp.cmp(os.path.join(run_a, "reports", name),
                    os.path.join(run_b, "reports", name), shallow=False)
        for name in ("report_on_policy.json", "report_off_policy.json"))

    # dataset and checkpoint round trips
    spec = TaskSpec(family="pendulum", episode_horizon=40, seed=8)
    records = train_behavior_policy(spec, 2000, 100, seed=1, hidden=(32, 32),
                                    warmup_steps=400, update_every=4,
                                    eval_episodes=3)
    selected = select_checkpoints(records, 1)
    dataset = collect_dataset(spec, records, selected, budget=400,
                              test_pool_size=120, seed=2)
    save_dataset(dataset, str(tmp_path / "ds"))
    loaded = load_dataset(str(tmp_path / "ds"))
    dataset_ok = (np.array_equal(loaded.states, dataset.states)
                  and np.array_equal(loaded.actions, dataset.actions)
                  and np.array_equal(loaded.rewards, dataset.rewards)
                  and np.array_equal(loaded.next_states, dataset.next_states)
                  and np.array_equal(loaded.dones, dataset.dones)
                  and np.array_equal(loaded.checkpoint_ids, dataset.checkpoint_ids)
                  and loaded.checkpoint_split == dataset.checkpoint_split
                  and loaded.spec == dataset.spec)
    save_checkpoints(records, str(tmp_path / "ck"))
    back = load_checkpoints(str(tmp_path / "ck"))
    ckpt_ok = all(
        orig.checkpoint_id == b.checkpoint_id
        and orig.eval_return == b.eval_return
        and all(torch.equal(t, b.policy_params["actor"][k])
                for k, t in orig.policy_params["actor"].items())
        for orig, b in zip(records, back))

    _criterion(8, "identical config and seeds reproduce reports byte-for-byte; "
                  "dataset and checkpoint round trips are lossless",
               identical and dataset_ok and ckpt_ok,
               f"reports identical: {identical}, dataset: {dataset_ok}, "
               f"checkpoints: {ckpt_ok}")


# ---------------------------------------------------------------- criterion 9

def test_criterion_9_protocol_separation_counters():
    torch.manual_seed(90)
    encoder = ContextEncoder(3, 1)
    policy = MetaPolicy(state_dim=3, action_dim=1, z_dim=8, hidden=(16, 16))
    horizon = 30
    spec = TaskSpec(family="pendulum", episode_horizon=horizon, seed=9)
    pool = random_policy_dataset(family="pendulum", n_episodes=3, seed=91,
                                 horizon=horizon, split="test")

    encoder.encode_calls = 0
    eval_on_policy(policy, encoder, spec, episodes=3, window_length=8, seed=0)
    on_calls = encoder.encode_calls

    encoder.encode_calls = 0
    eval_off_policy(policy, encoder, spec, pool, episodes=4, window_length=8, seed=0)
    off_calls = encoder.encode_calls

    _criterion(9, "off-policy encodes once per episode; on-policy once per step",
               on_calls == 3 * horizon and off_calls == 4,
               f"on-policy {on_calls} calls for 3x{horizon} steps, "
               f"off-policy {off_calls} calls for 4 episodes")
