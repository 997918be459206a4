"""Command-line entry points. Stages compose through explicit directories:

    redaug gen-data --task-set point_mass_2d-gravity --checkpoints 1 \
        --budget 12000 --seed 0 --out runs/demo/data
    redaug train-models --data runs/demo/data --ensemble-size 3 --out runs/demo/models
    redaug train-repr --data runs/demo/data --models runs/demo/models \
        --rounds 50 --variant full --out runs/demo/encoder
    redaug train-policy --data runs/demo/data --encoder runs/demo/encoder \
        --bc-weight 2.5 --out runs/demo/policy
    redaug eval --policy runs/demo/policy --encoder runs/demo/encoder \
        --data runs/demo/data --protocol on --seeds 5 --out report.json
    redaug report --runs runs/a runs/b
    redaug run --config cfg.json
"""

import argparse
import json
import os
import sys

from .envs import FAMILIES
from .errors import ConfigurationError
from . import pipeline as pl


def _parse_task_set(name):
    if "-" in name:
        family, varied = name.rsplit("-", 1)
    else:
        family, varied = name, "gravity"
    if family not in FAMILIES or varied not in ("gravity", "damping"):
        raise ConfigurationError(
            f"task set must look like '<family>-<gravity|damping>' with family in "
            f"{FAMILIES}; got {name!r}")
    return family, varied


def _cmd_gen_data(args):
    family, varied = _parse_task_set(args.task_set)
    config = pl.ExperimentConfig(family=family, varied=varied,
                                 checkpoints_n=args.checkpoints,
                                 budget=args.budget, data_seed=args.seed,
                                 behavior_steps=args.behavior_steps,
                                 checkpoint_interval=args.interval,
                                 episode_horizon=args.horizon,
                                 out_root=args.out)
    pl.run_data_stage(config, args.out)
    print(f"datasets written to {args.out}")


def _load_run_config(data_dir, **overrides):
    """Rebuild a config compatible with an existing data directory."""
    with open(os.path.join(data_dir, "tasks.json")) as fh:
        tasks = json.load(fh)["tasks"]
    counts = {}
    first = tasks[0]
    varied = "gravity" if len({t["gravity_scale"] for t in tasks}) > 1 else "damping"
    counts = dict(family=first["family"], varied=varied,
                  episode_horizon=first["episode_horizon"])
    counts.update(overrides)
    return pl.ExperimentConfig(**counts)


def _cmd_train_models(args):
    config = _load_run_config(args.data, ensemble_size=args.ensemble_size,
                              model_epochs=args.epochs, seed=args.seed)
    pl.run_models_stage(config, args.data, args.out)
    print(f"dynamics ensembles written to {args.out}")


def _cmd_train_repr(args):
    config = _load_run_config(args.data, rounds=args.rounds,
                              lambda1=args.lambda1, lambda2=args.lambda2,
                              variant=args.variant, seed=args.seed,
                              policy_steps_per_round=args.policy_steps,
                              encoder_steps_per_round=args.encoder_steps,
                              rollout_batch=args.rollout_batch,
                              rollout_horizon=args.rollout_horizon,
                              window_length=args.window_length)
    pl.run_encoder_stage(config, args.data, args.models, args.out)
    print(f"encoder written to {args.out}")


def _cmd_train_policy(args):
    config = _load_run_config(args.data, bc_weight=args.bc_weight, seed=args.seed,
                              meta_epochs=args.epochs,
                              meta_steps_per_epoch=args.steps_per_epoch,
                              window_length=args.window_length)
    pl.run_policy_stage(config, args.data, args.encoder, args.out)
    print(f"meta-policy written to {args.out}")


def _cmd_eval(args):
    from .encoder import load_encoder
    from .evalproto import (EvalReport, eval_off_policy, eval_on_policy,
                            summarize_returns)
    from .metapolicy import MetaPolicy
    from .seeding import derive_seed

    config = _load_run_config(args.data, eval_episodes=args.seeds, seed=args.seed,
                              window_length=args.window_length)
    datasets = pl.load_stage_datasets(args.data)
    encoder = load_encoder(args.encoder)
    policy = MetaPolicy.load(args.policy)
    protocol = "on_policy" if args.protocol == "on" else "off_policy"
    per_task = {}
    for i, spec in enumerate(pl.train_task_specs(config)):
        label = f"seen_{config.varied}_{pl._mult(spec, config.varied)}"
        eval_seed = derive_seed(config.seed, "cli-eval", protocol, label)
        if protocol == "on_policy":
            returns = eval_on_policy(policy, encoder, spec, episodes=args.seeds,
                                     window_length=config.window_length,
                                     seed=eval_seed)
        else:
            returns = eval_off_policy(policy, encoder, spec, datasets[i],
                                      episodes=args.seeds,
                                      window_length=config.window_length,
                                      seed=eval_seed)
        per_task[label] = summarize_returns(spec, returns)
    report = EvalReport(protocol=protocol, per_task=per_task,
                        config_fingerprint=config.fingerprint())
    with open(args.out, "w") as fh:
        fh.write(report.to_json())
    print(f"report written to {args.out}")


def _cmd_report(args):
    rows, table = pl.comparison_table(args.runs)
    print(table)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
        print(f"comparison JSON written to {args.json}")


def _cmd_run(args):
    config = pl.ExperimentConfig.from_json_file(args.config)
    run_dir = pl.run_pipeline(config)
    print(f"pipeline complete: {run_dir}")


def build_parser():
    parser = argparse.ArgumentParser(prog="redaug")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="train behavior policies and collect datasets")
    p.add_argument("--task-set", required=True)
    p.add_argument("--checkpoints", type=int, choices=(1, 3, 5), required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--behavior-steps", type=int, default=12000)
    p.add_argument("--interval", type=int, default=600)
    p.add_argument("--horizon", type=int, default=100)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-models", help="fit per-task dynamics ensembles")
    p.add_argument("--data", required=True)
    p.add_argument("--ensemble-size", type=int, default=3)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_models)

    p = sub.add_parser("train-repr", help="representation learning rounds")
    p.add_argument("--data", required=True)
    p.add_argument("--models")
    p.add_argument("--rounds", type=int, default=50)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--variant", choices=pl.VARIANTS, default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy-steps", type=int, default=50)
    p.add_argument("--encoder-steps", type=int, default=50)
    p.add_argument("--rollout-batch", type=int, default=64)
    p.add_argument("--rollout-horizon", type=int, default=5)
    p.add_argument("--window-length", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_repr)

    p = sub.add_parser("train-policy", help="offline meta-policy learning")
    p.add_argument("--data", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--bc-weight", type=float, default=2.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--steps-per-epoch", type=int, default=1000)
    p.add_argument("--window-length", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_policy)

    p = sub.add_parser("eval", help="evaluate a trained policy + encoder")
    p.add_argument("--policy", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", choices=("on", "off"), required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window-length", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="comparison table across runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--json", help="also write the table as JSON")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
