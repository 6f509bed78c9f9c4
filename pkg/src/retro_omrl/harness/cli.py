"""Command-line entry point: ``retro-omrl <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import theorylab
from .config import load_config, preset
from .data import data_settings, generate_datasets, load_datasets, write_datasets
from .experiments import (
    ABLATION_FREQUENCIES,
    ablation_summary,
    emit_plot_data,
    report_walltime,
    run_ablation_frequency,
    run_meta_test,
)
from .training import RunArtifacts, run_training

log = logging.getLogger("retro_omrl")


def _config(args, **extra):
    cfg = load_config(args.config) if args.config else preset(args.preset)
    overrides = {k: v for k, v in extra.items() if v is not None}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    cfg = cfg.with_overrides(**overrides)
    if cfg.data_dir:
        cfg = cfg.with_overrides(**data_settings(cfg.data_dir))
    return cfg


def _data_overrides(args):
    return dict(
        family=args.family, n_train_tasks=args.n_train, n_test_tasks=args.n_test,
        transitions_per_task=args.transitions_per_task, noise_scale=args.noise_scale,
    )


# -- subcommands ------------------------------------------------------------------
def cmd_gen_data(args):
    cfg = _config(args, **_data_overrides(args))
    if args.seed is not None:
        cfg = cfg.with_overrides(data_seed=args.seed)
    tasks, _ = write_datasets(cfg, cfg.out_dir)
    print(f"wrote {len(tasks)} {cfg.family} datasets to {cfg.out_dir}")
    return True


def cmd_train(args):
    cfg = _config(args, data_dir=args.data_dir, total_steps=args.total_steps,
                  update_frequency=args.update_frequency, loss_kind=args.loss_kind)
    if cfg.data_dir:
        artifacts = run_training(cfg)
    else:
        tasks, datasets = generate_datasets(cfg)
        artifacts = run_training(cfg, datasets, tasks)
    print(json.dumps(artifacts.to_manifest(), indent=2))
    return artifacts.ok


def cmd_meta_test(args):
    artifacts = RunArtifacts.load(args.run_dir)
    cfg = artifacts.config
    if args.data_dir:
        cfg = cfg.with_overrides(data_dir=args.data_dir)
    if cfg.data_dir:
        tasks, datasets = load_datasets(cfg, cfg.data_dir)
    else:
        tasks, datasets = generate_datasets(cfg)
    seed = cfg.seed if args.seed is None else args.seed
    result = run_meta_test(artifacts, tasks[cfg.n_train_tasks:], args.n_episodes, seed, datasets)
    print(result.per_task.format())
    print(result.summary())
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        result.per_task.write_csv(Path(args.out_dir) / "meta_test.csv", artifacts.config_digest)
    return result.per_task.all_finite()


def cmd_ablate(args):
    cfg = _config(args, data_dir=args.data_dir, total_steps=args.total_steps)
    table, runs = run_ablation_frequency(cfg, args.frequencies, args.seeds, workers=args.workers)
    print(table.format())
    print()
    print(ablation_summary(table).format())
    return table.all_finite() and all(a.ok for a in runs)


def cmd_walltime(args):
    runs = [RunArtifacts.load(d) for d in args.run_dirs]
    table = report_walltime(runs)
    print(table.format())
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        table.write_csv(Path(args.out_dir) / "walltime.csv")
    return True


def cmd_plot_data(args):
    runs = [RunArtifacts.load(d) for d in args.run_dirs]
    out = args.out_dir or "plot_data"
    data = emit_plot_data(runs, out)
    print(f"wrote {len(data.long.rows)} long rows and {len(data.summary.rows)} summary rows to {out}")
    return True


def _theory_report(args, report):
    payload = report if isinstance(report, dict) else report.to_dict()
    text = json.dumps(payload, indent=2, default=float)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.check}.json").write_text(text + "\n")
    print(text)
    return payload["passed"]


def cmd_theory(args):
    seed = 0 if args.seed is None else args.seed
    check = args.check
    if check == "return-bound":
        return _theory_report(args, theorylab.verify_return_bound(args.n_configs, seed))
    if check == "perf-diff":
        return _theory_report(args, theorylab.verify_perf_diff_bound(args.n_configs, seed))
    if check == "lemma-a1":
        return _theory_report(args, theorylab.lemma_a1_check(args.n_configs, seed))
    if check == "weissman":
        cells = theorylab.weissman_grid(n_trials=args.n_trials, seed=seed)
        return _theory_report(args, {
            "name": "weissman",
            "n_trials": args.n_trials,
            "cells": [
                {"alphabet_size": c.alphabet_size, "m": c.m, "eps": c.eps,
                 "empirical_rate": c.empirical_rate, "analytic_bound": c.analytic_bound,
                 "sigma": c.sigma, "passed": c.passed}
                for c in cells
            ],
            "passed": all(c.passed for c in cells),
        })
    # corollary: kappa = 2 with r_max = 1, gamma = 0
    cfg = theorylab.CorollaryConfig(r_max=args.r_max, gamma=args.gamma, lipschitz=args.lipschitz,
                                    eps_mutual=args.eps_mutual, beta=args.beta, vol_z=args.vol_z,
                                    xi=args.xi, n_prior=args.n_prior)
    k = theorylab.corollary_k(cfg)
    rate = theorylab.verify_corollary(cfg, args.n_trials, seed)
    return _theory_report(args, {
        "name": "corollary",
        "kappa": cfg.kappa,
        "k": k.k,
        "k_ceil": k.ceil,
        "deviation_budget": cfg.deviation_budget,
        "n_trials": args.n_trials,
        "success_rate": rate,
        "target_rate": 1.0 - cfg.xi,
        "passed": rate >= 1.0 - cfg.xi,
    })


# -- parser -------------------------------------------------------------------------
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (sectioned key = value)")
    common.add_argument("--preset", default="desk", choices=("desk", "paper"))
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="retro-omrl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write offline datasets")
    g.add_argument("--family", choices=("PointGoal2D", "GridChainDir"))
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--transitions-per-task", type=int)
    g.add_argument("--noise-scale", type=float)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="meta-train one run")
    t.add_argument("--data-dir")
    t.add_argument("--total-steps", type=int)
    t.add_argument("--update-frequency", type=int)
    t.add_argument("--loss-kind")
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("meta-test", parents=[common], help="few-shot evaluation of a run")
    m.add_argument("run_dir")
    m.add_argument("--data-dir")
    m.add_argument("--n-episodes", type=int, default=10)
    m.set_defaults(func=cmd_meta_test)

    a = sub.add_parser("ablate-frequency", parents=[common], help="encoder update-frequency sweep")
    a.add_argument("--data-dir")
    a.add_argument("--total-steps", type=int)
    a.add_argument("--frequencies", type=int, nargs="+", default=list(ABLATION_FREQUENCIES))
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    a.add_argument("--workers", type=int, help="parallel runs (default from RETRO_OMRL_THREADS)")
    a.set_defaults(func=cmd_ablate)

    w = sub.add_parser("walltime", parents=[common], help="compare training time of runs")
    w.add_argument("run_dirs", nargs="+")
    w.set_defaults(func=cmd_walltime)

    pd = sub.add_parser("plot-data", parents=[common], help="long-format curves from runs")
    pd.add_argument("run_dirs", nargs="+")
    pd.set_defaults(func=cmd_plot_data)

    th = sub.add_parser("theory", parents=[common], help="tabular bound verification")
    th.add_argument("check", choices=("return-bound", "perf-diff", "weissman", "corollary", "lemma-a1"))
    th.add_argument("--n-configs", type=int, default=1000)
    th.add_argument("--n-trials", type=int, default=None)
    th.add_argument("--r-max", type=float, default=1.0)
    th.add_argument("--gamma", type=float, default=0.0)
    th.add_argument("--lipschitz", type=float, default=1.0)
    th.add_argument("--eps-mutual", type=float, default=1.0)
    th.add_argument("--beta", type=float, default=0.1)
    th.add_argument("--vol-z", type=int, default=2)
    th.add_argument("--xi", type=float, default=0.5)
    th.add_argument("--n-prior", type=int, default=0)
    th.set_defaults(func=cmd_theory)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "theory" and args.n_trials is None:
        args.n_trials = 10_000 if args.check == "weissman" else 1000
    try:
        ok = args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
