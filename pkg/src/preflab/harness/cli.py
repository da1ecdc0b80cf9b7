"""Command-line interface.

Subcommands: ``run`` (one experiment), ``sweep`` (annotator-noise grid),
``serve`` (human labeling service), ``eval`` (score a saved reward
ensemble), ``export-plots`` (metrics file to CSV).  The data directory
defaults to ``$PREFLAB_DATA_DIR`` or ``./preflab-data``.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..envs import make_env
from ..experience import ReplayBuffer
from ..rewardnet import load_ensemble
from .config import (config_to_yaml, default_config, load_config)
from .loop import (build_eval_set, held_out_metrics, noise_sweep, reward_correlation,
                   run_experiment)
from .metrics import metrics_to_csv, read_metrics


def _data_dir(args) -> Path:
    base = args.out or os.environ.get("PREFLAB_DATA_DIR", "preflab-data")
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "env", None):
        cfg = replace(cfg, env=replace(cfg.env, name=args.env))
    if getattr(args, "method", None):
        cfg = replace(cfg, ssl=replace(cfg.ssl, method=args.method))
    return cfg


def _parse_grid(text: str) -> list[float]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        out.append(math.inf if tok in ("inf", "+inf") else float(tok))
    return out


def cmd_run(args) -> int:
    if args.print_config:
        print(config_to_yaml(default_config()), end="")
        return 0
    cfg = _load_cfg(args)
    out = _data_dir(args)
    result = run_experiment(cfg, out_dir=str(out))
    final = result.final
    print(f"run complete: {len(result.records)} sessions, "
          f"{final.env_steps} env steps")
    print(f"  held-out accuracy {final.accuracy:.3f}  "
          f"policy return {final.policy_return:.3f}  "
          f"hazard rate {final.hazard_rate:.3f}")
    print(f"  artifacts in {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    arms = noise_sweep(cfg, _parse_grid(args.betas), _parse_grid(args.epsilons),
                       [int(b) for b in args.budgets.split(",")])
    out = _data_dir(args)
    table = out / "sweep.csv"
    with open(table, "w") as f:
        f.write("budget,beta,epsilon,final_return,normalized_return,final_accuracy,error\n")
        for a in arms:
            f.write(f"{a.budget},{a.beta},{a.epsilon},{a.final_return},"
                    f"{a.normalized_return},{a.final_accuracy},{a.error or ''}\n")
    print(f"{len(arms)} arms; table in {table}")
    for a in arms:
        status = a.error or f"return {a.final_return:.3f} (norm {a.normalized_return:.2f})"
        print(f"  budget={a.budget} beta={a.beta} eps={a.epsilon}: {status}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve_labeling

    cfg = _load_cfg(args)
    cfg = replace(cfg, annotator=replace(cfg.annotator, mode="human"))
    out = _data_dir(args)
    handle = serve_labeling(cfg, bind_address=args.bind, static_dir=args.static,
                            out_dir=str(out))
    print(f"labeling service on http://{handle.host}:{handle.port} "
          f"(budget {cfg.schedule.total_budget})")
    try:
        handle.join()
    except KeyboardInterrupt:
        print("interrupted")
    finally:
        handle.stop()
    if handle.error:
        print(f"experiment failed: {handle.error}", file=sys.stderr)
        return 1
    if handle.result:
        print(f"experiment finished; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    ens = load_ensemble(args.checkpoint)
    env = make_env(args.env, args.seed)
    rng = np.random.default_rng(args.seed)
    from ..agent import random_warmup

    buffer = ReplayBuffer(20000)
    random_warmup(env, buffer, ens, args.rollout_steps, rng)
    eval_set = build_eval_set(buffer, env, args.segment_length, args.pairs, rng)
    acc, ent = held_out_metrics(ens, eval_set)
    corr = reward_correlation(ens, buffer, rng)
    print(f"preference accuracy {acc:.3f}  mean entropy {ent:.3f}  "
          f"reward rank-correlation {corr:.3f}")
    return 0


def cmd_export_plots(args) -> int:
    records = read_metrics(args.metrics)
    csv_text = metrics_to_csv(records)
    if args.out_csv:
        Path(args.out_csv).write_text(csv_text)
        print(f"wrote {args.out_csv} ({len(records)} records)")
    else:
        print(csv_text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="preflab",
                                description="preference-based reward learning lab")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int, help="override experiment seed")
        sp.add_argument("--env", help="override env.name")
        sp.add_argument("--method", help="override ssl.method")
        sp.add_argument("--out", help="output directory (default $PREFLAB_DATA_DIR)")

    run = sub.add_parser("run", help="run one experiment")
    common(run)
    run.add_argument("--print-config", action="store_true",
                     help="print the full default config and exit")
    run.set_defaults(fn=cmd_run)

    sweep = sub.add_parser("sweep", help="annotator noise sweep")
    common(sweep)
    sweep.add_argument("--betas", default="inf", help="comma list, e.g. 0.5,1,inf")
    sweep.add_argument("--epsilons", default="0", help="comma list, e.g. 0,0.1,0.2")
    sweep.add_argument("--budgets", default="100", help="comma list of label budgets")
    sweep.set_defaults(fn=cmd_sweep)

    serve = sub.add_parser("serve", help="human labeling service")
    common(serve)
    serve.add_argument("--bind", default="127.0.0.1:8400", help="host:port")
    serve.add_argument("--static", help="built frontend directory to serve at /")
    serve.set_defaults(fn=cmd_serve)

    ev = sub.add_parser("eval", help="score a saved reward ensemble")
    ev.add_argument("--checkpoint", required=True, help="ensemble checkpoint path")
    ev.add_argument("--env", default="grid-hazard")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--segment-length", type=int, default=50)
    ev.add_argument("--pairs", type=int, default=200)
    ev.add_argument("--rollout-steps", type=int, default=4000)
    ev.set_defaults(fn=cmd_eval)

    ex = sub.add_parser("export-plots", help="metrics file to learning-curve CSV")
    ex.add_argument("--metrics", required=True, help="metrics.txt path")
    ex.add_argument("--out-csv", help="CSV destination (default stdout)")
    ex.set_defaults(fn=cmd_export_plots)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
