"""Command line entry point: ``prunekit <subcommand> [--config FILE] [flags]``.

Flags override values from the config file. Exit codes: 0 success,
2 invalid configuration, 1 runtime failure. Errors print a single line
``error: <kind>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Any

from .harness import ConfigError, ExperimentConfig, load_config, run

SUBCOMMANDS = {
    "schedule-dump": "schedule_dump",
    "linear-sim": "linear_sim",
    "prune-train": "prune_train",
    "ablate": "ablate",
}

# flag dest -> key inside ``params``
LINEAR_FLAGS = {"d": "d", "n": "n", "alpha_mode": "alpha_mode", "trials": "trials", "lam": "lam",
                "eta": "eta", "steps": "pgd_steps", "tol": "success_tol", "c": "c"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prunekit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--jobs", type=int)

    p = sub.add_parser("schedule-dump", help="write t,sparsity,lr for a schedule as CSV")
    common(p)

    p = sub.add_parser("linear-sim", help="one-shot vs PGD recovery trials")
    common(p)
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--alpha-mode", nargs="+", choices=["random", "adversarial"])
    p.add_argument("--trials", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--c", type=int)

    p = sub.add_parser("prune-train", help="prune a dense blobs MLP")
    common(p)
    p.add_argument("--method", nargs="+", choices=["one_shot", "gradual", "cyclical"])
    p.add_argument("--sparsity", dest="s_t", type=float)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--iters", type=int, help="pruning iteration budget")
    p.add_argument("--cycles", type=int, help="number of cycles for cyclical pruning")

    p = sub.add_parser("ablate", help="per-cycle schedule ablation")
    common(p)
    p.add_argument("--kind", nargs="+", choices=["cubic", "linear", "step", "finetune_only"])
    p.add_argument("--k", type=int)
    p.add_argument("--sparsity", dest="s_t", type=float)
    p.add_argument("--iters", type=int)
    return parser


def _merge(args: argparse.Namespace) -> dict[str, Any]:
    kind = SUBCOMMANDS[args.command]
    data: dict[str, Any] = load_config(args.config) if args.config else {"kind": kind}
    data.setdefault("kind", kind)
    if data["kind"] != kind:
        raise ConfigError(f"config kind {data['kind']!r} does not match subcommand {args.command!r}")
    for flag, key in (("seed", "seed"), ("out_dir", "out_dir"), ("jobs", "jobs")):
        value = getattr(args, flag)
        if value is not None:
            data[key] = value
    params = dict(data.get("params", {}))
    if args.command == "linear-sim":
        for flag, key in LINEAR_FLAGS.items():
            value = getattr(args, flag)
            if value is not None:
                params[key] = value
    elif args.command in ("prune-train", "ablate"):
        recipe = dict(params.get("recipe", {}))
        if args.iters is not None:
            recipe["total_iters"] = args.iters
        if args.command == "prune-train":
            if args.cycles is not None:
                recipe["k"] = args.cycles
            for flag in ("method", "s_t", "seeds"):
                if getattr(args, flag) is not None:
                    params[flag] = getattr(args, flag)
        else:
            for flag in ("kind", "k", "s_t"):
                if getattr(args, flag) is not None:
                    params[flag] = getattr(args, flag)
        if recipe:
            params["recipe"] = recipe
    data["params"] = params
    return data


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = ExperimentConfig.from_dict(_merge(args))
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    try:
        manifest = run(config)
    except Exception as exc:  # noqa: BLE001 - reported as one line, manifest already written
        print(f"error: runtime: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"status": manifest.status, "out_dir": config.out_dir, "outputs": manifest.outputs}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
