"""Command line: ``slr {train,eval,ablate,analyze}``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .ppo import NumericAbort

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML run config (defaults are used when omitted)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--variant", help="variant kind, e.g. slr or slr_without_latent")
    p.add_argument("--out", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slr", description="Self-learned latent locomotion training on a planar rover.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one (variant, seed) run")
    _common(p)
    p.add_argument("--progress", action="store_true", help="print progress to stderr")

    p = sub.add_parser("eval", help="velocity-tracking evaluation of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("ablate", help="train several variants over several seeds")
    _common(p)
    p.add_argument("--variants", default="slr,slr_without_latent", help="comma separated kinds")
    p.add_argument("--seeds", default="0,1,2", help="comma separated seeds")
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.add_argument("--progress", action="store_true")

    p = sub.add_parser("analyze", help="latent trace, separability and tracking error of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


def _resolve(args, checkpoint: Path | None = None) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.variant is not None:
        overrides.append(f"variant.kind={json.dumps(args.variant)}")
    path = args.config
    if path is None and checkpoint is not None:
        # a checkpoint inside a run directory carries its resolved config
        snapshot = checkpoint.resolve().parent.parent / "config.toml"
        path = snapshot if snapshot.exists() else None
    return load_config(path, overrides)


def _int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds: expected comma separated integers, got {text!r}") from None


def _load_agent(checkpoint: Path, cfg: RunConfig):
    from .env import ACTION_DIM, OBS_DIM
    from .variants import AgentWiring

    try:
        agent = AgentWiring.load(checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {checkpoint}") from None
    d = agent.dims
    if (d.obs_dim, d.action_dim, d.history_len) != (OBS_DIM, ACTION_DIM, cfg.slr.history_len):
        raise ConfigError(
            f"checkpoint dims (obs {d.obs_dim}, action {d.action_dim}, history {d.history_len}) do not match "
            f"config (obs {OBS_DIM}, action {ACTION_DIM}, history {cfg.slr.history_len})"
        )
    return agent


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    from . import runner

    if args.command == "train":
        cfg = _resolve(args)
        out = runner.train(cfg, args.out, progress=args.progress)
        print(out)
    elif args.command == "eval":
        cfg = _resolve(args, args.checkpoint)
        agent = _load_agent(args.checkpoint, cfg)
        result = runner.evaluate(agent, cfg)
        dest = args.out or args.checkpoint.resolve().parent.parent
        _write_json(Path(dest) / "eval.json", result)
        print(json.dumps(result["aggregate"], sort_keys=True))
    elif args.command == "ablate":
        cfg = _resolve(args)
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        for v in variants:
            load_config(None, [f"variant.kind={json.dumps(v)}"])
        summary = runner.ablate(cfg, variants, _int_list(args.seeds), args.out, args.jobs, args.progress)
        print(summary.read_text(), end="")
    elif args.command == "analyze":
        from .analysis import analyze, export_trace

        cfg = _resolve(args, args.checkpoint)
        agent = _load_agent(args.checkpoint, cfg)
        try:
            trace, summary = analyze(agent, cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        dest = Path(args.out or args.checkpoint.resolve().parent.parent / "traces")
        dest.mkdir(parents=True, exist_ok=True)
        export_trace(trace, dest / "latent_trace.csv")
        _write_json(dest / "analysis.json", summary)
        print(json.dumps({k: v for k, v in summary.items() if k != "tail_stats"}, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
