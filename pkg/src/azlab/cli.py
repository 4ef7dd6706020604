"""Command-line pipeline: solve | train | evaluate | detect | compare | report.

Every run directory receives a ``manifest.json`` (config snapshot, seed,
timestamps, artifact paths) written atomically at the end of the run, so
any result can be reproduced from its manifest with ``--workers 1``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import time
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    EvalReport,
    adversarial_detect,
    assemble_report,
    compare_reports,
    reverify_detections,
)
from .games import GAME_NAMES, make_game
from .mcts import RootNoise, SearchConfig, root_edges, run_search
from .net import NetEvaluator, load_checkpoint, net_config_for
from .oracle import StateTable, enumerate_states, solve
from .reports import (
    comparison_text,
    write_comparison_csv,
    write_report_csvs,
    write_report_svgs,
)
from .training import MODES, TrainConfig, desk_config, load_visits, paper_config, train

_RUN_FIELDS = {
    "game": str,
    "mode": str,
    "total_games": int,
    "batch_size": int,
    "buffer_capacity": int,
    "train_steps_per_game": int,
    "checkpoint_every": int,
    "seed": int,
    "workers": int,
    "vis_epsilon": float,
    "vis_softmax_temp": float,
}
_NET_FIELDS = {
    "width": int,
    "depth": int,
    "l2_lambda": float,
    "learning_rate": float,
    "momentum": float,
}
_SEARCH_FIELDS = {
    "num_simulations": int,
    "c_puct": float,
    "temperature_drop_ply": int,
    "root_noise_alpha": float,
    "root_noise_fraction": float,
}
_SECTIONS = {"run": _RUN_FIELDS, "net": _NET_FIELDS, "search": _SEARCH_FIELDS}


def config_from_sections(sections: dict[str, dict[str, str]]) -> TrainConfig:
    """Build a TrainConfig from {section: {key: raw string}} with strict keys."""
    parsed: dict[str, dict] = {"run": {}, "net": {}, "search": {}}
    for section, pairs in sections.items():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        schema = _SECTIONS[section]
        for key, raw in pairs.items():
            if key not in schema:
                raise ValueError(f"unknown config key '{key}' in section [{section}]")
            try:
                parsed[section][key] = schema[key](raw)
            except ValueError:
                raise ValueError(
                    f"config key '{section}.{key}': cannot parse {raw!r} as {schema[key].__name__}"
                ) from None
    run = parsed["run"]
    if "game" not in run:
        raise ValueError("config is missing required key 'game' in section [run]")
    game = make_game(run["game"])
    net = net_config_for(game, **parsed["net"])
    search_kwargs = dict(parsed["search"])
    alpha = search_kwargs.pop("root_noise_alpha", None)
    fraction = search_kwargs.pop("root_noise_fraction", 0.25)
    if alpha is not None:
        search_kwargs["root_noise"] = RootNoise(alpha=alpha, fraction=fraction)
    search = SearchConfig(**search_kwargs)
    return TrainConfig(net=net, search=search, **run)


def config_from_file(path) -> TrainConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValueError(f"config file not found: {path}")
    return config_from_sections({s: dict(parser[s]) for s in parser.sections()})


def config_to_text(cfg: TrainConfig) -> str:
    lines = ["[run]"]
    for key in _RUN_FIELDS:
        lines.append(f"{key} = {getattr(cfg, key)}")
    lines.append("")
    lines.append("[net]")
    for key in _NET_FIELDS:
        lines.append(f"{key} = {getattr(cfg.net, key)}")
    lines.append("")
    lines.append("[search]")
    for key in ("num_simulations", "c_puct", "temperature_drop_ply"):
        lines.append(f"{key} = {getattr(cfg.search, key)}")
    if cfg.search.root_noise is not None:
        lines.append(f"root_noise_alpha = {cfg.search.root_noise.alpha}")
        lines.append(f"root_noise_fraction = {cfg.search.root_noise.fraction}")
    return "\n".join(lines) + "\n"


def _apply_overrides(cfg: TrainConfig, overrides: list[str]) -> TrainConfig:
    sections: dict[str, dict[str, str]] = {"run": {}, "net": {}, "search": {}}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        key_part, value = item.split("=", 1)
        if "." not in key_part:
            key_part = f"run.{key_part}"
        section, key = key_part.split(".", 1)
        sections.setdefault(section, {})[key.strip()] = value.strip()
    # Start from the current config's serialized form, then overlay.
    base = {
        "run": {k: str(getattr(cfg, k)) for k in _RUN_FIELDS},
        "net": {k: str(getattr(cfg.net, k)) for k in _NET_FIELDS},
        "search": {
            k: str(getattr(cfg.search, k))
            for k in ("num_simulations", "c_puct", "temperature_drop_ply")
        },
    }
    if cfg.search.root_noise is not None:
        base["search"]["root_noise_alpha"] = str(cfg.search.root_noise.alpha)
        base["search"]["root_noise_fraction"] = str(cfg.search.root_noise.fraction)
    for section, pairs in sections.items():
        base.setdefault(section, {}).update(pairs)
    return config_from_sections(base)


def _runs_dir(args) -> Path:
    if args.runs_dir:
        return Path(args.runs_dir)
    return Path(os.environ.get("AZLAB_RUNS", "runs"))


def _new_run_dir(args, kind: str, game: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    path = _runs_dir(args) / f"{stamp}-{kind}-{game}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out_dir: Path, payload: dict) -> Path:
    payload = dict(payload)
    payload["version"] = __version__
    payload["finished"] = datetime.now(timezone.utc).isoformat()
    path = out_dir / "manifest.json"
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(payload, indent=1, default=str))
    os.replace(tmp, path)
    return path


def _sidecar_manifest(primary_out, command: str, args, artifacts: dict) -> Path:
    """Manifest next to a single-file artifact: <out>.manifest.json."""
    payload = {
        "command": command,
        "seed": getattr(args, "seed", None),
        "workers": getattr(args, "workers", None),
        "started": getattr(args, "_started", None),
        "config": {
            k: v for k, v in vars(args).items() if not k.startswith("_") and k != "func"
        },
        "artifacts": artifacts,
        "version": __version__,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    path = Path(str(primary_out) + ".manifest.json")
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1, default=str))
    os.replace(tmp, path)
    return path


def cmd_solve(args) -> int:
    game = make_game(args.game)
    out = Path(args.out)
    if not out.parent.exists():
        raise FileNotFoundError(f"output directory does not exist: {out.parent}")
    t0 = time.time()
    table = solve(game, max_entries=args.max_entries)
    table.save(out)
    print(f"solved {game.name}: {len(table)} states in {time.time() - t0:.1f}s -> {out}")
    root = table.entries[game.key(game.initial_state())]
    print(f"root value (mover perspective): {root.value}")
    _sidecar_manifest(out, "solve", args, {"table": str(out)})
    return 0


def cmd_train(args) -> int:
    if args.config:
        cfg = config_from_file(args.config)
    else:
        if not args.game:
            raise ValueError("either --config or --game is required")
        profile = paper_config if args.profile == "paper" else desk_config
        cfg = profile(args.game, mode=args.mode)
    if args.mode and cfg.mode != args.mode:
        cfg = replace(cfg, mode=args.mode)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.set:
        cfg = _apply_overrides(cfg, args.set)
    out_dir = Path(args.out) if args.out else _new_run_dir(args, cfg.mode, cfg.game)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    (out_dir / "config.ini").write_text(config_to_text(cfg))
    result = train(cfg, out_dir)
    manifest = _write_manifest(
        out_dir,
        {
            "command": "train",
            "started": started,
            "seed": cfg.seed,
            "config": asdict(cfg),
            "artifacts": {
                "checkpoints": [str(p) for p in result.checkpoints],
                "train_log": str(result.log_path),
                "visits": str(result.visits_path),
                "config": str(out_dir / "config.ini"),
            },
        },
    )
    print(
        f"trained {cfg.mode} on {cfg.game}: {cfg.total_games} games in "
        f"{result.elapsed:.0f}s -> {out_dir} ({len(result.checkpoints)} checkpoints)"
    )
    print(f"manifest: {manifest}")
    return 0


def _load_eval_runs(args, game):
    checkpoints = args.checkpoint
    visits_paths = args.visits or []
    if visits_paths and len(visits_paths) != len(checkpoints):
        raise ValueError("--visits must be given once per --checkpoint (or not at all)")
    runs = []
    for i, ckpt in enumerate(checkpoints):
        params, _ = load_checkpoint(ckpt)
        visits = load_visits(visits_paths[i]) if visits_paths else {}
        runs.append((i, NetEvaluator(game, params), visits))
    return runs


def cmd_evaluate(args) -> int:
    game = make_game(args.game)
    table = StateTable.load(args.table, expected_game=args.game)
    states = [s for s in enumerate_states(game) if game.terminal_value(s) is None]
    runs = _load_eval_runs(args, game)
    search = SearchConfig(
        num_simulations=args.simulations, temperature_drop_ply=0
    )
    report = assemble_report(
        game, args.label, runs, table, states, search, args.games,
        seed=args.seed or 0, workers=args.workers or 1,
    )
    out = Path(args.out)
    out.write_text(report.to_json())
    artifacts = {"report": str(out)}
    if args.dump_root_edges:
        node = run_search(game, game.initial_state(), runs[0][1], search)
        Path(args.dump_root_edges).write_text(json.dumps(root_edges(node), indent=1))
        artifacts["root_edges"] = str(args.dump_root_edges)
    print(
        f"evaluated {args.label}: search non-loss "
        f"{1 - report.match_with_search['loss'] / max(1, args.games * len(runs)):.3f}, "
        f"mean value error {report.mean_value_error:.3f}, "
        f"misalignment {report.misalignment_mean:.3f} -> {out}"
    )
    _sidecar_manifest(out, "evaluate", args, artifacts)
    return 0


def cmd_detect(args) -> int:
    game = make_game(args.game)
    params, _ = load_checkpoint(args.checkpoint)
    evaluator = NetEvaluator(game, params)
    search = SearchConfig(num_simulations=args.simulations, temperature_drop_ply=0)
    rng = np.random.default_rng(args.seed or 0)
    found = adversarial_detect(
        game,
        evaluator,
        search,
        args.games,
        rng,
        empties_budget=args.empties,
        threshold=args.threshold,
        workers=args.workers or 1,
    )
    if args.verify and not reverify_detections(game, found):
        raise RuntimeError("detector soundness re-verification failed")
    Path(args.out).write_text(found.to_json())
    print(
        f"adversarial detection on {game.name}: {len(found)} unique states "
        f"(mean error {found.mean_error():.3f}, skipped {found.skipped_budget}) -> {args.out}"
    )
    _sidecar_manifest(args.out, "detect", args, {"detections": str(args.out)})
    return 0


def cmd_compare(args) -> int:
    reports = [EvalReport.from_json(Path(p).read_text()) for p in args.reports]
    comparison = compare_reports(reports)
    if args.out:
        Path(args.out).write_text(json.dumps(comparison, indent=1))
    if args.csv:
        write_comparison_csv(comparison, args.csv)
    print(comparison_text(comparison))
    return 0


def cmd_report(args) -> int:
    report = EvalReport.from_json(Path(args.report).read_text())
    out_dir = Path(args.out_dir)
    paths = write_report_csvs(report, out_dir)
    if args.svg:
        paths += write_report_svgs(report, out_dir)
    print("\n".join(str(p) for p in paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="azlab",
        description="AlphaZero engine with value-informed selection/augmentation "
        "and exact game-tree analysis",
    )
    parser.add_argument("--runs-dir", help="base directory for run outputs (env AZLAB_RUNS)")
    # Global flags, accepted by every subcommand.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master RNG seed")
    common.add_argument(
        "--workers", type=int, default=None, help="parallelism cap (training and evaluation)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve a game exactly and save the state table")
    p.add_argument("--game", required=True, choices=GAME_NAMES)
    p.add_argument("--out", required=True)
    p.add_argument("--max-entries", type=int, default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", parents=[common], help="run self-play training")
    p.add_argument("--config", help="INI config file (see config_to_text)")
    p.add_argument("--game", choices=GAME_NAMES)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--out", help="output directory (default: runs dir + timestamp)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="full evaluation report for checkpoints")
    p.add_argument("--game", required=True, choices=GAME_NAMES)
    p.add_argument("--table", required=True, help="solved state table path")
    p.add_argument("--checkpoint", required=True, action="append")
    p.add_argument("--visits", action="append", help="visit file per checkpoint")
    p.add_argument("--label", default="model")
    p.add_argument("--games", type=int, default=1000, help="match games per checkpoint")
    p.add_argument("--simulations", type=int, default=25)
    p.add_argument("--dump-root-edges", help="write root edge stats JSON here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("detect", parents=[common], help="adversarial endgame state detection")
    p.add_argument("--game", required=True, choices=GAME_NAMES)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--games", type=int, default=10_000)
    p.add_argument("--simulations", type=int, default=25)
    p.add_argument("--empties", type=int, default=8)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--verify", action="store_true", help="re-verify detections")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("compare", parents=[common], help="compare evaluation reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", help="comparison JSON path")
    p.add_argument("--csv", help="comparison CSV path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", parents=[common], help="render CSV/SVG from a report JSON")
    p.add_argument("--report", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--svg", action="store_true", default=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args._started = datetime.now(timezone.utc).isoformat()
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"azlab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
