"""Command line front end.

Subcommands:
  pattern   one exact-model planning episode chasing regularity
  freeplay  alternating collect/train loop with a learned ensemble
  recreate  frozen template, movable entities, re-creation score
  analyze   symmetry conformance battery for the reward variants
  oracle    exhaustive optimum on small instances

Every run writes into --out: machine-readable rollout.jsonl and
metrics.csv, PPM frames, a report.json, rendered PNG figures, and a
manifest.json with sha256 checksums of everything else in the
directory.  Set SOURCE_DATE_EPOCH to pin manifest timestamps.

Exit codes: 0 success, 1 bad configuration or usage, 2 runtime failure,
3 refused oracle instance.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from regplay import __version__, figures, gridworld
from regplay.configfile import (
    ConfigError,
    describe,
    freeplay_from,
    grid_from,
    map_from,
    planner_from,
    recreation_from,
    resolve_config,
)
from regplay.freeplay import run_free_play, run_pattern, run_recreation
from regplay.gridworld import Configuration, GridConfig
from regplay.oracle import OracleBudgetError, enumerate_optimum
from regplay.rng import child_seed
from regplay.symmetry import conformance_report, format_report


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors (exit 1), not crashes
    def error(self, message):
        raise ConfigError(message)


def _jsonable(obj):
    """Recursively make obj strict-JSON safe (NaN/inf become null)."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _write_jsonl(path: Path, rows) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(json.dumps(_jsonable(row), separators=(",", ":"), allow_nan=False))
            f.write("\n")


def _write_json(path: Path, payload: dict) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = int(epoch) if epoch is not None else int(time.time())
    return datetime.fromtimestamp(moment, tz=timezone.utc).isoformat()


def _write_manifest(out: Path, subcommand: str, seed: int, flat: dict) -> None:
    files = sorted(
        p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"
    )
    outputs = {
        p.relative_to(out).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in files
    }
    # worker count never changes results, so it stays out of the manifest
    manifest = {
        "tool": "regplay",
        "version": __version__,
        "subcommand": subcommand,
        "seed": seed,
        "config": flat,
        "generated_at": _timestamp(),
        "outputs": outputs,
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    os.replace(tmp, out / "manifest.json")


def _prepare_out(out: Path) -> Path:
    if out.exists() and any(out.iterdir()) and not (out / "manifest.json").exists():
        raise ConfigError(
            f"refusing to write into non-empty directory without a manifest: {out}"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _states_from_steps(grid: GridConfig, initial: Configuration, steps) -> list[Configuration]:
    return [initial] + [gridworld.from_json_dict(grid, s["state"]) for s in steps]


def _save_frame(out: Path, index: int, state: Configuration) -> None:
    frames = out / "frames"
    frames.mkdir(exist_ok=True)
    (frames / f"{index:05d}.ppm").write_bytes(gridworld.render_ppm(state))


# --- subcommands -------------------------------------------------------------


def cmd_pattern(flat: dict, seed: int, out: Path, workers: int) -> None:
    grid = grid_from(flat, "pattern")
    map_spec = map_from(flat, "pattern")
    pcfg = planner_from(flat, "pattern")
    steps = int(flat["run.steps"])
    frame_every = int(flat["run.frame_every"])
    if steps < 1:
        raise ConfigError("run.steps must be positive")
    if frame_every < 0:
        raise ConfigError("run.frame_every must be >= 0")

    result = run_pattern(grid, pcfg, map_spec, steps, seed, workers)
    record = result.record
    states = _states_from_steps(grid, record.initial_state, record.steps)

    rows = [{"initial": gridworld.to_json_dict(record.initial_state)}] + record.steps
    _write_jsonl(out / "rollout.jsonl", rows)
    _write_csv(
        out / "metrics.csv",
        ["step", "regularity"],
        [(t, r) for t, r in enumerate(result.regularity)],
    )
    frame_steps = {0, len(states) - 1}
    if frame_every > 0:
        frame_steps.update(range(0, len(states), frame_every))
    for t in sorted(frame_steps):
        _save_frame(out, t, states[t])
    (out / "final_state.txt").write_text(
        gridworld.render_ascii(record.final_state), encoding="utf-8"
    )
    figures.regularity_curve(result.regularity, out / "regularity.png")
    best_step = max(range(len(result.regularity)), key=result.regularity.__getitem__)
    _write_json(
        out / "report.json",
        {
            "subcommand": "pattern",
            "steps": steps,
            "initial_regularity": result.initial_regularity,
            "final_regularity": result.final_regularity,
            "best_regularity": result.best_regularity,
            "best_step": best_step,
            "figure": "regularity.png",
        },
    )
    print(
        f"pattern: regularity {result.initial_regularity:.4f} -> "
        f"{result.final_regularity:.4f} (best {result.best_regularity:.4f} "
        f"at step {best_step})"
    )


def cmd_freeplay(flat: dict, seed: int, out: Path, workers: int) -> None:
    cfg = freeplay_from(flat, ensemble_seed=child_seed(seed, "ensemble"))
    result = run_free_play(cfg, seed, workers, checkpoint_dir=out / "checkpoints")

    metric_rows = [m.to_dict() for m in result.metrics]
    n_members = cfg.ensemble.members
    _write_csv(
        out / "metrics.csv",
        [
            "iteration",
            "best_regularity",
            "mean_regularity",
            "mean_disagreement",
            "moved_step_fraction",
            "adjacent_step_fraction",
            "buffer_size",
            *[f"loss_{m}" for m in range(n_members)],
        ],
        [
            (
                r["iteration"],
                r["best_regularity"],
                r["mean_regularity"],
                r["mean_disagreement"],
                r["moved_step_fraction"],
                r["adjacent_step_fraction"],
                r["buffer_size"],
                *r["member_losses"],
            )
            for r in metric_rows
        ],
    )

    def rollout_rows():
        for it, iteration_records in enumerate(result.records):
            for r, record in enumerate(iteration_records):
                yield {
                    "iteration": it,
                    "rollout": r,
                    "initial": gridworld.to_json_dict(record.initial_state),
                    "steps": record.steps,
                }

    _write_jsonl(out / "rollout.jsonl", rollout_rows())
    for it, iteration_records in enumerate(result.records):
        _save_frame(out, it, iteration_records[-1].final_state)
    figures.freeplay_curves(metric_rows, out / "freeplay.png")
    first, last = metric_rows[0], metric_rows[-1]
    _write_json(
        out / "report.json",
        {
            "subcommand": "freeplay",
            "iterations": cfg.iterations,
            "first_best_regularity": first["best_regularity"],
            "last_best_regularity": last["best_regularity"],
            "improved": last["best_regularity"] > first["best_regularity"],
            "best_overall": max(r["best_regularity"] for r in metric_rows),
            "final_buffer_size": last["buffer_size"],
            "checkpoints": [p.relative_to(out).as_posix() for p in result.checkpoints],
            "figure": "freeplay.png",
        },
    )
    print(
        f"freeplay: best regularity {first['best_regularity']:.4f} (iter 1) -> "
        f"{last['best_regularity']:.4f} (iter {cfg.iterations}), "
        f"buffer {last['buffer_size']} transitions"
    )


def cmd_recreate(flat: dict, seed: int, out: Path, workers: int) -> None:
    cfg, template = recreation_from(flat)
    try:
        report = run_recreation(cfg, template, seed, workers)
    except ValueError as e:
        # the template and grid both come from the config
        raise ConfigError(str(e)) from None
    payload = report.to_dict()

    _write_json(out / "report.json", {"subcommand": "recreate", **payload})
    _write_csv(
        out / "metrics.csv",
        ["rollout", "start", "end", "ever"],
        [
            (r["rollout"], int(r["start"]), int(r["end"]), int(r["ever"]))
            for r in payload["rollouts"]
        ],
    )
    _write_jsonl(out / "rollout.jsonl", payload["rollouts"])
    for r in payload["rollouts"]:
        state = gridworld.from_json_dict(cfg.grid, r["final_state"])
        _save_frame(out, r["rollout"], state)
    figures.recreation_bars(payload, out / "recreation.png")
    print(
        f"recreate: end fraction {report.end_fraction:.2f} "
        f"(start {report.start_fraction:.2f}, ever {report.ever_fraction:.2f}) "
        f"over {cfg.rollouts} rollouts"
    )


def cmd_analyze(flat: dict, seed: int, out: Path, workers: int) -> None:
    report = conformance_report(seed=seed)
    _write_json(out / "report.json", {"subcommand": "analyze", **report})
    table = format_report(report)
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    _write_csv(
        out / "metrics.csv",
        [
            "operation",
            "variant",
            "invariant",
            "favored",
            "favored_after_double",
            "base_reward",
            "image_reward",
            "patterned_reward",
            "control_reward",
        ],
        [
            (
                c["operation"],
                c["variant"],
                int(c["invariant"]),
                int(c["favored"]),
                "" if c["favored_after_double"] is None else int(c["favored_after_double"]),
                c["base_reward"],
                c["image_reward"],
                c["patterned_reward"],
                c["control_reward"],
            )
            for c in report["cells"]
        ],
    )
    figures.conformance_matrix(report, out / "analysis.png")
    print(table)


def cmd_oracle(flat: dict, seed: int, out: Path, workers: int) -> None:
    width = int(flat["grid.width"])
    height = int(flat["grid.height"])
    entities = int(flat["grid.entities"])
    spec = map_from(flat, "oracle")
    try:
        result = enumerate_optimum(width, height, entities, spec)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    _write_json(
        out / "report.json",
        {
            "subcommand": "oracle",
            "grid": [width, height],
            "entities": entities,
            **result.to_dict(),
        },
    )
    base = GridConfig(width=width, height=height, num_entities=entities, persistency=1)
    for i, placement in enumerate(result.argmax[:16]):
        state = Configuration(
            config=base,
            positions=placement,
            colors=None,
            frozen=(False,) * entities,
            cursor=(0, 1),
        )
        _save_frame(out, i, state)
    print(
        f"oracle: optimum {result.optimum:.12f} over "
        f"{result.total_configurations} placements, "
        f"{len(result.argmax)} optimal"
    )
    for placement in result.argmax:
        print("  " + " ".join(f"({c},{r})" for c, r in placement))


_COMMANDS = {
    "pattern": cmd_pattern,
    "freeplay": cmd_freeplay,
    "recreate": cmd_recreate,
    "analyze": cmd_analyze,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regplay", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name, help_text in (
        ("pattern", "plan one episode toward maximum regularity"),
        ("freeplay", "free play: collect with the ensemble, then train it"),
        ("recreate", "re-create a frozen template's dominant relation"),
        ("analyze", "run the symmetry conformance battery"),
        ("oracle", "exhaustively find the optimum on a small grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="key=value config file")
        p.add_argument(
            "--set",
            dest="sets",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument(
            "--dry-run",
            action="store_true",
            help="validate and print the resolved config, run nothing",
        )
    return parser


def _run(args) -> None:
    if args.seed < 0:
        raise ConfigError("--seed must be >= 0")
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    file_text = None
    source = "<config>"
    if args.config is not None:
        try:
            file_text = args.config.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from None
        source = str(args.config)
    flat = resolve_config(args.subcommand, file_text, source, tuple(args.sets))
    if args.dry_run:
        text = describe(flat)
        if text:
            print(text)
        return
    out = args.out if args.out is not None else Path("runs") / f"{args.subcommand}-seed{args.seed}"
    _prepare_out(out)
    _COMMANDS[args.subcommand](flat, args.seed, out, args.workers)
    _write_manifest(out, args.subcommand, args.seed, flat)
    print(f"outputs written to {out}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _run(args)
        return 0
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OracleBudgetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except Exception as e:  # noqa: BLE001  anything else is a runtime failure
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
