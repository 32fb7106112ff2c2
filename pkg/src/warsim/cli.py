"""Command-line entry point: run, counterfactual, eval, render, replay.

Exit codes: 0 success, 1 usage error (bad flags, missing files), 2 runtime
error (engine abort, replay miss, replay divergence).
"""

from __future__ import annotations

import argparse
import glob as globlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from .chat import ChatClient, ReplayMiss
from .engine import Engine, EngineConfig, EngineError, RunLog
from .evaluation import EvaluationError, Scores, aggregate, evaluate_run, format_table
from .policy import ChatPolicy, PolicyError, RandomPolicy, ScriptedPolicy
from .scenario import (
    ATTITUDES,
    EMPTY_OVERLAY,
    GroundTruth,
    Overlay,
    Scenario,
    ScenarioError,
    anonymize,
    apply_overlay,
    load_overlay,
    load_scenario,
    load_trigger,
    resolve_data_file,
)
from .worldstate import render_board, translate_board

logger = logging.getLogger("warsim")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", default="wwi", help="built-in name (wwi, wwii, wsp) or JSON path")
    p.add_argument("--policy", choices=("chat", "scripted", "random"), default="random")
    p.add_argument("--script", help="scripted policy JSON (built-in fixture name or path)")
    p.add_argument("--model", help="chat model name (chat policy)")
    p.add_argument("--endpoint", help="chat-completion base URL (chat policy, record mode)")
    p.add_argument("--mode", choices=("record", "replay"), default="record")
    p.add_argument("--cache", default="cache", help="chat exchange cache directory")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--rounds", type=int, default=10, help="maximum number of rounds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.add_argument("--overlay", help="profile overlay JSON (built-in name or path)")
    p.add_argument("--trigger", help="trigger JSON (built-in name or path), or 'null'")
    p.add_argument("--attitude", choices=ATTITUDES, help="agent attitude prompt variant")
    p.add_argument("--anonymize", action="store_true", help="apply the scenario's rename map")
    p.add_argument("--stop-on-connectivity", action="store_true")
    p.add_argument("--stability-window", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="warsim", description="Deterministic multi-agent conflict simulation.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one simulation")
    _add_run_flags(p)

    p = sub.add_parser("counterfactual", help="run N seeds under an overlay/trigger/attitude")
    _add_run_flags(p)
    p.add_argument("--runs", type=int, default=3)

    p = sub.add_parser("eval", help="score run directories against ground truth")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--run", action="append", help="run directory (repeatable)")
    src.add_argument("--glob", help="glob pattern matching run directories")
    p.add_argument("--ground-truth", help="scenario whose ground truth to use (default: the one recorded)")
    p.add_argument("--round", type=int, help="snapshot round (default: ground-truth round, clipped)")
    p.add_argument("--json", help="write the JSON report here")

    p = sub.add_parser("render", help="print board grids and translation paragraphs")
    p.add_argument("--run", required=True)
    which = p.add_mutually_exclusive_group()
    which.add_argument("--round", type=int)
    which.add_argument("--all", action="store_true", help="write one file per recorded round")
    p.add_argument("--out", help="directory for --all output (default: <run>/render)")

    p = sub.add_parser("replay", help="re-execute a recorded run from its cache and compare")
    p.add_argument("--run", required=True)
    p.add_argument("--out", help="directory for the replayed run (default: <run>_replay)")
    p.add_argument("--cache", help="override the recorded cache directory")
    return parser


# ---------------------------------------------------------------------------
# Building runs
# ---------------------------------------------------------------------------


def _check_run_args(args: argparse.Namespace) -> None:
    if args.rounds < 1:
        raise UsageError("--rounds must be at least 1")
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if args.stability_window < 1:
        raise UsageError("--stability-window must be at least 1")
    if args.policy == "scripted" and not args.script:
        raise UsageError("--policy scripted needs --script")
    if args.policy == "chat":
        if not args.model:
            raise UsageError("--policy chat needs --model")
        if args.mode == "record" and not args.endpoint:
            raise UsageError("--policy chat in record mode needs --endpoint")
    if getattr(args, "runs", 1) < 1:
        raise UsageError("--runs must be at least 1")


def prepare_scenario(args: argparse.Namespace) -> tuple[Scenario, Overlay]:
    """Load the scenario, fold CLI trigger/attitude into the overlay, apply it."""
    try:
        scenario = load_scenario(args.scenario)
        overlay = load_overlay(args.overlay) if args.overlay else EMPTY_OVERLAY
        if args.trigger:
            overlay = replace(overlay, trigger_override=load_trigger(args.trigger))
        if args.attitude:
            overlay = replace(overlay, attitude=args.attitude)
        scenario = apply_overlay(scenario, overlay)
        if args.anonymize:
            scenario = anonymize(scenario)
    except ScenarioError as exc:
        raise UsageError(str(exc)) from exc
    return scenario, overlay


def make_policy(args: argparse.Namespace, seed: int) -> Any:
    if args.policy == "random":
        return RandomPolicy(seed)
    if args.policy == "scripted":
        try:
            path = resolve_data_file("fixtures", args.script)
        except ScenarioError as exc:
            raise UsageError(str(exc)) from exc
        return ScriptedPolicy.from_file(path)
    client = ChatClient(mode=args.mode, endpoint=args.endpoint, cache_dir=args.cache)
    return ChatPolicy(client, args.model, temperature=args.temperature, seed=seed)


def invocation(args: argparse.Namespace, seed: int) -> dict[str, Any]:
    """Flags needed to re-execute a run; stored in config.json."""
    script = str(resolve_data_file("fixtures", args.script).resolve()) if args.script else None
    return {
        "scenario": args.scenario,
        "policy": args.policy,
        "script": script,
        "model": args.model,
        "endpoint": args.endpoint,
        "cache": str(Path(args.cache).resolve()) if args.policy == "chat" else None,
        "temperature": args.temperature,
        "rounds": args.rounds,
        "seed": seed,
        "overlay": args.overlay,
        "trigger": args.trigger,
        "attitude": args.attitude,
        "anonymize": args.anonymize,
        "stop_on_connectivity": args.stop_on_connectivity,
        "stability_window": args.stability_window,
        "jobs": args.jobs,
    }


def execute(args: argparse.Namespace, seed: int, out: Path, jobs: int) -> RunLog:
    scenario, overlay = prepare_scenario(args)
    config = EngineConfig(
        max_rounds=args.rounds,
        eval_snapshot_round=min(scenario.ground_truth.snapshot_round, args.rounds),
        stop_on_connectivity=args.stop_on_connectivity,
        stability_window=args.stability_window,
        seed=seed,
        jobs=jobs,
    )
    engine = Engine(scenario, make_policy(args, seed), config, overlay=overlay, out_dir=out)
    engine.log.meta["invocation"] = invocation(args, seed)
    return engine.run()


def _default_out(args: argparse.Namespace) -> Path:
    stem = Path(args.scenario).stem
    return Path("runs") / f"{stem}_{args.policy}_seed{args.seed}"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    _check_run_args(args)
    out = Path(args.out) if args.out else _default_out(args)
    log = execute(args, args.seed, out, args.jobs)
    print(f"termination: {log.termination}")
    print(f"rounds: {len(log.rounds)}")
    print(f"output: {out}")
    return EXIT_OK


def cmd_counterfactual(args: argparse.Namespace) -> int:
    _check_run_args(args)
    scenario, overlay = prepare_scenario(args)
    base = Path(args.out) if args.out else Path("runs") / f"{Path(args.scenario).stem}_{overlay.id}"
    base.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed + i for i in range(args.runs)]
    dirs = [base / f"run_{i:02d}_seed{s}" for i, s in enumerate(seeds)]

    def one(i: int) -> RunLog:
        return execute(args, seeds[i], dirs[i], jobs=1)

    if args.jobs > 1 and args.runs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            logs = list(pool.map(one, range(args.runs)))
    else:
        logs = [one(i) for i in range(args.runs)]

    manifest = {
        "scenario": scenario.id,
        "overlay": overlay.to_json(),
        "overlay_digest": overlay.digest(),
        "trigger": {"id": scenario.trigger.id, "text": scenario.trigger.text},
        "attitude": scenario.attitude,
        "policy": args.policy,
        "runs": [
            {"dir": d.name, "seed": s, "termination": log.termination, "rounds": len(log.rounds)}
            for d, s, log in zip(dirs, seeds, logs)
        ],
    }
    (base / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    for d, log in zip(dirs, logs):
        print(f"{d}: {log.termination}")
    print(f"manifest: {base / 'manifest.json'}")
    return EXIT_OK


def _recorded_gt(log: RunLog) -> GroundTruth:
    raw = log.meta.get("ground_truth")
    if raw is None:
        raise UsageError(f"run {log.scenario_id} has no recorded ground truth; pass --ground-truth")
    return GroundTruth(
        alliances=frozenset(frozenset(p) for p in raw["alliances"]),
        war_declarations=frozenset(frozenset(p) for p in raw["war_declarations"]),
        mobilized=frozenset(raw["mobilized"]),
        snapshot_round=raw["snapshot_round"],
    )


def cmd_eval(args: argparse.Namespace) -> int:
    dirs = [Path(d) for d in args.run] if args.run else sorted(Path(p) for p in globlib.glob(args.glob))
    dirs = [d for d in dirs if (d / "rounds.jsonl").is_file()]
    if not dirs:
        raise UsageError("no run directories found")
    override = None
    if args.ground_truth:
        try:
            override = load_scenario(args.ground_truth).ground_truth
        except ScenarioError as exc:
            raise UsageError(str(exc)) from exc
    rows: list[tuple[str, dict[str, float | None]]] = []
    scores: list[Scores] = []
    per_run = []
    for d in dirs:
        log = RunLog.load(d)
        gt = override or _recorded_gt(log)
        snap = args.round if args.round is not None else min(gt.snapshot_round, len(log.rounds))
        s = evaluate_run(log, gt, snap)
        scores.append(s)
        rows.append((str(d), s.aspects))
        per_run.append({"run": str(d), **s.to_json()})
    agg = aggregate(scores)
    include_war = scores[0].war_jaccard is not None
    if len(scores) > 1:
        rows.append((f"mean of {agg.n}", agg.means))
    print(format_table(rows, include_war=include_war), end="")
    report = {"runs": per_run, "aggregate": agg.to_json()}
    target = Path(args.json) if args.json else (dirs[0] if len(dirs) == 1 else dirs[0].parent) / "eval.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"report: {target}")
    return EXIT_OK


def render_round(log: RunLog, round: int) -> str:
    board = log.board_at(round)
    initials = log.meta.get("initials") or {c: c[:2] for c in log.roster}
    paragraph = translate_board(board, display=log.meta.get("display")) or "(no relations)"
    return f"Round {round}\n{render_board(board, initials)}\n{paragraph}\n"


def cmd_render(args: argparse.Namespace) -> int:
    log = RunLog.load(args.run)
    if not log.rounds:
        raise UsageError(f"{args.run} has no recorded rounds")
    if args.all:
        out = Path(args.out) if args.out else Path(args.run) / "render"
        out.mkdir(parents=True, exist_ok=True)
        for r in range(1, len(log.rounds) + 1):
            path = out / f"round_{r}.txt"
            path.write_text(render_round(log, r), encoding="utf-8")
            print(path)
        return EXIT_OK
    r = args.round if args.round is not None else len(log.rounds)
    if not 1 <= r <= len(log.rounds):
        raise UsageError(f"round {r} not in 1..{len(log.rounds)}")
    print(render_round(log, r), end="")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    src = Path(args.run)
    log = RunLog.load(src)
    inv = log.meta.get("invocation")
    if not inv:
        raise UsageError(f"{src} does not record its invocation")
    ns = argparse.Namespace(**inv)
    ns.mode = "replay"
    ns.out = None
    if args.cache:
        ns.cache = args.cache
    if ns.cache is None:
        ns.cache = "cache"
    out = Path(args.out) if args.out else src.with_name(src.name + "_replay")
    execute(ns, inv["seed"], out, inv.get("jobs", 1))
    a = (src / "rounds.jsonl").read_bytes()
    b = (out / "rounds.jsonl").read_bytes()
    if a == b:
        print(f"identical: {out / 'rounds.jsonl'}")
        return EXIT_OK
    old, new = a.splitlines(), b.splitlines()
    first = next((i for i, (x, y) in enumerate(zip(old, new)) if x != y), min(len(old), len(new)))
    print(f"replay diverges at round {first + 1}: {out / 'rounds.jsonl'}", file=sys.stderr)
    return EXIT_RUNTIME


COMMANDS = {
    "run": cmd_run,
    "counterfactual": cmd_counterfactual,
    "eval": cmd_eval,
    "render": cmd_render,
    "replay": cmd_replay,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    for stream in (sys.stdout, sys.stderr):
        if hasattr(stream, "reconfigure"):
            stream.reconfigure(encoding="utf-8")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"warsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReplayMiss as exc:
        print(f"warsim: runtime error: ReplayMiss: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (EngineError, PolicyError, EvaluationError, OSError, ValueError) as exc:
        print(f"warsim: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
