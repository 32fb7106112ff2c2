"""Synchronous round orchestration and run-log persistence.

One round: build each agent's inbox and situation from the state at the
start of the round, let every agent negotiate with its secretary against
that same snapshot, then apply all final actions serially in a fixed order
(responses first, then everything else; roster order, then proposal order).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .policy import AgentContext, ChatPolicy, policy_description, PROMPT_VERSION
from .protocol import Action, ActionKind, CountryIndex, Role, format_action
from .scenario import EMPTY_OVERLAY, Overlay, Scenario, render_profile
from .secretary import NegotiationResult, SecretaryContext, negotiate
from .worldstate import (
    Board,
    RelationKind,
    RuleViolation,
    WorldState,
    agent_view,
    apply_event,
    known_mobilized,
    relation_graph_connected,
    render_board,
    state_from_view,
    translate_board,
    view_digest,
)

logger = logging.getLogger(__name__)

MAX_ROUNDS = "max_rounds"
CONNECTIVITY = "board_connectivity"


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    max_rounds: int = 10
    eval_snapshot_round: int = 6
    history_window: int = 1
    stop_on_connectivity: bool = False
    stability_window: int = 3
    mobilization_public: bool = True
    seed: int = 0
    jobs: int = 1
    max_exchanges: int = 4

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if not 1 <= self.eval_snapshot_round <= self.max_rounds:
            raise ValueError("eval_snapshot_round must lie in [1, max_rounds]")
        if self.stability_window < 1:
            raise ValueError("stability_window must be at least 1")
        if self.history_window < 1:
            raise ValueError("history_window must be at least 1")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")


# ---------------------------------------------------------------------------
# Run log
# ---------------------------------------------------------------------------


@dataclass
class RunLog:
    scenario_id: str
    roster: tuple[str, ...]
    config: dict[str, Any]
    rounds: list[dict[str, Any]] = field(default_factory=list)
    termination: str | None = None
    overlay_digest: str = ""
    meta: dict[str, Any] = field(default_factory=dict)

    def record(self, round: int) -> dict[str, Any]:
        if not 1 <= round <= len(self.rounds):
            raise EngineError(f"round {round} is not in this log ({len(self.rounds)} rounds recorded)")
        return self.rounds[round - 1]

    def board_at(self, round: int) -> Board:
        return Board.from_json(self.roster, self.record(round)["board"])

    def final_actions(self, round: int) -> dict[str, list[str]]:
        return {c: a["final"] for c, a in self.record(round)["agents"].items()}

    def applied(self, round: int) -> list[dict[str, Any]]:
        return self.record(round)["applied"]

    def war_pairs_through(self, round: int) -> set[frozenset[str]]:
        out: set[frozenset[str]] = set()
        for r in range(1, round + 1):
            for item in self.applied(r):
                if item["kind"] == ActionKind.DECLARE_WAR.value and item["outcome"] != "superseded":
                    out.add(frozenset((item["actor"], item["target"])))
        return out

    def mobilized_through(self, round: int) -> set[str]:
        out: set[str] = set()
        for r in range(1, round + 1):
            out |= {c for c, m in self.record(r)["sticks"].items() if m}
        return out

    def config_json(self) -> dict[str, Any]:
        return {
            **self.meta,
            "scenario": self.scenario_id,
            "roster": list(self.roster),
            "overlay_digest": self.overlay_digest,
            "config": self.config,
            "termination": self.termination,
            "rounds_completed": len(self.rounds),
        }

    @classmethod
    def load(cls, run_dir: str | Path) -> RunLog:
        run_dir = Path(run_dir)
        try:
            cfg = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
            lines = (run_dir / "rounds.jsonl").read_text(encoding="utf-8").splitlines()
        except FileNotFoundError as exc:
            raise EngineError(f"{run_dir} is not a run directory: {exc}") from exc
        rounds = [json.loads(line) for line in lines if line.strip()]
        meta = {
            k: v
            for k, v in cfg.items()
            if k not in ("scenario", "roster", "overlay_digest", "config", "termination", "rounds_completed")
        }
        return cls(
            scenario_id=cfg["scenario"],
            roster=tuple(cfg["roster"]),
            config=cfg["config"],
            rounds=rounds,
            termination=cfg.get("termination"),
            overlay_digest=cfg.get("overlay_digest", ""),
            meta=meta,
        )


def dumps_record(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class RunWriter:
    """Single owner of a run directory."""

    def __init__(self, run_dir: str | Path, initials: Mapping[str, str], display: Mapping[str, str]):
        self.dir = Path(run_dir)
        self.initials = dict(initials)
        self.display = dict(display)
        (self.dir / "transcripts").mkdir(parents=True, exist_ok=True)
        (self.dir / "boards").mkdir(parents=True, exist_ok=True)
        (self.dir / "rounds.jsonl").write_text("", encoding="utf-8")

    def write_config(self, log: RunLog) -> None:
        text = json.dumps(log.config_json(), sort_keys=True, indent=2, ensure_ascii=False)
        (self.dir / "config.json").write_text(text + "\n", encoding="utf-8")

    def write_round(self, record: Mapping[str, Any], board: Board, transcripts: Mapping[str, Any]) -> None:
        with (self.dir / "rounds.jsonl").open("a", encoding="utf-8") as fh:
            fh.write(dumps_record(record) + "\n")
        r = record["round"]
        paragraph = translate_board(board, display=self.display)
        (self.dir / "boards" / f"round_{r}.txt").write_text(
            render_board(board, self.initials) + "\n" + (paragraph or "(no relations)") + "\n",
            encoding="utf-8",
        )
        for country, turns in transcripts.items():
            if not turns:
                continue
            name = f"round_{r}_{_slug(country)}.json"
            (self.dir / "transcripts" / name).write_text(
                json.dumps(turns, sort_keys=True, indent=1, ensure_ascii=False) + "\n", encoding="utf-8"
            )


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_").lower()


# ---------------------------------------------------------------------------
# Round mechanics
# ---------------------------------------------------------------------------


def situation_paragraph(state: WorldState, country: str, display: Mapping[str, str] | None = None) -> str:
    board = agent_view(state, country)
    text = translate_board(board, display=display)
    mobilized = known_mobilized(state, country)
    own = f"{country} is {'mobilized' if country in mobilized else 'not mobilized'}."
    others = sorted((c for c in mobilized if c != country), key=state.roster.index)
    stick = own + (f" Countries known to be mobilized: {', '.join(others)}." if others else "")
    return f"{text} {stick}".strip()


def build_inbox(state: WorldState, country: str, round: int, trigger_text: str, window: int = 1) -> tuple[str, ...]:
    if round == 1:
        return (f"## Trigger: {trigger_text}",)
    first = max(1, round - window)
    known = state.knowledge[country]
    items = []
    for event in state.events:
        if event.seq not in known or not first <= event.round < round:
            continue
        if event.action.actor == country or event.action.kind is ActionKind.WAIT:
            continue
        items.append(f"From {event.action.actor}: {format_action(event.action)}")
    return tuple(items)


def application_order(finals: Mapping[str, Sequence[Action]], roster: Sequence[str]) -> list[Action]:
    """Responses first, then the rest; roster order, then proposal order."""
    responses: list[Action] = []
    others: list[Action] = []
    for country in roster:
        for action in finals.get(country, ()):
            (responses if action.kind.is_response else others).append(action)
    return responses + others


def apply_round(state: WorldState, ordered: Iterable[Action]) -> tuple[WorldState, list[dict[str, Any]]]:
    """Apply final actions serially; races are dropped and logged as superseded."""
    outcomes = []
    for action in ordered:
        entry: dict[str, Any] = {
            "actor": action.actor,
            "kind": action.kind.value,
            "target": action.target,
            "line": format_action(action),
        }
        if action.kind is ActionKind.DECLARE_WAR:
            cell = state.board.cell(action.actor, action.target)
            if (
                cell.kind is RelationKind.WAR
                and cell.established_round == state.round
                and cell.declarer != action.actor
            ):
                entry.update(outcome="superseded", rule="race", reason=f"{cell.declarer} declared this war first")
                outcomes.append(entry)
                continue
        try:
            state = apply_event(state, action)
        except RuleViolation as exc:
            entry.update(outcome="superseded", rule=exc.rule, reason=exc.reason)
            logger.info("round %d: superseded %s (%s)", state.round, entry["line"], exc.reason)
        else:
            entry.update(outcome=state.events[-1].effect, rule=None, reason=None)
        outcomes.append(entry)
    return state, outcomes


def should_stop(
    round: int,
    boards: Sequence[Board],
    config: EngineConfig,
) -> str | None:
    """Termination reason after ``round``; ``boards`` holds end-of-round snapshots."""
    if config.stop_on_connectivity and len(boards) >= config.stability_window:
        recent = boards[-config.stability_window:]
        sig = recent[-1].signature()
        if all(b.signature() == sig for b in recent) and relation_graph_connected(recent[-1]):
            return CONNECTIVITY
    if round >= config.max_rounds:
        return MAX_ROUNDS
    return None


class Engine:
    def __init__(
        self,
        scenario: Scenario,
        policies: Mapping[str, Any] | Any,
        config: EngineConfig = EngineConfig(),
        *,
        overlay: Overlay = EMPTY_OVERLAY,
        out_dir: str | Path | None = None,
        context_hook: Callable[[AgentContext], None] | None = None,
    ):
        self.scenario = scenario
        self.config = config
        self.overlay = overlay
        roster = scenario.names
        if isinstance(policies, Mapping):
            missing = [c for c in roster if c not in policies]
            if missing:
                raise EngineError(f"no policy for {missing}")
            self.policies = dict(policies)
        else:
            self.policies = {c: policies for c in roster}
        self.countries = CountryIndex(roster, scenario.aliases)
        self.display = scenario.display_names
        self.profiles = {p.name: render_profile(p) for p in scenario.roster}
        self.context_hook = context_hook
        self.writer = RunWriter(out_dir, scenario.initials, self.display) if out_dir is not None else None
        self.state = WorldState.initial(roster, config.mobilization_public)
        self.history: dict[str, list[str]] = {c: [] for c in roster}
        self.boards: list[Board] = []
        self.log = RunLog(
            scenario_id=scenario.id,
            roster=roster,
            config=asdict(config),
            overlay_digest=overlay.digest(),
            meta={
                "title": scenario.title,
                "deanonymized": scenario.deanonymized,
                "attitude": scenario.attitude,
                "trigger": {"id": scenario.trigger.id, "text": scenario.trigger.text},
                "overlay": overlay.to_json(),
                "prompt_version": PROMPT_VERSION,
                "policies": {c: policy_description(self.policies[c]) for c in roster},
                "initials": scenario.initials,
                "display": self.display,
                "ground_truth": _gt_json(scenario),
            },
        )

    # -- per-agent ---------------------------------------------------------

    def context_for(self, country: str, round: int) -> AgentContext:
        state = self.state
        return AgentContext(
            country=country,
            roster=state.roster,
            round=round,
            profile_text=self.profiles[country],
            attitude=self.scenario.attitude,
            situation=situation_paragraph(state, country, self.display),
            inbox=build_inbox(state, country, round, self.scenario.trigger.text, self.config.history_window),
            history=tuple(self.history[country]),
            view=state_from_view(state, country),
            mobilized=state.mobilized(country),
            pending=state.pending_for(country),
        )

    def _negotiate(self, country: str, round: int) -> tuple[AgentContext, NegotiationResult]:
        ctx = self.context_for(country, round)
        if self.context_hook is not None:
            self.context_hook(ctx)
        sec = SecretaryContext(country, self.countries, ctx.view, round)
        result = negotiate(self.policies[country], ctx, sec, max_exchanges=self.config.max_exchanges)
        return ctx, result

    # -- rounds ------------------------------------------------------------

    def step(self, round: int) -> dict[str, Any]:
        self.state = self.state.with_round(round)
        roster = self.state.roster
        if self.config.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
                results = list(pool.map(lambda c: self._negotiate(c, round), roster))
        else:
            results = [self._negotiate(c, round) for c in roster]

        finals = {c: res.actions for c, (_, res) in zip(roster, results)}
        state, outcomes = apply_round(self.state, application_order(finals, roster))
        self.state = state.lapse_requests(round)

        agents: dict[str, Any] = {}
        transcripts: dict[str, Any] = {}
        for country, (ctx, res) in zip(roster, results):
            policy = self.policies[country]
            turns = policy.turns(country, round) if isinstance(policy, ChatPolicy) else []
            transcripts[country] = [t.to_json() for t in turns]
            final_lines = [format_action(a) for a in res.actions]
            agents[country] = {
                "inbox": list(ctx.inbox),
                "exchanges": [e.to_json() for e in res.exchanges],
                "amended": res.amended,
                "degraded": res.degraded,
                "error": res.error,
                "final": final_lines,
                "chat_keys": [t.key for t in turns],
            }
            self.history[country].extend(f"Round {round}: {line}" for line in final_lines)

        board = self.state.board
        self.boards.append(board)
        record = {
            "round": round,
            "agents": agents,
            "applied": outcomes,
            "board": board.to_json(),
            "view_digests": {c: view_digest(agent_view(self.state, c)) for c in roster},
            "sticks": {c: self.state.mobilized(c) for c in roster},
            "pending": [
                {"requester": r.requester, "kind": r.kind.value, "target": r.target, "issued_round": r.issued_round}
                for r in self.state.pending
            ],
        }
        self.log.rounds.append(record)
        if self.writer is not None:
            self.writer.write_round(record, board, transcripts)
        return record

    def run(self) -> RunLog:
        if self.writer is not None:
            self.writer.write_config(self.log)
        round = 0
        try:
            while True:
                round += 1
                self.step(round)
                reason = should_stop(round, self.boards, self.config)
                if reason:
                    self.log.termination = reason
                    break
        except Exception as exc:
            self.log.termination = f"aborted: {type(exc).__name__}: {exc}"
            logger.error("run aborted in round %d: %s", round, exc)
            raise
        finally:
            if self.writer is not None:
                self.writer.write_config(self.log)
        logger.info("run finished after %d rounds (%s)", len(self.log.rounds), self.log.termination)
        return self.log


def _gt_json(scenario: Scenario) -> dict[str, Any]:
    gt = scenario.ground_truth
    order = {c: i for i, c in enumerate(scenario.names)}

    def pairs(ps: Iterable[frozenset[str]]) -> list[list[str]]:
        return sorted((sorted(p, key=order.get) for p in ps), key=lambda p: (order[p[0]], order[p[1]]))

    return {
        "alliances": pairs(gt.alliances),
        "war_declarations": pairs(gt.war_declarations),
        "mobilized": sorted(gt.mobilized, key=order.get),
        "snapshot_round": gt.snapshot_round,
    }


def run(
    scenario: Scenario,
    policies: Mapping[str, Any] | Any,
    config: EngineConfig = EngineConfig(),
    **kwargs: Any,
) -> RunLog:
    return Engine(scenario, policies, config, **kwargs).run()
