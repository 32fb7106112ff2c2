"""Agent decision-making: prompt construction and the three policy kinds.

All policies share one method, ``propose(context, feedback=None)``, which
returns action lines in the wire grammar.  The secretary decides whether
they are acceptable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from .chat import ChatClient, ChatRequest, ReplayMiss, TransportError
from .protocol import (
    Action,
    ActionKind,
    Family,
    Role,
    format_action,
    kind_for,
    split_action_lines,
    wait,
)
from .worldstate import (
    PACT_KINDS,
    FAMILY_RELATION,
    PRIVATE,
    PendingRequest,
    RelationKind,
    RuleViolation,
    WorldState,
    apply_event,
)

logger = logging.getLogger(__name__)

PROMPT_VERSION = "1"
STAGE_FILES = ("step1_allies", "step2_enemies", "step3_actions", "step4_situation")


class PolicyError(RuntimeError):
    pass


class PolicyUnavailable(PolicyError):
    """Transient failure: the agent waits this round."""


class ScriptGap(PolicyError):
    """A script has no entry for the requested (round, country)."""


def derive_seed(seed: int, country_index: int, round: int) -> int:
    """Per-agent, per-round seed so random streams are independent."""
    digest = hashlib.sha256(f"{seed}:{country_index}:{round}".encode("ascii")).hexdigest()
    return int(digest[:16], 16) % (2**31)


# ---------------------------------------------------------------------------
# Context and prompts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentContext:
    country: str
    roster: tuple[str, ...]
    round: int
    profile_text: str
    attitude: str
    situation: str
    inbox: tuple[str, ...]
    history: tuple[str, ...]
    view: WorldState
    mobilized: bool = False
    pending: tuple[PendingRequest, ...] = ()

    @property
    def country_index(self) -> int:
        return self.roster.index(self.country)


@dataclass(frozen=True)
class StagedPrompts:
    system: str
    stages: tuple[str, str, str, str]

    def all_text(self) -> str:
        return "\n".join((self.system, *self.stages))


def load_prompt(name: str) -> str:
    return resources.files("warsim").joinpath("prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8").strip()


def _bullets(items: Sequence[str], empty: str) -> str:
    return "\n".join(items) if items else empty


def _examples(country: str, others: Sequence[str]) -> str:
    other = others[0] if others else "<country>"
    return "\n".join(
        (
            f"{country} has chosen to General Mobilization",
            f"{country} has chosen to Request Military Alliance to {other}",
            f"{country} has chosen to Send Message to {other} with the following content: <message>",
        )
    )


def build_prompts(context: AgentContext, attitude: str | None = None) -> StagedPrompts:
    attitude = attitude or context.attitude
    c = context.country
    values = {
        "country": c,
        "profile": context.profile_text.rstrip(),
        "roster": ", ".join(context.roster),
        "round": context.round,
        "situation": context.situation or "Nothing is known yet.",
        "inbox": _bullets(context.inbox, "(nothing)"),
        "history": _bullets(context.history, "(none yet)"),
        "analysis": load_prompt(f"analysis_{attitude}"),
        "action_space": load_prompt("action_space"),
        "examples": _examples(c, [n for n in context.roster if n != c]),
    }
    system = load_prompt(f"system_{attitude}").format(**values)
    stages = tuple(load_prompt(name).format(**values) for name in STAGE_FILES)
    return StagedPrompts(system, stages)  # type: ignore[arg-type]


def correction_prompt(country: str, feedback: str) -> str:
    return load_prompt("correction").format(country=country, feedback=feedback)


# ---------------------------------------------------------------------------
# Chat-model policy
# ---------------------------------------------------------------------------


@dataclass
class ChatTurn:
    key: str
    cached: bool
    request: dict
    response: str

    def to_json(self) -> dict:
        return {"key": self.key, "cached": self.cached, "request": self.request, "response": self.response}


class ChatPolicy:
    """Runs the four-stage prompt chain; corrections reuse the same thread."""

    kind = "chat"

    def __init__(self, client: ChatClient, model: str, *, temperature: float = 1.0, seed: int = 0):
        self.client = client
        self.model = model
        self.temperature = temperature
        self.seed = seed
        self._threads: dict[tuple[str, int], list[tuple[str, str]]] = {}
        self._turns: dict[tuple[str, int], list[ChatTurn]] = {}
        self._lock = threading.Lock()

    def describe(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "model": self.model,
            "temperature": self.temperature,
            "seed": self.seed,
            "prompt_version": PROMPT_VERSION,
        }

    def _call(self, key: tuple[str, int], messages: list[tuple[str, str]], seed: int) -> str:
        request = ChatRequest(self.model, tuple(messages), self.temperature, seed)
        try:
            resp = self.client.chat(request)
        except ReplayMiss:
            raise
        except TransportError as exc:
            raise PolicyUnavailable(str(exc)) from exc
        with self._lock:
            self._turns.setdefault(key, []).append(
                ChatTurn(resp.key, resp.cached, request.to_json(), resp.text)
            )
        return resp.text

    def propose(self, context: AgentContext, feedback: str | None = None) -> list[str]:
        key = (context.country, context.round)
        seed = derive_seed(self.seed, context.country_index, context.round)
        if feedback is None:
            prompts = build_prompts(context)
            messages: list[tuple[str, str]] = [("system", prompts.system)]
            answers = []
            for stage in prompts.stages:
                messages.append(("user", stage))
                answer = self._call(key, messages, seed)
                messages.append(("assistant", answer))
                answers.append(answer)
            with self._lock:
                self._threads[key] = messages
            lines = split_action_lines(answers[3], context.roster)
            return lines or split_action_lines(answers[2], context.roster)
        with self._lock:
            thread = list(self._threads.get(key, ()))
        if not thread:
            raise PolicyError(f"no open thread for {context.country} in round {context.round}")
        thread.append(("user", correction_prompt(context.country, feedback)))
        answer = self._call(key, thread, seed)
        thread.append(("assistant", answer))
        with self._lock:
            self._threads[key] = thread
        return split_action_lines(answer, context.roster)

    def turns(self, country: str, round: int) -> list[ChatTurn]:
        with self._lock:
            return list(self._turns.get((country, round), ()))


# ---------------------------------------------------------------------------
# Scripted policy
# ---------------------------------------------------------------------------


class ScriptedPolicy:
    """Replays a JSON script: ``{"<round>": {"<country>": [lines...]}}``.

    An optional ``"corrections"`` map with the same shape holds a list of
    alternative proposals served in turn when the secretary asks for a fix.
    """

    kind = "scripted"

    def __init__(self, script: Mapping[str, Any], source: str = "<inline>"):
        self.source = source
        self.rounds: dict[int, dict[str, list[str]]] = {}
        for key, value in script.items():
            if str(key).isdigit():
                self.rounds[int(key)] = {c: list(lines) for c, lines in value.items()}
        self.corrections: dict[int, dict[str, list[list[str]]]] = {
            int(k): {c: [list(p) for p in props] for c, props in v.items()}
            for k, v in script.get("corrections", {}).items()
        }
        self._attempts: dict[tuple[str, int], int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> ScriptedPolicy:
        path = Path(path)
        return cls(json.loads(path.read_text(encoding="utf-8")), source=str(path))

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, "script": self.source}

    def covers(self, round: int, country: str) -> bool:
        return country in self.rounds.get(round, {})

    def propose(self, context: AgentContext, feedback: str | None = None) -> list[str]:
        entry = self.rounds.get(context.round, {})
        if context.country not in entry:
            raise ScriptGap(f"script {self.source} has no entry for {context.country} in round {context.round}")
        key = (context.country, context.round)
        if feedback is None:
            with self._lock:
                self._attempts[key] = 0
            return list(entry[context.country])
        fixes = self.corrections.get(context.round, {}).get(context.country, [])
        with self._lock:
            attempt = self._attempts.get(key, 0)
            self._attempts[key] = attempt + 1
        if attempt < len(fixes):
            return list(fixes[attempt])
        return list(entry[context.country])


# ---------------------------------------------------------------------------
# Random policy
# ---------------------------------------------------------------------------


MESSAGE_TEXTS = (
    "We are watching the situation closely.",
    "We seek friendly relations.",
    "We propose talks on our mutual interests.",
)


class RandomPolicy:
    """Seeded random play that only proposes actions legal in the agent's view."""

    kind = "random"

    def __init__(self, seed: int = 0, max_initiations: int = 3):
        self.seed = seed
        self.max_initiations = max_initiations

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, "seed": self.seed, "max_initiations": self.max_initiations}

    def _candidates(self, state: WorldState, me: str) -> list[Action]:
        out: list[Action] = []
        if not state.mobilized(me):
            out.append(Action(me, ActionKind.MOBILIZE))
        for other in state.roster:
            if other == me:
                continue
            rel = state.board.cell(me, other)
            if rel.kind is RelationKind.DEFAULT:
                out.append(Action(me, ActionKind.DECLARE_WAR, (other,)))
                out.append(Action(me, ActionKind.REQUEST_ALLIANCE, (other,)))
                out.append(Action(me, ActionKind.REQUEST_TREATY, (other,)))
            elif rel.kind is RelationKind.WAR:
                out.append(Action(me, ActionKind.PRESENT_PEACE, (other,), "We propose to end hostilities."))
            else:
                fam = next(f for f, k in FAMILY_RELATION.items() if k is rel.kind)
                if rel.visibility == PRIVATE:
                    out.append(Action(me, kind_for(Role.PUBLISH, fam), (other,)))
                out.append(Action(me, kind_for(Role.BETRAY, fam), (other,)))
            out.append(Action(me, ActionKind.SEND_MESSAGE, (other,), MESSAGE_TEXTS[len(out) % len(MESSAGE_TEXTS)]))
        return out

    def choose(self, context: AgentContext) -> list[Action]:
        me = context.country
        rng = random.Random(derive_seed(self.seed, context.country_index, context.round))
        state = context.view.with_round(context.round)
        chosen: list[Action] = []
        touched: set[str] = set()
        order = {c: i for i, c in enumerate(context.roster)}
        requests = sorted(
            (r for r in state.pending if r.target == me),
            key=lambda r: (order[r.requester], r.kind.value),
        )
        for req in requests:
            if req.requester in touched:
                continue
            pick = rng.choice(("accept", "reject", "ignore"))
            if pick == "ignore":
                continue
            role = Role.ACCEPT if pick == "accept" else Role.REJECT
            action = Action(me, kind_for(role, req.family), (req.requester,), round=context.round)
            state = apply_event(state, action)
            chosen.append(action)
            touched.add(req.requester)
        candidates = self._candidates(state, me)
        rng.shuffle(candidates)
        budget = rng.randint(0, self.max_initiations)
        for cand in candidates:
            if budget <= 0:
                break
            if cand.target is not None and cand.target in touched:
                continue
            cand = cand.with_round(context.round)
            try:
                state = apply_event(state, cand)
            except RuleViolation:
                continue
            chosen.append(cand)
            budget -= 1
            if cand.target is not None:
                touched.add(cand.target)
        return chosen or [wait(me, context.round)]

    def propose(self, context: AgentContext, feedback: str | None = None) -> list[str]:
        return [format_action(a) for a in self.choose(context)]


def policy_description(policy: Any) -> dict[str, Any]:
    describe = getattr(policy, "describe", None)
    return describe() if callable(describe) else {"kind": type(policy).__name__}
