"""Deterministic per-country validator and the bounded correction loop.

Rules, in the order they are reported:

R1  line follows the action grammar
R2  verb is in the action space
R3  countries exist, the actor is the proposing country, no self-targeting
R4  Accept/Reject answers a pending request from that counterparty
R5  the actor is mobilized (earlier in the proposal or before) when declaring war
R6  no war against an alliance/treaty/peace partner unless betrayed first
R7  Publish/Betray refer to an existing relation of that family
R8  no contradictory pair inside one proposal

The checks are written against the agent's own view and do not call
:func:`warsim.worldstate.apply_event`, so the engine's transition function and
the secretary can be tested against each other.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .protocol import (
    Action,
    ActionKind,
    CountryIndex,
    Family,
    ParseError,
    Role,
    format_action,
    parse_actions,
    wait,
)
from .worldstate import FAMILY_RELATION, PACT_KINDS, RelationKind, WorldState

logger = logging.getLogger(__name__)

MAX_EXCHANGES = 4
RULES = {
    "R1": "grammar/format",
    "R2": "action kind in action space",
    "R3": "valid countries, actor is the agent, actor not targeted",
    "R4": "response matches a pending request",
    "R5": "mobilization precedes war declaration",
    "R6": "no war against a pact partner without betrayal",
    "R7": "publish/betray require an existing relation",
    "R8": "no contradictory actions within one proposal",
}


@dataclass(frozen=True)
class Issue:
    index: int  # 0-based position in the normalized proposal
    rule: str
    reason: str

    def feedback(self) -> str:
        return f"Action {self.index + 1} violates {self.rule}: {self.reason}"


@dataclass(frozen=True)
class ProposalItem:
    index: int
    line: str
    action: Action | None = None
    error: ParseError | None = None


@dataclass(frozen=True)
class Verdict:
    status: str  # "accepted" | "revise"
    issues: tuple[Issue, ...]
    items: tuple[ProposalItem, ...]

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"

    def feedback(self) -> str:
        return "\n".join(i.feedback() for i in self.issues)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "issues": [{"index": i.index, "rule": i.rule, "reason": i.reason} for i in self.issues],
            "lines": [it.line for it in self.items],
        }


@dataclass(frozen=True)
class SecretaryContext:
    """What the secretary may consult: the agent's own view of the world."""

    country: str
    countries: CountryIndex
    view: WorldState
    round: int


def normalize(
    proposal: Sequence[str | Action], countries: CountryIndex, round: int = 0
) -> list[ProposalItem]:
    """Parse lines, split multi-target actions, collapse exact repeats."""
    items: list[ProposalItem] = []
    seen: set[Action] = set()
    for raw in proposal:
        if isinstance(raw, Action):
            actions = [a.with_round(round) for a in raw.expand()]
        else:
            try:
                actions = parse_actions(raw, countries, round)
            except ParseError as err:
                items.append(ProposalItem(len(items), raw.strip(), error=err))
                continue
        for action in actions:
            if action in seen:
                logger.debug("collapsing repeated action %s", format_action(action))
                continue
            seen.add(action)
            items.append(ProposalItem(len(items), format_action(action), action=action))
    return items


def canonical_order(items: Sequence[ProposalItem]) -> list[ProposalItem]:
    """Responses first, then everything else; proposal order within each group."""
    responses = [it for it in items if it.action is not None and it.action.kind.is_response]
    others = [it for it in items if not (it.action is not None and it.action.kind.is_response)]
    return responses + others


def _contradiction(new: Action, old: Action) -> str | None:
    if new.target is None or new.target != old.target:
        return None
    r_new, r_old = new.kind.role, old.kind.role
    roles = {r_new, r_old}
    same_family = new.kind.family is not None and new.kind.family is old.kind.family
    if roles == {Role.ACCEPT, Role.REJECT} and same_family:
        return f"accepts and rejects the same request from {new.target}"
    if r_new is Role.ACCEPT and r_old is Role.ACCEPT:
        return f"accepts two different pacts from {new.target}; a pair holds one relation"
    if roles == {Role.REQUEST, Role.BETRAY} and same_family:
        return f"requests and betrays the same pact with {new.target}"
    if Role.WAR in roles and roles & {Role.REQUEST, Role.ACCEPT}:
        return f"declares war on {new.target} while requesting or accepting a pact with it"
    return None


class _Sim:
    """The agent's local world, advanced action by action."""

    def __init__(self, ctx: SecretaryContext):
        view = ctx.view
        self.country = ctx.country
        self.mobilized = view.mobilized(ctx.country)
        self.cells = {c: view.board.cell(ctx.country, c).kind for c in view.roster if c != ctx.country}
        self.pending = {
            (r.requester, r.kind.family) for r in view.pending if r.target == ctx.country
        }

    def check(self, action: Action) -> tuple[str, str] | None:
        role, target = action.kind.role, action.target
        fam = action.kind.family
        if role is Role.MOBILIZE:
            self.mobilized = True
        elif role is Role.WAR:
            if not self.mobilized:
                return "R5", f"{self.country} is not mobilized; General Mobilization must come first"
            if self.cells[target] in PACT_KINDS:
                kind = self.cells[target].name.lower()
                return "R6", f"{self.country} holds a {kind} relation with {target}; betray it first"
            self.cells[target] = RelationKind.WAR
        elif role in (Role.ACCEPT, Role.REJECT):
            if (target, fam) not in self.pending:
                return "R4", f"{target} has no pending {_fam(fam)} request to {self.country}"
            self.pending.discard((target, fam))
            if role is Role.ACCEPT:
                self.cells[target] = FAMILY_RELATION[fam]
        elif role in (Role.PUBLISH, Role.BETRAY):
            if self.cells[target] is not FAMILY_RELATION[fam]:
                return "R7", f"there is no {_fam(fam)} between {self.country} and {target}"
            if role is Role.BETRAY:
                self.cells[target] = RelationKind.DEFAULT
        return None


def _fam(fam: Family) -> str:
    return {
        Family.ALLIANCE: "military alliance",
        Family.TREATY: "non-intervention treaty",
        Family.PEACE: "peace agreement",
    }[fam]


def validate_items(items: Sequence[ProposalItem], ctx: SecretaryContext) -> Verdict:
    issues: list[Issue] = []
    sim = _Sim(ctx)
    kept: list[Action] = []
    for item in canonical_order(items):
        if item.error is not None:
            issues.append(Issue(item.index, item.error.rule, str(item.error)))
            continue
        action = item.action
        assert action is not None
        if action.actor != ctx.country:
            issues.append(
                Issue(item.index, "R3", f"action is taken by {action.actor}, not by {ctx.country}")
            )
            continue
        clash = next((r for old in kept if (r := _contradiction(action, old))), None)
        if clash:
            issues.append(Issue(item.index, "R8", clash))
            continue
        problem = sim.check(action)
        if problem:
            issues.append(Issue(item.index, *problem))
            continue
        kept.append(action)
    issues.sort(key=lambda i: i.index)
    return Verdict("accepted" if not issues else "revise", tuple(issues), tuple(items))


def validate(proposal: Sequence[str | Action], ctx: SecretaryContext) -> Verdict:
    """Check a proposal against the agent's own view; violations are data."""
    return validate_items(normalize(proposal, ctx.countries, ctx.round), ctx)


def amend(items: Sequence[ProposalItem], issues: Sequence[Issue], actor: str = "", round: int = 0) -> list[Action]:
    """Drop exactly the flagged items; fall back to waiting if nothing is left."""
    flagged = {i.index for i in issues}
    kept = [it.action for it in items if it.index not in flagged and it.action is not None]
    if kept:
        return kept
    if not actor:
        raise ValueError("amend needs the actor to build a Wait fallback")
    return [wait(actor, round)]


# ---------------------------------------------------------------------------
# Negotiation loop
# ---------------------------------------------------------------------------


class ProposalSource(Protocol):
    def propose(self, context, feedback: str | None = None) -> list[str]: ...


@dataclass
class Exchange:
    proposal: list[str]
    verdict: Verdict

    def to_json(self) -> dict:
        return {"proposal": list(self.proposal), "verdict": self.verdict.to_json()}


@dataclass
class NegotiationResult:
    actions: list[Action]
    exchanges: list[Exchange] = field(default_factory=list)
    amended: bool = False
    degraded: bool = False
    error: str | None = None

    @property
    def policy_calls(self) -> int:
        return len(self.exchanges)


def negotiate(
    policy: ProposalSource,
    agent_context,
    ctx: SecretaryContext,
    *,
    max_exchanges: int = MAX_EXCHANGES,
    critique: Callable[[Verdict], str | None] | None = None,
) -> NegotiationResult:
    """Propose, validate, feed issues back; amend after ``max_exchanges`` tries.

    ``critique`` may prepend advisory text to the feedback but never changes
    the verdict.
    """
    from .policy import PolicyUnavailable

    result = NegotiationResult(actions=[])
    feedback: str | None = None
    verdict: Verdict | None = None
    for _ in range(max_exchanges):
        try:
            lines = list(policy.propose(agent_context, feedback))
        except PolicyUnavailable as exc:
            logger.warning("%s: policy unavailable in round %d (%s); waiting", ctx.country, ctx.round, exc)
            result.actions = [wait(ctx.country, ctx.round)]
            result.degraded = True
            result.error = str(exc)
            return result
        verdict = validate(lines, ctx)
        result.exchanges.append(Exchange(lines, verdict))
        if verdict.accepted:
            actions = [it.action for it in verdict.items if it.action is not None]
            result.actions = actions or [wait(ctx.country, ctx.round)]
            return result
        feedback = verdict.feedback()
        if critique is not None:
            advice = critique(verdict)
            if advice:
                feedback = f"{advice}\n{feedback}"
    assert verdict is not None
    result.actions = amend(verdict.items, verdict.issues, ctx.country, ctx.round)
    result.amended = True
    logger.info("%s: proposal amended after %d exchanges", ctx.country, max_exchanges)
    return result
