"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace as dc_replace
from itertools import product
from typing import Iterator

from warsim.protocol import Action, ActionKind, Family, InputType, Role, properties_of
from warsim.worldstate import RelationKind, RuleViolation, WorldState, apply_event

# ---------------------------------------------------------------------------
# Two-country reference transition system
# ---------------------------------------------------------------------------

A, B = "A", "B"
FAM_CELL = {Family.ALLIANCE: "M", Family.TREATY: "T", Family.PEACE: "P"}


@dataclass(frozen=True)
class Ref:
    """Abstract state: mobilization flags, the single cell, its visibility, pending requests."""

    mob_a: bool = False
    mob_b: bool = False
    cell: str = "D"
    public: bool = True
    pending: frozenset = frozenset()  # of (requester, family)

    def mob(self, c: str) -> bool:
        return self.mob_a if c == A else self.mob_b


def ref_step(s: Ref, actor: str, kind: ActionKind) -> Ref | str:
    """Successor state, or the violated rule id as a string."""
    other = B if actor == A else A
    role, fam = kind.role, kind.family
    if role in (Role.WAIT, Role.MESSAGE):
        return s
    if role is Role.MOBILIZE:
        return dc_replace(s, **{"mob_a" if actor == A else "mob_b": True})
    if role is Role.WAR:
        if not s.mob(actor):
            return "R5"
        if s.cell in ("M", "T", "P"):
            return "R6"
        return dc_replace(s, cell="W", public=True)
    if role is Role.REQUEST:
        return dc_replace(s, pending=s.pending | {(actor, fam)})
    if role in (Role.ACCEPT, Role.REJECT):
        if (other, fam) not in s.pending:
            return "R4"
        rest = s.pending - {(other, fam)}
        if role is Role.REJECT:
            return dc_replace(s, pending=rest)
        if s.cell == FAM_CELL[fam]:
            return dc_replace(s, pending=rest)
        return dc_replace(s, cell=FAM_CELL[fam], public=False, pending=rest)
    if role is Role.PUBLISH:
        if s.cell != FAM_CELL[fam]:
            return "R7"
        return dc_replace(s, public=True)
    if role is Role.BETRAY:
        if s.cell != FAM_CELL[fam]:
            return "R7"
        return dc_replace(s, cell="D", public=True)
    raise AssertionError(kind)


def two_country_actions() -> list[Action]:
    out = []
    for actor, kind in product((A, B), ActionKind):
        other = B if actor == A else A
        it = properties_of(kind).input_type
        if it is InputType.NONE:
            out.append(Action(actor, kind, round=1))
        else:
            content = "text" if it is InputType.TARGETS_CONTENT else None
            out.append(Action(actor, kind, (other,), content, 1))
    return out


CODE = {
    RelationKind.DEFAULT: "D",
    RelationKind.WAR: "W",
    RelationKind.ALLIANCE: "M",
    RelationKind.TREATY: "T",
    RelationKind.PEACE: "P",
}


def abstract(state: WorldState) -> Ref:
    rel = state.board.cell(A, B)
    return Ref(
        mob_a=state.mobilized(A),
        mob_b=state.mobilized(B),
        cell=CODE[rel.kind],
        public=rel.visibility == "public",
        pending=frozenset((r.requester, r.family) for r in state.pending),
    )


def model_check(depth: int = 4) -> dict:
    """Breadth-first over every action sequence of length <= ``depth``.

    A rejected action leaves the state unchanged and the sequence continues.
    Sequences reaching the same projected state are merged, since transitions
    depend on nothing else. Path counts are carried along, so ``sequences``
    equals the number of raw sequences covered (sum of 38**k).
    """
    actions = two_country_actions()
    start = WorldState.initial((A, B)).with_round(1)
    frontier = {abstract(start): (start, 1)}
    stats = {"sequences": 1, "states": 1, "transitions_checked": 0, "mismatches": [], "war_from_pact": 0, "war_unmobilized": 0}
    for _ in range(depth):
        nxt: dict[Ref, tuple[WorldState, int]] = {}
        for ref, (state, paths) in frontier.items():
            assert abstract(state) == ref
            for action in actions:
                expected = ref_step(ref, action.actor, action.kind)
                try:
                    got_state = apply_event(state, action)
                    got: Ref | str = abstract(got_state)
                except RuleViolation as exc:
                    got_state, got = None, exc.rule
                stats["transitions_checked"] += 1
                stats["sequences"] += paths
                if got != expected:
                    stats["mismatches"].append((ref, action, expected, got))
                    continue
                if isinstance(got, str):
                    # a rejected action leaves the world unchanged; the sequence goes on
                    got, got_state = ref, state
                else:
                    if got.cell == "W" and ref.cell in ("M", "T", "P"):
                        stats["war_from_pact"] += 1
                    if got.cell == "W" and ref.cell != "W" and not ref.mob(action.actor):
                        stats["war_unmobilized"] += 1
                prev = nxt.get(got)
                nxt[got] = (got_state, paths + (prev[1] if prev else 0))
        frontier = nxt
        stats["states"] += len(frontier)
    return stats


# ---------------------------------------------------------------------------
# Partitions and metrics
# ---------------------------------------------------------------------------


def set_partitions(items: list) -> Iterator[list[list]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


def nmi_direct(p: list[list], q: list[list]) -> float:
    """2*I/(H(p)+H(q)) straight from the formula, with the pinned conventions."""
    n = sum(len(b) for b in p)
    hp = -sum(len(b) / n * math.log(len(b) / n) for b in p)
    hq = -sum(len(b) / n * math.log(len(b) / n) for b in q)
    mi = 0.0
    for bp in p:
        for bq in q:
            nij = len(set(bp) & set(bq))
            if nij:
                mi += nij / n * math.log(n * nij / (len(bp) * len(bq)))
    if hp + hq == 0:
        return 1.0
    if mi <= 0:
        return 0.0
    return 2 * mi / (hp + hq)


# ---------------------------------------------------------------------------
# Proposal fuzzing
# ---------------------------------------------------------------------------

GARBAGE = (
    "{actor} has chosen to Invade {target}",
    "{actor} has chosen to Declare War against Atlantis",
    "{actor} will think about it",
    "{actor} has chosen to Request Military Alliance",
    "{target} has chosen to General Mobilization",
    "{actor} has chosen to Declare War against {actor}",
)


def random_action(rng, actor: str, roster) -> Action:
    kind = rng.choice(list(ActionKind))
    it = properties_of(kind).input_type
    if it is InputType.NONE:
        return Action(actor, kind)
    target = rng.choice([c for c in roster if c != actor])
    return Action(actor, kind, (target,), "words" if it is InputType.TARGETS_CONTENT else None)


def random_world(rng, roster, steps: int = 30) -> WorldState:
    state = WorldState.initial(roster).with_round(1)
    for _ in range(steps):
        a = random_action(rng, rng.choice(roster), roster).with_round(1)
        try:
            state = apply_event(state, a)
        except RuleViolation:
            pass
    return state


def random_proposal(rng, actor: str, roster, size: int | None = None) -> list[str]:
    from warsim.protocol import format_action

    lines = []
    for _ in range(size if size is not None else rng.randint(0, 6)):
        if rng.random() < 0.2:
            target = rng.choice([c for c in roster if c != actor])
            lines.append(rng.choice(GARBAGE).format(actor=actor, target=target))
        else:
            lines.append(format_action(random_action(rng, actor, roster)))
    return lines


class FuzzPolicy:
    """Returns a fresh random proposal on every call and counts invocations."""

    def __init__(self, rng, roster):
        self.rng = rng
        self.roster = roster
        self.calls = 0

    def propose(self, context, feedback=None):
        self.calls += 1
        return random_proposal(self.rng, context.country, self.roster)
