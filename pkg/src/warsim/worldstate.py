"""Board, Sticks, per-agent knowledge and the board-to-text translation.

The canonical :class:`Board` is omniscient.  What each country may see is
derived from the event log: every event records who it was visible to and
the cell value it produced, so an agent's board is the replay of the events
it witnessed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .protocol import Action, ActionKind, Family, Role, properties_of, Publicity


class RelationKind(str, Enum):
    DEFAULT = "D"
    WAR = "W"
    ALLIANCE = "M"
    TREATY = "T"
    PEACE = "P"


FAMILY_RELATION = {
    Family.ALLIANCE: RelationKind.ALLIANCE,
    Family.TREATY: RelationKind.TREATY,
    Family.PEACE: RelationKind.PEACE,
}
PACT_KINDS = frozenset(FAMILY_RELATION.values())
SYMBOLS = {
    RelationKind.DEFAULT: ".",
    RelationKind.WAR: "x",
    RelationKind.ALLIANCE: "&",
    RelationKind.TREATY: "o",
    RelationKind.PEACE: "~",
}
CODES = {
    RelationKind.DEFAULT: ".",
    RelationKind.WAR: "W",
    RelationKind.ALLIANCE: "M",
    RelationKind.TREATY: "T",
    RelationKind.PEACE: "P",
}
KIND_FROM_CODE = {v: k for k, v in CODES.items()}

PUBLIC = "public"
PRIVATE = "private"


@dataclass(frozen=True)
class Relation:
    kind: RelationKind = RelationKind.DEFAULT
    visibility: str = PUBLIC
    established_round: int = 0
    established_by: str | None = None

    def __post_init__(self) -> None:
        if self.kind is RelationKind.DEFAULT and (
            self.visibility != PUBLIC or self.established_by is not None
        ):
            raise ValueError("Default relations are public and have no author")
        if self.kind is RelationKind.WAR and self.established_by is None:
            raise ValueError("War relations record their declarer")

    @property
    def declarer(self) -> str | None:
        return self.established_by if self.kind is RelationKind.WAR else None

    @property
    def is_default(self) -> bool:
        return self.kind is RelationKind.DEFAULT


DEFAULT = Relation()


def pair_key(a: str, b: str) -> frozenset[str]:
    return frozenset((a, b))


class Board:
    """Symmetric relation matrix over a fixed roster (immutable)."""

    __slots__ = ("roster", "_cells", "_index")

    def __init__(self, roster: Sequence[str], cells: Mapping[frozenset[str], Relation] | None = None):
        self.roster = tuple(roster)
        self._index = {n: i for i, n in enumerate(self.roster)}
        if len(self._index) != len(self.roster):
            raise ValueError("duplicate country in roster")
        self._cells: dict[frozenset[str], Relation] = {}
        for key, rel in (cells or {}).items():
            if len(key) != 2 or any(c not in self._index for c in key):
                raise ValueError(f"bad board cell {sorted(key)}")
            if not rel.is_default:
                self._cells[frozenset(key)] = rel

    def _check(self, name: str) -> None:
        if name not in self._index:
            raise KeyError(f"{name!r} is not on this board")

    def cell(self, a: str, b: str) -> Relation:
        self._check(a)
        self._check(b)
        if a == b:
            return DEFAULT
        return self._cells.get(pair_key(a, b), DEFAULT)

    def with_cell(self, a: str, b: str, relation: Relation) -> Board:
        if a == b:
            raise ValueError("the diagonal is always Default")
        self._check(a)
        self._check(b)
        cells = dict(self._cells)
        if relation.is_default:
            cells.pop(pair_key(a, b), None)
        else:
            cells[pair_key(a, b)] = relation
        return Board(self.roster, cells)

    def pairs(self) -> list[tuple[str, str]]:
        """Unordered pairs in row-major upper-triangle order."""
        n = len(self.roster)
        return [(self.roster[i], self.roster[j]) for i in range(n) for j in range(i + 1, n)]

    def relations(self) -> list[tuple[str, str, Relation]]:
        """Non-Default cells in canonical pair order."""
        out = []
        for a, b in self.pairs():
            rel = self._cells.get(pair_key(a, b))
            if rel is not None:
                out.append((a, b, rel))
        return out

    def edges(self, kind: RelationKind | None = None) -> set[frozenset[str]]:
        return {k for k, r in self._cells.items() if kind is None or r.kind is kind}

    def codes(self) -> list[list[str]]:
        return [[CODES[self.cell(a, b).kind] for b in self.roster] for a in self.roster]

    def signature(self) -> tuple:
        """Kinds plus war declarers; visibility and timestamps are ignored."""
        return tuple((a, b, r.kind.value, r.declarer) for a, b, r in self.relations())

    def to_json(self) -> dict:
        return {
            "codes": ["".join(row) for row in self.codes()],
            "declarers": {
                f"{a}|{b}": r.declarer for a, b, r in self.relations() if r.declarer is not None
            },
            "relations": [
                {
                    "pair": [a, b],
                    "kind": r.kind.value,
                    "visibility": r.visibility,
                    "round": r.established_round,
                    "by": r.established_by,
                }
                for a, b, r in self.relations()
            ],
        }

    @classmethod
    def from_json(cls, roster: Sequence[str], data: Mapping) -> Board:
        cells = {}
        for item in data.get("relations", []):
            a, b = item["pair"]
            cells[pair_key(a, b)] = Relation(
                RelationKind(item["kind"]), item["visibility"], item["round"], item["by"]
            )
        return cls(roster, cells)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Board):
            return NotImplemented
        return self.roster == other.roster and self._cells == other._cells

    def __hash__(self) -> int:
        return hash((self.roster, frozenset(self._cells.items())))

    def __repr__(self) -> str:
        return f"Board({len(self._cells)} relations over {len(self.roster)} countries)"


@dataclass(frozen=True)
class Stick:
    mobilization: bool = False
    # reserved slots; no semantics yet
    internal_stability: str | None = None
    war_readiness: str | None = None


@dataclass(frozen=True)
class PendingRequest:
    requester: str
    kind: ActionKind
    target: str
    content: str | None
    issued_round: int

    @property
    def family(self) -> Family:
        return self.kind.family


@dataclass(frozen=True)
class Event:
    seq: int
    round: int
    action: Action
    effect: str  # "applied" | "noop"
    visible_to: frozenset[str]
    relation_after: Relation | None = None

    @property
    def pair(self) -> tuple[str, str] | None:
        if self.relation_after is None:
            return None
        return (self.action.actor, self.action.targets[0])


# ---------------------------------------------------------------------------
# Rule violations
# ---------------------------------------------------------------------------


class RuleViolation(Exception):
    rule = "R?"

    def __init__(self, action: Action, reason: str):
        super().__init__(reason)
        self.action = action
        self.reason = reason


class DeclareWarUnmobilized(RuleViolation):
    rule = "R5"


class DeclareWarAgainstRelated(RuleViolation):
    rule = "R6"


class AcceptWithoutRequest(RuleViolation):
    rule = "R4"


class BetrayNonexistentRelation(RuleViolation):
    rule = "R7"


class PublishNonexistentRelation(RuleViolation):
    rule = "R7"


# ---------------------------------------------------------------------------
# World state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorldState:
    roster: tuple[str, ...]
    board: Board
    sticks: Mapping[str, Stick]
    pending: tuple[PendingRequest, ...] = ()
    events: tuple[Event, ...] = ()
    knowledge: Mapping[str, frozenset[int]] = field(default_factory=dict)
    round: int = 0
    mobilization_public: bool = True

    @classmethod
    def initial(cls, roster: Sequence[str], mobilization_public: bool = True) -> WorldState:
        roster = tuple(roster)
        return cls(
            roster=roster,
            board=Board(roster),
            sticks={c: Stick() for c in roster},
            knowledge={c: frozenset() for c in roster},
            mobilization_public=mobilization_public,
        )

    def mobilized(self, country: str) -> bool:
        return self.sticks[country].mobilization

    def mobilized_set(self) -> frozenset[str]:
        return frozenset(c for c in self.roster if self.sticks[c].mobilization)

    def find_pending(self, requester: str, target: str, family: Family) -> PendingRequest | None:
        for req in self.pending:
            if req.requester == requester and req.target == target and req.kind.family is family:
                return req
        return None

    def pending_for(self, country: str) -> tuple[PendingRequest, ...]:
        return tuple(r for r in self.pending if r.target == country)

    def with_round(self, round: int) -> WorldState:
        return replace(self, round=round)

    def lapse_requests(self, current_round: int) -> WorldState:
        """Drop requests whose answering round is over (issued before ``current_round``)."""
        kept = tuple(r for r in self.pending if r.issued_round >= current_round)
        return replace(self, pending=kept) if len(kept) != len(self.pending) else self

    def events_in_round(self, round: int) -> list[Event]:
        return [e for e in self.events if e.round == round]


def _visible_to(state: WorldState, action: Action) -> frozenset[str]:
    kind = action.kind
    if kind is ActionKind.MOBILIZE:
        return frozenset(state.roster) if state.mobilization_public else frozenset({action.actor})
    if properties_of(kind).publicity is Publicity.PUBLIC:
        return frozenset(state.roster)
    return frozenset((action.actor, *action.targets))


def _record(
    state: WorldState,
    action: Action,
    effect: str,
    *,
    board: Board | None = None,
    sticks: Mapping[str, Stick] | None = None,
    pending: tuple[PendingRequest, ...] | None = None,
    relation_after: Relation | None = None,
) -> WorldState:
    visible = _visible_to(state, action)
    seq = len(state.events)
    event = Event(seq, action.round or state.round, action, effect, visible, relation_after)
    knowledge = {
        c: (known | {seq}) if c in visible else known for c, known in state.knowledge.items()
    }
    return replace(
        state,
        board=board if board is not None else state.board,
        sticks=sticks if sticks is not None else state.sticks,
        pending=pending if pending is not None else state.pending,
        events=state.events + (event,),
        knowledge=knowledge,
    )


def apply_event(state: WorldState, action: Action) -> WorldState:
    """Apply one validated action, returning the successor state.

    Raises a :class:`RuleViolation` subclass when the action is not legal in
    ``state``.  Repeats (re-publishing, re-mobilizing, re-declaring) are
    recorded as no-op events rather than errors.
    """
    if len(action.targets) > 1:
        for single in action.expand():
            state = apply_event(state, single)
        return state
    for name in (action.actor, *action.targets):
        if name not in state.sticks:
            raise KeyError(f"{name!r} is not in the roster")

    rnd = action.round or state.round
    actor, kind, role = action.actor, action.kind, action.kind.role
    target = action.target
    board = state.board

    if role is Role.WAIT or role is Role.MESSAGE:
        return _record(state, action, "applied")

    if role is Role.MOBILIZE:
        if state.mobilized(actor):
            return _record(state, action, "noop")
        sticks = dict(state.sticks)
        sticks[actor] = replace(sticks[actor], mobilization=True)
        return _record(state, action, "applied", sticks=sticks)

    current = board.cell(actor, target)

    if role is Role.WAR:
        if not state.mobilized(actor):
            raise DeclareWarUnmobilized(action, f"{actor} must mobilize before declaring war")
        if current.kind in PACT_KINDS:
            raise DeclareWarAgainstRelated(
                action,
                f"{actor} holds a {current.kind.name.lower()} relation with {target}; betray it first",
            )
        if current.kind is RelationKind.WAR:
            return _record(state, action, "noop", relation_after=current)
        rel = Relation(RelationKind.WAR, PUBLIC, rnd, actor)
        return _record(state, action, "applied", board=board.with_cell(actor, target, rel), relation_after=rel)

    family = kind.family
    fam_kind = FAMILY_RELATION[family]

    if role is Role.REQUEST:
        pending = tuple(
            r
            for r in state.pending
            if not (r.requester == actor and r.target == target and r.kind is kind)
        )
        req = PendingRequest(actor, kind, target, action.content, rnd)
        return _record(state, action, "applied", pending=pending + (req,))

    if role in (Role.ACCEPT, Role.REJECT):
        req = state.find_pending(target, actor, family)
        if req is None:
            raise AcceptWithoutRequest(
                action, f"{target} has no pending {family.name.lower()} request to {actor}"
            )
        pending = tuple(r for r in state.pending if r is not req)
        if role is Role.REJECT:
            return _record(state, action, "applied", pending=pending)
        if current.kind is fam_kind:
            return _record(state, action, "noop", pending=pending, relation_after=current)
        rel = Relation(fam_kind, PRIVATE, rnd, actor)
        return _record(
            state,
            action,
            "applied",
            board=board.with_cell(actor, target, rel),
            pending=pending,
            relation_after=rel,
        )

    if role is Role.PUBLISH:
        if current.kind is not fam_kind:
            raise PublishNonexistentRelation(
                action, f"no {fam_kind.name.lower()} exists between {actor} and {target}"
            )
        if current.visibility == PUBLIC:
            return _record(state, action, "noop", relation_after=current)
        rel = replace(current, visibility=PUBLIC)
        return _record(state, action, "applied", board=board.with_cell(actor, target, rel), relation_after=rel)

    if role is Role.BETRAY:
        if current.kind is not fam_kind:
            raise BetrayNonexistentRelation(
                action, f"no {fam_kind.name.lower()} exists between {actor} and {target}"
            )
        return _record(
            state, action, "applied", board=board.with_cell(actor, target, DEFAULT), relation_after=DEFAULT
        )

    raise AssertionError(f"unhandled action kind {kind}")  # pragma: no cover


def apply_all(state: WorldState, actions: Iterable[Action]) -> WorldState:
    for action in actions:
        state = apply_event(state, action)
    return state


# ---------------------------------------------------------------------------
# Per-agent knowledge
# ---------------------------------------------------------------------------


def _check_country(state: WorldState, country: str) -> None:
    if country not in state.knowledge:
        raise KeyError(f"{country!r} is not in the roster")


def known_events(state: WorldState, country: str) -> list[Event]:
    _check_country(state, country)
    known = state.knowledge[country]
    return [e for e in state.events if e.seq in known]


def agent_view(state: WorldState, country: str) -> Board:
    """The board as ``country`` knows it."""
    board = Board(state.roster)
    for event in known_events(state, country):
        if event.relation_after is not None:
            a, b = event.pair
            board = board.with_cell(a, b, event.relation_after)
    return board


def known_mobilized(state: WorldState, country: str) -> frozenset[str]:
    out = {country} if state.mobilized(country) else set()
    for event in known_events(state, country):
        if event.action.kind is ActionKind.MOBILIZE:
            out.add(event.action.actor)
    return frozenset(out)


def state_from_view(state: WorldState, country: str) -> WorldState:
    """A world state holding only what ``country`` knows (used for validation)."""
    mobilized = known_mobilized(state, country)
    known = state.knowledge[country]
    return replace(
        state,
        board=agent_view(state, country),
        sticks={c: Stick(mobilization=c in mobilized) for c in state.roster},
        pending=tuple(r for r in state.pending if country in (r.requester, r.target)),
        events=tuple(e for e in state.events if e.seq in known),
        knowledge={c: frozenset() for c in state.roster},
    )


def view_digest(board: Board) -> str:
    blob = json.dumps(board.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Text renderings
# ---------------------------------------------------------------------------


def translate_board(
    board: Board,
    roster: Sequence[str] | None = None,
    display: Mapping[str, str] | None = None,
) -> str:
    """Turn a board into one sentence per non-Default pair.

    ``display`` maps a country to the form used in object position, e.g.
    ``"the United States"``.
    """
    if roster is not None and tuple(roster) != board.roster:
        board = Board(roster, {pair_key(a, b): r for a, b, r in board.relations()})
    obj = (lambda c: display.get(c, c)) if display else (lambda c: c)
    sentences = []
    for a, b, rel in board.relations():
        if rel.kind is RelationKind.ALLIANCE:
            sentences.append(f"{a} and {b} have formed a military alliance.")
            continue
        first, second = a, b
        if rel.established_by == b:
            first, second = b, a
        if rel.kind is RelationKind.WAR:
            sentences.append(f"{first} has declared war against {obj(second)}.")
        elif rel.kind is RelationKind.TREATY:
            sentences.append(f"{first} has signed a non-intervention treaty with {obj(second)}.")
        elif rel.kind is RelationKind.PEACE:
            sentences.append(f"{first} has signed a peace agreement with {obj(second)}.")
    return " ".join(sentences)


def render_board(board: Board, initials: Mapping[str, str] | None = None) -> str:
    """Character grid: x war, & alliance, o treaty, ~ peace, . default."""
    labels = [(initials or {}).get(c, c[0]) for c in board.roster]
    width = max(len(lbl) for lbl in labels) if labels else 1
    head = " " * width + " " + " ".join(lbl.rjust(width) for lbl in labels)
    rows = [head.rstrip()]
    for a, lbl in zip(board.roster, labels):
        cells = " ".join(SYMBOLS[board.cell(a, b).kind].rjust(width) for b in board.roster)
        rows.append(f"{lbl.rjust(width)} {cells}")
    return "\n".join(rows) + "\n"


def relation_graph_connected(state_or_board: WorldState | Board) -> bool:
    """True iff non-Default relations connect every country."""
    board = state_or_board.board if isinstance(state_or_board, WorldState) else state_or_board
    parent = {c: c for c in board.roster}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for edge in board.edges():
        a, b = tuple(edge)
        parent[find(a)] = find(b)
    return len({find(c) for c in board.roster}) <= 1
