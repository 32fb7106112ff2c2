"""Action space, per-kind properties and the textual action grammar.

Every action travels between agents, the secretary and the run log as one
line of the form ``<Actor> has chosen to <Verb Phrase>``.  The grammar is
closed: :func:`parse_action` rejects anything outside :class:`ActionKind`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence


class Family(str, Enum):
    """Relation family an action operates on."""

    ALLIANCE = "M"
    TREATY = "T"
    PEACE = "P"


FAMILY_NOUN = {
    Family.ALLIANCE: "Military Alliance",
    Family.TREATY: "Non-Intervention Treaty",
    Family.PEACE: "Peace Agreement",
}


class Role(str, Enum):
    WAIT = "wait"
    MOBILIZE = "mobilize"
    WAR = "war"
    REQUEST = "request"
    ACCEPT = "accept"
    REJECT = "reject"
    PUBLISH = "publish"
    BETRAY = "betray"
    MESSAGE = "message"


class ActionKind(str, Enum):
    WAIT = "WaitWithoutAction"
    MOBILIZE = "GeneralMobilization"
    DECLARE_WAR = "DeclareWar"
    REQUEST_ALLIANCE = "RequestMilitaryAlliance"
    ACCEPT_ALLIANCE = "AcceptMilitaryAlliance"
    REJECT_ALLIANCE = "RejectMilitaryAlliance"
    PUBLISH_ALLIANCE = "PublishMilitaryAlliance"
    BETRAY_ALLIANCE = "BetrayMilitaryAlliance"
    REQUEST_TREATY = "RequestNonInterventionTreaty"
    ACCEPT_TREATY = "AcceptNonInterventionTreaty"
    REJECT_TREATY = "RejectNonInterventionTreaty"
    PUBLISH_TREATY = "PublishNonInterventionTreaty"
    BETRAY_TREATY = "BetrayNonInterventionTreaty"
    PRESENT_PEACE = "PresentPeaceAgreement"
    ACCEPT_PEACE = "AcceptPeaceAgreement"
    REJECT_PEACE = "RejectPeaceAgreement"
    PUBLISH_PEACE = "PublishPeaceAgreement"
    BETRAY_PEACE = "BetrayPeaceAgreement"
    SEND_MESSAGE = "SendMessage"

    @property
    def role(self) -> Role:
        return _KIND_INFO[self][0]

    @property
    def family(self) -> Family | None:
        return _KIND_INFO[self][1]

    @property
    def verb(self) -> str:
        return _VERBS[self]

    @property
    def is_response(self) -> bool:
        return self.role in (Role.ACCEPT, Role.REJECT)

    @property
    def properties(self) -> ActionProperties:
        return properties_of(self)


_KIND_INFO: dict[ActionKind, tuple[Role, Family | None]] = {
    ActionKind.WAIT: (Role.WAIT, None),
    ActionKind.MOBILIZE: (Role.MOBILIZE, None),
    ActionKind.DECLARE_WAR: (Role.WAR, None),
    ActionKind.SEND_MESSAGE: (Role.MESSAGE, None),
    ActionKind.PRESENT_PEACE: (Role.REQUEST, Family.PEACE),
}
for _fam, _prefix in ((Family.ALLIANCE, "ALLIANCE"), (Family.TREATY, "TREATY"), (Family.PEACE, "PEACE")):
    for _role in (Role.REQUEST, Role.ACCEPT, Role.REJECT, Role.PUBLISH, Role.BETRAY):
        _name = f"{_role.name}_{_prefix}"
        if _name in ActionKind.__members__:
            _KIND_INFO[ActionKind[_name]] = (_role, _fam)

_VERBS: dict[ActionKind, str] = {
    ActionKind.WAIT: "Wait without Action",
    ActionKind.MOBILIZE: "General Mobilization",
    ActionKind.DECLARE_WAR: "Declare War",
    ActionKind.SEND_MESSAGE: "Send Message",
    ActionKind.PRESENT_PEACE: "Present Peace Agreement",
}
for _kind, (_role, _fam) in _KIND_INFO.items():
    if _kind not in _VERBS:
        _VERBS[_kind] = f"{_role.name.capitalize()} {FAMILY_NOUN[_fam]}"


def kind_for(role: Role, family: Family) -> ActionKind:
    for kind, (r, f) in _KIND_INFO.items():
        if r is role and f is family:
            return kind
    raise KeyError((role, family))


# ---------------------------------------------------------------------------
# Properties
# ---------------------------------------------------------------------------


class Publicity(str, Enum):
    PUBLIC = "public"
    PRIVATE = "private"


class InputType(str, Enum):
    NONE = "none"
    TARGETS = "targets"
    TARGETS_CONTENT = "targets+content"


@dataclass(frozen=True)
class ActionProperties:
    publicity: Publicity
    input_type: InputType
    require_response: bool


_PUBLIC_ROLES = {Role.MOBILIZE, Role.WAR, Role.PUBLISH, Role.BETRAY}


def properties_of(kind: ActionKind) -> ActionProperties:
    role = kind.role
    publicity = Publicity.PUBLIC if role in _PUBLIC_ROLES else Publicity.PRIVATE
    if role in (Role.WAIT, Role.MOBILIZE):
        input_type = InputType.NONE
    elif kind in (ActionKind.SEND_MESSAGE, ActionKind.PRESENT_PEACE):
        input_type = InputType.TARGETS_CONTENT
    else:
        input_type = InputType.TARGETS
    require_response = role in (Role.REQUEST, Role.MESSAGE)
    return ActionProperties(publicity, input_type, require_response)


class ContractError(ValueError):
    pass


def response_kinds_for(request_kind: ActionKind) -> frozenset[ActionKind]:
    """Kinds a recipient may answer ``request_kind`` with."""
    if not properties_of(request_kind).require_response:
        raise ContractError(f"{request_kind.value} does not require a response")
    if request_kind is ActionKind.SEND_MESSAGE:
        return frozenset({ActionKind.SEND_MESSAGE})
    fam = request_kind.family
    return frozenset({kind_for(Role.ACCEPT, fam), kind_for(Role.REJECT, fam)})


# ---------------------------------------------------------------------------
# Action value
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    actor: str
    kind: ActionKind
    targets: tuple[str, ...] = ()
    content: str | None = None
    round: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "targets", tuple(self.targets))
        input_type = properties_of(self.kind).input_type
        if input_type is InputType.NONE and self.targets:
            raise ValueError(f"{self.kind.value} takes no targets")
        if input_type is not InputType.NONE and not self.targets:
            raise ValueError(f"{self.kind.value} needs at least one target")
        if self.actor in self.targets:
            raise ValueError(f"{self.actor} cannot target itself")
        if (input_type is InputType.TARGETS_CONTENT) != (self.content is not None):
            raise ValueError(f"content mismatch for {self.kind.value}")

    @property
    def target(self) -> str | None:
        return self.targets[0] if self.targets else None

    def expand(self) -> list[Action]:
        """One action per target."""
        if len(self.targets) <= 1:
            return [self]
        return [
            Action(self.actor, self.kind, (t,), self.content, self.round) for t in self.targets
        ]

    def with_round(self, round: int) -> Action:
        return Action(self.actor, self.kind, self.targets, self.content, round)


WAIT_LINE_TEMPLATE = "{actor} has chosen to Wait without Action"


def wait(actor: str, round: int = 0) -> Action:
    return Action(actor, ActionKind.WAIT, round=round)


def _join(names: Sequence[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def format_action(action: Action) -> str:
    head = f"{action.actor} has chosen to {action.kind.verb}"
    role = action.kind.role
    targets = _join(action.targets) if action.targets else ""
    if role in (Role.WAIT, Role.MOBILIZE):
        return head
    if role in (Role.REQUEST, Role.MESSAGE):
        line = f"{head} to {targets}"
    elif role in (Role.ACCEPT, Role.REJECT):
        line = f"{head} from {targets}"
    elif role in (Role.WAR, Role.BETRAY):
        line = f"{head} against {targets}"
    else:  # publish
        line = f"{head} on {action.actor} and {targets}"
    if action.content is not None:
        line += f" with the following content: {action.content}"
    return line


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class ParseError(ValueError):
    """Base for grammar errors; ``span`` is the offending piece of text."""

    rule = "R1"

    def __init__(self, message: str, span: str):
        super().__init__(f"{message}: {span!r}")
        self.span = span


class UnknownVerb(ParseError):
    rule = "R2"


class UnknownCountry(ParseError):
    rule = "R3"


class MalformedObject(ParseError):
    rule = "R1"


class SelfTarget(ParseError):
    rule = "R3"


_CHOSEN = re.compile(r"^(?P<actor>.+?)\s+has\s+chosen\s+to\s+(?P<rest>.*)$", re.S)
_ROUTING = re.compile(r"^\s*To\s+[^:\n]{1,60}:\s*(?=\S)")
_CONTENT = re.compile(r"\s+with\s+the\s+(?:the\s+)?following\s+content\s*:\s*", re.S)
_ARTICLE = re.compile(r"^the\s+", re.I)
_SPLIT_TARGETS = re.compile(r"\s*,\s*(?:and\s+)?|\s+and\s+")

# longest first so "Request Military Alliance" never loses to a shorter prefix
_VERB_ORDER = sorted(ActionKind, key=lambda k: -len(k.verb))
_PREPOSITION = {
    Role.REQUEST: "to",
    Role.MESSAGE: "to",
    Role.ACCEPT: "from",
    Role.REJECT: "from",
    Role.WAR: "against",
    Role.BETRAY: "against",
    Role.PUBLISH: "on",
}


def _norm_ws(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


class CountryIndex:
    """Case-insensitive, article-tolerant lookup of roster names and aliases."""

    def __init__(self, roster: Iterable[str], aliases: Mapping[str, Iterable[str]] | None = None):
        self.roster = tuple(roster)
        self._lookup: dict[str, str] = {}
        for name in self.roster:
            self._lookup[self._key(name)] = name
        for name, alts in (aliases or {}).items():
            for alt in alts:
                self._lookup.setdefault(self._key(alt), name)

    @staticmethod
    def _key(text: str) -> str:
        return _ARTICLE.sub("", _norm_ws(text)).casefold()

    def resolve(self, text: str) -> str:
        name = self._lookup.get(self._key(text.strip().rstrip(".")))
        if name is None:
            raise UnknownCountry("unknown country", text.strip())
        return name

    def __contains__(self, text: str) -> bool:
        return self._key(text) in self._lookup


def _as_index(roster: Sequence[str] | CountryIndex) -> CountryIndex:
    return roster if isinstance(roster, CountryIndex) else CountryIndex(roster)


def strip_routing(line: str) -> str:
    """Drop a leading ``To X:`` routing prefix as seen in transcripts."""
    return _ROUTING.sub("", line, count=1)


def parse_action(line: str, roster: Sequence[str] | CountryIndex, round: int = 0) -> Action:
    index = _as_index(roster)
    text = strip_routing(line.strip())
    m = _CHOSEN.match(text)
    if not m:
        raise MalformedObject("expected '<Country> has chosen to <Action>'", line.strip())
    rest = m.group("rest").strip()

    content: str | None = None
    cm = _CONTENT.search(rest)
    if cm:
        content = rest[cm.end():].strip()
        rest = rest[: cm.start()]
    rest = _norm_ws(rest).rstrip(".").rstrip()

    kind = None
    for candidate in _VERB_ORDER:
        verb = candidate.verb
        if rest == verb or rest.startswith(verb + " "):
            kind = candidate
            break
    if kind is None:
        raise UnknownVerb("unknown action", rest.split(" to ")[0].split(" against ")[0])
    # verb is checked before the actor so "X has chosen to Invade Y" reports the verb
    actor = index.resolve(m.group("actor"))
    obj = rest[len(kind.verb):].strip()
    props = properties_of(kind)

    if props.input_type is InputType.NONE:
        if obj or content is not None:
            raise MalformedObject(f"{kind.verb} takes no object", obj or content or "")
        return Action(actor, kind, round=round)

    prep = _PREPOSITION[kind.role]
    if not obj.startswith(prep + " "):
        raise MalformedObject(f"{kind.verb} expects '{prep} <country>'", obj or rest)
    obj = obj[len(prep) + 1:].strip()
    if props.input_type is InputType.TARGETS_CONTENT:
        if not content:
            raise MalformedObject(f"{kind.verb} needs 'with the following content: ...'", rest)
    elif content is not None:
        raise MalformedObject(f"{kind.verb} takes no content", content)

    names = [n for n in _SPLIT_TARGETS.split(obj) if n]
    if not names:
        raise MalformedObject("missing target", obj)
    targets = [index.resolve(n) for n in names]

    if kind.role is Role.PUBLISH:
        if len(targets) != 2 or targets[0] == targets[1]:
            raise MalformedObject("publish names the actor and one partner", obj)
        if actor not in targets:
            raise SelfTarget("publish must name the actor as one party", obj)
        targets = [t for t in targets if t != actor]
    if actor in targets:
        raise SelfTarget(f"{actor} cannot target itself", obj)
    if len(set(targets)) != len(targets):
        raise MalformedObject("repeated target", obj)
    return Action(actor, kind, tuple(targets), content, round)


def parse_actions(line: str, roster: Sequence[str] | CountryIndex, round: int = 0) -> list[Action]:
    """Parse one line and normalize it into one action per target."""
    return parse_action(line, roster, round).expand()


def split_action_lines(text: str, roster: Sequence[str] | CountryIndex) -> list[str]:
    """Pull grammar lines out of free model output.

    Handles bullets/numbering and two actions glued onto one physical line
    (``... To Ottoman Empire: Russia has chosen to ...``).
    """
    index = _as_index(roster)
    names = sorted(
        {n for n in index.roster} | set(),
        key=len,
        reverse=True,
    )
    glue = None
    if names:
        alt = "|".join(re.escape(n) for n in names)
        glue = re.compile(
            rf"\s*(?=\bTo\s+(?:the\s+)?(?:{alt}|[A-Z][\w-]*)\s*:\s*(?:the\s+)?\S[^:]*?\s+has\s+chosen\s+to\b)"
        )
    out: list[str] = []
    for raw in text.splitlines():
        line = raw.strip().strip("`*")
        line = re.sub(r"^(?:[-*•]\s+|\d+[.)]\s+)", "", line)
        if "has chosen to" not in line:
            continue
        pieces = [p.strip() for p in glue.split(line)] if glue else [line]
        out.extend(p for p in pieces if "has chosen to" in p)
    return out
