"""Scenario definitions: rosters, country profiles, triggers, ground truth.

Scenarios live in JSON files (see ``README.md`` for the schema).  Profile
entries are templates whose ``{key}`` placeholders are filled from tagged
numeric facts, so counterfactual overlays can scale a value and re-render
the sentence instead of rewriting free text.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

logger = logging.getLogger(__name__)

DIMENSIONS = (
    "leadership",
    "military_capability",
    "resources",
    "historical_background",
    "key_policy",
    "public_morale",
)
DIMENSION_TITLES = {
    "leadership": "Leadership",
    "military_capability": "Military Capability",
    "resources": "Resources",
    "historical_background": "History Background",
    "key_policy": "Key Policy",
    "public_morale": "Public Morale",
}
ATTITUDES = ("default", "aggressive", "conservative")
STANDARD_MULTIPLIERS = (3.0, 1.0 / 3.0)
NULL_TRIGGER_TEXT = "Today is sunny, and nothing special happened."


class ScenarioError(ValueError):
    """Raised for schema violations in scenario or overlay data."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _fmt_authored(value: float) -> str:
    if isinstance(value, int) or float(value).is_integer():
        return str(int(value))
    return format(value, "g")


def _fmt_patched(value: float) -> str:
    text = f"{round(value, 1):.1f}"
    return text[:-2] if text.endswith(".0") else text


@dataclass(frozen=True)
class NumericFact:
    key: str
    value: float
    unit: str = ""
    patched: bool = False

    def render(self) -> str:
        return _fmt_patched(self.value) if self.patched else _fmt_authored(self.value)


@dataclass(frozen=True)
class ProfileEntry:
    """One numbered line of a profile dimension."""

    template: str
    facts: tuple[NumericFact, ...] = ()

    def render(self) -> str:
        if not self.facts:
            return self.template
        return self.template.format(**{f.key: f.render() for f in self.facts})

    def fact(self, key: str) -> NumericFact:
        for f in self.facts:
            if f.key == key:
                return f
        raise KeyError(key)


@dataclass(frozen=True)
class CountryProfile:
    name: str
    leadership: tuple[ProfileEntry, ...]
    military_capability: tuple[ProfileEntry, ...]
    resources: tuple[ProfileEntry, ...]
    historical_background: tuple[ProfileEntry, ...]
    key_policy: tuple[ProfileEntry, ...]
    public_morale: tuple[ProfileEntry, ...]
    initial: str = ""
    article: bool = False
    aliases: tuple[str, ...] = ()

    def dimension(self, name: str) -> tuple[ProfileEntry, ...]:
        if name not in DIMENSIONS:
            raise ScenarioError(f"unknown profile dimension {name!r}")
        return getattr(self, name)

    @property
    def display(self) -> str:
        """Name as it reads in object position (``the United States``)."""
        return f"the {self.name}" if self.article else self.name


@dataclass(frozen=True)
class TriggerEvent:
    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ScenarioError("trigger text must be non-empty")


NULL_TRIGGER = TriggerEvent("null", NULL_TRIGGER_TEXT)


@dataclass(frozen=True)
class AnonymizationMap:
    country_renames: tuple[tuple[str, str], ...] = ()
    location_renames: tuple[tuple[str, str], ...] = ()
    event_rewrites: tuple[tuple[str, str], ...] = ()

    @property
    def is_empty(self) -> bool:
        return not (self.country_renames or self.location_renames or self.event_rewrites)

    def validate(self) -> None:
        for label, pairs in (
            ("country", self.country_renames),
            ("location", self.location_renames),
            ("event", self.event_rewrites),
        ):
            keys = [k for k, _ in pairs]
            if len(set(keys)) != len(keys):
                raise ScenarioError(f"duplicate {label} rename source")
            values = [v for _, v in pairs]
            if len(set(values)) != len(values):
                raise ScenarioError(f"{label} renaming is not injective")
        keys = [k for k, _ in self._ordered()]
        for _, value in self._ordered():
            for key in keys:
                if _word_pattern(key).search(value):
                    raise ScenarioError(f"alias collision: {value!r} contains source name {key!r}")

    def _ordered(self) -> list[tuple[str, str]]:
        # events before locations before countries, longest source first within each group
        out: list[tuple[str, str]] = []
        for pairs in (self.event_rewrites, self.location_renames, self.country_renames):
            out.extend(sorted(pairs, key=lambda p: -len(p[0])))
        return out

    def apply(self, text: str) -> str:
        for src, dst in self._ordered():
            text = _word_pattern(src).sub(lambda _m, d=dst: d, text)
        return text


def _word_pattern(phrase: str) -> re.Pattern[str]:
    return re.compile(rf"(?<![\w-]){re.escape(phrase)}(?![\w-])")


Pair = frozenset


def _pair(a: str, b: str) -> frozenset[str]:
    if a == b:
        raise ScenarioError(f"pair must name two distinct countries, got {a!r} twice")
    return frozenset((a, b))


@dataclass(frozen=True)
class GroundTruth:
    alliances: frozenset[frozenset[str]] = frozenset()
    war_declarations: frozenset[frozenset[str]] = frozenset()
    mobilized: frozenset[str] = frozenset()
    snapshot_round: int = 6

    @property
    def evaluates_wars(self) -> bool:
        return bool(self.war_declarations)

    def names(self) -> set[str]:
        out = set(self.mobilized)
        for p in self.alliances | self.war_declarations:
            out |= p
        return out


@dataclass(frozen=True)
class ProfilePatch:
    country: str
    dimension: str
    entries: tuple[int, ...] | None = None  # 1-based; None selects all
    facts: tuple[str, ...] | None = None
    replacement: str | None = None
    multiplier: float | None = None
    remove: bool = False


@dataclass(frozen=True)
class Overlay:
    id: str = "overlay"
    profile_patches: tuple[ProfilePatch, ...] = ()
    trigger_override: TriggerEvent | None = None
    attitude: str = "default"
    allow_custom_multipliers: bool = False

    def __post_init__(self) -> None:
        if self.attitude not in ATTITUDES:
            raise ScenarioError(f"attitude must be one of {ATTITUDES}, got {self.attitude!r}")
        for patch in self.profile_patches:
            ops = sum(
                (patch.replacement is not None, patch.multiplier is not None, patch.remove)
            )
            if ops != 1:
                raise ScenarioError("each patch needs exactly one of replace, multiply, remove")
            if patch.multiplier is not None:
                if patch.multiplier <= 0:
                    raise ScenarioError("multiplier must be positive")
                if not self.allow_custom_multipliers and not any(
                    abs(patch.multiplier - m) < 1e-12 for m in STANDARD_MULTIPLIERS
                ):
                    raise ScenarioError(
                        f"multiplier {patch.multiplier} not in {{3, 1/3}}; set allow_custom_multipliers"
                    )

    @property
    def is_empty(self) -> bool:
        return not self.profile_patches and self.trigger_override is None and self.attitude == "default"

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "profile_patches": [
                {k: v for k, v in vars(p).items() if v is not None and v is not False}
                for p in self.profile_patches
            ],
            "trigger_override": None
            if self.trigger_override is None
            else {"id": self.trigger_override.id, "text": self.trigger_override.text},
            "attitude": self.attitude,
            "allow_custom_multipliers": self.allow_custom_multipliers,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


EMPTY_OVERLAY = Overlay(id="none")


@dataclass(frozen=True)
class Scenario:
    id: str
    roster: tuple[CountryProfile, ...]
    trigger: TriggerEvent
    anonymization: AnonymizationMap
    ground_truth: GroundTruth
    deanonymized: bool = True
    title: str = ""
    attitude: str = "default"

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.roster)

    def profile(self, name: str) -> CountryProfile:
        for p in self.roster:
            if p.name == name:
                return p
        raise ScenarioError(f"{name!r} is not in the {self.id} roster")

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def aliases(self) -> dict[str, tuple[str, ...]]:
        return {p.name: p.aliases for p in self.roster if p.aliases}

    @property
    def initials(self) -> dict[str, str]:
        return {p.name: p.initial or p.name[0] for p in self.roster}

    @property
    def display_names(self) -> dict[str, str]:
        return {p.name: p.display for p in self.roster}


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def parse_multiplier(raw: Any) -> float:
    if isinstance(raw, str):
        try:
            return float(Fraction(raw.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise ScenarioError(f"bad multiplier {raw!r}") from exc
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    raise ScenarioError(f"bad multiplier {raw!r}")


def _entry_from_json(raw: Any, where: str) -> ProfileEntry:
    if isinstance(raw, str):
        if not raw.strip():
            raise ScenarioError(f"{where}: empty entry")
        return ProfileEntry(raw)
    if not isinstance(raw, Mapping) or "text" not in raw:
        raise ScenarioError(f"{where}: entry must be a string or an object with 'text'")
    facts = []
    for f in raw.get("facts", []):
        try:
            key, value = f["key"], f["value"]
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"{where}: fact needs 'key' and 'value'") from exc
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
            raise ScenarioError(f"{where}: fact {key!r} must be strictly positive")
        facts.append(NumericFact(key, value, f.get("unit", "")))
    entry = ProfileEntry(raw["text"], tuple(facts))
    try:
        entry.render()
    except (KeyError, IndexError) as exc:
        raise ScenarioError(f"{where}: template references unknown fact {exc}") from exc
    return entry


def _profile_from_json(raw: Mapping[str, Any]) -> CountryProfile:
    name = raw.get("name")
    if not isinstance(name, str) or not name.strip():
        raise ScenarioError("country without a name")
    prof = raw.get("profile", {})
    dims: dict[str, tuple[ProfileEntry, ...]] = {}
    for dim in DIMENSIONS:
        entries = prof.get(dim)
        if not entries:
            raise ScenarioError(f"{name}: dimension {dim!r} missing or empty")
        if isinstance(entries, (str, Mapping)):
            entries = [entries]
        dims[dim] = tuple(_entry_from_json(e, f"{name}.{dim}") for e in entries)
    return CountryProfile(
        name=name,
        initial=raw.get("initial", name[0]),
        article=bool(raw.get("article", False)),
        aliases=tuple(raw.get("aliases", ())),
        **dims,
    )


def _pairs(raw: Iterable[Any], where: str) -> frozenset[frozenset[str]]:
    out = set()
    for item in raw:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ScenarioError(f"{where}: expected a two-country pair, got {item!r}")
        out.add(_pair(item[0], item[1]))
    return frozenset(out)


def _ground_truth_from_json(raw: Mapping[str, Any]) -> GroundTruth:
    alliances = set(_pairs(raw.get("alliances", []), "alliances"))
    for group in raw.get("alliance_groups", []):
        members = list(group)
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                alliances.add(_pair(a, b))
    snapshot = raw.get("snapshot_round", 6)
    if not isinstance(snapshot, int) or snapshot < 1:
        raise ScenarioError("snapshot_round must be a positive integer")
    return GroundTruth(
        alliances=frozenset(alliances),
        war_declarations=_pairs(raw.get("war_declarations", []), "war_declarations"),
        mobilized=frozenset(raw.get("mobilized", [])),
        snapshot_round=snapshot,
    )


def _anonymization_from_json(raw: Mapping[str, Any]) -> AnonymizationMap:
    def pairs(key: str) -> tuple[tuple[str, str], ...]:
        return tuple((str(a), str(b)) for a, b in raw.get(key, []))

    amap = AnonymizationMap(pairs("countries"), pairs("locations"), pairs("events"))
    amap.validate()
    return amap


def scenario_from_json(data: Mapping[str, Any]) -> Scenario:
    try:
        sid = data["id"]
        countries = data["countries"]
        trig = data["trigger"]
    except KeyError as exc:
        raise ScenarioError(f"scenario missing required field {exc}") from exc
    roster = tuple(_profile_from_json(c) for c in countries)
    names = [p.name for p in roster]
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise ScenarioError(f"duplicate country {n!r}")
        seen.add(n)
    if len(roster) < 2:
        raise ScenarioError("a scenario needs at least two countries")
    alias_owner: dict[str, str] = {}
    for p in roster:
        for a in p.aliases:
            if a in seen or alias_owner.setdefault(a, p.name) != p.name:
                raise ScenarioError(f"alias {a!r} is ambiguous")
    gt = _ground_truth_from_json(data.get("ground_truth", {}))
    unknown = gt.names() - seen
    if unknown:
        raise ScenarioError(f"ground truth references unknown countries {sorted(unknown)}")
    attitude = data.get("attitude", "default")
    if attitude not in ATTITUDES:
        raise ScenarioError(f"bad attitude {attitude!r}")
    return Scenario(
        id=sid,
        title=data.get("title", sid),
        roster=roster,
        trigger=TriggerEvent(trig.get("id", "trigger"), trig["text"]),
        anonymization=_anonymization_from_json(data.get("anonymization", {})),
        ground_truth=gt,
        deanonymized=bool(data.get("deanonymized", True)),
        attitude=attitude,
    )


def builtin_path(kind: str, name: str) -> Path | None:
    """Locate a shipped data file (``scenarios``, ``overlays``, ``fixtures``, ``triggers``)."""
    stem = name[:-5] if name.endswith(".json") else name
    candidate = resources.files("warsim").joinpath("data").joinpath(kind).joinpath(f"{stem}.json")
    return Path(str(candidate)) if candidate.is_file() else None


def resolve_data_file(kind: str, name_or_path: str | Path) -> Path:
    """Bare names try the built-in directory first; explicit paths always win."""
    path = Path(name_or_path)
    explicit = bool(path.suffix) or len(path.parts) > 1
    if explicit and path.is_file():
        return path
    found = builtin_path(kind, str(name_or_path))
    if found is not None:
        return found
    if path.is_file():
        return path
    if explicit and path.parent.name == kind:
        found = builtin_path(kind, path.name)
        if found is not None:
            return found
    raise ScenarioError(f"no such {kind[:-1]} file or built-in name: {name_or_path}")


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario by file path or built-in name (``wwi``, ``wwii``, ``wsp``)."""
    resolved = resolve_data_file("scenarios", path)
    scenario = scenario_from_json(_read_json(resolved))
    logger.debug("loaded scenario %s from %s", scenario.id, resolved)
    return scenario


# ---------------------------------------------------------------------------
# Overlays
# ---------------------------------------------------------------------------


def _trigger_from_json(raw: Any) -> TriggerEvent | None:
    if raw is None:
        return None
    if raw == "null":
        return NULL_TRIGGER
    if isinstance(raw, str):
        return TriggerEvent("custom", raw)
    if isinstance(raw, Mapping) and "text" in raw:
        return TriggerEvent(raw.get("id", "custom"), raw["text"])
    raise ScenarioError(f"bad trigger override {raw!r}")


def overlay_from_json(data: Mapping[str, Any]) -> Overlay:
    patches = []
    for raw in data.get("profile_patches", []):
        try:
            country, dim = raw["country"], raw["dimension"]
        except KeyError as exc:
            raise ScenarioError(f"patch missing {exc}") from exc
        sel = raw.get("entries", "all")
        if sel == "all":
            entries = None
        elif isinstance(sel, int):
            entries = (sel,)
        else:
            entries = tuple(int(i) for i in sel)
        facts = raw.get("facts")
        patches.append(
            ProfilePatch(
                country=country,
                dimension=dim,
                entries=entries,
                facts=tuple(facts) if facts is not None else None,
                replacement=raw.get("replace"),
                multiplier=parse_multiplier(raw["multiply"]) if "multiply" in raw else None,
                remove=bool(raw.get("remove", False)),
            )
        )
    return Overlay(
        id=data.get("id", "overlay"),
        profile_patches=tuple(patches),
        trigger_override=_trigger_from_json(data.get("trigger_override")),
        attitude=data.get("attitude", "default"),
        allow_custom_multipliers=bool(data.get("allow_custom_multipliers", False)),
    )


def load_overlay(path: str | Path) -> Overlay:
    return overlay_from_json(_read_json(resolve_data_file("overlays", path)))


def load_trigger(name_or_path: str | Path) -> TriggerEvent:
    """Load a trigger file, or accept the literal name ``null``."""
    if str(name_or_path) == "null":
        return NULL_TRIGGER
    raw = _read_json(resolve_data_file("triggers", name_or_path))
    trig = _trigger_from_json(raw)
    if trig is None:
        raise ScenarioError(f"empty trigger file {name_or_path}")
    return trig


def _patch_entry(entry: ProfileEntry, patch: ProfilePatch) -> ProfileEntry:
    if patch.replacement is not None:
        return ProfileEntry(patch.replacement)
    assert patch.multiplier is not None
    facts = tuple(
        replace(f, value=f.value * patch.multiplier, patched=True)
        if patch.facts is None or f.key in patch.facts
        else f
        for f in entry.facts
    )
    return ProfileEntry(entry.template, facts)


def _select(entries: tuple[ProfileEntry, ...], patch: ProfilePatch) -> list[int]:
    if patch.entries is None:
        idx = list(range(len(entries)))
    else:
        idx = [i - 1 for i in patch.entries if 1 <= i <= len(entries)]
        if len(idx) != len(patch.entries):
            raise ScenarioError(
                f"{patch.country}.{patch.dimension}: entry selector {patch.entries} out of range"
            )
    if patch.multiplier is not None:
        idx = [
            i
            for i in idx
            if any(patch.facts is None or f.key in patch.facts for f in entries[i].facts)
        ]
    if not idx:
        raise ScenarioError(f"{patch.country}.{patch.dimension}: selector matches zero entries")
    return idx


def apply_overlay(scenario: Scenario, overlay: Overlay) -> Scenario:
    """Return a patched copy of ``scenario``; the input is never modified."""
    profiles = {p.name: p for p in scenario.roster}
    for patch in overlay.profile_patches:
        if patch.country not in profiles:
            raise ScenarioError(f"overlay names unknown country {patch.country!r}")
        prof = profiles[patch.country]
        entries = prof.dimension(patch.dimension)
        chosen = _select(entries, patch)
        if patch.remove:
            kept = tuple(e for i, e in enumerate(entries) if i not in chosen)
            if not kept:
                raise ScenarioError(f"{patch.country}.{patch.dimension}: cannot remove every entry")
            new_entries = kept
        else:
            new_entries = tuple(
                _patch_entry(e, patch) if i in chosen else e for i, e in enumerate(entries)
            )
        profiles[patch.country] = replace(prof, **{patch.dimension: new_entries})
    return replace(
        scenario,
        roster=tuple(profiles[n] for n in scenario.names),
        trigger=overlay.trigger_override or scenario.trigger,
        attitude=overlay.attitude if overlay.attitude != "default" else scenario.attitude,
    )


# ---------------------------------------------------------------------------
# Anonymization
# ---------------------------------------------------------------------------


def _anon_entry(entry: ProfileEntry, amap: AnonymizationMap) -> ProfileEntry:
    return ProfileEntry(
        amap.apply(entry.template),
        tuple(replace(f, unit=amap.apply(f.unit)) for f in entry.facts),
    )


def anonymize(scenario: Scenario) -> Scenario:
    """Apply the scenario's rename map to every text field and flip the flag."""
    if not scenario.deanonymized:
        raise ScenarioError(f"scenario {scenario.id} is already anonymized")
    amap = scenario.anonymization
    amap.validate()
    renamed = {n: amap.apply(n) for n in scenario.names}
    if len(set(renamed.values())) != len(renamed):
        raise ScenarioError("alias collision: two countries map to the same name")
    roster = []
    for prof in scenario.roster:
        dims = {
            d: tuple(_anon_entry(e, amap) for e in prof.dimension(d)) for d in DIMENSIONS
        }
        changed = renamed[prof.name] != prof.name
        roster.append(
            replace(
                prof,
                name=renamed[prof.name],
                article=prof.article and not changed,
                aliases=(),
                **dims,
            )
        )
    gt = scenario.ground_truth

    def rename_pairs(pairs: frozenset[frozenset[str]]) -> frozenset[frozenset[str]]:
        return frozenset(frozenset(renamed[c] for c in p) for p in pairs)

    return replace(
        scenario,
        roster=tuple(roster),
        trigger=TriggerEvent(scenario.trigger.id, amap.apply(scenario.trigger.text)),
        ground_truth=replace(
            gt,
            alliances=rename_pairs(gt.alliances),
            war_declarations=rename_pairs(gt.war_declarations),
            mobilized=frozenset(renamed[c] for c in gt.mobilized),
        ),
        deanonymized=False,
    )


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_profile(profile: CountryProfile) -> str:
    lines = [f"## {profile.name} profile"]
    for dim in DIMENSIONS:
        lines.append("")
        lines.append(f"# {DIMENSION_TITLES[dim]} for {profile.name}")
        for i, entry in enumerate(profile.dimension(dim), start=1):
            lines.append(f"({i}) {entry.render()}")
    return "\n".join(lines) + "\n"
