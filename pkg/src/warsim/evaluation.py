"""Accuracy scores against historical ground truth.

* alliances: normalized mutual information between the simulated and the
  ground-truth partition of the roster (natural logs, arithmetic-mean
  normalization; 1.0 when both partitions are trivial in the same way)
* war declarations and mobilization: Jaccard index of cumulative sets
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .engine import RunLog
from .scenario import GroundTruth
from .worldstate import Board, RelationKind

ASPECTS = ("alliance", "war", "mobilization")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    blocks: tuple[frozenset[str], ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for block in self.blocks:
            if not block:
                raise EvaluationError("partition blocks must be non-empty")
            if seen & block:
                raise EvaluationError("partition blocks overlap")
            seen |= block

    @property
    def elements(self) -> frozenset[str]:
        return frozenset().union(*self.blocks) if self.blocks else frozenset()

    def labels(self) -> dict[str, int]:
        return {c: i for i, b in enumerate(self.blocks) for c in b}

    def canonical(self) -> frozenset[frozenset[str]]:
        return frozenset(self.blocks)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[str]]) -> Partition:
        return cls(tuple(frozenset(b) for b in blocks))


def components(roster: Sequence[str], edges: Iterable[Iterable[str]]) -> Partition:
    """Connected components, listed in roster order of their first member."""
    parent = {c: c for c in roster}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for edge in edges:
        a, b = tuple(edge)
        parent[find(a)] = find(b)
    groups: dict[str, list[str]] = {}
    for c in roster:
        groups.setdefault(find(c), []).append(c)
    return Partition(tuple(frozenset(g) for g in groups.values()))


def partition_from_board(board: Board) -> Partition:
    return components(board.roster, board.edges(RelationKind.ALLIANCE))


def alliance_partition(runlog: RunLog, round: int) -> Partition:
    return partition_from_board(runlog.board_at(round))


def ground_truth_partition(roster: Sequence[str], gt: GroundTruth) -> Partition:
    return components(roster, gt.alliances)


def _entropy(counts: Iterable[int], n: int) -> float:
    return -sum((k / n) * math.log(k / n) for k in counts if k)


def mutual_information(p: Partition, q: Partition) -> float:
    if p.elements != q.elements:
        raise EvaluationError("partitions cover different rosters")
    n = len(p.elements)
    if n == 0:
        raise EvaluationError("empty partition")
    lp, lq = p.labels(), q.labels()
    joint = Counter((lp[c], lq[c]) for c in p.elements)
    ap = Counter(lp.values())
    bq = Counter(lq.values())
    mi = 0.0
    for (i, j), nij in joint.items():
        mi += (nij / n) * math.log(n * nij / (ap[i] * bq[j]))
    return max(mi, 0.0)


def entropy(p: Partition) -> float:
    n = len(p.elements)
    return _entropy((len(b) for b in p.blocks), n)


def nmi(p: Partition, q: Partition) -> float:
    """Arithmetic-mean normalized mutual information, natural logs."""
    mi = mutual_information(p, q)
    hp, hq = entropy(p), entropy(q)
    denom = (hp + hq) / 2.0
    if denom <= 0.0:
        return 1.0
    if mi <= 0.0:
        return 0.0
    return min(1.0, mi / denom)


def jaccard(a: Iterable, b: Iterable) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


@dataclass(frozen=True)
class Scores:
    alliance_nmi: float
    war_jaccard: float | None
    mobilization_jaccard: float
    snapshot_round: int
    alliance_mi: float = 0.0

    def __post_init__(self) -> None:
        for v in (self.alliance_nmi, self.war_jaccard, self.mobilization_jaccard):
            if v is not None and not 0.0 <= v <= 1.0:
                raise EvaluationError(f"score {v} outside [0, 1]")

    @property
    def aspects(self) -> dict[str, float | None]:
        return {"alliance": self.alliance_nmi, "war": self.war_jaccard, "mobilization": self.mobilization_jaccard}

    def to_json(self) -> dict:
        return {
            "alliance_nmi": self.alliance_nmi,
            "alliance_mi": self.alliance_mi,
            "war_jaccard": self.war_jaccard,
            "mobilization_jaccard": self.mobilization_jaccard,
            "snapshot_round": self.snapshot_round,
        }


def evaluate_run(runlog: RunLog, gt: GroundTruth, round: int | None = None) -> Scores:
    snap = round if round is not None else gt.snapshot_round
    if snap > len(runlog.rounds) or snap < 1:
        raise EvaluationError(
            f"snapshot round {snap} is beyond the log ({len(runlog.rounds)} rounds recorded)"
        )
    roster = runlog.roster
    sim = alliance_partition(runlog, snap)
    ref = ground_truth_partition(roster, gt)
    war = jaccard(runlog.war_pairs_through(snap), gt.war_declarations) if gt.evaluates_wars else None
    return Scores(
        alliance_nmi=nmi(sim, ref),
        war_jaccard=war,
        mobilization_jaccard=jaccard(runlog.mobilized_through(snap), gt.mobilized),
        snapshot_round=snap,
        alliance_mi=mutual_information(sim, ref),
    )


@dataclass(frozen=True)
class Aggregate:
    n: int
    means: dict[str, float | None]

    def percentages(self) -> dict[str, str | None]:
        return {k: (None if v is None else f"{100.0 * v:.2f}") for k, v in self.means.items()}

    def to_json(self) -> dict:
        return {"runs": self.n, "mean": self.means, "percent": self.percentages()}


def aggregate(scores: Sequence[Scores]) -> Aggregate:
    if not scores:
        raise EvaluationError("cannot aggregate an empty list of scores")
    has_war = {s.war_jaccard is not None for s in scores}
    if len(has_war) != 1:
        raise EvaluationError("inconsistent aspects: some runs have war scores and some do not")
    n = len(scores)
    means: dict[str, float | None] = {
        "alliance": sum(s.alliance_nmi for s in scores) / n,
        "war": (sum(s.war_jaccard for s in scores) / n) if has_war == {True} else None,  # type: ignore[misc]
        "mobilization": sum(s.mobilization_jaccard for s in scores) / n,
    }
    return Aggregate(n, means)


def format_table(rows: Sequence[tuple[str, Mapping[str, float | None]]], include_war: bool = True) -> str:
    """Plain-text table in the alliance / war declaration / mobilization layout."""
    cols = ["alliance"] + (["war declaration"] if include_war else []) + ["mobilization"]
    keys = ["alliance"] + (["war"] if include_war else []) + ["mobilization"]
    label_w = max([len("run")] + [len(r[0]) for r in rows])
    head = "run".ljust(label_w) + "".join(f"  {c:>15}" for c in cols)
    out = [head, "-" * len(head)]
    for label, values in rows:
        cells = []
        for k in keys:
            v = values.get(k)
            cells.append(f"  {'-' if v is None else f'{100.0 * v:.2f}':>15}")
        out.append(label.ljust(label_w) + "".join(cells))
    return "\n".join(out) + "\n"
