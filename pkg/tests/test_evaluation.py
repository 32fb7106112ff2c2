from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st
from sklearn.metrics import mutual_info_score, normalized_mutual_info_score

from warsim.engine import Engine, EngineConfig
from warsim.evaluation import (
    EvaluationError,
    Partition,
    Scores,
    aggregate,
    components,
    entropy,
    evaluate_run,
    format_table,
    jaccard,
    mutual_information,
    nmi,
)
from warsim.policy import ScriptedPolicy
from warsim.scenario import load_scenario

from conftest import WWI
from oracles import nmi_direct, set_partitions
from scripts import full_script, ground_truth_script

B, F, G, A, R, S, U, O = WWI
P = Partition.from_blocks
pair = lambda a, b: frozenset((a, b))  # noqa: E731

# Values recomputed with an independent contingency-table oracle (nmi_direct)
# and with scikit-learn before being frozen here.
EXAMPLE_NMI = 0.849000905026161
EXAMPLE_MI = 0.9743147528693494
EXAMPLE_HP = 1.3208883431493221


def test_gt_partition_components():
    edges = [pair(B, F), pair(R, S), pair(A, G), pair(R, F), pair(O, G)]
    assert components(WWI, edges) == P([{B, F, R, S}, {G, A, O}, {U}])
    assert components(WWI, []) == P([{c} for c in WWI])
    assert components(["A", "B", "C"], [pair("A", "B")]) == P([{"A", "B"}, {"C"}])


def test_nmi_examples():
    p = P([{B, F}, {R, S}, {G, A, O}, {U}])
    q = P([{B, F, R, S}, {G, A, O}, {U}])
    assert nmi(p, p) == 1.0
    assert nmi(P([set(WWI)]), P([{c} for c in WWI])) == 0.0
    assert nmi(p, q) == pytest.approx(EXAMPLE_NMI, abs=1e-12)
    assert round(nmi(p, q), 4) == 0.8490
    assert mutual_information(p, q) == pytest.approx(EXAMPLE_MI, abs=1e-12)
    assert entropy(p) == pytest.approx(EXAMPLE_HP, abs=1e-12)
    assert entropy(q) == pytest.approx(EXAMPLE_MI, abs=1e-12)


def test_nmi_conventions():
    one = P([{"a", "b"}])
    assert nmi(one, one) == 1.0
    with pytest.raises(EvaluationError):
        nmi(one, P([{"a", "c"}]))
    with pytest.raises(EvaluationError):
        Partition.from_blocks([{"a"}, {"a", "b"}])


def _labels(part, items):
    lab = {x: i for i, b in enumerate(part) for x in b}
    return [lab[x] for x in items]


def test_exhaustive_against_oracle_and_sklearn():
    items = list("abcde")
    parts = list(set_partitions(items))
    assert len(parts) == 52
    checked = 0
    for p in parts:
        for q in parts:
            ours = nmi(P(p), P(q))
            assert abs(ours - nmi_direct(p, q)) <= 1e-9
            if len(p) > 1 or len(q) > 1:
                sk = normalized_mutual_info_score(_labels(p, items), _labels(q, items), average_method="arithmetic")
                assert abs(ours - sk) <= 1e-9
                assert abs(mutual_information(P(p), P(q)) - mutual_info_score(_labels(p, items), _labels(q, items))) <= 1e-9
            checked += 1
    assert checked == 2704


partitions5 = st.sampled_from(list(set_partitions(list("abcde"))))


@given(partitions5, partitions5)
def test_nmi_symmetric_and_bounded(p, q):
    a, b = nmi(P(p), P(q)), nmi(P(q), P(p))
    assert a == pytest.approx(b, abs=1e-12)
    assert 0.0 <= a <= 1.0
    if len(p) > 1:
        assert nmi(P(p), P(p)) == pytest.approx(1.0)


@given(partitions5)
def test_refinement_bound(p):
    # merging two blocks gives a non-trivial coarsening
    if len(p) < 3:
        return
    q = [p[0] + p[1]] + p[2:]
    assert 0.0 < nmi(P(p), P(q)) <= 1.0


def test_jaccard_examples():
    sim = {pair(A, S), pair(A, R), pair(G, R), pair(G, F), pair(G, B)}
    gt = {pair(A, S), pair(A, R), pair(G, S), pair(G, R), pair(G, F)}
    assert jaccard(sim, gt) == pytest.approx(4 / 6, abs=1e-12)
    assert jaccard(set(WWI), set(WWI) - {U}) == 7 / 8
    assert jaccard({1}, {1}) == 1.0
    assert jaccard(set(), set()) == 1.0


sets = st.frozensets(st.integers(0, 9))


@given(sets, sets)
def test_jaccard_properties(a, b):
    assert 0.0 <= jaccard(a, b) <= 1.0
    assert jaccard(a, a) == 1.0
    if a:
        assert jaccard(a, set()) == 0.0
    assert jaccard(a, b) == jaccard(b, a)


@given(sets, sets, st.integers(0, 9))
def test_jaccard_monotone_in_intersection(a, b, x):
    union = a | b
    if x not in union or (x in a and x in b):
        return
    grown = (a | {x}, b | {x})
    assert (grown[0] | grown[1]) == union
    assert jaccard(*grown) >= jaccard(a, b)


def test_perfect_run_scores(wwi):
    log = Engine(wwi, ScriptedPolicy(ground_truth_script()), EngineConfig(max_rounds=6)).run()
    s = evaluate_run(log, wwi.ground_truth)
    assert (s.alliance_nmi, s.war_jaccard, s.mobilization_jaccard) == (1.0, 1.0, 1.0)


def test_fixture_scores(wwi, fixture_doc):
    log = Engine(wwi, ScriptedPolicy(fixture_doc), EngineConfig(max_rounds=5, eval_snapshot_round=5)).run()
    s = evaluate_run(log, wwi.ground_truth, 5)
    assert s.alliance_nmi == pytest.approx(0.7690250805954952, abs=1e-9)
    assert s.war_jaccard == pytest.approx(5 / 8, abs=1e-12)
    assert s.mobilization_jaccard == pytest.approx(6 / 7, abs=1e-12)
    with pytest.raises(EvaluationError):
        evaluate_run(log, wwi.ground_truth)  # default round 6 is beyond the log


def test_cumulative_sets_monotone(wwi, fixture_doc):
    log = Engine(wwi, ScriptedPolicy(fixture_doc), EngineConfig(max_rounds=5, eval_snapshot_round=5)).run()
    for r in range(1, 5):
        assert log.war_pairs_through(r) <= log.war_pairs_through(r + 1)
        assert log.mobilized_through(r) <= log.mobilized_through(r + 1)


def test_wsp_has_no_war_score():
    wsp = load_scenario("wsp")
    log = Engine(wsp, ScriptedPolicy(full_script({}, 6, wsp.names)), EngineConfig(max_rounds=6)).run()
    s = evaluate_run(log, wsp.ground_truth)
    assert s.war_jaccard is None
    assert "war declaration" not in format_table([("x", s.aspects)], include_war=False)


def test_aggregate():
    mk = lambda v: Scores(v, v, v, 6)  # noqa: E731
    agg = aggregate([mk(1.0), mk(0.5)])
    assert agg.percentages() == {"alliance": "75.00", "war": "75.00", "mobilization": "75.00"}
    assert aggregate([mk(0.3)]).means["alliance"] == 0.3
    assert set(aggregate([mk(1.0)] * 7).percentages().values()) == {"100.00"}
    with pytest.raises(EvaluationError):
        aggregate([])
    with pytest.raises(EvaluationError):
        aggregate([mk(1.0), Scores(1.0, None, 1.0, 6)])


def test_scores_bounds():
    with pytest.raises(EvaluationError):
        Scores(1.5, 0.0, 0.0, 6)
    assert math.isclose(Scores(0.5, None, 0.25, 6).aspects["mobilization"], 0.25)
