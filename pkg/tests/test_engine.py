from __future__ import annotations

import json

import networkx as nx
import pytest

from warsim.chat import ChatClient
from warsim.engine import (
    CONNECTIVITY,
    MAX_ROUNDS,
    Engine,
    EngineConfig,
    RunLog,
    application_order,
    apply_round,
    should_stop,
)
from warsim.policy import ChatPolicy, RandomPolicy, ScriptedPolicy, ScriptGap
from warsim.protocol import Action, ActionKind, CountryIndex, parse_action
from warsim.scenario import NULL_TRIGGER_TEXT, Overlay, apply_overlay, load_trigger
from warsim.worldstate import Board, RelationKind, WorldState, apply_all, relation_graph_connected

from conftest import WWI
from fakellm import FakeLLM
from scripts import chain_script, full_script

B, F, G, A, R, S, U, O = WWI


def test_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(max_rounds=5, eval_snapshot_round=6)
    with pytest.raises(ValueError):
        EngineConfig(stability_window=0)


def test_fixture_run(wwi, fixture_doc, tmp_path):
    log = Engine(wwi, ScriptedPolicy(fixture_doc), EngineConfig(max_rounds=5, eval_snapshot_round=5), out_dir=tmp_path).run()
    assert len(log.rounds) == 5 and log.termination == MAX_ROUNDS
    finals = [parse_action(l, CountryIndex(WWI)) for l in log.final_actions(3)[R]]
    assert Action(R, ActionKind.DECLARE_WAR, ("German Empire",)) in [a.with_round(0) for a in finals]
    assert (tmp_path / "boards" / "round_5.txt").is_file()
    assert len((tmp_path / "rounds.jsonl").read_text().splitlines()) == 5
    assert all(not a["amended"] for rec in log.rounds for a in rec["agents"].values())


def test_null_trigger_random_two_rounds(wwi, tmp_path):
    sc = apply_overlay(wwi, Overlay(trigger_override=load_trigger("null")))
    log = Engine(sc, RandomPolicy(1), EngineConfig(max_rounds=2, eval_snapshot_round=2), out_dir=tmp_path).run()
    assert len(log.rounds) == 2 and log.termination == "max_rounds"
    assert all(a["inbox"] == [f"## Trigger: {NULL_TRIGGER_TEXT}"] for a in log.rounds[0]["agents"].values())
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["termination"] == "max_rounds" and cfg["rounds_completed"] == 2


def test_connectivity_stop(wwi):
    config = EngineConfig(max_rounds=6, stop_on_connectivity=True, stability_window=3)
    log = Engine(wwi, ScriptedPolicy(chain_script(6)), config).run()
    assert log.termination == CONNECTIVITY
    assert len(log.rounds) == 4  # pacts complete after round 2, frozen through round 4
    graph = nx.Graph()
    graph.add_nodes_from(WWI)
    graph.add_edges_from(tuple(e) for e in log.board_at(4).edges())
    assert nx.is_connected(graph)


def test_should_stop_rules():
    board = Board(WWI)
    cfg = EngineConfig(max_rounds=10, stop_on_connectivity=True)
    assert should_stop(10, [board], cfg) == MAX_ROUNDS
    chain = WorldState.initial(WWI).with_round(1)
    chain = apply_all(
        chain,
        [Action(a, ActionKind.REQUEST_TREATY, (b,), round=1) for a, b in zip(WWI, WWI[1:])]
        + [Action(b, ActionKind.ACCEPT_TREATY, (a,), round=1) for a, b in zip(WWI, WWI[1:])],
    ).board
    assert relation_graph_connected(chain)
    assert should_stop(3, [board, chain, chain], cfg) is None  # connected but changed
    assert should_stop(4, [chain, chain, chain], cfg) == CONNECTIVITY
    assert should_stop(4, [chain, chain, chain], EngineConfig()) is None


def test_request_delivered_next_round_only(wwi):
    script = full_script({1: {B: [f"{B} has chosen to Request Military Alliance to {F}"]}}, 3)
    log = Engine(wwi, ScriptedPolicy(script), EngineConfig(max_rounds=3, eval_snapshot_round=3)).run()
    line = "From Britain: Britain has chosen to Request Military Alliance to France"
    assert line not in log.record(1)["agents"][F]["inbox"]
    assert line in log.record(2)["agents"][F]["inbox"]
    assert line not in log.record(3)["agents"][F]["inbox"]
    assert all(line not in log.record(2)["agents"][c]["inbox"] for c in WWI if c != F)
    assert log.record(1)["pending"] and not log.record(2)["pending"]


def test_simultaneous_wars_race(wwi):
    script = full_script(
        {
            1: {
                G: [f"{G} has chosen to General Mobilization"],
                R: [f"{R} has chosen to General Mobilization"],
            },
            2: {
                G: [f"{G} has chosen to Declare War against {R}"],
                R: [f"{R} has chosen to Declare War against {G}"],
            },
        },
        2,
    )
    log = Engine(wwi, ScriptedPolicy(script), EngineConfig(max_rounds=2, eval_snapshot_round=2)).run()
    wars = [e for e in log.applied(2) if e["kind"] == "DeclareWar"]
    assert [e["outcome"] for e in wars] == ["applied", "superseded"]
    assert wars[1]["rule"] == "race"
    assert log.board_at(2).cell(G, R).declarer == G
    assert log.war_pairs_through(2) == {frozenset((G, R))}


def _betray_vs_publish(first, second):
    state = apply_all(
        WorldState.initial(WWI).with_round(1),
        [
            Action(first, ActionKind.REQUEST_ALLIANCE, (second,), round=1),
            Action(second, ActionKind.ACCEPT_ALLIANCE, (first,), round=1),
        ],
    ).with_round(2)
    return state


def test_betray_and_publish_same_round_order():
    # Betrayer earlier in roster: the betrayal lands first and the publish fails.
    state = _betray_vs_publish(B, F)
    finals = {
        B: [Action(B, ActionKind.BETRAY_ALLIANCE, (F,), round=2)],
        F: [Action(F, ActionKind.PUBLISH_ALLIANCE, (B,), round=2)],
    }
    _, out = apply_round(state, application_order(finals, WWI))
    assert [(e["kind"], e["outcome"], e["rule"]) for e in out] == [
        ("BetrayMilitaryAlliance", "applied", None),
        ("PublishMilitaryAlliance", "superseded", "R7"),
    ]
    # Publisher earlier in roster: publish then betray, both apply.
    finals = {
        B: [Action(B, ActionKind.PUBLISH_ALLIANCE, (F,), round=2)],
        F: [Action(F, ActionKind.BETRAY_ALLIANCE, (B,), round=2)],
    }
    after, out = apply_round(state, application_order(finals, WWI))
    assert [e["outcome"] for e in out] == ["applied", "applied"]
    assert after.board.cell(B, F).kind is RelationKind.DEFAULT


def test_responses_apply_before_initiations():
    finals = {
        B: [Action(B, ActionKind.MOBILIZE, round=2)],
        F: [Action(F, ActionKind.ACCEPT_ALLIANCE, (B,), round=2), Action(F, ActionKind.MOBILIZE, round=2)],
    }
    order = application_order(finals, WWI)
    assert [(a.actor, a.kind) for a in order] == [
        (F, ActionKind.ACCEPT_ALLIANCE),
        (B, ActionKind.MOBILIZE),
        (F, ActionKind.MOBILIZE),
    ]


def test_determinism_and_parallel_invisible(wwi, tmp_path):
    for name, jobs in (("a", 1), ("b", 1), ("c", 4)):
        Engine(wwi, RandomPolicy(9), EngineConfig(max_rounds=4, eval_snapshot_round=4, jobs=jobs), out_dir=tmp_path / name).run()
    a, b, c = ((tmp_path / n / "rounds.jsonl").read_bytes() for n in "abc")
    assert a == b == c


def test_log_completeness(wwi, fixture_doc):
    log = Engine(wwi, ScriptedPolicy(fixture_doc), EngineConfig(max_rounds=5, eval_snapshot_round=5)).run()
    index = CountryIndex(WWI, wwi.aliases)
    state = WorldState.initial(WWI)
    for r in range(1, 6):
        state = state.with_round(r)
        finals = {c: [parse_action(l, index, r) for l in lines] for c, lines in log.final_actions(r).items()}
        state, _ = apply_round(state, application_order(finals, WWI))
        state = state.lapse_requests(r)
        assert state.board == log.board_at(r)


def test_simultaneity_and_routing(wwi):
    seen = []

    def hook(ctx):
        seen.append(ctx)

    engine = Engine(wwi, RandomPolicy(4), EngineConfig(max_rounds=5, eval_snapshot_round=5), context_hook=hook)
    log = engine.run()
    for ctx in seen:
        assert all(e.round < ctx.round for e in ctx.view.events)
    for r in range(1, 6):
        for c, agent in log.record(r)["agents"].items():
            for item in agent["inbox"]:
                if item.startswith("## Trigger"):
                    continue
                action = parse_action(item.split(": ", 1)[1], CountryIndex(WWI))
                if not action.kind.properties.publicity.value == "public":
                    assert c in action.targets


def test_degraded_agent_waits(wwi, tmp_path):
    fake = FakeLLM(WWI, fail_first=10**6)
    client = ChatClient(endpoint="http://fake", transport=fake.transport(), max_retries=0, sleep=lambda s: None)
    log = Engine(wwi, ChatPolicy(client, "m"), EngineConfig(max_rounds=1, eval_snapshot_round=1)).run()
    rec = log.record(1)
    assert all(a["degraded"] and a["final"] == [f"{c} has chosen to Wait without Action"] for c, a in rec["agents"].items())


def test_abort_flushes_partial_log(wwi, tmp_path):
    script = full_script({}, 2)
    with pytest.raises(ScriptGap):
        Engine(wwi, ScriptedPolicy(script), EngineConfig(max_rounds=3, eval_snapshot_round=3), out_dir=tmp_path).run()
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["termination"].startswith("aborted: ScriptGap")
    assert RunLog.load(tmp_path).rounds and len(RunLog.load(tmp_path).rounds) == 2


def test_chat_run_writes_transcripts(wwi, tmp_path):
    fake = FakeLLM(WWI)
    client = ChatClient(endpoint="http://fake", cache_dir=tmp_path / "cache", transport=fake.transport())
    log = Engine(wwi, ChatPolicy(client, "m"), EngineConfig(max_rounds=1, eval_snapshot_round=1), out_dir=tmp_path / "run").run()
    files = sorted((tmp_path / "run" / "transcripts").glob("round_1_*.json"))
    assert len(files) == 8
    keys = log.record(1)["agents"][B]["chat_keys"]
    assert len(keys) == 4 and all((tmp_path / "cache" / f"{k}.json").is_file() for k in keys)
