"""Scripted-policy builders shared by engine, CLI and acceptance tests."""

from __future__ import annotations

from conftest import WWI


def full_script(rounds: dict[int, dict[str, list[str]]], n_rounds: int, roster=WWI) -> dict:
    out = {}
    for r in range(1, n_rounds + 1):
        given = rounds.get(r, {})
        out[str(r)] = {c: given.get(c, [f"{c} has chosen to Wait without Action"]) for c in roster}
    return out


def ground_truth_script(n_rounds: int = 6) -> dict:
    """Enacts exactly the WWI ground truth: alliances, declarations, mobilizations."""
    mob = lambda c: f"{c} has chosen to General Mobilization"  # noqa: E731
    req = lambda a, b: f"{a} has chosen to Request Military Alliance to {b}"  # noqa: E731
    acc = lambda a, b: f"{a} has chosen to Accept Military Alliance from {b}"  # noqa: E731
    war = lambda a, b: f"{a} has chosen to Declare War against {b}"  # noqa: E731
    r1 = {
        "Britain": [mob("Britain"), req("Britain", "France")],
        "France": [mob("France")],
        "German Empire": [mob("German Empire")],
        "Austria-Hungary": [mob("Austria-Hungary"), req("Austria-Hungary", "German Empire")],
        "Russia": [mob("Russia"), req("Russia", "Serbia"), req("Russia", "France")],
        "Serbia": [mob("Serbia")],
        "Ottoman Empire": [mob("Ottoman Empire"), req("Ottoman Empire", "German Empire")],
    }
    r2 = {
        "France": [acc("France", "Britain"), acc("France", "Russia"), war("France", "German Empire")],
        "German Empire": [
            acc("German Empire", "Austria-Hungary"),
            acc("German Empire", "Ottoman Empire"),
            war("German Empire", "Serbia"),
        ],
        "Serbia": [acc("Serbia", "Russia")],
        "Austria-Hungary": [war("Austria-Hungary", "Serbia")],
        "Russia": [war("Russia", "Austria-Hungary"), war("Russia", "German Empire")],
    }
    return full_script({1: r1, 2: r2}, n_rounds)


def chain_script(n_rounds: int = 6) -> dict:
    """Pacts along the roster chain, all formed by round 2, then silence."""
    pairs = list(zip(WWI, WWI[1:]))
    r1, r2 = {}, {}
    for i, (a, b) in enumerate(pairs):
        kind = "Military Alliance" if i % 2 == 0 else "Non-Intervention Treaty"
        r1[a] = [f"{a} has chosen to Request {kind} to {b}"]
        r2.setdefault(b, []).append(f"{b} has chosen to Accept {kind} from {a}")
    return full_script({1: r1, 2: r2}, n_rounds)
