"""
Unit tests for predicate abstraction, state splitting and subgraph decomposition.

"""

import logging

from fractions import Fraction

import pytest

from pac_causality.abstraction import (
    abstract,
    enumerate_subgraphs,
    format_signature,
    refine_split,
    serialize_abstraction,
)
from pac_causality.model import Dtmc, parse_mdp
from pac_causality.predicates import Proposition
from pac_causality.reach import PathGuardExceeded

W = [Proposition("w")]


def test_coarse_abstraction(coarse, cart):
    """
    Test the six abstract states of the cart chain.

    """
    assert [block.name for block in coarse.states] == ["ŝ0", "ŝ1", "ŝ3", "ŝ7", "ŝ11", "ŝ15"]
    members = {block.name: cart.names(block.members) for block in coarse.states}
    assert members == {
        "ŝ0": ["s0"],
        "ŝ1": ["s1", "s3", "s4"],
        "ŝ3": ["s7", "s9"],
        "ŝ7": ["s6", "s8"],
        "ŝ11": ["s2", "s5"],
        "ŝ15": ["s10"],
    }
    assert coarse.state("ŝ11").bits == (1, 0, 1, 1)
    assert coarse.block_of[cart.index["s4"]] == coarse.index["ŝ1"]
    assert coarse.mdp.initial == frozenset([coarse.index["ŝ0"]])
    assert not coarse.finest


def test_actions_are_concrete_members(coarse):
    """
    Test that each member contributes one action over successor blocks.

    """
    actions = coarse.mdp.actions[coarse.index["ŝ1"]]
    assert [a.name for a in actions] == ["s1", "s3", "s4"]
    s1, s3, s4 = actions
    assert s1.transitions == ((coarse.index["ŝ1"], Fraction(1)),)
    assert s3.transitions == (
        (coarse.index["ŝ3"], Fraction(1, 5)),
        (coarse.index["ŝ7"], Fraction(4, 5)),
    )
    assert not any(a.halting for a in actions)
    assert all(a.halting for a in coarse.mdp.actions[coarse.index["ŝ3"]])


def test_unreachable_states_are_dropped():
    model = Dtmc.build(
        ["x"],
        [("a", [0], []), ("b", [1], ["halt"]), ("c", [2], []), ("d", [3], ["halt"])],
        [("a", "b", 1), ("b", "b", 1), ("c", "d", 1), ("d", "d", 1)],
        initial=["a"],
    )
    a = abstract(model, [])
    assert len(a.states) == 1
    assert a.model.names(a.states[0].members) == ["a", "b"]


def test_empty_predicate_set_warns(cart, caplog):
    with caplog.at_level(logging.WARNING, logger="Abstraction"):
        a = abstract(cart, [])
    assert len(a.states) == 1
    assert "Empty predicate set" in caplog.text


def test_w_preserving_mode(relay):
    """
    Test that states disagreeing on W never share an abstract state.

    """
    a = abstract(relay, [Proposition("halt")], mode="w-preserving", contingencies=W)
    assert [block.name for block in a.states] == ["ŝ0/0", "ŝ0/1", "ŝ1/0", "ŝ1/1"]
    for block in a.states:
        labels = {"w" in relay.states[s].labels for s in block.members}
        assert len(labels) == 1
    assert a.signature == ((0,), (1,), (0,), (1,))


def test_unknown_mode(cart, cart_predicates):
    with pytest.raises(ValueError):
        abstract(cart, cart_predicates, mode="exact")


def test_mixed_effect_warns(coarse, cart, caplog):
    E_hat = coarse.effect(cart.ids(["s7"]))
    assert coarse.names(E_hat) == ["ŝ3"]
    assert "mixes effect and non-effect states" in caplog.text


def test_total_split(coarse, cart, cart_effect):
    """
    Test that a three-member block split with ratio 0.6 becomes three singletons.

    """
    E = cart.satisfying_set(cart_effect)
    refined = refine_split(coarse, coarse.state("ŝ1"), Fraction(3, 5), E)
    assert [block.name for block in refined.states] == [
        "ŝ0",
        "ŝ1,1",
        "ŝ1,3",
        "ŝ1,4",
        "ŝ3",
        "ŝ7",
        "ŝ11",
        "ŝ15",
    ]
    assert refined.state("ŝ1,4").members == cart.ids(["s4"])
    actions = refined.mdp.actions[refined.index["ŝ1,1"]]
    assert [a.name for a in actions] == ["s1"]
    assert actions[0].transitions == (
        (refined.index["ŝ1,3"], Fraction(3, 10)),
        (refined.index["ŝ1,4"], Fraction(7, 10)),
    )


def test_partial_split_extracts_the_outlier(coarse, cart, cart_effect):
    """
    Test that the member farthest from the block's mean reachability is extracted first.

    """
    E = cart.satisfying_set(cart_effect)
    refined = refine_split(coarse, coarse.state("ŝ1"), Fraction(9, 10), E)
    assert len(refined.states) == 7
    assert cart.names(refined.state("ŝ1").members) == ["s1", "s4"]
    assert cart.names(refined.state("ŝ1,3").members) == ["s3"]


def test_split_errors(coarse, cart, cart_effect):
    E = cart.satisfying_set(cart_effect)
    with pytest.raises(ValueError):
        refine_split(coarse, coarse.state("ŝ1"), Fraction(0), E)
    with pytest.raises(ValueError):
        refine_split(coarse, coarse.state("ŝ0"), Fraction(3, 5), E)
    with pytest.raises(ValueError):
        coarse.state("ŝ2")


def test_serialize_abstraction(coarse):
    """
    Test the induced MDP file and the abstraction map sidecar.

    """
    mdp_text, abs_map = serialize_abstraction(coarse)
    assert mdp_text.startswith("# psi1: vel >= 0.03\n# psi2: pos >= 0.6\n")
    assert parse_mdp(mdp_text) == coarse.mdp
    assert abs_map == (
        "ŝ0: s0\n"
        "ŝ1: s1 s3 s4\n"
        "ŝ3: s7 s9\n"
        "ŝ7: s6 s8\n"
        "ŝ11: s2 s5\n"
        "ŝ15: s10\n"
    )


def test_enumerate_subgraphs(relay):
    """
    Test the decomposition of the relay chain by collapsed W-trace.

    """
    subgraphs = enumerate_subgraphs(relay, W)
    assert len(subgraphs) == 4
    assert [format_signature(sig, W) for sig in subgraphs.signatures()] == [
        "(w)",
        "(w,¬w)",
        "(w,¬w,w)",
        "(w,¬w,w,¬w)",
    ]
    first = subgraphs.subgraphs[0]
    assert [s.name for s in first.model.states] == ["s0", "s2", "s4", "s7"]
    assert first.model.names(first.model.initial) == ["s0"]
    assert not first.model.stochastic
    assert len(first.paths) == 2
    last = subgraphs.subgraphs[-1]
    assert [s.name for s in last.model.states] == ["s0", "s1", "s5", "s10"]


def test_subgraph_probabilities_are_not_renormalized(relay):
    first = enumerate_subgraphs(relay, W).subgraphs[0].model
    assert first.transitions[first.index["s0"]] == (
        (first.index["s2"], Fraction(1, 5)),
        (first.index["s4"], Fraction(1, 5)),
    )


def test_subgraph_path_guard(relay):
    with pytest.raises(PathGuardExceeded):
        enumerate_subgraphs(relay, W, limit=3)


def test_format_signature_with_several_contingencies():
    W2 = [Proposition("w"), Proposition("v")]
    assert format_signature(((True, False), (False, False)), W2) == "({w,¬v},{¬w,¬v})"
