"""
Unit tests for cause checking and discovery on abstractions.

"""

from fractions import Fraction

import pytest

from pac_causality.abstract_check import (
    AbstractPacQuery,
    check_cause_abs,
    discover_abs,
    subgraph_queries,
)
from pac_causality.abstraction import abstract, refine_split
from pac_causality.concrete import discover
from pac_causality.predicates import Proposition, parse_predicate


@pytest.fixture
def split_query(coarse_query, coarse):
    """
    The query after splitting ŝ1 into singletons.

    """
    refined = refine_split(
        coarse, coarse.state("ŝ1"), Fraction(3, 5), coarse_query.effect_states
    )
    return coarse_query.with_abstraction(refined)


@pytest.mark.parametrize(
    "cause, p_aw, p_cw",
    [
        ("ŝ1", Fraction(1, 10), Fraction(3, 20)),
        ("ŝ11", Fraction(3, 20), Fraction(9, 20)),
    ],
)
def test_coarse_abstraction_refutes(coarse, coarse_query, cause, p_aw, p_cw):
    """
    Test that the pessimistic abstract values refute both candidates of the coarse abstraction.

    """
    result = check_cause_abs(coarse_query, coarse.ids([cause]))
    assert not result.confirmed
    assert result.reason == "pc2"
    violation = result.violations[0]
    assert violation.root == "ŝ0"
    assert (violation.p_aw, violation.p_cw) == (p_aw, p_cw)


def test_coarse_abstraction_has_no_cause(coarse, coarse_query):
    assert coarse.names(coarse_query.eligible_states()) == ["ŝ1", "ŝ11"]
    assert discover_abs(coarse_query) is None


@pytest.mark.parametrize(
    "cause, reason", [("ŝ3", "cause-overlaps-effect"), ("ŝ0", "cause-is-root")]
)
def test_abstract_refutation_reasons(coarse, coarse_query, cause, reason):
    assert check_cause_abs(coarse_query, coarse.ids([cause])).reason == reason


def test_split_abstraction_confirms(split_query):
    """
    Test that the split abstraction yields the cause with exact values and a
    concrete confirmation.

    """
    a = split_query.abstraction
    assert len(a.states) == 8
    assert [a.states[x].name for x in split_query.eligible_states()] == [
        "ŝ1,1",
        "ŝ11",
        "ŝ1,3",
        "ŝ1,4",
    ]
    report = discover_abs(split_query)
    assert report.abstract_cause == ("ŝ1,1",)
    assert report.cause_names == ("s1",)
    assert report.root == report.counter_root == "ŝ0"
    assert (report.p_aw, report.p_cw) == (Fraction(69, 200), Fraction(3, 20))
    assert report.mode == "abstract"
    assert report.verification.p_aw == Fraction(69, 200)
    record = report.to_record()
    assert record["abstract_cause"] == ["ŝ1,1"]
    assert record["verified_p_cw"] == "3/20"


def test_second_abstract_cause(split_query):
    a = split_query.abstraction
    report = check_cause_abs(split_query, a.ids(["ŝ1,4"]))
    assert report.confirmed
    assert (report.p_aw, report.p_cw) == (Fraction(63, 200), Fraction(9, 50))


def test_finest_partition_matches_concrete(cart, cart_effect, cart_query):
    """
    Test that an abstraction separating every state finds the concrete cause.

    """
    positions = sorted({s.valuation["pos"] for s in cart.states})
    predicates = [parse_predicate(f"pos >= {p}") for p in positions]
    a = abstract(cart, predicates)
    assert a.finest
    q = AbstractPacQuery(abstraction=a, effect=cart_effect)
    abstract_report = discover_abs(q)
    concrete_report = discover(cart_query)
    assert abstract_report.cause == concrete_report.cause
    assert abstract_report.p_aw == concrete_report.p_aw
    assert abstract_report.p_cw == concrete_report.p_cw


def test_explicit_roots_follow_splits(coarse, cart_effect):
    q = AbstractPacQuery(
        abstraction=coarse, effect=cart_effect, root_policy="explicit", roots=("ŝ1",)
    )
    assert q.concrete_query().roots == ("s1", "s3", "s4")
    refined = refine_split(coarse, coarse.state("ŝ1"), Fraction(3, 5), q.effect_states)
    assert q.with_abstraction(refined).roots == ("ŝ1,1", "ŝ1,3", "ŝ1,4")


def test_concrete_query_settings(coarse_query):
    concrete = coarse_query.concrete_query()
    assert concrete.candidate_policy == "subsets"
    assert concrete.jobs == 1
    assert concrete.root_policy == "initial"


@pytest.mark.parametrize(
    "options",
    [
        {"contingencies": (Proposition("halt"),)},
        {"w_strategy": "ignore"},
        {"candidate_policy": "template"},
        {"root_policy": "explicit", "roots": ("ŝ2",)},
    ],
)
def test_incorrect_config(coarse, cart_effect, options):
    with pytest.raises(ValueError, match="Incorrect config"):
        AbstractPacQuery(abstraction=coarse, effect=cart_effect, **options)


def test_w_preserving_query(relay):
    """
    Test abstract discovery with a contingency set on a w-preserving abstraction.

    """
    W = (Proposition("w"),)
    a = abstract(relay, [Proposition("halt")], mode="w-preserving", contingencies=W)
    q = AbstractPacQuery(abstraction=a, effect=parse_predicate("halt && w"), contingencies=W)
    assert q.concrete_query().contingencies == W
    # The root block holds s5, whose action never reaches the effect.
    assert check_cause_abs(q, a.ids(["ŝ0/0"])).reason == "pc1"
    assert discover_abs(q) is None


def test_subgraph_queries(relay):
    """
    Test that only subgraphs containing an effect state are queried.

    """
    W = [Proposition("w")]
    queries = subgraph_queries(
        relay, [Proposition("halt")], parse_predicate("halt && w"), W
    )
    assert [sub.signature for sub, _ in queries] == [
        ((True,),),
        ((True,), (False,), (True,)),
    ]
    for _, q in queries:
        assert q.w_strategy == "subgraphs"
        assert q.agrees(0, 1)
        assert q.concrete_query().contingencies == ()
