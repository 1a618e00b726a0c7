"""
Unit tests for cause checking and discovery on concrete chains.

"""

from fractions import Fraction

import pytest

from pac_causality.concrete import (
    PacQuery,
    candidates,
    cause_exists,
    check_cause,
    discover,
)
from pac_causality.predicates import Proposition, parse_predicate


def test_check_confirmed_cause(cart, cart_query):
    """
    Test that s1 is confirmed with the exact witness values.

    """
    report = check_cause(cart_query, cart.ids(["s1"]))
    assert report.confirmed
    assert report.cause_names == ("s1",)
    assert report.root == "s0"
    assert report.p_aw == Fraction(69, 200)
    assert report.counter_root == "s0"
    assert report.p_cw == Fraction(3, 20)
    assert report.margin == Fraction(39, 200)
    assert cart.satisfying_set(report.predicate) == cart.ids(["s1"])


def test_second_cause_has_smaller_margin(cart, cart_query):
    report = check_cause(cart_query, cart.ids(["s4"]))
    assert report.confirmed
    assert (report.p_aw, report.p_cw) == (Fraction(63, 200), Fraction(9, 50))
    assert report.margin < check_cause(cart_query, cart.ids(["s1"])).margin


@pytest.mark.parametrize(
    "cause, reason",
    [
        (["s2"], "pc2"),
        (["s3"], "pc2"),
        (["s6"], "pc1"),
        (["s7"], "cause-overlaps-effect"),
        (["s0"], "cause-is-root"),
    ],
)
def test_refutations(cart, cart_query, cause, reason):
    result = check_cause(cart_query, cart.ids(cause))
    assert not result.confirmed
    assert result.reason == reason


def test_refutation_lists_violations(cart, cart_query):
    result = check_cause(cart_query, cart.ids(["s2"]))
    assert len(result.violations) == 1
    violation = result.violations[0]
    assert (violation.root, violation.counter_root) == ("s0", "s0")
    assert (violation.p_aw, violation.p_cw) == (Fraction(3, 20), Fraction(69, 200))
    assert result.render() == (
        "refuted: s2 (pc2)\n  root s0: p_AW = 3/20 <= p_CW = 69/200 at s0\n"
    )


def test_empty_cause(cart, cart_query):
    with pytest.raises(ValueError):
        check_cause(cart_query, [])


def test_discover(cart_query):
    """
    Test that discovery returns the shallowest confirmed cause.

    """
    report = discover(cart_query)
    assert report.cause_names == ("s1",)
    assert report.mode == "concrete"
    assert report.render() == "\n".join(
        [
            "cause: s1",
            "predicate: pos = 0.3 && vel = 0.01 && act = 1",
            "root: s0",
            "p_AW: 69/200 (0.345)",
            "p_CW: 3/20 (0.15) at s0",
            "mode: concrete",
            "",
        ]
    )


def test_report_record(cart_query):
    record = discover(cart_query).to_record()
    assert record == {
        "cause": ["s1"],
        "predicate": "pos = 0.3 && vel = 0.01 && act = 1",
        "root": "s0",
        "p_aw": "69/200",
        "counter_root": "s0",
        "p_cw": "3/20",
        "pc1": True,
        "mode": "concrete",
    }


def test_eligible_order(cart, cart_query):
    assert [cart.states[s].name for s in cart_query.eligible_states()] == [
        "s1",
        "s2",
        "s3",
        "s4",
        "s5",
    ]


def test_subset_candidates(cart, cart_effect):
    q = PacQuery(model=cart, effect=cart_effect, candidate_policy="subsets")
    sets = [cart.names(states) for states, _ in candidates(q)]
    assert sets[:5] == [["s1"], ["s2"], ["s3"], ["s4"], ["s5"]]
    assert sets[5] == ["s1", "s2"]
    assert len(sets) == 5 + 10
    assert discover(q).cause_names == ("s1",)


def test_template_candidates(cart, cart_effect):
    """
    Test that template discovery reports the threshold conjunction it matched.

    """
    q = PacQuery(model=cart, effect=cart_effect, candidate_policy="template")
    report = discover(q)
    assert report.cause_names == ("s1",)
    assert str(report.predicate) == "pos >= 0.3 && pos <= 0.3"


def test_explicit_roots(cart, cart_effect):
    q = PacQuery(model=cart, effect=cart_effect, root_policy="explicit", roots=("s1",))
    assert not check_cause(q, cart.ids(["s3"])).confirmed
    report = discover(q)
    assert report.cause_names == ("s4",)
    assert report.root == "s1"
    assert (report.p_aw, report.p_cw) == (Fraction(63, 100), Fraction(3, 50))


def test_all_roots_leave_no_candidates(cart, cart_effect):
    q = PacQuery(model=cart, effect=cart_effect, root_policy="all")
    assert q.eligible_states() == []
    assert discover(q) is None
    assert check_cause(q, cart.ids(["s1"])).reason == "cause-is-root"


@pytest.mark.parametrize(
    "se_mode, expected", [("trace", ("s3",)), ("inequality", None)]
)
def test_contingencies_on_relay(relay, se_mode, expected):
    """
    Test that a root with several W-traces has no agreeing counterfactual root
    under trace agreement, while the inequality check compares it with itself.

    """
    q = PacQuery(
        model=relay,
        effect=parse_predicate("halt && w"),
        contingencies=(Proposition("w"),),
        root_policy="explicit",
        roots=("s2",),
        se_mode=se_mode,
    )
    report = discover(q)
    if expected is None:
        assert report is None
        return
    assert report.cause_names == expected
    assert report.p_aw == Fraction(1, 4)
    assert report.counter_root is None and report.p_cw is None
    assert "p_CW: n/a (no agreeing counterfactual root)" in report.render()


def test_parallel_discovery_matches_sequential(cart, cart_effect):
    q = PacQuery(model=cart, effect=cart_effect, candidate_policy="subsets", jobs=2)
    assert discover(q).cause_names == ("s1",)


@pytest.mark.parametrize(
    "options",
    [
        {"root_policy": "bogus"},
        {"root_policy": "explicit"},
        {"root_policy": "explicit", "roots": ("s99",)},
        {"candidate_policy": "pairs"},
        {"max_subset_size": 0},
        {"se_mode": "exact"},
    ],
)
def test_incorrect_config(cart, cart_effect, options):
    with pytest.raises(ValueError, match="Incorrect config"):
        PacQuery(model=cart, effect=cart_effect, **options)


@pytest.mark.parametrize("effect", ["pos > 5", "speed < 1"])
def test_bad_effect(cart, effect):
    with pytest.raises(ValueError, match="Incorrect config"):
        PacQuery(model=cart, effect=parse_predicate(effect))


def test_union_settles_existence(cart, cart_query):
    """
    Test that the union of eligible states is a cause with a null counterfactual.

    """
    report = cause_exists(cart_query)
    assert report.cause_names == ("s1", "s2", "s3", "s4", "s5")
    assert report.mode == "concrete(union)"
    assert (report.p_aw, report.p_cw) == (Fraction(99, 200), 0)


def test_no_set_is_a_cause(cart):
    q = PacQuery(
        model=cart,
        effect=parse_predicate("halt"),
        root_policy="explicit",
        roots=("s3",),
    )
    assert discover(q) is None
    assert cause_exists(q) is None
