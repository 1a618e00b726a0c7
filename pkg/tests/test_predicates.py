"""
Unit tests for the predicate language.

"""

from fractions import Fraction

import pytest

from pac_causality.predicates import (
    FALSE,
    TRUE,
    And,
    Comparison,
    Not,
    Or,
    PredicateSyntaxError,
    Proposition,
    UnboundVariableError,
    describe_states,
    format_rational,
    parse_predicate,
    parse_predicate_set,
)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("pos < 0.6", Comparison("pos", "<", Fraction(3, 5))),
        ("vel>=0.03", Comparison("vel", ">=", Fraction(3, 100))),
        ("x == 1/3", Comparison("x", "=", Fraction(1, 3))),
        ("0.5 < pos", Comparison("pos", ">", Fraction(1, 2))),
        ("x ≤ -2", Comparison("x", "<=", Fraction(-2))),
        ("halt", Proposition("halt")),
        ("true", TRUE),
        ("false", FALSE),
    ],
)
def test_parse_atoms(text, expected):
    assert parse_predicate(text) == expected


def test_precedence():
    """
    Test that negation binds tighter than conjunction, which binds tighter than disjunction.

    """
    p = parse_predicate("a || !b && c")
    assert p == Or((Proposition("a"), And((Not(Proposition("b")), Proposition("c")))))
    q = parse_predicate("(a || b) && c")
    assert q == And((Or((Proposition("a"), Proposition("b"))), Proposition("c")))


def test_conjunctions_are_flattened():
    p = parse_predicate("a && b && c")
    assert p == And((Proposition("a"), Proposition("b"), Proposition("c")))


@pytest.mark.parametrize(
    "text", ["pos < 0.6 && halt", "!(a || b)", "(a || b) && c", "x >= 1/3", "!halt"]
)
def test_printing_reparses(text):
    p = parse_predicate(text)
    assert parse_predicate(str(p)) == p


def test_evaluation(cart):
    effect = parse_predicate("pos < 0.6 && halt")
    assert cart.names(cart.satisfying_set(effect)) == ["s7", "s9"]
    assert cart.names(cart.satisfying_set(parse_predicate("vel >= 0.03"))) == [
        "s2",
        "s5",
        "s10",
    ]


def test_propositions_are_zero_one_variables(relay):
    """
    Test that a proposition compares like a 0/1 variable.

    """
    as_prop = relay.satisfying_set(parse_predicate("w"))
    as_var = relay.satisfying_set(parse_predicate("w = 1"))
    assert as_prop == as_var
    assert relay.names(as_prop) == ["s0", "s2", "s4", "s5", "s7", "s9"]


def test_unbound_name(cart):
    with pytest.raises(UnboundVariableError) as e:
        cart.satisfying_set(parse_predicate("speed > 0"))
    assert "speed" in str(e.value)


@pytest.mark.parametrize(
    "text, column",
    [
        ("pos << 1", 6),
        ("&& halt", 1),
        ("x > 1/0", 1),
    ],
)
def test_syntax_errors(text, column):
    with pytest.raises(PredicateSyntaxError) as e:
        parse_predicate(text)
    assert e.value.column == column


@pytest.mark.parametrize("text", ["   ", "pos < ", "a &&"])
def test_incomplete_predicate(text):
    with pytest.raises(PredicateSyntaxError):
        parse_predicate(text)


def test_predicate_set():
    preds = parse_predicate_set("vel>=0.03;pos>=0.6; ;pos>=0.4;pos>=0.3;")
    assert [str(p) for p in preds] == [
        "vel >= 0.03",
        "pos >= 0.6",
        "pos >= 0.4",
        "pos >= 0.3",
    ]


@pytest.mark.parametrize(
    "q, text",
    [
        (Fraction(3, 5), "0.6"),
        (Fraction(-1, 8), "-0.125"),
        (Fraction(1, 3), "1/3"),
        (Fraction(7), "7"),
        (Fraction(1, 100), "0.01"),
    ],
)
def test_format_rational(q, text):
    assert format_rational(q) == text


def test_describe_states(cart):
    """
    Test that described states are characterized exactly.

    """
    for ids in [{1}, {3, 4}, {6, 8}, {0, 10}]:
        p = describe_states(cart, ids)
        assert cart.satisfying_set(p) == frozenset(ids)
    assert describe_states(cart, []) == FALSE
