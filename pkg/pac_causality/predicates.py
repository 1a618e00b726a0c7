"""
Boolean state predicates over variables and atomic propositions.

Predicates are small immutable expression trees. Atomic propositions double
as 0/1 variables, so the contingency set W, the effect and the abstraction
predicates all share a single evaluation mechanism.

"""

import operator

from abc import ABC, abstractmethod
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedInput, VisitError


class PredicateSyntaxError(ValueError):
    def __init__(self, text: str, line: int, column: int, message: str):
        self.text = text
        self.line = line
        self.column = column
        super().__init__(f"{message} at line {line}, column {column}: {text!r}")


class UnboundVariableError(KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(name)

    def __str__(self) -> str:
        return f"unbound variable or proposition '{self.name}'"


def format_rational(q: Fraction) -> str:
    """
    Render an exact rational as a finite decimal when one exists, else as a/b.

    """
    q = Fraction(q)
    denominator = q.denominator
    twos = fives = 0
    while denominator % 2 == 0:
        denominator //= 2
        twos += 1
    while denominator % 5 == 0:
        denominator //= 5
        fives += 1
    if denominator != 1:
        return f"{q.numerator}/{q.denominator}"
    if q.denominator == 1:
        return str(q.numerator)
    digits = max(twos, fives)
    scaled = abs(q.numerator) * (10**digits // q.denominator)
    sign = "-" if q < 0 else ""
    text = str(scaled).rjust(digits + 1, "0")
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


_COMPARATORS = {
    "<": operator.lt,
    "<=": operator.le,
    "=": operator.eq,
    ">=": operator.ge,
    ">": operator.gt,
}
_MIRRORED = {"<": ">", "<=": ">=", "=": "=", ">=": "<=", ">": "<"}
_CANONICAL_OPS = {"==": "=", "≤": "<=", "≥": ">="}


class Predicate(ABC):
    """
    A boolean expression over state variables and atomic propositions.

    """

    @abstractmethod
    def evaluate(self, state, propositions: Optional[frozenset] = None) -> bool:
        """
        Evaluate the predicate on a state.

        Parameters:
        -----------
        state: State
            Any object with a `valuation` mapping and a `labels` set.
        propositions: frozenset, optional
            The atomic propositions known to the model. When given, a name that
            is neither a variable nor a known proposition is unbound. When None,
            any unknown name is read as an (absent) proposition.

        """
        pass

    @abstractmethod
    def names(self) -> frozenset:
        pass

    def __call__(self, state, propositions: Optional[frozenset] = None) -> bool:
        return self.evaluate(state, propositions)

    def __and__(self, other: "Predicate") -> "Predicate":
        return conjunction([self, other])

    def __or__(self, other: "Predicate") -> "Predicate":
        return Or((self, other))

    def __invert__(self) -> "Predicate":
        return Not(self)


def _lookup(state, name: str, propositions: Optional[frozenset]) -> Fraction:
    if name in state.valuation:
        return state.valuation[name]
    if propositions is None or name in propositions:
        return Fraction(int(name in state.labels))
    raise UnboundVariableError(name)


@dataclass(frozen=True)
class TruePredicate(Predicate):
    def evaluate(self, state, propositions=None) -> bool:
        return True

    def names(self) -> frozenset:
        return frozenset()

    def __str__(self) -> str:
        return "true"


@dataclass(frozen=True)
class FalsePredicate(Predicate):
    def evaluate(self, state, propositions=None) -> bool:
        return False

    def names(self) -> frozenset:
        return frozenset()

    def __str__(self) -> str:
        return "false"


TRUE = TruePredicate()
FALSE = FalsePredicate()


@dataclass(frozen=True)
class Comparison(Predicate):
    """
    Atom of the form: name CMP constant

    """

    name: str
    op: str
    constant: Fraction

    def __post_init__(self):
        if self.op not in _COMPARATORS:
            raise ValueError(f"Unknown comparison operator {self.op!r}")

    def evaluate(self, state, propositions=None) -> bool:
        value = _lookup(state, self.name, propositions)
        return _COMPARATORS[self.op](value, self.constant)

    def names(self) -> frozenset:
        return frozenset([self.name])

    def __str__(self) -> str:
        return f"{self.name} {self.op} {format_rational(self.constant)}"


@dataclass(frozen=True)
class Proposition(Predicate):
    """
    Bare name: true when the proposition labels the state (or the variable is non-zero).

    """

    name: str

    def evaluate(self, state, propositions=None) -> bool:
        return _lookup(state, self.name, propositions) != 0

    def names(self) -> frozenset:
        return frozenset([self.name])

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class And(Predicate):
    operands: tuple

    def evaluate(self, state, propositions=None) -> bool:
        return all(p.evaluate(state, propositions) for p in self.operands)

    def names(self) -> frozenset:
        return frozenset().union(*(p.names() for p in self.operands))

    def __str__(self) -> str:
        return " && ".join(
            f"({p})" if isinstance(p, Or) else str(p) for p in self.operands
        )


@dataclass(frozen=True)
class Or(Predicate):
    operands: tuple

    def evaluate(self, state, propositions=None) -> bool:
        return any(p.evaluate(state, propositions) for p in self.operands)

    def names(self) -> frozenset:
        return frozenset().union(*(p.names() for p in self.operands))

    def __str__(self) -> str:
        return " || ".join(str(p) for p in self.operands)


@dataclass(frozen=True)
class Not(Predicate):
    operand: Predicate

    def evaluate(self, state, propositions=None) -> bool:
        return not self.operand.evaluate(state, propositions)

    def names(self) -> frozenset:
        return self.operand.names()

    def __str__(self) -> str:
        if isinstance(self.operand, (And, Or)):
            return f"!({self.operand})"
        return f"!{self.operand}"


def conjunction(predicates: Iterable[Predicate]) -> Predicate:
    """
    Flattened conjunction; the empty conjunction is TRUE.

    """
    operands = []
    for p in predicates:
        if isinstance(p, TruePredicate):
            continue
        operands.extend(p.operands if isinstance(p, And) else [p])
    if not operands:
        return TRUE
    if len(operands) == 1:
        return operands[0]
    return And(tuple(operands))


def disjunction(predicates: Iterable[Predicate]) -> Predicate:
    operands = []
    for p in predicates:
        if isinstance(p, FalsePredicate):
            continue
        operands.extend(p.operands if isinstance(p, Or) else [p])
    if not operands:
        return FALSE
    if len(operands) == 1:
        return operands[0]
    return Or(tuple(operands))


_GRAMMAR = r"""
    ?start: disj

    ?disj: conj
         | disj ("||" | "∨") conj -> or_

    ?conj: neg
         | conj ("&&" | "∧") neg -> and_

    ?neg: ("!" | "¬") neg -> not_
        | atom

    ?atom: "(" disj ")"
         | NAME CMP NUMBER -> comparison
         | NUMBER CMP NAME -> mirrored_comparison
         | NAME -> name

    CMP: "<=" | ">=" | "==" | "≤" | "≥" | "<" | ">" | "="
    NUMBER: /-?\d+(\.\d+)?(\/\d+)?/
    NAME: /[A-Za-z_][A-Za-z0-9_]*/

    %import common.WS
    %ignore WS
"""


@v_args(inline=True)
class _PredicateBuilder(Transformer):
    def or_(self, left, right):
        return disjunction([left, right])

    def and_(self, left, right):
        return conjunction([left, right])

    def not_(self, operand):
        return Not(operand)

    def comparison(self, name, op, number):
        op = _CANONICAL_OPS.get(str(op), str(op))
        return Comparison(str(name), op, Fraction(str(number)))

    def mirrored_comparison(self, number, op, name):
        op = _CANONICAL_OPS.get(str(op), str(op))
        return Comparison(str(name), _MIRRORED[op], Fraction(str(number)))

    def name(self, token):
        if token == "true":
            return TRUE
        if token == "false":
            return FALSE
        return Proposition(str(token))


_parser = Lark(_GRAMMAR, parser="lalr", transformer=_PredicateBuilder())


def parse_predicate(text: str) -> Predicate:
    """
    Parse a predicate such as ``pos < 0.6 && halt``.

    Comparisons use ``< <= = >= >``, connectives ``&& || !`` and parentheses.
    Constants are decimals or ``a/b``. Fails with the offending position.

    """
    if not text.strip():
        raise PredicateSyntaxError(text, 1, 1, "Empty predicate")
    try:
        return _parser.parse(text)
    except UnexpectedInput as e:
        line = e.line if e.line > 0 else 1
        column = e.column if e.column > 0 else len(text) + 1
        raise PredicateSyntaxError(text, line, column, "Unexpected input") from e
    except VisitError as e:
        raise PredicateSyntaxError(text, 1, 1, str(e.orig_exc)) from e
    except ZeroDivisionError as e:
        raise PredicateSyntaxError(text, 1, 1, "Zero denominator") from e


def parse_predicate_set(text: str) -> list[Predicate]:
    """
    Parse a ``;``-separated list of predicates, e.g. ``vel>=0.03;pos>=0.6``.

    """
    return [parse_predicate(part) for part in text.split(";") if part.strip()]


def describe_states(model, state_ids: Iterable[int]) -> Predicate:
    """
    Build a predicate characterizing exactly the given states of a model.

    The conjunction of the variable equalities shared by all the states is used
    when it is satisfied by those states only; otherwise the result is the
    disjunction of per-state valuation equalities.

    """
    ids = sorted(set(state_ids))
    if not ids:
        return FALSE
    states = [model.states[i] for i in ids]

    def valuation_of(state):
        return conjunction(
            Comparison(var, "=", state.valuation[var]) for var in model.variables
        )

    shared = [
        Comparison(var, "=", states[0].valuation[var])
        for var in model.variables
        if all(s.valuation[var] == states[0].valuation[var] for s in states)
    ]
    if shared:
        candidate = conjunction(shared)
        if model.satisfying_set(candidate) == frozenset(ids):
            return candidate
    return disjunction(valuation_of(s) for s in states)
