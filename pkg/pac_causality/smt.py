"""
SMT-LIB v2 helpers shared by the concrete and abstract exports, and the
decoder turning a solver's model back into a verified cause.

"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedInput


class SmtDecodeError(ValueError):
    pass


class VerificationMismatchError(RuntimeError):
    def __init__(self, cause: list, refutation):
        self.cause = cause
        self.refutation = refutation
        super().__init__(
            f"solver model selects {cause}, which internal checking refutes ({refutation.reason})"
        )


@dataclass(frozen=True)
class SmtInstance:
    """
    A self-contained SMT-LIB v2 instance.

    Parameters:
    -----------
    text: str
        Declarations, assertions, ``(check-sat)`` and ``(get-model)``.
    manifest: tuple of (str, str)
        SMT symbol to meaning, also emitted as comment lines in `text`.
    state_names: tuple of str
        Name of the state behind each ``f_s<i>`` selector.
    kind: str
        "concrete" or "abstract"; selects the checker used on decoding.
    query: PacQuery or AbstractPacQuery
        The exported query, used to re-verify decoded causes.

    """

    text: str
    manifest: tuple
    state_names: tuple
    kind: str
    query: object = field(default=None, compare=False, repr=False)


def rational(q: Fraction) -> str:
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"(/ {q.numerator} {q.denominator})"


def scaled(p: Fraction, term: str) -> str:
    return term if p == 1 else f"(* {rational(p)} {term})"


def total(terms: Iterable[str]) -> str:
    terms = list(terms)
    if not terms:
        return "0"
    if len(terms) == 1:
        return terms[0]
    return f"(+ {' '.join(terms)})"


def conjoin(terms: Iterable[str]) -> str:
    terms = list(terms)
    if not terms:
        return "true"
    if len(terms) == 1:
        return terms[0]
    return f"(and {' '.join(terms)})"


def disjoin(terms: Iterable[str]) -> str:
    terms = list(terms)
    if not terms:
        return "false"
    if len(terms) == 1:
        return terms[0]
    return f"(or {' '.join(terms)})"


def cardinality_bound(selectors: list[str], bound: Optional[int]) -> list[str]:
    """
    At least one selector, and at most `bound` of them when a bound is given.

    """
    lines = [f"(assert {disjoin(selectors)})"]
    if bound is not None and selectors:
        counted = total(f"(ite {f} 1 0)" for f in selectors)
        lines.append(f"(assert (<= {counted} {bound}))")
    return lines


def root_condition(
    roots: Sequence[int],
    via: Callable[[int], str],
    counterfactual: Callable[[int], str],
    agreement: Callable[[int, int], str],
) -> str:
    """
    Some actual root σ has a positive effect-via-cause value that exceeds the
    counterfactual value of every root agreeing with σ.

    """
    disjuncts = []
    for sigma in roots:
        parts = [f"(> {via(sigma)} 0)"]
        for other in roots:
            parts.append(
                f"(=> {agreement(sigma, other)} (> {via(sigma)} {counterfactual(other)}))"
            )
        disjuncts.append(conjoin(parts))
    return disjoin(disjuncts)


def selection(domain: Sequence[int], members: frozenset) -> str:
    """
    The selectors over `domain` pick exactly `members`.

    """
    return conjoin(f"f_s{i}" if i in members else f"(not f_s{i})" for i in domain)


def search_order(
    domain: Sequence[int], candidate_sets: Sequence[frozenset], closed: bool = False
) -> list[str]:
    """
    Selecting candidate k requires every earlier candidate to be invalid, so
    that the only models select the first valid candidate in search order.

    ``valid_c<j>`` must be bound to the validity of candidate j. With `closed`,
    the selection is also restricted to the listed candidates.

    """
    picks = [selection(domain, members) for members in candidate_sets]
    lines = []
    if closed:
        lines.append(f"(assert {disjoin(picks)})")
    for k, pick in enumerate(picks[1:], start=1):
        earlier = disjoin(f"valid_c{j}" for j in range(k))
        lines.append(f"(assert (=> {pick} (not {earlier})))")
    return lines


def render_instance(
    title: list[str],
    manifest: list[tuple],
    declarations: list[str],
    assertions: list[str],
) -> str:
    lines = [f"; {line}" for line in title]
    lines.append("; manifest")
    lines.extend(f"; {symbol} <-> {meaning}" for symbol, meaning in manifest)
    lines.append("(set-logic QF_LRA)")
    lines.extend(declarations)
    lines.extend(assertions)
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"


_ANSWER_GRAMMAR = r"""
    start: sexpr*

    ?sexpr: SYMBOL -> atom
          | "(" sexpr* ")" -> group

    SYMBOL: /\|[^|]*\||[^\s()|;]+/
    COMMENT: /;[^\n]*/

    %import common.WS
    %ignore WS
    %ignore COMMENT
"""


@v_args(inline=True)
class _AnswerBuilder(Transformer):
    def start(self, *items):
        return list(items)

    def atom(self, token):
        return str(token)

    def group(self, *items):
        return list(items)


_answer_parser = Lark(_ANSWER_GRAMMAR, parser="lalr", transformer=_AnswerBuilder())


def parse_answer(output: str) -> list:
    """
    Parse solver output into nested lists of symbols.

    """
    try:
        return _answer_parser.parse(output)
    except UnexpectedInput as e:
        raise SmtDecodeError(
            f"malformed solver output near line {max(e.line, 1)}, column {max(e.column, 1)}"
        ) from e


def _selector_values(definitions: list) -> dict:
    if definitions[:1] == ["model"]:
        definitions = definitions[1:]
    values = {}
    for entry in definitions:
        if not (isinstance(entry, list) and len(entry) == 5 and entry[0] == "define-fun"):
            raise SmtDecodeError(f"malformed model entry {entry!r}")
        name, params, sort, value = entry[1:]
        if not (isinstance(name, str) and name.startswith("f_s") and name[3:].isdigit()):
            continue
        if params != [] or sort != "Bool" or value not in ("true", "false"):
            raise SmtDecodeError(f"selector {name} is not a Bool constant")
        values[int(name[3:])] = value == "true"
    return values


def decode_smt_model(instance: SmtInstance, output: str):
    """
    Read the selector valuation of a solver answer and re-verify it internally.

    Parameters:
    -----------
    instance: SmtInstance
        The exported instance.
    output: str
        The solver's answer to ``(check-sat)`` followed by ``(get-model)``.

    Returns:
    --------
    CauseReport or None
        None when the solver answers ``unsat``.

    """
    items = parse_answer(output)
    if not items:
        raise SmtDecodeError("empty solver output")
    verdict = items[0]
    if verdict == "unsat":
        return None
    if verdict != "sat":
        raise SmtDecodeError(f"unexpected solver verdict {verdict!r}")

    values = {}
    for definitions in items[1:]:
        if not isinstance(definitions, list):
            raise SmtDecodeError(f"unexpected symbol {definitions!r} after the verdict")
        values.update(_selector_values(definitions))
    if not values:
        raise SmtDecodeError("no selector values in the solver model")
    unknown = [i for i in values if i >= len(instance.state_names)]
    if unknown:
        raise SmtDecodeError(f"selector f_s{min(unknown)} is not part of the instance")
    selected = sorted(i for i, chosen in values.items() if chosen)
    if not selected:
        raise SmtDecodeError("solver model selects no state")

    if instance.kind == "abstract":
        from .abstract_check import check_cause_abs as check
    else:
        from .concrete import check_cause as check
    result = check(instance.query, frozenset(selected))
    if not result.confirmed:
        raise VerificationMismatchError(
            [instance.state_names[i] for i in selected], result
        )
    return result
