"""
The abstraction-refinement loop.

Each round runs abstract discovery; when no cause is found, the abstract state
with the widest effect-reachability interval is split and the loop continues
until a cause is found, the partition is finest, or the round limit is hit.

"""

import itertools
import json
import logging
import time

from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Optional

import pandas as pd

from .abstract_check import AbstractPacQuery, discover_abs, subgraph_queries
from .abstraction import Abstraction, AbstractState, refine_split
from .concrete import CauseReport, check_cause, discover
from .config import DEFAULT_MAX_ROUNDS, DEFAULT_SPLIT_RATIO
from .smt import VerificationMismatchError


logger = logging.getLogger("Refinement")


class FinestPartitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class RefinementRound:
    round: int
    n_states: int
    split_state: Optional[str]
    lo: Optional[Fraction]
    hi: Optional[Fraction]
    split_into: tuple
    outcome: str
    millis: int

    def to_record(self) -> dict:
        record = asdict(self)
        record["lo"] = None if self.lo is None else str(self.lo)
        record["hi"] = None if self.hi is None else str(self.hi)
        record["split_into"] = list(self.split_into)
        return record


@dataclass
class RefinementTrace:
    rounds: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rounds)

    def append(self, r: RefinementRound) -> None:
        logger.info(f"Round {r.round} took {r.millis} ms")
        self.rounds.append(r)

    def to_records(self, omit_times: bool = True) -> str:
        """
        One JSON object per round, keys sorted.

        """
        lines = []
        for r in self.rounds:
            record = r.to_record()
            if omit_times:
                del record["millis"]
            lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
        return "".join(line + "\n" for line in lines)

    def to_frame(self) -> pd.DataFrame:
        columns = list(RefinementRound.__dataclass_fields__)
        return pd.DataFrame([r.to_record() for r in self.rounds], columns=columns)


@dataclass(frozen=True)
class RefinementResult:
    report: Optional[CauseReport]
    trace: RefinementTrace
    abstraction: Abstraction

    @property
    def found(self) -> bool:
        return self.report is not None


def select_split_state(a: Abstraction, E_hat) -> AbstractState:
    """
    The non-singleton abstract state with the widest Pmin/Pmax interval of
    reaching the abstract effect, lowest index on ties.

    """
    candidates = [block for block in a.states if not block.singleton]
    if not candidates:
        raise FinestPartitionError("every abstract state is a singleton")
    interval = a.interval(E_hat)
    return max(candidates, key=lambda b: (interval.width(b.index), -b.index))


def _millis(start: float) -> int:
    return int(round((time.perf_counter() - start) * 1000))


def run(
    q: AbstractPacQuery,
    alpha: Fraction = DEFAULT_SPLIT_RATIO,
    max_rounds: Optional[int] = DEFAULT_MAX_ROUNDS,
    fallback_concrete: bool = False,
) -> RefinementResult:
    """
    Run abstract discovery and refinement until a cause is found or the loop is exhausted.

    Parameters:
    -----------
    q: AbstractPacQuery
        The query on the initial abstraction.
    alpha: Fraction
        Share of a split abstract state that stays grouped, in (0, 1].
    max_rounds: int or None
        Round limit; None runs until the partition is finest.
    fallback_concrete: bool
        On exhaustion, run concrete discovery instead of reporting no cause.

    Returns:
    --------
    RefinementResult
        The report (or None) with the per-round trace and the last abstraction.

    """
    alpha = Fraction(alpha)
    if not 0 < alpha <= 1:
        raise ValueError(f"Split ratio must lie in (0, 1], got {alpha}")
    if max_rounds is not None and max_rounds < 1:
        raise ValueError(f"max_rounds must be at least 1, got {max_rounds}")

    trace = RefinementTrace()
    rounds = itertools.count(1) if max_rounds is None else range(1, max_rounds + 1)
    for r in rounds:
        start = time.perf_counter()
        a = q.abstraction
        report = discover_abs(q)
        if report is not None:
            report = replace(report, mode=f"abstract(round {r})")
            recheck = check_cause(q.concrete_query(), report.cause)
            if not recheck.confirmed:
                raise VerificationMismatchError(list(report.cause_names), recheck)
            trace.append(
                RefinementRound(r, len(a.states), None, None, None, (), "cause", _millis(start))
            )
            logger.info(
                f"Round {r}: cause {', '.join(report.abstract_cause)} over {len(a.states)} abstract states"
            )
            return RefinementResult(report, trace, a)

        if a.finest:
            trace.append(
                RefinementRound(r, len(a.states), None, None, None, (), "finest", _millis(start))
            )
            logger.info(f"Round {r}: no cause and the partition is finest")
            break

        target = select_split_state(a, q.abstract_effect)
        lo, hi = q.interval[target.index]
        if max_rounds is not None and r == max_rounds:
            trace.append(
                RefinementRound(
                    r, len(a.states), target.name, lo, hi, (), "none", _millis(start)
                )
            )
            logger.info(f"Round {r}: no cause, round limit reached")
            break

        refined = refine_split(a, target, alpha, q.effect_states)
        split_into = tuple(
            block.name
            for block in refined.states
            if block.name == target.name or block.name.startswith(target.name + ",")
        )
        trace.append(
            RefinementRound(
                r, len(a.states), target.name, lo, hi, split_into, "split", _millis(start)
            )
        )
        logger.info(
            f"Round {r}: no cause, split {target.name} [{lo}, {hi}] into {len(split_into)} states"
        )
        q = q.with_abstraction(refined)

    if fallback_concrete:
        logger.info("Refinement exhausted, running concrete discovery")
        report = discover(q.concrete_query())
        if report is not None:
            report = replace(report, mode="concrete(fallback)")
        return RefinementResult(report, trace, q.abstraction)
    return RefinementResult(None, trace, q.abstraction)


def run_subgraphs(
    m,
    predicates,
    effect,
    contingencies,
    alpha: Fraction = DEFAULT_SPLIT_RATIO,
    max_rounds: Optional[int] = DEFAULT_MAX_ROUNDS,
    **query_options,
) -> list[tuple]:
    """
    Refine every stutter-equivalent subgraph in signature order.

    Returns (subgraph, RefinementResult) pairs up to and including the first
    subgraph where a cause is found.

    """
    results = []
    for sub, q in subgraph_queries(m, predicates, effect, contingencies, **query_options):
        result = run(q, alpha, max_rounds)
        results.append((sub, result))
        if result.found:
            break
    return results


__all__ = [
    "FinestPartitionError",
    "RefinementResult",
    "RefinementRound",
    "RefinementTrace",
    "run",
    "run_subgraphs",
    "select_split_state",
]
