"""
Random DTMC generation, a brute-force path oracle, and the concrete versus
abstraction-refinement timing harness.

"""

import itertools
import json
import logging
import multiprocessing
import time
import traceback

from dataclasses import dataclass, fields
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .abstract_check import AbstractPacQuery
from .abstraction import abstract
from .concrete import CauseReport, PacQuery, cause_exists, discover
from .config import (
    BENCH_TIMEOUT,
    DEFAULT_MAX_ROUNDS,
    DEFAULT_SEED,
    DEFAULT_SPLIT_RATIO,
    MAX_PATHS,
)
from .model import HALT, Dtmc, State
from .predicates import describe_states, parse_predicate, parse_predicate_set
from .reach import PathGuardExceeded
from .refine import run


logger = logging.getLogger("Bench")

FAIL = "fail"
CONTINGENCY = "w"
MAX_LISTED_CAUSE_STATES = 4


class GenerationBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenSpec:
    """
    Parameters of the random DTMC generator.

    Parameters:
    -----------
    seed: int
        Defaults to PAC_SEED.
    state_budget: int
        Maximum number of states.
    max_depth: int
        Number of expansion layers below the root.
    kmin, kmax: int
        Range of the number of successors drawn per state.
    n_vars: int
        Number of state variables: pos, vel, act, then x4, x5, ...
    noise: float
        Amplitude of the uniform perturbation of vel and of the extra variables.
    velocity_gain: float
        Effect of the action on the velocity.
    resolution: int
        Values are rounded to multiples of 1/resolution.
    effect_rule: str
        Predicate labelling states with ``fail``.
    contingency_rule: str, optional
        Predicate labelling states with ``w``.
    on_budget: str
        "truncate" closes the frontier when the budget is reached, "error" raises.

    """

    seed: int = DEFAULT_SEED
    state_budget: int = 50
    max_depth: int = 6
    kmin: int = 1
    kmax: int = 3
    n_vars: int = 3
    noise: float = 0.02
    velocity_gain: float = 0.01
    resolution: int = 100
    effect_rule: str = "pos < 0 && halt"
    contingency_rule: Optional[str] = None
    on_budget: str = "truncate"

    def __post_init__(self):
        errors = self.verify_config()
        if errors:
            raise ValueError(f"Incorrect config for {self.__class__.__name__}: {errors}")

    def verify_config(self) -> list[str]:
        errors = []
        if self.kmin < 1:
            errors.append("kmin must be at least 1")
        if self.kmax < self.kmin:
            errors.append("kmax must be at least kmin")
        if self.state_budget < 1:
            errors.append("state_budget must be positive")
        if self.max_depth < 1:
            errors.append("max_depth must be positive")
        if self.n_vars < 3:
            errors.append("n_vars must be at least 3 (pos, vel, act)")
        if self.noise < 0:
            errors.append("noise must be non-negative")
        if self.resolution < 1:
            errors.append("resolution must be positive")
        if self.on_budget not in ("truncate", "error"):
            errors.append("on_budget must be 'truncate' or 'error'")
        for rule in (self.effect_rule, self.contingency_rule):
            if rule is not None:
                try:
                    parse_predicate(rule)
                except ValueError as e:
                    errors.append(str(e))
        return errors

    @classmethod
    def from_text(cls, text: str, **overrides) -> "GenSpec":
        """
        Read ``key = value`` lines; ``#`` starts a comment.

        """
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {number}: expected key = value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {number}: unknown key {key!r}")
            if types[key] in (int, "int"):
                values[key] = int(value)
            elif types[key] in (float, "float"):
                values[key] = float(value)
            elif value.lower() == "none":
                values[key] = None
            else:
                values[key] = value
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "GenSpec":
        with open(path) as f:
            return cls.from_text(f.read(), **overrides)

    @property
    def variables(self) -> tuple:
        return ("pos", "vel", "act") + tuple(f"x{i}" for i in range(4, self.n_vars + 1))


def generate(spec: GenSpec) -> Dtmc:
    """
    Build a layered random DTMC following a noisy kinematic update.

    Successors of a state move by pos += vel and vel += act * velocity_gain +
    noise, with a fresh action in {-1, 0, 1}. Transition probabilities are
    sampled weights normalized exactly. Successors with equal valuations in
    the same layer are merged.

    """
    rng = np.random.RandomState(spec.seed)
    variables = spec.variables
    resolution = spec.resolution

    def quantize(x: float) -> Fraction:
        return Fraction(int(round(x * resolution)), resolution)

    def action() -> Fraction:
        return Fraction(int(rng.choice([-1, 0, 1])))

    root = [
        quantize(rng.uniform(-0.05, 0.05)),
        quantize(rng.uniform(-0.02, 0.02)),
        action(),
    ] + [quantize(rng.uniform(-1, 1)) for _ in variables[3:]]

    valuations = [tuple(root)]
    edges = {}
    frontier = [0]
    exhausted = False
    for _ in range(spec.max_depth):
        layer = {}
        next_frontier = []
        for s in frontier:
            k = int(rng.randint(spec.kmin, spec.kmax + 1))
            if len(valuations) + k > spec.state_budget:
                if spec.on_budget == "error":
                    raise GenerationBudgetError(
                        f"expansion needs more than {spec.state_budget} states (seed {spec.seed})"
                    )
                exhausted = True
                break
            pos, vel, act = valuations[s][:3]
            weights = {}
            for _ in range(k):
                noise = quantize(rng.uniform(-spec.noise, spec.noise))
                child = [
                    pos + vel,
                    quantize(float(vel + act * Fraction(spec.velocity_gain))) + noise,
                    action(),
                ] + [
                    x + quantize(rng.uniform(-spec.noise, spec.noise))
                    for x in valuations[s][3:]
                ]
                child = tuple(child)
                if child not in layer:
                    layer[child] = len(valuations)
                    valuations.append(child)
                    next_frontier.append(layer[child])
                target = layer[child]
                weight = max(1, int(round(rng.uniform(0, 1) * 1000)))
                weights[target] = weights.get(target, 0) + weight
            total = sum(weights.values())
            for target, weight in weights.items():
                edges[(s, target)] = Fraction(weight, total)
        frontier = next_frontier
        if exhausted or not frontier:
            break

    expanded = {s for s, _ in edges}
    leaves = [s for s in range(len(valuations)) if s not in expanded]
    for s in leaves:
        edges[(s, s)] = Fraction(1)

    effect = parse_predicate(spec.effect_rule)
    contingency = (
        parse_predicate(spec.contingency_rule) if spec.contingency_rule else None
    )
    propositions = frozenset([HALT, FAIL, CONTINGENCY])
    leaf_set = set(leaves)
    states = []
    for i, values in enumerate(valuations):
        labels = {HALT} if i in leaf_set else set()
        provisional = State(i, f"s{i}", dict(zip(variables, values)), frozenset(labels))
        if effect.evaluate(provisional, propositions):
            labels.add(FAIL)
        if contingency is not None and contingency.evaluate(provisional, propositions):
            labels.add(CONTINGENCY)
        states.append((f"s{i}", values, labels))

    m = Dtmc.build(
        variables,
        states,
        [(f"s{s}", f"s{t}", p) for (s, t), p in sorted(edges.items())],
        initial=["s0"],
        propositions=[FAIL, CONTINGENCY],
    )
    logger.debug(f"Generated {m.n_states} states (seed {spec.seed})")
    return m


# Brute-force oracle


def _paths_from(m: Dtmc, s: int, limit: int) -> list:
    paths = []
    stack = [((s,), Fraction(1))]
    while stack:
        path, probability = stack.pop()
        last = path[-1]
        if m.is_absorbing(last) or not m.transitions[last]:
            paths.append((path, probability))
            if len(paths) > limit:
                raise PathGuardExceeded(limit)
            continue
        for t, p in m.transitions[last]:
            stack.append((path + (t,), probability * p))
    return paths


def _first_in(path: tuple, states: frozenset) -> Optional[int]:
    return next((i for i, s in enumerate(path) if s in states), None)


def oracle_discover(m: Dtmc, q: PacQuery, limit: int = MAX_PATHS) -> Optional[CauseReport]:
    """
    Cause discovery by summing the masses of explicitly enumerated paths.

    Shares no code with the reachability recursions; used to cross-check them.

    """
    if q.candidate_policy == "template":
        raise ValueError("the oracle supports 'single' and 'subsets' candidates")
    E = frozenset(m.satisfying_set(q.effect))
    roots = sorted(q.root_states)
    paths = {s: _paths_from(m, s, limit) for s in range(m.n_states)}

    def mass(s, indicator):
        return sum((p for path, p in paths[s] if indicator(path)), Fraction(0))

    def via(s, C):
        def indicator(path):
            first = _first_in(path, C | E)
            if first is None or path[first] not in C:
                return False
            return _first_in(path[first:], E) is not None

        return mass(s, indicator)

    def counterfactual(s, C):
        def indicator(path):
            first = _first_in(path, C | E)
            return first is not None and path[first] in E and path[first] not in C

        return mass(s, indicator)

    predecessors = {s: [] for s in range(m.n_states)}
    for s in range(m.n_states):
        for t, _ in m.transitions[s]:
            if t != s:
                predecessors[t].append(s)

    @lru_cache(maxsize=None)
    def depth(s):
        return 1 + max((depth(p) for p in predecessors[s]), default=-1)

    signature = [
        tuple(w.evaluate(state, m.ap) for w in q.contingencies) for state in m.states
    ]

    def eq(s, t):
        return int(signature[s] == signature[t])

    def row(s):
        return () if m.is_absorbing(s) else m.transitions[s]

    def st(s):
        return sum((p for t, p in m.transitions[s] if eq(s, t)), Fraction(0))

    @lru_cache(maxsize=None)
    def stutter_until_equal(partner, s):
        if eq(partner, s):
            return Fraction(1)
        if m.is_absorbing(s) or st(s) == 0:
            return Fraction(0)
        return st(s) * sum(
            (p * stutter_until_equal(partner, t) for t, p in row(s)), Fraction(0)
        )

    def directed(s, t):
        neq = sum(
            (p * r * eq(x, y) for x, p in m.transitions[s] for y, r in m.transitions[t]),
            Fraction(0),
        )
        return eq(s, t) <= neq + st(s) + stutter_until_equal(s, t)

    def agrees(s, t):
        if not q.contingencies:
            return True
        if q.se_mode == "trace":
            def traces(x):
                collapsed = set()
                for path, _ in paths[x]:
                    trace = []
                    for y in path:
                        if not trace or trace[-1] != signature[y]:
                            trace.append(signature[y])
                    collapsed.add(tuple(trace))
                return collapsed

            left, right = traces(s), traces(t)
            return len(left) == 1 and left == right
        return directed(s, t) and directed(t, s)

    eligible = [
        s
        for s in range(m.n_states)
        if s not in E
        and s not in q.root_states
        and mass(s, lambda path: _first_in(path, E) is not None) > 0
    ]
    eligible.sort(key=lambda s: (depth(s), s))
    largest = 1 if q.candidate_policy == "single" else q.max_subset_size

    for size in range(1, largest + 1):
        for combination in itertools.combinations(eligible, size):
            C = frozenset(combination)
            for sigma in roots:
                p_aw = via(sigma, C)
                if p_aw <= 0:
                    continue
                compatible = [r for r in roots if agrees(sigma, r)]
                cf = {r: counterfactual(r, C) for r in compatible}
                if all(p_aw > cf[r] for r in compatible):
                    binding = (
                        max(compatible, key=lambda r: (cf[r], -r)) if compatible else None
                    )
                    return CauseReport(
                        cause=C,
                        cause_names=tuple(m.names(C)),
                        predicate=describe_states(m, C),
                        root=m.states[sigma].name,
                        p_aw=p_aw,
                        counter_root=None if binding is None else m.states[binding].name,
                        p_cw=None if binding is None else cf[binding],
                        mode="oracle",
                    )
    return None


# Timing harness


@dataclass(frozen=True)
class BenchQuery:
    """
    The query posed to every generated model.

    Both pipelines decide whether any set of states is a cause. Each first
    searches its own candidates (single states, or refined abstract states
    within `max_rounds`) and, when that search comes up empty, settles the
    question on the union of all eligible states.

    """

    effect: str = FAIL
    predicates: str = f"{FAIL}; {HALT}; vel >= 0"
    contingencies: tuple = ()
    alpha: Fraction = DEFAULT_SPLIT_RATIO
    max_rounds: Optional[int] = DEFAULT_MAX_ROUNDS
    timeout: Optional[float] = BENCH_TIMEOUT


def _names(report) -> str:
    if report is None:
        return "-"
    if len(report.cause_names) > MAX_LISTED_CAUSE_STATES:
        return f"{report.cause_names[0]},... ({len(report.cause_names)} states)"
    return ",".join(report.cause_names)


def _run_concrete(spec: GenSpec, template: BenchQuery) -> dict:
    m = generate(spec)
    start = time.perf_counter()
    q = PacQuery(
        model=m,
        effect=parse_predicate(template.effect),
        contingencies=tuple(parse_predicate(w) for w in template.contingencies),
    )
    report = discover(q) or cause_exists(q)
    return {
        "size": m.n_states,
        "seconds": time.perf_counter() - start,
        "cause": _names(report),
    }


def _run_abstraction(spec: GenSpec, template: BenchQuery) -> dict:
    m = generate(spec)
    start = time.perf_counter()
    contingencies = tuple(parse_predicate(w) for w in template.contingencies)
    a = abstract(
        m,
        parse_predicate_set(template.predicates),
        mode="w-preserving" if contingencies else "plain",
        contingencies=contingencies,
    )
    q = AbstractPacQuery(
        abstraction=a,
        effect=parse_predicate(template.effect),
        contingencies=contingencies,
    )
    result = run(q, template.alpha, template.max_rounds)
    report = result.report or cause_exists(q.concrete_query())
    return {
        "size": m.n_states,
        "seconds": time.perf_counter() - start,
        "cause": _names(report),
        "rounds": len(result.trace),
    }


def _warm_up() -> None:
    """
    Run one small discovery so that imports and caches are loaded before timing.

    """
    from .data import load_example

    m = load_example("cart")
    discover(PacQuery(model=m, effect=parse_predicate("pos < 0.6 && halt")))


def _run_case(spec, template, pool) -> tuple:
    """
    Run both pipelines on one model. Returns (concrete, abstraction, error).

    """
    if pool is None:
        return _run_concrete(spec, template), _run_abstraction(spec, template), None
    pending = [
        pool.apply_async(_run_concrete, (spec, template)),
        pool.apply_async(_run_abstraction, (spec, template)),
    ]
    outcomes = []
    error = None
    for name, result in zip(("concrete", "abstraction"), pending):
        try:
            outcomes.append(result.get(template.timeout))
        except multiprocessing.TimeoutError:
            logger.error(f"Seed {spec.seed}: {name} pipeline timed out")
            outcomes.append(None)
            error = f"{name} timeout after {template.timeout}s"
    return outcomes[0], outcomes[1], error


def compare(
    specs: Sequence[GenSpec],
    template: BenchQuery = BenchQuery(),
    jobs: int = 1,
) -> "BenchReport":
    """
    Time concrete discovery against abstraction refinement on generated models.

    Parameters:
    -----------
    specs: list of GenSpec
        One generated model per spec.
    template: BenchQuery
        The query asked of every model.
    jobs: int
        Worker processes. With one job and no timeout, cases run inline.

    Returns:
    --------
    BenchReport

    """
    logger.info(f"Comparing pipelines on {len(specs)} generated models")
    inline = jobs <= 1 and template.timeout is None
    pool = None
    if inline:
        _warm_up()
    else:
        pool = multiprocessing.Pool(processes=max(2, jobs), initializer=_warm_up)

    rows = []
    try:
        for case, spec in enumerate(specs, start=1):
            row = {
                "case": case,
                "seed": spec.seed,
                "size": None,
                "concrete_s": None,
                "abstraction_s": None,
                "improvement_pct": None,
                "concrete_cause": None,
                "abstraction_cause": None,
                "agreement": None,
                "rounds": None,
                "error": "",
            }
            try:
                concrete, abstraction, error = _run_case(spec, template, pool)
                if error is not None:
                    # A timed-out worker keeps running; start from a fresh pool.
                    pool.terminate()
                    pool = multiprocessing.Pool(
                        processes=max(2, jobs), initializer=_warm_up
                    )
                    row["error"] = error
                if concrete is not None:
                    row.update(
                        size=concrete["size"],
                        concrete_s=concrete["seconds"],
                        concrete_cause=concrete["cause"],
                    )
                if abstraction is not None:
                    row.update(
                        size=abstraction["size"],
                        abstraction_s=abstraction["seconds"],
                        abstraction_cause=abstraction["cause"],
                        rounds=abstraction["rounds"],
                    )
                if concrete is not None and abstraction is not None:
                    # Both pipelines settle whether some set of states is a cause.
                    row["agreement"] = (concrete["cause"] == "-") == (
                        abstraction["cause"] == "-"
                    )
                    if concrete["seconds"] > 0:
                        row["improvement_pct"] = 100 * (
                            1 - abstraction["seconds"] / concrete["seconds"]
                        )
            except Exception as e:
                logger.error(f"Error on bench case {case} - Seed {spec.seed}: {e}")
                logger.error(traceback.format_exc())
                row["error"] = str(e)
            rows.append(row)
    finally:
        if pool is not None:
            pool.terminate()
            pool.join()

    return BenchReport(pd.DataFrame(rows, columns=BenchReport.COLUMNS))


@dataclass
class BenchReport:
    frame: pd.DataFrame

    COLUMNS = [
        "case",
        "seed",
        "size",
        "concrete_s",
        "abstraction_s",
        "improvement_pct",
        "concrete_cause",
        "abstraction_cause",
        "agreement",
        "rounds",
        "error",
    ]
    TIMES = ["concrete_s", "abstraction_s", "improvement_pct"]

    def _visible(self, omit_times: bool) -> pd.DataFrame:
        frame = self.frame
        if omit_times:
            frame = frame.drop(columns=self.TIMES)
        return frame

    def render(self, omit_times: bool = True) -> str:
        frame = self._visible(omit_times).copy()
        for column in self.TIMES:
            if column in frame:
                digits = 1 if column == "improvement_pct" else 3
                frame[column] = frame[column].map(
                    lambda x: "-" if x is None or pd.isna(x) else f"{x:.{digits}f}"
                )
        frame = frame.fillna("-")
        return frame.to_string(index=False) + "\n"

    def to_records(self, omit_times: bool = True) -> str:
        frame = self._visible(omit_times)
        lines = []
        for record in frame.to_dict(orient="records"):
            clean = {
                key: (None if value is None or (isinstance(value, float) and np.isnan(value)) else value)
                for key, value in record.items()
            }
            lines.append(json.dumps(clean, sort_keys=True, default=_json_default))
        return "".join(line + "\n" for line in lines)

    @property
    def agreement_rate(self) -> float:
        done = self.frame["agreement"].dropna()
        return float(done.astype(bool).mean()) if len(done) else float("nan")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    return str(value)


__all__ = [
    "BenchQuery",
    "BenchReport",
    "GenSpec",
    "GenerationBudgetError",
    "compare",
    "generate",
    "oracle_discover",
]
