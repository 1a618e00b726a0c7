"""
Probabilistic actual cause discovery on the concrete DTMC.

A cause C of the effect E is confirmed at an actual-world root σ when the
probability of reaching C and then E is positive (PC1), and strictly larger
than the probability of reaching E while avoiding C from every counterfactual
root σ′ that agrees with σ on the contingency set W (PC2).

"""

import itertools
import logging
import multiprocessing

from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property, partial
from typing import Iterable, Iterator, Optional

from .config import DEFAULT_JOBS
from .model import Dtmc
from .predicates import (
    Comparison,
    Predicate,
    UnboundVariableError,
    conjunction,
    describe_states,
    format_rational,
)
from .reach import (
    prob_counterfactual,
    prob_effect_via_cause,
    prob_eventually,
    prob_first_visit,
    stutter_system,
)
from .smt import (
    SmtInstance,
    cardinality_bound,
    conjoin,
    decode_smt_model,
    rational,
    render_instance,
    root_condition,
    scaled,
    search_order,
    total,
)


logger = logging.getLogger("Concrete discovery")

ROOT_POLICIES = ("initial", "explicit", "all")
CANDIDATE_POLICIES = ("single", "subsets", "template")
SE_MODES = ("inequality", "trace")


@dataclass(frozen=True)
class Violation:
    root: str
    counter_root: Optional[str]
    p_aw: Fraction
    p_cw: Optional[Fraction]
    condition: str


@dataclass(frozen=True)
class Refutation:
    """
    Why a candidate cause is not an actual cause.

    `reason` is one of "cause-overlaps-effect", "cause-is-root", "pc1", "pc2"
    or "concretization-refuted".

    """

    cause_names: tuple
    reason: str
    violations: tuple = ()

    confirmed = False

    def render(self) -> str:
        lines = [f"refuted: {', '.join(self.cause_names)} ({self.reason})"]
        for v in self.violations:
            if v.condition == "pc1":
                lines.append(f"  root {v.root}: p_AW = {v.p_aw} (not positive)")
            else:
                lines.append(
                    f"  root {v.root}: p_AW = {v.p_aw} <= p_CW = {v.p_cw} at {v.counter_root}"
                )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CauseReport:
    """
    A confirmed cause with its witness roots and exact values.

    Parameters:
    -----------
    cause: frozenset of int
        Concrete state ids of the cause.
    cause_names: tuple of str
        Their names, sorted by id.
    predicate: Predicate
        A state predicate satisfied exactly by the cause states.
    root: str
        The actual-world root σ.
    p_aw: Fraction
        Probability of reaching the cause and then the effect from σ.
    counter_root: str or None
        The binding counterfactual root σ′ (largest p_CW among the roots
        agreeing with σ); None when no root agrees with σ.
    p_cw: Fraction or None
        Probability of reaching the effect while avoiding the cause from σ′.
    pc1: bool
        Whether p_aw > 0.
    mode: str
        "concrete", "concrete(union)", "abstract(round k)", "concrete(fallback)"
        or "oracle".
    abstract_cause: tuple of str
        Names of the abstract states forming the cause (abstract modes only).
    verification: CauseReport, optional
        The concrete confirmation of an abstract cause.

    """

    cause: frozenset
    cause_names: tuple
    predicate: Predicate
    root: str
    p_aw: Fraction
    counter_root: Optional[str]
    p_cw: Optional[Fraction]
    pc1: bool = True
    mode: str = "concrete"
    abstract_cause: tuple = ()
    verification: Optional["CauseReport"] = field(default=None, compare=False)

    confirmed = True

    @property
    def margin(self) -> Fraction:
        return self.p_aw - (self.p_cw or 0)

    def to_record(self) -> dict:
        record = {
            "cause": list(self.cause_names),
            "predicate": str(self.predicate),
            "root": self.root,
            "p_aw": str(self.p_aw),
            "counter_root": self.counter_root,
            "p_cw": None if self.p_cw is None else str(self.p_cw),
            "pc1": self.pc1,
            "mode": self.mode,
        }
        if self.abstract_cause:
            record["abstract_cause"] = list(self.abstract_cause)
        if self.verification is not None:
            record["verified_p_aw"] = str(self.verification.p_aw)
            record["verified_p_cw"] = (
                None
                if self.verification.p_cw is None
                else str(self.verification.p_cw)
            )
        return record

    def render(self) -> str:
        def value(q):
            return f"{q} ({format_rational(q)})" if q.denominator != 1 else str(q)

        lines = [f"cause: {', '.join(self.cause_names)}"]
        if self.abstract_cause:
            lines.append(f"abstract cause: {', '.join(self.abstract_cause)}")
        lines.append(f"predicate: {self.predicate}")
        lines.append(f"root: {self.root}")
        lines.append(f"p_AW: {value(self.p_aw)}")
        if self.counter_root is None:
            lines.append("p_CW: n/a (no agreeing counterfactual root)")
        else:
            lines.append(f"p_CW: {value(self.p_cw)} at {self.counter_root}")
        if self.verification is not None:
            v = self.verification
            cw = "n/a" if v.p_cw is None else value(v.p_cw)
            lines.append(f"verified: p_AW {value(v.p_aw)} > p_CW {cw}")
        lines.append(f"mode: {self.mode}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PacQuery:
    """
    A cause discovery problem on a concrete DTMC.

    Parameters:
    -----------
    model: Dtmc
    effect: Predicate
        The effect predicate φe.
    contingencies: tuple of Predicate
        The contingency set W.
    root_policy: str
        "initial" (the model's initial states), "explicit" (`roots`) or
        "all" (every state).
    roots: tuple of str
        Root names for the explicit policy.
    candidate_policy: str
        "single" (one state), "subsets" (up to `max_subset_size` states) or
        "template" (conjunctions of up to `max_subset_size` threshold atoms).
    se_mode: str
        Root agreement check, "inequality" or "trace" (see `reach.StutterSystem`).
    jobs: int
        Worker processes for candidate checks.

    """

    model: Dtmc
    effect: Predicate
    contingencies: tuple = ()
    root_policy: str = "initial"
    roots: tuple = ()
    candidate_policy: str = "single"
    max_subset_size: int = 2
    se_mode: str = "inequality"
    jobs: int = DEFAULT_JOBS

    def __post_init__(self):
        errors = self.verify_config()
        if errors:
            raise ValueError(f"Incorrect config for {self.__class__.__name__}: {errors}")

    def verify_config(self) -> list[str]:
        errors = []
        if self.root_policy not in ROOT_POLICIES:
            errors.append(f"root_policy must be one of {ROOT_POLICIES}")
        if self.root_policy == "explicit":
            if not self.roots:
                errors.append("explicit root policy needs at least one root")
            unknown = [r for r in self.roots if r not in self.model.index]
            if unknown:
                errors.append(f"unknown roots {unknown}")
        if self.candidate_policy not in CANDIDATE_POLICIES:
            errors.append(f"candidate_policy must be one of {CANDIDATE_POLICIES}")
        if self.max_subset_size < 1:
            errors.append("max_subset_size must be at least 1")
        if self.se_mode not in SE_MODES:
            errors.append(f"se_mode must be one of {SE_MODES}")
        try:
            if not self.model.satisfying_set(self.effect):
                errors.append(f"effect '{self.effect}' holds in no state")
            for w in self.contingencies:
                self.model.satisfying_set(w)
        except UnboundVariableError as e:
            errors.append(str(e))
        return errors

    @cached_property
    def effect_states(self) -> frozenset:
        return self.model.satisfying_set(self.effect)

    @cached_property
    def root_states(self) -> frozenset:
        if self.root_policy == "initial":
            return self.model.initial
        if self.root_policy == "explicit":
            return self.model.ids(self.roots)
        return frozenset(range(self.model.n_states))

    @cached_property
    def reach_effect(self):
        return prob_eventually(self.model, self.effect_states)

    @cached_property
    def stutter(self):
        return stutter_system(self.model, self.contingencies, self.se_mode)

    def eligible_states(self) -> list[int]:
        """
        Candidate cause states in search order: not effect, able to reach the
        effect, not a root; by topological depth, then id.

        """
        depths = self.model.depths
        eligible = [
            s
            for s in range(self.model.n_states)
            if s not in self.effect_states
            and self.reach_effect[s] > 0
            and s not in self.root_states
        ]
        return sorted(eligible, key=lambda s: (depths[s], s))


def _binding_counterfactual(compatible: list, values) -> Optional[int]:
    if not compatible:
        return None
    return max(compatible, key=lambda r: (values[r], -r))


def evaluate_roots(
    model,
    roots: frozenset,
    via,
    counterfactual,
    agrees,
) -> tuple:
    """
    Apply PC1 and PC2 at every root.

    Returns the first witness (σ, σ′) in root id order, or None with the list
    of violations.

    """
    ordered = sorted(roots)
    violations = []
    for sigma in ordered:
        name = model.states[sigma].name
        p_aw = via[sigma]
        if p_aw <= 0:
            violations.append(Violation(name, None, p_aw, None, "pc1"))
            continue
        compatible = [r for r in ordered if agrees(sigma, r)]
        failing = [r for r in compatible if not p_aw > counterfactual[r]]
        if not failing:
            binding = _binding_counterfactual(compatible, counterfactual)
            return (sigma, binding), []
        violations.extend(
            Violation(name, model.states[r].name, p_aw, counterfactual[r], "pc2")
            for r in failing
        )
    return None, violations


def _refutation_reason(violations: list) -> str:
    if violations and all(v.condition == "pc1" for v in violations):
        return "pc1"
    return "pc2"


def check_cause(q: PacQuery, C: Iterable[int]):
    """
    Check whether a set of concrete states is an actual cause of the effect.

    Parameters:
    -----------
    q: PacQuery
        The query.
    C: iterable of int
        Candidate cause state ids.

    Returns:
    --------
    CauseReport or Refutation

    """
    m = q.model
    C = frozenset(C)
    if not C:
        raise ValueError("Empty cause set")
    roots = q.root_states
    if not roots:
        raise ValueError("Empty root set")
    names = tuple(m.names(C))
    E = q.effect_states
    if C & E:
        logger.debug(f"Cause {names} overlaps the effect")
        return Refutation(names, "cause-overlaps-effect")
    if C <= roots:
        return Refutation(names, "cause-is-root")

    via = prob_effect_via_cause(m, C, E)
    counterfactual = prob_counterfactual(m, C, E)
    witness, violations = evaluate_roots(m, roots, via, counterfactual, q.stutter.holds)
    if witness is None:
        logger.debug(f"Refuted {names}: {violations}")
        return Refutation(names, _refutation_reason(violations), tuple(violations))
    sigma, binding = witness
    return CauseReport(
        cause=C,
        cause_names=names,
        predicate=describe_states(m, C),
        root=m.states[sigma].name,
        p_aw=via[sigma],
        counter_root=None if binding is None else m.states[binding].name,
        p_cw=None if binding is None else counterfactual[binding],
        pc1=True,
        mode="concrete",
    )


def _template_candidates(q: PacQuery, eligible: list) -> Iterator[tuple]:
    m = q.model
    atoms = []
    for var in m.variables:
        for value in sorted({m.states[s].valuation[var] for s in eligible}):
            atoms.append(Comparison(var, ">=", value))
            atoms.append(Comparison(var, "<=", value))
    seen = set()
    eligible_set = frozenset(eligible)
    for size in range(1, q.max_subset_size + 1):
        for combination in itertools.combinations(atoms, size):
            predicate = conjunction(combination)
            states = m.satisfying_set(predicate)
            if (
                not states
                or states in seen
                or states & q.effect_states
                or states & q.root_states
                or not states & eligible_set
            ):
                continue
            seen.add(states)
            yield states, predicate


def candidates(q: PacQuery) -> Iterator[tuple]:
    """
    Candidate causes in the deterministic search order, as (state set, predicate or None).

    Subsets are enumerated by size, then lexicographically in the order of
    `PacQuery.eligible_states`.

    """
    eligible = q.eligible_states()
    if q.candidate_policy == "template":
        yield from _template_candidates(q, eligible)
        return
    largest = 1 if q.candidate_policy == "single" else q.max_subset_size
    for size in range(1, largest + 1):
        for combination in itertools.combinations(eligible, size):
            yield frozenset(combination), None


def _check_candidate(check, q, candidate):
    states, predicate = candidate
    result = check(q, states)
    if result.confirmed and predicate is not None:
        result = replace(result, predicate=predicate)
    return result


def first_confirmed(check, q, candidate_iter, jobs: int):
    """
    The first confirmed candidate in order, checking in parallel when jobs > 1.

    """
    func = partial(_check_candidate, check, q)
    if jobs <= 1:
        for candidate in candidate_iter:
            result = func(candidate)
            if result.confirmed:
                return result
        return None
    with multiprocessing.Pool(processes=jobs) as pool:
        for result in pool.imap(func, candidate_iter, chunksize=8):
            if result.confirmed:
                return result
    return None


def discover(q: PacQuery) -> Optional[CauseReport]:
    """
    Search the candidates in order and return the first confirmed cause, if any.

    """
    logger.info(
        f"Discovering causes of '{q.effect}' over {q.model.n_states} states "
        f"({q.candidate_policy} candidates, {len(q.root_states)} roots)"
    )
    if q.candidate_policy == "single":
        candidate_iter = _screened_singletons(q)
    else:
        candidate_iter = candidates(q)
    report = first_confirmed(check_cause, q, candidate_iter, q.jobs)
    if report is None:
        logger.info("No cause found")
    else:
        logger.info(f"Cause found: {', '.join(report.cause_names)}")
    return report


def _screened_singletons(q: PacQuery) -> Iterator[tuple]:
    """
    Single-state candidates that pass PC1 and PC2, in search order.

    For one state c, p_AW(σ) = P_σ(not E until c) * P_c(eventually E), and
    p_CW(σ) is the rest of P_σ(eventually E). One forward pass per root thus
    replaces two backward recursions per candidate.

    """
    m = q.model
    roots = q.root_states
    reach = q.reach_effect
    visits = {sigma: prob_first_visit(m, sigma, q.effect_states) for sigma in roots}
    for c in q.eligible_states():
        via = {sigma: visits[sigma][c] * reach[c] for sigma in roots}
        counterfactual = {sigma: reach[sigma] - via[sigma] for sigma in roots}
        witness, _ = evaluate_roots(m, roots, via, counterfactual, q.stutter.holds)
        if witness is not None:
            yield frozenset([c]), None


def cause_exists(q: PacQuery) -> Optional[CauseReport]:
    """
    Decide whether any set of eligible states is a cause, whatever its size.

    Adding a state to a cause never lowers p_AW and never raises p_CW, so some
    set is a cause exactly when the union of all eligible states is one.
    Returns the report of that union, or None.

    """
    eligible = q.eligible_states()
    if not eligible:
        return None
    result = check_cause(q, eligible)
    if not result.confirmed:
        logger.info(f"No set of the {len(eligible)} eligible states is a cause")
        return None
    return replace(result, mode="concrete(union)")


# SMT-LIB export


def _stutter_constraint(q: PacQuery, sigma: int, other: int) -> str:
    system = q.stutter
    if not q.contingencies:
        return "true"
    if q.se_mode == "trace":
        return "true" if system.holds(sigma, other) else "false"

    def directed(a, b):
        return (
            f"(<= {system.eq_w(a, b)} "
            f"{total([rational(system.neq_w(a, b)), rational(system.st(a)), rational(system.st_u_eq(a, b))])})"
        )

    return conjoin([directed(sigma, other), directed(other, sigma)])


def _fixed_cause_recursions(q: PacQuery, k: int, C: frozenset) -> list[str]:
    """
    p_AW and p_CW recursions with the cause fixed to candidate k.

    """
    m = q.model
    E = q.effect_states
    lines = []
    for s in m.states:
        i = s.id
        row = () if m.is_absorbing(i) else m.transitions[i]
        if i in C:
            lines.append(f"(assert (= pAWc{k}_s{i} pAW2_s{i}))")
        elif i in E:
            lines.append(f"(assert (= pAWc{k}_s{i} 0))")
        else:
            via = total(scaled(p, f"pAWc{k}_s{t}") for t, p in row)
            lines.append(f"(assert (= pAWc{k}_s{i} {via}))")
        if i in E:
            lines.append(f"(assert (= pCWc{k}_s{i} 1))")
        else:
            avoiding = total(scaled(p, f"pCWc{k}_s{t}") for t, p in row if t not in C)
            lines.append(f"(assert (= pCWc{k}_s{i} {avoiding}))")
    return lines


def export_smt(q: PacQuery) -> SmtInstance:
    """
    The full cause discovery problem as an SMT-LIB v2 instance.

    Per state i, the reals pAW1_s<i> (reach the cause before the effect),
    pAW2_s<i> (eventually the effect), pAW_s<i> (cause then effect) and
    pCW_s<i> (effect avoiding the cause) follow their recursions, with the
    selector f_s<i> marking cause states. The existential choice of the actual
    root and the universal choice of the counterfactual root are unrolled over
    the finite root set.

    Each candidate k of `candidates` also gets its own copy of the p_AW and
    p_CW recursions with the cause fixed, bound to valid_c<k>. Selecting a
    candidate forces all earlier ones to be invalid, so every model selects
    the cause `discover` returns.

    """
    m = q.model
    E = q.effect_states
    roots = sorted(q.root_states)
    eligible = set(q.eligible_states())

    manifest = []
    for s in m.states:
        i = s.id
        manifest.extend(
            [
                (f"f_s{i}", f"cause selector f({s.name})"),
                (f"pAW1_s{i}", f"P({s.name} |= !effect U cause)"),
                (f"pAW2_s{i}", f"P({s.name} |= <> effect)"),
                (f"pAW_s{i}", f"p_AW({s.name}), cause then effect"),
                (f"pCW_s{i}", f"p_CW({s.name}), effect avoiding cause"),
            ]
        )

    declarations = []
    for s in m.states:
        i = s.id
        declarations.append(f"(declare-fun f_s{i} () Bool)")
        for prefix in ("pAW1", "pAW2", "pAW", "pCW"):
            declarations.append(f"(declare-fun {prefix}_s{i} () Real)")

    assertions = ["; bounds"]
    for s in m.states:
        for prefix in ("pAW1", "pAW2", "pAW", "pCW"):
            var = f"{prefix}_s{s.id}"
            assertions.append(f"(assert (and (<= 0 {var}) (<= {var} 1)))")

    assertions.append("; recursions")
    for s in m.states:
        i = s.id
        row = () if m.is_absorbing(i) else m.transitions[i]
        if i in E:
            assertions.append(f"(assert (= pAW2_s{i} 1))")
            assertions.append(f"(assert (= pAW1_s{i} (ite f_s{i} 1 0)))")
            assertions.append(f"(assert (= pAW_s{i} (ite f_s{i} pAW2_s{i} 0)))")
            assertions.append(f"(assert (= pCW_s{i} 1))")
            continue
        eventually = total(scaled(p, f"pAW2_s{t}") for t, p in row)
        until = total(scaled(p, f"pAW1_s{t}") for t, p in row)
        via = total(scaled(p, f"pAW_s{t}") for t, p in row)
        avoiding = total(scaled(p, f"(ite f_s{t} 0 pCW_s{t})") for t, p in row)
        assertions.append(f"(assert (= pAW2_s{i} {eventually}))")
        assertions.append(f"(assert (= pAW1_s{i} (ite f_s{i} 1 {until})))")
        assertions.append(f"(assert (= pAW_s{i} (ite f_s{i} pAW2_s{i} {via})))")
        assertions.append(f"(assert (= pCW_s{i} {avoiding}))")

    assertions.append("; pruning: effect, root and zero-reach states")
    for s in m.states:
        if s.id not in eligible and q.candidate_policy != "template":
            assertions.append(f"(assert (not f_s{s.id}))")
        elif q.candidate_policy == "template" and (s.id in E or s.id in q.root_states):
            assertions.append(f"(assert (not f_s{s.id}))")

    assertions.append("; candidate policy")
    if q.candidate_policy == "template":
        selectors = [
            f"f_s{s.id}" for s in m.states if s.id not in E and s.id not in q.root_states
        ]
        bound = None
    else:
        selectors = [f"f_s{i}" for i in sorted(eligible)]
        bound = 1 if q.candidate_policy == "single" else q.max_subset_size
    assertions.extend(cardinality_bound(selectors, bound))

    def agreement(sigma, other):
        return _stutter_constraint(q, sigma, other)

    assertions.append("; exists an actual root, for all agreeing counterfactual roots")
    condition = root_condition(
        roots, lambda s: f"pAW_s{s}", lambda s: f"pCW_s{s}", agreement
    )
    assertions.append(f"(assert {condition})")

    assertions.append("; search order: every earlier candidate is invalid")
    candidate_sets = [states for states, _ in candidates(q)]
    for k, C in enumerate(candidate_sets):
        names = " ".join(m.names(C))
        manifest.append((f"valid_c{k}", f"candidate {k + 1} ({names}) is a cause"))
        declarations.append(f"(declare-fun valid_c{k} () Bool)")
        for s in m.states:
            declarations.append(f"(declare-fun pAWc{k}_s{s.id} () Real)")
            declarations.append(f"(declare-fun pCWc{k}_s{s.id} () Real)")
        assertions.extend(_fixed_cause_recursions(q, k, C))
        validity = root_condition(
            roots, lambda s: f"pAWc{k}_s{s}", lambda s: f"pCWc{k}_s{s}", agreement
        )
        assertions.append(f"(assert (= valid_c{k} {validity}))")
    domain = [int(f[3:]) for f in selectors]
    assertions.extend(
        search_order(domain, candidate_sets, closed=q.candidate_policy == "template")
    )

    title = [
        "probabilistic actual cause instance (concrete)",
        f"effect: {q.effect}",
        f"contingencies: {', '.join(str(w) for w in q.contingencies) or '-'}",
        f"roots: {', '.join(m.names(roots))}",
        f"states: {m.n_states}",
    ]
    text = render_instance(title, manifest, declarations, assertions)
    return SmtInstance(
        text=text,
        manifest=tuple(manifest),
        state_names=tuple(s.name for s in m.states),
        kind="concrete",
        query=q,
    )


__all__ = [
    "CauseReport",
    "PacQuery",
    "Refutation",
    "Violation",
    "candidates",
    "cause_exists",
    "check_cause",
    "decode_smt_model",
    "discover",
    "export_smt",
]
