"""
Cause checking and discovery on a predicate abstraction.

Abstract causes are judged with the pessimistic reading of the induced MDP:
the actual world gets the minimal effect-via-cause probability and the
counterfactual world the maximal cause-avoiding probability. Every abstract
verdict is confirmed on the concretization before it is reported.

"""

import itertools
import logging

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Optional

import networkx as nx

from .abstraction import Abstraction, Subgraph, abstract, enumerate_subgraphs
from .concrete import (
    CANDIDATE_POLICIES,
    ROOT_POLICIES,
    SE_MODES,
    CauseReport,
    PacQuery,
    Refutation,
    check_cause,
    evaluate_roots,
    first_confirmed,
)
from .config import DEFAULT_JOBS, MAX_PATHS
from .predicates import Predicate, UnboundVariableError, describe_states
from .reach import (
    abstract_se_holds,
    max_counterfactual,
    min_effect_via_cause,
)
from .smt import (
    SmtInstance,
    cardinality_bound,
    conjoin,
    disjoin,
    rational,
    render_instance,
    root_condition,
    scaled,
    search_order,
    total,
)


logger = logging.getLogger("Abstract discovery")

W_STRATEGIES = ("w-preserving", "subgraphs")


@dataclass(frozen=True)
class AbstractPacQuery:
    """
    A cause discovery problem posed on an abstraction.

    Parameters:
    -----------
    abstraction: Abstraction
    effect: Predicate
        The effect predicate, evaluated on concrete states.
    contingencies: tuple of Predicate
        The contingency set W.
    w_strategy: str
        "w-preserving": the abstraction separates W-valuations and roots are
        compared with the abstract stutter check. "subgraphs": the abstraction
        covers one stutter-equivalent subgraph, where any two roots agree.
    root_policy: str
        "initial", "explicit" (abstract state names in `roots`) or "all".
    candidate_policy: str
        "single" or "subsets" (up to `max_subset_size` abstract states).

    """

    abstraction: Abstraction
    effect: Predicate
    contingencies: tuple = ()
    w_strategy: str = "w-preserving"
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
        a = self.abstraction
        if self.w_strategy not in W_STRATEGIES:
            errors.append(f"w_strategy must be one of {W_STRATEGIES}")
        if (
            self.w_strategy == "w-preserving"
            and self.contingencies
            and a.mode != "w-preserving"
        ):
            errors.append("a non-empty W needs a w-preserving abstraction")
        if self.root_policy not in ROOT_POLICIES:
            errors.append(f"root_policy must be one of {ROOT_POLICIES}")
        if self.root_policy == "explicit":
            if not self.roots:
                errors.append("explicit root policy needs at least one root")
            unknown = [r for r in self.roots if r not in a.index]
            if unknown:
                errors.append(f"unknown abstract roots {unknown}")
        if self.candidate_policy not in CANDIDATE_POLICIES[:2]:
            errors.append("abstract candidates are 'single' or 'subsets'")
        if self.max_subset_size < 1:
            errors.append("max_subset_size must be at least 1")
        if self.se_mode not in SE_MODES:
            errors.append(f"se_mode must be one of {SE_MODES}")
        try:
            if not a.model.satisfying_set(self.effect):
                errors.append(f"effect '{self.effect}' holds in no state")
        except UnboundVariableError as e:
            errors.append(str(e))
        return errors

    @cached_property
    def effect_states(self) -> frozenset:
        return self.abstraction.model.satisfying_set(self.effect)

    @cached_property
    def abstract_effect(self) -> frozenset:
        return self.abstraction.effect(self.effect_states)

    @cached_property
    def root_states(self) -> frozenset:
        a = self.abstraction
        if self.root_policy == "initial":
            return a.mdp.initial
        if self.root_policy == "explicit":
            return a.ids(self.roots)
        return frozenset(range(len(a.states)))

    @cached_property
    def interval(self):
        return self.abstraction.interval(self.abstract_effect)

    @cached_property
    def _agreement(self) -> dict:
        return {}

    def agrees(self, x: int, y: int) -> bool:
        if self.w_strategy == "subgraphs" or not self.contingencies:
            return True
        key = (x, y)
        if key not in self._agreement:
            a = self.abstraction
            self._agreement[key] = abstract_se_holds(a.mdp, a.signature, x, y)
        return self._agreement[key]

    def with_abstraction(self, a: Abstraction) -> "AbstractPacQuery":
        if self.root_policy == "explicit":
            # Root names may have been split; keep every block under the old names.
            roots = tuple(
                block.name
                for block in a.states
                if any(block.name == r or block.name.startswith(r + ",") for r in self.roots)
            )
            return replace(self, abstraction=a, roots=roots)
        return replace(self, abstraction=a)

    def concrete_query(self) -> PacQuery:
        """
        The concrete query used to confirm abstract verdicts.

        """
        a = self.abstraction
        contingencies = self.contingencies if self.w_strategy == "w-preserving" else ()
        roots = ()
        if self.root_policy == "explicit":
            roots = tuple(a.model.names(a.concretize(self.root_states)))
        return PacQuery(
            model=a.model,
            effect=self.effect,
            contingencies=contingencies,
            root_policy=self.root_policy,
            roots=roots,
            candidate_policy="subsets",
            max_subset_size=self.max_subset_size,
            se_mode=self.se_mode,
            jobs=1,
        )

    def eligible_states(self) -> list[int]:
        """
        Abstract candidates: not in the abstract effect, able to reach it, not a
        root; ordered by the shallowest and then the lowest concrete member, so
        that a finest partition is searched in the concrete order.

        """
        a = self.abstraction
        depths = a.model.depths

        def position(x):
            members = a.states[x].members
            return min(depths[s] for s in members), min(members)

        eligible = [
            x
            for x in range(len(a.states))
            if x not in self.abstract_effect
            and self.interval.hi[x] > 0
            and x not in self.root_states
        ]
        return sorted(eligible, key=position)


def check_cause_abs(q: AbstractPacQuery, C_hat: Iterable[int]):
    """
    Check an abstract cause, then confirm it on its concretization.

    Parameters:
    -----------
    q: AbstractPacQuery
    C_hat: iterable of int
        Abstract state indices.

    Returns:
    --------
    CauseReport or Refutation
        A report carries the abstract values and, in `verification`, the
        concrete report of the concretized cause.

    """
    a = q.abstraction
    C_hat = frozenset(C_hat)
    if not C_hat:
        raise ValueError("Empty cause set")
    roots = q.root_states
    if not roots:
        raise ValueError("Empty root set")
    names = tuple(a.names(C_hat))
    E_hat = q.abstract_effect
    if C_hat & E_hat:
        return Refutation(names, "cause-overlaps-effect")
    if C_hat <= roots:
        return Refutation(names, "cause-is-root")

    via = min_effect_via_cause(a.mdp, C_hat, E_hat)
    counterfactual = max_counterfactual(a.mdp, C_hat, E_hat)
    witness, violations = evaluate_roots(a.mdp, roots, via, counterfactual, q.agrees)
    if witness is None:
        logger.debug(f"Abstract refutation of {names}: {violations}")
        reason = (
            "pc1" if violations and all(v.condition == "pc1" for v in violations) else "pc2"
        )
        return Refutation(names, reason, tuple(violations))

    concrete_cause = a.concretize(C_hat)
    verification = check_cause(q.concrete_query(), concrete_cause)
    if not verification.confirmed:
        logger.warning(
            f"Abstract cause {', '.join(names)} is refuted on its concretization "
            f"({verification.reason}); skipping"
        )
        return Refutation(names, "concretization-refuted", verification.violations)

    sigma, binding = witness
    return CauseReport(
        cause=concrete_cause,
        cause_names=tuple(a.model.names(concrete_cause)),
        predicate=describe_states(a.model, concrete_cause),
        root=a.states[sigma].name,
        p_aw=via[sigma],
        counter_root=None if binding is None else a.states[binding].name,
        p_cw=None if binding is None else counterfactual[binding],
        pc1=True,
        mode="abstract",
        abstract_cause=names,
        verification=verification,
    )


def candidates_abs(q: AbstractPacQuery):
    eligible = q.eligible_states()
    largest = 1 if q.candidate_policy == "single" else q.max_subset_size
    for size in range(1, largest + 1):
        for combination in itertools.combinations(eligible, size):
            yield frozenset(combination), None


def discover_abs(q: AbstractPacQuery) -> Optional[CauseReport]:
    """
    First confirmed abstract cause in search order, if any.

    """
    a = q.abstraction
    logger.info(
        f"Discovering abstract causes over {len(a.states)} abstract states "
        f"({len(q.abstract_effect)} in the abstract effect)"
    )
    return first_confirmed(check_cause_abs, q, candidates_abs(q), q.jobs)


def subgraph_queries(
    m,
    predicates: Iterable[Predicate],
    effect: Predicate,
    contingencies: Iterable[Predicate],
    root_policy: str = "initial",
    candidate_policy: str = "single",
    max_subset_size: int = 2,
    se_mode: str = "inequality",
    jobs: int = DEFAULT_JOBS,
    limit: int = MAX_PATHS,
) -> list[tuple[Subgraph, AbstractPacQuery]]:
    """
    One abstract query per stutter-equivalent subgraph that contains an effect state.

    """
    predicates = tuple(predicates)
    contingencies = tuple(contingencies)
    queries = []
    for sub in enumerate_subgraphs(m, contingencies, limit):
        if not sub.model.satisfying_set(effect):
            logger.info(f"Skipping subgraph {sub.signature}: no effect state")
            continue
        queries.append(
            (
                sub,
                AbstractPacQuery(
                    abstraction=abstract(sub.model, predicates),
                    effect=effect,
                    contingencies=contingencies,
                    w_strategy="subgraphs",
                    root_policy=root_policy,
                    candidate_policy=candidate_policy,
                    max_subset_size=max_subset_size,
                    se_mode=se_mode,
                    jobs=jobs,
                ),
            )
        )
    return queries


# SMT-LIB export


def _bellman(var: str, q_values: list, bound: str) -> list[str]:
    """
    `var` is bounded by every action value (``<=`` for minima, ``>=`` for
    maxima) and achieved by one of them.

    """
    parts = [f"({bound} {var} {value})" for value in q_values]
    parts.append(disjoin(f"(= {var} {value})" for value in q_values))
    return parts


def _progressing_rows(mdp) -> list:
    """
    Action rows per state, without actions that only loop back to the state.

    A terminating scheduler takes such an action finitely often, so dropping
    it leaves every optimum unchanged.

    """
    rows = []
    for v, actions in enumerate(mdp.actions):
        kept = [
            () if action.halting else action.transitions
            for action in actions
            if action.halting or action.transitions != ((v, 1),)
        ]
        rows.append(kept or [action.transitions for action in actions])
    return rows


def _has_unique_optima(rows: list, E_hat: frozenset) -> bool:
    # Bellman conditions pin the optima exactly when the rows are acyclic
    graph = nx.DiGraph()
    graph.add_nodes_from(range(len(rows)))
    graph.add_edges_from(
        (v, t)
        for v, state_rows in enumerate(rows)
        if v not in E_hat
        for row in state_rows
        for t, _ in row
    )
    return nx.is_directed_acyclic_graph(graph)


def _fixed_cause_bellman(q: AbstractPacQuery, rows: list, k: int, C_hat: frozenset) -> list[str]:
    E_hat = q.abstract_effect
    lines = []
    for v, state_rows in enumerate(rows):
        via_var, avoiding_var = f"pAWABSc{k}_min_s{v}", f"pCWABSc{k}_max_s{v}"
        if v in C_hat:
            lines.append(f"(assert (= {via_var} pREACH_min_s{v}))")
        elif v in E_hat:
            lines.append(f"(assert (= {via_var} 0))")
        else:
            via = [
                total(scaled(p, f"pAWABSc{k}_min_s{t}") for t, p in row)
                for row in state_rows
            ]
            lines.extend(f"(assert {part})" for part in _bellman(via_var, via, "<="))
        if v in E_hat:
            lines.append(f"(assert (= {avoiding_var} 1))")
        else:
            avoiding = [
                total(scaled(p, f"pCWABSc{k}_max_s{t}") for t, p in row if t not in C_hat)
                for row in state_rows
            ]
            lines.extend(f"(assert {part})" for part in _bellman(avoiding_var, avoiding, ">="))
    return lines


def export_smt_abs(q: AbstractPacQuery) -> SmtInstance:
    """
    The abstract discovery problem as an SMT-LIB v2 instance.

    Per abstract state v the reals pAWABS2_min_s<v> (minimal probability of
    the abstract effect), pAWABS_min_s<v> (minimal effect-via-cause) and
    pCWABS_max_s<v> (maximal cause-avoiding effect) satisfy the Bellman
    conditions of the induced MDP, with f_s<v> selecting cause states.

    Each candidate k is also bound to valid_c<k>, and selecting a candidate
    forces all earlier ones to be invalid. When the progressing action rows
    are acyclic, the per-candidate values are Bellman conditions over their
    own reals; otherwise they are the exact optima as constants.

    """
    a = q.abstraction
    mdp = a.mdp
    E_hat = q.abstract_effect
    roots = sorted(q.root_states)
    eligible = set(q.eligible_states())

    manifest = []
    declarations = []
    for block in a.states:
        v = block.index
        manifest.extend(
            [
                (f"f_s{v}", f"cause selector f({block.name})"),
                (f"pAWABS2_min_s{v}", f"Pmin({block.name} |= <> effect)"),
                (f"pAWABS_min_s{v}", f"min p_AW({block.name})"),
                (f"pCWABS_max_s{v}", f"max p_CW({block.name})"),
            ]
        )
        declarations.append(f"(declare-fun f_s{v} () Bool)")
        for prefix in ("pAWABS2_min", "pAWABS_min", "pCWABS_max"):
            declarations.append(f"(declare-fun {prefix}_s{v} () Real)")

    assertions = ["; bounds"]
    for block in a.states:
        for prefix in ("pAWABS2_min", "pAWABS_min", "pCWABS_max"):
            var = f"{prefix}_s{block.index}"
            assertions.append(f"(assert (and (<= 0 {var}) (<= {var} 1)))")

    assertions.append("; Bellman conditions, one value per action")
    for block in a.states:
        v = block.index
        if v in E_hat:
            assertions.append(f"(assert (= pAWABS2_min_s{v} 1))")
            assertions.append(f"(assert (= pAWABS_min_s{v} 0))")
            assertions.append(f"(assert (= pCWABS_max_s{v} 1))")
            continue
        eventually, via, avoiding = [], [], []
        for action in mdp.actions[v]:
            row = () if action.halting else action.transitions
            eventually.append(total(scaled(p, f"pAWABS2_min_s{t}") for t, p in row))
            via.append(total(scaled(p, f"pAWABS_min_s{t}") for t, p in row))
            avoiding.append(
                total(scaled(p, f"(ite f_s{t} 0 pCWABS_max_s{t})") for t, p in row)
            )
        for part in _bellman(f"pAWABS2_min_s{v}", eventually, "<="):
            assertions.append(f"(assert {part})")
        via_conditions = conjoin(_bellman(f"pAWABS_min_s{v}", via, "<="))
        assertions.append(
            f"(assert (ite f_s{v} (= pAWABS_min_s{v} pAWABS2_min_s{v}) {via_conditions}))"
        )
        for part in _bellman(f"pCWABS_max_s{v}", avoiding, ">="):
            assertions.append(f"(assert {part})")

    assertions.append("; pruning: abstract effect, root and zero-reach states")
    for block in a.states:
        if block.index not in eligible:
            assertions.append(f"(assert (not f_s{block.index}))")

    assertions.append("; candidate policy")
    bound = 1 if q.candidate_policy == "single" else q.max_subset_size
    assertions.extend(cardinality_bound([f"f_s{x}" for x in sorted(eligible)], bound))

    def agreement(sigma, other):
        return "true" if q.agrees(sigma, other) else "false"

    assertions.append("; exists an actual root, for all agreeing counterfactual roots")
    condition = root_condition(
        roots, lambda x: f"pAWABS_min_s{x}", lambda x: f"pCWABS_max_s{x}", agreement
    )
    assertions.append(f"(assert {condition})")

    assertions.append("; search order: every earlier candidate is invalid")
    candidate_sets = [states for states, _ in candidates_abs(q)]
    rows = _progressing_rows(mdp)
    unique = _has_unique_optima(rows, E_hat)
    if unique:
        for block in a.states:
            v = block.index
            manifest.append((f"pREACH_min_s{v}", f"Pmin({block.name} |= <> effect), search order"))
            declarations.append(f"(declare-fun pREACH_min_s{v} () Real)")
            if v in E_hat:
                assertions.append(f"(assert (= pREACH_min_s{v} 1))")
                continue
            eventually = [
                total(scaled(p, f"pREACH_min_s{t}") for t, p in row) for row in rows[v]
            ]
            assertions.extend(
                f"(assert {part})" for part in _bellman(f"pREACH_min_s{v}", eventually, "<=")
            )
    for k, C_hat in enumerate(candidate_sets):
        manifest.append(
            (f"valid_c{k}", f"candidate {k + 1} ({' '.join(a.names(C_hat))}) is a cause")
        )
        declarations.append(f"(declare-fun valid_c{k} () Bool)")
        if unique:
            for block in a.states:
                declarations.append(f"(declare-fun pAWABSc{k}_min_s{block.index} () Real)")
                declarations.append(f"(declare-fun pCWABSc{k}_max_s{block.index} () Real)")
            assertions.extend(_fixed_cause_bellman(q, rows, k, C_hat))
            validity = root_condition(
                roots,
                lambda x: f"pAWABSc{k}_min_s{x}",
                lambda x: f"pCWABSc{k}_max_s{x}",
                agreement,
            )
        else:
            via = min_effect_via_cause(mdp, C_hat, E_hat)
            counterfactual = max_counterfactual(mdp, C_hat, E_hat)
            validity = root_condition(
                roots,
                lambda x: rational(via[x]),
                lambda x: rational(counterfactual[x]),
                agreement,
            )
        assertions.append(f"(assert (= valid_c{k} {validity}))")
    assertions.extend(search_order(sorted(eligible), candidate_sets))

    title = [
        "probabilistic actual cause instance (abstract)",
        f"effect: {q.effect}",
        f"predicates: {'; '.join(str(p) for p in a.predicates) or '-'}",
        f"contingencies: {', '.join(str(w) for w in q.contingencies) or '-'}",
        f"roots: {', '.join(a.names(roots))}",
        f"abstract states: {len(a.states)}",
    ]
    text = render_instance(title, manifest, declarations, assertions)
    return SmtInstance(
        text=text,
        manifest=tuple(manifest),
        state_names=tuple(block.name for block in a.states),
        kind="abstract",
        query=q,
    )


__all__ = [
    "AbstractPacQuery",
    "candidates_abs",
    "check_cause_abs",
    "discover_abs",
    "export_smt_abs",
    "subgraph_queries",
]
