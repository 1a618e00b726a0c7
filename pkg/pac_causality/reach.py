"""
Exact reachability algebra for cause checking.

Concrete quantities are computed by one backward pass over the topological
order of the (acyclic) DTMC. Abstract quantities are optimal values over the
schedulers of an MDP that eventually terminate; abstract MDPs may contain
cycles between transient states (an action of an abstract state can lead back
to itself), so they are solved exactly by policy iteration.

"""

import logging

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

import networkx as nx

from .config import MAX_PATHS
from .model import Dtmc, Mdp
from .predicates import Predicate


logger = logging.getLogger("Reach")

ZERO = Fraction(0)
ONE = Fraction(1)


class PathGuardExceeded(RuntimeError):
    def __init__(self, limit: int):
        self.limit = limit
        super().__init__(f"more than {limit} paths to enumerate (PAC_MAX_PATHS)")


@dataclass(frozen=True)
class ReachProfile:
    """
    Exact per-state values of one reachability query.

    """

    kind: str
    values: tuple
    params: tuple = ()

    def __getitem__(self, s: int) -> Fraction:
        return self.values[s]

    def __len__(self) -> int:
        return len(self.values)

    def named(self, model) -> dict:
        return {state.name: self.values[state.id] for state in model.states}


@dataclass(frozen=True)
class IntervalProfile:
    """
    Per-state (Pmin, Pmax) of eventually reaching a target in an MDP.

    """

    lo: tuple
    hi: tuple

    def __getitem__(self, s: int) -> tuple:
        return self.lo[s], self.hi[s]

    def width(self, s: int) -> Fraction:
        return self.hi[s] - self.lo[s]


# Concrete DTMC queries


def _backward(
    m: Dtmc,
    boundary: Callable[[int], Optional[Fraction]],
    skip: frozenset = frozenset(),
) -> tuple:
    values = [ZERO] * m.n_states
    for s in reversed(m.topological_order):
        fixed = boundary(s)
        if fixed is not None:
            values[s] = fixed
        elif m.is_absorbing(s):
            values[s] = ZERO
        else:
            values[s] = sum(
                (p * values[t] for t, p in m.transitions[s] if t not in skip), ZERO
            )
    return tuple(values)


def prob_eventually(m: Dtmc, E: Iterable[int]) -> ReachProfile:
    """
    P_s(eventually E) for every state s.

    """
    E = frozenset(E)
    values = _backward(m, lambda s: ONE if s in E else None)
    return ReachProfile("eventually", values, (E,))


def prob_avoid_until(m: Dtmc, avoid: Iterable[int], B: Iterable[int]) -> ReachProfile:
    """
    P_s(not Avoid until B) for every state s.

    """
    avoid, B = frozenset(avoid), frozenset(B)

    def boundary(s):
        if s in B:
            return ONE
        if s in avoid:
            return ZERO
        return None

    return ReachProfile("avoid-until", _backward(m, boundary), (avoid, B))


def prob_effect_via_cause(m: Dtmc, C: Iterable[int], E: Iterable[int]) -> ReachProfile:
    """
    Probability of reaching the cause before the effect and the effect afterwards.

    The value at a cause state is its probability of eventually reaching E;
    effect states outside C are worth 0; every other state sums over its
    successors.

    """
    C, E = frozenset(C), frozenset(E)
    if C & E:
        logger.warning(
            f"Cause and effect overlap on {sorted(C & E)}; overlapping states are read as cause states"
        )
    reach_effect = prob_eventually(m, E)

    def boundary(s):
        if s in C:
            return reach_effect[s]
        if s in E:
            return ZERO
        return None

    return ReachProfile("effect-via-cause", _backward(m, boundary), (C, E))


def prob_effect_via_cause_product(
    m: Dtmc, C: Iterable[int], E: Iterable[int]
) -> ReachProfile:
    """
    Literal product P(not E until C) * P(eventually E), for inspection only.

    """
    C, E = frozenset(C), frozenset(E)
    until = prob_avoid_until(m, E, C)
    eventually = prob_eventually(m, E)
    values = tuple(a * b for a, b in zip(until.values, eventually.values))
    return ReachProfile("effect-via-cause-product", values, (C, E))


def prob_counterfactual(m: Dtmc, C: Iterable[int], E: Iterable[int]) -> ReachProfile:
    """
    Probability of reaching the effect along paths that never enter the cause.

    """
    C, E = frozenset(C), frozenset(E)
    values = _backward(m, lambda s: ONE if s in E else None, skip=C)
    return ReachProfile("counterfactual", values, (C, E))


def prob_first_visit(m: Dtmc, source: int, avoid: Iterable[int]) -> ReachProfile:
    """
    P_source(not Avoid until t) for every state t, in one forward pass.

    Each state is visited at most once on a path of an acyclic chain, so the
    mass flowing into t is the probability of visiting it. Mass stops at
    avoided and absorbing states.

    """
    avoid = frozenset(avoid)
    mass = [ZERO] * m.n_states
    mass[source] = ONE
    for s in m.topological_order:
        if not mass[s] or s in avoid or m.is_absorbing(s):
            continue
        for t, p in m.transitions[s]:
            mass[t] += p * mass[s]
    return ReachProfile("first-visit", tuple(mass), (source, avoid))


# MDP queries


def _solve_linear(matrix: list, rhs: list) -> list:
    """
    Exact Gauss-Jordan elimination for a non-singular rational system.

    """
    n = len(rhs)
    rows = [list(matrix[i]) + [rhs[i]] for i in range(n)]
    for col in range(n):
        pivot = next(r for r in range(col, n) if rows[r][col] != 0)
        rows[col], rows[pivot] = rows[pivot], rows[col]
        pivot_value = rows[col][col]
        rows[col] = [x / pivot_value for x in rows[col]]
        for r in range(n):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col]
                rows[r] = [x - factor * y for x, y in zip(rows[r], rows[col])]
    return [rows[i][n] for i in range(n)]


def _evaluate_policy(
    n: int, choice: dict, stop: dict, leak_value: Fraction
) -> list:
    """
    Least solution of v = P_choice v + b for a fixed memoryless policy.

    `choice[x]` is the chosen row of each non-stop state: a tuple of
    (target, probability) pairs whose missing mass is a leak worth
    `leak_value`.

    """
    values = [ZERO] * n
    for s, v in stop.items():
        values[s] = v

    graph = nx.DiGraph()
    graph.add_nodes_from(choice)
    for x, row in choice.items():
        graph.add_edges_from((x, t) for t, _ in row if t not in stop)

    condensed = nx.condensation(graph)
    for component in reversed(list(nx.topological_sort(condensed))):
        members = sorted(condensed.nodes[component]["members"])
        inside = set(members)
        constants = {}
        internal = {}
        for x in members:
            row = choice[x]
            leak = ONE - sum((p for _, p in row), ZERO)
            constant = leak * leak_value
            coefficients = {}
            for t, p in row:
                if t in inside:
                    coefficients[t] = coefficients.get(t, ZERO) + p
                else:
                    constant += p * values[t]
            constants[x] = constant
            internal[x] = coefficients

        if len(members) == 1 and not internal[members[0]]:
            values[members[0]] = constants[members[0]]
            continue
        if all(sum(internal[x].values(), ZERO) == 1 for x in members):
            # Closed under the policy: the path never terminates.
            for x in members:
                values[x] = ZERO
            continue
        if len(members) == 1:
            x = members[0]
            values[x] = constants[x] / (ONE - internal[x][x])
            continue
        position = {x: i for i, x in enumerate(members)}
        matrix = [[ZERO] * len(members) for _ in members]
        for x in members:
            matrix[position[x]][position[x]] += ONE
            for t, p in internal[x].items():
                matrix[position[x]][position[t]] -= p
        solution = _solve_linear(matrix, [constants[x] for x in members])
        for x in members:
            values[x] = solution[position[x]]
    return values


def _max_payoff(rows: Sequence[list], stop: dict, leak_value: Fraction) -> list:
    """
    Maximal expected terminal payoff by exact policy iteration.

    Parameters:
    -----------
    rows: list of list of tuple
        `rows[x]` holds one successor row per enabled action of state `x`.
        Rows may be substochastic; the missing mass terminates with payoff
        `leak_value`.
    stop: dict
        Terminal states and their (non-negative) payoffs.

    Returns:
    --------
    values: list of Fraction
        The least fixed point of the Bellman maximum operator, i.e. the supremum
        over schedulers of the expected payoff.

    """
    n = len(rows)
    choice_index = {x: 0 for x in range(n) if x not in stop}
    while True:
        choice = {x: rows[x][k] for x, k in choice_index.items()}
        values = _evaluate_policy(n, choice, stop, leak_value)

        def q_value(row):
            mass = sum((p for _, p in row), ZERO)
            return (ONE - mass) * leak_value + sum(
                (p * values[t] for t, p in row), ZERO
            )

        improved = False
        for x, current in choice_index.items():
            best, best_value = current, q_value(rows[x][current])
            for k, row in enumerate(rows[x]):
                value = q_value(row)
                if value > best_value:
                    best, best_value = k, value
            if best != current:
                choice_index[x] = best
                improved = True
        if not improved:
            return values


def optimal_rows(
    rows: Sequence[list], stop: dict, maximize: bool
) -> tuple:
    """
    Optimal expected payoff over terminating schedulers.

    Missing row mass is worth 0. Maximization computes the least Bellman fixed
    point directly; minimization takes the complement, where payoffs become
    1 - r and missing mass is worth 1.

    """
    if maximize:
        return tuple(_max_payoff(rows, dict(stop), ZERO))
    complement = {s: ONE - v for s, v in stop.items()}
    return tuple(ONE - v for v in _max_payoff(rows, complement, ONE))


def _action_rows(m: Mdp, drop: frozenset) -> list:
    return [
        [
            ()
            if a.halting
            else tuple((t, p) for t, p in a.transitions if t not in drop)
            for a in actions
        ]
        for actions in m.actions
    ]


def optimal_reach(
    m: Mdp, stop: dict, maximize: bool, drop: Iterable[int] = ()
) -> tuple:
    """
    Optimal values of a terminal-payoff reachability query on an MDP.

    Parameters:
    -----------
    m: Mdp
        The model; halting actions terminate with payoff 0.
    stop: dict
        State id to payoff for states where paths stop.
    maximize: bool
        Maximum (True) or minimum (False) over terminating schedulers.
    drop: iterable of int
        Successor states whose incoming mass is discarded (payoff 0).

    """
    return optimal_rows(_action_rows(m, frozenset(drop)), stop, maximize)


def min_max_eventually(m: Mdp, E: Iterable[int]) -> IntervalProfile:
    """
    Pmin and Pmax of eventually reaching E, for every state.

    """
    stop = {e: ONE for e in E}
    return IntervalProfile(
        lo=optimal_reach(m, stop, maximize=False),
        hi=optimal_reach(m, stop, maximize=True),
    )


def min_effect_via_cause(m: Mdp, C: Iterable[int], E: Iterable[int]) -> ReachProfile:
    """
    Minimal effect-via-cause probability; cause states are worth their Pmin(eventually E).

    """
    C, E = frozenset(C), frozenset(E)
    lo = optimal_reach(m, {e: ONE for e in E}, maximize=False)
    stop = {e: ZERO for e in E - C}
    stop.update({c: lo[c] for c in C})
    return ReachProfile(
        "min-effect-via-cause", optimal_reach(m, stop, maximize=False), (C, E)
    )


def max_counterfactual(m: Mdp, C: Iterable[int], E: Iterable[int]) -> ReachProfile:
    """
    Maximal probability of reaching E along paths that never enter C.

    """
    C, E = frozenset(C), frozenset(E)
    values = optimal_reach(m, {e: ONE for e in E}, maximize=True, drop=C)
    return ReachProfile("max-counterfactual", values, (C, E))


# World agreement on the contingency set W


def w_signature(model, contingencies: Sequence[Predicate]) -> tuple:
    """
    The W-valuation of every state, as a tuple of booleans per state.

    """
    return tuple(
        tuple(p.evaluate(s, model.ap) for p in contingencies) for s in model.states
    )


def _collapse(head, tail: tuple) -> tuple:
    if tail and tail[0] == head:
        return tail
    return (head,) + tail


def collapsed_signatures(m: Dtmc, contingencies: Sequence[Predicate], s: int, limit: int = MAX_PATHS) -> frozenset:
    """
    Stutter-collapsed W-traces of all paths from `s` to absorption.

    """
    signature = w_signature(m, contingencies)
    traces = {}
    for x in reversed(m.topological_order):
        if m.is_absorbing(x) or not m.transitions[x]:
            traces[x] = frozenset([(signature[x],)])
            continue
        collected = set()
        for t, _ in m.transitions[x]:
            collected.update(_collapse(signature[x], tail) for tail in traces[t])
        if len(collected) > limit:
            raise PathGuardExceeded(limit)
        traces[x] = frozenset(collected)
    return traces[s]


class StutterSystem:
    """
    Stutter-agreement quantities of a DTMC with respect to a contingency set.

    Parameters:
    -----------
    m: Dtmc
        The concrete model.
    contingencies: sequence of Predicate
        The set W; propositions are given as `Proposition` predicates.
    mode: str
        "inequality" checks the agreement inequalities on each root pair.
        "trace" requires both roots to have one and the same collapsed W-trace,
        i.e. the two worlds agree up to stuttering with probability one.

    """

    def __init__(
        self, m: Dtmc, contingencies: Sequence[Predicate], mode: str = "inequality"
    ):
        if mode not in ("inequality", "trace"):
            raise ValueError(f"Unknown agreement mode {mode!r}")
        self.model = m
        self.contingencies = tuple(contingencies)
        self.mode = mode
        self.signature = w_signature(m, self.contingencies)

        self._st = []
        self._successor_mass = []
        for s in range(m.n_states):
            mass = {}
            for t, p in m.transitions[s]:
                mass[self.signature[t]] = mass.get(self.signature[t], ZERO) + p
            self._successor_mass.append(mass)
            self._st.append(mass.get(self.signature[s], ZERO))
        self._st_u_eq = {}
        self._traces = {}

    def eq_w(self, s: int, t: int) -> int:
        return int(self.signature[s] == self.signature[t])

    def st(self, s: int) -> Fraction:
        return self._st[s]

    def neq_w(self, s: int, t: int) -> Fraction:
        mass_t = self._successor_mass[t]
        return sum(
            (p * mass_t.get(sig, ZERO) for sig, p in self._successor_mass[s].items()),
            ZERO,
        )

    def st_u_eq(self, partner: int, s: int) -> Fraction:
        """
        Probability that `s` stutters until it agrees with the fixed `partner`.

        """
        if partner not in self._st_u_eq:
            m = self.model
            values = [ZERO] * m.n_states
            for y in reversed(m.topological_order):
                if self.eq_w(partner, y):
                    values[y] = ONE
                elif self._st[y] == 0 or m.is_absorbing(y):
                    values[y] = ZERO
                else:
                    values[y] = self._st[y] * sum(
                        (p * values[z] for z, p in m.transitions[y]), ZERO
                    )
            self._st_u_eq[partner] = tuple(values)
        return self._st_u_eq[partner][s]

    def _directed(self, s: int, t: int) -> bool:
        return self.eq_w(s, t) <= self.neq_w(s, t) + self.st(s) + self.st_u_eq(s, t)

    def traces(self, s: int) -> frozenset:
        if s not in self._traces:
            self._traces[s] = collapsed_signatures(self.model, self.contingencies, s)
        return self._traces[s]

    def holds(self, s: int, t: int) -> bool:
        if not self.contingencies:
            return True
        if self.mode == "trace":
            left, right = self.traces(s), self.traces(t)
            return len(left) == 1 and left == right
        return self._directed(s, t) and self._directed(t, s)


def stutter_system(
    m: Dtmc, contingencies: Sequence[Predicate], mode: str = "inequality"
) -> StutterSystem:
    return StutterSystem(m, contingencies, mode)


def se_holds(system: StutterSystem, s: int, t: int) -> bool:
    """
    Whether roots `s` and `t` may be compared as actual and counterfactual worlds.

    """
    return system.holds(s, t)


def abstract_se_holds(m: Mdp, signature: Sequence[tuple], x: int, y: int) -> bool:
    """
    Stutter-agreement check on an abstract MDP, minimizing over actions.

    `signature[i]` is the W-valuation of abstract state `i` (well defined in
    W-preserving abstractions).

    """

    def eq(a, b):
        return int(signature[a] == signature[b])

    def st_of(state, action):
        return sum((p for t, p in action.transitions if eq(state, t)), ZERO)

    def st_min(state):
        return min(st_of(state, a) for a in m.actions[state])

    def neq_min(a_state, b_state):
        best = None
        for a in m.actions[a_state]:
            for b in m.actions[b_state]:
                value = sum(
                    (
                        p * q
                        for t, p in a.transitions
                        for u, q in b.transitions
                        if eq(t, u)
                    ),
                    ZERO,
                )
                best = value if best is None else min(best, value)
        return best

    def st_u_eq_min(partner, state):
        stop = {}
        for z in range(m.n_states):
            if eq(partner, z):
                stop[z] = ONE
            elif st_min(z) == 0:
                stop[z] = ZERO
        rows = [
            [
                ()
                if a.halting
                else tuple((u, st_of(z, a) * p) for u, p in a.transitions)
                for a in m.actions[z]
            ]
            for z in range(m.n_states)
        ]
        return optimal_rows(rows, stop, maximize=False)[state]

    def directed(a_state, b_state):
        return eq(a_state, b_state) <= (
            neq_min(a_state, b_state) + st_min(a_state) + st_u_eq_min(a_state, b_state)
        )

    return directed(x, y) and directed(y, x)
