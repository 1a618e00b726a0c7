"""
Predicate abstraction of a DTMC into an MDP, state splitting, and the
decomposition of a DTMC into stutter-equivalent subgraphs.

"""

import logging
import math

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Optional, Sequence

from .config import MAX_PATHS, WARN_MIXED_EFFECT
from .model import Action, Dtmc, Mdp, State, serialize_mdp
from .predicates import Predicate
from .reach import (
    IntervalProfile,
    PathGuardExceeded,
    min_max_eventually,
    prob_eventually,
    w_signature,
)


logger = logging.getLogger("Abstraction")


@dataclass(frozen=True)
class AbstractState:
    """
    A block of the partition.

    Parameters:
    -----------
    index: int
        Position in the abstraction, also the state id in the induced MDP.
    value: int
        The predicate bit vector read as an integer (first predicate most significant).
    bits: tuple of int
        Truth values of the predicates on every member.
    name: str
        ``ŝ<value>``; singletons split off a block are named ``<parent>,<member id>``.
    members: frozenset of int
        The concretization, as concrete state ids.
    w_bits: tuple of int
        Truth values of the contingency set (w-preserving mode only).

    """

    index: int
    value: int
    bits: tuple
    name: str
    members: frozenset
    w_bits: tuple = ()
    order: int = -1

    @property
    def singleton(self) -> bool:
        return len(self.members) == 1

    @property
    def key(self) -> tuple:
        return (self.value, self.w_bits, self.order)


@dataclass(frozen=True)
class Abstraction:
    model: Dtmc
    predicates: tuple
    states: tuple
    mdp: Mdp
    mode: str = "plain"
    contingencies: tuple = ()

    @cached_property
    def block_of(self) -> dict:
        """
        Abstraction map: concrete state id to abstract index.

        """
        return {s: block.index for block in self.states for s in block.members}

    @cached_property
    def index(self) -> dict:
        return {block.name: block.index for block in self.states}

    def state(self, name: str) -> AbstractState:
        if name not in self.index:
            raise ValueError(f"Unknown abstract state '{name}'")
        return self.states[self.index[name]]

    def ids(self, names: Iterable[str]) -> frozenset:
        return frozenset(self.state(name).index for name in names)

    def names(self, indices: Iterable[int]) -> list[str]:
        return [self.states[i].name for i in sorted(indices)]

    def concretize(self, indices: Iterable[int]) -> frozenset:
        return frozenset().union(*(self.states[i].members for i in indices))

    @cached_property
    def signature(self) -> tuple:
        """
        W-valuation of every abstract state (meaningful in w-preserving mode).

        """
        return tuple(block.w_bits for block in self.states)

    def effect(self, E: Iterable[int]) -> frozenset:
        return abstract_effect(self, E)

    def interval(self, E_hat: Iterable[int]) -> IntervalProfile:
        return min_max_eventually(self.mdp, E_hat)

    @property
    def finest(self) -> bool:
        return all(block.singleton for block in self.states)


def _bits_value(bits: Sequence[int]) -> int:
    value = 0
    for bit in bits:
        value = 2 * value + bit
    return value


def _induce(
    model: Dtmc,
    predicates: tuple,
    blocks: list,
    mode: str,
    contingencies: tuple,
) -> Abstraction:
    blocks = sorted(blocks, key=lambda b: b.key)
    states = tuple(
        AbstractState(
            index=i,
            value=b.value,
            bits=b.bits,
            name=b.name,
            members=b.members,
            w_bits=b.w_bits,
            order=b.order,
        )
        for i, b in enumerate(blocks)
    )
    block_of = {s: block.index for block in states for s in block.members}

    variables = tuple(f"psi{k + 1}" for k in range(len(predicates)))
    mdp_states = []
    actions = []
    for block in states:
        labels = frozenset().union(*(model.states[s].labels for s in block.members))
        mdp_states.append(
            State(
                block.index,
                block.name,
                {var: Fraction(bit) for var, bit in zip(variables, block.bits)},
                labels,
            )
        )
        block_actions = []
        for member in sorted(block.members):
            row = {}
            for target, p in model.transitions[member]:
                row[block_of[target]] = row.get(block_of[target], 0) + p
            block_actions.append(
                Action(
                    model.states[member].name,
                    tuple(sorted(row.items())),
                    model.is_absorbing(member),
                )
            )
        actions.append(tuple(block_actions))

    mdp = Mdp(
        variables=variables,
        states=tuple(mdp_states),
        actions=tuple(actions),
        initial=frozenset(block_of[s] for s in model.initial),
        ap=model.ap,
        stochastic=model.stochastic,
    )
    mdp.validate()
    return Abstraction(model, predicates, states, mdp, mode, contingencies)


def abstract(
    m: Dtmc,
    predicates: Sequence[Predicate],
    mode: str = "plain",
    contingencies: Sequence[Predicate] = (),
) -> Abstraction:
    """
    Partition the reachable states of `m` by predicate valuation and build the induced MDP.

    Parameters:
    -----------
    m: Dtmc
        The concrete model.
    predicates: sequence of Predicate
        The predicate set; the first predicate is the most significant bit.
    mode: str
        "plain", or "w-preserving" to also separate states that disagree on
        any member of `contingencies`.
    contingencies: sequence of Predicate
        The contingency set W.

    Returns:
    --------
    Abstraction
        Actions of an abstract state are its concrete members; each action
        moves to the blocks of the member's successors.

    """
    if mode not in ("plain", "w-preserving"):
        raise ValueError(f"Unknown abstraction mode {mode!r}")
    predicates = tuple(predicates)
    contingencies = tuple(contingencies)
    if not predicates:
        logger.warning("Empty predicate set: all reachable states share one abstract state")

    w_bits_of = (
        w_signature(m, contingencies) if mode == "w-preserving" else None
    )
    grouped = {}
    for s in sorted(m.reachable(m.initial)):
        state = m.states[s]
        bits = tuple(int(p.evaluate(state, m.ap)) for p in predicates)
        w_bits = tuple(int(b) for b in w_bits_of[s]) if w_bits_of is not None else ()
        grouped.setdefault((bits, w_bits), set()).add(s)

    blocks = []
    for (bits, w_bits), members in grouped.items():
        value = _bits_value(bits)
        name = f"ŝ{value}"
        if w_bits:
            name += "/" + "".join(map(str, w_bits))
        blocks.append(
            AbstractState(-1, value, bits, name, frozenset(members), w_bits)
        )
    abstraction = _induce(m, predicates, blocks, mode, contingencies)
    logger.info(
        f"Abstracted {m.n_states} states into {len(abstraction.states)} abstract states"
    )
    return abstraction


def abstract_effect(a: Abstraction, E: Iterable[int]) -> frozenset:
    """
    Abstract effect set: every abstract state whose concretization meets E.

    """
    E = frozenset(E)
    E_hat = []
    for block in a.states:
        inside = block.members & E
        if inside:
            E_hat.append(block.index)
            if inside != block.members and WARN_MIXED_EFFECT:
                logger.warning(
                    f"Abstract state {block.name} mixes effect and non-effect states "
                    f"({len(inside)} of {len(block.members)} are effect states)"
                )
    return frozenset(E_hat)


def refine_split(
    a: Abstraction,
    target: AbstractState,
    alpha: Fraction,
    effect: Optional[Iterable[int]] = None,
) -> Abstraction:
    """
    Split singletons off an abstract state and rebuild the induced MDP.

    With m members, k = max(1, ceil((1 - alpha) m)) members are extracted,
    those whose probability of eventually reaching the concrete effect set
    deviates most from the members' mean (ties by state id). When at most one
    member would remain grouped, the split is total.

    """
    alpha = Fraction(alpha)
    if not 0 < alpha <= 1:
        raise ValueError(f"Split ratio must lie in (0, 1], got {alpha}")
    members = sorted(target.members)
    m = len(members)
    if m < 2:
        raise ValueError(f"Cannot split singleton abstract state {target.name}")

    k = max(1, math.ceil((1 - alpha) * m))
    if m - k <= 1:
        extracted = members
    else:
        reach = prob_eventually(a.model, effect if effect is not None else ())
        mean = sum((reach[s] for s in members), Fraction(0)) / m
        extracted = sorted(members, key=lambda s: (-abs(reach[s] - mean), s))[:k]

    blocks = [block for block in a.states if block.index != target.index]
    remaining = frozenset(members) - frozenset(extracted)
    if remaining:
        blocks.append(
            AbstractState(
                -1, target.value, target.bits, target.name, remaining, target.w_bits, target.order
            )
        )
    for s in extracted:
        blocks.append(
            AbstractState(
                -1,
                target.value,
                target.bits,
                f"{target.name},{s}",
                frozenset([s]),
                target.w_bits,
                s,
            )
        )
    logger.info(
        f"Split {target.name} ({m} members): extracted {len(extracted)}, kept {len(remaining)} grouped"
    )
    return _induce(a.model, a.predicates, blocks, a.mode, a.contingencies)


def serialize_abstraction(a: Abstraction) -> tuple[str, str]:
    """
    The induced MDP in the model file format and the ``abs-map`` sidecar.

    """
    header = [f"psi{k + 1}: {p}" for k, p in enumerate(a.predicates)]
    mdp_text = serialize_mdp(a.mdp, header)
    abs_map = "".join(
        f"{block.name}: {' '.join(a.model.names(block.members))}\n" for block in a.states
    )
    return mdp_text, abs_map


# Subgraph decomposition


@dataclass(frozen=True)
class Subgraph:
    signature: tuple
    model: Dtmc
    paths: tuple


@dataclass(frozen=True)
class SubgraphSet:
    contingencies: tuple
    subgraphs: tuple

    def __iter__(self):
        return iter(self.subgraphs)

    def __len__(self) -> int:
        return len(self.subgraphs)

    def signatures(self) -> list:
        return [sub.signature for sub in self.subgraphs]


def format_signature(signature: tuple, contingencies: Sequence[Predicate]) -> str:
    """
    Render a collapsed W-trace, e.g. ``(w,¬w,w)``.

    """
    names = [str(p) for p in contingencies]

    def render(valuation):
        parts = [name if value else f"¬{name}" for name, value in zip(names, valuation)]
        return parts[0] if len(parts) == 1 else "{" + ",".join(parts) + "}"

    return "(" + ",".join(render(v) for v in signature) + ")"


def _enumerate_paths(m: Dtmc, limit: int):
    count = 0
    for root in sorted(m.initial):
        stack = [(root, (root,), Fraction(1))]
        while stack:
            s, path, probability = stack.pop()
            if m.is_absorbing(s):
                count += 1
                if count > limit:
                    raise PathGuardExceeded(limit)
                yield path, probability
                continue
            for t, p in reversed(m.transitions[s]):
                stack.append((t, path + (t,), probability * p))


def enumerate_subgraphs(
    m: Dtmc, contingencies: Sequence[Predicate], limit: int = MAX_PATHS
) -> SubgraphSet:
    """
    Group the root-to-absorption paths of `m` by stutter-collapsed W-trace.

    Each group induces a sub-DTMC made of the states and edges on its paths,
    with the original (not renormalized) probabilities. Subgraphs are ordered
    by trace length, then by trace.

    """
    contingencies = tuple(contingencies)
    signature = w_signature(m, contingencies)
    groups = {}
    for path, _ in _enumerate_paths(m, limit):
        trace = []
        for s in path:
            if not trace or trace[-1] != signature[s]:
                trace.append(signature[s])
        groups.setdefault(tuple(trace), []).append(path)

    subgraphs = []
    for trace in sorted(groups, key=lambda t: (len(t), t)):
        paths = groups[trace]
        members = sorted(set().union(*paths))
        edges = set()
        for path in paths:
            edges.update(zip(path, path[1:]))
            edges.add((path[-1], path[-1]))
        probability = {
            (s, t): p for s in members for t, p in m.transitions[s]
        }
        sub = Dtmc.build(
            m.variables,
            [
                (m.states[s].name, m.states[s].valuation, m.states[s].labels)
                for s in members
            ],
            [
                (m.states[s].name, m.states[t].name, probability[(s, t)])
                for s, t in sorted(edges)
            ],
            initial=m.names({path[0] for path in paths}),
            propositions=m.ap,
            stochastic=False,
        )
        subgraphs.append(Subgraph(trace, sub, tuple(paths)))
    logger.info(f"Decomposed {m.n_states} states into {len(subgraphs)} subgraphs")
    return SubgraphSet(contingencies, tuple(subgraphs))
