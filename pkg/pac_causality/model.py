"""
Concrete DTMCs and (abstract) MDPs with exact rational probabilities.

Models are immutable once built and validated. The line-oriented model file
format reads::

    vars pos vel act
    state s0 0 0 1 labels:
    state s7 1/2 1/50 0 labels: fail halt
    trans s0 s1 1/2
    init s0

A JSON mirror with the keys ``vars``, ``props``, ``states``, ``trans`` and
``init`` is accepted as well. MDP files add the action name as a fourth
``trans`` field and list probability-1 terminal actions on ``halting`` lines.

"""

import json
import logging
import re

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Optional

import networkx as nx

from .predicates import Predicate


logger = logging.getLogger("Model")

Probability = Fraction

HALT = "halt"


class ModelSyntaxError(ValueError):
    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class ModelValidationError(ValueError):
    def __init__(self, invariant: str, state: Optional[str], message: str):
        self.invariant = invariant
        self.state = state
        where = f" at state {state}" if state is not None else ""
        super().__init__(f"invariant '{invariant}' violated{where}: {message}")


def parse_probability(text) -> Fraction:
    """
    Exact rational from ``a/b``, a finite decimal or an integer.

    Floats are read through their shortest decimal representation.

    """
    if isinstance(text, float):
        text = repr(text)
    return Fraction(str(text).strip())


@dataclass(frozen=True)
class State:
    id: int
    name: str
    valuation: dict
    labels: frozenset = frozenset()

    def __hash__(self):
        return hash((self.id, self.name))

    @property
    def halting(self) -> bool:
        return HALT in self.labels


@dataclass(frozen=True)
class Action:
    """
    One enabled action of an MDP state.

    Parameters:
    -----------
    name: str
        Action identifier (for abstractions, the name of the concrete member).
    transitions: tuple of (int, Fraction)
        Successor distribution, sorted by target id.
    halting: bool
        Whether the action is the probability-1 self-loop of an absorbing state.
        Such actions terminate a path instead of looping.

    """

    name: str
    transitions: tuple
    halting: bool = False


def _edge_graph(n_states: int, rows: Iterable[tuple]) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(range(n_states))
    for source, row in rows:
        for target, p in row:
            if target != source:
                graph.add_edge(source, target)
    return graph


class _ModelMixin:
    """
    Lookups shared by DTMCs and MDPs.

    """

    @cached_property
    def index(self) -> dict:
        return {s.name: s.id for s in self.states}

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state(self, name: str) -> State:
        return self.states[self.index[name]]

    def ids(self, names: Iterable[str]) -> frozenset:
        """
        Map state names to ids, failing on unknown names.

        """
        ids = []
        for name in names:
            if name not in self.index:
                raise ValueError(f"Unknown state '{name}'")
            ids.append(self.index[name])
        return frozenset(ids)

    def names(self, ids: Iterable[int]) -> list[str]:
        return [self.states[i].name for i in sorted(ids)]

    def satisfying_set(self, predicate: Predicate) -> frozenset:
        """
        Ids of the states satisfying a predicate.

        """
        return frozenset(
            s.id for s in self.states if predicate.evaluate(s, self.ap)
        )

    def reachable(self, sources: Iterable[int]) -> frozenset:
        reached = set(sources)
        for s in list(reached):
            reached |= nx.descendants(self.graph, s)
        return frozenset(reached)


@dataclass(frozen=True)
class Dtmc(_ModelMixin):
    """
    A labeled discrete-time Markov chain, acyclic apart from absorbing self-loops.

    `transitions[i]` is the sparse row of state `i` as (target, probability)
    pairs sorted by target. A substochastic DTMC (``stochastic=False``) only
    requires rows to sum to at most one; the missing mass is lost.

    """

    variables: tuple
    states: tuple
    transitions: tuple
    initial: frozenset
    ap: frozenset
    stochastic: bool = True

    @classmethod
    def build(
        cls,
        variables: Iterable[str],
        states: Iterable[tuple],
        edges: Iterable[tuple],
        initial: Optional[Iterable[str]] = None,
        propositions: Iterable[str] = (),
        stochastic: bool = True,
    ) -> "Dtmc":
        """
        Assemble and validate a DTMC from plain Python values.

        Parameters:
        -----------
        variables: list of str
            Variable names, in order.
        states: list of (name, values, labels)
            `values` is either a mapping from variable name or a sequence in
            variable order; values are converted to exact rationals.
        edges: list of (source name, target name, probability)
        initial: list of str, optional
            Initial state names. Default to the states with in-degree 0.
        propositions: list of str
            Additional atomic propositions that label no state.

        """
        variables = tuple(variables)
        built_states = []
        for i, (name, values, labels) in enumerate(states):
            if not isinstance(values, dict):
                values = dict(zip(variables, values))
            valuation = {var: parse_probability(v) for var, v in values.items()}
            built_states.append(State(i, str(name), valuation, frozenset(labels)))
        index = {s.name: s.id for s in built_states}
        if len(index) != len(built_states):
            raise ModelValidationError("unique-ids", None, "duplicate state names")

        rows = [dict() for _ in built_states]
        for source, target, p in edges:
            for name in (source, target):
                if name not in index:
                    raise ModelValidationError(
                        "unknown-state", name, "transition refers to an undeclared state"
                    )
            p = parse_probability(p)
            if p == 0:
                logger.warning(f"Dropping zero-probability edge {source} -> {target}")
                continue
            row = rows[index[source]]
            row[index[target]] = row.get(index[target], 0) + p
        transitions = tuple(tuple(sorted(row.items())) for row in rows)

        if initial is None:
            graph = _edge_graph(len(built_states), enumerate(transitions))
            initial_ids = frozenset(i for i in graph.nodes if graph.in_degree(i) == 0)
        else:
            initial_ids = frozenset(index[name] for name in initial if name in index)
            missing = [name for name in initial if name not in index]
            if missing:
                raise ModelValidationError(
                    "unknown-state", missing[0], "initial state is not declared"
                )

        ap = frozenset(propositions) | frozenset([HALT])
        for s in built_states:
            ap |= s.labels

        dtmc = cls(
            variables=variables,
            states=tuple(built_states),
            transitions=transitions,
            initial=initial_ids,
            ap=ap,
            stochastic=stochastic,
        )
        dtmc.validate()
        return dtmc

    @cached_property
    def graph(self) -> nx.DiGraph:
        """
        Successor graph without self-loops.

        """
        return _edge_graph(self.n_states, enumerate(self.transitions))

    @cached_property
    def topological_order(self) -> tuple:
        return tuple(nx.lexicographical_topological_sort(self.graph))

    @cached_property
    def depths(self) -> dict:
        """
        Topological generation of every state (0 for in-degree-0 states).

        """
        return {
            s: depth
            for depth, generation in enumerate(nx.topological_generations(self.graph))
            for s in generation
        }

    def successors(self, s: int) -> tuple:
        return self.transitions[s]

    def is_absorbing(self, s: int) -> bool:
        return self.transitions[s] == ((s, Fraction(1)),)

    @property
    def absorbing(self) -> frozenset:
        return frozenset(s for s in range(self.n_states) if self.is_absorbing(s))

    def validate(self) -> None:
        """
        Check the structural invariants, raising on the first violation.

        """
        if not self.initial:
            raise ModelValidationError("initial-nonempty", None, "no initial state")
        for s in self.states:
            if set(s.valuation) != set(self.variables):
                raise ModelValidationError(
                    "uniform-variables",
                    s.name,
                    f"binds {sorted(s.valuation)} instead of {list(self.variables)}",
                )
        for s in self.states:
            row = self.transitions[s.id]
            for _, p in row:
                if not 0 < p <= 1:
                    raise ModelValidationError(
                        "probability-range", s.name, f"probability {p} outside (0, 1]"
                    )
            total = sum((p for _, p in row), Fraction(0))
            if self.stochastic and total != 1:
                raise ModelValidationError(
                    "row-stochastic", s.name, f"outgoing probabilities sum to {total}"
                )
            if not self.stochastic and (total > 1 or not row):
                raise ModelValidationError(
                    "row-stochastic", s.name, f"outgoing probabilities sum to {total}"
                )
            absorbing = self.is_absorbing(s.id)
            if absorbing != s.halting:
                raise ModelValidationError(
                    "halt-iff-absorbing",
                    s.name,
                    "absorbing without halt label"
                    if absorbing
                    else "labeled halt but not absorbing",
                )
            if not absorbing and any(target == s.id for target, _ in row):
                raise ModelValidationError(
                    "self-loop-only-absorbing", s.name, "self-loop on a transient state"
                )
        if not nx.is_directed_acyclic_graph(self.graph):
            cycle = nx.find_cycle(self.graph)
            raise ModelValidationError(
                "acyclic", self.states[cycle[0][0]].name, "state lies on a cycle"
            )


@dataclass(frozen=True)
class Mdp(_ModelMixin):
    """
    A labeled MDP; `actions[i]` lists the enabled actions of state `i`.

    """

    variables: tuple
    states: tuple
    actions: tuple
    initial: frozenset
    ap: frozenset
    stochastic: bool = True

    @classmethod
    def from_dtmc(cls, dtmc: Dtmc) -> "Mdp":
        """
        The MDP with exactly one action per state, named after the state.

        """
        return cls(
            variables=dtmc.variables,
            states=dtmc.states,
            actions=tuple(
                (Action(s.name, dtmc.transitions[s.id], dtmc.is_absorbing(s.id)),)
                for s in dtmc.states
            ),
            initial=dtmc.initial,
            ap=dtmc.ap,
            stochastic=dtmc.stochastic,
        )

    @cached_property
    def graph(self) -> nx.DiGraph:
        return _edge_graph(
            self.n_states,
            ((s, a.transitions) for s, acts in enumerate(self.actions) for a in acts),
        )

    def validate(self) -> None:
        if not self.initial:
            raise ModelValidationError("initial-nonempty", None, "no initial state")
        for s in self.states:
            acts = self.actions[s.id]
            if not acts:
                raise ModelValidationError("actions-nonempty", s.name, "no action")
            for a in acts:
                total = sum((p for _, p in a.transitions), Fraction(0))
                if any(not 0 < p <= 1 for _, p in a.transitions):
                    raise ModelValidationError(
                        "probability-range", s.name, f"action {a.name}"
                    )
                if (self.stochastic and total != 1) or total > 1:
                    raise ModelValidationError(
                        "row-stochastic",
                        s.name,
                        f"action {a.name} probabilities sum to {total}",
                    )
                if a.halting and a.transitions != ((s.id, Fraction(1)),):
                    raise ModelValidationError(
                        "halting-self-loop", s.name, f"action {a.name}"
                    )


# Serialization


def _render_states(model) -> list[str]:
    lines = [" ".join(["vars", *model.variables]).rstrip()]
    extra = sorted(model.ap)
    if extra:
        lines.append(" ".join(["props", *extra]))
    if not model.stochastic:
        lines.append("substochastic")
    for s in model.states:
        values = [str(s.valuation[var]) for var in model.variables]
        lines.append(" ".join(["state", s.name, *values, "labels:", *sorted(s.labels)]))
    return lines


def serialize_model(m: Dtmc, fmt: str = "text") -> str:
    """
    Canonical serialization of a DTMC in the text or JSON format.

    States appear in id order, transitions sorted by source then target, initial
    states are always explicit and rationals are in lowest terms.

    """
    if fmt == "json":
        payload = {
            "vars": list(m.variables),
            "props": sorted(m.ap),
            "states": [
                {
                    "id": s.name,
                    "values": [str(s.valuation[var]) for var in m.variables],
                    "labels": sorted(s.labels),
                }
                for s in m.states
            ],
            "trans": [
                [m.states[source].name, m.states[target].name, str(p)]
                for source, row in enumerate(m.transitions)
                for target, p in row
            ],
            "init": m.names(m.initial),
        }
        if not m.stochastic:
            payload["substochastic"] = True
        return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    if fmt != "text":
        raise ValueError(f"Unknown model format {fmt!r}")

    lines = _render_states(m)
    for source, row in enumerate(m.transitions):
        for target, p in row:
            lines.append(f"trans {m.states[source].name} {m.states[target].name} {p}")
    lines.extend(f"init {name}" for name in m.names(m.initial))
    return "\n".join(lines) + "\n"


def serialize_mdp(m: Mdp, header: Iterable[str] = ()) -> str:
    """
    Text serialization of an MDP; `header` lines are emitted as comments.

    """
    lines = [f"# {line}" for line in header]
    lines.extend(_render_states(m))
    for source, acts in enumerate(m.actions):
        for a in acts:
            for target, p in a.transitions:
                lines.append(
                    f"trans {m.states[source].name} {m.states[target].name} {p} {a.name}"
                )
            if a.halting:
                lines.append(f"halting {m.states[source].name} {a.name}")
    lines.extend(f"init {name}" for name in m.names(m.initial))
    return "\n".join(lines) + "\n"


# Parsing


@dataclass
class _RawModel:
    variables: Optional[list] = None
    propositions: list = field(default_factory=list)
    states: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    halting: list = field(default_factory=list)
    initial: list = field(default_factory=list)
    stochastic: bool = True
    positions: dict = field(default_factory=dict)


def _tokens(line: str) -> list[tuple[int, str]]:
    return [(m.start() + 1, m.group()) for m in re.finditer(r"\S+", line)]


def _read_text(text: str, allow_actions: bool) -> _RawModel:
    raw = _RawModel()
    declared = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        tokens = _tokens(line)
        if not tokens:
            continue
        column, keyword = tokens[0]

        def fail(col, message):
            raise ModelSyntaxError(lineno, col, message)

        def rational(col, value):
            try:
                return parse_probability(value)
            except (ValueError, ZeroDivisionError):
                fail(col, f"expected a rational, got {value!r}")

        if keyword == "vars":
            if raw.variables is not None:
                fail(column, "duplicate vars declaration")
            raw.variables = [tok for _, tok in tokens[1:]]
        elif keyword == "props":
            raw.propositions.extend(tok for _, tok in tokens[1:])
        elif keyword == "substochastic":
            raw.stochastic = False
        elif keyword == "state":
            if raw.variables is None:
                fail(column, "state declared before vars")
            if len(tokens) < 2:
                fail(column, "missing state id")
            name = tokens[1][1]
            if name in declared:
                fail(tokens[1][0], f"duplicate state {name}")
            rest = tokens[2:]
            split = next(
                (k for k, (_, tok) in enumerate(rest) if tok == "labels:"), len(rest)
            )
            values, labels = rest[:split], rest[split + 1 :]
            if len(values) != len(raw.variables):
                col = values[-1][0] if values else tokens[1][0]
                fail(
                    col,
                    f"state {name} has {len(values)} values for {len(raw.variables)} variables",
                )
            raw.states.append(
                (name, [rational(col, tok) for col, tok in values], [tok for _, tok in labels])
            )
            declared.add(name)
        elif keyword == "trans":
            expected = (4, 5) if allow_actions else (4,)
            if len(tokens) not in expected:
                fail(column, f"trans expects {' or '.join(map(str, expected))} fields")
            (_, source), (_, target), (pcol, p) = tokens[1:4]
            action = tokens[4][1] if len(tokens) == 5 else None
            raw.edges.append((source, target, rational(pcol, p), action))
            raw.positions.setdefault(source, (lineno, tokens[1][0]))
            raw.positions.setdefault(target, (lineno, tokens[2][0]))
        elif keyword == "halting" and allow_actions:
            if len(tokens) != 3:
                fail(column, "halting expects a state and an action")
            raw.halting.append((tokens[1][1], tokens[2][1]))
        elif keyword == "init":
            if len(tokens) != 2:
                fail(column, "init expects exactly one state")
            raw.initial.append(tokens[1][1])
            raw.positions.setdefault(tokens[1][1], (lineno, tokens[1][0]))
        else:
            fail(column, f"unknown keyword {keyword!r}")

    if raw.variables is None:
        raise ModelSyntaxError(1, 1, "missing vars declaration")
    for name, (lineno, col) in raw.positions.items():
        if name not in declared:
            raise ModelSyntaxError(lineno, col, f"undeclared state {name}")
    return raw


def _read_json(text: str) -> _RawModel:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelSyntaxError(e.lineno, e.colno, e.msg) from e
    try:
        raw = _RawModel(
            variables=list(payload["vars"]),
            propositions=list(payload.get("props", [])),
            stochastic=not payload.get("substochastic", False),
        )
        for entry in payload["states"]:
            raw.states.append(
                (
                    entry["id"],
                    [parse_probability(v) for v in entry["values"]],
                    list(entry.get("labels", [])),
                )
            )
        for source, target, p in payload["trans"]:
            raw.edges.append((source, target, parse_probability(p), None))
        raw.initial = list(payload.get("init", []))
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as e:
        raise ModelSyntaxError(1, 1, f"malformed JSON model: {e!r}") from e
    return raw


def parse_model(text: str) -> Dtmc:
    """
    Parse and validate a DTMC from the text or JSON model format.

    Parameters:
    -----------
    text: str
        Contents of a model file. JSON is detected by a leading ``{``.

    Returns:
    --------
    Dtmc
        The validated model. Initial states default to the in-degree-0 states
        when the file has no ``init`` line.

    """
    raw = _read_json(text) if text.lstrip().startswith("{") else _read_text(text, False)
    return Dtmc.build(
        raw.variables,
        raw.states,
        [(s, t, p) for s, t, p, _ in raw.edges],
        initial=raw.initial or None,
        propositions=raw.propositions,
        stochastic=raw.stochastic,
    )


def parse_mdp(text: str) -> Mdp:
    """
    Parse and validate an MDP written by `serialize_mdp`.

    """
    raw = _read_text(text, True)
    states = [
        State(i, name, dict(zip(raw.variables, values)), frozenset(labels))
        for i, (name, values, labels) in enumerate(raw.states)
    ]
    index = {s.name: s.id for s in states}
    grouped = [dict() for _ in states]
    for source, target, p, action in raw.edges:
        action = action if action is not None else source
        row = grouped[index[source]].setdefault(action, {})
        row[index[target]] = row.get(index[target], 0) + p
    halting = set(raw.halting)
    actions = tuple(
        tuple(
            Action(name, tuple(sorted(row.items())), (s.name, name) in halting)
            for name, row in grouped[s.id].items()
        )
        for s in states
    )
    ap = frozenset(raw.propositions) | frozenset([HALT])
    for s in states:
        ap |= s.labels
    mdp = Mdp(
        variables=tuple(raw.variables),
        states=tuple(states),
        actions=actions,
        initial=frozenset(index[name] for name in raw.initial),
        ap=ap,
        stochastic=raw.stochastic,
    )
    mdp.validate()
    return mdp
