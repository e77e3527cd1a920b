"""DAGs over named nodes, hypothesis spaces and intervention sets.

Graphs are small (a dozen nodes at most), so everything is stored as explicit
edge sets and hypothesis spaces are plain enumerations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidGraph, InvalidIntervention, UnknownNode

MANIPULATIVE = "manipulative"
NON_MANIPULATIVE = "non-manipulative"
TARGET = "target"
ROLES = (MANIPULATIVE, NON_MANIPULATIVE, TARGET)


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph with role-labelled nodes.

    ``nodes`` fixes the declaration order, which is used to break ties in the
    topological order so that sampling is reproducible.
    """

    nodes: tuple[str, ...]
    roles: tuple[str, ...]
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "roles", tuple(self.roles))
        object.__setattr__(self, "edges", frozenset((str(a), str(b)) for a, b in self.edges))
        if len(self.nodes) != len(self.roles):
            raise InvalidGraph("one role per node is required")
        if len(set(self.nodes)) != len(self.nodes):
            raise InvalidGraph(f"duplicate node names in {self.nodes}")
        for name in self.nodes:
            if not name:
                raise InvalidGraph("node names must be non-empty")
        for role in self.roles:
            if role not in ROLES:
                raise InvalidGraph(f"unknown role {role!r}; expected one of {ROLES}")
        if self.roles.count(TARGET) != 1:
            raise InvalidGraph("exactly one node must have the target role")
        known = set(self.nodes)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise InvalidGraph(f"edge {a}->{b} refers to an unknown node")
            if a == b:
                raise InvalidGraph(f"self loop on {a}")
        if any(a == self.target for a, _ in self.edges):
            raise InvalidGraph(f"target {self.target} must be a sink")
        self.topological_order  # raises on cycles

    @classmethod
    def from_roles(cls, roles: Mapping[str, str], edges: Iterable[tuple[str, str]] = ()) -> "Dag":
        return cls(tuple(roles), tuple(roles.values()), frozenset(edges))

    def with_edges(self, edges: Iterable[tuple[str, str]]) -> "Dag":
        return Dag(self.nodes, self.roles, frozenset(edges))

    @cached_property
    def target(self) -> str:
        return self.nodes[self.roles.index(TARGET)]

    @cached_property
    def manipulative(self) -> tuple[str, ...]:
        return tuple(n for n, r in zip(self.nodes, self.roles) if r == MANIPULATIVE)

    def role(self, v: str) -> str:
        self._check(v)
        return self.roles[self.nodes.index(v)]

    def _check(self, v):
        if v not in self.nodes:
            raise UnknownNode(v)

    @cached_property
    def _parent_map(self) -> dict:
        return {v: tuple(u for u in self.nodes if (u, v) in self.edges) for v in self.nodes}

    def parents(self, v: str) -> tuple[str, ...]:
        """Sources of the edges into ``v``, in node declaration order."""
        self._check(v)
        return self._parent_map[v]

    def children(self, v: str) -> tuple[str, ...]:
        self._check(v)
        return tuple(w for w in self.nodes if (v, w) in self.edges)

    def is_root(self, v: str) -> bool:
        return not self.parents(v)

    @cached_property
    def topological_order(self) -> tuple[str, ...]:
        # Kahn's algorithm, always releasing the earliest-declared ready node
        indeg = {v: 0 for v in self.nodes}
        for _, b in self.edges:
            indeg[b] += 1
        order = []
        ready = [v for v in self.nodes if indeg[v] == 0]
        while ready:
            v = min(ready, key=self.nodes.index)
            ready.remove(v)
            order.append(v)
            for w in self.nodes:
                if (v, w) in self.edges:
                    indeg[w] -= 1
                    if indeg[w] == 0:
                        ready.append(w)
        if len(order) != len(self.nodes):
            raise InvalidGraph(f"graph has a cycle: {sorted(self.edges)}")
        return tuple(order)

    def isolated_nodes(self) -> tuple[str, ...]:
        touched = {a for a, _ in self.edges} | {b for _, b in self.edges}
        return tuple(v for v in self.nodes if v not in touched)

    def ancestors(self, v: str) -> set:
        self._check(v)
        out, stack = set(), list(self.parents(v))
        while stack:
            u = stack.pop()
            if u not in out:
                out.add(u)
                stack.extend(self.parents(u))
        return out

    def adjacency(self) -> np.ndarray:
        idx = {v: i for i, v in enumerate(self.nodes)}
        a = np.zeros((len(self.nodes), len(self.nodes)), dtype=int)
        for u, v in self.edges:
            a[idx[u], idx[v]] = 1
        return a

    def describe(self) -> str:
        return ", ".join(f"{a}->{b}" for a, b in sorted(self.edges, key=self._edge_key)) or "(no edges)"

    def _edge_key(self, e):
        return self.nodes.index(e[0]), self.nodes.index(e[1])


def parents(g: Dag, v: str) -> tuple[str, ...]:
    return g.parents(v)


def topological_order(g: Dag) -> tuple[str, ...]:
    return g.topological_order


@dataclass(frozen=True)
class InterventionSet:
    """Ordered intervention targets with a closed interval domain per target.

    The empty set stands for the observational regime.
    """

    targets: tuple[str, ...] = ()
    domain: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "domain", tuple((float(lo), float(hi)) for lo, hi in self.domain))
        if len(self.targets) != len(self.domain):
            raise InvalidIntervention("one domain interval per target is required")
        if len(set(self.targets)) != len(self.targets):
            raise InvalidIntervention(f"repeated targets in {self.targets}")
        for t, (lo, hi) in zip(self.targets, self.domain):
            if not lo < hi:
                raise InvalidIntervention(f"empty domain [{lo}, {hi}] for {t}")

    def __len__(self):
        return len(self.targets)

    def __bool__(self):
        return bool(self.targets)

    @property
    def name(self) -> str:
        return "+".join(self.targets) if self.targets else "(observational)"

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.domain], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.domain], dtype=float)

    def check_values(self, values, atol: float = 1e-9) -> np.ndarray:
        """Return ``values`` as an array of shape (n, |targets|), validated against the domain."""
        v = np.asarray(values, dtype=float)
        if v.ndim <= 1:
            v = v.reshape(-1, len(self.targets)) if len(self.targets) else v.reshape(1, 0)
        if v.shape[-1] != len(self.targets):
            raise InvalidIntervention(f"expected {len(self.targets)} values per row for {self.name}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidIntervention("intervention values must be finite")
        lo, hi = self.lower, self.upper
        bad = (v < lo - atol) | (v > hi + atol)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise InvalidIntervention(
                f"value {v[i, j]} for {self.targets[j]} is outside [{lo[j]}, {hi[j]}]"
            )
        return v


EMPTY_SET = InterventionSet()


def mutilate(g: Dag, iset: InterventionSet) -> Dag:
    """Remove every edge pointing into an intervened node."""
    for t in iset.targets:
        if t not in g.nodes:
            raise InvalidIntervention(f"unknown intervention target {t!r}")
        if g.role(t) != MANIPULATIVE:
            raise InvalidIntervention(f"{t} is not manipulative")
    if not iset.targets:
        return g
    cut = set(iset.targets)
    return g.with_edges(e for e in g.edges if e[1] not in cut)


@dataclass(frozen=True)
class HypothesisSpace:
    """Enumerated support of the graph prior."""

    graphs: tuple[Dag, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if not self.graphs:
            raise InvalidGraph("a hypothesis space needs at least one graph")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"g{i}" for i in range(len(self.graphs))))
        if len(self.names) != len(self.graphs):
            raise InvalidGraph("one name per graph is required")
        first = self.graphs[0]
        seen = set()
        for i, g in enumerate(self.graphs):
            if g.nodes != first.nodes or g.roles != first.roles:
                raise InvalidGraph(f"graph {i} does not share the node set and roles of graph 0")
            if g.isolated_nodes():
                raise InvalidGraph(f"graph {i} has isolated nodes {g.isolated_nodes()}")
            if g.edges in seen:
                raise InvalidGraph(f"graph {i} duplicates an earlier edge set")
            seen.add(g.edges)

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i) -> Dag:
        return self.graphs[i]

    def index(self, g: Dag) -> int:
        for i, h in enumerate(self.graphs):
            if h.edges == g.edges:
                return i
        raise ValueError("graph not in hypothesis space")

    @property
    def nodes(self):
        return self.graphs[0].nodes


def enumerate_dags(roles: Mapping[str, str], allow_isolated: bool = False) -> list[Dag]:
    """Brute-force every DAG over ``roles`` in which the target is a sink.

    Intended for three or four nodes; the number of candidate edge sets grows as
    3^(n choose 2).
    """
    nodes = tuple(roles)
    target = next(n for n, r in roles.items() if r == TARGET)
    out = []
    pairs = list(itertools.combinations(nodes, 2))
    # each unordered pair is absent, a->b or b->a
    for choice in itertools.product(range(3), repeat=len(pairs)):
        edges = set()
        for (a, b), c in zip(pairs, choice):
            if c == 1:
                edges.add((a, b))
            elif c == 2:
                edges.add((b, a))
        if any(a == target for a, _ in edges):
            continue
        try:
            g = Dag.from_roles(roles, edges)
        except InvalidGraph:
            continue
        if not allow_isolated and g.isolated_nodes():
            continue
        out.append(g)
    return out


CHAIN_ROLES = {"X": MANIPULATIVE, "Z": MANIPULATIVE, "Y": TARGET}


def chain_graph() -> Dag:
    return Dag.from_roles(CHAIN_ROLES, [("X", "Z"), ("Z", "Y")])


def enumerate_chain_hypotheses() -> HypothesisSpace:
    """All three-node DAGs over X, Z, Y with Y a sink and no isolated node.

    The true chain X->Z->Y comes first; the rest follow in a fixed order.
    """
    chain = chain_graph()
    others = [g for g in enumerate_dags(CHAIN_ROLES) if g.edges != chain.edges]
    others.sort(key=lambda g: (len(g.edges), g.describe()))
    graphs = [chain, *others]
    return HypothesisSpace(tuple(graphs), tuple(g.describe() for g in graphs))


def dag_from_config(nodes: Sequence[Mapping], edges: Iterable) -> Dag:
    """Build a Dag from config entries ``{name, role}`` and ``[parent, child]`` pairs."""
    return Dag(
        tuple(str(n["name"]) for n in nodes),
        tuple(str(n["role"]) for n in nodes),
        frozenset(tuple(e) for e in edges),
    )
