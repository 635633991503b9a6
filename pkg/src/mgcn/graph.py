"""Directed acyclic graphs whose nodes carry a missingness/selection role.

A single :class:`MGraph` holds a causal graph extended with missingness
indicators (``R_X``) and selection/context nodes, so the same object serves
as m-graph and selection diagram.  Graphs are immutable; every query here is
pure.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .errors import CycleDetected, ConstraintConflict, RoleViolation, UnknownNode, GraphError

OBSERVED = "observed"
PARTIAL = "partial"
LATENT = "latent"
SELECTION = "selection"
INDICATOR = "indicator"

_KINDS = (OBSERVED, PARTIAL, LATENT, SELECTION, INDICATOR)


@dataclass(frozen=True)
class NodeRole:
    kind: str
    of: str | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise RoleViolation(f"unknown role {self.kind!r}")
        if (self.kind == INDICATOR) != (self.of is not None):
            raise RoleViolation("only indicator roles name the variable they mask")

    def __str__(self):
        return f"{self.kind}={self.of}" if self.of else self.kind

    @classmethod
    def parse(cls, token: str) -> "NodeRole":
        kind, _, of = token.partition("=")
        return cls(kind, of or None)

    @property
    def substantive(self) -> bool:
        return self.kind in (OBSERVED, PARTIAL)


Observed = NodeRole(OBSERVED)
PartiallyObserved = NodeRole(PARTIAL)
Latent = NodeRole(LATENT)
Selection = NodeRole(SELECTION)


def MissIndicator(of: str) -> NodeRole:
    return NodeRole(INDICATOR, of)


@dataclass(frozen=True)
class MGraph:
    """Validated DAG.  Build through :func:`build_graph`."""

    nodes: tuple[tuple[str, NodeRole], ...]
    edges: frozenset[tuple[str, str]]
    _parents: dict = field(default=None, compare=False, repr=False, hash=False)
    _children: dict = field(default=None, compare=False, repr=False, hash=False)
    _index: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        index = {name: i for i, (name, _) in enumerate(self.nodes)}
        parents = {name: [] for name in index}
        children = {name: [] for name in index}
        for u, v in sorted(self.edges, key=lambda e: (index[e[0]], index[e[1]])):
            parents[v].append(u)
            children[u].append(v)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_parents", {k: tuple(v) for k, v in parents.items()})
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in children.items()})

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.nodes]

    def __contains__(self, name) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownNode(name) from None

    def role(self, name: str) -> NodeRole:
        return self.nodes[self.index(name)][1]

    def parents(self, name: str) -> tuple[str, ...]:
        """Parents in declaration order."""
        self.index(name)
        return self._parents[name]

    def children(self, name: str) -> tuple[str, ...]:
        self.index(name)
        return self._children[name]

    def nodes_with(self, *kinds: str) -> list[str]:
        return [name for name, role in self.nodes if role.kind in kinds]

    def indicator_of(self, name: str) -> str | None:
        for other, role in self.nodes:
            if role.kind == INDICATOR and role.of == name:
                return other
        return None

    def indicators(self) -> dict[str, str]:
        """Map partially observed variable -> its indicator node."""
        return {role.of: name for name, role in self.nodes if role.kind == INDICATOR}

    def sorted_edges(self) -> list[tuple[str, str]]:
        return sorted(self.edges, key=lambda e: (self._index[e[0]], self._index[e[1]]))

    def substantive_edges(self) -> frozenset[tuple[str, str]]:
        """Edges not touching a missingness indicator."""
        return frozenset(
            (u, v) for u, v in self.edges
            if self.role(u).kind != INDICATOR and self.role(v).kind != INDICATOR
        )

    def with_edges(self, edges: Iterable[tuple[str, str]], **kw) -> "MGraph":
        return build_graph(self.nodes, edges, **kw)


def _find_cycle(names, edges):
    children = {n: [] for n in names}
    for u, v in edges:
        children[u].append(v)
    state = dict.fromkeys(names, 0)
    for start in names:
        if state[start]:
            continue
        stack = [(start, iter(children[start]))]
        path = [start]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                path.pop()
            elif state[nxt] == 1:
                return path[path.index(nxt):] + [nxt]
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(children[nxt])))
                path.append(nxt)
    return None


def build_graph(nodes, edges, *, allow_indicator_parents: bool = False) -> MGraph:
    """Validate nodes/roles/edges and return an :class:`MGraph`.

    ``nodes`` is a sequence of ``(name, role)``; ``role`` may be a
    :class:`NodeRole` or its text form (``"partial"``, ``"indicator=X"``...).
    """
    nodes = tuple(
        (str(name), role if isinstance(role, NodeRole) else NodeRole.parse(role))
        for name, role in nodes
    )
    names = [name for name, _ in nodes]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise GraphError(f"duplicate node names: {', '.join(dup)}")
    roles = dict(nodes)

    masked = set()
    for name, role in nodes:
        if role.kind != INDICATOR:
            continue
        if role.of not in roles:
            raise UnknownNode(role.of)
        if roles[role.of].kind != PARTIAL:
            raise RoleViolation(f"{name} masks {role.of}, which is not partially observed")
        if role.of in masked:
            raise RoleViolation(f"{role.of} has more than one missingness indicator")
        masked.add(role.of)

    edge_set = set()
    for u, v in edges:
        for n in (u, v):
            if n not in roles:
                raise UnknownNode(n)
        if u == v:
            raise CycleDetected([u, u])
        if roles[v].kind == SELECTION:
            raise RoleViolation(f"edge {u} -> {v} enters a selection node")
        if (roles[u].kind == INDICATOR and roles[v].kind != INDICATOR
                and not allow_indicator_parents):
            raise RoleViolation(f"edge {u} -> {v} leaves a missingness indicator")
        edge_set.add((u, v))

    cycle = _find_cycle(names, sorted(edge_set))
    if cycle:
        raise CycleDetected(cycle)
    return MGraph(nodes, frozenset(edge_set))


def topological_order(g: MGraph) -> list[str]:
    """Kahn's algorithm; among ready nodes the earliest declared goes first."""
    indeg = {n: len(g.parents(n)) for n in g.names}
    ready = [g.index(n) for n in g.names if indeg[n] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        name = g.nodes[heapq.heappop(ready)][0]
        order.append(name)
        for child in g.children(name):
            indeg[child] -= 1
            if indeg[child] == 0:
                heapq.heappush(ready, g.index(child))
    return order


def _closure(start, step):
    seen = set()
    queue = deque(step(start))
    while queue:
        n = queue.popleft()
        if n not in seen:
            seen.add(n)
            queue.extend(step(n))
    return seen


def ancestors(g: MGraph, n: str) -> set[str]:
    g.index(n)
    return _closure(n, g.parents)


def descendants(g: MGraph, n: str) -> set[str]:
    g.index(n)
    return _closure(n, g.children)


def d_separated(g: MGraph, x, y, z) -> bool:
    """True iff ``z`` blocks every trail between ``x`` and ``y``.

    Reachability formulation of the chain/fork/collider rules: a trail may
    pass a collider only when the collider or one of its descendants is in
    ``z``, and may pass a chain or fork node only when it is not in ``z``.
    """
    x, y, z = set(x), set(y), set(z)
    for n in x | y | z:
        g.index(n)
    if x & y or x & z or y & z:
        raise GraphError("x, y and z must be pairwise disjoint")
    if not x or not y:
        return True

    # nodes that are in z or have a descendant in z open colliders
    opens = set()
    queue = deque(z)
    while queue:
        n = queue.popleft()
        if n not in opens:
            opens.add(n)
            queue.extend(g.parents(n))

    # (node, arrived_from_child) ; from_child=True means travelling "up"
    visited = set()
    queue = deque((n, True) for n in x)
    while queue:
        node, up = queue.popleft()
        if (node, up) in visited:
            continue
        visited.add((node, up))
        if node not in z and node in y:
            return False
        if up:
            if node not in z:
                queue.extend((p, True) for p in g.parents(node))
                queue.extend((c, False) for c in g.children(node))
        else:
            if node not in z:
                queue.extend((c, False) for c in g.children(node))
            if node in opens:
                queue.extend((p, True) for p in g.parents(node))
    return True


@dataclass(frozen=True)
class PriorKnowledge:
    """Frozen prior arcs (whitelist), banned arcs (blacklist) and the node
    roles that restrict the search space."""

    graph: MGraph
    whitelist: frozenset[tuple[str, str]]
    blacklist: frozenset[tuple[str, str]]

    def __post_init__(self):
        for u, v in self.whitelist | self.blacklist:
            self.graph.index(u)
            self.graph.index(v)
        both = self.whitelist & self.blacklist
        if both:
            u, v = sorted(both)[0]
            raise ConstraintConflict(f"edge {u} -> {v} is both required and forbidden")
        try:
            self.graph.with_edges(self.whitelist)
        except GraphError as exc:
            raise ConstraintConflict(f"whitelist is not a valid graph: {exc}") from exc

    @classmethod
    def from_graph(cls, g0: MGraph, blacklist=()) -> "PriorKnowledge":
        return cls(g0, frozenset(g0.edges), frozenset(blacklist))

    def allows(self, u: str, v: str) -> bool:
        """Whether the search may add ``u -> v``."""
        ru, rv = self.graph.role(u), self.graph.role(v)
        if (u, v) in self.blacklist or u == v:
            return False
        if not rv.substantive:
            return False
        return ru.substantive or ru.kind == SELECTION


# -- plain-text format -------------------------------------------------------

def parse_graph(text: str) -> tuple[MGraph, frozenset[tuple[str, str]]]:
    """Parse the ``[nodes]/[edges]/[forbidden]`` format.

    Returns the graph and the forbidden edge set.
    """
    section = None
    nodes, edges, forbidden = [], [], []
    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in ("nodes", "edges", "forbidden"):
                raise GraphError(f"line {lineno}: unknown section [{section}]")
            continue
        if section == "nodes":
            parts = line.split()
            if len(parts) != 2:
                raise GraphError(f"line {lineno}: expected 'name role'")
            nodes.append((parts[0], NodeRole.parse(parts[1])))
        elif section in ("edges", "forbidden"):
            u, arrow, v = line.partition("->")
            if not arrow or not u.strip() or not v.strip():
                raise GraphError(f"line {lineno}: expected 'parent -> child'")
            (edges if section == "edges" else forbidden).append((u.strip(), v.strip()))
        else:
            raise GraphError(f"line {lineno}: content outside a section")
    g = build_graph(nodes, edges)
    for u, v in forbidden:
        g.index(u)
        g.index(v)
    return g, frozenset(forbidden)


def format_graph(g: MGraph, forbidden=()) -> str:
    lines = ["[nodes]"]
    lines += [f"{name} {role}" for name, role in g.nodes]
    lines.append("[edges]")
    lines += [f"{u} -> {v}" for u, v in g.sorted_edges()]
    if forbidden:
        lines.append("[forbidden]")
        key = lambda e: (g.index(e[0]), g.index(e[1]))
        lines += [f"{u} -> {v}" for u, v in sorted(forbidden, key=key)]
    return "\n".join(lines) + "\n"


def read_graph(path) -> tuple[MGraph, frozenset[tuple[str, str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_graph(fh.read())


def write_graph(path, g: MGraph, forbidden=()) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_graph(g, forbidden))
