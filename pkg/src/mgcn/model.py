"""Discrete causal networks: CPTs over an :class:`~mgcn.graph.MGraph`.

Parameter fitting, log-likelihood, exact inference by variable elimination,
ancestral sampling and per-row prediction.  The joint distribution is the
product of one conditional table per non-latent node.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import MISSING, Dataset, Schema, Variable
from .errors import (EmptyDataset, IncompleteRow, InconsistentEvidence,
                     ModelError, UnknownNode, ZeroProbabilityEvent, DataError)
from .graph import LATENT, MGraph, NodeRole, build_graph, format_graph, topological_order

log = logging.getLogger(__name__)

ROW_TOL = 1e-12
# largest hidden-state grid enumerated in one vectorised pass
ENUM_LIMIT = 1 << 16
CHUNK_CELLS = 1 << 22


@dataclass(frozen=True, eq=False)
class Cpt:
    """``table[parent codes..., child code] = P(child | parents)``."""

    child: str
    parents: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        object.__setattr__(self, "parents", tuple(self.parents))
        if table.ndim != len(self.parents) + 1:
            raise ModelError(f"cpt {self.child}: table rank does not match parents")
        if (table < 0).any() or not np.isfinite(table).all():
            raise ModelError(f"cpt {self.child}: negative or non-finite entry")
        sums = table.sum(axis=-1)
        if np.abs(sums - 1.0).max(initial=0.0) > ROW_TOL:
            raise ModelError(f"cpt {self.child}: rows do not sum to 1")
        table.flags.writeable = False
        object.__setattr__(self, "table", table)

    def row(self, parent_codes=()) -> np.ndarray:
        return self.table[tuple(parent_codes)]


@dataclass(frozen=True, eq=False)
class Factor:
    scope: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scope", tuple(self.scope))
        if len(set(self.scope)) != len(self.scope):
            raise ModelError("factor scope has repeated variables")
        if np.ndim(self.values) != len(self.scope):
            raise ModelError("factor values do not match scope")

    def aligned(self, scope) -> np.ndarray:
        """Values transposed/reshaped to broadcast against ``scope``."""
        perm = [self.scope.index(v) for v in scope if v in self.scope]
        arr = np.transpose(self.values, perm)
        it = iter(arr.shape)
        return arr.reshape([next(it) if v in self.scope else 1 for v in scope])

    def __mul__(self, other: "Factor") -> "Factor":
        scope = self.scope + tuple(v for v in other.scope if v not in self.scope)
        return Factor(scope, self.aligned(scope) * other.aligned(scope))

    def sum_out(self, var: str) -> "Factor":
        axis = self.scope.index(var)
        return Factor(self.scope[:axis] + self.scope[axis + 1:], self.values.sum(axis=axis))

    def reduce(self, evidence: Mapping[str, int]) -> "Factor":
        index = tuple(evidence[v] if v in evidence else slice(None) for v in self.scope)
        return Factor(tuple(v for v in self.scope if v not in evidence), self.values[index])

    def normalized(self) -> "Factor":
        total = self.values.sum()
        return Factor(self.scope, self.values / total)

    def as_dict(self, levels) -> dict:
        out = {}
        for idx in np.ndindex(*self.values.shape):
            key = tuple(levels[v][i] for v, i in zip(self.scope, idx))
            out[key] = float(self.values[idx])
        return out


@dataclass(frozen=True, eq=False)
class CausalNetwork:
    graph: MGraph
    levels: dict
    cpts: dict
    _order: list = field(default=None, repr=False)

    def __post_init__(self):
        levels = {k: tuple(v) for k, v in self.levels.items()}
        object.__setattr__(self, "levels", levels)
        for name in self.nodes:
            if name not in self.cpts:
                raise ModelError(f"no cpt for node {name}")
            cpt = self.cpts[name]
            if cpt.parents != self.graph.parents(name):
                raise ModelError(f"cpt {name}: parents differ from graph")
            shape = tuple(len(levels[p]) for p in cpt.parents) + (len(levels[name]),)
            if cpt.table.shape != shape:
                raise ModelError(f"cpt {name}: table shape {cpt.table.shape} != {shape}")
        order = [n for n in topological_order(self.graph) if n in self.cpts]
        object.__setattr__(self, "_order", order)

    @property
    def nodes(self) -> list[str]:
        return [name for name, role in self.graph.nodes if role.kind != LATENT]

    def card(self, name: str) -> int:
        return len(self.levels[name])

    def code(self, name: str, level) -> int:
        if name not in self.levels:
            raise UnknownNode(name)
        if isinstance(level, (int, np.integer)) and not isinstance(level, bool):
            return int(level)
        try:
            return self.levels[name].index(level)
        except ValueError:
            raise ModelError(f"{name}: unknown level {level!r}") from None

    def schema(self) -> Schema:
        return Schema(tuple(Variable(n, self.levels[n]) for n in self.nodes))

    def factor(self, name: str) -> Factor:
        cpt = self.cpts[name]
        return Factor(cpt.parents + (name,), cpt.table)

    def with_cpt(self, cpt: Cpt) -> "CausalNetwork":
        """Replace one node's table; the graph is adjusted to the new parents."""
        edges = {(u, v) for u, v in self.graph.edges if v != cpt.child}
        edges |= {(p, cpt.child) for p in cpt.parents}
        graph = build_graph(self.graph.nodes, edges)
        cpts = dict(self.cpts)
        cpts[cpt.child] = cpt
        return CausalNetwork(graph, self.levels, cpts)


# -- fitting -----------------------------------------------------------------

def family_counts(codes, weights, child_col, parent_cols, child_card, parent_cards):
    """Weighted counts ``N[parent config..., child]`` over available cases."""
    cols = list(parent_cols) + [child_col]
    sub = codes[:, cols]
    keep = (sub != MISSING).all(axis=1)
    sub, w = sub[keep], weights[keep]
    shape = tuple(parent_cards) + (child_card,)
    flat = np.ravel_multi_index(sub.T, shape) if len(sub) else np.zeros(0, dtype=np.int64)
    counts = np.bincount(flat, weights=w, minlength=int(np.prod(shape)))
    return counts.reshape(shape)


def estimate_table(counts, alpha: float) -> np.ndarray:
    """Smoothed conditional proportions; a configuration with no mass and
    ``alpha == 0`` gets a uniform row."""
    num = counts + alpha
    den = num.sum(axis=-1, keepdims=True)
    card = counts.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0 / card)
    return table


def fit_parameters(g: MGraph, d: Dataset, alpha: float = 1.0) -> CausalNetwork:
    """Available-case maximum-likelihood (``alpha=0``) or smoothed CPTs.

    Each family is counted over the rows where the child and all its parents
    are observed, accumulating row weights.
    """
    if alpha < 0:
        raise ModelError("alpha must be non-negative")
    if d.n_rows == 0 or d.weights.sum() <= 0:
        raise EmptyDataset("cannot fit parameters on an empty dataset")
    levels = {}
    cpts = {}
    for name, role in g.nodes:
        if role.kind == LATENT:
            continue
        levels[name] = d.schema[name].levels
    for name, role in g.nodes:
        if role.kind == LATENT:
            continue
        parents = g.parents(name)
        for p in parents:
            if g.role(p).kind == LATENT:
                raise ModelError(f"{name} has latent parent {p}; latent estimation unsupported")
        counts = family_counts(
            d.codes, d.weights, d.col(name), [d.col(p) for p in parents],
            len(levels[name]), [len(levels[p]) for p in parents])
        cpts[name] = Cpt(name, parents, estimate_table(counts, alpha))
    return CausalNetwork(g, levels, cpts)


def _aligned_codes(c: CausalNetwork, d: Dataset) -> np.ndarray:
    """Dataset codes re-ordered to ``c.nodes``; nodes without a column are
    all-missing.  Level lists must agree."""
    out = np.full((d.n_rows, len(c.nodes)), MISSING, dtype=np.int64)
    for j, name in enumerate(c.nodes):
        if name in d.schema:
            if d.schema[name].levels != c.levels[name]:
                raise DataError(f"{name}: dataset levels differ from network levels")
            out[:, j] = d.column(name)
    return out


def log_likelihood(c: CausalNetwork, d: Dataset) -> float:
    """``sum_rows weight * sum_families ln P(x | parents)`` on complete rows."""
    codes = _aligned_codes(c, d)
    if (codes == MISSING).any():
        row = int(np.flatnonzero((codes == MISSING).any(axis=1))[0])
        raise IncompleteRow(f"row {row} is not complete on the network nodes")
    pos = {n: j for j, n in enumerate(c.nodes)}
    total = 0.0
    for name in c.nodes:
        cpt = c.cpts[name]
        idx = tuple(codes[:, pos[p]] for p in cpt.parents) + (codes[:, pos[name]],)
        p = cpt.table[idx]
        bad = (p <= 0) & (d.weights > 0)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ZeroProbabilityEvent(f"row {row}: P({name} | parents) = 0")
        with np.errstate(divide="ignore"):
            total += float(np.sum(np.where(d.weights > 0, d.weights * np.log(p), 0.0)))
    return total


# -- exact inference ---------------------------------------------------------

def _relevant(c: CausalNetwork, targets) -> set:
    keep = set()
    stack = list(targets)
    while stack:
        n = stack.pop()
        if n not in keep:
            keep.add(n)
            stack.extend(c.graph.parents(n))
    return keep


def _min_degree_order(factors, hidden):
    hidden = set(hidden)
    scopes = [set(f.scope) for f in factors]
    order = []
    while hidden:
        def degree(v):
            nb = set()
            for s in scopes:
                if v in s:
                    nb |= s
            return len(nb) - 1
        v = min(sorted(hidden), key=degree)
        merged = set()
        rest = []
        for s in scopes:
            if v in s:
                merged |= s
            else:
                rest.append(s)
        merged.discard(v)
        scopes = rest + [merged]
        hidden.remove(v)
        order.append(v)
    return order


def _eliminate_codes(c: CausalNetwork, query, evidence: dict) -> Factor:
    query = list(query)
    relevant = _relevant(c, query + list(evidence))
    factors = [c.factor(n).reduce(evidence) for n in c.nodes if n in relevant]
    hidden = relevant - set(query) - set(evidence)
    for var in _min_degree_order(factors, hidden):
        touching = [f for f in factors if var in f.scope]
        factors = [f for f in factors if var not in f.scope]
        prod = touching[0]
        for f in touching[1:]:
            prod = prod * f
        factors.append(prod.sum_out(var))
    result = Factor(tuple(query), np.ones([c.card(q) for q in query]))
    for f in factors:
        result = result * f
    result = Factor(tuple(query), result.aligned(query))
    total = result.values.sum()
    if not total > 0:
        raise InconsistentEvidence("evidence has probability zero under the network")
    return result.normalized()


def eliminate(c: CausalNetwork, query, evidence: Mapping | None = None) -> Factor:
    """Posterior ``P(query | evidence)`` as a normalised :class:`Factor`.

    Variable elimination over the ancestors of query and evidence with a
    min-degree ordering (ties by name).  Evidence values may be level labels
    or integer codes.
    """
    evidence = dict(evidence or {})
    query = list(query)
    for n in query + list(evidence):
        if n not in c.levels:
            raise UnknownNode(n)
    if set(query) & set(evidence):
        raise ModelError("query and evidence overlap")
    if len(set(query)) != len(query):
        raise ModelError("repeated query variable")
    ev = {n: c.code(n, v) for n, v in evidence.items()}
    return _eliminate_codes(c, query, ev)


def _kept_nodes(c: CausalNetwork, evidence_nodes, query_nodes):
    """Non-barren nodes: evidence, query and ancestors of either."""
    return _relevant(c, list(evidence_nodes) + list(query_nodes))


def _pattern_marginals(c, rows, hidden_mask, wanted):
    """Exact posterior marginals of ``wanted`` for rows sharing one hidden set.

    Enumerates the joint state of the (non-barren) hidden nodes for all rows
    at once.  Returns ``(marginals dict, ok mask)``; ``None`` when the grid
    is too large for vectorised enumeration.
    """
    nodes = c.nodes
    pos = {n: j for j, n in enumerate(nodes)}
    hidden = [n for n, h in zip(nodes, hidden_mask) if h]
    evidence_nodes = [n for n, h in zip(nodes, hidden_mask) if not h]
    query = [n for n in wanted if n in hidden]
    kept = _kept_nodes(c, evidence_nodes, query)
    grid_nodes = [n for n in hidden if n in kept]
    cards = [c.card(n) for n in grid_nodes]
    total = int(np.prod(cards)) if cards else 1
    if total > ENUM_LIMIT:
        return None
    grid = np.indices(cards).reshape(len(cards), -1) if cards else np.zeros((0, 1), dtype=np.int64)
    gpos = {n: k for k, n in enumerate(grid_nodes)}

    n_rows = len(rows)
    joint = np.ones((n_rows, total))
    for name in nodes:
        if name not in kept:
            continue
        cpt = c.cpts[name]
        members = cpt.parents + (name,)
        shape = cpt.table.shape
        flat = 0
        stride = 1
        for m, size in zip(reversed(members), reversed(shape)):
            if m in gpos:
                flat = flat + stride * grid[gpos[m]][None, :]
            else:
                flat = flat + stride * rows[:, pos[m]][:, None]
            stride *= size
        joint *= cpt.table.ravel()[flat]
    mass = joint.sum(axis=1)
    ok = mass > 0
    out = {}
    for q in query:
        k = gpos[q]
        marg = np.zeros((n_rows, c.card(q)))
        for level in range(c.card(q)):
            marg[:, level] = joint[:, grid[k] == level].sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            marg = marg / np.where(ok, mass, 1.0)[:, None]
        out[q] = marg
    return out, ok


def row_posteriors(c: CausalNetwork, ev: np.ndarray, wanted, threads: int = 1):
    """Posterior marginals of each ``wanted`` node for every row of ``ev``.

    ``ev`` holds codes aligned with ``c.nodes``; ``-1`` marks a hidden node.
    Rows where a wanted node is observed get the one-hot of that value.
    Returns ``(marginals, flags)``; ``flags[i]`` is true when row ``i``'s
    evidence has probability zero, in which case its marginals are the
    prior marginals.
    """
    ev = np.asarray(ev, dtype=np.int64)
    n = ev.shape[0]
    wanted = list(wanted)
    pos = {name: j for j, name in enumerate(c.nodes)}
    out = {}
    for w in wanted:
        marg = np.zeros((n, c.card(w)))
        seen = ev[:, pos[w]] != MISSING
        marg[np.flatnonzero(seen), ev[seen, pos[w]]] = 1.0
        out[w] = marg
    flags = np.zeros(n, dtype=bool)
    if n == 0:
        return out, flags

    hidden = ev == MISSING
    patterns, inverse = np.unique(hidden, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    jobs = []
    for p, mask in enumerate(patterns):
        idx = np.flatnonzero(inverse == p)
        if not any(mask[pos[w]] for w in wanted):
            continue
        per = max(1, CHUNK_CELLS // max(1, 1 << min(int(mask.sum()), 30)))
        for start in range(0, len(idx), per):
            jobs.append((mask, idx[start:start + per]))

    def run(job):
        mask, idx = job
        res = _pattern_marginals(c, ev[idx], mask, wanted)
        if res is None:
            return _per_row(c, ev[idx], mask, wanted)
        return res

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    prior = None
    for (mask, idx), (margs, ok) in zip(jobs, results):
        for q, m in margs.items():
            out[q][idx] = m
        if not ok.all():
            if prior is None:
                prior = {w: eliminate(c, [w]).values for w in wanted}
            bad = idx[~ok]
            flags[bad] = True
            for q in margs:
                out[q][bad] = prior[q]
    return out, flags


def _per_row(c, rows, mask, wanted):
    nodes = c.nodes
    query = [w for w in wanted if mask[nodes.index(w)]]
    margs = {q: np.zeros((len(rows), c.card(q))) for q in query}
    ok = np.ones(len(rows), dtype=bool)
    for i, row in enumerate(rows):
        evidence = {n: int(v) for n, v, h in zip(nodes, row, mask) if not h}
        try:
            for q in query:
                margs[q][i] = _eliminate_codes(c, [q], evidence).values
        except InconsistentEvidence:
            ok[i] = False
    return margs, ok


def predict(c: CausalNetwork, d: Dataset, target: str, target_level, threads: int = 1):
    """Per-row ``P(target = target_level | observed cells)``.

    The target's own cell and its missingness indicator are never used as
    evidence.  Returns ``(scores, flags)``; a flagged row had impossible
    evidence and was scored with the prior.
    """
    if target not in c.levels:
        raise UnknownNode(target)
    level = c.code(target, target_level)
    ev = _aligned_codes(c, d)
    pos = {n: j for j, n in enumerate(c.nodes)}
    ev[:, pos[target]] = MISSING
    r = c.graph.indicator_of(target)
    if r is not None and r in pos:
        ev[:, pos[r]] = MISSING
    margs, flags = row_posteriors(c, ev, [target], threads=threads)
    if flags.any():
        log.warning("%d row(s) had impossible evidence; scored with the prior", int(flags.sum()))
    return margs[target][:, level], flags


# -- sampling ----------------------------------------------------------------

def sample(c: CausalNetwork, n: int, seed: int, clamp: Mapping | None = None) -> Dataset:
    """Ancestral sampling in topological order.  ``clamp`` fixes nodes to a
    level (used to draw one cohort at a time)."""
    if n < 0:
        raise ModelError("n must be non-negative")
    rng = np.random.default_rng(seed)
    clamp = {k: c.code(k, v) for k, v in (clamp or {}).items()}
    pos = {name: j for j, name in enumerate(c.nodes)}
    codes = np.zeros((n, len(c.nodes)), dtype=np.int64)
    for name in c._order:
        u = rng.random(n)
        if name in clamp:
            codes[:, pos[name]] = clamp[name]
            continue
        cpt = c.cpts[name]
        probs = cpt.table[tuple(codes[:, pos[p]] for p in cpt.parents)]
        cum = np.cumsum(probs, axis=-1)
        drawn = (u[:, None] >= cum).sum(axis=1)
        codes[:, pos[name]] = np.minimum(drawn, c.card(name) - 1)
    return Dataset(c.schema(), codes)


# -- serialisation -----------------------------------------------------------

def _check_token(tok):
    if not tok or any(ch.isspace() for ch in tok) or any(ch in tok for ch in ":,|#"):
        raise ModelError(f"level {tok!r} cannot be serialised")
    return tok


def format_network(c: CausalNetwork) -> str:
    """Graph sections, a ``[levels]`` section and ``cpt child | parents``
    blocks with one line per parent configuration (17 significant digits)."""
    lines = [format_graph(c.graph).rstrip("\n"), "[levels]"]
    for name in c.nodes:
        lines.append(f"{name}: " + ",".join(_check_token(t) for t in c.levels[name]))
    lines.append("[cpts]")
    for name in c.nodes:
        cpt = c.cpts[name]
        lines.append(f"cpt {name} | {' '.join(cpt.parents)}".rstrip())
        for idx in np.ndindex(*cpt.table.shape[:-1]):
            key = " ".join(c.levels[p][i] for p, i in zip(cpt.parents, idx))
            probs = " ".join(format(float(v), ".17g") for v in cpt.table[idx])
            lines.append(f"{key} : {probs}" if key else f": {probs}")
    return "\n".join(lines) + "\n"


def parse_network(text: str) -> CausalNetwork:
    graph_lines, level_lines, cpt_lines = [], [], []
    target = graph_lines
    for raw in text.split("\n"):
        stripped = raw.split("#", 1)[0].strip()
        if stripped == "[levels]":
            target = level_lines
            continue
        if stripped == "[cpts]":
            target = cpt_lines
            continue
        target.append(raw)
    from .graph import parse_graph
    from .data import parse_schema
    graph, _ = parse_graph("\n".join(graph_lines))
    levels = parse_schema("\n".join(level_lines)).levels()

    cpts = {}
    child = None
    rows = {}

    def flush():
        if child is None:
            return
        parents = graph.parents(child)
        shape = tuple(len(levels[p]) for p in parents) + (len(levels[child]),)
        table = np.full(shape, np.nan)
        for key, probs in rows.items():
            if len(key) != len(parents):
                raise ModelError(f"cpt {child}: configuration {key} has wrong arity")
            idx = tuple(levels[p].index(k) for p, k in zip(parents, key))
            table[idx] = probs
        if np.isnan(table).any():
            raise ModelError(f"cpt {child}: missing parent configurations")
        cpts[child] = Cpt(child, parents, table)

    for lineno, raw in enumerate(cpt_lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("cpt "):
            flush()
            head, _, tail = line[4:].partition("|")
            child = head.strip()
            rows = {}
            if tuple(tail.split()) != graph.parents(child):
                raise ModelError(f"cpt {child}: parent list differs from graph")
            continue
        key, sep, probs = line.partition(":")
        if not sep or child is None:
            raise ModelError(f"cpts line {lineno}: malformed")
        rows[tuple(key.split())] = [float(p) for p in probs.split()]
    flush()
    return CausalNetwork(graph, levels, cpts)


def read_network(path) -> CausalNetwork:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())


def write_network(path, c: CausalNetwork) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_network(c))
