"""Score-based structure search and Structural EM.

The M-step is a steepest-ascent hill climb on BIC over add/delete/reverse
moves among substantive nodes (plus arcs out of selection nodes).  Prior
arcs are frozen; arcs touching missingness indicators are never searched.
The E-step imputes each missing cell with its posterior mode.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import MISSING, Dataset
from .errors import ConstraintConflict, EmptyDataset, IncompleteRow
from .graph import LATENT, MGraph, PriorKnowledge, build_graph
from .model import (CausalNetwork, _aligned_codes, estimate_table,
                    family_counts, fit_parameters, log_likelihood, row_posteriors)

log = logging.getLogger(__name__)

ADD, DELETE, REVERSE = "add", "delete", "reverse"
_RANK = {ADD: 0, DELETE: 1, REVERSE: 2}
MIN_GAIN = 1e-9


@dataclass(frozen=True)
class ScoreValue:
    total: float
    locals: dict

    def __float__(self):
        return self.total


@dataclass(frozen=True)
class SemConfig:
    max_iterations: int = 20
    tolerance: float = 1e-6
    max_parents: int = 5
    alpha: float = 1.0
    seed: int = 0
    restarts: int = 1
    search: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


class _Scorer:
    """Cached BIC local scores over a complete code matrix."""

    def __init__(self, d: Dataset, names, alpha):
        self.codes = d.codes
        self.weights = d.weights
        self.col = {n: d.col(n) for n in names}
        self.card = {n: d.schema[n].card for n in names}
        self.alpha = alpha
        self.n_eff = float(d.weights.sum())
        if not self.n_eff > 0:
            raise EmptyDataset("cannot score an empty dataset")
        self.log_n = math.log(self.n_eff)
        self.cache = {}

    def local(self, node, parents) -> float:
        key = (node, frozenset(parents))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        parents = sorted(parents)
        counts = family_counts(self.codes, self.weights, self.col[node],
                               [self.col[p] for p in parents], self.card[node],
                               [self.card[p] for p in parents])
        table = estimate_table(counts, self.alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = float(np.sum(np.where(counts > 0, counts * np.log(table), 0.0)))
        k = (self.card[node] - 1) * math.prod(self.card[p] for p in parents)
        score = ll - 0.5 * k * self.log_n
        self.cache[key] = score
        return score


def _require_complete(d: Dataset, names):
    cols = [d.col(n) for n in names]
    if d.n_rows and (d.codes[:, cols] == MISSING).any():
        raise IncompleteRow("structure scoring needs rows complete on the scored nodes")


def bic(g: MGraph, d: Dataset, alpha: float = 1.0) -> ScoreValue:
    """Decomposable BIC with natural log:
    ``ll(family | fitted) - (k / 2) ln n_eff`` per node."""
    names = [n for n, role in g.nodes if role.kind != LATENT]
    if d.n_rows == 0:
        raise EmptyDataset("cannot score an empty dataset")
    _require_complete(d, names)
    scorer = _Scorer(d, names, alpha)
    locals_ = {n: scorer.local(n, g.parents(n)) for n in names}
    return ScoreValue(math.fsum(locals_.values()), locals_)


def _reaches(children, src, dst, skip=None) -> bool:
    stack, seen = [src], {src}
    while stack:
        n = stack.pop()
        for c in children[n]:
            if (n, c) == skip:
                continue
            if c == dst:
                return True
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return False


def _descendant_sets(names, children):
    out = {}
    for n in names:
        seen, stack = set(), [n]
        while stack:
            for c in children[stack.pop()]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        out[n] = seen
    return out


def _check_prior(pk: PriorKnowledge, start: MGraph | None):
    for u, v in pk.whitelist:
        if (u, v) in pk.blacklist:
            raise ConstraintConflict(f"{u} -> {v} both required and forbidden")
    if start is not None and not pk.whitelist <= start.edges:
        raise ConstraintConflict("start graph does not contain every prior arc")


def hill_climb_path(d: Dataset, pk: PriorKnowledge, cfg: SemConfig = SemConfig(),
                    start: MGraph | None = None):
    """Hill climb returning ``(graph, scores)`` where ``scores[0]`` is the
    start score and each later entry the score after an accepted move."""
    g = pk.graph
    _check_prior(pk, start)
    names = [n for n, role in g.nodes if role.kind != LATENT]
    if d.n_rows == 0:
        raise EmptyDataset("cannot learn structure from an empty dataset")
    _require_complete(d, names)
    scorer = _Scorer(d, names, cfg.alpha)

    edges = set(start.edges if start is not None else pk.whitelist)
    parents = {n: set() for n in g.names}
    children = {n: set() for n in g.names}
    for u, v in edges:
        parents[v].add(u)
        children[u].add(v)
    local = {n: scorer.local(n, parents[n]) for n in names}
    scores = [math.fsum(local.values())]

    pairs = [(u, v) for u in sorted(names) for v in sorted(names) if pk.allows(u, v)]
    frozen = pk.whitelist

    while True:
        desc = _descendant_sets(g.names, children)
        best = None
        for u, v in pairs:
            if (u, v) in edges:
                if (u, v) in frozen:
                    continue
                new_v = scorer.local(v, parents[v] - {u})
                cand = (-(new_v - local[v]), _RANK[DELETE], u, v, DELETE)
                if best is None or cand < best:
                    best = cand
                if (v, u) in pk.blacklist or not pk.allows(v, u):
                    continue
                if len(parents[u]) >= cfg.max_parents:
                    continue
                if _reaches(children, u, v, skip=(u, v)):
                    continue
                new_u = scorer.local(u, parents[u] | {v})
                delta = (new_v - local[v]) + (new_u - local[u])
                cand = (-delta, _RANK[REVERSE], u, v, REVERSE)
                if cand < best:
                    best = cand
            elif (v, u) not in edges:
                if len(parents[v]) >= cfg.max_parents or u in desc[v]:
                    continue
                delta = scorer.local(v, parents[v] | {u}) - local[v]
                cand = (-delta, _RANK[ADD], u, v, ADD)
                if best is None or cand < best:
                    best = cand
        if best is None or -best[0] <= MIN_GAIN:
            break
        _, _, u, v, op = best
        if op == ADD:
            edges.add((u, v))
            parents[v].add(u)
            children[u].add(v)
        elif op == DELETE:
            edges.discard((u, v))
            parents[v].discard(u)
            children[u].discard(v)
        else:
            edges.discard((u, v))
            parents[v].discard(u)
            children[u].discard(v)
            edges.add((v, u))
            parents[u].add(v)
            children[v].add(u)
            local[u] = scorer.local(u, parents[u])
        local[v] = scorer.local(v, parents[v])
        scores.append(math.fsum(local.values()))
    return build_graph(g.nodes, edges), scores


def hill_climb(d: Dataset, pk: PriorKnowledge, cfg: SemConfig = SemConfig(),
               start: MGraph | None = None) -> MGraph:
    """Steepest-ascent BIC search constrained by ``pk``.

    Ties between equally good moves go to add, then delete, then reverse,
    then the lexicographically smallest edge.
    """
    return hill_climb_path(d, pk, cfg, start)[0]


# -- E-step ------------------------------------------------------------------

def _impute_codes(c: CausalNetwork, d: Dataset, threads: int = 1):
    ev = _aligned_codes(c, d)
    wanted = [n for j, n in enumerate(c.nodes) if (ev[:, j] == MISSING).any()]
    codes = d.codes.copy()
    if not wanted:
        return codes, np.zeros(d.n_rows, dtype=bool)
    margs, flags = row_posteriors(c, ev, wanted, threads=threads)
    for name in wanted:
        j = d.col(name)
        miss = codes[:, j] == MISSING
        codes[miss, j] = np.argmax(margs[name][miss], axis=1)
    return codes, flags


def impute_mode(c: CausalNetwork, d: Dataset, threads: int = 1) -> Dataset:
    """Fill every missing cell of a network node with the mode of its
    posterior given the row's observed cells (first level wins ties)."""
    codes, flags = _impute_codes(c, d, threads)
    if flags.any():
        log.warning("%d row(s) had impossible evidence; imputed from prior modes", int(flags.sum()))
    return d.with_codes(codes)


# -- Structural EM -----------------------------------------------------------

@dataclass
class SemIteration:
    iteration: int
    graph: MGraph
    score: float
    imputed_changed: int
    loglik: float
    shd_vs_prev: int
    move_scores: list = field(default_factory=list)
    flagged_rows: int = 0


@dataclass
class SemTrace:
    iterations: list = field(default_factory=list)
    best_iteration: int = 0
    stop_reason: str = "max_iterations"
    restart: int = 0

    @property
    def converged(self) -> bool:
        return self.stop_reason != "max_iterations"

    def format(self) -> str:
        lines = [
            f"iter={it.iteration} score={float(it.score)!r} shd_vs_prev={it.shd_vs_prev} "
            f"imputed_changed={it.imputed_changed} loglik={float(it.loglik)!r}"
            for it in self.iterations
        ]
        lines.append(f"best={self.best_iteration} stop={self.stop_reason} restart={self.restart}")
        return "\n".join(lines) + "\n"


def _perturbed_start(pk: PriorKnowledge, rng, n_edges: int) -> MGraph:
    names = [n for n, role in pk.graph.nodes if role.kind != LATENT]
    pairs = [(u, v) for u in names for v in names if pk.allows(u, v)]
    edges = set(pk.whitelist)
    for k in rng.permutation(len(pairs)):
        if n_edges == 0:
            break
        u, v = pairs[k]
        if (v, u) in edges:
            continue
        try:
            build_graph(pk.graph.nodes, edges | {(u, v)})
        except Exception:
            continue
        edges.add((u, v))
        n_edges -= 1
    return build_graph(pk.graph.nodes, edges)


def _sem_once(d, g0, pk, cfg, start):
    from .evaluation import shd

    n_missing = int(sum((d.column(n) == MISSING).sum()
                        for n, role in g0.nodes if role.kind != LATENT and n in d.schema))
    cn = fit_parameters(start, d, cfg.alpha)
    graph = start
    prev_codes = d.codes
    trace = SemTrace()
    best = None
    prev_score = None
    for i in range(1, cfg.max_iterations + 1):
        codes, flags = _impute_codes(cn, d, cfg.threads)
        changed = int((codes != prev_codes).sum())
        completed = d.with_codes(codes)
        if cfg.search:
            new_graph, path = hill_climb_path(completed, pk, cfg, start=graph)
        else:
            new_graph, path = graph, []
        new_cn = fit_parameters(new_graph, completed, cfg.alpha)
        score = bic(new_graph, completed, cfg.alpha).total
        ll = log_likelihood(new_cn, completed)
        trace.iterations.append(SemIteration(
            i, new_graph, score, changed, ll, shd(graph, new_graph), path, int(flags.sum())))
        if best is None or score > best[0]:
            best = (score, i, new_cn)
        stop = None
        if n_missing == 0:
            stop = "complete_data"
        elif new_graph == graph and i > 1 and changed == 0:
            stop = "unchanged"
        elif prev_score is not None and (score - prev_score) < cfg.tolerance * abs(prev_score):
            stop = "tolerance"
        graph, cn, prev_codes, prev_score = new_graph, new_cn, codes, score
        if stop:
            trace.stop_reason = stop
            break
    trace.best_iteration = best[1]
    return best[2], trace, best[0]


def sem(d: Dataset, g0: MGraph, pk: PriorKnowledge, cfg: SemConfig = SemConfig()):
    """Structural EM from the prior graph ``g0`` with its arcs frozen.

    Returns ``(network, trace)`` for the best-scoring iterate.  With
    ``cfg.restarts > 1`` later restarts begin from ``g0`` plus a few random
    admissible arcs; the best final score wins.
    """
    if not g0.edges <= pk.whitelist:
        raise ConstraintConflict("every edge of the initial graph must be a prior arc")
    _check_prior(pk, g0)
    best = None
    for r in range(cfg.restarts):
        if r == 0:
            start = g0
        else:
            rng = np.random.default_rng([cfg.seed, r])
            start = _perturbed_start(pk, rng, n_edges=max(1, len(g0) // 5))
        cn, trace, score = _sem_once(d, g0, pk, cfg, start)
        trace.restart = r
        if best is None or score > best[0]:
            best = (score, cn, trace)
    return best[1], best[2]
