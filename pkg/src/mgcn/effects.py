"""Back-door identification and adjustment."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (GraphError, InvalidAdjustmentSet, NotIdentifiable,
                     ZeroProbabilityStratum, InconsistentEvidence)
from .graph import OBSERVED, SELECTION, MGraph, d_separated, descendants
from .model import CausalNetwork, eliminate

MAX_CANDIDATES = 20


@dataclass(frozen=True)
class AdjustmentQuery:
    treatment: str
    outcome: str
    x: str
    y: str | None = None

    def __post_init__(self):
        if self.treatment == self.outcome:
            raise GraphError("treatment and outcome must differ")


@dataclass
class EffectResult:
    adjustment: tuple[str, ...]
    distribution: dict
    strata: list = field(default_factory=list)  # (z levels, P(z), P(Y | x, z))

    def __getitem__(self, level):
        return self.distribution[level]


def is_backdoor(g: MGraph, z, x: str, y: str) -> bool:
    z = set(z)
    for n in z | {x, y}:
        g.index(n)
    if x in z or y in z:
        raise GraphError("adjustment set must exclude treatment and outcome")
    if z & descendants(g, x):
        return False
    cut = g.with_edges({(u, v) for u, v in g.edges if u != x},
                       allow_indicator_parents=True)
    return d_separated(cut, {x}, {y}, z)


def find_backdoor(g: MGraph, x: str, y: str) -> tuple[str, ...]:
    """Smallest back-door set over observed and selection nodes.

    Candidates are tried by increasing size, lexicographically within a
    size.  Raises :class:`NotIdentifiable` when no observable set works.
    """
    if x == y:
        raise GraphError("treatment and outcome must differ")
    g.index(x)
    g.index(y)
    banned = descendants(g, x) | {x, y}
    candidates = sorted(n for n in g.nodes_with(OBSERVED, SELECTION) if n not in banned)
    if len(candidates) > MAX_CANDIDATES:
        raise GraphError(f"{len(candidates)} candidate adjustment nodes exceed the cap of {MAX_CANDIDATES}")
    for size in range(len(candidates) + 1):
        for z in itertools.combinations(candidates, size):
            if is_backdoor(g, z, x, y):
                return z
    raise NotIdentifiable(f"no observable back-door set for {x} -> {y}")


def effect(c: CausalNetwork, q: AdjustmentQuery, z) -> EffectResult:
    """``P(Y | do(X = x)) = sum_z P(Y | X = x, Z = z) P(Z = z)``."""
    z = tuple(z)
    if not is_backdoor(c.graph, z, q.treatment, q.outcome):
        raise InvalidAdjustmentSet(f"{set(z) or '{}'} is not a back-door set for "
                                   f"{q.treatment} -> {q.outcome}")
    xcode = c.code(q.treatment, q.x)
    total = np.zeros(c.card(q.outcome))
    strata = []
    pz = eliminate(c, list(z)).values if z else np.ones(())
    for idx in np.ndindex(*pz.shape):
        weight = float(pz[idx])
        if weight <= 0:
            continue
        evidence = dict(zip(z, idx))
        evidence[q.treatment] = xcode
        try:
            cond = eliminate(c, [q.outcome], evidence).values
        except InconsistentEvidence:
            levels = {n: c.levels[n][i] for n, i in zip(z, idx)}
            raise ZeroProbabilityStratum(
                f"P({q.treatment}={q.x} | {levels}) = 0 in a stratum with positive mass") from None
        strata.append((tuple(c.levels[n][i] for n, i in zip(z, idx)), weight, cond))
        total += weight * cond
    total = total / total.sum()
    dist = dict(zip(c.levels[q.outcome], (float(v) for v in total)))
    return EffectResult(z, dist, strata)
