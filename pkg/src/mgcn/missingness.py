"""Graphical missingness diagnosis and inverse-probability recovery of joints."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import MISSING, Dataset
from .errors import MgcnError, NotRecoverable, ZeroObservationRate
from .graph import (INDICATOR, LATENT, OBSERVED, PARTIAL, SELECTION, MGraph,
                    d_separated)
from .model import Factor


class MissClass(enum.Enum):
    MCAR = "MCAR"
    MAR = "MAR"
    MNAR = "MNAR"

    def __str__(self):
        return self.value


SELF_MASKING = "SelfMasking"
R_PARENT = "RParent"
LATENT_PARENT = "LatentParent"


@dataclass(frozen=True)
class RecoveryDiagnosis:
    recoverable: bool
    violations: tuple[tuple[str, str], ...] = ()


def classify(g: MGraph) -> MissClass:
    """MCAR / MAR / MNAR from d-separation statements on the m-graph.

    Selection nodes are fully observed, so they count as part of the
    conditioning set for MAR.
    """
    fully = g.nodes_with(OBSERVED, SELECTION)
    latent = g.nodes_with(LATENT)
    partial = g.nodes_with(PARTIAL)
    ind = g.nodes_with(INDICATOR)
    if d_separated(g, fully + latent + partial, ind, []):
        return MissClass.MCAR
    if d_separated(g, latent + partial, ind, fully):
        return MissClass.MAR
    return MissClass.MNAR


def check_recoverable(g: MGraph) -> RecoveryDiagnosis:
    """Sufficient conditions making every factor of the weighting estimator
    estimable: no self-masking, no indicator parents, no latent parents."""
    violations = []
    for r in g.nodes_with(INDICATOR):
        x = g.role(r).of
        parents = g.parents(r)
        if x in parents:
            violations.append((r, SELF_MASKING))
        if any(g.role(p).kind == INDICATOR for p in parents):
            violations.append((r, R_PARENT))
        if any(g.role(p).kind == LATENT for p in parents):
            violations.append((r, LATENT_PARENT))
    return RecoveryDiagnosis(not violations, tuple(violations))


def observation_rates(g: MGraph, d: Dataset, x: str) -> tuple[tuple[str, ...], np.ndarray]:
    """``P(R_x = 0 | parents of R_x)`` estimated on rows where the parents
    are observed.  Configurations with no such rows get NaN."""
    r = g.indicator_of(x)
    parents = g.parents(r) if r is not None else ()
    cols = [d.col(p) for p in parents]
    shape = tuple(d.schema[p].card for p in parents)
    sub = d.codes[:, cols]
    keep = (sub != MISSING).all(axis=1)
    flat = np.ravel_multi_index(sub[keep].T, shape) if parents else np.zeros(keep.sum(), dtype=np.int64)
    size = int(np.prod(shape)) if parents else 1
    w = d.weights[keep]
    seen = d.column(x)[keep] != MISSING
    total = np.bincount(flat, weights=w, minlength=size)
    hit = np.bincount(flat, weights=w * seen, minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(total > 0, hit / np.where(total > 0, total, 1.0), np.nan)
    return parents, rates.reshape(shape) if parents else rates.reshape(())


def recover_joint(g: MGraph, d: Dataset, vars) -> tuple[Dataset, Factor]:
    """Weight complete cases by ``1 / prod P(R_X = 0 | pa(R_X), pa observed)``.

    Returns the weighted complete-case dataset and the normalised joint
    table over ``vars``.
    """
    diagnosis = check_recoverable(g)
    if not diagnosis.recoverable:
        raise NotRecoverable(diagnosis)
    vars = list(vars)
    for v in vars:
        if g.role(v).kind not in (OBSERVED, PARTIAL, SELECTION):
            raise MgcnError(f"{v} is neither observed nor partially observed")
    masked = [v for v in vars if g.role(v).kind == PARTIAL and g.indicator_of(v)]

    needed = list(vars)
    for x in masked:
        needed += [p for p in g.parents(g.indicator_of(x)) if p not in needed]
    cols = [d.col(n) for n in needed]
    complete = np.flatnonzero((d.codes[:, cols] != MISSING).all(axis=1))
    cc = d.take(complete)

    weights = cc.weights.copy()
    for x in masked:
        parents, rates = observation_rates(g, d, x)
        if parents:
            idx = tuple(cc.column(p) for p in parents)
            row_rates = rates[idx]
        else:
            row_rates = np.full(cc.n_rows, float(rates))
        bad = ~(row_rates > 0) & (cc.weights > 0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            config = {p: cc.schema[p].levels[cc.column(p)[i]] for p in parents}
            raise ZeroObservationRate(g.indicator_of(x), config)
        with np.errstate(divide="ignore"):
            weights = np.where(cc.weights > 0, weights / row_rates, 0.0)
    weighted = cc.with_weights(weights)

    shape = tuple(d.schema[v].card for v in vars)
    flat = np.ravel_multi_index(tuple(weighted.column(v) for v in vars), shape) \
        if weighted.n_rows else np.zeros(0, dtype=np.int64)
    counts = np.bincount(flat, weights=weights, minlength=int(np.prod(shape)))
    total = counts.sum()
    if not total > 0:
        raise MgcnError("no complete cases to recover the joint from")
    return weighted, Factor(tuple(vars), (counts / total).reshape(shape))
