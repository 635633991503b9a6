"""Metrics (AUC, SHD) and the train/test benchmark harness."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import MISSING, Dataset, derive_indicators, split_train_test
from .discovery import SemConfig, sem
from .errors import DegenerateLabels, EmptyDataset, NodeSetMismatch
from .graph import INDICATOR, OBSERVED, MGraph, PriorKnowledge, build_graph
from .model import CausalNetwork, fit_parameters, predict

log = logging.getLogger(__name__)

DEFAULT_SPLIT = {"PBC": 0.667, "CBC": 1.0}
MODELS = ("cn_prior_sem", "cn_prior", "naive_bayes")


def auc(labels, scores) -> float:
    """Mann-Whitney AUC: (concordant + 0.5 * tied pairs) / (n_pos * n_neg)."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranked = scores[order]
    ranks = np.empty(len(scores))
    # average 1-based rank within each run of tied scores
    starts = np.flatnonzero(np.r_[True, ranked[1:] != ranked[:-1]])
    ends = np.r_[starts[1:], len(ranked)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def shd(g1: MGraph, g2: MGraph) -> int:
    """Insertions + deletions + reversals between substantive edge sets."""
    if set(g1.names) != set(g2.names):
        raise NodeSetMismatch("graphs have different node sets")
    e1, e2 = g1.substantive_edges(), g2.substantive_edges()
    dist = 0
    for u, v in e1:
        if (u, v) not in e2:
            dist += 1  # deleted, or reversed when (v, u) in e2
    for u, v in e2:
        if (u, v) not in e1 and (v, u) not in e1:
            dist += 1
    return dist


# -- naive Bayes baseline ----------------------------------------------------

def naive_bayes_features(g: MGraph, d: Dataset, target: str, min_observed: float = 0.5):
    """Substantive variables observed in at least ``min_observed`` of the
    rows whose target is observed, and not constant there."""
    labeled = d.observed(target)
    if not labeled.any():
        raise EmptyDataset(f"no rows with {target} observed")
    feats = []
    for name, role in g.nodes:
        if name == target or role.kind == INDICATOR or name not in d.schema:
            continue
        if role.kind == "latent":
            continue
        col = d.column(name)[labeled]
        seen = col != MISSING
        if seen.mean() < min_observed or len(np.unique(col[seen])) < 2:
            continue
        feats.append(name)
    return feats


def fit_naive_bayes(g: MGraph, d: Dataset, target: str, alpha: float = 1.0) -> CausalNetwork:
    """Target -> every usable feature, fit on complete cases."""
    feats = naive_bayes_features(g, d, target)
    nb_graph = build_graph([(target, OBSERVED)] + [(f, OBSERVED) for f in feats],
                           [(target, f) for f in feats])
    cols = [d.col(n) for n in [target] + feats]
    complete = np.flatnonzero((d.codes[:, cols] != MISSING).all(axis=1))
    if len(complete) == 0:
        raise EmptyDataset("naive Bayes has no complete training cases")
    return fit_parameters(nb_graph, d.take(complete).select([target] + feats), alpha)


# -- benchmark ---------------------------------------------------------------

@dataclass
class BenchmarkReport:
    seed: int
    target: str
    n_train: int
    n_test: int
    n_test_labeled: int
    n_test_positive: int
    auc: dict = field(default_factory=dict)
    added_edges: list = field(default_factory=list)
    sem_iterations: int = 0

    def ordering_holds(self) -> bool:
        a = self.auc
        return a["cn_prior_sem"] >= a["cn_prior"] >= a["naive_bayes"]

    def key_values(self) -> str:
        lines = [
            f"seed={self.seed}", f"target={self.target}",
            f"n_train={self.n_train}", f"n_test={self.n_test}",
            f"n_test_labeled={self.n_test_labeled}", f"n_test_positive={self.n_test_positive}",
        ]
        lines += [f"auc.{m}={float(self.auc[m])!r}" for m in MODELS]
        lines.append(f"sem_iterations={self.sem_iterations}")
        lines.append("added_edges=" + ";".join(f"{u}->{v}" for u, v in self.added_edges))
        lines.append(f"ordering_holds={str(self.ordering_holds()).lower()}")
        return "\n".join(lines) + "\n"


def format_table(reports) -> str:
    """Aligned plain-text table: one row per seed plus a summary row."""
    header = ["seed", "n_train", "n_test", "pos", *MODELS, "ordered"]
    rows = []
    for r in reports:
        rows.append([str(r.seed), str(r.n_train), str(r.n_test), str(r.n_test_positive)]
                    + [f"{r.auc[m]:.4f}" for m in MODELS]
                    + ["yes" if r.ordering_holds() else "no"])
    if reports:
        mean = [f"{np.mean([r.auc[m] for r in reports]):.4f}" for m in MODELS]
        held = sum(r.ordering_holds() for r in reports)
        rows.append(["mean", "", "", ""] + mean + [f"{held}/{len(reports)}"])
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def benchmark(d: Dataset, g0: MGraph, pk: PriorKnowledge, split=None, seed: int = 0,
              target: str = "cvds", target_level="1", cfg: SemConfig | None = None):
    """Train the prior-only CN, the prior+SEM CN and naive Bayes on the
    training split; report test AUCs on rows whose target is observed.

    Returns ``(report, models)``.
    """
    split = dict(DEFAULT_SPLIT if split is None else split)
    cfg = cfg or SemConfig(seed=seed)
    full = derive_indicators(d, g0)
    train, test = split_train_test(full, split, seed)

    cn_prior, _ = sem(train, g0, pk, SemConfig(**{**cfg.__dict__, "search": False}))
    cn_sem, trace = sem(train, g0, pk, cfg)
    nb = fit_naive_bayes(g0, train, target, cfg.alpha)

    labeled = test.take(np.flatnonzero(test.observed(target)))
    level = test.schema[target].code(target_level)
    labels = labeled.column(target) == level
    if labels.all() or not labels.any():
        raise DegenerateLabels(f"{target} is constant on the labelled test rows")
    models = {"cn_prior_sem": cn_sem, "cn_prior": cn_prior, "naive_bayes": nb}
    report = BenchmarkReport(
        seed=seed, target=target, n_train=train.n_rows, n_test=test.n_rows,
        n_test_labeled=labeled.n_rows, n_test_positive=int(labels.sum()),
        added_edges=sorted(cn_sem.graph.edges - g0.edges,
                           key=lambda e: (g0.index(e[0]), g0.index(e[1]))),
        sem_iterations=len(trace.iterations))
    for name in MODELS:
        scores, _ = predict(models[name], labeled, target, target_level, threads=cfg.threads)
        report.auc[name] = auc(labels, scores)
    return report, models
