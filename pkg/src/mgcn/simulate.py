"""Two-cohort synthetic data and the bundled cardio-oncology ground truth.

The default ground truth follows the clinical node list of a population-
based cohort (PBC) pooled with a clinical-based cohort (CBC) through a
``cohort`` selection node.  All conditional tables are invented: they are
calibrated to published marginal statistics only (about 3% CVD events in the
PBC, more neoadjuvant treatment in the CBC, per-cohort completeness of every
variable) and are clearly synthetic.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .data import MISSING, Dataset, Schema
from .graph import (INDICATOR, SELECTION, MGraph, MissIndicator, Observed,
                    PartiallyObserved, Selection, build_graph, parse_graph)
from .model import CausalNetwork, Cpt, eliminate, parse_network, sample
from .errors import MgcnError

BIN = ("0", "1")

# name, role, levels
CARDIO_VARIABLES = [
    ("cohort", "selection", ("PBC", "CBC")),
    ("age35", "observed", BIN),
    ("histology", "observed", ("ductal", "lobular", "other")),
    ("grade", "partial", ("G1", "G2", "G3")),
    ("vascular", "partial", BIN),
    ("ki67", "partial", BIN),
    ("receptors", "partial", ("luminal", "luminal_her2", "her2", "triple_neg")),
    ("pT", "partial", ("T1", "T2", "T3")),
    ("pN", "partial", ("N0", "N1", "N2")),
    ("surgery", "observed", ("conservative", "radical")),
    ("chemo_neo", "partial", BIN),
    ("radio_neo", "partial", BIN),
    ("target_neo", "partial", BIN),
    ("hormons_neo", "partial", BIN),
    ("chemo_adju", "partial", BIN),
    ("radio_adju", "partial", BIN),
    ("target_adju", "partial", BIN),
    ("hormons_adju", "partial", BIN),
    ("dyslipidemia", "partial", BIN),
    ("hypertension", "partial", BIN),
    ("t2db", "partial", BIN),
    ("cardiotoxicity", "partial", BIN),
    ("ischemic_heart_disease", "partial", BIN),
    ("cvds", "partial", BIN),
    ("death_in_5y", "partial", BIN),
]

# arcs elicited from clinical knowledge (the frozen prior graph)
PRIOR_EDGES = [
    ("cohort", "grade"), ("cohort", "pT"), ("cohort", "pN"), ("cohort", "chemo_neo"),
    ("age35", "grade"), ("age35", "receptors"), ("histology", "grade"),
    ("grade", "ki67"), ("receptors", "ki67"),
    ("pT", "vascular"), ("pT", "pN"), ("vascular", "pN"),
    ("pT", "surgery"),
    ("pT", "chemo_neo"), ("pN", "chemo_neo"), ("receptors", "chemo_neo"),
    ("pT", "radio_neo"),
    ("receptors", "target_neo"), ("pN", "target_neo"),
    ("receptors", "hormons_neo"),
    ("grade", "chemo_adju"), ("pN", "chemo_adju"),
    ("surgery", "radio_adju"), ("pN", "radio_adju"),
    ("receptors", "target_adju"),
    ("receptors", "hormons_adju"),
    ("hormons_adju", "dyslipidemia"), ("hormons_adju", "hypertension"), ("hormons_adju", "t2db"),
    ("dyslipidemia", "ischemic_heart_disease"), ("hypertension", "ischemic_heart_disease"),
    ("t2db", "ischemic_heart_disease"), ("radio_adju", "ischemic_heart_disease"),
    ("chemo_neo", "cardiotoxicity"), ("chemo_adju", "cardiotoxicity"),
    ("target_adju", "cardiotoxicity"),
    ("cardiotoxicity", "cvds"), ("ischemic_heart_disease", "cvds"),
    ("grade", "death_in_5y"), ("pN", "death_in_5y"), ("vascular", "death_in_5y"),
    # death follow-up is lost more often after a CVD event (MNAR)
    ("cvds", "R_death_in_5y"),
]

# arcs present in the ground truth but absent from the prior
HIDDEN_EDGES = [
    ("cohort", "radio_adju"), ("cohort", "chemo_adju"), ("cohort", "hormons_adju"),
    ("cohort", "target_neo"),
    ("chemo_neo", "chemo_adju"), ("chemo_neo", "radio_adju"), ("target_neo", "target_adju"),
    ("target_neo", "cvds"),
]

# percentage of observed values per cohort (PBC, CBC)
OBSERVED_PCT = {
    "grade": (0, 89), "vascular": (0, 57), "ki67": (0, 92), "receptors": (0, 94),
    "pT": (0, 65), "pN": (0, 68), "death_in_5y": (90, 45),
    "chemo_neo": (100, 99), "radio_neo": (100, 99), "target_neo": (100, 99),
    "hormons_neo": (100, 99), "chemo_adju": (100, 96), "radio_adju": (100, 96),
    "target_adju": (100, 96), "hormons_adju": (100, 96),
    "dyslipidemia": (100, 5), "hypertension": (100, 3), "t2db": (100, 1),
    "cardiotoxicity": (100, 0), "ischemic_heart_disease": (100, 0), "cvds": (100, 0),
}

# P(death_in_5y missing | PBC, cvds)
DEATH_MISSING_PBC = {"0": 0.08, "1": 0.80}


# temporal tiers; no arc may point from a later tier into an earlier one
TIERS = [
    ("cohort", "age35", "histology"),
    ("grade", "vascular", "ki67", "receptors", "pT", "pN"),
    ("surgery", "chemo_neo", "radio_neo", "target_neo", "hormons_neo"),
    ("chemo_adju", "radio_adju", "target_adju", "hormons_adju"),
    ("dyslipidemia", "hypertension", "t2db", "cardiotoxicity", "ischemic_heart_disease"),
    ("cvds", "death_in_5y"),
]


def cardio_forbidden():
    tier = {n: i for i, names in enumerate(TIERS) for n in names}
    return frozenset((u, v) for u in tier for v in tier
                     if tier[u] > tier[v] and v != "cohort")


def cardio_nodes():
    nodes = [(name, role) for name, role, _ in CARDIO_VARIABLES]
    nodes += [(f"R_{name}", f"indicator={name}") for name, role, _ in CARDIO_VARIABLES
              if role == "partial"]
    return nodes


def cardio_levels():
    levels = {name: lv for name, _, lv in CARDIO_VARIABLES}
    for name, role, _ in CARDIO_VARIABLES:
        if role == "partial":
            levels[f"R_{name}"] = BIN
    return levels


def cardio_prior_graph() -> MGraph:
    edges = list(PRIOR_EDGES)
    edges += [("cohort", f"R_{name}") for name, role, _ in CARDIO_VARIABLES if role == "partial"]
    return build_graph(cardio_nodes(), edges)


def cardio_truth_graph() -> MGraph:
    return cardio_prior_graph().with_edges(cardio_prior_graph().edges | set(HIDDEN_EDGES))


def _bern(p):
    return [1.0 - p, p]


def _table(levels, parents, child, fn):
    """Build a CPT by calling ``fn(**parent_levels)`` for every configuration."""
    shape = tuple(len(levels[p]) for p in parents) + (len(levels[child]),)
    table = np.zeros(shape)
    for idx in itertools.product(*(range(len(levels[p])) for p in parents)):
        kw = {p: levels[p][i] for p, i in zip(parents, idx)}
        row = np.asarray(fn(**kw), dtype=float)
        row = row / row.sum()
        table[idx] = row
    return table


def _cardio_tables():
    """Conditional probability functions for the synthetic ground truth."""
    cbc = lambda cohort: cohort == "CBC"
    stage = {"T1": 0, "T2": 1, "T3": 2, "N0": 0, "N1": 1, "N2": 2, "G1": 0, "G2": 1, "G3": 2}
    her2 = ("luminal_her2", "her2")

    def grade(cohort, age35, histology):
        w = np.array([0.15, 0.40, 0.45])
        if age35 == "0":
            w = w * [0.7, 1.0, 1.3]
        if histology == "lobular":
            w = w * [1.5, 1.3, 0.5]
        if cbc(cohort):
            w = w * [0.8, 1.0, 1.3]
        return w

    def receptors(age35):
        return [0.50, 0.16, 0.12, 0.22] if age35 == "0" else [0.60, 0.15, 0.11, 0.14]

    def ki67(grade, receptors):
        p = {"G1": 0.15, "G2": 0.45, "G3": 0.80}[grade]
        if receptors in ("triple_neg", "her2"):
            p = min(0.95, p + 0.1)
        return _bern(p)

    def pT(cohort):
        return [0.35, 0.45, 0.20] if cbc(cohort) else [0.45, 0.45, 0.10]

    def vascular(pT):
        return _bern({"T1": 0.25, "T2": 0.40, "T3": 0.60}[pT])

    def pN(cohort, pT, vascular):
        w = np.array([0.65, 0.25, 0.10])
        w = w * np.array([1.0, 1.3, 1.8]) ** stage[pT]
        if vascular == "1":
            w = w * [0.6, 1.4, 2.0]
        if cbc(cohort):
            w = w * [0.85, 1.1, 1.3]
        return w

    def surgery(pT):
        return _bern({"T1": 0.2, "T2": 0.4, "T3": 0.7}[pT])

    def chemo_neo(cohort, pT, pN, receptors):
        p = 0.08 + 0.10 * stage[pT] + 0.08 * stage[pN]
        if receptors in ("triple_neg",) + her2:
            p += 0.06
        if cbc(cohort):
            p += 0.07
        return _bern(min(p, 0.9))

    def radio_neo(pT):
        return _bern({"T1": 0.01, "T2": 0.02, "T3": 0.05}[pT])

    def target_neo(cohort, receptors, pN):
        if receptors in her2:
            p = 0.18 if pN == "N0" else 0.40
        else:
            p = 0.01
        if cbc(cohort):
            p = min(0.9, p * 1.4)
        return _bern(p)

    def hormons_neo(receptors):
        return _bern({"luminal": 0.05, "luminal_her2": 0.04}.get(receptors, 0.005))

    def chemo_adju(cohort, grade, pN, chemo_neo):
        p = 0.25 + 0.12 * stage[grade] + 0.12 * stage[pN]
        if chemo_neo == "1":
            p -= 0.15
        if cbc(cohort):
            p += 0.10
        return _bern(min(max(p, 0.02), 0.95))

    def radio_adju(cohort, surgery, pN, chemo_neo):
        p = 0.85 if surgery == "conservative" else 0.30
        p += 0.05 * stage[pN]
        if chemo_neo == "1":
            p += 0.05
        if cbc(cohort):
            p -= 0.15
        return _bern(min(max(p, 0.02), 0.97))

    def target_adju(receptors, target_neo):
        if receptors in her2:
            return _bern(0.80 if target_neo == "1" else 0.55)
        return _bern(0.01)

    def hormons_adju(cohort, receptors):
        p = {"luminal": 0.85, "luminal_her2": 0.80, "her2": 0.05, "triple_neg": 0.02}[receptors]
        if cbc(cohort):
            p = min(0.95, p + 0.08)
        return _bern(p)

    def dyslipidemia(hormons_adju):
        return _bern(0.08 if hormons_adju == "1" else 0.04)

    def hypertension(hormons_adju):
        return _bern(0.07 if hormons_adju == "1" else 0.03)

    def t2db(hormons_adju):
        return _bern(0.04 if hormons_adju == "1" else 0.01)

    def ischemic_heart_disease(dyslipidemia, hypertension, t2db, radio_adju):
        q = 1 - 0.004
        q *= 1 - (0.15 if dyslipidemia == "1" else 0)
        q *= 1 - (0.15 if hypertension == "1" else 0)
        q *= 1 - (0.22 if t2db == "1" else 0)
        q *= 1 - (0.008 if radio_adju == "1" else 0)
        return _bern(1 - q)

    def cardiotoxicity(chemo_neo, chemo_adju, target_adju):
        p = 0.004
        n_chemo = int(chemo_neo == "1") + int(chemo_adju == "1")
        p += (0.0, 0.025, 0.05)[n_chemo]
        if target_adju == "1":
            p += 0.035
        return _bern(p)

    def cvds(cardiotoxicity, ischemic_heart_disease, target_neo):
        base = {("0", "0"): 0.004, ("1", "0"): 0.25, ("0", "1"): 0.35, ("1", "1"): 0.65}
        p = base[cardiotoxicity, ischemic_heart_disease]
        if target_neo == "1":
            p = p + 0.14 * (1 - p) / (1 - 0.004)
        return _bern(p)

    def death_in_5y(grade, pN, vascular):
        p = 0.025 * (1.8 ** stage[grade]) * (1.7 ** stage[pN])
        if vascular == "1":
            p *= 1.4
        return _bern(min(p, 0.6))

    return {f.__name__: f for f in (
        grade, receptors, ki67, pT, vascular, pN, surgery, chemo_neo, radio_neo, target_neo,
        hormons_neo, chemo_adju, radio_adju, target_adju, hormons_adju, dyslipidemia,
        hypertension, t2db, ischemic_heart_disease, cardiotoxicity, cvds, death_in_5y)}


def cardio_truth() -> CausalNetwork:
    """Build the synthetic ground-truth network from the tables above."""
    g = cardio_truth_graph()
    levels = cardio_levels()
    fns = _cardio_tables()
    fns["cohort"] = lambda: [1500 / 1840, 340 / 1840]
    fns["age35"] = lambda: [0.45, 0.55]
    fns["histology"] = lambda: [0.80, 0.12, 0.08]

    for name, pct in OBSERVED_PCT.items():
        r = f"R_{name}"
        if name == "death_in_5y":
            def fn(cohort, cvds):
                if cohort == "PBC":
                    return _bern(DEATH_MISSING_PBC[cvds])
                return _bern(1 - OBSERVED_PCT["death_in_5y"][1] / 100)
        else:
            def fn(cohort, pct=pct):
                return _bern(1 - pct[0 if cohort == "PBC" else 1] / 100)
        fns[r] = fn

    cpts = {}
    for name, role in g.nodes:
        parents = g.parents(name)
        cpts[name] = Cpt(name, parents, _table(levels, parents, name, fns[name]))
    return CausalNetwork(g, levels, cpts)


def cardio_schema_text() -> str:
    return "".join(f"{name}: {','.join(lv)}\n" for name, _, lv in CARDIO_VARIABLES)


def resource_text(name: str) -> str:
    return resources.files("mgcn").joinpath("resources", name).read_text(encoding="utf-8")


def default_truth() -> CausalNetwork:
    return parse_network(resource_text("cardio_truth.network"))


def default_prior():
    """Prior graph and forbidden arcs shipped with the package."""
    return parse_graph(resource_text("cardio.graph"))


# -- simulator ---------------------------------------------------------------

@dataclass
class SimConfig:
    network: CausalNetwork
    n_per_cohort: dict
    seed: int = 0
    overrides: dict = field(default_factory=dict)  # cohort -> {variable: observed fraction}
    selection: str = "cohort"

    def __post_init__(self):
        for level, n in self.n_per_cohort.items():
            if n < 0:
                raise MgcnError(f"cohort {level!r}: negative size")
        for level, fracs in self.overrides.items():
            for var, f in fracs.items():
                if not 0.0 <= f <= 1.0:
                    raise MgcnError(f"override {level}/{var}: fraction outside [0, 1]")


def default_config(seed: int = 0, n_pbc: int = 3000, n_cbc: int = 680, masking: bool = True):
    overrides = {}
    if not masking:
        names = [n for n, role, _ in CARDIO_VARIABLES if role == "partial"]
        overrides = {c: dict.fromkeys(names, 1.0) for c in ("PBC", "CBC")}
    return SimConfig(default_truth(), {"PBC": n_pbc, "CBC": n_cbc}, seed, overrides)


def _apply_masks(draw: Dataset, indicators, rng, overrides) -> Dataset:
    """Blank ``X`` wherever ``R_X`` was drawn as 1, or with probability
    ``1 - overrides[X]`` when an observed fraction is forced."""
    codes = draw.codes.copy()
    n = draw.n_rows
    for x, r in indicators.items():
        miss = codes[:, draw.col(r)] == 1
        u = rng.random(n)
        frac = overrides.get(x)
        if frac is not None:
            miss = u >= frac
        codes[miss, draw.col(x)] = MISSING
    return draw.with_codes(codes)


def simulate_cohorts(cfg: SimConfig) -> tuple[Dataset, MGraph]:
    """Ancestral sampling per cohort with the selection node clamped, then
    masking of each partially observed variable wherever its indicator is 1.

    Returns the raw dataset (substantive and selection columns, cohort
    designated) and the ground-truth graph.
    """
    c = cfg.network
    g = c.graph
    sel = cfg.selection
    if g.role(sel).kind != SELECTION:
        raise MgcnError(f"{sel!r} is not a selection node")
    keep = [n for n, role in g.nodes if role.kind != INDICATOR and role.kind != "latent"]
    indicators = g.indicators()
    blocks = []
    for k, level in enumerate(c.levels[sel]):
        n = int(cfg.n_per_cohort.get(level, 0))
        if n == 0:
            continue
        draw = sample(c, n, seed=[cfg.seed, k], clamp={sel: level})
        rng = np.random.default_rng([cfg.seed, k, 1])
        masked = _apply_masks(draw, indicators, rng, cfg.overrides.get(level, {}))
        blocks.append(masked.select(keep).codes)
    schema = Schema(tuple(v for v in c.schema().variables if v.name in keep))
    codes = np.vstack(blocks) if blocks else np.empty((0, len(keep)), dtype=np.int64)
    return Dataset(schema, codes, cohort=sel), g


def write_resources(directory) -> None:
    """Regenerate the bundled prior graph, schema and ground-truth network."""
    from pathlib import Path
    from .graph import write_graph
    from .model import write_network
    directory = Path(directory)
    write_graph(directory / "cardio.graph", cardio_prior_graph(), cardio_forbidden())
    write_network(directory / "cardio_truth.network", cardio_truth())
    (directory / "cardio.schema").write_text(cardio_schema_text(), encoding="utf-8")


# -- small random ground truths (structure-recovery experiments) -------------

def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def random_truth(n_nodes: int = 10, seed: int = 0, n_observed: int = 3,
                 miss_rate: float = 0.2, mechanism: str = "MAR",
                 edge_prob: float = 0.3, max_parents: int = 2) -> CausalNetwork:
    """Random binary network ``X0 .. X{n-1}`` (declared in causal order).

    The first ``n_observed`` nodes are fully observed; every other node has
    an indicator.  Substantive tables are logistic in the parents with
    weights of magnitude 1.5 to 2.5, so every arc carries real dependence.
    Under ``"MAR"`` each indicator depends on one fully observed node and
    misses 0.5x or 1.5x ``miss_rate`` (rescaled so the marginal rate is
    ``miss_rate``); under ``"MCAR"`` it has no parents.
    """
    if mechanism not in ("MAR", "MCAR"):
        raise MgcnError(f"unknown mechanism {mechanism!r}")
    if not 0 < n_observed <= n_nodes:
        raise MgcnError("need 1 <= n_observed <= n_nodes")
    rng = np.random.default_rng(seed)
    names = [f"X{i}" for i in range(n_nodes)]
    observed = names[:n_observed]
    edges = []
    for i, v in enumerate(names):
        cands = [u for u in names[:i] if rng.random() < edge_prob]
        if len(cands) > max_parents:
            cands = sorted(rng.choice(cands, size=max_parents, replace=False).tolist(),
                           key=names.index)
        edges += [(u, v) for u in cands]
    nodes = [(n, Observed if n in observed else PartiallyObserved) for n in names]
    nodes += [(f"R_{n}", MissIndicator(n)) for n in names[n_observed:]]
    drivers = {}
    if mechanism == "MAR":
        for n in names[n_observed:]:
            drivers[n] = observed[int(rng.integers(len(observed)))]
            edges.append((drivers[n], f"R_{n}"))
    g = build_graph(nodes, edges)
    levels = {n: BIN for n, _ in nodes}

    cpts = {}
    for n in names:
        parents = g.parents(n)
        w = rng.uniform(1.5, 2.5, size=len(parents)) * rng.choice([-1.0, 1.0], size=len(parents))
        b = -w.sum() / 2 + rng.uniform(-0.5, 0.5)  # centre the logits
        table = np.zeros((2,) * len(parents) + (2,))
        for idx in itertools.product((0, 1), repeat=len(parents)):
            table[idx] = _bern(_sigmoid(b + float(np.dot(w, idx))))
        cpts[n] = Cpt(n, parents, table)
    substantive = CausalNetwork(
        build_graph(nodes[:n_nodes], [e for e in edges if not e[1].startswith("R_")]),
        {n: BIN for n in names}, dict(cpts))
    for n in names[n_observed:]:
        r = f"R_{n}"
        if mechanism == "MCAR":
            cpts[r] = Cpt(r, (), np.array(_bern(miss_rate)))
            continue
        p1 = float(eliminate(substantive, [drivers[n]]).values[1])
        scale = miss_rate / (0.5 * (1 - p1) + 1.5 * p1)
        lo, hi = 0.5 * scale, 1.5 * scale
        rows = np.array([_bern(min(lo, 1.0)), _bern(min(hi, 1.0))])
        cpts[r] = Cpt(r, (drivers[n],), rows)
    return CausalNetwork(g, levels, cpts)


def simulate_masked(c: CausalNetwork, n: int, seed: int) -> Dataset:
    """Sample ``n`` rows and blank cells per the indicator draws; indicator
    columns are dropped."""
    draw = sample(c, n, seed=seed)
    keep = [name for name, role in c.graph.nodes if role.kind not in (INDICATOR, "latent")]
    masked = _apply_masks(draw, c.graph.indicators(), np.random.default_rng([seed, 1]), {})
    return masked.select(keep)
