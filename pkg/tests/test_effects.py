import itertools

import numpy as np
import pytest

from mgcn.effects import (MAX_CANDIDATES, AdjustmentQuery, effect, find_backdoor,
                          is_backdoor)
from mgcn.errors import (GraphError, InvalidAdjustmentSet, NotIdentifiable,
                         UnknownNode, ZeroProbabilityStratum)
from mgcn.graph import Latent, Observed, Selection, build_graph
from mgcn.model import CausalNetwork, Cpt, eliminate

from oracles import backdoor_oracle, joint_table, random_dag, random_network


def triangle(rng=None):
    g = build_graph([("Z", Observed), ("X", Observed), ("Y", Observed)],
                    [("Z", "X"), ("Z", "Y"), ("X", "Y")])
    return g if rng is None else random_network(rng, g)


def interventional_oracle(c, x, xcode, y):
    """P(y | do(x)) by enumerating the mutilated joint."""
    point = lambda v, pa: 1.0 if v == xcode else 0.0
    joint = joint_table(c, overrides={x: point})
    axis = tuple(i for i, n in enumerate(c.nodes) if n != y)
    marg = joint.sum(axis=axis)
    return marg / marg.sum()


def test_confounding_triangle():
    g = triangle()
    assert is_backdoor(g, {"Z"}, "X", "Y")
    assert not is_backdoor(g, set(), "X", "Y")
    assert find_backdoor(g, "X", "Y") == ("Z",)


def test_descendant_of_treatment_is_never_allowed():
    g = build_graph([(n, Observed) for n in "XMY"], [("X", "M"), ("M", "Y")])
    assert not is_backdoor(g, {"M"}, "X", "Y")
    assert is_backdoor(g, set(), "X", "Y")


def test_backdoor_argument_errors():
    g = triangle()
    with pytest.raises(UnknownNode):
        is_backdoor(g, {"Q"}, "X", "Y")
    with pytest.raises(GraphError):
        is_backdoor(g, {"X"}, "X", "Y")
    with pytest.raises(GraphError):
        AdjustmentQuery("X", "X", "0")


def test_find_backdoor_simple_cases():
    g = build_graph([("X", Observed), ("Y", Observed)], [("X", "Y")])
    assert find_backdoor(g, "X", "Y") == ()
    hidden = build_graph([("U", Latent), ("X", Observed), ("Y", Observed)],
                         [("U", "X"), ("U", "Y"), ("X", "Y")])
    with pytest.raises(NotIdentifiable):
        find_backdoor(hidden, "X", "Y")


def test_selection_node_may_adjust():
    g = build_graph([("S", Selection), ("X", Observed), ("Y", Observed)],
                    [("S", "X"), ("S", "Y"), ("X", "Y")])
    assert find_backdoor(g, "X", "Y") == ("S",)


def test_candidate_cap():
    names = [f"N{i:02d}" for i in range(MAX_CANDIDATES + 1)]
    g = build_graph([(n, Observed) for n in names] + [("X", Observed), ("Y", Observed)],
                    [("X", "Y")])
    with pytest.raises(GraphError):
        find_backdoor(g, "X", "Y")


def test_backdoor_matches_path_oracle():
    rng = np.random.default_rng(31)
    for _ in range(300):
        g = random_dag(rng, 6, p=0.45)
        x, y = rng.choice(g.names, size=2, replace=False)
        others = [n for n in g.names if n not in (x, y)]
        z = {n for n in others if rng.random() < 0.4}
        assert is_backdoor(g, z, x, y) == backdoor_oracle(g, z, x, y)


def check_find_backdoor(g, x, y):
    cands = sorted(n for n, r in g.nodes if r.kind in ("observed", "selection") and n not in (x, y))
    try:
        z = find_backdoor(g, x, y)
    except NotIdentifiable:
        # no observable subset at all may be valid
        for k in range(len(cands) + 1):
            for sub in itertools.combinations(cands, k):
                assert not backdoor_oracle(g, sub, x, y)
        return None
    assert backdoor_oracle(g, z, x, y)
    for drop in z:
        assert not backdoor_oracle(g, set(z) - {drop}, x, y)
    for k in range(len(z)):
        for sub in itertools.combinations(cands, k):
            assert not backdoor_oracle(g, sub, x, y)
    return z


def test_find_backdoor_validity_and_minimality():
    rng = np.random.default_rng(77)
    for _ in range(150):
        latent = {n for n in "ABCDEF" if rng.random() < 0.2}
        g = random_dag(rng, 6, p=0.45, latent=latent)
        obs = [n for n in g.names if n not in latent]
        if len(obs) < 2:
            continue
        x, y = rng.choice(obs, size=2, replace=False)
        check_find_backdoor(g, x, y)


def test_effect_equals_mutilated_graph_on_triangle():
    rng = np.random.default_rng(2)
    c = triangle(rng=rng)
    for xcode, xlevel in enumerate(c.levels["X"]):
        res = effect(c, AdjustmentQuery("X", "Y", xlevel), ("Z",))
        want = interventional_oracle(c, "X", xcode, "Y")
        got = np.array([res[lv] for lv in c.levels["Y"]])
        assert np.abs(got - want).max() < 1e-10
        assert sum(w for _, w, _ in res.strata) == pytest.approx(1.0)


def test_effect_without_confounding_is_conditional():
    g = build_graph([("X", Observed), ("Y", Observed)], [("X", "Y")])
    c = random_network(np.random.default_rng(4), g)
    res = effect(c, AdjustmentQuery("X", "Y", c.levels["X"][1]), ())
    assert [res[lv] for lv in c.levels["Y"]] == pytest.approx(c.cpts["Y"].table[1], abs=1e-12)


def test_null_effect_equals_marginal():
    g = build_graph([("Z", Observed), ("X", Observed), ("Y", Observed)],
                    [("Z", "X"), ("Z", "Y")])
    c = random_network(np.random.default_rng(9), g)
    res = effect(c, AdjustmentQuery("X", "Y", c.levels["X"][0]), ("Z",))
    assert [res[lv] for lv in c.levels["Y"]] == pytest.approx(eliminate(c, ["Y"]).values, abs=1e-12)


def test_invalid_set_and_zero_stratum():
    g = triangle()
    levels = {n: ("0", "1") for n in "ZXY"}
    cpts = {"Z": Cpt("Z", (), [0.5, 0.5]),
            "X": Cpt("X", ("Z",), [[1.0, 0.0], [0.3, 0.7]]),
            "Y": Cpt("Y", ("Z", "X"), np.full((2, 2, 2), 0.5))}
    c = CausalNetwork(g, levels, cpts)
    with pytest.raises(InvalidAdjustmentSet):
        effect(c, AdjustmentQuery("X", "Y", "1"), ())
    with pytest.raises(ZeroProbabilityStratum):
        effect(c, AdjustmentQuery("X", "Y", "1"), ("Z",))
    assert effect(c, AdjustmentQuery("X", "Y", "0"), ("Z",))["1"] == pytest.approx(0.5)


def test_effect_on_random_identifiable_networks():
    rng = np.random.default_rng(123)
    done = 0
    while done < 30:
        g = random_dag(rng, 6, p=0.5)
        x, y = rng.choice(g.names, size=2, replace=False)
        try:
            z = find_backdoor(g, x, y)
        except NotIdentifiable:  # y upstream of x
            continue
        c = random_network(rng, g, concentration=2.0)
        xcode = int(rng.integers(c.card(x)))
        res = effect(c, AdjustmentQuery(x, y, c.levels[x][xcode]), z)
        got = np.array([res[lv] for lv in c.levels[y]])
        assert np.abs(got - interventional_oracle(c, x, xcode, y)).max() < 1e-10
        done += 1
