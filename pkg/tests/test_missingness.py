import numpy as np
import pytest

from mgcn.data import MISSING, Dataset, Schema, Variable
from mgcn.errors import MgcnError, NotRecoverable, ZeroObservationRate
from mgcn.graph import (Latent, MissIndicator, Observed, PartiallyObserved, Selection,
                        build_graph, d_separated)
from mgcn.missingness import (LATENT_PARENT, R_PARENT, SELF_MASKING, MissClass,
                              check_recoverable, classify, observation_rates,
                              recover_joint)
from mgcn.model import CausalNetwork, Cpt, eliminate
from mgcn.simulate import simulate_masked


def mgraph(edges, extra=()):
    nodes = [("O", Observed), ("X", PartiallyObserved), ("Y", PartiallyObserved),
             ("R_X", MissIndicator("X")), ("R_Y", MissIndicator("Y")), *extra]
    return build_graph(nodes, edges, allow_indicator_parents=True)


def test_classify_definition_cases():
    assert classify(mgraph([("O", "X"), ("X", "Y")])) is MissClass.MCAR
    assert classify(mgraph([("O", "X"), ("O", "R_X")])) is MissClass.MAR
    assert classify(mgraph([("Y", "R_X")])) is MissClass.MNAR
    assert classify(mgraph([("X", "R_X")])) is MissClass.MNAR


def test_selection_node_counts_as_fully_observed():
    g = mgraph([("S", "X"), ("S", "R_X")], extra=[("S", Selection)])
    assert classify(g) is MissClass.MAR


def test_latent_parent_is_mnar():
    g = mgraph([("U", "X"), ("U", "R_X")], extra=[("U", Latent)])
    assert classify(g) is MissClass.MNAR


def test_classification_agrees_with_dseparation_on_random_mgraphs():
    rng = np.random.default_rng(13)
    subs = ["O", "X", "Y"]
    for _ in range(300):
        edges = set()
        order = list(rng.permutation(subs))
        for i in range(3):
            for j in range(i + 1, 3):
                if rng.random() < 0.5:
                    edges.add((order[i], order[j]))
        for r in ("R_X", "R_Y"):
            for p in subs:
                if rng.random() < 0.3:
                    edges.add((p, r))
        g = mgraph(sorted(edges))
        cls = classify(g)
        isolated = not any(v.startswith("R_") for _, v in edges)
        if isolated:
            assert cls is MissClass.MCAR
        if cls is MissClass.MAR:
            assert d_separated(g, {"X", "Y"}, {"R_X", "R_Y"}, {"O"})
        if cls is MissClass.MNAR:
            assert not d_separated(g, {"X", "Y"}, {"R_X", "R_Y"}, {"O"})


def test_recoverability_violations():
    assert check_recoverable(mgraph([("X", "R_X")])).violations == (("R_X", SELF_MASKING),)
    assert check_recoverable(mgraph([("R_Y", "R_X")])).violations == (("R_X", R_PARENT),)
    g = mgraph([("U", "R_X")], extra=[("U", Latent)])
    assert check_recoverable(g).violations == (("R_X", LATENT_PARENT),)
    ok = check_recoverable(mgraph([("O", "R_X"), ("Y", "R_X"), ("O", "R_Y")]))
    assert ok.recoverable and ok.violations == ()


def mnar_network(p_y=0.5, p_x=((0.7, 0.3), (0.25, 0.75)), miss=(0.1, 0.6)):
    """Y -> X, Y -> R_X, with P(R_X = 1 | y) = miss[y]."""
    g = build_graph([("Y", Observed), ("X", PartiallyObserved), ("R_X", MissIndicator("X"))],
                    [("Y", "X"), ("Y", "R_X")])
    levels = {"Y": ("0", "1"), "X": ("0", "1"), "R_X": ("0", "1")}
    cpts = {"Y": Cpt("Y", (), [1 - p_y, p_y]), "X": Cpt("X", ("Y",), p_x),
            "R_X": Cpt("R_X", ("Y",), [[1 - miss[0], miss[0]], [1 - miss[1], miss[1]]])}
    return CausalNetwork(g, levels, cpts)


def tv(a, b):
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def test_recover_joint_corrects_mnar_bias():
    c = mnar_network()
    d = simulate_masked(c, 50_000, seed=1)
    truth = eliminate(c, ["X", "Y"]).values
    _, joint = recover_joint(c.graph, d, ["X", "Y"])
    assert joint.scope == ("X", "Y")
    assert tv(joint.values, truth) < 0.02
    cc = d.take(np.flatnonzero(d.observed("X")))
    naive = np.zeros((2, 2))
    np.add.at(naive, (cc.column("X"), cc.column("Y")), 1.0)
    assert tv(naive / naive.sum(), truth) > 0.05


def test_mcar_weights_are_constant_and_cancel():
    c = mnar_network(miss=(0.2, 0.2))
    g = c.graph.with_edges({("Y", "X")})
    d = simulate_masked(c, 5000, seed=3)
    weighted, joint = recover_joint(g, d, ["X", "Y"])
    rate = float(d.observed("X").mean())
    assert np.allclose(weighted.weights, 1.0 / rate)
    counts = np.zeros((2, 2))
    np.add.at(counts, (weighted.column("X"), weighted.column("Y")), 1.0)
    assert np.allclose(joint.values, counts / counts.sum(), atol=1e-15)


def test_observation_rates_by_parent_configuration():
    schema = Schema((Variable("Y", ("0", "1")), Variable("X", ("0", "1"))))
    d = Dataset.from_rows(schema, [["0", "1"], ["0", None], ["1", "0"], ["1", "1"],
                                   [None, "1"], ["1", None]])
    parents, rates = observation_rates(mnar_network().graph, d, "X")
    assert parents == ("Y",)
    assert rates == pytest.approx([0.5, 2 / 3])


def test_recover_errors():
    g = mgraph([("X", "R_X")])
    schema = Schema((Variable("O", ("0", "1")), Variable("X", ("0", "1")), Variable("Y", ("0", "1"))))
    d = Dataset(schema, [[0, 0, 0]])
    with pytest.raises(NotRecoverable) as err:
        recover_joint(g, d, ["X"])
    assert err.value.diagnosis.violations == (("R_X", SELF_MASKING),)
    with pytest.raises(MgcnError):
        recover_joint(mnar_network().graph, d.select(["X"]), ["R_X"])


def test_configuration_without_complete_rows_is_fine():
    schema = Schema((Variable("Y", ("0", "1")), Variable("X", ("0", "1"))))
    d = Dataset(schema, [[0, 0], [1, MISSING], [1, MISSING], [0, 1]])
    _, joint = recover_joint(mnar_network().graph, d, ["X", "Y"])
    assert joint.values[:, 1].sum() == 0.0
    assert joint.values.sum() == pytest.approx(1.0)


def test_zero_observation_rate_reported(monkeypatch):
    import mgcn.missingness as miss
    schema = Schema((Variable("Y", ("0", "1")), Variable("X", ("0", "1"))))
    d = Dataset(schema, [[0, 0], [1, 1]])
    monkeypatch.setattr(miss, "observation_rates", lambda g, d, x: (("Y",), np.array([1.0, 0.0])))
    with pytest.raises(ZeroObservationRate) as err:
        miss.recover_joint(mnar_network().graph, d, ["X", "Y"])
    assert "R_X" in str(err.value)


def test_recovery_consistency_trend():
    """Mean TV over 20 seeds shrinks as n grows."""
    c = mnar_network()
    truth = eliminate(c, ["X", "Y"]).values
    means = []
    for n in (1000, 10_000, 100_000):
        errs = [tv(recover_joint(c.graph, simulate_masked(c, n, seed=s), ["X", "Y"])[1].values,
                   truth) for s in range(20)]
        means.append(np.mean(errs))
    assert means[0] >= means[1] >= means[2]
