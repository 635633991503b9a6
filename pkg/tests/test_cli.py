import hashlib
import subprocess
import sys

import numpy as np
import pytest

from mgcn import __version__
from mgcn.cli import main
from mgcn.data import write_csv, write_schema
from mgcn.graph import (MissIndicator, Observed, PartiallyObserved, build_graph,
                        write_graph)
from mgcn.model import CausalNetwork, Cpt, write_network
from mgcn.simulate import simulate_masked

CHAIN = "[nodes]\nA observed\nB observed\nC observed\n[edges]\nA -> B\nB -> C\n"


def run_module(*argv, cwd=None):
    return subprocess.run([sys.executable, "-m", "mgcn", *argv], capture_output=True,
                          text=True, cwd=cwd)


def digests(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def toy_network():
    g = build_graph([("A", Observed), ("B", PartiallyObserved), ("C", PartiallyObserved),
                     ("R_B", MissIndicator("B")), ("R_C", MissIndicator("C"))],
                    [("A", "B"), ("B", "C"), ("A", "R_B"), ("A", "R_C")])
    levels = {n: ("0", "1") for n in g.names}
    cpts = {"A": Cpt("A", (), [0.6, 0.4]),
            "B": Cpt("B", ("A",), [[0.8, 0.2], [0.3, 0.7]]),
            "C": Cpt("C", ("B",), [[0.9, 0.1], [0.2, 0.8]]),
            "R_B": Cpt("R_B", ("A",), [[0.9, 0.1], [0.7, 0.3]]),
            "R_C": Cpt("R_C", ("A",), [[0.8, 0.2], [0.9, 0.1]])}
    return CausalNetwork(g, levels, cpts)


@pytest.fixture
def inputs(tmp_path):
    src = tmp_path / "in"
    src.mkdir()
    c = toy_network()
    d = simulate_masked(c, 800, seed=4)
    write_csv(src / "d.csv", d)
    write_csv(src / "full.csv", d.take(np.flatnonzero(d.observed("B") & d.observed("C"))))
    write_schema(src / "d.schema", d.schema)
    write_graph(src / "g0.graph", c.graph.with_edges({("A", "R_B"), ("A", "R_C")}))
    write_network(src / "toy.network", c)
    (src / "chain.graph").write_text(CHAIN, encoding="utf-8")
    return src


def test_dsep_chain(inputs, capsys):
    code = main(["dsep", "--graph", str(inputs / "chain.graph"), "--x", "A", "--y", "C", "--z", "B"])
    assert code == 0
    assert capsys.readouterr().out == "d-separated: true\n"
    main(["dsep", "--graph", str(inputs / "chain.graph"), "--x", "A", "--y", "C"])
    assert capsys.readouterr().out == "d-separated: false\n"


def test_domain_error_exits_1(inputs, capsys):
    code = main(["dsep", "--graph", str(inputs / "chain.graph"), "--x", "A", "--y", "Q"])
    assert code == 1
    assert capsys.readouterr().err.startswith("error:")
    assert main(["dsep", "--graph", str(inputs / "missing.graph"), "--x", "A", "--y", "C"]) == 1


def test_usage_errors_exit_2(inputs, tmp_path):
    assert run_module("dsep", "--graph", str(inputs / "chain.graph")).returncode == 2
    assert run_module("frobnicate").returncode == 2
    assert run_module("sem", "--graph", "g", "--data", "d", "--schema", "s",
                      "--out", str(tmp_path / "o")).returncode == 2  # no --seed
    assert main(["learn", "--graph", str(inputs / "g0.graph"), "--data", str(inputs / "d.csv"),
                 "--schema", str(inputs / "d.schema")]) == 2  # no --out


def test_version():
    res = run_module("--version")
    assert res.returncode == 0 and res.stdout.strip() == f"mgcn {__version__}"


def sem_argv(inputs, out, seed=7):
    return ["sem", "--data", str(inputs / "d.csv"), "--schema", str(inputs / "d.schema"),
            "--graph", str(inputs / "g0.graph"), "--seed", str(seed), "--out", str(out)]


def test_sem_twice_gives_identical_digests(inputs, tmp_path):
    assert main(sem_argv(inputs, tmp_path / "run1")) == 0
    assert main(sem_argv(inputs, tmp_path / "run2")) == 0
    a, b = digests(tmp_path / "run1"), digests(tmp_path / "run2")
    assert a == b
    assert {"sem.graph", "sem.network", "trace.txt", "manifest.txt"} <= set(a)
    assert any(k.startswith("snapshots/iter_") for k in a)


def test_replay_reproduces_outputs(inputs, tmp_path):
    assert main(sem_argv(inputs, tmp_path / "orig")) == 0
    assert main(["replay", "--manifest", str(tmp_path / "orig" / "manifest.txt"),
                 "--out", str(tmp_path / "again")]) == 0
    assert digests(tmp_path / "orig") == digests(tmp_path / "again")


def test_replay_rejects_changed_input(inputs, tmp_path, capsys):
    assert main(sem_argv(inputs, tmp_path / "orig")) == 0
    with open(inputs / "d.csv", "a", encoding="utf-8") as fh:
        fh.write("0,1,1\n")
    assert main(["replay", "--manifest", str(tmp_path / "orig" / "manifest.txt"),
                 "--out", str(tmp_path / "again")]) == 1
    assert "digest" in capsys.readouterr().err


def test_manifest_records_seed_and_inputs(inputs, tmp_path):
    main(sem_argv(inputs, tmp_path / "o", seed=11))
    lines = (tmp_path / "o" / "manifest.txt").read_text().splitlines()
    assert lines[0] == "subcommand=sem"
    assert "seed=11" in lines
    assert any(line.startswith("input.data=sha256:") for line in lines)


def test_nothing_written_outside_out(inputs, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    before = digests(tmp_path)
    out = tmp_path / "o"
    common = ["--data", str(inputs / "d.csv"), "--schema", str(inputs / "d.schema")]
    runs = [
        sem_argv(inputs, out / "sem"),
        ["learn", "--data", str(inputs / "full.csv"), "--schema", str(inputs / "d.schema"),
         "--graph", str(inputs / "g0.graph"), "--out", str(out / "learn")],
        ["recover", *common, "--graph", str(inputs / "g0.graph"),
         "--vars", "B,C", "--out", str(out / "recover")],
        ["predict", *common, "--network", str(inputs / "toy.network"), "--target", "C",
         "--level", "1", "--out", str(out / "predict")],
        ["effect", "--network", str(inputs / "toy.network"), "--treatment", "B",
         "--outcome", "C", "--x", "1", "--out", str(out / "effect")],
        ["classify", "--graph", str(inputs / "g0.graph"), "--out", str(out / "classify")],
        ["simulate", "--seed", "1", "--out", str(out / "sim")],
    ]
    for argv in runs:
        assert main(argv) == 0, argv
    after = digests(tmp_path)
    changed = {k for k in after if before.get(k) != after[k]}
    assert changed and all(k.startswith("o/") for k in changed)


def test_predict_scores_match_library(inputs, tmp_path):
    from mgcn.data import load_csv, read_schema
    from mgcn.model import predict
    main(["predict", "--data", str(inputs / "d.csv"), "--schema", str(inputs / "d.schema"),
          "--network", str(inputs / "toy.network"), "--target", "C", "--level", "1",
          "--out", str(tmp_path / "p")])
    rows = (tmp_path / "p" / "predictions.csv").read_text().splitlines()
    scores, _ = predict(toy_network(), load_csv(inputs / "d.csv", read_schema(inputs / "d.schema")),
                        "C", "1")
    assert rows[0] == "row,score,flagged"
    assert np.array_equal([float(r.split(",")[1]) for r in rows[1:]], scores)


def test_effect_prints_distribution(inputs, capsys):
    assert main(["effect", "--network", str(inputs / "toy.network"), "--treatment", "A",
                 "--outcome", "C", "--x", "1", "--y", "1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "adjustment: (empty)"
    assert out[-2].startswith("P(C | do(A=1))[0] = ")
