"""Command-line entry point: ``mgcn <subcommand> [--long-options]``.

Exit codes: 0 success, 1 domain error, 2 usage error.  Every run that
writes to ``--out`` also writes ``manifest.txt``; ``mgcn replay`` re-runs a
manifest into a fresh directory.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

from . import __version__
from .data import derive_indicators, load_csv, read_schema, write_csv, write_schema
from .errors import MgcnError
from .graph import PriorKnowledge, d_separated, read_graph, write_graph, format_graph
from .model import read_network, write_network

log = logging.getLogger("mgcn")

MANIFEST = "manifest.txt"
# options holding input files; their digests go into the manifest
INPUT_OPTIONS = ("graph", "data", "schema", "network")


class UsageError(Exception):
    pass


def _names(text):
    return [t for t in (s.strip() for s in (text or "").split(",")) if t]


def _digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command} requires --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text, encoding="utf-8", newline="\n")


# -- manifest ------------------------------------------------------------------

def manifest_text(args) -> str:
    """``key=value`` lines: subcommand, version, every resolved option except
    ``--out``, and a digest per input file."""
    lines = [f"subcommand={args.command}", f"version={__version__}"]
    opts = {k: v for k, v in vars(args).items() if k not in ("command", "out", "func", "verbose")}
    if "seed" in opts:
        lines.append(f"seed={opts['seed']}")
    for key in sorted(opts):
        value = opts[key]
        if value is None:
            continue
        if key in INPUT_OPTIONS:
            value = str(Path(value).resolve())
        lines.append(f"option.{key}={value}")
    for key in INPUT_OPTIONS:
        if opts.get(key) is not None:
            lines.append(f"input.{key}={_digest(opts[key])}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> dict:
    out = {}
    for raw in text.splitlines():
        if not raw.strip():
            continue
        key, sep, value = raw.partition("=")
        if not sep:
            raise MgcnError(f"bad manifest line: {raw!r}")
        out[key] = value
    return out


def manifest_argv(m: dict) -> list[str]:
    """Rebuild the argument vector recorded in a manifest."""
    if "subcommand" not in m:
        raise MgcnError("manifest has no subcommand")
    argv = [m["subcommand"]]
    for key, value in m.items():
        if not key.startswith("option."):
            continue
        name = key[len("option."):]
        flag = "--" + name.replace("_", "-")
        if value in ("True", "False"):
            if value == "True":
                argv.append(flag)
            continue
        argv += [flag, value]
    return argv


# -- subcommands -----------------------------------------------------------------

def cmd_dsep(args):
    g, _ = read_graph(args.graph)
    sep = d_separated(g, _names(args.x), _names(args.y), _names(args.z))
    line = f"d-separated: {str(sep).lower()}\n"
    print(line, end="")
    if args.out is not None:
        _write(_out_dir(args), "dsep.txt", line)


def cmd_classify(args):
    from .missingness import check_recoverable, classify
    g, _ = read_graph(args.graph)
    diag = check_recoverable(g)
    lines = [f"class: {classify(g)}", f"recoverable: {str(diag.recoverable).lower()}"]
    lines += [f"violation: {r} {reason}" for r, reason in diag.violations]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out is not None:
        _write(_out_dir(args), "classify.txt", text)


def cmd_recover(args):
    from .missingness import recover_joint
    out = _out_dir(args)
    g, _ = read_graph(args.graph)
    d = load_csv(args.data, read_schema(args.schema))
    weighted, joint = recover_joint(g, d, _names(args.vars))
    write_csv(out / "weighted.csv", weighted)
    rows = [" ".join(joint.scope) + " p"]
    for levels, p in joint.as_dict(d.schema.levels()).items():
        rows.append(" ".join(levels) + f" {float(p)!r}")
    _write(out, "joint.txt", "\n".join(rows) + "\n")
    print("\n".join(rows))


def cmd_effect(args):
    from .effects import AdjustmentQuery, effect, find_backdoor
    c = read_network(args.network)
    q = AdjustmentQuery(args.treatment, args.outcome, args.x, args.y)
    z = _names(args.z) if args.z is not None else find_backdoor(c.graph, q.treatment, q.outcome)
    res = effect(c, q, z)
    lines = ["adjustment: " + (",".join(res.adjustment) if res.adjustment else "(empty)")]
    for levels, weight, cond in res.strata:
        cells = ",".join(f"{n}={lv}" for n, lv in zip(res.adjustment, levels)) or "(all)"
        probs = " ".join(f"{lv}={float(p)!r}" for lv, p in zip(c.levels[q.outcome], cond))
        lines.append(f"stratum {cells} weight={float(weight)!r} {probs}")
    target = f"P({q.outcome} | do({q.treatment}={q.x}))"
    if q.y is not None:
        lines.append(f"{target}[{q.y}] = {float(res[q.y])!r}")
    lines += [f"{target}[{lv}] = {float(p)!r}" for lv, p in res.distribution.items()]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out is not None:
        _write(_out_dir(args), "effect.txt", text)


def _sem_config(args, **over):
    from .discovery import SemConfig
    kw = dict(max_iterations=args.max_iterations, tolerance=args.tolerance,
              max_parents=args.max_parents, alpha=args.alpha,
              seed=getattr(args, "seed", 0), restarts=getattr(args, "restarts", 1),
              threads=args.threads)
    kw.update(over)
    try:
        return SemConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_learn(args):
    from .discovery import bic, hill_climb
    from .model import fit_parameters
    out = _out_dir(args)
    g0, forbidden = read_graph(args.graph)
    d = derive_indicators(load_csv(args.data, read_schema(args.schema)), g0)
    pk = PriorKnowledge.from_graph(g0, forbidden)
    g = hill_climb(d, pk, _sem_config(args))
    write_graph(out / "learned.graph", g, forbidden)
    write_network(out / "learned.network", fit_parameters(g, d, args.alpha))
    score = bic(g, d, args.alpha)
    _write(out, "score.txt", f"bic={float(score.total)!r}\n")
    print(f"bic={float(score.total)!r} edges={len(g.edges)}")


def cmd_sem(args):
    from .discovery import sem
    out = _out_dir(args)
    g0, forbidden = read_graph(args.graph)
    d = derive_indicators(load_csv(args.data, read_schema(args.schema)), g0)
    pk = PriorKnowledge.from_graph(g0, forbidden)
    cn, trace = sem(d, g0, pk, _sem_config(args))
    write_graph(out / "sem.graph", cn.graph, forbidden)
    write_network(out / "sem.network", cn)
    _write(out, "trace.txt", trace.format())
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    for it in trace.iterations:
        _write(snaps, f"iter_{it.iteration:03d}.graph", format_graph(it.graph, forbidden))
    best = trace.iterations[trace.best_iteration - 1]
    print(f"iterations={len(trace.iterations)} best={trace.best_iteration} "
          f"score={float(best.score)!r} stop={trace.stop_reason}")


def cmd_predict(args):
    from .model import predict
    out = _out_dir(args)
    c = read_network(args.network)
    d = load_csv(args.data, read_schema(args.schema))
    scores, flags = predict(c, d, args.target, args.level, threads=args.threads)
    rows = ["row,score,flagged"]
    rows += [f"{i + 1},{float(s)!r},{int(f)}" for i, (s, f) in enumerate(zip(scores, flags))]
    _write(out, "predictions.csv", "\n".join(rows) + "\n")
    print(f"rows={len(scores)} flagged={int(sum(flags))}")


def cmd_simulate(args):
    from .simulate import SimConfig, default_config, simulate_cohorts
    out = _out_dir(args)
    if args.network is not None:
        sizes = {}
        for item in _names(args.n):
            level, _, n = item.partition("=")
            try:
                sizes[level] = int(n)
            except ValueError:
                raise UsageError(f"bad --n entry {item!r}") from None
        cfg = SimConfig(read_network(args.network), sizes, args.seed)
    else:
        cfg = default_config(seed=args.seed, masking=not args.no_masking)
        if args.n is not None:
            raise UsageError("--n needs --network; the default config fixes cohort sizes")
    d, g = simulate_cohorts(cfg)
    write_csv(out / "data.csv", d)
    write_schema(out / "data.schema", d.schema)
    write_graph(out / "truth.graph", g)
    print(f"rows={d.n_rows} columns={len(d.columns)}")


def cmd_benchmark(args):
    from .evaluation import benchmark, format_table
    from .simulate import default_config, default_prior, simulate_cohorts
    out = _out_dir(args)
    if args.simulate is not None:
        if args.simulate != "default":
            raise UsageError(f"unknown simulator config {args.simulate!r}")
        g0, forbidden = default_prior()
    else:
        if args.data is None or args.schema is None or args.graph is None:
            raise UsageError("benchmark needs --simulate default or --data, --schema and --graph")
        g0, forbidden = read_graph(args.graph)
        fixed = load_csv(args.data, read_schema(args.schema), cohort=args.cohort)
    pk = PriorKnowledge.from_graph(g0, forbidden)
    reports = []
    kv = []
    for seed in range(args.seed, args.seed + args.seeds):
        d = simulate_cohorts(default_config(seed=seed))[0] if args.simulate else fixed
        cfg = _sem_config(args, seed=seed)
        rep, _ = benchmark(d, g0, pk, seed=seed, target=args.target,
                           target_level=args.level, cfg=cfg)
        log.info("seed %d: %s", seed, rep.auc)
        reports.append(rep)
        kv.append(rep.key_values())
    table = format_table(reports)
    held = sum(r.ordering_holds() for r in reports)
    _write(out, "report.txt", table)
    _write(out, "report.kv", "\n".join(kv) + f"\nseeds={len(reports)}\nordering_held={held}\n")
    print(table, end="")


def cmd_replay(args):
    m = parse_manifest(Path(args.manifest).read_text(encoding="utf-8"))
    if m.get("version") != __version__:
        log.warning("manifest written by version %s, running %s", m.get("version"), __version__)
    argv = manifest_argv(m) + ["--out", args.out]
    sub = build_parser().parse_args(argv)
    for key in INPUT_OPTIONS:
        want = m.get(f"input.{key}")
        path = getattr(sub, key, None)
        if want is not None and path is not None and _digest(path) != want:
            raise MgcnError(f"input {key} ({path}) no longer matches the manifest digest")
    return _run(sub)


# -- parser ----------------------------------------------------------------------

def _common_sem(p, seed_required):
    p.add_argument("--max-iterations", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--max-parents", type=int, default=5)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--threads", type=int, default=1)
    if seed_required is not None:
        p.add_argument("--seed", type=int, required=seed_required)
        p.add_argument("--restarts", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgcn", allow_abbrev=False,
                                     description="Causal networks from incomplete multi-cohort data.")
    parser.add_argument("--version", action="version", version=f"mgcn {__version__}")
    parser.add_argument("--verbose", action="store_true", help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, allow_abbrev=False)
        p.set_defaults(func=func)
        p.add_argument("--out", default=None)
        return p

    p = add("dsep", cmd_dsep, "d-separation query")
    p.add_argument("--graph", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--z", default="")

    p = add("classify", cmd_classify, "MCAR/MAR/MNAR class and recoverability")
    p.add_argument("--graph", required=True)

    p = add("recover", cmd_recover, "inverse-probability weighted joint")
    p.add_argument("--graph", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--vars", required=True)

    p = add("effect", cmd_effect, "back-door adjusted interventional distribution")
    p.add_argument("--network", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", default=None)
    p.add_argument("--z", default=None, help="comma list; default: smallest back-door set")

    p = add("learn", cmd_learn, "hill-climb structure search on complete data")
    for opt in ("--graph", "--data", "--schema"):
        p.add_argument(opt, required=True)
    _common_sem(p, None)

    p = add("sem", cmd_sem, "structural EM on incomplete data")
    for opt in ("--graph", "--data", "--schema"):
        p.add_argument(opt, required=True)
    _common_sem(p, True)

    p = add("predict", cmd_predict, "posterior scores for a target level")
    for opt in ("--network", "--data", "--schema", "--target", "--level"):
        p.add_argument(opt, required=True)
    p.add_argument("--threads", type=int, default=1)

    p = add("simulate", cmd_simulate, "two-cohort synthetic data")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--network", default=None)
    p.add_argument("--n", default=None, help="cohort sizes, e.g. PBC=3000,CBC=680")
    p.add_argument("--no-masking", action="store_true")

    p = add("benchmark", cmd_benchmark, "prior-only vs prior+SEM vs naive Bayes")
    p.add_argument("--simulate", default=None, metavar="CONFIG")
    p.add_argument("--data", default=None)
    p.add_argument("--schema", default=None)
    p.add_argument("--graph", default=None)
    p.add_argument("--cohort", default="cohort")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds, starting at --seed")
    p.add_argument("--target", default="cvds")
    p.add_argument("--level", default="1")
    _common_sem(p, False)
    p.set_defaults(seed=0)

    p = sub.add_parser("replay", help="re-run a manifest", allow_abbrev=False)
    p.set_defaults(func=cmd_replay)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return parser


def _run(args) -> int:
    if args.command != "replay" and getattr(args, "seeds", 1) < 1:
        raise UsageError("--seeds must be >= 1")
    if getattr(args, "threads", 1) < 1:
        raise UsageError("--threads must be >= 1")
    args.func(args)
    if args.command != "replay" and args.out is not None:
        _write(Path(args.out), MANIFEST, manifest_text(args))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mgcn: error: {exc}", file=sys.stderr)
        return 2
    except (MgcnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
