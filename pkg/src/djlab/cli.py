"""Command-line entry point: ``djlab <command> [flags]``.

Exit status is 0 on success, 1 for invalid input (bad flags, unreadable or
inconsistent files) and 2 when a computation fails (divergence, disconnected
samples, ...). Every command records a run manifest.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .graph import GraphError, homophily_stats
from .io import (FormatError, fmt17, load_config, load_dataset, read_edge_list, read_labels, split_paths,
                 write_edge_list, write_features, write_labels, write_matrix, write_split)

log = logging.getLogger("djlab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# -- manifest ----------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def input_digests(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        files = split_paths(p) if p.is_dir() else [p]
        for f in files:
            out[str(f)] = sha256_file(f)
    return out


def write_manifest(args, config: dict, inputs, started: float, out_dir=None) -> dict:
    manifest = {
        "command": args.command,
        "config": _jsonable(config),
        "inputs": input_digests(inputs),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    target = getattr(args, "manifest", None) or (Path(out_dir) / "manifest.json" if out_dir else None)
    if target is None:
        print(json.dumps(manifest, sort_keys=True), file=sys.stderr)
    else:
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        Path(target).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Path):
        return str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def _dump(obj, path=None):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


# -- commands --------------------------------------------------------------------

def cmd_analyze(args):
    from .spectral import eig_sym, normalized_spectrum, require_connected, structural_heterophily
    from .graph import normalized_operators

    labels = read_labels(args.labels)
    g = read_edge_list(args.graph, n=len(labels), allow_self_loops=args.allow_self_loops)
    require_connected(g)
    edge_h, node_h, class_h = homophily_stats(g, labels)
    lam = normalized_spectrum(g).values
    _, P = normalized_operators(g)
    s = 1.0 / np.sqrt(g.degrees)
    gam = eig_sym(s[:, None] * g.adjacency * s[None, :]).values
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = structural_heterophily(g, labels, p=args.p, seed=args.seed)
    for w in caught:
        log.warning("%s", w.message)
    report = {
        "n": g.n, "m": g.m, "edge_h": edge_h, "node_h": node_h, "class_h": class_h,
        "lambda2": float(lam[1]),
        # absolute gap of the walk: 1 - second largest |eigenvalue| of P
        "spectral_gap": float(1.0 - np.sort(np.abs(gam))[-2]) if g.n > 1 else 0.0,
        "R": rep.R, "num_energy": rep.num_energy, "den_energy": rep.den_energy,
    }
    _dump(report)
    return {"p": args.p}, [args.graph, args.labels], None


def cmd_pump(args):
    from .pump import PumpConfig, fiedler_correlations, train_pump

    g = read_edge_list(args.graph, allow_self_loops=args.allow_self_loops)
    cfg = PumpConfig(p=args.p, lr=args.lr, steps=args.steps, ortho_weight=args.ortho_weight, seed=args.seed,
                     act=args.act, use_adjacency=args.input == "adjacency")
    env, D, history = train_pump(g, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(env.U, out / "U.csv")
    write_matrix(D, out / "D.csv")
    report = {"ratio": env.ratio, "rayleigh": env.rayleigh.tolist(),
              "corr_fiedler": fiedler_correlations(env.U, g).tolist(), "steps": cfg.steps,
              "final_loss": history[-1] if history else None}
    _dump(report, out / "report.json")
    return asdict(cfg), [args.graph], out


def _model_config(args):
    overrides = {"seed": args.seed, "epochs": args.epochs}
    return load_config(args.config, **overrides)


def cmd_train(args):
    from .jumps import export_bank, filter_bank
    from .model import evaluate, format_mean_std, summarize, train

    cfg = _model_config(args)
    g, X, y, splits = load_dataset(args.graph, args.features, args.labels, args.splits,
                                   allow_self_loops=args.allow_self_loops)
    if not splits:
        raise FormatError(args.splits, "no split masks given")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plot_dir = Path(args.emit_plot_data) if args.emit_plot_data else None
    if plot_dir:
        plot_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for i, split in enumerate(splits):
        state, history = train(g, X, y, split, cfg)
        with open(out / f"metrics_{i}.jsonl", "w") as fh:
            for rec in history:
                fh.write(json.dumps({k: rec.get(k) for k in
                                     ("epoch", "loss", "dirichlet", "ce", "val_acc", "test_acc", "alphas")}) + "\n")
        acc = evaluate(state, g, X, y, split)
        results.append({"split": i, **acc, "alphas": state.alphas.tolist(), "epochs_run": len(history)})
        state.save(out / f"state_{i}.npz")
        if plot_dir:
            _plot_data(plot_dir, i, history, state, g, X, y)
        if args.export_filters:
            from .model import Context, current_distances

            ctx = Context(g, X, y, state.n_classes, cfg, fixed_distances=state.fixed_distances)
            D = current_distances(state.params, ctx)
            export_bank(filter_bank(D, cfg.k_jumps, cfg.jump_mode), Path(args.export_filters) / f"split_{i}")
        log.info("split %d: test %.6f", i, acc["test"])
    tests = [r["test"] for r in results]
    mean, std = summarize(tests)
    _dump({"splits": results, "mean": mean, "std": std, "formatted": format_mean_std(tests),
           "config": asdict(cfg)}, out / "summary.json")
    print(f"test accuracy {format_mean_std(tests)} over {len(tests)} split(s)")
    return asdict(cfg), [args.graph, args.features, args.labels, args.config, *args.splits], out


def _plot_data(plot_dir, i, history, state, g, X, y):
    from .model import Context, current_distances

    K = state.config.k_jumps
    names = [f"alpha_{k}" for k in range(K + 1)] + (["alpha_hb"] if state.config.homophilic_branch else [])
    rows = [[rec["epoch"], *rec["alphas"]] for rec in history]
    write_matrix(np.array(rows), plot_dir / f"alphas_{i}.csv", header=["epoch", *names])
    ctx = Context(g, X, y, state.n_classes, state.config, fixed_distances=state.fixed_distances)
    D = current_distances(state.params, ctx)
    vals = D[np.triu_indices(g.n, 1)]
    counts, edges = np.histogram(vals, bins=50)
    hist = np.column_stack([edges[:-1], edges[1:], counts])
    write_matrix(hist, plot_dir / f"distance_hist_{i}.csv", header=["lo", "hi", "count"])


def cmd_evaluate(args):
    from .model import ModelState, evaluate, format_mean_std, summarize

    g, X, y, splits = load_dataset(args.graph, args.features, args.labels, args.splits,
                                   allow_self_loops=args.allow_self_loops)
    if len(args.state) != len(splits):
        raise FormatError(args.state[0], f"{len(args.state)} state file(s) for {len(splits)} split(s)")
    rows = []
    for i, (path, split) in enumerate(zip(args.state, splits)):
        state = ModelState.load(path)
        rows.append({"split": i, **evaluate(state, g, X, y, split)})
    tests = [r["test"] for r in rows]
    mean, std = summarize(tests)
    _dump({"splits": rows, "mean": mean, "std": std, "formatted": format_mean_std(tests)})
    return {}, [args.graph, args.features, args.labels, *args.splits, *args.state], None


def cmd_propagate(args):
    from .graph import normalized_operators
    from .io import read_seed_labels
    from .propagation import argmax_labels, propagate_closed, propagate_iterative, symmetric_transition

    seeds = read_seed_labels(args.seed_labels)
    g = read_edge_list(args.graph, n=len(seeds), allow_self_loops=args.allow_self_loops)
    known = seeds >= 0
    if not known.any():
        raise FormatError(args.seed_labels, "no seeded node (all labels are -1)")
    C = args.classes or int(seeds[known].max()) + 1
    Y = np.zeros((g.n, C))
    Y[np.flatnonzero(known), seeds[known]] = 1.0
    P = symmetric_transition(g) if args.symmetric else normalized_operators(g)[1]
    F = propagate_closed(P, Y, args.alpha) if args.iterations == 0 else propagate_iterative(P, Y, args.alpha,
                                                                                         args.iterations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(F, out / "scores.csv")
    write_labels(argmax_labels(F), out / "labels.csv")
    return {"alpha": args.alpha, "iterations": args.iterations, "symmetric": args.symmetric, "classes": C}, \
        [args.graph, args.seed_labels], out


def cmd_gradcheck(args):
    from .model import model_gradcheck

    errs = model_gradcheck(n=args.n, K=args.k, F=args.f, C=args.c, seed=args.seed, h=args.h)
    worst = max(errs.values())
    _dump({"blocks": errs, "max_rel_err": worst, "tolerance": args.tol, "passed": worst <= args.tol})
    return {"n": args.n, "k": args.k, "f": args.f, "c": args.c, "h": args.h}, [], None


def cmd_gen_sbm(args):
    from .sbm import SbmSpec, gen_sbm, inject_heterophily, random_split, synth_features

    if args.gap is not None:
        spec = SbmSpec.from_gap(args.gap, _ints(args.sizes), args.density, args.seed)
        spec.max_retries = args.max_retries
    else:
        if args.p is None or args.q is None:
            raise UsageError("gen-sbm: give either --gap or both --p and --q")
        spec = SbmSpec(tuple(_ints(args.sizes)), args.p, args.q, args.seed, args.max_retries)
    g, blocks = gen_sbm(spec)
    labels, R = inject_heterophily(g, blocks, args.flip, args.seed)
    X = synth_features(g, labels, args.noise, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(g, out / "graph.txt")
    write_labels(labels, out / "labels.csv")
    write_labels(blocks, out / "blocks.csv")
    write_features(X, out / "features.csv")
    write_split(random_split(g.n, args.seed), out / "split.csv")
    _dump({"n": g.n, "m": g.m, "p": spec.p, "q": spec.q, "gap": spec.gap, "R": R}, out / "info.json")
    return {"sizes": spec.sizes, "p": spec.p, "q": spec.q, "flip": args.flip, "noise": args.noise}, [], out


def cmd_sweep(args):
    from .sbm import SweepGrid, sweep, write_sweep_csv

    grid = SweepGrid(tuple(_floats(args.gaps)), tuple(_floats(args.flips)), tuple(_ints(args.seeds)), args.noise,
                     tuple(_ints(args.sizes)), args.density, {"epochs": args.epochs} if args.epochs else {})
    rows = sweep(grid, args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(rows, out)
    print(f"wrote {len(rows)} rows to {out}")
    return asdict(grid), [], out.parent


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="djlab", description="Diffusion-jump graph learning laboratory.")
    ap.add_argument("--version", action="version", version=f"djlab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=fn)
        p.add_argument("--manifest", help="where to write the run manifest (default: <out>/manifest.json, "
                                          "or stderr for commands without an output directory)")
        return p

    def graph_flags(p, required=True):
        p.add_argument("--graph", required=required, help="edge list: 'u v [w]' per line, 0-indexed")
        p.add_argument("--allow-self-loops", action="store_true", help="accept and drop self-loops")

    p = add("analyze", cmd_analyze, "Homophily, spectrum and structural heterophily of a labeled graph (JSON on stdout).")
    graph_flags(p)
    p.add_argument("--labels", required=True, help="CSV with one integer label per row")
    p.add_argument("--p", type=int, default=None, help="eigenvectors used by k-means when C > 2 (default C)")
    p.add_argument("--seed", type=int, default=0, help="k-means seed")

    p = add("pump", cmd_pump, "Train the diffusion pump alone; writes U.csv, D.csv and report.json.")
    graph_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--p", type=int, default=3, help="number of columns of U")
    p.add_argument("--lr", type=float, default=0.01, help="Adam learning rate")
    p.add_argument("--steps", type=int, default=2000, help="optimization steps")
    p.add_argument("--ortho-weight", type=float, default=1.0, help="weight of the orthogonality penalty")
    p.add_argument("--act", choices=("identity", "tanh"), default="identity", help="output activation")
    p.add_argument("--input", choices=("adjacency", "identity"), default="adjacency",
                   help="matrix the linear map acts on (identity is the ablation)")
    p.add_argument("--seed", type=int, default=0, help="initialization seed")

    def data_flags(p):
        graph_flags(p)
        p.add_argument("--features", required=True, help="headerless CSV, row i = node i")
        p.add_argument("--labels", required=True, help="CSV with one integer label per row")
        p.add_argument("--splits", required=True, nargs="+",
                       help="split CSV files (train,val,test flags per row) or directories of them")

    p = add("train", cmd_train, "Train the diffusion-jump model on every split.")
    data_flags(p)
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--out", default=".", help="directory for metrics_<i>.jsonl, state_<i>.npz, summary.json")
    p.add_argument("--emit-plot-data", metavar="DIR", help="write alphas_<i>.csv and distance_hist_<i>.csv here")
    p.add_argument("--export-filters", metavar="DIR", help="write the final jump filters (jump_<k>.txt) per split")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--epochs", type=int, default=None, help="override the config epoch budget")

    p = add("evaluate", cmd_evaluate, "Accuracy of saved model states on their splits (JSON on stdout).")
    data_flags(p)
    p.add_argument("--state", required=True, nargs="+", help="state_<i>.npz files, one per split")

    p = add("propagate", cmd_propagate, "Closed-form or iterated label propagation from seed labels.")
    graph_flags(p)
    p.add_argument("--seed-labels", required=True, help="CSV with one label per row, -1 for unknown nodes")
    p.add_argument("--alpha", type=float, default=0.9, help="propagation weight in (0, 1)")
    p.add_argument("--iterations", type=int, default=0, help="0 for the closed form, else the number of steps")
    p.add_argument("--symmetric", action="store_true", help="use D^-1/2 A D^-1/2 instead of D^-1 A")
    p.add_argument("--classes", type=int, default=None, help="class count (default: largest seed label + 1)")
    p.add_argument("--out", required=True, help="directory for scores.csv and labels.csv")

    p = add("gradcheck", cmd_gradcheck, "Finite-difference check of the full model loss on a random toy graph.")
    p.add_argument("--n", type=int, default=12, help="nodes")
    p.add_argument("--k", type=int, default=2, help="jumps")
    p.add_argument("--f", type=int, default=4, help="features")
    p.add_argument("--c", type=int, default=2, help="classes")
    p.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    p.add_argument("--tol", type=float, default=1e-4, help="pass threshold on the relative error")
    p.add_argument("--seed", type=int, default=1, help="toy instance seed")

    p = add("gen-sbm", cmd_gen_sbm, "Sample an SBM with flipped labels and synthetic features.")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sizes", default="250,250", help="comma-separated block sizes")
    p.add_argument("--gap", type=float, default=None, help="target (p-q)/(p+q); overrides --p/--q")
    p.add_argument("--density", type=float, default=0.2, help="base probability used with --gap")
    p.add_argument("--p", type=float, default=None, help="intra-block edge probability")
    p.add_argument("--q", type=float, default=None, help="inter-block edge probability")
    p.add_argument("--flip", type=float, default=0.0, help="fraction of labels moved to another class")
    p.add_argument("--noise", type=float, default=0.3, help="feature label-copy corruption probability")
    p.add_argument("--max-retries", type=int, default=20, help="resamples allowed to get a connected graph")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")

    p = add("sweep", cmd_sweep, "Gap x heterophily sweep; writes a results CSV.")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--gaps", default="0.2,0.5,0.67,0.98", help="comma-separated gap targets in (0, 1)")
    p.add_argument("--flips", default="0,0.1,0.2,0.3,0.4,0.5", help="comma-separated flip fractions")
    p.add_argument("--seeds", default="0", help="comma-separated seeds, one cell per seed")
    p.add_argument("--noise", type=float, default=0.3, help="feature noise")
    p.add_argument("--sizes", default="250,250", help="comma-separated block sizes")
    p.add_argument("--density", type=float, default=0.2, help="base edge probability")
    p.add_argument("--epochs", type=int, default=None, help="override the sweep epoch budget")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: CPU count; DJLAB_THREADS caps it)")
    return ap


def main(argv=None) -> int:
    from .model import TrainingError
    from .pump import PumpError
    from .sbm import SbmError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        config, inputs, out_dir = args.func(args)
        write_manifest(args, config, inputs, started, out_dir)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (TrainingError, PumpError, SbmError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, GraphError, ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
