"""Plain-text formats: edge lists, headerless CSV node tables, split files,
flat ``key = value`` configs, and a converter for the geom-gcn WebKB layout."""
from __future__ import annotations

import csv
from dataclasses import fields
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError, SplitMasks
from .model import FILE_KEYS, ModelConfig


class FormatError(ValueError):
    """A parse or consistency failure; the message names the file (and line when known)."""

    def __init__(self, path, message, line: int | None = None):
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def fmt17(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


# -- graphs --------------------------------------------------------------------

def read_edge_list(path, n: int | None = None, allow_self_loops: bool = False) -> Graph:
    """``u v [w]`` per line, 0-indexed; blank lines and ``#`` comments are skipped.

    Without ``n`` the node count is one more than the largest endpoint.
    """
    edges, weights = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if len(tok) not in (2, 3):
                raise FormatError(path, f"expected 'u v [w]', got {len(tok)} fields", lineno)
            try:
                u, v = int(tok[0]), int(tok[1])
                w = float(tok[2]) if len(tok) == 3 else 1.0
            except ValueError as exc:
                raise FormatError(path, str(exc), lineno) from None
            if u < 0 or v < 0:
                raise FormatError(path, "negative node id", lineno)
            if not (w > 0 and np.isfinite(w)):
                raise FormatError(path, "edge weight must be positive and finite", lineno)
            if u == v and not allow_self_loops:
                raise FormatError(path, f"self-loop on node {u}", lineno)
            edges.append((u, v))
            weights.append(w)
    top = max((max(e) for e in edges), default=-1) + 1
    if n is None:
        n = top
    elif top > n:
        raise FormatError(path, f"endpoint {top - 1} outside a graph of {n} nodes")
    try:
        return Graph.from_edges(n, edges, weights, allow_self_loops=allow_self_loops)
    except GraphError as exc:
        raise FormatError(path, str(exc)) from None


def write_edge_list(g: Graph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# n={g.n} m={g.m}\n")
        for (u, v), w in zip(g.edges, g.weights):
            if w == 1.0:
                fh.write(f"{u} {v}\n")
            else:
                fh.write(f"{u} {v} {fmt17(w)}\n")


# -- node tables -----------------------------------------------------------------

def _read_rows(path) -> list[list[str]]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row and any(c.strip() for c in row):
                rows.append([c.strip() for c in row])
    return rows


def read_labels(path, allow_unknown: bool = False) -> np.ndarray:
    """One integer label per row; with ``allow_unknown`` a ``-1`` marks an unlabeled node."""
    lowest = -1 if allow_unknown else 0
    out = []
    for lineno, row in enumerate(_read_rows(path), 1):
        if len(row) != 1:
            raise FormatError(path, "one label per row expected", lineno)
        try:
            v = int(row[0])
        except ValueError:
            raise FormatError(path, f"label {row[0]!r} is not an integer", lineno) from None
        if v < lowest:
            raise FormatError(path, f"labels must be >= {lowest}", lineno)
        out.append(v)
    return np.array(out, dtype=np.int64)


def read_seed_labels(path) -> np.ndarray:
    return read_labels(path, allow_unknown=True)


def read_features(path) -> np.ndarray:
    rows = _read_rows(path)
    out = []
    width = None
    for lineno, row in enumerate(rows, 1):
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise FormatError(path, f"row has {len(row)} columns, expected {width}", lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise FormatError(path, str(exc), lineno) from None
        if not all(np.isfinite(vals)):
            raise FormatError(path, "non-finite feature value", lineno)
        out.append(vals)
    if not out:
        raise FormatError(path, "empty feature file")
    return np.array(out, dtype=np.float64)


def read_split(path) -> SplitMasks:
    """Row i holds ``train,val,test`` flags (0/1) for node i."""
    masks = [[], [], []]
    for lineno, row in enumerate(_read_rows(path), 1):
        if len(row) != 3 or any(c not in ("0", "1") for c in row):
            raise FormatError(path, "expected three 0/1 flags: train,val,test", lineno)
        for m, c in zip(masks, row):
            m.append(c == "1")
    try:
        return SplitMasks(*(np.array(m, dtype=bool) for m in masks))
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None


def write_labels(labels, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for v in labels:
            w.writerow([int(v)])


def write_features(X, path) -> None:
    write_matrix(X, path)


def write_matrix(M, path, header: list[str] | None = None) -> None:
    M = np.atleast_2d(np.asarray(M))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for row in M:
            w.writerow([fmt17(v) for v in row])


def write_split(split: SplitMasks, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for t, v, s in zip(split.train, split.val, split.test):
            w.writerow([int(t), int(v), int(s)])


def split_paths(spec) -> list[Path]:
    """A split file, or every ``*.csv`` in a directory in sorted order."""
    p = Path(spec)
    if p.is_dir():
        found = sorted(p.glob("*.csv"))
        if not found:
            raise FormatError(p, "no split files (*.csv) in directory")
        return found
    return [p]


def load_dataset(graph, features=None, labels=None, splits=None, allow_self_loops=False):
    """Read and cross-check a dataset.

    Returns (Graph, X or None, labels or None, list of SplitMasks). The node count
    comes from the label or feature file when given, so trailing isolated nodes
    survive the edge list.
    """
    y = read_labels(labels) if labels is not None else None
    X = read_features(features) if features is not None else None
    n = len(y) if y is not None else (X.shape[0] if X is not None else None)
    g = read_edge_list(graph, n=n, allow_self_loops=allow_self_loops)
    if X is not None and X.shape[0] != g.n:
        raise FormatError(features, f"{X.shape[0]} feature rows for {g.n} nodes")
    if y is not None and len(y) != g.n:
        raise FormatError(labels, f"{len(y)} labels for {g.n} nodes")
    masks = []
    for sp in ([] if splits is None else splits):
        for path in split_paths(sp):
            m = read_split(path)
            if len(m.train) != g.n:
                raise FormatError(path, f"{len(m.train)} split rows for {g.n} nodes")
            masks.append(m)
    return g, X, y, masks


# -- configs ---------------------------------------------------------------------

_TYPES = {f.name: f.type for f in fields(ModelConfig)}


def _coerce(key, text, path, lineno):
    kind = _TYPES[key]
    try:
        if kind in ("bool", bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
        return text
    except ValueError as exc:
        raise FormatError(path, f"{key}: {exc}", lineno) from None


def parse_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown or repeated keys are errors."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(path, "expected 'key = value'", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in FILE_KEYS:
                raise FormatError(path, f"unknown key {key!r}", lineno)
            if key in out:
                raise FormatError(path, f"duplicate key {key!r}", lineno)
            out[key] = _coerce(key, value, path, lineno)
    return out


def load_config(path, **overrides) -> ModelConfig:
    values = parse_config(path) if path is not None else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ModelConfig(**values)
    except (TypeError, ValueError) as exc:
        raise FormatError(path, str(exc)) from None


def write_config(cfg: ModelConfig, path) -> None:
    with open(path, "w") as fh:
        for key in FILE_KEYS:
            v = getattr(cfg, key)
            fh.write(f"{key} = {str(v).lower() if isinstance(v, bool) else v}\n")


# -- WebKB (geom-gcn layout) -----------------------------------------------------

def convert_webkb(src_dir, out_dir, name: str | None = None) -> dict:
    """Convert a geom-gcn style WebKB directory into this package's formats.

    Expected inputs (``name`` defaults to the directory name, lower-cased):
      ``out1_node_feature_label.txt``  header line, then ``id<TAB>f1,f2,...<TAB>label``
      ``out1_graph_edges.txt``         header line, then ``src<TAB>dst``
      ``<name>_split_0.6_0.2_<i>.npz``  optional; arrays train_mask, val_mask, test_mask

    Directed edges are symmetrized, duplicates merged, self-loops dropped.
    Writes graph.txt, features.csv, labels.csv and splits/split_<i>.csv.
    """
    src, out = Path(src_dir), Path(out_dir)
    name = (name or src.name).lower()
    node_file = src / "out1_node_feature_label.txt"
    edge_file = src / "out1_graph_edges.txt"
    feats, labels = {}, {}
    with open(node_file) as fh:
        fh.readline()
        for lineno, raw in enumerate(fh, 2):
            if not raw.strip():
                continue
            parts = raw.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise FormatError(node_file, "expected id, features, label separated by tabs", lineno)
            i = int(parts[0])
            feats[i] = [float(v) for v in parts[1].split(",")]
            labels[i] = int(parts[2])
    n = len(feats)
    if sorted(feats) != list(range(n)):
        raise FormatError(node_file, "node ids must be 0..n-1")
    edges = set()
    with open(edge_file) as fh:
        fh.readline()
        for lineno, raw in enumerate(fh, 2):
            if not raw.strip():
                continue
            u, v = (int(t) for t in raw.split())
            if u >= n or v >= n:
                raise FormatError(edge_file, f"edge ({u}, {v}) outside {n} nodes", lineno)
            if u != v:
                edges.add((min(u, v), max(u, v)))
    g = Graph.from_edges(n, sorted(edges))
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(g, out / "graph.txt")
    write_features(np.array([feats[i] for i in range(n)]), out / "features.csv")
    write_labels([labels[i] for i in range(n)], out / "labels.csv")
    split_files = sorted(src.glob(f"{name}_split_*.npz"), key=lambda p: int(p.stem.rsplit("_", 1)[1]))
    if split_files:
        (out / "splits").mkdir(exist_ok=True)
    for i, sp in enumerate(split_files):
        with np.load(sp) as z:
            m = SplitMasks(*(z[k].astype(bool) for k in ("train_mask", "val_mask", "test_mask")))
        write_split(m, out / "splits" / f"split_{i}.csv")
    return {"n": n, "m": g.m, "splits": len(split_files), "out": str(out)}


def convert_main(argv=None) -> int:
    """``djlab-convert-webkb SRC OUT [--name NAME]``: the converter as a script."""
    import argparse
    import json
    import sys

    ap = argparse.ArgumentParser(prog="djlab-convert-webkb", description=convert_webkb.__doc__.split("\n")[0])
    ap.add_argument("src", help="directory in the geom-gcn layout")
    ap.add_argument("out", help="output directory")
    ap.add_argument("--name", default=None, help="dataset prefix of the split files (default: src directory name)")
    args = ap.parse_args(argv)
    try:
        info = convert_webkb(args.src, args.out, args.name)
    except (FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(info))
    return 0
