"""Stochastic block models with a controlled gap, label-flip heterophily and
synthetic features, plus the gap x heterophily sweep harness."""
from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph, SplitMasks, homophily_stats, n_classes, one_hot
from .model import ModelConfig, evaluate, train
from .spectral import n_components, structural_heterophily, unsupervised_labeling


@dataclass
class SbmSpec:
    sizes: tuple[int, ...]
    p: float
    q: float
    seed: int = 0
    max_retries: int = 20

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if not (0 <= self.q <= self.p <= 1):
            raise ValueError("need 0 <= q <= p <= 1")
        if any(s <= 0 for s in self.sizes):
            raise ValueError("block sizes must be positive")

    @property
    def gap(self) -> float:
        return (self.p - self.q) / (self.p + self.q) if self.p + self.q > 0 else 0.0

    @classmethod
    def from_gap(cls, gap: float, sizes=(100, 100), density: float = 0.2, seed: int = 0) -> "SbmSpec":
        """p = density (1 + gap), q = density (1 - gap), so that (p - q)/(p + q) == gap."""
        return cls(tuple(sizes), density * (1 + gap), density * (1 - gap), seed)


class SbmError(RuntimeError):
    pass


def gen_sbm(spec: SbmSpec) -> tuple[Graph, np.ndarray]:
    """Sample an SBM; resample (same stream) until connected or retries run out."""
    rng = np.random.default_rng(spec.seed)
    blocks = np.repeat(np.arange(len(spec.sizes)), spec.sizes)
    n = len(blocks)
    prob = np.where(blocks[:, None] == blocks[None, :], spec.p, spec.q)
    iu, ju = np.triu_indices(n, 1)
    for _ in range(spec.max_retries):
        keep = rng.random(len(iu)) < prob[iu, ju]
        g = Graph(n, np.stack([iu[keep], ju[keep]], axis=1), np.ones(int(keep.sum())))
        if n_components(g) == 1:
            return g, blocks
    raise SbmError(f"no connected sample after {spec.max_retries} tries (p={spec.p}, q={spec.q})")


# -- labels and features -------------------------------------------------------

def flip_nodes(labels: np.ndarray, nodes, C: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Move each listed node to a different class (the other one when C == 2)."""
    out = np.array(labels, dtype=np.int64, copy=True)
    nodes = np.asarray(list(nodes), dtype=np.int64)
    if C < 2:
        return out
    if C == 2:
        out[nodes] = 1 - out[nodes]
        return out
    rng = rng or np.random.default_rng(0)
    shift = rng.integers(1, C, len(nodes))
    out[nodes] = (out[nodes] + shift) % C
    return out


def inject_heterophily(g: Graph, labels: np.ndarray, flip_fraction: float, seed: int = 0,
                       C: int | None = None) -> tuple[np.ndarray, float]:
    """Flip round(fraction * n) uniformly chosen nodes; return the labels and their measured R.

    R uses the structural labeling of the unflipped class count, so flipping never
    changes the denominator.
    """
    if not 0 <= flip_fraction <= 0.5:
        raise ValueError("flip fraction must lie in [0, 0.5]")
    labels = np.asarray(labels, dtype=np.int64)
    C = n_classes(labels) if C is None else C
    rng = np.random.default_rng(seed)
    k = int(round(flip_fraction * len(labels)))
    nodes = np.sort(rng.choice(len(labels), size=k, replace=False))
    out = flip_nodes(labels, nodes, C, rng)
    base = unsupervised_labeling(g, C, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        R = structural_heterophily(g, out, unsupervised=base).R
    return out, float(R)


def synth_features(g: Graph, labels: np.ndarray, noise: float, seed: int = 0, C: int | None = None) -> np.ndarray:
    """One-hot of a noisy label copy, plus a zero-mean, unit-variance degree column.

    Each node's copy is replaced by a different class with probability ``noise``,
    independently of the graph.
    """
    if not 0 <= noise < 0.5:
        raise ValueError("feature noise must lie in [0, 0.5)")
    labels = np.asarray(labels, dtype=np.int64)
    C = n_classes(labels) if C is None else C
    rng = np.random.default_rng([seed, 2])
    noisy = rng.random(len(labels)) < noise
    copy = flip_nodes(labels, np.flatnonzero(noisy), C, rng)
    d = g.degrees
    sd = d.std()
    deg = (d - d.mean()) / (sd if sd > 0 else 1.0)
    return np.concatenate([one_hot(copy, C), deg[:, None]], axis=1)


def random_split(n: int, seed: int = 0, fractions=(0.48, 0.32, 0.20)) -> SplitMasks:
    """Random train/val/test masks with the given proportions (test takes the remainder)."""
    rng = np.random.default_rng([seed, 3])
    perm = rng.permutation(n)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][perm[:a]] = True
    masks[1][perm[a:b]] = True
    masks[2][perm[b:]] = True
    return SplitMasks(*masks)


# -- benchmark cells and the sweep ---------------------------------------------

SWEEP_NOISE = 0.3
SWEEP_COLUMNS = ("gap", "flip", "seed", "R", "node_h", "acc_dj", "acc_gcn", "acc_mlp")


def sweep_config(seed: int = 0, **overrides) -> ModelConfig:
    """The small fixed configuration used for every sweep cell."""
    base = dict(k_jumps=4, hidden_channels=16, dropout=0.2, lr=0.01, weight_decay=5e-3, epochs=300,
                patience=100, seed=seed)
    base.update(overrides)
    return ModelConfig(**base)


@dataclass(frozen=True, eq=False)
class Cell:
    g: Graph
    blocks: np.ndarray
    labels: np.ndarray
    X: np.ndarray
    split: SplitMasks
    R: float


def make_cell(gap: float, flip: float, seed: int, noise: float = SWEEP_NOISE, sizes=(250, 250),
              density: float = 0.2) -> Cell:
    """Generate graph, flipped labels, features and a split for one (gap, flip, seed) cell."""
    g, blocks = gen_sbm(SbmSpec.from_gap(gap, sizes, density, seed))
    labels, R = inject_heterophily(g, blocks, flip, seed)
    X = synth_features(g, labels, noise, seed)
    return Cell(g, blocks, labels, X, random_split(g.n, seed), R)


def run_cell(gap: float, flip: float, seed: int, noise: float = SWEEP_NOISE, config: ModelConfig | None = None,
             sizes=(250, 250), density: float = 0.2) -> dict:
    """One sweep row: accuracies of the diffusion-jump model, GCN and MLP on a fresh cell."""
    from .propagation import gcn_baseline, mlp_baseline

    cfg = config or sweep_config(seed)
    cell = make_cell(gap, flip, seed, noise, sizes, density)
    C = n_classes(cell.blocks)
    state, _ = train(cell.g, cell.X, cell.labels, cell.split, cfg, C)
    acc_dj = evaluate(state, cell.g, cell.X, cell.labels, cell.split)["test"]
    acc_gcn, _ = gcn_baseline(cell.g, cell.X, cell.labels, cell.split, cfg, C)
    acc_mlp, _ = mlp_baseline(cell.g, cell.X, cell.labels, cell.split, cfg, C)
    _, node_h, _ = homophily_stats(cell.g, cell.labels)
    return {"gap": gap, "flip": flip, "seed": seed, "R": cell.R, "node_h": node_h,
            "acc_dj": acc_dj, "acc_gcn": acc_gcn, "acc_mlp": acc_mlp}


@dataclass
class SweepGrid:
    gaps: tuple[float, ...] = (0.2, 0.5, 0.67, 0.98)
    flips: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    seeds: tuple[int, ...] = (0,)
    noise: float = SWEEP_NOISE
    sizes: tuple[int, ...] = (250, 250)
    density: float = 0.2
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(not 0 < g < 1 for g in self.gaps):
            raise ValueError("gap targets must lie in (0, 1)")
        if any(not 0 <= f <= 0.5 for f in self.flips):
            raise ValueError("flip fractions must lie in [0, 0.5]")
        if not self.seeds:
            raise ValueError("at least one seed required")

    def cells(self) -> list[tuple[float, float, int]]:
        return [(g, f, s) for g in self.gaps for f in self.flips for s in self.seeds]


def worker_count(requested: int | None = None) -> int:
    """Pool size: ``requested`` (or the CPU count), capped by DJLAB_THREADS when set."""
    n = requested or os.cpu_count() or 1
    if n < 1:
        raise ValueError("thread count must be positive")
    env = os.environ.get("DJLAB_THREADS")
    if env:
        cap = int(env)
        if cap < 1:
            raise ValueError("DJLAB_THREADS must be a positive integer")
        n = min(n, cap)
    return n


def _run_grid_cell(args):
    gap, flip, seed, grid = args
    return run_cell(gap, flip, seed, grid.noise, sweep_config(seed, **grid.config), grid.sizes, grid.density)


def sweep(grid: SweepGrid, threads: int | None = None) -> list[dict]:
    """Run every cell; rows come back in grid order whatever the pool size."""
    jobs = [(g, f, s, grid) for g, f, s in grid.cells()]
    workers = min(worker_count(threads), len(jobs))
    if workers <= 1:
        return [_run_grid_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_grid_cell, jobs))


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)
