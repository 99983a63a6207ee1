"""Jump hierarchy: rank projectors over a distance matrix and the filter bank
J^k = Pi^k * exp(-D) built on them.

Supports are hard (recomputed from the current distances); gradients reach
the distances only through the exp(-D) coefficients on a frozen support.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODES = ("rank", "cumulative")


def distance_ranks(D: np.ndarray) -> np.ndarray:
    """rank[i, j] = position of j when row i is sorted ascending.

    The node itself always takes rank 0; remaining ties go to the lower index.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    if np.any(D < 0):
        raise ValueError("distances must be nonnegative")
    n = D.shape[0]
    key = D.copy()
    np.fill_diagonal(key, -np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    ranks = np.empty((n, n), dtype=np.int64)
    np.put_along_axis(ranks, order, np.arange(n)[None, :].repeat(n, axis=0), axis=1)
    return ranks


def _mask_from_ranks(ranks: np.ndarray, k: int, mode: str) -> np.ndarray:
    n = ranks.shape[0]
    if not 0 <= k < n:
        raise ValueError(f"jump order {k} outside [0, {n})")
    if mode not in MODES:
        raise ValueError(f"unknown projector mode {mode!r}")
    if k == 0 or mode == "rank":
        return ranks == k
    return (ranks >= 1) & (ranks <= k)


def projector(D: np.ndarray, k: int, mode: str = "rank") -> np.ndarray:
    """Boolean n x n mask Pi^k; Pi^0 is the identity."""
    return _mask_from_ranks(distance_ranks(D), k, mode)


@dataclass(frozen=True, eq=False)
class FilterBank:
    """Masks and coefficient matrices for jumps 0..K.

    ``masks[k]`` is boolean n x n; ``filters[k]`` holds exp(-D) on the mask.
    """

    masks: tuple[np.ndarray, ...]
    filters: tuple[np.ndarray, ...]
    mode: str = "rank"

    @property
    def K(self) -> int:
        return len(self.masks) - 1

    @property
    def n(self) -> int:
        return self.masks[0].shape[0]

    def support(self, k: int) -> np.ndarray:
        """Ordered pairs (i, j) of filter k as an (m, 2) array."""
        return np.argwhere(self.masks[k])

    def partners(self, k: int) -> list[np.ndarray]:
        """Per-row selected column indices of mask k."""
        return [np.flatnonzero(row) for row in self.masks[k]]


def masks_from_distances(D: np.ndarray, K: int, mode: str = "rank") -> tuple[np.ndarray, ...]:
    ranks = distance_ranks(D)
    if K >= ranks.shape[0]:
        raise ValueError(f"K={K} needs more than {ranks.shape[0]} nodes")
    return tuple(_mask_from_ranks(ranks, k, mode) for k in range(K + 1))


def filter_bank(D: np.ndarray, K: int, mode: str = "rank", normalize: bool = False) -> FilterBank:
    masks = masks_from_distances(D, K, mode)
    return FilterBank(masks, _coefficients(D, masks, normalize), mode)


def _coefficients(D, masks, normalize):
    C = np.exp(-np.asarray(D, dtype=np.float64))
    out = []
    for m in masks:
        J = np.where(m, C, 0.0)
        if normalize:
            s = J.sum(axis=1, keepdims=True)
            J = J / np.where(s > 0, s, 1.0)
        out.append(J)
    return tuple(out)


def refresh_supports(bank: FilterBank, D: np.ndarray, recompute_masks: bool = True) -> FilterBank:
    """Rebuild the bank from ``D``; with ``recompute_masks=False`` the supports stay frozen."""
    D = np.asarray(D, dtype=np.float64)
    if D.shape[0] != bank.n:
        raise ValueError("distance matrix size differs from the bank")
    masks = masks_from_distances(D, bank.K, bank.mode) if recompute_masks else bank.masks
    return FilterBank(masks, _coefficients(D, masks, False), bank.mode)


def export_bank(bank: FilterBank, out_dir: str | Path) -> list[Path]:
    """Write one ``jump_<k>.txt`` per filter: header line, then ``i j c`` rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, (m, J) in enumerate(zip(bank.masks, bank.filters)):
        path = out_dir / f"jump_{k}.txt"
        with open(path, "w") as fh:
            fh.write(f"# jump k={k} n={bank.n} mode={bank.mode}\n")
            for i, j in np.argwhere(m):
                fh.write(f"{i} {j} {J[i, j]:.17g}\n")
        paths.append(path)
    return paths


def read_bank_file(path: str | Path) -> tuple[dict, np.ndarray]:
    """Parse an exported filter file into (header fields, dense matrix)."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# jump"):
            raise ValueError(f"{path}: missing jump header")
        meta = dict(tok.split("=") for tok in header.split()[2:])
        n = int(meta["n"])
        J = np.zeros((n, n))
        for line in fh:
            i, j, c = line.split()
            J[int(i), int(j)] = float(c)
    meta["k"] = int(meta["k"])
    meta["n"] = n
    return meta, J
