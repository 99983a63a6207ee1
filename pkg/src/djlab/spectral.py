"""Exact spectral quantities on small dense graphs.

These serve both as features (Fiedler split, commute times, structural
heterophily) and as ground truth for the learned diffusion pump.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .graph import Graph, GraphError, dirichlet_energy, laplacian, n_classes, normalized_operators, one_hot


@dataclass(frozen=True, eq=False)
class EigenSystem:
    values: np.ndarray
    vectors: np.ndarray


@dataclass(frozen=True, eq=False)
class HeterophilyReport:
    R: float
    num_energy: float
    den_energy: float
    unsupervised: np.ndarray


def eig_sym(M: np.ndarray, tol: float = 1e-10) -> EigenSystem:
    """Full ascending eigendecomposition with a deterministic sign per vector.

    Each eigenvector is flipped so that its first component of magnitude
    above 1e-12 is positive.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(M, M.T, rtol=0.0, atol=tol):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((M + M.T) / 2)
    for r in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, r]) > 1e-12)
        if len(nz) and vecs[nz[0], r] < 0:
            vecs[:, r] = -vecs[:, r]
    return EigenSystem(vals, vecs)


def n_components(g: Graph) -> int:
    return int(connected_components(g.adjacency, directed=False)[0])


def require_connected(g: Graph) -> None:
    k = n_components(g)
    if k != 1:
        raise GraphError(f"graph is disconnected ({k} components)")


def normalized_spectrum(g: Graph) -> EigenSystem:
    L_norm, _ = normalized_operators(g)
    return eig_sym(L_norm)


def fiedler(g: Graph, normalized: bool = True) -> tuple[float, np.ndarray]:
    """Second-smallest eigenpair of the normalized (or combinatorial) Laplacian."""
    require_connected(g)
    if g.n < 2:
        raise GraphError("Fiedler pair needs at least two nodes")
    es = normalized_spectrum(g) if normalized else eig_sym(laplacian(g))
    return float(es.values[1]), es.vectors[:, 1].copy()


def _walk_eigenbasis(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of the normalized Laplacian and the right eigenvectors D^-1/2 phi of P."""
    es = normalized_spectrum(g)
    psi = es.vectors / np.sqrt(g.degrees)[:, None]
    return es.values, psi


def diffusion_distance_t(g: Graph, t: int, i: int, j: int, squared: bool = False) -> float:
    """Diffusion distance at time ``t`` from the t-step walk distributions."""
    require_connected(g)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if i == j:
        return 0.0
    _, P = normalized_operators(g)
    Pt = np.linalg.matrix_power(P, t)
    pi = g.degrees / g.volume
    d2 = float(np.sum((Pt[i] - Pt[j]) ** 2 / pi))
    return d2 if squared else float(np.sqrt(d2))


def diffusion_distance_spectral(g: Graph, t: int, i: int, j: int, squared: bool = False) -> float:
    require_connected(g)
    lam, psi = _walk_eigenbasis(g)
    gamma = 1.0 - lam
    if i == j:
        return 0.0
    # gamma_r ** 0 must be 1 even for gamma_r == 0
    weights = np.ones_like(gamma) if t == 0 else gamma ** (2 * t)
    d2 = float(g.volume * np.sum(weights * (psi[i] - psi[j]) ** 2))
    return d2 if squared else float(np.sqrt(max(d2, 0.0)))


def commute_time(g: Graph, i: int, j: int) -> float:
    """Commute time from the normalized-Laplacian spectrum."""
    return float(commute_time_matrix(g)[i, j])


def commute_time_matrix(g: Graph) -> np.ndarray:
    require_connected(g)
    lam, psi = _walk_eigenbasis(g)
    emb = psi[:, 1:] / np.sqrt(lam[1:])
    sq = np.sum(emb * emb, axis=1)
    CT = g.volume * (sq[:, None] + sq[None, :] - 2 * emb @ emb.T)
    np.fill_diagonal(CT, 0.0)
    return np.maximum(CT, 0.0)


def commute_time_resistance(g: Graph) -> np.ndarray:
    """vol(G) times effective resistance, via the Laplacian pseudoinverse."""
    require_connected(g)
    Lp = np.linalg.pinv(laplacian(g), hermitian=True)
    d = np.diag(Lp)
    R = d[:, None] + d[None, :] - 2 * Lp
    np.fill_diagonal(R, 0.0)
    return g.volume * R


def escape_probability(g: Graph, pair=None, subset=None) -> float:
    """``1/CT(i, j)`` for a node pair, ``cut(S, V\\S)/vol(S)`` for a subset S."""
    if (pair is None) == (subset is None):
        raise ValueError("give exactly one of pair or subset")
    if pair is not None:
        i, j = pair
        if i == j:
            raise ValueError("escape probability needs distinct nodes")
        return 1.0 / commute_time(g, i, j)
    require_connected(g)
    inside = np.zeros(g.n, dtype=bool)
    inside[np.asarray(list(subset), dtype=np.int64)] = True
    if not inside.any() or inside.all():
        raise ValueError("subset must be nonempty and proper")
    A = g.adjacency
    cut = A[inside][:, ~inside].sum()
    vol = g.degrees[inside].sum()
    return float(cut / vol)


def unsupervised_labeling(g: Graph, C: int, p: int | None = None, seed: int = 0) -> np.ndarray:
    """Structural labeling: Fiedler sign for C=2, k-means on spectral rows for C>2."""
    if C > g.n:
        raise ValueError(f"cannot form {C} groups from {g.n} nodes")
    if C <= 1:
        return np.zeros(g.n, dtype=np.int64)
    require_connected(g)
    if C == 2:
        _, phi = fiedler(g)
        return (phi < 0).astype(np.int64)
    from sklearn.cluster import KMeans

    p = C if p is None else p
    es = normalized_spectrum(g)
    emb = es.vectors[:, 1 : p + 1]
    km = KMeans(n_clusters=C, init="k-means++", n_init=100, random_state=seed)
    return km.fit_predict(emb).astype(np.int64)


def structural_heterophily(g: Graph, labels: np.ndarray, unsupervised: np.ndarray | None = None,
                           p: int | None = None, seed: int = 0) -> HeterophilyReport:
    """Ratio of the Dirichlet energy of ``labels`` to that of a structural labeling."""
    labels = np.asarray(labels, dtype=np.int64)
    C = n_classes(labels)
    if unsupervised is None:
        unsupervised = unsupervised_labeling(g, C, p=p, seed=seed)
    C_all = max(C, n_classes(unsupervised))
    num = dirichlet_energy(one_hot(labels, C_all), g)
    den = dirichlet_energy(one_hot(unsupervised, C_all), g)
    if den <= 0:
        err = GraphError("unsupervised labeling has zero Dirichlet energy")
        err.unsupervised = unsupervised
        raise err
    R = num / den
    if R < 1:
        warnings.warn(f"structural heterophily {R:.4f} < 1; the structural labeling is not energy-minimal",
                      stacklevel=2)
    return HeterophilyReport(R, num, den, unsupervised)


def trace_ratio_bounds(g: Graph, p: int) -> tuple[float, float]:
    """Degree-based bounds on the minimal trace ratio with p orthonormal columns."""
    require_connected(g)
    if not 1 <= p < g.n:
        raise ValueError("need 1 <= p < n")
    lam = eig_sym(laplacian(g)).values
    num = float(np.sum(lam[1:p]))
    d = np.sort(g.degrees)
    return num / float(d[p:].sum()), num / float(d[:p].sum())
