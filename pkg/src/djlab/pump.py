"""The diffusion pump: learn U = f(A) by minimizing a trace-ratio Dirichlet loss.

The columns of U drift toward the low end of the generalized spectrum of
(L, D); pairwise row distances of U then act as asymptotic diffusion
distances.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .autograd import Tape, Var
from .graph import Graph, GraphError, laplacian
from .optim import Adam
from .spectral import require_connected

log = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "tanh")


class PumpError(RuntimeError):
    pass


@dataclass
class PumpParams:
    W: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.W.ndim != 2:
            raise ValueError("pump weights must be a matrix")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("pump weights must be finite")


@dataclass(frozen=True, eq=False)
class FiedlerEnvironment:
    U: np.ndarray
    rayleigh: np.ndarray
    ratio: float


@dataclass
class PumpConfig:
    p: int = 3
    lr: float = 0.01
    steps: int = 2000
    ortho_weight: float = 1.0
    seed: int = 0
    act: str = "identity"
    use_adjacency: bool = True
    bias: bool = False


def pump_input(g: Graph, use_adjacency: bool = True) -> np.ndarray:
    """The matrix the pump's linear map is applied to: A, or I for the ablation."""
    return g.adjacency if use_adjacency else np.eye(g.n)


def init_pump(g: Graph, p: int, rng: np.random.Generator, use_adjacency: bool = True,
              bias: bool = False) -> PumpParams:
    """Gaussian weights rescaled so every column of the initial U has unit norm."""
    if p < 1:
        raise ValueError("pump width must be positive")
    M = pump_input(g, use_adjacency)
    W = rng.standard_normal((g.n, p))
    norms = np.linalg.norm(M @ W, axis=0)
    W /= np.where(norms > 0, norms, 1.0)
    return PumpParams(W, np.zeros((1, p)) if bias else None)


def pump_forward(A: np.ndarray, params: PumpParams, act: str = "identity") -> np.ndarray:
    if A.shape[1] != params.W.shape[0]:
        raise ValueError(f"pump input has {A.shape[1]} columns, weights have {params.W.shape[0]} rows")
    Z = A @ params.W
    if params.bias is not None:
        Z = Z + params.bias
    return _activate(Z, act)


def _activate(Z, act):
    if act == "identity":
        return Z
    if act == "tanh":
        return np.tanh(Z)
    raise ValueError(f"unknown activation {act!r}")


def pump_forward_tape(tape: Tape, A: np.ndarray, W: Var, bias: Var | None = None, act: str = "identity") -> Var:
    Z = tape.matmul(A, W)
    if bias is not None:
        Z = tape.add(Z, bias)
    if act == "identity":
        return Z
    if act == "tanh":
        return tape.tanh(Z)
    raise ValueError(f"unknown activation {act!r}")


def dirichlet_ratio(U: np.ndarray, g: Graph) -> float:
    """Tr[U^T L U] / Tr[U^T D U]."""
    U = np.asarray(U, dtype=np.float64).reshape(g.n, -1)
    d = g.degrees
    den = float(np.sum(d[:, None] * U * U))
    if den <= 0:
        raise PumpError("trace ratio undefined: Tr[U^T D U] is zero")
    return float(np.sum(U * (laplacian(g) @ U)) / den)


def ortho_penalty(U: np.ndarray) -> float:
    G = U.T @ U - np.eye(U.shape[1])
    return float(np.sum(G * G))


def pump_gradient(U: np.ndarray, g: Graph) -> np.ndarray:
    """Gradient of the trace ratio w.r.t. U: (2 L U - 2 rho D U) / Tr[U^T D U]."""
    U = np.asarray(U, dtype=np.float64)
    d = g.degrees
    den = float(np.sum(d[:, None] * U * U))
    if den <= 0:
        raise PumpError("trace ratio undefined: Tr[U^T D U] is zero")
    rho = float(np.sum(U * (laplacian(g) @ U))) / den
    return (2.0 * laplacian(g) @ U - 2.0 * rho * d[:, None] * U) / den


def ortho_gradient(U: np.ndarray) -> np.ndarray:
    return 4.0 * U @ (U.T @ U - np.eye(U.shape[1]))


def ratio_tape(tape: Tape, U: Var, L: np.ndarray, degrees: np.ndarray) -> Var:
    num = tape.sum(tape.mul(U, tape.matmul(L, U)))
    den = tape.sum(tape.mul(tape.mul(U, U), degrees[:, None]))
    return tape.div(num, den)


def ortho_tape(tape: Tape, U: Var) -> Var:
    G = tape.sub(tape.matmul(tape.transpose(U), U), np.eye(U.shape[1]))
    return tape.frob2(G)


def distance_matrix(U: np.ndarray, squared: bool = False) -> np.ndarray:
    """Pairwise Euclidean distances between the rows of U (zero diagonal)."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    D = cdist(U, U, "sqeuclidean" if squared else "euclidean")
    np.fill_diagonal(D, 0.0)
    return D


def rayleigh_quotients(U: np.ndarray, g: Graph, deflate: bool = False) -> np.ndarray:
    """Per-column u^T L u / u^T D u, optionally after removing the D-weighted constant part."""
    U = np.asarray(U, dtype=np.float64)
    d = g.degrees
    if deflate:
        U = U - (d @ U / d.sum())[None, :]
    num = np.sum(U * (laplacian(g) @ U), axis=0)
    den = np.sum(d[:, None] * U * U, axis=0)
    return num / np.where(den > 0, den, np.nan)


def train_pump(g: Graph, config: PumpConfig | None = None, **overrides):
    """Fit the pump alone (ratio + ortho penalty) with Adam.

    Returns ``(FiedlerEnvironment, DistanceMatrix, history)`` where history is
    the per-step total loss.
    """
    cfg = config or PumpConfig()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    require_connected(g)
    if cfg.p < 1:
        raise ValueError("pump width must be positive")
    rng = np.random.default_rng(cfg.seed)
    params = init_pump(g, cfg.p, rng, cfg.use_adjacency, cfg.bias)
    A = pump_input(g, cfg.use_adjacency)
    L = laplacian(g)
    d = g.degrees
    store = {"W": params.W}
    if params.bias is not None:
        store["b"] = params.bias
    opt = Adam(store, lr=cfg.lr)
    history = []
    for step in range(cfg.steps):
        tape = Tape()
        W = tape.param(store["W"], "W")
        b = tape.param(store["b"], "b") if "b" in store else None
        U = pump_forward_tape(tape, A, W, b, cfg.act)
        loss = tape.add(ratio_tape(tape, U, L, d), tape.scale(ortho_tape(tape, U), cfg.ortho_weight))
        value = float(loss.value)
        if not np.isfinite(value):
            raise PumpError(f"pump diverged at step {step}")
        history.append(value)
        opt.step(tape.backward(loss))
    U = pump_forward(A, PumpParams(store["W"], store.get("b")), cfg.act)
    env = FiedlerEnvironment(U, rayleigh_quotients(U, g), dirichlet_ratio(U, g))
    return env, distance_matrix(U), history


def fiedler_correlations(U: np.ndarray, g: Graph) -> np.ndarray:
    """|Pearson correlation| of each column of U with the generalized Fiedler vector D^-1/2 phi2."""
    from .spectral import fiedler

    _, phi = fiedler(g)
    v = phi / np.sqrt(g.degrees)
    out = []
    for j in range(U.shape[1]):
        u = U[:, j]
        if np.std(u) == 0:
            out.append(0.0)
        else:
            out.append(abs(float(np.corrcoef(u, v)[0, 1])))
    return np.array(out)
