"""Reference methods: label propagation (closed form and iterated), absorbing
random walks, and the GCN / MLP baselines trained with the shared loop."""
from __future__ import annotations

import numpy as np

from .autograd import Tape
from .graph import Graph, GraphError, SplitMasks, n_classes, normalized_operators
from .model import TrainingError, _validate, accuracy, fit, glorot, normalized_adjacency


def seed_matrix(labels: np.ndarray, border: np.ndarray, C: int | None = None) -> np.ndarray:
    """Y[i, c] = 1 iff node i is a border node with label c."""
    labels = np.asarray(labels, dtype=np.int64)
    border = np.asarray(border, dtype=bool)
    C = n_classes(labels[border]) if C is None else C
    Y = np.zeros((len(labels), C))
    Y[np.flatnonzero(border), labels[border]] = 1.0
    return Y


def symmetric_transition(g: Graph) -> np.ndarray:
    d = g.degrees
    s = 1.0 / np.sqrt(d)
    return s[:, None] * g.adjacency * s[None, :]


def propagate_closed(P: np.ndarray, Y: np.ndarray, alpha: float) -> np.ndarray:
    """F = (1 - alpha) (I - alpha P)^-1 Y."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    n = P.shape[0]
    return (1.0 - alpha) * np.linalg.solve(np.eye(n) - alpha * P, Y)


def propagate_iterative(P: np.ndarray, Y: np.ndarray, alpha: float, t: int) -> np.ndarray:
    """F(t) from F(1) = Y and F(s+1) = alpha P F(s) + (1 - alpha) Y."""
    if t < 1:
        raise ValueError("t must be >= 1")
    F = np.array(Y, dtype=np.float64)
    for _ in range(t - 1):
        F = alpha * (P @ F) + (1.0 - alpha) * Y
    return F


def argmax_labels(F: np.ndarray) -> np.ndarray:
    """Row argmax; ties go to the lowest class index."""
    return np.argmax(F, axis=1)


def propagation_residual(P: np.ndarray, Y: np.ndarray, F: np.ndarray, alpha: float) -> np.ndarray:
    """F - alpha P F - (1 - alpha) Y, zero at the optimum."""
    return F - alpha * (P @ F) - (1.0 - alpha) * Y


def absorbing_probabilities(g: Graph, absorbing) -> np.ndarray:
    """B[i, a]: probability a walk from transient node i is absorbed at the a-th absorbing node.

    Rows follow the transient nodes in ascending order, columns follow ``absorbing``.
    """
    absorbing = np.asarray(list(absorbing), dtype=np.int64)
    if len(absorbing) == 0:
        raise ValueError("absorbing set is empty")
    _, P = normalized_operators(g)
    is_abs = np.zeros(g.n, dtype=bool)
    is_abs[absorbing] = True
    transient = np.flatnonzero(~is_abs)
    Q = P[np.ix_(transient, transient)]
    R = P[np.ix_(transient, absorbing)]
    M = np.eye(len(transient)) - Q
    if len(transient) and np.linalg.matrix_rank(M) < len(transient):
        raise GraphError("some transient nodes cannot reach the absorbing set")
    return np.linalg.solve(M, R) if len(transient) else np.zeros((0, len(absorbing)))


def absorbing_monte_carlo(g: Graph, absorbing, walks: int = 100_000, seed: int = 0,
                          max_steps: int = 10_000) -> np.ndarray:
    """Empirical absorption frequencies; all walks of a start node advance together."""
    absorbing = np.asarray(list(absorbing), dtype=np.int64)
    _, P = normalized_operators(g)
    cum = np.cumsum(P, axis=1)
    col = {int(a): c for c, a in enumerate(absorbing)}
    is_abs = np.zeros(g.n, dtype=bool)
    is_abs[absorbing] = True
    transient = np.flatnonzero(~is_abs)
    rng = np.random.default_rng(seed)
    out = np.zeros((len(transient), len(absorbing)))
    for r, start in enumerate(transient):
        pos = np.full(walks, start)
        alive = np.ones(walks, dtype=bool)
        for _ in range(max_steps):
            idx = np.flatnonzero(alive)
            if not len(idx):
                break
            u = rng.random(len(idx))
            nxt = (cum[pos[idx]] < u[:, None]).sum(axis=1)
            pos[idx] = np.minimum(nxt, g.n - 1)
            alive[idx] = ~is_abs[pos[idx]]
        for a, c in col.items():
            out[r, c] = np.mean(pos == a)
    return out


# -- trained baselines -----------------------------------------------------------

def gcn_baseline(g: Graph, X, labels, split: SplitMasks, config=None, C: int | None = None):
    """Two-layer GCN on D~^-1/2 (A+I) D~^-1/2. Returns (test accuracy, FitResult)."""
    from .model import ModelConfig

    cfg = config or ModelConfig()
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _validate(g, X, labels, split)
    C = n_classes(labels) if C is None else C
    A = normalized_adjacency(g)
    rng = np.random.default_rng(cfg.seed)
    h = cfg.hidden_channels
    params = {"W1": glorot(rng, X.shape[1], h), "b1": np.zeros((1, h)),
              "W2": glorot(rng, h, C), "b2": np.zeros((1, C))}

    def build(tape, P, drop_rng):
        drop = cfg.dropout if drop_rng is not None else 0.0
        Z = tape.relu(tape.add(tape.matmul(A, tape.matmul(tape.dropout(X, drop, drop_rng), P["W1"])), P["b1"]))
        return tape.add(tape.matmul(A, tape.matmul(tape.dropout(Z, drop, drop_rng), P["W2"])), P["b2"])

    return _fit_simple(build, params, labels, split, cfg, ("W1", "W2"))


def mlp_baseline(g: Graph, X, labels, split: SplitMasks, config=None, C: int | None = None):
    """Feature-only MLP with the same depth as the jump-0 path of the diffusion-jump model."""
    from .model import ModelConfig

    cfg = config or ModelConfig()
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not split.train.any():
        raise TrainingError("empty border set")
    C = n_classes(labels) if C is None else C
    rng = np.random.default_rng(cfg.seed)
    h = cfg.hidden_channels
    params = {"W0": glorot(rng, X.shape[1], h), "W1": glorot(rng, h, h), "b1": np.zeros((1, h)),
              "W2": glorot(rng, h, C), "b2": np.zeros((1, C))}

    def build(tape, P, drop_rng):
        drop = cfg.dropout if drop_rng is not None else 0.0
        H = tape.relu(tape.matmul(tape.dropout(X, drop, drop_rng), P["W0"]))
        Z = tape.relu(tape.add(tape.matmul(H, P["W1"]), P["b1"]))
        return tape.add(tape.matmul(tape.dropout(Z, drop, drop_rng), P["W2"]), P["b2"])

    return _fit_simple(build, params, labels, split, cfg, ("W0", "W1", "W2"))


def _fit_simple(build, params, labels, split, cfg, decayed):
    def step(P_np, drop_rng):
        tape = Tape()
        P = {k: tape.param(v, k) for k, v in P_np.items()}
        logits = build(tape, P, drop_rng)
        ce = tape.cross_entropy(logits, labels, split.train)
        loss = ce
        if cfg.weight_decay:
            for k in decayed:
                loss = tape.add(loss, tape.scale(tape.frob2(P[k]), 0.5 * cfg.weight_decay))
        return loss, logits, {"ce": float(ce.value)}, tape

    def predict(P_np):
        tape = Tape()
        return build(tape, {k: tape.const(v) for k, v in P_np.items()}, None).value

    res = fit(step, predict, params, labels, split, cfg.lr, cfg.epochs, cfg.patience, cfg.seed)
    logits = predict(res.params)
    return accuracy(logits, labels, split.test), res
