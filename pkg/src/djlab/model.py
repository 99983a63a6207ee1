"""Diffusion-jump network: a pump feeding rank-based jump filters, one shallow
GNN per jump plus a plain-adjacency branch, a softmax-weighted concatenation
and an MLP head, all trained jointly on one tape.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .autograd import Tape, Var, finite_diff_check
from .graph import Graph, GraphError, SplitMasks, laplacian, n_classes
from .jumps import MODES, masks_from_distances
from .optim import Adam
from .pump import (PumpConfig, distance_matrix, init_pump, ortho_tape, pump_forward, pump_forward_tape,
                   pump_input, ratio_tape, train_pump)
from .spectral import require_connected

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    k_jumps: int = 4
    hidden_channels: int = 32
    dropout: float = 0.2
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 700
    patience: int = 100
    ortho_weight: float = 1.0
    dirichlet_weight: float = 1.0
    pump_width: int = 3
    seed: int = 0
    homophilic_branch: bool = True
    decoupled: bool = False
    jump_mode: str = "rank"
    # not part of the config-file grammar
    activation: str = "identity"
    pump_input: str = "adjacency"
    refresh_period: int = 1
    pump_steps: int = 1000
    hb_normalized: bool = False

    def __post_init__(self):
        if self.k_jumps < 0:
            raise ValueError("k_jumps must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.jump_mode not in MODES:
            raise ValueError(f"jump_mode must be one of {MODES}")
        if self.pump_input not in ("adjacency", "identity"):
            raise ValueError("pump_input must be 'adjacency' or 'identity'")
        if self.refresh_period < 1:
            raise ValueError("refresh_period must be >= 1")

    @property
    def n_branches(self) -> int:
        return self.k_jumps + 1 + int(self.homophilic_branch)


FILE_KEYS = ("hidden_channels", "dropout", "lr", "weight_decay", "k_jumps", "epochs", "patience",
             "ortho_weight", "dirichlet_weight", "pump_width", "seed", "homophilic_branch", "decoupled",
             "jump_mode")


@dataclass
class ModelState:
    params: dict[str, np.ndarray]
    config: ModelConfig
    n_classes: int
    fixed_distances: np.ndarray | None = None
    optimizer: dict | None = None

    @property
    def alphas(self) -> np.ndarray:
        return softmax(self.params["att"].ravel())

    def save(self, path) -> None:
        arrays = {f"param__{k}": v for k, v in self.params.items()}
        if self.fixed_distances is not None:
            arrays["fixed_distances"] = self.fixed_distances
        cfg = np.array(repr(asdict(self.config)))
        np.savez(path, config=cfg, n_classes=self.n_classes, **arrays)

    @classmethod
    def load(cls, path) -> "ModelState":
        import ast

        with np.load(path, allow_pickle=False) as z:
            cfg = ModelConfig(**ast.literal_eval(str(z["config"])))
            params = {k[len("param__"):]: z[k].copy() for k in z.files if k.startswith("param__")}
            fixed = z["fixed_distances"].copy() if "fixed_distances" in z.files else None
            return cls(params, cfg, int(z["n_classes"]), fixed)


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


@dataclass
class Context:
    """Everything constant during training."""

    g: Graph
    X: np.ndarray
    labels: np.ndarray
    n_classes: int
    config: ModelConfig
    pump_matrix: np.ndarray = field(init=False)
    hb_matrix: np.ndarray = field(init=False)
    L: np.ndarray = field(init=False)
    degrees: np.ndarray = field(init=False)
    fixed_distances: np.ndarray | None = None

    def __post_init__(self):
        self.pump_matrix = pump_input(self.g, self.config.pump_input == "adjacency")
        self.hb_matrix = normalized_adjacency(self.g) if self.config.hb_normalized else self.g.adjacency
        self.L = laplacian(self.g)
        self.degrees = self.g.degrees


def normalized_adjacency(g: Graph) -> np.ndarray:
    """D~^-1/2 (A + I) D~^-1/2."""
    A = g.adjacency + np.eye(g.n)
    s = 1.0 / np.sqrt(A.sum(axis=1))
    return s[:, None] * A * s[None, :]


def init_params(ctx: Context, rng: np.random.Generator) -> dict[str, np.ndarray]:
    cfg = ctx.config
    F = ctx.X.shape[1]
    h = cfg.hidden_channels
    params = {}
    if not cfg.decoupled:
        params["pump_W"] = init_pump(ctx.g, cfg.pump_width, rng, cfg.pump_input == "adjacency").W
    for k in range(cfg.k_jumps + 1):
        params[f"W_{k}"] = glorot(rng, F, h)
    if cfg.homophilic_branch:
        params["W_hb"] = glorot(rng, F, h)
    params["att"] = np.zeros((1, cfg.n_branches))
    params["cls_W1"] = glorot(rng, cfg.n_branches * h, h)
    params["cls_b1"] = np.zeros((1, h))
    params["cls_W2"] = glorot(rng, h, ctx.n_classes)
    params["cls_b2"] = np.zeros((1, ctx.n_classes))
    return params


def is_decayed(name: str) -> bool:
    return name == "pump_W" or name.startswith("W_") or name in ("cls_W1", "cls_W2")


def current_distances(params: dict[str, np.ndarray], ctx: Context) -> np.ndarray:
    if ctx.fixed_distances is not None:
        return ctx.fixed_distances
    from .pump import PumpParams

    U = pump_forward(ctx.pump_matrix, PumpParams(params["pump_W"]), ctx.config.activation)
    return distance_matrix(U)


@dataclass
class Forward:
    logits: Var
    ce: Var
    loss: Var
    ratio: Var | None
    ortho: Var | None
    alpha: np.ndarray


def branch_forward(tape: Tape, J, X, W, dropout: float = 0.0, rng=None) -> Var:
    """relu(J (X W)) with dropout on the input features when ``rng`` is given."""
    Xd = tape.dropout(X, dropout, rng)
    return tape.relu(tape.matmul(J, tape.matmul(Xd, W)))


def homophilic_forward(tape: Tape, A, X, W, dropout: float = 0.0, rng=None) -> Var:
    return branch_forward(tape, A, X, W, dropout, rng)


def combine(tape: Tape, branches: list[Var], logits: Var) -> tuple[Var, Var]:
    """Concatenate softmax(logits)-weighted branch embeddings; returns (H, alpha)."""
    widths = {b.shape[1] for b in branches}
    if len(widths) != 1:
        raise ValueError(f"branch widths differ: {sorted(widths)}")
    if logits.shape[1] != len(branches):
        raise ValueError("one attention logit per branch required")
    alpha = tape.softmax(logits)
    weighted = [tape.mul(tape.column(alpha, b), H) for b, H in enumerate(branches)]
    return tape.concat(weighted, axis=1), alpha


def forward(tape: Tape, P: dict[str, Var], ctx: Context, masks, train_mask, rng=None) -> Forward:
    cfg = ctx.config
    drop = cfg.dropout if rng is not None else 0.0
    ratio = ortho = None
    if ctx.fixed_distances is None:
        U = pump_forward_tape(tape, ctx.pump_matrix, P["pump_W"], None, cfg.activation)
        ratio = ratio_tape(tape, U, ctx.L, ctx.degrees)
        ortho = ortho_tape(tape, U)
        D = tape.pairwise_dist(U)
    else:
        D = tape.const(ctx.fixed_distances)
    coeff = tape.exp(tape.scale(D, -1.0))
    branches = []
    for k in range(cfg.k_jumps + 1):
        J = tape.masked(coeff, masks[k])
        branches.append(branch_forward(tape, J, ctx.X, P[f"W_{k}"], drop, rng))
    if cfg.homophilic_branch:
        branches.append(homophilic_forward(tape, ctx.hb_matrix, ctx.X, P["W_hb"], drop, rng))
    H, alpha = combine(tape, branches, P["att"])
    Z = tape.relu(tape.add(tape.matmul(H, P["cls_W1"]), P["cls_b1"]))
    Z = tape.dropout(Z, drop, rng)
    logits = tape.add(tape.matmul(Z, P["cls_W2"]), P["cls_b2"])
    ce = tape.cross_entropy(logits, ctx.labels, train_mask)
    loss = ce
    if ratio is not None:
        if cfg.dirichlet_weight:
            loss = tape.add(loss, tape.scale(ratio, cfg.dirichlet_weight))
        if cfg.ortho_weight:
            loss = tape.add(loss, tape.scale(ortho, cfg.ortho_weight))
    loss = _add_weight_decay(tape, loss, P, cfg.weight_decay)
    return Forward(logits, ce, loss, ratio, ortho, alpha.value.ravel().copy())


def _add_weight_decay(tape, loss, P, wd):
    if not wd:
        return loss
    for name, v in P.items():
        if is_decayed(name):
            loss = tape.add(loss, tape.scale(tape.frob2(v), 0.5 * wd))
    return loss


def total_loss(params: dict[str, np.ndarray], ctx: Context, train_mask, masks=None) -> float:
    """Scalar training objective with dropout off; supports from the current distances unless given."""
    if not np.any(train_mask):
        raise TrainingError("empty border set")
    if masks is None:
        masks = masks_from_distances(current_distances(params, ctx), ctx.config.k_jumps, ctx.config.jump_mode)
    tape = Tape()
    P = {k: tape.param(v, k) for k, v in params.items()}
    return float(forward(tape, P, ctx, masks, train_mask).loss.value)


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float(np.mean(np.argmax(logits[mask], axis=1) == labels[mask]))


# -- generic fitting loop shared with the baselines ---------------------------

@dataclass
class FitResult:
    params: dict[str, np.ndarray]
    history: list[dict]
    best_epoch: int
    val_acc: float
    test_acc: float
    optimizer: dict


StepFn = Callable[[dict, np.random.Generator | None], tuple[Var, Var, dict, Tape]]


def fit(step: StepFn, predict: Callable[[dict], np.ndarray], params: dict[str, np.ndarray], labels: np.ndarray,
        split: SplitMasks, lr: float, epochs: int, patience: int, seed: int) -> FitResult:
    """Adam with early stopping on validation accuracy; keeps the best-validation parameters.

    ``step(params, rng)`` builds a training tape and returns (loss, logits, extras, tape);
    ``predict(params)`` returns evaluation-mode logits.
    """
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng([seed, 1])
    best = (-1.0, -1, None, float("nan"))
    history = []
    for epoch in range(epochs):
        loss, _, extras, tape = step(params, rng)
        value = float(loss.value)
        if not np.isfinite(value):
            raise TrainingError(f"loss diverged at epoch {epoch}")
        opt.step(tape.backward(loss))
        logits = predict(params)
        val_acc = accuracy(logits, labels, split.val)
        test_acc = accuracy(logits, labels, split.test)
        rec = {"epoch": epoch, "loss": value, **extras, "val_acc": val_acc, "test_acc": test_acc}
        history.append(rec)
        if best[2] is None or val_acc > best[0]:
            best = (val_acc, epoch, {k: v.copy() for k, v in params.items()}, test_acc)
        elif epoch - best[1] >= patience:
            break
    return FitResult(best[2], history, best[1], best[0], best[3], opt.state_dict())


# -- the diffusion-jump model --------------------------------------------------

def _validate(g: Graph, X: np.ndarray, labels: np.ndarray, split: SplitMasks):
    require_connected(g)
    if X.shape[0] != g.n or len(labels) != g.n or len(split.train) != g.n:
        raise GraphError("features, labels and masks must have one row per node")
    if not split.train.any():
        raise TrainingError("empty border set")


def train(g: Graph, X: np.ndarray, labels: np.ndarray, split: SplitMasks, config: ModelConfig | None = None,
          C: int | None = None) -> tuple[ModelState, list[dict]]:
    """Train the diffusion-jump model; returns the best-validation state and per-epoch metrics."""
    cfg = config or ModelConfig()
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _validate(g, X, labels, split)
    C = n_classes(labels) if C is None else C
    fixed = None
    if cfg.decoupled:
        pcfg = PumpConfig(p=cfg.pump_width, lr=cfg.lr, steps=cfg.pump_steps, ortho_weight=cfg.ortho_weight,
                          seed=cfg.seed, act=cfg.activation, use_adjacency=cfg.pump_input == "adjacency")
        _, fixed, _ = train_pump(g, pcfg)
    ctx = Context(g, X, labels, C, cfg, fixed_distances=fixed)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(ctx, rng)
    cache = {"masks": None, "epoch": 0}

    def step(P_np, drop_rng):
        if cache["masks"] is None or (ctx.fixed_distances is None and cache["epoch"] % cfg.refresh_period == 0):
            cache["masks"] = masks_from_distances(current_distances(P_np, ctx), cfg.k_jumps, cfg.jump_mode)
        cache["epoch"] += 1
        tape = Tape()
        P = {k: tape.param(v, k) for k, v in P_np.items()}
        out = forward(tape, P, ctx, cache["masks"], split.train, drop_rng)
        extras = {"dirichlet": float(out.ratio.value) if out.ratio is not None else None,
                  "ce": float(out.ce.value), "alphas": out.alpha.tolist()}
        return out.loss, out.logits, extras, tape

    def predict(P_np):
        return predict_logits(P_np, ctx)

    res = fit(step, predict, params, labels, split, cfg.lr, cfg.epochs, cfg.patience, cfg.seed)
    state = ModelState(res.params, cfg, C, fixed, res.optimizer)
    return state, res.history


def predict_logits(params: dict[str, np.ndarray], ctx: Context) -> np.ndarray:
    masks = masks_from_distances(current_distances(params, ctx), ctx.config.k_jumps, ctx.config.jump_mode)
    tape = Tape()
    P = {k: tape.const(v) for k, v in params.items()}
    # constants only: labels/mask are irrelevant for the logits
    return forward(tape, P, ctx, masks, None).logits.value


def evaluate(state: ModelState, g: Graph, X: np.ndarray, labels: np.ndarray, split: SplitMasks) -> dict[str, float]:
    """Accuracy of the argmax prediction on each split."""
    labels = np.asarray(labels, dtype=np.int64)
    ctx = Context(g, np.asarray(X, dtype=np.float64), labels, state.n_classes, state.config,
                  fixed_distances=state.fixed_distances)
    logits = predict_logits(state.params, ctx)
    return {name: accuracy(logits, labels, getattr(split, name)) for name in ("train", "val", "test")}


def summarize(accs) -> tuple[float, float]:
    """Mean and population standard deviation."""
    a = np.asarray(accs, dtype=np.float64)
    return float(a.mean()), float(a.std())


def format_mean_std(accs) -> str:
    m, s = summarize(np.asarray(accs) * 100)
    return f"{m:.2f}±{s:.2f}"


def run_splits(g, X, labels, splits: list[SplitMasks], config: ModelConfig) -> dict:
    """Train once per split and report test accuracies with mean and population std."""
    results = []
    for i, split in enumerate(splits):
        state, hist = train(g, X, labels, split, config)
        acc = evaluate(state, g, X, labels, split)
        results.append({"split": i, **acc, "best_epoch": int(np.argmax([h["val_acc"] for h in hist]))})
    tests = [r["test"] for r in results]
    mean, std = summarize(tests)
    return {"splits": results, "mean": mean, "std": std, "formatted": format_mean_std(tests)}


# -- gradient verification -----------------------------------------------------

def toy_instance(n: int = 12, F: int = 4, C: int = 2, seed: int = 0, p_edge: float = 0.35):
    """Small connected random graph with random features and labels covering every class."""
    rng = np.random.default_rng(seed)
    while True:
        A = np.triu(rng.random((n, n)) < p_edge, 1).astype(float)
        # a spanning path keeps it connected
        A[np.arange(n - 1), np.arange(1, n)] = 1.0
        g = Graph.from_adjacency(A + A.T)
        labels = rng.integers(0, C, n)
        if len(np.unique(labels)) == C:
            break
    X = rng.standard_normal((n, F))
    train_mask = np.zeros(n, dtype=bool)
    train_mask[: n // 2] = True
    return g, X, labels, train_mask


def model_gradcheck(n: int = 12, K: int = 2, F: int = 4, C: int = 2, seed: int = 0, h: float = 1e-5,
                    **overrides) -> dict[str, float]:
    """Finite-difference check of the full loss with dropout off and supports frozen."""
    g, X, labels, train_mask = toy_instance(n, F, C, seed)
    cfg = ModelConfig(k_jumps=K, hidden_channels=5, dropout=0.0, pump_width=3, seed=seed, **overrides)
    ctx = Context(g, X, labels, C, cfg)
    params = init_params(ctx, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    # move attention and biases off their zero init so their gradients are generic
    for k in params:
        if k == "att" or k.startswith("cls_b"):
            params[k] = 0.3 * rng.standard_normal(params[k].shape)
    masks = masks_from_distances(current_distances(params, ctx), K, cfg.jump_mode)
    tape = Tape()
    P = {k: tape.param(v, k) for k, v in params.items()}
    grads = tape.backward(forward(tape, P, ctx, masks, train_mask).loss)

    def f(pr):
        return total_loss(pr, ctx, train_mask, masks)

    return finite_diff_check(f, params, grads, h)
