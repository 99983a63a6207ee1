"""A small reverse-mode tape over a fixed set of dense float64 primitives.

The architecture being differentiated is static, so the tape only knows the
handful of operations it needs. Values are numpy arrays; every primitive
records a closure that pushes the output adjoint back to its inputs.

    tape = Tape()
    W = tape.param(np.random.randn(3, 2), "W")
    loss = tape.frob2(tape.matmul(X, W))
    grads = tape.backward(loss)
"""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist


class Var:
    __slots__ = ("value", "parents", "backward_fn", "name", "requires_grad", "index")

    def __init__(self, value, parents=(), backward_fn=None, name=None, requires_grad=False):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.requires_grad = requires_grad
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.name or ''}{self.value.shape})"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}

    # -- leaves -----------------------------------------------------------
    def param(self, value, name: str) -> Var:
        v = Var(np.asarray(value, dtype=np.float64), name=name, requires_grad=True)
        self._record(v)
        self.params[name] = v
        return v

    def const(self, value) -> Var:
        v = Var(np.asarray(value, dtype=np.float64))
        self._record(v)
        return v

    def _record(self, v: Var) -> Var:
        v.index = len(self.nodes)
        self.nodes.append(v)
        return v

    def _lift(self, x) -> Var:
        return x if isinstance(x, Var) else self.const(x)

    def _op(self, value, parents: Sequence[Var], backward_fn: Callable) -> Var:
        rg = any(p.requires_grad for p in parents)
        return self._record(Var(value, tuple(parents), backward_fn if rg else None, requires_grad=rg))

    # -- primitives -------------------------------------------------------
    def matmul(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)

        def bw(g):
            return (g @ b.value.T if a.requires_grad else None,
                    a.value.T @ g if b.requires_grad else None)

        return self._op(a.value @ b.value, (a, b), bw)

    def add(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        return self._op(a.value + b.value, (a, b),
                        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    def sub(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        return self._op(a.value - b.value, (a, b),
                        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))

    def mul(self, a, b) -> Var:
        """Elementwise product with numpy broadcasting."""
        a, b = self._lift(a), self._lift(b)
        return self._op(a.value * b.value, (a, b),
                        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))

    def div(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        out = a.value / b.value
        return self._op(out, (a, b),
                        lambda g: (_unbroadcast(g / b.value, a.shape),
                                   _unbroadcast(-g * out / b.value, b.shape)))

    def scale(self, a, c: float) -> Var:
        a = self._lift(a)
        return self._op(a.value * c, (a,), lambda g: (g * c,))

    def transpose(self, a) -> Var:
        a = self._lift(a)
        return self._op(a.value.T, (a,), lambda g: (g.T,))

    def exp(self, a) -> Var:
        a = self._lift(a)
        out = np.exp(a.value)
        return self._op(out, (a,), lambda g: (g * out,))

    def tanh(self, a) -> Var:
        a = self._lift(a)
        out = np.tanh(a.value)
        return self._op(out, (a,), lambda g: (g * (1.0 - out * out),))

    def relu(self, a) -> Var:
        """max(x, 0); the subgradient at exactly 0 is taken as 0."""
        a = self._lift(a)
        pos = a.value > 0
        return self._op(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))

    def masked(self, a, mask: np.ndarray) -> Var:
        """Keep entries where ``mask`` is nonzero, zero the rest (mask is not differentiated)."""
        a = self._lift(a)
        m = np.asarray(mask, dtype=np.float64)
        return self._op(a.value * m, (a,), lambda g: (g * m,))

    def softmax(self, a) -> Var:
        """Softmax along the last axis."""
        a = self._lift(a)
        z = a.value - a.value.max(axis=-1, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=-1, keepdims=True)
        return self._op(s, (a,), lambda g: (s * (g - np.sum(g * s, axis=-1, keepdims=True)),))

    def trace(self, a) -> Var:
        a = self._lift(a)
        n = a.shape[0]
        return self._op(np.array(np.trace(a.value)), (a,), lambda g: (g * np.eye(n, a.shape[1]),))

    def sum(self, a) -> Var:
        a = self._lift(a)
        return self._op(np.array(a.value.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))

    def frob2(self, a) -> Var:
        """Squared Frobenius norm."""
        a = self._lift(a)
        return self._op(np.array(np.sum(a.value * a.value)), (a,), lambda g: (2.0 * float(g) * a.value,))

    def concat(self, xs: Sequence, axis: int = 1) -> Var:
        xs = [self._lift(x) for x in xs]
        sizes = [x.shape[axis] for x in xs]
        cuts = np.cumsum(sizes)[:-1]

        def bw(g):
            return tuple(np.split(g, cuts, axis=axis))

        return self._op(np.concatenate([x.value for x in xs], axis=axis), xs, bw)

    def column(self, a, j: int) -> Var:
        """Column ``j`` kept as an (rows, 1) matrix."""
        a = self._lift(a)

        def bw(g):
            out = np.zeros(a.shape)
            out[:, j:j + 1] = g
            return (out,)

        return self._op(a.value[:, j:j + 1].copy(), (a,), bw)

    def dropout(self, a, p: float, rng: np.random.Generator | None) -> Var:
        """Inverted dropout with a mask drawn from ``rng``; identity when p == 0 or rng is None."""
        a = self._lift(a)
        if p <= 0 or rng is None:
            return a
        keep = (rng.random(a.shape) >= p) / (1.0 - p)
        return self._op(a.value * keep, (a,), lambda g: (g * keep,))

    def cross_entropy(self, logits, targets: np.ndarray, mask: np.ndarray | None = None) -> Var:
        """Mean softmax cross-entropy over the rows selected by ``mask``."""
        logits = self._lift(logits)
        targets = np.asarray(targets, dtype=np.int64)
        n = logits.shape[0]
        rows = np.arange(n) if mask is None else np.flatnonzero(mask)
        if len(rows) == 0:
            raise ValueError("cross-entropy over an empty row set")
        z = logits.value[rows]
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        t = targets[rows]
        loss = -np.mean(logp[np.arange(len(rows)), t])

        def bw(g):
            d = np.exp(logp)
            d[np.arange(len(rows)), t] -= 1.0
            out = np.zeros(logits.shape)
            out[rows] = d * (float(g) / len(rows))
            return (out,)

        return self._op(np.array(loss), (logits,), bw)

    def pairwise_dist(self, U, squared: bool = False) -> Var:
        """Euclidean distances between rows; the gradient at a zero distance is taken as 0."""
        U = self._lift(U)
        X = U.value
        if squared:
            D2 = cdist(X, X, "sqeuclidean")

            def bw2(g):
                G = g + g.T
                return (2.0 * (np.diag(G.sum(axis=1)) - G) @ X,)
            return self._op(D2, (U,), bw2)
        D = cdist(X, X)

        def bw(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                W = np.where(D > 0, g / D, 0.0)
            W = W + W.T
            return ((np.diag(W.sum(axis=1)) - W) @ X,)

        return self._op(D, (U,), bw)

    # -- reverse sweep ----------------------------------------------------
    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Adjoints of every parameter; parameters the loss does not reach get zeros."""
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        adj: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = adj.pop(node.index, None)
            if g is None or node.backward_fn is None:
                if g is not None:
                    adj[node.index] = g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.reshape(pg, parent.shape)
                if parent.index in adj:
                    adj[parent.index] = adj[parent.index] + pg
                else:
                    adj[parent.index] = pg
        return {name: adj.get(v.index, np.zeros_like(v.value)) for name, v in self.params.items()}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / den


def finite_diff_check(fn: Callable[[Mapping[str, np.ndarray]], float], params: Mapping[str, np.ndarray],
                      grads: Mapping[str, np.ndarray], h: float = 1e-5) -> dict[str, float]:
    """Per-block worst relative error between ``grads`` and central differences of ``fn``.

    ``fn`` maps a parameter dict to a scalar. Raises on a NaN evaluation.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    out = {}
    for name, arr in work.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = num.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = fn(work)
            flat[idx] = orig - h
            fm = fn(work)
            flat[idx] = orig
            if np.isnan(fp) or np.isnan(fm):
                raise FloatingPointError(f"NaN while perturbing {name}[{idx}]")
            nflat[idx] = (fp - fm) / (2 * h)
        err = relative_error(np.asarray(grads[name]).reshape(arr.shape), num)
        out[name] = float(err.max()) if err.size else 0.0
    return out
