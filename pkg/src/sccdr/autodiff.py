"""Minimal dense reverse-mode autodiff on float64 matrices.

Every value is a 2-D numpy array (vectors are column vectors, shape (n, 1)).
Operations are evaluated eagerly and recorded on a Tape; `Tape.gradient`
runs reverse accumulation. `stop_gradient` is the identity on values but
blocks all gradient flow to its input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COSINE_NORM_EPS = 1e-12


def _scatter_add(acc, idx, values):
    """acc[idx] += values with duplicate indices, faster than np.add.at."""
    if len(idx) == 0:
        return acc
    if np.all(idx[1:] >= idx[:-1]):
        order = None
        sorted_idx, sorted_vals = idx, values
    else:
        order = np.argsort(idx, kind="stable")
        sorted_idx, sorted_vals = idx[order], values[order]
    uniq, starts = np.unique(sorted_idx, return_index=True)
    acc[uniq] += np.add.reduceat(sorted_vals, starts, axis=0)
    return acc


class NonFiniteError(ArithmeticError):
    """A published operation produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Node:
    """One recorded value on a tape."""

    __slots__ = ("idx", "value", "parents", "vjps", "barrier")

    def __init__(self, idx, value, parents=(), vjps=(), barrier=False):
        self.idx = idx
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.barrier = barrier

    @property
    def shape(self):
        return self.value.shape


def _as_matrix(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {a.shape}")
    return a


class Tape:
    """Ordered record of primitive applications over dense matrices."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _emit(self, value, parents=(), vjps=(), barrier=False):
        if not np.isfinite(value).all():
            raise NonFiniteError("operation produced a non-finite value")
        node = Node(len(self.nodes), value, tuple(parents), tuple(vjps), barrier)
        self.nodes.append(node)
        return node

    # -- leaves ----------------------------------------------------------

    def leaf(self, value):
        return self._emit(_as_matrix(value).copy())

    # -- primitives ------------------------------------------------------

    def matmul(self, a, b):
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul {a.shape} x {b.shape}")
        out = a.value @ b.value
        return self._emit(
            out,
            (a, b),
            (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
        )

    def add(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"add {a.shape} + {b.shape}")
        return self._emit(a.value + b.value, (a, b), (lambda g: g, lambda g: g))

    def subtract(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"subtract {a.shape} - {b.shape}")
        return self._emit(a.value - b.value, (a, b), (lambda g: g, lambda g: -g))

    def scalar_multiply(self, a, c):
        c = float(c)
        return self._emit(a.value * c, (a,), (lambda g: g * c,))

    def concat_cols(self, parts):
        parts = list(parts)
        rows = parts[0].shape[0]
        if any(p.shape[0] != rows for p in parts):
            raise ShapeError("concat_cols: mismatched row counts")
        widths = [p.shape[1] for p in parts]
        offsets = np.cumsum([0] + widths)
        out = np.concatenate([p.value for p in parts], axis=1)

        def make_vjp(k):
            return lambda g: g[:, offsets[k]:offsets[k + 1]]

        return self._emit(out, parts, tuple(make_vjp(k) for k in range(len(parts))))

    def mean_rows(self, a):
        n = a.shape[0]
        out = a.value.mean(axis=0, keepdims=True)
        return self._emit(out, (a,), (lambda g: np.repeat(g, n, axis=0) / n,))

    def relu(self, a):
        mask = a.value > 0.0
        return self._emit(a.value * mask, (a,), (lambda g: g * mask,))

    def sigmoid(self, a):
        # stable logistic; saturates to exactly 0/1 far in the tails
        x = a.value
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return self._emit(out, (a,), (lambda g: g * out * (1.0 - out),))

    def log(self, a):
        if np.any(a.value <= 0.0):
            raise NonFiniteError("log of a non-positive value")
        return self._emit(np.log(a.value), (a,), (lambda g: g / a.value,))

    def exp(self, a):
        out = np.exp(a.value)
        return self._emit(out, (a,), (lambda g: g * out,))

    def dot(self, a, b):
        """Row-wise dot product: (n, d) x (n, d) -> (n, 1)."""
        if a.shape != b.shape:
            raise ShapeError(f"dot {a.shape} . {b.shape}")
        out = np.sum(a.value * b.value, axis=1, keepdims=True)
        return self._emit(out, (a, b), (lambda g: g * b.value, lambda g: g * a.value))

    def cosine_similarity(self, a, b):
        """Row-wise cosine: (n, d) x (n, d) -> (n, 1), norms guarded by eps."""
        if a.shape != b.shape:
            raise ShapeError(f"cosine {a.shape} . {b.shape}")
        eps = COSINE_NORM_EPS
        na = np.linalg.norm(a.value, axis=1, keepdims=True) + eps
        nb = np.linalg.norm(b.value, axis=1, keepdims=True) + eps
        s = np.sum(a.value * b.value, axis=1, keepdims=True)
        out = s / (na * nb)

        # derivative of s / ((|a|+eps)(|b|+eps)) wrt a:
        #   b/((|a|+eps)(|b|+eps)) - s * (a/|a|) / ((|a|+eps)^2 (|b|+eps))
        def grad_a(g):
            norm_a = np.maximum(na - eps, eps)
            return g * (b.value / (na * nb) - s * (a.value / norm_a) / (na * na * nb))

        def grad_b(g):
            norm_b = np.maximum(nb - eps, eps)
            return g * (a.value / (na * nb) - s * (b.value / norm_b) / (nb * nb * na))

        return self._emit(out, (a, b), (grad_a, grad_b))

    def logsumexp(self, a):
        """Row-wise log-sum-exp over columns: (n, m) -> (n, 1)."""
        m = np.max(a.value, axis=1, keepdims=True)
        z = np.exp(a.value - m)
        s = np.sum(z, axis=1, keepdims=True)
        out = m + np.log(s)
        soft = z / s
        return self._emit(out, (a,), (lambda g: g * soft,))

    def lookup(self, a, rows):
        """Row gather: works for embedding tables and any recorded matrix."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= a.shape[0]):
            raise ShapeError("lookup index out of range")
        out = a.value[rows]

        def vjp(g):
            return _scatter_add(np.zeros_like(a.value), rows, g)

        return self._emit(out, (a,), (vjp,))

    def segment_mean(self, a, segment_ids, num_segments):
        """Per-segment mean over rows; an empty segment yields a zero row."""
        segment_ids = np.asarray(segment_ids, dtype=np.int64)
        if segment_ids.shape[0] != a.shape[0]:
            raise ShapeError("segment_mean: one segment id per row required")
        counts = np.bincount(segment_ids, minlength=num_segments).astype(np.float64)
        sums = _scatter_add(np.zeros((num_segments, a.shape[1])),
                            segment_ids, a.value)
        denom = np.maximum(counts, 1.0)[:, None]
        out = sums / denom

        def vjp(g):
            return g[segment_ids] / denom[segment_ids]

        return self._emit(out, (a,), (vjp,))

    def spmm(self, mat, a):
        """Constant sparse matrix times a node: (m, n) x (n, d) -> (m, d).

        `mat` is a scipy sparse matrix treated as a constant (no gradient);
        used for fused gather-and-aggregate steps.
        """
        if mat.shape[1] != a.shape[0]:
            raise ShapeError(f"spmm {mat.shape} x {a.shape}")
        mat_t = mat.T.tocsr()
        return self._emit(mat @ a.value, (a,), (lambda g: mat_t @ g,))

    def stop_gradient(self, a):
        return self._emit(a.value.copy(), (a,), (None,), barrier=True)

    # -- reverse pass ----------------------------------------------------

    def gradient(self, output, params):
        """Gradients of a scalar output with respect to the given leaves.

        Leaves not on any path to `output` get zero tensors; barrier nodes
        contribute zero gradient to their inputs.
        """
        if output.value.size != 1:
            raise ShapeError(f"gradient target must be scalar, got {output.shape}")
        grads: dict[int, np.ndarray] = {output.idx: np.ones_like(output.value)}
        for node in reversed(self.nodes[: output.idx + 1]):
            g = grads.get(node.idx)
            if g is None or node.barrier or not node.parents:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                pg = vjp(g)
                if parent.idx in grads:
                    grads[parent.idx] = grads[parent.idx] + pg
                else:
                    grads[parent.idx] = pg
        return [grads.get(p.idx, np.zeros_like(p.value)) for p in params]


# -- Adam ----------------------------------------------------------------


@dataclass
class AdamState:
    """Adam with classic L2-style weight decay folded into the gradient."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(state: AdamState, params: dict, grads: dict) -> None:
    """One Adam step, updating `params` in place.

    `grads` maps a subset of parameter names to gradient arrays; parameters
    without an entry are left untouched (their moments do not advance).
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if state.weight_decay:
            g = g + state.weight_decay * p
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
