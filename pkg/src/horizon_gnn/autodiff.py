"""Dense primitives and a minimal reverse-mode tape.

Values are float64 numpy arrays. Node features are (N, D) or node-major
batches (N, B, D); weights are always 2-D and shared across the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import MeshGraph, spmm as _spmm


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    if a.ndim > 2:
        # one large GEMM instead of a stack of small ones
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + b.shape[1:])
    return a @ b


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


@dataclass(eq=False)
class Node:
    value: np.ndarray
    requires_grad: bool = False
    name: str | None = None

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Records primitive operations in execution order for one backward pass.

    Operations whose inputs are all constants are evaluated eagerly and not
    recorded. A tape is not thread-safe.
    """

    def __init__(self):
        self._records: list[tuple[Node, tuple[Node, ...], object]] = []
        self.params: list[Node] = []

    def __len__(self):
        return len(self._records)

    # -- leaves ------------------------------------------------------------

    def param(self, value, name=None) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), True, name)
        self.params.append(node)
        return node

    def constant(self, value) -> Node:
        return Node(np.asarray(value, dtype=np.float64), False)

    def _emit(self, value, inputs, backward) -> Node:
        node = Node(value, any(i.requires_grad for i in inputs))
        if node.requires_grad:
            self._records.append((node, inputs, backward))
        return node

    # -- primitives --------------------------------------------------------

    def matmul(self, x: Node, w: Node) -> Node:
        xv, wv = x.value, w.value
        if wv.ndim != 2:
            raise ValueError("right operand of matmul must be 2-D")

        def back(g):
            gx = matmul(g, wv.T) if x.requires_grad else None
            gw = None
            if w.requires_grad:
                gw = xv.reshape(-1, xv.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return gx, gw

        return self._emit(matmul(xv, wv), (x, w), back)

    def spmm(self, graph: MeshGraph, x: Node) -> Node:
        # the normalized adjacency is symmetric, so its transpose is itself
        return self._emit(_spmm(graph, x.value), (x,), lambda g: (_spmm(graph, g),))

    def add_bias(self, x: Node, b: Node) -> Node:
        xv, bv = x.value, b.value
        if bv.shape[-1] != xv.shape[-1]:
            raise ValueError("bias width does not match features")

        def back(g):
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0).reshape(bv.shape)
            return g, gb

        return self._emit(xv + bv.reshape(-1), (x, b), back)

    def relu(self, x: Node) -> Node:
        xv = x.value
        # relu'(0) = 0
        return self._emit(np.maximum(xv, 0.0), (x,), lambda g: (g * (xv > 0.0),))

    def tanh(self, x: Node) -> Node:
        y = np.tanh(x.value)
        return self._emit(y, (x,), lambda g: (g * (1.0 - y * y),))

    def identity(self, x: Node) -> Node:
        return x

    def concat(self, nodes, axis=-1) -> Node:
        nodes = tuple(nodes)
        widths = [n.value.shape[axis] for n in nodes]
        splits = np.cumsum(widths)[:-1]

        def back(g):
            return tuple(np.split(g, splits, axis=axis))

        return self._emit(np.concatenate([n.value for n in nodes], axis=axis), nodes, back)

    def slice(self, x: Node, start: int, stop: int) -> Node:
        """Columns ``start:stop`` of the last axis."""
        shape = x.value.shape

        def back(g):
            gx = np.zeros(shape)
            gx[..., start:stop] = g
            return (gx,)

        return self._emit(x.value[..., start:stop].copy(), (x,), back)

    def scale(self, x: Node, c: float) -> Node:
        c = float(c)
        return self._emit(x.value * c, (x,), lambda g: (g * c,))

    def add(self, x: Node, y: Node) -> Node:
        return self._emit(x.value + y.value, (x, y), lambda g: (g, g))

    def subtract(self, x: Node, y: Node) -> Node:
        return self._emit(x.value - y.value, (x, y), lambda g: (g, -g))

    def square_mean(self, x: Node) -> Node:
        xv = x.value
        k = 2.0 / xv.size
        return self._emit(np.array(np.mean(xv * xv)), (x,), lambda g: (g * k * xv,))

    # -- reverse pass ------------------------------------------------------

    def backward(self, loss: Node) -> dict[Node, np.ndarray]:
        return backward(self, loss)


def backward(tape: Tape, loss: Node) -> dict[Node, np.ndarray]:
    """Gradients of the scalar ``loss`` for every parameter on ``tape``.

    Parameters the loss does not depend on receive zero arrays.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for out, inputs, back in reversed(tape._records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for node, gi in zip(inputs, back(g)):
            if gi is None or not node.requires_grad:
                continue
            key = id(node)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    return {p: grads.get(id(p), np.zeros_like(p.value)).reshape(p.value.shape)
            for p in tape.params}


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    worst_param: str | None
    worst_index: tuple | None
    n_checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def finite_diff_check(f, params: dict, epsilon=1e-5, tolerance=None, floor=1e-8):
    """Compare tape gradients of ``f`` against central differences.

    ``f(tape, nodes)`` builds a scalar loss node from ``nodes`` (a dict of
    parameter nodes keyed like ``params``). Relative error per entry is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    tape = Tape()
    nodes = {k: tape.param(v, k) for k, v in base.items()}
    grads = backward(tape, f(tape, nodes))

    def value_at(k, idx, delta):
        vals = {key: val for key, val in base.items()}
        pert = base[k].copy()
        pert[idx] += delta
        vals[k] = pert
        t = Tape()
        return float(f(t, {key: t.constant(val) for key, val in vals.items()}).value)

    max_rel, max_abs, where = 0.0, 0.0, (None, None)
    count = 0
    for k, node in nodes.items():
        analytic = grads[node]
        for idx in np.ndindex(base[k].shape):
            numeric = (value_at(k, idx, epsilon) - value_at(k, idx, -epsilon)) / (2 * epsilon)
            a = float(analytic[idx])
            err = abs(a - numeric)
            rel = err / max(abs(a), abs(numeric), floor)
            count += 1
            max_abs = max(max_abs, err)
            if where[0] is None or rel > max_rel:
                max_rel, where = rel, (k, idx)
    report = GradCheckReport(max_rel, max_abs, where[0], where[1], count)
    if tolerance is not None and not report.passed(tolerance):
        raise AssertionError(
            f"gradient check failed: rel={report.max_rel_error:.3g} at {report.worst_param}{report.worst_index}"
        )
    return report
