"""Reverse-mode automatic differentiation on numpy arrays.

A small tape of ``Node`` objects covering exactly the matrix operations the
variational objective is built from: broadcasting arithmetic, reductions,
matmul, Cholesky factorisation, triangular solves and block assembly.
Values are float64 throughout. The vector-Jacobian product of every
primitive is checked against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class Node:
    """A value in the computation graph; leaves have no parents."""

    __slots__ = ("value", "parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return np.reshape(g, shape)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value + b.value,
        (
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value - b.value,
        (
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value * b.value,
        (
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(
        a.value / b.value,
        (
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value / b.value**2, b.value.shape)),
        ),
    )


def neg(a) -> Node:
    a = as_node(a)
    return Node(-a.value, ((a, lambda g: -g),))


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.value)
    return Node(out, ((a, lambda g: g * out),))


def log(a) -> Node:
    a = as_node(a)
    return Node(np.log(a.value), ((a, lambda g: g / a.value),))


def sqrt(a) -> Node:
    a = as_node(a)
    out = np.sqrt(a.value)
    return Node(out, ((a, lambda g: g * (0.5 / out)),))


def power(a, exponent: float) -> Node:
    a = as_node(a)
    if isinstance(exponent, Node):
        raise TypeError("only constant exponents are supported")
    out = a.value**exponent
    return Node(out, ((a, lambda g: g * exponent * a.value ** (exponent - 1)),))


def maximum(a, floor: float) -> Node:
    """Clamp from below by a constant; gradient is zero on the clamped set."""
    a = as_node(a)
    return Node(
        np.maximum(a.value, floor),
        ((a, lambda g: np.where(a.value > floor, g, 0.0)),),
    )


# ---------------------------------------------------------------------------
# shape and reduction primitives


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.value.shape
    return Node(np.reshape(a.value, shape), ((a, lambda g: np.reshape(g, old)),))


def transpose(a, axes=None) -> Node:
    a = as_node(a)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))
    return Node(
        np.transpose(a.value, axes),
        ((a, lambda g: np.transpose(g, inverse)),),
    )


def sum(a, axis=None, keepdims=False) -> Node:  # noqa: A001 - mirrors numpy
    a = as_node(a)
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape)
        g_exp = g
        if not keepdims:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            for ax in sorted(ax % len(shape) for ax in axes):
                g_exp = np.expand_dims(g_exp, ax)
        return np.broadcast_to(g_exp, shape)

    return Node(np.sum(a.value, axis=axis, keepdims=keepdims), ((a, vjp),))


def concat(nodes, axis=0) -> Node:
    nodes = [as_node(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    value = np.concatenate([n.value for n in nodes], axis=axis)
    return Node(value, tuple((n, make_vjp(i)) for i, n in enumerate(nodes)))


def take0(a, index: int) -> Node:
    """Select one slice along the leading axis."""
    a = as_node(a)
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        out[index] = g
        return out

    return Node(a.value[index].copy(), ((a, vjp),))


def diag_embed(a) -> Node:
    """Vector to diagonal matrix."""
    a = as_node(a)
    return Node(np.diag(a.value), ((a, lambda g: np.diagonal(g).copy()),))


def diagonal(a) -> Node:
    a = as_node(a)
    n, m = a.value.shape

    def vjp(g):
        out = np.zeros((n, m))
        np.fill_diagonal(out, g)
        return out

    return Node(np.diagonal(a.value).copy(), ((a, vjp),))


def trace(a) -> Node:
    a = as_node(a)
    n = a.value.shape[0]
    return Node(np.trace(a.value), ((a, lambda g: g * np.eye(n)),))


def strict_lower_embed(v, n: int) -> Node:
    """Pack a vector into the strictly lower triangle of an n x n matrix."""
    v = as_node(v)
    rows, cols = np.tril_indices(n, k=-1)
    if v.value.shape != (rows.size,):
        raise ValueError(f"expected {rows.size} entries for a strict lower {n}x{n} triangle")

    def vjp(g):
        return g[rows, cols]

    out = np.zeros((n, n))
    out[rows, cols] = v.value
    return Node(out, ((v, vjp),))


# ---------------------------------------------------------------------------
# matrix primitives


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul is restricted to 2-d operands")
    return Node(
        a.value @ b.value,
        (
            (a, lambda g: g @ b.value.T),
            (b, lambda g: a.value.T @ g),
        ),
    )


def block_diag(blocks) -> Node:
    """Rectangular block-diagonal assembly; zero-row blocks still advance columns."""
    blocks = [as_node(b) for b in blocks]
    shapes = [b.value.shape for b in blocks]
    row_off = np.concatenate([[0], np.cumsum([s[0] for s in shapes])])
    col_off = np.concatenate([[0], np.cumsum([s[1] for s in shapes])])
    value = np.zeros((row_off[-1], col_off[-1]))
    for i, blk in enumerate(blocks):
        value[row_off[i] : row_off[i + 1], col_off[i] : col_off[i + 1]] = blk.value

    def make_vjp(i):
        def vjp(g):
            return g[row_off[i] : row_off[i + 1], col_off[i] : col_off[i + 1]]

        return vjp

    return Node(value, tuple((b, make_vjp(i)) for i, b in enumerate(blocks)))


def cholesky(a) -> Node:
    a = as_node(a)
    lower = np.linalg.cholesky(a.value)

    def vjp(g):
        # Murray-style backward pass: two triangular solves around the
        # lower-half projection of L^T g, symmetrised at the end.
        n = lower.shape[0]
        p = np.tril(lower.T @ g)
        p[np.diag_indices(n)] *= 0.5
        half = scipy.linalg.solve_triangular(lower, p.T, lower=True, trans="T")
        s = scipy.linalg.solve_triangular(lower, half.T, lower=True, trans="T")
        return 0.5 * (s + s.T)

    return Node(lower, ((a, vjp),))


def solve_triangular(l, b, trans: str = "N") -> Node:
    """Solve ``L x = b`` (trans='N') or ``L^T x = b`` (trans='T'), L lower."""
    l, b = as_node(l), as_node(b)
    x = scipy.linalg.solve_triangular(l.value, b.value, lower=True, trans=trans)

    if trans == "N":

        def vjp_b(g):
            return scipy.linalg.solve_triangular(l.value, g, lower=True, trans="T")

        def vjp_l(g):
            bbar = scipy.linalg.solve_triangular(l.value, g, lower=True, trans="T")
            return -np.tril(bbar @ x.T)

    else:

        def vjp_b(g):
            return scipy.linalg.solve_triangular(l.value, g, lower=True, trans="N")

        def vjp_l(g):
            bbar = scipy.linalg.solve_triangular(l.value, g, lower=True, trans="N")
            return -np.tril(x @ bbar.T)

    return Node(x, ((l, vjp_l), (b, vjp_b)))


# ---------------------------------------------------------------------------
# backward pass


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def grad(output: Node, leaves) -> list[np.ndarray]:
    """Gradients of a scalar output with respect to each leaf node."""
    if output.value.size != 1:
        raise ValueError("grad requires a scalar output")
    order = _topological_order(output)
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            contribution = vjp(g)
            seen = grads.get(id(parent))
            grads[id(parent)] = contribution if seen is None else seen + contribution
    return [grads.get(id(leaf), np.zeros_like(leaf.value)) for leaf in leaves]
