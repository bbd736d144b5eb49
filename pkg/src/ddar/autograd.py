"""Whole-matrix reverse-mode differentiation on 2-D float64 arrays.

Every value flowing through a graph is a :class:`Node` wrapping a 2-D
``numpy.ndarray``. Operations build new nodes that remember their parents
and a local backward rule; :func:`backward` walks the graph once in reverse
topological order and accumulates gradients.

The gradient rules are written per matrix operation so each one can be
audited by hand and checked against :func:`grad_check`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .exceptions import ContractError, DegenerateInputError, DimensionError, DomainError


class Node:
    """A value in the computation graph.

    Parameters
    ----------
    value : array_like
        Coerced to a 2-D float64 array. Scalars become 1x1, vectors 1xk.
    requires_grad : bool
        Leaves with ``requires_grad=False`` are treated as constants.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Node values must be 2-D, got shape {arr.shape}")
        self.value = arr
        self.grad = np.zeros_like(arr)
        self.parents: tuple[Node, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Node{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Node:
    return Node(value, requires_grad=False)


def _make(value: np.ndarray, parents: Sequence[Node], rule) -> Node:
    out = Node(value)
    out.parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._backward = rule
    return out


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


# ---------------------------------------------------------------------------
# linear algebra and arithmetic
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    """Matrix product ``a @ b``."""
    a, b = _as_node(a), _as_node(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out_val = a.value @ b.value

    def rule(g):
        if a.requires_grad:
            a.grad += g @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ g

    return _make(out_val, (a, b), rule)


def transpose(a: Node) -> Node:
    def rule(g):
        a.grad += g.T

    return _make(a.value.T.copy(), (a,), rule)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: Node, b: Node, opname: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{opname} shape mismatch: {a.shape} vs {b.shape}")


def add(a, b) -> Node:
    """Elementwise sum; a 1xk or Bx1 operand is broadcast."""
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "add")

    def rule(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), rule)


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "sub")

    def rule(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.shape)

    return _make(a.value - b.value, (a, b), rule)


def mul(a, b) -> Node:
    """Elementwise (Hadamard) product with row/column broadcasting."""
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "mul")

    def rule(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.value, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), rule)


def div(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _check_broadcast(a, b, "div")
    out_val = a.value / b.value

    def rule(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g / b.value, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g * out_val / b.value, b.shape)

    return _make(out_val, (a, b), rule)


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def rule(g):
        a.grad += c * g

    return _make(a.value * c, (a,), rule)


def add_scalar(a: Node, c: float) -> Node:
    def rule(g):
        a.grad += g

    return _make(a.value + float(c), (a,), rule)


def clip(a: Node, lo: float, hi: float) -> Node:
    """Clamp entries to ``[lo, hi]``; gradient is zero where clamping is active."""
    out_val = np.clip(a.value, lo, hi)

    def rule(g):
        a.grad += g * ((a.value >= lo) & (a.value <= hi))

    return _make(out_val, (a,), rule)


def hstack(nodes: Sequence[Node]) -> Node:
    rows = {n.shape[0] for n in nodes}
    if len(rows) != 1:
        raise DimensionError(f"hstack needs equal row counts, got {[n.shape for n in nodes]}")
    widths = [n.shape[1] for n in nodes]
    bounds = np.cumsum([0] + widths)

    def rule(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            if n.requires_grad:
                n.grad += g[:, lo:hi]

    return _make(np.hstack([n.value for n in nodes]), nodes, rule)


# ---------------------------------------------------------------------------
# entrywise maps
# ---------------------------------------------------------------------------


def relu(a: Node) -> Node:
    mask = a.value > 0.0  # subgradient at exactly 0 is 0

    def rule(g):
        a.grad += g * mask

    return _make(a.value * mask, (a,), rule)


def exp(a: Node) -> Node:
    out_val = np.exp(a.value)

    def rule(g):
        a.grad += g * out_val

    return _make(out_val, (a,), rule)


def neg(a: Node) -> Node:
    def rule(g):
        a.grad -= g

    return _make(-a.value, (a,), rule)


def log(a: Node) -> Node:
    if np.any(a.value <= 0.0):
        raise DomainError("log of non-positive entry")

    def rule(g):
        a.grad += g / a.value

    return _make(np.log(a.value), (a,), rule)


def square(a: Node) -> Node:
    def rule(g):
        a.grad += 2.0 * a.value * g

    return _make(a.value * a.value, (a,), rule)


_ELEMENTWISE = {"relu": relu, "exp": exp, "neg": neg, "log": log, "square": square}


def elementwise(op_kind: str, a: Node) -> Node:
    """Apply one of ``relu``, ``exp``, ``neg``, ``log``, ``square`` entrywise."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(a: Node) -> Node:
    def rule(g):
        a.grad += g[0, 0]

    return _make(np.array([[a.value.sum()]]), (a,), rule)


def mean_all(a: Node) -> Node:
    n = a.value.size

    def rule(g):
        a.grad += g[0, 0] / n

    return _make(np.array([[a.value.mean()]]), (a,), rule)


def row_sum(a: Node) -> Node:
    """Sum across columns, B x k -> B x 1."""

    def rule(g):
        a.grad += g

    return _make(a.value.sum(axis=1, keepdims=True), (a,), rule)


def row_l2norm(a: Node) -> Node:
    """Euclidean norm of each row, B x k -> B x 1 (no epsilon)."""
    norms = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))

    def rule(g):
        if np.any(norms == 0.0):
            raise DegenerateInputError("gradient of a zero-norm row is undefined")
        a.grad += g * a.value / norms

    return _make(norms, (a,), rule)


_REDUCE = {"sum": sum_all, "mean": mean_all, "row_l2norm": row_l2norm}


def reduce(op_kind: str, a: Node) -> Node:
    """Apply ``sum``, ``mean`` (both to 1x1) or ``row_l2norm`` (to Bx1)."""
    try:
        fn = _REDUCE[op_kind]
    except KeyError:
        raise ValueError(f"unknown reduction {op_kind!r}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# composite operations with fused backward rules
# ---------------------------------------------------------------------------


def cosine_rows(z: Node, p: Node) -> Node:
    """Cosine similarity between every row of ``z`` (B x d) and of ``p`` (m x d).

    Zero-norm rows are rejected rather than guarded with an epsilon, since a
    vanishing prototype or embedding is exactly the failure worth surfacing.
    """
    if z.shape[1] != p.shape[1]:
        raise DimensionError(f"cosine_rows shape mismatch: {z.shape} vs {p.shape}")
    zn = np.sqrt((z.value * z.value).sum(axis=1, keepdims=True))
    pn = np.sqrt((p.value * p.value).sum(axis=1, keepdims=True))
    if np.any(zn == 0.0):
        raise DegenerateInputError("cosine_rows: embedding row with zero norm")
    if np.any(pn == 0.0):
        raise DegenerateInputError("cosine_rows: prototype row with zero norm")
    zu = z.value / zn
    pu = p.value / pn
    out_val = zu @ pu.T

    def rule(g):
        # d cos / d z_b = (p_hat - cos * z_hat) / |z_b|, and symmetrically for p
        if z.requires_grad:
            gz = g @ pu
            gz -= (g * out_val).sum(axis=1, keepdims=True) * zu
            z.grad += gz / zn
        if p.requires_grad:
            gp = g.T @ zu
            gp -= (g * out_val).sum(axis=0)[:, None] * pu
            p.grad += gp / pn

    return _make(out_val, (z, p), rule)


def softmax_row(a: Node) -> Node:
    """Row-wise softmax with max subtraction."""
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_val = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        a.grad += out_val * (g - (g * out_val).sum(axis=1, keepdims=True))

    return _make(out_val, (a,), rule)


def log_softmax_row(a: Node) -> Node:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_val = shifted - lse
    probs = np.exp(out_val)

    def rule(g):
        a.grad += g - probs * g.sum(axis=1, keepdims=True)

    return _make(out_val, (a,), rule)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------


def _topological_order(output: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(output: Node) -> dict[int, np.ndarray]:
    """Propagate d(output)/d(node) into ``.grad`` of every reachable node.

    ``output`` must be 1x1. Gradients accumulate, so leaves shared between
    several consumers receive the sum of all contributions. Returns a map
    from ``id(node)`` to its gradient for the nodes that were visited.
    """
    if output.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) output, got {output.shape}")
    order = _topological_order(output)
    for node in order:
        node.grad = np.zeros_like(node.value)
    output.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
    return {id(n): n.grad for n in order}


def grad_check(f: Callable[[Node], Node], x, h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Parameters
    ----------
    f : callable
        Maps a leaf :class:`Node` to a 1x1 node.
    x : array_like
        Point at which to compare.
    h : float
        Finite-difference step.

    Returns
    -------
    float
        ``max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)``.
    """
    x = np.array(Node(x).value)
    leaf = Node(x.copy(), requires_grad=True)
    backward(f(leaf))
    analytic = leaf.grad.copy()

    numeric = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        fp = f(Node(xp)).item()
        fm = f(Node(xm)).item()
        numeric[idx] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_many(
    f: Callable[[Sequence[Node]], Node], xs: Iterable, h: float = 1e-5
) -> float:
    """Like :func:`grad_check` but over several leaves jointly."""
    xs = [np.array(Node(x).value) for x in xs]
    leaves = [Node(x.copy(), requires_grad=True) for x in xs]
    backward(f(leaves))
    worst = 0.0
    for k, x in enumerate(xs):
        analytic = leaves[k].grad
        for idx in np.ndindex(*x.shape):
            vals = []
            for sign in (1.0, -1.0):
                pert = [xx.copy() for xx in xs]
                pert[k][idx] += sign * h
                vals.append(f([Node(v) for v in pert]).item())
            numeric = (vals[0] - vals[1]) / (2.0 * h)
            a = analytic[idx]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
