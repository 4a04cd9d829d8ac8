"""Reverse-mode automatic differentiation on numpy arrays.

A ``Var`` wraps a float64 ndarray together with the recipe that produced it
(parent variables plus vector-Jacobian callbacks).  Building expressions out
of ``Var`` operations records a tape; :func:`grad` replays it backwards.

The op set is deliberately small: arithmetic (with numpy broadcasting),
matrix products, ``tanh``, reductions, basic indexing, ``reshape`` and a
clipped maximum.  Anything else -- in particular applying numpy ufuncs
directly to a ``Var`` -- is rejected at construction time, so a loss closure
that strays outside the differentiable primitives fails loudly instead of
silently dropping gradients.

Shapes follow numpy semantics throughout; gradients of broadcast operands
are summed back down to the operand's shape.
"""

from __future__ import annotations

import numbers

import numpy as np


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_value(x):
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


class Var:
    """A node on the differentiation tape.

    Parameters
    ----------
    value : array_like
        Payload, stored as float64.
    parents : tuple of (Var, callable)
        Each callable maps the output cotangent to the parent's cotangent.
    """

    __slots__ = ("value", "_parents")

    # Refuse numpy ufuncs (np.exp(var), np.sin(var), ...): they would return
    # plain arrays and silently detach the tape.
    __array_ufunc__ = None

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = tuple(parents)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape}, leaf={not self._parents})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        ov = _as_value(other)
        out = Var(self.value + ov)
        parents = [(self, lambda g: _unbroadcast(g, self.value.shape))]
        if isinstance(other, Var):
            parents.append((other, lambda g: _unbroadcast(g, ov.shape)))
        out._parents = tuple(parents)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        ov = _as_value(other)
        out = Var(self.value - ov)
        parents = [(self, lambda g: _unbroadcast(g, self.value.shape))]
        if isinstance(other, Var):
            parents.append((other, lambda g: _unbroadcast(-g, ov.shape)))
        out._parents = tuple(parents)
        return out

    def __rsub__(self, other):
        ov = _as_value(other)
        out = Var(ov - self.value)
        out._parents = ((self, lambda g: _unbroadcast(-g, self.value.shape)),)
        return out

    def __neg__(self):
        out = Var(-self.value)
        out._parents = ((self, lambda g: -g),)
        return out

    def __mul__(self, other):
        ov = _as_value(other)
        out = Var(self.value * ov)
        parents = [(self, lambda g: _unbroadcast(g * ov, self.value.shape))]
        if isinstance(other, Var):
            sv = self.value
            parents.append((other, lambda g: _unbroadcast(g * sv, ov.shape)))
        out._parents = tuple(parents)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        ov = _as_value(other)
        out = Var(self.value / ov)
        parents = [(self, lambda g: _unbroadcast(g / ov, self.value.shape))]
        if isinstance(other, Var):
            sv = self.value
            parents.append(
                (other, lambda g: _unbroadcast(-g * sv / (ov * ov), ov.shape))
            )
        out._parents = tuple(parents)
        return out

    def __rtruediv__(self, other):
        ov = _as_value(other)
        sv = self.value
        out = Var(ov / sv)
        out._parents = (
            (self, lambda g: _unbroadcast(-g * ov / (sv * sv), sv.shape)),
        )
        return out

    def __pow__(self, p):
        if not isinstance(p, numbers.Number):
            raise TypeError("Var exponent must be a plain number")
        sv = self.value
        out = Var(sv ** p)
        out._parents = ((self, lambda g: g * p * sv ** (p - 1)),)
        return out

    def __matmul__(self, other):
        ov = _as_value(other)
        sv = self.value
        if sv.ndim < 2 or ov.ndim < 2:
            raise ValueError("Var matmul requires operands with ndim >= 2")
        out = Var(sv @ ov)
        parents = [
            (
                self,
                lambda g: _unbroadcast(g @ np.swapaxes(ov, -1, -2), sv.shape),
            )
        ]
        if isinstance(other, Var):
            parents.append(
                (
                    other,
                    lambda g: _unbroadcast(
                        np.swapaxes(sv, -1, -2) @ g, ov.shape
                    ),
                )
            )
        out._parents = tuple(parents)
        return out

    def __rmatmul__(self, other):
        ov = _as_value(other)  # constant left operand
        sv = self.value
        if sv.ndim < 2 or ov.ndim < 2:
            raise ValueError("Var matmul requires operands with ndim >= 2")
        out = Var(ov @ sv)
        out._parents = (
            (
                self,
                lambda g: _unbroadcast(np.swapaxes(ov, -1, -2) @ g, sv.shape),
            ),
        )
        return out

    # -- indexing / shaping ----------------------------------------------

    def __getitem__(self, idx):
        if isinstance(idx, (np.ndarray, list)) or (
            isinstance(idx, tuple)
            and any(isinstance(i, (np.ndarray, list)) for i in idx)
        ):
            raise TypeError("Var indexing supports basic slices/ints only")
        sv = self.value
        out = Var(sv[idx])

        def vjp(g):
            buf = np.zeros_like(sv)
            buf[idx] += g
            return buf

        out._parents = ((self, vjp),)
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        sv = self.value
        out = Var(sv.reshape(shape))
        out._parents = ((self, lambda g: g.reshape(sv.shape)),)
        return out

    # -- nonlinearities / reductions --------------------------------------

    def tanh(self):
        t = np.tanh(self.value)
        out = Var(t)
        out._parents = ((self, lambda g: g * (1.0 - t * t)),)
        return out

    def clip_min(self, lo):
        sv = self.value
        mask = sv >= lo
        out = Var(np.where(mask, sv, lo))
        out._parents = ((self, lambda g: g * mask),)
        return out

    def sum(self, axis=None):
        sv = self.value
        out = Var(sv.sum(axis=axis))

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, sv.shape).copy()
            gg = np.expand_dims(g, axis)
            return np.broadcast_to(gg, sv.shape).copy()

        out._parents = ((self, vjp),)
        return out

    def mean(self, axis=None):
        sv = self.value
        n = sv.size if axis is None else sv.shape[axis]
        return self.sum(axis=axis) / float(n)


# -- functional helpers that accept Var or ndarray uniformly ---------------


def tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def clip_min(x, lo):
    return x.clip_min(lo) if isinstance(x, Var) else np.maximum(x, lo)


def vsum(x, axis=None):
    return x.sum(axis=axis) if isinstance(x, Var) else np.sum(x, axis=axis)


def vmean(x, axis=None):
    return x.mean(axis=axis) if isinstance(x, Var) else np.mean(x, axis=axis)


def reshape(x, shape):
    return x.reshape(shape) if isinstance(x, Var) else np.reshape(x, shape)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def grad(loss: Var, wrt: list[Var]) -> list[np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to the listed leaves.

    Leaves absent from the tape get zero gradients.
    """
    if not isinstance(loss, Var):
        raise TypeError("loss must be a Var")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")

    # Iterative topological sort (graphs can be deep; avoid recursion).
    NEW, OPEN, DONE = 0, 1, 2
    state: dict[int, int] = {}
    order: list[Var] = []  # topological: parents before consumers
    stack: list[Var] = [loss]
    while stack:
        node = stack[-1]
        nid = id(node)
        st = state.get(nid, NEW)
        if st == NEW:
            state[nid] = OPEN
            for parent, _ in node._parents:
                if state.get(id(parent), NEW) == NEW:
                    stack.append(parent)
        elif st == OPEN:
            state[nid] = DONE
            order.append(node)
            stack.pop()
        else:
            stack.pop()

    grads: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.value)
    }
    for node in reversed(order):
        if not node._parents:
            continue  # leaf: keep its accumulated gradient for collection
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, vjp in node._parents:
            pg = vjp(g)
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg

    return [
        grads.get(id(w), np.zeros_like(w.value)) for w in wrt
    ]
