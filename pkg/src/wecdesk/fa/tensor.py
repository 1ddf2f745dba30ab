"""Reverse-mode automatic differentiation over float64 numpy arrays.

Small dynamic-graph engine: every operation records its parents and a
closure that maps the output gradient to parent gradients. ``backward`` on
a scalar walks the graph in reverse topological order. Everything is
float64; there is deliberately no dtype negotiation.

Only the operations the approximators need are implemented. Broadcasting
follows numpy rules; gradients of broadcast operands are summed back down
to the operand shape.
"""

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled():
    return _grad_enabled


def _unbroadcast(grad, shape):
    # reduce a broadcast gradient back to the operand's shape
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _wrap(other):
        if isinstance(other, Tensor):
            return other
        return Tensor(other)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def numpy(self):
        """The underlying array (not a copy)."""
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        """Same values, cut out of the graph."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- backward --------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient requires a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)

        # iterative topological sort; graphs get deep over long sequences
        topo = []
        state = {}
        stack = [self]
        while stack:
            node = stack[-1]
            st = state.get(id(node), 0)
            if st == 0:
                state[id(node)] = 1
                for p in node._parents:
                    if state.get(id(p), 0) == 0 and p.requires_grad:
                        stack.append(p)
            else:
                stack.pop()
                if st == 1:
                    state[id(node)] = 2
                    topo.append(node)

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = Tensor._wrap(other)
        out = _node(self.data + other.data, (self, other))
        if out._parents:
            sa, sb = self.data.shape, other.data.shape
            out._backward = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out._parents:
            out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-Tensor._wrap(other))

    def __rsub__(self, other):
        return Tensor._wrap(other) + (-self)

    def __mul__(self, other):
        other = Tensor._wrap(other)
        out = _node(self.data * other.data, (self, other))
        if out._parents:
            a, b = self, other
            out._backward = lambda g: (
                _unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape),
            )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._wrap(other)
        out = _node(self.data / other.data, (self, other))
        if out._parents:
            a, b = self, other
            out._backward = lambda g: (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
            )
        return out

    def __rtruediv__(self, other):
        return Tensor._wrap(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        out = _node(self.data ** exponent, (self,))
        if out._parents:
            a = self
            out._backward = lambda g: (g * exponent * a.data ** (exponent - 1),)
        return out

    def __matmul__(self, other):
        other = Tensor._wrap(other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise ValueError("matmul operands must have ndim >= 2")
        out = _node(self.data @ other.data, (self, other))
        if out._parents:
            a, b = self, other

            def back(g):
                ga = g @ np.swapaxes(b.data, -1, -2)
                gb = np.swapaxes(a.data, -1, -2) @ g
                return (
                    _unbroadcast(ga, a.data.shape),
                    _unbroadcast(gb, b.data.shape),
                )

            out._backward = back
        return out

    # -- elementwise nonlinearities ----------------------------------------

    def exp(self):
        val = np.exp(self.data)
        out = _node(val, (self,))
        if out._parents:
            out._backward = lambda g: (g * val,)
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out._parents:
            a = self
            out._backward = lambda g: (g / a.data,)
        return out

    def tanh(self):
        val = np.tanh(self.data)
        out = _node(val, (self,))
        if out._parents:
            out._backward = lambda g: (g * (1.0 - val * val),)
        return out

    def sigmoid(self):
        # numerically stable split keeps exp arguments non-positive
        x = self.data
        val = np.empty_like(x)
        pos = x >= 0
        val[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        val[~pos] = ex / (1.0 + ex)
        out = _node(val, (self,))
        if out._parents:
            out._backward = lambda g: (g * val * (1.0 - val),)
        return out

    def relu(self):
        val = np.maximum(self.data, 0.0)
        out = _node(val, (self,))
        if out._parents:
            mask = self.data > 0.0
            out._backward = lambda g: (g * mask,)
        return out

    def sqrt(self):
        val = np.sqrt(self.data)
        out = _node(val, (self,))
        if out._parents:
            out._backward = lambda g: (g * 0.5 / val,)
        return out

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            shape = self.data.shape

            def back(g):
                if axis is None:
                    return (np.broadcast_to(g, shape).copy(),)
                if keepdims:
                    return (np.broadcast_to(g, shape).copy(),)
                g = np.expand_dims(g, axis)
                return (np.broadcast_to(g, shape).copy(),)

            out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for ax in axes:
                n *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out._parents:
            orig = self.data.shape
            out._backward = lambda g: (g.reshape(orig),)
        return out

    def swapaxes(self, a, b):
        out = _node(np.swapaxes(self.data, a, b), (self,))
        if out._parents:
            out._backward = lambda g: (np.swapaxes(g, a, b),)
        return out

    def transpose(self, axes):
        out = _node(np.transpose(self.data, axes), (self,))
        if out._parents:
            inverse = np.argsort(axes)
            out._backward = lambda g: (np.transpose(g, inverse),)
        return out

    def __getitem__(self, index):
        out = _node(self.data[index], (self,))
        if out._parents:
            shape = self.data.shape

            def back(g):
                full = np.zeros(shape, dtype=np.float64)
                np.add.at(full, index, g)
                return (full,)

            out._backward = back
        return out


def _node(data, parents):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


# -- free functions ------------------------------------------------------------


def concat(tensors, axis=0):
    tensors = [Tensor._wrap(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def back(g):
            return tuple(np.split(g, splits, axis=axis))

        out._backward = back
    return out


def stack(tensors, axis=0):
    tensors = [Tensor._wrap(t) for t in tensors]
    out = _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        def back(g):
            return tuple(np.moveaxis(g, axis, 0))

        out._backward = back
    return out


def minimum(a, b):
    a = Tensor._wrap(a)
    b = Tensor._wrap(b)
    out = _node(np.minimum(a.data, b.data), (a, b))
    if out._parents:
        take_a = a.data <= b.data
        out._backward = lambda g: (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        )
    return out


def maximum(a, b):
    a = Tensor._wrap(a)
    b = Tensor._wrap(b)
    out = _node(np.maximum(a.data, b.data), (a, b))
    if out._parents:
        take_a = a.data >= b.data
        out._backward = lambda g: (
            _unbroadcast(g * take_a, a.data.shape),
            _unbroadcast(g * ~take_a, b.data.shape),
        )
    return out


def clip(x, lo, hi):
    """Elementwise clamp with subgradient routing to the interior."""
    return minimum(maximum(x, lo), hi)


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    a = Tensor._wrap(a)
    b = Tensor._wrap(b)
    out = _node(np.where(cond, a.data, b.data), (a, b))
    if out._parents:
        out._backward = lambda g: (
            _unbroadcast(g * cond, a.data.shape),
            _unbroadcast(g * ~cond, b.data.shape),
        )
    return out


def softmax(x, axis=-1):
    """Numerically stable softmax along one axis."""
    shifted = x - Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)
