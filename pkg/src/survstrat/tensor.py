"""Dense 2-D float64 tensors with reverse-mode automatic differentiation.

Graphs are built define-by-run: every operation records its parents and a
backward closure on the fly, so the tape is rebuilt on each forward pass.
``backward()`` must be called on a 1x1 (scalar) tensor; gradients accumulate
into ``.grad`` buffers until they are explicitly zeroed (the trainer zeroes
them before each backward pass).

Every forward op validates that its output is finite; a NaN/Inf result is
reported as a :class:`NumericError` naming the op.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, NumericError, UsageError


def _as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ConfigurationError(f"tensors are 2-D; got ndim={arr.ndim}")
    return arr


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite output in op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


class Tensor:
    """A 2-D float64 value, optionally tracked for autodiff."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, values, requires_grad: bool = False):
        self.values = _as_matrix(values)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._op = "leaf"

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _lift(other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(other)

    @classmethod
    def _from_op(cls, values: np.ndarray, parents: tuple["Tensor", ...], op: str,
                 backward_fn) -> "Tensor":
        _check_finite(values, op)
        out = cls.__new__(cls)
        out.values = values
        needs = any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out.grad = None
        if needs:
            out._parents = parents
            out._backward_fn = backward_fn
            out._op = op
        else:
            out._parents = ()
            out._backward_fn = None
            out._op = op
        return out

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def item(self) -> float:
        if self.values.size != 1:
            raise UsageError(f"item() requires a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def _accumulate(self, delta: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += delta

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar; accumulates into .grad buffers."""
        if self.shape != (1, 1):
            raise UsageError(f"backward requires a scalar (1x1) loss, got {self.shape}")
        # Iterative topological sort: each recorded node visited exactly once.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and (p.requires_grad or p._parents):
                    stack.append((p, False))
        self._accumulate(np.ones((1, 1)))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- elementwise arithmetic (numpy broadcasting, 2-D only) ---------------

    def __add__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        a, b = self, other
        try:
            values = a.values + b.values
        except ValueError:
            raise ConfigurationError(f"add: incompatible shapes {a.shape} and {b.shape}")

        def backward_fn(grad):
            if a.requires_grad or a._parents:
                a._accumulate(_unbroadcast(grad, a.shape))
            if b.requires_grad or b._parents:
                b._accumulate(_unbroadcast(grad, b.shape))

        return Tensor._from_op(values, (a, b), "add", backward_fn)

    def __radd__(self, other) -> "Tensor":
        return Tensor._lift(other) + self

    def __sub__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        a, b = self, other
        try:
            values = a.values - b.values
        except ValueError:
            raise ConfigurationError(f"sub: incompatible shapes {a.shape} and {b.shape}")

        def backward_fn(grad):
            if a.requires_grad or a._parents:
                a._accumulate(_unbroadcast(grad, a.shape))
            if b.requires_grad or b._parents:
                b._accumulate(_unbroadcast(-grad, b.shape))

        return Tensor._from_op(values, (a, b), "sub", backward_fn)

    def __rsub__(self, other) -> "Tensor":
        return Tensor._lift(other) - self

    def __mul__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        a, b = self, other
        try:
            values = a.values * b.values
        except ValueError:
            raise ConfigurationError(f"mul: incompatible shapes {a.shape} and {b.shape}")

        def backward_fn(grad):
            if a.requires_grad or a._parents:
                a._accumulate(_unbroadcast(grad * b.values, a.shape))
            if b.requires_grad or b._parents:
                b._accumulate(_unbroadcast(grad * a.values, b.shape))

        return Tensor._from_op(values, (a, b), "mul", backward_fn)

    def __rmul__(self, other) -> "Tensor":
        return Tensor._lift(other) * self

    def __truediv__(self, other) -> "Tensor":
        other = Tensor._lift(other)
        a, b = self, other
        try:
            with np.errstate(divide="ignore", invalid="ignore"):
                values = a.values / b.values
        except ValueError:
            raise ConfigurationError(f"div: incompatible shapes {a.shape} and {b.shape}")

        def backward_fn(grad):
            if a.requires_grad or a._parents:
                a._accumulate(_unbroadcast(grad / b.values, a.shape))
            if b.requires_grad or b._parents:
                b._accumulate(_unbroadcast(-grad * a.values / (b.values ** 2), b.shape))

        return Tensor._from_op(values, (a, b), "div", backward_fn)

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor._lift(other) / self

    def __neg__(self) -> "Tensor":
        a = self

        def backward_fn(grad):
            a._accumulate(-grad)

        return Tensor._from_op(-a.values, (a,), "neg", backward_fn)

    # -- matrix ops ------------------------------------------------------

    def __matmul__(self, other) -> "Tensor":
        return self.matmul(other)

    def matmul(self, other) -> "Tensor":
        other = Tensor._lift(other)
        a, b = self, other
        if a.shape[1] != b.shape[0]:
            raise ConfigurationError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        values = a.values @ b.values

        def backward_fn(grad):
            if a.requires_grad or a._parents:
                a._accumulate(grad @ b.values.T)
            if b.requires_grad or b._parents:
                b._accumulate(a.values.T @ grad)

        return Tensor._from_op(values, (a, b), "matmul", backward_fn)

    def transpose(self) -> "Tensor":
        a = self

        def backward_fn(grad):
            a._accumulate(grad.T)

        return Tensor._from_op(a.values.T.copy(), (a,), "transpose", backward_fn)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- nonlinearities ----------------------------------------------------

    def relu(self) -> "Tensor":
        a = self
        values = np.maximum(a.values, 0.0)

        def backward_fn(grad):
            a._accumulate(grad * (a.values > 0.0))

        return Tensor._from_op(values, (a,), "relu", backward_fn)

    def exp(self) -> "Tensor":
        a = self
        with np.errstate(over="ignore"):
            values = np.exp(a.values)
        # the finite check in _from_op catches overflow

        def backward_fn(grad):
            a._accumulate(grad * values)

        return Tensor._from_op(values, (a,), "exp", backward_fn)

    def log(self) -> "Tensor":
        a = self
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.log(a.values)

        def backward_fn(grad):
            a._accumulate(grad / a.values)

        return Tensor._from_op(values, (a,), "log", backward_fn)

    def clamp_min(self, floor: float) -> "Tensor":
        """max(x, floor) elementwise; gradient passes only where x > floor."""
        a = self
        values = np.maximum(a.values, floor)

        def backward_fn(grad):
            a._accumulate(grad * (a.values > floor))

        return Tensor._from_op(values, (a,), "clamp_min", backward_fn)

    # -- reductions --------------------------------------------------------

    def sum(self, axis: int | None = None) -> "Tensor":
        a = self
        if axis is None:
            values = np.array([[a.values.sum()]])

            def backward_fn(grad):
                a._accumulate(np.full_like(a.values, grad[0, 0]))

        else:
            values = a.values.sum(axis=axis, keepdims=True)

            def backward_fn(grad):
                a._accumulate(np.broadcast_to(grad, a.shape).copy())

        return Tensor._from_op(values, (a,), "sum", backward_fn)

    def mean(self, axis: int | None = None) -> "Tensor":
        a = self
        n = a.values.size if axis is None else a.shape[axis]
        return a.sum(axis=axis) * (1.0 / n)


# -- module-level structured ops --------------------------------------------


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation [a | b] of two tensors with equal row counts."""
    if a.shape[0] != b.shape[0]:
        raise ConfigurationError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    na = a.shape[1]
    values = np.concatenate([a.values, b.values], axis=1)

    def backward_fn(grad):
        if a.requires_grad or a._parents:
            a._accumulate(grad[:, :na])
        if b.requires_grad or b._parents:
            b._accumulate(grad[:, na:])

    return Tensor._from_op(values, (a, b), "concat_cols", backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax using the log-sum-exp shift for overflow safety."""
    a = x
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    values = e / e.sum(axis=1, keepdims=True)

    def backward_fn(grad):
        inner = (grad * values).sum(axis=1, keepdims=True)
        a._accumulate(values * (grad - inner))

    return Tensor._from_op(values, (a,), "softmax_rows", backward_fn)


def logsumexp_rows(x: Tensor) -> Tensor:
    """Row-wise log(sum(exp(x))) -> (N,1), computed with the max-shift trick."""
    a = x
    m = a.values.max(axis=1, keepdims=True)
    e = np.exp(a.values - m)
    s = e.sum(axis=1, keepdims=True)
    values = m + np.log(s)

    def backward_fn(grad):
        a._accumulate(grad * (e / s))

    return Tensor._from_op(values, (a,), "logsumexp_rows", backward_fn)


def row_norms(x: Tensor) -> Tensor:
    """Row-wise Euclidean norms -> (N,1)."""
    sq = (x * x).sum(axis=1)
    a = sq
    values = np.sqrt(a.values)

    def backward_fn(grad):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = grad * 0.5 / values
        d = np.where(values > 0.0, d, 0.0)
        a._accumulate(d)

    return Tensor._from_op(values, (a,), "sqrt", backward_fn)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine-similarity matrix (N,M) between rows of a and rows of b.

    Row norms are floored at 1e-12 so zero rows do not produce NaNs.
    """
    if a.shape[1] != b.shape[1]:
        raise ConfigurationError(f"cosine_similarity: column counts differ, {a.shape} vs {b.shape}")
    an = a / row_norms(a).clamp_min(1e-12)
    bn = b / row_norms(b).clamp_min(1e-12)
    return an.matmul(bn.transpose())


def squared_distances(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise squared Euclidean distance matrix (N,K) between rows."""
    if a.shape[1] != b.shape[1]:
        raise ConfigurationError(f"squared_distances: column counts differ, {a.shape} vs {b.shape}")
    a2 = (a * a).sum(axis=1)            # (N,1)
    b2 = (b * b).sum(axis=1).transpose()  # (1,K)
    cross = a.matmul(b.transpose())     # (N,K)
    d = a2 - 2.0 * cross + b2
    # tiny negatives from cancellation are clipped to zero
    return d.clamp_min(0.0)


# -- optimizer ---------------------------------------------------------------


class Adam:
    """Adam with bias correction over a fixed list of parameter tensors.

    Holds first/second-moment buffers shape-matched to each parameter and a
    strictly increasing step counter.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise UsageError(f"learning rate must be > 0, got {lr}")
        self.params: list[Tensor] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.values.shape:
                raise UsageError(f"gradient shape {g.shape} does not match parameter {p.values.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
