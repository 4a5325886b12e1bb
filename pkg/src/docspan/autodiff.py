"""Dense float64 tensors with reverse-mode automatic differentiation.

Small tape-based engine: every operation records its inputs and a
vector-Jacobian closure, `backward` walks the tape in reverse
topological order. Sized for desk-scale training, so correctness and
determinism win over speed everywhere.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import NumericError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Additive logit mask value: large enough that exp() underflows to exactly 0.0
# after max-subtraction, small enough to stay finite in float64 arithmetic.
NEG_MASK = -1.0e30


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class Tensor:
    """A float64 ndarray plus the tape bookkeeping for reverse mode.

    `value` is always C-contiguous float64. `grad` is filled in by
    `backward` and accumulates across calls until `zero_grad`-style
    clearing (training loops own that).
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, value, requires_grad=False, parents=(), vjp=None, name=None):
        arr = np.asarray(value, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.value = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag})"

    # Operator sugar; all math lives in the module-level functions below.
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.value.shape}")
        return float(self.value.reshape(()))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def parameter(value, name=None) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64))


def _needs_tape(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    for _ in range(extra):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value + b.value
    if not _needs_tape(a, b):
        return Tensor(out_val)

    def vjp(g):
        if a.requires_grad or a._parents:
            _accum(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad or b._parents:
            _accum(b, _unbroadcast(g, b.value.shape))

    return Tensor(out_val, parents=(a, b), vjp=vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value - b.value
    if not _needs_tape(a, b):
        return Tensor(out_val)

    def vjp(g):
        if a.requires_grad or a._parents:
            _accum(a, _unbroadcast(g, a.value.shape))
        if b.requires_grad or b._parents:
            _accum(b, _unbroadcast(-g, b.value.shape))

    return Tensor(out_val, parents=(a, b), vjp=vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_val = a.value * b.value
    if not _needs_tape(a, b):
        return Tensor(out_val)

    def vjp(g):
        if a.requires_grad or a._parents:
            _accum(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad or b._parents:
            _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return Tensor(out_val, parents=(a, b), vjp=vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    if not _needs_tape(a):
        return Tensor(-a.value)

    def vjp(g):
        _accum(a, -g)

    return Tensor(-a.value, parents=(a,), vjp=vjp)


def pow_scalar(a: Tensor, p: float) -> Tensor:
    """Elementwise a**p for a Python float exponent."""
    a = as_tensor(a)
    out_val = a.value**p
    if not _needs_tape(a):
        return Tensor(out_val)

    def vjp(g):
        _accum(a, g * p * a.value ** (p - 1.0))

    return Tensor(out_val, parents=(a,), vjp=vjp)


# ---------------------------------------------------------------------------
# linear algebra and shape surgery
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul requires 2-D operands with matching inner dimension, "
            f"got {a.value.shape} and {b.value.shape}"
        )
    out_val = a.value @ b.value
    if not _needs_tape(a, b):
        return Tensor(out_val)

    def vjp(g):
        if a.requires_grad or a._parents:
            _accum(a, g @ b.value.T)
        if b.requires_grad or b._parents:
            _accum(b, a.value.T @ g)

    return Tensor(out_val, parents=(a, b), vjp=vjp)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeError(f"transpose requires a 2-D tensor, got shape {a.value.shape}")
    out_val = np.ascontiguousarray(a.value.T)
    if not _needs_tape(a):
        return Tensor(out_val)

    def vjp(g):
        _accum(a, g.T)

    return Tensor(out_val, parents=(a,), vjp=vjp)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out_val = a.value.reshape(shape)
    if not _needs_tape(a):
        return Tensor(out_val)

    def vjp(g):
        _accum(a, g.reshape(a.value.shape))

    return Tensor(out_val, parents=(a,), vjp=vjp)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if not (0 <= start <= stop <= a.value.shape[0]):
        raise IndexError(f"row slice [{start}:{stop}] out of range for shape {a.value.shape}")
    out_val = a.value[start:stop].copy()
    if not _needs_tape(a):
        return Tensor(out_val)

    def vjp(g):
        full = np.zeros_like(a.value)
        full[start:stop] = g
        _accum(a, full)

    return Tensor(out_val, parents=(a,), vjp=vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.value.ndim != 2 or not (0 <= start <= stop <= a.value.shape[1]):
        raise IndexError(f"column slice [{start}:{stop}] out of range for shape {a.value.shape}")
    out_val = a.value[:, start:stop].copy()
    if not _needs_tape(a):
        return Tensor(out_val)

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        _accum(a, full)

    return Tensor(out_val, parents=(a,), vjp=vjp)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_val = np.concatenate([t.value for t in tensors], axis=axis)
    if not any(_needs_tape(t) for t in tensors):
        return Tensor(out_val)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return Tensor(out_val, parents=tuple(tensors), vjp=vjp)


def gather_rows(table: Tensor, ids) -> Tensor:
    """out[i] = table[ids[i]]; the embedding-lookup primitive."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1 or table.value.ndim != 2:
        raise ShapeError(f"gather_rows wants 2-D table and 1-D ids, got {table.value.shape}, {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.value.shape[0]):
        raise IndexError(f"gather_rows ids out of range for table with {table.value.shape[0]} rows")
    out_val = table.value[ids].copy()
    if not _needs_tape(table):
        return Tensor(out_val)

    def vjp(g):
        full = np.zeros_like(table.value)
        np.add.at(full, ids, g)
        _accum(table, full)

    return Tensor(out_val, parents=(table,), vjp=vjp)


# ---------------------------------------------------------------------------
# reductions and nonlinearities
# ---------------------------------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_val = a.value.sum(axis=axis, keepdims=keepdims)
    if not _needs_tape(a):
        return Tensor(out_val)

    def vjp(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.value.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.value.shape).copy())

    return Tensor(out_val, parents=(a,), vjp=vjp)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out_val = np.maximum(a.value, 0.0)
    if not _needs_tape(a):
        return Tensor(out_val)

    def vjp(g):
        _accum(a, g * (a.value > 0))

    return Tensor(out_val, parents=(a,), vjp=vjp)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.value
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_val = x * cdf
    if not _needs_tape(a):
        return Tensor(out_val)

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        _accum(a, g * (cdf + x * pdf))

    return Tensor(out_val, parents=(a,), vjp=vjp)


def softmax(a: Tensor, axis=-1) -> Tensor:
    """Numerically stable softmax along `axis`."""
    a = as_tensor(a)
    if a.value.size == 0:
        raise ValueError("softmax of an empty tensor")
    if not np.all(np.isfinite(a.value)):
        raise NumericError("softmax input contains non-finite values")
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out_val = exps / exps.sum(axis=axis, keepdims=True)
    if not _needs_tape(a):
        return Tensor(out_val)

    def vjp(g):
        dot = (out_val * g).sum(axis=axis, keepdims=True)
        _accum(a, out_val * (g - dot))

    return Tensor(out_val, parents=(a,), vjp=vjp)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] for a 1-D logit vector, fused and stable."""
    logits = as_tensor(logits)
    if logits.value.ndim != 1:
        raise ShapeError(f"cross_entropy wants a 1-D logit vector, got shape {logits.value.shape}")
    n = logits.value.shape[0]
    target = int(target)
    if not (0 <= target < n):
        raise IndexError(f"cross_entropy target {target} out of range for {n} logits")
    x = logits.value
    m = x.max()
    lse = m + np.log(np.exp(x - m).sum())
    out_val = np.asarray(lse - x[target])
    if not _needs_tape(logits):
        return Tensor(out_val)

    def vjp(g):
        p = np.exp(x - lse)
        p[target] -= 1.0
        _accum(logits, g * p)

    return Tensor(out_val, parents=(logits,), vjp=vjp)


def cross_entropy_rows(logits: Tensor, targets, rows) -> Tensor:
    """Mean of -log softmax(logits[r])[targets[r]] over the selected rows."""
    logits = as_tensor(logits)
    if logits.value.ndim != 2:
        raise ShapeError(f"cross_entropy_rows wants 2-D logits, got shape {logits.value.shape}")
    rows = np.asarray(rows, dtype=np.intp)
    targets = np.asarray(targets, dtype=np.intp)
    if rows.size == 0:
        raise ValueError("cross_entropy_rows requires at least one row")
    n, k = logits.value.shape
    sel = logits.value[rows]
    tg = targets[rows]
    if tg.min() < 0 or tg.max() >= k:
        raise IndexError(f"cross_entropy_rows target outside 0..{k - 1}")
    m = sel.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(sel - m).sum(axis=1))
    out_val = np.asarray((lse - sel[np.arange(rows.size), tg]).mean())
    if not _needs_tape(logits):
        return Tensor(out_val)

    def vjp(g):
        p = np.exp(sel - lse[:, None])
        p[np.arange(rows.size), tg] -= 1.0
        full = np.zeros_like(logits.value)
        np.add.at(full, rows, p * (float(g) / rows.size))
        _accum(logits, full)

    return Tensor(out_val, parents=(logits,), vjp=vjp)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; caller only invokes this in training mode."""
    a = as_tensor(a)
    if rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(a.value.shape) >= rate) / (1.0 - rate)
    return mul(a, constant(keep))


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None) -> None:
    """Propagate d(loss)/d(node) through the tape.

    Accumulates into `.grad` of every tensor on the tape. When `params`
    is given, parameters unreachable from `loss` end up with an explicit
    zero gradient of their own shape.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    order = _toposort(loss)
    _accum(loss, np.ones_like(loss.value))
    for node in reversed(order):
        if node._vjp is not None and node.grad is not None:
            node._vjp(node.grad)
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.value)


def grad_check(loss_fn, params, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `loss_fn` must rebuild the loss from the current parameter values and
    be deterministic. Relative error per element is
    |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
    """
    if epsilon <= 0:
        raise ValueError(f"grad_check epsilon must be positive, got {epsilon}")
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss, params)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn().item()
            flat[i] = orig - epsilon
            down = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing parameter element {i}")
            gn = (up - down) / (2.0 * epsilon)
            gai = ga.reshape(-1)[i]
            err = abs(gai - gn) / max(abs(gai), abs(gn), 1e-8)
            worst = max(worst, err)
    return worst


class ParamStore:
    """Named trainable tensors; the unit the optimizer and checkpoints see."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = parameter(value, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.value for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            if name in self._params:
                t = self._params[name]
                if t.value.shape != arr.shape:
                    raise ShapeError(
                        f"checkpoint shape {arr.shape} does not match "
                        f"parameter {name!r} of shape {t.value.shape}"
                    )
                t.value[...] = arr
            else:
                self.add(name, arr)
