"""Dense float64 tensors with a reverse-mode gradient tape and an Adam optimizer.

Ops are plain functions over :class:`Tensor` values. While a :class:`GradTape`
is active (innermost ``with GradTape():`` block), every op whose inputs require
gradients is recorded; ``tape.backward(loss)`` walks the recorded nodes in
reverse and accumulates exact vector-Jacobian products. Without an active tape
ops are pure evaluation and record nothing.

Only the shapes this library needs are supported: scalars, vectors and 2-D
matrices, with explicit (not numpy-general) broadcasting rules.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "ShapeError",
    "as_tensor",
    "add",
    "sub",
    "neg",
    "mul",
    "div",
    "matmul",
    "matvec_add",
    "relu",
    "sigmoid",
    "softmax",
    "concat",
    "slice1d",
    "reshape",
    "tsum",
    "tmean",
    "tabs",
    "clamp_min",
    "cross_entropy",
    "gaussian_smooth_1d",
    "mean_scalars",
    "AdamState",
    "adam_step",
    "CE_PROB_FLOOR",
    "MIN_SMOOTH_SIGMA",
]

CE_PROB_FLOOR = 1e-12
MIN_SMOOTH_SIGMA = 0.25


class ShapeError(ValueError):
    """Raised when an op receives operands of unsupported or mismatched shape."""


class Tensor:
    """A dense float64 array plus a flag marking it as a gradient target."""

    __slots__ = ("values", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        """Copy of the values with no gradient tracking."""
        return Tensor(np.array(self.values, copy=True), requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the module-level functions are the real API.
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

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    """Coerce arrays and scalars to a constant Tensor; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# Gradient tape
# ---------------------------------------------------------------------------

_TAPES = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TAPES, "stack", None)
    if stack is None:
        stack = []
        _TAPES.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], tuple]


class GradTape:
    """Records ops in execution order; backward() replays them reversed.

    Tapes nest: ops record onto the innermost active tape only, so a gradient
    computed under a nested tape (e.g. for an input perturbation) never leaks
    nodes into the enclosing graph.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("GradTape exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, tensor: Tensor) -> Tensor:
        """Mark a non-parameter tensor so ops on it are recorded."""
        tensor.requires_grad = True
        return tensor

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every tensor that requires grad.

        Visits each recorded node exactly once in reverse order; gradients from
        fan-out accumulate additively. Returns a mapping keyed by tensor
        identity (use ``grads[param]``); tensors not reached by the backward
        sweep are absent.
        """
        if not isinstance(loss, Tensor):
            raise TypeError("backward expects a Tensor loss")
        if loss.shape != ():
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        grads: dict[Tensor, np.ndarray] = {loss: np.array(1.0)}
        for node in reversed(self._nodes):
            g_out = grads.get(node.output)
            if g_out is None:
                continue
            partials = node.vjp(g_out)
            for inp, g_in in zip(node.inputs, partials):
                if g_in is None or not inp.requires_grad:
                    continue
                acc = grads.get(inp)
                grads[inp] = g_in if acc is None else acc + g_in
        return grads


def _record(op: str, inputs: tuple[Tensor, ...], out_values: np.ndarray, vjp) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_values, requires_grad=track)
    if track:
        tape._nodes.append(_Node(op, inputs, out, vjp))
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce an upstream gradient back to an operand's (smaller) shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # row-broadcast case: (m, n) gradient onto an (n,) operand
    if len(shape) == 1 and g.ndim == 2 and g.shape[1] == shape[0]:
        return g.sum(axis=0)
    raise ShapeError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    # matrix +/- row vector
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} are incompatible")


# ---------------------------------------------------------------------------
# Arithmetic ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise sum; supports equal shapes, scalar, and matrix+row-vector."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    out = a.values + b.values

    def vjp(g):
        return (_sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape))

    return _record("add", (a, b), out, vjp)


def sub(a, b) -> Tensor:
    """Elementwise difference with the same broadcasting rules as add."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    out = a.values - b.values

    def vjp(g):
        return (_sum_to_shape(g, a.shape), -_sum_to_shape(g, b.shape))

    return _record("sub", (a, b), out, vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (-g,)

    return _record("neg", (a,), -a.values, vjp)


def mul(a, b) -> Tensor:
    """Elementwise product; supports equal shapes or a scalar operand."""
    a, b = as_tensor(a), as_tensor(b)
    if not (a.shape == b.shape or a.shape == () or b.shape == ()):
        raise ShapeError(f"mul: operand shapes {a.shape} and {b.shape} are incompatible")
    av, bv = a.values, b.values
    out = av * bv

    def vjp(g):
        return (_sum_to_shape(g * bv, a.shape), _sum_to_shape(g * av, b.shape))

    return _record("mul", (a, b), out, vjp)


def div(a, b) -> Tensor:
    """Elementwise quotient; divisor must be a scalar or match the shape of a."""
    a, b = as_tensor(a), as_tensor(b)
    if not (b.shape == () or b.shape == a.shape):
        raise ShapeError(f"div: divisor shape {b.shape} incompatible with {a.shape}")
    av, bv = a.values, b.values
    out = av / bv

    def vjp(g):
        ga = g / bv
        gb = _sum_to_shape(-g * av / (bv * bv), b.shape)
        return (ga, gb)

    return _record("div", (a, b), out, vjp)


def matmul(a, b) -> Tensor:
    """Matrix product: (m,n)@(n,k) -> (m,k) or (m,n)@(n,) -> (m,)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2:
        raise ShapeError(f"matmul: left operand must be 2-D, got shape {a.shape}")
    if b.ndim not in (1, 2):
        raise ShapeError(f"matmul: right operand must be 1-D or 2-D, got shape {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, left {a.shape} vs right {b.shape}"
        )
    av, bv = a.values, b.values
    out = av @ bv

    def vjp(g):
        if bv.ndim == 1:
            ga = np.outer(g, bv)
            gb = av.T @ g
        else:
            ga = g @ bv.T
            gb = av.T @ g
        return (ga, gb)

    return _record("matmul", (a, b), out, vjp)


def matvec_add(w, x, b) -> Tensor:
    """Affine map ``w @ x + b`` for a (m,n) matrix, (n,) vector and (m,) bias."""
    w, x, b = as_tensor(w), as_tensor(x), as_tensor(b)
    if w.ndim != 2 or x.ndim != 1:
        raise ShapeError(f"matvec_add: expected matrix and vector, got {w.shape} and {x.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(
            f"matvec_add: x has shape {x.shape}, expected ({w.shape[1]},) to match w {w.shape}"
        )
    if b.shape != (w.shape[0],):
        raise ShapeError(
            f"matvec_add: b has shape {b.shape}, expected ({w.shape[0]},) to match w {w.shape}"
        )
    return add(matmul(w, x), b)


# ---------------------------------------------------------------------------
# Nonlinearities and reductions
# ---------------------------------------------------------------------------


def _require_nonempty(op: str, t: Tensor) -> None:
    if t.size == 0:
        raise ShapeError(f"{op}: empty input")


def relu(x) -> Tensor:
    x = as_tensor(x)
    _require_nonempty("relu", x)
    mask = x.values > 0.0
    out = np.where(mask, x.values, 0.0)

    def vjp(g):
        return (g * mask,)

    return _record("relu", (x,), out, vjp)


def sigmoid(x) -> Tensor:
    """Numerically stable logistic; output is strictly inside (0, 1)."""
    x = as_tensor(x)
    _require_nonempty("sigmoid", x)
    v = x.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", (x,), out, vjp)


def softmax(x) -> Tensor:
    """Max-shifted softmax over a 1-D vector; never overflows on finite input."""
    x = as_tensor(x)
    _require_nonempty("softmax", x)
    if x.ndim != 1:
        raise ShapeError(f"softmax: expected a vector, got shape {x.shape}")
    z = x.values - x.values.max()
    e = np.exp(z)
    out = e / e.sum()

    def vjp(g):
        return (out * (g - np.dot(g, out)),)

    return _record("softmax", (x,), out, vjp)


def concat(parts: Sequence) -> Tensor:
    """Concatenate 1-D tensors in order."""
    ts = tuple(as_tensor(p) for p in parts)
    if not ts:
        raise ShapeError("concat: no inputs")
    for t in ts:
        if t.ndim != 1:
            raise ShapeError(f"concat: expected vectors, got shape {t.shape}")
        _require_nonempty("concat", t)
    lengths = [t.size for t in ts]
    out = np.concatenate([t.values for t in ts])
    offsets = np.cumsum([0] + lengths)

    def vjp(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(ts)))

    return _record("concat", ts, out, vjp)


def slice1d(x, start: int, stop: int) -> Tensor:
    """Contiguous window ``x[start:stop]`` of a vector (0-based, half-open)."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"slice1d: expected a vector, got shape {x.shape}")
    n = x.size
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice1d: window [{start}, {stop}) out of range for length {n}")
    out = x.values[start:stop]

    def vjp(g):
        gx = np.zeros(n)
        gx[start:stop] = g
        return (gx,)

    return _record("slice1d", (x,), np.array(out, copy=True), vjp)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    out = x.values.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _record("reshape", (x,), np.array(out, copy=True), vjp)


def tsum(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = as_tensor(x)

    def vjp(g):
        return (np.full(x.shape, float(g)),)

    return _record("sum", (x,), np.asarray(x.values.sum()), vjp)


def tmean(x) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    x = as_tensor(x)
    _require_nonempty("mean", x)
    n = x.size

    def vjp(g):
        return (np.full(x.shape, float(g) / n),)

    return _record("mean", (x,), np.asarray(x.values.mean()), vjp)


def tabs(x) -> Tensor:
    """Elementwise absolute value; subgradient 0 at exactly 0."""
    x = as_tensor(x)
    s = np.sign(x.values)

    def vjp(g):
        return (g * s,)

    return _record("abs", (x,), np.abs(x.values), vjp)


def clamp_min(x, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient passes only where x > floor."""
    x = as_tensor(x)
    floor = float(floor)
    mask = x.values > floor
    out = np.where(mask, x.values, floor)

    def vjp(g):
        return (g * mask,)

    return _record("clamp_min", (x,), out, vjp)


def cross_entropy(p, y) -> Tensor:
    """``-sum(y * log(p))`` with probabilities floored at CE_PROB_FLOOR.

    The floor keeps the loss finite for zero probabilities; floored entries
    contribute no gradient to p.
    """
    p, y = as_tensor(p), as_tensor(y)
    if p.shape != y.shape or p.ndim != 1:
        raise ShapeError(f"cross_entropy: p has shape {p.shape}, y has shape {y.shape}")
    _require_nonempty("cross_entropy", p)
    safe = np.maximum(p.values, CE_PROB_FLOOR)
    mask = p.values > CE_PROB_FLOOR
    logs = np.log(safe)
    out = np.asarray(-(y.values * logs).sum())
    yv = y.values

    def vjp(g):
        gp = np.where(mask, -float(g) * yv / safe, 0.0)
        gy = -float(g) * logs
        return (gp, gy)

    return _record("cross_entropy", (p, y), out, vjp)


def mean_scalars(terms: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of scalar tensors (tape-tracked)."""
    if not terms:
        raise ShapeError("mean_scalars: no inputs")
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return mul(total, 1.0 / len(terms))


# ---------------------------------------------------------------------------
# Gaussian smoothing
# ---------------------------------------------------------------------------


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps with radius ceil(3*sigma); sigma floored at 0.25."""
    if not sigma > 0.0:
        raise ValueError(f"gaussian_kernel: sigma must be positive, got {sigma}")
    s = max(float(sigma), MIN_SMOOTH_SIGMA)
    radius = int(math.ceil(3.0 * s))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(offsets**2) / (2.0 * s * s))
    return k / k.sum()


def _reflect_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Map out-of-range indices back into [0, n) by symmetric edge reflection."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def gaussian_smooth_1d(x, sigma: float) -> Tensor:
    """Convolve a vector with a normalized Gaussian under reflect padding.

    The taps are a convex combination of in-range samples, so the output stays
    within [min(x), max(x)] and constant inputs pass through unchanged.
    """
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"gaussian_smooth_1d: expected a vector, got shape {x.shape}")
    _require_nonempty("gaussian_smooth_1d", x)
    kernel = gaussian_kernel(sigma)
    radius = (kernel.size - 1) // 2
    n = x.size
    idx = _reflect_indices(np.arange(n)[:, None] + np.arange(-radius, radius + 1)[None, :], n)
    out = (x.values[idx] * kernel).sum(axis=1)

    def vjp(g):
        gx = np.zeros(n)
        np.add.at(gx, idx, g[:, None] * kernel)
        return (gx,)

    return _record("gaussian_smooth_1d", (x,), out, vjp)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(
        cls,
        params: Mapping[str, Tensor],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        state = cls(learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        return state


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
) -> Mapping[str, Tensor]:
    """One bias-corrected Adam update, in place on the parameter buffers.

    A missing or ``None`` gradient is treated as zero (the parameter did not
    participate in this step's graph). Non-finite gradients raise, naming the
    offending parameter.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        if name not in state.m:
            raise KeyError(f"adam_step: no optimizer state for parameter '{name}'")
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.values)
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.values.shape:
                raise ShapeError(
                    f"adam_step: gradient for '{name}' has shape {g.shape}, expected {p.values.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise ValueError(f"adam_step: non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.values -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
