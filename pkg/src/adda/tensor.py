"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: float32 by default (float64 for gradient
checking), no broadcasting, stride-1 unpadded convolution. Every operation
that participates in differentiation records a :class:`TapeNode` on its
output; the tape is the chain of these records hanging off the tensors of
one forward pass. ``backward`` walks it once in reverse topological order
and then marks it consumed — running backward twice on the same forward
pass is an error.

Forward operations validate that their output is finite and raise
:class:`~adda.errors.NumericsError` otherwise; overflow fails fast instead
of propagating NaN into a training run.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericsError, TapeError, ValidationError

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording on this thread."""

    def __enter__(self) -> "no_grad":
        self._prev = _recording()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc) -> bool:
        _state.grad_enabled = self._prev
        return False


class TapeNode:
    """One recorded operation: input references plus its backward rule.

    ``rule(out_grad, needs)`` returns one gradient array per input (None
    where ``needs`` is False). ``consumed`` flips after backward has run.
    """

    __slots__ = ("inputs", "rule", "consumed")

    def __init__(self, inputs: tuple["Tensor", ...], rule: Callable):
        self.inputs = inputs
        self.rule = rule
        self.consumed = False


class Tensor:
    """N-dimensional float array, optionally tracked by the gradient tape."""

    frozen = False  # overridden by Parameter

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            dtype = np.dtype(dtype)
            if dtype not in _ALLOWED_DTYPES:
                raise ValidationError(f"dtype must be float32 or float64, got {dtype}")
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        if any(d < 1 for d in arr.shape):
            raise DimensionError(f"all dimensions must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._op: TapeNode | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A tape-free view of the same data."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad_(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return self.__mul__(other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named trainable tensor. Frozen parameters keep a zero gradient and
    are never touched by an optimizer step."""

    def __init__(self, data, name: str, frozen: bool = False, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.frozen = bool(frozen)

    def copy(self, name: str | None = None, frozen: bool | None = None) -> "Parameter":
        return Parameter(
            self.data.copy(),
            name=self.name if name is None else name,
            frozen=self.frozen if frozen is None else frozen,
        )

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, frozen={self.frozen})"


def _check_finite(arr: np.ndarray, op: str) -> None:
    # min/max propagate NaN and expose +/-inf without allocating a mask
    lo = arr.min()
    hi = arr.max()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise NumericsError(f"{op} produced non-finite values")


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ValidationError(f"{op}: mixed dtypes {sorted(map(str, dtypes))}")


def _wrap(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    _check_finite(out_data, op)
    track = _recording() and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        out._op = TapeNode(inputs, rule)
    return out


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("add", a, b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")

    def rule(g, needs):
        return (g if needs[0] else None, g if needs[1] else None)

    return _wrap("add", a.data + b.data, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data

    def rule(g, needs):
        return (g * bd if needs[0] else None, g * ad if needs[1] else None)

    with np.errstate(over="ignore"):  # overflow is caught by the finiteness check
        out = ad * bd
    return _wrap("mul", out, (a, b), rule)


def scale(a: Tensor, c: float) -> Tensor:
    def rule(g, needs):
        return (g * c if needs[0] else None,)

    return _wrap("scale", a.data * c, (a,), rule)


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape

    def rule(g, needs):
        return (np.broadcast_to(g, shape) if needs[0] else None,)

    return _wrap("sum", a.data.sum(), (a,), rule)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.size and -1 not in shape:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape

    def rule(g, needs):
        return (g.reshape(old) if needs[0] else None,)

    return _wrap("reshape", a.data.reshape(shape), (a,), rule)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # gradient is zero at and below the kink

    def rule(g, needs):
        return (g * mask if needs[0] else None,)

    return _wrap("relu", np.maximum(a.data, 0), (a,), rule)


# ---------------------------------------------------------------------------
# layer ops


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x[N,Din] @ weight[Dout,Din]^T + bias[Dout]."""
    _check_same_dtype("linear", x, weight, bias)
    if x.data.ndim != 2:
        raise DimensionError(f"linear: input must be 2-D, got {x.shape}")
    if weight.data.ndim != 2:
        raise DimensionError(f"linear: weight must be 2-D, got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear: input axis 1 has size {x.shape[1]}, weight axis 1 has size {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    xd, wd = x.data, weight.data

    def rule(g, needs):
        gx = g @ wd if needs[0] else None
        gw = g.T @ xd if needs[1] else None
        gb = g.sum(axis=0) if needs[2] else None
        return gx, gw, gb

    return _wrap("linear", xd @ wd.T + bias.data, (x, weight, bias), rule)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """All k*k patches of x[N,C,H,W] as rows: (N*Ho*Wo, C*k*k)."""
    n, c, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (n, ho, wo, c, k, k), (s0, s2, s3, s1, s2, s3), writeable=False
    )
    return win.reshape(n * ho * wo, c * k * k)


def _col2im(dcol: np.ndarray, shape: tuple[int, ...], k: int) -> np.ndarray:
    """Scatter-add patch-row gradients back onto the input grid."""
    n, c, h, w = shape
    ho, wo = h - k + 1, w - k + 1
    dx = np.zeros(shape, dtype=dcol.dtype)
    d6 = dcol.reshape(n, ho, wo, c, k, k)
    for u in range(k):
        for v in range(k):
            dx[:, :, u : u + ho, v : v + wo] += d6[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return dx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Valid cross-correlation, stride 1, square kernel, per-channel bias."""
    _check_same_dtype("conv2d", x, weight, bias)
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d: input must be N,C,H,W, got {x.shape}")
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"conv2d: weight must be Cout,Cin,K,K, got {weight.shape}")
    n, cin, h, w = x.shape
    cout, cw, k, _ = weight.shape
    if cw != cin:
        raise DimensionError(f"conv2d: input channel axis 1 has size {cin}, weight expects {cw}")
    if k > h:
        raise DimensionError(f"conv2d: kernel {k} exceeds input axis 2 (size {h})")
    if k > w:
        raise DimensionError(f"conv2d: kernel {k} exceeds input axis 3 (size {w})")
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    ho, wo = h - k + 1, w - k + 1
    col = _im2col(x.data, k)  # (N*Ho*Wo, Cin*k*k)
    wf = weight.data.reshape(cout, -1)
    out2 = col @ wf.T
    out2 += bias.data
    out = np.ascontiguousarray(out2.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    xshape = x.shape

    def rule(g, needs):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = _col2im(g2 @ wf, xshape, k) if needs[0] else None
        gw = (g2.T @ col).reshape(cout, cin, k, k) if needs[1] else None
        gb = g2.sum(axis=0) if needs[2] else None
        return gx, gw, gb

    return _wrap("conv2d", out, (x, weight, bias), rule)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping max pool; ties go to the first element in
    row-major window order."""
    if x.data.ndim != 4:
        raise DimensionError(f"maxpool2: input must be N,C,H,W, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 != 0:
        raise DimensionError(f"maxpool2: axis 2 (size {h}) must be even")
    if w % 2 != 0:
        raise DimensionError(f"maxpool2: axis 3 (size {w}) must be even")
    h2, w2 = h // 2, w // 2
    win = (
        x.data.reshape(n, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h2, w2, 4)
    )
    idx = win.argmax(axis=4)  # first occurrence wins ties
    out = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    dtype = x.data.dtype

    def rule(g, needs):
        if not needs[0]:
            return (None,)
        gw = np.zeros((n, c, h2, w2, 4), dtype=dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=4)
        gx = gw.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return _wrap("maxpool2", np.ascontiguousarray(out), (x,), rule)


# ---------------------------------------------------------------------------
# losses


def _as_label_array(labels, n: int, op: str) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.ndim != 1 or lab.shape[0] != n:
        raise DimensionError(f"{op}: expected {n} labels, got shape {lab.shape}")
    if lab.dtype.kind not in "iu":
        raise ValidationError(f"{op}: labels must be integers, got dtype {lab.dtype}")
    return lab


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true class."""
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be 2-D, got {logits.shape}")
    n, k = logits.shape
    lab = _as_label_array(labels, n, "softmax_cross_entropy")
    if lab.min() < 0 or lab.max() >= k:
        raise ValidationError(
            f"softmax_cross_entropy: labels must lie in [0, {k}), got range "
            f"[{lab.min()}, {lab.max()}]"
        )
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    out = (lse[:, 0] - z[rows, lab]).mean()

    def rule(g, needs):
        if not needs[0]:
            return (None,)
        p = np.exp(z - lse)
        p[rows, lab] -= 1
        return (g * p / n,)

    return _wrap("softmax_cross_entropy", np.asarray(out), (logits,), rule)


def sigmoid_bce(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits, log-sum-exp stabilized."""
    d = logits.data
    if d.ndim == 2 and d.shape[1] == 1:
        z = d[:, 0]
    elif d.ndim == 1:
        z = d
    else:
        raise DimensionError(f"sigmoid_bce: logits must be (N,) or (N,1), got {logits.shape}")
    n = z.shape[0]
    t = np.asarray(targets)
    if t.ndim != 1 or t.shape[0] != n:
        raise DimensionError(f"sigmoid_bce: expected {n} targets, got shape {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValidationError("sigmoid_bce: targets must be 0 or 1")
    tf = t.astype(z.dtype)
    out = (np.maximum(z, 0) - z * tf + np.log1p(np.exp(-np.abs(z)))).mean()
    shape = d.shape

    def rule(g, needs):
        if not needs[0]:
            return (None,)
        with np.errstate(over="ignore"):
            sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
        return ((g * (sig - tf) / n).reshape(shape),)

    return _wrap("sigmoid_bce", np.asarray(out), (logits,), rule)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor
    that requires gradients. One pass per forward pass; frozen parameters
    keep their zero gradient."""
    if loss.data.size != 1:
        raise DimensionError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._op is None:
        raise TapeError("backward: loss has no recorded operations")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited or t._op is None:
            continue
        visited.add(id(t))
        stack.append((t, True))
        for inp in t._op.inputs:
            stack.append((inp, False))

    for t in order:
        if t._op.consumed:
            raise TapeError("backward: tape already consumed; run a new forward pass")

    loss.grad[...] = 1
    for t in reversed(order):
        node = t._op
        node.consumed = True
        needs = tuple(inp.requires_grad and not inp.frozen for inp in node.inputs)
        if not any(needs):
            continue
        grads = node.rule(t.grad, needs)
        for inp, g, need in zip(node.inputs, grads, needs):
            if need and g is not None:
                inp.grad += g


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-4) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` must be scalar-valued and finite near ``x``. The analytic gradient
    comes from one taped forward/backward; the numeric one re-evaluates ``f``
    twice per coordinate with the tape off.
    """
    base = Tensor(x.data.copy(), requires_grad=True)
    out = f(base)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValidationError("finite_diff_check: f must return a scalar tensor")
    if not np.isfinite(out.data).all():
        raise NumericsError("finite_diff_check: f(x) is not finite")
    backward(out)
    analytic = base.grad.reshape(-1).copy()

    flat = base.data.reshape(-1)
    numeric = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f(Tensor(base.data)).data)
            flat[i] = orig - step
            fm = float(f(Tensor(base.data)).data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * step)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max())
