"""Dense float64 tensors with a reverse-mode differentiation tape.

Operations record themselves onto the innermost active ``Tape``. Running
``backward`` on a scalar result replays the tape in reverse and accumulates
gradients into every participating tensor's ``.grad`` buffer. Outside a tape
context the same operations run forward-only, which keeps pure inference
cheap and side-effect free.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ConfigurationError, NonFiniteError

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations for one forward pass.

    Records are appended in execution order, so every operation's inputs
    precede it and a single reversed sweep visits each node exactly once.
    """

    def __init__(self):
        self.records = []  # (out, parents, backward_fn)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self.records)


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _check_finite(arr, what="tensor values"):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite entries in {what}")


class Tensor:
    """A dense n-d float64 array, optionally tracked for differentiation."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        _check_finite(self.values)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g
        _check_finite(self.grad, "gradient")

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def tanh(self):
        return tanh_map(self)

    def transpose(self):
        return transpose2d(self)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, parents, backward_fn):
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.records.append((out, parents, backward_fn))
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    out = Tensor(a.values + b.values)

    def backward(g):
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]

    return _record(out, [a, b], backward)


def mul(a, b):
    out = Tensor(a.values * b.values)

    def backward(g):
        return [_unbroadcast(g * b.values, a.shape),
                _unbroadcast(g * a.values, b.shape)]

    return _record(out, [a, b], backward)


def scale(a, s):
    s = float(s)
    out = Tensor(a.values * s)

    def backward(g):
        return [g * s]

    return _record(out, [a], backward)


def tanh_map(a):
    out = Tensor(np.tanh(a.values))
    y = out.values

    def backward(g):
        return [g * (1.0 - y * y)]

    return _record(out, [a], backward)


def matmul(a, b):
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = Tensor(a.values @ b.values)

    def backward(g):
        return [g @ b.values.T, a.values.T @ g]

    return _record(out, [a, b], backward)


def transpose2d(a):
    if a.values.ndim != 2:
        raise DimensionError(f"transpose2d expects a 2-d tensor, got {a.shape}")
    out = Tensor(a.values.T)

    def backward(g):
        return [g.T]

    return _record(out, [a], backward)


def concat_axis(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat_axis needs at least one tensor")
    rank = tensors[0].values.ndim
    if axis >= rank:
        raise DimensionError(f"concat axis {axis} out of range for rank {rank}")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        if len(s) != rank or any(s[i] != ref[i] for i in range(rank) if i != axis):
            raise DimensionError(f"concat shapes incompatible: {tensors[0].shape} vs {t.shape}")
    out = Tensor(np.concatenate([t.values for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        return list(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _record(out, tensors, backward)


def narrow(a, axis, start, size):
    """Contiguous slice of length `size` along `axis`."""
    if axis >= a.values.ndim:
        raise DimensionError(f"narrow axis {axis} out of range for shape {a.shape}")
    if start < 0 or start + size > a.shape[axis]:
        raise DimensionError(f"narrow [{start}:{start + size}) exceeds axis {axis} of {a.shape}")
    idx = tuple(slice(start, start + size) if d == axis else slice(None)
                for d in range(a.values.ndim))
    out = Tensor(a.values[idx])

    def backward(g):
        full = np.zeros_like(a.values)
        full[idx] = g
        return [full]

    return _record(out, [a], backward)


def sum_all(a):
    out = Tensor(a.values.sum())

    def backward(g):
        return [np.broadcast_to(g, a.shape).astype(np.float64)]

    return _record(out, [a], backward)


def max_axis(a, axis, keepdims=True):
    """Max reduction over one axis of a 2-d tensor; ties route to the first hit."""
    if a.values.ndim != 2:
        raise DimensionError(f"max_axis expects a 2-d tensor, got {a.shape}")
    out = Tensor(a.values.max(axis=axis, keepdims=keepdims))
    arg = a.values.argmax(axis=axis)

    def backward(g):
        gx = np.zeros_like(a.values)
        gflat = g.reshape(-1)
        if axis == 0:
            gx[arg, np.arange(a.shape[1])] = gflat
        else:
            gx[np.arange(a.shape[0]), arg] = gflat
        return [gx]

    return _record(out, [a], backward)


def softmax_axis(a, axis):
    """Numerically stable softmax along `axis`; slices sum to one."""
    if axis >= a.values.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for shape {a.shape}")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        return [y * (g - (g * y).sum(axis=axis, keepdims=True))]

    return _record(out, [a], backward)


def conv1d_same(x, w, b):
    """1-d cross-correlation over the time axis with same-length zero padding.

    x: (Cin, N), w: (Cout, Cin, width) with odd width, b: (Cout,).
    """
    if x.values.ndim != 2 or w.values.ndim != 3 or b.values.ndim != 1:
        raise DimensionError(
            f"conv1d_same expects x(Cin,N), w(Cout,Cin,width), b(Cout); "
            f"got {x.shape}, {w.shape}, {b.shape}")
    cout, cin, width = w.shape
    if width % 2 == 0:
        raise ConfigurationError(f"convolution width must be odd, got {width}")
    if x.shape[0] != cin or b.shape[0] != cout:
        raise DimensionError(
            f"conv1d_same channel mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    n = x.shape[1]
    pad = (width - 1) // 2
    xpad = np.zeros((cin, n + width - 1))
    xpad[:, pad:pad + n] = x.values
    windows = np.stack([xpad[:, k:k + n] for k in range(width)], axis=1)  # (Cin,width,N)
    out = Tensor(np.einsum("ocw,cwn->on", w.values, windows) + b.values[:, None])

    def backward(g):
        gw = np.einsum("on,cwn->ocw", g, windows)
        gb = g.sum(axis=1)
        gxpad = np.zeros_like(xpad)
        for k in range(width):
            gxpad[:, k:k + n] += np.einsum("oc,on->cn", w.values[:, :, k], g)
        return [gxpad[:, pad:pad + n], gw, gb]

    return _record(out, [x, w, b], backward)


# ---------------------------------------------------------------------------
# fused losses
# ---------------------------------------------------------------------------

def cross_entropy_logits(logits, label):
    """Softmax cross-entropy of a (1, K) logit row against one class index."""
    z = logits.values.reshape(-1)
    k = z.shape[0]
    if not 0 <= label < k:
        raise DimensionError(f"label {label} out of range for {k} classes")
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    out = Tensor(lse - z[label])
    p = np.exp(z - lse)

    def backward(g):
        gz = p.copy()
        gz[label] -= 1.0
        return [(float(g) * gz).reshape(logits.shape)]

    return _record(out, [logits], backward)


def multilabel_logistic_loss(logits, targets):
    """Mean per-class logistic loss of (1, K) logits against a 0/1 vector."""
    z = logits.values.reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if z.shape != y.shape:
        raise DimensionError(f"logits ({z.shape[0]}) vs targets ({y.shape[0]}) length mismatch")
    k = z.shape[0]
    # log(1 + exp(z)) - y*z, computed stably
    out = Tensor((np.logaddexp(0.0, z) - y * z).mean())
    sig = 1.0 / (1.0 + np.exp(-z))

    def backward(g):
        return [(float(g) * (sig - y) / k).reshape(logits.shape)]

    return _record(out, [logits], backward)


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------

def backward(loss, tape, params=None):
    """Accumulate d(loss)/d(tensor) into .grad for everything on the tape.

    `loss` must be a scalar recorded on `tape`. Parameters not reachable from
    the loss keep (or receive) an all-zero gradient.
    """
    if loss.values.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            if p.grad is None:
                p.zero_grad()
    loss.grad = np.ones_like(loss.values)
    for out, parents, fn in reversed(tape.records):
        if out.grad is None:
            continue
        for parent, g in zip(parents, fn(out.grad)):
            if parent.requires_grad and g is not None:
                parent.accumulate_grad(g)


def finite_difference_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f w.r.t. array x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def relative_error(a, b):
    """max_i |a_i - b_i| / max(1, |a_i|, |b_i|), a scale-aware gradcheck metric."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / denom).max())


def gradient_check(build_loss, params, eps=1e-6):
    """Compare reverse-mode gradients of `build_loss()` against central differences.

    `build_loss` evaluates the scalar loss from the current values of `params`
    (a list of Tensors). Returns the max relative error over all parameters.
    """
    with Tape() as tape:
        loss = build_loss()
    backward(loss, tape, params=params)
    worst = 0.0
    for p in params:
        def f(arr, _p=p):
            old = _p.values
            _p.values = arr
            try:
                return build_loss().item()
            finally:
                _p.values = old
        num = finite_difference_grad(f, p.values.copy(), eps=eps)
        worst = max(worst, relative_error(p.grad, num))
    return worst
