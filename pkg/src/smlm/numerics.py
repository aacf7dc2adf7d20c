"""Dense tensor math with reverse-mode gradients.

A small tape-based autodiff layer over numpy arrays, sized for the needs of
the note-set encoder network: affine maps, batched matmul for attention,
layer norm, GELU, stable softmax and log-space cross entropy. Operations run
in float32 by default; everything also works in float64, which the gradient
check tests rely on.

Operations executed while a GradientTape is active record backward closures
on it; without an active tape they are plain numpy calls.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf


class ContractViolation(ValueError):
    """An operation was called with inputs outside its contract."""


DEFAULT_DTYPE = np.float32

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Immutable-by-convention wrapper around a contiguous numpy array."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def tensor(data, dtype=None) -> Tensor:
    return data if isinstance(data, Tensor) and dtype is None else Tensor(data, dtype)


def zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


# ---------------------------------------------------------------------------
# Gradient tape

_ACTIVE_TAPES: list["GradientTape"] = []


class GradientTape:
    """Records primitive operations so gradients can be accumulated backward.

    Entries are replayed in reverse recording order, which is a valid
    topological order of the forward graph, so each node is visited exactly
    once. Tapes are single-threaded and must not be shared.
    """

    def __init__(self):
        # each entry: (output Tensor, input Tensors, backward fn)
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], callable]] = []
        self._tracked: set[int] = set()
        self._keepalive: list[Tensor] = []

    def __enter__(self) -> "GradientTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.remove(self)
        return False

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self._tracked.add(id(t))
            self._keepalive.append(t)

    def _tracks_any(self, tensors) -> bool:
        return any(id(t) in self._tracked for t in tensors)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        self._entries.append((out, inputs, backward))
        self._tracked.add(id(out))
        self._keepalive.append(out)

    def __len__(self) -> int:
        return len(self._entries)

    def gradients(self, loss: Tensor, sources: list[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar `loss` w.r.t. `sources`.

        Sources that `loss` does not reach get zero gradients of their own
        shape.
        """
        if loss.size != 1:
            raise ContractViolation(
                f"backward seed must be scalar, got shape {loss.shape}"
            )
        grads: dict[int, np.ndarray] = {
            id(loss): np.ones_like(loss.data)
        }
        for out, inputs, backward in reversed(self._entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward(g)):
                if gi is None:
                    continue
                acc = grads.get(id(inp))
                grads[id(inp)] = gi if acc is None else acc + gi
        result = []
        for src in sources:
            g = grads.get(id(src))
            if g is None:
                g = np.zeros_like(src.data)
            assert g.shape == src.data.shape
            result.append(g)
        return result


def gradients(tape: GradientTape, loss: Tensor, sources: list[Tensor]) -> list[np.ndarray]:
    return tape.gradients(loss, sources)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype in (np.float32, np.float64):
        return Tensor(arr)
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(arr.astype(dtype))


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _ACTIVE_TAPES:
        tape = _ACTIVE_TAPES[-1]
        if tape._tracks_any(inputs):
            tape._record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the primal shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitives


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _emit(out, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out = a.data * np.asarray(s, dtype=a.dtype)

    def backward(g):
        return (g * np.asarray(s, dtype=g.dtype),)

    return _emit(out, (a,), backward)


def matmul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractViolation("matmul operands must have at least 2 dims")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ContractViolation(
            f"matmul inner extents disagree: {a.data.shape} @ {b.data.shape}"
        )
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _emit(out, (a, b), backward)


def affine(x, w, b) -> Tensor:
    """y = x @ w + b, row-wise. x: [n, in], w: [in, out], b: [out]."""
    x = _as_tensor(x)
    w = _as_tensor(w, like=x)
    b = _as_tensor(b, like=x)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ContractViolation(
            f"affine inner extents disagree: {x.data.shape} vs {w.data.shape}"
        )
    if b.data.shape != (w.data.shape[1],):
        raise ContractViolation(
            f"affine bias shape {b.data.shape} does not match output {w.data.shape[1]}"
        )
    return add(matmul(x, w), b)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return _emit(out, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return _emit(out, (a,), backward)


def gelu(a) -> Tensor:
    """Exact erf-based GELU."""
    a = _as_tensor(a)
    x = a.data
    out = 0.5 * x * (1.0 + erf(x * _INV_SQRT2))

    def backward(g):
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _emit(out.astype(x.dtype), (a,), backward)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum()

    def backward(g):
        return (np.broadcast_to(g, a.data.shape).astype(a.dtype),)

    return _emit(np.asarray(out, dtype=a.dtype), (a,), backward)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    out = a.data.mean()

    def backward(g):
        return ((np.broadcast_to(g, a.data.shape) / n).astype(a.dtype),)

    return _emit(np.asarray(out, dtype=a.dtype), (a,), backward)


def softmax(z, temperature: float = 1.0) -> Tensor:
    """Stable softmax over the last axis after dividing logits by temperature."""
    z = _as_tensor(z)
    if not temperature > 0:
        raise ContractViolation(f"temperature must be positive, got {temperature}")
    if z.data.shape[-1] < 1:
        raise ContractViolation("softmax needs at least one logit")
    scaled = z.data / np.asarray(temperature, dtype=z.dtype)
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return ((p * (g - inner) / temperature).astype(z.dtype),)

    return _emit(p.astype(z.dtype), (z,), backward)


def layer_norm(x, gain, shift, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (1/d), then scale and shift."""
    x = _as_tensor(x)
    gain = _as_tensor(gain, like=x)
    shift = _as_tensor(shift, like=x)
    if not eps > 0:
        raise ContractViolation(f"eps must be positive, got {eps}")
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or shift.data.shape != (d,):
        raise ContractViolation("layer_norm gain/shift must match the last axis")
    mean = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = gain.data * xhat + shift.data

    def backward(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = rstd * (dxhat - m1 - xhat * m2)
        dgain = _unbroadcast(g * xhat, gain.data.shape)
        dshift = _unbroadcast(g, shift.data.shape)
        return dx.astype(x.dtype), dgain.astype(x.dtype), dshift.astype(x.dtype)

    return _emit(out.astype(x.dtype), (x, gain, shift), backward)


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def cross_entropy(logits, target: int) -> Tensor:
    """-log softmax(logits)[target] for a 1-D logit vector, in log space."""
    logits = _as_tensor(logits)
    z = logits.data
    if z.ndim != 1:
        raise ContractViolation(f"cross_entropy expects 1-D logits, got {z.shape}")
    k = z.shape[0]
    target = int(target)
    if not 0 <= target < k:
        raise ContractViolation(f"target {target} out of range for {k} classes")
    logp = _log_softmax_np(z)
    out = np.asarray(-logp[target], dtype=z.dtype)

    def backward(g):
        p = np.exp(logp)
        p[target] -= 1.0
        return ((g * p).astype(z.dtype),)

    return _emit(out, (logits,), backward)


def nll_rows(logits, targets) -> Tensor:
    """Per-row negative log-likelihood. logits: [..., k], targets: int array [...]."""
    logits = _as_tensor(logits)
    z = logits.data
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != z.shape[:-1]:
        raise ContractViolation(
            f"targets shape {t.shape} does not match logits rows {z.shape[:-1]}"
        )
    k = z.shape[-1]
    if t.size and (t.min() < 0 or t.max() >= k):
        raise ContractViolation("target index out of range")
    logp = _log_softmax_np(z)
    picked = np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    out = -picked

    def backward(g):
        p = np.exp(logp)
        np.put_along_axis(
            p, t[..., None], np.take_along_axis(p, t[..., None], axis=-1) - 1.0, axis=-1
        )
        return ((g[..., None] * p).astype(z.dtype),)

    return _emit(out.astype(z.dtype), (logits,), backward)


# ---------------------------------------------------------------------------
# Finite differences, used by tests as the independent oracle


def finite_difference(f, arrays: list[np.ndarray], h: float = 1e-4) -> list[np.ndarray]:
    """Central-difference gradients of scalar f(*arrays) w.r.t. each array.

    Arrays should be float64 for the stated tolerances to hold.
    """
    grads = []
    for idx, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*arrays))
            flat[i] = orig - h
            fm = float(f(*arrays))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, 1), a scale-aware comparison."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
