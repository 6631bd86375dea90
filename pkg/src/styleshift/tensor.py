"""Dense numpy tensors with reverse-mode automatic differentiation.

Every differentiable primitive builds an output :class:`Tensor` that records its
parents and a vector-Jacobian-product closure. Node ids come from a global
counter, so the append order of the graph is the id order; :meth:`Tensor.backward`
walks the ancestors of the loss in strictly decreasing id order.

Gradients accumulate on leaf tensors (and tensors marked with ``retain_grad``)
until they are explicitly reset with :meth:`Tensor.zero_grad`.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5
LOG_FLOOR = 1e-12

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Operands of a primitive have incompatible shapes."""


def _shape_error(op: str, *shapes) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes))


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new tensors (e.g. ``np.float64`` for checks)."""
    old = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def no_grad():
    old = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "retain", "op", "id", "_parents", "_need", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or default_dtype())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.retain = False
        self.op = "leaf"
        self.id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._need: tuple[bool, ...] = ()
        self._vjp: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def retain_grad(self) -> "Tensor":
        self.retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``grad`` on every leaf ancestor (accumulating into existing grads)."""
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
        if not self.requires_grad:
            return
        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node.id in nodes:
                continue
            nodes[node.id] = node
            stack.extend(p for p, need in zip(node._parents, node._need) if need)
        grads = {self.id: np.ones_like(self.data)}
        for nid in sorted(nodes, reverse=True):
            node = nodes[nid]
            g = grads.pop(nid, None)
            if g is None:
                continue
            if node._vjp is None or node.retain:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, need, pg in zip(node._parents, node._need, node._vjp(g)):
                if pg is None or not need:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype)


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.retain = False
    out.op = op
    out.id = next(_ids)
    need = grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = need
    out._parents = tuple(parents) if need else ()
    # flags are captured now so that later toggling (e.g. unfreezing) cannot leak gradients
    out._need = tuple(p.requires_grad for p in parents) if need else ()
    out._vjp = vjp if need else None
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _lift(a, b)
    b = _lift(b, a)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _node(
        ad * bd,
        (a, b),
        lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    """Natural log with inputs clamped from below at ``LOG_FLOOR``."""
    safe = np.maximum(x.data, LOG_FLOOR)
    live = x.data >= LOG_FLOOR
    return _node(np.log(safe), (x,), lambda g: (g * live / safe,), "log")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _node(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor, op: str = "matmul") -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error(op, a.shape, b.shape)
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        if ga is not None:
            ga = unbroadcast(ga, ad.shape)
        return ga, gb

    return _node(out, (a, b), vjp, op)


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w, op="affine")
    return y if b is None else add(y, b)


def embedding(ids, table: Tensor) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise _shape_error("embedding", ids.shape, table.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def vjp(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _node(table.data[ids], (table,), vjp, "embedding")


def soft_embed(dist: Tensor, table: Tensor) -> Tensor:
    """Expected embedding ``dist @ table`` of distributions over the vocabulary."""
    if table.ndim != 2 or dist.shape[-1] != table.shape[0]:
        raise _shape_error("soft_embed", dist.shape, table.shape)
    if dist.ndim == 1:
        return reshape(matmul(reshape(dist, (1, -1)), table, op="soft_embed"), (table.shape[1],))
    return matmul(dist, table, op="soft_embed")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise _shape_error("layer_norm", x.shape, gamma.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    n = xd.shape[-1]

    def vjp(g):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (g * xhat).reshape(-1, n).sum(axis=0)
        if beta.requires_grad:
            gbeta = g.reshape(-1, n).sum(axis=0)
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return _node(xhat * gd + beta.data, (x, gamma, beta), vjp, "layer_norm")


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention over the last two axes.

    ``mask`` is a boolean array broadcastable to the score shape ``(..., Tq, Tk)``;
    ``True`` marks positions that may be attended to.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2]:
        raise _shape_error("attention", q.shape, k.shape, v.shape)
    scale = 1.0 / np.sqrt(q.shape[-1])
    qd, kd, vd = q.data, k.data, v.data
    scores = np.matmul(qd, np.swapaxes(kd, -1, -2)) * scale
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    out = np.matmul(w, vd)

    def vjp(g):
        gv = np.matmul(np.swapaxes(w, -1, -2), g)
        gw = np.matmul(g, np.swapaxes(vd, -1, -2))
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True)) * scale
        gq = np.matmul(gs, kd)
        gk = np.matmul(np.swapaxes(gs, -1, -2), qd)
        return gq, gk, gv

    return _node(out.astype(qd.dtype, copy=False), (q, k, v), vjp, "attention")


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid 1-D convolution over time.

    ``x``: (B, T, E); ``w``: (K, E, F); ``b``: (F,) -> (B, T - K + 1, F).
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1] or b.shape != (w.shape[2],):
        raise _shape_error("conv1d", x.shape, w.shape)
    bsz, t, e = x.shape
    k, _, f = w.shape
    if t < k:
        raise _shape_error("conv1d", x.shape, w.shape)
    tout = t - k + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)  # (B, T', E, K)
    cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(bsz, tout, k * e)
    wmat = w.data.reshape(k * e, f)
    out = cols @ wmat + b.data

    def vjp(g):
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(bsz, tout, k, e)
            gx = np.zeros(x.shape, dtype=g.dtype)
            for j in range(k):
                gx[:, j : j + tout] += gcols[:, :, j]
        if w.requires_grad:
            gw = (cols.reshape(-1, k * e).T @ g.reshape(-1, f)).reshape(w.shape)
        if b.requires_grad:
            gb = g.reshape(-1, f).sum(axis=0)
        return gx, gw, gb

    return _node(out, (x, w, b), vjp, "conv1d")


def max_over_time(x: Tensor, valid: np.ndarray | None = None) -> Tensor:
    """Max over axis 1 of (B, T, F); ``valid`` (B, T) masks out positions."""
    xd = x.data
    if valid is not None:
        if valid.shape != xd.shape[:2]:
            raise _shape_error("max_over_time", xd.shape, valid.shape)
        xd = np.where(valid[:, :, None], xd, -np.inf)
    idx = xd.argmax(axis=1)  # (B, F)
    out = np.take_along_axis(x.data, idx[:, None, :], axis=1)[:, 0, :]
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, idx[:, None, :], g[:, None, :], axis=1)
        return (gx,)

    return _node(out, (x,), vjp, "max_over_time")


# ---------------------------------------------------------------- softmax family


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    return _node(p, (x,), lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _node(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


def softmax_with_temperature(logits: Tensor, tau: float) -> Tensor:
    """``softmax(logits / tau)`` over the last axis."""
    if not tau > 0:
        raise ValueError(f"softmax_with_temperature: tau must be positive, got {tau}")
    return softmax(mul(logits, 1.0 / tau))


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Per-row negative log-likelihood of integer ``targets``; shape ``logits.shape[:-1]``."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise _shape_error("cross_entropy", logits.shape, targets.shape)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    out = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]

    def vjp(g):
        grad = np.exp(logp)
        np.put_along_axis(
            grad, targets[..., None], np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1
        )
        return (grad * g[..., None],)

    return _node(out, (logits,), vjp, "cross_entropy")


def pick(x: Tensor, index) -> Tensor:
    """Gather ``x[..., index]`` along the last axis with one index per row."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape != x.shape[:-1]:
        raise _shape_error("pick", x.shape, index.shape)
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, index[..., None], g[..., None], axis=-1)
        return (gx,)

    return _node(np.take_along_axis(x.data, index[..., None], axis=-1)[..., 0], (x,), vjp, "pick")


# ---------------------------------------------------------------- reductions and shape


def tsum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.asarray(out, dtype=x.dtype), (x,), vjp, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis), 1.0 / n)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    ref = xs[0].shape
    ax = axis % len(ref)
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise _shape_error("concat", ref, t.shape)
    sizes = np.cumsum([t.shape[ax] for t in xs])[:-1]
    return _node(np.concatenate([t.data for t in xs], axis=ax), xs, lambda g: tuple(np.split(g, sizes, axis=ax)), "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    for t in xs[1:]:
        if t.shape != xs[0].shape:
            raise _shape_error("stack", xs[0].shape, t.shape)
    return _node(
        np.stack([t.data for t in xs], axis=axis),
        xs,
        lambda g: tuple(np.moveaxis(g, axis, 0)),
        "stack",
    )


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, index, g)
        return (gx,)

    return _node(x.data[index], (x,), vjp, "getitem")


# ---------------------------------------------------------------- verification


def finite_difference_check(
    fn: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between the analytic gradient of ``fn`` and central differences.

    Runs in 64-bit. The per-coordinate error is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps coordinates whose true gradient is ~0 from reporting pure rounding noise.
    NaN anywhere yields ``inf``.
    """
    if not 1e-6 <= step <= 1e-3:
        raise ValueError(f"finite_difference_check: step {step} outside [1e-6, 1e-3]")
    with precision(np.float64):
        base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
        x = Tensor(base.copy(), requires_grad=True)
        out = fn(x)
        out.backward()
        analytic = np.zeros_like(base) if x.grad is None else x.grad
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        for i in range(flat.size):
            plus = flat.copy()
            plus[i] += step
            minus = flat.copy()
            minus[i] -= step
            with no_grad():
                fp = fn(Tensor(plus.reshape(base.shape))).item()
                fm = fn(Tensor(minus.reshape(base.shape))).item()
            numeric.reshape(-1)[i] = (fp - fm) / (2 * step)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        return float("inf")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = np.abs(analytic - numeric) / denom
    return float(err.max()) if err.size else 0.0


# ---------------------------------------------------------------- optimisation


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    step_count: int,
) -> None:
    """In-place Adam update of ``param`` and its moment buffers (``step_count`` starts at 1)."""
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise _shape_error("adam_step", param.shape, grad.shape, m.shape, v.shape)
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**step_count)
    vhat = v / (1.0 - beta2**step_count)
    param -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(param.dtype, copy=False)


class Adam:
    """Adam over a name -> Tensor mapping; skips parameters without a gradient."""

    def __init__(self, params: dict[str, Tensor], lr=3e-4, betas=(0.9, 0.98), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adam_step(p.data, p.grad.astype(p.dtype, copy=False), self.m[name], self.v[name],
                      self.lr, self.beta1, self.beta2, self.eps, self.t)


def parameters_require_grad(params: Iterable[Tensor], flag: bool) -> None:
    for p in params:
        p.requires_grad = flag
