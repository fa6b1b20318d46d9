"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the handful of operations the graph-to-sequence model needs are
provided. Every operation is recorded on the active :class:`Tape` when at
least one input requires a gradient; outside of a tape the same functions
run as plain numpy code.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

RNG_ALGORITHM = "philox4x64"


class NumericError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __neg__ = lambda self: scale(self, -1.0)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __getitem__ = lambda self, idx: index(self, idx)  # noqa: E731

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations executed inside the ``with`` block
    are appended in execution order and :meth:`backward` replays them in
    reverse. The tape is not cleared by ``backward`` so calling it twice
    accumulates twice.
    """

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if loss.data.size != 1:
                raise ValueError("backward needs a scalar loss or an explicit seed")
            seed = np.ones_like(loss.data)
        if loss._leaf:
            if loss.requires_grad:
                loss.grad += seed
            return
        grads: dict[int, np.ndarray] = {id(loss): np.array(seed, dtype=np.float64)}
        for out, inputs, backward in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = backward(g)
            for inp, gi in zip(inputs, in_grads):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if inp._leaf:
                    inp.grad += gi
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi


_TAPES: list[Tape] = []
_CHECK_FINITE = True


def _result(data: np.ndarray, inputs: tuple, backward: Callable, op: str) -> Tensor:
    if _CHECK_FINITE and not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    out._leaf = True
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs and _TAPES:
        out._leaf = False
        _TAPES[-1].records.append((out, inputs, backward))
    elif needs:
        # computed outside any tape: behaves as a constant
        out.requires_grad = False
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x)
    return _result(y, (a,), lambda g: (g / x,), "log")


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is True by ``value``."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    keep = ~mask
    return _result(np.where(mask, value, a.data), (a,), lambda g: (g * keep,), "masked_fill")


# ------------------------------------------------------------------- shaping


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a: Tensor) -> Tensor:
    return _result(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "swap_last")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(data, tuple(tensors), backward, "concat")


def split(a: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    bounds = np.cumsum([0, *sizes])
    if bounds[-1] != a.shape[axis]:
        raise ValueError(f"split sizes {list(sizes)} do not cover axis of length {a.shape[axis]}")
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(lo, hi)
        out.append(index(a, tuple(idx)))
    return out


def index(a: Tensor, idx) -> Tensor:
    shape = a.shape
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(np.array(a.data[idx]), (a,), backward, "index")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of ``weight``; gradients scatter back onto those rows."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = weight.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return _result(weight.data[ids], (weight,), backward, "embedding")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _result(
        data,
        tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


# ------------------------------------------------------------------ reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / n)


# -------------------------------------------------------------------- linear


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul operands need at least two dimensions")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {ad.shape} x {bd.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                # shared weight matrix: fold leading dims into one product
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), backward, "matmul")


def bilinear(x, U, y) -> Tensor:
    """``out[..., r] = sum_ab x[..., a] U[a, r, b] y[..., b]``.

    Leading dimensions of ``x`` and ``y`` broadcast against each other, so
    all-pairs scoring is ``bilinear(x[:, None], U, y[:, :, None])``.
    """
    x, U, y = as_tensor(x), as_tensor(U), as_tensor(y)
    xd, Ud, yd = x.data, U.data, y.data
    a, r, b = Ud.shape
    if xd.shape[-1] != a or yd.shape[-1] != b:
        raise ValueError(f"bilinear shape mismatch: {xd.shape}, {Ud.shape}, {yd.shape}")
    # tmp[..., a, r] = sum_b U[a, r, b] y[..., b]
    tmp = (yd.reshape(-1, b) @ Ud.reshape(a * r, b).T).reshape(*yd.shape[:-1], a, r)
    out = np.matmul(xd[..., None, :], tmp)[..., 0, :]

    def backward(g):
        gx = gU = gy = None
        if x.requires_grad:
            gx = _unbroadcast(np.matmul(tmp, g[..., :, None])[..., 0], xd.shape)
        if U.requires_grad or y.requires_grad:
            gtmp = _unbroadcast(xd[..., :, None] * g[..., None, :], tmp.shape)
            gtmp2 = gtmp.reshape(-1, a * r)
            if y.requires_grad:
                gy = (gtmp2 @ Ud.reshape(a * r, b)).reshape(yd.shape)
            if U.requires_grad:
                ybr = np.broadcast_to(yd, (*tmp.shape[:-2], b)).reshape(-1, b)
                gU = (gtmp2.T @ ybr).reshape(a, r, b)
        return gx, gU, gy

    return _result(out, (x, U, y), backward, "bilinear")


# -------------------------------------------------------------- normalisation


def masked_softmax(x: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; entries with ``mask == False`` get probability 0."""
    xd = x.data
    if mask is None:
        z = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("masked_softmax: fully masked slice")
        z = np.where(mask, xd, -np.inf)
        z = z - z.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward, "masked_softmax")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return masked_softmax(x, None, axis)


def log_softmax(x: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Log-softmax; masked entries are returned as 0 and receive no gradient."""
    xd = x.data
    if mask is None:
        z = xd - xd.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
        y = z - lse
        p = np.exp(y)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("log_softmax: fully masked slice")
        z = np.where(mask, xd, -np.inf)
        z = z - z.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(z), 0.0)
        lse = np.log(e.sum(axis=axis, keepdims=True))
        y = np.where(mask, z - lse, 0.0)
        p = np.where(mask, np.exp(y), 0.0)

    def backward(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(y, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _result(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or ``rng`` is None."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------- losses


def cross_entropy(target, logits: Tensor, mask=None, axis: int = -1, reduction: str = "sum") -> Tensor:
    """``-sum(target * log_softmax(logits))``.

    ``reduction``: ``"sum"`` over everything, ``"batchmean"`` divides that sum
    by the size of the leading dimension, ``"none"`` keeps one value per row.
    """
    target = _data(target)
    if target.shape != logits.shape:
        raise ValueError(f"cross_entropy shape mismatch: {target.shape} vs {logits.shape}")
    lp = log_softmax(logits, mask, axis)
    rows = scale(tsum(mul(lp, target), axis=axis), -1.0)
    return _reduce(rows, reduction)


def mse(a, b, reduction: str = "mean") -> Tensor:
    d = sub(a, b)
    sq = mul(d, d)
    if reduction == "mean":
        return mean(sq)
    return _reduce(sq, reduction)


def _reduce(t: Tensor, reduction: str) -> Tensor:
    if reduction == "none":
        return t
    if reduction == "sum":
        return tsum(t)
    if reduction == "batchmean":
        return scale(tsum(t), 1.0 / t.shape[0])
    if reduction == "mean":
        return mean(t)
    raise ValueError(f"unknown reduction {reduction!r}")


# ------------------------------------------------------------------- utilities


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used for initialisation and dropout masks."""
    return np.random.Generator(np.random.Philox(int(seed)))


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between tape and central-difference gradients.

    The per-coordinate error is ``|g_ad - g_fd| / max(1, |g_ad| + |g_fd|)``.
    ``f`` must be deterministic. With ``max_coords`` only that many randomly
    chosen coordinates per tensor are probed.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: non-finite objective")
    tape.backward(loss)
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        g_ad = p.grad.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("grad_check: non-finite objective")
            g_fd = (fp - fm) / (2 * eps)
            err = abs(g_ad[i] - g_fd) / max(1.0, abs(g_ad[i]) + abs(g_fd))
            worst = max(worst, err)
    return worst
