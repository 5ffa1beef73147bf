"""Neural-network operations and layers on top of the tensor core.

Layouts are channels-last throughout: images/maps are (N, H, W, C) or
(H, W, C), token stacks are (N, T, C), flat cell tables are (M, C).
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .tensor import (
    ShapeMismatch,
    dtype,
    Tensor,
    _record,
    add,
    concat,
    matmul,
    mul,
    reshape,
    sigmoid,
    sub,
    tanh,
)

VOID = 255


# ---------------------------------------------------------------------------
# functional ops

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, NHWC input, (kh, kw, cin, cout) kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch("conv2d", x.shape, w.shape)
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if cin != wcin:
        raise ShapeMismatch("conv2d channels", x.shape, w.shape)
    s, p = int(stride), int(padding)
    ho = (h + 2 * p - kh) // s + 1
    wo = (wd + 2 * p - kw) // s + 1
    if ho <= 0 or wo <= 0:
        raise ShapeMismatch("conv2d output", x.shape, w.shape)

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # win: (n, h'-kh+1, w'-kw+1, cin, kh, kw) -> strided, then kh,kw,cin order
    win = win[:, ::s, ::s]
    # 64-bit operands built once; the backward GEMMs reuse them
    cols = np.ascontiguousarray(
        win.transpose(0, 1, 2, 4, 5, 3), dtype=np.float64
    ).reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout).astype(np.float64)
    out64 = cols @ wmat
    if b is not None:
        if b.shape != (cout,):
            raise ShapeMismatch("conv2d bias", (cout,), b.shape)
        out64 += b.data.astype(np.float64)
    out = Tensor(out64.reshape(n, ho, wo, cout))

    def bwd(g):
        gmat = g.reshape(n * ho * wo, cout).astype(np.float64)
        gw = (cols.T @ gmat).astype(dtype())
        gcols = (gmat @ wmat.T).astype(dtype())
        gcols = gcols.reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros((n, h + 2 * p, wd + 2 * p, cin), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + ho * s:s, j:j + wo * s:s, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, p:p + h, p:p + wd, :].astype(dtype())
        grads = [gx, gw.reshape(w.data.shape)]
        if b is not None:
            grads.append(gmat.sum(axis=0).astype(dtype()))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, bwd)


def _lerp_indices(out_size: int, in_size: int, factor: int):
    """Source indices/weights for bilinear sampling at integer upscale."""
    src = (np.arange(out_size, dtype=np.float64) + 0.5) / factor - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i0c = np.clip(i0, 0, in_size - 1)
    i1c = np.clip(i0 + 1, 0, in_size - 1)
    # Clamped samples collapse to the edge pixel regardless of frac.
    frac = np.where(i0 < 0, 0.0, frac)
    frac = np.where(i0 + 1 > in_size - 1, 0.0, frac)
    return i0c, i1c, frac.astype(dtype())


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Upsample (N, H, W, C) by an integer factor with bilinear weights."""
    if x.data.ndim != 4:
        raise ShapeMismatch("bilinear_upsample", x.shape)
    factor = int(factor)
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return _record(Tensor(x.data.copy()), (x,), lambda g: (g,))
    n, h, w, c = x.shape
    ho, wo = h * factor, w * factor
    y0, y1, fy = _lerp_indices(ho, h, factor)
    x0, x1, fx = _lerp_indices(wo, w, factor)
    fy = fy[None, :, None, None]
    fx = fx[None, None, :, None]

    d = x.data
    top = d[:, y0][:, :, x0] * (1 - fx) + d[:, y0][:, :, x1] * fx
    bot = d[:, y1][:, :, x0] * (1 - fx) + d[:, y1][:, :, x1] * fx
    out = Tensor(top * (1 - fy) + bot * fy)

    def bwd(g):
        acc = np.zeros((n, h, w, c), dtype=np.float64)
        gy0 = (g * (1 - fy)).astype(np.float64)
        gy1 = (g * fy).astype(np.float64)
        iy0 = y0[:, None]
        iy1 = y1[:, None]
        np.add.at(acc, (slice(None), iy0, x0[None, :]), gy0 * (1 - fx))
        np.add.at(acc, (slice(None), iy0, x1[None, :]), gy0 * fx)
        np.add.at(acc, (slice(None), iy1, x0[None, :]), gy1 * (1 - fx))
        np.add.at(acc, (slice(None), iy1, x1[None, :]), gy1 * fx)
        return (acc.astype(dtype()),)

    return _record(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-channel gain and bias."""
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeMismatch("layer_norm", x.shape, gain.shape, bias.shape)
    d = x.data.astype(np.float64)
    mu = d.mean(axis=-1, keepdims=True)
    var = ((d - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((d - mu) * inv).astype(dtype())
    out = Tensor(xhat * gain.data + bias.data)

    def bwd(g):
        g64 = g.astype(np.float64)
        ggain = (g64 * xhat).sum(axis=tuple(range(g.ndim - 1))).astype(dtype())
        gbias = g64.sum(axis=tuple(range(g.ndim - 1))).astype(dtype())
        dxhat = g64 * gain.data.astype(np.float64)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = (inv * (dxhat - m1 - xhat * m2)).astype(dtype())
        return gx, ggain, gbias

    return _record(out, (x, gain, bias), bwd)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    d = x.data.astype(np.float64)
    d = d - d.max(axis=-1, keepdims=True)
    e = np.exp(d)
    y = (e / e.sum(axis=-1, keepdims=True)).astype(dtype())
    out = Tensor(y)

    def bwd(g):
        g64 = g.astype(np.float64)
        y64 = y.astype(np.float64)
        dot = (g64 * y64).sum(axis=-1, keepdims=True)
        return ((g64 - dot) * y64).astype(dtype()),

    return _record(out, (x,), bwd)


def masked_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean of -log softmax(logits)[target] over non-void target cells.

    `target` is an integer array (same leading shape as logits) with VOID
    (255) marking excluded cells. Returns a scalar; when every cell is void
    the result is 0 and the returned tensor carries `degenerate = True`.
    """
    tgt = np.asarray(getattr(target, "data", target))
    if tgt.shape != logits.shape[:-1]:
        raise ShapeMismatch("masked_cross_entropy", logits.shape, tgt.shape)
    k = logits.shape[-1]
    ids = tgt.astype(np.int64)
    bad = (ids >= k) & (ids != VOID)
    if bad.any():
        raise ValueError(
            f"target ids must be < {k} or void ({VOID}); found {np.unique(ids[bad])}"
        )
    mask = ids != VOID
    m = int(mask.sum())
    flat_logits = logits.data.reshape(-1, k)
    flat_mask = mask.reshape(-1)
    if m == 0:
        out = Tensor(np.zeros((), dtype=dtype()))
        out.degenerate = True
        return _record(out, (logits,), lambda g: (np.zeros_like(flat_logits).reshape(logits.shape),))
    rows = np.nonzero(flat_mask)[0]
    picked = flat_logits[rows].astype(np.float64)
    picked -= picked.max(axis=1, keepdims=True)
    logz = np.log(np.exp(picked).sum(axis=1, keepdims=True))
    labels = ids.reshape(-1)[rows]
    logp = picked - logz
    loss = -logp[np.arange(m), labels].sum() / m
    out = Tensor(np.float64(loss))
    out.degenerate = False
    probs = np.exp(logp)

    def bwd(g):
        grow = probs.copy()
        grow[np.arange(m), labels] -= 1.0
        grow *= float(np.asarray(g).reshape(())) / m
        gfull = np.zeros_like(flat_logits)
        gfull[rows] = grow.astype(dtype())
        return (gfull.reshape(logits.shape),)

    return _record(out, (logits,), bwd)


def gru_cell(x: Tensor, h: Tensor, wz: Tensor, bz: Tensor, wr: Tensor,
             br: Tensor, wh: Tensor, bh: Tensor) -> Tensor:
    """Gated recurrent unit over rows of cells.

    h' = (1-z) * h + z * h~ with
      z  = sigmoid(Wz [x, h] + bz)
      r  = sigmoid(Wr [x, h] + br)
      h~ = tanh(Wh [x, r*h] + bh)
    """
    if x.shape[0] != h.shape[0]:
        raise ShapeMismatch("gru_cell", x.shape, h.shape)
    if not np.isfinite(x.data).all() or not np.isfinite(h.data).all():
        raise ValueError("gru_cell: non-finite input state")
    xh = concat([x, h], axis=1)
    z = sigmoid(add(matmul(xh, wz), bz))
    r = sigmoid(add(matmul(xh, wr), br))
    cand = tanh(add(matmul(concat([x, mul(r, h)], axis=1), wh), bh))
    return add(sub(h, mul(z, h)), mul(z, cand))


# ---------------------------------------------------------------------------
# parameter initialization and modules

def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = float(np.sqrt(1.0 / max(1, fan_in)))
    return rng.uniform(-bound, bound, size=shape).astype(dtype())


class Module:
    """Minimal parameter container: Tensor attributes are parameters."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def param_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters in state: {sorted(missing)}")
        for name, t in own.items():
            arr = np.asarray(arrays[name], dtype=dtype())
            if arr.shape != t.data.shape:
                raise ShapeMismatch(f"load_state[{name}]", t.data.shape, arr.shape)
            t.data = arr.copy()

    def set_requires_grad(self, flag: bool) -> None:
        for _, t in self.named_parameters():
            t.requires_grad = flag


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = Tensor(uniform_init(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.b = Tensor(uniform_init(rng, (out_dim,), in_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim == 3:
            n, t, c = x.shape
            flat = reshape(x, (n * t, c))
            y = add(matmul(flat, self.w), self.b)
            return reshape(y, (n, t, self.w.shape[1]))
        return add(matmul(x, self.w), self.b)


class Conv2d(Module):
    def __init__(self, kh: int, kw: int, cin: int, cout: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0):
        fan_in = kh * kw * cin
        self.w = Tensor(uniform_init(rng, (kh, kw, cin, cout), fan_in), requires_grad=True)
        self.b = Tensor(uniform_init(rng, (cout,), fan_in), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim, dtype=dtype()), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype()), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class GRUCell(Module):
    """One GRU shared over all map cells (rows)."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        fan = in_dim + hidden
        self.wz = Tensor(uniform_init(rng, (fan, hidden), fan), requires_grad=True)
        self.bz = Tensor(uniform_init(rng, (hidden,), fan), requires_grad=True)
        self.wr = Tensor(uniform_init(rng, (fan, hidden), fan), requires_grad=True)
        self.br = Tensor(uniform_init(rng, (hidden,), fan), requires_grad=True)
        self.wh = Tensor(uniform_init(rng, (fan, hidden), fan), requires_grad=True)
        self.bh = Tensor(uniform_init(rng, (hidden,), fan), requires_grad=True)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        return gru_cell(x, h, self.wz, self.bz, self.wr, self.br, self.wh, self.bh)
