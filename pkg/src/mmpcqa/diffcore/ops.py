"""The operator set: forward + exact analytic backward for each operator."""

import numpy as np

from .tensor import Tensor


def _unbroadcast(g, shape):
    """Reduce an output gradient back to a broadcast input's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(…, m, k) @ (k, n); the left operand may carry one batch dimension."""
    if b.data.ndim != 2 or a.data.ndim not in (2, 3) \
            or a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def da(g):
        return g @ b.data.T

    def db(g):
        if a.data.ndim == 2:
            return a.data.T @ g
        return np.tensordot(a.data, g, axes=([0, 1], [0, 1]))

    return Tensor(out, (a, b), (da, db))


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: (B, m, k) @ (B, k, n)."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.data.shape[0] != b.data.shape[0] \
            or a.data.shape[2] != b.data.shape[1]:
        raise ValueError(f"bmm: incompatible shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return Tensor(out, (a, b),
                  (lambda g: g @ b.data.swapaxes(1, 2),
                   lambda g: a.data.swapaxes(1, 2) @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add with NumPy broadcasting (used for biases too)."""
    try:
        out = a.data + b.data
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} + {b.shape}")
    return Tensor(out, (a, b),
                  (lambda g: _unbroadcast(g, a.data.shape),
                   lambda g: _unbroadcast(g, b.data.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor(x.data * mask, (x,), (lambda g: g * mask,))


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def dx(g):
        return s * (g - (g * s).sum(axis=-1, keepdims=True))

    return Tensor(s, (x,), (dx,))


def concat(tensors, axis: int = -1) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty input list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_fn(i):
        lo, hi = offsets[i], offsets[i + 1]

        def fn(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return fn

    return Tensor(out, tuple(tensors), tuple(make_fn(i) for i in range(len(tensors))))


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """3x3 convolution, zero padding 1, stride 1 or 2, NCHW layout."""
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or w.data.ndim != 4 or w.data.shape[2:] != (3, 3) \
            or x.data.shape[1] != w.data.shape[1] or b.data.shape != (w.data.shape[0],):
        raise ValueError(f"conv2d: incompatible shapes x={x.shape} w={w.shape} "
                         f"b={b.shape}")
    n, c, h, wd = x.data.shape
    co = w.data.shape[0]
    ho = (h - 1) // stride + 1
    wo = (wd - 1) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))

    cols = np.empty((n, c, 3, 3, ho, wo), dtype=x.data.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + stride * ho:stride,
                                    kx:kx + stride * wo:stride]
    cols_mat = cols.reshape(n, c * 9, ho * wo)
    w_mat = w.data.reshape(co, c * 9)
    out = (w_mat @ cols_mat).reshape(n, co, ho, wo) + b.data.reshape(1, co, 1, 1)

    def dx(g):
        g_mat = g.reshape(n, co, ho * wo)
        dcols = (w_mat.T @ g_mat).reshape(n, c, 3, 3, ho, wo)
        dxp = np.zeros_like(xp)
        for ky in range(3):
            for kx in range(3):
                dxp[:, :, ky:ky + stride * ho:stride,
                    kx:kx + stride * wo:stride] += dcols[:, :, ky, kx]
        return dxp[:, :, 1:1 + h, 1:1 + wd]

    def dw(g):
        g_mat = g.reshape(n, co, ho * wo)
        return np.tensordot(g_mat, cols_mat, axes=([0, 2], [0, 2])).reshape(w.data.shape)

    def db(g):
        return g.sum(axis=(0, 2, 3))

    return Tensor(out, (x, w, b), (dx, dw, db))


def max_pool_rows(x: Tensor) -> Tensor:
    """Max over the second-to-last axis: (…, R, C) -> (…, C)."""
    if x.data.ndim < 2:
        raise ValueError(f"max_pool_rows: need >= 2 dims, got {x.shape}")
    idx = x.data.argmax(axis=-2)
    out = np.take_along_axis(x.data, idx[..., None, :], axis=-2)[..., 0, :]

    def dx(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, idx[..., None, :], g[..., None, :], axis=-2)
        return grad

    return Tensor(out, (x,), (dx,))


def mean_pool_rows(x: Tensor) -> Tensor:
    """Mean over the second-to-last axis: (…, R, C) -> (…, C)."""
    if x.data.ndim < 2:
        raise ValueError(f"mean_pool_rows: need >= 2 dims, got {x.shape}")
    r = x.data.shape[-2]
    out = x.data.mean(axis=-2)

    def dx(g):
        return np.broadcast_to(g[..., None, :] / r, x.data.shape).copy()

    return Tensor(out, (x,), (dx,))


def global_average_pool_2d(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.data.ndim != 4:
        raise ValueError(f"global_average_pool_2d: need NCHW input, got {x.shape}")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3))

    def dx(g):
        return np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy()

    return Tensor(out, (x,), (dx,))


def layer_norm(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def dx(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return inv * (g - gm - y * gym)

    return Tensor(y, (x,), (dx,))


def scale_by(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return Tensor(x.data * c, (x,), (lambda g: g * c,))


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return Tensor(out, (x,), (lambda g: g.reshape(x.data.shape),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor(x.data.transpose(axes), (x,),
                  (lambda g: g.transpose(inverse),))


def transpose_last2(x: Tensor) -> Tensor:
    axes = tuple(range(x.data.ndim - 2)) + (x.data.ndim - 1, x.data.ndim - 2)
    return permute(x, axes)
