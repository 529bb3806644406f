"""NumPy implementations of the hot geometry/raster kernels.

The compiled extension (``mmpcqa.kernels._ckernels``) provides the same three
functions.  Both backends must produce bit-identical results: distances are
accumulated in the same order, ties are broken by lowest index, and the
z-buffer resolves equal depths in favour of the earlier point.
"""

import numpy as np


def _sqdist_to(points, index):
    # (dx*dx + dy*dy) + dz*dz, same association order as the C kernel
    dx = points[:, 0] - points[index, 0]
    dy = points[:, 1] - points[index, 1]
    dz = points[:, 2] - points[index, 2]
    return (dx * dx + dy * dy) + dz * dz


def fps(points, k, start=0):
    """Greedy max-min farthest point sampling.

    points: (N, 3) float64. Returns (k,) int64 indices in selection order.
    Ties are broken by lowest index.
    """
    n = points.shape[0]
    out = np.empty(k, dtype=np.int64)
    out[0] = start
    if k == 1:
        return out
    best = _sqdist_to(points, start)
    for i in range(1, k):
        nxt = int(np.argmax(best))  # argmax returns the first (lowest) index on ties
        out[i] = nxt
        np.minimum(best, _sqdist_to(points, nxt), out=best)
    return out


def knn_batch(points, anchors, k):
    """k nearest neighbours (squared Euclidean) for each anchor index.

    Returns (len(anchors), k) int64, distance-ascending, ties by lowest index.
    The anchor itself is always first (distance zero).
    """
    n = points.shape[0]
    idx = np.arange(n)
    out = np.empty((len(anchors), k), dtype=np.int64)
    for row, a in enumerate(anchors):
        d2 = _sqdist_to(points, int(a))
        order = np.lexsort((idx, d2))
        out[row] = order[:k]
    return out


def splat(u, v, z, colors, height, width, radius, background):
    """Z-buffered square splatting.

    u, v: (N,) float64 continuous pixel coordinates (pixel centres at
    integers), z: (N,) float64 positive depths, colors: (N, 3) float64.
    Each point covers the (2*radius+1)^2 pixel block centred on its rounded
    position; the smallest depth wins, ties go to the earlier point.

    Returns (image (H, W, 3), depth (H, W)); depth is +inf on background.
    """
    img = np.empty((height, width, 3), dtype=np.float64)
    img[:] = np.asarray(background, dtype=np.float64)
    depth = np.full((height, width), np.inf, dtype=np.float64)
    n = u.shape[0]
    if n == 0:
        return img, depth

    px = np.floor(u + 0.5).astype(np.int64)
    py = np.floor(v + 0.5).astype(np.int64)
    order = np.arange(n, dtype=np.int64)

    cells = []
    depths = []
    owners = []
    for dy in range(-radius, radius + 1):
        ys = py + dy
        for dx in range(-radius, radius + 1):
            xs = px + dx
            keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
            cells.append(ys[keep] * width + xs[keep])
            depths.append(z[keep])
            owners.append(order[keep])
    pix = np.concatenate(cells)
    if pix.size == 0:
        return img, depth
    zz = np.concatenate(depths)
    oo = np.concatenate(owners)

    # Per pixel: min depth, then earliest point; matches a sequential loop
    # that overwrites only on strictly smaller depth.
    sel = np.lexsort((oo, zz, pix))
    pix_sorted = pix[sel]
    first = np.ones(pix_sorted.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = sel[first]

    img.reshape(-1, 3)[pix[win]] = colors[oo[win]]
    depth.reshape(-1)[pix[win]] = zz[win]
    return img, depth
