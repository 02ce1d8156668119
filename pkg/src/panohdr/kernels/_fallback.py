"""Pure-NumPy implementations of the hot kernels.

Layouts match the compiled core exactly:
  * im2col produces (N, C*kh*kw, OH*OW) so the convolution GEMM is a
    batched matmul with a (Cout, C*kh*kw) weight matrix.
  * occlusion kernels produce uint8 masks of shape (n_origins, n_dirs),
    1 = ray blocked.
"""

import numpy as np

BACKEND = "fallback"


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Gather conv patches of a (N, C, H, W) array into (C*kh*kw, N*OH*OW).

    The kernel axis comes first so the convolution is one wide 2d GEMM.
    """
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    if pad > 0:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x
    else:
        xp = x
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            src = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
            cols[:, i, j] = src.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * oh * ow)


def col2im(cols, n, c, h, w, kh, kw, stride, pad):
    """Scatter-add the adjoint of im2col back to a (N, C, H, W) array."""
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    cols = cols.reshape(c, kh, kw, n, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dst = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
            dst += cols[:, i, j].transpose(1, 0, 2, 3)
    if pad > 0:
        return np.ascontiguousarray(xp[:, :, pad : pad + h, pad : pad + w])
    return xp


def _spike_radius(dirs, spike_dirs, amp, sharp):
    # dirs (..., 3) unit; radius multiplier of the bumpy sphere along dirs
    dots = dirs @ spike_dirs.T  # (..., K)
    return 1.0 + amp * np.exp((dots - 1.0) * sharp).sum(axis=-1)


def spiky_field(p, center, r0, spike_dirs, amp, sharp):
    """Implicit field of the bumpy sphere: negative inside the surface."""
    rel = p - center
    dist = np.linalg.norm(rel, axis=-1)
    safe = np.maximum(dist, 1e-12)
    d = rel / safe[..., None]
    return dist - r0 * _spike_radius(d, spike_dirs, amp, sharp)


def spiky_occlusion(origins, dirs, center, r0, spike_dirs, amp, sharp, r_bound, t_min, dt):
    """Shadow-ray visibility of (origins x dirs) against the bumpy sphere.

    Fixed-step march restricted to the bounding-sphere interval of each ray.
    Returns uint8 (M, P), 1 where the ray is blocked.
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    m, p = origins.shape[0], dirs.shape[0]
    blocked = np.zeros((m, p), dtype=np.uint8)
    n_steps = int(np.ceil(2.0 * r_bound / dt)) + 1
    for i in range(m):
        rel = center - origins[i]  # (3,)
        b = dirs @ rel  # (P,)
        disc = b * b - (rel @ rel - r_bound * r_bound)
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = np.maximum(b - sq, t_min)
        t1 = b + sq
        cand = (disc > 0.0) & (t1 > t0)
        if not cand.any():
            continue
        d_sub = dirs[cand]
        t = t0[cand].copy()
        t_end = t1[cand]
        hit = np.zeros(d_sub.shape[0], dtype=bool)
        alive = np.ones(d_sub.shape[0], dtype=bool)
        for _ in range(n_steps):
            idx = np.flatnonzero(alive)
            pts = origins[i] + d_sub[idx] * t[idx, None]
            inside = spiky_field(pts, center, r0, spike_dirs, amp, sharp) < 0.0
            hit[idx[inside]] = True
            t[idx] += dt
            alive[idx] = (~inside) & (t[idx] <= t_end[idx])
            if not alive.any():
                break
        blocked[i, cand] = hit.astype(np.uint8)
    return blocked


def boxes_occlusion(origins, dirs, boxes):
    """Visibility of (origins x dirs) against axis-aligned boxes on the ground.

    boxes rows are (xmin, xmax, zmin, zmax, ymax); boxes span y in [0, ymax].
    Returns uint8 (M, P), 1 where some box blocks the ray (t > 0).
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    m, p = origins.shape[0], dirs.shape[0]
    blocked = np.zeros((m, p), dtype=bool)
    eps = 1e-12
    inv = 1.0 / np.where(np.abs(dirs) < eps, np.where(dirs < 0, -eps, eps), dirs)  # (P, 3)
    lo = np.stack([boxes[:, 0], np.zeros(boxes.shape[0]), boxes[:, 2]], axis=1)  # (K, 3)
    hi = np.stack([boxes[:, 1], boxes[:, 4], boxes[:, 3]], axis=1)
    chunk = max(1, (1 << 22) // max(p, 1))  # keep broadcast temps ~tens of MB
    for start in range(0, m, chunk):
        o = origins[start : start + chunk]  # (mc, 3)
        rem = ~blocked[start : start + chunk]
        for k in range(boxes.shape[0]):
            t_lo = (lo[k] - o[:, None, :]) * inv[None, :, :]  # (mc, P, 3)
            t_hi = (hi[k] - o[:, None, :]) * inv[None, :, :]
            t_near = np.minimum(t_lo, t_hi).max(axis=2)
            t_far = np.maximum(t_lo, t_hi).min(axis=2)
            # a ray starting inside a box (t_near < 0 < t_far) counts as blocked
            rem &= ~((t_far >= t_near) & (t_far > 1e-9))
        blocked[start : start + chunk] = ~rem
    return blocked.astype(np.uint8)
