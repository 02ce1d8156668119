# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot kernels (OpenMP-parallel).

Must match panohdr.kernels._fallback exactly in signatures and layouts;
parallel loops write disjoint output regions so results are deterministic.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, sqrt

cnp.import_array()

BACKEND = "native"

ctypedef fused real:
    float
    double


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# im2col / col2im

cdef void _im2col_block(real[:, :, :, ::1] x, real[:, ::1] out,
                        int n, int c, int kh, int kw, int stride, int pad,
                        int oh, int ow) noexcept nogil:
    # out layout: (C*kh*kw, N*OH*OW) so the conv GEMM is one wide matmul
    cdef int h = x.shape[2], w = x.shape[3]
    cdef int i, j, a, b, hh, ww, row, base
    cdef real v
    for i in range(kh):
        for j in range(kw):
            row = (c * kh + i) * kw + j
            base = n * oh * ow
            for a in range(oh):
                hh = i + stride * a - pad
                for b in range(ow):
                    ww = j + stride * b - pad
                    if 0 <= hh < h and 0 <= ww < w:
                        v = x[n, c, hh, ww]
                    else:
                        v = 0
                    out[row, base + a * ow + b] = v


def im2col(x, int kh, int kw, int stride, int pad):
    x = np.ascontiguousarray(x)
    if x.dtype == np.float32:
        return _im2col_f32(x, kh, kw, stride, pad)
    return _im2col_f64(np.asarray(x, dtype=np.float64), kh, kw, stride, pad)


def _im2col_f32(float[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef int n = x.shape[0], c = x.shape[1]
    cdef int oh = (x.shape[2] + 2 * pad - kh) // stride + 1
    cdef int ow = (x.shape[3] + 2 * pad - kw) // stride + 1
    out_np = np.empty((c * kh * kw, n * oh * ow), dtype=np.float32)
    cdef float[:, ::1] out = out_np
    cdef int idx, ni, ci
    for idx in prange(n * c, nogil=True, schedule="static"):
        ni = idx // c
        ci = idx % c
        _im2col_block[float](x, out, ni, ci, kh, kw, stride, pad, oh, ow)
    return out_np


def _im2col_f64(double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef int n = x.shape[0], c = x.shape[1]
    cdef int oh = (x.shape[2] + 2 * pad - kh) // stride + 1
    cdef int ow = (x.shape[3] + 2 * pad - kw) // stride + 1
    out_np = np.empty((c * kh * kw, n * oh * ow), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef int idx, ni, ci
    for idx in prange(n * c, nogil=True, schedule="static"):
        ni = idx // c
        ci = idx % c
        _im2col_block[double](x, out, ni, ci, kh, kw, stride, pad, oh, ow)
    return out_np


cdef void _col2im_block(real[:, ::1] cols, real[:, :, :, ::1] out,
                        int n, int c, int kh, int kw, int stride, int pad,
                        int oh, int ow) noexcept nogil:
    cdef int h = out.shape[2], w = out.shape[3]
    cdef int i, j, a, b, hh, ww, row, base
    for i in range(kh):
        for j in range(kw):
            row = (c * kh + i) * kw + j
            base = n * oh * ow
            for a in range(oh):
                hh = i + stride * a - pad
                if hh < 0 or hh >= h:
                    continue
                for b in range(ow):
                    ww = j + stride * b - pad
                    if 0 <= ww < w:
                        out[n, c, hh, ww] += cols[row, base + a * ow + b]


def col2im(cols, int n, int c, int h, int w, int kh, int kw, int stride, int pad):
    cols = np.ascontiguousarray(cols)
    if cols.dtype == np.float32:
        return _col2im_f32(cols, n, c, h, w, kh, kw, stride, pad)
    return _col2im_f64(np.asarray(cols, dtype=np.float64), n, c, h, w, kh, kw, stride, pad)


def _col2im_f32(float[:, ::1] cols, int n, int c, int h, int w, int kh, int kw, int stride, int pad):
    cdef int oh = (h + 2 * pad - kh) // stride + 1
    cdef int ow = (w + 2 * pad - kw) // stride + 1
    out_np = np.zeros((n, c, h, w), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_np
    cdef int idx, ni, ci
    for idx in prange(n * c, nogil=True, schedule="static"):
        ni = idx // c
        ci = idx % c
        _col2im_block[float](cols, out, ni, ci, kh, kw, stride, pad, oh, ow)
    return out_np


def _col2im_f64(double[:, ::1] cols, int n, int c, int h, int w, int kh, int kw, int stride, int pad):
    cdef int oh = (h + 2 * pad - kh) // stride + 1
    cdef int ow = (w + 2 * pad - kw) // stride + 1
    out_np = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_np
    cdef int idx, ni, ci
    for idx in prange(n * c, nogil=True, schedule="static"):
        ni = idx // c
        ci = idx % c
        _col2im_block[double](cols, out, ni, ci, kh, kw, stride, pad, oh, ow)
    return out_np


# ---------------------------------------------------------------------------
# ray-marched occlusion against the bumpy sphere

cdef inline double _spiky_f(double px, double py, double pz,
                            double cx, double cy, double cz, double r0,
                            double[:, ::1] sd, double amp, double sharp) noexcept nogil:
    cdef double rx = px - cx, ry = py - cy, rz = pz - cz
    cdef double dist = sqrt(rx * rx + ry * ry + rz * rz)
    if dist < 1e-12:
        return -r0
    cdef double inv = 1.0 / dist
    cdef double acc = 0.0
    cdef int k
    for k in range(sd.shape[0]):
        acc += exp(((rx * sd[k, 0] + ry * sd[k, 1] + rz * sd[k, 2]) * inv - 1.0) * sharp)
    return dist - r0 * (1.0 + amp * acc)


def spiky_occlusion(origins, dirs, center, double r0, spike_dirs,
                    double amp, double sharp, double r_bound, double t_min, double dt):
    cdef double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef double[:, ::1] sd = np.ascontiguousarray(spike_dirs, dtype=np.float64)
    cen = np.asarray(center, dtype=np.float64)
    cdef double cx = cen[0], cy = cen[1], cz = cen[2]
    cdef int m = o.shape[0], p = d.shape[0]
    out_np = np.zeros((m, p), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_np
    cdef int n_steps = <int>((2.0 * r_bound) / dt) + 2
    cdef int idx, i, j, s
    cdef double relx, rely, relz, b, disc, sq, t0, t1, t, px, py, pz
    for idx in prange(m * p, nogil=True, schedule="static"):
        i = idx // p
        j = idx % p
        relx = cx - o[i, 0]
        rely = cy - o[i, 1]
        relz = cz - o[i, 2]
        b = d[j, 0] * relx + d[j, 1] * rely + d[j, 2] * relz
        disc = b * b - (relx * relx + rely * rely + relz * relz - r_bound * r_bound)
        if disc <= 0.0:
            continue
        sq = sqrt(disc)
        t0 = b - sq
        if t0 < t_min:
            t0 = t_min
        t1 = b + sq
        if t1 <= t0:
            continue
        t = t0
        for s in range(n_steps):
            if t > t1:
                break
            px = o[i, 0] + t * d[j, 0]
            py = o[i, 1] + t * d[j, 1]
            pz = o[i, 2] + t * d[j, 2]
            if _spiky_f(px, py, pz, cx, cy, cz, r0, sd, amp, sharp) < 0.0:
                out[i, j] = 1
                break
            t = t + dt
    return out_np


# ---------------------------------------------------------------------------
# axis-aligned box occlusion (procedural city skyline)

def boxes_occlusion(origins, dirs, boxes):
    cdef double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef double[:, ::1] bx = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef int m = o.shape[0], p = d.shape[0], nb = bx.shape[0]
    out_np = np.zeros((m, p), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_np
    cdef int idx, i, j, k, ax
    cdef double t_near, t_far, inv, lo, hi, ta, tb, dirc, oc
    for idx in prange(m * p, nogil=True, schedule="static"):
        i = idx // p
        j = idx % p
        for k in range(nb):
            t_near = -1e300
            t_far = 1e300
            for ax in range(3):
                if ax == 0:
                    lo = bx[k, 0]; hi = bx[k, 1]
                elif ax == 1:
                    lo = 0.0; hi = bx[k, 4]
                else:
                    lo = bx[k, 2]; hi = bx[k, 3]
                dirc = d[j, ax]
                oc = o[i, ax]
                if dirc < 1e-12 and dirc > -1e-12:
                    dirc = 1e-12 if dirc >= 0 else -1e-12
                inv = 1.0 / dirc
                ta = (lo - oc) * inv
                tb = (hi - oc) * inv
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t_near:
                    t_near = ta
                if tb < t_far:
                    t_far = tb
            if t_far >= t_near and t_far > 1e-9:
                out[i, j] = 1
                break
    return out_np
