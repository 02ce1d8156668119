"""Lambertian transport matrix of the bumpy-sphere-on-a-plane scene.

A fixed diffuse scene (implicit bumpy sphere over a finite ground plane,
perspective camera looking down) is baked into a dense matrix T mapping
top-hemisphere panorama radiance to rendered pixel values:

    T[i, j] = albedo/pi * max(0, n_i . d_j) * omega_j * V(x_i, d_j)

with one row per render pixel and one column per sky pixel (rows 0..H/2-1
of the lat-long grid). Rendering is then a matrix-vector product per color
channel, and its adjoint (T^T) backpropagates gradients to the sky.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import kernels as K
from . import pano
from .errors import DataError, NumericalError
from .kernels import _fallback as _ref

TRANSPORT_MAGIC = b"PHDRTMAT"
TRANSPORT_VERSION = 1


@dataclass(frozen=True)
class SceneSpec:
    sphere_radius: float = 0.45
    sphere_center_y: float = 0.65
    spike_count: int = 14
    spike_amp: float = 0.3
    spike_sharpness: float = 30.0
    spike_seed: int = 7
    ground_half_size: float = 1.7
    albedo: float = 1.0
    camera_height: float = 2.8
    fov_deg: float = 65.0
    render_size: int = 64

    def canonical(self):
        return json.dumps(
            {k: getattr(self, k) for k in sorted(self.__dataclass_fields__)}, sort_keys=True
        )

    def hash(self):
        return hashlib.sha256(self.canonical().encode("ascii")).hexdigest()

    def plane_only(self):
        """Variant with the sphere removed (pure ground plane)."""
        return replace(self, sphere_radius=0.0, spike_amp=0.0)

    def spike_directions(self):
        rng = np.random.default_rng(self.spike_seed)
        v = rng.standard_normal((self.spike_count, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    @property
    def center(self):
        return np.array([0.0, self.sphere_center_y, 0.0])

    @property
    def bound_radius(self):
        return self.sphere_radius * (1.0 + 1.2 * self.spike_amp)


@dataclass
class TransportMatrix:
    matrix: np.ndarray  # (render_size^2, pano_h/2 * pano_w), non-negative
    scene: SceneSpec
    pano_height: int
    pano_width: int

    @property
    def render_size(self):
        return self.scene.render_size

    def sky_columns(self):
        return (self.pano_height // 2) * self.pano_width

    def matrix_as(self, dtype):
        """Dtype view of the matrix, cached (training hits this per batch)."""
        dtype = np.dtype(dtype)
        if self.matrix.dtype == dtype:
            return self.matrix
        cache = getattr(self, "_matrix_cache", None)
        if cache is None or cache.dtype != dtype:
            cache = self.matrix.astype(dtype)
            object.__setattr__(self, "_matrix_cache", cache)
        return cache


def _camera_rays(scene):
    """Primary rays of the downward-looking perspective camera.

    Screen x runs along world +x, screen up along world +z.
    """
    s = scene.render_size
    t = np.tan(np.deg2rad(scene.fov_deg) / 2)
    px = (np.arange(s) + 0.5) / s * 2 - 1
    xs, ys = np.meshgrid(px, px, indexing="xy")  # ys: row index downwards
    d = np.stack([xs * t, -np.ones_like(xs), -ys * t], axis=-1).reshape(-1, 3)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.array([0.0, scene.camera_height, 0.0])
    return o, d


def _march_sphere(o, dirs, scene, dt=None, refine=48):
    """First spiky-sphere hit distance per ray (inf when missed)."""
    if scene.sphere_radius <= 0:
        return np.full(dirs.shape[0], np.inf)
    if dt is None:
        dt = scene.sphere_radius / 80.0
    sd = scene.spike_directions()
    c = scene.center
    rel = c - o
    b = dirs @ rel
    disc = b**2 - (rel @ rel - scene.bound_radius**2)
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0, t1 = np.maximum(b - sq, 1e-6), b + sq
    hit_t = np.full(dirs.shape[0], np.inf)
    cand = np.flatnonzero((disc > 0) & (t1 > t0))
    if cand.size == 0:
        return hit_t
    t = t0[cand].copy()
    prev = t.copy()
    alive = np.ones(cand.size, dtype=bool)
    n_steps = int(np.ceil(2 * scene.bound_radius / dt)) + 2
    for _ in range(n_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        pts = o + dirs[cand[idx]] * t[idx, None]
        inside = _ref.spiky_field(pts, c, scene.sphere_radius, sd, scene.spike_amp, scene.spike_sharpness) < 0
        hit_idx = idx[inside]
        # bisection refine between the last outside point and this one
        lo, hi = prev[hit_idx].copy(), t[hit_idx].copy()
        for _ in range(refine):
            mid = 0.5 * (lo + hi)
            pm = o + dirs[cand[hit_idx]] * mid[:, None]
            m_in = _ref.spiky_field(pm, c, scene.sphere_radius, sd, scene.spike_amp, scene.spike_sharpness) < 0
            hi = np.where(m_in, mid, hi)
            lo = np.where(m_in, lo, mid)
        hit_t[cand[hit_idx]] = hi
        alive[hit_idx] = False
        live = np.flatnonzero(alive)
        prev[live] = t[live]
        t[live] += dt
        alive[live] = t[live] <= t1[live]
    return hit_t


def _sphere_normals(points, scene, h=1e-6):
    sd = scene.spike_directions()
    c = scene.center

    def f(p):
        return _ref.spiky_field(p, c, scene.sphere_radius, sd, scene.spike_amp, scene.spike_sharpness)

    grad = np.stack(
        [
            f(points + np.array([h, 0, 0])) - f(points - np.array([h, 0, 0])),
            f(points + np.array([0, h, 0])) - f(points - np.array([0, h, 0])),
            f(points + np.array([0, 0, h])) - f(points - np.array([0, 0, h])),
        ],
        axis=-1,
    )
    return grad / np.linalg.norm(grad, axis=-1, keepdims=True)


def build_transport(scene=SceneSpec(), pano_height=64, pano_width=128):
    """Bake the transport matrix: primary visibility, normals, shadow rays."""
    if pano_height * 2 != pano_width:
        raise DataError("build_transport: lat-long dims require width == 2*height")
    o, dirs = _camera_rays(scene)
    if scene.sphere_radius > 0:
        sd = scene.spike_directions()
        if _ref.spiky_field(o[None], scene.center, scene.sphere_radius, sd, scene.spike_amp, scene.spike_sharpness)[0] <= 0:
            raise NumericalError("degenerate scene: camera inside the object")
        if scene.camera_height <= scene.sphere_center_y + scene.bound_radius:
            raise NumericalError("degenerate scene: camera below the object top")

    t_sphere = _march_sphere(o, dirs, scene)
    with np.errstate(divide="ignore"):
        t_ground = np.where(dirs[:, 1] < 0, -scene.camera_height / dirs[:, 1], np.inf)
    gx = o[0] + dirs[:, 0] * t_ground
    gz = o[2] + dirs[:, 2] * t_ground
    on_plane = (np.abs(gx) <= scene.ground_half_size) & (np.abs(gz) <= scene.ground_half_size)
    t_ground = np.where(on_plane, t_ground, np.inf)

    n_px = dirs.shape[0]
    points = np.zeros((n_px, 3))
    normals = np.zeros((n_px, 3))
    hit = np.zeros(n_px, dtype=np.uint8)  # 0 miss, 1 ground, 2 sphere
    ground_first = (t_ground < t_sphere) & np.isfinite(t_ground)
    sphere_first = (t_sphere <= t_ground) & np.isfinite(t_sphere)
    points[ground_first] = o + dirs[ground_first] * t_ground[ground_first, None]
    normals[ground_first] = [0.0, 1.0, 0.0]
    hit[ground_first] = 1
    points[sphere_first] = o + dirs[sphere_first] * t_sphere[sphere_first, None]
    if sphere_first.any():
        normals[sphere_first] = _sphere_normals(points[sphere_first], scene)
    hit[sphere_first] = 2

    sky_rows = pano_height // 2
    sky_dirs = pano.direction_grid(pano_width, pano_height)[:sky_rows].reshape(-1, 3)
    omega = np.repeat(pano.solid_angle_rows(pano_width, pano_height)[:sky_rows], pano_width)

    cos_term = np.zeros((n_px, sky_dirs.shape[0]))
    lit = hit > 0
    cos_term[lit] = np.maximum(normals[lit] @ sky_dirs.T, 0.0)

    if scene.sphere_radius > 0 and lit.any():
        origins = points[lit] + normals[lit] * 1e-5
        blocked = K.spiky_occlusion(
            origins,
            sky_dirs,
            scene.center,
            scene.sphere_radius,
            scene.spike_directions(),
            scene.spike_amp,
            scene.spike_sharpness,
            scene.bound_radius,
            1e-5,
            scene.sphere_radius / 80.0,
        )
        cos_term[lit] *= 1 - blocked

    matrix = (scene.albedo / np.pi) * cos_term * omega[None, :]
    return TransportMatrix(matrix, scene, pano_height, pano_width)


def render(t, sky):
    """Render sky radiance through the transport matrix.

    sky: (H/2, W) or (H/2, W, C) or flat (cols,) / (cols, C).
    Returns (render_size, render_size[, C]); exactly linear in the sky.
    """
    cols = t.sky_columns()
    s = np.asarray(sky, dtype=t.matrix.dtype)
    channels = None
    if s.ndim == 3 and s.shape[0] * s.shape[1] == cols:
        channels = s.shape[2]
        s = s.reshape(cols, channels)
    elif s.ndim == 2 and s.size == cols:
        s = s.reshape(cols)
    elif s.ndim == 2 and s.shape[0] == cols:
        channels = s.shape[1]
    elif s.ndim != 1 or s.shape[0] != cols:
        raise DataError(f"render: sky shape {s.shape} does not match {cols} transport columns")
    out = t.matrix @ s
    side = t.render_size
    return out.reshape((side, side) if channels is None else (side, side, channels))


def render_backward(t, upstream):
    """Adjoint of render: gradient w.r.t. the sky values (T^T @ upstream)."""
    side = t.render_size
    u = np.asarray(upstream, dtype=t.matrix.dtype)
    channels = None
    if u.ndim == 3:
        channels = u.shape[2]
        u = u.reshape(side * side, channels)
    else:
        u = u.reshape(side * side)
    g = t.matrix.T @ u
    rows = t.pano_height // 2
    shape = (rows, t.pano_width) if channels is None else (rows, t.pano_width, channels)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# cache file: magic, version, scene hash, dims, dense row-major float32

def transport_bytes(t):
    head = TRANSPORT_MAGIC + struct.pack("<I", TRANSPORT_VERSION)
    scene_hash = bytes.fromhex(t.scene.hash())
    scene_text = t.scene.canonical().encode("ascii")
    head += struct.pack("<I", len(scene_hash)) + scene_hash
    head += struct.pack("<I", len(scene_text)) + scene_text
    head += struct.pack("<4I", t.matrix.shape[0], t.matrix.shape[1], t.pano_height, t.pano_width)
    return head + np.ascontiguousarray(t.matrix, dtype="<f4").tobytes()


def save_transport(t, path):
    from .pano_io import atomic_write

    atomic_write(path, transport_bytes(t))


def load_transport(path, scene=None):
    with open(path, "rb") as f:
        buf = f.read()
    off = len(TRANSPORT_MAGIC)
    if buf[:off] != TRANSPORT_MAGIC:
        raise DataError(f"{path}: not a transport cache")
    if len(buf) < off + 4:
        raise DataError(f"{path}: truncated transport cache")
    version = struct.unpack_from("<I", buf, off)[0]
    off += 4
    if version != TRANSPORT_VERSION:
        raise DataError(f"{path}: unsupported transport version {version}")
    (hlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    file_hash = buf[off : off + hlen].hex()
    off += hlen
    (slen,) = struct.unpack_from("<I", buf, off)
    off += 4
    scene_kwargs = json.loads(buf[off : off + slen].decode("ascii"))
    off += slen
    file_scene = SceneSpec(**scene_kwargs)
    if file_scene.hash() != file_hash:
        raise DataError(f"{path}: scene hash does not match embedded scene")
    if scene is not None and scene.hash() != file_hash:
        raise DataError(f"{path}: cache was built for a different scene")
    rows, cols, ph, pw = struct.unpack_from("<4I", buf, off)
    off += 16
    expected = rows * cols * 4
    if len(buf) - off != expected:
        raise DataError(f"{path}: transport payload size mismatch")
    matrix = np.frombuffer(buf, dtype="<f4", offset=off).reshape(rows, cols).astype(np.float64)
    return TransportMatrix(matrix, file_scene, ph, pw)


def build_or_load(path, scene=SceneSpec(), pano_height=64, pano_width=128):
    """Load a cached transport matrix if it matches, else build and cache it.

    Always returns the float32-rounded, file-backed values so runs are
    bit-identical whether the cache existed or not.
    """
    import os

    if os.path.exists(path):
        try:
            return load_transport(path, scene)
        except DataError:
            pass
    t = build_transport(scene, pano_height, pano_width)
    save_transport(t, path)
    return load_transport(path, scene)
