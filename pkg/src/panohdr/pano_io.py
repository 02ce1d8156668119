"""Bit-exact panorama file IO: PFM for HDR, binary PPM (P6) for LDR.

Formats (also in docs/FORMATS.md):
  PFM: ASCII header "PF\\n<width> <height>\\n-1.0\\n" followed by
       width*height*3 little-endian float32 values, rows stored
       bottom-to-top (PFM convention; array row 0 is the image top).
  PPM: "P6\\n<width> <height>\\n255\\n" followed by width*height*3 bytes,
       rows top-to-bottom.

All writers go through a temp file + atomic rename so interrupted runs
never leave partial outputs.
"""

import os
import tempfile

import numpy as np

from .errors import DataError
from .pano import HdrPanorama, LdrPanorama


def atomic_write(path, payload):
    """Write bytes to path atomically (temp file + rename)."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pfm_bytes(pano):
    data = pano.data if isinstance(pano, HdrPanorama) else np.asarray(pano)
    h, w = data.shape[:2]
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    # PFM rows run bottom-to-top
    body = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    return header + body


def write_pfm(path, pano):
    atomic_write(path, pfm_bytes(pano))


def _read_token(f):
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise DataError("unexpected end of file in header")
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pfm(path):
    """Read a 3-channel PFM into an HdrPanorama (values kept as written)."""
    return HdrPanorama(read_pfm_array(path))


def read_pfm_array(path):
    """Read any 3-channel PFM into a float64 (H, W, 3) array."""
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic != b"PF":
            raise DataError(f"{path}: not a color PFM (magic {magic!r})")
        try:
            w = int(_read_token(f))
            h = int(_read_token(f))
            scale = float(_read_token(f))
        except ValueError as e:
            raise DataError(f"{path}: bad PFM header: {e}") from e
        if w <= 0 or h <= 0 or scale == 0:
            raise DataError(f"{path}: bad PFM dimensions/scale")
        count = w * h * 3
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise DataError(f"{path}: truncated PFM payload")
        dt = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(raw, dtype=dt).reshape(h, w, 3)[::-1].astype(np.float64)
        if abs(scale) != 1.0:
            data = data * abs(scale)
        return data


def ppm_bytes(ldr):
    data = ldr.data if isinstance(ldr, LdrPanorama) else np.asarray(ldr, dtype=np.uint8)
    h, w = data.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(data).tobytes()


def write_ppm(path, ldr):
    atomic_write(path, ppm_bytes(ldr))


def _read_ppm_token(f):
    # like _read_token but skips '#' comments per the netpbm grammar
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise DataError("unexpected end of file in header")
        if c == b"#":
            while c and c != b"\n":
                c = f.read(1)
            c = b" "
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_ppm(path):
    with open(path, "rb") as f:
        if _read_ppm_token(f) != b"P6":
            raise DataError(f"{path}: not a binary PPM")
        try:
            w = int(_read_ppm_token(f))
            h = int(_read_ppm_token(f))
            maxval = int(_read_ppm_token(f))
        except ValueError as e:
            raise DataError(f"{path}: bad PPM header: {e}") from e
        if maxval != 255:
            raise DataError(f"{path}: only maxval 255 PPMs are supported")
        raw = f.read(w * h * 3)
        if len(raw) != w * h * 3:
            raise DataError(f"{path}: truncated PPM payload")
        return LdrPanorama(np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).copy())


def write_png(path, ldr):
    """Optional PNG export (needs Pillow)."""
    try:
        from PIL import Image
    except ImportError as e:
        raise DataError("PNG export requires Pillow") from e
    data = ldr.data if isinstance(ldr, LdrPanorama) else np.asarray(ldr, dtype=np.uint8)
    Image.fromarray(data, mode="RGB").save(os.fspath(path))
