"""Classical inverse-tonemapping baselines with parameter cross-validation.

Five simplified operators: straight linearization, gamma-with-gain, an
inverse-Reinhard expansion steered by a blurred saturation mask, a
threshold-mask linear boost, and a two-segment curve. All of them act on
Rec.709 luminance and re-color by the original chroma (out = rgb * f(L)/L),
which makes per-pixel luminance ordering preservation exact and never
darkens below the gamma-linearized input.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError
from .pano import HdrPanorama, LdrPanorama

OPERATORS = ("linear", "gamma", "inverse_reinhard_expand", "threshold_expand", "two_segment")

PARAM_RANGES = {
    "linear": {"linearize": (0, 1)},
    "gamma": {"scale": (1.0, 1e5)},
    "inverse_reinhard_expand": {"l_max": (1.0, 1e5), "blur_sigma": (0.5, 8.0), "threshold": (1, 255)},
    "threshold_expand": {"peak": (1.0, 1e5), "blur_sigma": (0.5, 8.0), "threshold": (1, 255)},
    "two_segment": {"knee": (0.05, 0.999), "slope": (1.0, 1e6)},
}

LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class ItmoParams:
    operator: str
    params: tuple = ()  # sorted (name, value) pairs

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise DataError(f"unknown iTMO operator {self.operator!r}")
        ranges = PARAM_RANGES[self.operator]
        given = dict(self.params)
        for name, value in given.items():
            if name not in ranges:
                raise DataError(f"{self.operator}: unknown parameter {name!r}")
            lo, hi = ranges[name]
            if not lo <= value <= hi:
                raise DataError(f"{self.operator}: {name}={value} outside [{lo}, {hi}]")

    @staticmethod
    def make(operator, **params):
        return ItmoParams(operator, tuple(sorted(params.items())))

    def get(self, name):
        return dict(self.params)[name]


def _luminance(codes):
    return codes @ LUMA


def _recolor(codes, l_in, l_out):
    ratio = l_out / np.maximum(l_in, 1e-12)
    return codes * ratio[..., None]


def _blurred_mask(codes, threshold, sigma):
    mask = (codes * 255.0 >= threshold - 0.5).all(axis=-1).astype(np.float64)
    # wrap across the azimuth seam, clamp at the poles
    return ndimage.gaussian_filter(mask, sigma=sigma, mode=["nearest", "wrap"])


def itmo_apply(ldr, params):
    """Expand an 8-bit panorama to HDR radiance with a classical operator."""
    codes = (ldr.data if isinstance(ldr, LdrPanorama) else np.asarray(ldr)) / 255.0
    l_d = _luminance(codes)
    op = params.operator
    if op == "linear":
        if int(params.get("linearize")):
            return HdrPanorama(_recolor(codes, l_d, np.power(l_d, 2.2)))
        return HdrPanorama(codes.copy())
    if op == "gamma":
        return HdrPanorama(_recolor(codes, l_d, np.power(l_d, 2.2) * params.get("scale")))
    if op == "inverse_reinhard_expand":
        w = params.get("l_max")  # white point: L_w -> l_max as L_d -> 1
        l_w = (w * w / 2.0) * (l_d - 1.0 + np.sqrt(np.square(1.0 - l_d) + 4.0 * l_d / (w * w)))
        expand = _blurred_mask(codes, params.get("threshold"), params.get("blur_sigma"))
        peak = expand.max()
        if peak > 0:
            expand = expand / peak
        out = l_d + expand * (l_w - l_d)
        return HdrPanorama(_recolor(codes, l_d, out))
    if op == "threshold_expand":
        expand = np.clip(_blurred_mask(codes, params.get("threshold"), params.get("blur_sigma")), 0.0, 1.0)
        out = l_d * (1.0 + expand * (params.get("peak") - 1.0))
        return HdrPanorama(_recolor(codes, l_d, out))
    if op == "two_segment":
        knee = params.get("knee")
        slope = params.get("slope")
        out = np.where(l_d < knee, l_d, knee + slope * (l_d - knee))
        return HdrPanorama(_recolor(codes, l_d, out))
    raise DataError(f"unknown iTMO operator {op!r}")


def default_grid(operator):
    """Documented cross-validation grids, <= 100 points per operator."""
    if operator == "linear":
        return [ItmoParams.make("linear", linearize=v) for v in (0, 1)]
    if operator == "gamma":
        return [ItmoParams.make("gamma", scale=float(s)) for s in np.geomspace(1.0, 3e4, 16)]
    if operator == "inverse_reinhard_expand":
        return [
            ItmoParams.make("inverse_reinhard_expand", l_max=float(m), blur_sigma=float(b), threshold=254)
            for m in np.geomspace(2.0, 3e4, 12)
            for b in (1.0, 2.0, 4.0)
        ]
    if operator == "threshold_expand":
        return [
            ItmoParams.make("threshold_expand", peak=float(p), blur_sigma=float(b), threshold=254)
            for p in np.geomspace(2.0, 3e4, 12)
            for b in (1.0, 2.0, 4.0)
        ]
    if operator == "two_segment":
        return [
            ItmoParams.make("two_segment", knee=float(k), slope=float(s))
            for k in (0.7, 0.8, 0.9, 0.95)
            for s in np.geomspace(2.0, 3e4, 12)
        ]
    raise DataError(f"unknown iTMO operator {operator!r}")


def _tonemapped_stack(panos):
    from . import pano

    return np.stack([pano.tonemap(p.data).transpose(2, 0, 1) for p in panos])


def evaluate_operator(params, pairs, transport, metric="e_render", truth_tm=None):
    """Aggregate metric of an operator over (ldr, hdr_truth, theta) pairs.

    Batched so the render metric is a single wide matmul per grid point;
    pass truth_tm (from _tonemapped_stack of the truths) to reuse it
    across a grid search.
    """
    from . import evalmetrics

    if truth_tm is None:
        truth_tm = _tonemapped_stack([p[1] for p in pairs])
    preds = _tonemapped_stack([itmo_apply(ldr, params) for ldr, _, _ in pairs])
    thetas = np.array([p[2] for p in pairs], dtype=np.float64)
    sm = evalmetrics.batch_metrics(preds, truth_tm, thetas, thetas, transport)
    vals = getattr(sm, metric)
    if metric == "e_hdr":
        return float(vals.mean())
    return float(np.sqrt(np.square(vals).mean()))


def cross_validate(operator, pairs, transport, metric="e_render", grid=None):
    """Grid search minimizing the chosen metric; first-in-grid tie break."""
    grid = default_grid(operator) if grid is None else list(grid)
    if not grid:
        raise DataError("cross_validate: empty grid")
    truth_tm = _tonemapped_stack([p[1] for p in pairs])
    best = None
    for params in grid:
        score = evaluate_operator(params, pairs, transport, metric, truth_tm=truth_tm)
        if best is None or score < best[0]:
            best = (score, params)
    return best[1], best[0]
