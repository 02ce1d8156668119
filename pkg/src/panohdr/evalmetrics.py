"""Error metrics, percentile reports, temporal-coherence evaluation, and
illumination-based retrieval.

All intensity metrics live in the tonemapped domain (the compressive map
keeps a bright sun near 1, so errors stay O(1)): per-sample values are
  e_hdr    mean |pred - truth| over the panorama
  e_theta  |elevation error| in radians
  e_sun    |brightest-pixel difference|
  e_render RMS difference of transport renders of the top hemispheres
Aggregates: e_hdr averages; the other three pool as RMSE. e_hdr is also
reported x100 for readability.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import pano
from .errors import DataError
from .pano import TonemapParams

DEFAULT_TONEMAP = TonemapParams()

METRIC_NAMES = ("e_hdr", "e_theta", "e_sun", "e_render")


@dataclass
class SampleMetrics:
    e_hdr: np.ndarray
    e_theta: np.ndarray
    e_sun: np.ndarray
    e_render: np.ndarray

    def __len__(self):
        return self.e_hdr.shape[0]


def batch_metrics(pred_tm, truth_tm, pred_theta, truth_theta, transport):
    """Per-sample metrics on already-tonemapped (N, 3, H, W) panoramas."""
    pred_tm = np.asarray(pred_tm, dtype=np.float64)
    truth_tm = np.asarray(truth_tm, dtype=np.float64)
    if pred_tm.shape != truth_tm.shape:
        raise DataError(f"batch_metrics: shape mismatch {pred_tm.shape} vs {truth_tm.shape}")
    n, _, h, w = pred_tm.shape
    e_hdr = np.abs(pred_tm - truth_tm).mean(axis=(1, 2, 3))
    e_theta = np.abs(np.asarray(pred_theta, dtype=np.float64) - np.asarray(truth_theta, dtype=np.float64))
    e_sun = np.abs(pred_tm.max(axis=(1, 2, 3)) - truth_tm.max(axis=(1, 2, 3)))
    cols = transport.matrix.shape[1]
    pt = pred_tm[:, :, : h // 2, :].reshape(n, 3, cols) @ transport.matrix.T
    tt = truth_tm[:, :, : h // 2, :].reshape(n, 3, cols) @ transport.matrix.T
    e_render = np.sqrt(np.square(pt - tt).mean(axis=(1, 2)))
    return SampleMetrics(e_hdr, e_theta, e_sun, e_render)


def metrics(pred, truth, pred_theta, truth_theta, transport, tonemap=DEFAULT_TONEMAP):
    """Single-pair metrics on linear-radiance panoramas."""
    p = pano.tonemap(pred, tonemap).transpose(2, 0, 1)[None]
    t = pano.tonemap(truth, tonemap).transpose(2, 0, 1)[None]
    m = batch_metrics(p, t, np.array([pred_theta]), np.array([truth_theta]), transport)
    return {name: float(getattr(m, name)[0]) for name in METRIC_NAMES}


@dataclass
class MetricReport:
    """Aggregate + per-sample distribution summary of the four metrics."""

    per_sample: SampleMetrics
    sample_ids: list

    def aggregate(self):
        out = {}
        for name in METRIC_NAMES:
            vals = getattr(self.per_sample, name)
            agg = float(vals.mean()) if name == "e_hdr" else float(np.sqrt(np.square(vals).mean()))
            p25, p50, p75 = np.percentile(vals, [25, 50, 75])
            out[name] = dict(aggregate=agg, p25=float(p25), p50=float(p50), p75=float(p75))
        out["e_hdr_x100"] = {k: v * 100 for k, v in out["e_hdr"].items()}
        return out

    def csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sample_id", *METRIC_NAMES])
        for i, sid in enumerate(self.sample_ids):
            writer.writerow([sid] + [repr(float(getattr(self.per_sample, n)[i])) for n in METRIC_NAMES])
        return buf.getvalue()

    def text(self):
        agg = self.aggregate()
        lines = [f"samples: {len(self.per_sample)}"]
        for name in METRIC_NAMES:
            a = agg[name]
            label = f"{name} (x100)" if name == "e_hdr" else name
            scale = 100.0 if name == "e_hdr" else 1.0
            lines.append(
                f"{label}: {a['aggregate'] * scale:.4f}  "
                f"p25={a['p25'] * scale:.4f} p50={a['p50'] * scale:.4f} p75={a['p75'] * scale:.4f}"
            )
        return "\n".join(lines)

    def json_text(self):
        return json.dumps({"samples": len(self.per_sample), "metrics": self.aggregate()}, indent=2)


# ---------------------------------------------------------------------------
# inference pipeline helper

def predict(model, ldr, linearize_mode="jpg", calib=None, tonemap=DEFAULT_TONEMAP):
    """LDR panorama -> (linear HdrPanorama, elevation, tonemapped pred array)."""
    from . import datagen, net
    from .autodiff import Tensor
    from .pano import HdrPanorama, inverse_tonemap

    lin = datagen.linearize_input(ldr, linearize_mode, calib)
    x = Tensor(lin.transpose(2, 0, 1)[None].astype(np.float32))
    y_hdr_tm, y_theta = net.forward(model, x, training=False)
    tm = y_hdr_tm.data[0].transpose(1, 2, 0).astype(np.float64)
    hdr = HdrPanorama(inverse_tonemap(tm, tonemap))
    return hdr, float(y_theta.data[0, 0]), tm


# ---------------------------------------------------------------------------
# temporal coherence

def temporal_eval(predict_fn, frames, tonemap=DEFAULT_TONEMAP):
    """Per-frame independent inference over a day sequence.

    predict_fn(ldr) -> tonemapped prediction array (H, W, 3) or (3, H, W).
    frames: iterable of (hdr_truth, ldr, sun). Returns (rows, spearman)
    where rows are (index, predicted sun intensity, true sun intensity) and
    spearman is None when either series is constant.
    """
    rows = []
    for i, (hdr, ldr, _sun) in enumerate(frames):
        pred_tm = np.asarray(predict_fn(ldr))
        true_tm = pano.tonemap(hdr.data, tonemap)
        rows.append((i, float(pred_tm.max()), float(true_tm.max())))
    pred_series = np.array([r[1] for r in rows])
    true_series = np.array([r[2] for r in rows])
    if np.ptp(pred_series) == 0 or np.ptp(true_series) == 0:
        return rows, None
    rho = stats.spearmanr(pred_series, true_series).statistic
    return rows, float(rho)


def temporal_csv(rows, rho):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["frame", "predicted_sun_intensity", "true_sun_intensity"])
    for r in rows:
        writer.writerow([r[0], repr(r[1]), repr(r[2])])
    writer.writerow(["spearman", "n/a" if rho is None else repr(rho), ""])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# illumination-based retrieval

def resolve_intensity_target(spec, intensities):
    """'bright'/'dim' resolve to the 75th/25th corpus percentile."""
    if isinstance(spec, str):
        if spec == "bright":
            return float(np.percentile(intensities, 75))
        if spec == "dim":
            return float(np.percentile(intensities, 25))
        raise DataError(f"unknown intensity keyword {spec!r} (use 'bright'/'dim' or a number)")
    return float(spec)


def match(items, target_intensity, target_elevation_deg, k, weights=(1.0, 1.0)):
    """Top-k corpus items nearest to (sun intensity, elevation) targets.

    items: (id, intensity, elevation_radians) triples; features are z-scored
    over the corpus and compared by weighted Euclidean distance. Ordering is
    deterministic with id tie-breaks and invariant to corpus order.
    """
    if not items:
        raise DataError("match: empty corpus")
    ids = [it[0] for it in items]
    feats = np.array([[it[1], it[2]] for it in items], dtype=np.float64)
    t_int = resolve_intensity_target(target_intensity, feats[:, 0])
    t_elev = np.deg2rad(float(target_elevation_deg))
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std = np.where(std == 0, 1.0, std)
    z = (feats - mean) / std
    zt = (np.array([t_int, t_elev]) - mean) / std
    w = np.asarray(weights, dtype=np.float64)
    dist = np.sqrt((w * np.square(z - zt)).sum(axis=1))
    order = sorted(range(len(ids)), key=lambda i: (dist[i], str(ids[i])))
    return [(ids[i], float(dist[i])) for i in order[: int(k)]]
