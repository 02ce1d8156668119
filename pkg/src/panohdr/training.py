"""Losses, Adam, the training loop with early stopping, fine-tuning, and
adversarial domain adaptation.

The combined objective is  L = L_hdr + l_theta * L_theta + l_render * L_render
with the HDR term an L1 mean in the tonemapped domain, the elevation term a
squared error in radians, and the render term a squared mean over renders of
the top hemispheres through the transport matrix. All reductions accumulate
in float64; parameters are stored float32.
"""

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import net
from .autodiff import Tensor
from .errors import DataError, NumericalError
from .pano import TonemapParams

DEFAULT_TONEMAP = TonemapParams()


@dataclass(frozen=True)
class LossWeights:
    lambda_theta: float = 0.1
    lambda_render: float = 0.1

    def __post_init__(self):
        if self.lambda_theta < 0 or self.lambda_render < 0:
            raise DataError("LossWeights must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    minibatch: int = 32
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    patience: int = 10
    render_loss_domain: str = "tonemapped"  # or "linear"
    grl_lambda: float = 1.0
    disc_lr: float = None  # defaults to lr
    seed: int = 0

    def __post_init__(self):
        if self.minibatch < 1:
            raise DataError("TrainConfig: minibatch must be >= 1")
        if not self.lr > 0:
            raise DataError("TrainConfig: learning rate must be > 0")
        if self.render_loss_domain not in ("tonemapped", "linear"):
            raise DataError(f"TrainConfig: bad render_loss_domain {self.render_loss_domain!r}")


PAPER_PROFILE = dict(minibatch=128, epochs=500, lr=0.001, beta1=0.9)
FINE_TUNE_LR = 1e-4


# ---------------------------------------------------------------------------
# losses

def loss_hdr(y_hdr_tm, t_hdr_tm):
    """Mean absolute difference in the tonemapped domain."""
    return ad.l1(y_hdr_tm, t_hdr_tm)


def loss_theta(y_theta, t_theta):
    """Batch-mean squared elevation error (radians^2)."""
    return ad.mse(y_theta, t_theta)


def _render_input(y_hdr_tm, domain, tonemap):
    if domain == "linear":
        return ad.power_scale(y_hdr_tm, tonemap.alpha, tonemap.gamma)
    return y_hdr_tm


def target_renders(t_hdr_tm, transport, domain="tonemapped", tonemap=DEFAULT_TONEMAP):
    """Precompute transport renders of the (fixed) targets' top hemispheres."""
    t = np.asarray(t_hdr_tm)
    if domain == "linear":
        t = np.power(np.maximum(t, 0.0) / tonemap.alpha, tonemap.gamma)
    n = t.shape[0]
    cols = transport.matrix.shape[1]
    tmat = transport.matrix_as(t.dtype)
    return t[:, :, : t.shape[2] // 2, :].reshape(n, 3, cols) @ tmat.T


def loss_render(y_hdr_tm, t_hdr_tm, transport, domain="tonemapped", tonemap=DEFAULT_TONEMAP,
                t_render=None):
    """Mean squared difference of transport renders of the top hemispheres.

    Pass t_render (from target_renders) to skip re-rendering fixed targets.
    """
    n = y_hdr_tm.data.shape[0]
    cols = transport.matrix.shape[1]
    tmat = transport.matrix_as(y_hdr_tm.data.dtype)
    y_in = _render_input(y_hdr_tm, domain, tonemap)
    # one wide 2d GEMM: batched (n,3,cols)@(cols,cols) would re-stream the
    # big matrix once per sample
    y_top = ad.reshape(ad.top_half(y_in), (n * 3, cols))
    y_render = ad.matmul_const(y_top, tmat.T)
    if t_render is None:
        t = t_hdr_tm.data if isinstance(t_hdr_tm, Tensor) else t_hdr_tm
        t_render = target_renders(t, transport, domain, tonemap)
    return ad.mse(y_render, np.asarray(t_render).reshape(n * 3, -1))


def loss_all(y_hdr_tm, y_theta, t_hdr_tm, t_theta, weights, transport,
             domain="tonemapped", tonemap=DEFAULT_TONEMAP):
    total = loss_hdr(y_hdr_tm, t_hdr_tm)
    if weights.lambda_theta != 0:
        total = ad.add(total, ad.mul_scalar(loss_theta(y_theta, t_theta), weights.lambda_theta))
    if weights.lambda_render != 0:
        total = ad.add(
            total,
            ad.mul_scalar(loss_render(y_hdr_tm, t_hdr_tm, transport, domain, tonemap), weights.lambda_render),
        )
    return total


# ---------------------------------------------------------------------------
# Adam

class AdamState:
    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(tensors, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, lr_overrides=None):
    """Bias-corrected Adam update over a named tensor dict (in place)."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in tensors.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * np.square(g)
        state.m[name] = m
        state.v[name] = v
        step_lr = lr if lr_overrides is None else lr_overrides.get(name, lr)
        p.data = p.data - step_lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# datasets as arrays

@dataclass
class ArrayDataset:
    """In-memory split: normalized LDR inputs and tonemapped HDR targets."""

    x: np.ndarray  # (N, 3, H, W) float32 in [0, 1]
    t_hdr_tm: np.ndarray  # (N, 3, H, W) float32 tonemapped targets
    t_theta: np.ndarray  # (N, 1) float32 radians
    groups: np.ndarray  # (N,) int
    ids: list = field(default_factory=list)

    def __len__(self):
        return self.x.shape[0]


def load_split(data_dir, rows, split=None, tonemap=DEFAULT_TONEMAP, linearize_mode="jpg"):
    """Materialize one manifest split into arrays (inputs already sun-centered)."""
    from . import datagen, pano_io
    from .pano import tonemap as tonemap_fn

    picked = [r for r in rows if split is None or r.split == split]
    if not picked:
        raise DataError(f"load_split: no rows for split {split!r}")
    n = len(picked)
    first = pano_io.read_ppm(os.path.join(data_dir, picked[0].ldr_path))
    h, w = first.data.shape[:2]
    x = np.empty((n, 3, h, w), dtype=np.float32)
    t = np.empty((n, 3, h, w), dtype=np.float32)
    th = np.empty((n, 1), dtype=np.float32)
    groups = np.empty(n, dtype=np.int64)
    ids = []
    for i, r in enumerate(picked):
        ldr = pano_io.read_ppm(os.path.join(data_dir, r.ldr_path))
        hdr = pano_io.read_pfm(os.path.join(data_dir, r.hdr_path))
        crf = datagen.CrfParams(gamma=r.crf_gamma, shoulder=r.crf_shoulder)
        calib = (crf, datagen.wb_gains(r.wb_hue, r.wb_sat)) if linearize_mode == "rf_wb" else crf
        lin = datagen.linearize_input(ldr, linearize_mode, calib)
        x[i] = lin.transpose(2, 0, 1).astype(np.float32)
        t[i] = tonemap_fn(hdr.data, tonemap).transpose(2, 0, 1).astype(np.float32)
        th[i, 0] = r.sun_elevation
        groups[i] = r.group
        ids.append(r.sample_id)
    return ArrayDataset(x, t, th, groups, ids)


# ---------------------------------------------------------------------------
# training loop

LOG_FIELDS = [
    "epoch",
    "split",
    "loss_hdr",
    "loss_theta",
    "loss_render",
    "loss_all",
    "e_hdr",
    "e_theta",
    "e_sun",
    "e_render",
]


@dataclass
class TrainResult:
    model: "net.ModelParams"
    best_epoch: int
    best_val_loss: float
    log_rows: list


def _check_finite(value, epoch):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss at epoch {epoch}: {value}")


def _epoch_eval(model, data, weights, transport, config, tonemap, batch, t_render=None):
    """Validation losses and eval metrics (inference mode, no stat updates)."""
    from . import evalmetrics

    if t_render is None:
        t_render = target_renders(data.t_hdr_tm, transport, config.render_loss_domain, tonemap)
    sums = np.zeros(4, dtype=np.float64)
    e_sums = np.zeros(4, dtype=np.float64)
    n = len(data)
    count = 0
    for start in range(0, n, batch):
        xb = Tensor(data.x[start : start + batch])
        tb = data.t_hdr_tm[start : start + batch]
        thb = data.t_theta[start : start + batch]
        y_hdr, y_theta = net.forward(model, xb, training=False)
        lh = float(loss_hdr(y_hdr, tb).data)
        lt = float(loss_theta(y_theta, thb).data)
        lr_ = float(
            loss_render(
                y_hdr, tb, transport, config.render_loss_domain, tonemap,
                t_render=t_render[start : start + batch],
            ).data
        )
        la = lh + weights.lambda_theta * lt + weights.lambda_render * lr_
        b = xb.data.shape[0]
        sums += np.array([lh, lt, lr_, la]) * b
        em = evalmetrics.batch_metrics(y_hdr.data, tb, y_theta.data[:, 0], thb[:, 0], transport)
        e_sums += np.array(
            [em.e_hdr.sum(), np.square(em.e_theta).sum(), np.square(em.e_sun).sum(), np.square(em.e_render).sum()]
        )
        count += b
    sums /= count
    e_hdr = e_sums[0] / count
    e_theta = float(np.sqrt(e_sums[1] / count))
    e_sun = float(np.sqrt(e_sums[2] / count))
    e_render = float(np.sqrt(e_sums[3] / count))
    return dict(
        loss_hdr=sums[0],
        loss_theta=sums[1],
        loss_render=sums[2],
        loss_all=sums[3],
        e_hdr=e_hdr,
        e_theta=e_theta,
        e_sun=e_sun,
        e_render=e_render,
    )


def _write_log(path, rows):
    from .pano_io import atomic_write

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in LOG_FIELDS})
    atomic_write(path, buf.getvalue().encode("utf-8"))


def train(
    model,
    train_data,
    val_data,
    transport,
    config=TrainConfig(),
    weights=LossWeights(),
    tonemap=DEFAULT_TONEMAP,
    log_path=None,
    lr=None,
):
    """Minibatch training with best-validation retention and early stopping.

    Stops after `patience` epochs without validation improvement or at the
    epoch budget; returns the best-validation model. Deterministic under a
    fixed seed.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise DataError("train: empty dataset")
    overlap = set(np.unique(train_data.groups)) & set(np.unique(val_data.groups))
    if overlap:
        raise DataError(f"train: group ids straddle train/val splits: {sorted(overlap)[:5]}")
    lr = config.lr if lr is None else lr
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    best = None  # (val_loss, epoch, model copy)
    log_rows = []
    since_best = 0
    train_rt = target_renders(train_data.t_hdr_tm, transport, config.render_loss_domain, tonemap)
    val_rt = target_renders(val_data.t_hdr_tm, transport, config.render_loss_domain, tonemap)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(train_data))
        train_sums = np.zeros(4)
        seen = 0
        for start in range(0, len(perm), config.minibatch):
            idx = perm[start : start + config.minibatch]
            xb = Tensor(train_data.x[idx])
            tb = train_data.t_hdr_tm[idx]
            thb = train_data.t_theta[idx]
            model.zero_grad()
            y_hdr, y_theta = net.forward(model, xb, training=True)
            lh = loss_hdr(y_hdr, tb)
            lt = loss_theta(y_theta, thb)
            lrd = loss_render(
                y_hdr, tb, transport, config.render_loss_domain, tonemap, t_render=train_rt[idx]
            )
            total = ad.add(
                lh,
                ad.add(
                    ad.mul_scalar(lt, weights.lambda_theta),
                    ad.mul_scalar(lrd, weights.lambda_render),
                ),
            )
            _check_finite(float(total.data), epoch)
            total.backward()
            adam_step(model.tensors, state, lr, config.beta1, config.beta2, config.eps)
            b = len(idx)
            train_sums += np.array([float(lh.data), float(lt.data), float(lrd.data), float(total.data)]) * b
            seen += b
        train_sums /= seen
        log_rows.append(
            dict(
                epoch=epoch,
                split="train",
                loss_hdr=train_sums[0],
                loss_theta=train_sums[1],
                loss_render=train_sums[2],
                loss_all=train_sums[3],
                e_hdr=float("nan"),
                e_theta=float("nan"),
                e_sun=float("nan"),
                e_render=float("nan"),
            )
        )
        val = _epoch_eval(
            model, val_data, weights, transport, config, tonemap, config.minibatch, t_render=val_rt
        )
        _check_finite(val["loss_all"], epoch)
        log_rows.append(dict(epoch=epoch, split="val", **val))
        if best is None or val["loss_all"] < best[0]:
            best = (val["loss_all"], epoch, model.copy())
            since_best = 0
        else:
            since_best += 1
            if since_best >= max(config.patience, 1):
                break
    if log_path:
        _write_log(log_path, log_rows)
    return TrainResult(model=best[2], best_epoch=best[1], best_val_loss=best[0], log_rows=log_rows)


def fine_tune(model, train_data, val_data, transport, config=TrainConfig(), **kw):
    """Continue training from an existing model at a lower default rate."""
    if config.epochs == 0:
        return TrainResult(model=model.copy(), best_epoch=0, best_val_loss=float("nan"), log_rows=[])
    return train(model, train_data, val_data, transport, config, lr=kw.pop("lr", FINE_TUNE_LR), **kw)


def train_domain_adapted(
    model,
    syn_train,
    syn_val,
    real_unlabelled,
    transport,
    config=TrainConfig(),
    weights=LossWeights(),
    tonemap=DEFAULT_TONEMAP,
    log_path=None,
):
    """Adversarial domain adaptation on half-synthetic/half-real minibatches.

    Task losses are computed on the synthetic half only; the domain
    cross-entropy covers both halves and reaches the encoder through the
    gradient reversal layer. Synthetic samples carry domain label 0, real 1.
    The real half is normalized by its own batch statistics without touching
    the running stats, so with grl_lambda = 0 and disc_lr = 0 the task
    trajectory is bitwise identical to plain training on the synthetic half.
    """
    if "disc1.w" not in model.tensors:
        raise DataError("train_domain_adapted: model lacks a discriminator head")
    if len(syn_train) == 0 or len(real_unlabelled) == 0:
        raise DataError("train_domain_adapted: empty dataset")
    disc_lr = config.lr if config.disc_lr is None else config.disc_lr
    lr_overrides = {name: disc_lr for name in model.tensors if name.startswith("disc")}
    # separate streams: the synthetic shuffle must match plain training
    # draw-for-draw so the grl_lambda=0 twin comparison is bitwise
    rng = np.random.default_rng(config.seed)
    rng_real = np.random.default_rng([config.seed, 0xDA])
    state = AdamState()
    best = None
    log_rows = []
    since_best = 0
    half = max(1, config.minibatch // 2)
    n_real = len(real_unlabelled)
    syn_rt = target_renders(syn_train.t_hdr_tm, transport, config.render_loss_domain, tonemap)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(syn_train))
        real_perm = rng_real.permutation(n_real)
        train_sums = np.zeros(5)
        seen = 0
        real_cursor = 0
        for start in range(0, len(perm), half):
            idx = perm[start : start + half]
            if real_cursor + len(idx) > n_real:
                real_perm = rng_real.permutation(n_real)
                real_cursor = 0
            ridx = real_perm[real_cursor : real_cursor + len(idx)]
            real_cursor += len(idx)

            model.zero_grad()
            xb = Tensor(syn_train.x[idx])
            y_hdr, y_theta, latent_syn = net.forward(model, xb, training=True, return_latent=True)
            lh = loss_hdr(y_hdr, syn_train.t_hdr_tm[idx])
            lt = loss_theta(y_theta, syn_train.t_theta[idx])
            lrd = loss_render(
                y_hdr, syn_train.t_hdr_tm[idx], transport, config.render_loss_domain, tonemap,
                t_render=syn_rt[idx],
            )
            task = ad.add(
                lh,
                ad.add(
                    ad.mul_scalar(lt, weights.lambda_theta),
                    ad.mul_scalar(lrd, weights.lambda_render),
                ),
            )
            xr = Tensor(real_unlabelled.x[ridx])
            _, _, latent_real = net.forward(
                model, xr, training=True, return_latent=True, update_bn=False
            )
            latents = ad.concat0(latent_syn, latent_real)
            logits = net.forward_domain(model, latents, config.grl_lambda)
            labels = np.concatenate([np.zeros(len(idx), dtype=np.int64), np.ones(len(ridx), dtype=np.int64)])
            ld = ad.softmax_xent(logits, labels)
            total = ad.add(task, ld)
            _check_finite(float(total.data), epoch)
            total.backward()
            adam_step(
                model.tensors, state, config.lr, config.beta1, config.beta2, config.eps,
                lr_overrides=lr_overrides,
            )
            b = len(idx)
            train_sums += (
                np.array([float(lh.data), float(lt.data), float(lrd.data), float(task.data), float(ld.data)]) * b
            )
            seen += b
        train_sums /= seen
        log_rows.append(
            dict(
                epoch=epoch,
                split="train",
                loss_hdr=train_sums[0],
                loss_theta=train_sums[1],
                loss_render=train_sums[2],
                loss_all=train_sums[3],
                e_hdr=float("nan"),
                e_theta=float("nan"),
                e_sun=float("nan"),
                e_render=float("nan"),
            )
        )
        val = _epoch_eval(model, syn_val, weights, transport, config, tonemap, config.minibatch)
        _check_finite(val["loss_all"], epoch)
        log_rows.append(dict(epoch=epoch, split="val", **val))
        if best is None or val["loss_all"] < best[0]:
            best = (val["loss_all"], epoch, model.copy())
            since_best = 0
        else:
            since_best += 1
            if since_best >= max(config.patience, 1):
                break
    if log_path:
        _write_log(log_path, log_rows)
    return TrainResult(model=best[2], best_epoch=best[1], best_val_loss=best[0], log_rows=log_rows)
