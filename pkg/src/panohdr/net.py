"""Two-headed convolutional autoencoder: LDR panorama in, HDR out.

Encoder: four stride-2 conv blocks (conv + batchnorm + ELU), flatten,
FC to a 64-d latent. HDR head: FC back to the deepest conv shape, four
stride-2 transposed-conv blocks; each decoder stage receives the matching
encoder activation through an additive skip, and the output activation is
ELU+1 so predictions stay non-negative. Elevation head: small FC stack on
the latent. Optional domain discriminator: gradient reversal, FC 64->32,
ELU, FC 32->2.

Parameter count, with E = encoder widths, K = kernels, L = latent,
F = flattened deepest conv size, and He = elevation hidden sizes:
  sum over conv i of  Cout*(Cin*k^2 + 1) + 2*Cout          (conv + bn)
  + L*(F + 1) + F*(L + 1)                                  (latent FCs)
  + sum over deconv i of Cout*(Cin*k^2 + 1) + 2*Cout(bn on hidden only)
  + elevation FC chain + (optional) discriminator FCs.
"""

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .errors import DataError

CHECKPOINT_MAGIC = b"PHDRCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    input_height: int = 64
    input_width: int = 128
    in_channels: int = 3
    enc_channels: tuple = (64, 128, 256, 256)
    kernels: tuple = (5, 5, 3, 3)
    latent_dim: int = 64
    elev_hidden: tuple = (32, 16)
    with_discriminator: bool = False
    disc_hidden: int = 32

    def __post_init__(self):
        if len(self.enc_channels) != 4 or len(self.kernels) != 4:
            raise DataError("NetConfig: four encoder layers are required")
        if self.input_height * 2 != self.input_width:
            raise DataError("NetConfig: lat-long input needs width == 2*height")
        if self.input_height % 16 != 0:
            raise DataError("NetConfig: input height must be divisible by 16")

    @property
    def deep_shape(self):
        """(C, H, W) after the four stride-2 encoder convs."""
        return (self.enc_channels[-1], self.input_height // 16, self.input_width // 16)

    @property
    def flat_dim(self):
        c, h, w = self.deep_shape
        return c * h * w

    def canonical(self):
        return json.dumps(
            {
                "input_height": self.input_height,
                "input_width": self.input_width,
                "in_channels": self.in_channels,
                "enc_channels": list(self.enc_channels),
                "kernels": list(self.kernels),
                "latent_dim": self.latent_dim,
                "elev_hidden": list(self.elev_hidden),
                "with_discriminator": self.with_discriminator,
                "disc_hidden": self.disc_hidden,
            },
            sort_keys=True,
        )

    def hash(self):
        return hashlib.sha256(self.canonical().encode("ascii")).hexdigest()

    @staticmethod
    def from_canonical(text):
        d = json.loads(text)
        d["enc_channels"] = tuple(d["enc_channels"])
        d["kernels"] = tuple(d["kernels"])
        d["elev_hidden"] = tuple(d["elev_hidden"])
        return NetConfig(**d)


class ModelParams:
    """All learnable tensors plus batchnorm running stats, keyed by name."""

    def __init__(self, config, tensors, bn_states):
        self.config = config
        self.tensors = tensors  # dict[str, Tensor], insertion-ordered
        self.bn_states = bn_states  # dict[str, BatchNormState]

    def named(self):
        return self.tensors.items()

    def param_count(self):
        return sum(t.data.size for t in self.tensors.values())

    def copy(self):
        tensors = {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.tensors.items()}
        bn = {k: s.copy() for k, s in self.bn_states.items()}
        return ModelParams(self.config, tensors, bn)

    def astype(self, dtype):
        out = self.copy()
        for t in out.tensors.values():
            t.data = t.data.astype(dtype)
        for s in out.bn_states.values():
            s.running_mean = s.running_mean.astype(dtype)
            s.running_var = s.running_var.astype(dtype)
        return out

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()


def _he(rng, shape, fan_in, dtype):
    return Tensor(
        (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype), requires_grad=True
    )


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def init_params(config, seed=0, dtype=np.float32):
    """He-initialized parameters; deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)
    t = {}
    bn = {}
    cin = config.in_channels
    for i, (cout, k) in enumerate(zip(config.enc_channels, config.kernels), start=1):
        t[f"enc{i}.w"] = _he(rng, (cout, cin, k, k), cin * k * k, dtype)
        t[f"enc{i}.b"] = _zeros(cout, dtype)
        t[f"enc{i}.bn.gamma"] = _ones(cout, dtype)
        t[f"enc{i}.bn.beta"] = _zeros(cout, dtype)
        bn[f"enc{i}.bn"] = BatchNormState(cout, dtype)
        cin = cout
    flat = config.flat_dim
    t["fc_lat.w"] = _he(rng, (config.latent_dim, flat), flat, dtype)
    t["fc_lat.b"] = _zeros(config.latent_dim, dtype)
    t["dec_fc.w"] = _he(rng, (flat, config.latent_dim), config.latent_dim, dtype)
    t["dec_fc.b"] = _zeros(flat, dtype)
    dec_out = list(config.enc_channels[:-1][::-1]) + [config.in_channels]  # e.g. 256,128,64 -> 3
    dec_in = config.enc_channels[-1]
    dec_kernels = config.kernels[::-1]
    for i, (cout, k) in enumerate(zip(dec_out, dec_kernels), start=1):
        t[f"dec{i}.w"] = _he(rng, (dec_in, cout, k, k), dec_in * k * k, dtype)
        t[f"dec{i}.b"] = _zeros(cout, dtype)
        if i < len(dec_out):  # hidden decoder stages carry batchnorm
            t[f"dec{i}.bn.gamma"] = _ones(cout, dtype)
            t[f"dec{i}.bn.beta"] = _zeros(cout, dtype)
            bn[f"dec{i}.bn"] = BatchNormState(cout, dtype)
        dec_in = cout
    fan = config.latent_dim
    for i, width in enumerate(config.elev_hidden, start=1):
        t[f"elev{i}.w"] = _he(rng, (width, fan), fan, dtype)
        t[f"elev{i}.b"] = _zeros(width, dtype)
        fan = width
    t["elev_out.w"] = _he(rng, (1, fan), fan, dtype)
    t["elev_out.b"] = _zeros(1, dtype)
    if config.with_discriminator:
        t["disc1.w"] = _he(rng, (config.disc_hidden, config.latent_dim), config.latent_dim, dtype)
        t["disc1.b"] = _zeros(config.disc_hidden, dtype)
        t["disc2.w"] = _he(rng, (2, config.disc_hidden), config.disc_hidden, dtype)
        t["disc2.b"] = _zeros(2, dtype)
    return ModelParams(config, t, bn)


def expected_param_count(config):
    """Closed-form parameter count; must match ModelParams.param_count()."""
    total = 0
    cin = config.in_channels
    for cout, k in zip(config.enc_channels, config.kernels):
        total += cout * (cin * k * k + 1) + 2 * cout
        cin = cout
    flat = config.flat_dim
    total += config.latent_dim * (flat + 1) + flat * (config.latent_dim + 1)
    dec_out = list(config.enc_channels[:-1][::-1]) + [config.in_channels]
    dec_in = config.enc_channels[-1]
    for i, (cout, k) in enumerate(zip(dec_out, config.kernels[::-1]), start=1):
        total += cout * (dec_in * k * k + 1)
        if i < len(dec_out):
            total += 2 * cout
        dec_in = cout
    fan = config.latent_dim
    for width in config.elev_hidden:
        total += width * (fan + 1)
        fan = width
    total += fan + 1
    if config.with_discriminator:
        total += config.disc_hidden * (config.latent_dim + 1) + 2 * (config.disc_hidden + 1)
    return total


def forward(model, x, training=False, return_latent=False, update_bn=True, hidden=None):
    """Run the autoencoder.

    x: Tensor (N, 3, H, W), LDR codes already normalized to [0, 1] and
    sun-centered. Returns (y_hdr_tm, y_theta): the HDR prediction in the
    tonemapped domain (non-negative) and the sun elevation in radians,
    plus the latent when return_latent is set. Pass a dict as `hidden` to
    capture intermediate activations (enc1..enc4, dec_in1..dec_in4).
    """
    cfg = model.config
    t = model.tensors
    n, c, h, w = x.data.shape
    if (c, h, w) != (cfg.in_channels, cfg.input_height, cfg.input_width):
        raise DataError(
            f"forward: expected input (N, {cfg.in_channels}, {cfg.input_height}, "
            f"{cfg.input_width}), got {x.data.shape}"
        )
    skips = []
    cur = x
    for i in range(1, 5):
        cur = ad.conv2d(cur, t[f"enc{i}.w"], t[f"enc{i}.b"], stride=2)
        cur = ad.batchnorm(
            cur, t[f"enc{i}.bn.gamma"], t[f"enc{i}.bn.beta"], model.bn_states[f"enc{i}.bn"],
            training, update_running=update_bn,
        )
        cur = ad.elu(cur)
        skips.append(cur)
        if hidden is not None:
            hidden[f"enc{i}"] = cur.data
    flat = ad.reshape(cur, (n, cfg.flat_dim))
    latent = ad.linear(flat, t["fc_lat.w"], t["fc_lat.b"])

    dc, dh, dw = cfg.deep_shape
    cur = ad.reshape(ad.linear(latent, t["dec_fc.w"], t["dec_fc.b"]), (n, dc, dh, dw))
    for i in range(1, 5):
        cur = ad.add(cur, skips[4 - i])  # conv_j output feeds deconv_(5-j) input
        if hidden is not None:
            hidden[f"dec_in{i}"] = cur.data
        cur = ad.conv_transpose2d(cur, t[f"dec{i}.w"], t[f"dec{i}.b"], stride=2)
        if i < 4:
            cur = ad.batchnorm(
                cur, t[f"dec{i}.bn.gamma"], t[f"dec{i}.bn.beta"], model.bn_states[f"dec{i}.bn"],
                training, update_running=update_bn,
            )
            cur = ad.elu(cur)
    y_hdr = ad.add_scalar(ad.elu(cur), 1.0)

    eh = latent
    for i in range(1, len(cfg.elev_hidden) + 1):
        eh = ad.elu(ad.linear(eh, t[f"elev{i}.w"], t[f"elev{i}.b"]))
    y_theta = ad.linear(eh, t["elev_out.w"], t["elev_out.b"])

    if return_latent:
        return y_hdr, y_theta, latent
    return y_hdr, y_theta


def forward_domain(model, latent, grl_lambda=1.0):
    """Domain-classifier logits from the latent, via gradient reversal."""
    t = model.tensors
    if "disc1.w" not in t:
        raise DataError("forward_domain: model has no discriminator (with_discriminator=False)")
    h = ad.gradient_reversal(latent, grl_lambda)
    h = ad.elu(ad.linear(h, t["disc1.w"], t["disc1.b"]))
    return ad.linear(h, t["disc2.w"], t["disc2.b"])


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, config hash + canonical text, then
# named little-endian float32/float64 blocks (docs/FORMATS.md)

def checkpoint_bytes(model):
    cfg_text = model.config.canonical().encode("ascii")
    cfg_hash = bytes.fromhex(model.config.hash())
    blocks = []
    entries = [(name, t.data) for name, t in model.tensors.items()]
    for name, state in model.bn_states.items():
        entries.append((name + ".running_mean", state.running_mean))
        entries.append((name + ".running_var", state.running_var))
    for name, arr in entries:
        nb = name.encode("ascii")
        a32 = np.ascontiguousarray(arr, dtype="<f4")
        blocks.append(
            struct.pack("<H", len(nb))
            + nb
            + struct.pack("<B", a32.ndim)
            + struct.pack(f"<{a32.ndim}I", *a32.shape)
            + a32.tobytes()
        )
    head = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
    head += struct.pack("<I", len(cfg_hash)) + cfg_hash
    head += struct.pack("<I", len(cfg_text)) + cfg_text
    head += struct.pack("<I", len(entries))
    return head + b"".join(blocks)


def save_checkpoint(model, path):
    from .pano_io import atomic_write

    atomic_write(path, checkpoint_bytes(model))


def _take(buf, off, n, path):
    if off + n > len(buf):
        raise DataError(f"{path}: truncated checkpoint")
    return buf[off : off + n], off + n


def load_checkpoint(path, config=None):
    """Load a checkpoint; verifies magic, version and NetConfig hash."""
    with open(path, "rb") as f:
        buf = f.read()
    raw, off = _take(buf, 0, len(CHECKPOINT_MAGIC), path)
    if raw != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    raw, off = _take(buf, off, 4, path)
    version = struct.unpack("<I", raw)[0]
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    raw, off = _take(buf, off, 4, path)
    (hlen,) = struct.unpack("<I", raw)
    file_hash, off = _take(buf, off, hlen, path)
    raw, off = _take(buf, off, 4, path)
    (clen,) = struct.unpack("<I", raw)
    cfg_text, off = _take(buf, off, clen, path)
    file_config = NetConfig.from_canonical(cfg_text.decode("ascii"))
    if file_hash.hex() != file_config.hash():
        raise DataError(f"{path}: config hash does not match embedded config")
    if config is not None and config.hash() != file_config.hash():
        raise DataError(
            f"{path}: checkpoint was written for a different NetConfig "
            f"(file {file_hash.hex()[:12]}..., requested {config.hash()[:12]}...)"
        )
    raw, off = _take(buf, off, 4, path)
    (n_entries,) = struct.unpack("<I", raw)
    arrays = {}
    for _ in range(n_entries):
        raw, off = _take(buf, off, 2, path)
        (nlen,) = struct.unpack("<H", raw)
        raw, off = _take(buf, off, nlen, path)
        name = raw.decode("ascii")
        raw, off = _take(buf, off, 1, path)
        ndim = raw[0]
        raw, off = _take(buf, off, 4 * ndim, path)
        shape = struct.unpack(f"<{ndim}I", raw)
        count = int(np.prod(shape)) if ndim else 1
        raw, off = _take(buf, off, 4 * count, path)
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if off != len(buf):
        raise DataError(f"{path}: trailing bytes after checkpoint payload")

    model = init_params(file_config, seed=0, dtype=np.float32)
    for name, t in model.tensors.items():
        if name not in arrays:
            raise DataError(f"{path}: missing parameter block {name}")
        if arrays[name].shape != t.data.shape:
            raise DataError(f"{path}: shape mismatch for {name}")
        t.data = arrays[name]
    for name, state in model.bn_states.items():
        for suffix in (".running_mean", ".running_var"):
            if name + suffix not in arrays:
                raise DataError(f"{path}: missing batchnorm block {name + suffix}")
        state.running_mean = arrays[name + ".running_mean"]
        state.running_var = arrays[name + ".running_var"]
    return model
