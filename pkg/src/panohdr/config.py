"""Flat key=value configuration with section prefixes.

Files look like:

    # comment
    train.lr = 0.001
    net.enc_channels = 64,128,256,256

Command-line --set overrides take precedence over the file; unknown keys
are rejected with their exact names. The `train.profile` key switches the
default scale: `desk` (small widths, 100 epochs, minibatch 32) or `paper`
(full widths, 500 epochs, minibatch 128).
"""

from dataclasses import dataclass

from .errors import DataError


class UsageError(Exception):
    """Bad keys or values; the CLI maps this to exit code 1."""


@dataclass(frozen=True)
class Key:
    name: str
    type: str  # int | float | bool | str | ints | floats
    default: object
    help: str


def _parse_value(key, raw):
    raw = raw.strip()
    try:
        if key.type == "int":
            return int(raw)
        if key.type == "float":
            return float(raw)
        if key.type == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if key.type == "ints":
            return tuple(int(v) for v in raw.split(","))
        if key.type == "floats":
            return tuple(float(v) for v in raw.split(","))
        return raw
    except ValueError as e:
        raise UsageError(f"config key {key.name}: cannot parse {raw!r} as {key.type}") from e


SCHEMA = [
    Key("net.enc_channels", "ints", (64, 128, 256, 256), "encoder widths (4 conv layers)"),
    Key("net.kernels", "ints", (5, 5, 3, 3), "encoder kernel sizes"),
    Key("net.latent_dim", "int", 64, "latent vector size"),
    Key("net.elev_hidden", "ints", (32, 16), "elevation-head hidden widths"),
    Key("net.disc_hidden", "int", 32, "domain-discriminator hidden width"),
    Key("train.profile", "str", "desk", "scale profile: desk or paper"),
    Key("train.minibatch", "int", None, "minibatch size (profile default)"),
    Key("train.lr", "float", 0.001, "initial learning rate"),
    Key("train.beta1", "float", 0.9, "Adam first-moment decay"),
    Key("train.beta2", "float", 0.999, "Adam second-moment decay"),
    Key("train.eps", "float", 1e-8, "Adam epsilon"),
    Key("train.epochs", "int", None, "epoch budget (profile default)"),
    Key("train.patience", "int", 10, "early-stop patience in epochs"),
    Key("train.render_loss_domain", "str", "tonemapped", "render loss domain: tonemapped or linear"),
    Key("train.grl_lambda", "float", 1.0, "gradient-reversal strength (train-da)"),
    Key("train.disc_lr", "float", -1.0, "discriminator learning rate (-1: same as train.lr)"),
    Key("train.fine_tune_lr", "float", 1e-4, "fine-tuning learning rate"),
    Key("train.linearize", "str", "jpg", "input linearization: jpg, gamma22, rf, rf_wb"),
    Key("loss.lambda_theta", "float", 0.1, "sun-elevation loss weight"),
    Key("loss.lambda_render", "float", 0.1, "render loss weight"),
    Key("tonemap.alpha", "float", 1.0 / 30.0, "tone curve scale"),
    Key("tonemap.gamma", "float", 2.2, "tone curve exponent"),
    Key("scene.sphere_radius", "float", 0.45, "bumpy sphere base radius"),
    Key("scene.sphere_center_y", "float", 0.65, "sphere center height"),
    Key("scene.spike_count", "int", 14, "number of radial bumps"),
    Key("scene.spike_amp", "float", 0.3, "bump amplitude (fraction of radius)"),
    Key("scene.spike_sharpness", "float", 30.0, "bump sharpness"),
    Key("scene.spike_seed", "int", 7, "bump direction seed"),
    Key("scene.ground_half_size", "float", 1.7, "ground plane half size"),
    Key("scene.albedo", "float", 1.0, "scene albedo"),
    Key("scene.camera_height", "float", 2.8, "camera height above the plane"),
    Key("scene.fov_deg", "float", 65.0, "camera field of view (degrees)"),
    Key("scene.render_size", "int", 64, "render resolution"),
    Key("gen.n_scenes", "int", 60, "scene groups to generate"),
    Key("gen.samples_per_scene", "int", 4, "base samples per scene"),
    Key("gen.frac_train", "float", 0.69, "train fraction of groups"),
    Key("gen.frac_val", "float", 0.15, "validation fraction of groups"),
    Key("gen.frac_test", "float", 0.16, "test fraction of groups"),
    Key("gen.height", "int", 64, "panorama height"),
    Key("gen.width", "int", 128, "panorama width"),
    Key("gen.tone_augment", "bool", True, "apply camera-response/white-balance augmentation"),
    Key("gen.day_frames", "int", 40, "frames in a day sequence"),
    Key("eval.split", "str", "test", "manifest split to evaluate"),
    Key("match.k", "int", 5, "retrieved neighbors"),
    Key("match.intensity", "str", "bright", "target sun intensity: number, 'bright', or 'dim'"),
    Key("match.elevation_deg", "float", 45.0, "target sun elevation in degrees"),
    Key("infer.align", "bool", True, "rotate the sun to the center before inference"),
]

SCHEMA_BY_NAME = {k.name: k for k in SCHEMA}

PROFILES = {
    "desk": {
        "train.minibatch": 32,
        "train.epochs": 100,
        "net.enc_channels": (32, 64, 128, 128),
    },
    "paper": {
        "train.minibatch": 128,
        "train.epochs": 500,
        "net.enc_channels": (64, 128, 256, 256),
    },
}


def parse_config_text(text, origin="<config>"):
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DataError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        name, raw = stripped.split("=", 1)
        out[name.strip()] = raw.strip()
    return out


def load_config_file(path):
    try:
        with open(path) as f:
            return parse_config_text(f.read(), origin=str(path))
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e


def resolve(raw_pairs):
    """Typed config dict from raw string pairs; unknown keys are fatal."""
    unknown = [name for name in raw_pairs if name not in SCHEMA_BY_NAME]
    if unknown:
        raise UsageError(
            "unknown config key(s): " + ", ".join(sorted(unknown))
            + " (see --help for the full key list)"
        )
    values = {}
    for name, raw in raw_pairs.items():
        values[name] = _parse_value(SCHEMA_BY_NAME[name], raw)
    profile = values.get("train.profile", SCHEMA_BY_NAME["train.profile"].default)
    if profile not in PROFILES:
        raise UsageError(f"train.profile must be one of {sorted(PROFILES)}, got {profile!r}")
    out = {}
    for key in SCHEMA:
        if key.name in values:
            out[key.name] = values[key.name]
        elif key.name in PROFILES[profile]:
            out[key.name] = PROFILES[profile][key.name]
        else:
            out[key.name] = key.default
    return out


def gather(config_path=None, overrides=()):
    raw = {}
    if config_path:
        raw.update(load_config_file(config_path))
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        name, value = item.split("=", 1)
        raw[name.strip()] = value.strip()
    return resolve(raw)


def schema_help():
    lines = ["config keys (file 'key = value' lines or --set key=value):"]
    for key in SCHEMA:
        default = key.default
        if key.name in PROFILES["desk"] and default is None:
            default = f"desk:{PROFILES['desk'][key.name]} paper:{PROFILES['paper'][key.name]}"
        lines.append(f"  {key.name} = {default}  ({key.type}) {key.help}")
    return "\n".join(lines)


def net_config(cfg, with_discriminator=False):
    from .net import NetConfig

    return NetConfig(
        enc_channels=tuple(cfg["net.enc_channels"]),
        kernels=tuple(cfg["net.kernels"]),
        latent_dim=cfg["net.latent_dim"],
        elev_hidden=tuple(cfg["net.elev_hidden"]),
        disc_hidden=cfg["net.disc_hidden"],
        with_discriminator=with_discriminator,
    )


def scene_spec(cfg):
    from .transport import SceneSpec

    return SceneSpec(
        sphere_radius=cfg["scene.sphere_radius"],
        sphere_center_y=cfg["scene.sphere_center_y"],
        spike_count=cfg["scene.spike_count"],
        spike_amp=cfg["scene.spike_amp"],
        spike_sharpness=cfg["scene.spike_sharpness"],
        spike_seed=cfg["scene.spike_seed"],
        ground_half_size=cfg["scene.ground_half_size"],
        albedo=cfg["scene.albedo"],
        camera_height=cfg["scene.camera_height"],
        fov_deg=cfg["scene.fov_deg"],
        render_size=cfg["scene.render_size"],
    )


def train_config(cfg, seed):
    from .training import TrainConfig

    return TrainConfig(
        minibatch=cfg["train.minibatch"],
        lr=cfg["train.lr"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        eps=cfg["train.eps"],
        epochs=cfg["train.epochs"],
        patience=cfg["train.patience"],
        render_loss_domain=cfg["train.render_loss_domain"],
        grl_lambda=cfg["train.grl_lambda"],
        disc_lr=None if cfg["train.disc_lr"] < 0 else cfg["train.disc_lr"],
        seed=seed,
    )
