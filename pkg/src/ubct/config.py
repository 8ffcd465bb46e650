"""Line-oriented experiment configuration.

The format is flat ``key = value`` text with ``#`` comments.  Keys are
dotted and drawn from a fixed schema; unknown keys are rejected so a typo
cannot silently misconfigure an ablation.  Parse errors carry the line
number.  ``parse(serialize(parse(text)))`` is the identity.
"""

from .physics import Geometry, NoiseConfig
from .schedule import ScheduleConfig
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "parse",
    "parse_file",
    "serialize",
    "apply_overrides",
    "to_geometry",
    "to_noise",
    "to_schedule_config",
    "to_train_config",
]


class ConfigError(ValueError):
    pass


def _bool(text):
    if text in ("true", "True"):
        return True
    if text in ("false", "False"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


# key -> (type converter, default)
SCHEMA = {
    "seed": (int, 0),
    "geometry.n": (int, 64),
    "geometry.n_views": (int, 90),
    "geometry.n_dets": (int, 95),
    "geometry.det_spacing": (float, 1.0),
    "noise.i0": (float, 1e5),
    "noise.dose_fraction": (float, 0.2),
    "noise.elec_var": (float, 8.2),
    "noise.att_scale": (float, 0.25),
    "schedule.beta_min": (float, 1e-8),
    "schedule.beta_max": (float, 3.005e-6),
    "phantom.kind": (str, "random_ellipses"),
    "phantom.count": (int, 200),
    "train.K": (int, 6),
    "train.epochs": (int, 200),
    "train.batch_size": (int, 4),
    "train.lr": (float, 1e-4),
    "train.weight_decay": (float, 0.01),
    "train.sigma_train_scale": (float, 1.0),
    "train.ckpt_every": (int, 500),
    "train.max_steps": (int, 0),
    "train.per_layer": (_bool, False),
    "sample.sigma_scale": (float, 1.0),
    "sample.final_noise": (_bool, True),
    "paths.dataset": (str, "dataset"),
    "paths.test_dataset": (str, ""),
    "paths.out": (str, "out"),
}

DEFAULTS = {k: v for k, (_, v) in SCHEMA.items()}


def parse(text, source="<config>"):
    """Parse config text into a full settings dict (defaults filled in)."""
    cfg = dict(DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        conv = SCHEMA[key][0]
        try:
            cfg[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return cfg


def parse_file(path):
    with open(path) as fh:
        return parse(fh.read(), source=path)


def serialize(cfg):
    """Render a settings dict back to sorted key = value lines."""
    lines = []
    for key in sorted(cfg):
        if key not in SCHEMA:
            raise ConfigError(f"serialize: unknown key {key!r}")
        v = cfg[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg, pairs, source="<cli>"):
    """Apply (key, value-string) overrides on top of a settings dict."""
    for key, value in pairs:
        if key not in SCHEMA:
            raise ConfigError(f"{source}: unknown key {key!r}")
        conv = SCHEMA[key][0]
        try:
            cfg[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{source}: bad value for {key}: {exc}") from None
    return cfg


def to_geometry(cfg):
    return Geometry(
        n=cfg["geometry.n"],
        n_views=cfg["geometry.n_views"],
        n_dets=cfg["geometry.n_dets"],
        det_spacing=cfg["geometry.det_spacing"],
    )


def to_noise(cfg):
    return NoiseConfig(
        i0=cfg["noise.i0"],
        dose_fraction=cfg["noise.dose_fraction"],
        elec_var=cfg["noise.elec_var"],
        seed=cfg["seed"],
        att_scale=cfg["noise.att_scale"],
    )


def to_schedule_config(cfg, K=None):
    return ScheduleConfig(
        beta_min=cfg["schedule.beta_min"],
        beta_max=cfg["schedule.beta_max"],
        K=cfg["train.K"] if K is None else K,
    )


def to_train_config(cfg, K=None):
    return TrainConfig(
        K=cfg["train.K"] if K is None else K,
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        weight_decay=cfg["train.weight_decay"],
        seed=cfg["seed"],
        sigma_train_scale=cfg["train.sigma_train_scale"],
        dataset=cfg["paths.dataset"],
        ckpt_every=cfg["train.ckpt_every"],
        max_steps=cfg["train.max_steps"],
        per_layer=cfg["train.per_layer"],
    )
