"""
FFDI - Configuration Module
Typed run configuration and the plain-text `key = value` loader.
Precedence: defaults < FFDI_<KEY> environment (.env honored) < config file < --set overrides.
"""

import os
from dataclasses import asdict, dataclass, field, fields, replace

from dotenv import load_dotenv

from .errors import ConfigurationError
from .logger import get_logger
from .utils import normalize_key, parse_bool, parse_choice, parse_list, stable_hash

logger = get_logger(__name__)

NOISE_TARGETS = {"amplitude", "phase", "both", "none"}
INTERACTIONS = {"iim", "addition", "concatenation", "bilinear"}
CAE_REDUCTIONS = {"sum", "mean"}
CAE_GRAD_STOPS = {"none", "disentangler", "encoder"}
AUGMENT_MODES = {"fdag", "time_noise", "none"}
PRECISIONS = {"single", "wide"}
DEFAULT_DOMAINS = ("flat", "gradient", "texture", "sketch")


@dataclass
class NoiseConfig:
    """Multiplicative U(a, b) and additive N(mu, sigma^2) noise; sigma may come from an SNR instead."""

    target: str = "both"
    mult_low: float = 0.5
    mult_high: float = 1.5
    add_mean: float = 0.0
    add_sigma: float = None
    snr_db: float = 30.0
    apply_probability: float = 0.5
    seed: int = 0

    def validate(self):
        if self.target not in NOISE_TARGETS:
            raise ConfigurationError(f"noise target {self.target!r} not in {sorted(NOISE_TARGETS)}")
        if self.mult_low > self.mult_high:
            raise ConfigurationError(f"noise bounds need a <= b, got {self.mult_low} > {self.mult_high}")
        if self.add_sigma is not None and self.snr_db is not None:
            raise ConfigurationError("set either noise_add_sigma or noise_snr_db, not both")
        if self.add_sigma is not None and self.add_sigma < 0:
            raise ConfigurationError(f"noise sigma must be >= 0, got {self.add_sigma}")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ConfigurationError(f"apply probability must lie in [0, 1], got {self.apply_probability}")
        return self


@dataclass
class FfdiConfig:
    num_classes: int = 5
    image_channels: int = 3
    image_size: int = 32
    encoder_widths: tuple = (16, 32, 64, 64)
    encoder_strides: tuple = (1, 2, 2, 2)
    decoder_widths: tuple = (32, 16)
    iim_kernel: int = 7
    lam: float = 1.0
    r: int = 8
    interaction: str = "iim"
    use_high: bool = True
    use_low: bool = True
    use_interaction: bool = True
    cae_reduction: str = "sum"
    cae_grad_stop: str = "none"
    precision: str = "single"

    @property
    def feature_channels(self):
        return self.encoder_widths[-1]

    @property
    def feature_size(self):
        size = self.image_size
        for stride in self.encoder_strides:
            size = (size + 2 - 3) // stride + 1
        return size

    def validate(self):
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.r < 0:
            raise ConfigurationError(f"r must be >= 0, got {self.r}")
        if len(self.encoder_widths) != len(self.encoder_strides) or not self.encoder_widths:
            raise ConfigurationError("encoder_widths and encoder_strides must be non-empty and aligned")
        if self.interaction not in INTERACTIONS:
            raise ConfigurationError(f"interaction {self.interaction!r} not in {sorted(INTERACTIONS)}")
        if self.use_interaction and not (self.use_high and self.use_low):
            raise ConfigurationError("use_interaction needs both use_high and use_low")
        if self.cae_reduction not in CAE_REDUCTIONS:
            raise ConfigurationError(f"cae_reduction {self.cae_reduction!r} not in {sorted(CAE_REDUCTIONS)}")
        if self.cae_grad_stop not in CAE_GRAD_STOPS:
            raise ConfigurationError(f"cae_grad_stop {self.cae_grad_stop!r} not in {sorted(CAE_GRAD_STOPS)}")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"precision {self.precision!r} not in {sorted(PRECISIONS)}")
        if self.iim_kernel < 1 or self.iim_kernel % 2 == 0:
            raise ConfigurationError(f"iim_kernel must be a positive odd number, got {self.iim_kernel}")
        upsample = 2 ** (len(self.decoder_widths) + 1)
        if self.feature_size * upsample != self.image_size:
            raise ConfigurationError(
                f"decoder upsamples {self.feature_size} by {upsample}, which does not reach image size {self.image_size}"
            )
        return self


@dataclass
class TrainConfig:
    model: FfdiConfig = field(default_factory=FfdiConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    iterations: int = 2000
    batch_per_domain: int = 16
    lr_classifier: float = 0.05
    lr_other: float = 0.01
    weight_decay: float = 5e-4
    milestones: tuple = (800, 1400)
    lr_gamma: float = 0.1
    momentum: float = 0.9
    grad_clip: float = 5.0
    augment_mode: str = "fdag"
    standard_augment: bool = True
    held_out: str = "sketch"
    seed: int = 0
    seeds: tuple = (0, 1, 2)
    domains: tuple = DEFAULT_DOMAINS
    suite_held_out: tuple = ()
    per_class_per_domain: int = 120
    dataset_seed: int = 0
    data_dir: str = ""
    out_dir: str = "runs/latest"
    log_every: int = 100
    eval_batch: int = 256
    prefetch: int = 2
    workers: int = 1

    def validate(self):
        if self.iterations < 0:
            raise ConfigurationError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_per_domain < 1:
            raise ConfigurationError(f"batch_per_domain must be >= 1, got {self.batch_per_domain}")
        if self.lr_classifier <= 0 or self.lr_other <= 0:
            raise ConfigurationError("learning rates must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.augment_mode not in AUGMENT_MODES:
            raise ConfigurationError(f"augment_mode {self.augment_mode!r} not in {sorted(AUGMENT_MODES)}")
        if not self.seeds:
            raise ConfigurationError("seeds must list at least one seed")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        self.model.validate()
        self.noise.validate()
        return self

    @property
    def fdag_enabled(self):
        return self.augment_mode == "fdag" and self.noise.target != "none"


def _int_tuple(raw):
    return tuple(parse_list(raw, int))


def _str_tuple(raw):
    return tuple(parse_list(raw, str))


def _optional_float(raw):
    if raw is None or str(raw).strip().lower() in ("", "none", "null"):
        return None
    return float(raw)


def _choice(choices):
    return lambda raw: parse_choice(raw, choices)


# setting one of these to a value clears the other
EXCLUSIVE_NOISE_KEYS = {"noise_add_sigma": "snr_db", "noise_snr_db": "add_sigma"}

# flat key -> (section, attribute, parser); section None means TrainConfig itself
FIELDS = {
    "num_classes": ("model", "num_classes", int),
    "image_channels": ("model", "image_channels", int),
    "image_size": ("model", "image_size", int),
    "encoder_widths": ("model", "encoder_widths", _int_tuple),
    "encoder_strides": ("model", "encoder_strides", _int_tuple),
    "decoder_widths": ("model", "decoder_widths", _int_tuple),
    "iim_kernel": ("model", "iim_kernel", int),
    "lam": ("model", "lam", float),
    "r": ("model", "r", int),
    "interaction": ("model", "interaction", _choice(INTERACTIONS)),
    "use_high": ("model", "use_high", parse_bool),
    "use_low": ("model", "use_low", parse_bool),
    "use_interaction": ("model", "use_interaction", parse_bool),
    "cae_reduction": ("model", "cae_reduction", _choice(CAE_REDUCTIONS)),
    "cae_grad_stop": ("model", "cae_grad_stop", _choice(CAE_GRAD_STOPS)),
    "precision": ("model", "precision", _choice(PRECISIONS)),
    "noise_target": ("noise", "target", _choice(NOISE_TARGETS)),
    "noise_mult_low": ("noise", "mult_low", float),
    "noise_mult_high": ("noise", "mult_high", float),
    "noise_add_mean": ("noise", "add_mean", float),
    "noise_add_sigma": ("noise", "add_sigma", _optional_float),
    "noise_snr_db": ("noise", "snr_db", _optional_float),
    "noise_probability": ("noise", "apply_probability", float),
    "noise_seed": ("noise", "seed", int),
    "iterations": (None, "iterations", int),
    "batch_per_domain": (None, "batch_per_domain", int),
    "lr_classifier": (None, "lr_classifier", float),
    "lr_other": (None, "lr_other", float),
    "weight_decay": (None, "weight_decay", float),
    "milestones": (None, "milestones", _int_tuple),
    "lr_gamma": (None, "lr_gamma", float),
    "momentum": (None, "momentum", float),
    "grad_clip": (None, "grad_clip", float),
    "augment_mode": (None, "augment_mode", _choice(AUGMENT_MODES)),
    "standard_augment": (None, "standard_augment", parse_bool),
    "held_out": (None, "held_out", str),
    "seed": (None, "seed", int),
    "seeds": (None, "seeds", _int_tuple),
    "domains": (None, "domains", _str_tuple),
    "suite_held_out": (None, "suite_held_out", _str_tuple),
    "per_class_per_domain": (None, "per_class_per_domain", int),
    "dataset_seed": (None, "dataset_seed", int),
    "data_dir": (None, "data_dir", str),
    "out_dir": (None, "out_dir", str),
    "log_every": (None, "log_every", int),
    "eval_batch": (None, "eval_batch", int),
    "prefetch": (None, "prefetch", int),
    "workers": (None, "workers", int),
}

ALIASES = {"lambda": "lam", "held_out_domain": "held_out", "batch_size": "batch_per_domain"}


def canonical_key(key):
    key = normalize_key(key)
    return ALIASES.get(key, key)


def set_value(cfg, key, raw):
    """Return a copy of cfg with one flat key applied."""
    name = canonical_key(key)
    if name not in FIELDS:
        raise ConfigurationError(f"unknown config key {key!r}")
    section, attr, parser = FIELDS[name]
    try:
        value = parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad value for {name}: {exc}")
    if section is None:
        return replace(cfg, **{attr: value})
    updates = {attr: value}
    if name in EXCLUSIVE_NOISE_KEYS and value is not None:
        updates[EXCLUSIVE_NOISE_KEYS[name]] = None
    return replace(cfg, **{section: replace(getattr(cfg, section), **updates)})


def parse_config_text(text, source="<config>"):
    pairs = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw_line.strip()!r}")
        key, value = line.split("=", 1)
        if not key.strip():
            raise ConfigurationError(f"{source}:{lineno}: empty key")
        pairs.append((key.strip(), value.strip()))
    return pairs


def parse_override(text):
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like key=value")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def env_pairs(environ=None):
    environ = os.environ if environ is None else environ
    pairs = []
    for name in FIELDS:
        env_name = f"FFDI_{name.upper()}"
        if env_name in environ:
            pairs.append((name, environ[env_name]))
    return pairs


def load_train_config(path=None, overrides=(), environ=None, base=None):
    """Build and validate a TrainConfig from env, an optional file and key=value overrides."""
    if environ is None:
        load_dotenv()
    cfg = base or TrainConfig()
    for key, value in env_pairs(environ):
        cfg = set_value(cfg, key, value)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}")
        for key, value in parse_config_text(text, source=path):
            cfg = set_value(cfg, key, value)
    for item in overrides or ():
        key, value = parse_override(item) if isinstance(item, str) else item
        cfg = set_value(cfg, key, value)
    return cfg.validate()


def apply_overrides(cfg, **values):
    """Programmatic counterpart of --set, used by the sweep and ablation drivers."""
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        cfg = set_value(cfg, key, "none" if value is None else value)
    return cfg


def to_flat_dict(cfg):
    flat = {}
    for name, (section, attr, _parser) in FIELDS.items():
        owner = cfg if section is None else getattr(cfg, section)
        value = getattr(owner, attr)
        flat[name] = list(value) if isinstance(value, tuple) else value
    return flat


def to_config_text(cfg):
    lines = ["# ffdi run configuration"]
    for key, value in to_flat_dict(cfg).items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    return stable_hash(to_flat_dict(cfg))


def model_config_from_dict(payload):
    known = {f.name for f in fields(FfdiConfig)}
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in payload.items() if k in known}
    return FfdiConfig(**values).validate()


def model_config_to_dict(cfg):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}
