"""
FFDI - Model Module
Encoder E, disentangler D (two parallel conv branches), reconstructors R_H/R_L,
the information interaction mechanism, classifiers C_AH/C_AL/C_I and the
joint objective L_ci + lambda * (L_caL + L_caH + L_caeL + L_caeH).
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import ConfigurationError, ShapeError
from .logger import get_logger
from .spectral import decompose_batch

logger = get_logger(__name__)

LOSS_KEYS = ("L_ci", "L_caH", "L_caL", "L_caeH", "L_caeL", "L_all")
TAPS = ("f_E", "f_H", "f_L", "f_Z")
CLASSIFIER_GROUP = "classifier"
OTHER_GROUP = "other"
# images enter the network shifted to roughly zero mean
INPUT_OFFSET = 0.5
# output layer of each reconstructor starts this much smaller than fan-in init
RECONSTRUCTOR_OUTPUT_SCALE = 0.1


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    domains: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains)
        if self.images.ndim != 4:
            raise ShapeError(f"batch images must be N x C x H x W, got {self.images.shape}")
        if len(self.labels) != len(self.images) or len(self.domains) != len(self.images):
            raise ShapeError("batch images, labels and domain ids must have equal length")

    def __len__(self):
        return len(self.labels)


def fused_width(cfg):
    c = cfg.feature_channels
    if cfg.use_interaction and cfg.interaction == "concatenation":
        return 2 * c
    if cfg.use_interaction and cfg.interaction == "bilinear":
        return c * c
    return c


class FfdiModel:
    """All learnable parameters plus the forward pieces of the network."""

    def __init__(self, cfg, seed=0):
        self.cfg = cfg.validate()
        self.dtype = tc.resolve_dtype(cfg.precision)
        self.params = OrderedDict()
        self._build(np.random.default_rng(seed))

    def _add(self, name, param):
        param.name = name
        self.params[name] = param

    def _conv(self, rng, name, c_out, c_in, k):
        self._add(f"{name}.weight", tc.init_uniform(rng, (c_out, c_in, k, k), c_in * k * k, self.dtype))
        self._add(f"{name}.bias", tc.init_zeros((c_out,), self.dtype))

    def _deconv(self, rng, name, c_in, c_out, k, stride, scale=1.0):
        fan_in = max(1, c_in * k * k // (stride * stride))
        weight = tc.init_uniform(rng, (c_in, c_out, k, k), fan_in, self.dtype)
        weight.data *= weight.data.dtype.type(scale)
        self._add(f"{name}.weight", weight)
        self._add(f"{name}.bias", tc.init_zeros((c_out,), self.dtype))

    def _linear(self, rng, name, c_out, c_in):
        bound_fan = max(1, c_in)
        weight = rng.uniform(-1.0, 1.0, size=(c_out, c_in)) / np.sqrt(bound_fan)
        self._add(f"{name}.weight", tc.Parameter(weight, dtype=self.dtype))
        self._add(f"{name}.bias", tc.init_zeros((c_out,), self.dtype))

    def _build(self, rng):
        cfg = self.cfg
        c_in = cfg.image_channels
        for index, width in enumerate(cfg.encoder_widths):
            self._conv(rng, f"encoder.{index}", width, c_in, 3)
            c_in = width
        c_f = cfg.feature_channels
        for branch in ("high", "low"):
            self._conv(rng, f"disentangler.{branch}", c_f, c_f, 3)
        decoder = list(cfg.decoder_widths) + [cfg.image_channels]
        for branch in ("high", "low"):
            width_in = c_f
            for index, width in enumerate(decoder):
                scale = RECONSTRUCTOR_OUTPUT_SCALE if index == len(decoder) - 1 else 1.0
                self._deconv(rng, f"reconstructor.{branch}.{index}", width_in, width, 4, 2, scale)
                width_in = width
        self._conv(rng, "iim", 1, 2, cfg.iim_kernel)
        self._linear(rng, "classifier_high", cfg.num_classes, c_f)
        self._linear(rng, "classifier_low", cfg.num_classes, c_f)
        self._linear(rng, "classifier_fused", cfg.num_classes, fused_width(cfg))

    def p(self, name):
        return self.params[name]

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def parameter_groups(self):
        """C_I trains with its own learning rate; everything else shares the other."""
        classifier = [p for n, p in self.params.items() if n.startswith("classifier_fused.")]
        other = [p for n, p in self.params.items() if not n.startswith("classifier_fused.")]
        return {CLASSIFIER_GROUP: classifier, OTHER_GROUP: other}

    def parameter_blocks(self):
        """Parameters keyed by module: encoder, disentangler.high, reconstructor.low, iim, classifier_fused, ..."""
        blocks = OrderedDict()
        for name, param in self.params.items():
            parts = name.split(".")
            key = ".".join(parts[:2]) if parts[0] in ("disentangler", "reconstructor") else parts[0]
            blocks.setdefault(key, []).append(param)
        return blocks

    def zero_grad(self):
        for param in self.params.values():
            param.zero_grad()

    def state_dict(self):
        return OrderedDict((name, param.data.copy()) for name, param in self.params.items())

    def load_state_dict(self, state):
        for name, param in self.params.items():
            if name not in state:
                raise ShapeError(f"checkpoint is missing parameter {name}")
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {value.shape} != model shape {param.shape}")
            param.data = value.astype(self.dtype, copy=True)
            param.zero_grad()
        extra = set(state) - set(self.params)
        if extra:
            raise ShapeError(f"checkpoint has unknown parameters: {sorted(extra)}")

    # forward pieces

    def as_input(self, images):
        images = np.asarray(images)
        cfg = self.cfg
        expected = (cfg.image_channels, cfg.image_size, cfg.image_size)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ConfigurationError(f"model expects N x {expected}, got {images.shape}")
        return tc.Tensor(np.asarray(images, dtype=np.float64) - INPUT_OFFSET, dtype=self.dtype)

    def encode(self, x):
        if not isinstance(x, tc.Tensor):
            x = self.as_input(x)
        out = x
        for index, stride in enumerate(self.cfg.encoder_strides):
            out = tc.conv2d(out, self.p(f"encoder.{index}.weight"), self.p(f"encoder.{index}.bias"), stride, 1)
            out = tc.relu(out)
        return out

    def disentangle_branch(self, f_e, branch):
        return tc.conv2d(f_e, self.p(f"disentangler.{branch}.weight"), self.p(f"disentangler.{branch}.bias"), 1, 1)

    def disentangle(self, f_e):
        return self.disentangle_branch(f_e, "high"), self.disentangle_branch(f_e, "low")

    def reconstruct(self, f, which):
        branch = {"H": "high", "L": "low", "high": "high", "low": "low"}.get(which)
        if branch is None:
            raise ConfigurationError(f"reconstruct: which must be H or L, got {which!r}")
        stages = len(self.cfg.decoder_widths) + 1
        if f.shape[2] * 2 ** stages != self.cfg.image_size:
            raise ConfigurationError(
                f"reconstruct: feature size {f.shape[2]} cannot reach image size {self.cfg.image_size}"
            )
        out = f
        for index in range(stages):
            out = tc.transposed_conv2d(
                out,
                self.p(f"reconstructor.{branch}.{index}.weight"),
                self.p(f"reconstructor.{branch}.{index}.bias"),
                2,
                1,
            )
            if index < stages - 1:
                out = tc.relu(out)
        return out

    def iim_mask(self, f_l):
        spatial = tc.channel_pool(f_l)
        pad = self.cfg.iim_kernel // 2
        return tc.sigmoid(tc.conv2d(spatial, self.p("iim.weight"), self.p("iim.bias"), 1, pad))

    def iim(self, f_l, f_h):
        if f_l.shape != f_h.shape:
            raise ShapeError(f"iim: f_L {f_l.shape} and f_H {f_h.shape} differ")
        return tc.channel_gate(self.iim_mask(f_l), f_h)

    def interact_baseline(self, f_l, f_h, mode):
        if f_l.shape != f_h.shape:
            raise ShapeError(f"interaction: f_L {f_l.shape} and f_H {f_h.shape} differ")
        if mode == "addition":
            return f_h + f_l
        if mode == "concatenation":
            return tc.concat_channels(f_h, f_l)
        if mode == "bilinear":
            pooled = tc.outer_product(tc.global_avg_pool(f_h), tc.global_avg_pool(f_l))
            return tc.l2_normalize(tc.signed_sqrt(pooled))
        raise ConfigurationError(f"unknown interaction mode {mode!r}")

    def interact(self, f_l, f_h):
        if self.cfg.interaction == "iim":
            return self.iim(f_l, f_h)
        return self.interact_baseline(f_l, f_h, self.cfg.interaction)

    def _classify(self, name, feature):
        vector = tc.global_avg_pool(feature) if feature.ndim == 4 else feature
        return tc.linear(vector, self.p(f"{name}.weight"), self.p(f"{name}.bias"))

    def fused(self, f_e):
        """Inference path from f_E to the feature C_I consumes, honoring the ablation switches."""
        cfg = self.cfg
        if not (cfg.use_high or cfg.use_low):
            return f_e
        if cfg.use_interaction:
            f_h, f_l = self.disentangle(f_e)
            return self.interact(f_l, f_h)
        return self.disentangle_branch(f_e, "high" if cfg.use_high else "low")

    def logits(self, images):
        return self._classify("classifier_fused", self.fused(self.encode(images)))

    def predict(self, images, batch_size=256):
        """Argmax of C_I; reconstructors and auxiliary classifiers are never evaluated."""
        images = np.asarray(images)
        single = images.ndim == 3
        if single:
            images = images[None]
        out = []
        with tc.no_grad():
            for start in range(0, len(images), batch_size):
                logits = self.logits(self.as_input(images[start : start + batch_size]))
                out.append(np.argmax(logits.data, axis=1))
        labels = np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
        return int(labels[0]) if single else labels

    def features(self, images, tap, batch_size=256):
        """Globally pooled feature vectors at one tap, N x width."""
        cfg = self.cfg
        if tap not in TAPS:
            raise ConfigurationError(f"unknown feature tap {tap!r}; expected one of {TAPS}")
        if tap == "f_Z" and not cfg.use_interaction:
            raise ConfigurationError("tap f_Z needs use_interaction=true (the fused feature is disabled)")
        rows = []
        with tc.no_grad():
            for start in range(0, len(images), batch_size):
                f_e = self.encode(self.as_input(images[start : start + batch_size]))
                if tap == "f_E":
                    feature = f_e
                elif tap == "f_H":
                    feature = self.disentangle_branch(f_e, "high")
                elif tap == "f_L":
                    feature = self.disentangle_branch(f_e, "low")
                else:
                    feature = self.fused(f_e)
                vector = tc.global_avg_pool(feature) if feature.ndim == 4 else feature
                rows.append(np.asarray(vector.data, dtype=np.float64))
        return np.concatenate(rows) if rows else np.zeros((0, 0))


def _reconstruction_input(model, f_e, f_branch, branch):
    stop = model.cfg.cae_grad_stop
    if stop == "disentangler":
        return tc.stop_gradient(f_branch)
    if stop == "encoder":
        return model.disentangle_branch(tc.stop_gradient(f_e), branch)
    return f_branch


def ffdi_losses(batch, model, targets=None):
    """
    Forward one (already augmented) batch and assemble every loss term.
    Returns (terms, total) where terms maps LOSS_KEYS to floats and total is
    the differentiable L_all tensor. Reconstruction targets are the LFI/HFI
    of the batch images at cfg.r unless `targets` = (lfi, hfi) is given.
    """
    cfg = model.cfg
    labels = batch.labels
    if labels.size and labels.max() >= cfg.num_classes:
        raise ShapeError(f"label {labels.max()} outside num_classes={cfg.num_classes}")

    f_e = model.encode(model.as_input(batch.images))
    terms = {}
    aux = []

    if cfg.use_high or cfg.use_low:
        if targets is None:
            lfi, hfi = decompose_batch(batch.images, cfg.r)
        else:
            lfi, hfi = targets
        # the DC term lives in the low band, so only the LFI target moves with the input offset
        lfi = np.asarray(lfi) - INPUT_OFFSET
        branches = {}
        for branch, enabled, target, suffix in (
            ("high", cfg.use_high, hfi, "H"),
            ("low", cfg.use_low, lfi, "L"),
        ):
            if not enabled:
                continue
            feature = model.disentangle_branch(f_e, branch)
            branches[branch] = feature
            ca = tc.cross_entropy(model._classify(f"classifier_{branch}", feature), labels)
            rec = model.reconstruct(_reconstruction_input(model, f_e, feature, branch), suffix)
            cae = tc.mse(rec, tc.Tensor(target, dtype=model.dtype), reduction=cfg.cae_reduction)
            terms[f"L_ca{suffix}"] = ca
            terms[f"L_cae{suffix}"] = cae
            aux.extend([ca, cae])
        if cfg.use_interaction:
            fused = model.interact(branches["low"], branches["high"])
        else:
            fused = branches["high"] if cfg.use_high else branches["low"]
    else:
        fused = f_e

    l_ci = tc.cross_entropy(model._classify("classifier_fused", fused), labels)
    total = l_ci
    if aux:
        weighted = aux[0]
        for term in aux[1:]:
            weighted = weighted + term
        total = l_ci + weighted * cfg.lam
    terms["L_ci"] = l_ci
    values = {key: float(terms[key].item()) if key in terms else 0.0 for key in LOSS_KEYS[:-1]}
    values["L_all"] = recombine_total(values, cfg.lam)
    return values, total


def recombine_total(values, lam):
    """L_ci + lambda * (sum of auxiliary terms) from logged floats."""
    return values["L_ci"] + lam * (values["L_caH"] + values["L_caL"] + values["L_caeH"] + values["L_caeL"])
