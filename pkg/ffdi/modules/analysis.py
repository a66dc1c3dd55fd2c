"""
FFDI - Analysis Module
Proxy A-distance, the HFI/LFI domain-divergence table, the r sweep, the
component ablation and comparison suites, and feature export. Every table
row averages held-out accuracy over the configured seeds.
"""

import hashlib
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor_core as tc
from .config import apply_overrides
from .errors import ConfigurationError, DataError, ShapeError
from .logger import get_logger
from .spectral import decompose_batch
from .training import train_lodo

logger = get_logger(__name__)

PROBE_EPOCHS = 200
PROBE_LR = 0.1
IMAGE_POOL = 8

DEEPALL = {"use_high": False, "use_low": False, "use_interaction": False}
FFDI_FULL = {"use_high": True, "use_low": True, "use_interaction": True}

ABLATION_ROWS = (
    ("DeepAll", {**DEEPALL, "augment_mode": "none"}),
    ("L-only", {"use_high": False, "use_low": True, "use_interaction": False, "augment_mode": "none"}),
    ("H-only", {"use_high": True, "use_low": False, "use_interaction": False, "augment_mode": "none"}),
    ("DeepAll+FDAG", {**DEEPALL, "augment_mode": "fdag"}),
    ("H+L+IIM", {**FFDI_FULL, "interaction": "iim", "augment_mode": "none"}),
    ("FFDI", {**FFDI_FULL, "interaction": "iim", "augment_mode": "fdag"}),
)


# A-distance


def _standardize(train, test):
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0] = 1.0
    return (train - mean) / std, (test - mean) / std


def a_distance(features_a, features_b, seed=0, epochs=PROBE_EPOCHS, lr=PROBE_LR):
    """
    2 * (1 - 2 * eps) where eps is the held-out error of a logistic domain
    probe trained on a 50/50 split, clamped to [0, 2].
    The pair is put in a canonical order first, so swapping the sets gives the same value.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("a_distance expects two N x D feature matrices")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    n = min(len(a), len(b))
    if n < 2:
        raise DataError("a_distance needs at least two samples per set")
    if hashlib.sha1(b.tobytes()).digest() < hashlib.sha1(a.tobytes()).digest():
        a, b = b, a

    rng = np.random.default_rng(seed)
    a = a[rng.permutation(len(a))[:n]]
    b = b[rng.permutation(len(b))[:n]]
    half = n // 2
    x_train = np.concatenate([a[:half], b[:half]])
    y_train = np.concatenate([np.zeros(half), np.ones(half)]).astype(np.int64)
    x_test = np.concatenate([a[half:], b[half:]])
    y_test = np.concatenate([np.zeros(n - half), np.ones(n - half)]).astype(np.int64)
    x_train, x_test = _standardize(x_train, x_test)

    weight = tc.init_zeros((2, x_train.shape[1]), dtype=np.float64)
    bias = tc.init_zeros((2,), dtype=np.float64)
    inputs = tc.Tensor(x_train, dtype=np.float64)
    for _ in range(epochs):
        loss = tc.cross_entropy(tc.linear(inputs, weight, bias), y_train)
        tc.backward(loss)
        tc.sgd_step([weight, bias], lr=lr)
    with tc.no_grad():
        logits = tc.linear(tc.Tensor(x_test, dtype=np.float64), weight, bias).data
    error = float(np.mean(np.argmax(logits, axis=1) != y_test))
    return float(np.clip(2.0 * (1.0 - 2.0 * error), 0.0, 2.0))


def band_features(images, r, band, pool=IMAGE_POOL):
    """Flattened pool x pool average-pooled LFI ("low") or HFI ("high") images."""
    lfi, hfi = decompose_batch(images, r)
    source = hfi if band == "high" else lfi
    n, c, h, w = source.shape
    if h % pool or w % pool:
        raise ShapeError(f"image size {h}x{w} is not divisible by the pooling factor {pool}")
    pooled = source.reshape(n, c, h // pool, pool, w // pool, pool).mean(axis=(3, 5))
    return pooled.reshape(n, -1)


@dataclass
class FrequencyDistance:
    r: int
    high: float
    low: float
    pairs: list = field(default_factory=list)


def frequency_a_distance(dataset, r, seeds=(0, 1, 2), pool=IMAGE_POOL):
    """A-distance of HFI and of LFI images averaged over every domain pair and seed."""
    names = dataset.domain_names
    if len(names) < 2:
        raise DataError("A-distance needs at least two domains")
    features = {
        (name, band): band_features(dataset.domain(name).images, r, band, pool)
        for name in names
        for band in ("high", "low")
    }
    pairs = []
    for first, second in itertools.combinations(names, 2):
        row = {"domain_a": first, "domain_b": second}
        for band in ("high", "low"):
            row[band] = float(np.mean([a_distance(features[(first, band)], features[(second, band)], s) for s in seeds]))
        pairs.append(row)
        logger.info("A-distance %s vs %s: high %.4f low %.4f", first, second, row["high"], row["low"])
    return FrequencyDistance(
        r=r,
        high=float(np.mean([p["high"] for p in pairs])),
        low=float(np.mean([p["low"] for p in pairs])),
        pairs=pairs,
    )


# experiment tables


@dataclass
class ExperimentTable:
    name: str
    key_columns: list
    held_out: list
    rows: list = field(default_factory=list)

    @property
    def columns(self):
        return list(self.key_columns) + list(self.held_out) + ["average"]

    def row(self, **keys):
        for row in self.rows:
            if all(row.get(k) == v for k, v in keys.items()):
                return row
        raise KeyError(keys)


_worker_dataset = None


def _init_worker(dataset):
    global _worker_dataset
    _worker_dataset = dataset


def _run_job(job):
    cfg, held_out = job
    _model, report = train_lodo(_worker_dataset, held_out, cfg)
    return report.held_out_accuracy


def held_out_domains(dataset, cfg):
    names = [n for n in dataset.domain_names if not cfg.domains or n in cfg.domains]
    chosen = list(cfg.suite_held_out) or names
    unknown = [n for n in chosen if n not in names]
    if unknown:
        raise DataError(f"held-out domains {unknown} are not in the dataset {names}")
    return chosen


def run_variants(dataset, cfg, variants, name, key_columns):
    """
    variants: list of (key values dict, config overrides dict).
    One train_lodo per (variant, held-out domain, seed); rows keep variant order.
    """
    domains = held_out_domains(dataset, cfg)
    jobs = []
    for _keys, overrides in variants:
        variant_cfg = apply_overrides(cfg, **overrides).validate()
        for held_out in domains:
            for seed in cfg.seeds:
                jobs.append((replace(variant_cfg, seed=seed), held_out))
    logger.info("Running %s: %d variants x %d domains x %d seeds", name, len(variants), len(domains), len(cfg.seeds))

    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker, initargs=(dataset,)) as pool:
            accuracies = list(pool.map(_run_job, jobs))
    else:
        _init_worker(dataset)
        accuracies = [_run_job(job) for job in jobs]

    table = ExperimentTable(name=name, key_columns=list(key_columns), held_out=domains)
    per_variant = len(domains) * len(cfg.seeds)
    for v_index, (keys, _overrides) in enumerate(variants):
        chunk = accuracies[v_index * per_variant : (v_index + 1) * per_variant]
        row = dict(keys)
        for d_index, held_out in enumerate(domains):
            row[held_out] = float(np.mean(chunk[d_index * len(cfg.seeds) : (d_index + 1) * len(cfg.seeds)]))
        row["average"] = float(np.mean([row[d] for d in domains]))
        table.rows.append(row)
        logger.info("%s row %s: average %.4f", name, keys, row["average"])
    return table


def sweep_r(dataset, cfg, r_values):
    r_values = [int(r) for r in r_values]
    if not r_values:
        raise ConfigurationError("sweep_r needs at least one r value")
    return run_variants(dataset, cfg, [({"r": r}, {"r": r}) for r in r_values], "sweep_r", ["r"])


def ablation_suite(dataset, cfg):
    variants = [({"configuration": label}, overrides) for label, overrides in ABLATION_ROWS]
    return run_variants(dataset, cfg, variants, "ablation", ["configuration"])


def compare_interaction(dataset, cfg, modes=("addition", "concatenation", "bilinear", "iim")):
    variants = [({"interaction": m}, {**FFDI_FULL, "interaction": m, "augment_mode": "fdag"}) for m in modes]
    return run_variants(dataset, cfg, variants, "interaction", ["interaction"])


def ablate_fdag(dataset, cfg, targets=("none", "phase", "amplitude", "both")):
    variants = []
    for model_label, switches in (("DeepAll", DEEPALL), ("FFDI", FFDI_FULL)):
        for target in targets:
            overrides = {**switches, "augment_mode": "fdag", "noise_target": target}
            variants.append(({"model": model_label, "noise_target": target}, overrides))
    return run_variants(dataset, cfg, variants, "fdag_ablation", ["model", "noise_target"])


AUGMENTATIONS = (
    ("standard", {"augment_mode": "none", "standard_augment": True}),
    ("time_noise", {"augment_mode": "time_noise", "standard_augment": True}),
    ("fdag", {"augment_mode": "fdag", "standard_augment": True}),
)


def compare_augmentation(dataset, cfg):
    variants = []
    for model_label, switches in (("DeepAll", DEEPALL), ("FFDI", FFDI_FULL)):
        for label, overrides in AUGMENTATIONS:
            variants.append(({"model": model_label, "augmentation": label}, {**switches, **overrides}))
    return run_variants(dataset, cfg, variants, "augmentation", ["model", "augmentation"])


def export_features(model, images, labels, domains, tap):
    """(header, rows): one row per sample with domain, label and the pooled feature vector."""
    if not (len(images) == len(labels) == len(domains)):
        raise ShapeError("export_features: images, labels and domains must have equal length")
    vectors = model.features(np.asarray(images), tap)
    header = ["domain", "label"] + [f"{tap}_{i}" for i in range(vectors.shape[1] if len(vectors) else 0)]
    rows = [[d, int(y)] + [float(v) for v in vector] for d, y, vector in zip(domains, labels, vectors)]
    return header, rows
