"""
FFDI - Training Module
Leave-one-domain-out training: per-source-domain batches, standard
augmentation, FDAG (or pixel noise), the joint loss, SGD with step decay,
and evaluation of the held-out domain plus every source test split.
"""

import hashlib
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor_core as tc
from .config import config_hash, to_flat_dict
from .data import augment_standard, build_dataset, load_dataset_dir
from .errors import ConfigurationError, DataError, FfdiError
from .fdag import perturb, sample_noise_field
from .logger import get_logger
from .model import CLASSIFIER_GROUP, OTHER_GROUP, Batch, FfdiModel, ffdi_losses
from .utils import child_rng

logger = get_logger(__name__)


@dataclass
class RunReport:
    held_out: str
    seed: int
    iterations: int
    config: dict
    config_hash: str
    losses: list = field(default_factory=list)
    source_accuracy: dict = field(default_factory=dict)
    held_out_accuracy: float = 0.0
    held_out_confusion: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    consumed_domains: list = field(default_factory=list)
    consumed_sample_hash: str = ""

    @property
    def average_source_accuracy(self):
        values = list(self.source_accuracy.values())
        return float(np.mean(values)) if values else 0.0

    def accuracy_fields(self):
        return {"held_out_accuracy": self.held_out_accuracy, "source_accuracy": dict(self.source_accuracy)}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        return cls(**payload)


def time_domain_noise(image, cfg, rng):
    """The FDAG alpha/beta laws applied to pixel values instead of the spectrum."""
    image = np.asarray(image, dtype=np.float64)
    if cfg.target == "none" or rng.random() >= cfg.apply_probability:
        return image.copy()
    alpha, beta = sample_noise_field(image.shape, cfg, rng, signal=image)
    return np.clip(alpha * image + beta, 0.0, 1.0)


def source_domains(dataset, held_out, cfg):
    names = dataset.domain_names
    if held_out not in names:
        raise DataError(f"held-out domain {held_out!r} is not in the dataset {names}")
    wanted = set(cfg.domains) if cfg.domains else set(names)
    sources = [n for n in names if n != held_out and n in wanted]
    if not sources:
        raise DataError(f"no source domains remain after holding out {held_out!r}")
    if len(sources) < 2:
        raise DataError(f"leave-one-domain-out needs at least two source domains, got {sources}")
    return sources


def make_batch(dataset, sources, cfg, iteration):
    """
    batch_per_domain training samples from each source domain, augmented.
    Contents depend only on (cfg.seed, iteration) so the producer thread is optional.
    """
    images, labels, domains, ids = [], [], [], []
    for slot, name in enumerate(sources):
        data = dataset.domain(name)
        pool = data.train_idx
        if len(pool) == 0:
            raise DataError(f"source domain {name!r} has an empty training split")
        rng = child_rng(cfg.seed, iteration, slot)
        picks = rng.choice(pool, size=cfg.batch_per_domain, replace=len(pool) < cfg.batch_per_domain)
        for index in picks:
            image = data.images[index]
            if cfg.standard_augment:
                image = augment_standard(image, rng)
            if cfg.augment_mode == "fdag":
                image = perturb(image, cfg.noise, rng)
            elif cfg.augment_mode == "time_noise":
                image = time_domain_noise(image, cfg.noise, rng)
            images.append(image)
            labels.append(data.labels[index])
            domains.append(slot)
            ids.append(data.ids[index])
    return Batch(np.stack(images), np.asarray(labels), np.asarray(domains)), ids


class BatchProducer:
    """Prepares batches on a daemon thread, `prefetch` ahead of the training loop."""

    _DONE = object()

    def __init__(self, build, iterations, prefetch=2):
        self.build = build
        self.iterations = iterations
        self.prefetch = max(0, int(prefetch))
        self._queue = queue.Queue(maxsize=max(1, self.prefetch))
        self._stop = threading.Event()
        self._thread = None

    def _run(self):
        try:
            for iteration in range(self.iterations):
                if self._stop.is_set():
                    return
                self._put((iteration, self.build(iteration)))
        except Exception as exc:  # surfaced in the consumer
            self._put(exc)
        self._put(self._DONE)

    def _put(self, item):
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return
            except queue.Full:
                continue

    def __iter__(self):
        if self.prefetch == 0:
            for iteration in range(self.iterations):
                yield iteration, self.build(iteration)
            return
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        try:
            while True:
                item = self._queue.get()
                if item is self._DONE:
                    return
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self.close()

    def close(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)


def confusion_matrix(predictions, labels, num_classes):
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(labels, dtype=np.int64), np.asarray(predictions, dtype=np.int64)), 1)
    return matrix


def evaluate(model, images, labels, batch_size=256, with_confusion=False):
    """Top-1 accuracy of C_I over the samples."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise DataError("cannot evaluate on an empty sample set")
    predictions = model.predict(images, batch_size=batch_size)
    matrix = confusion_matrix(predictions, labels, model.cfg.num_classes)
    accuracy = float(np.trace(matrix) / matrix.sum())
    return (accuracy, matrix) if with_confusion else accuracy


def model_config_for(dataset, cfg):
    model_cfg = cfg.model
    if model_cfg.num_classes != dataset.num_classes:
        logger.info("Using num_classes=%d from the dataset (config said %d)", dataset.num_classes, model_cfg.num_classes)
        model_cfg = replace(model_cfg, num_classes=dataset.num_classes)
    size = dataset.domains[0].images.shape[-1]
    if size != model_cfg.image_size:
        raise ConfigurationError(f"dataset images are {size}px but image_size={model_cfg.image_size}")
    return model_cfg.validate()


def train_lodo(dataset, held_out, cfg, progress=None):
    """
    Train on every source domain's training split and evaluate.
    `progress(iteration, total, values)` is called after each logged step.
    Returns (model, RunReport).
    """
    cfg.validate()
    sources = source_domains(dataset, held_out, cfg)
    model = FfdiModel(model_config_for(dataset, cfg), seed=cfg.seed)
    groups = model.parameter_groups()
    optimizer = tc.StepDecaySGD(
        [
            {"name": CLASSIFIER_GROUP, "params": groups[CLASSIFIER_GROUP], "lr": cfg.lr_classifier},
            {"name": OTHER_GROUP, "params": groups[OTHER_GROUP], "lr": cfg.lr_other},
        ],
        weight_decay=cfg.weight_decay,
        milestones=cfg.milestones,
        gamma=cfg.lr_gamma,
        momentum=cfg.momentum,
    )
    blocks = model.parameter_blocks()
    report = RunReport(
        held_out=held_out,
        seed=cfg.seed,
        iterations=cfg.iterations,
        config=to_flat_dict(cfg),
        config_hash=config_hash(cfg),
    )
    logger.info(
        "Training run %s: held_out=%s sources=%s iterations=%d",
        report.config_hash, held_out, ",".join(sources), cfg.iterations,
    )

    consumed = hashlib.sha256()
    consumed_domains = set()
    started = time.time()
    producer = BatchProducer(lambda it: make_batch(dataset, sources, cfg, it), cfg.iterations, cfg.prefetch)
    for iteration, (batch, ids) in producer:
        for sample_id in ids:
            consumed.update(sample_id.encode("utf-8") + b"\n")
            consumed_domains.add(sample_id.split("/", 1)[0])
        model.zero_grad()
        values, total = ffdi_losses(batch, model)
        if not np.isfinite(values["L_all"]):
            raise FfdiError(f"training diverged at iteration {iteration}: L_all={values['L_all']}", code="training_diverged")
        tc.backward(total)
        if cfg.grad_clip > 0:
            # each module is clipped on its own
            norms = tc.clip_grad_norm_blocks(blocks, cfg.grad_clip)
            if cfg.log_every and iteration % cfg.log_every == 0:
                logger.debug("it=%d grad norms %s", iteration, {k: round(v, 3) for k, v in norms.items()})
        rates = optimizer.step(iteration)
        row = {"iteration": iteration, **values, "lr_classifier": rates[CLASSIFIER_GROUP], "lr_other": rates[OTHER_GROUP]}
        report.losses.append(row)
        if cfg.log_every and (iteration % cfg.log_every == 0 or iteration == cfg.iterations - 1):
            logger.info(
                "it=%d L_all=%.4f L_ci=%.4f L_caH=%.4f L_caL=%.4f L_caeH=%.4f L_caeL=%.4f lr=(%.4g, %.4g)",
                iteration, values["L_all"], values["L_ci"], values["L_caH"], values["L_caL"],
                values["L_caeH"], values["L_caeL"], rates[CLASSIFIER_GROUP], rates[OTHER_GROUP],
            )
            if progress:
                progress(iteration, cfg.iterations, values)

    held = dataset.domain(held_out)
    report.held_out_accuracy, matrix = evaluate(
        model, held.images, held.labels, batch_size=cfg.eval_batch, with_confusion=True
    )
    report.held_out_confusion = matrix.tolist()
    for name in sources:
        images, labels, _ids = dataset.domain(name).split("test")
        if len(labels):
            report.source_accuracy[name] = evaluate(model, images, labels, batch_size=cfg.eval_batch)
    report.wall_clock_s = time.time() - started
    report.consumed_domains = sorted(consumed_domains)
    report.consumed_sample_hash = consumed.hexdigest()
    logger.info(
        "Finished run %s: held_out %s accuracy %.4f (%.1fs)",
        report.config_hash, held_out, report.held_out_accuracy, report.wall_clock_s,
    )
    return model, report


def dataset_for(cfg):
    """The dataset a config points at: data_dir when set, otherwise a freshly rendered benchmark."""
    if cfg.data_dir:
        return load_dataset_dir(cfg.data_dir)
    return build_dataset(
        domains=list(cfg.domains),
        classes=cfg.model.num_classes,
        per_class_per_domain=cfg.per_class_per_domain,
        seed=cfg.dataset_seed,
        size=cfg.model.image_size,
    )
