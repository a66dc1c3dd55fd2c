"""
FFDI - Data Module
Synthetic multi-domain shape benchmark: preset domain styles, anti-aliased
rendering, deterministic 4:1 splits, standard augmentation and the on-disk
dataset directory (<root>/<domain>/<class>/<index>.ppm + manifest.csv).
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .image_io import read_image, write_image
from .logger import get_logger
from .utils import atomic_write_text, child_rng, child_seed, csv_text

logger = get_logger(__name__)

CLASSES = ("circle", "square", "triangle", "star", "cross")
BACKGROUNDS = {"flat", "vertical_gradient", "radial_gradient", "noise_texture"}
FILLS = {"solid", "hatched", "none"}
IMAGE_SIZE = 32
SUPERSAMPLE = 4
TRAIN_FRACTION = 0.8
# pixels
FILL_SOFTNESS = 2.0
HATCH_PERIOD = 8.0
# cycles per canvas; stays inside the low band for every r >= 2
TEXTURE_MAX_FREQUENCY = 2


@dataclass
class DomainSpec:
    name: str
    background: str = "flat"
    background_color: tuple = (0.9, 0.9, 0.9)
    background_color2: tuple = (0.9, 0.9, 0.9)
    fill: str = "solid"
    fill_color: tuple = (0.85, 0.85, 0.85)
    edge_depth: float = 0.78
    edge_thickness: float = 0.8
    blur: float = 0.0
    color_shift: tuple = (0.0, 0.0, 0.0)
    texture_strength: float = 0.0

    def validate(self):
        if self.background not in BACKGROUNDS:
            raise ConfigurationError(f"domain {self.name}: background {self.background!r} not in {sorted(BACKGROUNDS)}")
        if self.fill not in FILLS:
            raise ConfigurationError(f"domain {self.name}: fill {self.fill!r} not in {sorted(FILLS)}")
        if self.edge_thickness < 0 or self.blur < 0:
            raise ConfigurationError(f"domain {self.name}: edge thickness and blur must be >= 0")
        if not 0.0 <= self.edge_depth <= 1.0:
            raise ConfigurationError(f"domain {self.name}: edge depth must lie in [0, 1], got {self.edge_depth}")
        if not 0.0 <= self.texture_strength <= 1.0:
            raise ConfigurationError(f"domain {self.name}: texture strength must lie in [0, 1], got {self.texture_strength}")
        return self

    def darkest_paint(self):
        """Lowest channel value the background, fill and shift can produce before the outline is drawn."""
        colors = [self.background_color, self.background_color2]
        if self.fill != "none":
            colors.append(self.fill_color)
        return float(min(min(c) for c in colors) + min(self.color_shift))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, payload):
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in payload.items()}
        return cls(**values).validate()


# Styles differ in light palettes, periodic smooth backgrounds and soft fills.
# The outline darkens every domain by the same edge_depth, and paint never
# drops below edge_depth, so nothing clips and edges look alike across domains.
PRESET_DOMAINS = {
    "flat": DomainSpec(
        name="flat",
        background="flat",
        background_color=(0.96, 0.93, 0.84),
        background_color2=(0.96, 0.93, 0.84),
        fill_color=(0.84, 0.88, 0.98),
    ),
    "gradient": DomainSpec(
        name="gradient",
        background="vertical_gradient",
        background_color=(0.98, 0.86, 0.84),
        background_color2=(0.84, 0.86, 0.98),
        fill_color=(0.96, 0.94, 0.84),
        color_shift=(-0.02, -0.02, -0.02),
    ),
    "texture": DomainSpec(
        name="texture",
        background="noise_texture",
        background_color=(0.82, 0.84, 0.82),
        background_color2=(0.86, 0.90, 0.84),
        fill_color=(0.92, 0.84, 0.84),
        texture_strength=1.0,
    ),
    "sketch": DomainSpec(
        name="sketch",
        background="flat",
        background_color=(1.0, 1.0, 1.0),
        background_color2=(1.0, 1.0, 1.0),
        fill="none",
        fill_color=(1.0, 1.0, 1.0),
    ),
}

EXTRA_DOMAINS = {
    "radial": DomainSpec(
        name="radial",
        background="radial_gradient",
        background_color=(0.99, 0.97, 0.86),
        background_color2=(0.86, 0.90, 0.98),
        fill="hatched",
        fill_color=(0.90, 0.84, 0.96),
    ),
}


def preset_domain(name):
    spec = PRESET_DOMAINS.get(name) or EXTRA_DOMAINS.get(name)
    if spec is None:
        known = sorted(PRESET_DOMAINS) + sorted(EXTRA_DOMAINS)
        raise ConfigurationError(f"unknown domain {name!r}; presets are {known}")
    return spec


@dataclass
class Pose:
    """Shape center (pixels), radius scale (pixels) and rotation (radians)."""

    cx: float
    cy: float
    scale: float
    rotation: float = 0.0


# Canonical outlines, all inside the unit circle.


def _regular_polygon(sides, radius=1.0, phase=0.0):
    angles = phase + 2.0 * np.pi * np.arange(sides) / sides
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


def _star(points=5, outer=1.0, inner=0.45):
    angles = -np.pi / 2 + np.pi * np.arange(2 * points) / points
    radii = np.where(np.arange(2 * points) % 2 == 0, outer, inner)
    return np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)


def _cross(arm=0.3, reach=0.95):
    a, b = arm, reach
    return np.array(
        [[-a, -b], [a, -b], [a, -a], [b, -a], [b, a], [a, a], [a, b], [-a, b], [-a, a], [-b, a], [-b, -a], [-a, -a]]
    )


SHAPES = {
    "circle": _regular_polygon(96),
    "square": _regular_polygon(4, radius=1.0, phase=np.pi / 4),
    "triangle": _regular_polygon(3, radius=1.0, phase=-np.pi / 2),
    "star": _star(),
    "cross": _cross(),
}


def shape_name(shape):
    if isinstance(shape, (int, np.integer)):
        if not 0 <= shape < len(CLASSES):
            raise DataError(f"class index {shape} outside 0..{len(CLASSES) - 1}")
        return CLASSES[shape]
    if shape not in SHAPES:
        raise DataError(f"unknown shape class {shape!r}; expected one of {CLASSES}")
    return shape


def _inside_polygon(px, py, poly):
    """Even-odd ray casting, vectorized over points."""
    inside = np.zeros(px.shape, dtype=bool)
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for ax, ay, bx, by in zip(x1, y1, x2, y2):
        crosses = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = ax + (py - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (px < x_at)
    return inside


def _distance_to_outline(px, py, poly):
    best = np.full(px.shape, np.inf)
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for ax, ay, bx, by in zip(x1, y1, x2, y2):
        dx, dy = bx - ax, by - ay
        t = np.clip(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        best = np.minimum(best, np.hypot(px - (ax + t * dx), py - (ay + t * dy)))
    return best


def check_pose(pose, size=IMAGE_SIZE, edge_thickness=0.0):
    reach = pose.scale + edge_thickness / 2.0
    if pose.scale <= 0:
        raise DataError(f"pose scale must be > 0, got {pose.scale}")
    if pose.cx - reach < 0 or pose.cy - reach < 0 or pose.cx + reach > size or pose.cy + reach > size:
        raise DataError(f"pose {pose} puts the shape outside the {size}x{size} canvas")


def sample_pose(rng, size=IMAGE_SIZE, scale_range=(7.0, 11.0), margin=2.0):
    scale = rng.uniform(*scale_range)
    low, high = scale + margin, size - scale - margin
    return Pose(cx=rng.uniform(low, high), cy=rng.uniform(low, high), scale=scale, rotation=rng.uniform(0.0, 2 * np.pi))


def gaussian_blur(image, sigma, mode="edge"):
    """Separable gaussian over the last two axes; `mode` is the np.pad mode ("edge" or "wrap")."""
    if sigma <= 0:
        return image
    radius = max(1, int(np.ceil(3 * sigma)))
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    padded = np.pad(image, [(0, 0)] * (image.ndim - 2) + [(radius, radius), (radius, radius)], mode=mode)
    rows = sum(w * padded[..., i : i + image.shape[-2], :] for i, w in enumerate(taps))
    return sum(w * rows[..., :, i : i + image.shape[-1]] for i, w in enumerate(taps))


def _periodic_noise(rng, size, max_frequency=TEXTURE_MAX_FREQUENCY):
    """Random sum of cosines with integer frequencies up to max_frequency, scaled to [-1, 1]."""
    coords = np.arange(size) + 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    field = np.zeros((size, size))
    for ky in range(-max_frequency, max_frequency + 1):
        for kx in range(0, max_frequency + 1):
            if kx == 0 and ky <= 0:
                continue
            amplitude, phase = rng.normal(), rng.uniform(0.0, 2 * np.pi)
            field += amplitude * np.cos(2 * np.pi * (kx * xx + ky * yy) / size + phase)
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def _background(spec, rng, size):
    """Backgrounds are periodic on the canvas, so the spectrum sees no seam at the border."""
    c1 = np.asarray(spec.background_color, dtype=np.float64)[:, None, None]
    c2 = np.asarray(spec.background_color2, dtype=np.float64)[:, None, None]
    wave = np.cos(2 * np.pi * (np.arange(size) + 0.5) / size)
    if spec.background == "flat":
        return np.broadcast_to(c1, (3, size, size)).copy()
    if spec.background == "vertical_gradient":
        # c1 at the top and bottom rows, c2 across the middle
        t = np.broadcast_to((0.5 - 0.5 * wave)[:, None], (size, size))
    elif spec.background == "radial_gradient":
        # c1 at the center, c2 in the corners
        t = 0.5 + 0.25 * (wave[:, None] + wave[None, :])
    else:
        t = 0.5 + 0.5 * spec.texture_strength * _periodic_noise(rng, size)
    return c1 * (1 - t) + c2 * t


def render_sample(shape, domain, pose, rng, size=IMAGE_SIZE):
    """
    Shape in the domain's style; 3 x size x size in [0, 1].
    The fill is a soft (blurred) coverage mask over the background and the
    outline subtracts edge_depth times its anti-aliased coverage.
    """
    name = shape_name(shape)
    check_pose(pose, size, domain.edge_thickness)
    background = _background(domain, rng, size)

    fine = size * SUPERSAMPLE
    coords = (np.arange(fine) + 0.5) / SUPERSAMPLE
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    cos_r, sin_r = np.cos(-pose.rotation), np.sin(-pose.rotation)
    dx, dy = xx - pose.cx, yy - pose.cy
    lx = (cos_r * dx - sin_r * dy) / pose.scale
    ly = (sin_r * dx + cos_r * dy) / pose.scale

    poly = SHAPES[name]
    outline = _distance_to_outline(lx, ly, poly) * pose.scale <= domain.edge_thickness / 2.0

    def coverage(mask):
        return mask.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))

    image = background
    if domain.fill != "none":
        fill_color = np.asarray(domain.fill_color, dtype=np.float64)[:, None, None]
        weight = gaussian_blur(coverage(_inside_polygon(lx, ly, poly))[None], FILL_SOFTNESS, mode="wrap")
        if domain.fill == "hatched":
            pixel = np.arange(size) + 0.5
            stripes = 0.6 + 0.4 * np.cos(2 * np.pi * (pixel[:, None] + pixel[None, :]) / HATCH_PERIOD)
            weight = weight * stripes[None]
        image = image * (1 - weight) + fill_color * weight
    image = image + np.asarray(domain.color_shift, dtype=np.float64)[:, None, None]
    image = image - domain.edge_depth * coverage(outline)[None]
    image = gaussian_blur(image, domain.blur, mode="wrap")
    return np.clip(image, 0.0, 1.0)


@dataclass
class DomainData:
    spec: DomainSpec
    images: np.ndarray
    labels: np.ndarray
    ids: list
    train_idx: np.ndarray
    test_idx: np.ndarray
    # per-sample render seeds; empty when loaded from a directory without a seed column
    seeds: list = field(default_factory=list)

    @property
    def name(self):
        return self.spec.name

    def split(self, which):
        if which == "train":
            idx = self.train_idx
        elif which == "test":
            idx = self.test_idx
        elif which == "all":
            idx = np.arange(len(self.labels))
        else:
            raise DataError(f"unknown split {which!r}")
        return self.images[idx], self.labels[idx], [self.ids[i] for i in idx]


@dataclass
class DomainDataset:
    domains: list
    num_classes: int
    seed: int
    per_class_per_domain: int
    meta: dict = field(default_factory=dict)

    @property
    def domain_names(self):
        return [d.name for d in self.domains]

    def domain(self, name):
        for data in self.domains:
            if data.name == name:
                return data
        raise DataError(f"domain {name!r} is not in the dataset {self.domain_names}")

    def __len__(self):
        return sum(len(d.labels) for d in self.domains)


def _split_indices(labels, seed, domain_index, num_classes):
    train, test = [], []
    for cls in range(num_classes):
        members = np.flatnonzero(labels == cls)
        order = members[child_rng(seed, 7, domain_index, cls).permutation(len(members))]
        cut = int(round(len(order) * TRAIN_FRACTION))
        train.extend(order[:cut])
        test.extend(order[cut:])
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(test, dtype=np.int64))


def build_dataset(domains=None, classes=5, per_class_per_domain=120, seed=0, size=IMAGE_SIZE):
    """
    Render every (domain, class, index) sample. Poses depend only on
    (seed, class, index), so one pose appears in every domain.
    """
    if not 1 <= classes <= len(CLASSES):
        raise ConfigurationError(f"classes must lie in 1..{len(CLASSES)}, got {classes}")
    if per_class_per_domain < 1:
        raise ConfigurationError(f"per_class_per_domain must be >= 1, got {per_class_per_domain}")
    specs = [d if isinstance(d, DomainSpec) else preset_domain(d) for d in (domains or list(PRESET_DOMAINS))]
    poses = {
        (cls, index): sample_pose(child_rng(seed, 1, cls, index), size)
        for cls in range(classes)
        for index in range(per_class_per_domain)
    }
    built = []
    for d_index, spec in enumerate(specs):
        spec.validate()
        images, labels, ids, seeds = [], [], [], []
        for cls in range(classes):
            for index in range(per_class_per_domain):
                sample_seed = child_seed(seed, 2, d_index, cls, index)
                images.append(render_sample(cls, spec, poses[(cls, index)], np.random.default_rng(sample_seed), size))
                seeds.append(sample_seed)
                labels.append(cls)
                ids.append(f"{spec.name}/{CLASSES[cls]}/{index}")
        labels = np.asarray(labels, dtype=np.int64)
        train_idx, test_idx = _split_indices(labels, seed, d_index, classes)
        built.append(DomainData(spec, np.stack(images), labels, ids, train_idx, test_idx, seeds))
        logger.info("Rendered domain %s: %d images (%d train / %d test)", spec.name, len(labels), len(train_idx), len(test_idx))
    return DomainDataset(built, num_classes=classes, seed=seed, per_class_per_domain=per_class_per_domain)


def augment_standard(image, rng, flip=None, factors=None):
    """Horizontal flip with probability 0.5, then per-channel color factors in [0.9, 1.1], clipped."""
    image = np.asarray(image, dtype=np.float64)
    if flip is None:
        flip = rng.random() < 0.5
    if factors is None:
        factors = rng.uniform(0.9, 1.1, size=image.shape[0])
    out = image[..., ::-1] if flip else image
    out = out * np.asarray(factors, dtype=np.float64).reshape(-1, 1, 1)
    return np.clip(out, 0.0, 1.0)


# dataset directory


def write_dataset_dir(dataset, root, fmt="ppm"):
    rows = []
    for data in dataset.domains:
        split_of = {int(i): "train" for i in data.train_idx}
        split_of.update({int(i): "test" for i in data.test_idx})
        for i, sample_id in enumerate(data.ids):
            rel = f"{sample_id}.{fmt}"
            write_image(os.path.join(root, rel), data.images[i])
            seed = data.seeds[i] if data.seeds else ""
            rows.append([rel, data.name, CLASSES[data.labels[i]], split_of[i], seed])
    atomic_write_text(os.path.join(root, "manifest.csv"), csv_text(["path", "domain", "class", "split", "seed"], rows))
    meta = {
        "classes": list(CLASSES[: dataset.num_classes]),
        "per_class_per_domain": dataset.per_class_per_domain,
        "seed": dataset.seed,
        "domains": [d.spec.to_dict() for d in dataset.domains],
    }
    atomic_write_text(os.path.join(root, "domains.json"), json.dumps(meta, indent=2))
    logger.info("Wrote %d images to %s", len(rows), root)
    return os.path.join(root, "manifest.csv")


def load_dataset_dir(root):
    manifest = os.path.join(root, "manifest.csv")
    if not os.path.isfile(manifest):
        raise DataError(f"{root} has no manifest.csv; run gen-data first")
    specs, meta = {}, {}
    meta_path = os.path.join(root, "domains.json")
    if os.path.isfile(meta_path):
        try:
            with open(meta_path, "r", encoding="utf-8") as handle:
                meta = json.load(handle)
            specs = {d["name"]: DomainSpec.from_dict(d) for d in meta.get("domains", [])}
        except (ValueError, KeyError, TypeError, ConfigurationError) as exc:
            raise DataError(f"{meta_path} is malformed: {exc}")

    grouped = {}
    with open(manifest, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        missing = {"path", "domain", "class", "split"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{manifest} lacks columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if row["class"] not in CLASSES:
                raise DataError(f"{manifest}:{lineno}: unknown class {row['class']!r}")
            if row["split"] not in ("train", "test"):
                raise DataError(f"{manifest}:{lineno}: unknown split {row['split']!r}")
            seed = (row.get("seed") or "").strip()
            if seed and not seed.isdigit():
                raise DataError(f"{manifest}:{lineno}: seed {seed!r} is not a non-negative integer")
            grouped.setdefault(row["domain"], []).append(row)

    built, num_classes = [], 0
    for name, rows in grouped.items():
        images, labels, ids, train, test, seeds = [], [], [], [], [], []
        for i, row in enumerate(rows):
            images.append(read_image(os.path.join(root, row["path"])))
            labels.append(CLASSES.index(row["class"]))
            ids.append(os.path.splitext(row["path"])[0].replace(os.sep, "/"))
            (train if row["split"] == "train" else test).append(i)
            if (row.get("seed") or "").strip():
                seeds.append(int(row["seed"]))
        num_classes = max(num_classes, max(labels) + 1)
        spec = specs.get(name) or DomainSpec(name=name)
        built.append(
            DomainData(spec, np.stack(images), np.asarray(labels, dtype=np.int64), ids,
                       np.asarray(train, dtype=np.int64), np.asarray(test, dtype=np.int64),
                       seeds if len(seeds) == len(rows) else [])
        )
    if not built:
        raise DataError(f"{manifest} lists no images")
    num_classes = len(meta.get("classes", [])) or num_classes
    dataset = DomainDataset(
        built,
        num_classes=num_classes,
        seed=int(meta.get("seed", 0)),
        per_class_per_domain=int(meta.get("per_class_per_domain", 0)),
        meta={"root": root},
    )
    logger.info("Loaded %d images in %d domains from %s", len(dataset), len(built), root)
    return dataset
