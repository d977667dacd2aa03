"""Datasets: synthetic blob-detection images, PGM ingestion, splits.

Images are single-channel float arrays in [-1, 1] of shape (C, H, W). The
synthetic generator draws a ring-structured background (a bright outer ring
with a dark central region, loosely skull-and-ventricle shaped) and, with
``blob_probability``, a bright ellipse; the binary label marks the ellipse's
presence. Detection therefore hinges on a local feature rather than global
image statistics.

The latent mapper is the identity: the diffusion model runs directly on
pixel-space arrays. ``to_latent``/``from_latent`` keep the seam explicit so
a learned latent space could be dropped in later.

On-disk formats: binary PGM (P5, 8-bit) for images, UTF-8 CSV
``filename,label`` for annotations, JSON for generator specs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError, InputError, RangeError
from .tensor import Tensor

SPLITS = ("pretrain", "train", "valid", "test")


class Dataset:
    """Immutable list of (image, optional label) pairs of identical shape.

    Training code reads images through :meth:`image`/`images`; label access
    goes through :meth:`label`/`labels` so tests can verify the pretraining
    path never touches annotations.
    """

    def __init__(self, images, labels=None, class_names=None, split: str = "train"):
        if split not in SPLITS:
            raise InputError(f"unknown split {split!r}")
        images = [np.asarray(im, dtype=np.float32) for im in images]
        if not images:
            raise InputError("dataset must contain at least one image")
        shape = images[0].shape
        for i, im in enumerate(images):
            if im.shape != shape:
                raise IngestionError(f"image {i} has shape {im.shape}, expected {shape}")
        if labels is not None and len(labels) != len(images):
            raise IngestionError(f"{len(labels)} labels for {len(images)} images")
        self._images = images
        self._labels = list(labels) if labels is not None else None
        self.class_names = list(class_names) if class_names else None
        self.split = split

    def __len__(self) -> int:
        return len(self._images)

    @property
    def image_shape(self) -> tuple:
        return self._images[0].shape

    @property
    def labeled(self) -> bool:
        return self._labels is not None

    def image(self, i: int) -> np.ndarray:
        return self._images[i]

    @property
    def images(self) -> list[np.ndarray]:
        return self._images

    def label(self, i: int) -> int:
        if self._labels is None:
            raise InputError(f"dataset split {self.split!r} is unlabeled")
        return self._labels[i]

    @property
    def labels(self) -> list[int]:
        if self._labels is None:
            raise InputError(f"dataset split {self.split!r} is unlabeled")
        return self._labels

    def stack(self, indices=None) -> np.ndarray:
        idx = range(len(self)) if indices is None else indices
        return np.stack([self._images[i] for i in idx])

    def subset(self, indices, split: str | None = None) -> "Dataset":
        labels = [self._labels[i] for i in indices] if self._labels is not None else None
        return Dataset([self._images[i] for i in indices], labels,
                       self.class_names, split or self.split)

    def num_classes(self) -> int:
        return int(max(self.labels)) + 1


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SyntheticSpec:
    n_images: int = 256
    image_size: int = 32
    blob_probability: float = 0.3
    blob_radius_range: tuple = (3.0, 6.0)
    blob_intensity: float = 0.9
    background: str = "rings"
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.blob_probability <= 1.0):
            raise ConfigError(f"blob_probability {self.blob_probability} outside [0, 1]")
        lo, hi = self.blob_radius_range
        if not (0 < lo <= hi < self.image_size / 2):
            raise ConfigError(f"blob radii {self.blob_radius_range} must fit inside the image")
        if self.background not in ("rings", "gradients"):
            raise ConfigError(f"unknown background {self.background!r}")
        if self.n_images < 1:
            raise ConfigError("n_images must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "SyntheticSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"synthetic spec is not valid JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("synthetic spec must be a JSON object")
        if "blob_radius_range" in d:
            d["blob_radius_range"] = tuple(d["blob_radius_range"])
        try:
            return SyntheticSpec(**d)
        except TypeError as e:
            raise ConfigError(f"bad synthetic spec: {e}") from e


def _render_image(spec: SyntheticSpec, rng: np.random.Generator):
    size = spec.image_size
    half = (size - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    yn = (yy - half) / half
    xn = (xx - half) / half

    if spec.background == "rings":
        # per-sample geometry varies enough that an image is not predictable
        # from the population mean: detection must rely on local structure
        cy, cx = rng.uniform(-0.12, 0.12, size=2)
        rad = np.sqrt((yn - cy) ** 2 + (xn - cx) ** 2)
        ring_r = rng.uniform(0.66, 0.86)
        ring_w = rng.uniform(0.05, 0.1)
        core_r = rng.uniform(0.18, 0.38)
        core_depth = rng.uniform(0.3, 0.6)
        theta = np.arctan2(yn - cy, xn - cx)
        img = (
            rng.uniform(-0.45, -0.25)
            + rng.uniform(0.8, 1.0) * np.exp(-((rad - ring_r) / ring_w) ** 2)
            - core_depth * np.exp(-(rad / core_r) ** 2)
            + 0.18 * np.sin(2 * math.pi * rng.uniform(1.2, 3.0) * rad
                            + rng.uniform(0, 2 * math.pi))
            + 0.12 * np.cos(theta * rng.integers(1, 4) + rng.uniform(0, 2 * math.pi))
        )
    else:
        theta = rng.uniform(0, 2 * math.pi)
        img = -0.2 + 0.6 * (math.cos(theta) * xn + math.sin(theta) * yn)

    has_blob = rng.random() < spec.blob_probability
    if has_blob:
        bcy, bcx = rng.uniform(-0.45, 0.45, size=2)
        r_a = rng.uniform(*spec.blob_radius_range) / half
        r_b = rng.uniform(*spec.blob_radius_range) / half
        angle = rng.uniform(0, math.pi)
        ca, sa = math.cos(angle), math.sin(angle)
        u = (xn - bcx) * ca + (yn - bcy) * sa
        v = -(xn - bcx) * sa + (yn - bcy) * ca
        d2 = (u / r_a) ** 2 + (v / r_b) ** 2
        img = img + spec.blob_intensity * np.clip(1.5 * (1.0 - d2), 0.0, 1.0)

    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return np.clip(img, -1.0, 1.0).astype(np.float32)[None, :, :], int(has_blob)


def generate_synthetic(spec: SyntheticSpec, split: str = "train") -> Dataset:
    """Deterministic synthetic set; image i depends only on (seed, i)."""
    images, labels = [], []
    for i in range(spec.n_images):
        rng = np.random.default_rng((spec.seed, i))
        img, label = _render_image(spec, rng)
        images.append(img)
        labels.append(label)
    return Dataset(images, labels, class_names=["background", "blob"], split=split)


# ---------------------------------------------------------------------------
# latent mapper (identity)


def to_latent(image, strict: bool = False):
    """Identity mapping into the diffusion space; validates range in strict mode."""
    arr = image.data if isinstance(image, Tensor) else np.asarray(image)
    if arr.ndim not in (3, 4):
        raise IngestionError(f"expected (C, H, W) or (B, C, H, W), got {arr.shape}")
    if strict and (arr.min() < -1.0 or arr.max() > 1.0):
        raise RangeError(f"image values outside [-1, 1]: [{arr.min()}, {arr.max()}]")
    return image


def from_latent(z):
    """Identity mapping back to image space, clamped to [-1, 1]."""
    arr = z.data if isinstance(z, Tensor) else np.asarray(z)
    return np.clip(arr, -1.0, 1.0)


# ---------------------------------------------------------------------------
# PGM + CSV ingestion


def write_pgm(path, image: np.ndarray) -> None:
    """Write one (C=1, H, W) or (H, W) image in [-1, 1] as binary 8-bit PGM."""
    arr = np.asarray(image)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise IngestionError(f"PGM supports single-channel images, got {arr.shape}")
        arr = arr[0]
    byte = np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        f.write(byte.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a (1, H, W) float32 array in [-1, 1]."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IngestionError(f"cannot read {path}: {e}") from e
    if not data.startswith(b"P5"):
        raise IngestionError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(v) for v in fields)
    except ValueError as e:
        raise IngestionError(f"{path}: malformed PGM header") from e
    if not (0 < maxval <= 255):
        raise IngestionError(f"{path}: unsupported maxval {maxval}")
    raw = data[pos:pos + width * height]
    if len(raw) != width * height:
        raise IngestionError(f"{path}: pixel data truncated")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(height, width).astype(np.float32)
    return (img / maxval * 2.0 - 1.0)[None, :, :]


def save_dataset(dataset: Dataset, root, with_labels: bool = True) -> None:
    """Write a dataset as numbered PGMs plus (optionally) labels.csv."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(len(dataset)):
        name = f"{i:05d}.pgm"
        write_pgm(root / name, dataset.image(i))
        if with_labels and dataset.labeled:
            rows.append((name, dataset.label(i)))
    if rows:
        with open(root / "labels.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["filename", "label"])
            w.writerows(rows)


def load_dataset(root, labels_csv=None, split: str = "train") -> Dataset:
    """Load every .pgm under ``root`` (sorted by name), optionally labeled.

    With ``labels_csv`` given, every image must have a label row and labels
    must be non-negative integers; any inconsistency names the offending
    file.
    """
    root = Path(root)
    paths = sorted(root.glob("*.pgm"))
    if not paths:
        raise IngestionError(f"no .pgm files under {root}")
    images = [read_pgm(p) for p in paths]

    labels = None
    if labels_csv is not None:
        table = {}
        try:
            with open(labels_csv, newline="") as f:
                reader = csv.DictReader(f)
                if reader.fieldnames is None or \
                        {"filename", "label"} - set(reader.fieldnames):
                    raise IngestionError(f"{labels_csv}: expected columns filename,label")
                for row in reader:
                    table[row["filename"]] = row["label"]
        except OSError as e:
            raise IngestionError(f"cannot read {labels_csv}: {e}") from e
        labels = []
        for p in paths:
            if p.name not in table:
                raise IngestionError(f"{labels_csv}: no label row for {p.name}")
            try:
                lab = int(table[p.name])
            except ValueError as e:
                raise IngestionError(f"{labels_csv}: bad label {table[p.name]!r} for {p.name}") from e
            if lab < 0:
                raise IngestionError(f"{labels_csv}: negative label for {p.name}")
            labels.append(lab)
    try:
        return Dataset(images, labels, split=split)
    except IngestionError as e:
        raise IngestionError(f"{root}: {e}") from e


# ---------------------------------------------------------------------------
# splitting


def split(dataset: Dataset, fractions, seed: int):
    """Deterministic shuffled partition into (train, valid, test).

    Sizes follow a floor-then-remainder rule: each split gets
    floor(fraction * n) items and every leftover goes to the last split.
    """
    if len(fractions) != 3:
        raise InputError(f"expected 3 fractions, got {len(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InputError(f"fractions must sum to 1, got {sum(fractions)}")
    if any(f < 0 for f in fractions):
        raise InputError("fractions must be non-negative")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    sizes = [int(math.floor(f * n)) for f in fractions]
    sizes[-1] = n - sizes[0] - sizes[1]
    bounds = np.cumsum([0] + sizes)
    names = ("train", "valid", "test")
    return tuple(
        dataset.subset([int(j) for j in order[lo:hi]], split=name)
        for name, lo, hi in zip(names, bounds[:-1], bounds[1:])
    )
