"""Face datasets: PGM/CSV directory loading, synthetic generators, splits and corruption.

Randomized operations take an integer seed and draw from numpy's PCG64 bit
generator (``numpy.random.default_rng``), so results are pure functions of
their inputs and seed.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, FormatError, InputValidationError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".csv")
MAX_FRACTION = 0.9


def round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def rng_for(*key: int) -> np.random.Generator:
    """PCG64 generator seeded from a tuple of nonnegative integers."""
    return np.random.default_rng([int(k) & 0xFFFFFFFFFFFFFFFF for k in key])


def as_image(pixels) -> np.ndarray:
    """Validate a 2-D pixel array and clamp it into ``[0, 255]`` as float64."""
    img = np.array(pixels, dtype=float)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError(f"an image must be a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InputValidationError("image contains non-finite values")
    return np.clip(img, 0.0, 255.0)


# ---------------------------------------------------------------------------
# file formats


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM image."""
    path = Path(path)
    data = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    raw = data[pos : pos + width * height]
    if len(raw) != width * height:
        raise FormatError(f"{path}: expected {width * height} pixel bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width).astype(float)


def write_pgm(path, img) -> None:
    img = np.asarray(img)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_csv_image(path) -> np.ndarray:
    path = Path(path)
    try:
        img = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: not a comma-separated integer matrix") from exc
    if img.size == 0 or np.any(img < 0) or np.any(img > 255) or np.any(img != np.round(img)):
        raise FormatError(f"{path}: CSV images must hold integers in 0..255")
    return img


def write_csv_image(path, img) -> None:
    pixels = np.clip(np.rint(np.asarray(img)), 0, 255).astype(int)
    np.savetxt(path, pixels, fmt="%d", delimiter=",")


def read_image(path) -> np.ndarray:
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix == ".pgm":
            return read_pgm(path)
        if suffix == ".csv":
            return read_csv_image(path)
    except OSError as exc:
        raise FormatError(f"{path}: unreadable ({exc})") from exc
    raise FormatError(f"{path}: unsupported image type {suffix!r}")


# ---------------------------------------------------------------------------
# datasets


@dataclass
class FaceDataset:
    """Equal-sized grayscale images with integer class labels.

    ``labels[i]`` indexes ``class_names``; ``paths`` is filled for datasets read
    from disk and used by manifest-based splits.
    """

    images: np.ndarray  # (N, h, w) float64
    labels: np.ndarray  # (N,) int
    class_names: list
    source: str = ""
    paths: Optional[list] = None
    skipped_classes: int = 0

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.images.ndim != 3:
            raise DimensionError("images must be an (N, h, w) array")
        if self.labels.shape != (self.images.shape[0],) or self.labels.size == 0:
            raise InputValidationError("need one label per image and at least one image")
        present = set(np.unique(self.labels).tolist())
        if present != set(range(len(self.class_names))):
            raise InputValidationError("every class must have at least one image")

    @property
    def dims(self) -> tuple:
        return self.images.shape[1], self.images.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def vectors(self) -> np.ndarray:
        """Row-major flattened images, shape (N, h*w)."""
        return self.images.reshape(self.images.shape[0], -1)


def load_directory(path) -> FaceDataset:
    """Load ``<root>/<class_name>/<image files>`` (PGM P5 or CSV).

    Classes are sorted by directory name and images by file name.  Class
    directories without images are skipped and counted in ``skipped_classes``.
    """
    root = Path(path)
    if not root.is_dir():
        raise FormatError(f"{root}: not a directory")
    images, labels, names, paths = [], [], [], []
    skipped = 0
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(
            f for f in class_dir.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            skipped += 1
            log.warning("skipping empty class directory %s", class_dir)
            continue
        label = len(names)
        names.append(class_dir.name)
        for f in files:
            images.append(read_image(f))
            labels.append(label)
            paths.append(str(f.relative_to(root)))
    if not images:
        raise FormatError(f"{root}: no images found")
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        common = max(shapes, key=lambda s: sum(img.shape == s for img in images))
        offenders = [p for p, img in zip(paths, images) if img.shape != common]
        raise DimensionError(f"mixed image dimensions; expected {common}, offenders: {offenders}")
    return FaceDataset(
        images=np.stack(images), labels=np.array(labels), class_names=names,
        source=str(root), paths=paths, skipped_classes=skipped,
    )


def save_dataset(ds: FaceDataset, path, fmt: str = "pgm") -> None:
    """Write ``ds`` in the directory layout read by :func:`load_directory`.

    Pixels are rounded to integers, so only integer-valued datasets round-trip
    exactly.
    """
    if fmt not in ("pgm", "csv"):
        raise InputValidationError(f"unknown image format {fmt!r}")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    counters = {}
    for img, label in zip(ds.images, ds.labels):
        name = str(ds.class_names[label])
        class_dir = root / name
        class_dir.mkdir(exist_ok=True)
        k = counters.get(name, 0)
        counters[name] = k + 1
        target = class_dir / f"{k:04d}.{fmt}"
        if fmt == "pgm":
            write_pgm(target, img)
        else:
            write_csv_image(target, img)


def synth_dataset(
    classes: int,
    per_class: int,
    dims: Sequence[int],
    subspace_dim: int,
    noise_sigma: float,
    seed: int,
    spread: float = 1.0,
    quantize: bool = False,
) -> FaceDataset:
    """Classes drawn from random affine subspaces of pixel space.

    Every class gets a random center and an orthonormal basis of dimension
    ``subspace_dim``; a sample is ``center + basis @ (spread * z) + noise_sigma * e``
    with standard normal ``z``, ``e`` (``noise_sigma`` is in gray levels).  The
    whole dataset is then mapped affinely onto ``[0, 255]`` from the noiseless
    range.  ``quantize`` rounds to integer gray levels.
    """
    h, w = (int(v) for v in dims)
    d = h * w
    if classes < 1 or per_class < 1:
        raise InputValidationError("classes and per_class must be >= 1")
    if not 0 <= subspace_dim <= d:
        raise InputValidationError(f"subspace_dim must be in [0, {d}]")
    if noise_sigma < 0:
        raise InputValidationError("noise_sigma must be nonnegative")
    rng = rng_for(seed)
    clean = np.empty((classes, per_class, d))
    for c in range(classes):
        center = rng.standard_normal(d)
        basis, _ = np.linalg.qr(rng.standard_normal((d, max(subspace_dim, 1))))
        coef = spread * rng.standard_normal((per_class, subspace_dim))
        clean[c] = center + coef @ basis[:, :subspace_dim].T
    lo, hi = clean.min(), clean.max()
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    vecs = (clean - lo) * scale
    vecs = vecs + noise_sigma * rng.standard_normal(vecs.shape)
    vecs = np.clip(vecs, 0.0, 255.0)
    if quantize:
        vecs = np.rint(vecs)
    images = vecs.reshape(classes * per_class, h, w)
    labels = np.repeat(np.arange(classes), per_class)
    names = [f"class{c:03d}" for c in range(classes)]
    return FaceDataset(
        images=images, labels=labels, class_names=names,
        source=f"synthetic(classes={classes}, per_class={per_class}, dims={h}x{w}, "
        f"subspace_dim={subspace_dim}, noise_sigma={noise_sigma}, seed={seed})",
    )


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    """Per-class train/test split.

    ``mode`` is ``"ratio"`` (train fraction ``ratio``), ``"count"`` (``count``
    training images per class) or ``"manifest"`` (explicit relative paths).
    """

    mode: str = "ratio"
    ratio: float = 0.5
    count: int = 1
    seed: int = 0
    train_files: tuple = ()
    test_files: tuple = ()

    def __post_init__(self):
        if self.mode == "ratio" and not 0 < self.ratio < 1:
            raise InputValidationError("split ratio must lie in (0, 1)")
        if self.mode == "count" and self.count < 1:
            raise InputValidationError("split count must be >= 1")
        if self.mode not in ("ratio", "count", "manifest"):
            raise InputValidationError(f"unknown split mode {self.mode!r}")


def split_train_test(ds: FaceDataset, spec: SplitSpec):
    """Split every class independently; returns index arrays ``(train, test)``.

    Indices refer to ``ds`` and are sorted ascending.
    """
    if spec.mode == "manifest":
        return _manifest_split(ds, spec)
    train, test = [], []
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        size = members.size
        n_train = round_half_up(spec.ratio * size) if spec.mode == "ratio" else spec.count
        if not 1 <= n_train < size:
            raise InputValidationError(
                f"class {ds.class_names[c]!r} has {size} images; cannot split {n_train} for training"
            )
        perm = rng_for(spec.seed, c).permutation(size)
        train.extend(members[perm[:n_train]].tolist())
        test.extend(members[perm[n_train:]].tolist())
    return np.array(sorted(train), dtype=int), np.array(sorted(test), dtype=int)


def _manifest_split(ds: FaceDataset, spec: SplitSpec):
    if ds.paths is None:
        raise InputValidationError("manifest splits need a dataset loaded from disk")
    where = {p.replace(os.sep, "/"): i for i, p in enumerate(ds.paths)}

    def lookup(files):
        missing = [f for f in files if f not in where]
        if missing:
            raise InputValidationError(f"manifest entries not in dataset: {missing[:5]}")
        return np.array(sorted(where[f] for f in files), dtype=int)

    train, test = lookup(spec.train_files), lookup(spec.test_files)
    if set(train.tolist()) & set(test.tolist()):
        raise InputValidationError("train and test manifests overlap")
    return train, test


def read_manifest(path) -> tuple:
    lines = Path(path).read_text().splitlines()
    return tuple(l.strip() for l in lines if l.strip() and not l.startswith("#"))


# ---------------------------------------------------------------------------
# corruption


def _check_fraction(fraction):
    if not 0.0 <= fraction <= MAX_FRACTION + 1e-12:
        raise InputValidationError(f"corruption fraction must lie in [0, {MAX_FRACTION}]")


def corrupt_pixels(img, fraction: float, seed: int):
    """Replace ``round(fraction * h * w)`` random pixels by uniform gray levels.

    Positions are drawn without replacement and values are independent
    integers in ``0..255``.

    Returns
    -------
    image : ndarray
    positions : ndarray of int
        Row-major indices of the replaced pixels, in draw order.
    """
    img = as_image(img)
    _check_fraction(fraction)
    count = round_half_up(fraction * img.size)
    rng = rng_for(seed)
    positions = rng.choice(img.size, size=count, replace=False) if count else np.zeros(0, dtype=int)
    values = rng.integers(0, 256, size=count)
    out = img.copy().reshape(-1)
    out[positions] = values
    return out.reshape(img.shape), np.asarray(positions, dtype=int)


def _coverage(src: int, dst: int):
    """Integer resampling weights and their common row sum.

    When shrinking, output ``i`` covers source interval ``[i*src/dst, (i+1)*src/dst)``;
    scaling by ``dst`` makes every overlap an integer and every row sum ``src``.
    Enlarging picks the nearest source sample (row sum 1).
    """
    if dst < 1 or src < 1:
        raise InputValidationError("sizes must be >= 1")
    mat = np.zeros((dst, src))
    if dst <= src:
        for i in range(dst):
            lo, hi = i * src, (i + 1) * src
            for p in range(lo // dst, min(-(-hi // dst), src)):
                overlap = min(hi, (p + 1) * dst) - max(lo, p * dst)
                if overlap > 0:
                    mat[i, p] = overlap
        return mat, src
    src_idx = np.minimum(((np.arange(dst) + 0.5) * src / dst).astype(int), src - 1)
    mat[np.arange(dst), src_idx] = 1.0
    return mat, 1


def resize_matrix(src: int, dst: int) -> np.ndarray:
    """Linear map taking a length-``src`` signal to length ``dst``.

    Shrinking averages over source intervals with fractional coverage;
    enlarging picks the nearest source sample.
    """
    mat, den = _coverage(src, dst)
    return mat / den


def resize_image(img, h: int, w: int) -> np.ndarray:
    # integer weights with a single final division keep constant images exactly constant
    img = np.asarray(img, dtype=float)
    rows, den_r = _coverage(img.shape[0], h)
    cols, den_c = _coverage(img.shape[1], w)
    return (rows @ img @ cols.T) / (den_r * den_c)


def default_occluder(size: int = 64) -> np.ndarray:
    """Deterministic high-frequency pattern: a 4-pixel checkerboard over a diagonal ramp."""
    i, j = np.mgrid[0:size, 0:size]
    ramp = 255.0 * (i + j) / (2 * (size - 1))
    checker = ((i // 4 + j // 4) % 2) * 255.0
    return np.clip(0.5 * ramp + 0.5 * checker, 0, 255)


def occlude_block(img, fraction: float, occluder, seed: int):
    """Paste a resized occluder over a random square covering ``fraction`` of the image.

    The side is ``round(sqrt(fraction * h * w))`` clamped to ``min(h, w)``.

    Returns
    -------
    image : ndarray
    mask : ndarray of bool
        True inside the replaced square.
    """
    img = as_image(img)
    if fraction > MAX_FRACTION + 1e-12:
        log.debug("occlusion fraction %.3f exceeds %.1f; side clamped", fraction, MAX_FRACTION)
    if fraction < 0:
        raise InputValidationError("occlusion fraction must be nonnegative")
    h, w = img.shape
    side = min(round_half_up(np.sqrt(fraction * h * w)), h, w)
    mask = np.zeros((h, w), dtype=bool)
    if side == 0:
        return img.copy(), mask
    rng = rng_for(seed)
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    patch = resize_image(as_image(occluder), side, side)
    out = img.copy()
    out[top : top + side, left : left + side] = patch
    mask[top : top + side, left : left + side] = True
    return out, mask


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str = "none"  # none | pixel | block
    fraction: float = 0.0
    occluder: Optional[str] = None  # image path; None uses default_occluder()

    def __post_init__(self):
        if self.kind not in ("none", "pixel", "block"):
            raise InputValidationError(f"unknown corruption kind {self.kind!r}")
        _check_fraction(self.fraction)

    @property
    def label(self) -> str:
        return "none" if self.kind == "none" else f"{self.kind}:{self.fraction:g}"

    def apply(self, img, seed: int, occluder=None) -> np.ndarray:
        if self.kind == "none" or self.fraction == 0:
            return as_image(img)
        if self.kind == "pixel":
            return corrupt_pixels(img, self.fraction, seed)[0]
        if occluder is None:
            occluder = read_image(self.occluder) if self.occluder else default_occluder()
        return occlude_block(img, self.fraction, occluder, seed)[0]
