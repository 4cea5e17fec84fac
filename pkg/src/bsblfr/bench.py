"""Configuration-driven recognition benchmarks.

An experiment is a grid of (classifier, feature, corruption, trial) cells.
Each cell splits the dataset, fits the feature extractor on the training
images, corrupts the test images at full resolution, extracts features,
classifies every test vector and records the recognition rate.

Seeding
-------
Every random draw comes from :func:`derive_seed`, the first 8 bytes
(little-endian) of the BLAKE2b hash of the JSON array of its arguments.  The
split of trial ``t`` uses ``derive_seed(master, "split", t)`` and the
corruption of test sample ``i`` uses ``derive_seed(master, "corrupt",
label, t, i)`` where ``label`` is e.g. ``"pixel:0.3"``.  Neither depends on
the classifier or feature, so all methods in a trial see the same training
set and the same corrupted pixels;
results are paired and do not depend on the order cells run in or on the
order of entries in the config.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .classifier import (
    SOLVER_ALIASES,
    NearestSubspace,
    classify,
    classify_robust,
    dictionary_from_arrays,
    nn_classify,
)
from .data import CorruptionSpec, FaceDataset, SplitSpec, load_directory, read_manifest, split_train_test, synth_dataset
from .errors import BsblError, ConfigError
from .features import FeatureExtractor, fit_extractor, transform_many

CSV_HEADER = "classifier,feature,dim_h,dim_w,corruption,fraction,trial,rate,wall_ms"
FORMATS = ("csv", "json", "markdown")
CLASSIFIER_NAMES = tuple(SOLVER_ALIASES) + ("nn", "ns")
FEATURE_KINDS = ("downsample", "eigenfaces", "laplacianfaces")


def derive_seed(*parts) -> int:
    """64-bit seed from a tuple of ints and strings (BLAKE2b of their JSON encoding)."""
    blob = json.dumps(list(parts), separators=(",", ":")).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class FeatureSpec:
    kind: str
    params: tuple = ()  # sorted (key, value) pairs

    @property
    def options(self) -> dict:
        return dict(self.params)

    @property
    def dims(self) -> tuple:
        """``(dim_h, dim_w)`` for reports; learned features report ``(d, 1)``."""
        opts = self.options
        if self.kind == "downsample":
            return int(opts["h"]), int(opts["w"])
        return int(opts["d"]), 1

    @property
    def label(self) -> str:
        h, w = self.dims
        return f"{self.kind}:{h}x{w}" if self.kind == "downsample" else f"{self.kind}:{h}"


@dataclass(frozen=True)
class ClassifierSpec:
    name: str
    robust: bool = False
    subspace_dim: int = 9  # ns only

    @property
    def label(self) -> str:
        if self.name == "ns":
            return f"ns{self.subspace_dim}"
        return f"{self.name}+robust" if self.robust else self.name


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one benchmark run.

    Exactly one of ``dataset_path`` and ``synthetic`` is set.  ``synthetic``
    holds keyword arguments for :func:`bsblfr.data.synth_dataset`.
    """

    features: list
    classifiers: list
    corruption: list = field(default_factory=lambda: [CorruptionSpec()])
    split: SplitSpec = field(default_factory=SplitSpec)
    dataset_path: Optional[str] = None
    synthetic: Optional[dict] = None
    trials: int = 1
    seed: int = 0
    # split seed given explicitly in the config; otherwise derived per trial
    split_seed: Optional[int] = None

    def __post_init__(self):
        if not self.features:
            raise ConfigError("at least one feature is required")
        if not self.classifiers:
            raise ConfigError("at least one classifier is required")
        if not self.corruption:
            raise ConfigError("at least one corruption level is required")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if (self.dataset_path is None) == (self.synthetic is None):
            raise ConfigError("set exactly one of dataset.path and dataset.synthetic")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "trials": self.trials,
            "dataset": {"path": self.dataset_path} if self.dataset_path else {"synthetic": self.synthetic},
            "split": {k: v for k, v in asdict(self.split).items() if v not in ((), None)},
            "split_seed": self.split_seed,
            "features": [{"kind": f.kind, **f.options} for f in self.features],
            "classifiers": [asdict(c) for c in self.classifiers],
            "corruption": [asdict(c) for c in self.corruption],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _take(table: dict, key: str, kind, where: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(f"{where}: missing key {key!r}")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {value!r}")
    return value


def _unknown(table: dict, allowed, where: str):
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")


_SYNTH_KEYS = {
    "classes": int, "per_class": int, "dims": list, "subspace_dim": int,
    "noise_sigma": float, "seed": int, "spread": float, "quantize": bool,
}


def _parse_feature(entry, i) -> FeatureSpec:
    where = f"features[{i}]"
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: expected a table")
    kind = _take(entry, "kind", str, where, required=True)
    allowed = {"downsample": ("h", "w"), "eigenfaces": ("d",), "laplacianfaces": ("d", "pca_dim", "k", "t")}
    if kind not in allowed:
        raise ConfigError(f"{where}.kind: unknown feature kind {kind!r}")
    _unknown(entry, ("kind",) + allowed[kind], where)
    params = {}
    for key in allowed[kind]:
        required = key in ("h", "w", "d")
        value = _take(entry, key, float if key == "t" else int, where, required=required)
        if value is not None:
            if key != "t" and value < 1:
                raise ConfigError(f"{where}.{key}: must be >= 1")
            params[key] = value
    return FeatureSpec(kind, tuple(sorted(params.items())))


def _parse_classifier(entry, i) -> ClassifierSpec:
    where = f"classifiers[{i}]"
    if isinstance(entry, str):
        entry = {"name": entry}
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: expected a table or a name")
    _unknown(entry, ("name", "robust", "subspace_dim"), where)
    name = _take(entry, "name", str, where, required=True)
    if name not in CLASSIFIER_NAMES:
        raise ConfigError(f"{where}.name: unknown classifier {name!r}; choose from {list(CLASSIFIER_NAMES)}")
    robust = _take(entry, "robust", bool, where, default=False)
    if robust and name in ("nn", "ns"):
        raise ConfigError(f"{where}: robust mode needs a sparse solver, not {name!r}")
    dim = _take(entry, "subspace_dim", int, where, default=9)
    if dim < 0:
        raise ConfigError(f"{where}.subspace_dim: must be >= 0")
    return ClassifierSpec(name, robust, dim if name == "ns" else 9)


def _parse_corruption(entry, i) -> CorruptionSpec:
    where = f"corruption[{i}]"
    if not isinstance(entry, dict):
        raise ConfigError(f"{where}: expected a table")
    _unknown(entry, ("kind", "fraction", "occluder"), where)
    try:
        return CorruptionSpec(
            kind=_take(entry, "kind", str, where, default="pixel"),
            fraction=_take(entry, "fraction", float, where, default=0.0),
            occluder=_take(entry, "occluder", str, where),
        )
    except BsblError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a parsed config tree; relative paths resolve against ``base_dir``."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    _unknown(raw, ("seed", "trials", "dataset", "split", "features", "classifiers", "corruption"), "config")

    def resolve(p):
        path = Path(p)
        return str(path if path.is_absolute() else base_dir / path)

    dataset = raw.get("dataset")
    if not isinstance(dataset, dict):
        raise ConfigError("config: missing [dataset] table")
    _unknown(dataset, ("path", "synthetic"), "dataset")
    path = _take(dataset, "path", str, "dataset")
    synthetic = _take(dataset, "synthetic", dict, "dataset")
    if synthetic is not None:
        _unknown(synthetic, _SYNTH_KEYS, "dataset.synthetic")
        synthetic = {k: _take(synthetic, k, t, "dataset.synthetic") for k, t in _SYNTH_KEYS.items() if k in synthetic}
        for key in ("classes", "per_class", "dims", "subspace_dim", "noise_sigma"):
            if key not in synthetic:
                raise ConfigError(f"dataset.synthetic: missing key {key!r}")
        dims = synthetic["dims"]
        if len(dims) != 2 or not all(isinstance(v, int) and v >= 1 for v in dims):
            raise ConfigError("dataset.synthetic.dims: expected [h, w] with positive integers")

    split_raw = raw.get("split", {})
    if not isinstance(split_raw, dict):
        raise ConfigError("split: expected a table")
    _unknown(split_raw, ("mode", "ratio", "count", "seed", "train_manifest", "test_manifest"), "split")
    mode = _take(split_raw, "mode", str, "split", default="ratio")
    train_files = test_files = ()
    if mode == "manifest":
        try:
            train_files = read_manifest(resolve(_take(split_raw, "train_manifest", str, "split", required=True)))
            test_files = read_manifest(resolve(_take(split_raw, "test_manifest", str, "split", required=True)))
        except OSError as exc:
            raise ConfigError(f"split: cannot read manifest: {exc}") from None
    try:
        split = SplitSpec(
            mode=mode,
            ratio=_take(split_raw, "ratio", float, "split", default=0.5),
            count=_take(split_raw, "count", int, "split", default=1),
            train_files=train_files,
            test_files=test_files,
        )
    except BsblError as exc:
        raise ConfigError(f"split: {exc}") from None

    def table_list(key):
        value = raw.get(key, [])
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected an array")
        return value

    corruption = [_parse_corruption(c, i) for i, c in enumerate(table_list("corruption"))]
    for spec in corruption:
        if spec.occluder is not None:
            object.__setattr__(spec, "occluder", resolve(spec.occluder))
    return ExperimentConfig(
        features=[_parse_feature(f, i) for i, f in enumerate(table_list("features"))],
        classifiers=[_parse_classifier(c, i) for i, c in enumerate(table_list("classifiers"))],
        corruption=corruption or [CorruptionSpec()],
        split=split,
        dataset_path=resolve(path) if path is not None else None,
        synthetic=synthetic,
        trials=_take(raw, "trials", int, "config", default=1),
        seed=_take(raw, "seed", int, "config", default=0),
        split_seed=_take(split_raw, "seed", int, "split"),
    )


def load_config(path) -> ExperimentConfig:
    """Read a TOML experiment config.  See ``configs/example.toml`` for the keys."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, path.parent)


# ---------------------------------------------------------------------------
# running


@dataclass
class CellResult:
    classifier: str
    feature: str
    dim_h: int
    dim_w: int
    corruption: str
    fraction: float
    trial: int
    rate: float
    wall_ms: float
    correct: int = 0
    total: int = 0
    confusion: list = field(default_factory=list)  # confusion[true][predicted]
    seed: int = 0
    error: Optional[str] = None


@dataclass
class ExperimentReport:
    rows: list
    config: dict
    metadata: dict


class _Context:
    """Lazily computed, cached intermediates shared by the cells of one run."""

    def __init__(self, config: ExperimentConfig, dataset: FaceDataset):
        self.config = config
        self.dataset = dataset
        self._cache = {}
        self._lock = threading.Lock()

    def _memo(self, key, fn):
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        value = fn()
        with self._lock:
            return self._cache.setdefault(key, value)

    def split_seed(self, trial):
        cfg = self.config
        if cfg.split_seed is not None:
            return derive_seed(cfg.split_seed, "split", trial)
        return derive_seed(cfg.seed, "split", trial)

    def split(self, trial):
        def compute():
            spec = self.config.split
            spec = SplitSpec(spec.mode, spec.ratio, spec.count, self.split_seed(trial), spec.train_files, spec.test_files)
            return split_train_test(self.dataset, spec)

        return self._memo(("split", trial), compute)

    def extractor(self, feature: FeatureSpec, trial) -> FeatureExtractor:
        def compute():
            train, _ = self.split(trial)
            return fit_extractor(feature.kind, self.dataset.images[train], **feature.options)

        return self._memo(("extractor", feature, trial), compute)

    def test_images(self, corruption: CorruptionSpec, trial):
        def compute():
            _, test = self.split(trial)
            occluder = None
            if corruption.kind == "block" and corruption.occluder:
                from .data import read_image

                occluder = read_image(corruption.occluder)
            return np.stack([
                corruption.apply(self.dataset.images[idx], derive_seed(self.config.seed, "corrupt", corruption.label, trial, k), occluder)
                for k, idx in enumerate(test)
            ])

        return self._memo(("corrupt", corruption, trial), compute)

    def features(self, feature, trial, corruption):
        def compute():
            train, _ = self.split(trial)
            ext = self.extractor(feature, trial)
            return (
                transform_many(ext, self.dataset.images[train]),
                transform_many(ext, self.test_images(corruption, trial)),
            )

        return self._memo(("features", feature, corruption, trial), compute)


def _predict_all(clf: ClassifierSpec, train_x, train_y, test_x, threads: int):
    if clf.name == "nn":
        return [nn_classify(train_x, train_y, y) for y in test_x]
    if clf.name == "ns":
        model = NearestSubspace(train_x, train_y, clf.subspace_dim)
        return [model.classify(y).predicted_class for y in test_x]
    d = dictionary_from_arrays(train_x, train_y)
    fn = classify_robust if clf.robust else classify

    def one(y):
        return fn(d, y, clf.name).predicted_class

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, test_x))
    return [one(y) for y in test_x]


def _run_cell(ctx: _Context, clf, feature, corruption, trial, timing, threads) -> CellResult:
    cfg = ctx.config
    h, w = feature.dims
    row = CellResult(
        classifier=clf.label, feature=feature.kind, dim_h=h, dim_w=w,
        corruption=corruption.kind, fraction=float(corruption.fraction), trial=trial,
        rate=math.nan, wall_ms=0.0,
        seed=derive_seed(cfg.seed, clf.label, feature.label, corruption.label, trial),
    )
    start = time.perf_counter()
    try:
        train, test = ctx.split(trial)
        train_x, test_x = ctx.features(feature, trial, corruption)
        labels = ctx.dataset.labels
        predicted = _predict_all(clf, train_x, labels[train], test_x, threads)
    except (BsblError, ValueError, ArithmeticError, OSError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    else:
        k = ctx.dataset.n_classes
        confusion = np.zeros((k, k), dtype=int)
        np.add.at(confusion, (labels[test], np.asarray(predicted, dtype=int)), 1)
        row.confusion = confusion.tolist()
        row.correct = int(np.trace(confusion))
        row.total = int(test.size)
        row.rate = row.correct / row.total
    if timing:
        row.wall_ms = 1000.0 * (time.perf_counter() - start)
    return row


def grid(config: ExperimentConfig):
    """Cells in report order: classifier, feature, corruption, trial."""
    for clf in config.classifiers:
        for feature in config.features:
            for corruption in config.corruption:
                for trial in range(config.trials):
                    yield clf, feature, corruption, trial


def load_dataset(config: ExperimentConfig) -> FaceDataset:
    if config.dataset_path is not None:
        return load_directory(config.dataset_path)
    params = dict(config.synthetic)
    params.setdefault("seed", config.seed)
    return synth_dataset(**params)


def run_experiment(config: ExperimentConfig, threads: int = 1, timing: bool = True) -> ExperimentReport:
    """Run every grid cell and collect one row per cell.

    Failures inside a cell are recorded on the row (``rate`` NaN, ``error``
    set) and the run continues.  With ``threads > 1`` cells run concurrently;
    rows are still returned in grid order.  ``timing=False`` reports
    ``wall_ms = 0`` so that output files are byte-identical across runs.
    """
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    ctx = _Context(config, load_dataset(config))
    cells = list(grid(config))

    def run(cell):
        return _run_cell(ctx, *cell, timing, 1)

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [_run_cell(ctx, *cell, timing, threads) for cell in cells]
    metadata = {
        "config_sha256": config.digest(),
        "version": __version__,
        "master_seed": config.seed,
        "split_seeds": [ctx.split_seed(t) for t in range(config.trials)],
        "dataset": ctx.dataset.source,
        "class_names": [str(c) for c in ctx.dataset.class_names],
    }
    return ExperimentReport(rows=rows, config=config.to_dict(), metadata=metadata)


# ---------------------------------------------------------------------------
# output


def _csv_lines(report: ExperimentReport):
    yield CSV_HEADER
    for r in report.rows:
        yield ",".join([
            r.classifier, r.feature, str(r.dim_h), str(r.dim_w), r.corruption,
            repr(r.fraction), str(r.trial), repr(float(r.rate)), f"{r.wall_ms:.3f}",
        ])


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    return value


def _level_label(kind: str, fraction: float) -> str:
    pct = f"{100 * fraction:g}%"
    return pct if kind in ("none", "pixel") else f"{kind} {pct}"


def format_markdown(report: ExperimentReport) -> str:
    """Recognition rates in percent, one row per (method, feature), one column per corruption level.

    Each entry is the mean over trials; cells with errors count as NaN.
    """
    levels, methods = [], []
    means = {}
    for r in report.rows:
        level = (r.corruption if r.fraction > 0 else "none", r.fraction)
        if level not in levels:
            levels.append(level)
        feat = r.feature if r.dim_w == 1 and r.feature != "downsample" else None
        dim = f"{r.dim_h}x{r.dim_w}" if feat is None else f"{r.feature} {r.dim_h}"
        method = (r.classifier, dim)
        if method not in methods:
            methods.append(method)
        means.setdefault((method, level), []).append(r.rate)
    header = ["Method", "Dimension"] + [_level_label(k, f) for k, f in levels]
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    for method in methods:
        cells = []
        for level in levels:
            vals = means.get((method, level))
            if not vals:
                cells.append("")
                continue
            mean = float(np.mean(vals))
            cells.append("nan" if math.isnan(mean) else f"{100 * mean:.2f}")
        lines.append("| " + " | ".join([method[0], method[1], *cells]) + " |")
    return "\n".join(lines) + "\n"


def format_report(report: ExperimentReport, fmt: str) -> str:
    if fmt == "csv":
        return "\n".join(_csv_lines(report)) + "\n"
    if fmt == "json":
        doc = {"metadata": report.metadata, "config": report.config, "rows": [asdict(r) for r in report.rows]}
        return json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n"
    if fmt == "markdown":
        return format_markdown(report)
    raise ConfigError(f"unknown report format {fmt!r}; choose from {list(FORMATS)}")


def emit_report(report: ExperimentReport, fmt: str, path) -> Path:
    """Write ``report`` to ``path`` as csv, json or markdown."""
    text = format_report(report, fmt)
    path = Path(path)
    path.write_text(text)
    return path
