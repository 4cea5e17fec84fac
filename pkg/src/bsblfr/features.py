"""Feature extraction for vectorized face images: downsampling, Eigenfaces, Laplacianfaces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla
from scipy.spatial.distance import cdist

from .data import as_image, resize_image
from .errors import DimensionError, InputValidationError

DEGREE_JITTER = 1e-8
RIDGE = 1e-8


def downsample(img, h: int, w: int) -> np.ndarray:
    """Area-average an image to ``h x w`` and flatten it row-major.

    Each output pixel is the coverage-weighted mean of the source rectangle it
    spans, so constants are preserved and outputs stay within the input range.
    """
    img = as_image(img)
    src_h, src_w = img.shape
    if not (1 <= h <= src_h and 1 <= w <= src_w):
        raise DimensionError(f"cannot downsample {src_h}x{src_w} to {h}x{w}")
    return resize_image(img, h, w).reshape(-1)


def _sign_fix(components: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


@dataclass
class FeatureExtractor:
    """A fitted (or, for downsampling, parameter-only) feature map.

    ``kind`` is ``"downsample"``, ``"eigenfaces"`` or ``"laplacianfaces"``.
    For the learned kinds ``projection`` is ``d x D`` and ``mean`` has length
    ``D``.
    """

    kind: str
    shape: Optional[tuple] = None  # (h', w') for downsample
    projection: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    explained_variance_ratio: Optional[np.ndarray] = None
    eigenvalues: Optional[np.ndarray] = None
    # generalized eigenproblem of the LPP step, kept for diagnostics
    lpp_lhs: Optional[np.ndarray] = None
    lpp_rhs: Optional[np.ndarray] = None
    lpp_vectors: Optional[np.ndarray] = None

    @property
    def fitted(self) -> bool:
        return self.kind == "downsample" or self.projection is not None

    @property
    def dim(self) -> int:
        if self.kind == "downsample":
            return self.shape[0] * self.shape[1]
        return self.projection.shape[0]

    @property
    def label(self) -> str:
        if self.kind == "downsample":
            return f"downsample:{self.shape[0]}x{self.shape[1]}"
        return f"{self.kind}:{self.dim}"

    def transform(self, x) -> np.ndarray:
        return transform(self, x)


def downsampler(h: int, w: int) -> FeatureExtractor:
    return FeatureExtractor(kind="downsample", shape=(int(h), int(w)))


def _as_training_matrix(train) -> np.ndarray:
    x = np.asarray(train, dtype=float)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError("need at least two training vectors")
    return x


def _pca(x: np.ndarray, d: int):
    mean = x.mean(axis=0)
    centered = x - mean
    # rows of vt are the principal directions (left singular vectors of centered.T)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    comps = _sign_fix(vt[:d])
    var = svals**2
    return mean, comps, var


def eigenfaces_fit(train, d: int) -> FeatureExtractor:
    """PCA on the training vectors (rows of ``train``), keeping ``d`` components."""
    x = _as_training_matrix(train)
    n, dim = x.shape
    if not 1 <= d <= min(dim, n - 1):
        raise DimensionError(f"eigenfaces dimension {d} must be in [1, {min(dim, n - 1)}]")
    mean, comps, var = _pca(x, d)
    total = var.sum()
    ratio = var[:d] / total if total > 0 else np.zeros(d)
    return FeatureExtractor(kind="eigenfaces", projection=comps, mean=mean, explained_variance_ratio=ratio)


def default_lpp_params(n_train: int, d: int):
    return {"pca_dim": max(d, min(n_train - 1, 100)), "k": 5, "t": None}


def lpp_fit(train, d: int, pca_dim: int | None = None, k: int = 5, t: float | None = None) -> FeatureExtractor:
    """Laplacianfaces: PCA to ``pca_dim``, then locality preserving projections.

    A symmetric ``k``-nearest-neighbour graph with heat-kernel weights
    ``exp(-||u_i - u_j||^2 / t)`` is built on the PCA coordinates; ``t``
    defaults to the mean squared pairwise distance.  The ``d`` directions solve
    ``U L U^T a = mu U D U^T a`` for the smallest ``mu``.
    """
    x = _as_training_matrix(train)
    n, dim = x.shape
    if pca_dim is None:
        pca_dim = default_lpp_params(n, d)["pca_dim"]
    if not 1 <= d <= pca_dim <= min(dim, n - 1):
        raise DimensionError(f"need 1 <= d ({d}) <= pca_dim ({pca_dim}) <= {min(dim, n - 1)}")
    if not 1 <= k < n:
        raise InputValidationError(f"k must be in [1, {n - 1}]")
    mean, pca_comps, _ = _pca(x, pca_dim)
    u = (x - mean) @ pca_comps.T  # (n, pca_dim)

    sq = cdist(u, u, "sqeuclidean")
    if t is None:
        t = float(sq[np.triu_indices(n, 1)].mean())
    if not t > 0:
        raise InputValidationError("heat parameter t must be positive")
    order = np.argsort(sq + np.diag(np.full(n, np.inf)), axis=1, kind="stable")[:, :k]
    adj = np.zeros((n, n), dtype=bool)
    adj[np.repeat(np.arange(n), k), order.ravel()] = True
    adj |= adj.T
    weights = np.where(adj, np.exp(-sq / t), 0.0)
    degree = weights.sum(axis=1) + DEGREE_JITTER
    lap = np.diag(degree) - weights

    lhs = u.T @ lap @ u
    rhs = u.T @ (degree[:, None] * u)
    lhs, rhs = 0.5 * (lhs + lhs.T), 0.5 * (rhs + rhs.T)
    try:
        np.linalg.cholesky(rhs)
    except np.linalg.LinAlgError:
        rhs = rhs + RIDGE * np.trace(rhs) * np.eye(pca_dim)
    evals, evecs = sla.eigh(lhs, rhs, subset_by_index=[0, d - 1])
    vecs = _sign_fix(evecs.T).T
    return FeatureExtractor(
        kind="laplacianfaces",
        projection=vecs.T @ pca_comps,
        mean=mean,
        eigenvalues=evals,
        lpp_lhs=lhs,
        lpp_rhs=rhs,
        lpp_vectors=vecs,
    )


def transform(extractor: FeatureExtractor, x) -> np.ndarray:
    """Map an image (or a flat vector of matching length) to its feature vector."""
    if not extractor.fitted:
        raise InputValidationError(f"{extractor.kind} extractor is not fitted")
    if extractor.kind == "downsample":
        return downsample(x, *extractor.shape)
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape[0] != extractor.mean.shape[0]:
        raise DimensionError(f"expected input of length {extractor.mean.shape[0]}, got {v.shape[0]}")
    return extractor.projection @ (v - extractor.mean)


def transform_many(extractor: FeatureExtractor, images) -> np.ndarray:
    """Rows of the result are the features of ``images[i]``."""
    images = np.asarray(images, dtype=float)
    if extractor.kind == "downsample":
        return np.stack([downsample(img, *extractor.shape) for img in images])
    flat = images.reshape(images.shape[0], -1)
    return (flat - extractor.mean) @ extractor.projection.T


def fit_extractor(kind: str, train_images, **params) -> FeatureExtractor:
    """Build an extractor from a kind name and parameters (as used in configs)."""
    if kind == "downsample":
        return downsampler(params["h"], params["w"])
    vectors = np.asarray(train_images, dtype=float).reshape(len(train_images), -1)
    if kind == "eigenfaces":
        return eigenfaces_fit(vectors, int(params["d"]))
    if kind == "laplacianfaces":
        return lpp_fit(
            vectors, int(params["d"]), pca_dim=params.get("pca_dim"),
            k=int(params.get("k", 5)), t=params.get("t"),
        )
    raise InputValidationError(f"unknown feature kind {kind!r}")
