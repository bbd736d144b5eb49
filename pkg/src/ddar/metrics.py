"""Evaluation metrics and embedding diagnostics.

Accuracy, expected calibration error and an exact (pair-counting) AUROC,
plus tools for inspecting embeddings: uncertainty grids over the plane,
Lipschitz ratio histograms, a power-iteration PCA and a feature-collapse
score.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import ContractError, DataError, DegenerateInputError
from .rng import Rng


@dataclass
class EvalReport:
    accuracy: float
    ece: float
    auroc: Optional[float]
    n_id: int
    n_ood: int
    per_point: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        out = {"accuracy": self.accuracy, "ece": self.ece, "n_id": self.n_id, "n_ood": self.n_ood}
        if self.auroc is not None:
            out["auroc"] = self.auroc
        return out


@dataclass
class GridResult:
    bounds: tuple[float, float, float, float]
    resolution: int
    xs: np.ndarray
    ys: np.ndarray
    confidence: np.ndarray
    uncertainty: np.ndarray

    def points(self) -> np.ndarray:
        """Grid coordinates in row-major order (y outer, x inner)."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ContractError("accuracy of an empty set")
    if predictions.shape != labels.shape:
        raise ContractError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    return float(np.mean(predictions == labels))


def ece(confidences, correct, num_bins: int = 15) -> float:
    """Expected calibration error over equal-width bins.

    Bin ``b`` covers ``((b-1)/num_bins, b/num_bins]``; a confidence of
    exactly 0 falls in the first bin.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if len(conf) == 0:
        raise ContractError("ece of an empty set")
    if np.any(conf < 0) or np.any(conf > 1):
        raise ContractError("confidences must lie in [0, 1]")
    bins = np.clip(np.ceil(conf * num_bins).astype(int) - 1, 0, num_bins - 1)
    total = 0.0
    n = len(conf)
    for b in range(num_bins):
        mask = bins == b
        nb = mask.sum()
        if nb:
            total += nb / n * abs(correct[mask].mean() - conf[mask].mean())
    return float(total)


def auroc(uncertainty_id, uncertainty_ood) -> float:
    """Probability that an OOD sample scores higher than an ID sample (ties count 1/2).

    Computed exactly as the Mann-Whitney statistic via sorting.
    """
    s_id = np.sort(np.asarray(uncertainty_id, dtype=np.float64).ravel())
    s_ood = np.asarray(uncertainty_ood, dtype=np.float64).ravel()
    if len(s_id) == 0 or len(s_ood) == 0:
        raise ContractError("auroc needs non-empty ID and OOD score sets")
    below = np.searchsorted(s_id, s_ood, side="left")
    below_or_equal = np.searchsorted(s_id, s_ood, side="right")
    wins = below.sum() + 0.5 * (below_or_equal - below).sum()
    return float(wins / (len(s_id) * len(s_ood)))


def evaluate(
    labels_pred, confidence, uncertainty, labels_true, uncertainty_ood=None, num_bins: int = 15
) -> EvalReport:
    """Bundle accuracy, ECE and (when OOD scores are given) AUROC."""
    labels_pred = np.asarray(labels_pred)
    labels_true = np.asarray(labels_true)
    correct = labels_pred == labels_true
    auc = None
    n_ood = 0
    if uncertainty_ood is not None:
        auc = auroc(uncertainty, uncertainty_ood)
        n_ood = len(uncertainty_ood)
    per_point = [
        (float(c), float(u), int(t), int(p))
        for c, u, t, p in zip(confidence, uncertainty, labels_true, labels_pred)
    ]
    return EvalReport(
        accuracy=accuracy(labels_pred, labels_true),
        ece=ece(confidence, correct, num_bins),
        auroc=auc,
        n_id=len(labels_true),
        n_ood=n_ood,
        per_point=per_point,
    )


def uncertainty_grid(
    predict_fn: Callable, bounds=(-2.5, 3.5, -2.0, 3.0), resolution: int = 100, input_dim: int = 2
) -> GridResult:
    """Evaluate ``predict_fn`` (returning labels, confidence, uncertainty) on a regular grid."""
    if input_dim != 2:
        raise DataError(f"uncertainty grids need a 2-D input model, got input_dim={input_dim}")
    if resolution < 2:
        raise ContractError(f"resolution must be >= 2, got {resolution}")
    xmin, xmax, ymin, ymax = map(float, bounds)
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    grid = GridResult((xmin, xmax, ymin, ymax), resolution, xs, ys, np.empty(0), np.empty(0))
    _, conf, unc = predict_fn(grid.points())
    grid.confidence = np.asarray(conf, dtype=np.float64)
    grid.uncertainty = np.asarray(unc, dtype=np.float64)
    return grid


def lipschitz_diagnostic(embed_fn: Callable, x1, x2, bins: int = 20) -> dict:
    """Distance ratios ``|g(a) - g(b)| / |a - b|`` over paired rows of ``x1`` and ``x2``.

    Coincident pairs are skipped and counted. Returns the extremes, the
    ratios themselves and a ``bins``-bin histogram.
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    d_in = np.linalg.norm(x1 - x2, axis=1)
    keep = d_in > 0
    if keep.sum() == 0:
        raise ContractError("lipschitz_diagnostic needs at least one distinct pair")
    g1 = np.atleast_2d(embed_fn(x1[keep]))
    g2 = np.atleast_2d(embed_fn(x2[keep]))
    ratios = np.linalg.norm(g1 - g2, axis=1) / d_in[keep]
    counts, edges = np.histogram(ratios, bins=bins)
    return {
        "min_ratio": float(ratios.min()),
        "max_ratio": float(ratios.max()),
        "ratios": ratios,
        "histogram": (counts, edges),
        "skipped": int((~keep).sum()),
    }


def _power_iteration(
    A: np.ndarray, v0: np.ndarray, tol: float, max_iter: int, basis: list
) -> tuple[float, np.ndarray]:
    """Dominant eigenpair of symmetric PSD ``A`` restricted to the complement of ``basis``.

    Earlier components are projected out on every iterate, so rounding in the
    deflated matrix cannot pull the vector back onto them. A vanishing iterate
    means the remaining spectrum is zero.
    """

    def project(x):
        for b in basis:
            x = x - b * (b @ x)
        return x

    scale = max(np.abs(A).max(), 1e-300)
    v = project(v0)
    v /= np.linalg.norm(v)
    lam = float(v @ A @ v)
    for _ in range(max_iter):
        w = project(A @ v)
        norm = np.linalg.norm(w)
        if norm <= 1e-13 * scale:
            return 0.0, v
        w /= norm
        new_lam = float(w @ A @ w)
        converged = abs(new_lam - lam) <= tol * max(abs(new_lam), 1.0) and min(
            np.linalg.norm(w - v), np.linalg.norm(w + v)
        ) <= np.sqrt(tol)
        v, lam = w, new_lam
        if converged:
            break
    return lam, v


def pca2(points, tol: float = 1e-10, max_iter: int = 1000) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project onto the top two principal components.

    Uses power iteration with deflation on the sample covariance, started
    from a fixed vector so results are deterministic. Component signs are
    fixed so that the largest-magnitude loading is positive.

    Returns
    -------
    projection : ndarray of shape (n, 2)
    eigenvalues : ndarray of shape (2,)
    components : ndarray of shape (2, k)
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, k = X.shape
    if n < 3:
        raise ContractError(f"pca2 needs at least 3 points, got {n}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (n - 1)
    if not np.any(cov):
        raise DegenerateInputError("pca2: data has rank 0")
    A = cov.copy()
    comps, vals = [], []
    for _ in range(min(2, k)):
        v0 = np.ones(k) + 0.1 * np.arange(k)
        if comps and np.linalg.norm(v0 - comps[0] * (comps[0] @ v0)) < 1e-8:
            v0 = np.eye(k)[np.argmin(np.abs(comps[0]))]
        lam, v = _power_iteration(A, v0, tol, max_iter, comps)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        vals.append(max(lam, 0.0))
        A = A - lam * np.outer(v, v)
    while len(comps) < 2:  # k == 1
        comps.append(np.zeros(k))
        vals.append(0.0)
    W = np.vstack(comps)
    return Xc @ W.T, np.asarray(vals), W


def collapse_score(embed_id, embed_ood, max_pairs: int = 10_000, seed: int = 0) -> float:
    """How far OOD embeddings stay from the in-distribution cloud.

    Median (over OOD points) distance to the nearest ID embedding, divided
    by the median ID-ID pairwise distance over at most ``max_pairs`` pairs
    (a seeded subsample when there are more). 0 means full collapse.
    """
    A = np.atleast_2d(np.asarray(embed_id, dtype=np.float64))
    B = np.atleast_2d(np.asarray(embed_ood, dtype=np.float64))
    if len(A) == 0 or len(B) == 0:
        raise ContractError("collapse_score needs non-empty ID and OOD embeddings")
    nearest = np.empty(len(B))
    for start in range(0, len(B), 256):
        chunk = B[start:start + 256]
        d2 = (chunk**2).sum(1)[:, None] - 2 * chunk @ A.T + (A**2).sum(1)[None, :]
        nearest[start:start + 256] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    n = len(A)
    iu, ju = np.triu_indices(n, k=1)
    if len(iu) > max_pairs:
        pick = Rng(seed).permutation(len(iu))[:max_pairs]
        iu, ju = iu[pick], ju[pick]
    if len(iu) == 0:
        raise ContractError("collapse_score needs at least 2 ID embeddings")
    id_med = np.median(np.linalg.norm(A[iu] - A[ju], axis=1))
    if id_med == 0:
        return float("inf") if np.median(nearest) > 0 else 0.0
    return float(np.median(nearest) / id_med)


def report_to_dict(report: EvalReport) -> dict:
    d = asdict(report)
    d.pop("per_point")
    if d["auroc"] is None:
        d.pop("auroc")
    return d
