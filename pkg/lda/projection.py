import logging
from typing import Sequence

import numpy as np
import scipy.linalg

from config.settings import LDA_WHITEN_TOL, LOG_LEVEL, LOG_FORMAT
from cascade.matcher import normalize
from schemas.models import LabeledDataset, LdaProjection
from utils.errors import DimensionMismatchError, LdaError, NormalizationError, ValidationError

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger("lda")


def scatter_matrices(data: LabeledDataset):
    """Within-class scatter S_w and class-size weighted between-class scatter S_b."""
    samples = data.samples
    mean = samples.mean(axis=0)
    s_w = np.zeros((data.dim_raw, data.dim_raw))
    offsets = []
    counts = []
    for rows in data.class_indices().values():
        class_samples = samples[rows]
        class_mean = class_samples.mean(axis=0)
        centered = class_samples - class_mean
        s_w += centered.T @ centered
        offsets.append(class_mean - mean)
        counts.append(rows.size)
    offsets = np.array(offsets)
    # S_b = sum_c n_c (mu_c - mu)(mu_c - mu)^T
    s_b = (offsets * np.array(counts, dtype=np.float64)[:, None]).T @ offsets
    return mean, s_w, s_b


def fit_lda(data: LabeledDataset, d_out: int, whiten_tol: float = LDA_WHITEN_TOL) -> LdaProjection:
    """Fit a discriminant projection whose output dimensions are ordered by discriminability.

    The generalized problem S_b w = lambda S_w w is solved by PCA-whitening S_w
    (components below whiten_tol x trace dropped) and eigen-decomposing the
    whitened S_b. Each basis column is signed so its largest-magnitude entry is positive.
    """
    try:
        data.check_trainable()
    except ValidationError as e:
        raise LdaError(str(e)) from e

    classes = data.class_count
    if not 1 <= d_out <= min(classes - 1, data.dim_raw):
        raise LdaError(
            f"d_out must be in [1, min(C - 1, D_raw)] = [1, {min(classes - 1, data.dim_raw)}], got {d_out}"
        )

    logger.info(f"Fitting LDA - samples: {data.n}, classes: {classes}, dim_raw: {data.dim_raw}, d_out: {d_out}")
    mean, s_w, s_b = scatter_matrices(data)

    w_values, w_vectors = scipy.linalg.eigh(s_w)
    keep = w_values > whiten_tol * max(float(w_values.sum()), 0.0)
    if int(keep.sum()) < d_out:
        raise LdaError(f"within-class scatter keeps {int(keep.sum())} directions, fewer than d_out {d_out}")
    whitening = w_vectors[:, keep] / np.sqrt(w_values[keep])

    s_b_white = whitening.T @ s_b @ whitening
    s_b_white = (s_b_white + s_b_white.T) / 2.0
    b_values, b_vectors = scipy.linalg.eigh(s_b_white)
    b_values, b_vectors = b_values[::-1], b_vectors[:, ::-1]

    if b_values[0] <= 1e-12:
        raise LdaError("between-class scatter is zero: no discriminative direction")
    available = int(np.sum(b_values > 1e-10 * b_values[0]))
    if available < d_out:
        raise LdaError(f"only {available} discriminative directions available, d_out is {d_out}")

    basis = whitening @ b_vectors[:, :d_out]
    peaks = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[peaks, np.arange(d_out)])
    basis = basis * np.where(signs == 0, 1.0, signs)

    eigenvalues = np.maximum(b_values[:d_out], 0.0)
    logger.info(f"LDA fitted - whitened rank: {int(keep.sum())}, top eigenvalues: {np.round(eigenvalues[:5], 3).tolist()}")
    return LdaProjection(
        mean=mean,
        basis=basis,
        eigenvalues=eigenvalues,
        provenance={"classes": str(classes), "samples": str(data.n)},
    )


def project(p: LdaProjection, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Unit-length discriminant features of one raw vector."""
    vector = np.asarray(x, dtype=np.float64)
    if vector.shape != (p.dim_raw,):
        raise DimensionMismatchError(f"raw vector has shape {vector.shape}, projection expects ({p.dim_raw},)")
    try:
        return normalize((vector - p.mean) @ p.basis)
    except NormalizationError as e:
        raise LdaError("projected vector is zero (input sits at the projection mean)") from e


def project_batch(p: LdaProjection, samples: np.ndarray) -> np.ndarray:
    """Row-wise project; every output row is unit length."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != p.dim_raw:
        raise DimensionMismatchError(f"samples have shape {samples.shape}, projection expects (n, {p.dim_raw})")
    return np.stack([project(p, row) for row in samples]) if len(samples) else np.empty((0, p.d_out))


def fisher_ratios(p: LdaProjection, data: LabeledDataset) -> np.ndarray:
    """Per output dimension, between-class over within-class scatter of the projected data."""
    projected = (data.samples - p.mean) @ p.basis
    grand = projected.mean(axis=0)
    between = np.zeros(p.d_out)
    within = np.zeros(p.d_out)
    for rows in data.class_indices().values():
        block = projected[rows]
        centre = block.mean(axis=0)
        between += rows.size * (centre - grand) ** 2
        within += ((block - centre) ** 2).sum(axis=0)
    return between / within
