import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import BENCH_CHUNK_ROWS, LOG_LEVEL, LOG_FORMAT
from schemas.models import CascadeModel, MatchResult, PairSample, Template
from utils.errors import DimensionMismatchError, NormalizationError, ValidationError

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger("cascade_matcher")

VectorLike = Union[Template, Sequence[float], np.ndarray]


def _vector(x: VectorLike) -> np.ndarray:
    """Float64 view of a template or raw vector; float32 storage widens exactly."""
    values = x.features if isinstance(x, Template) else x
    vector = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1 or vector.size < 1:
        raise ValidationError(f"expected a non-empty vector, got shape {vector.shape}")
    return vector


def _same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def accumulate(running: np.ndarray, products: np.ndarray) -> np.ndarray:
    """Add the columns of products onto running, strictly left to right, one sum per row.

    products is a fresh (rows, width) float64 array and is overwritten.
    """
    products[:, 0] += running
    np.cumsum(products, axis=1, out=products)
    return products[:, -1].copy()


def normalize(x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Scale x to unit L2 length."""
    vector = np.asarray(x, dtype=np.float64)
    if vector.ndim != 1 or vector.size < 1:
        raise NormalizationError(f"expected a non-empty vector, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise NormalizationError("cannot normalize a vector with non-finite entries")
    peak = float(np.max(np.abs(vector)))
    if peak == 0.0:
        raise NormalizationError("cannot normalize the zero vector")
    # Pre-scale so the norm cannot overflow
    scaled = vector / peak
    return scaled / np.linalg.norm(scaled)


def cosine(x: VectorLike, y: VectorLike) -> float:
    """Inner product of two unit vectors, accumulated sequentially in float64."""
    a, b = _vector(x), _vector(y)
    _same_dim(a, b)
    products = (a * b).reshape(1, -1)
    return float(accumulate(np.zeros(1), products)[0])


def build_pair_sample(x: VectorLike, y: VectorLike, genuine: bool) -> PairSample:
    a, b = _vector(x), _vector(y)
    _same_dim(a, b)
    return PairSample(values=a * b, is_genuine=genuine)


def truncate_template(template: Template, d_prime: int) -> Template:
    """Keep the first d_prime coordinates and re-normalize."""
    if not 1 <= d_prime <= template.dim:
        raise ValidationError(f"truncated dimension must be in [1, {template.dim}], got {d_prime}")
    if d_prime == template.dim:
        return template
    prefix = template.features[:d_prime].astype(np.float64)
    try:
        features = normalize(prefix)
    except NormalizationError as e:
        raise NormalizationError(f"template {template.id!r} has an all-zero {d_prime}-dim prefix") from e
    return Template(id=template.id, features=features)


def cascade_match(x: VectorLike, y: VectorLike, model: CascadeModel, count_work: bool = False) -> MatchResult:
    """Incremental inner product that stops at the first stage whose partial score is below its threshold."""
    a, b = _vector(x), _vector(y)
    _same_dim(a, b)
    if a.shape[0] != model.d:
        raise DimensionMismatchError(f"templates have dimension {a.shape[0]}, model expects {model.d}")

    running = np.zeros(1)
    for k, (start, stop) in enumerate(model.plan.stage_slices()):
        running = accumulate(running, (a[start:stop] * b[start:stop]).reshape(1, -1))
        if running[0] < model.thresholds[k]:
            return MatchResult(
                score=float(running[0]),
                stages_passed=k,
                rejected=True,
                rejected_at=k,
                work=stop if count_work else None,
            )
    return MatchResult(
        score=float(running[0]),
        stages_passed=model.sn,
        rejected=False,
        work=model.d if count_work else None,
    )


class GalleryIndex:
    """Gallery templates packed row-wise into one read-only float32 matrix."""

    def __init__(self, templates: Sequence[Template]):
        if len(templates) == 0:
            raise ValidationError("gallery is empty")
        dim = templates[0].dim
        for template in templates:
            if template.dim != dim:
                raise DimensionMismatchError(
                    f"gallery template {template.id!r} has dimension {template.dim}, expected {dim}"
                )
        self.ids: Tuple[str, ...] = tuple(t.id for t in templates)
        self.matrix = np.stack([t.features for t in templates]).astype(np.float32, copy=False)
        self.matrix.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


class GalleryScan(NamedTuple):
    scores: np.ndarray
    stages_passed: np.ndarray
    histogram: Optional[np.ndarray]
    work: Optional[int]


def _as_index(gallery: Union[GalleryIndex, Sequence[Template]]) -> GalleryIndex:
    return gallery if isinstance(gallery, GalleryIndex) else GalleryIndex(gallery)


def _row_ranges(count: int, chunk_rows: int) -> List[Tuple[int, int]]:
    chunk_rows = max(1, chunk_rows)
    return [(lo, min(lo + chunk_rows, count)) for lo in range(0, count, chunk_rows)]


def _cascade_rows(matrix, probe, model, lo, hi, scores, passed, count_work):
    """Run the cascade over gallery rows [lo, hi), writing final scores and stage counts in place."""
    histogram = np.zeros(model.sn, dtype=np.int64) if count_work else None
    work = 0
    alive = np.arange(lo, hi)
    running = np.zeros(hi - lo)
    for k, (start, stop) in enumerate(model.plan.stage_slices()):
        # First stage reads a contiguous slab; later stages gather survivors
        block = matrix[lo:hi, start:stop] if k == 0 else matrix[alive, start:stop]
        products = block.astype(np.float64) * probe[start:stop]
        if count_work:
            work += products.size
        running = accumulate(running, products)
        keep = running >= model.thresholds[k]
        if not keep.all():
            dropped = alive[~keep]
            scores[dropped] = running[~keep]
            passed[dropped] = k
            if count_work:
                histogram[k] += dropped.size
            alive = alive[keep]
            running = running[keep]
            if alive.size == 0:
                break
    scores[alive] = running
    passed[alive] = model.sn
    return histogram, work


def match_gallery(
    probe: VectorLike,
    gallery: Union[GalleryIndex, Sequence[Template]],
    model: CascadeModel,
    count_work: bool = False,
    workers: int = 1,
    chunk_rows: int = BENCH_CHUNK_ROWS,
) -> GalleryScan:
    """Cascade-match one probe against every gallery row.

    With count_work the scan also returns the per-stage rejection histogram and
    the number of multiply-adds performed; timed callers leave it off.
    """
    index = _as_index(gallery)
    vector = _vector(probe)
    if vector.shape[0] != model.d or index.dim != model.d:
        raise DimensionMismatchError(
            f"probe ({vector.shape[0]}) and gallery ({index.dim}) must match model dimension {model.d}"
        )

    count = len(index)
    scores = np.empty(count)
    passed = np.empty(count, dtype=np.int64)
    ranges = _row_ranges(count, chunk_rows)

    def run(bounds):
        return _cascade_rows(index.matrix, vector, model, bounds[0], bounds[1], scores, passed, count_work)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(run, ranges))
    else:
        partials = [run(bounds) for bounds in ranges]

    if not count_work:
        return GalleryScan(scores, passed, None, None)
    histogram = np.sum([h for h, _ in partials], axis=0)
    return GalleryScan(scores, passed, histogram, int(sum(w for _, w in partials)))


def linear_scores(
    probe: VectorLike,
    gallery: Union[GalleryIndex, Sequence[Template]],
    workers: int = 1,
    chunk_rows: int = BENCH_CHUNK_ROWS,
) -> np.ndarray:
    """Full cosine of the probe against every gallery row, same accumulation order as the cascade."""
    index = _as_index(gallery)
    vector = _vector(probe)
    if vector.shape[0] != index.dim:
        raise DimensionMismatchError(f"probe ({vector.shape[0]}) and gallery ({index.dim}) dimensions differ")

    scores = np.empty(len(index))

    def run(bounds):
        lo, hi = bounds
        products = index.matrix[lo:hi].astype(np.float64) * vector
        scores[lo:hi] = accumulate(np.zeros(hi - lo), products)

    ranges = _row_ranges(len(index), chunk_rows)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, ranges))
    else:
        for bounds in ranges:
            run(bounds)
    return scores


def _top_by_score(rows: np.ndarray, values: np.ndarray, k: int) -> np.ndarray:
    """The k rows with the highest values, ties broken by ascending row."""
    if rows.size > k:
        # kth largest value; keep every row tied with it so the tie rule decides
        cutoff = -np.partition(-values, k - 1)[k - 1]
        mask = values >= cutoff
        rows, values = rows[mask], values[mask]
    order = np.lexsort((rows, -values))
    return rows[order[:k]]


def rank_rows(scores: np.ndarray, stages_passed: Optional[np.ndarray], top_k: int) -> np.ndarray:
    """Row indices ranked by (stages_passed, score) descending, then gallery order."""
    if top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {top_k}")
    if stages_passed is None:
        return _top_by_score(np.arange(scores.size), scores, top_k)

    chosen = []
    remaining = min(top_k, scores.size)
    for level in range(int(stages_passed.max()), -1, -1):
        rows = np.flatnonzero(stages_passed == level)
        if rows.size == 0:
            continue
        picked = _top_by_score(rows, scores[rows], remaining)
        chosen.append(picked)
        remaining -= picked.size
        if remaining == 0:
            break
    return np.concatenate(chosen)


def identify(
    probe: Template,
    gallery: Union[GalleryIndex, Sequence[Template]],
    model: CascadeModel,
    top_k: int,
    workers: int = 1,
) -> List[Tuple[str, MatchResult]]:
    """Cascade-match the probe against the gallery and return the top_k ranked matches."""
    index = _as_index(gallery)
    scan = match_gallery(probe, index, model, workers=workers)
    ranked = rank_rows(scan.scores, scan.stages_passed, top_k)

    results = []
    for row in ranked:
        stages = int(scan.stages_passed[row])
        rejected = stages < model.sn
        results.append((
            index.ids[row],
            MatchResult(
                score=float(scan.scores[row]),
                stages_passed=stages,
                rejected=rejected,
                rejected_at=stages if rejected else None,
            ),
        ))
    return results


def linear_scan(
    probe: Template,
    gallery: Union[GalleryIndex, Sequence[Template]],
    top_k: int,
    workers: int = 1,
) -> List[Tuple[str, float]]:
    """Exhaustive full-cosine identification; ties broken by gallery order."""
    index = _as_index(gallery)
    scores = linear_scores(probe, index, workers=workers)
    return [(index.ids[row], float(scores[row])) for row in rank_rows(scores, None, top_k)]
