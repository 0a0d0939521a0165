import logging
import math
from typing import List, Optional, Sequence

import numpy as np

from cascade.matcher import accumulate
from config.settings import LOG_LEVEL, LOG_FORMAT
from schemas.models import CascadeModel, PairSample, StagePlan, StageStats
from utils.errors import DimensionMismatchError, ThresholdLearningError

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger("cascade_trainer")


def _pair_matrix(pairs: Sequence[PairSample], d: int) -> np.ndarray:
    for pair in pairs:
        if pair.dim != d:
            raise DimensionMismatchError(f"pair sample has dimension {pair.dim}, plan expects {d}")
    return np.stack([pair.values for pair in pairs])


def _stage_scores(matrix: np.ndarray, plan: StagePlan):
    """Yield the cumulative score vector at each stage boundary, one pass over the dimensions."""
    running = np.zeros(matrix.shape[0])
    for start, stop in plan.stage_slices():
        running = accumulate(running, matrix[:, start:stop].copy())
        yield running


def _order_rank(vr: float, n: int) -> int:
    """q = ceil(vr * n), guarded against products like 0.999 * 1000 = 999.0000000000001."""
    return min(n, max(1, math.ceil(round(vr * n, 9))))


def learn_thresholds(
    positives: Sequence[PairSample],
    plan: StagePlan,
    target_vrs: Sequence[float],
) -> CascadeModel:
    """Learn the tightest per-stage thresholds that keep target_vrs[k] of the genuine pairs.

    Threshold k is the q-th largest stage-k cumulative score with q = ceil(v[k] * n),
    computed over all positives at every stage (no filtering by earlier stages).
    """
    if len(positives) == 0:
        raise ThresholdLearningError("no positive samples to learn thresholds from")
    if any(not pair.is_genuine for pair in positives):
        raise ThresholdLearningError("threshold learning takes genuine pairs only")
    if len(target_vrs) != plan.sn:
        raise ThresholdLearningError(f"{len(target_vrs)} target VRs for {plan.sn} stages")
    for k, vr in enumerate(target_vrs):
        if not 0.0 < vr <= 1.0:
            raise ThresholdLearningError(f"target VR of stage {k} must be in (0, 1], got {vr}")

    matrix = _pair_matrix(positives, plan.d)
    n = matrix.shape[0]

    thresholds = []
    for k, scores in enumerate(_stage_scores(matrix, plan)):
        q = _order_rank(target_vrs[k], n)
        thresholds.append(float(np.sort(scores)[n - q]))
        logger.debug(f"Stage threshold learned - stage: {k}, boundary: {plan.boundaries[k]}, q: {q}, threshold: {thresholds[-1]!r}")

    logger.info(f"Cascade learned - positives: {n}, stages: {plan.sn}, d: {plan.d}, thresholds: {[round(t, 4) for t in thresholds]}")
    return CascadeModel(
        plan=plan,
        thresholds=tuple(thresholds),
        target_vrs=tuple(float(v) for v in target_vrs),
        train_count=n,
    )


def _survival(matrix: np.ndarray, model: CascadeModel):
    """Per stage: (marginal pass rate, fraction still alive after sequential filtering)."""
    n = matrix.shape[0]
    alive = np.ones(n, dtype=bool)
    for k, scores in enumerate(_stage_scores(matrix, model.plan)):
        passing = scores >= model.thresholds[k]
        alive &= passing
        yield float(passing.mean()), float(alive.sum() / n)


def stage_profile(
    model: CascadeModel,
    positives: Sequence[PairSample],
    negatives: Optional[Sequence[PairSample]] = None,
) -> List[StageStats]:
    """Replay training pairs through the cascade and report what each stage lets through."""
    if len(positives) == 0:
        raise ThresholdLearningError("stage profile needs positive samples")
    genuine = list(_survival(_pair_matrix(positives, model.d), model))
    impostor = list(_survival(_pair_matrix(negatives, model.d), model)) if negatives else None

    profile = []
    for k in range(model.sn):
        profile.append(StageStats(
            stage=k,
            boundary=model.plan.boundaries[k],
            threshold=model.thresholds[k],
            target_vr=model.target_vrs[k],
            genuine_pass_rate=genuine[k][0],
            genuine_survival=genuine[k][1],
            impostor_survival=impostor[k][1] if impostor else None,
        ))
    if impostor:
        logger.info(
            f"Stage profile - genuine survival: {genuine[-1][1]:.4f}, "
            f"impostors past first two stages: {impostor[min(1, model.sn - 1)][1]:.4f}"
        )
    return profile
