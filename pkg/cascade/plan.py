import logging
from typing import Tuple

from config.settings import LOG_LEVEL, LOG_FORMAT
from schemas.models import CascadeModel, StagePlan
from utils.errors import ValidationError

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger("cascade_plan")


def make_stage_plan(d: int, sn: int) -> StagePlan:
    """Nested stage boundaries m[k] = floor(d / 2^(sn-1-k)); the last stage is the whole template."""
    if sn < 1:
        raise ValidationError(f"stage count must be >= 1, got {sn}")
    if d < 1:
        raise ValidationError(f"dimension must be >= 1, got {d}")

    boundaries = tuple(d >> (sn - 1 - k) for k in range(sn))
    if boundaries[0] < 1:
        raise ValidationError(f"dimension {d} is too small for {sn} stages (first stage would be empty)")
    if any(current <= previous for previous, current in zip(boundaries, boundaries[1:])):
        raise ValidationError(f"stage boundaries {list(boundaries)} are not strictly increasing")

    logger.debug(f"Stage plan built - d: {d}, sn: {sn}, boundaries: {list(boundaries)}")
    return StagePlan(boundaries=boundaries)


def default_target_vrs(sn: int, base: float) -> Tuple[float, ...]:
    """Per-stage verification rates base^(k+1), e.g. 99.9%, 99.8%, ... for base 0.999."""
    if not 0.0 < base <= 1.0:
        raise ValidationError(f"VR base must be in (0, 1], got {base}")
    return tuple(base ** (k + 1) for k in range(sn))


def disabled_model(plan: StagePlan) -> CascadeModel:
    """A model whose thresholds no partial score can fall below: a plain linear scan."""
    return CascadeModel(
        plan=plan,
        thresholds=tuple(-float(m + 1) for m in plan.boundaries),
        target_vrs=tuple(1.0 for _ in plan.boundaries),
        train_count=0,
    )


def truncate_model(model: CascadeModel, keep_stages: int) -> CascadeModel:
    """Keep the first keep_stages stages.

    Templates matched against the result must be cut to the new dimension
    and re-normalized first (see cascade.matcher.truncate_template).
    """
    if not 1 <= keep_stages <= model.sn:
        raise ValidationError(f"keep_stages must be in [1, {model.sn}], got {keep_stages}")
    if keep_stages == model.sn:
        return model

    plan = StagePlan(boundaries=model.plan.boundaries[:keep_stages])
    provenance = dict(model.provenance)
    provenance["truncated_from_d"] = str(model.d)
    logger.info(f"Model truncated - stages: {model.sn} -> {keep_stages}, d: {model.d} -> {plan.d}")
    return CascadeModel(
        plan=plan,
        thresholds=model.thresholds[:keep_stages],
        target_vrs=model.target_vrs[:keep_stages],
        train_count=model.train_count,
        provenance=provenance,
    )
