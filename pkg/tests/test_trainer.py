import numpy as np
import pytest

from cascade.matcher import build_pair_sample, cascade_match
from cascade.plan import default_target_vrs, make_stage_plan
from cascade.trainer import learn_thresholds, stage_profile
from schemas.models import PairSample
from utils.errors import DimensionMismatchError, ThresholdLearningError


def _unit_rows(values):
    return values / np.linalg.norm(values, axis=1, keepdims=True)


def _correlated_rows(rng, n, dim, noise):
    x = _unit_rows(rng.standard_normal((n, dim)))
    y = _unit_rows(x + noise * rng.standard_normal((n, dim)))
    return x, y


def _pairs(x, y, genuine):
    return [build_pair_sample(a, b, genuine) for a, b in zip(x, y)]


def test_learned_thresholds_meet_every_target_vr(rng):
    n = 10_000
    x, y = _correlated_rows(rng, n, 428, 0.6)
    positives = _pairs(x, y, True)
    plan = make_stage_plan(428, 7)
    target_vrs = default_target_vrs(7, 0.999)

    model = learn_thresholds(positives, plan, target_vrs)
    assert model.train_count == n
    for stats, vr in zip(stage_profile(model, positives), target_vrs):
        assert vr - 1e-12 <= stats.genuine_pass_rate <= vr + 1 / n + 1e-12


def test_three_pair_example_picks_order_statistics():
    positives = [
        PairSample(values=[0.5, 0.1], is_genuine=True),
        PairSample(values=[0.2, 0.3], is_genuine=True),
        PairSample(values=[-0.1, 0.4], is_genuine=True),
    ]
    model = learn_thresholds(positives, make_stage_plan(2, 2), [2 / 3, 1.0])
    assert model.thresholds == (0.2, -0.1 + 0.4)


def test_exact_product_vr_is_not_rounded_up(rng):
    # 0.999 * 1000 is 999.0000000000001 in floating point
    x, y = _correlated_rows(rng, 1000, 32, 0.5)
    positives = _pairs(x, y, True)
    model = learn_thresholds(positives, make_stage_plan(32, 1), [0.999])
    assert stage_profile(model, positives)[0].genuine_pass_rate == 0.999


def test_full_vr_rejects_no_training_positive(rng):
    x, y = _correlated_rows(rng, 500, 64, 0.8)
    positives = _pairs(x, y, True)
    model = learn_thresholds(positives, make_stage_plan(64, 4), default_target_vrs(4, 1.0))
    assert all(not cascade_match(a, b, model).rejected for a, b in zip(x, y))
    assert stage_profile(model, positives)[-1].genuine_survival == 1.0


def test_impostor_survival_shrinks_stage_by_stage(rng):
    x, y = _correlated_rows(rng, 2000, 64, 0.4)
    positives = _pairs(x, y, True)
    a, b = _unit_rows(rng.standard_normal((2000, 64))), _unit_rows(rng.standard_normal((2000, 64)))
    negatives = _pairs(a, b, False)
    model = learn_thresholds(positives, make_stage_plan(64, 4), default_target_vrs(4, 0.99))

    profile = stage_profile(model, positives, negatives)
    survival = [stats.impostor_survival for stats in profile]
    assert all(later <= earlier for earlier, later in zip(survival, survival[1:]))
    assert survival[-1] < 0.5
    assert [stats.boundary for stats in profile] == [8, 16, 32, 64]


def test_learning_needs_genuine_pairs():
    plan = make_stage_plan(2, 1)
    with pytest.raises(ThresholdLearningError):
        learn_thresholds([], plan, [0.99])
    with pytest.raises(ThresholdLearningError):
        learn_thresholds([PairSample(values=[0.1, 0.1], is_genuine=False)], plan, [0.99])


def test_learning_checks_vr_count_and_range():
    positives = [PairSample(values=[0.1, 0.1], is_genuine=True)]
    with pytest.raises(ThresholdLearningError):
        learn_thresholds(positives, make_stage_plan(2, 2), [0.99])
    with pytest.raises(ThresholdLearningError):
        learn_thresholds(positives, make_stage_plan(2, 1), [1.5])


def test_learning_checks_pair_dimension():
    positives = [PairSample(values=[0.1, 0.1, 0.1], is_genuine=True)]
    with pytest.raises(DimensionMismatchError):
        learn_thresholds(positives, make_stage_plan(2, 1), [0.99])


def test_single_stage_order_statistic():
    positives = [PairSample(values=[s], is_genuine=True) for s in (0.9, 0.8, 0.7)]
    model = learn_thresholds(positives, make_stage_plan(1, 1), [0.6])
    assert model.thresholds == (0.8,)
