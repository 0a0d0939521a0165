import pytest

from cascade.plan import default_target_vrs, disabled_model, make_stage_plan, truncate_model
from schemas.models import CascadeModel
from utils.errors import ValidationError


def test_seven_stage_plan_for_428_dimensions():
    plan = make_stage_plan(428, 7)
    assert plan.boundaries == (6, 13, 26, 53, 107, 214, 428)
    assert plan.d == 428
    assert plan.sn == 7


def test_single_stage_plan_is_the_whole_template():
    assert make_stage_plan(8, 1).boundaries == (8,)


def test_stage_slices_cover_every_coordinate_once():
    slices = make_stage_plan(428, 7).stage_slices()
    assert slices[0][0] == 0
    assert slices[-1][1] == 428
    for (_, stop), (start, _) in zip(slices, slices[1:]):
        assert stop == start


@pytest.mark.parametrize("d, sn", [(4, 4), (0, 1), (10, 0)])
def test_invalid_plans_are_rejected(d, sn):
    with pytest.raises(ValidationError):
        make_stage_plan(d, sn)


def test_default_target_vrs_compound_per_stage():
    assert default_target_vrs(3, 0.999) == pytest.approx((0.999, 0.999**2, 0.999**3))
    with pytest.raises(ValidationError):
        default_target_vrs(3, 0.0)


def test_disabled_model_thresholds_sit_below_every_partial_score():
    model = disabled_model(make_stage_plan(428, 7))
    for threshold, boundary in zip(model.thresholds, model.plan.boundaries):
        assert threshold < -boundary
    assert model.target_vrs == (1.0,) * 7
    assert model.train_count == 0


def test_truncate_model_keeps_leading_stages():
    model = CascadeModel(
        plan=make_stage_plan(428, 7),
        thresholds=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7),
        target_vrs=default_target_vrs(7, 0.999),
        train_count=100,
        provenance={"seed": "42"},
    )
    truncated = truncate_model(model, 6)
    assert truncated.plan.boundaries == (6, 13, 26, 53, 107, 214)
    assert truncated.d == 214
    assert truncated.thresholds == model.thresholds[:6]
    assert truncated.target_vrs == model.target_vrs[:6]
    assert truncated.provenance == {"seed": "42", "truncated_from_d": "428"}
    assert truncate_model(model, 7) is model


@pytest.mark.parametrize("keep", [0, 8])
def test_truncate_model_rejects_out_of_range_stage_counts(keep):
    model = disabled_model(make_stage_plan(428, 7))
    with pytest.raises(ValidationError):
        truncate_model(model, keep)
