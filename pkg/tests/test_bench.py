import pytest

from bench.harness import gallery_scaling, run_benchmark, truncation_curve, write_report
from cascade.matcher import GalleryIndex, identify, linear_scan
from cascade.plan import default_target_vrs, disabled_model, make_stage_plan
from cascade.trainer import learn_thresholds
from lda.projection import fit_lda
from schemas.models import SynthConfig, Template
from store.model_store import read_key_values
from synth.generator import generate, make_distractors, mine_genuine_pairs, split_gallery_probe
from utils.errors import DimensionMismatchError, ProvenanceError, ValidationError


def _linear_rank1(gallery, probes):
    return sum(linear_scan(p, gallery, 1)[0][0] == p.id for p in probes) / len(probes)


def test_disabled_model_reproduces_linear_scan(pipeline):
    gallery = pipeline.gallery + pipeline.distractors
    model = disabled_model(pipeline.model.plan)
    report = run_benchmark(gallery, pipeline.probes, model, repeats=1)

    assert report.rank1_cascade == report.rank1_linear
    assert report.rank1_disagreements == 0
    assert report.ranking_agreement == 1.0
    assert report.stage_rejection_histogram == (0, 0, 0, 0)
    assert report.survivors == len(pipeline.probes) * len(gallery)
    assert report.work_total == report.survivors * model.d
    assert report.work_reconciled


def test_learned_model_accounting(pipeline):
    gallery = pipeline.gallery + pipeline.distractors
    report = run_benchmark(gallery, pipeline.probes, pipeline.model, repeats=2, seed=13, config={"k": 1})

    comparisons = len(pipeline.probes) * len(gallery)
    assert sum(report.stage_rejection_histogram) + report.survivors == comparisons
    assert report.work_reconciled
    assert report.work_total < comparisons * pipeline.model.d
    assert report.rank1_linear == pytest.approx(_linear_rank1(gallery, pipeline.probes))
    assert report.speedup == pytest.approx(report.total_time_linear / report.total_time_cascade)
    assert report.gallery_size == len(gallery)
    assert report.seed == 13
    assert len(report.config_digest) == 16
    assert report.parallel_queries_per_second is None


def test_parallel_mode_reports_throughput_separately(pipeline):
    report = run_benchmark(pipeline.gallery, pipeline.probes, pipeline.model, repeats=1, workers=2)
    assert report.workers == 2
    assert report.parallel_queries_per_second > 0


def test_benchmark_input_checks(pipeline):
    with pytest.raises(ValidationError):
        run_benchmark(pipeline.gallery, [], pipeline.model, repeats=1)
    with pytest.raises(ValidationError):
        run_benchmark(pipeline.gallery, pipeline.probes, pipeline.model, repeats=0)
    with pytest.raises(DimensionMismatchError):
        run_benchmark(pipeline.gallery, pipeline.probes, disabled_model(make_stage_plan(16, 2)), repeats=1)


@pytest.mark.parametrize("renormalize", [True, False])
def test_truncation_curve_ends_at_full_feature_rank1(pipeline, renormalize):
    curve = truncation_curve(pipeline.gallery, pipeline.probes, pipeline.model, renormalize=renormalize)
    assert [p.stages_kept for p in curve] == [1, 2, 3, 4]
    assert [p.d_prime for p in curve] == list(pipeline.model.plan.boundaries)
    assert curve[-1].rank1 == _linear_rank1(pipeline.gallery, pipeline.probes)
    assert all(0.0 <= p.rank1 <= 1.0 for p in curve)


def test_truncation_curve_needs_two_stages(pipeline):
    with pytest.raises(ValidationError):
        truncation_curve(pipeline.gallery, pipeline.probes, disabled_model(make_stage_plan(32, 1)))


def test_gallery_scaling_never_improves_with_more_distractors(pipeline):
    points = gallery_scaling(pipeline.gallery, pipeline.probes, pipeline.distractors, [0, 100, 300])
    assert [p.gallery_size for p in points] == [60, 160, 360]
    assert points[0].rank1 == _linear_rank1(pipeline.gallery, pipeline.probes)
    assert points[0].rank1 >= points[1].rank1 >= points[2].rank1

    cascaded = gallery_scaling(pipeline.gallery, pipeline.probes, pipeline.distractors, [0, 300], pipeline.model)
    assert cascaded[0].rank1 >= cascaded[1].rank1


def test_gallery_scaling_rejects_colliding_ids(pipeline):
    probe = pipeline.probes[0]
    colliding = [Template(id=probe.id, features=pipeline.distractors[0].features)]
    with pytest.raises(ProvenanceError):
        gallery_scaling(pipeline.gallery, pipeline.probes, colliding, [0, 1])
    with pytest.raises(ValidationError):
        gallery_scaling(pipeline.gallery, pipeline.probes, pipeline.distractors, [301])


def test_report_files(tmp_path, pipeline):
    report = run_benchmark(pipeline.gallery, pipeline.probes, pipeline.model, repeats=1, seed=3)
    curve = truncation_curve(pipeline.gallery, pipeline.probes, pipeline.model)
    scaling = gallery_scaling(pipeline.gallery, pipeline.probes, pipeline.distractors, [0, 300])
    text_path, table_path = write_report(report, tmp_path, curve=curve, scaling=scaling, provenance={"seed": 3})

    fields = read_key_values(text_path)
    assert float(fields["speedup"]) == report.speedup
    assert fields["stage_rejection_histogram"] == ",".join(str(c) for c in report.stage_rejection_histogram)
    assert fields["meta.seed"] == "3"

    rows = [line.split("\t") for line in table_path.read_text().splitlines()]
    assert rows[0] == ["metric", "stage", "value"]
    assert len([r for r in rows if r[0] == "stage_rejections"]) == pipeline.model.sn
    assert len([r for r in rows if r[0] == "truncation_rank1"]) == pipeline.model.sn
    assert ["scaling_rank1_at_300", "", str(scaling[1].rank1)] in rows


def test_learned_model_keeps_linear_rank1_on_a_thousand_templates():
    common = dict(dim_raw=128, noise_sigma=0.14, spectrum_decay=0.25)
    train = generate(SynthConfig(num_ids=120, samples_per_id=4, seed=21, id_prefix="train", **common))
    evaluation = generate(SynthConfig(num_ids=200, samples_per_id=2, seed=22, id_prefix="eval", **common))
    calibration = generate(SynthConfig(num_ids=1500, samples_per_id=6, seed=24, id_prefix="calib", **common))
    projection = fit_lda(train, 64)
    gallery, probes = split_gallery_probe(evaluation, projection, seed=21)
    distractor_cfg = SynthConfig(num_ids=2, samples_per_id=2, seed=23, id_prefix="distractor", **common)
    distractors = make_distractors(distractor_cfg, 800, projection)
    plan = make_stage_plan(64, 4)
    model = learn_thresholds(mine_genuine_pairs(calibration, projection, 22_500), plan, default_target_vrs(4, 0.99999))

    index = GalleryIndex(gallery + distractors)
    assert len(index) == 1000
    for probe in probes:
        assert identify(probe, index, model, 1)[0][0] == linear_scan(probe, index, 1)[0][0]
