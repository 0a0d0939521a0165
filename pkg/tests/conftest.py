from types import SimpleNamespace

import numpy as np
import pytest

from cascade.matcher import normalize
from cascade.plan import default_target_vrs, make_stage_plan
from cascade.trainer import learn_thresholds
from lda.projection import fit_lda
from schemas.models import SynthConfig, Template
from synth.generator import generate, make_distractors, mine_genuine_pairs, split_gallery_probe


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(7))


@pytest.fixture
def make_templates(rng):
    """Factory for random unit templates with ids '<prefix><index>'."""
    def factory(count, dim, prefix="t"):
        return [
            Template(id=f"{prefix}{i}", features=normalize(rng.standard_normal(dim)))
            for i in range(count)
        ]
    return factory


@pytest.fixture(scope="session")
def pipeline():
    """A small end-to-end fixture: datasets, projection, templates and a learned model."""
    train = generate(SynthConfig(num_ids=40, samples_per_id=4, dim_raw=64, noise_sigma=0.14, seed=11, id_prefix="train"))
    evaluation = generate(SynthConfig(num_ids=60, samples_per_id=2, dim_raw=64, noise_sigma=0.14, seed=12, id_prefix="eval"))
    projection = fit_lda(train, 32)
    gallery, probes = split_gallery_probe(evaluation, projection, seed=13)
    distractor_cfg = SynthConfig(num_ids=2, samples_per_id=2, dim_raw=64, noise_sigma=0.14, seed=14, id_prefix="distractor")
    distractors = make_distractors(distractor_cfg, 300, projection)
    # Thresholds are learned on identities the projection never saw
    calibration = generate(
        SynthConfig(num_ids=300, samples_per_id=4, dim_raw=64, noise_sigma=0.14, seed=15, id_prefix="calib")
    )
    positives = mine_genuine_pairs(calibration, projection, 10_000)
    plan = make_stage_plan(32, 4)
    model = learn_thresholds(positives, plan, default_target_vrs(plan.sn, 0.999))
    return SimpleNamespace(
        train=train,
        evaluation=evaluation,
        calibration=calibration,
        projection=projection,
        gallery=gallery,
        probes=probes,
        distractors=distractors,
        positives=positives,
        model=model,
    )
