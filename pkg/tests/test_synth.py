import numpy as np
import pydantic
import pytest

from cascade.matcher import GalleryIndex, linear_scan
from lda.projection import fit_lda
from schemas.models import SynthConfig
from synth.generator import (
    generate,
    make_distractors,
    mine_genuine_pairs,
    mine_impostor_pairs,
    project_dataset,
    split_gallery_probe,
)
from utils.errors import ValidationError


def _config(**overrides):
    fields = dict(num_ids=10, samples_per_id=3, dim_raw=16, noise_sigma=0.1, seed=5)
    fields.update(overrides)
    return SynthConfig(**fields)


def test_generation_is_deterministic_per_seed():
    assert generate(_config()) == generate(_config())
    assert generate(_config()) != generate(_config(seed=6))


def test_generated_dataset_shape_and_labels():
    data = generate(_config())
    assert data.samples.shape == (30, 16)
    assert data.seed == 5
    assert data.class_count == 10
    assert data.labels[:3] == ("id00000",) * 3
    assert all(rows.size == 3 for rows in data.class_indices().values())


def test_spectrum_decay_front_loads_class_spread():
    data = generate(_config(num_ids=400, samples_per_id=2, dim_raw=64, spectrum_decay=1.0))
    spread = data.samples.var(axis=0)
    assert spread[0] > 10 * spread[-1]


def test_invalid_config_is_rejected():
    with pytest.raises(pydantic.ValidationError):
        _config(num_ids=1)
    with pytest.raises(pydantic.ValidationError):
        _config(noise_sigma=0.0)


def test_genuine_pairs_cover_every_within_class_pair(pipeline):
    pairs = mine_genuine_pairs(pipeline.train, pipeline.projection, 10_000)
    assert len(pairs) == 40 * 6
    assert all(pair.is_genuine for pair in pairs)
    assert len(mine_genuine_pairs(pipeline.train, pipeline.projection, 25)) == 25


def test_impostor_pairs_are_seeded_and_capped(pipeline):
    first = mine_impostor_pairs(pipeline.train, pipeline.projection, 300, seed=1)
    second = mine_impostor_pairs(pipeline.train, pipeline.projection, 300, seed=1)
    assert len(first) == 300
    assert not any(pair.is_genuine for pair in first)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(first, second))


def test_pair_mining_rejects_bad_caps(pipeline):
    with pytest.raises(ValidationError):
        mine_genuine_pairs(pipeline.train, pipeline.projection, 0)
    with pytest.raises(ValidationError):
        mine_impostor_pairs(pipeline.train, pipeline.projection, 0, seed=1)


def test_split_puts_one_sample_per_identity_in_gallery(pipeline):
    gallery, probes = split_gallery_probe(pipeline.evaluation, pipeline.projection, seed=13)
    gallery_ids = [t.id for t in gallery]
    assert len(gallery) == 60
    assert len(set(gallery_ids)) == 60
    assert len(probes) == pipeline.evaluation.n - 60
    assert {p.id for p in probes} <= set(gallery_ids)
    assert gallery == pipeline.gallery
    assert probes == pipeline.probes


def test_split_needs_two_samples_per_identity(pipeline):
    data = generate(_config(dim_raw=64))
    single = type(data)(samples=data.samples[:4], labels=("a", "a", "b", "c"))
    with pytest.raises(ValidationError):
        split_gallery_probe(single, pipeline.projection, seed=1)


def test_distractors_are_unit_templates_with_distinct_ids(pipeline):
    cfg = _config(dim_raw=64, id_prefix="d")
    distractors = make_distractors(cfg, 50, pipeline.projection)
    assert len({t.id for t in distractors}) == 50
    assert all(t.id.startswith("d") and t.dim == 32 for t in distractors)
    assert make_distractors(cfg, 0, pipeline.projection) == []
    with pytest.raises(ValidationError):
        make_distractors(cfg, -1, pipeline.projection)


def test_project_dataset_keeps_labels(pipeline):
    templates = project_dataset(pipeline.evaluation, pipeline.projection)
    assert [t.id for t in templates] == list(pipeline.evaluation.labels)


def test_zero_spectrum_decay_draws_standard_gaussian_means():
    cfg = _config(spectrum_decay=0.0)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    means = rng.standard_normal((cfg.num_ids, cfg.dim_raw))
    noise = rng.standard_normal((cfg.num_ids * cfg.samples_per_id, cfg.dim_raw))
    expected = np.repeat(means, cfg.samples_per_id, axis=0) + cfg.noise_sigma * noise
    assert np.array_equal(generate(cfg).samples, expected)


def test_identities_separate_after_lda():
    data = generate(SynthConfig(num_ids=100, samples_per_id=4, dim_raw=256, noise_sigma=0.3, seed=42, spectrum_decay=0.0))
    projection = fit_lda(data, 64)
    gallery, probes = split_gallery_probe(data, projection, seed=42)
    index = GalleryIndex(gallery)
    hits = sum(linear_scan(probe, index, 1)[0][0] == probe.id for probe in probes)
    assert hits >= 0.99 * len(probes)
