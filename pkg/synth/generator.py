import logging
from itertools import combinations, islice
from typing import List, Tuple

import numpy as np

from cascade.matcher import build_pair_sample
from config.settings import LOG_LEVEL, LOG_FORMAT
from lda.projection import project_batch
from schemas.models import LabeledDataset, LdaProjection, PairSample, SynthConfig, Template
from utils.errors import ValidationError

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger("synth")

# Rows drawn per batch when generating distractors
DRAW_BATCH = 8192


def _rng(seed: int) -> np.random.Generator:
    """Philox is counter-based, so a seed gives the same stream on every platform."""
    return np.random.Generator(np.random.Philox(seed))


def _spectrum(cfg: SynthConfig) -> np.ndarray:
    """Standard deviation of each class-mean coordinate: (j + 1)^-decay."""
    return np.arange(1, cfg.dim_raw + 1, dtype=np.float64) ** (-cfg.spectrum_decay)


def _label(prefix: str, index: int, count: int) -> str:
    return f"{prefix}{index:0{max(5, len(str(count - 1)))}d}"


def generate(cfg: SynthConfig) -> LabeledDataset:
    """Gaussian class means plus isotropic within-class noise, fully determined by cfg."""
    rng = _rng(cfg.seed)
    means = rng.standard_normal((cfg.num_ids, cfg.dim_raw)) * _spectrum(cfg)
    noise = rng.standard_normal((cfg.num_ids * cfg.samples_per_id, cfg.dim_raw))
    samples = np.repeat(means, cfg.samples_per_id, axis=0) + cfg.noise_sigma * noise
    labels = tuple(
        _label(cfg.id_prefix, i, cfg.num_ids)
        for i in range(cfg.num_ids)
        for _ in range(cfg.samples_per_id)
    )
    logger.info(
        f"Dataset generated - ids: {cfg.num_ids}, samples_per_id: {cfg.samples_per_id}, "
        f"dim_raw: {cfg.dim_raw}, noise_sigma: {cfg.noise_sigma}, seed: {cfg.seed}"
    )
    return LabeledDataset(samples=samples, labels=labels, seed=cfg.seed)


def project_dataset(data: LabeledDataset, projector: LdaProjection) -> List[Template]:
    """One template per sample, labelled with the sample's identity."""
    rows = project_batch(projector, data.samples)
    return [Template(id=label, features=row) for label, row in zip(data.labels, rows)]


def make_distractors(cfg: SynthConfig, count: int, projector: LdaProjection) -> List[Template]:
    """count single-sample identities drawn from the same class-mean distribution as cfg."""
    if count < 0:
        raise ValidationError(f"distractor count must be >= 0, got {count}")
    rng = _rng(cfg.seed)
    spectrum = _spectrum(cfg)
    templates: List[Template] = []
    for start in range(0, count, DRAW_BATCH):
        size = min(DRAW_BATCH, count - start)
        means = rng.standard_normal((size, cfg.dim_raw)) * spectrum
        samples = means + cfg.noise_sigma * rng.standard_normal((size, cfg.dim_raw))
        for offset, row in enumerate(project_batch(projector, samples)):
            templates.append(Template(id=_label(cfg.id_prefix, start + offset, count), features=row))
    logger.info(f"Distractors generated - count: {count}, prefix: {cfg.id_prefix}, seed: {cfg.seed}")
    return templates


def mine_genuine_pairs(data: LabeledDataset, projector: LdaProjection, max_pairs: int) -> List[PairSample]:
    """All within-class pairs, ascending class then ascending index pair, capped at max_pairs."""
    if max_pairs < 1:
        raise ValidationError(f"max_pairs must be >= 1, got {max_pairs}")
    classes = data.class_indices()
    if not any(rows.size >= 2 for rows in classes.values()):
        raise ValidationError("no class has two samples to pair")

    templates = project_dataset(data, projector)
    candidates = (
        (rows[a], rows[b]) for rows in classes.values() for a, b in combinations(range(rows.size), 2)
    )
    pairs = [build_pair_sample(templates[i], templates[j], True) for i, j in islice(candidates, max_pairs)]
    logger.info(f"Genuine pairs mined - pairs: {len(pairs)}, classes: {len(classes)}, cap: {max_pairs}")
    return pairs


def mine_impostor_pairs(
    data: LabeledDataset,
    projector: LdaProjection,
    max_pairs: int,
    seed: int,
) -> List[PairSample]:
    """Seeded random pairs of samples with different identities."""
    if max_pairs < 1:
        raise ValidationError(f"max_pairs must be >= 1, got {max_pairs}")
    if data.class_count < 2:
        raise ValidationError("impostor pairs need at least two identities")

    templates = project_dataset(data, projector)
    labels = np.array(data.labels)
    rng = _rng(seed)
    pairs: List[PairSample] = []
    while len(pairs) < max_pairs:
        left = rng.integers(0, data.n, size=max_pairs)
        right = rng.integers(0, data.n, size=max_pairs)
        different = labels[left] != labels[right]
        for a, b in zip(left[different], right[different]):
            if len(pairs) == max_pairs:
                break
            pairs.append(build_pair_sample(templates[a], templates[b], False))
    logger.info(f"Impostor pairs mined - pairs: {len(pairs)}, seed: {seed}")
    return pairs


def split_gallery_probe(
    data: LabeledDataset,
    projector: LdaProjection,
    seed: int,
) -> Tuple[List[Template], List[Template]]:
    """One seeded sample per identity goes to the gallery, the rest become probes."""
    classes = data.class_indices()
    for label, rows in classes.items():
        if rows.size < 2:
            raise ValidationError(f"class {label!r} has a single sample and cannot yield a probe")

    templates = project_dataset(data, projector)
    rng = _rng(seed)
    gallery: List[Template] = []
    probes: List[Template] = []
    for rows in classes.values():
        pick = int(rng.integers(0, rows.size))
        gallery.append(templates[rows[pick]])
        probes.extend(templates[row] for i, row in enumerate(rows) if i != pick)
    logger.info(f"Gallery/probe split - gallery: {len(gallery)}, probes: {len(probes)}, seed: {seed}")
    return gallery, probes
