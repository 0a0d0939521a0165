import logging
import statistics
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from cascade.matcher import (
    GalleryIndex,
    accumulate,
    identify,
    linear_scan,
    linear_scores,
    match_gallery,
    rank_rows,
    truncate_template,
)
from config.settings import BENCH_RANKING_DEPTH, LOG_LEVEL, LOG_FORMAT
from schemas.models import BenchReport, CascadeModel, CurvePoint, ScalingPoint, Template
from store.model_store import write_key_values, write_table
from utils.errors import DimensionMismatchError, ProvenanceError, ValidationError
from utils.provenance import config_digest

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger("bench")

Gallery = Union[GalleryIndex, Sequence[Template]]


def _progress(items, desc: str):
    return tqdm(items, desc=desc, unit="probe", disable=not sys.stderr.isatty())


def _index(gallery: Gallery) -> GalleryIndex:
    return gallery if isinstance(gallery, GalleryIndex) else GalleryIndex(gallery)


def _median_seconds(run: Callable[[], None], repeats: int) -> float:
    durations = []
    for _ in range(repeats):
        start = time.perf_counter()
        run()
        durations.append(time.perf_counter() - start)
    return statistics.median(durations)


def _check_inputs(index: GalleryIndex, probes: Sequence[Template], model: Optional[CascadeModel]) -> None:
    if len(probes) == 0:
        raise ValidationError("probe set is empty")
    expected = model.d if model is not None else index.dim
    if index.dim != expected:
        raise DimensionMismatchError(f"gallery dimension {index.dim} does not match model dimension {expected}")
    for probe in probes:
        if probe.dim != expected:
            raise DimensionMismatchError(f"probe {probe.id!r} has dimension {probe.dim}, expected {expected}")


def run_benchmark(
    gallery: Gallery,
    probes: Sequence[Template],
    model: CascadeModel,
    repeats: int,
    workers: int = 1,
    seed: Optional[int] = None,
    config: Optional[Mapping[str, Any]] = None,
    ranking_depth: int = BENCH_RANKING_DEPTH,
) -> BenchReport:
    """Time linear scan against the cascade on identical data and check that rank-1 never changes.

    Timed passes are single-threaded, counter-free and report the median of
    repeats. A separate untimed pass counts work and compares the rankings.
    """
    if repeats < 1:
        raise ValidationError(f"repeats must be >= 1, got {repeats}")
    index = _index(gallery)
    _check_inputs(index, probes, model)
    logger.info(
        f"Benchmark started - gallery: {len(index)}, probes: {len(probes)}, d: {model.d}, "
        f"sn: {model.sn}, repeats: {repeats}"
    )

    histogram = np.zeros(model.sn, dtype=np.int64)
    work_total = 0
    hits_linear = hits_cascade = disagreements = same_ranking = 0
    for probe in _progress(probes, "counted pass"):
        scan = match_gallery(probe, index, model, count_work=True)
        histogram += scan.histogram
        work_total += scan.work
        cascade_rows = rank_rows(scan.scores, scan.stages_passed, ranking_depth)
        linear_rows = rank_rows(linear_scores(probe, index), None, ranking_depth)

        hits_cascade += int(index.ids[cascade_rows[0]] == probe.id)
        hits_linear += int(index.ids[linear_rows[0]] == probe.id)
        disagreements += int(cascade_rows[0] != linear_rows[0])
        same_ranking += np.array_equal(cascade_rows, linear_rows)

    comparisons = len(probes) * len(index)
    survivors = comparisons - int(histogram.sum())
    expected_work = int(np.dot(histogram, model.plan.boundaries)) + survivors * model.d
    if expected_work != work_total:
        logger.warning(f"Work does not reconcile - counted: {work_total}, from histogram: {expected_work}")
    if disagreements:
        logger.warning(f"Rank-1 disagreements between cascade and linear scan - probes: {disagreements}")

    def linear_pass():
        for probe in probes:
            linear_scan(probe, index, 1)

    def cascade_pass():
        for probe in probes:
            identify(probe, index, model, 1)

    # Warm caches before timing
    linear_pass()
    cascade_pass()
    total_linear = _median_seconds(linear_pass, repeats)
    total_cascade = _median_seconds(cascade_pass, repeats)

    parallel_qps = None
    if workers > 1:
        def parallel_pass():
            for probe in probes:
                identify(probe, index, model, 1, workers=workers)

        parallel_qps = len(probes) / _median_seconds(parallel_pass, repeats)

    report = BenchReport(
        rank1_linear=hits_linear / len(probes),
        rank1_cascade=hits_cascade / len(probes),
        rank1_disagreements=disagreements,
        ranking_agreement=same_ranking / len(probes),
        total_time_linear=total_linear,
        total_time_cascade=total_cascade,
        time_per_query=total_cascade / len(probes),
        time_per_query_linear=total_linear / len(probes),
        speedup=total_linear / total_cascade,
        stage_rejection_histogram=tuple(int(c) for c in histogram),
        survivors=survivors,
        work_total=work_total,
        work_reconciled=expected_work == work_total,
        gallery_size=len(index),
        probe_count=len(probes),
        d=model.d,
        sn=model.sn,
        repeats=repeats,
        workers=workers,
        parallel_queries_per_second=parallel_qps,
        seed=seed,
        config_digest=config_digest(dict(config)) if config is not None else "",
    )
    early = int(histogram[:2].sum()) / comparisons
    logger.info(
        f"Benchmark finished - rank1 linear: {report.rank1_linear:.4f}, rank1 cascade: {report.rank1_cascade:.4f}, "
        f"speedup: {report.speedup:.2f}, rejected in first two stages: {early:.4f}"
    )
    return report


def _rank1(index: GalleryIndex, probes: Sequence[Template], score: Callable[[Template], np.ndarray]) -> float:
    hits = 0
    for probe in probes:
        top = rank_rows(score(probe), None, 1)[0]
        hits += index.ids[top] == probe.id
    return hits / len(probes)


def _templates(index: GalleryIndex) -> List[Template]:
    return [Template(id=identity, features=row) for identity, row in zip(index.ids, index.matrix)]


def truncation_curve(
    gallery: Gallery,
    probes: Sequence[Template],
    model: CascadeModel,
    renormalize: bool = True,
) -> List[CurvePoint]:
    """Linear-scan rank-1 when only the first k stages of every template are kept, k = 1..sn.

    With renormalize=False the prefixes are compared as they are, which is the
    score a cascade would have reached after k stages.
    """
    if model.sn < 2:
        raise ValidationError(f"truncation curve needs at least two stages, model has {model.sn}")
    index = _index(gallery)
    _check_inputs(index, probes, model)

    curve = []
    for k in tqdm(range(1, model.sn + 1), desc="truncation", disable=not sys.stderr.isatty()):
        d_prime = model.plan.boundaries[k - 1]
        if renormalize:
            cut = GalleryIndex([truncate_template(t, d_prime) for t in _templates(index)])
            cut_probes = [truncate_template(p, d_prime) for p in probes]
            rank1 = _rank1(cut, cut_probes, lambda p: linear_scores(p, cut))
        else:
            prefix = index.matrix[:, :d_prime]

            def prefix_scores(p: Template) -> np.ndarray:
                products = prefix.astype(np.float64) * p.features[:d_prime].astype(np.float64)
                return accumulate(np.zeros(len(index)), products)

            rank1 = _rank1(index, probes, prefix_scores)
        curve.append(CurvePoint(stages_kept=k, d_prime=d_prime, rank1=rank1))
        logger.debug(f"Truncation point - stages: {k}, d: {d_prime}, rank1: {rank1:.4f}, renormalize: {renormalize}")

    logger.info(f"Truncation curve - renormalize: {renormalize}, rank1: {[round(p.rank1, 4) for p in curve]}")
    return curve


def gallery_scaling(
    gallery: Sequence[Template],
    probes: Sequence[Template],
    distractors: Sequence[Template],
    distractor_counts: Sequence[int],
    model: Optional[CascadeModel] = None,
) -> List[ScalingPoint]:
    """Rank-1 as the gallery grows by the first n distractors, for each n in distractor_counts.

    Identification uses the cascade when a model is given, otherwise a linear scan.
    """
    probe_ids = {p.id for p in probes}
    collisions = sorted(probe_ids.intersection(t.id for t in distractors))
    if collisions:
        raise ProvenanceError(f"{len(collisions)} distractor ids collide with probe ids (first: {collisions[0]!r})")
    for count in distractor_counts:
        if not 0 <= count <= len(distractors):
            raise ValidationError(f"distractor count must be in [0, {len(distractors)}], got {count}")
    _check_inputs(_index(gallery), probes, model)

    points = []
    for count in tqdm(distractor_counts, desc="gallery scaling", disable=not sys.stderr.isatty()):
        index = GalleryIndex(list(gallery) + list(distractors[:count]))
        hits = 0
        for probe in probes:
            if model is not None:
                top_id = identify(probe, index, model, 1)[0][0]
            else:
                top_id = linear_scan(probe, index, 1)[0][0]
            hits += top_id == probe.id
        points.append(ScalingPoint(gallery_size=len(index), distractors=count, rank1=hits / len(probes)))
        logger.info(f"Gallery scaling point - gallery: {len(index)}, distractors: {count}, rank1: {points[-1].rank1:.4f}")
    return points


def _field(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(
    report: BenchReport,
    out_dir: Union[str, Path],
    curve: Sequence[CurvePoint] = (),
    partial_curve: Sequence[CurvePoint] = (),
    scaling: Sequence[ScalingPoint] = (),
    provenance: Optional[Mapping[str, Any]] = None,
) -> Tuple[Path, Path]:
    """Write report.txt (KEY=value) and report.tsv (metric, stage, value) into out_dir."""
    out_dir = Path(out_dir)
    fields: Dict[str, str] = {"version": "1"}
    fields.update({name: _field(value) for name, value in report.model_dump().items()})
    fields.update({f"meta.{key}": _field(value) for key, value in sorted((provenance or {}).items())})
    text_path = out_dir / "report.txt"
    write_key_values(text_path, fields, title="benchmark report")

    rows: List[Tuple[str, Any, Any]] = []
    for name, value in report.model_dump().items():
        if name == "stage_rejection_histogram" or value is None or isinstance(value, str):
            continue
        rows.append((name, "", value))
    rows.extend(("stage_rejections", k, count) for k, count in enumerate(report.stage_rejection_histogram))
    rows.extend(("truncation_rank1", p.stages_kept, p.rank1) for p in curve)
    rows.extend(("truncation_d", p.stages_kept, p.d_prime) for p in curve)
    rows.extend(("partial_cascade_rank1", p.stages_kept, p.rank1) for p in partial_curve)
    rows.extend((f"scaling_rank1_at_{p.distractors}", "", p.rank1) for p in scaling)
    rows.extend((f"scaling_gallery_at_{p.distractors}", "", p.gallery_size) for p in scaling)
    table_path = out_dir / "report.tsv"
    write_table(table_path, ["metric", "stage", "value"], rows)

    logger.info(f"Report written - text: {text_path}, table: {table_path}, rows: {len(rows)}")
    return text_path, table_path
