import argparse
import logging
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import pydantic
from dotenv import dotenv_values

from bench.harness import gallery_scaling, run_benchmark, truncation_curve, write_report
from cascade.matcher import GalleryIndex, identify, truncate_template
from cascade.plan import default_target_vrs, disabled_model, make_stage_plan, truncate_model
from cascade.trainer import learn_thresholds, stage_profile
from config.settings import (
    BENCH_REPEATS,
    BENCH_WORKERS,
    CASCADE_STAGE_COUNT,
    CASCADE_TOP_K,
    CASCADE_VR_BASE,
    LDA_DIM,
    LOG_FORMAT,
    LOG_LEVEL,
    MAX_GENUINE_PAIRS,
    MAX_IMPOSTOR_PAIRS,
    OUT_DIR,
    SYNTH_CALIB_IDS,
    SYNTH_CALIB_SAMPLES_PER_ID,
    SYNTH_DIM_RAW,
    SYNTH_DISTRACTORS,
    SYNTH_EVAL_IDS,
    SYNTH_EVAL_SAMPLES_PER_ID,
    SYNTH_NOISE_SIGMA,
    SYNTH_SAMPLES_PER_ID,
    SYNTH_SEED,
    SYNTH_SPECTRUM_DECAY,
    SYNTH_TRAIN_IDS,
)
from lda.projection import fit_lda
from schemas.models import OutputFormat, SynthConfig, Template
from store.model_store import read_model, read_projection, write_model, write_profile, write_projection, write_provenance
from store.template_store import FORMAT_VERSION, read_dataset, read_templates, write_dataset, write_templates
from synth.generator import generate, make_distractors, mine_genuine_pairs, mine_impostor_pairs, split_gallery_probe
from utils.errors import CascadeMatchError, StorageError, ValidationError
from utils.provenance import config_digest, file_digest

# Configure logging
logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger("cli")

SEED_SPACE = 2**64


def _flag(text: str) -> bool:
    return text.strip().lower() in ("1", "true", "yes", "on")


def _int_list(text: str) -> List[int]:
    return [int(part) for part in str(text).split(",") if part.strip()]


def _config_text(value: Any) -> str:
    """How a config value is echoed into artifacts; a --config file accepts the same text back."""
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return ",".join(str(item) for item in value)
    if isinstance(value, Enum):
        return str(value.value)
    return str(value)


class CliConfig:
    """Effective configuration of one invocation: flags, then the --config file, then settings."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_values: Dict[str, Optional[str]] = {}
        if args.config:
            if not Path(args.config).is_file():
                raise StorageError(f"config file {args.config} does not exist")
            self.file_values = dotenv_values(args.config, interpolate=False)
        self.effective: Dict[str, Any] = {"command": args.command}

        # Shared flags are resolved up front so every digest covers them
        self.seed: int = self.get("seed", int, SYNTH_SEED)
        if not 0 <= self.seed < SEED_SPACE:
            raise ValidationError(f"seed must be in [0, 2^64), got {self.seed}")
        self.out_dir = Path(self.get("out_dir", str, OUT_DIR))
        try:
            self.output_format = OutputFormat(self.get("format", str, OutputFormat.TABLE.value))
        except ValueError as e:
            raise ValidationError("format must be table or text") from e

    def get(self, name: str, cast: Callable[[str], Any], default: Any) -> Any:
        value = getattr(self.args, name, None)
        if value is None and self.file_values.get(name) is not None:
            try:
                value = cast(self.file_values[name])
            except ValueError as e:
                raise ValidationError(f"config value {name}={self.file_values[name]!r} is invalid") from e
        if value is None:
            value = default
        self.effective[name] = value
        return value

    def path(self, name: str, default_name: str) -> Path:
        value = self.get(name, str, None)
        return Path(value) if value else self.out_dir / default_name

    def values(self) -> Dict[str, str]:
        return {key: _config_text(value) for key, value in self.effective.items()}

    def provenance(self, inputs: Optional[Mapping[str, Path]] = None) -> Dict[str, str]:
        """Version, seed, the effective config with its digest, and a digest of every input file.

        Call it after the command has read all of its settings.
        """
        values = self.values()
        fields = {
            "version": str(FORMAT_VERSION),
            "seed": str(self.seed),
            "config_digest": config_digest(values),
        }
        fields.update({f"config.{key}": value for key, value in sorted(values.items())})
        for name, path in sorted((inputs or {}).items()):
            fields[f"input.{name}"] = file_digest(path)
        return fields


def _emit(header: Sequence[str], rows: Sequence[Sequence[Any]], fmt: OutputFormat) -> None:
    if fmt == OutputFormat.TABLE:
        print("\t".join(header))
        for row in rows:
            print("\t".join(str(value) for value in row))
    else:
        for row in rows:
            print(", ".join(f"{name}: {value}" for name, value in zip(header, row)))


def _synth_config(
    cfg: CliConfig,
    num_ids: int,
    samples_per_id: int,
    seed: int,
    prefix: str,
    dim_raw: Optional[int] = None,
) -> SynthConfig:
    try:
        return SynthConfig(
            num_ids=num_ids,
            samples_per_id=samples_per_id,
            dim_raw=dim_raw if dim_raw is not None else cfg.get("dim_raw", int, SYNTH_DIM_RAW),
            noise_sigma=cfg.get("noise_sigma", float, SYNTH_NOISE_SIGMA),
            seed=seed % SEED_SPACE,
            spectrum_decay=cfg.get("spectrum_decay", float, SYNTH_SPECTRUM_DECAY),
            id_prefix=prefix,
        )
    except pydantic.ValidationError as e:
        raise ValidationError(f"invalid synthetic data settings: {e}") from e


def cmd_gen(cfg: CliConfig) -> None:
    seed = cfg.seed
    configs = {
        "train": _synth_config(
            cfg,
            cfg.get("train_ids", int, SYNTH_TRAIN_IDS),
            cfg.get("samples_per_id", int, SYNTH_SAMPLES_PER_ID),
            seed,
            "train",
        ),
        "eval": _synth_config(
            cfg,
            cfg.get("eval_ids", int, SYNTH_EVAL_IDS),
            cfg.get("eval_samples_per_id", int, SYNTH_EVAL_SAMPLES_PER_ID),
            seed + 1,
            "eval",
        ),
        # seed + 2 draws the distractors in train-lda
        "calib": _synth_config(
            cfg,
            cfg.get("calib_ids", int, SYNTH_CALIB_IDS),
            cfg.get("calib_samples_per_id", int, SYNTH_CALIB_SAMPLES_PER_ID),
            seed + 3,
            "calib",
        ),
    }
    provenance = cfg.provenance()

    rows = []
    for name, synth_cfg in configs.items():
        path = cfg.out_dir / f"{name}.cdat"
        data = generate(synth_cfg)
        write_dataset(path, data)
        write_provenance(path, provenance)
        rows.append((name, str(path), data.n, data.class_count, data.dim_raw))
    _emit(["set", "path", "samples", "ids", "dim_raw"], rows, cfg.output_format)


def cmd_train_lda(cfg: CliConfig) -> None:
    seed = cfg.seed
    train_path = cfg.path("train", "train.cdat")
    eval_path = cfg.path("eval", "eval.cdat")
    lda_dim = cfg.get("lda_dim", int, LDA_DIM)
    count = cfg.get("distractor_count", int, SYNTH_DISTRACTORS)
    train = read_dataset(train_path)
    evaluation = read_dataset(eval_path)
    # Distractors live in the raw space of the training data
    distractor_cfg = _synth_config(cfg, 2, 2, seed + 2, "distractor", dim_raw=train.dim_raw)
    provenance = cfg.provenance({"train": train_path, "eval": eval_path})

    projection = fit_lda(train, lda_dim)
    projection = projection.model_copy(update={"provenance": {**projection.provenance, **provenance}})
    projection_path = cfg.out_dir / "projection.cprj"
    write_projection(projection_path, projection)

    gallery, probes = split_gallery_probe(evaluation, projection, seed)
    distractors = make_distractors(distractor_cfg, count, projection)

    rows = [("projection", str(projection_path), projection.d_out)]
    for name, templates in (("gallery", gallery), ("probes", probes), ("distractors", distractors)):
        path = cfg.out_dir / f"{name}.ctpl"
        write_templates(path, templates, dim=projection.d_out)
        write_provenance(path, {**provenance, "input.projection": file_digest(projection_path)})
        rows.append((name, str(path), len(templates)))
    _emit(["artifact", "path", "count"], rows, cfg.output_format)


def cmd_learn(cfg: CliConfig) -> None:
    """Thresholds come from calibration identities the projection never saw."""
    calib_path = cfg.path("calib", "calib.cdat")
    projection_path = cfg.path("projection", "projection.cprj")
    max_pairs = cfg.get("max_pairs", int, MAX_GENUINE_PAIRS)
    max_impostor_pairs = cfg.get("max_impostor_pairs", int, MAX_IMPOSTOR_PAIRS)
    stages = cfg.get("stages", int, CASCADE_STAGE_COUNT)
    vr_base = cfg.get("vr_base", float, CASCADE_VR_BASE)
    verify = cfg.get("verify", _flag, False)
    provenance = cfg.provenance({"calib": calib_path, "projection": projection_path})

    calibration = read_dataset(calib_path)
    projection = read_projection(projection_path)
    positives = mine_genuine_pairs(calibration, projection, max_pairs)
    negatives = mine_impostor_pairs(calibration, projection, max_impostor_pairs, cfg.seed)
    plan = make_stage_plan(projection.d_out, stages)
    model = learn_thresholds(positives, plan, default_target_vrs(plan.sn, vr_base))

    model = model.model_copy(update={"provenance": provenance})
    model_path = cfg.out_dir / "model.ccm"
    write_model(model_path, model)
    profile = stage_profile(model, positives, negatives)
    write_profile(cfg.out_dir / "model.profile.tsv", profile)

    rows = [
        (s.stage, s.boundary, repr(s.threshold), s.target_vr, s.genuine_pass_rate, s.genuine_survival, s.impostor_survival)
        for s in profile
    ]
    _emit(
        ["stage", "boundary", "threshold", "target_vr", "genuine_pass", "genuine_survival", "impostor_survival"],
        rows,
        cfg.output_format,
    )
    if verify:
        rejected = len(positives) - round(profile[-1].genuine_survival * len(positives))
        logger.info(f"Calibration positives replayed - positives: {len(positives)}, rejected: {rejected}")
        print(f"verify: {rejected} of {len(positives)} calibration positives rejected")


def _gallery(cfg: CliConfig) -> List[Template]:
    """Gallery templates, followed by distractors when given."""
    templates = read_templates(cfg.path("gallery", "gallery.ctpl"))
    distractors = cfg.get("distractors", str, None)
    if distractors:
        templates = templates + read_templates(distractors)
    return templates


def cmd_identify(cfg: CliConfig) -> None:
    top_k = cfg.get("top_k", int, CASCADE_TOP_K)
    workers = cfg.get("workers", int, BENCH_WORKERS)
    disabled = cfg.get("disabled", _flag, False)
    model_path = None if disabled else cfg.path("model", "model.ccm")
    gallery = GalleryIndex(_gallery(cfg))
    probes = read_templates(cfg.path("probes", "probes.ctpl"))

    if disabled:
        # One stage is enough when nothing is ever rejected
        model = disabled_model(make_stage_plan(gallery.dim, 1))
    else:
        model = read_model(model_path)

    rows = []
    for probe in probes:
        for rank, (gallery_id, result) in enumerate(identify(probe, gallery, model, top_k, workers=workers), start=1):
            rows.append((probe.id, rank, gallery_id, repr(result.score), result.stages_passed))
    _emit(["probe", "rank", "gallery_id", "score", "stages_passed"], rows, cfg.output_format)


def cmd_bench(cfg: CliConfig) -> None:
    gallery_path = cfg.path("gallery", "gallery.ctpl")
    probes_path = cfg.path("probes", "probes.ctpl")
    distractors_path = cfg.path("distractors", "distractors.ctpl")
    model_path = cfg.path("model", "model.ccm")
    gallery = read_templates(gallery_path)
    probes = read_templates(probes_path)
    distractors = read_templates(distractors_path) if distractors_path.exists() else []
    model = read_model(model_path)
    repeats = cfg.get("repeats", int, BENCH_REPEATS)
    workers = cfg.get("workers", int, BENCH_WORKERS)
    counts = cfg.get("scaling_counts", _int_list, None)
    if counts is None:
        counts = sorted({0, len(distractors) // 10, len(distractors)})

    inputs = {"gallery": gallery_path, "probes": probes_path, "model": model_path}
    if distractors:
        inputs["distractors"] = distractors_path
    provenance = cfg.provenance(inputs)

    full = gallery + distractors
    report = run_benchmark(full, probes, model, repeats, workers=workers, seed=cfg.seed, config=cfg.values())
    curve = truncation_curve(full, probes, model)
    partial = truncation_curve(full, probes, model, renormalize=False)
    scaling = gallery_scaling(gallery, probes, distractors, counts, model)
    write_report(report, cfg.out_dir, curve=curve, partial_curve=partial, scaling=scaling, provenance=provenance)

    rows = [
        ("rank1_linear", report.rank1_linear),
        ("rank1_cascade", report.rank1_cascade),
        ("rank1_disagreements", report.rank1_disagreements),
        ("speedup", f"{report.speedup:.3f}"),
        ("time_per_query", f"{report.time_per_query:.6f}"),
        ("work_reconciled", report.work_reconciled),
    ]
    rows.extend((f"truncation_rank1.k{p.stages_kept}", p.rank1) for p in curve)
    rows.extend((f"scaling_rank1.{p.distractors}", p.rank1) for p in scaling)
    _emit(["metric", "value"], rows, cfg.output_format)


def cmd_truncate(cfg: CliConfig) -> None:
    model_path = cfg.path("model", "model.ccm")
    model = read_model(model_path)
    keep = cfg.get("keep_stages", int, model.sn - 1)
    truncated = truncate_model(model, keep)
    templates = cfg.get("templates", lambda text: text.split(","), []) or []

    inputs = {"model": model_path}
    inputs.update({f"templates.{Path(p).stem}": Path(p) for p in templates})
    provenance = cfg.provenance(inputs)
    # The source model's config entries describe another run
    inherited = {key: value for key, value in truncated.provenance.items() if not key.startswith("config.")}
    truncated = truncated.model_copy(update={"provenance": {**inherited, **provenance}})
    out_model = cfg.out_dir / f"model.k{keep}.ccm"
    write_model(out_model, truncated)

    rows = [("model", str(out_model), truncated.d)]
    for template_path in map(Path, templates):
        cut = [truncate_template(t, truncated.d) for t in read_templates(template_path)]
        out_path = cfg.out_dir / f"{template_path.stem}.k{keep}.ctpl"
        write_templates(out_path, cut, dim=truncated.d)
        write_provenance(out_path, provenance)
        rows.append((template_path.stem, str(out_path), truncated.d))
    _emit(["artifact", "path", "dim"], rows, cfg.output_format)


COMMANDS = {
    "gen": cmd_gen,
    "train-lda": cmd_train_lda,
    "learn": cmd_learn,
    "identify": cmd_identify,
    "bench": cmd_bench,
    "truncate": cmd_truncate,
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, help="seed for every random draw")
    shared.add_argument("--config", help="KEY=value file; keys are flag names with underscores")
    shared.add_argument("--out-dir", dest="out_dir", help="directory for output artifacts")
    shared.add_argument("--format", choices=[f.value for f in OutputFormat], help="stdout format")

    parser = argparse.ArgumentParser(prog="cascade-match", description="Cascaded early-exit template matching")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", parents=[shared], help="generate synthetic train, eval and calibration datasets")
    gen.add_argument("--train-ids", dest="train_ids", type=int)
    gen.add_argument("--eval-ids", dest="eval_ids", type=int)
    gen.add_argument("--samples-per-id", dest="samples_per_id", type=int)
    gen.add_argument("--eval-samples-per-id", dest="eval_samples_per_id", type=int)
    gen.add_argument("--calib-ids", dest="calib_ids", type=int)
    gen.add_argument("--calib-samples-per-id", dest="calib_samples_per_id", type=int)
    gen.add_argument("--dim-raw", dest="dim_raw", type=int)
    gen.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    gen.add_argument("--spectrum-decay", dest="spectrum_decay", type=float)

    train_lda = commands.add_parser("train-lda", parents=[shared], help="fit LDA and emit template files")
    train_lda.add_argument("--train")
    train_lda.add_argument("--eval")
    train_lda.add_argument("--lda-dim", dest="lda_dim", type=int)
    train_lda.add_argument("--distractor-count", dest="distractor_count", type=int, help="number of distractor templates to draw")
    train_lda.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    train_lda.add_argument("--spectrum-decay", dest="spectrum_decay", type=float)

    learn = commands.add_parser("learn", parents=[shared], help="learn cascade thresholds")
    learn.add_argument("--calib", help="held-out dataset the thresholds are learned from")
    learn.add_argument("--projection")
    learn.add_argument("--stages", type=int)
    learn.add_argument("--vr-base", dest="vr_base", type=float)
    learn.add_argument("--max-pairs", dest="max_pairs", type=int)
    learn.add_argument("--max-impostor-pairs", dest="max_impostor_pairs", type=int)
    learn.add_argument("--verify", action="store_true", default=None, help="replay calibration positives")

    ident = commands.add_parser("identify", parents=[shared], help="rank probes against a gallery")
    ident.add_argument("--gallery")
    ident.add_argument("--probes")
    ident.add_argument("--distractors", help="extra gallery template file")
    ident.add_argument("--model")
    ident.add_argument("--disabled", action="store_true", default=None, help="no early exit (linear scan)")
    ident.add_argument("--top-k", dest="top_k", type=int)
    ident.add_argument("--workers", type=int)

    bench = commands.add_parser("bench", parents=[shared], help="benchmark cascade against linear scan")
    bench.add_argument("--gallery")
    bench.add_argument("--probes")
    bench.add_argument("--distractors")
    bench.add_argument("--model")
    bench.add_argument("--repeats", type=int)
    bench.add_argument("--workers", type=int)
    bench.add_argument("--scaling-counts", dest="scaling_counts", type=_int_list, help="comma-separated distractor counts")

    truncate = commands.add_parser("truncate", parents=[shared], help="keep the first stages of a model")
    truncate.add_argument("--model")
    truncate.add_argument("--keep-stages", dest="keep_stages", type=int)
    truncate.add_argument("--templates", nargs="+", help="template files to truncate")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = CliConfig(args)
        logger.info(f"Command started - command: {args.command}")
        COMMANDS[args.command](cfg)
        logger.info(f"Command finished - command: {args.command}, config_digest: {cfg.provenance()['config_digest']}")
        return 0
    except CascadeMatchError as e:
        logger.error(f"{args.command} failed - category: {e.category}, error: {str(e)}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
