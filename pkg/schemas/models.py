from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional, Dict, Tuple
from enum import Enum
import math
import numpy as np

from utils.errors import ValidationError

# Templates are stored as float32; norm is checked in float64
UNIT_NORM_TOL = 1e-6
PAIR_SUM_TOL = 1e-6


def _readonly(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


class OutputFormat(str, Enum):
    TABLE = "table"
    TEXT = "text"


class Template(BaseModel):
    """A unit-length feature vector carrying an identity label."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    id: str
    features: np.ndarray

    @field_validator("features", mode="before")
    @classmethod
    def _unit_features(cls, value):
        features = _readonly(value, np.float32)
        if features.ndim != 1 or features.size < 1:
            raise ValueError("features must be a non-empty vector")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        norm = float(np.linalg.norm(features.astype(np.float64)))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"features must have unit L2 norm, got {norm:.9f}")
        return features

    @property
    def dim(self) -> int:
        return int(self.features.shape[0])

    def __eq__(self, other):
        if not isinstance(other, Template):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.features, other.features)


class StagePlan(BaseModel):
    """Cumulative dimension boundaries of the nested stages, coarse to fine."""
    model_config = ConfigDict(frozen=True)

    boundaries: Tuple[int, ...]

    @field_validator("boundaries")
    @classmethod
    def _strictly_increasing(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if len(value) < 1:
            raise ValueError("a stage plan needs at least one stage")
        if value[0] < 1:
            raise ValueError(f"first boundary must be >= 1, got {value[0]}")
        for previous, current in zip(value, value[1:]):
            if current <= previous:
                raise ValueError(f"boundaries must be strictly increasing, got {list(value)}")
        return value

    @property
    def d(self) -> int:
        return self.boundaries[-1]

    @property
    def sn(self) -> int:
        return len(self.boundaries)

    def stage_slices(self) -> List[Tuple[int, int]]:
        """(start, stop) coordinate range added by each stage."""
        starts = (0,) + self.boundaries[:-1]
        return list(zip(starts, self.boundaries))


class CascadeModel(BaseModel):
    """A stage plan plus the rejection threshold and target VR of every stage."""
    model_config = ConfigDict(frozen=True)

    plan: StagePlan
    thresholds: Tuple[float, ...]
    target_vrs: Tuple[float, ...]
    train_count: int = Field(ge=0)
    provenance: Dict[str, str] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _stage_aligned(self):
        sn = self.plan.sn
        if len(self.thresholds) != sn or len(self.target_vrs) != sn:
            raise ValueError(
                f"thresholds ({len(self.thresholds)}) and target_vrs ({len(self.target_vrs)}) "
                f"must both have one entry per stage ({sn})"
            )
        for k, (threshold, vr) in enumerate(zip(self.thresholds, self.target_vrs)):
            if not math.isfinite(threshold):
                raise ValueError(f"threshold of stage {k} is not finite")
            # Below -m[k] is the disabled-stage sentinel; above m[k] would reject everything
            if threshold > self.plan.boundaries[k]:
                raise ValueError(f"threshold of stage {k} exceeds its prefix bound {self.plan.boundaries[k]}")
            if not 0.0 < vr <= 1.0:
                raise ValueError(f"target VR of stage {k} must be in (0, 1], got {vr}")
        return self

    @property
    def d(self) -> int:
        return self.plan.d

    @property
    def sn(self) -> int:
        return self.plan.sn


class PairSample(BaseModel):
    """Element-wise product of two unit templates; its sum is their cosine."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    values: np.ndarray
    is_genuine: bool

    @field_validator("values", mode="before")
    @classmethod
    def _cosine_bounded(cls, value):
        values = _readonly(value, np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("pair values must be a non-empty vector")
        total = float(values.sum())
        if not -1.0 - PAIR_SUM_TOL <= total <= 1.0 + PAIR_SUM_TOL:
            raise ValueError(f"pair values must sum into [-1, 1], got {total}")
        return values

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


class MatchResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    score: float
    stages_passed: int = Field(ge=0)
    rejected: bool
    rejected_at: Optional[int] = None
    work: Optional[int] = None

    @model_validator(mode="after")
    def _rejection_consistent(self):
        if self.rejected != (self.rejected_at is not None):
            raise ValueError("rejected_at must be set exactly when the match was rejected")
        if self.rejected and self.rejected_at != self.stages_passed:
            raise ValueError("a match rejected at stage k has passed exactly k stages")
        return self


class LabeledDataset(BaseModel):
    """Raw feature rows with identity labels."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    samples: np.ndarray
    labels: Tuple[str, ...]
    seed: Optional[int] = None

    @field_validator("samples", mode="before")
    @classmethod
    def _finite_matrix(cls, value):
        samples = _readonly(value, np.float64)
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise ValueError("samples must be an n x D matrix with D >= 1")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        return samples

    @model_validator(mode="after")
    def _one_label_per_row(self):
        if len(self.labels) != self.samples.shape[0]:
            raise ValueError(f"{len(self.labels)} labels for {self.samples.shape[0]} samples")
        return self

    @property
    def n(self) -> int:
        return int(self.samples.shape[0])

    @property
    def dim_raw(self) -> int:
        return int(self.samples.shape[1])

    def class_indices(self) -> Dict[str, np.ndarray]:
        """Row indices of each class, classes in ascending label order."""
        groups: Dict[str, List[int]] = {}
        for index, label in enumerate(self.labels):
            groups.setdefault(label, []).append(index)
        return {label: np.array(groups[label], dtype=np.int64) for label in sorted(groups)}

    @property
    def class_count(self) -> int:
        return len(set(self.labels))

    def check_trainable(self) -> None:
        """Raise unless every class has two samples and n exceeds the class count."""
        for label, rows in self.class_indices().items():
            if rows.size < 2:
                raise ValidationError(f"class {label!r} has a single sample")
        if self.n <= self.class_count:
            raise ValidationError(f"need more samples ({self.n}) than classes ({self.class_count})")

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.labels == other.labels
            and self.seed == other.seed
            and np.array_equal(self.samples, other.samples)
        )


class LdaProjection(BaseModel):
    """Mean and discriminant basis; output dimensions ordered by discriminability."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    provenance: Dict[str, str] = Field(default_factory=dict)

    @field_validator("mean", "basis", "eigenvalues", mode="before")
    @classmethod
    def _float64(cls, value):
        array = _readonly(value, np.float64)
        if not np.all(np.isfinite(array)):
            raise ValueError("projection parameters must be finite")
        return array

    @model_validator(mode="after")
    def _shapes_and_order(self):
        if self.mean.ndim != 1 or self.basis.ndim != 2 or self.eigenvalues.ndim != 1:
            raise ValueError("mean and eigenvalues must be vectors and basis a matrix")
        if self.basis.shape != (self.mean.shape[0], self.eigenvalues.shape[0]):
            raise ValueError(
                f"basis shape {self.basis.shape} does not match mean {self.mean.shape} "
                f"and eigenvalues {self.eigenvalues.shape}"
            )
        if self.eigenvalues.size < 1:
            raise ValueError("a projection needs at least one output dimension")
        if np.any(np.diff(self.eigenvalues) > 0):
            raise ValueError("eigenvalues must be non-increasing")
        if np.any(self.eigenvalues < -1e-9):
            raise ValueError("eigenvalues must be non-negative")
        return self

    @property
    def dim_raw(self) -> int:
        return int(self.mean.shape[0])

    @property
    def d_out(self) -> int:
        return int(self.eigenvalues.shape[0])

    def __eq__(self, other):
        if not isinstance(other, LdaProjection):
            return NotImplemented
        return (
            np.array_equal(self.mean, other.mean)
            and np.array_equal(self.basis, other.basis)
            and np.array_equal(self.eigenvalues, other.eigenvalues)
            and self.provenance == other.provenance
        )


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_ids: int = Field(ge=2)
    samples_per_id: int = Field(ge=2)
    dim_raw: int = Field(ge=1)
    noise_sigma: float = Field(gt=0)
    seed: int = Field(ge=0, lt=2**64)
    spectrum_decay: float = Field(default=0.25, ge=0)
    id_prefix: str = "id"


class StageStats(BaseModel):
    """Pass rates of one stage over training pairs."""
    model_config = ConfigDict(frozen=True)

    stage: int
    boundary: int
    threshold: float
    target_vr: float
    genuine_pass_rate: float
    genuine_survival: float
    impostor_survival: Optional[float] = None


class CurvePoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    stages_kept: int
    d_prime: int
    rank1: float


class ScalingPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    gallery_size: int
    distractors: int
    rank1: float


class BenchReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    rank1_linear: float
    rank1_cascade: float
    rank1_disagreements: int = Field(ge=0)
    ranking_agreement: float
    total_time_linear: float
    total_time_cascade: float
    time_per_query: float
    time_per_query_linear: float
    speedup: float
    stage_rejection_histogram: Tuple[int, ...]
    survivors: int = Field(ge=0)
    work_total: int = Field(ge=0)
    work_reconciled: bool
    gallery_size: int
    probe_count: int
    d: int
    sn: int
    repeats: int
    workers: int = 1
    parallel_queries_per_second: Optional[float] = None
    seed: Optional[int] = None
    config_digest: str = ""

    @model_validator(mode="after")
    def _accounting(self):
        if len(self.stage_rejection_histogram) != self.sn:
            raise ValueError("histogram needs one bin per stage")
        comparisons = sum(self.stage_rejection_histogram) + self.survivors
        if comparisons != self.probe_count * self.gallery_size:
            raise ValueError(
                f"histogram plus survivors ({comparisons}) must equal probe_count x gallery_size "
                f"({self.probe_count * self.gallery_size})"
            )
        return self
