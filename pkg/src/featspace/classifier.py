"""Linear SVM training and the detector pipeline variants.

Training minimizes L2-regularized hinge loss with a deterministic,
epoch-shuffled subgradient descent and returns the averaged iterate. The
weight-bounded variant projects onto the infinity-norm box after every
update, so its bound holds exactly on the returned model. Class imbalance is
handled by inverse-frequency loss weights (configurable).

A pipeline wraps one trained model together with its input mapping: the raw
space, a feature mask, or the cluster-activation transform. Scores are
affine in the mapped space; a sample is classified malware when the score is
non-negative (the zero tie breaks conservatively toward malware).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset
from .errors import ConfigurationError, DataError, TrainingError
from .transform import RobustTransform

__all__ = [
    "TrainConfig",
    "LinearModel",
    "Pipeline",
    "train_linear_svm",
    "train_sec_svm",
    "train_feature_select",
    "hinge_objective",
    "save_pipeline",
    "load_pipeline",
]

PIPELINE_FORMAT_VERSION = 1
VARIANTS = ("original", "sec_svm", "feature_select", "robust")
SCHEDULES = ("inv_t", "inv_sqrt")
CLASS_WEIGHTS = ("balanced", "none")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by every linear variant."""

    C: float = 1.0
    epochs: int = 30
    schedule: str = "inv_t"
    class_weight: str = "balanced"

    def __post_init__(self):
        if self.C <= 0:
            raise ConfigurationError(f"C must be positive, got {self.C}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(
                f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}"
            )
        if self.class_weight not in CLASS_WEIGHTS:
            raise ConfigurationError(
                f"unknown class_weight {self.class_weight!r}; expected one of {CLASS_WEIGHTS}"
            )

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "epochs": self.epochs,
            "schedule": self.schedule,
            "class_weight": self.class_weight,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(
                f"unknown training field(s): {', '.join(sorted(unknown))}"
            )
        return cls(**data)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Linear discriminant: score(x) = <weights, x> + bias."""

    weights: np.ndarray
    bias: float
    config: TrainConfig
    seed: int
    box_bound: float | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if not np.isfinite(w).all() or not math.isfinite(self.bias):
            raise TrainingError("model parameters must be finite")
        if self.box_bound is not None and np.abs(w).max(initial=0.0) > self.box_bound:
            raise TrainingError("weights exceed the declared box bound")

    @property
    def dim(self) -> int:
        return self.weights.size


def _class_weights(y: np.ndarray, mode: str) -> np.ndarray:
    n = y.size
    counts = np.bincount(y, minlength=2)
    if mode == "balanced":
        per_class = n / (2.0 * counts)
    else:
        per_class = np.ones(2)
    return per_class[y]


def _step_size(config: TrainConfig, t: int) -> float:
    if config.schedule == "inv_t":
        return 1.0 / (config.C * t)
    return 1.0 / (config.C * math.sqrt(t))


def _train_matrix(
    X: np.ndarray,
    y01: np.ndarray,
    config: TrainConfig,
    seed: int,
    box_bound: float | None,
) -> tuple[np.ndarray, float]:
    n, dim = X.shape
    if n == 0 or len(np.unique(y01)) < 2:
        raise TrainingError("training needs samples from both classes")
    y = (2.0 * y01 - 1.0).astype(np.float64)
    cw = _class_weights(y01.astype(np.int64), config.class_weight)
    lam = 1.0 / config.C

    rng = np.random.default_rng(seed)
    w = np.zeros(dim)
    b = 0.0
    w_sum = np.zeros(dim)
    b_sum = 0.0
    t = 0
    for _ in range(config.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = _step_size(config, t)
            w *= max(0.0, 1.0 - eta * lam)
            xi = X[i]
            if y[i] * (w @ xi + b) < 1.0:
                coef = eta * cw[i] * y[i]
                w += coef * xi
                b += coef
            if box_bound is not None:
                np.clip(w, -box_bound, box_bound, out=w)
            w_sum += w
            b_sum += b
    w_avg = w_sum / t
    b_avg = b_sum / t
    if box_bound is not None:
        np.clip(w_avg, -box_bound, box_bound, out=w_avg)
    return w_avg, float(b_avg)


def hinge_objective(
    weights: np.ndarray, bias: float, X: np.ndarray, y01: np.ndarray, config: TrainConfig
) -> float:
    """Regularized, class-weighted mean hinge loss used by the trainer."""
    y = 2.0 * y01 - 1.0
    cw = _class_weights(np.asarray(y01, dtype=np.int64), config.class_weight)
    margins = y * (X @ weights + bias)
    hinge = np.maximum(0.0, 1.0 - margins)
    reg = 0.5 / config.C * float(weights @ weights)
    return reg + float(np.mean(cw * hinge))


def train_linear_svm(
    ds: Dataset, config: TrainConfig = TrainConfig(), seed: int = 0
) -> LinearModel:
    """Train on the dataset's own space; deterministic per seed."""
    X = ds.to_dense(np.float64)
    w, b = _train_matrix(X, np.asarray(ds.labels, dtype=np.int64), config, seed, None)
    return LinearModel(w, b, config, seed)


def train_sec_svm(
    ds: Dataset, c: float, config: TrainConfig = TrainConfig(), seed: int = 0
) -> LinearModel:
    """Weight-bounded variant: every update is projected onto [-c, c]."""
    if c <= 0:
        raise ConfigurationError(f"box bound must be positive, got {c}")
    X = ds.to_dense(np.float64)
    w, b = _train_matrix(X, np.asarray(ds.labels, dtype=np.int64), config, seed, float(c))
    return LinearModel(w, b, config, seed, box_bound=float(c))


@dataclass(frozen=True, eq=False)
class Pipeline:
    """A detector: optional input mapping plus a linear model.

    Variants: ``original`` and ``sec_svm`` score raw vectors directly,
    ``feature_select`` scores the masked sub-vector, and ``robust`` scores
    the transformed cluster activations.
    """

    variant: str
    model: LinearModel
    transform: RobustTransform | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        if self.variant == "robust":
            if self.transform is None or self.mask is not None:
                raise ConfigurationError("robust pipeline needs a transform and no mask")
            if self.model.dim != self.transform.d_out:
                raise ConfigurationError(
                    f"model dimension {self.model.dim} disagrees with "
                    f"transform output {self.transform.d_out}"
                )
        elif self.variant == "feature_select":
            if self.mask is None or self.transform is not None:
                raise ConfigurationError(
                    "feature_select pipeline needs a mask and no transform"
                )
            mask = np.asarray(self.mask, dtype=np.int64)
            object.__setattr__(self, "mask", mask)
            if self.model.dim != mask.size:
                raise ConfigurationError(
                    f"model dimension {self.model.dim} disagrees with mask size {mask.size}"
                )
        else:
            if self.transform is not None or self.mask is not None:
                raise ConfigurationError(
                    f"{self.variant} pipeline takes neither transform nor mask"
                )

    @property
    def d_raw(self) -> int:
        """Dimensionality of the raw input space this pipeline accepts."""
        if self.variant == "robust":
            return self.transform.d_in
        if self.variant == "feature_select":
            return int(self.mask.max()) + 1 if self.mask.size else 0
        return self.model.dim

    def effective_raw_weights(self, d: int | None = None) -> np.ndarray:
        """Per-raw-feature score contribution; linear variants only."""
        if self.variant == "robust":
            raise ConfigurationError(
                "robust pipeline has no per-feature linear weights"
            )
        if self.variant == "feature_select":
            if d is None:
                raise ConfigurationError("feature_select needs the raw dimensionality")
            eff = np.zeros(d)
            eff[self.mask] = self.model.weights
            return eff
        return self.model.weights

    def score_indices(self, active_indices) -> float:
        active = np.asarray(active_indices, dtype=np.int64)
        if self.variant == "robust":
            sums = self.transform.cluster_sums(active)
            h = self.transform.activations_from_sums(sums).astype(np.float64)
            return float(self.model.weights @ h + self.model.bias)
        if self.variant == "feature_select":
            hits = np.isin(self.mask, active)
            return float(self.model.weights[hits].sum() + self.model.bias)
        if active.size and (active.min() < 0 or active.max() >= self.model.dim):
            raise DataError(f"active index out of range for d={self.model.dim}")
        return float(self.model.weights[active].sum() + self.model.bias)

    def score(self, x) -> float:
        """Score a dense raw-space binary vector."""
        x = np.asarray(x)
        expected = self.d_raw if self.variant != "feature_select" else None
        if expected is not None and x.shape != (expected,):
            raise DataError(f"expected vector of length {expected}, got shape {x.shape}")
        if x.ndim != 1:
            raise DataError(f"expected a vector, got shape {x.shape}")
        return self.score_indices(np.flatnonzero(x))

    def predict(self, x) -> int:
        return 1 if self.score(x) >= 0.0 else 0

    def predict_indices(self, active_indices) -> int:
        return 1 if self.score_indices(active_indices) >= 0.0 else 0

    def score_batch(self, ds: Dataset) -> np.ndarray:
        if self.variant == "robust":
            h = self.transform.apply_batch(ds)
            return h.to_csr() @ self.model.weights + self.model.bias
        if self.variant == "feature_select":
            masked = ds.to_csr()[:, self.mask]
            return masked @ self.model.weights + self.model.bias
        if ds.n_features != self.model.dim:
            raise DataError(
                f"dataset has d={ds.n_features} but model expects {self.model.dim}"
            )
        return ds.to_csr() @ self.model.weights + self.model.bias

    def predict_batch(self, ds: Dataset) -> np.ndarray:
        return (self.score_batch(ds) >= 0.0).astype(np.int8)


def train_feature_select(
    ds: Dataset, k: int, config: TrainConfig = TrainConfig(), seed: int = 0
) -> Pipeline:
    """Keep the k largest-magnitude weights of a full model, then retrain."""
    if not 1 <= k <= ds.n_features:
        raise ConfigurationError(f"k={k} outside valid range 1..{ds.n_features}")
    full = train_linear_svm(ds, config, seed)
    magnitudes = np.abs(full.weights)
    order = np.lexsort((np.arange(ds.n_features), -magnitudes))
    mask = np.sort(order[:k])
    X = ds.to_dense(np.float64)[:, mask]
    w, b = _train_matrix(X, np.asarray(ds.labels, dtype=np.int64), config, seed, None)
    model = LinearModel(w, b, config, seed)
    return Pipeline("feature_select", model, mask=mask)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def pipeline_to_json_dict(pipeline: Pipeline) -> dict:
    payload = {
        "format_version": PIPELINE_FORMAT_VERSION,
        "variant": pipeline.variant,
        "weights": [float(v) for v in pipeline.model.weights],
        "bias": pipeline.model.bias,
        "hyperparams": pipeline.model.config.to_dict(),
        "seed": pipeline.model.seed,
        "box_bound": pipeline.model.box_bound,
        "mask": None if pipeline.mask is None else [int(i) for i in pipeline.mask],
        "transform": None
        if pipeline.transform is None
        else pipeline.transform.to_json_dict(),
    }
    return payload


def pipeline_from_json_dict(data: dict) -> Pipeline:
    version = data.get("format_version")
    if version != PIPELINE_FORMAT_VERSION:
        raise DataError(
            f"unsupported pipeline format version {version!r} "
            f"(expected {PIPELINE_FORMAT_VERSION})"
        )
    try:
        config = TrainConfig.from_dict(data["hyperparams"])
        model = LinearModel(
            np.asarray(data["weights"], dtype=np.float64),
            float(data["bias"]),
            config,
            int(data["seed"]),
            box_bound=None if data["box_bound"] is None else float(data["box_bound"]),
        )
        mask = None if data["mask"] is None else np.asarray(data["mask"], dtype=np.int64)
        transform = (
            None
            if data["transform"] is None
            else RobustTransform.from_json_dict(data["transform"])
        )
        return Pipeline(data["variant"], model, transform=transform, mask=mask)
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"corrupt pipeline payload: {e}") from None


def save_pipeline(pipeline: Pipeline, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(pipeline_to_json_dict(pipeline), sort_keys=True) + "\n")


def load_pipeline(path) -> Pipeline:
    path = Path(path)
    if not path.exists():
        raise DataError(f"pipeline file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt pipeline file {path}: {e.msg}") from None
    return pipeline_from_json_dict(data)
