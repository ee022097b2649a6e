"""The learned mapping from raw binary features to the clustered output space.

Each output feature summarizes one forest cluster: the weighted count of its
active members (weights are the members' path costs) is pushed through a
sigmoid and the output activates only when the sigmoid strictly exceeds a
threshold chosen from (0.5, 1). Because all weights are positive and the
sigmoid is monotone, turning input features on can only turn output features
on, never off; this monotonicity is what makes addition-only evasion
expensive in the output space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset
from .depgraph import (
    DENSE_CAP_DEFAULT,
    TOP_K_DEFAULT,
    FeatureForest,
    build_opf,
    default_num_clusters,
    pairwise_correlation,
    select_primaries,
)
from .errors import ConfigurationError, DataError

__all__ = ["RobustTransform", "fit", "save_transform", "load_transform"]

TRANSFORM_FORMAT_VERSION = 1


def _check_theta(theta: float) -> float:
    theta = float(theta)
    if not 0.5 < theta < 1.0:
        raise ConfigurationError(
            f"theta must lie strictly inside (0.5, 1), got {theta}"
        )
    return theta


@dataclass(frozen=True, eq=False)
class RobustTransform:
    """Cluster-activation transform fitted on a training corpus."""

    forest: FeatureForest
    theta: float
    d_in: int

    def __post_init__(self):
        _check_theta(self.theta)
        if self.forest.d != self.d_in:
            raise ConfigurationError(
                f"forest covers {self.forest.d} features but d_in={self.d_in}"
            )

    @property
    def d_out(self) -> int:
        return self.forest.m

    @property
    def activation_mass(self) -> float:
        """Weighted mass a cluster sum must strictly exceed to activate."""
        return float(np.log(self.theta / (1.0 - self.theta)))

    def cluster_sums(self, active_indices) -> np.ndarray:
        """Per-cluster weighted sums for one sample's active indices."""
        active = np.asarray(active_indices, dtype=np.int64)
        if active.size and (active.min() < 0 or active.max() >= self.d_in):
            raise DataError(f"active index out of range for d_in={self.d_in}")
        s = np.zeros(self.d_out)
        if active.size:
            np.add.at(s, self.forest.cluster_of[active], self.forest.path_cost[active])
        return s

    def activations_from_sums(self, sums: np.ndarray) -> np.ndarray:
        sigma = 1.0 / (1.0 + np.exp(-sums))
        return (sigma > self.theta).astype(np.uint8)

    def apply(self, x) -> np.ndarray:
        """Transform one dense binary vector of length d_in."""
        x = np.asarray(x)
        if x.shape != (self.d_in,):
            raise DataError(f"expected vector of length {self.d_in}, got shape {x.shape}")
        return self.activations_from_sums(self.cluster_sums(np.flatnonzero(x)))

    def apply_indices(self, active_indices) -> np.ndarray:
        """Transform a sparse row; returns the active output indices."""
        h = self.activations_from_sums(self.cluster_sums(active_indices))
        return np.flatnonzero(h).astype(np.int32)

    def apply_batch(self, ds: Dataset) -> Dataset:
        """Row-wise transform of a whole dataset; labels carry through."""
        if ds.n_features != self.d_in:
            raise DataError(
                f"dataset has d={ds.n_features} but transform expects {self.d_in}"
            )
        rows = tuple(self.apply_indices(row) for row in ds.rows)
        return Dataset(self.d_out, rows, ds.labels)

    def to_json_dict(self) -> dict:
        payload = self.forest.to_json_dict()
        payload["theta"] = self.theta
        payload["d_in"] = self.d_in
        payload["format_version"] = TRANSFORM_FORMAT_VERSION
        return payload

    @classmethod
    def from_json_dict(cls, data: dict) -> "RobustTransform":
        version = data.get("format_version")
        if version != TRANSFORM_FORMAT_VERSION:
            raise DataError(
                f"unsupported transform format version {version!r} "
                f"(expected {TRANSFORM_FORMAT_VERSION})"
            )
        try:
            theta = float(data["theta"])
            d_in = int(data["d_in"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"corrupt transform payload: {e}") from None
        forest = FeatureForest.from_json_dict(data)
        return cls(forest, theta, d_in)


def fit(
    train: Dataset,
    m: int | None = None,
    theta: float = 0.8,
    *,
    dense_cap: int = DENSE_CAP_DEFAULT,
    top_k: int = TOP_K_DEFAULT,
) -> RobustTransform:
    """Fit the transform on training data only.

    Composes pairwise correlation, prototype selection and forest
    construction; deterministic given the dataset.
    """
    theta = _check_theta(theta)
    if train.n_samples == 0:
        raise DataError("cannot fit a transform on an empty dataset")
    if m is None:
        m = default_num_clusters(train.n_features)
    corr = pairwise_correlation(train, dense_cap=dense_cap, top_k=top_k)
    primaries = select_primaries(corr, m)
    forest = build_opf(corr, primaries)
    return RobustTransform(forest, theta, train.n_features)


def save_transform(transform: RobustTransform, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(transform.to_json_dict(), sort_keys=True) + "\n")


def load_transform(path) -> RobustTransform:
    path = Path(path)
    if not path.exists():
        raise DataError(f"transform file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt transform file {path}: {e.msg}") from None
    if not isinstance(data, dict):
        raise DataError(f"corrupt transform file {path}: expected a JSON object")
    return RobustTransform.from_json_dict(data)
