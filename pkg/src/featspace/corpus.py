"""Binary feature corpora: sparse datasets, file I/O, synthetic generation,
stratified splitting, and harvesting of feature bundles from benign samples.

Samples are rows of active feature indices over a fixed dimensionality ``d``.
Labels are 0 (benign) and 1 (malware). All values here are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DataError

__all__ = [
    "Dataset",
    "SyntheticSpec",
    "GroundTruth",
    "TransformationLibrary",
    "load_dataset",
    "save_dataset",
    "load_feature_names",
    "generate_synthetic",
    "save_ground_truth",
    "load_ground_truth",
    "split",
    "harvest_transformations",
]


def _normalize_row(indices, d: int, *, context: str = "") -> np.ndarray:
    """Sort, deduplicate and bounds-check one row of active indices."""
    arr = np.unique(np.asarray(indices, dtype=np.int64))
    if arr.size:
        if arr[0] < 0 or arr[-1] >= d:
            bad = int(arr[0]) if arr[0] < 0 else int(arr[-1])
            raise DataError(f"{context}feature index {bad} out of range for d={d}")
    return arr.astype(np.int32)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sparse binary sample matrix with labels.

    ``rows[i]`` holds the strictly increasing active feature indices of
    sample ``i``; ``labels[i]`` is 0 for benign and 1 for malware.
    """

    n_features: int
    rows: tuple[np.ndarray, ...]
    labels: np.ndarray
    feature_names: dict[int, str] | None = None

    def __post_init__(self):
        if self.n_features < 0:
            raise DataError(f"n_features must be >= 0, got {self.n_features}")
        labels = np.asarray(self.labels, dtype=np.int8)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "rows", tuple(self.rows))
        if len(self.rows) != labels.size:
            raise DataError(
                f"{len(self.rows)} rows but {labels.size} labels"
            )
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        for i, row in enumerate(self.rows):
            if row.size == 0:
                continue
            if row[0] < 0 or row[-1] >= self.n_features:
                raise DataError(
                    f"sample {i}: feature index out of range for d={self.n_features}"
                )
            if row.size > 1 and not (np.diff(row) > 0).all():
                raise DataError(f"sample {i}: indices not strictly increasing")

    @classmethod
    def from_rows(cls, n_features, rows, labels, feature_names=None) -> "Dataset":
        """Build a dataset, silently sorting and deduplicating each row."""
        norm = tuple(
            _normalize_row(r, n_features, context=f"sample {i}: ")
            for i, r in enumerate(rows)
        )
        return cls(n_features, norm, np.asarray(labels, dtype=np.int8), feature_names)

    @classmethod
    def from_dense(cls, matrix, labels, feature_names=None) -> "Dataset":
        matrix = np.asarray(matrix)
        rows = tuple(np.flatnonzero(r).astype(np.int32) for r in matrix)
        return cls(matrix.shape[1], rows, np.asarray(labels, dtype=np.int8), feature_names)

    @property
    def n_samples(self) -> int:
        return len(self.rows)

    @property
    def d(self) -> int:
        return self.n_features

    def label_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros((self.n_samples, self.n_features), dtype=dtype)
        for i, row in enumerate(self.rows):
            out[i, row] = 1
        return out

    def to_csr(self) -> sp.csr_matrix:
        indptr = np.zeros(self.n_samples + 1, dtype=np.int64)
        for i, row in enumerate(self.rows):
            indptr[i + 1] = indptr[i] + row.size
        indices = (
            np.concatenate(self.rows) if self.rows else np.empty(0, dtype=np.int32)
        )
        data = np.ones(indices.size, dtype=np.float64)
        return sp.csr_matrix(
            (data, indices, indptr), shape=(self.n_samples, self.n_features)
        )

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.n_features,
            tuple(self.rows[i] for i in idx),
            self.labels[idx],
            self.feature_names,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.n_features == other.n_features
            and len(self.rows) == len(other.rows)
            and np.array_equal(self.labels, other.labels)
            and all(np.array_equal(a, b) for a, b in zip(self.rows, other.rows))
        )


# ---------------------------------------------------------------------------
# File formats
#
# sparse-text: header "#d=<n_features>", then one sample per line:
#   "<label> <idx>:1 <idx>:1 ..."
# jsonl: one object per line: {"label": 0|1, "features": [int, ...]};
#   the dimensionality d must be supplied by the caller.
# ---------------------------------------------------------------------------

FORMATS = ("sparse-text", "jsonl")


def load_dataset(
    path,
    fmt: str = "sparse-text",
    d: int | None = None,
    feature_names: dict[int, str] | None = None,
) -> Dataset:
    if fmt not in FORMATS:
        raise ConfigurationError(f"unknown dataset format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    text = path.read_text()
    if fmt == "sparse-text":
        return _parse_sparse_text(text, feature_names)
    if d is None:
        raise ConfigurationError("jsonl format needs an explicit feature count d")
    return _parse_jsonl(text, d, feature_names)


def _parse_sparse_text(text: str, feature_names) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#d="):
        raise DataError("line 1: missing required '#d=<n_features>' header")
    try:
        d = int(lines[0][3:])
    except ValueError:
        raise DataError(f"line 1: malformed header {lines[0]!r}") from None
    rows: list[np.ndarray] = []
    labels: list[int] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tokens = line.split()
        if tokens[0] not in ("0", "1"):
            raise DataError(f"line {lineno}: label must be 0 or 1, got {tokens[0]!r}")
        labels.append(int(tokens[0]))
        indices = []
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep or val_s != "1" or not idx_s.lstrip("-").isdigit():
                raise DataError(f"line {lineno}: malformed entry {tok!r}")
            idx = int(idx_s)
            if idx < 0 or idx >= d:
                raise DataError(
                    f"line {lineno}: feature index {idx} out of range for d={d}"
                )
            indices.append(idx)
        rows.append(np.unique(np.asarray(indices, dtype=np.int32)))
    return Dataset(d, tuple(rows), np.asarray(labels, dtype=np.int8), feature_names)


def _parse_jsonl(text: str, d: int, feature_names) -> Dataset:
    rows: list[np.ndarray] = []
    labels: list[int] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"line {lineno}: invalid JSON ({e.msg})") from None
        if not isinstance(obj, dict) or "label" not in obj or "features" not in obj:
            raise DataError(f"line {lineno}: expected object with 'label' and 'features'")
        if obj["label"] not in (0, 1):
            raise DataError(f"line {lineno}: label must be 0 or 1, got {obj['label']!r}")
        feats = obj["features"]
        if not isinstance(feats, list) or not all(isinstance(v, int) for v in feats):
            raise DataError(f"line {lineno}: 'features' must be a list of integers")
        bad = [v for v in feats if v < 0 or v >= d]
        if bad:
            raise DataError(
                f"line {lineno}: feature index {bad[0]} out of range for d={d}"
            )
        labels.append(int(obj["label"]))
        rows.append(np.unique(np.asarray(feats, dtype=np.int32)))
    return Dataset(d, tuple(rows), np.asarray(labels, dtype=np.int8), feature_names)


def save_dataset(ds: Dataset, path, fmt: str = "sparse-text") -> None:
    if fmt not in FORMATS:
        raise ConfigurationError(f"unknown dataset format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        if fmt == "sparse-text":
            fh.write(f"#d={ds.n_features}\n")
            for row, label in zip(ds.rows, ds.labels):
                entries = " ".join(f"{int(i)}:1" for i in row)
                fh.write(f"{int(label)} {entries}".rstrip() + "\n")
        else:
            for row, label in zip(ds.rows, ds.labels):
                fh.write(
                    json.dumps({"label": int(label), "features": [int(i) for i in row]})
                    + "\n"
                )


def load_feature_names(path) -> dict[int, str]:
    """Parse an optional feature dictionary: one '<idx>\\t<name>' per line."""
    names: dict[int, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        idx_s, sep, name = line.partition("\t")
        if not sep or not idx_s.isdigit():
            raise DataError(f"line {lineno}: expected '<idx>\\t<name>', got {line!r}")
        names[int(idx_s)] = name
    return names


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the planted-structure synthetic generator.

    Malware rows activate malware-behavior bundles (all members of an
    activated bundle appear together, subject to ``member_expression_prob``)
    and benign rows activate the remaining, benign-behavior bundles. Each
    planted biased feature is set independently per row with
    ``bias_benign_prob`` on benign rows and ``bias_malware_prob`` on malware
    rows, and every cell is then flipped independently with
    ``noise_flip_prob``.

    ``member_expression_prob`` keeps the plain all-or-nothing bundle
    semantics at its default of 1.0; values below 1.0 let non-anchor bundle
    members drop out of individual activations, which grades the intra-bundle
    correlations (the anchor, the lowest index of the bundle, always appears
    when the bundle is active).
    """

    n_benign: int
    n_malware: int
    d: int
    n_behaviors: int
    bundle_size_range: tuple[int, int]
    behavior_activation_prob: float
    noise_flip_prob: float
    n_biased_features: int
    bias_benign_prob: float
    bias_malware_prob: float
    seed: int
    n_malware_behaviors: int | None = None
    member_expression_prob: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "bundle_size_range", tuple(int(v) for v in self.bundle_size_range)
        )
        for name in ("n_benign", "n_malware", "d", "n_behaviors", "n_biased_features"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        lo, hi = self.bundle_size_range
        if not (1 <= lo <= hi):
            raise ConfigurationError(
                f"bundle_size_range must satisfy 1 <= min <= max, got ({lo}, {hi})"
            )
        probs = {
            "behavior_activation_prob": self.behavior_activation_prob,
            "noise_flip_prob": self.noise_flip_prob,
            "bias_benign_prob": self.bias_benign_prob,
            "bias_malware_prob": self.bias_malware_prob,
            "member_expression_prob": self.member_expression_prob,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {p}")
        if self.n_biased_features > 0 and not self.bias_benign_prob > self.bias_malware_prob:
            raise ConfigurationError(
                "bias_benign_prob must exceed bias_malware_prob "
                "(planted biased features are benign-prevalent)"
            )
        if self.n_behaviors * hi + self.n_biased_features > self.d:
            raise ConfigurationError(
                f"infeasible spec: {self.n_behaviors} bundles of up to {hi} features "
                f"plus {self.n_biased_features} biased features exceed d={self.d}"
            )
        if self.n_malware_behaviors is not None and not (
            0 <= self.n_malware_behaviors <= self.n_behaviors
        ):
            raise ConfigurationError(
                "n_malware_behaviors must be between 0 and n_behaviors"
            )

    @property
    def resolved_malware_behaviors(self) -> int:
        if self.n_malware_behaviors is None:
            return self.n_behaviors // 2
        return self.n_malware_behaviors

    def to_dict(self) -> dict:
        return {
            "n_benign": self.n_benign,
            "n_malware": self.n_malware,
            "d": self.d,
            "n_behaviors": self.n_behaviors,
            "bundle_size_range": list(self.bundle_size_range),
            "behavior_activation_prob": self.behavior_activation_prob,
            "noise_flip_prob": self.noise_flip_prob,
            "n_biased_features": self.n_biased_features,
            "bias_benign_prob": self.bias_benign_prob,
            "bias_malware_prob": self.bias_malware_prob,
            "seed": self.seed,
            "n_malware_behaviors": self.n_malware_behaviors,
            "member_expression_prob": self.member_expression_prob,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(
                f"unknown synthetic spec field(s): {', '.join(sorted(unknown))}"
            )
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigurationError(f"invalid synthetic spec: {e}") from None


@dataclass(frozen=True)
class GroundTruth:
    """Planted structure retained for oracle checks on generated data."""

    bundles: tuple[tuple[int, ...], ...]
    malware_behavior_ids: tuple[int, ...]
    anchors: tuple[int, ...]
    biased_features: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "bundles": [list(b) for b in self.bundles],
            "malware_behavior_ids": list(self.malware_behavior_ids),
            "anchors": list(self.anchors),
            "biased_features": list(self.biased_features),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls(
            tuple(tuple(int(i) for i in b) for b in data["bundles"]),
            tuple(int(i) for i in data["malware_behavior_ids"]),
            tuple(int(i) for i in data["anchors"]),
            tuple(int(i) for i in data["biased_features"]),
        )


def save_ground_truth(gt: GroundTruth, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(gt.to_dict(), indent=2, sort_keys=True) + "\n")


def load_ground_truth(path) -> GroundTruth:
    try:
        return GroundTruth.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError) as e:
        raise DataError(f"corrupt ground truth file {path}: {e}") from None


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, GroundTruth]:
    """Generate a labeled dataset with planted behaviors and biased features.

    Deterministic for a fixed spec: the RNG call sequence is fixed, so equal
    specs (including the seed) produce identical datasets.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_benign + spec.n_malware
    y = np.concatenate(
        [np.zeros(spec.n_benign, dtype=np.int8), np.ones(spec.n_malware, dtype=np.int8)]
    )

    lo, hi = spec.bundle_size_range
    sizes = rng.integers(lo, hi + 1, size=spec.n_behaviors)
    perm = rng.permutation(spec.d)
    n_mal = spec.resolved_malware_behaviors
    if spec.n_behaviors:
        mal_ids = np.sort(rng.choice(spec.n_behaviors, size=n_mal, replace=False))
    else:
        mal_ids = np.empty(0, dtype=np.int64)
    mal_set = set(int(i) for i in mal_ids)

    bundles: list[np.ndarray] = []
    used = 0
    for size in sizes:
        members = np.sort(perm[used : used + int(size)]).astype(np.int32)
        bundles.append(members)
        used += int(size)
    biased = np.sort(perm[used : used + spec.n_biased_features]).astype(np.int32)

    X = np.zeros((n, spec.d), dtype=bool)
    q = spec.member_expression_prob
    for b, members in enumerate(bundles):
        own_class = 1 if b in mal_set else 0
        p_row = np.where(y == own_class, spec.behavior_activation_prob, 0.0)
        active = rng.random(n) < p_row
        X[active, members[0]] = True
        if members.size > 1:
            expressed = rng.random((n, members.size - 1)) < q
            X[:, members[1:]] |= active[:, None] & expressed
    for f in biased:
        p_row = np.where(y == 0, spec.bias_benign_prob, spec.bias_malware_prob)
        X[:, f] |= rng.random(n) < p_row
    if spec.noise_flip_prob > 0.0:
        X ^= rng.random((n, spec.d)) < spec.noise_flip_prob

    rows = tuple(np.flatnonzero(r).astype(np.int32) for r in X)
    ds = Dataset(spec.d, rows, y)
    gt = GroundTruth(
        bundles=tuple(tuple(int(i) for i in b) for b in bundles),
        malware_behavior_ids=tuple(int(i) for i in mal_ids),
        anchors=tuple(int(b[0]) for b in bundles),
        biased_features=tuple(int(i) for i in biased),
    )
    return ds, gt


# ---------------------------------------------------------------------------
# Splitting and harvesting
# ---------------------------------------------------------------------------


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/test split; deterministic per seed."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(
            f"train_fraction must be strictly between 0 and 1, got {train_fraction}"
        )
    rng = np.random.default_rng(seed)
    train_parts = []
    for label in (0, 1):
        cls = ds.label_indices(label)
        if cls.size < 2:
            raise DataError(
                f"label {label} has {cls.size} sample(s); stratified split needs >= 2"
            )
        n_train = int(round(train_fraction * cls.size))
        order = rng.permutation(cls)
        train_parts.append(order[:n_train])
    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.setdiff1d(np.arange(ds.n_samples), train_idx)
    return ds.subset(train_idx), ds.subset(test_idx)


@dataclass(frozen=True, eq=False)
class TransformationLibrary:
    """Feature bundles harvested from benign samples.

    Each bundle is a sorted index set taken from a single benign donor row;
    ``provenance[i]`` is the donor's sample index in the source dataset.
    """

    n_features: int
    bundles: tuple[np.ndarray, ...]
    provenance: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bundles", tuple(self.bundles))
        object.__setattr__(self, "provenance", tuple(int(i) for i in self.provenance))
        if len(self.bundles) != len(self.provenance):
            raise DataError("bundles and provenance length mismatch")
        for i, b in enumerate(self.bundles):
            if b.size == 0:
                raise DataError(f"bundle {i} is empty")
            if b[0] < 0 or b[-1] >= self.n_features:
                raise DataError(f"bundle {i}: index out of range for d={self.n_features}")

    def __len__(self) -> int:
        return len(self.bundles)


def harvest_transformations(
    ds: Dataset, n_bundles: int, size_range: tuple[int, int], seed: int
) -> TransformationLibrary:
    """Sample feature bundles from benign rows, one donor per bundle."""
    lo, hi = int(size_range[0]), int(size_range[1])
    if not (1 <= lo <= hi):
        raise ConfigurationError(
            f"size_range must satisfy 1 <= min <= max, got ({lo}, {hi})"
        )
    if n_bundles < 0:
        raise ConfigurationError(f"n_bundles must be >= 0, got {n_bundles}")
    if n_bundles == 0:
        return TransformationLibrary(ds.n_features, (), ())
    donors = [
        int(i) for i in ds.label_indices(0) if ds.rows[i].size >= lo
    ]
    if not donors:
        raise DataError(
            f"no benign donor row with at least {lo} active features"
        )
    rng = np.random.default_rng(seed)
    bundles = []
    provenance = []
    for _ in range(n_bundles):
        donor = donors[int(rng.integers(len(donors)))]
        row = ds.rows[donor]
        size = int(rng.integers(lo, min(hi, row.size) + 1))
        members = np.sort(rng.choice(row, size=size, replace=False)).astype(np.int32)
        bundles.append(members)
        provenance.append(donor)
    return TransformationLibrary(ds.n_features, tuple(bundles), tuple(provenance))
