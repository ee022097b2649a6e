"""Addition-only feature-space evasion attacks.

All attacks perturb a malware sample by turning features on, never off, so
the adversarial vector is always a componentwise superset of the original.
Three attack families are provided:

* a white-box greedy attack that adds the single most benign-pointing raw
  feature per step (linear pipelines only),
* a white-box bundle attack that applies whole harvested feature bundles,
  with an adaptive variant against the cluster-transform pipeline that
  targets the output feature with the most negative weight and picks the
  bundle overlapping its cluster the most,
* a black-box, query-budgeted random search over bundles that only commits
  strictly score-decreasing candidates and respects a relative growth cap on
  the number of active features.

Attacks on distinct samples are independent; per-sample RNG streams derive
from (master seed, sample index), so any execution order gives identical
results.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import Pipeline
from .corpus import Dataset, TransformationLibrary
from .errors import AttackError, ConfigurationError
from .seeds import ATTACK_EVADEDROID, seed_for

__all__ = [
    "AttackResult",
    "AttackTrace",
    "PipelineOracle",
    "greedy_feature_attack",
    "greedy_trace",
    "pk_greedy_transform_attack",
    "bundle_trace",
    "evadedroid_attack",
    "transfer_attack",
    "TransferOutcome",
    "results_to_jsonl",
    "results_from_jsonl",
]


@dataclass(frozen=True, eq=False)
class AttackResult:
    """Outcome of one attack on one sample.

    ``added_features`` is the support of the perturbation; its size is the
    NoF statistic reported downstream. ``success`` holds exactly when the
    target classifies the adversarial vector benign.
    """

    original: np.ndarray
    adversarial: np.ndarray
    added_features: np.ndarray
    queries_used: int
    success: bool
    transformations_applied: int
    sample_index: int | None = None

    def __post_init__(self):
        original = np.asarray(self.original, dtype=np.int64)
        adversarial = np.asarray(self.adversarial, dtype=np.int64)
        added = np.asarray(self.added_features, dtype=np.int64)
        object.__setattr__(self, "original", original)
        object.__setattr__(self, "adversarial", adversarial)
        object.__setattr__(self, "added_features", added)
        if not np.isin(original, adversarial).all():
            raise AttackError("adversarial vector must contain every original feature")
        expected_added = np.setdiff1d(adversarial, original)
        if not np.array_equal(np.sort(added), expected_added):
            raise AttackError("added_features must equal adversarial minus original")
        if self.queries_used < 0:
            raise AttackError("queries_used must be >= 0")

    @property
    def nof(self) -> int:
        return int(self.added_features.size)

    def to_json_dict(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "original": [int(i) for i in self.original],
            "adversarial": [int(i) for i in self.adversarial],
            "added_features": [int(i) for i in self.added_features],
            "queries_used": int(self.queries_used),
            "success": bool(self.success),
            "transformations_applied": int(self.transformations_applied),
        }


@dataclass
class AttackTrace:
    """Committed steps of a white-box attack on one sample.

    Because step selection never looks at the remaining budget, a run with a
    smaller budget is exactly a prefix of a run with a larger one; callers
    can therefore evaluate every budget from a single trace.
    """

    original: np.ndarray
    initial_score: float
    step_added: list[np.ndarray]
    step_scores: list[float]
    sample_index: int | None = None

    @property
    def cumulative_added(self) -> np.ndarray:
        return np.cumsum([a.size for a in self.step_added]).astype(np.int64)

    def success_added_count(self) -> int | None:
        """Features added when the score first went benign, if it did."""
        cum = self.cumulative_added
        for i, score in enumerate(self.step_scores):
            if score < 0.0:
                return int(cum[i])
        return None

    def succeeds_within(self, feature_budget: int) -> bool:
        need = self.success_added_count()
        return need is not None and need <= feature_budget

    def result_at_feature_budget(self, budget: int) -> AttackResult:
        """The attack outcome had it stopped after at most ``budget`` additions."""
        taken: list[np.ndarray] = []
        cum = 0
        success = False
        steps = 0
        for added, score in zip(self.step_added, self.step_scores):
            if cum + added.size > budget:
                break
            taken.append(added)
            cum += added.size
            steps += 1
            if score < 0.0:
                success = True
                break
        added_all = (
            np.sort(np.concatenate(taken)) if taken else np.empty(0, dtype=np.int64)
        )
        adversarial = np.union1d(self.original, added_all)
        return AttackResult(
            self.original,
            adversarial,
            added_all,
            queries_used=0,
            success=success,
            transformations_applied=steps,
            sample_index=self.sample_index,
        )

    def result_at_step_budget(self, max_steps: int) -> AttackResult:
        taken = self.step_added[:max_steps]
        scores = self.step_scores[:max_steps]
        success = any(s < 0.0 for s in scores)
        steps = len(taken)
        if success:  # stop at the first benign step
            first = next(i for i, s in enumerate(scores) if s < 0.0)
            taken = taken[: first + 1]
            steps = first + 1
        added_all = (
            np.sort(np.concatenate(taken)) if taken else np.empty(0, dtype=np.int64)
        )
        adversarial = np.union1d(self.original, added_all)
        return AttackResult(
            self.original,
            adversarial,
            added_all,
            queries_used=0,
            success=success,
            transformations_applied=steps,
            sample_index=self.sample_index,
        )


def _check_malware(score: float) -> None:
    if score < 0.0:
        raise AttackError("sample is already classified benign")


def greedy_trace(
    pipeline: Pipeline,
    x,
    d: int,
    max_added: int | None = None,
    *,
    sample_index: int | None = None,
) -> AttackTrace:
    """Greedy single-feature additions ordered by most negative weight.

    Linear (raw or masked) pipelines only. Features with non-negative
    weights are never added; ties break toward the lower feature index.
    """
    x = np.asarray(x, dtype=np.int64)
    eff = pipeline.effective_raw_weights(d)
    score = pipeline.score_indices(x)
    _check_malware(score)

    candidate_order = np.lexsort((np.arange(d), eff))
    active = np.zeros(d, dtype=bool)
    active[x] = True
    current = x
    step_added: list[np.ndarray] = []
    step_scores: list[float] = []
    limit = d if max_added is None else max_added
    for j in candidate_order:
        if len(step_added) >= limit:
            break
        if eff[j] >= 0.0:
            break
        if active[j]:
            continue
        active[j] = True
        current = np.union1d(current, [j])
        score = pipeline.score_indices(current)
        step_added.append(np.asarray([j], dtype=np.int64))
        step_scores.append(score)
        if score < 0.0:
            break
    return AttackTrace(x, pipeline.score_indices(x), step_added, step_scores, sample_index)


def greedy_feature_attack(
    pipeline: Pipeline,
    x,
    budget: int,
    *,
    sample_index: int | None = None,
) -> AttackResult:
    """Add up to ``budget`` single features; stop early on a benign score."""
    if budget < 0:
        raise ConfigurationError(f"budget must be >= 0, got {budget}")
    d = pipeline.d_raw if pipeline.variant != "feature_select" else None
    if d is None:
        raise ConfigurationError(
            "greedy_feature_attack on a feature_select pipeline needs "
            "greedy_trace with an explicit raw dimensionality"
        )
    trace = greedy_trace(pipeline, x, d, max_added=budget, sample_index=sample_index)
    return trace.result_at_feature_budget(budget)


# ---------------------------------------------------------------------------
# Bundle attacks
# ---------------------------------------------------------------------------


class _BundleScratch:
    """Precomputed per-(pipeline, library) arrays for fast bundle evaluation."""

    def __init__(self, pipeline: Pipeline, library: TransformationLibrary, d: int):
        self.nb = len(library)
        self.bundles = library.bundles
        self.flat_idx = (
            np.concatenate(library.bundles)
            if self.nb
            else np.empty(0, dtype=np.int64)
        ).astype(np.int64)
        self.flat_bundle = np.repeat(
            np.arange(self.nb, dtype=np.int64), [b.size for b in library.bundles]
        )
        self.adaptive = pipeline.variant == "robust"
        if self.adaptive:
            t = pipeline.transform
            self.m = t.d_out
            self.theta = t.theta
            self.flat_cluster = t.forest.cluster_of[self.flat_idx]
            self.flat_weight = t.forest.path_cost[self.flat_idx]
            overlap = np.zeros((self.nb, self.m), dtype=np.int64)
            np.add.at(
                overlap,
                (self.flat_bundle, t.forest.cluster_of[self.flat_idx]),
                1,
            )
            self.overlap = overlap
            self.w_out = pipeline.model.weights
        else:
            self.eff = pipeline.effective_raw_weights(d)

    def linear_deltas(self, active: np.ndarray) -> np.ndarray:
        new = ~active[self.flat_idx]
        return np.bincount(
            self.flat_bundle, weights=self.eff[self.flat_idx] * new, minlength=self.nb
        )

    def robust_deltas(
        self, active: np.ndarray, sums: np.ndarray, acts: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        new = ~active[self.flat_idx]
        delta_flat = np.zeros(self.nb * self.m)
        np.add.at(
            delta_flat,
            self.flat_bundle * self.m + self.flat_cluster,
            self.flat_weight * new,
        )
        sums_new = sums[None, :] + delta_flat.reshape(self.nb, self.m)
        acts_new = (1.0 / (1.0 + np.exp(-sums_new)) > self.theta).astype(np.int8)
        if (acts_new < acts[None, :]).any():
            raise AssertionError("monotone transform flipped an output feature off")
        deltas = ((acts_new - acts[None, :]) * self.w_out).sum(axis=1)
        return deltas, sums_new, acts_new


def bundle_trace(
    pipeline: Pipeline,
    x,
    library: TransformationLibrary,
    *,
    d: int | None = None,
    max_bundles: int | None = None,
    max_added: int | None = None,
    sample_index: int | None = None,
) -> AttackTrace:
    """Whole-bundle greedy attack; adaptive against the robust pipeline.

    Every committed bundle strictly decreases the score. Non-robust
    pipelines take the bundle with the largest decrease. Against the robust
    pipeline the attack first ranks output features still at 0 by most
    negative weight, then among strictly decreasing bundles prefers the one
    overlapping the top-ranked cluster the most (ties: larger decrease, then
    lower bundle index). Budget limits never influence which bundle is
    picked, so shorter budgets are prefixes of longer ones.
    """
    if len(library) == 0:
        raise AttackError("transformation library is empty")
    x = np.asarray(x, dtype=np.int64)
    d = library.n_features if d is None else d
    scratch = _BundleScratch(pipeline, library, d)

    score = pipeline.score_indices(x)
    _check_malware(score)
    initial_score = score

    active = np.zeros(d, dtype=bool)
    active[x] = True
    current = x.copy()
    used = np.zeros(scratch.nb, dtype=bool)
    if scratch.adaptive:
        sums = pipeline.transform.cluster_sums(x)
        acts = pipeline.transform.activations_from_sums(sums).astype(np.int8)
    step_added: list[np.ndarray] = []
    step_scores: list[float] = []
    added_total = 0

    while True:
        if max_bundles is not None and len(step_added) >= max_bundles:
            break
        if max_added is not None and added_total >= max_added:
            break
        if scratch.adaptive:
            deltas, sums_new, acts_new = scratch.robust_deltas(active, sums, acts)
        else:
            deltas = scratch.linear_deltas(active)
        usable = np.flatnonzero(~used & (deltas < 0.0))
        if usable.size == 0:
            break
        if scratch.adaptive:
            silent = np.flatnonzero((acts == 0) & (scratch.w_out < 0.0))
            target = int(silent[np.argmin(scratch.w_out[silent])])
            choice_order = np.lexsort(
                (usable, deltas[usable], -scratch.overlap[usable, target])
            )
        else:
            choice_order = np.lexsort((usable, deltas[usable]))
        pick = int(usable[choice_order[0]])

        bundle = scratch.bundles[pick]
        new_features = bundle[~active[bundle]].astype(np.int64)
        active[bundle] = True
        current = np.union1d(current, bundle)
        used[pick] = True
        if scratch.adaptive:
            sums = sums_new[pick]
            acts = acts_new[pick]
        score = pipeline.score_indices(current)
        step_added.append(np.sort(new_features))
        step_scores.append(score)
        added_total += new_features.size
        if score < 0.0:
            break
    return AttackTrace(x, initial_score, step_added, step_scores, sample_index)


def pk_greedy_transform_attack(
    pipeline: Pipeline,
    x,
    library: TransformationLibrary,
    budget: int,
    *,
    d: int | None = None,
    sample_index: int | None = None,
) -> AttackResult:
    """Apply up to ``budget`` whole bundles; side-effect features ride along."""
    if budget < 0:
        raise ConfigurationError(f"budget must be >= 0, got {budget}")
    trace = bundle_trace(
        pipeline, x, library, d=d, max_bundles=budget, sample_index=sample_index
    )
    return trace.result_at_step_budget(budget)


# ---------------------------------------------------------------------------
# Black-box query-budgeted random search
# ---------------------------------------------------------------------------


class PipelineOracle:
    """Opaque score/label interface over a pipeline.

    Thread-safe for concurrent read-only scoring; the attack, not the
    oracle, accounts for queries.
    """

    def __init__(self, pipeline: Pipeline):
        self._pipeline = pipeline

    def evaluate(self, active_indices) -> tuple[float, int]:
        score = self._pipeline.score_indices(active_indices)
        return score, (1 if score >= 0.0 else 0)


def evadedroid_attack(
    oracle,
    x,
    library: TransformationLibrary,
    Q: int,
    alpha: float,
    n_candidates: int = 5,
    seed: int = 0,
    *,
    sample_index: int | None = None,
) -> AttackResult:
    """Random search over bundles under a query budget and a size cap.

    Each round samples up to ``n_candidates`` uncommitted bundles (never
    more than the remaining query budget), queries the oracle on each
    extension (one query apiece), and commits the best strictly
    score-decreasing candidate. Candidates whose union would grow the active
    set beyond ``(1 + alpha) * |x|`` are skipped before any query is spent.
    Deterministic per seed.
    """
    if len(library) == 0:
        raise AttackError("transformation library is empty")
    if Q < 0:
        raise ConfigurationError(f"query budget must be >= 0, got {Q}")
    if alpha < 0:
        raise ConfigurationError(f"alpha must be >= 0, got {alpha}")
    if n_candidates < 1:
        raise ConfigurationError(f"n_candidates must be >= 1, got {n_candidates}")
    x = np.asarray(x, dtype=np.int64)

    score, label = oracle.evaluate(x)  # precondition check, free of charge
    if label != 1:
        raise AttackError("oracle labels the sample benign already")

    d = library.n_features
    size_cap = (1.0 + alpha) * x.size
    active = np.zeros(d, dtype=bool)
    active[x] = True
    current = x.copy()
    used = np.zeros(len(library), dtype=bool)
    new_counts = np.array([b.size for b in library.bundles], dtype=np.int64)

    rng = np.random.default_rng(seed)
    queries = 0
    commits = 0
    success = False
    while queries < Q:
        # Recount prospective sizes against the cap before spending queries.
        for i, b in enumerate(library.bundles):
            if not used[i]:
                new_counts[i] = int((~active[b]).sum())
        eligible = np.flatnonzero(~used & (active.sum() + new_counts <= size_cap))
        if eligible.size == 0:
            break
        k = min(n_candidates, Q - queries, eligible.size)
        sampled = np.sort(rng.choice(eligible, size=k, replace=False))
        best_idx = -1
        best_score = np.inf
        best_label = 1
        for b in sampled:
            cand = np.union1d(current, library.bundles[b])
            cand_score, cand_label = oracle.evaluate(cand)
            queries += 1
            if cand_score < best_score:
                best_idx, best_score, best_label = int(b), cand_score, cand_label
        if best_idx >= 0 and best_score < score:
            bundle = library.bundles[best_idx]
            active[bundle] = True
            current = np.union1d(current, bundle)
            used[best_idx] = True
            score = best_score
            commits += 1
            if best_label == 0:
                success = True
                break
    added = np.setdiff1d(current, x)
    return AttackResult(
        x,
        current,
        added,
        queries_used=queries,
        success=success,
        transformations_applied=commits,
        sample_index=sample_index,
    )


# ---------------------------------------------------------------------------
# Transfer protocol
# ---------------------------------------------------------------------------


@dataclass
class TransferOutcome:
    """Surrogate-generated AEs re-scored on each target.

    ``degenerate`` marks an empty surviving AE set (no attack succeeded on
    the surrogate); target metrics over such a set are not meaningful.
    """

    surrogate_results: list[AttackResult]
    target_results: dict[str, list[AttackResult]]
    eligible_indices: list[int]
    degenerate: bool


def transfer_attack(
    surrogate: Pipeline,
    targets: dict[str, Pipeline],
    ds: Dataset,
    sample_indices,
    kind: str,
    *,
    library: TransformationLibrary | None = None,
    budget: int | None = None,
    Q: int = 10,
    alpha: float = 0.5,
    n_candidates: int = 5,
    master_seed: int = 0,
) -> TransferOutcome:
    """Generate AEs against the surrogate only, then re-score on targets.

    Only samples detected as malware by the surrogate and every target are
    attacked, and only AEs successful on the surrogate are transferred.
    """
    if kind not in ("greedy", "transform", "evadedroid"):
        raise ConfigurationError(f"unknown attack kind {kind!r}")
    eligible = []
    for i in sample_indices:
        row = ds.rows[i]
        if surrogate.predict_indices(row) != 1:
            continue
        if any(t.predict_indices(row) != 1 for t in targets.values()):
            continue
        eligible.append(int(i))
    if not eligible:
        raise AttackError("no eligible samples: none detected by every pipeline")

    surrogate_results: list[AttackResult] = []
    for i in eligible:
        row = ds.rows[i]
        if kind == "greedy":
            res = greedy_feature_attack(
                surrogate, row, budget if budget is not None else ds.n_features,
                sample_index=i,
            )
        elif kind == "transform":
            if library is None:
                raise ConfigurationError("transform attack needs a library")
            res = pk_greedy_transform_attack(
                surrogate, row, library,
                budget if budget is not None else len(library),
                d=ds.n_features, sample_index=i,
            )
        else:
            if library is None:
                raise ConfigurationError("evadedroid attack needs a library")
            res = evadedroid_attack(
                PipelineOracle(surrogate), row, library, Q, alpha, n_candidates,
                seed=seed_for(master_seed, ATTACK_EVADEDROID, i), sample_index=i,
            )
        surrogate_results.append(res)

    surviving = [r for r in surrogate_results if r.success]
    target_results: dict[str, list[AttackResult]] = {}
    for name, target in targets.items():
        out = []
        for r in surviving:
            succ = target.predict_indices(r.adversarial) == 0
            out.append(
                AttackResult(
                    r.original,
                    r.adversarial,
                    r.added_features,
                    queries_used=r.queries_used,
                    success=bool(succ),
                    transformations_applied=r.transformations_applied,
                    sample_index=r.sample_index,
                )
            )
        target_results[name] = out
    return TransferOutcome(
        surrogate_results, target_results, eligible, degenerate=not surviving
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def results_to_jsonl(results, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json_dict(), sort_keys=True) + "\n")


def results_from_jsonl(path) -> list[AttackResult]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        out.append(
            AttackResult(
                np.asarray(obj["original"], dtype=np.int64),
                np.asarray(obj["adversarial"], dtype=np.int64),
                np.asarray(obj["added_features"], dtype=np.int64),
                queries_used=int(obj["queries_used"]),
                success=bool(obj["success"]),
                transformations_applied=int(obj["transformations_applied"]),
                sample_index=obj.get("sample_index"),
            )
        )
    return out
