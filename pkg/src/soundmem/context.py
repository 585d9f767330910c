"""Per-game recall datasets with absolute and contextual (z-score) features.

Each accepted game contributes one example per target pair whose sound sits
in the extreme bands of the normalized score distribution. Context features
compare the target's feature values against the K sounds played immediately
before its first presentation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .experiment import SessionLog, SessionPlan, SoundScore, score_sounds
from .features import TAG_HIGH, FeatureTable
from .stats import Dataset, RegressorConfig, cross_validate, shapley_importance, single_feature_r2

_EPS = 1e-12

VARIANT_ABSOLUTE = "absolute_only"
VARIANT_ABS_ALL_CONTEXT = "absolute_plus_all_context"
VARIANT_ABS_TOP50_CONTEXT = "absolute_plus_top50_context"
VARIANT_CONTEXT_ONLY = "context_only"
VARIANT_CONTEXT_NOISE = "context_only_noise_baseline"

GRID_VARIANTS = (
    VARIANT_ABSOLUTE,
    VARIANT_ABS_ALL_CONTEXT,
    VARIANT_ABS_TOP50_CONTEXT,
    VARIANT_CONTEXT_ONLY,
    VARIANT_CONTEXT_NOISE,
)


@dataclass(slots=True)
class GameExample:
    game_id: str
    sound_id: str
    label: int
    k: int
    absolute: dict[str, float | None]
    context: dict[str, float | None]
    degenerate: set[str]
    context_positions: tuple[int, ...]
    context_sounds: tuple[str, ...]


@dataclass
class ExampleSet:
    examples: list[GameExample]
    k: int
    n_skipped_short_context: int
    band: tuple[float, float]


def context_z(target_value: float, context_values: Sequence[float]) -> tuple[float, bool]:
    """Signed difference for a single-sound context, z-score otherwise.

    A zero-variance multi-sound context yields z = 0; both degenerate cases
    are flagged.
    """
    k = len(context_values)
    if k == 0:
        raise ValueError("context must contain at least one sound")
    mean = float(np.mean(context_values))
    if k == 1:
        return target_value - mean, True
    std = float(np.std(context_values))
    if std <= _EPS:
        return 0.0, True
    return (target_value - mean) / std, False


def _score_band(
    scores: Mapping[str, SoundScore], percentile_band: tuple[float, float]
) -> tuple[set[str], tuple[float, float]]:
    defined = {s: sc.normalized for s, sc in scores.items() if sc.normalized is not None}
    if not defined:
        raise ValueError("no sounds with defined normalized scores")
    values = np.array(list(defined.values()))
    lo = float(np.percentile(values, percentile_band[0]))
    hi = float(np.percentile(values, percentile_band[1]))
    band = {s for s, v in defined.items() if v <= lo or v >= hi}
    return band, (lo, hi)


def _example_features(
    table: FeatureTable,
    target_id: str,
    context_ids: Sequence[str],
    feature_columns: Sequence[str],
) -> tuple[dict[str, float | None], dict[str, float | None], set[str]]:
    absolute: dict[str, float | None] = {}
    context: dict[str, float | None] = {}
    degenerate: set[str] = set()
    target_row = table.row(target_id) if target_id in table else {}
    context_rows = [table.row(c) if c in table else {} for c in context_ids]
    for col in feature_columns:
        tv = target_row.get(col)
        absolute[col] = tv
        ctx_vals = [row.get(col) for row in context_rows]
        if tv is None or any(v is None for v in ctx_vals):
            context[col] = None
            continue
        z, flagged = context_z(tv, [float(v) for v in ctx_vals])
        context[col] = z
        if flagged:
            degenerate.add(col)
    return absolute, context, degenerate


def build_game_examples(
    sessions: Sequence[tuple[SessionPlan, SessionLog]],
    table: FeatureTable,
    k: int,
    percentile_band: tuple[float, float] = (15.0, 85.0),
    feature_columns: Sequence[str] | None = None,
) -> ExampleSet:
    """One example per target pair of an accepted game, extremes band only.

    The context is the k sounds at positions strictly before the target's
    first presentation; targets appearing earlier than position k are
    skipped and counted.
    """
    if k < 1:
        raise ValueError("context length k must be >= 1")
    columns = list(feature_columns) if feature_columns is not None else list(table.columns)
    scores = score_sounds(sessions)
    band, band_edges = _score_band(scores, percentile_band)
    examples: list[GameExample] = []
    skipped = 0
    for plan, log in sessions:
        for first, second, sound in plan.target_pairs():
            if sound not in band:
                continue
            if first < k:
                skipped += 1
                continue
            positions = tuple(range(first - k, first))
            context_ids = tuple(plan.sound_at(p) for p in positions)
            absolute, context, degenerate = _example_features(table, sound, context_ids, columns)
            examples.append(
                GameExample(
                    game_id=plan.session_id,
                    sound_id=sound,
                    label=1 if second in log.clicks else 0,
                    k=k,
                    absolute=absolute,
                    context=context,
                    degenerate=degenerate,
                    context_positions=positions,
                    context_sounds=context_ids,
                )
            )
    return ExampleSet(examples, k, skipped, band_edges)


def noise_baseline_examples(
    example_set: ExampleSet,
    table: FeatureTable,
    seed: int,
    pool: Sequence[str] | None = None,
) -> ExampleSet:
    """Recompute contextual features against random context sounds.

    Context sounds are drawn uniformly from the pool without replacement,
    always excluding the example's own target sound.
    """
    ids = list(pool) if pool is not None else list(table.ids)
    rng = np.random.default_rng(seed)
    out: list[GameExample] = []
    columns = [c for c in table.columns]
    for ex in example_set.examples:
        candidates = [s for s in ids if s != ex.sound_id]
        if len(candidates) < ex.k:
            raise ValueError("pool too small for a random context")
        chosen = tuple(str(s) for s in rng.choice(candidates, size=ex.k, replace=False))
        absolute, context, degenerate = _example_features(table, ex.sound_id, chosen, columns)
        out.append(
            GameExample(
                game_id=ex.game_id,
                sound_id=ex.sound_id,
                label=ex.label,
                k=ex.k,
                absolute=absolute,
                context=context,
                degenerate=degenerate,
                context_positions=ex.context_positions,
                context_sounds=chosen,
            )
        )
    return ExampleSet(out, example_set.k, example_set.n_skipped_short_context, example_set.band)


def select_top_features(
    table: FeatureTable,
    target_by_sound: Mapping[str, float],
    n_high: int = 25,
    n_low: int = 25,
    cfg: RegressorConfig | None = None,
    rank_by: str = "individual_r2",
    shapley_iterations: int = 500,
    seed: int = 0,
) -> list[str]:
    """Rank features against the per-sound target, split between high-level
    columns and the computed (low-level plus salience) columns.

    rank_by selects the ranking criterion: univariate fit quality
    ("individual_r2", default) or sampled importance ("shapley_delta_r2").
    """
    rows = []
    ys = []
    for sid in table.ids:
        if sid not in target_by_sound:
            continue
        row = table.row(sid)
        if any(row[c] is None for c in table.columns):
            continue
        rows.append([float(row[c]) for c in table.columns])
        ys.append(target_by_sound[sid])
    if not rows:
        raise ValueError("no complete rows with targets to rank features on")
    ds = Dataset(np.array(rows), np.array(ys), list(table.columns))
    if rank_by == "individual_r2":
        score_map = single_feature_r2(ds, cfg)
    elif rank_by == "shapley_delta_r2":
        report = shapley_importance(ds, iterations=shapley_iterations, seed=seed, cfg=cfg)
        score_map = {e.feature: e.shapley_delta_r2 for e in report.entries}
    else:
        raise ValueError(f"unknown rank_by {rank_by!r}")
    high = table.columns_with_tag(TAG_HIGH)
    ranked = sorted(
        (c for c in table.columns if c in score_map and not np.isnan(score_map[c])),
        key=lambda c: -score_map[c],
    )
    top_high = [c for c in ranked if c in high][:n_high]
    top_low = [c for c in ranked if c not in high][:n_low]
    return top_high + top_low


@dataclass(slots=True)
class GridRow:
    feature_set: str
    context_k: int
    accuracy: float
    n_examples: int


@dataclass
class ExperimentGrid:
    rows: list[GridRow]

    def accuracy(self, feature_set: str, k: int) -> float:
        for row in self.rows:
            if row.feature_set == feature_set and row.context_k == k:
                return row.accuracy
        raise KeyError((feature_set, k))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["feature_set", "context_k", "accuracy", "n_examples"])
        for row in self.rows:
            writer.writerow([row.feature_set, row.context_k, repr(row.accuracy), row.n_examples])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv_text())


def _variant_matrix(
    examples: Sequence[GameExample],
    noise_examples: Sequence[GameExample],
    variant: str,
    top50: Sequence[str],
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    if not examples:
        raise ValueError("no examples to train on")
    feature_names = list(examples[0].absolute)
    use_abs = variant in (VARIANT_ABSOLUTE, VARIANT_ABS_ALL_CONTEXT, VARIANT_ABS_TOP50_CONTEXT)
    if variant == VARIANT_ABSOLUTE:
        ctx_cols: list[str] = []
    elif variant == VARIANT_ABS_TOP50_CONTEXT:
        ctx_cols = [c for c in feature_names if c in set(top50)]
    else:
        ctx_cols = feature_names
    source = noise_examples if variant == VARIANT_CONTEXT_NOISE else examples
    columns = [f"abs_{c}" for c in feature_names] if use_abs else []
    columns += [f"ctx_{c}" for c in ctx_cols]
    rows: list[list[float]] = []
    labels: list[int] = []
    for ex in source:
        cells: list[float | None] = []
        if use_abs:
            cells.extend(ex.absolute[c] for c in feature_names)
        cells.extend(ex.context[c] for c in ctx_cols)
        if any(v is None for v in cells):
            continue
        rows.append([float(v) for v in cells])
        labels.append(ex.label)
    if not rows:
        raise ValueError(f"variant {variant} has no complete rows")
    return np.array(rows), np.array(labels), columns


def run_experiment_grid(
    true_sets: Mapping[int, ExampleSet],
    noise_sets: Mapping[int, ExampleSet],
    top50: Sequence[str],
    cv_seed: int = 0,
    k_folds: int = 5,
    holdout: float = 0.15,
    l2_strength: float = 1e-2,
) -> ExperimentGrid:
    """Holdout accuracy for every feature-set variant and context length.

    All variants of one context length share the same examples and the same
    cross-validation seed, so their accuracies are paired.
    """
    rows: list[GridRow] = []
    for k in sorted(true_sets):
        true_set = true_sets[k]
        noise_set = noise_sets[k]
        for variant in GRID_VARIANTS:
            X, y, columns = _variant_matrix(true_set.examples, noise_set.examples, variant, top50)
            ds = Dataset(X, y.astype(np.float64), columns)
            std_ds, _ = ds.standardized()
            result = cross_validate(
                std_ds.X, y, k=k_folds, holdout=holdout, seed=cv_seed, l2_strength=l2_strength
            )
            rows.append(GridRow(variant, k, result.holdout_accuracy, int(y.size)))
    return ExperimentGrid(rows)
