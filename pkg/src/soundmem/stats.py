"""Regression, rank correlation, sampled Shapley importance, and the
logistic classifier used by the per-game models.

The default regressor is RBF kernel ridge (closed form, deterministic);
an epsilon-SVR trained by SMO-style pair updates is selectable per config.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

_EPS = 1e-12


class FitError(Exception):
    """A regression fit could not be completed."""


class DegenerateLabels(Exception):
    """Classification labels do not contain two usable classes."""


class StratifyError(Exception):
    """A stratified split cannot be formed from these labels."""


# ---------------------------------------------------------------------------
# rank correlation


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson correlation of average ranks; NaN when either vector is constant."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length vectors")
    if x.size < 3:
        raise ValueError("need at least 3 observations")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    sx = rx.std()
    sy = ry.std()
    if sx <= _EPS or sy <= _EPS:
        return math.nan  # undefined for a constant vector
    return float(np.mean((rx - rx.mean()) * (ry - ry.mean())) / (sx * sy))


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    """Feature matrix with named columns and a target vector, no missing values."""

    X: np.ndarray
    y: np.ndarray
    columns: list[str]
    mean_: np.ndarray | None = None
    std_: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.size:
            raise ValueError("X must be [n_samples, n_features] aligned with y")
        if self.X.shape[1] != len(self.columns):
            raise ValueError("column names must match the feature count")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset must be finite (drop missing rows upstream)")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def standardized(self) -> tuple["Dataset", list[str]]:
        """Per-column zero-mean unit-variance copy; zero-variance columns dropped.

        Returns the new dataset and the list of dropped column names.
        """
        mean = self.X.mean(axis=0)
        std = self.X.std(axis=0)
        keep = std > _EPS
        dropped = [c for c, k in zip(self.columns, keep) if not k]
        ds = Dataset(
            (self.X[:, keep] - mean[keep]) / std[keep],
            self.y,
            [c for c, k in zip(self.columns, keep) if k],
            mean_=mean[keep],
            std_=std[keep],
        )
        return ds, dropped

    def destandardized_X(self) -> np.ndarray:
        if self.mean_ is None or self.std_ is None:
            raise ValueError("dataset has no standardization parameters")
        return self.X * self.std_ + self.mean_


# ---------------------------------------------------------------------------
# regressors


RBF_KERNEL_RIDGE = "rbf_kernel_ridge"
EPSILON_SVR = "epsilon_svr"


@dataclass(slots=True)
class RegressorConfig:
    kind: str = RBF_KERNEL_RIDGE
    gamma: float | None = None  # None -> gamma_scale / n_features**2
    gamma_scale: float = 1.0
    ridge_lambda: float = 0.1
    svr_c: float = 1.0
    svr_epsilon: float = 0.1
    svr_tol: float = 1e-3
    svr_max_iter: int = 200_000


@dataclass
class RegressorModel:
    kind: str
    gamma: float
    X_train: np.ndarray
    dual_coef: np.ndarray
    intercept: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        pred = _rbf_kernel(X, self.X_train, self.gamma) @ self.dual_coef + self.intercept
        if not np.all(np.isfinite(pred)):
            raise FitError("non-finite predictions")
        return pred


def _sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = (A**2).sum(axis=1)[:, None]
    bb = (B**2).sum(axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0)


def _rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * _sq_distances(A, B))


def _solve_kernel_ridge(K: np.ndarray, y_centered: np.ndarray, lam: float) -> np.ndarray:
    A = K.copy()
    A.flat[:: A.shape[0] + 1] += lam
    try:
        factor = cho_factor(A, lower=True, overwrite_a=True, check_finite=False)
        return cho_solve(factor, y_centered, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"kernel system not solvable: {exc}") from exc


def _pair_step(bi: float, bj: float, gi: float, gj: float, a: float, C: float, eps: float) -> float:
    """Exact line minimum along e_i - e_j for the epsilon-insensitive dual."""
    t_max = min(C - bi, bj + C)
    if t_max <= 0:
        return 0.0
    kinks = sorted({t for t in (-bi, bj) if 0.0 < t < t_max})
    lo = 0.0
    for hi in [*kinks, t_max]:
        mid = 0.5 * (lo + hi)
        si = 1.0 if bi + mid >= 0 else -1.0
        sj = 1.0 if bj - mid >= 0 else -1.0
        const = gi - gj + eps * (si - sj)
        if a * lo + const >= 0.0:
            return lo
        t_star = -const / a
        if t_star <= hi:
            return min(max(t_star, lo), hi)
        lo = hi
    return t_max


def _smo_svr(
    K: np.ndarray, y: np.ndarray, C: float, eps: float, tol: float, max_iter: int
) -> tuple[np.ndarray, float]:
    n = y.size
    beta = np.zeros(n)
    Kb = np.zeros(n)
    up_vals = dn_vals = None
    for _ in range(max_iter):
        g = Kb - y
        up = g + np.where(beta >= 0.0, eps, -eps)
        dn = g + np.where(beta > 0.0, eps, -eps)
        up_vals = np.where(beta < C - 1e-12, up, np.inf)
        dn_vals = np.where(beta > -C + 1e-12, dn, -np.inf)
        i = int(np.argmin(up_vals))
        j = int(np.argmax(dn_vals))
        if i == j or dn_vals[j] - up_vals[i] <= tol:
            break
        a = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        t = _pair_step(beta[i], beta[j], g[i], g[j], a, C, eps)
        if t <= 0.0:
            break
        Kb += t * (K[:, i] - K[:, j])
        beta[i] += t
        beta[j] -= t
    margin = (np.abs(beta) > 1e-8) & (np.abs(beta) < C - 1e-8)
    if margin.any():
        resid = y - Kb
        b = float(np.mean(resid[margin] - eps * np.sign(beta[margin])))
    else:
        finite_up = up_vals[np.isfinite(up_vals)]
        finite_dn = dn_vals[np.isfinite(dn_vals)]
        b = -0.5 * float(finite_up.min() + finite_dn.max())
    return beta, b


def fit_regressor(ds: Dataset, cfg: RegressorConfig | None = None) -> RegressorModel:
    """Fit the configured regressor; requires at least 10 samples."""
    cfg = cfg or RegressorConfig()
    if ds.n_samples < 10:
        raise FitError(f"need at least 10 samples, got {ds.n_samples}")
    gamma = cfg.gamma if cfg.gamma is not None else cfg.gamma_scale / ds.n_features**2
    K = _rbf_kernel(ds.X, ds.X, gamma)
    if cfg.kind == RBF_KERNEL_RIDGE:
        y_mean = float(ds.y.mean())
        alpha = _solve_kernel_ridge(K, ds.y - y_mean, cfg.ridge_lambda)
        model = RegressorModel(cfg.kind, gamma, ds.X, alpha, y_mean)
    elif cfg.kind == EPSILON_SVR:
        beta, b = _smo_svr(K, ds.y, cfg.svr_c, cfg.svr_epsilon, cfg.svr_tol, cfg.svr_max_iter)
        model = RegressorModel(cfg.kind, gamma, ds.X, beta, b)
    else:
        raise ValueError(f"unknown regressor kind {cfg.kind!r}")
    if not np.all(np.isfinite(model.dual_coef)):
        raise FitError("fit produced non-finite coefficients")
    return model


def r2(y_pred: np.ndarray, y_true: np.ndarray) -> float:
    """Coefficient of determination; 0 when the target has zero variance."""
    y_pred = np.asarray(y_pred, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot <= _EPS:
        return 0.0
    ss_res = float(((y_true - y_pred) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def single_feature_r2(ds: Dataset, cfg: RegressorConfig | None = None) -> dict[str, float]:
    """In-sample R^2 of one univariate fit per column (NaN where a fit fails)."""
    std_ds, _ = ds.standardized()
    out: dict[str, float] = {}
    for k, name in enumerate(std_ds.columns):
        sub = Dataset(std_ds.X[:, [k]], std_ds.y, [name])
        try:
            model = fit_regressor(sub, cfg)
            out[name] = r2(model.predict(sub.X), sub.y)
        except FitError:
            out[name] = math.nan
    return out


# ---------------------------------------------------------------------------
# sampled Shapley importance


@dataclass(slots=True)
class FeatureImportance:
    feature: str
    individual_r2: float
    shapley_delta_r2: float
    n_evaluations: int


@dataclass
class ImportanceReport:
    entries: list[FeatureImportance]
    iterations: int
    n_range: tuple[int, int]
    seed: int
    n_skipped: int = 0

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["feature", "individual_r2", "shapley_delta_r2"])
        for e in self.entries:
            writer.writerow([e.feature, repr(e.individual_r2), repr(e.shapley_delta_r2)])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv_text())

    def ranking(self) -> list[str]:
        return [e.feature for e in self.entries]


def shapley_importance(
    ds: Dataset,
    iterations: int = 10_000,
    n_range: tuple[int, int] = (1, 10),
    seed: int = 0,
    cfg: RegressorConfig | None = None,
) -> ImportanceReport:
    """Mean R^2 gain of appending each feature to random small models.

    Per iteration: draw N ~ Uniform(n_range), fit a base model on N random
    columns, then refit with each remaining column appended and record its
    R^2 change. Column draws use a per-iteration generator seeded by
    seed + iteration, so results do not depend on execution order.
    """
    cfg = cfg or RegressorConfig()
    std_ds, _ = ds.standardized()
    d = std_ds.n_features
    if d < n_range[1] + 1:
        raise ValueError(f"need more than {n_range[1]} usable features, got {d}")
    individual = single_feature_r2(ds, cfg)
    X = std_ds.X
    y = std_ds.y
    y_mean = float(y.mean())
    yc = y - y_mean
    ss_tot = float((yc**2).sum())
    sums = np.zeros(d)
    counts = np.zeros(d, dtype=np.int64)
    n_skipped = 0

    fast = cfg.kind == RBF_KERNEL_RIDGE and cfg.gamma is None
    n = std_ds.n_samples
    col_dists = None
    if fast and n * n * d <= 200_000_000:
        col_dists = np.empty((d, n, n))
        for k in range(d):
            col = X[:, k]
            col_dists[k] = (col[:, None] - col[None, :]) ** 2

    def ridge_r2(dist: np.ndarray, n_feat: int) -> float:
        K = np.exp(-(cfg.gamma_scale / n_feat**2) * dist)
        alpha = _solve_kernel_ridge(K, yc, cfg.ridge_lambda)
        resid = yc - K @ alpha
        return 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > _EPS else 0.0

    for it in range(iterations):
        rng = np.random.default_rng(seed + it)
        n_base = int(rng.integers(n_range[0], n_range[1] + 1))
        subset = rng.choice(d, size=n_base, replace=False)
        in_base = np.zeros(d, dtype=bool)
        in_base[subset] = True
        try:
            if col_dists is not None:
                base_dist = col_dists[subset].sum(axis=0)
                base_r2 = ridge_r2(base_dist, n_base)
                for j in range(d):
                    if in_base[j]:
                        continue
                    delta = ridge_r2(base_dist + col_dists[j], n_base + 1) - base_r2
                    sums[j] += delta
                    counts[j] += 1
            else:
                base = Dataset(X[:, subset], y, [std_ds.columns[k] for k in subset])
                base_model = fit_regressor(base, cfg)
                base_r2 = r2(base_model.predict(base.X), y)
                for j in range(d):
                    if in_base[j]:
                        continue
                    cols = [*subset, j]
                    ext = Dataset(X[:, cols], y, [std_ds.columns[k] for k in cols])
                    model = fit_regressor(ext, cfg)
                    sums[j] += r2(model.predict(ext.X), y) - base_r2
                    counts[j] += 1
        except FitError:
            n_skipped += 1
            continue

    entries = [
        FeatureImportance(
            feature=name,
            individual_r2=individual.get(name, math.nan),
            shapley_delta_r2=float(sums[k] / counts[k]),
            n_evaluations=int(counts[k]),
        )
        for k, name in enumerate(std_ds.columns)
        if counts[k] > 0
    ]
    entries.sort(key=lambda e: -e.shapley_delta_r2)
    return ImportanceReport(entries, iterations, n_range, seed, n_skipped)


# ---------------------------------------------------------------------------
# logistic classification


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    l2_strength: float

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = np.asarray(X, dtype=np.float64) @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


def logistic_loss_grad(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, float]:
    """Mean cross-entropy with L2 on the weights (bias unregularized)."""
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    p = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    grad_w = X.T @ (p - y) / y.size + l2 * w
    grad_b = float(np.mean(p - y))
    return loss, grad_w, grad_b


def fit_logistic(
    X: np.ndarray,
    labels: np.ndarray,
    l2_strength: float = 1e-2,
    tol: float = 1e-6,
    max_iter: int = 100_000,
) -> LogisticModel:
    """Accelerated gradient descent down to gradient norm <= tol."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0.0, 1.0))):
        raise ValueError("labels must be 0/1")
    if classes.size < 2:
        raise DegenerateLabels("need both classes present")
    if min((y == 0).sum(), (y == 1).sum()) < 2:
        raise DegenerateLabels("need at least 2 examples per class")
    n, d = X.shape
    sigma_max = float(np.linalg.norm(X, 2)) if min(n, d) > 0 else 0.0
    lip = 0.25 * (sigma_max**2 / n + 1.0) + l2_strength
    momentum = (math.sqrt(lip) - math.sqrt(l2_strength)) / (math.sqrt(lip) + math.sqrt(l2_strength))
    w = np.zeros(d)
    b = 0.0
    w_prev = w.copy()
    b_prev = b
    for it in range(max_iter):
        vw = w + momentum * (w - w_prev)
        vb = b + momentum * (b - b_prev)
        _, gw, gb = logistic_loss_grad(vw, vb, X, y, l2_strength)
        w_prev, b_prev = w, b
        w = vw - gw / lip
        b = vb - gb / lip
        if it % 16 == 0:
            _, gw_now, gb_now = logistic_loss_grad(w, b, X, y, l2_strength)
            if math.sqrt(float(gw_now @ gw_now) + gb_now**2) <= tol:
                break
    return LogisticModel(w, b, l2_strength)


def accuracy(model: LogisticModel, X: np.ndarray, labels: np.ndarray) -> float:
    y = np.asarray(labels, dtype=np.int64)
    return float(np.mean(model.predict(X) == y))


@dataclass
class CrossValResult:
    fold_accuracies: list[float]
    holdout_accuracy: float
    holdout_indices: np.ndarray


def _stratified_allocation(counts: Mapping[int, int], total: int) -> dict[int, int]:
    n = sum(counts.values())
    quotas = {c: total * k / n for c, k in counts.items()}
    alloc = {c: int(q) for c, q in quotas.items()}
    short = total - sum(alloc.values())
    for c in sorted(counts, key=lambda c: quotas[c] - alloc[c], reverse=True)[:short]:
        alloc[c] += 1
    return alloc


def cross_validate(
    X: np.ndarray,
    labels: np.ndarray,
    k: int = 5,
    holdout: float = 0.15,
    seed: int = 0,
    l2_strength: float = 1e-2,
) -> CrossValResult:
    """Stratified holdout, then k stratified folds on the remainder.

    Per-fold accuracies come from models trained on the other folds; the
    holdout accuracy comes from one model refit on all non-holdout rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    if n < 20:
        raise ValueError("need at least 20 samples")
    rng = np.random.default_rng(seed)
    class_idx = {c: np.flatnonzero(y == c) for c in np.unique(y)}
    holdout_total = round(holdout * n)
    alloc = _stratified_allocation({c: idx.size for c, idx in class_idx.items()}, holdout_total)
    holdout_parts = []
    fold_of = np.full(n, -1, dtype=np.int64)
    for c, idx in class_idx.items():
        if alloc[c] < 1 or idx.size - alloc[c] < k:
            raise StratifyError(f"class {c} too small for a {k}-fold split with holdout")
        shuffled = idx[rng.permutation(idx.size)]
        holdout_parts.append(shuffled[: alloc[c]])
        rest = shuffled[alloc[c] :]
        fold_of[rest] = np.arange(rest.size) % k
    holdout_idx = np.sort(np.concatenate(holdout_parts))
    fold_accuracies = []
    for f in range(k):
        train = np.flatnonzero((fold_of >= 0) & (fold_of != f))
        val = np.flatnonzero(fold_of == f)
        model = fit_logistic(X[train], y[train], l2_strength)
        fold_accuracies.append(accuracy(model, X[val], y[val]))
    non_holdout = np.flatnonzero(fold_of >= 0)
    final = fit_logistic(X[non_holdout], y[non_holdout], l2_strength)
    return CrossValResult(fold_accuracies, accuracy(final, X[holdout_idx], y[holdout_idx]), holdout_idx)
