"""Statistical gates: Welch t-tests, iterative VIF elimination, and
percentile bootstrap confidence intervals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import betainc

from .cohort import Cohort
from .errors import ClassError, DegenerateSampleError, NotApplicableError, SchemaMismatchError


@dataclass(frozen=True)
class TTestResult:
    feature: str
    mean_a: float
    std_a: float
    n_a: int
    mean_b: float
    std_b: float
    n_b: int
    t_statistic: float
    degrees_of_freedom: float
    p_value: float

    def to_dict(self) -> dict:
        return asdict(self)


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t, via the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return float(min(1.0, max(0.0, betainc(0.5 * df, 0.5, x))))


def welch_from_summary(mean_a, std_a, n_a, mean_b, std_b, n_b, feature: str = "") -> TTestResult:
    """Welch test from summary statistics (sample std with ddof=1)."""
    if n_a < 2 or n_b < 2:
        raise DegenerateSampleError("each sample needs at least 2 observations")
    va = std_a**2 / n_a
    vb = std_b**2 / n_b
    se2 = va + vb
    diff = mean_a - mean_b
    if se2 == 0:
        if diff == 0:
            raise DegenerateSampleError("both samples are constant with equal means")
        return TTestResult(feature, mean_a, std_a, n_a, mean_b, std_b, n_b,
                           math.copysign(math.inf, diff), float(n_a + n_b - 2), 0.0)
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (n_a - 1) + vb**2 / (n_b - 1))
    return TTestResult(feature, mean_a, std_a, n_a, mean_b, std_b, n_b, t, df, t_sf_two_sided(t, df))


def welch_t_test(sample_a, sample_b, feature: str = "") -> TTestResult:
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise DegenerateSampleError("each sample needs at least 2 observations")
    return welch_from_summary(
        float(a.mean()), float(a.std(ddof=1)), int(a.size),
        float(b.mean()), float(b.std(ddof=1)), int(b.size),
        feature,
    )


def t_test_table(train: Cohort, test: Cohort) -> list[TTestResult]:
    """One Welch test per continuous feature, in schema order. Missing cells are skipped."""
    if train.feature_names != test.feature_names:
        raise SchemaMismatchError("train and test schemas differ")
    rows = []
    for j, spec in enumerate(train.schema):
        if spec.is_binary:
            continue
        a = train.X[:, j]
        b = test.X[:, j]
        rows.append(welch_t_test(a[~np.isnan(a)], b[~np.isnan(b)], feature=spec.name))
    return rows


# --------------------------------------------------------------------------- VIF

EXACT_COLLINEARITY = 1e-10


@dataclass(frozen=True)
class VifEntry:
    feature: str
    vif_value: float
    removed: bool
    removal_round: int | None


@dataclass(frozen=True)
class VifReport:
    entries: tuple
    threshold: float

    @property
    def survivors(self) -> list[str]:
        return [e.feature for e in self.entries if not e.removed]

    @property
    def removed(self) -> list[str]:
        return [e.feature for e in sorted(self.entries, key=lambda e: e.removal_round or 0) if e.removed]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "entries": [
                {
                    "feature": e.feature,
                    "vif": e.vif_value if math.isfinite(e.vif_value) else "inf",
                    "removed": e.removed,
                    "removal_round": e.removal_round,
                }
                for e in self.entries
            ],
        }


def vif_values(X: np.ndarray) -> np.ndarray:
    """VIF of every column: 1 / (1 - R^2) regressing it on the rest plus an intercept."""
    n, k = X.shape
    out = np.ones(k)
    if k < 2:
        return out
    for j in range(k):
        target = X[:, j]
        sst = float(np.sum((target - target.mean()) ** 2))
        if sst == 0.0:
            out[j] = math.inf
            continue
        design = np.column_stack([np.ones(n), np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        ssr = float(np.sum((target - design @ coef) ** 2))
        frac = ssr / sst
        out[j] = math.inf if frac <= EXACT_COLLINEARITY else 1.0 / frac
    return out


def vif_filter(cohort: Cohort, threshold: float = 5.0) -> VifReport:
    """Remove the largest-VIF continuous feature while it exceeds ``threshold``."""
    names = [s.name for s in cohort.schema if not s.is_binary]
    if len(names) < 2:
        raise NotApplicableError("VIF filtering needs at least 2 continuous features")
    X = cohort.X[:, cohort.continuous_mask]
    if np.isnan(X).any():
        raise NotApplicableError("VIF filtering needs complete (imputed) data")
    alive = list(range(len(names)))
    final: dict[int, tuple[float, bool, int | None]] = {}
    rnd = 0
    while True:
        vifs = vif_values(X[:, alive])
        worst = int(np.argmax(vifs))
        if len(alive) < 2 or not vifs[worst] > threshold:
            for pos, j in enumerate(alive):
                final[j] = (float(vifs[pos]), False, None)
            break
        rnd += 1
        final[alive[worst]] = (float(vifs[worst]), True, rnd)
        del alive[worst]
    entries = tuple(VifEntry(names[j], *final[j]) for j in range(len(names)))
    return VifReport(entries, threshold)


# --------------------------------------------------------------------- bootstrap


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    lower: float
    upper: float
    n_resamples: int
    alpha: float = 0.05
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def resample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def bootstrap_indices(labels: np.ndarray, n_resamples: int, seed: int) -> list[np.ndarray]:
    """Paired resample indices; single-class draws are redrawn from the same stream."""
    labels = np.asarray(labels)
    n = len(labels)
    out = []
    for i in range(n_resamples):
        rng = resample_rng(seed, i)
        while True:
            idx = rng.integers(0, n, size=n)
            lab = labels[idx]
            if lab.min() != lab.max():
                break
        out.append(idx)
    return out


def bootstrap_distribution(
    metric: Callable[[np.ndarray, np.ndarray], float],
    scores: Sequence[float],
    labels: Sequence[float],
    n_resamples: int = 1000,
    seed: int = 0,
) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if len(scores) != len(labels) or len(scores) < 2:
        raise ValueError("scores and labels must have equal length >= 2")
    if not ((labels == 0).any() and (labels == 1).any()):
        raise ClassError("bootstrap needs both classes present")
    return np.array([metric(scores[idx], labels[idx]) for idx in bootstrap_indices(labels, n_resamples, seed)])


def bootstrap_ci(
    metric: Callable[[np.ndarray, np.ndarray], float],
    scores: Sequence[float],
    labels: Sequence[float],
    n_resamples: int = 1000,
    alpha: float = 0.05,
    seed: int = 0,
) -> BootstrapCI:
    """Percentile interval of ``metric`` over paired resamples.

    Resample ``i`` draws from a generator seeded by ``(seed, i)`` so any
    subset of resamples can be recomputed independently.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    point = float(metric(scores, labels))
    if n_resamples <= 0:
        return BootstrapCI(point, point, point, 0, alpha, seed)
    dist = bootstrap_distribution(metric, scores, labels, n_resamples, seed)
    lo, hi = np.quantile(dist, [alpha / 2, 1 - alpha / 2])
    return BootstrapCI(point, float(lo), float(hi), int(n_resamples), alpha, seed)
