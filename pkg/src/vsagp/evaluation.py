"""Repeated randomized k-fold cross-validation of the two pressure models."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import gp
from .dataset import Dataset

PRESSURE_RANGE = 0.4  # bar


class LengthMismatch(ValueError):
    pass


class InvalidFoldCount(ValueError):
    pass


@dataclass(frozen=True)
class CvConfig:
    n_folds: int = 10
    n_repeats: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_folds < 2:
            raise InvalidFoldCount(f"need at least 2 folds, got {self.n_folds}")
        if self.n_repeats < 1:
            raise ValueError(f"need at least 1 repeat, got {self.n_repeats}")


def mae(pred_I, pred_II, truth_I, truth_II) -> float:
    """Two-channel mean absolute error in bar, averaged over both bellows."""
    arrs = [np.asarray(a, dtype=float).ravel() for a in (pred_I, pred_II, truth_I, truth_II)]
    n = len(arrs[0])
    if any(len(a) != n for a in arrs) or n < 1:
        raise LengthMismatch(f"expected four equal non-empty lists, got {[len(a) for a in arrs]}")
    return float((np.abs(arrs[0] - arrs[2]).sum() + np.abs(arrs[1] - arrs[3]).sum()) / (2 * n))


def kfold_split(n: int, n_folds: int, seed) -> list:
    """Shuffle ``range(n)`` and cut it into ``n_folds`` near-equal folds.

    The first ``n % n_folds`` folds receive one extra index.
    """
    if n_folds < 2 or n_folds > n:
        raise InvalidFoldCount(f"need 2 <= n_folds <= n, got n_folds={n_folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, n_folds)


@dataclass(frozen=True)
class CvEntry:
    repeat: int
    fold: int
    n_test: int
    mae: float  # bar
    abs_error_sum: float  # bar, both channels summed


@dataclass
class CvReport:
    entries: list
    config: CvConfig
    n_points: int = 0
    hyperparams: list = field(default_factory=list)

    @property
    def maes(self) -> np.ndarray:
        return np.array([e.mae for e in self.entries])

    @property
    def grand_mean(self) -> float:
        """Mean of the per-fold MAEs (bar)."""
        return float(np.mean(self.maes))

    @property
    def pooled_mean(self) -> float:
        """Absolute error pooled over every held-out point of every repeat (bar)."""
        total = sum(e.abs_error_sum for e in self.entries)
        count = sum(2 * e.n_test for e in self.entries)
        return float(total / count)

    @property
    def grand_mean_fraction(self) -> float:
        return self.grand_mean / PRESSURE_RANGE

    def summary(self) -> dict:
        m = self.maes
        return {
            "n_points": self.n_points,
            "n_folds": self.config.n_folds,
            "n_repeats": self.config.n_repeats,
            "seed": self.config.seed,
            "n_entries": len(self.entries),
            "grand_mean_mae_bar": self.grand_mean,
            "grand_mean_fraction_of_range": self.grand_mean_fraction,
            "pooled_mae_bar": self.pooled_mean,
            "pooled_fraction_of_range": self.pooled_mean / PRESSURE_RANGE,
            "min_mae_bar": float(m.min()),
            "median_mae_bar": float(np.median(m)),
            "max_mae_bar": float(m.max()),
            "per_repeat_mean_mae_bar": [
                float(np.mean([e.mae for e in self.entries if e.repeat == r]))
                for r in range(self.config.n_repeats)
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("repeat,fold,n_test,mae_bar\n")
        for e in self.entries:
            buf.write(f"{e.repeat},{e.fold},{e.n_test},{e.mae!r}\n")
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _run_fold(d: Dataset, train_idx, test_idx, gp_opts, repeat, fold):
    train = d.subset(train_idx)
    test = d.subset(test_idx)
    try:
        g1 = gp.fit(train, "I", gp_opts)
        g2 = gp.fit(train, "II", gp_opts)
    except gp.FitFailure as exc:
        raise gp.FitFailure(f"repeat {repeat}, fold {fold}: {exc}") from exc
    y1 = gp.predict_mean(g1, test.inputs)
    y2 = gp.predict_mean(g2, test.inputs)
    err = float(np.abs(y1 - test.p1).sum() + np.abs(y2 - test.p2).sum())
    entry = CvEntry(repeat, fold, len(test), mae(y1, y2, test.p1, test.p2), err)
    return entry, (g1.hyperparams.as_dict(), g2.hyperparams.as_dict())


def cross_validate(d: Dataset, cfg: CvConfig = CvConfig(),
                   gp_opts: gp.GPOptions = gp.GPOptions(), n_jobs: int = 1,
                   progress: Optional[Callable[[int, int], None]] = None) -> CvReport:
    """Fit both GPs on every training split and score the held-out fold."""
    n = len(d)
    jobs = []
    for r in range(cfg.n_repeats):
        folds = kfold_split(n, cfg.n_folds, (cfg.seed, r))
        for f, test_idx in enumerate(folds):
            train_idx = np.sort(np.concatenate([folds[j] for j in range(len(folds)) if j != f]))
            jobs.append((train_idx, np.sort(test_idx), r, f))

    if n_jobs == 1:
        results = []
        for i, (tr, te, r, f) in enumerate(jobs):
            results.append(_run_fold(d, tr, te, gp_opts, r, f))
            if progress is not None:
                progress(i + 1, len(jobs))
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(
            delayed(_run_fold)(d, tr, te, gp_opts, r, f) for tr, te, r, f in jobs)

    return CvReport([e for e, _ in results], cfg, n_points=n,
                    hyperparams=[h for _, h in results])
