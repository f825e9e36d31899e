"""MIML evaluation metrics (hamming loss, one-error, ranking loss, average
precision) and the k-fold cross-validation harness.

Ranking conventions are fixed so independent implementations can agree
bit-for-bit: argmax and rank ties resolve toward the lowest class index,
and tied positive/negative score pairs count 1/2 in the ranking loss.
Bags lacking a positive label (or, for ranking loss, lacking a negative)
are skipped with a warning.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import STREAM_FOLDS, derive_seed, stream_rng

METRIC_NAMES = ("hamming_loss", "one_error", "ranking_loss", "average_precision")


def _check_shapes(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"expected equal 2-D shapes, got {a.shape} and {b.shape}")


def _valid_rows(mask: np.ndarray, what: str) -> np.ndarray:
    rows = np.nonzero(mask)[0]
    if rows.size < mask.size:
        warnings.warn(f"skipping {mask.size - rows.size} bag(s) without {what}", stacklevel=3)
    if rows.size == 0:
        raise ConfigError(f"no bag has {what}; metric undefined")
    return rows


def hamming_loss(pred_labels: np.ndarray, true_labels: np.ndarray) -> float:
    """Fraction of label cells where prediction and truth disagree."""
    pred_labels = np.asarray(pred_labels)
    true_labels = np.asarray(true_labels)
    _check_shapes(pred_labels, true_labels)
    return float(np.mean(pred_labels != true_labels))


def one_error(scores: np.ndarray, true_labels: np.ndarray) -> float:
    """Fraction of bags whose top-scoring class is not a true positive."""
    scores = np.asarray(scores, dtype=np.float64)
    true_labels = np.asarray(true_labels)
    _check_shapes(scores, true_labels)
    rows = _valid_rows(true_labels.sum(axis=1) > 0, "a positive label")
    top = np.argmax(scores[rows], axis=1)  # ties -> lowest class index
    return float(np.mean(true_labels[rows, top] == 0))


def ranking_loss(scores: np.ndarray, true_labels: np.ndarray) -> float:
    """Mean fraction of (positive, negative) class pairs ranked wrongly.

    A pair counts 1 when the negative outscores the positive and 1/2 on a
    tie; each bag normalizes by |positives| * |negatives|.
    """
    scores = np.asarray(scores, dtype=np.float64)
    true_labels = np.asarray(true_labels)
    _check_shapes(scores, true_labels)
    pos_counts = true_labels.sum(axis=1)
    rows = _valid_rows((pos_counts > 0) & (pos_counts < true_labels.shape[1]), "both label kinds")
    vals = []
    for i in rows:
        pos = scores[i, true_labels[i] == 1]
        neg = scores[i, true_labels[i] == 0]
        wrong = (pos[:, None] < neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        vals.append(wrong / (len(pos) * len(neg)))
    return float(np.mean(vals))


def average_precision(scores: np.ndarray, true_labels: np.ndarray) -> float:
    """Example-based average precision.

    Classes are ranked by descending score (ties -> lowest class index);
    each true class y contributes (# true classes ranked at or above y) /
    rank(y), averaged per bag and then over bags.
    """
    scores = np.asarray(scores, dtype=np.float64)
    true_labels = np.asarray(true_labels)
    _check_shapes(scores, true_labels)
    rows = _valid_rows(true_labels.sum(axis=1) > 0, "a positive label")
    k = scores.shape[1]
    vals = []
    for i in rows:
        order = np.lexsort((np.arange(k), -scores[i]))  # descending score, then class index
        rank = np.empty(k, dtype=np.int64)
        rank[order] = np.arange(1, k + 1)
        true_ranks = np.sort(rank[true_labels[i] == 1])
        prec = [(j + 1) / r for j, r in enumerate(true_ranks)]
        vals.append(np.mean(prec))
    return float(np.mean(vals))


def compute_all(scores: np.ndarray, pred_labels: np.ndarray, true_labels: np.ndarray) -> dict:
    return {
        "hamming_loss": hamming_loss(pred_labels, true_labels),
        "one_error": one_error(scores, true_labels),
        "ranking_loss": ranking_loss(scores, true_labels),
        "average_precision": average_precision(scores, true_labels),
    }


def _lenient_metrics(scores, pred_labels, true_labels) -> dict:
    """Per-fold metrics where a degenerate fold yields NaN instead of raising."""
    out = {}
    for name, fn, args in (
        ("hamming_loss", hamming_loss, (pred_labels, true_labels)),
        ("one_error", one_error, (scores, true_labels)),
        ("ranking_loss", ranking_loss, (scores, true_labels)),
        ("average_precision", average_precision, (scores, true_labels)),
    ):
        try:
            out[name] = fn(*args)
        except ConfigError as exc:
            warnings.warn(f"degenerate fold: {exc}; continuing", stacklevel=2)
            out[name] = float("nan")
    return out


@dataclass(frozen=True)
class MetricsReport:
    """Per-fold metric values plus their mean and standard deviation."""

    per_fold: tuple
    sample_std: bool = False

    def mean(self, name: str) -> float:
        # degenerate folds carry NaN and drop out of the aggregate
        return float(np.nanmean([f[name] for f in self.per_fold]))

    def std(self, name: str) -> float:
        vals = np.asarray([f[name] for f in self.per_fold], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        ddof = 1 if self.sample_std and vals.size > 1 else 0
        return float(np.std(vals, ddof=ddof))

    @property
    def hamming_loss(self) -> float:
        return self.mean("hamming_loss")

    @property
    def one_error(self) -> float:
        return self.mean("one_error")

    @property
    def ranking_loss(self) -> float:
        return self.mean("ranking_loss")

    @property
    def average_precision(self) -> float:
        return self.mean("average_precision")

    def to_dict(self) -> dict:
        return {
            "hl": self.hamming_loss,
            "oe": self.one_error,
            "rl": self.ranking_loss,
            "ap": self.average_precision,
            "std": {
                "hl": self.std("hamming_loss"),
                "oe": self.std("one_error"),
                "rl": self.std("ranking_loss"),
                "ap": self.std("average_precision"),
            },
            "per_fold": [dict(f) for f in self.per_fold],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self) -> str:
        header = f"{'metric':<20}{'mean':>10}{'std':>10}"
        rows = [header, "-" * len(header)]
        short = {"hamming_loss": "HL", "one_error": "OE", "ranking_loss": "RL", "average_precision": "AP"}
        for name in METRIC_NAMES:
            rows.append(f"{short[name] + ' (' + name + ')':<20}{self.mean(name):>10.4f}{self.std(name):>10.4f}")
        return "\n".join(rows)


def fold_indices(n: int, folds: int, seed: int = 0) -> list:
    """Deterministic partition of range(n) into ``folds`` near-equal folds."""
    if folds < 2 or folds > n:
        raise ConfigError(f"folds must be in [2, {n}], got {folds}")
    perm = stream_rng(seed, STREAM_FOLDS).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cross_validate(ds, config, folds: int = 10, seed: int = 0, variant: str = "bmiml", sample_std: bool = False) -> MetricsReport:
    """k-fold cross validation of the pipeline; returns per-fold metrics.

    Each fold trains on the remaining bags with a fold-specific derived seed
    and evaluates all four metrics on the held-out bags (ranking metrics on
    the softmax probabilities, hamming loss on the thresholded labels).
    """
    from .pipeline import fit_bmiml, predict_bags  # deferred: pipeline imports metrics users

    n = ds.num_bags
    parts = fold_indices(n, folds, seed)
    per_fold = []
    for f, held in enumerate(parts):
        train_idx = np.setdiff1d(np.arange(n), held)
        train = ds.subset(train_idx, name=f"{ds.name}[fold{f}]")
        fold_config = config.reseed(derive_seed(seed, f))
        model = fit_bmiml(train, fold_config, variant=variant)
        test_bags = [ds.bags[i] for i in held]
        pred = predict_bags(model, test_bags)
        truth = np.stack([b.label for b in test_bags])
        per_fold.append(_lenient_metrics(pred.probabilities, pred.labels, truth))
    return MetricsReport(per_fold=tuple(per_fold), sample_std=sample_std)
