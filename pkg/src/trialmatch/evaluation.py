"""Criteria- and trial-level evaluation plus PCA export for embeddings.

Criteria-level metrics pool all (prediction, class) score/indicator pairs
before computing ranking metrics ("micro" averaging): AUROC by the
rank-sum formulation with ties counting one half, AUPRC by step-wise
precision-recall integration. Trial-level aggregation applies the
all-criteria rule: a patient matches a trial at threshold t when at least
that fraction of the trial's criteria got the required label (match for
inclusion, mismatch for exclusion).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .ec_parser import INCLUSION, Trial
from .errors import (
    DegenerateLabels,
    DimMismatch,
    NoCriteria,
    RankDeficientWarning,
)
from .matcher import CLASSES
from .memory import Patient

THRESHOLDS = (0.7, 0.8, 0.9, 1.0)

# Guards >= comparisons against float representation of ratios like 7/10.
_THRESH_EPS = 1e-9


@dataclass
class TrialMatchResult:
    patient_id: str
    trial_id: str
    predicted: tuple[str, ...]
    required: tuple[str, ...]
    fraction_correct: float
    matched_at: dict[float, bool]


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing their average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auroc_score(scores: np.ndarray, positives: np.ndarray) -> float:
    """Mann-Whitney AUROC: P(score+ > score-) + 0.5 P(equal)."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need both positive and negative examples")
    ranks = _average_ranks(scores)
    rank_sum = float(ranks[positives].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc_score(scores: np.ndarray, positives: np.ndarray) -> float:
    """Average precision: sum of precision x recall increments, scores
    descending, equal scores processed as one block."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    if n_pos == 0:
        raise DegenerateLabels("no positive examples")
    order = np.argsort(-scores, kind="mergesort")
    tp = 0
    fp = 0
    prev_recall = 0.0
    area = 0.0
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        block = order[i : j + 1]
        tp += int(positives[block].sum())
        fp += len(block) - int(positives[block].sum())
        recall = tp / n_pos
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return area


def criteria_metrics(predictions: list[tuple[np.ndarray, str]]) -> dict:
    """predictions: (probability 3-vector, true label) per pair. Returns
    accuracy plus micro-averaged AUROC/AUPRC (None when degenerate)."""
    if not predictions:
        raise NoCriteria("no predictions to score")
    correct = 0
    scores = []
    indicators = []
    for probs, label in predictions:
        if len(probs) != len(CLASSES):
            raise DimMismatch(f"want {len(CLASSES)} probabilities, got {len(probs)}")
        if CLASSES[int(np.argmax(probs))] == label:
            correct += 1
        for ci, cls in enumerate(CLASSES):
            scores.append(float(probs[ci]))
            indicators.append(label == cls)
    scores_arr = np.array(scores)
    pos_arr = np.array(indicators)
    try:
        auroc = auroc_score(scores_arr, pos_arr)
    except DegenerateLabels:
        auroc = None
    try:
        auprc = auprc_score(scores_arr, pos_arr)
    except DegenerateLabels:
        auprc = None
    return {
        "accuracy": correct / len(predictions),
        "auroc_micro": auroc,
        "auprc_micro": auprc,
    }


def required_labels(trial: Trial) -> tuple[str, ...]:
    return tuple(
        "match" if c.polarity == INCLUSION else "mismatch" for c in trial.criteria
    )


def aggregate_trial(
    patient_id: str,
    trial_id: str,
    predicted: list[str],
    required: list[str],
    thresholds=THRESHOLDS,
) -> TrialMatchResult:
    if not required:
        raise NoCriteria(f"trial {trial_id}: nothing to aggregate")
    if len(predicted) != len(required):
        raise DimMismatch(
            f"{len(predicted)} predictions for {len(required)} criteria"
        )
    n_correct = sum(p == r for p, r in zip(predicted, required))
    fraction = n_correct / len(required)
    matched = {t: fraction + _THRESH_EPS >= t for t in thresholds}
    return TrialMatchResult(
        patient_id=patient_id,
        trial_id=trial_id,
        predicted=tuple(predicted),
        required=tuple(required),
        fraction_correct=fraction,
        matched_at=matched,
    )


def trial_accuracy(results: list[TrialMatchResult], thresholds=THRESHOLDS) -> dict[float, float]:
    if not results:
        raise NoCriteria("no trial results")
    return {
        t: sum(r.matched_at[t] for r in results) / len(results) for t in thresholds
    }


def _group_stats(group: list[TrialMatchResult], thresholds) -> dict:
    row = {"n": len(group)}
    row["accuracy_by_threshold"] = {
        f"{t:g}": (
            sum(r.matched_at[t] for r in group) / len(group) if group else None
        )
        for t in thresholds
    }
    return row


def record_length_bucket(n_visits: int) -> str:
    if n_visits <= 1:
        return "short"
    if n_visits <= 3:
        return "medium"
    return "long"


def stratified_report(
    results: list[TrialMatchResult],
    patients: list[Patient],
    trials: list[Trial],
    cohorts: dict[str, str] | None = None,
    thresholds=THRESHOLDS,
) -> dict:
    """Trial-level accuracy grouped by record length, phase, and cohort."""
    if not results:
        raise NoCriteria("no trial results")
    visits_of = {p.patient_id: len(p.visits) for p in patients}
    phase_of = {t.trial_id: (t.phase or "unknown") for t in trials}

    by_length: dict[str, list] = {"short": [], "medium": [], "long": []}
    by_phase: dict[str, list] = {}
    by_cohort: dict[str, list] = {}
    for r in results:
        by_length[record_length_bucket(visits_of[r.patient_id])].append(r)
        by_phase.setdefault(phase_of[r.trial_id], []).append(r)
        if cohorts is not None:
            by_cohort.setdefault(cohorts.get(r.trial_id, "unknown"), []).append(r)

    report = {
        "record_length": {
            name: _group_stats(group, thresholds)
            for name, group in by_length.items()
        },
        "phase": {
            name: _group_stats(group, thresholds)
            for name, group in sorted(by_phase.items())
        },
    }
    if cohorts is not None:
        report["cohort"] = {
            name: _group_stats(group, thresholds)
            for name, group in sorted(by_cohort.items())
        }
    return report


def pca_project(vectors: np.ndarray, k: int = 2, seed: int = 0):
    """Top-k principal directions by power iteration with deflation.

    Returns (projected (n, k), components (k, dim)). Directions with no
    remaining variance come back as zero rows with a warning.
    """
    x = np.asarray(vectors, dtype=float)
    if x.ndim != 2:
        raise DimMismatch(f"need a 2-D stack of vectors, got shape {x.shape}")
    n, dim = x.shape
    if k > dim:
        raise DimMismatch(f"k={k} exceeds vector dim {dim}")
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} vectors, got {n}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    rng = np.random.default_rng(seed)
    components = np.zeros((k, dim))
    deficient = False
    for comp in range(k):
        v = rng.standard_normal(dim)
        for prev in components[:comp]:
            v -= (v @ prev) * prev
        norm = np.linalg.norm(v)
        if norm < 1e-14:
            deficient = True
            continue
        v /= norm
        for _ in range(1000):
            w = cov @ v
            for prev in components[:comp]:
                w -= (w @ prev) * prev
            norm = np.linalg.norm(w)
            if norm < 1e-14:
                break
            w /= norm
            done = min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < 1e-12
            v = w
            if done:
                break
        eigenvalue = float(v @ cov @ v)
        if eigenvalue < 1e-12:
            deficient = True
            continue
        # Deterministic sign: largest-magnitude entry is positive.
        lead = int(np.argmax(np.abs(v)))
        if v[lead] < 0:
            v = -v
        components[comp] = v
        cov = cov - eigenvalue * np.outer(v, v)
    if deficient:
        warnings.warn(
            "fewer nonzero principal directions than requested; zero-padded",
            RankDeficientWarning,
            stacklevel=2,
        )
    return centered @ components.T, components


def write_pca_csv(entries: list[tuple[str, str, float, float]], path) -> None:
    """entries: (id, kind in {ehr, ec_inclusion, ec_exclusion}, x, y)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "kind", "x", "y"])
        for ident, kind, px, py in entries:
            writer.writerow([ident, kind, f"{px:.8g}", f"{py:.8g}"])


def build_report(
    criteria_level: dict,
    trial_results: list[TrialMatchResult],
    strata: dict,
    thresholds=THRESHOLDS,
) -> dict:
    acc = trial_accuracy(trial_results, thresholds)
    return {
        "criteria_level": criteria_level,
        "trial_level_by_threshold": {f"{t:g}": acc[t] for t in thresholds},
        "strata": strata,
    }


def write_report_json(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
