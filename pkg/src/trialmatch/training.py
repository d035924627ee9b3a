"""Losses, dataset assembly, optimization, and gradient verification.

The per-pair loss has two parts. The classification part treats the three
softmax outputs as per-class binary predictions and sums their binary
cross-entropies (probabilities clamped to [1e-7, 1-1e-7] before logs).
The distance part acts on the cosine between the projected criterion
query and the retrieved memory, and only for pairs whose ground truth
activates it: true inclusion/match pairs pull the vectors together
(1 - cos), true exclusion/mismatch pairs push them below a margin
(max(0, cos - margin)). All other pairs contribute zero. The batch loss
is the mean of the per-pair sums.
"""

from __future__ import annotations

import copy
import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import evaluation
from .ec_parser import EXCLUSION, INCLUSION, Trial
from .errors import (
    DimMismatch,
    EmptyBatch,
    InsufficientTrials,
    NonFiniteLoss,
    ZeroVectorWarning,
)
from .matcher import CLASSES
from .memory import Patient, PreparedUpdates, demo_features, prepare_patient_updates
from .model import ModelDims, backward_pair, forward_pair, pair_query
from .nn import softmax_backward, zeros_like_params
from .taxonomy import Taxonomy
from .text_encoding import Encoder

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LabeledPair:
    patient_id: str
    trial_id: str
    polarity: str
    criterion_index: int
    label: str

    def y_index(self) -> int:
        return CLASSES.index(self.label)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 20
    margin: float = 0.3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    use_distance_loss: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.margin <= 1.0:
            raise ValueError("margin must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")


# --- loss terms ---

def classification_loss(probs: np.ndarray, y: np.ndarray) -> float:
    """Sum of per-class binary cross-entropy terms over the 3 outputs."""
    if probs.shape != y.shape:
        raise DimMismatch(f"probs {probs.shape} vs labels {y.shape}")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-(y @ np.log(p) + (1.0 - y) @ np.log(1.0 - p)))


def classification_loss_backward(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    grad = -y / p + (1.0 - y) / (1.0 - p)
    # No gradient through entries the clamp saturated.
    grad[probs != p] = 0.0
    return grad


def _cosine(u: np.ndarray, v: np.ndarray):
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < 1e-12 or nv < 1e-12:
        return None
    return float(u @ v) / (nu * nv), nu, nv


def distance_loss(
    query_vec: np.ndarray,
    retrieved: np.ndarray,
    polarity: str,
    label: str,
    margin: float,
) -> float:
    loss, _ = distance_loss_with_info(query_vec, retrieved, polarity, label, margin)
    return loss


def distance_loss_with_info(query_vec, retrieved, polarity, label, margin):
    """Returns (loss, info); info is None when no gradient flows and
    otherwise carries (dloss/dcos, query_vec, retrieved, cos, and the
    two vector norms)."""
    if polarity == INCLUSION and label == "match":
        branch = "inclusion"
    elif polarity == EXCLUSION and label == "mismatch":
        branch = "exclusion"
    else:
        return 0.0, None
    cos_info = _cosine(query_vec, retrieved)
    if cos_info is None:
        warnings.warn(
            "zero vector in distance loss; contributing 0",
            ZeroVectorWarning,
            stacklevel=2,
        )
        return 0.0, None
    cos, nu, nv = cos_info
    if branch == "inclusion":
        return 1.0 - cos, (-1.0, query_vec, retrieved, cos, nu, nv)
    if cos - margin > 0.0:
        return cos - margin, (1.0, query_vec, retrieved, cos, nu, nv)
    return 0.0, None


def distance_loss_backward(info, scale: float) -> tuple[np.ndarray, np.ndarray]:
    sign, u, v, cos, nu, nv = info
    du = scale * sign * (v / (nu * nv) - cos * u / (nu * nu))
    dv = scale * sign * (u / (nu * nv) - cos * v / (nv * nv))
    return du, dv


def total_loss(pair_losses) -> float:
    losses = list(pair_losses)
    if not losses:
        raise EmptyBatch("no pairs in batch")
    return float(np.mean(losses))


# --- dataset assembly ---

@dataclass
class Dataset:
    pairs: list[LabeledPair]
    train_pairs: list[LabeledPair]
    val_pairs: list[LabeledPair]
    test_pairs: list[LabeledPair]
    split_of: dict[str, str]


def make_dataset(
    patients: list[Patient],
    trials: list[Trial],
    enrollments: list[tuple[str, str]],
    seed: int,
    labels: dict[tuple[str, str, str, int], str] | None = None,
) -> Dataset:
    """Builds labeled pairs and patient-disjoint splits.

    Enrolled-trial pairs take their label from `labels` when given (keyed
    (patient_id, trial_id, polarity, index)), else from the polarity rule
    (inclusion -> match, exclusion -> mismatch). Each criterion of each
    enrollment additionally draws one inclusion and one exclusion
    criterion, uniformly from trials the patient is not enrolled in,
    labeled unknown. Repeated draws are kept as repeats.

    Split: 30% of patients are test; the rest split 90/10 train/val.
    """
    if len(trials) < 2:
        raise InsufficientTrials(f"{len(trials)} trial(s); need at least 2")
    trials_by_id = {t.trial_id: t for t in trials}
    enrolled_trials: dict[str, set[str]] = {}
    for pid, tid in enrollments:
        if tid not in trials_by_id:
            raise InsufficientTrials(f"enrollment references unknown trial {tid!r}")
        enrolled_trials.setdefault(pid, set()).add(tid)

    all_criteria = {
        INCLUSION: sorted(
            (t.trial_id, c.index) for t in trials for c in t.inclusion
        ),
        EXCLUSION: sorted(
            (t.trial_id, c.index) for t in trials for c in t.exclusion
        ),
    }

    rng = np.random.default_rng(seed)
    pairs: list[LabeledPair] = []
    for pid, tid in enrollments:
        trial = trials_by_id[tid]
        own = enrolled_trials[pid]
        for criterion in trial.criteria:
            default = "match" if criterion.polarity == INCLUSION else "mismatch"
            label = default
            if labels is not None:
                label = labels.get((pid, tid, criterion.polarity, criterion.index), default)
            pairs.append(
                LabeledPair(pid, tid, criterion.polarity, criterion.index, label)
            )
            for polarity in (INCLUSION, EXCLUSION):
                candidates = [
                    key for key in all_criteria[polarity] if key[0] not in own
                ]
                if not candidates:
                    continue
                o_tid, o_idx = candidates[int(rng.integers(len(candidates)))]
                pairs.append(LabeledPair(pid, o_tid, polarity, o_idx, "unknown"))

    patient_ids = sorted({p.patient_id for p in patients})
    order = [patient_ids[i] for i in rng.permutation(len(patient_ids))]
    n_test = int(round(0.3 * len(order)))
    test_ids = set(order[:n_test])
    rest = order[n_test:]
    n_val = int(round(0.1 * len(rest)))
    val_ids = set(rest[:n_val])
    split_of = {
        pid: ("test" if pid in test_ids else "val" if pid in val_ids else "train")
        for pid in patient_ids
    }
    by_split: dict[str, list[LabeledPair]] = {"train": [], "val": [], "test": []}
    for pair in pairs:
        by_split[split_of[pair.patient_id]].append(pair)
    return Dataset(
        pairs=pairs,
        train_pairs=by_split["train"],
        val_pairs=by_split["val"],
        test_pairs=by_split["test"],
        split_of=split_of,
    )


# --- constant per-pair inputs ---

@dataclass
class PreparedPatient:
    updates: PreparedUpdates
    demo_vec: np.ndarray
    n_visits: int


@dataclass
class PreparedData:
    patients: dict[str, PreparedPatient]
    criteria: dict[tuple[str, str, int], np.ndarray] = field(default_factory=dict)


def prepare_data(
    patients: list[Patient],
    trials: list[Trial],
    taxonomies: dict[str, Taxonomy],
    encoder: Encoder,
    policy: str = "error",
) -> PreparedData:
    """Precomputes everything that does not depend on trainable parameters:
    pooled visit vectors, demographics features, and token matrices."""
    concept_cache: dict[str, np.ndarray] = {}
    prepared_patients = {}
    for p in patients:
        prepared_patients[p.patient_id] = PreparedPatient(
            updates=prepare_patient_updates(
                taxonomies, encoder, p, policy, concept_cache
            ),
            demo_vec=demo_features(p.demographics),
            n_visits=len(p.visits),
        )
    criteria = {}
    for t in trials:
        for c in t.criteria:
            criteria[(t.trial_id, c.polarity, c.index)] = encoder.encode_tokens(
                c.text
            ).vectors
    return PreparedData(patients=prepared_patients, criteria=criteria)


def _one_hot(index: int) -> np.ndarray:
    y = np.zeros(len(CLASSES))
    y[index] = 1.0
    return y


def pair_forward(params, dims: ModelDims, prep: PreparedData, pair: LabeledPair, config: TrainConfig):
    """Returns (loss, pred, cache, distance info)."""
    tokens = prep.criteria[(pair.trial_id, pair.polarity, pair.criterion_index)]
    patient = prep.patients[pair.patient_id]
    pred, cache = forward_pair(params, dims, tokens, patient.updates, patient.demo_vec)
    cls_loss = classification_loss(pred.probs, _one_hot(pair.y_index()))
    dist_loss, info = 0.0, None
    if config.use_distance_loss:
        dist_loss, info = distance_loss_with_info(
            pair_query(cache), pred.retrieved, pair.polarity, pair.label, config.margin
        )
    return cls_loss + dist_loss, pred, cache, info


def pair_backward(params, dims, pair, pred, cache, info, grads, scale: float) -> None:
    dprobs = classification_loss_backward(pred.probs, _one_hot(pair.y_index())) * scale
    dlogits = softmax_backward(pred.probs, dprobs)
    dquery_extra = dret_extra = None
    if info is not None:
        dquery_extra, dret_extra = distance_loss_backward(info, scale)
    backward_pair(
        params, dims, cache, dlogits, grads,
        dquery_extra=dquery_extra, dretrieved_extra=dret_extra,
    )


def batch_loss_and_grads(params, dims, prep, batch: list[LabeledPair], config) -> tuple[float, dict]:
    """Mean loss over the batch plus accumulated gradients of that mean."""
    if not batch:
        raise EmptyBatch("no pairs in batch")
    grads = zeros_like_params(params)
    scale = 1.0 / len(batch)
    losses = []
    for pair in batch:
        loss, pred, cache, info = pair_forward(params, dims, prep, pair, config)
        losses.append(loss)
        pair_backward(params, dims, pair, pred, cache, info, grads, scale)
    return total_loss(losses), grads


# --- optimizer ---

class Adam:
    """Adam with bias correction; state keyed like the parameter dict."""

    def __init__(self, params: dict, config: TrainConfig):
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in sorted(params):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# --- training loop ---

def predictions_for(params, dims, prep, pairs, config) -> list[tuple[np.ndarray, str]]:
    out = []
    for pair in pairs:
        _, pred, _, _ = pair_forward(params, dims, prep, pair, config)
        out.append((pred.probs, pair.label))
    return out


def train(
    params: dict,
    dims: ModelDims,
    prep: PreparedData,
    dataset: Dataset,
    config: TrainConfig,
    log=None,
):
    """Mini-batch Adam on the composite loss; returns (best params by
    validation accuracy, per-epoch metrics list)."""
    if not dataset.train_pairs:
        raise EmptyBatch("empty training split")
    rng = np.random.default_rng(config.seed)
    opt = Adam(params, config)
    best_params = copy.deepcopy(params)
    best_acc = -1.0
    metrics: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(dataset.train_pairs))
        loss_sum = 0.0
        seen = 0
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [
                dataset.train_pairs[i]
                for i in order[start : start + config.batch_size]
            ]
            loss, grads = batch_loss_and_grads(params, dims, prep, batch, config)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"epoch {epoch} batch {batch_no}: loss {loss!r} "
                    f"(first pair {batch[0]})"
                )
            opt.step(params, grads)
            loss_sum += loss * len(batch)
            seen += len(batch)
        val = evaluation.criteria_metrics(
            predictions_for(params, dims, prep, dataset.val_pairs, config)
        ) if dataset.val_pairs else {"accuracy": float("nan"), "auroc_micro": None, "auprc_micro": None}
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / max(seen, 1),
            "val_accuracy": val["accuracy"],
            "val_auroc": val["auroc_micro"],
            "val_auprc": val["auprc_micro"],
            "wall_seconds": time.perf_counter() - started,
        }
        metrics.append(row)
        if log is not None:
            log(row)
        acc = row["val_accuracy"]
        if np.isnan(acc):
            best_params = copy.deepcopy(params)
        elif acc > best_acc:
            best_acc = acc
            best_params = copy.deepcopy(params)
    return best_params, metrics


# --- finite-difference verification ---

@dataclass
class GradCheckEntry:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst: list[GradCheckEntry]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    params: dict,
    dims: ModelDims,
    prep: PreparedData,
    pairs: list[LabeledPair],
    config: TrainConfig,
    tolerance: float = 1e-4,
    analytic: dict | None = None,
) -> GradCheckReport:
    """Central finite differences over every trainable scalar against the
    hand-written backward pass (or a supplied gradient dict)."""
    if analytic is None:
        _, analytic = batch_loss_and_grads(params, dims, prep, pairs, config)

    def loss_at() -> float:
        losses = [
            pair_forward(params, dims, prep, pair, config)[0] for pair in pairs
        ]
        return total_loss(losses)

    entries: list[GradCheckEntry] = []
    max_rel = 0.0
    n = 0
    for name in sorted(params):
        tensor = params[name]
        grad = analytic[name]
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            theta = tensor[idx]
            h = 1e-5 * max(1.0, abs(theta))
            tensor[idx] = theta + h
            up = loss_at()
            tensor[idx] = theta - h
            down = loss_at()
            tensor[idx] = theta
            numeric = (up - down) / (2.0 * h)
            ga = float(grad[idx])
            # The 1e-6 denominator floor switches near-zero gradients to an
            # absolute comparison: the difference quotient carries roundoff
            # of order eps*|loss|/h (~1e-11), which would swamp a true
            # relative error once |grad| drops toward that floor.
            rel = abs(ga - numeric) / max(1e-6, abs(ga) + abs(numeric))
            n += 1
            if rel > max_rel:
                max_rel = rel
            entries.append(GradCheckEntry(name, idx, ga, numeric, rel))
            it.iternext()
    entries.sort(key=lambda ent: ent.rel_error, reverse=True)
    return GradCheckReport(
        max_rel_error=max_rel, n_checked=n, worst=entries[:10], tolerance=tolerance
    )


def write_metrics_csv(metrics: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "train_loss", "val_accuracy", "val_auroc", "val_auprc", "wall_seconds"]
        )
        for row in metrics:
            writer.writerow(
                [
                    row["epoch"],
                    f"{row['train_loss']:.6f}",
                    _fmt(row["val_accuracy"]),
                    _fmt(row["val_auroc"]),
                    _fmt(row["val_auprc"]),
                    f"{row['wall_seconds']:.3f}",
                ]
            )


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return f"{value:.6f}"
