"""Scikit-learn style wrapper around the pair-matching model.

`CriteriaMatcher` exposes fit/predict over (patient, criterion) pairs so
the model slots into sklearn tooling (cross-validation, pipelines,
`clone`). The heavy lifting stays in the functional modules; this class
just owns the learned state.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .ec_parser import Criterion
from .matcher import CLASSES
from .memory import Patient, demo_features, prepare_patient_updates
from .model import ModelDims, forward_pair, init_params
from .text_encoding import FeatureHashEncoder
from .training import (
    Dataset,
    LabeledPair,
    PreparedData,
    PreparedPatient,
    TrainConfig,
    train,
)
from .validation import check_probability_vector


class CriteriaMatcher(BaseEstimator, ClassifierMixin):
    """Classifies (patient record, eligibility criterion) pairs.

    Parameters follow sklearn conventions: everything passed to
    ``__init__`` is stored verbatim and only validated in :meth:`fit`.

    Parameters
    ----------
    taxonomies : dict[str, Taxonomy]
        Code hierarchies keyed by code type. Required for fitting.
    embed_dim, conv_dim, mem_dim, n_highway : int
        Model dimensions (token embedding width, per-kernel conv
        channels, memory slot width, highway depth).
    window : int
        Context window of the hashing token encoder.
    learning_rate, batch_size, epochs, margin : float/int
        Optimizer settings and the hinge margin of the embedding loss.
    use_distance_loss : bool
        Disable to train on the classification term alone.
    val_fraction : float
        Share of pairs held out to pick the best epoch.
    missing_code_policy : str
        "error" or "skip" for record codes absent from the taxonomies.
    random_state : int
        Seed for init, batching, and the validation split.
    """

    def __init__(
        self,
        taxonomies=None,
        embed_dim: int = 64,
        conv_dim: int = 16,
        mem_dim: int = 32,
        n_highway: int = 3,
        window: int = 3,
        learning_rate: float = 0.001,
        batch_size: int = 32,
        epochs: int = 20,
        margin: float = 0.3,
        use_distance_loss: bool = True,
        val_fraction: float = 0.1,
        missing_code_policy: str = "error",
        random_state: int = 0,
    ):
        self.taxonomies = taxonomies
        self.embed_dim = embed_dim
        self.conv_dim = conv_dim
        self.mem_dim = mem_dim
        self.n_highway = n_highway
        self.window = window
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.margin = margin
        self.use_distance_loss = use_distance_loss
        self.val_fraction = val_fraction
        self.missing_code_policy = missing_code_policy
        self.random_state = random_state

    # X rows are (Patient, Criterion) tuples.
    def _check_pairs(self, X) -> list[tuple[Patient, Criterion]]:
        pairs = list(X)
        for row in pairs:
            if not (isinstance(row, tuple) and len(row) == 2):
                raise ValueError(
                    f"each sample must be a (patient, criterion) tuple, got {row!r}"
                )
            patient, criterion = row
            if not isinstance(patient, Patient) or not isinstance(criterion, Criterion):
                raise ValueError(
                    "expected (Patient, Criterion), got "
                    f"({type(patient).__name__}, {type(criterion).__name__})"
                )
        return pairs

    def _prepare(self, pairs) -> PreparedData:
        prep = PreparedData(patients={}, criteria={})
        cache: dict[str, np.ndarray] = {}
        for patient, criterion in pairs:
            if patient.patient_id not in prep.patients:
                prep.patients[patient.patient_id] = PreparedPatient(
                    updates=prepare_patient_updates(
                        self.taxonomies,
                        self.encoder_,
                        patient,
                        self.missing_code_policy,
                        cache,
                    ),
                    demo_vec=demo_features(patient.demographics),
                    n_visits=len(patient.visits),
                )
            key = (criterion.trial_id, criterion.polarity, criterion.index)
            if key not in prep.criteria:
                prep.criteria[key] = self.encoder_.encode_tokens(criterion.text).vectors
        return prep

    def fit(self, X, y):
        """Trains on labeled pairs; y entries must be one of CLASSES."""
        if not self.taxonomies:
            raise ValueError("taxonomies must be provided before fitting")
        pairs = self._check_pairs(X)
        labels = [str(label) for label in y]
        if len(labels) != len(pairs):
            raise ValueError(f"X has {len(pairs)} rows but y has {len(labels)}")
        bad = sorted(set(labels) - set(CLASSES))
        if bad:
            raise ValueError(f"unknown labels {bad}; expected one of {CLASSES}")
        if not pairs:
            raise ValueError("cannot fit on an empty dataset")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")

        self.encoder_ = FeatureHashEncoder(
            embed_dim=self.embed_dim, seed=self.random_state, window=self.window
        )
        self.dims_ = ModelDims(
            embed_dim=self.embed_dim,
            conv_dim=self.conv_dim,
            mem_dim=self.mem_dim,
            n_highway=self.n_highway,
        )
        self.config_ = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            margin=self.margin,
            seed=self.random_state,
            use_distance_loss=self.use_distance_loss,
        )
        prep = self._prepare(pairs)
        labeled = [
            LabeledPair(p.patient_id, c.trial_id, c.polarity, c.index, label)
            for (p, c), label in zip(pairs, labels)
        ]
        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(len(labeled))
        n_val = int(round(self.val_fraction * len(labeled)))
        val = [labeled[i] for i in order[:n_val]]
        tr = [labeled[i] for i in order[n_val:]]
        dataset = Dataset(
            pairs=labeled, train_pairs=tr, val_pairs=val, test_pairs=[], split_of={}
        )
        params = init_params(self.dims_, self.random_state)
        self.params_, self.history_ = train(
            params, self.dims_, prep, dataset, self.config_
        )
        self.classes_ = np.array(CLASSES)
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities per pair, columns ordered like classes_."""
        check_is_fitted(self, "params_")
        pairs = self._check_pairs(X)
        prep = self._prepare(pairs)
        rows = []
        for patient, criterion in pairs:
            tokens = prep.criteria[(criterion.trial_id, criterion.polarity, criterion.index)]
            prepped = prep.patients[patient.patient_id]
            pred, _ = forward_pair(
                self.params_, self.dims_, tokens, prepped.updates, prepped.demo_vec
            )
            check_probability_vector(pred.probs)
            rows.append(pred.probs)
        return np.vstack(rows) if rows else np.empty((0, len(CLASSES)))

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]
