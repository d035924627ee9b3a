"""Patient records and the 12-slot hierarchical memory built from visits.

Each patient record is a time-ordered visit sequence; every visit carries
leaf codes of up to three types (diagnoses, medications, procedures). For
each code type and taxonomy level, the codes in a visit are mapped to the
description embedding of their ancestor at that level and max-pooled into
one vector per (type, level). Those pooled vectors drive an erase/add gate
pair that updates the matching memory slot:

    erase = sigmoid(erase_w @ pooled + erase_b)
    add   = tanh(add_w @ pooled + add_b)
    slot <- slot * (1 - erase) + add

Gate parameters are shared across all 12 slots. Slots start at zero and
slots of never-seen (type, level) pairs stay zero. The pooled input
vectors depend only on the taxonomy and the frozen text encoder, so they
can be precomputed once per patient; only the gate math depends on
trainable parameters.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimMismatch,
    IoError,
    MalformedRow,
    MissingCodeWarning,
    UnknownCode,
)
from .nn import affine, affine_backward, sigmoid, uniform_init
from .taxonomy import CODE_TYPES, TAXONOMY_DEPTH, Taxonomy, ancestor_chain
from .text_encoding import Encoder, concept_embedding

SLOT_ORDER: tuple[tuple[str, int], ...] = tuple(
    (code_type, level)
    for code_type in CODE_TYPES
    for level in range(1, TAXONOMY_DEPTH + 1)
)
N_SLOTS = len(SLOT_ORDER)
SLOT_INDEX = {key: i for i, key in enumerate(SLOT_ORDER)}

GENDERS = ("female", "male", "other")
AGE_NORM = 120.0
DEMO_DIM = 1 + len(GENDERS)

_VISIT_KEYS = {"diagnosis": "dx", "medication": "rx", "procedure": "px"}


@dataclass(frozen=True)
class Visit:
    t: int
    diagnoses: tuple[str, ...] = ()
    medications: tuple[str, ...] = ()
    procedures: tuple[str, ...] = ()

    def codes_of(self, code_type: str) -> tuple[str, ...]:
        return {
            "diagnosis": self.diagnoses,
            "medication": self.medications,
            "procedure": self.procedures,
        }[code_type]

    def total_codes(self) -> int:
        return len(self.diagnoses) + len(self.medications) + len(self.procedures)


@dataclass(frozen=True)
class Demographics:
    age: float
    gender: str


@dataclass
class Patient:
    patient_id: str
    demographics: Demographics
    visits: list[Visit] = field(default_factory=list)

    def __post_init__(self):
        if not self.visits:
            raise MalformedRow(f"patient {self.patient_id}: no visits")
        ords = [v.t for v in self.visits]
        if any(b <= a for a, b in zip(ords, ords[1:])):
            raise MalformedRow(
                f"patient {self.patient_id}: visit ordinals not strictly increasing"
            )
        if any(v.total_codes() == 0 for v in self.visits):
            raise MalformedRow(f"patient {self.patient_id}: visit without codes")
        if not math.isfinite(self.demographics.age) or self.demographics.age < 0:
            raise MalformedRow(f"patient {self.patient_id}: bad age")


@dataclass
class MemoryState:
    slots: np.ndarray  # (12, mem_dim)

    def slot(self, code_type: str, level: int) -> np.ndarray:
        return self.slots[SLOT_INDEX[(code_type, level)]]


def normalize_gender(raw: str) -> str:
    g = raw.strip().lower()
    if g in ("f", "female"):
        return "female"
    if g in ("m", "male"):
        return "male"
    return "other"


def demo_features(demo: Demographics) -> np.ndarray:
    vec = np.zeros(DEMO_DIM)
    vec[0] = demo.age / AGE_NORM
    vec[1 + GENDERS.index(normalize_gender(demo.gender))] = 1.0
    return vec


def init_memory_params(rng: np.random.Generator, embed_dim: int, mem_dim: int) -> dict[str, np.ndarray]:
    params = {
        "mem.erase.w": uniform_init(rng, (mem_dim, embed_dim), embed_dim),
        "mem.erase.b": uniform_init(rng, (mem_dim,), embed_dim),
        "mem.add.w": uniform_init(rng, (mem_dim, embed_dim), embed_dim),
        "mem.add.b": uniform_init(rng, (mem_dim,), embed_dim),
    }
    # bias the erase gate shut so a fresh model retains visit content
    # instead of halving the slot on every update
    params["mem.erase.b"] -= 2.0
    # widen the add gate's initial output range: with fan-in scaled draws
    # the tanh pre-activations start so close to zero that populated slots
    # are nearly indistinguishable from empty ones, and training stalls
    # before attention learns to prefer occupied slots
    params["mem.add.w"] *= 2.0
    params["mem.add.b"] *= 2.0
    return params


def gates(params: dict, pooled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pre_erase, _ = affine(pooled, params["mem.erase.w"], params["mem.erase.b"])
    pre_add, _ = affine(pooled, params["mem.add.w"], params["mem.add.b"])
    return sigmoid(pre_erase), np.tanh(pre_add)


def apply_update(slot: np.ndarray, erase: np.ndarray, add: np.ndarray) -> np.ndarray:
    if slot.shape != erase.shape or slot.shape != add.shape:
        raise DimMismatch(
            f"slot {slot.shape} vs erase {erase.shape} vs add {add.shape}"
        )
    return slot * (1.0 - erase) + add


def visit_level_embeddings(
    taxonomies: dict[str, Taxonomy],
    encoder: Encoder,
    visit: Visit,
    policy: str = "error",
    cache: dict | None = None,
) -> dict[tuple[str, int], np.ndarray]:
    """Pooled ancestor-description embeddings per (code type, level).

    Types absent from the visit (or fully skipped under the skip policy)
    produce no entry. policy: "error" raises on codes missing from the
    taxonomy; "skip" warns and drops them.
    """
    if policy not in ("error", "skip"):
        raise ValueError(f"bad missing-code policy {policy!r}")
    out: dict[tuple[str, int], np.ndarray] = {}
    for code_type in CODE_TYPES:
        codes = visit.codes_of(code_type)
        if not codes:
            continue
        tax = taxonomies[code_type]
        per_level: list[list[np.ndarray]] = [[] for _ in range(TAXONOMY_DEPTH)]
        for code in codes:
            try:
                chain = ancestor_chain(tax, code)
            except UnknownCode:
                if policy == "error":
                    raise
                warnings.warn(
                    f"skipping unknown {code_type} code {code!r}",
                    MissingCodeWarning,
                    stacklevel=2,
                )
                continue
            for level, node_id in enumerate(chain, start=1):
                desc = tax.nodes[node_id].description
                vec = None if cache is None else cache.get(desc)
                if vec is None:
                    vec = concept_embedding(encoder, desc)
                    if cache is not None:
                        cache[desc] = vec
                per_level[level - 1].append(vec)
        for level in range(1, TAXONOMY_DEPTH + 1):
            vecs = per_level[level - 1]
            if vecs:
                out[(code_type, level)] = np.max(vecs, axis=0)
    return out


PreparedUpdates = list[tuple[int, np.ndarray]]


def prepare_patient_updates(
    taxonomies: dict[str, Taxonomy],
    encoder: Encoder,
    patient: Patient,
    policy: str = "error",
    cache: dict | None = None,
) -> PreparedUpdates:
    """Parameter-free part of patient encoding: (slot index, pooled vector)
    pairs in update order. Safe to compute once and reuse across epochs."""
    updates: PreparedUpdates = []
    for visit in patient.visits:
        pooled = visit_level_embeddings(taxonomies, encoder, visit, policy, cache)
        for slot_key in SLOT_ORDER:
            if slot_key in pooled:
                updates.append((SLOT_INDEX[slot_key], pooled[slot_key]))
    return updates


def encode_prepared(params: dict, updates: PreparedUpdates, mem_dim: int):
    """Runs the gated update chain; returns (slots, cache) for backprop."""
    slots = np.zeros((N_SLOTS, mem_dim))
    records = []
    for slot_idx, pooled in updates:
        erase, add = gates(params, pooled)
        prev = slots[slot_idx].copy()   # row is overwritten below
        records.append((slot_idx, pooled, erase, add, prev))
        slots[slot_idx] = apply_update(prev, erase, add)
    return slots, records


def encode_prepared_backward(params: dict, records, dslots: np.ndarray, grads: dict) -> None:
    """Accumulates gate-parameter gradients for upstream dL/dslots."""
    dmem = dslots.copy()
    for slot_idx, pooled, erase, add, prev in reversed(records):
        d_here = dmem[slot_idx].copy()
        derase = -d_here * prev
        dadd = d_here
        dmem[slot_idx] = d_here * (1.0 - erase)
        dpre_erase = derase * erase * (1.0 - erase)
        affine_backward(pooled, params["mem.erase.w"], dpre_erase,
                        grads["mem.erase.w"], grads["mem.erase.b"])
        dpre_add = dadd * (1.0 - add * add)
        affine_backward(pooled, params["mem.add.w"], dpre_add,
                        grads["mem.add.w"], grads["mem.add.b"])


def encode_patient(
    taxonomies: dict[str, Taxonomy],
    encoder: Encoder,
    params: dict,
    patient: Patient,
    policy: str = "error",
) -> MemoryState:
    mem_dim = params["mem.erase.b"].shape[0]
    updates = prepare_patient_updates(taxonomies, encoder, patient, policy)
    slots, _ = encode_prepared(params, updates, mem_dim)
    return MemoryState(slots=slots)


# --- patient file IO ---

def load_patients(path) -> list[Patient]:
    """Read the patient JSONL format:
    {"patient_id", "age", "gender", "visits": [{"t", "dx", "rx", "px"}]}.
    """
    patients = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IoError(f"{path}: line {lineno}: {exc}") from None
            try:
                patient = _patient_from_obj(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRow(f"{path}: line {lineno}: {exc}") from None
            except MalformedRow as exc:
                raise MalformedRow(f"{path}: line {lineno}: {exc}") from None
            if patient.patient_id in seen:
                raise MalformedRow(
                    f"{path}: line {lineno}: duplicate patient {patient.patient_id!r}"
                )
            seen.add(patient.patient_id)
            patients.append(patient)
    return patients


def _patient_from_obj(obj: dict) -> Patient:
    visits = [
        Visit(
            t=int(v["t"]),
            diagnoses=tuple(v.get("dx", ())),
            medications=tuple(v.get("rx", ())),
            procedures=tuple(v.get("px", ())),
        )
        for v in obj["visits"]
    ]
    return Patient(
        patient_id=str(obj["patient_id"]),
        demographics=Demographics(age=float(obj["age"]), gender=str(obj["gender"])),
        visits=visits,
    )


def save_patients(patients: list[Patient], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in patients:
            fh.write(
                json.dumps(
                    {
                        "patient_id": p.patient_id,
                        "age": p.demographics.age,
                        "gender": p.demographics.gender,
                        "visits": [
                            {
                                "t": v.t,
                                "dx": list(v.diagnoses),
                                "rx": list(v.medications),
                                "px": list(v.procedures),
                            }
                            for v in p.visits
                        ],
                    }
                )
                + "\n"
            )
