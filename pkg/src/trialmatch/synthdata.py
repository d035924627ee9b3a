"""Seeded synthetic taxonomies, trials, patients, and exact ground truth.

Construction scheme:

* Each code type gets a forest of pseudo-word concepts. A node's
  description is its parent's description plus one fresh word, so a
  description at level L has L words and every descendant's description
  contains its ancestors' words. Criterion texts embed a concept
  description verbatim, which guarantees token overlap between a
  criterion and the records it should match.
* Every trial owns a distinct (code type, root) theme. Concept inclusion
  criteria reference nodes inside the theme subtree; concept exclusion
  criteria reference deeper in-theme nodes, preferring children of
  inclusion concepts (an enrolled record then shares the excluded node's
  ancestor words without containing the node itself), always leaving
  every inclusion concept a witness leaf outside all excluded subtrees.
* Patients enroll in exactly one trial: their visits carry witness
  leaves for each inclusion concept, avoid excluded subtrees, and add
  noise leaves drawn only from roots no trial uses. Cross-trial pairs
  therefore share no theme content.
* A small fraction of criteria are demographic predicates (age/gender)
  whose text names the trial's theme word, keeping them resolvable from
  text plus record content.

The oracle rule: a patient covers a node when some visit has a leaf whose
ancestor chain contains it. Inclusion: match if covered / predicate holds,
else unknown. Exclusion: mismatch if NOT covered / predicate fails, else
unknown. Generated enrollments satisfy every criterion by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .ec_parser import EXCLUSION, INCLUSION, PHASES
from .errors import InfeasibleConfig, IoError, MalformedRow, UnknownConcept
from .memory import Demographics, Patient, Visit
from .taxonomy import CODE_TYPES, TAXONOMY_DEPTH, Taxonomy, TaxonomyNode
from .text_encoding import tokenize

_TYPE_PREFIX = {"diagnosis": "D", "medication": "M", "procedure": "P"}
_TYPE_NOUN = {"diagnosis": "disorder", "medication": "drug", "procedure": "procedure"}

_CONSONANTS = "bdfglmnprstvz"
_VOWELS = "aeiou"

INCLUSION_TEMPLATES = {
    "diagnosis": (
        "confirmed {d}",
        "diagnosis of {d}",
        "documented {d}",
    ),
    "medication": (
        "taking {d}",
        "treated with {d}",
        "receiving {d}",
    ),
    "procedure": (
        "prior {d}",
        "underwent {d}",
        "completed {d}",
    ),
}

EXCLUSION_TEMPLATES = {
    "diagnosis": (
        "no {d}",
        "without {d}",
        "never had {d}",
    ),
    "medication": (
        "not taking {d}",
        "no use of {d}",
        "never received {d}",
    ),
    "procedure": (
        "no prior {d}",
        "never underwent {d}",
        "without {d}",
    ),
}

DEMO_TEMPLATES = {
    (INCLUSION, "age_over"): "age over {x} for {w}",
    (INCLUSION, "age_under"): "age under {x} for {w}",
    (INCLUSION, "gender_is"): "{g} participants for {w}",
    (EXCLUSION, "age_over"): "not age over {x} for {w}",
    (EXCLUSION, "age_under"): "not age under {x} for {w}",
    (EXCLUSION, "gender_is"): "no {g} participants for {w}",
}

_RESERVED_WORDS = set()
for _group in (INCLUSION_TEMPLATES, EXCLUSION_TEMPLATES):
    for _templates in _group.values():
        for _t in _templates:
            _RESERVED_WORDS.update(tokenize(_t))
for _t in DEMO_TEMPLATES.values():
    _RESERVED_WORDS.update(tokenize(_t))
_RESERVED_WORDS.update(("female", "male", "other"))
_RESERVED_WORDS.update(_TYPE_NOUN.values())

AGE_MIN, AGE_MAX = 18, 90


@dataclass
class SynthConfig:
    seed: int = 0
    n_patients: int = 200
    n_trials: int = 20
    n_roots: int = 8
    branching: int = 2
    visits_range: tuple[int, int] = (2, 5)
    codes_per_visit: tuple[int, int] = (2, 3)
    inclusion_range: tuple[int, int] = (2, 4)
    exclusion_range: tuple[int, int] = (1, 3)
    demo_rate: float = 0.1
    noise_leaves_range: tuple[int, int] = (0, 1)

    def __post_init__(self):
        for name in ("n_patients", "n_trials", "n_roots", "branching"):
            if getattr(self, name) < 1:
                raise InfeasibleConfig(f"{name} must be at least 1")
        for name in ("visits_range", "codes_per_visit", "inclusion_range",
                     "exclusion_range", "noise_leaves_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise InfeasibleConfig(f"bad range {name}={lo, hi}")
        if self.inclusion_range[0] < 1 or self.exclusion_range[0] < 1:
            raise InfeasibleConfig("need at least one criterion per polarity")
        if not 0.0 <= self.demo_rate <= 1.0:
            raise InfeasibleConfig("demo_rate must lie in [0, 1]")


@dataclass(frozen=True)
class SynthCriterion:
    polarity: str
    index: int
    text: str
    kind: str                      # "concept" | "demographic"
    code_type: str | None = None   # concept criteria
    node_id: str | None = None
    predicate: tuple | None = None  # ("age_over", 50) / ("gender_is", "male")


@dataclass
class SynthTrial:
    trial_id: str
    phase: str
    theme_type: str
    theme_root: str
    criteria: list[SynthCriterion] = field(default_factory=list)
    age_window: tuple[int, int] = (AGE_MIN, AGE_MAX)
    allowed_genders: tuple[str, ...] = ("female", "male", "other")

    def of_polarity(self, polarity: str) -> list[SynthCriterion]:
        return [c for c in self.criteria if c.polarity == polarity]

    def eligibility_text(self) -> str:
        parts = ["Inclusion Criteria:"]
        parts.extend(f"- {c.text}" for c in self.of_polarity(INCLUSION))
        parts.append("")
        parts.append("Exclusion Criteria:")
        parts.extend(f"- {c.text}" for c in self.of_polarity(EXCLUSION))
        return "\n".join(parts) + "\n"


@dataclass
class SynthResult:
    config: SynthConfig
    taxonomies: dict[str, Taxonomy]
    trials: list[SynthTrial]
    patients: list[Patient]
    enrollments: list[tuple[str, str]]
    labels: list[dict]


class _WordMint:
    """Unique pronounceable pseudo-words, disjoint from template words."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: set[str] = set(_RESERVED_WORDS)

    def word(self) -> str:
        for _ in range(1000):
            n_syll = int(self.rng.integers(2, 4))
            parts = []
            for _ in range(n_syll):
                parts.append(_CONSONANTS[int(self.rng.integers(len(_CONSONANTS)))])
                parts.append(_VOWELS[int(self.rng.integers(len(_VOWELS)))])
            w = "".join(parts)
            if w not in self.used:
                self.used.add(w)
                return w
        raise InfeasibleConfig("pseudo-word space exhausted")


def _build_taxonomy(code_type: str, config: SynthConfig, mint: _WordMint) -> Taxonomy:
    nodes: dict[str, TaxonomyNode] = {}

    def add(node_id: str, level: int, parent_id: str | None, description: str):
        nodes[node_id] = TaxonomyNode(
            node_id=node_id,
            level=level,
            parent_id=parent_id,
            code_type=code_type,
            description=description,
        )

    prefix = _TYPE_PREFIX[code_type]
    frontier = []
    for r in range(config.n_roots):
        node_id = f"{prefix}{r}"
        # every description under one code type repeats the type's head
        # noun, the way clinical vocabularies repeat "disorder" or "drug"
        add(node_id, 1, None, f"{mint.word()} {_TYPE_NOUN[code_type]}")
        frontier.append(node_id)
    for level in range(2, TAXONOMY_DEPTH + 1):
        next_frontier = []
        for parent_id in frontier:
            for child in range(config.branching):
                node_id = f"{parent_id}.{child}"
                desc = f"{nodes[parent_id].description} {mint.word()}"
                add(node_id, level, parent_id, desc)
                next_frontier.append(node_id)
        frontier = next_frontier
    return Taxonomy(code_type=code_type, nodes=nodes)


def _subtree_by_level(tax: Taxonomy, root_id: str) -> dict[int, list[str]]:
    out: dict[int, list[str]] = {1: [root_id]}
    for level in range(2, TAXONOMY_DEPTH + 1):
        parents = set(out[level - 1])
        out[level] = sorted(
            n.node_id
            for n in tax.nodes.values()
            if n.level == level and n.parent_id in parents
        )
    return out


def _leaves_under(tax: Taxonomy, node_id: str) -> list[str]:
    node = tax.nodes[node_id]
    leaves = []
    for leaf in tax.leaves():
        cur = leaf
        while cur is not None:
            if cur.node_id == node.node_id:
                leaves.append(leaf.node_id)
                break
            cur = tax.nodes[cur.parent_id] if cur.parent_id else None
    return sorted(leaves)


def _is_ancestor_or_self(tax: Taxonomy, maybe_ancestor: str, node_id: str) -> bool:
    cur = tax.nodes[node_id]
    while cur is not None:
        if cur.node_id == maybe_ancestor:
            return True
        cur = tax.nodes[cur.parent_id] if cur.parent_id else None
    return False


def _sample_demo_predicate(rng, polarity: str):
    # Gender gets half the weight, and age cuts come from a two-value
    # menu: a handful of recurring threshold tokens is something a small
    # model can tie to the numeric age feature, 41 distinct ones is not.
    roll = rng.random()
    if roll < 0.5:
        return "gender_is", ("female", "male")[int(rng.integers(2))]
    kind = "age_over" if roll < 0.75 else "age_under"
    return kind, (40, 60)[int(rng.integers(2))]


def _apply_demo_constraint(window, genders, polarity, predicate):
    lo, hi = window
    kind, value = predicate
    genders = set(genders)
    if polarity == INCLUSION:
        if kind == "age_over":
            lo = max(lo, value + 1)
        elif kind == "age_under":
            hi = min(hi, value - 1)
        else:
            genders &= {value}
    else:
        if kind == "age_over":
            hi = min(hi, value)
        elif kind == "age_under":
            lo = max(lo, value)
        else:
            genders -= {value}
    return (lo, hi), genders


def _build_trial(
    rng: np.random.Generator,
    index: int,
    theme: tuple[str, str],
    taxonomies: dict[str, Taxonomy],
    config: SynthConfig,
) -> SynthTrial:
    theme_type, root_id = theme
    tax = taxonomies[theme_type]
    by_level = _subtree_by_level(tax, root_id)
    theme_word = tax.nodes[root_id].description.split()[0]
    trial = SynthTrial(
        trial_id=f"SYN-{index:04d}",
        phase=PHASES[int(rng.integers(len(PHASES)))],
        theme_type=theme_type,
        theme_root=root_id,
    )

    m = int(rng.integers(config.inclusion_range[0], config.inclusion_range[1] + 1))
    n = int(rng.integers(config.exclusion_range[0], config.exclusion_range[1] + 1))

    # Which slots become demographic criteria; slot 0 of each polarity stays
    # a concept criterion so the theme is always anchored in content.
    demo_slots = {
        (pol, slot)
        for pol, count in ((INCLUSION, m), (EXCLUSION, n))
        for slot in range(1, count)
        if rng.random() < config.demo_rate
    }

    inclusion_nodes: list[str] = []
    for slot in range(m):
        if (INCLUSION, slot) in demo_slots:
            continue
        for _ in range(100):
            # Mid-depth concepts carry multi-word descriptions, so criterion
            # text and matching records overlap on several tokens. The first
            # concept stays above the bottom level so the exclusion sampler
            # can pick one of its children.
            hi = TAXONOMY_DEPTH if inclusion_nodes else TAXONOMY_DEPTH - 1
            level = int(rng.integers(2, hi + 1))
            node = by_level[level][int(rng.integers(len(by_level[level])))]
            if node not in inclusion_nodes:
                inclusion_nodes.append(node)
                break
        else:
            raise InfeasibleConfig(
                f"trial {trial.trial_id}: cannot pick distinct inclusion concepts"
            )

    n_exc_concepts = sum(
        1 for slot in range(n) if (EXCLUSION, slot) not in demo_slots
    )
    exclusion_nodes: list[str] = []
    for _ in range(100):
        candidate: list[str] = []
        ok = True
        # Prefer children of inclusion concepts: records in this trial then
        # share the parent's whole description with the exclusion text,
        # while records of other trials share none of it.
        parents = [
            inc for inc in inclusion_nodes
            if tax.nodes[inc].level < TAXONOMY_DEPTH
        ]
        for _slot in range(n_exc_concepts):
            for _ in range(100):
                if parents and rng.random() < 0.9:
                    parent = parents[int(rng.integers(len(parents)))]
                    kids = tax.children_of(parent)
                    node = kids[int(rng.integers(len(kids)))].node_id
                else:
                    level = int(rng.integers(2, TAXONOMY_DEPTH + 1))
                    node = by_level[level][int(rng.integers(len(by_level[level])))]
                if node in candidate or node in inclusion_nodes:
                    continue
                if any(_is_ancestor_or_self(tax, node, inc) for inc in inclusion_nodes):
                    continue
                candidate.append(node)
                break
            else:
                ok = False
                break
        if not ok:
            continue
        excluded_leaves = set()
        for node in candidate:
            excluded_leaves.update(_leaves_under(tax, node))
        if all(
            set(_leaves_under(tax, inc)) - excluded_leaves for inc in inclusion_nodes
        ):
            exclusion_nodes = candidate
            break
    else:
        raise InfeasibleConfig(
            f"trial {trial.trial_id}: no feasible exclusion concept set"
        )

    window = (AGE_MIN, AGE_MAX)
    genders = {"female", "male", "other"}

    def build_side(polarity: str, count: int, concept_nodes: list[str]):
        nonlocal window, genders
        templates = (
            INCLUSION_TEMPLATES if polarity == INCLUSION else EXCLUSION_TEMPLATES
        )[theme_type]
        concepts = iter(concept_nodes)
        for slot in range(count):
            if (polarity, slot) in demo_slots:
                for _ in range(50):
                    predicate = _sample_demo_predicate(rng, polarity)
                    new_window, new_genders = _apply_demo_constraint(
                        window, genders, polarity, predicate
                    )
                    if new_window[0] <= new_window[1] and new_genders:
                        window, genders = new_window, new_genders
                        break
                else:
                    raise InfeasibleConfig(
                        f"trial {trial.trial_id}: demographic criteria unsatisfiable"
                    )
                kind, value = predicate
                text = DEMO_TEMPLATES[(polarity, kind)].format(
                    x=value, g=value, w=theme_word
                )
                trial.criteria.append(
                    SynthCriterion(
                        polarity=polarity,
                        index=slot,
                        text=text,
                        kind="demographic",
                        predicate=predicate,
                    )
                )
            else:
                node = next(concepts)
                template = templates[int(rng.integers(len(templates)))]
                text = template.format(d=tax.nodes[node].description)
                trial.criteria.append(
                    SynthCriterion(
                        polarity=polarity,
                        index=slot,
                        text=text,
                        kind="concept",
                        code_type=theme_type,
                        node_id=node,
                    )
                )

    build_side(INCLUSION, m, inclusion_nodes)
    build_side(EXCLUSION, n, exclusion_nodes)
    trial.age_window = window
    trial.allowed_genders = tuple(sorted(genders))

    for criterion in trial.criteria:
        if criterion.kind == "concept":
            desc_tokens = set(tokenize(tax.nodes[criterion.node_id].description))
            if not desc_tokens & set(tokenize(criterion.text)):
                raise InfeasibleConfig(
                    f"criterion text lost its concept tokens: {criterion.text!r}"
                )
    return trial


def covered_nodes(patient: Patient, taxonomies: dict[str, Taxonomy]) -> dict[str, set[str]]:
    """All taxonomy nodes reachable as ancestors of the patient's codes."""
    covered: dict[str, set[str]] = {ct: set() for ct in CODE_TYPES}
    for visit in patient.visits:
        for code_type in CODE_TYPES:
            tax = taxonomies[code_type]
            for code in visit.codes_of(code_type):
                cur = tax.nodes.get(code)
                if cur is None:
                    raise UnknownConcept(f"{code_type} code {code!r} not in taxonomy")
                while cur is not None:
                    covered[code_type].add(cur.node_id)
                    cur = tax.nodes[cur.parent_id] if cur.parent_id else None
    return covered


def _predicate_holds(predicate: tuple, demo: Demographics) -> bool:
    kind, value = predicate
    if kind == "age_over":
        return demo.age > value
    if kind == "age_under":
        return demo.age < value
    if kind == "gender_is":
        from .memory import normalize_gender

        return normalize_gender(demo.gender) == value
    raise UnknownConcept(f"unknown predicate kind {kind!r}")


def oracle_match(
    patient: Patient,
    criterion: SynthCriterion,
    taxonomies: dict[str, Taxonomy],
    covered: dict[str, set[str]] | None = None,
) -> str:
    """Exact required label for a (patient, criterion) pair."""
    if criterion.kind == "demographic":
        satisfied = _predicate_holds(criterion.predicate, patient.demographics)
    else:
        if criterion.node_id is None or criterion.code_type is None:
            raise UnknownConcept("concept criterion without a node reference")
        if criterion.node_id not in taxonomies[criterion.code_type].nodes:
            raise UnknownConcept(f"node {criterion.node_id!r} not in taxonomy")
        if covered is None:
            covered = covered_nodes(patient, taxonomies)
        satisfied = criterion.node_id in covered[criterion.code_type]
    if criterion.polarity == INCLUSION:
        return "match" if satisfied else "unknown"
    return "mismatch" if not satisfied else "unknown"


def _build_patient(
    rng: np.random.Generator,
    index: int,
    trial: SynthTrial,
    taxonomies: dict[str, Taxonomy],
    noise_pool: list[tuple[str, str]],
    config: SynthConfig,
) -> Patient:
    tax = taxonomies[trial.theme_type]
    excluded_leaves = set()
    for c in trial.of_polarity(EXCLUSION):
        if c.kind == "concept":
            excluded_leaves.update(_leaves_under(tax, c.node_id))

    witnesses: list[tuple[str, str]] = []
    for c in trial.of_polarity(INCLUSION):
        if c.kind != "concept":
            continue
        candidates = [
            leaf
            for leaf in _leaves_under(tax, c.node_id)
            if leaf not in excluded_leaves
        ]
        if not candidates:
            raise InfeasibleConfig(
                f"trial {trial.trial_id}: inclusion concept {c.node_id} has no witness"
            )
        pick = candidates[int(rng.integers(len(candidates)))]
        if (trial.theme_type, pick) not in witnesses:
            witnesses.append((trial.theme_type, pick))

    n_noise = int(
        rng.integers(config.noise_leaves_range[0], config.noise_leaves_range[1] + 1)
    )
    noise: list[tuple[str, str]] = []
    if noise_pool:
        for _ in range(n_noise):
            noise.append(noise_pool[int(rng.integers(len(noise_pool)))])

    n_visits = int(rng.integers(config.visits_range[0], config.visits_range[1] + 1))
    codes_lo, codes_hi = config.codes_per_visit
    codes = witnesses + noise
    # Trim surplus noise first so witnesses always survive, then repeat
    # codes until every visit can hold codes_lo; repeats across visits are
    # realistic and exercise the erase gates.
    room = max(n_visits * codes_hi - len(witnesses), 0)
    if len(noise) > room:
        codes = witnesses + noise[:room]
    target = max(n_visits, n_visits * codes_lo)
    fill = witnesses or codes
    pad = 0
    while len(codes) < target:
        codes.append(fill[pad % len(fill)])
        pad += 1

    order = rng.permutation(len(codes))
    shuffled = [codes[i] for i in order]
    base, rem = divmod(len(shuffled), n_visits)
    visits = []
    pos = 0
    for v in range(n_visits):
        size = base + (1 if v < rem else 0)
        chunk = shuffled[pos : pos + size]
        pos += size
        by_type: dict[str, list[str]] = {ct: [] for ct in CODE_TYPES}
        for code_type, leaf in chunk:
            by_type[code_type].append(leaf)
        visits.append(
            Visit(
                t=v + 1,
                diagnoses=tuple(sorted(set(by_type["diagnosis"]))),
                medications=tuple(sorted(set(by_type["medication"]))),
                procedures=tuple(sorted(set(by_type["procedure"]))),
            )
        )

    lo, hi = trial.age_window
    # Sample enrollee ages away from the window edges when there is room,
    # so age criteria separate cleanly in the normalized feature.
    margin = min(3, (hi - lo) // 3)
    age = int(rng.integers(lo + margin, hi - margin + 1))
    genders = trial.allowed_genders
    gender = genders[int(rng.integers(len(genders)))]
    return Patient(
        patient_id=f"P{index:04d}",
        demographics=Demographics(age=float(age), gender=gender),
        visits=visits,
    )


def generate(config: SynthConfig) -> SynthResult:
    """Pure function of the config: same config, same output objects."""
    rng = np.random.default_rng(config.seed)
    mint = _WordMint(rng)
    taxonomies = {ct: _build_taxonomy(ct, config, mint) for ct in CODE_TYPES}

    themes = [
        (ct, f"{_TYPE_PREFIX[ct]}{r}")
        for ct in CODE_TYPES
        for r in range(config.n_roots)
    ]
    if config.n_trials > len(themes):
        raise InfeasibleConfig(
            f"{config.n_trials} trials need distinct themes; only {len(themes)} exist"
        )
    theme_order = rng.permutation(len(themes))
    chosen = [themes[i] for i in theme_order[: config.n_trials]]
    leftovers = [themes[i] for i in theme_order[config.n_trials :]]
    noise_pool = []
    for code_type, root in sorted(leftovers):
        noise_pool.extend(
            (code_type, leaf) for leaf in _leaves_under(taxonomies[code_type], root)
        )

    trials = [
        _build_trial(rng, i, theme, taxonomies, config)
        for i, theme in enumerate(chosen)
    ]

    patients: list[Patient] = []
    enrollments: list[tuple[str, str]] = []
    labels: list[dict] = []
    for i in range(config.n_patients):
        trial = trials[i % len(trials)]
        patient = None
        for _ in range(50):
            candidate = _build_patient(rng, i, trial, taxonomies, noise_pool, config)
            covered = covered_nodes(candidate, taxonomies)
            ok = all(
                oracle_match(candidate, c, taxonomies, covered)
                in ("match", "mismatch")
                for c in trial.criteria
            )
            if ok:
                patient = candidate
                break
        if patient is None:
            raise InfeasibleConfig(
                f"could not build an enrollable patient for {trial.trial_id}"
            )
        patients.append(patient)
        enrollments.append((patient.patient_id, trial.trial_id))
        covered = covered_nodes(patient, taxonomies)
        for criterion in trial.criteria:
            labels.append(
                {
                    "patient_id": patient.patient_id,
                    "trial_id": trial.trial_id,
                    "criterion_index": criterion.index,
                    "polarity": criterion.polarity,
                    "label": oracle_match(patient, criterion, taxonomies, covered),
                }
            )
    return SynthResult(
        config=config,
        taxonomies=taxonomies,
        trials=trials,
        patients=patients,
        enrollments=enrollments,
        labels=labels,
    )


# --- file emission / ingestion ---

def taxonomy_filename(code_type: str) -> str:
    return f"taxonomy_{code_type}.csv"


def write_synth_files(result: SynthResult, out_dir) -> dict[str, str]:
    """Writes every ingestion file; returns {role: path}."""
    from .memory import save_patients
    from .taxonomy import save_taxonomy

    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for code_type, tax in result.taxonomies.items():
        path = os.path.join(out_dir, taxonomy_filename(code_type))
        save_taxonomy(tax, path)
        paths[f"taxonomy_{code_type}"] = path

    trials_path = os.path.join(out_dir, "trials.jsonl")
    with open(trials_path, "w", encoding="utf-8") as fh:
        for trial in result.trials:
            fh.write(
                json.dumps(
                    {
                        "trial_id": trial.trial_id,
                        "phase": trial.phase,
                        "eligibility_text": trial.eligibility_text(),
                    }
                )
                + "\n"
            )
    paths["trials"] = trials_path

    patients_path = os.path.join(out_dir, "patients.jsonl")
    save_patients(result.patients, patients_path)
    paths["patients"] = patients_path

    labels_path = os.path.join(out_dir, "labels.jsonl")
    save_labels(result.labels, labels_path)
    paths["labels"] = labels_path
    return paths


def save_labels(labels: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in labels:
            fh.write(
                json.dumps(
                    {
                        "patient_id": row["patient_id"],
                        "trial_id": row["trial_id"],
                        "criterion_index": row["criterion_index"],
                        "polarity": row["polarity"],
                        "label": row["label"],
                    }
                )
                + "\n"
            )


def load_labels(path) -> list[dict]:
    rows = []
    required = ("patient_id", "trial_id", "criterion_index", "polarity", "label")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IoError(f"{path}: line {lineno}: {exc}") from None
            for key in required:
                if key not in obj:
                    raise MalformedRow(f"{path}: line {lineno}: missing {key!r}")
            if obj["label"] not in ("match", "mismatch", "unknown"):
                raise MalformedRow(
                    f"{path}: line {lineno}: bad label {obj['label']!r}"
                )
            rows.append({k: obj[k] for k in required})
    return rows


def enrollments_from_labels(labels: list[dict]) -> list[tuple[str, str]]:
    """Distinct (patient, trial) pairs in first-appearance order."""
    seen = set()
    out = []
    for row in labels:
        key = (row["patient_id"], row["trial_id"])
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out
