"""Eligibility text parsing: raw registry prose to ordered criterion lists.

The grammar is deliberately loose. Registry text varies in casing, bullet
style, and indentation; a header line containing "inclusion criteria" or
"exclusion criteria" opens a section, and bullet items (or bare lines) under
it become one criterion sentence each. Continuation lines indented past the
bullet marker are joined to the item with a single space.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field

from .errors import IoError, MalformedRow, NoCriteria, ParserWarning
from .text_encoding import tokenize

INCLUSION = "inclusion"
EXCLUSION = "exclusion"
POLARITIES = (INCLUSION, EXCLUSION)

PHASES = ("I", "II", "III", "IV")

_HEADER_RE = re.compile(r"(inclusion|exclusion)\s+criteria", re.IGNORECASE)
_BULLET_RE = re.compile(r"^(\s*)(-|\*|•|\d+[.)])\s+(.*)$")


@dataclass(frozen=True)
class Criterion:
    trial_id: str
    index: int
    polarity: str
    text: str
    tokens: tuple[str, ...]


@dataclass
class Trial:
    trial_id: str
    phase: str | None
    inclusion: list[Criterion] = field(default_factory=list)
    exclusion: list[Criterion] = field(default_factory=list)

    @property
    def criteria(self) -> list[Criterion]:
        return self.inclusion + self.exclusion

    def criterion(self, polarity: str, index: int) -> Criterion:
        group = self.inclusion if polarity == INCLUSION else self.exclusion
        return group[index]


def parse_eligibility(raw: str) -> tuple[list[str], list[str]]:
    """Split raw eligibility text into (inclusion, exclusion) sentences.

    Text before the first recognized header is ignored. Input without any
    header yields two empty lists and a ParserWarning rather than an error.
    """
    sections: dict[str, list[str]] = {INCLUSION: [], EXCLUSION: []}
    current: list[str] | None = None
    saw_header = False
    open_item: list[str] | None = None
    open_indent = 0

    def flush():
        nonlocal open_item
        if open_item is not None and current is not None:
            sentence = " ".join(open_item).strip()
            if sentence:
                current.append(sentence)
        open_item = None

    for line in raw.splitlines():
        header = _HEADER_RE.search(line)
        if header is not None and not _BULLET_RE.match(line):
            flush()
            current = sections[header.group(1).lower()]
            saw_header = True
            continue
        if current is None:
            continue
        bullet = _BULLET_RE.match(line)
        if bullet is not None:
            flush()
            open_item = [bullet.group(3).strip()]
            open_indent = len(bullet.group(1))
            continue
        stripped = line.strip()
        if not stripped:
            flush()
            continue
        indent = len(line) - len(line.lstrip())
        if open_item is not None and indent > open_indent:
            open_item.append(stripped)
        else:
            # Unbulleted body line: stands alone as one criterion.
            flush()
            current.append(stripped)
    flush()

    if not saw_header:
        warnings.warn(
            "no inclusion/exclusion section headers found", ParserWarning,
            stacklevel=2,
        )
    return sections[INCLUSION], sections[EXCLUSION]


def build_trial(trial_id: str, phase: str | None, raw: str, strict: bool = False) -> Trial:
    if not trial_id:
        raise ValueError("trial_id must be non-empty")
    if phase is not None and phase not in PHASES:
        raise MalformedRow(f"trial {trial_id}: bad phase {phase!r}")
    inc, exc = parse_eligibility(raw)
    trial = Trial(trial_id=trial_id, phase=phase)
    for polarity, sentences, dest in (
        (INCLUSION, inc, trial.inclusion),
        (EXCLUSION, exc, trial.exclusion),
    ):
        for text in sentences:
            tokens = tuple(tokenize(text))
            if not tokens:
                continue
            # index counts kept criteria so Trial.criterion(polarity, i)
            # and Criterion.index always agree
            dest.append(
                Criterion(
                    trial_id=trial_id,
                    index=len(dest),
                    polarity=polarity,
                    text=text,
                    tokens=tokens,
                )
            )
    if strict and not trial.criteria:
        raise NoCriteria(f"trial {trial_id}: no parseable criteria")
    return trial


def format_eligibility(trial: Trial) -> str:
    """Serialize back to canonical two-section bullet text.

    parse_eligibility on this output reproduces the criterion sentences.
    """
    parts = []
    if trial.inclusion:
        parts.append("Inclusion Criteria:")
        parts.extend(f"- {c.text}" for c in trial.inclusion)
    if trial.exclusion:
        if parts:
            parts.append("")
        parts.append("Exclusion Criteria:")
        parts.extend(f"- {c.text}" for c in trial.exclusion)
    return "\n".join(parts) + "\n"


def load_trials(path, strict: bool = False) -> list[Trial]:
    """Read the trial JSONL file: {"trial_id", "phase", "eligibility_text"}."""
    trials = []
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
                trial_id = obj["trial_id"]
                raw = obj["eligibility_text"]
            except KeyError as exc:
                raise MalformedRow(
                    f"{path}: line {lineno}: missing field {exc}"
                ) from None
            if trial_id in seen:
                raise MalformedRow(
                    f"{path}: line {lineno}: duplicate trial {trial_id!r}"
                )
            seen.add(trial_id)
            trials.append(
                build_trial(trial_id, obj.get("phase"), raw, strict=strict)
            )
    return trials


def save_trials(trials: list[Trial], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(
                json.dumps(
                    {
                        "trial_id": t.trial_id,
                        "phase": t.phase,
                        "eligibility_text": format_eligibility(t),
                    }
                )
                + "\n"
            )
