"""Exception and warning types shared across the package."""


class TrialMatchError(Exception):
    """Base class for all errors raised by trialmatch."""


# --- taxonomy ---

class MalformedRow(TrialMatchError):
    """A taxonomy CSV row could not be parsed; message carries the line number."""


class CycleDetected(TrialMatchError):
    pass


class LevelGap(TrialMatchError):
    """Parent level is not exactly one above the child's."""


class DuplicateId(TrialMatchError):
    pass


class UnknownCode(TrialMatchError):
    pass


class NotALeaf(TrialMatchError):
    pass


# --- text encoding ---

class EmptySentence(TrialMatchError):
    pass


class MissingKey(TrialMatchError):
    """Precomputed embedding store has no entry for the requested sentence."""


class DimMismatch(TrialMatchError):
    pass


# --- parsing / datasets ---

class NoCriteria(TrialMatchError):
    pass


class EmptyBatch(TrialMatchError):
    pass


class InsufficientTrials(TrialMatchError):
    pass


class NonFiniteLoss(TrialMatchError):
    pass


class UnknownConcept(TrialMatchError):
    pass


class InfeasibleConfig(TrialMatchError):
    pass


# --- evaluation ---

class DegenerateLabels(TrialMatchError):
    """Ranking metric requested but only one class is present."""


# --- CLI / persistence ---

class ConfigError(TrialMatchError):
    pass


class IoError(TrialMatchError):
    """Structurally invalid or unreadable artifact file."""


class FormatVersionMismatch(TrialMatchError):
    pass


# --- warning categories ---

class ParserWarning(UserWarning):
    pass


class ZeroVectorWarning(UserWarning):
    pass


class MissingCodeWarning(UserWarning):
    pass


class RankDeficientWarning(UserWarning):
    """Fewer nonzero principal directions than requested components."""
