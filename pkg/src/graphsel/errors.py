"""Typed errors shared across the package.

Input-shaped problems derive from InputError so the CLI can map them to a
single exit code; numeric failures derive from NumericError.
"""


class GraphselError(Exception):
    pass


class InputError(GraphselError):
    """Bad or inconsistent input data (files, formats, identifiers)."""


class NumericError(GraphselError):
    """Numerical failure during tensor computation."""


# --- AMR ingestion ---

class MalformedPenman(InputError):
    pass


class DuplicateVariable(InputError):
    pass


class BadAlignment(InputError):
    pass


class MissingMetadata(InputError):
    pass


class DuplicateSentence(InputError):
    pass


class ManifestError(InputError):
    pass


# --- semantic graph ---

class UnresolvableCorefMention(InputError):
    pass


class MissingEmbedding(InputError):
    pass


# --- dialog graphs ---

class UnknownSentence(InputError):
    pass


class MissingContextEmbedding(InputError):
    pass


class NoGoldLabel(InputError):
    pass


# --- tensors ---

class NonFinite(NumericError):
    pass


class EmptySegment(NumericError):
    pass


# --- training / evaluation ---

class NoPositive(InputError):
    pass


class NoLabeledTurns(InputError):
    pass


class MissingGold(InputError):
    pass
