"""Exception hierarchy shared by all seamline modules.

Three branches map onto the CLI exit codes: data problems (exit 3),
numeric failures (exit 4), and external-service failures (exit 5).
"""


class SeamlineError(Exception):
    """Base class for every error raised by this package."""


class DataError(SeamlineError):
    """Invalid or unusable input data (CLI exit code 3)."""


class NumericError(SeamlineError):
    """Numerical breakdown during optimization (CLI exit code 4)."""


class ExternalServiceError(SeamlineError):
    """A remote or out-of-process dependency failed (CLI exit code 5)."""


# --- corpus ---------------------------------------------------------------

class EmptyText(DataError):
    """No sentence could be produced from the input text."""


class UnlabeledSentence(DataError):
    """An operation requiring authorship labels met an unlabeled sentence."""


class ParseError(DataError):
    """A corpus line is not valid JSON."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class SchemaError(DataError):
    """A corpus record is valid JSON but violates the corpus schema."""


class EmptyCorpus(DataError):
    """An operation requires at least one document."""


# --- synthesis ------------------------------------------------------------

class SourceTooShort(DataError):
    """The source essay has too few sentences for the requested task."""


class GeneratorUnavailable(ExternalServiceError):
    """An out-of-process generator could not be reached or crashed."""


# --- embeddings -----------------------------------------------------------

class EmptySentence(DataError):
    """A sentence given to an embedder is empty or whitespace-only."""


class CacheMismatch(DataError):
    """An embedding cache was built for a different provider or dimension."""


class TransportError(ExternalServiceError):
    """The embedding bridge could not be reached after retries."""


class ProtocolError(ExternalServiceError):
    """The embedding bridge returned a malformed response."""


# --- metric / baselines ---------------------------------------------------

class SingleClassCorpus(DataError):
    """Training data does not contain usable sentences of both labels."""


class NonFiniteLoss(NumericError):
    """Training produced a NaN or infinite loss."""


class DimensionMismatch(DataError):
    """Vector dimensions of the operands do not agree."""


# --- detector -------------------------------------------------------------

class PositionOutOfRange(DataError):
    """A prototype anchor position lies outside the document."""


class TooFewSentences(DataError):
    """Boundary detection needs at least two sentences."""


# --- eval -----------------------------------------------------------------

class EmptyTruth(DataError):
    """A document without ground-truth boundaries cannot be scored."""


class TooFewGroups(DataError):
    """A prompt has too few source groups for the requested split."""


class SinglePrompt(DataError):
    """Prompt-wise cross-validation needs at least two prompts."""
