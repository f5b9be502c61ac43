"""
Exception hierarchy for the spkdlg package.

Library code raises these; only the command line turns them into exit codes.
"""

from __future__ import annotations

from typing import Optional


class SpkDlgError(Exception):
    """Base class for every error raised by spkdlg."""


class DimensionError(SpkDlgError, ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes) -> None:
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class PreconditionError(SpkDlgError, ValueError):
    """An input violates an operation's precondition (e.g. an empty sequence)."""


class ContractError(SpkDlgError):
    """A caller broke an API contract (wrong payload kind, non-scalar loss...)."""


class ConfigError(SpkDlgError, ValueError):
    """Invalid configuration value."""


class TokenIndexError(SpkDlgError, IndexError):
    def __init__(self, token_id: int, vocab_size: int) -> None:
        self.token_id = token_id
        self.vocab_size = vocab_size
        super().__init__(f"token id {token_id} out of range [0, {vocab_size})")


class CorpusFormatError(SpkDlgError):
    """A data file could not be parsed. Carries the path and 1-based line number."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None) -> None:
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class RoleValidationError(CorpusFormatError):
    """A corpus record names a speaker role other than tourist/guide."""


class EmbeddingFormatError(CorpusFormatError):
    """A pretrained embedding line has the wrong number of components."""


class CheckpointError(SpkDlgError):
    """A checkpoint file is malformed, truncated or of an unknown version."""


class NumericalError(SpkDlgError, FloatingPointError):
    def __init__(self, parameter: str, detail: str = "NaN gradient") -> None:
        self.parameter = parameter
        super().__init__(f"{detail} in parameter '{parameter}'")
