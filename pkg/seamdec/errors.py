"""Exception hierarchy shared by every pipeline stage."""
from typing import List

from seamdec.constants import EXIT_CONFIG, EXIT_STAGE


class SeamError(Exception):
    """Base class for all pipeline errors."""
    exit_code = EXIT_STAGE


class CSyntaxError(SeamError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class UnsupportedConstruct(SeamError):
    """Raised for C (or AST) constructs outside the supported subset."""
    def __init__(self, construct: str, line: int = 0, column: int = 0):
        where = f" at {line}:{column}" if line else ""
        super().__init__(f"unsupported construct '{construct}'{where}")
        self.construct = construct
        self.line = line
        self.column = column


class LiftError(SeamError):
    pass


class AsmParseError(SeamError):
    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class CanonicalizationError(SeamError):
    pass


class BoundaryError(SeamError):
    """Missing or inconsistent `.loc` coverage for a sample."""


class CompilerNotFound(SeamError):
    pass


class CompilerFailed(SeamError):
    def __init__(self, returncode: int, stderr: str):
        super().__init__(f"compiler exited with {returncode}: {stderr.strip()}")
        self.returncode = returncode
        self.stderr = stderr


class CorpusShortfall(SeamError):
    def __init__(self, shortfalls: dict):
        detail = ", ".join(f"{k}: missing {v}" for k, v in sorted(shortfalls.items()))
        super().__init__(f"requested corpus size unreachable after dedup ({detail})")
        self.shortfalls = shortfalls


class ShapeError(SeamError):
    pass


class NonFiniteError(SeamError):
    pass


class MaskError(SeamError):
    def __init__(self, row: int):
        super().__init__(f"attention mask row {row} has no attendable position")
        self.row = row


class DivergenceError(SeamError):
    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss


class VocabularyError(SeamError):
    def __init__(self, token: str, side: str = "source"):
        super().__init__(f"token '{token}' not in {side} vocabulary")
        self.token = token
        self.side = side


class TranslationError(SeamError):
    pass


class CheckpointError(SeamError):
    pass


class ConfigError(SeamError):
    exit_code = EXIT_CONFIG

    def __init__(self, errors: List[str]):
        super().__init__("configuration invalid:\n" + "\n".join(f"  - {e}" for e in errors))
        self.errors = errors


class StageError(SeamError):
    """Wraps a failure with the pipeline stage it happened in."""
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def exit_code(self) -> int:
        return getattr(self.cause, "exit_code", EXIT_STAGE)


def tag_stage(stage: str, exc: Exception) -> StageError:
    if isinstance(exc, StageError):
        return exc
    return StageError(stage, exc)


class DegenerateLabels(SeamError):
    """Every boundary label in the training data has the same value."""
    def __init__(self, value: int):
        super().__init__(f"all boundary labels are {value}; nothing to learn")
        self.value = value


class NamingError(SeamError):
    pass


class MissingInput(SeamError):
    """A corpus directory, checkpoint or input file the command needs does not exist."""
    def __init__(self, what: str, path):
        super().__init__(f"{what} not found: {path}")
        self.path = path
