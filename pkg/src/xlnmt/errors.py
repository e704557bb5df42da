class ConfigurationError(ValueError):
    """Invalid or inconsistent configuration (unknown language, dim mismatch, ...)."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class ParseError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class CheckpointError(RuntimeError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it for the caller."""

    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class EmptyCorpusWarning(UserWarning):
    pass


class SearchRefusedError(RuntimeError):
    """An exhaustive search would enumerate more sequences than its guard allows."""
