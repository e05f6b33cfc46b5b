"""Exception types shared across the package."""


class FormatError(ValueError):
    """Malformed input file or record. Carries the offending line when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class IncompatibleIndexError(FormatError):
    """Index or checkpoint file does not match this build or vocabulary."""


class TrainingHalted(RuntimeError):
    """Raised when an optimizer step receives non-finite gradients."""
