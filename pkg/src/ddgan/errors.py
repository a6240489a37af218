"""Exception types shared across the package."""


class DDGANError(Exception):
    """Base class for all package errors."""


class DimensionError(DDGANError, ValueError):
    pass


class DegenerateInputError(DDGANError, ValueError):
    pass


class ContractError(DDGANError, RuntimeError):
    """An operation was called outside its documented preconditions."""


class ParseError(DDGANError, ValueError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class MissingLabelError(DDGANError, KeyError):
    def __init__(self, missing, what="embedding"):
        self.missing = sorted(missing)
        super().__init__(f"no {what} for label(s): {', '.join(self.missing)}")

    def __str__(self):
        return self.args[0]


class SamplingError(DDGANError, ValueError):
    pass


class TrainingError(DDGANError, ArithmeticError):
    """Non-finite gradient or loss encountered during optimisation."""
