"""Exception hierarchy shared by every fairmc module."""


class FairMCError(Exception):
    """Base class for all fairmc errors."""


class InvalidInputError(FairMCError, ValueError):
    pass


class UnsupportedError(FairMCError, ValueError):
    """A measure or penalty was asked for on groups it is not defined for."""


class ParseError(FairMCError, ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class ConsistencyError(FairMCError, ValueError):
    pass


class FormatError(FairMCError, ValueError):
    pass


class DivergenceError(FairMCError, ArithmeticError):
    def __init__(self, iteration, message="non-finite loss"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class EmptyStratumWarning(UserWarning):
    """A (label, user group, item group) stratum had no entries and was skipped."""
