"""Exception hierarchy shared by all modules."""


class StackIndexError(Exception):
    """Base class for every error raised by this package."""


# storage
class OutOfBounds(StackIndexError):
    pass


class ParseError(StackIndexError):
    pass


class InvalidProfile(StackIndexError, ValueError):
    pass


# regressor
class DegenerateFit(StackIndexError):
    """The fitted layer would not be smaller than the table it indexes."""


class FitVerificationFailed(StackIndexError):
    """A fitted layer violated containment. Always an implementation bug."""


# optimizer
class EmptyDataset(StackIndexError):
    pass


class SpaceTooLarge(StackIndexError):
    pass


# layout / engine
class CorruptIndex(StackIndexError):
    pass


class CorruptLayer(CorruptIndex):
    pass


class BadMagic(CorruptIndex):
    pass


class UnsupportedVersion(CorruptIndex):
    pass


class CorruptDirectory(CorruptIndex):
    pass


class InvalidPlan(StackIndexError):
    pass


class KeyNotFound(StackIndexError, KeyError):
    pass


class InvalidRange(StackIndexError, ValueError):
    pass


# ingestion
class UnsortedInput(StackIndexError):
    def __init__(self, position: int):
        super().__init__(f"keys not sorted at position {position}")
        self.position = position


class DuplicateKey(StackIndexError):
    def __init__(self, key: int):
        super().__init__(f"duplicate key {key}")
        self.key = key


class LengthMismatch(StackIndexError):
    pass
