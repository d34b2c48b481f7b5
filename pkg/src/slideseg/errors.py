"""Exception taxonomy shared by all modules.

Grouping matters for the CLI: DataError subclasses exit with code 3,
NumericError subclasses with code 4, UsageError with code 2.
"""

from __future__ import annotations


class SlidesegError(Exception):
    """Base class for every error raised by this package."""


class DataError(SlidesegError):
    """Bad or missing input data, files, ids, or configurations."""


class NumericError(SlidesegError):
    """Numerical failure during training or evaluation."""


class UsageError(SlidesegError):
    """Malformed command-line invocation."""


# -- dataset / IO -------------------------------------------------------------

class MissingMask(DataError):
    def __init__(self, sample_id: str):
        super().__init__(f"image '{sample_id}' has no paired mask file")
        self.sample_id = sample_id


class CorruptFile(DataError):
    def __init__(self, path, reason: str = ""):
        detail = f": {reason}" if reason else ""
        super().__init__(f"unreadable file '{path}'{detail}")
        self.path = path


class EmptyDataset(DataError):
    pass


class UnknownId(DataError):
    def __init__(self, sample_id: str):
        super().__init__(f"sample id '{sample_id}' not in index")
        self.sample_id = sample_id


class ShapeMismatch(DataError):
    pass


class NonBinaryMask(DataError):
    pass


class IoError(DataError):
    pass


# -- band engineering ---------------------------------------------------------

class MissingSourceBand(DataError):
    def __init__(self, band: str):
        super().__init__(f"stack does not contain required source band '{band}'")
        self.band = band


# -- augmentation -------------------------------------------------------------

class EmptyDonorPool(DataError):
    pass


# -- model / training ---------------------------------------------------------

class InvalidConfig(DataError):
    pass


class InvalidKind(DataError):
    pass


class TooFewSamples(DataError):
    pass


class IncompatibleCheckpoint(DataError):
    pass


class NonFiniteLoss(NumericError):
    pass
