"""Error taxonomy shared across the package.

Exit codes used by the command line front end: 1 usage, 2 data, 3 numerical.
"""


class PnatError(Exception):
    exit_code = 1


class UsageError(PnatError):
    """Bad flags, bad config keys, malformed invocations."""

    exit_code = 1


class DataError(PnatError):
    """Corrupt or inconsistent inputs: corpora, vocab, batches, checkpoints."""

    exit_code = 2


class NumericalError(PnatError):
    """NaN/Inf surfaced in a computation that must stay finite."""

    exit_code = 3
