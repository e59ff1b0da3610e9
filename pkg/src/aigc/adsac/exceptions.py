class Exit(SystemExit):
    """An exception that indicates that the application should exit with some
    status code.

    :param code: the status code to exit with.
    """


class Abort(RuntimeError):
    """An internal signalling exception that signals guard to abort.
    """


class AdsacError(Exception):
    """Root of the errors raised by the simulator, the learners and the harness."""


class InvalidConfig(AdsacError, ValueError):
    """A configuration value, file, key or policy tag is not acceptable."""


class ContractViolation(AdsacError):
    """A caller broke an operation's precondition (shape, range, ordering)."""


class CheckpointError(AdsacError):
    """A parameter checkpoint is malformed or does not fit the target network."""


class MissingCheckpoint(AdsacError):
    """A learned policy was requested without a checkpoint to load."""


class CheckFailed(AdsacError):
    """An oracle check observed a value outside its tolerance.

    :param name: check name.
    :param observed: what was measured.
    :param expected: what the oracle predicts.
    """

    def __init__(self, name, observed, expected, detail: str = ""):
        self.name = name
        self.observed = observed
        self.expected = expected
        message = f"{name}: observed {observed!r}, expected {expected!r}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)
