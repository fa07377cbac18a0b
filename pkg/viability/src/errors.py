"""
Exception hierarchy shared by all modules. Every class carries the exit code
the command-line entry point uses when the error escapes a subcommand.
"""


class ViabilityError(Exception):
    exit_code = 1

    def one_line(self):
        reason = " ".join(str(self).split())
        return f"error {self.exit_code} {type(self).__name__}: {reason}"


class UsageError(ViabilityError):
    exit_code = 2


class ConfigParseError(ViabilityError):
    exit_code = 3


class ConfigSchemaError(ViabilityError):
    exit_code = 4


class ConfigRangeError(ViabilityError):
    exit_code = 5


class IntegrationDivergenceError(ViabilityError):
    exit_code = 6


class PreconditionError(ViabilityError):
    exit_code = 7


class GridMismatchError(ViabilityError):
    exit_code = 8


class IllConditionedError(ViabilityError):
    exit_code = 9


class UnrecoverableConstraintError(ViabilityError):
    exit_code = 10

    def __init__(self, batch, episode):
        super().__init__(
            f"constraint estimate has an empty state projection at batch {batch}, episode {episode}"
        )
        self.batch = batch
        self.episode = episode


class RunArtifactError(ViabilityError):
    exit_code = 11


class InvariantViolationError(ViabilityError):
    exit_code = 12
