"""Error kinds raised across the comfort toolkit.

Every error carries a machine-readable ``code`` and the process ``exit_code`` the
CLI should use when it escapes a command: 2 for bad input, 3 for computation failures.
"""

from typing import Optional


class ComfortToolkitError(Exception):
    """Base class for all toolkit errors"""

    code = 'ComfortToolkitError'
    exit_code = 3

    def __init__(self, message: str, *, trial_id: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.trial_id = trial_id

    def to_dict(self) -> dict:
        payload = {'code': self.code, 'message': self.message}
        if self.trial_id is not None:
            payload['trial_id'] = self.trial_id
        return payload


class InputError(ComfortToolkitError):
    code = 'InputError'
    exit_code = 2


class ComputationError(ComfortToolkitError):
    code = 'ComputationError'
    exit_code = 3


# --- input errors -----------------------------------------------------------

class MissingColumnError(InputError):
    code = 'MissingColumn'


class NonMonotoneTimeError(InputError):
    code = 'NonMonotoneTime'


class ComfortOutOfRangeError(InputError):
    code = 'ComfortOutOfRange'


class DuplicateTrialIdError(InputError):
    code = 'DuplicateTrialId'


class InvalidTrialError(InputError):
    code = 'InvalidTrial'


class ConfigError(InputError):
    code = 'ConfigError'


class InvalidScenarioError(InputError):
    code = 'InvalidConfig'


class LengthMismatchError(InputError):
    code = 'LengthMismatch'


class EmptyInputError(InputError):
    code = 'Empty'


# --- computation errors -----------------------------------------------------

class TooFewSamplesError(ComputationError):
    code = 'TooFewSamples'


class NoTemporalOverlapError(ComputationError):
    code = 'NoTemporalOverlap'


class EmptySeriesError(ComputationError):
    code = 'EmptySeries'


class HeadingUnavailableError(ComputationError):
    code = 'HeadingUnavailable'


class DegenerateTrajectoryError(ComputationError):
    code = 'DegenerateTrajectory'


class NeverApproachingError(ComputationError):
    code = 'NeverApproaching'


class ZeroMarginalError(ComputationError):
    code = 'ZeroMarginal'


class MissingValueError(ComputationError):
    code = 'MissingValue'


class FewerThanTwoPointsError(ComputationError):
    code = 'FewerThanTwoPoints'


class OutOfRangeError(ComputationError):
    code = 'OutOfRange'
