"""
Error hierarchy shared by every emodm app.

Each family carries the process exit code the management commands use.
"""


class EmodmError(Exception):
    """Base class for toolkit errors."""

    exit_code = 1


# =============================================================================
# DATA ERRORS (exit 3)
# =============================================================================

class DataError(EmodmError):
    """Input data cannot be used as given."""

    exit_code = 3


class InvalidSample(DataError):
    def __init__(self, value=None):
        super().__init__(f'invalid sample: {value!r}')
        self.value = value


class SeriesTooShort(DataError):
    def __init__(self, length):
        super().__init__(f'series too short: {length} value(s), need at least 2')
        self.length = length


class NonPositiveValue(DataError):
    def __init__(self, index, value):
        super().__init__(f'non-positive value {value!r} at index {index}')
        self.index = index
        self.value = value


class TooFewSamples(DataError):
    def __init__(self, count, required):
        super().__init__(f'too few samples: {count} valid, need at least {required}')
        self.count = count
        self.required = required


class DegenerateData(DataError):
    def __init__(self, detail='all valid samples are identical'):
        super().__init__(f'degenerate data: {detail}')


class IngestError(DataError):
    """CSV input is unreadable, malformed or inconsistent."""


class ScheduleError(DataError):
    """Fault schedule is out of range, overlapping or unordered."""


class MissingLabels(DataError):
    def __init__(self, path):
        super().__init__(f'trace has no label column: {path}')


# =============================================================================
# NUMERICAL ERRORS (exit 4)
# =============================================================================

class NumericalError(EmodmError):
    """A numerical procedure could not produce a result."""

    exit_code = 4


class ResponsibilityUndefined(NumericalError):
    def __init__(self, index):
        super().__init__(f'responsibility undefined at sample {index}')
        self.index = index


class EmptyComponent(NumericalError):
    def __init__(self, component, iteration=None):
        where = f' at iteration {iteration}' if iteration is not None else ''
        super().__init__(f'empty component {component}{where}')
        self.component = component
        self.iteration = iteration

    def at_iteration(self, iteration):
        return EmptyComponent(self.component, iteration)


class IntegrationError(NumericalError):
    def __init__(self, time, detail):
        super().__init__(f'integration failed at t={time:.6g}: {detail}')
        self.time = time


class CoordinateSingularity(NumericalError):
    def __init__(self, theta):
        super().__init__(f'coordinate singularity at theta={theta!r}')
        self.theta = theta


class RejectionExhausted(NumericalError):
    def __init__(self, period):
        super().__init__(f'rejection filter exhausted in period {period}')
        self.period = period
