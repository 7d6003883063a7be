"""Exception and warning types.

Errors split into two families so the command line can tell a bad input
(exit code 2) from a numerical failure (exit code 3).
"""


class GfmGflError(Exception):
    """Base class for all errors raised by the package."""


class InputError(GfmGflError, ValueError):
    """Invalid or inconsistent input data."""


class NumericalError(GfmGflError, ArithmeticError):
    """A numerical step failed or hit a singularity."""


# network
class DisconnectedNetwork(InputError):
    pass


class InvalidLine(InputError):
    pass


class InvalidNetwork(InputError):
    pass


class FloatingSubnetwork(NumericalError):
    pass


class NetworkResonance(NumericalError):
    pass


class PowerFlowDiverged(NumericalError):
    pass


# converters / model
class DegenerateOperatingPoint(InputError):
    pass


class PoleAtOrigin(NumericalError):
    pass


class PartitionMismatch(InputError):
    pass


class PartitionEmpty(InputError):
    pass


class EigenFailure(NumericalError):
    pass


# matrix phases
class NotSectorial(NumericalError):
    pass


class BranchSelectionFailed(NumericalError):
    pass


class SingularGfmBlock(NumericalError):
    pass


class PreconditionGfmUnstable(GfmGflError):
    """The small-phase check needs a stable GFM subsystem."""


class NumericalBlowup(NumericalError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NonUniformTau(UserWarning):
    """Per-line R/X deviates from the declared global ratio."""
