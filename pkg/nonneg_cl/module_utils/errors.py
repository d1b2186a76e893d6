# Exception types for everything that can go wrong in the library.
#
# Every error carries a human-readable message and, where there is
# one, the offending value, so that the subcommand modules can report
# both through fail_json().

__metaclass__ = type
"""
Errors raised by nonneg_cl.
"""


class NclError(Exception):
    """Base class for all library errors."""

    def __init__(self, msg, value=None):
        self.msg = msg
        # value: whatever triggered the error (a shape, an index, a
        # row sum, a config key...). May be None.
        self.value = value

    def __str__(self):
        if self.value is None:
            return self.msg
        return f'{self.msg}: {repr(self.value)}'


# latent_model
class NonStochastic(NclError):
    pass


class ZeroMarginal(NclError):
    pass


class DimensionMismatch(NclError):
    pass


class InvalidPermutation(NclError):
    pass


class LabelMapMismatch(NclError):
    pass


class RequiresAtLeastTwoClasses(NclError):
    pass


# objectives
class EmptyBatch(NclError):
    pass


class ZeroNormFeature(NclError):
    pass


class EmptyNegatives(NclError):
    pass


class NegativeEntry(NclError):
    pass


class LabelOutOfRange(NclError):
    pass


# reparam
class NonFiniteInput(NclError):
    pass


# encoders
class IndexOutOfRange(NclError):
    pass


class ShapeMismatch(NclError):
    pass


class StaleForwardState(NclError):
    pass


class CheckpointFormatError(NclError):
    pass


# training
class DivergenceDetected(NclError):
    pass


class ConfigInvalid(NclError):
    pass


class NonSymmetricInput(NclError):
    pass


# metrics
class AllDimensionsDead(NclError):
    pass


class AllRowsZero(NclError):
    pass


class InsufficientDraws(NclError):
    pass


class ZeroColumn(NclError):
    pass


class DegenerateLabels(NclError):
    pass
