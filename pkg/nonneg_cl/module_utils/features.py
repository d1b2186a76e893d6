# The FeatureTable: an N x k matrix of per-sample features.
#
# The same type holds encoder outputs, the closed-form optimal features
# and NMF factors. A table may carry a weighting vector sqrt(P(x)); in
# that case 'values' are the features f(x) and weighted() gives the
# factor rows F[x,:] = sqrt(P(x)) f(x).

__metaclass__ = type

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from nonneg_cl.module_utils.errors import (
    DimensionMismatch,
    NegativeEntry,
)


@dataclass(frozen=True)
class FeatureTable:
    values: np.ndarray
    nonneg: bool = False
    weighting: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DimensionMismatch("feature table must be 2-D",
                                    values.shape)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

        if self.weighting is not None:
            weighting = np.array(self.weighting, dtype=np.float64)
            if weighting.shape != (values.shape[0],):
                raise DimensionMismatch(
                    "weighting must have one entry per sample",
                    (weighting.shape, values.shape))
            weighting.setflags(write=False)
            object.__setattr__(self, 'weighting', weighting)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def check_nonneg(self):
        """Raise NegativeEntry if the table is flagged non-negative but
        holds a negative entry. Tolerance is zero."""

        if self.nonneg and self.values.size > 0:
            low = self.values.min()
            if low < 0:
                raise NegativeEntry(
                    "non-negative feature table has a negative entry", low)
        return self

    def weighted(self):
        """Return the factor matrix F with rows sqrt(P(x)) f(x).

        A table without a weighting is taken to be a factor already.
        """
        if self.weighting is None:
            return self.values
        return self.values * self.weighting[:, None]

    def with_values(self, values, nonneg=None):
        """Return a copy holding new values, keeping the weighting."""
        return FeatureTable(values,
                            nonneg=self.nonneg if nonneg is None else nonneg,
                            weighting=self.weighting)

    def columns(self, index):
        """Return a table restricted to the given columns."""
        return FeatureTable(self.values[:, index], nonneg=self.nonneg,
                            weighting=self.weighting)


def from_factor(factor, marginal, nonneg=False):
    """Build a weighted FeatureTable from a factor matrix F and the
    marginal P(x), undoing the sqrt(P(x)) row weighting."""

    factor = np.asarray(factor, dtype=np.float64)
    root = np.sqrt(np.asarray(marginal, dtype=np.float64))
    if factor.shape[0] != root.shape[0]:
        raise DimensionMismatch("factor rows do not match marginal",
                                (factor.shape, root.shape))
    return FeatureTable(factor / root[:, None], nonneg=nonneg,
                        weighting=root)
