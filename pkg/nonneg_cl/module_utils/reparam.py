# Non-negative output transformations.
#
# Each transform maps pre-activations z to non-negative features. The
# odd one out is 'relu_forward_gelu_backward': its forward pass is
# exactly ReLU, but its backward pass uses the derivative of GELU, so
# negative pre-activations still get a gradient. In PyTorch terms,
#
#   z = F.relu(z).detach() + F.gelu(z) - F.gelu(z).detach()
#
# Here there is no autograd, so forward() and backward() are simply
# written separately.

__metaclass__ = type
"""
Non-negative reparameterizations and the dead-neuron trick.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

from nonneg_cl.module_utils.errors import ConfigInvalid, NonFiniteInput

KINDS = ('relu', 'softplus', 'sigmoid', 'relu_forward_gelu_backward')

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class NonNegTransform:
    kind: str = 'relu'

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigInvalid(f"unknown transform kind; expected one of "
                                f"{', '.join(KINDS)}", self.kind)


def from_name(name):
    """Look up a transform by its config-file name.

    None and "none" mean no transform at all.
    """
    if name is None or name == 'none':
        return None
    return NonNegTransform(name)


def _finite(z):
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("transform input is not finite")
    return z


def gelu(z):
    """Exact GELU, z * Phi(z)."""
    z = np.asarray(z, dtype=np.float64)
    return z * ndtr(z)


def gelu_derivative(z):
    """Phi(z) + z * phi(z), with phi the standard normal density."""
    z = np.asarray(z, dtype=np.float64)
    return ndtr(z) + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def forward(t, z):
    """Apply the transform elementwise."""
    z = _finite(z)
    if t.kind in ('relu', 'relu_forward_gelu_backward'):
        return np.maximum(z, 0.0)
    if t.kind == 'softplus':
        return np.logaddexp(0.0, z)
    if t.kind == 'sigmoid':
        return expit(z)
    raise ConfigInvalid("unknown transform kind", t.kind)


def backward(t, z, upstream):
    """Multiply 'upstream' by the transform's derivative at z.

    The ReLU derivative at exactly 0 is 0.
    """
    z = _finite(z)
    upstream = _finite(upstream)
    if t.kind == 'relu':
        return upstream * (z > 0)
    if t.kind == 'relu_forward_gelu_backward':
        return upstream * gelu_derivative(z)
    if t.kind == 'softplus':
        return upstream * expit(z)
    if t.kind == 'sigmoid':
        s = expit(z)
        return upstream * s * (1.0 - s)
    raise ConfigInvalid("unknown transform kind", t.kind)
