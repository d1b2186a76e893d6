import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nonneg_cl.module_utils import reparam
from nonneg_cl.module_utils.errors import ConfigInvalid, NonFiniteInput
from nonneg_cl.module_utils.reparam import NonNegTransform


def test_relu_forward():
    out = reparam.forward(NonNegTransform('relu'), [-3.0, 0.0, 2.0])
    assert_array_equal(out, [0.0, 0.0, 2.0])


def test_sigmoid_at_zero():
    assert reparam.forward(NonNegTransform('sigmoid'), [0.0])[0] == 0.5


def test_trick_forward_is_relu_bitwise():
    z = np.random.default_rng(0).normal(size=1000)
    z[:3] = [-1.0, 1.0, 0.0]
    trick = reparam.forward(NonNegTransform('relu_forward_gelu_backward'), z)
    assert_array_equal(trick, reparam.forward(NonNegTransform('relu'), z))
    assert_array_equal(trick[:2], [0.0, 1.0])


@pytest.mark.parametrize('kind', reparam.KINDS)
def test_forward_is_non_negative(kind):
    z = np.linspace(-50, 50, 2001)
    assert np.all(reparam.forward(NonNegTransform(kind), z) >= 0)


def test_relu_backward_is_zero_for_negative_inputs():
    t = NonNegTransform('relu')
    assert reparam.backward(t, [-1.0], [1.0])[0] == 0.0
    assert reparam.backward(t, [0.0], [1.0])[0] == 0.0
    assert reparam.backward(t, [2.0], [3.0])[0] == 3.0


def test_trick_backward_values():
    t = NonNegTransform('relu_forward_gelu_backward')
    out = reparam.backward(t, [0.0, 1.0, -1.0], [1.0, 1.0, 1.0])
    assert out[0] == pytest.approx(0.5)
    assert out[1] == pytest.approx(1.0833155, abs=1e-6)
    assert out[2] == pytest.approx(-0.0833155, abs=1e-6)


def test_gelu_derivative_matches_finite_differences():
    z = np.random.default_rng(1).uniform(-4, 4, size=50)
    h = 1e-5
    numeric = (reparam.gelu(z + h) - reparam.gelu(z - h)) / (2 * h)
    assert_allclose(reparam.gelu_derivative(z), numeric, rtol=1e-6,
                    atol=1e-9)


@pytest.mark.parametrize('kind', ['softplus', 'sigmoid'])
def test_smooth_backward_matches_finite_differences(kind):
    t = NonNegTransform(kind)
    z = np.random.default_rng(2).uniform(-5, 5, size=50)
    h = 1e-6
    numeric = (reparam.forward(t, z + h) - reparam.forward(t, z - h)) / \
        (2 * h)
    assert_allclose(reparam.backward(t, z, np.ones_like(z)), numeric,
                    rtol=1e-6, atol=1e-10)


def test_non_finite_input():
    with pytest.raises(NonFiniteInput):
        reparam.forward(NonNegTransform('relu'), [1.0, np.nan])
    with pytest.raises(NonFiniteInput):
        reparam.backward(NonNegTransform('relu'), [1.0], [np.inf])


def test_transform_names():
    assert reparam.from_name(None) is None
    assert reparam.from_name('none') is None
    assert reparam.from_name('softplus') == NonNegTransform('softplus')
    with pytest.raises(ConfigInvalid):
        reparam.from_name('tanh')
