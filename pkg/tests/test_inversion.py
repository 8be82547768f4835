import numpy as np
import pytest
from scipy import special, stats

from crtprune.errors import InversionError
from crtprune.inversion import LaplaceLaw, talbot_cdf


def test_talbot_exponential():
    x = np.array([0.1, 1.0, 5.0])
    got = talbot_cdf(lambda s: 1.0 / (1.0 + s), x)
    assert np.allclose(got, 1 - np.exp(-x), atol=1e-10)


def test_talbot_levy():
    x = np.array([0.2, 1.0, 10.0])
    got = talbot_cdf(lambda s: np.exp(-np.sqrt(2 * s)), x)
    assert np.allclose(got, special.erfc(1 / np.sqrt(2 * x)), atol=1e-10)


def test_sampling_gamma_half():
    law = LaplaceLaw(lambda s: (1 + s) ** -0.5, 1.0)
    x, fin = law.sample(np.random.default_rng(3), 20000)
    assert fin.all()
    assert stats.kstest(x, stats.gamma(0.5).cdf).pvalue > 0.001


def test_defective_law():
    # X = Exp(1) with probability 0.4, +inf otherwise
    law = LaplaceLaw(lambda s: 0.4 / (1 + s), 0.4)
    x, fin = law.sample(np.random.default_rng(4), 20000)
    assert abs(fin.mean() - 0.4) < 4 * np.sqrt(0.24 / 20000)
    assert np.all(np.isnan(x[~fin]))
    assert stats.kstest(x[fin], "expon").pvalue > 0.001


def test_no_finite_mass():
    with pytest.raises(InversionError):
        LaplaceLaw(lambda s: 0 * s, 0.0)
