import math

import numpy as np
import pytest
import scipy.stats

from deidaudit.special import (
    chi2_sf,
    normal_sf,
    regularized_gamma_lower,
    regularized_gamma_upper,
)


def test_chi2_sf_df2_closed_form():
    """For df=2 the survival function is exactly exp(-x/2)."""
    assert abs(chi2_sf(4.0, 2) - math.exp(-2.0)) < 1e-10
    for x in (0.1, 0.5, 1.0, 2.0, 7.5, 20.0, 50.0):
        assert abs(chi2_sf(x, 2) - math.exp(-x / 2)) < 1e-12


def test_chi2_sf_df4_closed_form():
    # df=4: sf(x) = exp(-x/2) * (1 + x/2)
    for x in (0.2, 1.0, 3.0, 8.0, 25.0):
        expected = math.exp(-x / 2) * (1 + x / 2)
        assert abs(chi2_sf(x, 4) - expected) < 1e-12


def test_chi2_sf_df1_closed_form():
    # df=1: sf(x) = erfc(sqrt(x/2))
    for x in (0.3, 1.0, 4.0, 9.0):
        assert abs(chi2_sf(x, 1) - math.erfc(math.sqrt(x / 2))) < 1e-12


def test_chi2_sf_boundaries():
    assert chi2_sf(0.0, 3) == 1.0
    assert chi2_sf(1e6, 3) == pytest.approx(0.0, abs=1e-30)
    with pytest.raises(ValueError):
        chi2_sf(-1.0, 2)
    with pytest.raises(ValueError):
        chi2_sf(1.0, 0)


def test_incomplete_gamma_against_scipy():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = float(rng.uniform(0.2, 30.0))
        x = float(rng.uniform(0.0, 60.0))
        assert regularized_gamma_lower(s, x) == pytest.approx(
            scipy.stats.gamma.cdf(x, s), abs=1e-12
        )
        assert regularized_gamma_upper(s, x) == pytest.approx(
            scipy.stats.gamma.sf(x, s), abs=1e-12
        )


def test_incomplete_gamma_complementarity():
    rng = np.random.default_rng(1)
    for _ in range(100):
        s = float(rng.uniform(0.3, 20.0))
        x = float(rng.uniform(0.0, 40.0))
        total = regularized_gamma_lower(s, x) + regularized_gamma_upper(s, x)
        assert total == pytest.approx(1.0, abs=1e-12)


def test_normal_sf_against_scipy():
    for z in (-4.0, -1.0, 0.0, 0.5, 1.96, 3.2, 8.0):
        assert normal_sf(z) == pytest.approx(scipy.stats.norm.sf(z), abs=1e-14)
