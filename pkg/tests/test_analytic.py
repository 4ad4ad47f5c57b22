import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mfmc_lab import analytic as an

# High-precision references (mpmath, 30 digits) of the closed forms.
DTC_05 = 0.261624071882273918
DTC_09 = 1.084453958574456766
PAIR_THIRD_05 = 0.202732554054082191
PAIR_THIRD_09 = 0.957409780992641110
COND_05 = 0.058891517828191727
COND_09 = 0.127044177581815656
PAIR_05 = 0.143841036225890464
PAIR_09 = 0.830365603410825454

RHO_GRID = [-0.4, -0.2, 0.0] + [round(0.1 * i, 2) for i in range(1, 10)] + [0.95]


@pytest.mark.parametrize(
    "fn, rho, expected",
    [
        (an.gaussian_dtc3, 0.0, 0.0),
        (an.gaussian_dtc3, 0.5, DTC_05),
        (an.gaussian_dtc3, 0.9, DTC_09),
        (an.gaussian_pair_third_mi3, 0.0, 0.0),
        (an.gaussian_pair_third_mi3, 0.5, PAIR_THIRD_05),
        (an.gaussian_pair_third_mi3, 0.9, PAIR_THIRD_09),
        (an.gaussian_conditional_mi3, 0.0, 0.0),
        (an.gaussian_conditional_mi3, 0.5, COND_05),
        (an.gaussian_conditional_mi3, 0.9, COND_09),
        (an.gaussian_pairwise_mi, 0.0, 0.0),
        (an.gaussian_pairwise_mi, 0.5, PAIR_05),
        (an.gaussian_pairwise_mi, 0.9, PAIR_09),
    ],
)
def test_closed_forms(fn, rho, expected):
    assert fn(rho) == pytest.approx(expected, abs=1e-12)


def test_multidim_mi():
    assert an.gaussian_mi_multidim(20, 0.0) == 0.0
    assert an.gaussian_mi_multidim(20, 0.5) == pytest.approx(2.876820724517809, abs=1e-12)
    assert an.gaussian_mi_multidim(2, 0.9) == pytest.approx(1.660731206821651, abs=1e-12)
    assert an.gaussian_mi_multidim(20, 0.9) == pytest.approx(-10 * math.log(1 - 0.81))


@pytest.mark.parametrize("rho", [-0.5, 1.0, -0.7, 1.2])
def test_domain_errors(rho):
    with pytest.raises(an.DomainError):
        an.gaussian_dtc3(rho)


def test_pairwise_domain():
    with pytest.raises(an.DomainError):
        an.gaussian_pairwise_mi(1.0)
    with pytest.raises(an.DomainError):
        an.gaussian_mi_multidim(3, -1.0)


def test_equicorrelated_determinant_matches_closed_form():
    for rho in RHO_GRID:
        g = an.EquicorrelatedGaussian(rho, 3)
        assert math.exp(g.logdet()) == pytest.approx(1 + 2 * rho**3 - 3 * rho**2, rel=1e-12)


def test_equicorrelated_rejects_boundary():
    with pytest.raises(an.DomainError):
        an.EquicorrelatedGaussian(-0.25, 5)
    an.EquicorrelatedGaussian(-0.24, 5)


def test_entropy_route_agrees_with_closed_forms():
    for rho in RHO_GRID:
        g = an.EquicorrelatedGaussian(rho, 3)
        assert g.dual_total_correlation() == pytest.approx(an.gaussian_dtc3(rho), abs=1e-12)
        assert g.mutual_information([0, 1], [2]) == pytest.approx(an.gaussian_pair_third_mi3(rho), abs=1e-12)
        assert g.conditional_mi([0], [1], [2]) == pytest.approx(an.gaussian_conditional_mi3(rho), abs=1e-12)


class TestSandwich:
    def test_zeros(self):
        b = an.sandwich_bounds([0, 0, 0])
        assert (b.lower, b.upper) == (0.0, 0.0)

    def test_gaussian_half(self):
        b = an.sandwich_bounds([PAIR_THIRD_05] * 3)
        assert b.lower == pytest.approx(0.2027325, abs=1e-7)
        assert b.upper == pytest.approx(0.4054651, abs=1e-7)
        assert b.contains(DTC_05, strict=True)

    def test_four_terms(self):
        b = an.sandwich_bounds([0.7] * 4)
        assert b.lower == pytest.approx(0.7)
        assert b.upper == pytest.approx(2.1)

    def test_errors(self):
        with pytest.raises(ValueError):
            an.sandwich_bounds([1.0, 1.0])
        with pytest.raises(ValueError):
            an.sandwich_bounds([1.0, -0.1, 1.0])

    @pytest.mark.parametrize("rho", RHO_GRID)
    def test_brackets_dtc(self, rho):
        b = an.sandwich_bounds([an.gaussian_pair_third_mi3(rho)] * 3)
        dtc = an.gaussian_dtc3(rho)
        assert b.contains(dtc, strict=rho != 0.0)
        if rho == 0.0:
            assert b.lower == b.upper == dtc == 0.0


@pytest.mark.parametrize("rho", RHO_GRID)
def test_identities(rho):
    assert an.dtc_decomposition_residual(rho) <= 1e-12
    assert an.chain_rule_residual(rho) <= 1e-12
    assert an.tc_dtc_sum_residual(rho) <= 1e-12


def test_tc_dtc_sum_identity_general_m():
    for m in (4, 6):
        assert an.tc_dtc_sum_residual(0.3, m) <= 1e-12


def test_dtc_increasing_on_unit_interval():
    grid = np.linspace(0, 0.99, 200)
    vals = [an.gaussian_dtc3(r) for r in grid]
    assert vals[0] == 0.0
    assert np.all(np.diff(vals) > 0)


@given(st.floats(min_value=-0.49, max_value=0.99))
def test_dtc_nonnegative_and_zero_only_at_independence(rho):
    v = an.gaussian_dtc3(rho)
    assert v >= -1e-15  # cancellation near rho = 0
    if rho != 0.0:
        assert v > 0 or abs(rho) < 1e-5


@given(st.floats(min_value=-0.49, max_value=0.99))
def test_chain_rule_symmetric_form(rho):
    # By exchangeability I(pair;third) = I(X1;X2) + I(X1;X2|X3).
    lhs = an.gaussian_pair_third_mi3(rho)
    rhs = an.gaussian_pairwise_mi(rho) + an.gaussian_conditional_mi3(rho)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_unit_conversion_roundtrip():
    assert an.nats_to_bits(math.log(2)) == pytest.approx(1.0)
    assert an.bits_to_nats(an.nats_to_bits(1.234)) == pytest.approx(1.234)
