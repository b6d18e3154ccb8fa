import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from busylab.exact import (
    QueueParams,
    bitrate_gap_exp_corr,
    busy_lst,
    busy_moments,
    busy_stats,
    constant_shift_reference,
    constant_shift_taylor,
    rsr_bitrate,
    rsr_bitrate_linear,
    size_biased_lst,
    weighted_exp_integral,
)

REF = QueueParams(0.5, 1.0)

# frozen at 30 significant digits with mpmath; the reference point is
# lam=0.5, mu=1 throughout
BETA_REF = {0.5: 0.5857864376269, 1.0: 0.43844718719117,
            2.0: 0.29843788128358, 8.0: 0.10585288597203}
I1_REF = {0.5: 2.3431457505076, 1.0: 1.4384471871912,
          2.0: 0.82460947032089, 8.0: 0.23602895134331}
I2_REF = {0.5: 22.62741699797, 1.0: 13.123105625618,
          2.0: 7.1753905296791, 8.0: 1.9409927621642}
PSI_REF = {0.5: -0.4142135623731, 1.0: -0.23029115240166,
           2.0: -0.12115477026236, 8.0: -0.031152404899716,
           0.01: -1.8524871180656, 0.02: -1.7261900848388,
           0.05: -1.4358823623618, 100.0: -0.0024999387255196}


def test_queue_params_validate():
    assert REF.rho == 0.5
    with pytest.raises(ValueError):
        QueueParams(1.0, 1.0)
    with pytest.raises(ValueError):
        QueueParams(-0.1, 1.0)


def test_busy_moments_reference_point():
    m1, m2, m3, m4 = busy_moments(REF, 4)
    assert m1 == pytest.approx(2.0, abs=1e-12)
    assert m2 == pytest.approx(16.0, abs=1e-11)
    assert m3 == pytest.approx(288.0, abs=1e-9)
    assert m4 == pytest.approx(8448.0, abs=1e-7)


def test_busy_stats_reference_point():
    s = busy_stats(REF)
    assert s.e_busy == pytest.approx(2.0, abs=1e-12)
    assert s.e_busy_sq == pytest.approx(16.0, abs=1e-11)
    assert s.e_area == pytest.approx(4.0, abs=1e-12)
    assert s.e_nserved == pytest.approx(2.0, abs=1e-12)
    assert s.e_nserved_sq == pytest.approx(10.0, abs=1e-11)
    assert s.e_nserved_busy == pytest.approx(12.0, abs=1e-11)
    assert s.e_dep_sum == pytest.approx(8.0, abs=1e-11)
    # pathwise identity: 2 E(sum D) = E(NB) + E(A)
    assert 2.0 * s.e_dep_sum == pytest.approx(s.e_nserved_busy + s.e_area)


def test_busy_lst_frozen_values():
    for a, target in BETA_REF.items():
        assert busy_lst(REF, a) == pytest.approx(target, abs=1e-12)


@given(st.floats(min_value=1e-6, max_value=50.0))
def test_busy_lst_satisfies_defining_quadratic(s):
    b = busy_lst(REF, s)
    assert 0.0 < b <= 1.0
    resid = REF.lam * b * b - (REF.lam + REF.mu + s) * b + REF.mu
    assert abs(resid) < 1e-9


@given(st.floats(min_value=0.55, max_value=5.0),
       st.floats(min_value=0.05, max_value=0.5))
@settings(max_examples=50)
def test_busy_lst_monotone_any_stable_queue(mu, lam):
    q = QueueParams(lam, mu)
    vals = [busy_lst(q, s) for s in (0.1, 0.5, 2.0, 10.0)]
    assert all(v1 > v2 for v1, v2 in zip(vals, vals[1:]))
    assert busy_lst(q, 0.0) == pytest.approx(1.0)


def test_size_biased_transforms():
    # order-1 size-biased transform at the frozen points
    for a in (0.5, 1.0, 2.0):
        direct = (1.0 - busy_lst(REF, a)) / (a * 2.0)
        assert size_biased_lst(REF, a, order=1) == pytest.approx(direct)
    # all orders decrease from 1 at s=0
    for order in (1, 2, 3):
        assert size_biased_lst(REF, 0.0, order=order) == 1.0
        assert size_biased_lst(REF, 1.0, order=order) < 1.0
    with pytest.raises(ValueError):
        size_biased_lst(REF, 1.0, order=4)


def test_weighted_exp_integral_frozen_values():
    for a in (0.5, 1.0, 2.0, 8.0):
        assert weighted_exp_integral(REF, a, 1) == pytest.approx(I1_REF[a], abs=1e-11)
        assert weighted_exp_integral(REF, a, 2) == pytest.approx(I2_REF[a], abs=1e-10)


def test_weighted_exp_integral_small_a_limits():
    # a->0 limits: E int (B-v) dv = E(B^2)/2 and E int (B-v)^2 dv = E(B^3)/3,
    # after removing the known O(a) corrections -a E(B^3)/6 and -a E(B^4)/12
    a = 1e-4
    i1 = weighted_exp_integral(REF, a, 1) + a * 288.0 / 6.0
    i2 = weighted_exp_integral(REF, a, 2) + a * 8448.0 / 12.0
    assert i1 == pytest.approx(16.0 / 2, rel=1e-5)
    assert i2 == pytest.approx(288.0 / 3, rel=1e-5)


def test_gap_coefficient_frozen_values():
    for a, target in PSI_REF.items():
        assert bitrate_gap_exp_corr(REF, a, 1.0) == pytest.approx(target, abs=1e-11)
    # variance scaling is linear
    assert bitrate_gap_exp_corr(REF, 2.0, 0.25) == pytest.approx(
        0.25 * PSI_REF[2.0], abs=1e-12)
    assert bitrate_gap_exp_corr(REF, 2.0, 0.0) == 0.0


def test_gap_coefficient_size_biased_route():
    # same quantity through the twice/thrice size-biased transforms
    m1, m2, m3 = busy_moments(REF, 3)
    for a in (0.5, 1.0, 2.0, 8.0):
        phi2 = size_biased_lst(REF, a, order=2)
        phi3 = size_biased_lst(REF, a, order=3)
        alt = (phi2 - (1.0 + REF.rho) / (1.0 - REF.rho) * phi3) / REF.mu**2
        assert alt == pytest.approx(PSI_REF[a], abs=1e-11)


def test_gap_coefficient_monotone_in_decay():
    vals = [bitrate_gap_exp_corr(REF, a, 1.0) for a in (0.02, 0.1, 0.5, 2.0, 20.0)]
    assert all(v < 0 for v in vals)
    assert all(v1 < v2 for v1, v2 in zip(vals, vals[1:]))


def test_constant_shift_reference_and_taylor():
    ref0 = constant_shift_reference(REF, 0.0, 1.0)
    assert ref0["e_busy"] == pytest.approx(2.0)
    assert ref0["e_area"] == pytest.approx(4.0)
    assert ref0["bitrate"] == pytest.approx(0.5)
    with pytest.raises(ValueError):
        constant_shift_reference(REF, 0.6, -1.0)

    t = constant_shift_taylor(REF, 1.0)
    assert t["busy_lin"] == pytest.approx(-4.0)
    assert t["busy_quad"] == pytest.approx(8.0)
    assert t["area_lin"] == pytest.approx(-12.0)
    assert t["area_quad"] == pytest.approx(32.0)
    assert t["bitrate_quad"] == pytest.approx(-0.5)
    # the mirror has the same even coefficients
    tm = constant_shift_taylor(REF, -1.0)
    assert tm["busy_quad"] == pytest.approx(8.0)
    assert tm["area_quad"] == pytest.approx(32.0)
    assert tm["bitrate_quad"] == pytest.approx(-0.5)
    assert tm["busy_lin"] == pytest.approx(4.0)


@given(st.floats(min_value=-1.0, max_value=1.0),
       st.floats(min_value=0.0, max_value=0.15))
@settings(max_examples=60)
def test_taylor_matches_shift_reference(p0, eps):
    # second-order Taylor vs the exact closed forms, three terms each
    t = constant_shift_taylor(REF, p0)
    ref = constant_shift_reference(REF, eps, p0)
    for key, base, lin, quad in (
            ("e_busy", 2.0, t["busy_lin"], t["busy_quad"]),
            ("e_area", 4.0, t["area_lin"], t["area_quad"]),
            ("bitrate", 0.5, 0.5 * p0, t["bitrate_quad"])):
        pred = base + lin * eps + quad * eps**2
        # remainder bound: the area series has the largest cubic term
        # (-80 x^3 at x = p0 eps), successive coefficient ratios approach
        # 2.4; 100/(1-2.5|x|) covers it with ~25% slack over the domain
        x = abs(p0 * eps)
        room = 100.0 * x**3 / max(1.0 - 2.5 * x, 0.2)
        assert abs(pred - ref[key]) < room + 1e-12


def test_rsr_bitrate_forms():
    assert rsr_bitrate(REF, 1.0, 0.0) == pytest.approx(0.5)
    assert rsr_bitrate(REF, 1.0, 0.1) == pytest.approx(1.0 - 0.5 / 1.1)
    assert rsr_bitrate_linear(REF, 1.0, 0.1) == pytest.approx(0.55)
    # they agree to first order
    eps = 1e-4
    assert rsr_bitrate(REF, 2.0, eps) == pytest.approx(
        rsr_bitrate_linear(REF, 2.0, eps), abs=1e-7)
