import math

import numpy as np
import pytest

from busylab.environment import MarkovEnv, constant_env, two_state_symmetric
from busylab.exact import (
    QueueParams,
    bitrate_gap_exp_corr,
    constant_shift_taylor,
    rsr_bitrate,
    rsr_bitrate_linear,
)
from busylab.expansion import (
    CLOSED_FORM,
    MC_JOINT,
    QUAD_HYBRID,
    CoefficientEstimate,
    area_coeff_cross,
    area_coeff_down_down,
    area_coeff_up_up,
    bitrate_gap_down_only,
    bitrate_gap_up_only,
    busy_coeff_down,
    busy_coeff_up,
    estimate_gap_coeff,
    expansion_summary,
    first_event_prob_fit,
    first_order_coeffs,
    gap_coeff_limits,
)

Q = QueueParams(0.5, 1.0)
ENV_UP = two_state_symmetric(1.0, (0.0, 2.0))
ENV_DOWN = two_state_symmetric(1.0, (-1.0, 0.0))
ENV_PM = two_state_symmetric(1.0, (-1.0, 1.0))


def zdiff(a: CoefficientEstimate, b: CoefficientEstimate) -> float:
    return (a.value - b.value) / math.hypot(a.std_error, b.std_error)


def test_coefficient_estimate_invariant():
    ok = CoefficientEstimate(1.5, 0.1, 100, MC_JOINT)
    assert isinstance(ok.value, float) and isinstance(ok.n_samples, int)
    assert ok.z_against(1.0) == pytest.approx(5.0)
    exact = CoefficientEstimate(2.0, 0.0, 100, CLOSED_FORM)
    assert exact.std_error == 0.0
    with pytest.raises(ValueError):
        CoefficientEstimate(1.0, 0.0, 100, MC_JOINT)       # exact but sampled?
    with pytest.raises(ValueError):
        CoefficientEstimate(1.0, 0.2, 100, CLOSED_FORM)    # noisy but exact?
    with pytest.raises(ValueError):
        CoefficientEstimate(1.0, 0.1, 100, "guesswork")


def test_first_order_coeffs():
    gap = Q.mu - Q.lam
    for env in (constant_env(1.0), constant_env(-0.3), ENV_UP, ENV_PM):
        mp = env.p_moments()["mean"]
        lin = first_order_coeffs(Q, env)
        assert lin["busy_lin"] == pytest.approx(-mp / gap**2)
        assert lin["area_lin"] == pytest.approx(-mp * (Q.mu + Q.lam) / gap**3)
        assert lin["bitrate_lin"] == pytest.approx(Q.rho * mp / Q.mu)
    assert first_order_coeffs(Q, ENV_PM)["busy_lin"] == 0.0


def test_sign_structure_short_circuits():
    # down machinery is inert for p >= 0 (and vice versa): exact zeros,
    # no sampling noise
    for est in (area_coeff_down_down(Q, ENV_UP, 1000, seed=1),
                area_coeff_cross(Q, ENV_UP, 1000, seed=1),
                busy_coeff_down(Q, ENV_UP, 1000, seed=1),
                area_coeff_up_up(Q, ENV_DOWN, 1000, seed=1),
                area_coeff_cross(Q, ENV_DOWN, 1000, seed=1),
                busy_coeff_up(Q, ENV_DOWN, 1000, seed=1)):
        assert est.value == 0.0
        assert est.std_error == 0.0
        assert est.method == CLOSED_FORM


def test_zero_profile_gives_zero_expansion():
    s = expansion_summary(Q, constant_env(0.0), 1000, seed=2)
    assert s.busy_lin == s.area_lin == s.bitrate_lin == 0.0
    for part in (s.up_up, s.down_down, s.cross, s.busy_up, s.busy_down,
                 s.busy_quad, s.area_quad, s.bitrate_quad):
        assert part.value == 0.0 and part.method == CLOSED_FORM
    assert s.bitrate_prediction(Q, 0.2) == 1.0 - Q.rho


def test_constant_up_shift_matches_taylor():
    s = expansion_summary(Q, constant_env(1.0), 400_000, seed=808, workers=2)
    tay = constant_shift_taylor(Q, 1.0)
    assert s.busy_lin == pytest.approx(tay["busy_lin"])
    assert s.area_lin == pytest.approx(tay["area_lin"])
    assert abs(s.up_up.z_against(-tay["area_quad"])) < 4.0
    assert abs(s.busy_up.z_against(-tay["busy_quad"])) < 4.0
    assert abs(s.busy_quad.z_against(tay["busy_quad"])) < 4.0      # +8
    assert abs(s.area_quad.z_against(tay["area_quad"])) < 4.0      # +32
    assert abs(s.bitrate_quad.z_against(tay["bitrate_quad"])) < 4.0  # -1/2
    assert s.busy_quad.method == MC_JOINT
    # the ratio assembly is an exact linear map of the five parts
    rho = Q.rho
    const = rho * (1 + rho) / (Q.mu**2 * (1 - rho))
    recon = (const
             + Q.mu * (1 - rho)**3 * (s.up_up.value + s.down_down.value + s.cross.value)
             + Q.mu * (1 - rho)**2 * (s.busy_down.value - s.busy_up.value))
    assert s.bitrate_quad.value == pytest.approx(recon, rel=1e-12)


def test_constant_down_shift_matches_taylor():
    s = expansion_summary(Q, constant_env(-1.0), 400_000, seed=809, workers=2)
    tay = constant_shift_taylor(Q, -1.0)
    assert abs(s.down_down.z_against(-tay["area_quad"])) < 4.0
    assert abs(s.busy_down.z_against(tay["busy_quad"])) < 4.0
    assert abs(s.area_quad.z_against(tay["area_quad"])) < 4.0
    assert abs(s.bitrate_quad.z_against(tay["bitrate_quad"])) < 4.0
    # predictions against the exact shifted queue at a small eps
    eps = 0.05
    from busylab.exact import constant_shift_reference
    ref = constant_shift_reference(Q, eps, -1.0)
    tol_b = 4.0 * s.busy_quad.std_error * eps**2 + 40.0 * eps**3
    assert abs(s.busy_prediction(2.0, eps) - ref["e_busy"]) < tol_b
    tol_a = 4.0 * s.area_quad.std_error * eps**2 + 160.0 * eps**3
    assert abs(s.area_prediction(4.0, eps) - ref["e_area"]) < tol_a


def test_quadrature_route_agrees_with_mc():
    env = two_state_symmetric(1.0, (0.0, 2.0), alpha=0.5)
    quad = area_coeff_up_up(Q, env, 65_536, seed=2024, method=QUAD_HYBRID)
    mc = area_coeff_up_up(Q, env, 400_000, seed=2027, workers=2, method=MC_JOINT)
    assert quad.method == QUAD_HYBRID and mc.method == MC_JOINT
    assert abs(zdiff(quad, mc)) < 4.0
    # regression pin: the quadrature route is deterministic given the seed
    assert quad.value == pytest.approx(-38.716848439965204, rel=1e-12)
    assert quad.std_error == pytest.approx(1.5708615021761576, rel=1e-12)
    with pytest.raises(ValueError):
        area_coeff_up_up(Q, env, 100, seed=1, method="bogus")


def test_gap_up_only_matches_transform_value():
    # decay 2*q*alpha = 0.5, centered variance 1
    env = two_state_symmetric(1.0, (0.0, 2.0), alpha=0.25)
    target = bitrate_gap_exp_corr(Q, 0.5, 1.0)
    assert target == pytest.approx(-0.4142135623731, abs=1e-12)
    est = bitrate_gap_up_only(Q, env, 200_000, seed=2025)
    assert est.method == QUAD_HYBRID
    assert abs(est.z_against(target)) < 4.0
    assert est.value == pytest.approx(-0.41430370118347687, rel=1e-12)
    mc = bitrate_gap_up_only(Q, env, 200_000, seed=2028, workers=2,
                             method=MC_JOINT)
    assert abs(mc.z_against(target)) < 4.0
    with pytest.raises(ValueError):
        bitrate_gap_up_only(Q, ENV_PM, 100, seed=1)


def test_gap_down_only_matches_transform_value():
    env = two_state_symmetric(1.0, (-1.0, 0.0), alpha=1.0)  # decay 2, var 1/4
    target = 0.25 * bitrate_gap_exp_corr(Q, 2.0, 1.0)
    est = bitrate_gap_down_only(Q, env, 200_000, seed=2026)
    assert abs(est.z_against(target)) < 4.0
    assert est.value == pytest.approx(-0.03021349649027675, rel=1e-12)
    assert est.value + 4.0 * est.std_error < 0.0   # the gap is negative
    # the offset variant answers a different functional
    off = bitrate_gap_down_only(Q, env, 200_000, seed=2026,
                                cross_offset=Q.mu / (Q.mu - Q.lam)**2)
    assert off.value != est.value
    with pytest.raises(ValueError):
        bitrate_gap_down_only(Q, ENV_PM, 100, seed=1)


def test_gap_coeff_limits():
    lim = gap_coeff_limits(Q, ENV_UP)       # Ep = 1, Var = 1
    assert lim["fast"] == pytest.approx(-0.5)
    assert lim["fast_full"] == 0.0
    assert lim["slow_full"] == pytest.approx(-2.0)
    assert lim["slow"] == pytest.approx(-2.5)
    const = gap_coeff_limits(Q, constant_env(1.0))
    assert const["slow_full"] == 0.0
    assert const["slow"] == const["fast"] == pytest.approx(-0.5)


def test_estimate_gap_coeff_reference_shift():
    grid = (0.04, 0.07, 0.1)
    mp = ENV_UP.p_moments()["mean"]
    psi_t, rows_t = estimate_gap_coeff(Q, ENV_UP, grid, 30_000, seed=2029,
                                       workers=2, reference="truncated")
    psi_f, rows_f = estimate_gap_coeff(Q, ENV_UP, grid, 30_000, seed=2029,
                                       workers=2, reference="full")
    for (e1, y1, s1), (e2, y2, s2) in zip(rows_t, rows_f):
        assert e1 == e2 and s1 == s2           # identical sampling
        shift = (rsr_bitrate(Q, mp, e1) - rsr_bitrate_linear(Q, mp, e1)) / e1**2
        assert y1 - y2 == pytest.approx(shift, rel=1e-9)
    # the fitted intercepts inherit the -rho (Ep)^2/mu^2 offset
    assert psi_t.value - psi_f.value == pytest.approx(-0.5, abs=0.01)
    assert psi_t.std_error == pytest.approx(psi_f.std_error, rel=1e-9)
    with pytest.raises(ValueError):
        estimate_gap_coeff(Q, ENV_UP, grid, 1000, seed=1, reference="exactly")
    one, rows1 = estimate_gap_coeff(Q, ENV_UP, (0.08,), 20_000, seed=2030)
    assert one.value == rows1[0][1] and one.std_error == rows1[0][2]


def test_first_event_fits_reference_constants():
    grid = (0.0125, 0.025, 0.0375, 0.05)
    up, rows_up = first_event_prob_fit(Q, constant_env(1.0), grid, 120_000,
                                       seed=313, workers=2, kind="up")
    assert abs(up[0].z_against(2.0)) < 4.0
    down, _ = first_event_prob_fit(Q, constant_env(-1.0), grid, 120_000,
                                   seed=313, workers=2, kind="down")
    assert abs(down[0].z_against(2.0)) < 4.0
    dbl, rows_dbl = first_event_prob_fit(Q, constant_env(1.0), grid, 120_000,
                                         seed=313, workers=2, kind="double_up")
    assert len(dbl) == 2                      # powers (2, 3)
    assert abs(dbl[0].z_against(4.0)) < 4.0
    # hit probabilities grow with eps and the double event is rarer
    pis = [r[1] for r in rows_up]
    assert all(a < b for a, b in zip(pis, pis[1:]))
    assert all(rd[1] < ru[1] for rd, ru in zip(rows_dbl, rows_up))
    with pytest.raises(KeyError):
        first_event_prob_fit(Q, constant_env(1.0), grid, 100, seed=1,
                             kind="triple")


def test_expansion_summary_mixed_sign():
    s = expansion_summary(Q, ENV_PM, 150_000, seed=810, workers=2)
    for part in (s.up_up, s.down_down, s.cross, s.busy_up, s.busy_down):
        assert part.method == MC_JOINT
        assert part.std_error > 0.0
        assert part.n_samples == 150_000
    assert s.busy_quad.value == pytest.approx(
        s.busy_down.value - s.busy_up.value, rel=1e-12)
    assert s.area_quad.value == pytest.approx(
        -(s.up_up.value + s.down_down.value + s.cross.value), rel=1e-12)
    # mirror symmetry: mean p = 0 kills every first-order coefficient
    assert s.busy_lin == s.area_lin == s.bitrate_lin == 0.0
