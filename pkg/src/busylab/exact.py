"""Closed forms for the M/M/1 busy period and small constant rate shifts.

Conventions, used across the package:

  B      busy-period duration (starts with one customer, ends at emptiness)
  A      integral of the queue length over the busy period ("area")
  N      customers served during the busy period
  D_i    departure instants inside the busy period, relative to its start
  rho    lam/mu < 1

The Laplace transform beta(s) = E exp(-s B) is the root in (0, 1] of

  lam * beta^2 - (lam + mu + s) * beta + mu = 0,

evaluated in the .5*(c - sqrt(..)) form rationalized to avoid cancellation.
Moments come from implicit differentiation of that fixed point; the joint
transform E(z^N e^{-sB}) (same quadratic with mu -> z*mu) supplies the
customer-count cross moments.  Everything else below is standard
renewal-reward algebra; the test suite pins every value against an
independent high-precision derivation (tools/derive_constants.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QueueParams",
    "BusyStats",
    "busy_stats",
    "busy_lst",
    "busy_moments",
    "size_biased_lst",
    "weighted_exp_integral",
    "bitrate_gap_exp_corr",
    "constant_shift_reference",
    "constant_shift_taylor",
    "rsr_bitrate",
    "rsr_bitrate_linear",
]


@dataclass(frozen=True)
class QueueParams:
    """Arrival and service rates of the unperturbed M/M/1 queue."""

    lam: float
    mu: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lam) and self.lam > 0.0):
            raise ValueError(f"lam must be finite and > 0, got {self.lam}")
        if not (math.isfinite(self.mu) and self.mu > 0.0):
            raise ValueError(f"mu must be finite and > 0, got {self.mu}")
        if self.lam >= self.mu:
            raise ValueError(
                f"need lam < mu for a stable queue, got lam={self.lam}, mu={self.mu}"
            )

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    def require_perturbation_stable(self, env, eps: float) -> None:
        """Entry gate for every simulation/estimation routine.

        The modulated service rate is mu + eps*p(X(t)); we insist on
        lam + eps * sup_x |p(x)| < mu so the perturbed rate stays positive
        and the perturbed queue stays stable for every environment state.
        """
        if eps < 0.0:
            raise ValueError(f"eps must be >= 0, got {eps}")
        sup_abs = float(np.max(np.abs(env.p)))
        if self.lam + eps * sup_abs >= self.mu:
            raise ValueError(
                f"unstable perturbation: lam + eps*sup|p| = "
                f"{self.lam + eps * sup_abs} >= mu = {self.mu}"
            )


@dataclass(frozen=True)
class BusyStats:
    """First busy-period moments of the unperturbed queue."""

    e_busy: float
    e_busy_sq: float
    e_busy_cube: float
    e_area: float
    e_nserved: float
    e_nserved_sq: float
    e_nserved_busy: float   # E(N * B)
    e_dep_sum: float        # E(sum_i D_i)


def busy_lst(q: QueueParams, s: float) -> float:
    """beta(s) = E exp(-s B): the (0, 1] root of lam b^2 - (lam+mu+s) b + mu = 0."""
    if s < 0.0:
        raise ValueError("transform argument must be >= 0")
    c = q.lam + q.mu + s
    return 2.0 * q.mu / (c + math.sqrt(c * c - 4.0 * q.lam * q.mu))


def busy_moments(q: QueueParams, order: int = 4) -> list[float]:
    """E(B^k), k = 1..order (order <= 4), by implicit differentiation.

    Differentiating lam b^2 - c b + mu = 0 (c = lam+mu+s) repeatedly gives,
    with g = 2 lam b - c evaluated at s=0 (so g = lam - mu):

      b' g   = b
      b'' g  = b' (2 - 2 lam b')
      b''' g = b'' (3 - 6 lam b')
      b'''' g = b''' (4 - 8 lam b') - 6 lam (b'')^2

    and E(B^k) = (-1)^k b^(k)(0).
    """
    if not 1 <= order <= 4:
        raise ValueError("order must be in 1..4")
    lam, mu = q.lam, q.mu
    g = lam - mu
    d1 = 1.0 / g
    d2 = d1 * (2.0 - 2.0 * lam * d1) / g
    d3 = d2 * (3.0 - 6.0 * lam * d1) / g
    d4 = (d3 * (4.0 - 8.0 * lam * d1) - 6.0 * lam * d2 * d2) / g
    return [-d1, d2, -d3, d4][:order]


def busy_stats(q: QueueParams) -> BusyStats:
    """All closed-form busy-period statistics used by the validation suite.

    E(N*B) and E(N(N-1)) come from the joint transform F(z,s) (root of
    lam F^2 - (lam+mu+s) F + z mu = 0):  E(N*B) = mu(lam+mu)/(mu-lam)^3 and
    E(N(N-1)) = 2 lam mu^2/(mu-lam)^3.  E(sum D_i) = mu^2/(mu-lam)^3 follows
    from the pathwise identity A = sum D_i - sum A_i together with the time
    reversal {B - D_i} =d= {A_j}, giving 2 E(sum D) = E(NB) + E(A).
    """
    lam, mu = q.lam, q.mu
    m1, m2, m3 = busy_moments(q, 3)
    gap = mu - lam
    e_n = mu / gap
    e_nn1 = 2.0 * lam * mu**2 / gap**3
    return BusyStats(
        e_busy=m1,
        e_busy_sq=m2,
        e_busy_cube=m3,
        e_area=mu / gap**2,
        e_nserved=e_n,
        e_nserved_sq=e_nn1 + e_n,
        e_nserved_busy=mu * (lam + mu) / gap**3,
        e_dep_sum=mu**2 / gap**3,
    )


def size_biased_lst(q: QueueParams, s: float, order: int = 1) -> float:
    """Transform of the order-times size-biased busy period.

    Z* has density z f(z) / E(Z); iterating gives, via
    E e^{-sZ*} = (1 - phi(s)) / (s E Z):

      order 1:  (1 - beta(s)) / (s E B)
      order 2:  2 (s E(B) - 1 + beta(s)) / (s^2 E(B^2))
      order 3:  3 (s^2 E(B^2) - 2 s E(B) + 2 - 2 beta(s)) / (s^3 E(B^3))
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    if s < 0.0:
        raise ValueError("transform argument must be >= 0")
    if s == 0.0:
        return 1.0
    b = busy_lst(q, s)
    m1, m2, m3 = busy_moments(q, 3)
    if order == 1:
        return (1.0 - b) / (s * m1)
    if order == 2:
        return 2.0 * (s * m1 - 1.0 + b) / (s * s * m2)
    return 3.0 * (s * s * m2 - 2.0 * s * m1 + 2.0 - 2.0 * b) / (s**3 * m3)


def weighted_exp_integral(q: QueueParams, a: float, power: int) -> float:
    """E int_0^B (B - v)^power e^{-a v} dv  for power in {1, 2}, a > 0.

    Integrating by parts against the busy-period law turns these into pure
    transform expressions:

      power 1:  E(B)/a  -  1/a^2  + beta(a)/a^2
      power 2:  E(B^2)/a - 2E(B)/a^2 + 2/a^3 - 2 beta(a)/a^3

    These are the oracles for the sampled-path quadrature estimators.
    """
    if a <= 0.0:
        raise ValueError("a must be > 0")
    b = busy_lst(q, a)
    m1, m2 = busy_moments(q, 2)
    if power == 1:
        return m1 / a - 1.0 / a**2 + b / a**2
    if power == 2:
        return m2 / a - 2.0 * m1 / a**2 + 2.0 / a**3 - 2.0 * b / a**3
    raise ValueError("power must be 1 or 2")


def bitrate_gap_exp_corr(q: QueueParams, decay: float, var_p: float) -> float:
    """Closed-form eps^2 coefficient of the per-flow bit-rate gap when the
    perturbation covariance is a single exponential C_p(u) = var_p e^{-decay u}.

    Busy-integral form (the one implemented):

      gap = var_p (1-rho)^3 [ I1(decay) - mu (1-rho)/2 * I2(decay) ]

    with I_k = E int_0^B (B-v)^k e^{-decay v} dv.  An equivalent route goes
    through the twice/thrice size-biased transforms,

      gap = var_p/mu^2 [ phi2(decay) - (1+rho)/(1-rho) phi3(decay) ],

    the identity following from E(B^2) = 2/(mu^2(1-rho)^3) and
    E(B^3) = 6(1+rho)/(mu^3(1-rho)^5); the tests check both numerically.
    Only the centered covariance enters, so this is the gap against the
    full rate-averaged reference 1 - lam/(mu + eps E p); subtracting the
    first-order truncation of that reference instead shifts the
    coefficient by -rho (E p)^2 / mu^2 (see expansion.gap_coeff_limits).
    """
    if decay <= 0.0:
        raise ValueError("decay must be > 0 (use the frozen-limit formulas at 0)")
    if var_p < 0.0:
        raise ValueError("var_p must be >= 0")
    one_m = 1.0 - q.rho
    i1 = weighted_exp_integral(q, decay, 1)
    i2 = weighted_exp_integral(q, decay, 2)
    return var_p * one_m**3 * (i1 - q.mu * one_m / 2.0 * i2)


def constant_shift_reference(q: QueueParams, eps: float, p0: float) -> dict[str, float]:
    """Exact statistics of the queue with constant shift mu -> mu + eps*p0.

    This is the estimator oracle: a perturbation that does not depend on the
    environment state turns the perturbed queue into a plain M/M/1 with a
    shifted service rate, so every expansion coefficient can be checked
    against literal derivatives of these closed forms.
    """
    m = q.mu + eps * p0
    if q.lam >= m:
        raise ValueError(f"shifted rate {m} not above lam={q.lam}")
    return {
        "e_busy": 1.0 / (m - q.lam),
        "e_area": m / (m - q.lam) ** 2,
        "bitrate": 1.0 - q.lam / m,
    }


def constant_shift_taylor(q: QueueParams, p0: float) -> dict[str, float]:
    """Taylor coefficients in eps of the constant-shift closed forms.

      E(B~) = E(B) + busy_lin eps + busy_quad eps^2 + O(eps^3)
      E(A~) = E(A) + area_lin eps + area_quad eps^2 + O(eps^3)
      bitrate = (1-rho) + rho p0 eps / mu + bitrate_quad eps^2 + O(eps^3)
    """
    lam, mu = q.lam, q.mu
    gap = mu - lam
    return {
        "busy_lin": -p0 / gap**2,
        "busy_quad": p0**2 / gap**3,
        "area_lin": -p0 * (mu + lam) / gap**3,
        "area_quad": p0**2 * (mu + 2.0 * lam) / gap**4,
        "bitrate_quad": -lam * p0**2 / mu**3,
    }


def rsr_bitrate(q: QueueParams, mean_p: float, eps: float) -> float:
    """Bit rate of the rate-averaged reference queue (service rate mu + eps E p).

    Replacing the modulated rate by its stationary average gives a plain
    M/M/1 whose per-flow bit rate is 1 - lam/(mu + eps E p).
    """
    m = q.mu + eps * mean_p
    if q.lam >= m:
        raise ValueError(f"averaged rate {m} not above lam={q.lam}")
    return 1.0 - q.lam / m


def rsr_bitrate_linear(q: QueueParams, mean_p: float, eps: float) -> float:
    """First-order truncation of rsr_bitrate: (1 - rho) + rho * mean_p * eps / mu."""
    return (1.0 - q.rho) + q.rho * mean_p * eps / q.mu
