"""Second-order expansion machinery for the modulated busy period.

Every quantity here is a coefficient in the amplitude eps of the service
modulation mu + eps*p(X(t)).  Conventions (matching exact.constant_shift_taylor
and verified against it in the tests):

    E busy(eps) = E(B) + busy_lin*eps + (down_b - up_b)*eps^2 + O(eps^3)
    E area(eps) = E(A) + area_lin*eps - (up_up + down_down + cross)*eps^2 + ...
    bitrate(eps) = (1-rho) + rho*Ep/mu * eps + c2 * eps^2 + ...

where up_b/down_b are the busy-duration functionals estimated by
busy_coeff_up / busy_coeff_down and up_up/down_down/cross the area ones.
The Monte-Carlo estimators run on the plain (eps = 0) queue only — the
perturbation enters through closed-form weights — so a single run prices
every amplitude at once.

Estimator routes are tagged: "mc_joint" samples an environment path per busy
period; "quadrature_hybrid" integrates the pair-correlation kernel in closed
form per sampled busy period; "closed_form" marks values that need no
sampling at all — in particular every functional that is identically zero
because p never takes the sign it weights (those short-circuit instead of
averaging a stream of exact zeros, which keeps the invariant that a zero
standard error means a closed form).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .environment import MarkovEnv
from .exact import QueueParams, rsr_bitrate, rsr_bitrate_linear
from .simulate import (
    STREAM_BUSY_DOWN,
    STREAM_BUSY_UP,
    STREAM_CROSS,
    STREAM_DOWN_DOWN,
    STREAM_GAP_DOWN,
    STREAM_GAP_UP,
    STREAM_UP_UP,
    MomentEstimate,
    _SOJOURN_MODES,
    block_generators,
    coupled_stats,
    reduce_sums,
    run_blocks,
)
from .stats import wls_polyfit

__all__ = [
    "CoefficientEstimate",
    "first_order_coeffs",
    "area_coeff_up_up",
    "area_coeff_down_down",
    "area_coeff_cross",
    "busy_coeff_up",
    "busy_coeff_down",
    "bitrate_quad_coeff",
    "ExpansionSummary",
    "expansion_summary",
    "gap_coeff_limits",
    "estimate_gap_coeff",
    "bitrate_gap_down_only",
    "bitrate_gap_up_only",
    "first_event_prob_fit",
]

MC_JOINT = "mc_joint"
QUAD_HYBRID = "quadrature_hybrid"
CLOSED_FORM = "closed_form"


@dataclass(frozen=True)
class CoefficientEstimate:
    value: float
    std_error: float
    n_samples: int
    method: str

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "std_error", float(self.std_error))
        object.__setattr__(self, "n_samples", int(self.n_samples))
        if self.method not in (MC_JOINT, QUAD_HYBRID, CLOSED_FORM):
            raise ValueError(f"unknown estimation method {self.method!r}")
        if (self.std_error == 0.0) != (self.method == CLOSED_FORM):
            raise ValueError(
                f"zero std_error iff closed_form: se={self.std_error!r} "
                f"method={self.method!r}")

    def z_against(self, target: float) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.value == target else math.inf
        return (self.value - target) / self.std_error


def _zero(n: int) -> CoefficientEstimate:
    return CoefficientEstimate(0.0, 0.0, n, CLOSED_FORM)


def _reduce_coef(results, method: str) -> CoefficientEstimate:
    s = reduce_sums(results)
    n = int(s[0])
    mean = s[1] / n
    var = max(s[2] - s[1] ** 2 / n, 0.0) / (n - 1) if n > 1 else 0.0
    return CoefficientEstimate(value=mean, std_error=math.sqrt(var / n),
                               n_samples=n, method=method)


def first_order_coeffs(q: QueueParams, env: MarkovEnv) -> dict:
    """Exact first-order coefficients of E(busy), E(area), bitrate."""
    mp = env.p_moments()["mean"]
    gap = q.mu - q.lam
    return {
        "busy_lin": -mp / gap**2,
        "area_lin": -mp * (q.mu + q.lam) / gap**3,
        "bitrate_lin": q.rho * mp / q.mu,
    }


def _centered_modes(env: MarkovEnv):
    """Exponential modes of the covariance C_p(u) (mean mode cancelled)."""
    p = env.p
    rates, weights = env.correlation_modes(p, p)
    mp = env.p_moments()["mean"]
    rates = np.concatenate([rates, [0.0 + 0.0j]])
    weights = np.concatenate([weights, [-(mp * mp) + 0.0j]])
    return rates, weights


def area_coeff_up_up(q: QueueParams, env: MarkovEnv, n: int, seed: int,
                     workers: int = 1, method: str = MC_JOINT) -> CoefficientEstimate:
    """eps^2 area coefficient from paired accelerated services.

    The quadrature route handles the environment through the pair kernel
    R+(v) = E[p+(X0)p+(Xv)] (needs a diagonalisable generator) and is the
    low-variance choice; the mc route is the unbiased arbiter.
    """
    if env.p_moments()["max_up"] == 0.0:
        return _zero(n)
    if method == MC_JOINT:
        tables = env.kernel_tables()
        pplus = tables[4]

        def block(bi, nreps):
            gq, ge = block_generators(seed, STREAM_UP_UP, 0, bi)
            return _kernels.coeff_up_up_mc_block(
                gq, ge, q.lam, q.mu, tables[0], tables[1], tables[2],
                pplus, nreps)
    elif method == QUAD_HYBRID:
        rates, weights = env.correlation_modes(env.p_plus, env.p_plus)

        def block(bi, nreps):
            gq, _ = block_generators(seed, STREAM_UP_UP, 1, bi)
            return _kernels.coeff_up_up_quad_block(
                gq, q.lam, q.mu, rates, weights, nreps)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _reduce_coef(run_blocks(n, workers, block), method)


def area_coeff_down_down(q: QueueParams, env: MarkovEnv, n: int, seed: int,
                         workers: int = 1) -> CoefficientEstimate:
    """eps^2 area coefficient from paired slowed services."""
    if env.p_moments()["mean_down"] == 0.0:
        return _zero(n)
    tables = env.kernel_tables()

    def block(bi, nreps):
        gq, ge = block_generators(seed, STREAM_DOWN_DOWN, 0, bi)
        return _kernels.coeff_down_down_block(
            gq, ge, q.lam, q.mu, tables[0], tables[1], tables[2],
            tables[5], nreps)

    return _reduce_coef(run_blocks(n, workers, block), MC_JOINT)


def area_coeff_cross(q: QueueParams, env: MarkovEnv, n: int, seed: int,
                     workers: int = 1,
                     sojourn_mode: str = "detached") -> CoefficientEstimate:
    """Mixed up/down eps^2 area coefficient.

    Identically zero when p never changes sign (every term carries a
    p+ * p- product), in which case no sampling happens.
    """
    m = env.p_moments()
    if m["max_up"] == 0.0 or m["mean_down"] == 0.0:
        return _zero(n)
    tables = env.kernel_tables()
    mode = _SOJOURN_MODES[sojourn_mode]

    def block(bi, nreps):
        gq, ge = block_generators(seed, STREAM_CROSS, 0, bi)
        return _kernels.coeff_cross_block(
            gq, ge, q.lam, q.mu, tables[0], tables[1], tables[2],
            tables[4], tables[5], mode, nreps)

    return _reduce_coef(run_blocks(n, workers, block), MC_JOINT)


def busy_coeff_up(q: QueueParams, env: MarkovEnv, n: int, seed: int,
                  workers: int = 1,
                  sojourn_mode: str = "detached") -> CoefficientEstimate:
    """Up-events eps^2 busy-duration coefficient."""
    if env.p_moments()["max_up"] == 0.0:
        return _zero(n)
    tables = env.kernel_tables()
    mode = _SOJOURN_MODES[sojourn_mode]

    def block(bi, nreps):
        gq, ge = block_generators(seed, STREAM_BUSY_UP, 0, bi)
        return _kernels.coeff_busy_up_block(
            gq, ge, q.lam, q.mu, tables[0], tables[1], tables[2],
            tables[4], tables[5], mode, nreps)

    return _reduce_coef(run_blocks(n, workers, block), MC_JOINT)


def busy_coeff_down(q: QueueParams, env: MarkovEnv, n: int, seed: int,
                    workers: int = 1) -> CoefficientEstimate:
    """Down-events eps^2 busy-duration coefficient."""
    if env.p_moments()["mean_down"] == 0.0:
        return _zero(n)
    tables = env.kernel_tables()

    def block(bi, nreps):
        gq, ge = block_generators(seed, STREAM_BUSY_DOWN, 0, bi)
        return _kernels.coeff_busy_down_block(
            gq, ge, q.lam, q.mu, tables[0], tables[1], tables[2],
            tables[4], tables[5], nreps)

    return _reduce_coef(run_blocks(n, workers, block), MC_JOINT)


def _combine_method(parts) -> str:
    methods = {p.method for p in parts}
    for m in (MC_JOINT, QUAD_HYBRID):
        if m in methods:
            return m
    return CLOSED_FORM


def bitrate_quad_coeff(q: QueueParams, env: MarkovEnv,
                       up_up: CoefficientEstimate,
                       down_down: CoefficientEstimate,
                       cross: CoefficientEstimate,
                       busy_up: CoefficientEstimate,
                       busy_down: CoefficientEstimate) -> CoefficientEstimate:
    """eps^2 coefficient of the mean per-flow bit rate.

    Combines the five functional estimates through the exact ratio expansion
    of E(busy)/E(area); the parts ride on disjoint streams, so their
    variances add (the propagation treats them as independent).
    """
    mp = env.p_moments()["mean"]
    rho = q.rho
    const = mp * mp * rho * (1.0 + rho) / (q.mu**2 * (1.0 - rho))
    w_area = q.mu * (1.0 - rho) ** 3
    w_busy = q.mu * (1.0 - rho) ** 2
    parts = (up_up, down_down, cross, busy_up, busy_down)
    value = (const
             + w_area * (up_up.value + down_down.value + cross.value)
             + w_busy * (busy_down.value - busy_up.value))
    var = (w_area**2 * (up_up.std_error**2 + down_down.std_error**2
                        + cross.std_error**2)
           + w_busy**2 * (busy_up.std_error**2 + busy_down.std_error**2))
    method = _combine_method(parts)
    if var == 0.0 and method != CLOSED_FORM:
        method = CLOSED_FORM
    return CoefficientEstimate(value=value, std_error=math.sqrt(var),
                               n_samples=min(p.n_samples for p in parts),
                               method=method)


@dataclass(frozen=True)
class ExpansionSummary:
    """All second-order coefficients for one (queue, environment) pair."""

    busy_lin: float
    area_lin: float
    bitrate_lin: float
    up_up: CoefficientEstimate
    down_down: CoefficientEstimate
    cross: CoefficientEstimate
    busy_up: CoefficientEstimate
    busy_down: CoefficientEstimate
    busy_quad: CoefficientEstimate
    area_quad: CoefficientEstimate
    bitrate_quad: CoefficientEstimate

    def busy_prediction(self, e_busy: float, eps: float) -> float:
        return e_busy + self.busy_lin * eps + self.busy_quad.value * eps**2

    def area_prediction(self, e_area: float, eps: float) -> float:
        return e_area + self.area_lin * eps + self.area_quad.value * eps**2

    def bitrate_prediction(self, q: QueueParams, eps: float) -> float:
        return (1.0 - q.rho) + self.bitrate_lin * eps + self.bitrate_quad.value * eps**2


def _sum_parts(parts, scale: float, method: str | None = None):
    value = scale * sum(p.value for p in parts)
    var = scale * scale * sum(p.std_error**2 for p in parts)
    method = method or _combine_method(parts)
    if var == 0.0:
        method = CLOSED_FORM
    return CoefficientEstimate(value=value, std_error=math.sqrt(var),
                               n_samples=min(p.n_samples for p in parts),
                               method=method)


def expansion_summary(q: QueueParams, env: MarkovEnv, n: int, seed: int,
                      workers: int = 1, sojourn_mode: str = "detached",
                      up_up_method: str = MC_JOINT) -> ExpansionSummary:
    """Estimate every second-order coefficient on disjoint streams."""
    lin = first_order_coeffs(q, env)
    uu = area_coeff_up_up(q, env, n, seed, workers, method=up_up_method)
    dd = area_coeff_down_down(q, env, n, seed, workers)
    cr = area_coeff_cross(q, env, n, seed, workers, sojourn_mode=sojourn_mode)
    bu = busy_coeff_up(q, env, n, seed, workers, sojourn_mode=sojourn_mode)
    bd = busy_coeff_down(q, env, n, seed, workers)
    neg_bu = CoefficientEstimate(-bu.value, bu.std_error, bu.n_samples, bu.method)
    busy_quad = _sum_parts((bd, neg_bu), 1.0)
    area_quad = _sum_parts((uu, dd, cr), -1.0)
    c2 = bitrate_quad_coeff(q, env, uu, dd, cr, bu, bd)
    return ExpansionSummary(busy_lin=lin["busy_lin"], area_lin=lin["area_lin"],
                            bitrate_lin=lin["bitrate_lin"], up_up=uu,
                            down_down=dd, cross=cr, busy_up=bu, busy_down=bd,
                            busy_quad=busy_quad, area_quad=area_quad,
                            bitrate_quad=c2)


# -- bit-rate gap against the rate-substitution reference ------------------


def gap_coeff_limits(q: QueueParams, env: MarkovEnv) -> dict:
    """Limiting eps^2 gap coefficients for very slow / very fast environments.

    Keys "fast"/"slow" give the coefficients against the first-order
    (truncated) rate-substitution reference, the convention under which the
    fast limit is -rho*(Ep)^2/mu^2; "fast_full"/"slow_full" give them
    against the full reference 1 - lam/(mu + eps*Ep), which differs by
    +rho*(Ep)^2/mu^2 at order eps^2.
    """
    m = env.p_moments()
    rho = q.rho
    trunc_shift = -rho * m["mean"] ** 2 / q.mu**2
    slow_full = -2.0 * rho * m["var"] / ((1.0 - rho) * q.mu**2)
    return {
        "fast": trunc_shift,
        "slow": slow_full + trunc_shift,
        "fast_full": 0.0,
        "slow_full": slow_full,
    }


def estimate_gap_coeff(q: QueueParams, env: MarkovEnv, eps_grid, n: int,
                       seed: int, workers: int = 1,
                       reference: str = "truncated"):
    """Fit gap(eps)/eps^2 = psi + c3*eps from coupled runs at several eps.

    gap(eps) is the simulated bit rate minus the rate-substitution
    reference — the first-order truncation (1-rho) + rho*Ep*eps/mu by
    default, or the full 1 - lam/(mu+eps*Ep) with reference="full".
    Each eps gets its own disjoint stream, so the fitted points are
    independent and the WLS covariance is honest.  Returns (psi, per-point
    rows (eps, gap/eps^2, se)).
    """
    mp = env.p_moments()["mean"]
    rows = []
    for i, eps in enumerate(eps_grid):
        cs = coupled_stats(q, env, eps, n, seed, workers=workers, index=i)
        est = cs.bitrate_coupled(q)
        if reference == "full":
            ref = rsr_bitrate(q, mp, eps)
        elif reference == "truncated":
            ref = rsr_bitrate_linear(q, mp, eps)
        else:
            raise ValueError(f"unknown reference {reference!r}")
        rows.append((eps, (est.mean - ref) / eps**2, est.se / eps**2))
    x = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    se = np.array([r[2] for r in rows])
    if len(rows) > 1:
        coeffs, cov = wls_polyfit(x, y, se, powers=(0, 1))
        psi = CoefficientEstimate(value=float(coeffs[0]),
                                  std_error=math.sqrt(cov[0, 0]),
                                  n_samples=n * len(rows), method=MC_JOINT)
    else:
        psi = CoefficientEstimate(value=float(y[0]), std_error=float(se[0]),
                                  n_samples=n, method=MC_JOINT)
    return psi, rows


def bitrate_gap_down_only(q: QueueParams, env: MarkovEnv, n: int, seed: int,
                          workers: int = 1,
                          cross_offset: float = 0.0) -> CoefficientEstimate:
    """Direct eps^2 gap coefficient for p <= 0 environments.

    The covariance of p enters in closed form; only plain busy periods are
    simulated.  ``cross_offset`` is 0 in the derived functional; the
    mu/(mu-lam)^2 variant is kept for the special-cases comparison.
    """
    if env.p_moments()["max_up"] > 0:
        raise ValueError("down-only gap estimator needs p <= 0 everywhere")
    rates, weights = _centered_modes(env)

    def block(bi, nreps):
        gq, _ = block_generators(seed, STREAM_GAP_DOWN, 0, bi)
        return _kernels.gap_down_block(gq, q.lam, q.mu, rates, weights,
                                       cross_offset, nreps)

    return _reduce_coef(run_blocks(n, workers, block), QUAD_HYBRID)


def bitrate_gap_up_only(q: QueueParams, env: MarkovEnv, n: int, seed: int,
                        workers: int = 1,
                        method: str = QUAD_HYBRID) -> CoefficientEstimate:
    """Direct eps^2 gap coefficient for p >= 0 environments."""
    if env.p_moments()["mean_down"] > 0:
        raise ValueError("up-only gap estimator needs p >= 0 everywhere")
    if method == QUAD_HYBRID:
        rates, weights = _centered_modes(env)

        def block(bi, nreps):
            gq, _ = block_generators(seed, STREAM_GAP_UP, 0, bi)
            return _kernels.gap_up_quad_block(gq, q.lam, q.mu, rates, weights,
                                              nreps)
    elif method == MC_JOINT:
        tables = env.kernel_tables()
        p_centered = env.p - env.p_moments()["mean"]

        def block(bi, nreps):
            gq, ge = block_generators(seed, STREAM_GAP_UP, 1, bi)
            return _kernels.gap_up_mc_block(
                gq, ge, q.lam, q.mu, tables[0], tables[1], tables[2],
                p_centered, nreps)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _reduce_coef(run_blocks(n, workers, block), method)


# -- first-event probabilities ---------------------------------------------

# powers of the generic fit per event kind: up/down lead linearly, the
# double-up event is quadratic; one guard power absorbs curvature, which
# matters because the underlying transform has a small convergence radius
# ((sqrt(mu)-sqrt(lam))^2), so grids must stay well inside it anyway
_EVENT_KINDS = {"up": ("hit_up", (1, 2, 3)),
                "down": ("hit_down", (1, 2, 3)),
                "double_up": ("hit_double", (2, 3))}


def first_event_prob_fit(q: QueueParams, env: MarkovEnv, eps_grid, n: int,
                         seed: int, workers: int = 1, kind: str = "up"):
    """Fit the small-eps law of a first-event probability.

    kind "up"/"down": pi(eps) = c1*eps + c2*eps^2 + ...; "double_up":
    pi(eps) = c2*eps^2 + c3*eps^3.  Returns (coeffs as CoefficientEstimates,
    one per fitted power, leading first; per-eps rows (eps, pi, se)).
    Streams are disjoint across eps.  Keep the grid below
    ~(sqrt(mu)-sqrt(lam))^2 or the polynomial truncation, not the noise,
    dominates the fit.
    """
    attr, powers = _EVENT_KINDS[kind]
    rows = []
    for i, eps in enumerate(eps_grid):
        cs = coupled_stats(q, env, eps, n, seed, workers=workers, index=i)
        est: MomentEstimate = getattr(cs, attr)
        rows.append((eps, est.mean, est.se))
    x = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    se = np.array([r[2] for r in rows])
    coeffs, cov = wls_polyfit(x, y, se, powers=powers)
    ests = tuple(CoefficientEstimate(value=float(coeffs[j]),
                                     std_error=math.sqrt(cov[j, j]),
                                     n_samples=n * len(rows), method=MC_JOINT)
                 for j in range(len(powers)))
    return ests, rows
