"""Finite-state Markov environment driving the service-rate perturbation.

The environment is a continuous-time Markov chain X on states {0, .., n-1}
with conservative generator matrix Q (rows sum to zero, off-diagonals >= 0),
run at an adjustable time scale alpha >= 0: the process actually simulated has
generator alpha*Q.  alpha = 0 freezes the environment in a state drawn from
the stationary law (the slow-modulation limit); large alpha is the
fast-modulation (averaging) regime.

Each state x carries a perturbation value p(x).  The queue modules use

    p_plus(x)  = max(p(x), 0)          rate increases ("up" events)
    p_minus(x) = max(-p(x), 0)         rate decreases ("down" events)

and the stationary covariance function

    C_p(u) = E_nu[ p(X(0)) p(X(u)) ] - (E_nu p)^2,   u >= 0,

computed here by uniformization (no matrix-exponential library call in the
production path), as well as the uncentered pair correlations
R_fg(u) = E_nu[ f(X(0)) g(X(u)) ] expanded into exponential modes via the
eigendecomposition of alpha*Q -- the quadrature estimators integrate those
modes in closed form.

Everything takes an explicit ``numpy.random.Generator``; nothing touches
global RNG state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "MarkovEnv",
    "EnvTrajectory",
    "two_state_symmetric",
    "constant_env",
]

_ROWSUM_TOL = 1e-10
_STATIONARY_RESIDUAL_TOL = 1e-10
_STATIONARY_SUM_TOL = 1e-12
_UNIFORMIZATION_TAIL = 1e-12  # Poisson tail mass kept below this per evaluation
_MODE_RECONSTRUCTION_TOL = 1e-8


@dataclass(frozen=True)
class EnvTrajectory:
    """Piecewise-constant environment path on [0, horizon].

    ``times[i]`` is the i-th jump instant (``times[0] == 0.0``) and
    ``states[i]`` the state held on ``[times[i], times[i+1])``; the last state
    is held to the horizon.
    """

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def state_at(self, t: float) -> int:
        """State occupied at time t (right-continuous path)."""
        if t < 0.0 or t > self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.states[idx])

    def value_at(self, t: float, values: np.ndarray) -> float:
        """values[X(t)] for a per-state table (e.g. the perturbation p)."""
        return float(values[self.state_at(t)])


class MarkovEnv:
    """Validated CTMC environment: generator, per-state perturbation, time scale.

    Parameters
    ----------
    generator : (n, n) array_like
        Conservative generator Q.  Rows must sum to zero (within 1e-10),
        off-diagonal entries must be nonnegative, and the chain must be
        irreducible (every state reachable from every other).
    p : (n,) array_like
        Perturbation value attached to each state.
    alpha : float
        Time-scale multiplier; the simulated generator is alpha*Q.
        alpha = 0 is allowed and means a frozen environment sampled from the
        stationary law of Q.
    """

    def __init__(self, generator, p, alpha: float = 1.0) -> None:
        q = np.array(generator, dtype=float)
        pv = np.array(p, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError(f"generator must be square, got shape {q.shape}")
        n = q.shape[0]
        if n == 0:
            raise ValueError("empty generator")
        if pv.shape != (n,):
            raise ValueError(f"p has shape {pv.shape}, expected ({n},)")
        if not np.all(np.isfinite(q)):
            raise ValueError("generator has non-finite entries")
        if not np.all(np.isfinite(pv)):
            raise ValueError("p has non-finite entries")
        if not (np.isfinite(alpha) and alpha >= 0.0):
            raise ValueError(f"alpha must be finite and >= 0, got {alpha}")

        off = q.copy()
        np.fill_diagonal(off, 0.0)
        if np.any(off < 0.0):
            bad = np.argwhere(off < 0.0)
            raise ValueError(f"negative off-diagonal generator entries at {bad.tolist()}")
        rowsums = q.sum(axis=1)
        if np.max(np.abs(rowsums)) > _ROWSUM_TOL:
            raise ValueError(
                f"generator rows must sum to 0 (max |row sum| = {np.max(np.abs(rowsums)):.3e})"
            )

        if n > 1:
            adj = csr_matrix((off > 0.0).astype(np.int8))
            ncomp, labels = connected_components(adj, directed=True, connection="strong")
            if ncomp > 1:
                groups = [list(np.flatnonzero(labels == k)) for k in range(ncomp)]
                raise ValueError(
                    "generator is not irreducible; strongly connected components: "
                    f"{groups}"
                )

        self.generator = q
        self.p = pv
        self.alpha = float(alpha)
        self.n_states = n
        self._stationary: np.ndarray | None = None

    # -- basic laws ------------------------------------------------------

    @property
    def stationary(self) -> np.ndarray:
        """Stationary law nu of Q (also of alpha*Q for any alpha > 0)."""
        if self._stationary is None:
            n = self.n_states
            if n == 1:
                nu = np.ones(1)
            else:
                a = np.vstack([self.generator.T, np.ones((1, n))])
                b = np.zeros(n + 1)
                b[-1] = 1.0
                nu, *_ = np.linalg.lstsq(a, b, rcond=None)
            residual = float(np.max(np.abs(nu @ self.generator)))
            if residual > _STATIONARY_RESIDUAL_TOL:
                raise RuntimeError(f"stationary solve residual {residual:.3e} too large")
            if abs(float(nu.sum()) - 1.0) > _STATIONARY_SUM_TOL:
                raise RuntimeError(f"stationary law sums to {nu.sum()!r}, not 1")
            if np.any(nu < -1e-12):
                raise RuntimeError(f"stationary law has negative mass: {nu}")
            self._stationary = np.clip(nu, 0.0, None)
        return self._stationary

    @property
    def p_plus(self) -> np.ndarray:
        return np.maximum(self.p, 0.0)

    @property
    def p_minus(self) -> np.ndarray:
        return np.maximum(-self.p, 0.0)

    def p_moments(self) -> dict[str, float]:
        """Stationary moments of the perturbation actually used downstream."""
        nu = self.stationary
        mean = float(nu @ self.p)
        mean_sq = float(nu @ self.p**2)
        return {
            "mean": mean,
            "mean_sq": mean_sq,
            "var": mean_sq - mean * mean,
            "mean_up": float(nu @ self.p_plus),
            "mean_down": float(nu @ self.p_minus),
            "max_up": float(self.p_plus.max()),
            "sup_abs": float(np.abs(self.p).max()),
        }

    # -- correlation structure ------------------------------------------

    def _transition_matrix(self, u: float) -> np.ndarray:
        """exp(alpha*Q*u) by uniformization (dense, Poisson tail < 1e-12)."""
        g = self.alpha * self.generator
        rate = float(np.max(-np.diag(g)))
        if rate <= 0.0 or u == 0.0:
            return np.eye(self.n_states)
        lam = rate * u
        p_jump = np.eye(self.n_states) + g / rate
        term = math.exp(-lam)
        acc = term
        out = term * np.eye(self.n_states)
        power = np.eye(self.n_states)
        k = 0
        while acc < 1.0 - _UNIFORMIZATION_TAIL or k < lam:
            k += 1
            power = power @ p_jump
            term *= lam / k
            out += term * power
            acc += term
            if k > 1000 + 100 * lam:  # defensive; tail bound reached long before
                break
        return out

    def pair_correlation(self, f: np.ndarray, g: np.ndarray, u) -> np.ndarray | float:
        """Uncentered stationary pair correlation E_nu[ f(X(0)) g(X(u)) ]."""
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        nu = self.stationary
        scalar = np.isscalar(u)
        us = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(us < 0.0):
            raise ValueError("lags must be >= 0")
        vals = np.empty(us.shape)
        for i, ui in enumerate(us):
            vals[i] = float((nu * f) @ self._transition_matrix(float(ui)) @ g)
        return float(vals[0]) if scalar else vals

    def covariance(self, u) -> np.ndarray | float:
        """Centered covariance C_p(u) = E[p(X0) p(Xu)] - (E p)^2."""
        mean = float(self.stationary @ self.p)
        raw = self.pair_correlation(self.p, self.p, u)
        return raw - mean * mean

    def correlation_modes(self, f: np.ndarray, g: np.ndarray):
        """Exponential-mode expansion of u -> E_nu[ f(X0) g(Xu) ].

        Returns ``(rates, weights)`` (complex arrays) with

            R_fg(u) = sum_m weights[m] * exp(rates[m] * u),   u >= 0,

        from the eigendecomposition of alpha*Q.  Raises if the generator is
        numerically defective (reconstruction off by more than 1e-8); such a
        generator should be handled by the slow scipy quadrature fallback of
        the callers instead.
        """
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        a = self.alpha * self.generator
        eigvals, right = np.linalg.eig(a)
        try:
            left = np.linalg.inv(right)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError("generator eigenbasis is singular (defective matrix?)") from exc
        nu = self.stationary
        weights = np.array(
            [((nu * f) @ right[:, m]) * (left[m, :] @ g) for m in range(self.n_states)]
        )
        # spot-check the expansion against uniformization before handing it out
        check_lags = [0.0, 0.31, 1.7]
        for u in check_lags:
            direct = self.pair_correlation(f, g, u)
            modal = float(np.real(np.sum(weights * np.exp(eigvals * u))))
            if abs(direct - modal) > _MODE_RECONSTRUCTION_TOL * max(1.0, abs(direct)):
                raise RuntimeError(
                    f"mode expansion disagrees with uniformization at lag {u}: "
                    f"{modal!r} vs {direct!r}"
                )
        return eigvals, weights

    # -- sampling --------------------------------------------------------

    def kernel_tables(self):
        """Arrays consumed by the numba kernels (see _kernels.py).

        Returns (nu_cum, hold_rate, jump_cum, p, p_plus, p_minus):
          nu_cum     cumulative stationary law, for the initial state draw
          hold_rate  per-state jump intensity alpha*|Q_xx|
          jump_cum   per-state cumulative law of the embedded jump chain
        """
        nu_cum = np.cumsum(self.stationary)
        nu_cum[-1] = 1.0
        hold = self.alpha * (-np.diag(self.generator)).copy()
        n = self.n_states
        jump_cum = np.zeros((n, n))
        for x in range(n):
            row = self.generator[x].copy()
            row[x] = 0.0
            total = row.sum()
            if total > 0.0:
                jump_cum[x] = np.cumsum(row / total)
                jump_cum[x, -1] = 1.0
            else:
                jump_cum[x] = 1.0  # absorbing in the jump chain; hold_rate is 0
        return nu_cum, hold, jump_cum, self.p.copy(), self.p_plus, self.p_minus

    def sample_path(self, horizon: float, rng: np.random.Generator) -> EnvTrajectory:
        """Stationary path of the alpha-scaled chain on [0, horizon]."""
        if horizon < 0.0:
            raise ValueError("horizon must be >= 0")
        from . import _kernels  # deferred: importing triggers numba compilation

        nu_cum, hold, jump_cum, *_ = self.kernel_tables()
        times, states = _kernels.env_path(rng, float(horizon), nu_cum, hold, jump_cum)
        return EnvTrajectory(times=times, states=states, horizon=float(horizon))


def two_state_symmetric(q: float = 1.0,
                        p_values: Sequence[float] = (-1.0, 1.0),
                        alpha: float = 1.0) -> MarkovEnv:
    """Symmetric two-state environment with switching rate q in each direction.

    Its covariance is a single exponential: C_p(u) = Var(p) * exp(-2 q alpha u).
    """
    if q <= 0.0:
        raise ValueError("q must be > 0")
    gen = [[-q, q], [q, -q]]
    return MarkovEnv(gen, list(p_values), alpha=alpha)


def constant_env(p0: float) -> MarkovEnv:
    """One-state environment: deterministic perturbation p(x) = p0."""
    return MarkovEnv([[0.0]], [p0], alpha=1.0)
