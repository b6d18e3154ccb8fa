"""Busy-period simulation: path-level API and block-parallel estimators.

Seeding scheme
--------------
Every replication block draws from two private generators (queue draws and
environment draws) built as

    PCG64(SeedSequence(entropy=[master_seed, purpose, index, block, 0 or 1]))

so any statistic is a pure function of (master seed, purpose tag, sub-index).
Blocks have a fixed size; they are computed possibly in parallel (thread pool
over nogil kernels) but always reduced in block order with compensated
(fsum) summation, which makes every result bit-identical for any worker
count.

The path-level functions (`busy_period`, `perturbed_busy_period`,
`coupled_busy_periods`) run the same jitted walker as the block kernels, one
replication at a time, and return inspectable records.  With ``eps=0`` the
perturbed walker consumes exactly the same queue draws as the plain one, so
equal seeds give identical paths.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .environment import EnvTrajectory, MarkovEnv, constant_env
from .exact import QueueParams, busy_stats

__all__ = [
    "BLOCK_SIZE",
    "block_generators",
    "run_blocks",
    "reduce_sums",
    "MomentEstimate",
    "BaselineMoments",
    "baseline_moments",
    "Level1Stats",
    "level1_statistics",
    "first_subbusy_samples",
    "busy_samples",
    "direct_perturbed_samples",
    "coupled_samples",
    "CoupledStats",
    "coupled_stats",
    "BusyPeriodPath",
    "CoupledRecord",
    "busy_period",
    "perturbed_busy_period",
    "coupled_busy_periods",
    "Level1Decomposition",
    "decompose_level1",
]

BLOCK_SIZE = 4096

# purpose tags (second entropy word; keep stable, they define the streams)
STREAM_BASELINE = 1
STREAM_LEVEL1 = 2
STREAM_KS = 3
STREAM_COUPLED = 4
STREAM_DIRECT = 5
STREAM_UP_UP = 6
STREAM_DOWN_DOWN = 7
STREAM_CROSS = 8
STREAM_BUSY_UP = 9
STREAM_BUSY_DOWN = 10
STREAM_GAP_DOWN = 11
STREAM_GAP_UP = 12
STREAM_SWEEP = 13
STREAM_PATH = 14

_SOJOURN_MODES = {"detached": 0, "in_place": 1}


def block_generators(seed: int, purpose: int, index: int, block: int):
    """(queue_gen, env_gen) for one block — pure function of the arguments."""
    gq = np.random.default_rng(
        np.random.SeedSequence(entropy=[int(seed), purpose, index, block, 0]))
    ge = np.random.default_rng(
        np.random.SeedSequence(entropy=[int(seed), purpose, index, block, 1]))
    return gq, ge


def run_blocks(total: int, workers: int, fn):
    """Split ``total`` replications into fixed blocks and map ``fn`` over them.

    ``fn(block_index, nreps)`` must be thread-safe (the kernels are nogil and
    every block owns its generators).  The first block runs in the calling
    thread — that also triggers any jit compilation exactly once — and the
    result list is always in block order.
    """
    if total <= 0:
        raise ValueError("need a positive replication count")
    blocks = []
    start = 0
    b = 0
    while start < total:
        n = min(BLOCK_SIZE, total - start)
        blocks.append((b, n))
        start += n
        b += 1
    first = fn(*blocks[0])
    if len(blocks) == 1:
        return [first]
    if workers <= 1:
        return [first] + [fn(bi, n) for bi, n in blocks[1:]]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rest = list(pool.map(lambda args: fn(*args), blocks[1:]))
    return [first] + rest


def reduce_sums(block_arrays) -> np.ndarray:
    """Component-wise compensated (fsum) reduction across blocks."""
    stacked = np.stack(block_arrays)
    return np.array([math.fsum(stacked[:, j]) for j in range(stacked.shape[1])])


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    se: float
    n: int

    def z_against(self, target: float) -> float:
        return (self.mean - target) / self.se if self.se > 0 else math.inf


def _moment(n: float, s: float, s2: float) -> MomentEstimate:
    n = int(round(n))
    mean = s / n
    var = max(s2 - s * s / n, 0.0) / (n - 1) if n > 1 else 0.0
    return MomentEstimate(mean=mean, se=math.sqrt(var / n), n=n)


# -- baseline moments ------------------------------------------------------


@dataclass(frozen=True)
class BaselineMoments:
    busy: MomentEstimate
    busy_sq: MomentEstimate
    area: MomentEstimate
    nserved: MomentEstimate
    dep_sum: MomentEstimate
    nserved_busy: MomentEstimate


def baseline_moments(q: QueueParams, n: int, seed: int,
                     workers: int = 1) -> BaselineMoments:
    """Sample moments of (B, B^2, A, N, sum D_i, N*B) with standard errors."""
    def block(bi, nreps):
        gq, _ = block_generators(seed, STREAM_BASELINE, 0, bi)
        return _kernels.baseline_block(gq, q.lam, q.mu, nreps)

    sums = reduce_sums(run_blocks(n, workers, block))
    total = sums[0]
    ests = [_moment(total, sums[1 + 2 * j], sums[2 + 2 * j]) for j in range(6)]
    return BaselineMoments(busy=ests[0], busy_sq=ests[1], area=ests[2],
                           nserved=ests[3], dep_sum=ests[4], nserved_busy=ests[5])


# -- level-1 decomposition statistics --------------------------------------


@dataclass(frozen=True)
class Level1Stats:
    n: int
    h_histogram: np.ndarray
    sojourn: MomentEstimate
    sub_busy: MomentEstimate
    identity_max_err: float
    age_violations: int


def level1_statistics(q: QueueParams, n: int, seed: int, workers: int = 1,
                      sojourn_mode: str = "detached") -> Level1Stats:
    mode = _SOJOURN_MODES[sojourn_mode]

    def block(bi, nreps):
        gq, _ = block_generators(seed, STREAM_LEVEL1, 0, bi)
        return _kernels.level1_block(gq, q.lam, q.mu, nreps, mode)

    results = run_blocks(n, workers, block)
    hist = reduce_sums([hist for hist, _ in results])
    accs = [acc for _, acc in results]
    # entry 7 is a per-block max, everything else sums
    sums = reduce_sums(accs)
    max_err = max(float(acc[7]) for acc in accs)
    soj = _moment(sums[3], sums[1], sums[2])
    sub = _moment(sums[6], sums[4], sums[5]) if sums[6] > 1 else MomentEstimate(0.0, 0.0, 0)
    return Level1Stats(
        n=int(sums[0]),
        h_histogram=hist,
        sojourn=soj,
        sub_busy=sub,
        identity_max_err=max_err,
        age_violations=int(sums[8]),
    )


def first_subbusy_samples(q: QueueParams, n: int, seed: int,
                          workers: int = 1) -> np.ndarray:
    """First sub-busy duration per replication (those with an excursion)."""
    def block(bi, nreps):
        gq, _ = block_generators(seed, STREAM_LEVEL1, 1, bi)
        return _kernels.first_subbusy_block(gq, q.lam, q.mu, nreps)

    return np.concatenate(run_blocks(n, workers, block))


def busy_samples(q: QueueParams, n: int, seed: int, workers: int = 1,
                 index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(durations, areas) of plain busy periods."""
    def block(bi, nreps):
        gq, _ = block_generators(seed, STREAM_KS, index, bi)
        return _kernels.busy_samples_block(gq, q.lam, q.mu, nreps)

    out = np.vstack(run_blocks(n, workers, block))
    return out[:, 0], out[:, 1]


# -- perturbed-queue sampling ----------------------------------------------


def direct_perturbed_samples(q: QueueParams, env: MarkovEnv, eps: float,
                             n: int, seed: int, workers: int = 1
                             ) -> tuple[np.ndarray, np.ndarray]:
    """(durations, areas) of the modulated queue, independent thinning build."""
    q.require_perturbation_stable(env, eps)
    nu_cum, hold, jump_cum, p_tab, _, _ = env.kernel_tables()

    def block(bi, nreps):
        gq, ge = block_generators(seed, STREAM_DIRECT, 0, bi)
        return _kernels.direct_perturbed_block(
            gq, ge, q.lam, q.mu, eps, nu_cum, hold, jump_cum, p_tab, nreps)

    out = np.vstack(run_blocks(n, workers, block))
    return out[:, 0], out[:, 1]


def coupled_samples(q: QueueParams, env: MarkovEnv, eps: float, n: int,
                    seed: int, workers: int = 1
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-replication (Bp, Ap, Bs, As) from the coupled walker."""
    q.require_perturbation_stable(env, eps)
    nu_cum, hold, jump_cum, p_tab, pplus, pminus = env.kernel_tables()
    max_up = float(pplus.max())

    def block(bi, nreps):
        gq, ge = block_generators(seed, STREAM_COUPLED, 1, bi)
        return _kernels.coupled_samples_block(
            gq, ge, q.lam, q.mu, eps, nu_cum, hold, jump_cum,
            p_tab, pplus, pminus, max_up, nreps)

    out = np.vstack(run_blocks(n, workers, block))
    return out[:, 0], out[:, 1], out[:, 2], out[:, 3]


@dataclass(frozen=True)
class CoupledStats:
    """Reduced coupled-run statistics for one (env, eps)."""

    n: int
    eps: float
    busy_std: MomentEstimate
    area_std: MomentEstimate
    busy_pert: MomentEstimate
    area_pert: MomentEstimate
    delta_busy: MomentEstimate
    delta_area: MomentEstimate
    cov_delta: float            # Cov(dB, dA) of one replication
    cov_pert: float             # Cov(Bp, Ap) of one replication
    hit_up: MomentEstimate
    hit_double: MomentEstimate
    hit_down: MomentEstimate
    dominance_violations: int
    mean_nserved_std: float

    def bitrate_direct(self) -> MomentEstimate:
        """E(Bp)/E(Ap) with a delta-method standard error."""
        return _ratio_estimate(self.busy_pert, self.area_pert, self.cov_pert, self.n)

    def bitrate_coupled(self, q: QueueParams) -> MomentEstimate:
        """(E(B) + mean dB)/(E(A) + mean dA), exact moments plus measured drift."""
        ref = busy_stats(q)
        num = MomentEstimate(ref.e_busy + self.delta_busy.mean, self.delta_busy.se, self.n)
        den = MomentEstimate(ref.e_area + self.delta_area.mean, self.delta_area.se, self.n)
        return _ratio_estimate(num, den, self.cov_delta, self.n)


def _ratio_estimate(num: MomentEstimate, den: MomentEstimate, cov: float,
                    n: int) -> MomentEstimate:
    r = num.mean / den.mean
    var = (num.se**2 / den.mean**2
           + num.mean**2 * den.se**2 / den.mean**4
           - 2.0 * num.mean * cov / n / den.mean**3)
    return MomentEstimate(mean=r, se=math.sqrt(max(var, 0.0)), n=n)


def coupled_stats(q: QueueParams, env: MarkovEnv, eps: float, n: int,
                  seed: int, workers: int = 1, index: int = 0) -> CoupledStats:
    q.require_perturbation_stable(env, eps)
    nu_cum, hold, jump_cum, p_tab, pplus, pminus = env.kernel_tables()
    max_up = float(pplus.max())

    def block(bi, nreps):
        gq, ge = block_generators(seed, STREAM_SWEEP, index, bi)
        return _kernels.coupled_stats_block(
            gq, ge, q.lam, q.mu, eps, nu_cum, hold, jump_cum,
            p_tab, pplus, pminus, max_up, nreps)

    s = reduce_sums(run_blocks(n, workers, block))
    k = _kernels
    total = s[k.CS_N]
    nn = int(total)

    def m(i, i2):
        return _moment(total, s[i], s[i2])

    def bern(i):
        p = s[i] / total
        return MomentEstimate(mean=p, se=math.sqrt(max(p * (1 - p), 0.0) / total), n=nn)

    cov_delta = (s[k.CS_DBDA] - s[k.CS_DB] * s[k.CS_DA] / total) / (total - 1)
    cov_pert = (s[k.CS_BPAP] - s[k.CS_BP] * s[k.CS_AP] / total) / (total - 1)
    return CoupledStats(
        n=nn,
        eps=eps,
        busy_std=m(k.CS_BS, k.CS_BS2),
        area_std=m(k.CS_AS, k.CS_AS2),
        busy_pert=m(k.CS_BP, k.CS_BP2),
        area_pert=m(k.CS_AP, k.CS_AP2),
        delta_busy=m(k.CS_DB, k.CS_DB2),
        delta_area=m(k.CS_DA, k.CS_DA2),
        cov_delta=cov_delta,
        cov_pert=cov_pert,
        hit_up=bern(k.CS_HIT_UP),
        hit_double=bern(k.CS_HIT_DBL),
        hit_down=bern(k.CS_HIT_DOWN),
        dominance_violations=int(s[k.CS_VIOL]),
        mean_nserved_std=s[k.CS_NSERVED] / total,
    )


# -- path-level API --------------------------------------------------------


@dataclass(frozen=True)
class BusyPeriodPath:
    """One busy period: event times with kinds +1 (arrival) / -1 (departure)."""

    times: np.ndarray
    kinds: np.ndarray
    duration: float
    area: float

    @property
    def departures(self) -> np.ndarray:
        return self.times[self.kinds == -1]

    @property
    def n_served(self) -> int:
        return int(np.sum(self.kinds == -1))


@dataclass(frozen=True)
class CoupledRecord:
    """Full event log of one coupled (plain, perturbed) replication.

    ``kinds`` uses the trace codes of the walker: 0 arrival, 1 service tick,
    2 marked (down) tick, 3 accepted up-candidate, 4 rejected up-candidate,
    5 environment jump.  ``level_std``/``level_pert`` are the queue lengths
    right after each event.
    """

    times: np.ndarray
    kinds: np.ndarray
    level_std: np.ndarray
    level_pert: np.ndarray
    env_state: np.ndarray
    busy_std: float
    area_std: float
    busy_pert: float
    area_pert: float
    eps: float

    def standard_path(self) -> BusyPeriodPath:
        """The plain queue's busy period extracted from the joint log."""
        times = []
        kinds = []
        prev = 1
        for t, lv in zip(self.times, self.level_std):
            if lv != prev:
                times.append(t)
                kinds.append(1 if lv > prev else -1)
                prev = lv
            if lv == 0:
                break
        return BusyPeriodPath(times=np.array(times), kinds=np.array(kinds, dtype=np.int8),
                              duration=self.busy_std, area=self.area_std)

    def perturbed_path(self) -> BusyPeriodPath:
        times = []
        kinds = []
        prev = 1
        for t, lv in zip(self.times, self.level_pert):
            if lv != prev:
                times.append(t)
                kinds.append(1 if lv > prev else -1)
                prev = lv
            if lv == 0:
                break
        return BusyPeriodPath(times=np.array(times), kinds=np.array(kinds, dtype=np.int8),
                              duration=self.busy_pert, area=self.area_pert)


def coupled_busy_periods(q: QueueParams, env: MarkovEnv, eps: float,
                         rng: np.random.Generator,
                         env_rng: np.random.Generator | None = None) -> CoupledRecord:
    """One coupled replication of the plain and modulated busy periods.

    ``rng`` drives the queue clocks; the environment path takes its own
    stream (spawned from ``rng`` unless given).  With ``eps=0`` the queue
    draws are exactly those of ``busy_period`` with the same ``rng``.
    """
    q.require_perturbation_stable(env, eps)
    if env_rng is None:
        env_rng = rng.spawn(1)[0]
    nu_cum, hold, jump_cum, p_tab, pplus, pminus = env.kernel_tables()
    max_up = float(pplus.max())
    ets, eks, els, elp, exs, summary = _kernels.coupled_trace(
        rng, env_rng, q.lam, q.mu, eps, nu_cum, hold, jump_cum,
        p_tab, pplus, pminus, max_up)
    return CoupledRecord(times=ets, kinds=eks, level_std=els, level_pert=elp,
                         env_state=exs, busy_std=float(summary[0]),
                         area_std=float(summary[1]), busy_pert=float(summary[2]),
                         area_pert=float(summary[3]), eps=eps)


def perturbed_busy_period(q: QueueParams, env: MarkovEnv, eps: float,
                          rng: np.random.Generator,
                          env_rng: np.random.Generator | None = None) -> BusyPeriodPath:
    """One busy period of the modulated queue (coupled walker, P side)."""
    return coupled_busy_periods(q, env, eps, rng, env_rng).perturbed_path()


def busy_period(q: QueueParams, rng: np.random.Generator) -> BusyPeriodPath:
    """One plain M/M/1 busy period (the eps=0 walker)."""
    rec = coupled_busy_periods(q, constant_env(0.0), 0.0, rng)
    return rec.standard_path()


# -- level-1 decomposition of a path ---------------------------------------


@dataclass(frozen=True)
class Level1Decomposition:
    """Split of a busy period at queue level 1.

    sojourns: durations at level 1 (H+1 entries for H excursions);
    excursion_starts/sub_busy: each excursion is a time-shifted busy period;
    internal_departures[i]: departure instants of excursion i relative to its
    start; ages[i]: the replication age A_i (see excursion_ages in the
    kernel module).
    """

    sojourns: np.ndarray
    excursion_starts: np.ndarray
    sub_busy: np.ndarray
    internal_departures: list
    ages: np.ndarray

    @property
    def h(self) -> int:
        return len(self.sub_busy)


def decompose_level1(path: BusyPeriodPath,
                     sojourn_mode: str = "detached") -> Level1Decomposition:
    mode = _SOJOURN_MODES[sojourn_mode]
    times = np.ascontiguousarray(path.times, dtype=np.float64)
    kinds = np.ascontiguousarray(path.kinds, dtype=np.int8)
    soj, exc_start, exc_dur, idep, ioff = _kernels.decompose_events(
        times, kinds, len(times))
    ages = _kernels.excursion_ages(soj, exc_start, exc_dur, path.duration, mode)
    ideps = [idep[ioff[i]:ioff[i + 1]].copy() for i in range(len(exc_dur))]
    return Level1Decomposition(sojourns=soj, excursion_starts=exc_start,
                               sub_busy=exc_dur, internal_departures=ideps,
                               ages=ages)
