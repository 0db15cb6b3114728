"""Transition statistics for the shear-flow model and its ESN surrogate.

Three studies, each runnable against the model itself (``Truth``) or a
trained network (``Esn``):

* lifetimes of turbulent transients, their survival function and a shifted
  exponential maximum-likelihood fit;
* ensemble probabilities of laminarizing within a short horizon (early
  warning);
* the probability that a perturbation of the laminar flow decays, as a
  function of its energy.

A flow counts as laminarized at time ``T`` when its kinetic energy stayed
above 15 over the whole window ``[T - 1000, T]``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from . import esn as esn_
from .esn import ClosedLoop, EsnModel
from .mfe import (
    DEFAULT_GEOMETRY,
    MfeSystem,
    Trajectory,
    integrate,
    kinetic_energy,
    laminar_state,
    random_state_with_energy,
    steps_per_interval,
)
from .rng import stream

logger = logging.getLogger(__name__)

LAMINAR_THRESHOLD = 15.0
LAMINAR_WINDOW = 1000.0
TURBULENCE_THRESHOLD = 10.0


class InsufficientDataError(ValueError):
    """The series is shorter than the detection window."""


class StatisticalPreconditionError(ValueError):
    """An estimator's input cannot support it (e.g. every sample censored)."""


# -- sources ------------------------------------------------------------------

@dataclass(frozen=True)
class Truth:
    """Direct RK4 integration of the model."""

    system: MfeSystem
    dt: float = 1e-3
    sample_every: float = 1.0
    threads: int = 1

    name = "truth"


@dataclass(frozen=True)
class Esn:
    """Autonomous ESN prediction; ``system`` supplies synchronization prefixes."""

    model: EsnModel
    system: MfeSystem
    dt: float = 1e-3
    noise_enabled: bool = True
    batch: int = 100

    name = "esn"

    @property
    def sample_every(self) -> float:
        return self.model.hp.dt_model


Source = Union[Truth, Esn]


# -- laminarization detection -------------------------------------------------

def _window_samples(window: float, dt_sample: float) -> int:
    n = round(window / dt_sample)
    if abs(n * dt_sample - window) > 1e-9 * max(window, 1.0):
        raise ValueError("window must be a multiple of the sampling interval")
    return int(n)


def detect_laminarization(energies, dt_sample: float = 1.0, threshold: float = LAMINAR_THRESHOLD,
                          window: float = LAMINAR_WINDOW, t0: float = 0.0) -> Optional[float]:
    """Earliest ``T`` with ``E(t) > threshold`` for every sample in ``[T - window, T]``.

    Returns ``None`` when no such time exists in the series.

    Raises:
        InsufficientDataError: the series is shorter than the window, so the
            question cannot be answered either way.
    """
    e = np.asarray(energies, dtype=np.float64)
    w = _window_samples(window, dt_sample)
    if e.ndim != 1 or len(e) < w + 1:
        raise InsufficientDataError(f"{len(e)} samples cannot hold a {window:g}-unit window")
    above = e > threshold
    # run length of consecutive samples above threshold, ending at each index
    idx = np.arange(len(e))
    last_below = np.maximum.accumulate(np.where(above, -1, idx))
    run = idx - last_below
    hits = np.flatnonzero(run >= w + 1)
    if hits.size == 0:
        return None
    return t0 + hits[0] * dt_sample


class _Monitor:
    """Online version of :func:`detect_laminarization` for many members."""

    def __init__(self, n: int, threshold: float, window_samples: int):
        self.threshold = threshold
        self.need = window_samples + 1
        self.run = np.zeros(n, dtype=np.int64)
        self.hit = np.full(n, -1, dtype=np.int64)

    def update(self, idx: np.ndarray, energies: np.ndarray, sample: int) -> np.ndarray:
        """Feed sample number ``sample`` for members ``idx``; return newly hit members."""
        above = energies > self.threshold
        self.run[idx] = np.where(above, self.run[idx] + 1, 0)
        new = idx[(self.run[idx] >= self.need) & (self.hit[idx] < 0)]
        self.hit[new] = sample
        return new


# -- lifetimes ----------------------------------------------------------------

@dataclass(frozen=True)
class LifetimeSample:
    """One turbulent lifetime, or a censored/failed run.

    ``lifetime`` is ``None`` unless the run laminarized before ``t_max``.
    """

    lifetime: Optional[float]
    t_max: float
    source: str
    seed: int
    index: int
    failed: bool = False

    @property
    def censored(self) -> bool:
        return self.lifetime is None


def _ic(seed: int, index: int, e_ic: float, geometry) -> np.ndarray:
    return random_state_with_energy(stream(seed, "lifetime/ic", index), e_ic, geometry)


def _truth_lifetimes(src: Truth, ics, t_max, threshold, window):
    sys = src.system
    steps = steps_per_interval(src.sample_every, src.dt)
    w = _window_samples(window, src.sample_every)
    max_samples = int(math.floor(t_max / src.sample_every + 1e-9))
    kernel = sys.kernels["lifetime"]
    escale = sys.geometry.energy_scale

    def one(a0):
        return kernel(a0, src.dt, steps, max_samples, escale, threshold, w, *sys.kernel_args)

    if src.threads > 1:
        with ThreadPoolExecutor(src.threads) as pool:
            hits = list(pool.map(one, ics))
    else:
        hits = [one(a0) for a0 in ics]
    return [(h * src.sample_every if h >= 0 else None, h == -2) for h in hits]


def _prefixes(src: Esn, starts) -> np.ndarray:
    """Truth trajectories of n_sync samples from each start state."""
    n_sync = src.model.hp.n_sync
    dt_s = src.sample_every
    return np.array([integrate(src.system, a0, src.dt, (n_sync - 1) * dt_s, dt_s).states for a0 in starts])


def _esn_run(model: EsnModel, prefixes: np.ndarray, rngs, n_steps: int, on_sample,
             geometry=DEFAULT_GEOMETRY, noise_enabled: bool = True, batch: int = 100):
    """Synchronize on each prefix, then predict ``n_steps`` steps in batches.

    ``on_sample(members, energies, sample_index)`` sees the prefix samples and
    every prediction, with sample indices counted from the first prefix
    state; it returns the members that are finished. Returns the step at
    which each member diverged (-1 if it did not).
    """
    n, n_sync = len(prefixes), prefixes.shape[1]
    diverged = np.full(n, -1)
    for lo in range(0, n, batch):
        members = np.arange(lo, min(lo + batch, n))
        pre = prefixes[members]
        finished = np.zeros(len(members), dtype=bool)
        for s in range(n_sync):
            new = on_sample(members, kinetic_energy(pre[:, s], geometry), s)
            finished[new - lo] = True
        r0 = np.array([esn_.synchronize(model, p, rng=rngs[m]) for p, m in zip(pre, members)])
        loop = ClosedLoop(model, r0, pre[:, -1], [rngs[m] for m in members], noise_enabled)
        loop.deactivate(finished)
        for k in range(1, n_steps + 1):
            live = np.flatnonzero(loop.active)
            if live.size == 0:
                break
            a = loop.step()
            live = live[loop.active[live]]
            new = on_sample(members[live], kinetic_energy(a[live], geometry), n_sync - 1 + k)
            loop.deactivate(new - lo)
        diverged[members] = loop.diverged_at
    return diverged


def lifetime_experiment(source: Source, n_ic: int = 200, e_ic: Optional[float] = None,
                        t_max: float = 60000.0, seed: int = 0,
                        threshold: float = LAMINAR_THRESHOLD,
                        window: float = LAMINAR_WINDOW) -> list[LifetimeSample]:
    """Turbulent lifetimes from ``n_ic`` random initial conditions.

    Initial amplitudes are uniform in ``[-1, 1]`` rescaled to energy ``e_ic``
    (default ``0.3 Gamma_x Gamma_z``). For an ESN source the model is
    integrated for ``n_sync`` samples from each initial condition, the
    network is synchronized on them and then runs autonomously. Runs still
    turbulent at ``t_max`` are censored; diverged ESN runs are flagged failed.
    """
    if n_ic < 1:
        raise ValueError("n_ic must be positive")
    geom = source.system.geometry
    e_ic = 0.3 * geom.energy_scale if e_ic is None else e_ic
    ics = [_ic(seed, i, e_ic, geom) for i in range(n_ic)]

    if isinstance(source, Truth):
        results = _truth_lifetimes(source, ics, t_max, threshold, window)
    else:
        dt_s = source.sample_every
        mon = _Monitor(n_ic, threshold, _window_samples(window, dt_s))
        prefixes = _prefixes(source, ics)
        rngs = [stream(seed, "lifetime/esn", i) for i in range(n_ic)]
        n_steps = int(math.floor(t_max / dt_s + 1e-9)) - (prefixes.shape[1] - 1)

        def on_sample(members, energies, s):
            return mon.update(members, energies, s)

        div = _esn_run(source.model, prefixes, rngs, n_steps, on_sample, geom,
                       source.noise_enabled, source.batch)
        results = [(mon.hit[i] * dt_s if mon.hit[i] >= 0 else None, div[i] > 0) for i in range(n_ic)]

    out = [LifetimeSample(None if failed else life, t_max, source.name, seed, i, failed)
           for i, (life, failed) in enumerate(results)]
    n_failed = sum(s.failed for s in out)
    if n_failed:
        logger.warning("%d of %d %s runs diverged", n_failed, n_ic, source.name)
    return out


# -- survival and fits ----------------------------------------------------------

@dataclass(frozen=True)
class SurvivalCurve:
    """Empirical ``S(t) = P(T >= t)``.

    Censored samples stay in the at-risk count up to their horizon only.
    """

    lifetimes: np.ndarray
    horizons: np.ndarray = field(repr=False)
    n_censored: int = 0

    @property
    def n(self) -> int:
        return len(self.lifetimes) + len(self.horizons)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        alive = np.searchsorted(self.lifetimes, t, side="left")
        count = (len(self.lifetimes) - alive) + np.sum(self.horizons[:, None] >= t.reshape(-1), axis=0).reshape(t.shape)
        return count / self.n

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """``(t, S(t))`` at ``t = 0`` and at each distinct lifetime."""
        t = np.concatenate([[0.0], np.unique(self.lifetimes)])
        return t, self(t)


def survival_curve(samples) -> SurvivalCurve:
    """Survival function of lifetime samples (``LifetimeSample`` or floats)."""
    lifetimes, horizons = [], []
    for s in samples:
        if isinstance(s, LifetimeSample):
            if s.failed:
                continue
            (horizons.append(s.t_max) if s.censored else lifetimes.append(s.lifetime))
        else:
            lifetimes.append(float(s))
    if not lifetimes:
        raise StatisticalPreconditionError("no uncensored lifetimes")
    return SurvivalCurve(np.sort(np.array(lifetimes)), np.array(horizons, dtype=np.float64), len(horizons))


@dataclass(frozen=True)
class ExponentialFit:
    """Shifted exponential ``S(t) = exp(-(t - t0) / tau)`` for ``t >= t0``."""

    t0: float
    tau: float
    n_samples: int

    @property
    def escape_rate(self) -> float:
        return 1.0 / self.tau

    def survival(self, t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(t < self.t0, 1.0, np.exp(-(t - self.t0) / self.tau))

    def cdf(self, t):
        return 1.0 - self.survival(t)


def uncensored(samples) -> np.ndarray:
    return np.array([s.lifetime if isinstance(s, LifetimeSample) else s
                     for s in samples
                     if not isinstance(s, LifetimeSample) or not (s.censored or s.failed)], dtype=np.float64)


def fit_exponential_mle(samples) -> ExponentialFit:
    """Maximum-likelihood shifted exponential: ``t0 = min T``, ``tau = mean(T - t0)``.

    Censored and failed ``LifetimeSample`` entries are ignored.
    """
    t = uncensored(samples)
    if len(t) < 2:
        raise StatisticalPreconditionError(f"need at least 2 uncensored lifetimes, got {len(t)}")
    t0 = float(t.min())
    tau = float(np.mean(t - t0))
    if tau <= 0:
        raise StatisticalPreconditionError("all lifetimes are equal; tau would be zero")
    return ExponentialFit(t0, tau, len(t))


def ks_statistic(samples, fit: ExponentialFit) -> float:
    """One-sample Kolmogorov-Smirnov distance to the fitted law."""
    return float(stats.kstest(uncensored(samples), fit.cdf).statistic)


def tau_ratio_pvalue(larger: ExponentialFit, smaller: ExponentialFit) -> float:
    """One-sided p-value against ``tau(larger) <= tau(smaller)``.

    With ``n`` samples the summed excess ``n * tau_hat`` is ``tau / 2`` times a
    chi-square variable with ``2 (n - 1)`` degrees of freedom, so the ratio of
    the estimates (each scaled by ``n / (n - 1)``) is F-distributed under
    equal ``tau``.
    """
    d1, d2 = 2 * (larger.n_samples - 1), 2 * (smaller.n_samples - 1)
    f = (larger.tau * larger.n_samples / (larger.n_samples - 1)) / (smaller.tau * smaller.n_samples / (smaller.n_samples - 1))
    return float(stats.f.sf(f, d1, d2))


def relative_error(predicted: float, reference: float) -> float:
    return abs(predicted - reference) / abs(reference)


# -- early warning ----------------------------------------------------------------

@dataclass(frozen=True)
class TransitionProbabilityEstimate:
    """Fraction of non-diverged ensemble members that laminarized."""

    n_laminarized: int
    n_ensemble: int
    n_diverged: int
    t_j: float
    horizon: float

    @property
    def n_valid(self) -> int:
        return self.n_ensemble - self.n_diverged

    @property
    def p(self) -> float:
        return self.n_laminarized / self.n_valid if self.n_valid else math.nan


def ensemble_transition_probability(model: EsnModel, prefix, n_ensemble: int = 100,
                                    horizon: float = 2000.0, seed: int = 0, t_j: float = 0.0,
                                    stream_key: str = "ensemble", batch: int = 100,
                                    threshold: float = LAMINAR_THRESHOLD,
                                    window: float = LAMINAR_WINDOW,
                                    geometry=DEFAULT_GEOMETRY) -> TransitionProbabilityEstimate:
    """Probability of laminarizing within ``horizon`` from one flow history.

    Every member is synchronized on the same ``n_sync`` true states ending at
    ``t_j`` but with its own noise stream, so the ensemble spread comes from
    the reservoir noise alone.
    """
    if model.hp.noise <= 0:
        raise ValueError("ensemble diversity requires reservoir noise")
    prefix = np.asarray(prefix.states if isinstance(prefix, Trajectory) else prefix, dtype=np.float64)
    n_sync = model.hp.n_sync
    if prefix.shape != (n_sync, 9):
        raise ValueError(f"prefix must hold {n_sync} states")
    dt_s = model.hp.dt_model
    mon = _Monitor(n_ensemble, threshold, _window_samples(window, dt_s))
    rngs = [stream(seed, stream_key, m) for m in range(n_ensemble)]
    prefixes = np.broadcast_to(prefix, (n_ensemble,) + prefix.shape)

    def on_sample(members, energies, s):
        return mon.update(members, energies, s)

    n_steps = int(round(horizon / dt_s))
    div = _esn_run(model, prefixes, rngs, n_steps, on_sample, geometry, True, batch)
    n_div = int(np.sum(div > 0))
    n_lam = int(np.sum((mon.hit >= 0) & (div <= 0)))
    if n_div:
        logger.warning("%d of %d ensemble members diverged at t_j=%g", n_div, n_ensemble, t_j)
    return TransitionProbabilityEstimate(n_lam, n_ensemble, n_div, t_j, horizon)


def sample_prefixes(traj: Trajectory, n: int, rng: np.random.Generator, n_sync: int = 10) -> np.ndarray:
    """``n`` random histories of ``n_sync`` consecutive states from ``traj``."""
    if len(traj) < n_sync:
        raise ValueError("trajectory shorter than one synchronization prefix")
    ends = rng.integers(n_sync - 1, len(traj), n)
    return np.array([traj.states[e - n_sync + 1:e + 1] for e in ends])


def reference_probability(model: EsnModel, test_prefixes, n_ensemble: int = 100,
                          horizon: float = 2000.0, seed: int = 0,
                          batch: int = 100) -> tuple[float, list[TransitionProbabilityEstimate]]:
    """Mean short-horizon laminarization probability over typical turbulent states.

    ``test_prefixes`` must come from data used neither for training nor for
    tuning. Returns the mean and the per-state estimates.
    """
    ests = [ensemble_transition_probability(model, p, n_ensemble, horizon, seed,
                                            stream_key=f"reference/{i}", batch=batch)
            for i, p in enumerate(test_prefixes)]
    ps = [e.p for e in ests if e.n_valid]
    if not ps:
        raise StatisticalPreconditionError("every ensemble member diverged")
    return float(np.mean(ps)), ests


def early_warning_scan(model: EsnModel, truth: Trajectory, times: Sequence[float],
                       n_ensemble: int = 100, horizon: float = 2000.0, seed: int = 0,
                       batch: int = 100) -> list[TransitionProbabilityEstimate]:
    """Transition probability at each observation time ``t_j``, synchronized
    on the true states ``t_j - (n_sync - 1) dt, ..., t_j``."""
    n_sync = model.hp.n_sync
    out = []
    for j, t in enumerate(times):
        start = t - (n_sync - 1) * truth.dt_sample
        try:
            prefix = truth.window(start, t)
        except IndexError:
            raise ValueError(f"t_j={t} is outside the truth trajectory") from None
        out.append(ensemble_transition_probability(model, prefix, n_ensemble, horizon, seed, t,
                                                   stream_key=f"earlywarn/{j}/{t:.17g}", batch=batch))
    return out


def paper_scan_times(m: int = 5, start: float = 13840.0, spacing: float = 100.0) -> list[float]:
    """Observation times ``start + spacing * (j - 1)`` for ``j = 1..m``."""
    return [start + spacing * j for j in range(m)]


# -- laminarization probability ---------------------------------------------------

@dataclass(frozen=True)
class LaminarizationCurve:
    energies: np.ndarray
    n_laminar: np.ndarray
    n_pert: int
    n_diverged: np.ndarray

    @property
    def p_lam(self) -> np.ndarray:
        valid = self.n_pert - self.n_diverged
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(valid > 0, self.n_laminar / valid, np.nan)


def default_energy_grid(n: int = 20, lo: float = 1e-4, hi: float = 1.0) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), n)


def laminarization_probability_curve(source: Source, energies=None, n_pert: int = 50,
                                     horizon: float = 300.0,
                                     turb_threshold: float = TURBULENCE_THRESHOLD,
                                     seed: int = 0) -> LaminarizationCurve:
    """Fraction of random perturbations of the laminar flow that decay.

    Each perturbation is uniform in ``[-1, 1]^9`` rescaled to energy ``E_j``
    and added to the laminar state. A run transitions if the total energy
    drops below ``turb_threshold`` within ``horizon``. An ESN source first
    integrates the model for ``n_sync`` samples to synchronize. Perturbations
    depend only on ``seed``, so truth and ESN curves see identical ones.
    """
    energies = default_energy_grid() if energies is None else np.asarray(energies, dtype=np.float64)
    if energies.ndim != 1 or np.any(np.diff(energies) <= 0) or np.any(energies <= 0):
        raise ValueError("energies must be positive and strictly increasing")
    geom = source.system.geometry
    n_lev = len(energies)
    starts = np.array([laminar_state() + random_state_with_energy(stream(seed, "plam/pert", j * n_pert + k), e, geom)
                       for j, e in enumerate(energies) for k in range(n_pert)])
    n_total = len(starts)
    transitioned = np.zeros(n_total, dtype=bool)
    failed = np.zeros(n_total, dtype=bool)

    if isinstance(source, Truth):
        sys = source.system
        steps = steps_per_interval(source.sample_every, source.dt)
        n_samples = int(round(horizon / source.sample_every))
        kernel = sys.kernels["first_below"]
        hits = [kernel(a0, source.dt, steps, n_samples, geom.energy_scale, turb_threshold, *sys.kernel_args)
                for a0 in starts]
        hits = np.array(hits)
        transitioned = hits >= 0
        failed = hits == -2
    else:
        dt_s = source.sample_every
        prefixes = _prefixes(source, starts)
        rngs = [stream(seed, "plam/esn", i) for i in range(n_total)]
        n_steps = int(round(horizon / dt_s)) - (prefixes.shape[1] - 1)

        def on_sample(members, e, s):
            new = members[(e < turb_threshold) & ~transitioned[members]]
            transitioned[new] = True
            return new

        div = _esn_run(source.model, prefixes, rngs, n_steps, on_sample, geom,
                       source.noise_enabled, source.batch)
        failed = (div > 0) & ~transitioned

    laminar = ~transitioned & ~failed
    return LaminarizationCurve(
        energies,
        laminar.reshape(n_lev, n_pert).sum(axis=1),
        n_pert,
        failed.reshape(n_lev, n_pert).sum(axis=1),
    )


# -- autonomous runs and laminar plateaus --------------------------------------------

@dataclass(frozen=True)
class PlateauSummary:
    """How one autonomous run behaved with respect to the laminar state.

    ``laminarized``: the detector fired at some point. ``exited``: after
    firing, the energy fell back to or below the threshold. ``stable``: the
    final ``tail`` samples sit within ``rel_band`` of the laminar energy with
    standard deviation below ``max_std``.
    """

    laminarized: bool
    exited: bool
    stable: bool
    tail_mean: float
    tail_std: float


def classify_plateau(energies, laminar_energy: float, tail: int = 2000, rel_band: float = 0.15,
                     max_std: float = 1.0, threshold: float = LAMINAR_THRESHOLD,
                     window: float = LAMINAR_WINDOW, dt_sample: float = 1.0) -> PlateauSummary:
    e = np.asarray(energies, dtype=np.float64)
    if len(e) < tail:
        raise InsufficientDataError(f"{len(e)} samples cannot hold a {tail}-sample tail")
    try:
        hit = detect_laminarization(e, dt_sample, threshold, window)
    except InsufficientDataError:
        hit = None
    exited = False
    if hit is not None:
        exited = bool(np.any(e[int(round(hit / dt_sample)):] <= threshold))
    tail_e = e[-tail:]
    mean, std = float(tail_e.mean()), float(tail_e.std())
    stable = abs(mean - laminar_energy) <= rel_band * laminar_energy and std < max_std
    return PlateauSummary(hit is not None, exited, stable, mean, std)


def autonomous_energies(model: EsnModel, truth: Trajectory, n_runs: int, steps: int, seed: int = 0,
                        start_range: Optional[tuple[float, float]] = None,
                        noise_enabled: bool = True, batch: int = 100,
                        geometry=DEFAULT_GEOMETRY) -> tuple[np.ndarray, np.ndarray]:
    """Energies of ``n_runs`` closed-loop predictions of ``steps`` steps.

    Each run synchronizes on ``n_sync`` consecutive truth states ending at a
    random time in ``start_range`` (default: the whole trajectory). Returns
    the ``(steps, n_runs)`` energies (NaN after divergence) and the
    divergence step of each run (-1 if none).
    """
    n_sync = model.hp.n_sync
    lo, hi = (truth.t0, truth.times[-1]) if start_range is None else start_range
    first = max(truth.index_of(lo), n_sync - 1)
    last = truth.index_of(hi)
    if last < first:
        raise ValueError("start range holds no complete synchronization prefix")
    ends = stream(seed, "autonomous/starts").integers(first, last + 1, n_runs)
    prefixes = np.array([truth.states[e - n_sync + 1:e + 1] for e in ends])
    rngs = [stream(seed, "autonomous/noise", i) for i in range(n_runs)]
    out = np.full((steps, n_runs), np.nan)

    def on_sample(members, energies, s):
        if s >= n_sync:
            out[s - n_sync, members] = energies
        return members[:0]

    div = _esn_run(model, prefixes, rngs, steps, on_sample, geometry, noise_enabled, batch)
    return out, div
