"""Echo state network with random bias and additive reservoir noise.

Reservoir update and readout::

    r(t + dt) = tanh(b + W r(t) + W_in a(t)) + xi * Z,   Z ~ U[-0.5, 0.5]^n
    a~(t + dt) = W_out [r(t + dt); 1]

``W`` (sparse), ``W_in`` and ``b`` are drawn once and never change; only
``W_out`` is fitted, by linear least squares on teacher-forced states.

All reservoir arithmetic is written so that a member's result does not depend
on how many other members share its batch: CSR sparse products keep a fixed per-element summation
order, unlike BLAS ``gemm`` or ``einsum``.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
import weakref
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .mfe import N_MODES, Trajectory

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e3


class PredictionDiverged(FloatingPointError):
    """Closed-loop prediction left ``|a~|_inf <= 1e3``; ``step`` is 1-based."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EsnHyperparameters:
    n_reservoir: int = 1500
    spectral_radius: float = 0.5
    sparsity: float = 0.9          # probability that an entry of W is exactly zero
    noise: float = 1e-3            # xi
    input_scale: float = 1.0
    bias_scale: float = 1.0
    dt_model: float = 1.0
    seed: int = 0
    ridge: float = 0.0
    n_sync: int = 10
    n_input: int = N_MODES

    def __post_init__(self):
        if self.n_input < 1 or self.n_reservoir < self.n_input:
            raise ValueError("need n_reservoir >= n_input >= 1")
        if not self.spectral_radius > 0:
            raise ValueError("spectral_radius must be positive")
        if not 0 <= self.sparsity < 1:
            raise ValueError("sparsity must lie in [0, 1)")
        if self.noise < 0 or self.ridge < 0:
            raise ValueError("noise and ridge must be nonnegative")
        if not (self.input_scale > 0 and self.bias_scale > 0 and self.dt_model > 0):
            raise ValueError("scales and dt_model must be positive")
        if self.n_sync < 2:
            raise ValueError("n_sync must be at least 2")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class EsnModel:
    """Fixed random weights plus an optional trained readout.

    ``w_out`` has shape ``(n_input, n_reservoir + 1)``, the last column being
    the constant term. It is ``None`` until :func:`train_readout` runs.
    """

    hp: EsnHyperparameters
    w: sp.csr_matrix = field(repr=False)
    w_in: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)
    w_out: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_reservoir(self) -> int:
        return self.hp.n_reservoir

    @property
    def trained(self) -> bool:
        return self.w_out is not None

    def _require_trained(self):
        if self.w_out is None:
            raise ValueError("model has no trained readout")


class SpectralRadius(NamedTuple):
    value: float
    converged: bool
    iterations: int


def estimate_spectral_radius(w, tol: float = 1e-6, max_iter: int = 10_000,
                             block: int = 16, check_every: int = 10,
                             seed: int = 0) -> SpectralRadius:
    """Dominant eigenvalue magnitude by block power iteration.

    A plain single-vector iteration stalls when the dominant eigenvalues are a
    complex pair, the usual case for random nonsymmetric matrices. Iterating a
    small orthonormal block and taking the largest Ritz value of the projected
    matrix handles that.
    """
    n = w.shape[0]
    if w.ndim != 2 or w.shape[1] != n:
        raise ValueError("matrix must be square")
    p = min(block, n)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    prev = None
    for it in range(1, max_iter + 1):
        z = w @ q
        if it % check_every == 0 or it == max_iter or p == n:
            h = q.T @ z
            rho = float(np.max(np.abs(np.linalg.eigvals(h))))
            if p == n:
                return SpectralRadius(rho, True, it)
            if prev is not None and abs(rho - prev) <= tol * max(rho, 1e-300):
                return SpectralRadius(rho, True, it)
            if rho == 0.0 and not np.any(z):
                return SpectralRadius(0.0, True, it)
            prev = rho
        q, _ = np.linalg.qr(z)
    return SpectralRadius(rho, False, max_iter)


def init_reservoir(hp: EsnHyperparameters) -> EsnModel:
    """Draw ``W``, ``W_in`` and ``b`` from ``hp.seed``; readout left empty."""
    rng = np.random.default_rng(hp.seed)
    n, m = hp.n_reservoir, hp.n_input
    keep = rng.random((n, n)) >= hp.sparsity
    values = rng.uniform(-1.0, 1.0, (n, n))
    w = sp.csr_matrix(np.where(keep, values, 0.0))
    w.sort_indices()
    w_in = rng.uniform(-hp.input_scale, hp.input_scale, (n, m))
    bias = rng.uniform(-hp.bias_scale, hp.bias_scale, n)

    est = estimate_spectral_radius(w, seed=hp.seed)
    if not est.converged:
        logger.warning("spectral radius estimate did not converge (%.6g)", est.value)
    if est.value < 1e-12:
        raise ValueError("random reservoir has (near) zero spectral radius; cannot rescale")
    w = w * (hp.spectral_radius / est.value)
    return _freeze(EsnModel(hp, sp.csr_matrix(w), w_in, bias))


def _freeze(model: EsnModel) -> EsnModel:
    for arr in (model.w.data, model.w.indices, model.w.indptr, model.w_in, model.bias, model.w_out):
        if arr is not None:
            arr.setflags(write=False)
    return model


# -- reservoir dynamics ---------------------------------------------------------

_SPARSE_CACHE: "weakref.WeakKeyDictionary[EsnModel, tuple]" = weakref.WeakKeyDictionary()


def _sparse_operators(model: EsnModel):
    """CSR copies of ``W_in`` and ``W_out``; scipy's CSR x dense product sums
    each output element in a fixed order whatever the batch width."""
    ops = _SPARSE_CACHE.get(model)
    if ops is None or ops[0] is not model.w_out:
        w_out = None if model.w_out is None else sp.csr_matrix(model.w_out[:, :-1])
        ops = (model.w_out, sp.csr_matrix(model.w_in), w_out)
        _SPARSE_CACHE[model] = ops
    return ops


def _update(model: EsnModel, r: np.ndarray, a: np.ndarray, noise: float,
            rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """One reservoir update for a (B, n) batch driven by (B, 9) inputs."""
    _, w_in, _ = _sparse_operators(model)
    pre = (model.w @ r.T).T
    pre += (w_in @ a.T).T
    pre += model.bias
    out = np.tanh(pre)
    if noise > 0:
        n = model.n_reservoir
        for i, g in enumerate(rngs):
            out[i] += noise * (g.random(n) - 0.5)
    return out


def _readout(model: EsnModel, r: np.ndarray) -> np.ndarray:
    _, _, w_out = _sparse_operators(model)
    return (w_out @ r.T).T + model.w_out[:, -1]


def _inputs(inputs) -> np.ndarray:
    arr = inputs.states if isinstance(inputs, Trajectory) else np.asarray(inputs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != N_MODES or len(arr) == 0:
        raise ValueError(f"inputs must be a non-empty (T, 9) sequence, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("inputs contain non-finite values")
    return arr


def drive(model: EsnModel, inputs, r0=None, rng: Optional[np.random.Generator] = None,
          noise: Optional[float] = None) -> np.ndarray:
    """Teacher-forced reservoir states.

    Row ``i`` of the result is the state after consuming ``inputs[i]``.
    ``noise`` overrides ``model.hp.noise``; a generator is required when the
    effective noise is nonzero.
    """
    a = _inputs(inputs)
    xi = model.hp.noise if noise is None else noise
    if xi > 0 and rng is None:
        raise ValueError("a random generator is required when noise is on")
    r = np.zeros((1, model.n_reservoir)) if r0 is None else np.array(r0, dtype=np.float64).reshape(1, -1)
    out = np.empty((len(a), model.n_reservoir))
    rngs = [rng]
    for i in range(len(a)):
        r = _update(model, r, a[i:i + 1], xi, rngs)
        out[i] = r[0]
    return out


class TrainingResult(NamedTuple):
    model: EsnModel
    rss: float


def _solve_least_squares(r: np.ndarray, a: np.ndarray, ridge: float) -> np.ndarray:
    """argmin_X |r X - a|^2 + ridge |X|^2 via Householder QR."""
    if ridge > 0:
        r = np.vstack([r, np.sqrt(ridge) * np.eye(r.shape[1])])
        a = np.vstack([a, np.zeros((r.shape[1], a.shape[1]))])
    if r.shape[0] < r.shape[1]:
        warnings.warn("fewer samples than unknowns; falling back to minimum-norm solution",
                      RankDeficiencyWarning, stacklevel=3)
        return scipy.linalg.lstsq(r, a, lapack_driver="gelsd")[0]
    q, upper = scipy.linalg.qr(r, mode="economic")
    diag = np.abs(np.diag(upper))
    if diag.min() <= 1e-12 * diag.max():
        warnings.warn(f"regression matrix is rank deficient (condition ~{diag.max() / max(diag.min(), 1e-300):.3g}); "
                      "falling back to minimum-norm solution", RankDeficiencyWarning, stacklevel=3)
        return scipy.linalg.lstsq(r, a, lapack_driver="gelsd")[0]
    return scipy.linalg.solve_triangular(upper, q.T @ a)


def fit_readout(states: np.ndarray, targets: np.ndarray, ridge: float = 0.0) -> tuple[np.ndarray, float]:
    """Readout ``W_out`` (targets x (n + 1)) for given reservoir states.

    Returns the readout and the residual sum of squares.
    """
    design = np.hstack([states, np.ones((len(states), 1))])
    x = _solve_least_squares(design, targets, ridge)
    rss = float(np.sum((design @ x - targets) ** 2))
    return np.ascontiguousarray(x.T), rss


def train_readout(model: EsnModel, training, rng: Optional[np.random.Generator] = None) -> TrainingResult:
    """Fit ``W_out`` on a training series ``a(0), ..., a(N_t dt)``.

    The reservoir starts at zero and is driven by ``a(0 .. N_t - 1)``; the
    states ``r(1 .. N_t)`` are regressed onto ``a(1 .. N_t)``. Returns a new
    model sharing the fixed weights.
    """
    a = _inputs(training)
    if isinstance(training, Trajectory) and abs(training.dt_sample - model.hp.dt_model) > 1e-12:
        raise ValueError("training data sampling differs from the model time step")
    if len(a) < model.n_reservoir + 2:
        warnings.warn(f"only {len(a)} training samples for {model.n_reservoir} reservoir units; "
                      "the regression is underdetermined", RankDeficiencyWarning, stacklevel=2)
    states = drive(model, a[:-1], rng=rng)
    w_out, rss = fit_readout(states, a[1:], model.hp.ridge)
    trained = dataclasses.replace(model, w_out=w_out)
    trained.w_out.setflags(write=False)
    return TrainingResult(trained, rss)


def synchronize(model: EsnModel, recent, rng: Optional[np.random.Generator] = None,
                noise: Optional[float] = None) -> np.ndarray:
    """Reservoir state matching the last of ``n_sync`` recent true states.

    Starting from zero, the reservoir is driven by all but the last state;
    the last one is the initial condition of the subsequent prediction.
    """
    a = _inputs(recent)
    if len(a) < model.hp.n_sync:
        raise ValueError(f"synchronization needs {model.hp.n_sync} states, got {len(a)}")
    a = a[-model.hp.n_sync:]
    return drive(model, a[:-1], rng=rng, noise=noise)[-1]


class ClosedLoop:
    """Autonomous prediction for a batch of independent members.

    Each member owns its reservoir state and random stream. ``step`` advances
    every active member by one model step and returns the (B, 9) predictions
    (rows of inactive members are left untouched). Members whose prediction
    leaves ``|a~|_inf <= 1e3`` are marked diverged and deactivated.
    """

    def __init__(self, model: EsnModel, r0, a0, rngs: Sequence[Optional[np.random.Generator]],
                 noise_enabled: bool = True):
        model._require_trained()
        self.model = model
        self.r = np.array(r0, dtype=np.float64, ndmin=2)
        self.a = np.array(a0, dtype=np.float64, ndmin=2)
        if self.r.shape != (len(self.a), model.n_reservoir) or self.a.shape[1] != N_MODES:
            raise ValueError("r0 and a0 must be (B, n_reservoir) and (B, 9)")
        if len(rngs) != len(self.a):
            raise ValueError("one random stream per member is required")
        self.xi = model.hp.noise if noise_enabled else 0.0
        if self.xi > 0 and any(g is None for g in rngs):
            raise ValueError("random streams are required when noise is on")
        self.rngs = list(rngs)
        self.active = np.ones(len(self.a), dtype=bool)
        self.diverged_at = np.full(len(self.a), -1)
        self.steps = 0

    def deactivate(self, members) -> None:
        self.active[members] = False

    def step(self) -> np.ndarray:
        self.steps += 1
        idx = np.flatnonzero(self.active)
        if idx.size == 0:
            return self.a
        r = _update(self.model, self.r[idx], self.a[idx], self.xi, [self.rngs[i] for i in idx])
        a = _readout(self.model, r)
        self.r[idx] = r
        self.a[idx] = a
        bad = ~(np.max(np.abs(a), axis=1) <= DIVERGENCE_LIMIT)
        if bad.any():
            self.diverged_at[idx[bad]] = self.steps
            self.active[idx[bad]] = False
        return self.a


def predict(model: EsnModel, r0, a0, horizon: int, rng: Optional[np.random.Generator] = None,
            noise_enabled: bool = True, t0: float = 0.0) -> Trajectory:
    """Closed-loop forecast of ``horizon`` steps from reservoir state ``r0``
    and flow state ``a0``; the returned trajectory starts with ``a0``."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    loop = ClosedLoop(model, np.reshape(r0, (1, -1)), np.reshape(a0, (1, -1)), [rng], noise_enabled)
    out = np.empty((horizon + 1, N_MODES))
    out[0] = a0
    for i in range(1, horizon + 1):
        out[i] = loop.step()[0]
        if loop.diverged_at[0] > 0:
            raise PredictionDiverged(f"prediction diverged at step {i}", i)
    return Trajectory(out, model.hp.dt_model, t0)
