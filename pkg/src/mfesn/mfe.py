"""Nine-mode Moehlis-Faisst-Eckhardt model of sinusoidal shear flow.

The state is the vector of nine mode amplitudes ``a``. The laminar flow is the
fixed point ``[1, 0, ..., 0]``. The right-hand side is

    da_j/dt = delta_{1j} pi^2 / (4 Re) + alpha_j(Re) a_j + sum_{k<=l} c_jkl a_k a_l

where the quadratic coefficients are stored sparsely as a flat list, with the
symmetric (k, l) / (l, k) pairs already summed.

Time stepping is classical fourth-order Runge-Kutta. The stepping loops are
compiled with numba (see ``_kernels``); a lifetime study needs ~10^9 steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import kernels_for

N_MODES = 9
BLOWUP_LIMIT = 1e3


class IntegrationError(FloatingPointError):
    """Raised when a trajectory blows up (non-finite or ``|a_j| > 1e3``).

    Attributes:
        time: model time of the first offending step.
    """

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class DomainGeometry:
    """Periodic box of the model.

    ``lx`` and ``lz`` are the streamwise and spanwise periods. The default is
    ``lx = 1.75 pi``, ``lz = 1.2 pi``, for which the laminar state carries
    kinetic energy ``lx * lz = 2.1 pi^2 ~ 20.73``.
    """

    lx: float = 1.75 * math.pi
    lz: float = 1.2 * math.pi

    def __post_init__(self):
        if not (self.lx > 0 and self.lz > 0) or not (math.isfinite(self.lx) and math.isfinite(self.lz)):
            raise ValueError(f"degenerate geometry: lx={self.lx}, lz={self.lz}")

    @property
    def alpha(self) -> float:
        return 2.0 * math.pi / self.lx

    @property
    def beta(self) -> float:
        return math.pi / 2.0

    @property
    def gamma(self) -> float:
        return 2.0 * math.pi / self.lz

    @property
    def energy_scale(self) -> float:
        """Prefactor ``Gamma_x * Gamma_z`` of the kinetic energy."""
        return self.lx * self.lz


DEFAULT_GEOMETRY = DomainGeometry()


@dataclass(frozen=True)
class MfeSystem:
    """Coefficients of the amplitude equations at one Reynolds number.

    Immutable once built; share freely between threads.
    """

    re: float
    geometry: DomainGeometry
    linear: np.ndarray
    forcing: float
    q_index: np.ndarray = field(repr=False)  # (m, 3) int64 rows (j, k, l), k <= l
    q_coef: np.ndarray = field(repr=False)   # (m,) float64

    @property
    def n_quadratic(self) -> int:
        return int(self.q_coef.size)

    def dense_quadratic(self) -> np.ndarray:
        """Quadratic coefficients as a dense (9, 9, 9) array, symmetric in (k, l)."""
        out = np.zeros((N_MODES,) * 3)
        for (j, k, l), c in zip(self.q_index, self.q_coef):
            if k == l:
                out[j, k, l] += c
            else:
                out[j, k, l] += 0.5 * c
                out[j, l, k] += 0.5 * c
        return out

    @property
    def kernels(self) -> dict:
        return kernels_for(tuple(map(tuple, self.q_index.tolist())))

    @property
    def kernel_args(self) -> tuple:
        return (self.forcing, self.linear, self.q_coef)


def _quadratic_terms(al: float, be: float, ga: float):
    """Raw (j, k, l, coefficient) list, 1-based mode indices, unsymmetrized."""
    kag = math.sqrt(al**2 + ga**2)
    kbg = math.sqrt(be**2 + ga**2)
    kabg = math.sqrt(al**2 + be**2 + ga**2)
    s6 = math.sqrt(6.0)
    s32 = math.sqrt(1.5)
    return [
        # a1
        (1, 6, 8, -s32 * be * ga / kabg),
        (1, 2, 3, s32 * be * ga / kbg),
        # a2
        (2, 4, 6, 5 * math.sqrt(2.0) * ga**2 / (3 * math.sqrt(3.0) * kag)),
        (2, 5, 7, -ga**2 / (s6 * kag)),
        (2, 5, 8, -al * be * ga / (s6 * kag * kabg)),
        (2, 1, 3, -s32 * be * ga / kbg),
        (2, 3, 9, -s32 * be * ga / kbg),
        # a3
        (3, 4, 7, 2 * al * be * ga / (s6 * kag * kbg)),
        (3, 5, 6, 2 * al * be * ga / (s6 * kag * kbg)),
        (3, 4, 8, (be**2 * (3 * al**2 + ga**2) - 3 * ga**2 * (al**2 + ga**2)) / (s6 * kag * kbg * kabg)),
        # a4
        (4, 1, 5, -al / s6),
        (4, 2, 6, -10 * al**2 / (3 * s6 * kag)),
        (4, 3, 7, -s32 * al * be * ga / (kag * kbg)),
        (4, 3, 8, -s32 * al**2 * be**2 / (kag * kbg * kabg)),
        (4, 5, 9, -al / s6),
        # a5
        (5, 1, 4, al / s6),
        (5, 2, 7, al**2 / (s6 * kag)),
        (5, 2, 8, -al * be * ga / (s6 * kag * kabg)),
        (5, 4, 9, al / s6),
        (5, 3, 6, 2 * al * be * ga / (s6 * kag * kbg)),
        # a6
        (6, 1, 7, al / s6),
        (6, 1, 8, s32 * be * ga / kabg),
        (6, 2, 4, 10 * (al**2 - ga**2) / (3 * s6 * kag)),
        (6, 3, 5, -2 * math.sqrt(2.0 / 3.0) * al * be * ga / (kag * kbg)),
        (6, 7, 9, al / s6),
        (6, 8, 9, s32 * be * ga / kabg),
        # a7
        (7, 1, 6, -al / s6),
        (7, 6, 9, -al / s6),
        (7, 2, 5, (ga**2 - al**2) / (s6 * kag)),
        (7, 3, 4, al * be * ga / (s6 * kag * kbg)),
        # a8
        (8, 2, 5, 2 * al * be * ga / (s6 * kag * kabg)),
        (8, 3, 4, ga**2 * (3 * al**2 - be**2 + 3 * ga**2) / (s6 * kag * kbg * kabg)),
        # a9
        (9, 2, 3, s32 * be * ga / kbg),
        (9, 6, 8, -s32 * be * ga / kabg),
    ]


def build_system(re: float, geometry: DomainGeometry = DEFAULT_GEOMETRY) -> MfeSystem:
    """Evaluate the amplitude-equation coefficients at Reynolds number ``re``."""
    if not (re > 0 and math.isfinite(re)):
        raise ValueError(f"Reynolds number must be positive, got {re}")
    if not isinstance(geometry, DomainGeometry):
        raise TypeError("geometry must be a DomainGeometry")
    al, be, ga = geometry.alpha, geometry.beta, geometry.gamma

    linear = np.array([
        -be**2,
        -(4 * be**2 / 3 + ga**2),
        -(be**2 + ga**2),
        -(3 * al**2 + 4 * be**2) / 3,
        -(al**2 + be**2),
        -(3 * al**2 + 4 * be**2 + 3 * ga**2) / 3,
        -(al**2 + be**2 + ga**2),
        -(al**2 + be**2 + ga**2),
        -9 * be**2,
    ]) / re

    summed: dict[tuple[int, int, int], float] = {}
    for j, k, l, c in _quadratic_terms(al, be, ga):
        key = (j - 1, min(k, l) - 1, max(k, l) - 1)
        summed[key] = summed.get(key, 0.0) + c
    keys = sorted(key for key, c in summed.items() if c != 0.0)
    q_index = np.array(keys, dtype=np.int64).reshape(-1, 3)
    q_coef = np.array([summed[key] for key in keys], dtype=np.float64)

    linear.setflags(write=False)
    q_index.setflags(write=False)
    q_coef.setflags(write=False)
    return MfeSystem(float(re), geometry, linear, math.pi**2 / (4.0 * re), q_index, q_coef)


def laminar_state() -> np.ndarray:
    a = np.zeros(N_MODES)
    a[0] = 1.0
    return a


def kinetic_energy(a, geometry: DomainGeometry = DEFAULT_GEOMETRY):
    """``Gamma_x Gamma_z sum_j a_j^2``; vectorized over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    return geometry.energy_scale * np.sum(a * a, axis=-1)


def random_state_with_energy(rng: np.random.Generator, e_target: float,
                             geometry: DomainGeometry = DEFAULT_GEOMETRY,
                             max_tries: int = 100) -> np.ndarray:
    """Uniform draw from ``[-1, 1]^9`` rescaled to kinetic energy ``e_target``."""
    if not e_target > 0:
        raise ValueError(f"target energy must be positive, got {e_target}")
    for _ in range(max_tries):
        a = rng.uniform(-1.0, 1.0, N_MODES)
        e = kinetic_energy(a, geometry)
        if e > 0:
            return a * math.sqrt(e_target / e)
    raise RuntimeError("could not draw a nonzero state")


# -- public operations --------------------------------------------------------

def _as_state(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.shape != (N_MODES,):
        raise ValueError(f"expected a 9-vector, got shape {a.shape}")
    return a


def rhs(sys: MfeSystem, a) -> np.ndarray:
    """Time derivative ``da/dt``. Accepts a 9-vector or an (n, 9) batch."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        out = np.empty(N_MODES)
        sys.kernels["rhs_into"](_as_state(a), *sys.kernel_args, out)
        return out
    out = sys.linear * a
    out[..., 0] += sys.forcing
    j, k, l = sys.q_index.T
    np.add.at(out.T, j, (sys.q_coef * a[..., k] * a[..., l]).T)
    return out


def quadratic_part(sys: MfeSystem, a) -> np.ndarray:
    """The nonlinear (quadratic) part of the right-hand side alone."""
    a = np.asarray(a, dtype=np.float64)
    out = np.zeros_like(a)
    j, k, l = sys.q_index.T
    np.add.at(out.T, j, (sys.q_coef * a[..., k] * a[..., l]).T)
    return out


def rk4_step(sys: MfeSystem, a, dt: float) -> np.ndarray:
    """One classical RK4 step of size ``dt``; returns a new array."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = _as_state(a).copy()
    scratch = [np.empty(N_MODES) for _ in range(5)]
    sys.kernels["rk4_into"](a, float(dt), *sys.kernel_args, *scratch)
    return a


def steps_per_interval(interval: float, dt: float) -> int:
    """Number of ``dt`` steps in ``interval``; it must be an integer multiple."""
    if not (dt > 0 and interval > 0):
        raise ValueError("dt and interval must be positive")
    n = round(interval / dt)
    if n < 1 or abs(n * dt - interval) > 1e-9 * interval:
        raise ValueError(f"{interval} is not an integer multiple of dt={dt}")
    return int(n)


@dataclass
class Trajectory:
    """Uniformly sampled amplitudes: ``states[i]`` is taken at ``t0 + i * dt_sample``."""

    states: np.ndarray
    dt_sample: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[1] != N_MODES or len(self.states) == 0:
            raise ValueError(f"states must be a non-empty (n, 9) array, got {self.states.shape}")
        if not self.dt_sample > 0:
            raise ValueError("dt_sample must be positive")

    def __len__(self):
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt_sample * np.arange(len(self.states))

    def energies(self, geometry: DomainGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
        return kinetic_energy(self.states, geometry)

    def index_of(self, t: float) -> int:
        """Sample index at time ``t``; ``t`` must fall on the sampling grid."""
        x = (t - self.t0) / self.dt_sample
        i = round(x)
        if abs(i - x) > 1e-9 or not 0 <= i < len(self.states):
            raise IndexError(f"time {t} is not a sample of this trajectory")
        return int(i)

    def window(self, t_start: float, t_end: float) -> Trajectory:
        """Samples with ``t_start <= t <= t_end`` (both on the grid)."""
        i, j = self.index_of(t_start), self.index_of(t_end)
        return Trajectory(self.states[i:j + 1].copy(), self.dt_sample, self.t0 + i * self.dt_sample)


def integrate(sys: MfeSystem, a0, dt: float = 1e-3, duration: float = 1.0,
              sample_every: float = 1.0, t0: float = 0.0) -> Trajectory:
    """Integrate with RK4 and sample every ``sample_every`` time units.

    Raises:
        IntegrationError: the state became non-finite or exceeded the blow-up
            limit; ``err.time`` is the time of failure.
    """
    a0 = _as_state(a0)
    steps = steps_per_interval(sample_every, dt)
    n_samples = int(round(duration / sample_every))
    if n_samples < 0 or abs(n_samples * sample_every - duration) > 1e-9 * max(duration, 1.0):
        raise ValueError("duration must be a nonnegative multiple of sample_every")
    out, fail = sys.kernels["integrate"](a0, float(dt), steps, n_samples, *sys.kernel_args)
    if fail >= 0:
        raise IntegrationError(f"integration blew up at t={t0 + fail * dt:g}", t0 + fail * dt)
    return Trajectory(out, float(sample_every), float(t0))
