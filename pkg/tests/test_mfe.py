import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfesn.mfe import (
    DEFAULT_GEOMETRY,
    DomainGeometry,
    IntegrationError,
    Trajectory,
    build_system,
    integrate,
    kinetic_energy,
    laminar_state,
    quadratic_part,
    random_state_with_energy,
    rhs,
    rk4_step,
)

from mfe_oracle import dense_quadratic_tensor, dense_rhs

PAPER_RES = (200, 250, 275, 300, 350, 500)


@pytest.fixture(scope="module")
def sys500():
    return build_system(500)


@pytest.fixture(scope="module")
def random_states():
    return np.random.default_rng(2024).uniform(-1, 1, (1000, 9))


def test_build_rejects_bad_input():
    with pytest.raises(ValueError):
        build_system(0)
    with pytest.raises(ValueError):
        build_system(-3.0)
    with pytest.raises(ValueError):
        DomainGeometry(lx=0.0)
    with pytest.raises(ValueError):
        DomainGeometry(lz=-1.0)


def test_forcing_and_origin(sys500):
    assert sys500.forcing == pytest.approx(math.pi**2 / 2000, rel=1e-15)
    out = rhs(sys500, np.zeros(9))
    assert out[0] == pytest.approx(4.934802200544679e-3, rel=1e-14)
    assert np.all(out[1:] == 0)


@pytest.mark.parametrize("re", PAPER_RES)
def test_laminar_fixed_point(re):
    assert np.max(np.abs(rhs(build_system(re), laminar_state()))) <= 1e-14


def test_nonzero_count_matches_dense_oracle(sys500):
    t = dense_quadratic_tensor(500)
    # one sparse entry per (j, {k, l}) with a nonzero coefficient
    expected = sum(
        1 for j in range(9) for k in range(9) for l in range(k, 9)
        if abs(t[j, k, l]) > 1e-15
    )
    assert sys500.n_quadratic == expected
    assert np.allclose(sys500.dense_quadratic(), t, rtol=1e-13, atol=1e-15)


def test_nonlinear_energy_conservation(sys500, random_states):
    n = quadratic_part(sys500, random_states)
    norm3 = np.linalg.norm(random_states, axis=1) ** 3
    assert np.all(np.abs(np.sum(random_states * n, axis=1)) <= 1e-12 * norm3)


@pytest.mark.parametrize("re", [250, 500])
def test_sparse_rhs_matches_dense_oracle(re, random_states):
    sys = build_system(re)
    want = dense_rhs(random_states, re)
    got = rhs(sys, random_states)
    scale = np.linalg.norm(want, axis=1)
    assert np.all(np.linalg.norm(got - want, axis=1) <= 1e-13 * scale)
    # the compiled single-state path agrees too
    for a in random_states[:50]:
        assert np.allclose(rhs(sys, a), dense_rhs(a, re), rtol=1e-13, atol=1e-16)


def test_non_default_geometry_matches_oracle():
    geom = DomainGeometry(lx=4 * math.pi, lz=2 * math.pi)
    sys = build_system(400, geom)
    a = np.random.default_rng(5).uniform(-1, 1, (200, 9))
    want = dense_rhs(a, 400, lx=geom.lx, lz=geom.lz)
    assert np.allclose(rhs(sys, a), want, rtol=1e-13, atol=1e-16)


def test_kinetic_energy():
    assert kinetic_energy(np.zeros(9)) == 0.0
    e_lam = kinetic_energy(laminar_state())
    assert e_lam == pytest.approx(2.1 * math.pi**2, rel=1e-14)
    assert abs(e_lam - 20.72) <= 0.05
    assert kinetic_energy(2 * laminar_state()) == pytest.approx(4 * e_lam, rel=1e-15)
    assert laminar_state()[0] == 1.0


def test_rk4_step_fixed_point_and_origin(sys500):
    a = rk4_step(sys500, laminar_state(), 1e-3)
    assert np.max(np.abs(a - laminar_state())) <= 1e-15
    b = rk4_step(sys500, np.zeros(9), 1e-3)
    assert b[0] == pytest.approx(1e-3 * math.pi**2 / 2000, rel=1e-5)
    with pytest.raises(ValueError):
        rk4_step(sys500, np.zeros(9), 0.0)


def test_rk4_step_matches_textbook_formula(sys500):
    a = np.random.default_rng(1).uniform(-0.5, 0.5, 9)
    dt = 0.05
    f = lambda x: dense_rhs(x, 500)
    k1 = f(a)
    k2 = f(a + dt / 2 * k1)
    k3 = f(a + dt / 2 * k2)
    k4 = f(a + dt * k3)
    want = a + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert np.allclose(rk4_step(sys500, a, dt), want, rtol=1e-13, atol=1e-15)


def test_integrate_laminar(sys500):
    traj = integrate(sys500, laminar_state(), 1e-3, 100, 1)
    assert len(traj) == 101
    assert np.max(np.abs(traj.states - laminar_state())) <= 1e-14
    assert traj.times[-1] == 100.0


def test_integrate_sampling_contract(sys500):
    a0 = random_state_with_energy(np.random.default_rng(0), 6.0)
    traj = integrate(sys500, a0, 1e-2, 5, 0.5)
    assert len(traj) == 11
    np.testing.assert_array_equal(traj.states[0], a0)
    # sampling does not perturb the trajectory
    direct = a0
    for _ in range(250):
        direct = rk4_step(sys500, direct, 1e-2)
    np.testing.assert_array_equal(traj.states[5], direct)
    with pytest.raises(ValueError):
        integrate(sys500, a0, 0.3, 1.0, 1.0)  # not a multiple of dt


def test_integrate_reports_blowup(sys500):
    # energy-conserving nonlinearity: only a numerically unstable step blows up
    a0 = np.full(9, 50.0)
    with pytest.raises(IntegrationError) as err:
        integrate(sys500, a0, 0.5, 10, 1)
    assert 0 < err.value.time <= 10


def test_integrate_deterministic(sys500):
    a0 = random_state_with_energy(np.random.default_rng(3), 6.0)
    t1 = integrate(sys500, a0, 1e-3, 20)
    t2 = integrate(sys500, a0, 1e-3, 20)
    assert t1.states.tobytes() == t2.states.tobytes()


def _turbulent_state(sys, seed=11, spinup=200):
    a0 = random_state_with_energy(np.random.default_rng(seed), 0.3 * DEFAULT_GEOMETRY.energy_scale)
    return integrate(sys, a0, 1e-3, spinup).states[-1]


def test_rk4_convergence_order(sys500):
    a0 = _turbulent_state(sys500)
    assert kinetic_energy(a0) < 15  # really turbulent, not laminarized
    ref = integrate(sys500, a0, 1e-5, 10, 10).states[-1]
    err = {dt: np.linalg.norm(integrate(sys500, a0, dt, 10, 10).states[-1] - ref)
           for dt in (0.2, 0.1)}
    ratio = err[0.2] / err[0.1]
    assert 16 * 0.8 <= ratio <= 16 * 1.2
    assert 3.8 <= math.log2(ratio) <= 4.2


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), e=st.floats(1e-6, 50.0))
def test_random_state_energy_exact(seed, e):
    a = random_state_with_energy(np.random.default_rng(seed), e)
    assert a.shape == (9,)
    assert abs(kinetic_energy(a) - e) <= 1e-12 * e
    b = random_state_with_energy(np.random.default_rng(seed), e)
    assert a.tobytes() == b.tobytes()


def test_random_state_paper_ic_energy():
    e_ic = 0.3 * DEFAULT_GEOMETRY.energy_scale
    a = random_state_with_energy(np.random.default_rng(9), e_ic)
    assert np.sum(a**2) == pytest.approx(0.3, rel=1e-12)
    with pytest.raises(ValueError):
        random_state_with_energy(np.random.default_rng(9), 0.0)


def test_trajectory_validation_and_window():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((0, 9)))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 8)))
    traj = Trajectory(np.arange(90.0).reshape(10, 9), 1.0, 5.0)
    sub = traj.window(7, 9)
    assert sub.t0 == 7 and len(sub) == 3
    np.testing.assert_array_equal(sub.states[0], traj.states[2])
    with pytest.raises(IndexError):
        traj.index_of(4.0)
