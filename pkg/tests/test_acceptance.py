"""Acceptance gate: the twelve numbered criteria at their stated tolerances.

Run ``pytest tests/test_acceptance.py -v``; a per-criterion PASS/FAIL table
is printed at the end of the session. The statistical criteria take tens of
minutes on one core. Pinned setups (initial conditions, training windows,
reservoir seeds) are listed next to the fixtures that build them.
"""

import math

import numpy as np
import pytest
from scipy import stats

from mfesn import experiments as ex
from mfesn import io as mio
from mfesn.esn import (
    EsnHyperparameters,
    drive,
    fit_readout,
    init_reservoir,
    predict,
    synchronize,
    train_readout,
)
from mfesn.harness import load_config
from mfesn.harness.cli import main
from mfesn.harness.commands import train_model
from mfesn.mfe import (
    DEFAULT_GEOMETRY,
    build_system,
    integrate,
    kinetic_energy,
    laminar_state,
    quadratic_part,
    random_state_with_energy,
    rhs,
)
from mfesn.rng import stream

from mfe_oracle import dense_rhs

PAPER_RES = (200, 250, 275, 300, 350, 500)
E_IC = 0.3 * DEFAULT_GEOMETRY.energy_scale
LAMINAR_E = 20.7


def detail(record_property, text):
    record_property("detail", text)


# -- deterministic criteria -----------------------------------------------------------

def test_criterion_01_fixed_point(record_property):
    worst = max(np.max(np.abs(rhs(build_system(re), laminar_state()))) for re in PAPER_RES)
    detail(record_property, f"max |rhs(a_lam)| = {worst:.2e} over Re {PAPER_RES}")
    assert worst <= 1e-14


def test_criterion_02_energy_conservation_and_dense_oracle(record_property):
    sys = build_system(300)
    states = np.random.default_rng(7).uniform(-1, 1, (1000, 9))
    cons = max(abs(a @ quadratic_part(sys, a)) / np.linalg.norm(a) ** 3 for a in states)
    rel = max(np.linalg.norm(rhs(sys, a) - dense_rhs(a, 300)) / np.linalg.norm(dense_rhs(a, 300)) for a in states)
    detail(record_property, f"|a.N(a)|/|a|^3 <= {cons:.1e}, sparse vs dense {rel:.1e}")
    assert cons <= 1e-12
    assert rel <= 1e-13


def test_criterion_03_laminar_energy(record_property):
    e = kinetic_energy(laminar_state())
    detail(record_property, f"E(a_lam) = {e:.4f}")
    assert abs(e - 20.72) <= 0.05


def test_criterion_04_rk4_order(record_property):
    sys = build_system(500)
    a0 = random_state_with_energy(np.random.default_rng(11), E_IC)
    a0 = integrate(sys, a0, 1e-3, 200).states[-1]
    assert kinetic_energy(a0) < 15
    ref = integrate(sys, a0, 1e-5, 10, 10).states[-1]
    err = [np.linalg.norm(integrate(sys, a0, dt, 10, 10).states[-1] - ref) for dt in (0.2, 0.1)]
    order = math.log2(err[0] / err[1])
    detail(record_property, f"observed order {order:.3f}")
    assert 3.8 <= order <= 4.2


def test_criterion_11_least_squares_oracle(record_property):
    model = init_reservoir(EsnHyperparameters(n_reservoir=20, sparsity=0.5, seed=4))
    series = random_state_with_energy(np.random.default_rng(0), 1.0) * np.cos(np.arange(51)[:, None] * 0.3 + np.arange(9))
    trained = train_readout(model, series, rng=np.random.default_rng(5)).model
    states = drive(model, series[:-1], rng=np.random.default_rng(5))
    r = np.hstack([states, np.ones((50, 1))])
    normal = np.linalg.inv(r.T @ r) @ r.T @ series[1:]
    rel = np.max(np.abs(trained.w_out.T - normal)) / np.max(np.abs(normal))

    rng = np.random.default_rng(1)
    c, d = rng.normal(size=(9, 20)), rng.normal(size=9)
    targets = states @ c.T + d
    w_out, rss = fit_readout(states, targets)
    recovery = np.max(np.abs(w_out - np.hstack([c, d[:, None]])))
    detail(record_property, f"normal-equation rel diff {rel:.1e}; exact-case residual "
                            f"{rss / np.sum(targets**2):.1e} |A|^2, map error {recovery:.1e}")
    assert rel <= 1e-8
    assert rss <= 1e-18 * np.sum(targets**2)
    assert recovery <= 1e-8


def test_criterion_12_determinism_and_persistence(record_property, tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[flow]\nduration = 800\n[esn]\nn_reservoir = 50\n[training]\nt_start = 50\nt_end = 700\n"
                   "[plam]\nn_energies = 4\nn_pert = 5\nhorizon = 50\nsource = both\n")
    files = {}
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["--config", str(ini), "--out", str(out), "simulate"]) == 0
        assert main(["--config", str(ini), "--out", str(out), "train", str(out / "trajectory.csv")]) == 0
        assert main(["--config", str(ini), "--out", str(out), "plam", "--model", str(out / "model.esn")]) == 0
        files[run] = {n: (out / n).read_bytes() for n in
                      ("trajectory.csv", "model.esn", "plam_truth.csv", "plam_esn.csv")}
    same = all(files["a"][n] == files["b"][n] for n in files["a"])

    model = mio.load_model(tmp_path / "a" / "model.esn")
    roundtrip_model = mio.model_to_bytes(model) == files["a"]["model.esn"]
    traj = mio.read_trajectory(tmp_path / "a" / "trajectory.csv")
    mio.write_trajectory_csv(tmp_path / "again.csv", traj, mio.read_comments(tmp_path / "a" / "trajectory.csv"))
    roundtrip_traj = (tmp_path / "again.csv").read_bytes() == files["a"]["trajectory.csv"]
    detail(record_property, f"identical reruns {same}, model round-trip {roundtrip_model}, "
                            f"trajectory round-trip {roundtrip_traj}")
    assert same and roundtrip_model and roundtrip_traj


# -- truth lifetimes (criteria 5, 6) -------------------------------------------------------

N_IC = 100
T_MAX = 60000.0
LIFETIME_SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def truth_fits():
    out = {}
    for re in (250, 300):
        src = ex.Truth(build_system(re))
        for seed in LIFETIME_SEEDS:
            samples = ex.lifetime_experiment(src, N_IC, E_IC, T_MAX, seed)
            out[re, seed] = (samples, ex.fit_exponential_mle(samples))
    return out


@pytest.mark.slow
def test_criterion_05_truth_lifetimes(record_property, truth_fits):
    taus250 = [truth_fits[250, s][1].tau for s in LIFETIME_SEEDS]
    taus300 = [truth_fits[300, s][1].tau for s in LIFETIME_SEEDS]
    pvals = [ex.tau_ratio_pvalue(truth_fits[300, s][1], truth_fits[250, s][1]) for s in LIFETIME_SEEDS]
    censored = sum(x.censored for (samples, _) in truth_fits.values() for x in samples)
    detail(record_property, "tau(250) = " + ", ".join(f"{t:.0f}" for t in taus250)
           + "; tau(300) = " + ", ".join(f"{t:.0f}" for t in taus300)
           + "; one-sided p = " + ", ".join(f"{p:.1e}" for p in pvals) + f"; censored {censored}")
    assert all(550 <= t <= 1250 for t in taus250)
    assert all(p < 0.05 for p in pvals)


@pytest.mark.slow
def test_criterion_06_truth_ks(record_property, truth_fits):
    ks = [ex.ks_statistic(*truth_fits[250, s]) for s in LIFETIME_SEEDS]
    detail(record_property, "KS at Re=250: " + ", ".join(f"{k:.3f}" for k in ks))
    assert all(k <= 0.15 for k in ks)


# -- Re = 300 network (criteria 7, 8) -------------------------------------------------------

def _config(**overrides):
    cfg = load_config()
    return cfg.with_overrides({tuple(k.split("__")): v for k, v in overrides.items()})


@pytest.fixture(scope="module")
def re300():
    """Truth trajectory and trained network at Re = 300.

    Pinned setup: the 38th draw of ``random_state_with_energy`` from
    ``numpy.random.default_rng(0)`` at E = 0.3 Gx Gz stays turbulent until
    the decay that begins near t = 13650. Training window [500, 13600],
    reservoir seed 0, published hyperparameters.
    """
    sys = build_system(300)
    rng = np.random.default_rng(0)
    for _ in range(38):
        a0 = random_state_with_energy(rng, E_IC)
    traj = integrate(sys, a0, 1e-3, 16000)
    cfg = _config(flow__re=300, training__t_start=500, training__t_end=13600, esn__seed=0)
    model = train_model(cfg, traj, cfg.training_window).model
    return sys, traj, model


@pytest.mark.slow
def test_criterion_07_esn_laminarization_discovery(record_property, re300):
    _, traj, model = re300
    energies, div = ex.autonomous_energies(model, traj, 50, 10_000, seed=0, start_range=(509, 13600))
    kinds = [ex.classify_plateau(energies[:, k], LAMINAR_E) for k in range(50) if div[k] < 0]
    stable = [k for k in kinds if k.stable]
    detail(record_property, f"{len(stable)}/50 runs on a stable plateau "
                            f"(mean E {np.mean([k.tail_mean for k in stable]) if stable else float('nan'):.2f}), "
                            f"{sum(k.laminarized for k in kinds)} laminarized, {int(np.sum(div > 0))} diverged")
    assert len(stable) >= 1


@pytest.mark.slow
def test_noise_free_plateau_is_equilibrium(re300):
    """Without noise a settled prediction stops moving."""
    _, traj, model = re300
    settled = 0
    for k, t in enumerate(range(2000, 13000, 1100)):
        rng = stream(0, "acceptance/noise-free", k)
        r0 = synchronize(model, traj.window(t - 9, t), rng=rng)
        pred = predict(model, r0, traj.states[t], 10_000, rng=rng, noise_enabled=False)
        e = kinetic_energy(pred.states)
        if e[-2000:].min() > 15:
            settled += 1
            assert np.max(np.abs(np.diff(pred.states[-100:], axis=0))) < 1e-8
    assert settled >= 1


@pytest.mark.slow
def test_criterion_08_esn_lifetimes(record_property, re300, truth_fits):
    sys, _, model = re300
    samples = ex.lifetime_experiment(ex.Esn(model, sys), N_IC, E_IC, T_MAX, seed=0)
    fit = ex.fit_exponential_mle(samples)
    ks = ex.ks_statistic(samples, fit)
    truth = truth_fits[300, 0][1]
    ratio = fit.tau / truth.tau
    detail(record_property, f"ESN tau {fit.tau:.0f} (t0 {fit.t0:.0f}, n {fit.n_samples}, "
                            f"censored {sum(s.censored and not s.failed for s in samples)}, "
                            f"failed {sum(s.failed for s in samples)}) vs truth tau {truth.tau:.0f}: "
                            f"ratio {ratio:.2f}, relative error {ex.relative_error(fit.tau, truth.tau):.2f}, KS {ks:.3f}")
    assert ks <= 0.15
    assert 0.5 <= ratio <= 2.0


# -- Re = 500 network (criteria 9, 10) ------------------------------------------------------

# Initial conditions are draws of the library's lifetime protocol (master seed
# 0, "lifetime/ic" stream). Most Re = 500 runs end on a low-energy periodic
# orbit; the ones below laminarize instead. Index 3 stays chaotic for ~29000
# units and provides the training data ([500, 29000], peak E 14.99); the others are the test set.
RE500_TRAIN_IC = 3
RE500_TEST_ICS = (8, 11, 15, 21, 30)
RE500_TRAIN_END = 29000
RE500_HORIZON = 40000.0
N_REFERENCE = 20


def _onset(energies, lifetime, window=1000):
    """Last sample at turbulent energy (E <= 2) before the sustained run above 15."""
    start = int(lifetime - window)
    return int(np.flatnonzero(energies[:start] <= 2.0)[-1])


@pytest.fixture(scope="module")
def re500():
    sys = build_system(500)
    trajs = {}
    for i in (RE500_TRAIN_IC,) + RE500_TEST_ICS:
        traj = integrate(sys, ex._ic(0, i, E_IC, DEFAULT_GEOMETRY), 1e-3, RE500_HORIZON)
        life = ex.detect_laminarization(traj.energies())
        assert life is not None, f"IC {i} no longer laminarizes"
        trajs[i] = (traj, life)
    cfg = _config(flow__re=500, training__t_start=500, training__t_end=RE500_TRAIN_END, esn__seed=0)
    model = train_model(cfg, trajs[RE500_TRAIN_IC][0], cfg.training_window).model
    return sys, trajs, model


@pytest.mark.slow
def test_criterion_09_early_warning(record_property, re500):
    _, trajs, model = re500
    rng = stream(0, "acceptance/reference-states")
    prefixes = []
    for i in RE500_TEST_ICS:
        traj, life = trajs[i]
        quiet = traj.window(500, _onset(traj.energies(), life) - 3000)
        prefixes.extend(ex.sample_prefixes(quiet, N_REFERENCE // len(RE500_TEST_ICS), rng))
    p_ref, _ = ex.reference_probability(model, prefixes, 100, 2000.0, seed=0)

    rising, above, lines = 0, 0, []
    for i in RE500_TEST_ICS:
        traj, life = trajs[i]
        on = _onset(traj.energies(), life)
        times = [on - 160 + 100 * j for j in range(5)]
        scan = ex.early_warning_scan(model, traj, times, 100, 2000.0, seed=0)
        p = [e.p for e in scan]
        rho = stats.spearmanr(times, p).statistic
        rising += bool(rho > 0)
        above += bool(p[-1] > p_ref)
        lines.append(f"IC{i}: " + "/".join(f"{x:.2f}" for x in p))
    detail(record_property, f"P_ref {p_ref:.3f} (N={len(prefixes)}); rising {rising}/5, final > P_ref {above}/5; "
                            + ", ".join(lines))
    assert rising >= 4
    assert above >= 4


@pytest.mark.slow
def test_criterion_10_laminarization_probability(record_property, re500):
    sys, _, model = re500
    truth = ex.laminarization_probability_curve(ex.Truth(sys), seed=0)
    net = ex.laminarization_probability_curve(ex.Esn(model, sys), seed=0)
    big = truth.energies >= 3e-2
    kendall = stats.kendalltau(net.energies, net.p_lam, nan_policy="omit").statistic
    detail(record_property, f"truth P_lam(1e-4) {truth.p_lam[0]:.2f}, max P_lam(E>=3e-2) {truth.p_lam[big].max():.2f}; "
                            f"ESN P_lam(1e-4) {net.p_lam[0]:.2f}, Kendall tau {kendall:.2f}, "
                            f"diverged {int(net.n_diverged.sum())}")
    assert truth.p_lam[0] == 1.0
    assert np.all(truth.p_lam[big] == 0.0)
    assert net.p_lam[0] == 1.0
    assert kendall < 0
