"""One function per CLI subcommand. Each reads a :class:`RunConfig`, writes
its outputs under ``cfg.out`` and returns the paths it wrote."""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .. import experiments as ex
from .. import io as mio
from ..esn import PredictionDiverged, init_reservoir, predict, synchronize, train_readout
from ..mfe import IntegrationError, Trajectory, build_system, integrate, kinetic_energy, laminar_state, random_state_with_energy
from ..rng import stream
from .config import ConfigError, RunConfig

logger = logging.getLogger(__name__)


def _out(cfg: RunConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def _system(cfg: RunConfig):
    return build_system(cfg.re, cfg.geometry)


def _thresholds(cfg: RunConfig) -> dict:
    return {"threshold": cfg.f("detection", "laminar_threshold"), "window": cfg.f("detection", "window")}


def _summary(path: Path, lines) -> Path:
    path.write_text("\n".join(lines) + "\n")
    return path


# -- simulate ------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> list[Path]:
    """Integrate the flow model from a random or laminar state."""
    sys = _system(cfg)
    if cfg.get("flow", "ic") == "laminar":
        a0 = laminar_state()
    else:
        e_ic = cfg.f("flow", "ic_energy_factor") * cfg.geometry.energy_scale
        a0 = random_state_with_energy(stream(cfg.seed, "simulate/ic"), e_ic, cfg.geometry)
    binary = cfg.get("flow", "format") == "binary"
    out = _out(cfg)
    path = out / ("trajectory.bin" if binary else "trajectory.csv")
    path.unlink(missing_ok=True)
    traj = integrate(sys, a0, cfg.f("flow", "dt"), cfg.f("flow", "duration"), cfg.f("flow", "sample_every"))
    if binary:
        mio.write_trajectory_binary(path, traj, cfg.re, cfg.seed)
    else:
        mio.write_trajectory_csv(path, traj, cfg.header(dt=cfg.f("flow", "dt"), ic=cfg.get("flow", "ic")))
    manifest = out / "manifest.json"
    mio.DatasetManifest.for_file(path, traj, cfg.re, cfg.seed).write(manifest)
    return [path, manifest]


# -- train ---------------------------------------------------------------------------

def check_training_window(cfg: RunConfig, traj: Trajectory, window: tuple[float, float]) -> Trajectory:
    """Cut the training window, refusing sustained laminar stretches unless allowed."""
    lo, hi = window
    try:
        part = traj.window(lo, hi)
    except IndexError:
        raise ConfigError(f"training window [{lo:g}, {hi:g}] is outside the dataset "
                          f"[{traj.t0:g}, {traj.times[-1]:g}]") from None
    try:
        hit = ex.detect_laminarization(kinetic_energy(part.states, cfg.geometry), part.dt_sample,
                                       t0=part.t0, **_thresholds(cfg))
    except ex.InsufficientDataError:
        hit = None
    if hit is not None and not cfg.b("training", "allow_laminar"):
        raise ConfigError(f"training window contains laminar flow (detected at t={hit:g}); "
                          "set [training] allow_laminar = true to train on it anyway")
    return part


def train_model(cfg: RunConfig, traj: Trajectory, window: tuple[float, float]):
    part = check_training_window(cfg, traj, window)
    model = init_reservoir(cfg.hyperparameters)
    return train_readout(model, part, rng=stream(cfg.seed, "train/noise"))


def cmd_train(cfg: RunConfig, dataset: Path) -> list[Path]:
    traj = mio.read_trajectory(dataset)
    t = time.perf_counter()
    result = train_model(cfg, traj, cfg.training_window)
    elapsed = time.perf_counter() - t
    out = _out(cfg)
    model_path = out / "model.esn"
    mio.save_model(model_path, result.model)
    lo, hi = cfg.training_window
    report = _summary(out / "train_report.txt", [
        f"config_hash={cfg.hash}",
        f"dataset={dataset}",
        f"window={lo:g}:{hi:g}",
        f"samples={int(round((hi - lo) / traj.dt_sample)) + 1}",
        f"residual_sum_of_squares={result.rss:.17g}",
        f"seconds={elapsed:.3f}",
    ])
    return [model_path, report]


# -- predict -------------------------------------------------------------------------

def cmd_predict(cfg: RunConfig, model_path: Path, dataset: Path, t_start: Optional[float] = None,
                horizon: Optional[int] = None, runs: Optional[int] = None,
                noise_off: bool = False) -> list[Path]:
    model = mio.load_model(model_path)
    traj = mio.read_trajectory(dataset)
    t_start = cfg.f("predict", "t_start") if t_start is None else t_start
    horizon = cfg.i("predict", "horizon") if horizon is None else horizon
    runs = cfg.i("predict", "runs") if runs is None else runs
    noise_on = cfg.b("esn", "noise_in_prediction") and not noise_off
    n_sync = model.hp.n_sync
    try:
        recent = traj.window(t_start - (n_sync - 1) * traj.dt_sample, t_start)
    except IndexError:
        raise ConfigError(f"dataset does not cover the {n_sync} states ending at t={t_start:g}") from None
    out = _out(cfg)
    paths = []
    for k in range(runs):
        rng = stream(cfg.seed, "predict", k)
        r0 = synchronize(model, recent, rng=rng)
        pred = predict(model, r0, recent.states[-1], horizon, rng=rng, noise_enabled=noise_on, t0=t_start)
        name = "prediction.csv" if runs == 1 else f"prediction_{k:03d}.csv"
        energies = kinetic_energy(pred.states, cfg.geometry)
        rows = [[t, e, *a] for t, e, a in zip(pred.times, energies, pred.states)]
        mio.write_table(out / name, ["t", "E"] + [f"a{j + 1}" for j in range(9)], rows,
                        cfg.header(run=k, t_start=t_start, noise=int(noise_on)))
        paths.append(out / name)
    return paths


# -- lifetimes -----------------------------------------------------------------------

def _sources(cfg: RunConfig, section: str, model_path: Optional[Path]):
    sys = _system(cfg)
    which = cfg.get(section, "source")
    out = []
    if which in ("truth", "both"):
        out.append(ex.Truth(sys, cfg.f("flow", "dt"), cfg.f("flow", "sample_every"), cfg.threads))
    if which in ("esn", "both"):
        if model_path is None:
            raise ConfigError(f"[{section}] source={which} needs --model")
        out.append(ex.Esn(mio.load_model(model_path), sys, cfg.f("flow", "dt"),
                          cfg.b("esn", "noise_in_prediction"), cfg.i("earlywarn", "batch")))
    return out


def write_lifetimes(path: Path, samples, header: dict) -> None:
    rows = [[s.index, "" if s.lifetime is None else s.lifetime, int(s.censored), int(s.failed), s.t_max]
            for s in samples]
    mio.write_table(path, ["index", "lifetime", "censored", "failed", "t_max"], rows, header)


def read_lifetimes(path: Path, source: str = "file") -> list[ex.LifetimeSample]:
    cols, rows = mio.read_table(path)
    if cols[:2] != ["index", "lifetime"]:
        raise ConfigError(f"{path} is not a lifetime table")
    meta = mio.read_comments(path)
    seed = int(meta.get("seed", 0))
    out = []
    for r in rows:
        rec = dict(zip(cols, r))
        life = float(rec["lifetime"]) if rec["lifetime"] else None
        out.append(ex.LifetimeSample(life, float(rec.get("t_max", "nan")), meta.get("source", source),
                                     seed, int(rec["index"]), rec.get("failed", "0") == "1"))
    return out


def _fit_rows(re: float, fits: dict, reference: Optional[str]) -> list[list]:
    rows = []
    for name, fit in fits.items():
        rel = ""
        if reference is not None and name != reference and reference in fits:
            rel = ex.relative_error(fit.tau, fits[reference].tau)
        rows.append([re, fit.t0, fit.tau, fit.n_samples, rel])
    return rows


FIT_COLUMNS = ["re", "t0", "tau", "n", "relative_error"]


def cmd_lifetime(cfg: RunConfig, model_path: Optional[Path] = None) -> list[Path]:
    out = _out(cfg)
    n_ic, t_max = cfg.i("lifetime", "n_ic"), cfg.f("lifetime", "t_max")
    e_ic = cfg.f("flow", "ic_energy_factor") * cfg.geometry.energy_scale
    paths, fits, lines = [], {}, [f"config_hash={cfg.hash}", f"re={cfg.re:g}"]
    for src in _sources(cfg, "lifetime", model_path):
        samples = ex.lifetime_experiment(src, n_ic, e_ic, t_max, cfg.seed, **_thresholds(cfg))
        header = cfg.header(source=src.name, n_ic=n_ic, t_max=t_max)
        write_lifetimes(out / f"lifetimes_{src.name}.csv", samples, header)
        curve = ex.survival_curve(samples)
        t, s = curve.points()
        mio.write_table(out / f"survival_{src.name}.csv", ["t", "S"], zip(t, s), header)
        fit = ex.fit_exponential_mle(samples)
        fits[src.name] = fit
        n_failed = sum(x.failed for x in samples)
        lines += [f"[{src.name}] uncensored={fit.n_samples} censored={curve.n_censored} failed={n_failed}",
                  f"[{src.name}] t0={fit.t0:.6g} tau={fit.tau:.6g} ks={ex.ks_statistic(samples, fit):.4f}"]
        paths += [out / f"lifetimes_{src.name}.csv", out / f"survival_{src.name}.csv"]
    if "truth" in fits and "esn" in fits:
        lines.append(f"relative_error_tau={ex.relative_error(fits['esn'].tau, fits['truth'].tau):.4f}")
    mio.write_table(out / "fits.csv", FIT_COLUMNS, _fit_rows(cfg.re, fits, "truth"), cfg.header())
    paths += [out / "fits.csv", _summary(out / "lifetime_summary.txt", lines)]
    return paths


def cmd_fit(cfg: RunConfig, tables: list[Path], reference: Optional[Path] = None) -> list[Path]:
    """MLE fits of existing lifetime tables, optionally against a reference table."""
    out = _out(cfg)
    fits = {}
    if reference is not None:
        fits["reference"] = ex.fit_exponential_mle(read_lifetimes(reference))
    for path in tables:
        fits[str(path)] = ex.fit_exponential_mle(read_lifetimes(path))
    rows = _fit_rows(cfg.re, fits, "reference" if reference is not None else None)
    mio.write_table(out / "fits.csv", FIT_COLUMNS, rows, cfg.header())
    return [out / "fits.csv"]


# -- early warning -------------------------------------------------------------------

SCAN_COLUMNS = ["t_j", "p", "n_laminarized", "n_ensemble", "n_diverged"]


def cmd_earlywarn(cfg: RunConfig, model_path: Path, dataset: Path,
                  reference_dataset: Optional[Path] = None) -> list[Path]:
    model = mio.load_model(model_path)
    if cfg.b("esn", "noise_in_prediction") is False:
        raise ConfigError("ensemble forecasts need reservoir noise")
    traj = mio.read_trajectory(dataset)
    n_ens, horizon, batch = cfg.i("earlywarn", "n_ensemble"), cfg.f("earlywarn", "horizon"), cfg.i("earlywarn", "batch")
    out = _out(cfg)
    scan = ex.early_warning_scan(model, traj, cfg.scan_times, n_ens, horizon, cfg.seed, batch)
    header = cfg.header(n_ensemble=n_ens, horizon=horizon)
    mio.write_table(out / "scan.csv", SCAN_COLUMNS,
                    [[e.t_j, e.p, e.n_laminarized, e.n_ensemble, e.n_diverged] for e in scan], header)
    paths = [out / "scan.csv"]
    lines = [f"config_hash={cfg.hash}"] + [f"t_j={e.t_j:g} p={e.p:.3f}" for e in scan]

    if reference_dataset is not None:
        ref = mio.read_trajectory(reference_dataset)
        lo = cfg.get("earlywarn", "reference_start")
        hi = cfg.get("earlywarn", "reference_end")
        if lo or hi:
            ref = ref.window(float(lo) if lo else ref.t0, float(hi) if hi else ref.times[-1])
        prefixes = ex.sample_prefixes(ref, cfg.i("earlywarn", "n_reference"),
                                      stream(cfg.seed, "earlywarn/reference-states"), model.hp.n_sync)
        p_ref, ests = ex.reference_probability(model, prefixes, n_ens, horizon, cfg.seed, batch)
        mio.write_table(out / "reference.csv", SCAN_COLUMNS,
                        [[e.t_j, e.p, e.n_laminarized, e.n_ensemble, e.n_diverged] for e in ests], header)
        paths.append(out / "reference.csv")
        lines.append(f"p_ref={p_ref:.4f}")
    paths.append(_summary(out / "earlywarn_summary.txt", lines))
    return paths


# -- laminarization probability --------------------------------------------------------

def cmd_plam(cfg: RunConfig, model_path: Optional[Path] = None) -> list[Path]:
    out = _out(cfg)
    grid = ex.default_energy_grid(cfg.i("plam", "n_energies"), cfg.f("plam", "e_min"), cfg.f("plam", "e_max"))
    paths = []
    for src in _sources(cfg, "plam", model_path):
        curve = ex.laminarization_probability_curve(
            src, grid, cfg.i("plam", "n_pert"), cfg.f("plam", "horizon"),
            cfg.f("detection", "turbulence_threshold"), cfg.seed)
        rows = [[e, p, curve.n_pert, d] for e, p, d in zip(curve.energies, curve.p_lam, curve.n_diverged)]
        path = out / f"plam_{src.name}.csv"
        mio.write_table(path, ["E", "p_lam", "n_pert", "n_diverged"], rows,
                        cfg.header(source=src.name, horizon=cfg.f("plam", "horizon")))
        paths.append(path)
    return paths


# -- training-coverage ablation ----------------------------------------------------------

ABLATE_COLUMNS = ["t_start", "t_end", "n_runs", "n_laminarized", "n_stable", "n_exited", "n_diverged"]


def cmd_ablate(cfg: RunConfig, dataset: Path) -> list[Path]:
    """Train on each configured window and count laminar behavior of autonomous runs.

    Windows may contain laminar flow here; the turbulence-only check is
    bypassed because probing that coverage is the point.
    """
    traj = mio.read_trajectory(dataset)
    relaxed = cfg.with_overrides({("training", "allow_laminar"): "true"})
    n_runs, steps, tail = cfg.i("ablate", "n_runs"), cfg.i("ablate", "steps"), cfg.i("ablate", "tail")
    e_lam = cfg.geometry.energy_scale
    rows = []
    for lo, hi in cfg.ablation_windows:
        model = train_model(relaxed, traj, (lo, hi)).model
        energies, div = ex.autonomous_energies(model, traj, n_runs, steps, cfg.seed, (lo, hi),
                                               cfg.b("esn", "noise_in_prediction"),
                                               cfg.i("earlywarn", "batch"), cfg.geometry)
        kinds = [ex.classify_plateau(energies[:, k], e_lam, tail, **_thresholds(cfg))
                 for k in range(n_runs) if div[k] < 0]
        rows.append([lo, hi, n_runs, sum(k.laminarized for k in kinds), sum(k.stable for k in kinds),
                     sum(k.exited for k in kinds), int(np.sum(div > 0))])
        logger.info("window %g:%g -> %s", lo, hi, rows[-1][3:])
    out = _out(cfg)
    mio.write_table(out / "ablate.csv", ABLATE_COLUMNS, rows, cfg.header(steps=steps, tail=tail))
    return [out / "ablate.csv"]


NUMERICAL_ERRORS = (IntegrationError, PredictionDiverged, FloatingPointError)
