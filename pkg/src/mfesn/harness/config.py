"""Run configuration: a sectioned ``key = value`` file read with configparser.

Every constant of the published setup has a named key; anything missing from
a user file falls back to :data:`DEFAULTS`. ``RunConfig.hash`` fingerprints
the resolved values and goes into every output header.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..esn import EsnHyperparameters
from ..mfe import DomainGeometry


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict[str, str]] = {
    "run": {
        "seed": "0",
        "threads": "1",
        "out": "out",
    },
    "flow": {
        "re": "300",
        "lx": repr(1.75 * math.pi),
        # 1.2 pi, not 1.2: only this spanwise period gives laminar energy 20.7
        "lz": repr(1.2 * math.pi),
        "dt": "0.001",
        "sample_every": "1.0",
        "duration": "20000",
        "ic": "random",
        "ic_energy_factor": "0.3",
        "format": "csv",
    },
    "esn": {
        "n_reservoir": "1500",
        "spectral_radius": "0.5",
        "sparsity": "0.9",
        "noise": "0.001",
        "input_scale": "1.0",
        "bias_scale": "1.0",
        "ridge": "0.0",
        "n_sync": "10",
        "seed": "0",
        "noise_in_prediction": "true",
    },
    "training": {
        "t_start": "500",
        "t_end": "13600",
        "allow_laminar": "false",
    },
    "detection": {
        "laminar_threshold": "15",
        "window": "1000",
        "turbulence_threshold": "10",
    },
    "lifetime": {
        "n_ic": "200",
        "t_max": "60000",
        "source": "truth",
    },
    "earlywarn": {
        "times": "13840, 13940, 14040, 14140, 14240",
        "n_ensemble": "100",
        "horizon": "2000",
        "batch": "100",
        "n_reference": "100",
        "reference_start": "",
        "reference_end": "",
    },
    "plam": {
        "n_energies": "20",
        "e_min": "1e-4",
        "e_max": "1.0",
        "n_pert": "50",
        "horizon": "300",
        "source": "truth",
    },
    "ablate": {
        "windows": "500:4000, 500:9000, 500:13600",
        "n_runs": "50",
        "steps": "10000",
        "tail": "2000",
    },
    "predict": {
        "t_start": "13000",
        "horizon": "10000",
        "runs": "1",
    },
}


_NOT_HASHED = ("out", "threads")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration; build with :func:`load_config`."""

    values: dict

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def f(self, section: str, key: str) -> float:
        try:
            return float(self.values[section][key])
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number") from None

    def i(self, section: str, key: str) -> int:
        v = self.f(section, key)
        if v != int(v):
            raise ConfigError(f"[{section}] {key} must be an integer")
        return int(v)

    def b(self, section: str, key: str) -> bool:
        v = self.values[section][key].strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean")

    @property
    def seed(self) -> int:
        return self.i("run", "seed")

    @property
    def threads(self) -> int:
        return self.i("run", "threads")

    @property
    def out(self) -> Path:
        return Path(self.get("run", "out"))

    @property
    def re(self) -> float:
        return self.f("flow", "re")

    @property
    def geometry(self) -> DomainGeometry:
        return DomainGeometry(self.f("flow", "lx"), self.f("flow", "lz"))

    @property
    def hyperparameters(self) -> EsnHyperparameters:
        return EsnHyperparameters(
            n_reservoir=self.i("esn", "n_reservoir"),
            spectral_radius=self.f("esn", "spectral_radius"),
            sparsity=self.f("esn", "sparsity"),
            noise=self.f("esn", "noise"),
            input_scale=self.f("esn", "input_scale"),
            bias_scale=self.f("esn", "bias_scale"),
            dt_model=self.f("flow", "sample_every"),
            seed=self.i("esn", "seed"),
            ridge=self.f("esn", "ridge"),
            n_sync=self.i("esn", "n_sync"),
        )

    @property
    def training_window(self) -> tuple[float, float]:
        return self.f("training", "t_start"), self.f("training", "t_end")

    @property
    def scan_times(self) -> list[float]:
        return _floats(self.get("earlywarn", "times"))

    @property
    def ablation_windows(self) -> list[tuple[float, float]]:
        out = []
        for item in self.get("ablate", "windows").split(","):
            lo, sep, hi = item.strip().partition(":")
            if not sep:
                raise ConfigError(f"ablation window {item!r} is not 'start:end'")
            out.append((float(lo), float(hi)))
        return out

    def text(self) -> str:
        """Canonical rendering: sorted sections and keys, one ``key = value`` per line."""
        lines = []
        for section in sorted(self.values):
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in sorted(self.values[section].items())]
            lines.append("")
        return "\n".join(lines)

    @property
    def hash(self) -> str:
        """Fingerprint of everything that can change results; the output
        directory and thread count are left out."""
        values = {s: dict(kv) for s, kv in self.values.items()}
        for key in _NOT_HASHED:
            values["run"].pop(key, None)
        return hashlib.sha256(RunConfig(values).text().encode()).hexdigest()[:16]

    def header(self, **extra) -> dict:
        """Comment header for output files."""
        return {"config_hash": self.hash, "seed": self.seed, "re": self.re, **extra}

    def with_overrides(self, overrides: dict[tuple[str, str], object]) -> RunConfig:
        values = {s: dict(kv) for s, kv in self.values.items()}
        for (section, key), v in overrides.items():
            if section not in values or key not in values[section]:
                raise ConfigError(f"unknown setting [{section}] {key}")
            values[section][key] = str(v)
        return _validated(values)


def _validated(values: dict) -> RunConfig:
    cfg = RunConfig(values)
    if cfg.re <= 0:
        raise ConfigError("[flow] re must be positive")
    if cfg.f("flow", "dt") <= 0 or cfg.f("flow", "sample_every") <= 0 or cfg.f("flow", "duration") <= 0:
        raise ConfigError("[flow] dt, sample_every and duration must be positive")
    if cfg.get("flow", "ic") not in ("random", "laminar"):
        raise ConfigError("[flow] ic must be 'random' or 'laminar'")
    if cfg.get("flow", "format") not in ("csv", "binary"):
        raise ConfigError("[flow] format must be 'csv' or 'binary'")
    if cfg.seed < 0 or cfg.threads < 1:
        raise ConfigError("[run] seed must be nonnegative and threads positive")
    for section, key in [("lifetime", "n_ic"), ("earlywarn", "n_ensemble"), ("earlywarn", "batch"),
                         ("plam", "n_pert"), ("plam", "n_energies"), ("ablate", "n_runs"), ("predict", "runs")]:
        if cfg.i(section, key) < 1:
            raise ConfigError(f"[{section}] {key} must be positive")
    for section, key in [("detection", "laminar_threshold"), ("detection", "window"),
                         ("detection", "turbulence_threshold"), ("lifetime", "t_max"),
                         ("earlywarn", "horizon"), ("plam", "horizon"), ("plam", "e_min")]:
        if cfg.f(section, key) <= 0:
            raise ConfigError(f"[{section}] {key} must be positive")
    lo, hi = cfg.training_window
    if not 0 <= lo < hi:
        raise ConfigError("[training] needs 0 <= t_start < t_end")
    for source_key in (("lifetime", "source"), ("plam", "source")):
        if cfg.get(*source_key) not in ("truth", "esn", "both"):
            raise ConfigError(f"[{source_key[0]}] source must be truth, esn or both")
    try:
        cfg.geometry, cfg.hyperparameters, cfg.scan_times, cfg.ablation_windows
        cfg.b("training", "allow_laminar"), cfg.b("esn", "noise_in_prediction")
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return cfg


def load_config(path: Optional[str | Path] = None) -> RunConfig:
    """Defaults overlaid with the file at ``path`` (if given). Unknown keys are errors."""
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        for section in parser.sections():
            if section not in values:
                raise ConfigError(f"unknown config section [{section}]")
            for key, v in parser.items(section):
                if key not in values[section]:
                    raise ConfigError(f"unknown setting [{section}] {key}")
                values[section][key] = v
    return _validated(values)


def default_config_text() -> str:
    return RunConfig({s: dict(kv) for s, kv in DEFAULTS.items()}).text()
