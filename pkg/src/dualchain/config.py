"""Experiment configuration files.

INI-style ``key = value`` lines grouped in sections.  Unknown sections or
keys are rejected with the offending line number; relative paths resolve
against the directory holding the config file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _str(text):
    return str(text).strip()


SCHEMA = {
    "schedule": {"T_train": (int, 1000), "beta_start": (float, 1e-4), "beta_end": (float, 0.02)},
    "plan": {"n_steps": (_ints, (10, 20, 50)), "omegas": (_floats, (1.0, 2.0, 3.0))},
    "predictor": {
        "kind": (_str, "gmm"),
        "value": (float, 0.0),
        "variance": (float, 0.05),
        "gain": (float, 20.0),
        "hidden": (int, 64),
        "epochs": (int, 50),
        "lr": (float, 1e-3),
        "batch_size": (int, 32),
        "p_uncond": (float, 0.1),
        "checkpoint": (_str, ""),
    },
    "dcs": {
        "omega": (float, 7.5),
        "eta": (_floats, (0.2, 0.4, 0.6, 0.8)),
        "recon_eta": (float, 0.8),
        "traj_eta": (float, 0.8),
        "t_end": (int, 0),
        "m": (float, 0.5),
        "n": (float, 0.5),
        "m_strong": (float, 0.8),
        "n_strong": (float, 0.2),
        "r": (int, 3),
        "ji_condition": (_str, "source"),
    },
    "edit": {"types": (lambda s: tuple(x.strip() for x in s.split(",") if x.strip()), ("T1", "T2", "T3")),
             "amount": (float, 0.5), "style": (float, 0.25), "items": (int, 4)},
    "data": {"kind": (_str, "shapes-32"), "seed": (int, 0), "count": (int, 20)},
    "out": {"directory": (_str, "out")},
    "run": {"jobs": (int, 1)},
}

CHOICES = {
    ("predictor", "kind"): ("constant", "gmm", "mlp"),
    ("data", "kind"): ("gmm-samples", "shapes-32"),
    ("dcs", "ji_condition"): ("source", "target"),
}

_KEY_CASE = {s: {k.lower(): k for k in keys} for s, keys in SCHEMA.items()}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)
    source: str = "<defaults>"

    def __getitem__(self, section) -> dict:
        return self.values[section]

    def path(self, section, key) -> Path | None:
        text = self.values[section][key]
        if not text:
            return None
        p = Path(text)
        return p if p.is_absolute() else (self.base_dir / p).resolve()


def defaults() -> ExperimentConfig:
    return ExperimentConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def _line_of(lines, section, key=None) -> int:
    current = None
    for i, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if key is None and current == section:
                return i
        elif key is not None and current == section:
            name = stripped.split("=", 1)[0].strip().lower()
            if name == key.lower():
                return i
    return 0


def parse_config(text: str, base_dir=None, source="<string>") -> ExperimentConfig:
    lines = text.splitlines()
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = defaults()
    cfg.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    cfg.source = source
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{_line_of(lines, section)}: unknown section [{section}]")
        for key_lower, raw in parser.items(section):
            key = _KEY_CASE[section].get(key_lower)
            line = _line_of(lines, section, key_lower)
            if key is None:
                raise ConfigError(f"{source}:{line}: unknown key '{key_lower}' in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{line}: bad value for {section}.{key}: {raw!r}") from exc
            allowed = CHOICES.get((section, key))
            if allowed is not None and value not in allowed:
                raise ConfigError(f"{source}:{line}: {section}.{key} must be one of {allowed}, got {value!r}")
            cfg.values[section][key] = value
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.resolve().parent, source=str(path))
