"""Flat ``key = value`` experiment configs with dotted keys."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

EXPERIMENTS = ("conservation", "monotonicity", "local-decay", "pseudoconformal", "linf-decay",
               "dispersive", "completeness", "wave-operator", "identity-suite")


class ConfigError(ValueError):
    pass


def _float(v: str) -> float:
    return float(v)


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _opt_float(v: str):
    return None if v.strip().lower() in ("auto", "none", "") else float(v)


def _center(v: str):
    return "alpha" if v.strip().lower() == "alpha" else float(v)


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "experiment": (str, None),
    "M": (_float, 1.0),
    "lambda": (_float, 1.0),
    "p": (_float, 5.0),
    "grid.n": (int, 2048),
    "grid.r_star_min": (_float, -200.0),
    "grid.r_star_max": (_float, 300.0),
    "dt": (_opt_float, None),
    "t_end": (_float, 50.0),
    "record_every": (int, 10),
    "sigma": (_float, 1.0),
    "beta": (_opt_float, None),
    "R": (_float, 10.0),
    "initial_data": (str, "gaussian"),
    "initial_data.center": (_center, "alpha"),
    "initial_data.width": (_float, 2.0),
    "initial_data.momentum": (_float, 0.0),
    "initial_data.amplitude": (_opt_float, None),
    "initial_data.path": (str, ""),
    "output_dir": (str, "out"),
    "seed": (int, 0),
    "override_domain_guard": (_bool, False),
    "absorber": (_bool, False),
    "fit.t_min": (_opt_float, None),
    "fit.t_max": (_opt_float, None),
    "q": (_float, math.inf),
    "t_samples": (_floats, ()),
    "schedule": (_floats, (5.0, 10.0, 20.0, 40.0)),
    "wave_op.T": (_float, 20.0),
    "wave_op.t_max": (_float, 60.0),
    "wave_op.tol": (_float, 1e-8),
    "wave_op.max_iters": (int, 50),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str = ""

    def __getitem__(self, key):
        return self.values[key]

    def resolved_lines(self) -> list[str]:
        """The fully resolved config, one ``key = value`` per line."""
        out = []
        for key in SCHEMA:
            v = self.values[key]
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif v is None:
                v = "auto"
            out.append(f"{key} = {v}")
        return out


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value
    values = {}
    for key, (conv, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = conv(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key}: {exc}") from None
        else:
            values[key] = default
    cfg = ExperimentConfig(values, source)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, str(path))


def validate(cfg: ExperimentConfig) -> None:
    v = cfg.values
    if v["experiment"] is None:
        raise ConfigError("missing required key 'experiment'")
    if v["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {v['experiment']!r}; expected one of {EXPERIMENTS}")
    if not v["M"] > 0:
        raise ConfigError("M must be positive")
    if not v["lambda"] >= 0:
        raise ConfigError("lambda must be nonnegative (repulsive case)")
    if not v["p"] > 1:
        raise ConfigError("p must exceed 1")
    n = v["grid.n"]
    if n < 8 or n & (n - 1):
        raise ConfigError("grid.n must be a power of two >= 8")
    if not v["grid.r_star_max"] > v["grid.r_star_min"]:
        raise ConfigError("grid.r_star_max must exceed grid.r_star_min")
    if v["dt"] is not None and not v["dt"] > 0:
        raise ConfigError("dt must be positive")
    if not v["t_end"] > 0:
        raise ConfigError("t_end must be positive")
    if v["record_every"] < 1:
        raise ConfigError("record_every must be >= 1")
    if not 0.5 < v["sigma"] < 1.5:
        raise ConfigError("sigma must lie in (1/2, 3/2)")
    if v["beta"] is not None and abs(v["beta"] - (v["sigma"] + 1.0)) > 1e-12:
        raise ConfigError("beta is tied to sigma: beta must equal sigma + 1")
    if not v["R"] > 0:
        raise ConfigError("R must be positive")
    if v["initial_data"] not in ("gaussian", "file"):
        raise ConfigError("initial_data must be 'gaussian' or 'file'")
    if v["initial_data"] == "file" and not v["initial_data.path"]:
        raise ConfigError("initial_data = file needs initial_data.path")
    if not v["initial_data.width"] > 0:
        raise ConfigError("initial_data.width must be positive")
    if v["q"] < 2:
        raise ConfigError("q must be >= 2")
    if any(t < 1 for t in v["t_samples"]):
        raise ConfigError("t_samples must lie in [1, inf)")
    sched = v["schedule"]
    if len(sched) < 2 or any(b <= a for a, b in zip(sched, sched[1:])) or sched[0] <= 0:
        raise ConfigError("schedule must be an increasing list of positive times")
    if not 0 <= v["wave_op.T"] < v["wave_op.t_max"]:
        raise ConfigError("need 0 <= wave_op.T < wave_op.t_max")
