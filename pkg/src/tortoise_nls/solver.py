"""Strang split-step integration of i psi_t = (D^2 + V + lam r^(1-p) |psi|^(p-1)) psi.

The kinetic substeps are exact in Fourier space and the potential/nonlinear
substep is an exact pointwise phase (|psi| does not change under it), so every
step is unitary and a step with -dt inverts a step with dt.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Literal

import numpy as np
import scipy.fft as sfft

from .geometry import Grid
from .state import ModelParams, WaveFunction

Mode = Literal["nonlinear", "linear_with_V", "free"]
MODES = ("nonlinear", "linear_with_V", "free")

DENSE_LIMIT = 1024


class NumericalGuardError(RuntimeError):
    """A run produced non-finite values or violated a domain guard."""


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("TORTOISE_NLS_THREADS", "1")))
    except ValueError:
        return 1


def default_dt(grid: Grid, phase: float = math.pi / 4) -> float:
    """Time step putting a kinetic phase of ``phase`` on the Nyquist mode."""
    return phase / grid.k_max**2


@dataclass(frozen=True)
class Absorber:
    """Smooth complex absorbing layer at both ends of the periodic box.

    Off by default; when active it deliberately removes L^2 mass.
    """

    strength: float = 0.05
    width: float = 20.0

    def profile(self, grid: Grid) -> np.ndarray:
        x = grid.r_star
        lo = np.clip((grid.r_star_min + self.width - x) / self.width, 0.0, 1.0)
        hi = np.clip((x - (grid.r_star_max - self.width)) / self.width, 0.0, 1.0)
        return self.strength * (np.sin(0.5 * np.pi * lo) ** 2 + np.sin(0.5 * np.pi * hi) ** 2)


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float
    t_end: float
    mode: Mode = "nonlinear"
    record_every: int = 1
    absorber: Absorber | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not (self.dt != 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be finite and nonzero")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be a positive integer")


class Propagator:
    """Cached factors for repeated Strang steps on one grid."""

    def __init__(self, grid: Grid, model: ModelParams, dt: float, mode: Mode = "nonlinear",
                 absorber: Absorber | None = None):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.grid, self.model, self.dt, self.mode = grid, model, float(dt), mode
        k2 = grid.k**2
        if abs(self.dt) * grid.k_max**2 > math.pi:
            warnings.warn(
                f"kinetic phase per step at Nyquist is {abs(self.dt) * grid.k_max**2:.3g} > pi",
                RuntimeWarning, stacklevel=3)
        self.half = np.exp(-0.5j * self.dt * k2)
        self.full = self.half * self.half
        self.lam = model.lam if mode == "nonlinear" else 0.0
        self.V = np.zeros(grid.n) if mode == "free" else np.asarray(grid.V)
        self.weight = self.lam * grid.r ** (1.0 - model.p) if self.lam else None
        self.damping = None
        if absorber is not None:
            self.damping = np.exp(-absorber.profile(grid) * abs(self.dt))
        self.static_phase = np.exp(-1j * self.dt * self.V)
        self._pexp = 0.5 * (model.p - 1.0)
        self._w = _workers()

    def _phase(self, v: np.ndarray) -> np.ndarray:
        if self.weight is None:
            out = v * self.static_phase
        else:
            a2 = v.real**2 + v.imag**2
            out = v * np.exp(-1j * self.dt * (self.V + self.weight * a2**self._pexp))
        if self.damping is not None:
            out *= self.damping
        return out

    def advance(self, values: np.ndarray, steps: int) -> np.ndarray:
        """Apply ``steps`` Strang steps with interior half-kinetic factors fused."""
        if steps <= 0:
            return np.array(values, dtype=complex)
        w = self._w
        if self.mode == "free" and self.damping is None:
            return sfft.ifft(sfft.fft(values, workers=w) * np.exp(-1j * steps * self.dt * self.grid.k**2),
                             workers=w)
        f = sfft.fft(values, workers=w) * self.half
        for j in range(steps):
            v = self._phase(sfft.ifft(f, workers=w))
            f = sfft.fft(v, workers=w)
            f *= self.full if j < steps - 1 else self.half
        return sfft.ifft(f, workers=w)

    def step_values(self, values: np.ndarray) -> np.ndarray:
        """One unfused step: half kinetic, full phase, half kinetic."""
        w = self._w
        v = sfft.ifft(sfft.fft(values, workers=w) * self.half, workers=w)
        v = self._phase(v)
        return sfft.ifft(sfft.fft(v, workers=w) * self.half, workers=w)


def step(psi: WaveFunction, model: ModelParams, cfg: EvolutionConfig) -> WaveFunction:
    prop = Propagator(psi.grid, model, cfg.dt, cfg.mode, cfg.absorber)
    return psi.copy(prop.step_values(psi.values), psi.time + cfg.dt)


def _step_count(t0: float, t_end: float, dt: float) -> tuple[int, float]:
    span = t_end - t0
    if span == 0:
        return 0, dt
    if span * dt < 0:
        raise ValueError(f"dt={dt} points away from t_end={t_end} (start {t0})")
    n = max(1, int(round(span / dt)))
    return n, span / n


Observer = Callable[[WaveFunction], object]


def evolve(psi0: WaveFunction, model: ModelParams, cfg: EvolutionConfig,
           observers: Iterable[Observer] = ()) -> tuple[WaveFunction, list]:
    """Integrate from psi0.time to cfg.t_end.

    The step is adjusted to divide the interval exactly.  Observers are called
    on the initial state, every ``record_every`` steps, and on the final state;
    any non-None return value is collected.  Records exposing ``is_finite()``
    are checked and the run aborts on the first non-finite one.
    """
    observers = list(observers)
    n, dt = _step_count(psi0.time, cfg.t_end, cfg.dt)
    prop = Propagator(psi0.grid, model, dt, cfg.mode, cfg.absorber)
    records: list = []

    def notify(state: WaveFunction):
        if not state.is_finite():
            raise NumericalGuardError(f"non-finite wave function at t={state.time:g}")
        for obs in observers:
            rec = obs(state)
            if rec is None:
                continue
            check = getattr(rec, "is_finite", None)
            if check is not None and not check():
                raise NumericalGuardError(f"non-finite observable at t={state.time:g}")
            records.append(rec)

    vals = np.array(psi0.values, dtype=complex)
    notify(psi0.copy(vals))
    every = int(cfg.record_every)
    done = 0
    while done < n:
        chunk = min(every - done % every, n - done)
        vals = prop.advance(vals, chunk)
        done += chunk
        t = cfg.t_end if done == n else psi0.time + done * dt
        notify(WaveFunction(psi0.grid, vals, t))
    return WaveFunction(psi0.grid, vals, cfg.t_end if n else psi0.time), records


def propagate(psi: WaveFunction, model: ModelParams, duration: float, dt: float,
              mode: Mode = "nonlinear") -> WaveFunction:
    """Shortcut: evolve for ``duration`` (may be negative) with step |dt|."""
    if duration == 0:
        return psi.copy()
    step_dt = math.copysign(abs(dt), duration)
    out, _ = evolve(psi, model, EvolutionConfig(step_dt, psi.time + duration, mode))
    return out


def dense_generator(grid: Grid, mode: Mode = "linear_with_V") -> np.ndarray:
    """Dense matrix of D^2 (+ V) built from the spectral symbol k^2."""
    if mode not in ("linear_with_V", "free"):
        raise ValueError("the dense generator exists only for the linear modes")
    if grid.n > DENSE_LIMIT:
        raise ValueError(f"dense path limited to n <= {DENSE_LIMIT}, got {grid.n}")
    eye = np.eye(grid.n)
    H = np.fft.ifft(grid.k[:, None] ** 2 * np.fft.fft(eye, axis=0), axis=0)
    if mode == "linear_with_V":
        H = H + np.diag(grid.V)
    return 0.5 * (H + H.conj().T)


def propagator_oracle(psi0: WaveFunction, t: float, mode: Mode = "linear_with_V") -> WaveFunction:
    """exp(-i t H) psi0 by diagonalising the dense discrete generator."""
    H = dense_generator(psi0.grid, mode)
    evals, evecs = np.linalg.eigh(H)
    coeff = evecs.conj().T @ psi0.values
    out = evecs @ (np.exp(-1j * t * evals) * coeff)
    return psi0.copy(out, psi0.time + t)
