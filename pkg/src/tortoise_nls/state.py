"""Wave functions on the tortoise grid, their norms and energy.

The reduced field psi = r u lives in L^2(dr_star); the radial field u lives in
L^2(r^2 dr_star).  The 4 pi from the sphere integration is dropped throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .geometry import Grid, SchwarzschildParams


@dataclass(frozen=True)
class ModelParams:
    """Repulsive power nonlinearity lam * r^(1-p) |psi|^(p-1)."""

    lam: float = 1.0
    p: float = 5.0

    def __post_init__(self):
        if not self.lam >= 0 or not math.isfinite(self.lam):
            raise ValueError(f"lam must be nonnegative and finite, got {self.lam!r}")
        if not self.p > 1 or not math.isfinite(self.p):
            raise ValueError(f"p must exceed 1, got {self.p!r}")

    @property
    def pseudoconformal_valid(self) -> bool:
        return self.p > 3

    @property
    def wave_op_valid(self) -> bool:
        return self.p > (3 + math.sqrt(17)) / 2

    @property
    def completeness_valid(self) -> bool:
        return self.p > 4

    def linear(self) -> "ModelParams":
        return ModelParams(0.0, self.p)


@dataclass(eq=False)
class WaveFunction:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n,):
            raise ValueError(
                f"expected {self.grid.n} samples, got shape {self.values.shape}")

    def copy(self, values=None, time=None) -> "WaveFunction":
        return WaveFunction(
            self.grid,
            np.array(self.values if values is None else values, dtype=complex),
            self.time if time is None else time,
        )

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


class EnergyParts(NamedTuple):
    kinetic: float
    potential: float
    nonlinear: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential + self.nonlinear

    @property
    def quadratic(self) -> float:
        """The linear-flow energy <psi, (D^2 + V) psi>."""
        return self.kinetic + self.potential


def inner(a: WaveFunction, b: WaveFunction) -> complex:
    return complex(np.vdot(a.values, b.values) * a.grid.spacing)


def l2_norm(psi: WaveFunction) -> float:
    h = psi.grid.spacing
    return math.sqrt(float(np.sum(np.abs(psi.values) ** 2)) * h)


def lq_norm(psi: WaveFunction | np.ndarray, q: float, spacing: float | None = None) -> float:
    """Discrete L^q norm; q = inf gives the max modulus."""
    if isinstance(psi, WaveFunction):
        vals, h = psi.values, psi.grid.spacing
    else:
        vals, h = psi, spacing
    a = np.abs(vals)
    if math.isinf(q):
        return float(a.max()) if a.size else 0.0
    return float((np.sum(a**q) * h) ** (1.0 / q))


def kinetic_energy(psi: WaveFunction) -> float:
    """||d psi / dr_star||^2 via Parseval on the full kinetic symbol."""
    g = psi.grid
    psi_hat = np.fft.fft(psi.values)
    return float(np.sum(g.k**2 * np.abs(psi_hat) ** 2) * g.spacing / g.n)


def nonlinear_density(psi: WaveFunction, model: ModelParams) -> np.ndarray:
    """r^(1-p) |psi|^(p+1) pointwise."""
    r = psi.grid.r
    return r ** (1.0 - model.p) * np.abs(psi.values) ** (model.p + 1)


def energy(psi: WaveFunction, model: ModelParams) -> EnergyParts:
    g = psi.grid
    dens = np.abs(psi.values) ** 2
    pot = float(np.sum(g.V * dens) * g.spacing)
    nl = 2.0 * model.lam / (model.p + 1) * float(np.sum(nonlinear_density(psi, model)) * g.spacing)
    return EnergyParts(kinetic_energy(psi), pot, nl)


def to_radial(psi: WaveFunction) -> np.ndarray:
    """u = psi / r at the grid nodes."""
    return psi.values / psi.grid.r


def from_radial(u: np.ndarray, grid: Grid, time: float = 0.0) -> WaveFunction:
    return WaveFunction(grid, np.asarray(u) * grid.r, time)


def radial_norm(u: np.ndarray, grid: Grid) -> float:
    """Norm of u in L^2(r^2 dr_star)."""
    return math.sqrt(float(np.sum(np.abs(u) ** 2 * grid.r**2)) * grid.spacing)


def gaussian(grid: Grid, center: float = 0.0, width: float = 1.0, momentum: float = 0.0,
             amplitude: float | None = None, time: float = 0.0) -> WaveFunction:
    """amplitude * exp(-(x-c)^2 / (2 w^2) + i k (x-c)); unit L^2 norm if amplitude is None."""
    x = grid.r_star - center
    vals = np.exp(-0.5 * (x / width) ** 2 + 1j * momentum * x)
    if amplitude is None:
        vals = vals / (math.pi * width**2) ** 0.25
    else:
        vals = amplitude * vals
    return WaveFunction(grid, vals, time)


def momentum_quantile(psi: WaveFunction, q: float = 0.999) -> float:
    """Quantile of |k| under the spectral density |psi_hat(k)|^2."""
    w = np.abs(np.fft.fft(psi.values)) ** 2
    total = w.sum()
    if total == 0:
        return 0.0
    ak = np.abs(psi.grid.k)
    order = np.argsort(ak, kind="stable")
    cdf = np.cumsum(w[order]) / total
    idx = min(int(np.searchsorted(cdf, q)), ak.size - 1)
    return float(ak[order][idx])


# -- text serialization -------------------------------------------------------

def save_wavefunction(path, psi: WaveFunction, comments: list[str] | tuple = ()) -> None:
    """Write "t=<time> n=<n> M=<M>" then one "r_star real imag" line per node."""
    g = psi.grid
    lines = [f"# {c}" for c in comments]
    lines.append(f"t={float(psi.time)!r} n={g.n} M={float(g.params.M)!r}")
    for x, v in zip(g.r_star, psi.values):
        lines.append(f"{float(x)!r} {float(v.real)!r} {float(v.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_wavefunction(path, grid: Grid | None = None) -> WaveFunction:
    """Read the text format; rebuilds the grid from the node list unless one is given."""
    header = None
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = dict(tok.split("=", 1) for tok in line.split())
            continue
        rows.append([float(tok) for tok in line.split()])
    if header is None:
        raise ValueError(f"{path}: missing header line")
    n = int(header["n"])
    data = np.array(rows, dtype=float).reshape(-1, 3)
    if data.shape[0] != n:
        raise ValueError(f"{path}: header says n={n}, found {data.shape[0]} rows")
    if grid is None:
        x = data[:, 0]
        h = (x[-1] - x[0]) / (n - 1)
        grid = Grid(n, float(x[0]), float(x[0] + n * h), SchwarzschildParams(float(header["M"])))
    elif grid.n != n or not np.allclose(grid.r_star, data[:, 0], rtol=0, atol=1e-9 * max(1.0, grid.length)):
        raise ValueError(f"{path}: nodes do not match the supplied grid")
    return WaveFunction(grid, data[:, 1] + 1j * data[:, 2], float(header["t"]))
