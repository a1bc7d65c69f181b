"""Exterior Schwarzschild radial geometry in the tortoise coordinate.

All quantities use geometric units with the black-hole mass ``M`` as a pure
number.  Near the horizon ``r - 2M`` underflows relative to ``r`` long before
the tortoise coordinate does, so the inverse map works with the horizon
offset ``delta = r - 2M`` and every potential evaluation uses ``delta``
directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

_MAX_NEWTON_ITERS = 200


class GeometryError(ValueError):
    """Raised for points inside or on the horizon."""


class ConvergenceError(RuntimeError):
    """Raised if the coordinate inversion fails to converge."""


@dataclass(frozen=True)
class SchwarzschildParams:
    M: float = 1.0

    def __post_init__(self):
        if not (self.M > 0 and math.isfinite(self.M)):
            raise GeometryError(f"mass must be positive and finite, got {self.M!r}")

    @property
    def horizon(self) -> float:
        return 2.0 * self.M

    @property
    def alpha(self) -> float:
        """Tortoise coordinate of the potential maximum r = 8M/3."""
        M = self.M
        return 8.0 * M / 3.0 + 2.0 * M * math.log(2.0 * M / 3.0)


def tortoise(r, params: SchwarzschildParams):
    """r + 2M log(r - 2M); scalar or array input."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(~(r_arr > params.horizon)):
        raise GeometryError("tortoise coordinate is only defined for r > 2M")
    out = r_arr + 2.0 * params.M * np.log(r_arr - params.horizon)
    return float(out) if out.ndim == 0 else out


def tortoise_from_offset(delta, params: SchwarzschildParams):
    """Tortoise coordinate written in terms of delta = r - 2M > 0."""
    d = np.asarray(delta, dtype=float)
    out = params.horizon + d + 2.0 * params.M * np.log(d)
    return float(out) if out.ndim == 0 else out


def horizon_offset(r_star, params: SchwarzschildParams, tol: float = 1e-12):
    """Return delta = r - 2M for the given tortoise coordinate(s).

    Safeguarded Newton iteration in u = log(delta), where the residual
    f(u) = 2M + e^u + 2M u - r_star is increasing and convex.  Steps that
    leave the bracket fall back to bisection.  Convergence is declared when
    |f| < tol * max(1, |r_star|).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    rs = np.atleast_1d(np.asarray(r_star, dtype=float))
    if not np.all(np.isfinite(rs)):
        raise GeometryError("r_star must be finite")
    M = params.M
    two_m = 2.0 * M

    # bracket: delta in (0, max(r_star, 4M) + 1)
    d_hi = np.maximum(rs, 4.0 * M) + 1.0
    u_hi = np.log(d_hi)
    u_lo = (rs - two_m - d_hi) / two_m - 1.0

    # initial guesses: r ~ r_star far out, r ~ 2M + exp(-1 + r_star/2M) near the horizon
    u = np.where(
        rs >= two_m,
        np.log(np.maximum(rs - two_m * np.log(np.maximum(rs, 1.0)) - two_m, M)),
        -1.0 + rs / two_m,
    )
    u = np.clip(u, u_lo, u_hi)

    scale = tol * np.maximum(1.0, np.abs(rs))
    done = np.zeros(rs.shape, dtype=bool)
    for _ in range(_MAX_NEWTON_ITERS):
        eu = np.exp(u)
        f = two_m + eu + two_m * u - rs
        done = np.abs(f) < scale
        if done.all():
            break
        # keep the bracket tight
        u_lo = np.where(f < 0, np.maximum(u_lo, u), u_lo)
        u_hi = np.where(f > 0, np.minimum(u_hi, u), u_hi)
        u_new = u - f / (eu + two_m)
        outside = (u_new <= u_lo) | (u_new >= u_hi)
        u_new = np.where(outside, 0.5 * (u_lo + u_hi), u_new)
        # a step below one ulp means the residual is at rounding level
        stalled = np.abs(u_new - u) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(u))
        done = done | stalled
        u = np.where(done, u, u_new)
        if done.all():
            break
    else:
        raise ConvergenceError("inverse tortoise map did not converge")

    # one polishing step takes the quadratically converged iterate to rounding level
    eu = np.exp(u)
    u = u - (two_m + eu + two_m * u - rs) / (eu + two_m)
    delta = np.exp(u)
    return float(delta[0]) if np.ndim(r_star) == 0 else delta


def inverse_tortoise(r_star, params: SchwarzschildParams, tol: float = 1e-12):
    """Areal radius r(r_star) > 2M.

    For r_star below roughly -70M the returned float rounds to exactly 2M;
    use :func:`horizon_offset` when the distance to the horizon matters.
    """
    return params.horizon + horizon_offset(r_star, params, tol)


def _potential_from_offset(delta, M):
    r = 2.0 * M + delta
    return 2.0 * M / r**3 * (delta / r)


def _potential_derivative_from_offset(delta, M):
    r = 2.0 * M + delta
    return 2.0 * M / r**4 * (delta / r) * (8.0 * M / r - 3.0)


def potential(r_star, params: SchwarzschildParams):
    """Effective potential (2M/r^3)(1 - 2M/r) as a function of r_star."""
    return _potential_from_offset(horizon_offset(r_star, params), params.M)


def potential_derivative(r_star, params: SchwarzschildParams):
    """dV/dr_star = (2M/r^4)(1 - 2M/r)(8M/r - 3)."""
    return _potential_derivative_from_offset(horizon_offset(r_star, params), params.M)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform periodic lattice in r_star with the geometry precomputed.

    Nodes are ``r_star_min + i * spacing`` for ``i < n``; ``r_star_max`` is the
    periodic image of the first node and is not itself a node.
    """

    n: int
    r_star_min: float
    r_star_max: float
    params: SchwarzschildParams = field(default_factory=SchwarzschildParams)
    r_star: np.ndarray = field(init=False, repr=False)
    delta: np.ndarray = field(init=False, repr=False)
    r: np.ndarray = field(init=False, repr=False)
    V: np.ndarray = field(init=False, repr=False)
    dV: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 2 or n & (n - 1):
            raise ValueError(f"grid size must be a power of two, got {self.n}")
        if not self.r_star_max > self.r_star_min:
            raise ValueError("r_star_max must exceed r_star_min")
        object.__setattr__(self, "n", n)
        x = self.r_star_min + self.spacing * np.arange(n)
        d = horizon_offset(x, self.params)
        self._set_arrays(
            x, d, self.params.horizon + d,
            _potential_from_offset(d, self.params.M),
            _potential_derivative_from_offset(d, self.params.M),
        )

    def _set_arrays(self, x, d, r, V, dV):
        for name, val in (("r_star", x), ("delta", d), ("r", r), ("V", V), ("dV", dV)):
            object.__setattr__(self, name, _frozen(val))

    @classmethod
    def with_profile(cls, n, r_star_min, r_star_max, *, r=1.0, V=0.0, dV=0.0,
                     params: SchwarzschildParams | None = None) -> "Grid":
        """Test grid with a prescribed r, V and V' (default: flat, V = 0, r = 1).

        Useful for isolating the kinetic or the nonlinear flow.
        """
        g = cls.__new__(cls)
        object.__setattr__(g, "n", int(n))
        object.__setattr__(g, "r_star_min", float(r_star_min))
        object.__setattr__(g, "r_star_max", float(r_star_max))
        object.__setattr__(g, "params", params or SchwarzschildParams())
        if g.n < 2 or g.n & (g.n - 1):
            raise ValueError(f"grid size must be a power of two, got {n}")
        x = g.r_star_min + g.spacing * np.arange(g.n)
        full = lambda v: np.broadcast_to(np.asarray(v, dtype=float), x.shape)
        r_arr = full(r)
        g._set_arrays(x, r_arr - g.params.horizon, r_arr, full(V), full(dV))
        return g

    @property
    def length(self) -> float:
        return self.r_star_max - self.r_star_min

    @property
    def spacing(self) -> float:
        return (self.r_star_max - self.r_star_min) / self.n

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return _frozen(2.0 * np.pi * np.fft.fftfreq(self.n, d=self.spacing))

    @cached_property
    def k_derivative(self) -> np.ndarray:
        """Symbol of d/dr_star with the Nyquist mode zeroed (keeps real data real)."""
        k = np.array(self.k)
        k[self.n // 2] = 0.0
        return _frozen(k)

    @property
    def k_max(self) -> float:
        return math.pi / self.spacing

    def derivative(self, f: np.ndarray) -> np.ndarray:
        """Spectral d/dr_star of periodic samples."""
        f = np.asarray(f)
        out = np.fft.ifft(1j * self.k_derivative * np.fft.fft(f))
        return out.real if np.isrealobj(f) else out

    def __repr__(self):
        return (f"Grid(n={self.n}, r_star=[{self.r_star_min:g}, {self.r_star_max:g}), "
                f"M={self.params.M:g})")
