"""Observables of the reduced flow and checks of the identities they obey.

Symmetric-operator expectations are evaluated with spectral derivatives on
the periodic grid.  The weights (r_star - alpha), g(r_star - alpha) and
r_star are not periodic, so every evaluation assumes the wave function is
negligible near the box edges; the domain guard in the runners enforces it.
"""

from __future__ import annotations

import csv
import math
import weakref
from dataclasses import dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .geometry import Grid, SchwarzschildParams
from .state import EnergyParts, ModelParams, WaveFunction, energy, l2_norm, nonlinear_density


class DiagnosticsError(ValueError):
    pass


@dataclass(frozen=True)
class WeightConfig:
    """Weights for the local-decay observables; beta is tied to sigma + 1."""

    sigma: float = 1.0
    R: float = 10.0

    def __post_init__(self):
        if not 0.5 < self.sigma < 1.5:
            raise DiagnosticsError(f"sigma must lie in (1/2, 3/2), got {self.sigma}")
        if not self.R > 0:
            raise DiagnosticsError("R must be positive")

    @property
    def beta(self) -> float:
        return self.sigma + 1.0


# -- spectral helpers ------------------------------------------------------------

def _D(grid: Grid, f: np.ndarray) -> np.ndarray:
    """D = -i d/dr_star."""
    return -1j * grid.derivative(np.asarray(f, dtype=complex))


def _kinetic(grid: Grid, f: np.ndarray) -> np.ndarray:
    return np.fft.ifft(grid.k**2 * np.fft.fft(f))


def _symmetrized(grid: Grid, weight: np.ndarray, f: np.ndarray) -> np.ndarray:
    """(1/2)(w D + D w) f."""
    return 0.5 * (weight * _D(grid, f) + _D(grid, weight * f))


def _expect(psi: WaveFunction, op_psi: np.ndarray) -> complex:
    return complex(np.vdot(psi.values, op_psi) * psi.grid.spacing)


def dilation_operator(psi: WaveFunction, params: SchwarzschildParams | None = None) -> np.ndarray:
    g = psi.grid
    a = (params or g.params).alpha
    return _symmetrized(g, g.r_star - a, psi.values)


def dilation_expectation_complex(psi: WaveFunction, params: SchwarzschildParams | None = None) -> complex:
    return _expect(psi, dilation_operator(psi, params))


def dilation_expectation(psi: WaveFunction, params: SchwarzschildParams | None = None) -> float:
    """<psi, A psi> with A = (1/2)((r_star - alpha) D + D (r_star - alpha))."""
    return dilation_expectation_complex(psi, params).real


# -- commutator and chain-rule identities ------------------------------------------

class IdentityResiduals(NamedTuple):
    operator: float
    potential_part: float
    chain_rule: float


def commutator_identity_check(psi: WaveFunction, params: SchwarzschildParams | None = None,
                              model: ModelParams | None = None) -> IdentityResiduals:
    """Residuals of i[H, A] = 2 D^2 - (r_star - alpha) V' and of the chain rule

        |psi|^2 d(r^(1-p)|psi|^(p-1)) = (p-1)/(p+1) r^2 d(r^(-p-1)|psi|^(p+1)).

    The operator residuals are relative L^2 norms.  The chain-rule residual is
    the largest pointwise difference over nodes with |psi| > 1e-6 max|psi|,
    relative to the largest left-hand value there.
    """
    g = psi.grid
    params = params or g.params
    model = model or ModelParams()
    f = psi.values
    x = g.r_star - params.alpha

    def A(v):
        return _symmetrized(g, x, v)

    def H(v):
        return _kinetic(g, v) + g.V * v

    lhs = 1j * (H(A(f)) - A(H(f)))
    rhs = 2.0 * _kinetic(g, f) - x * g.dV * f
    op_res = np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny)

    lhs_v = 1j * (g.V * A(f) - A(g.V * f))
    rhs_v = -x * g.dV * f
    v_res = np.linalg.norm(lhs_v - rhs_v) / max(np.linalg.norm(rhs_v), np.finfo(float).tiny)

    p = model.p
    a = np.abs(f)
    left = a**2 * g.derivative(g.r ** (1.0 - p) * a ** (p - 1.0))
    right = (p - 1.0) / (p + 1.0) * g.r**2 * g.derivative(g.r ** (-p - 1.0) * a ** (p + 1.0))
    mask = a > 1e-6 * a.max() if a.max() > 0 else np.zeros(a.shape, bool)
    if mask.any():
        scale = max(np.abs(left[mask]).max(), np.finfo(float).tiny)
        chain = float(np.abs(left[mask] - right[mask]).max() / scale)
    else:
        chain = 0.0
    return IdentityResiduals(float(op_res), float(v_res), chain)


def dilation_sign_checks(grid: Grid) -> tuple[float, float]:
    """Minima over the grid of -(r_star - alpha) V' and of d/dr_star[r^2 (r_star - alpha)].

    Both are nonnegative in the continuum.  The second is evaluated in closed
    form: 2 r (dr/dr_star)(r_star - alpha) + r^2 with dr/dr_star = (r - 2M)/r.
    """
    x = grid.r_star - grid.params.alpha
    sign_v = -x * grid.dV
    growth = 2.0 * grid.delta * x + grid.r**2
    return float(sign_v.min()), float(growth.min())


def virial_potential(grid: Grid) -> np.ndarray:
    """W = V + r_star V'."""
    return grid.V + grid.r_star * grid.dV


# -- the bounded weight g and its observable ---------------------------------------

def _g_integrand(t, sigma):
    return (1.0 + t * t) ** (-sigma)


def g_function(s, sigma: float) -> np.ndarray:
    """g(s) = int_0^s (1 + t^2)^(-sigma) dt by adaptive quadrature.

    Sorted |s| values are integrated segment by segment and accumulated, so
    an array of n points costs n short quadratures.
    """
    if not 0.5 < sigma < 1.5:
        raise DiagnosticsError(f"sigma must lie in (1/2, 3/2), got {sigma}")
    s = np.asarray(s, dtype=float)
    flat = np.abs(s).ravel()
    order = np.argsort(flat)
    acc = 0.0
    prev = 0.0
    out = np.empty_like(flat)
    for idx in order:
        b = flat[idx]
        if b > prev:
            val, _ = integrate.quad(_g_integrand, prev, b, args=(sigma,), epsabs=1e-14, epsrel=1e-13,
                                    limit=200)
            acc += val
            prev = b
        out[idx] = acc
    res = (np.sign(s.ravel()) * out).reshape(s.shape)
    return float(res) if res.ndim == 0 else res


_weight_cache: "weakref.WeakKeyDictionary[Grid, dict]" = weakref.WeakKeyDictionary()


def gamma_weight(grid: Grid, sigma: float, alpha: float | None = None) -> np.ndarray:
    """g(r_star - alpha) on the grid nodes, cached per grid."""
    alpha = grid.params.alpha if alpha is None else alpha
    per_grid = _weight_cache.setdefault(grid, {})
    key = (float(sigma), float(alpha))
    if key not in per_grid:
        w = g_function(grid.r_star - alpha, sigma)
        w.setflags(write=False)
        per_grid[key] = w
    return per_grid[key]


def gamma_expectation(psi: WaveFunction, w: WeightConfig | None = None,
                      params: SchwarzschildParams | None = None) -> float:
    """<psi, gamma psi> with gamma = (1/2)(g D + D g), g = g(r_star - alpha)."""
    w = w or WeightConfig()
    g = psi.grid
    weight = gamma_weight(g, w.sigma, (params or g.params).alpha)
    return _expect(psi, _symmetrized(g, weight, psi.values)).real


def gamma_sup(sigma: float) -> float:
    """sup |g| = int_0^inf (1 + t^2)^(-sigma) dt."""
    return integrate.quad(_g_integrand, 0, np.inf, args=(sigma,), epsabs=1e-14)[0]


# -- pseudoconformal observable -----------------------------------------------------

def pseudoconformal_observable(psi: WaveFunction, t: float, route: str = "direct") -> float:
    """||(r_star / 2t - D) psi||^2 for t >= 1.

    route="direct" applies the operator; route="phase" uses the factorization
    ||(r_star/2t - D) psi|| = ||D(exp(-i r_star^2 / 4t) psi)||.
    """
    if t < 1:
        raise DiagnosticsError(f"pseudoconformal observable needs t >= 1, got {t}")
    g = psi.grid
    x = g.r_star
    if route == "direct":
        v = x / (2.0 * t) * psi.values - _D(g, psi.values)
    elif route == "phase":
        v = _D(g, np.exp(-0.25j * x * x / t) * psi.values)
    else:
        raise ValueError(f"unknown route {route!r}")
    return float(np.sum(np.abs(v) ** 2) * g.spacing)


# -- positivity of the commutator remainder -----------------------------------------

def commutator_remainder(s, sigma: float):
    """Return (closed form, derivative route) of -(2/s) g'' - (1/2) g'''.

    Closed form: sigma (1 + s^2)^(-sigma-2) (5 + (3 - 2 sigma) s^2).  The
    derivative route builds g'' and g''' from g' = (1 + s^2)^(-sigma); at
    s = 0 the removable singularity takes its limit 5 sigma.
    """
    s = np.asarray(s, dtype=float)
    q = 1.0 + s * s
    closed = sigma * q ** (-sigma - 2.0) * (5.0 + (3.0 - 2.0 * sigma) * s * s)

    g2 = -2.0 * sigma * s * q ** (-sigma - 1.0)
    g3 = -2.0 * sigma * q ** (-sigma - 1.0) + 4.0 * sigma * (sigma + 1.0) * s * s * q ** (-sigma - 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        g2_over_s = np.where(s != 0, g2 / np.where(s != 0, s, 1.0), -2.0 * sigma)
    deriv = -2.0 * g2_over_s - 0.5 * g3
    if closed.ndim == 0:
        return float(closed), float(deriv)
    return closed, deriv


# -- trajectory records ---------------------------------------------------------------

CSV_COLUMNS = ("t", "l2", "e_kin", "e_pot", "e_nl", "dilation", "gamma",
               "locdec", "pconf", "nlmass", "vexp", "linf")


@dataclass(frozen=True)
class DiagnosticsRecord:
    time: float
    l2: float
    energy_parts: EnergyParts
    dilation: float
    gamma_obs: float
    local_decay_integrand: float
    pseudoconformal: float          # nan for t < 1
    nonlinear_mass: float
    potential_expectation: float
    linf: float
    window_nonlinear: float = 0.0   # int_{-R}^{R} r^(-p-1) |psi|^(p+1)
    absorbing: bool = False

    def row(self) -> tuple[float, ...]:
        e = self.energy_parts
        return (self.time, self.l2, e.kinetic, e.potential, e.nonlinear, self.dilation,
                self.gamma_obs, self.local_decay_integrand, self.pseudoconformal,
                self.nonlinear_mass, self.potential_expectation, self.linf)

    def is_finite(self) -> bool:
        vals = list(self.row()) + [self.window_nonlinear]
        if self.time < 1:
            vals.pop(8)
        return all(math.isfinite(v) for v in vals)


def compute_record(psi: WaveFunction, model: ModelParams, weights: WeightConfig | None = None,
                   absorbing: bool = False) -> DiagnosticsRecord:
    weights = weights or WeightConfig()
    g = psi.grid
    h = g.spacing
    dens = np.abs(psi.values) ** 2
    x = g.r_star
    p = model.p
    window = np.abs(x) <= weights.R
    nl_window = g.r ** (-p - 1.0) * np.abs(psi.values) ** (p + 1.0)
    t = psi.time
    return DiagnosticsRecord(
        time=t,
        l2=l2_norm(psi),
        energy_parts=energy(psi, model),
        dilation=dilation_expectation(psi),
        gamma_obs=gamma_expectation(psi, weights),
        local_decay_integrand=float(np.sum((1.0 + x * x) ** (-weights.beta) * dens) * h),
        pseudoconformal=pseudoconformal_observable(psi, t) if t >= 1 else math.nan,
        nonlinear_mass=float(np.sum(nonlinear_density(psi, model)) * h),
        potential_expectation=float(np.sum(g.V * dens) * h),
        linf=float(np.sqrt(dens.max())),
        window_nonlinear=float(np.sum(nl_window[window]) * h),
        absorbing=absorbing,
    )


class Recorder:
    """Observer for :func:`tortoise_nls.solver.evolve` producing DiagnosticsRecords."""

    def __init__(self, model: ModelParams, weights: WeightConfig | None = None, absorbing: bool = False):
        self.model = model
        self.weights = weights or WeightConfig()
        self.absorbing = absorbing

    def __call__(self, psi: WaveFunction) -> DiagnosticsRecord:
        return compute_record(psi, self.model, self.weights, self.absorbing)


def column(records: Sequence[DiagnosticsRecord], name: str) -> np.ndarray:
    """One CSV column of a record series as an array."""
    i = CSV_COLUMNS.index(name)
    return np.array([r.row()[i] for r in records])


def write_records_csv(path, records: Sequence[DiagnosticsRecord], comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        if any(r.absorbing for r in records):
            fh.write("# absorber=on (L2 not conserved)\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([format(v, ".17g") for v in r.row()])


def read_records_csv(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    data = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


# -- trajectory checks ----------------------------------------------------------------

@dataclass(frozen=True)
class MonotonicityReport:
    ok: bool
    first_violation: float | None
    worst_decrement: float
    tolerance: float


def check_nondecreasing(times: Sequence[float], values: Sequence[float],
                        rel_tol: float = 1e-7) -> MonotonicityReport:
    """Every recorded increment must be >= -rel_tol * running max |value|."""
    v = np.asarray(values, dtype=float)
    t = np.asarray(times, dtype=float)
    if v.size < 2:
        return MonotonicityReport(True, None, 0.0, 0.0)
    running = np.maximum.accumulate(np.abs(v))[1:]
    tol = rel_tol * running
    inc = np.diff(v)
    bad = inc < -tol
    worst = float(min(0.0, inc.min()))
    first = float(t[1:][bad][0]) if bad.any() else None
    return MonotonicityReport(not bad.any(), first, worst, float(tol.max()))


def dilation_monotonicity_check(records: Sequence[DiagnosticsRecord], rel_tol: float = 1e-7) -> MonotonicityReport:
    return check_nondecreasing([r.time for r in records], [r.dilation for r in records], rel_tol)


@dataclass(frozen=True)
class LocalDecayReport:
    times: np.ndarray
    weighted_l2: np.ndarray     # running time integral of ||(1+r_star^2)^(-beta/2) psi||^2
    window_nonlinear: np.ndarray
    bound: float                # 2 ||psi_0||_2 <psi_0, (D^2 + V) psi_0>^(1/2)

    @property
    def total(self) -> float:
        return float(self.weighted_l2[-1]) if self.weighted_l2.size else 0.0

    def within_bound(self) -> bool:
        return bool(np.all(self.weighted_l2 <= self.bound * (1 + 1e-12)))


def _running_trapezoid(t, y):
    if t.size == 0:
        return np.zeros(0)
    return np.concatenate([[0.0], integrate.cumulative_trapezoid(y, t)])


def local_decay_accumulator(records: Sequence[DiagnosticsRecord]) -> LocalDecayReport:
    if not records:
        z = np.zeros(0)
        return LocalDecayReport(z, z, z, 0.0)
    t = np.array([r.time for r in records])
    first = records[0]
    bound = 2.0 * first.l2 * math.sqrt(max(first.energy_parts.quadratic, 0.0))
    return LocalDecayReport(
        t,
        _running_trapezoid(t, np.array([r.local_decay_integrand for r in records])),
        _running_trapezoid(t, np.array([r.window_nonlinear for r in records])),
        bound,
    )


class SlopeFit(NamedTuple):
    slope: float
    stderr: float
    intercept: float
    samples: int


def decay_slope_fit(times: Sequence[float], values: Sequence[float],
                    window: tuple[float, float] | None = None, min_samples: int = 8) -> SlopeFit:
    """Least-squares slope of log(value) against log(t) inside ``window``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        m = (t >= window[0]) & (t <= window[1])
        t, v = t[m], v[m]
    if t.size < min_samples:
        raise DiagnosticsError(f"need at least {min_samples} samples in window, got {t.size}")
    if np.any(~(v > 0)) or np.any(~(t > 0)):
        raise DiagnosticsError("slope fit needs positive times and values")
    X = np.log(t)
    Y = np.log(v)
    A = np.vstack([X, np.ones_like(X)]).T
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = Y - A @ coef
    dof = max(t.size - 2, 1)
    s2 = float(resid @ resid) / dof
    sxx = float(np.sum((X - X.mean()) ** 2))
    stderr = math.sqrt(s2 / sxx) if sxx > 0 else math.inf
    return SlopeFit(float(coef[0]), stderr, float(coef[1]), int(t.size))


def record_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(DiagnosticsRecord))
