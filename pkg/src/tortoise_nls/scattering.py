"""Long-time behaviour: dispersive ratios, asymptotic states and wave operators.

Linear propagators exp(+-itH) are realised with the same Strang kernel as the
nonlinear flow (linear_with_V mode, step sign chosen by the direction), so a
run with lam = 0 reproduces its own back-propagation to rounding.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .solver import (EvolutionConfig, NumericalGuardError, Propagator, default_dt, evolve,
                     propagate)
from .state import ModelParams, WaveFunction, l2_norm, lq_norm, momentum_quantile

log = logging.getLogger(__name__)

WAVE_OP_THRESHOLD = (3.0 + math.sqrt(17.0)) / 2.0


class DomainGuardError(NumericalGuardError):
    """The periodic box is too short for the requested run length."""


class ScatteringError(RuntimeError):
    """Fixed-point iteration failed to contract or its tail bound is too large."""


@dataclass(frozen=True)
class StrichartzExponents:
    p: float
    q: float
    q_prime: float
    kappa: float
    k: float
    admissible_wave_op: bool
    admissible_completeness: bool

    @property
    def eta(self) -> float:
        """Time exponent of the nonlinear term: p * eta = k."""
        return self.k / self.p

    def identity_residuals(self) -> tuple[float, float, float, float]:
        """Residuals of the Young/Hoelder bookkeeping the exponents must satisfy."""
        return (
            abs((1.0 + 1.0 / self.k) - (1.0 / self.kappa + 1.0 / self.eta)),
            abs((0.5 - 1.0 / self.q) * self.kappa - 1.0),
            abs(self.p * self.q_prime - self.q),
            abs(1.0 / self.q + 1.0 / self.q_prime - 1.0),
        )


def strichartz_exponents(p: float) -> StrichartzExponents:
    if not p > 1:
        raise ValueError(f"p must exceed 1, got {p}")
    q = p + 1.0
    return StrichartzExponents(
        p=p,
        q=q,
        q_prime=q / (q - 1.0),
        kappa=2.0 * (p + 1.0) / (p - 1.0),
        k=2.0 * (p - 1.0) * (p + 1.0) / (p + 3.0),
        admissible_wave_op=p > WAVE_OP_THRESHOLD,
        admissible_completeness=p > 4.0,
    )


def required_length(psi: WaveFunction, duration: float) -> float:
    """Box length 2 v_max T with v_max = 2 * (0.999 quantile of |k|)."""
    return 2.0 * (2.0 * momentum_quantile(psi, 0.999)) * abs(duration)


def check_domain(psi: WaveFunction, duration: float, override: bool = False) -> None:
    need = required_length(psi, duration)
    if psi.grid.length < need:
        msg = (f"box length {psi.grid.length:g} is shorter than the {need:g} needed "
               f"for a run of length {duration:g}")
        if override:
            warnings.warn(msg + " (guard overridden)", RuntimeWarning, stacklevel=3)
        else:
            raise DomainGuardError(msg)


def _dt_for(psi: WaveFunction, dt: float | None) -> float:
    return default_dt(psi.grid) if dt is None else abs(dt)


def dual_exponent(q: float) -> float:
    if math.isinf(q):
        return 1.0
    if q < 2:
        raise ValueError("q must be >= 2")
    return q / (q - 1.0)


def dispersive_ratio(phi: WaveFunction, q: float, t_samples, mode: str = "linear_with_V",
                     dt: float | None = None, override_domain_guard: bool = False) -> np.ndarray:
    """t^(1/2 - 1/q) ||exp(-itH) phi||_q / ||phi||_q' at each sample time."""
    ts = np.asarray(sorted(t_samples), dtype=float)
    if mode not in ("linear_with_V", "free"):
        raise ValueError("dispersive ratio is defined for the linear flows only")
    check_domain(phi, ts[-1], override_domain_guard)
    step = _dt_for(phi, dt)
    expo = 0.5 - (0.0 if math.isinf(q) else 1.0 / q)
    denom = lq_norm(phi, dual_exponent(q))
    lin = ModelParams(0.0)
    cur = phi.copy(time=0.0)
    out = []
    for t in ts:
        cur = propagate(cur, lin, t - cur.time, step, mode)
        out.append(t**expo * lq_norm(cur, q) / denom)
    return np.array(out)


def _interaction_norm(psi: WaveFunction, model: ModelParams) -> float:
    """||lam r^(1-p) |psi|^(p-1) psi||_2."""
    g = psi.grid
    v = model.lam * g.r ** (1.0 - model.p) * np.abs(psi.values) ** (model.p - 1.0) * psi.values
    return l2_norm(psi.copy(v))


@dataclass
class ScatteringResult:
    psi_plus: WaveFunction
    residual_history: list[tuple[float, float]]
    phi_plus: WaveFunction | None = None
    states: dict[float, WaveFunction] = field(default_factory=dict, repr=False)
    interaction_bounds: list[tuple[float, float]] = field(default_factory=list)

    def residual_ratios(self) -> np.ndarray:
        r = np.array([v for _, v in self.residual_history])
        return r[:-1] / r[1:]


def extract_asymptotic_state(psi0: WaveFunction, model: ModelParams, schedule, dt: float | None = None,
                             sample_every: int = 10,
                             override_domain_guard: bool = False) -> ScatteringResult:
    """Cauchy extraction of psi_+ = lim exp(iTH) psi_T along an increasing schedule.

    ``residual_history`` holds (T_i, ||phi_{T_(i+1)} - phi_(T_i)||_2) for
    consecutive schedule entries; ``interaction_bounds`` holds the matching
    brute-force bounds int ||lam r^(1-p)|psi_s|^(p-1) psi_s||_2 ds.
    """
    Ts = sorted(float(T) for T in schedule)
    if not Ts or Ts[0] <= psi0.time:
        raise ValueError("schedule must be increasing and lie after the initial time")
    if not model.completeness_valid:
        warnings.warn(f"p = {model.p} <= 4: completeness is not covered; exploratory run",
                      RuntimeWarning, stacklevel=2)
    check_domain(psi0, Ts[-1] - psi0.time, override_domain_guard)
    step = _dt_for(psi0, dt)
    lin = model.linear()

    samples: list[tuple[float, float]] = []

    def sample(psi):
        samples.append((psi.time, _interaction_norm(psi, model)))

    phis: dict[float, WaveFunction] = {}
    cur = psi0
    for T in Ts:
        cur, _ = evolve(cur, model, EvolutionConfig(step, T, "nonlinear", record_every=sample_every),
                        [sample])
        phis[T] = propagate(cur, lin, -T, step, "linear_with_V").copy(time=0.0)

    ts = np.array([s[0] for s in samples])
    vals = np.array([s[1] for s in samples])
    ts, idx = np.unique(ts, return_index=True)
    vals = vals[idx]

    def integral(a, b):
        m = (ts >= a - 1e-12) & (ts <= b + 1e-12)
        return float(trapezoid(vals[m], ts[m])) if m.sum() > 1 else 0.0

    history, bounds = [], []
    for a, b in zip(Ts[:-1], Ts[1:]):
        diff = phis[b].values - phis[a].values
        history.append((a, l2_norm(phis[a].copy(diff))))
        bounds.append((a, integral(a, b)))
    return ScatteringResult(phis[Ts[-1]].copy(), history, None, phis, bounds)


@dataclass
class WaveOperatorResult:
    psi0: WaveFunction
    psi_T: WaveFunction
    iterate_differences: list[float]
    contraction_ratio: float
    free_norm: float            # ||exp(-itH) psi_+||_{X_T}
    c0_estimate: float          # ||F(psi^(0))||_X / ||psi^(0)||_X^p
    tail_estimate: float
    iterations: int


def _xt_norm(stack: np.ndarray, h: float, dt: float, ex: StrichartzExponents) -> float:
    """Discrete L^k([T, T_max]; L^q) norm with trapezoid weights in time."""
    lq = (np.sum(np.abs(stack) ** ex.q, axis=1) * h) ** (1.0 / ex.q)
    w = np.full(lq.shape, dt)
    w[0] = w[-1] = 0.5 * dt
    return float(np.sum(w * lq**ex.k) ** (1.0 / ex.k))


def _power_tail(ts: np.ndarray, vals: np.ndarray, t_max: float) -> float:
    """Integral over [t_max, inf) of a power law fitted to the last half of the samples."""
    m = ts >= ts[0] + 0.5 * (ts[-1] - ts[0])
    t, v = ts[m], vals[m]
    if np.all(v == 0):
        return 0.0
    if np.any(v <= 0) or t.size < 2:
        return math.inf
    a, logc = np.polyfit(np.log(t), np.log(v), 1)
    rate = -a
    if rate <= 1:
        return math.inf
    return float(math.exp(logc) * t_max ** (1 - rate) / (rate - 1))


def construct_wave_operator(psi_plus: WaveFunction, model: ModelParams, T: float, t_max: float,
                            dt: float | None = None, max_iters: int = 50, tol: float = 1e-8,
                            tail_tol: float | None = None,
                            override_domain_guard: bool = False) -> WaveOperatorResult:
    """Solve psi_t = exp(-itH) psi_+ + i int_t^inf exp(-i(t-s)H) N(psi_s) ds on [T, t_max].

    N(psi) = lam r^(1-p) |psi|^(p-1) psi.  The upper limit is truncated at
    t_max; the neglected tail is estimated from the power-law decay of
    ||N(psi_s)||_2 and must stay below ``tail_tol`` (default tol/10).  The
    time integral uses the trapezoid rule on the lattice T + j*dt, swept
    backwards with the linear propagator.  At least two iterates are taken so
    the contraction ratio is always measured.  The converged state at t = T is
    then carried back to t = 0 by the nonlinear flow.
    """
    if not model.wave_op_valid:
        warnings.warn(f"p = {model.p} does not exceed {WAVE_OP_THRESHOLD:.4f}: exploratory run",
                      RuntimeWarning, stacklevel=2)
    if not t_max > T >= 0:
        raise ValueError("need 0 <= T < t_max")
    tail_tol = tol / 10 if tail_tol is None else tail_tol
    check_domain(psi_plus, t_max, override_domain_guard)
    grid = psi_plus.grid
    step = _dt_for(psi_plus, dt)
    J = max(1, int(round((t_max - T) / step)))
    step = (t_max - T) / J
    ex = strichartz_exponents(model.p)
    lin = model.linear()

    start = propagate(psi_plus.copy(time=0.0), lin, T, step, "linear_with_V")
    fwd = Propagator(grid, lin, step, "linear_with_V")
    back = Propagator(grid, lin, -step, "linear_with_V")
    free = np.empty((J + 1, grid.n), dtype=complex)
    free[0] = start.values
    for j in range(J):
        free[j + 1] = fwd.step_values(free[j])

    weight = model.lam * grid.r ** (1.0 - model.p)
    pexp = model.p - 1.0

    def nonlinear(stack):
        return weight * np.abs(stack) ** pexp * stack

    def duhamel(stack):
        N = nonlinear(stack)
        Z = np.zeros((J + 1, grid.n), dtype=complex)
        for j in range(J - 1, -1, -1):
            Z[j] = back.step_values(Z[j + 1] + 0.5 * step * N[j + 1]) + 0.5 * step * N[j]
        return Z

    h = grid.spacing
    free_norm = _xt_norm(free, h, step, ex)
    cur = free
    diffs: list[float] = []
    c0 = math.nan
    for it in range(1, max_iters + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            Z = duhamel(cur)
            if it == 1 and free_norm > 0:
                c0 = _xt_norm(Z, h, step, ex) / free_norm**model.p
            new = free + 1j * Z
            diffs.append(_xt_norm(new - cur, h, step, ex))
        cur = new
        log.debug("wave-operator iterate %d: diff %.3e", it, diffs[-1])
        if not math.isfinite(diffs[-1]):
            raise ScatteringError(
                f"iterates overflowed at step {it}; measured C0 ||psi0||^(p-1) = "
                f"{c0 * free_norm ** (model.p - 1):.3e}")
        if diffs[-1] < tol and it >= 2:
            break
        if len(diffs) >= 3 and diffs[-1] > diffs[-2] > diffs[-3]:
            raise ScatteringError(
                f"iteration is not contracting (differences {diffs[-3]:.3e}, {diffs[-2]:.3e}, "
                f"{diffs[-1]:.3e}); measured C0 ||psi0||^(p-1) = {c0 * free_norm ** (model.p - 1):.3e}")
    else:
        raise ScatteringError(f"no convergence after {max_iters} iterations (last diff {diffs[-1]:.3e})")

    ts = T + step * np.arange(J + 1)
    nl_norms = np.sqrt(np.sum(np.abs(nonlinear(cur)) ** 2, axis=1) * h)
    tail = _power_tail(ts, nl_norms, t_max)
    if tail > tail_tol:
        raise ScatteringError(f"estimated Duhamel tail {tail:.3e} beyond t_max={t_max:g} exceeds {tail_tol:.3e}")

    psi_T = WaveFunction(grid, cur[0], T)
    psi0 = propagate(psi_T, model, -T, step, "nonlinear")
    ratio = diffs[1] / diffs[0] if len(diffs) > 1 and diffs[0] > 0 else 0.0
    return WaveOperatorResult(psi0.copy(time=0.0), psi_T, diffs, ratio, free_norm, c0, tail, len(diffs))


def free_channel_comparison(psi_plus: WaveFunction, t_samples, dt: float | None = None,
                            override_domain_guard: bool = False) -> ScatteringResult:
    """phi_+ = lim exp(iTD^2) exp(-iTH) psi_+ by the same Cauchy extraction."""
    Ts = sorted(float(t) for t in t_samples)
    check_domain(psi_plus, Ts[-1], override_domain_guard)
    step = _dt_for(psi_plus, dt)
    lin = ModelParams(0.0)
    grid = psi_plus.grid
    cur = psi_plus.copy(time=0.0)
    chis: dict[float, WaveFunction] = {}
    for T in Ts:
        cur = propagate(cur, lin, T - cur.time, step, "linear_with_V")
        back = np.fft.ifft(np.exp(1j * T * grid.k**2) * np.fft.fft(cur.values))
        chis[T] = WaveFunction(grid, back, 0.0)
    history = [(a, l2_norm(chis[a].copy(chis[b].values - chis[a].values)))
               for a, b in zip(Ts[:-1], Ts[1:])]
    phi = chis[Ts[-1]].copy()
    return ScatteringResult(psi_plus.copy(), history, phi, chis)
