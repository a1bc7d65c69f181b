"""Experiment runner: ``tortoise-nls run|validate <config>``.

Exit codes: 0 all checks pass, 1 a check failed, 2 config error,
3 numerical guard tripped (domain too small, non-finite values).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import scattering as sc
from .config import ConfigError, ExperimentConfig, load_config
from .geometry import Grid, SchwarzschildParams
from .solver import Absorber, EvolutionConfig, NumericalGuardError, default_dt, evolve
from .state import ModelParams, WaveFunction, gaussian, l2_norm, load_wavefunction, save_wavefunction

log = logging.getLogger("tortoise_nls")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2, 3


@dataclass
class Check:
    name: str
    value: float
    band: str
    passed: bool

    def line(self) -> str:
        return f"{self.name}: measured={self.value:.6g} band={self.band} {'PASS' if self.passed else 'FAIL'}"


def upper(name, value, limit) -> Check:
    return Check(name, value, f"< {limit:g}", bool(value < limit))


def lower(name, value, limit) -> Check:
    return Check(name, value, f">= {limit:g}", bool(value >= limit))


def within(name, value, lo, hi) -> Check:
    return Check(name, value, f"[{lo:g}, {hi:g}]", bool(lo <= value <= hi))


class Context:
    """Objects built once from a resolved config."""

    def __init__(self, cfg: ExperimentConfig):
        v = cfg.values
        self.cfg = cfg
        self.params = SchwarzschildParams(v["M"])
        self.grid = Grid(v["grid.n"], v["grid.r_star_min"], v["grid.r_star_max"], self.params)
        self.model = ModelParams(v["lambda"], v["p"])
        self.weights = dg.WeightConfig(v["sigma"], v["R"])
        self.dt = v["dt"] if v["dt"] is not None else default_dt(self.grid)
        self.out = Path(v["output_dir"])
        self.header = [f"config {line}" for line in cfg.resolved_lines()]
        self.absorber = Absorber() if v["absorber"] else None

    def initial(self) -> WaveFunction:
        v = self.cfg.values
        if v["initial_data"] == "file":
            return load_wavefunction(v["initial_data.path"], self.grid)
        c = v["initial_data.center"]
        center = self.params.alpha if c == "alpha" else c
        return gaussian(self.grid, center, v["initial_data.width"], v["initial_data.momentum"],
                        v["initial_data.amplitude"])

    def trajectory(self, psi0=None, t_end=None, mode="nonlinear"):
        psi0 = self.initial() if psi0 is None else psi0
        t_end = self.cfg["t_end"] if t_end is None else t_end
        rec = dg.Recorder(self.model, self.weights, absorbing=self.absorber is not None)
        run = EvolutionConfig(self.dt, t_end, mode, self.cfg["record_every"], self.absorber)
        final, records = evolve(psi0, self.model, run, [rec])
        dg.write_records_csv(self.out / "trajectory.csv", records, self.header)
        return final, records

    def write_series(self, name: str, columns: dict[str, np.ndarray]) -> None:
        with open(self.out / name, "w", newline="", encoding="utf-8") as fh:
            for c in self.header:
                fh.write(f"# {c}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(columns))
            for row in zip(*columns.values()):
                w.writerow([format(float(x), ".17g") for x in row])

    def save(self, name: str, psi: WaveFunction) -> None:
        save_wavefunction(self.out / name, psi, self.header)


def _relative(delta: float, ref: float) -> float:
    return abs(delta) / abs(ref) if ref != 0 else abs(delta)


def exp_conservation(ctx: Context) -> list[Check]:
    _, recs = ctx.trajectory()
    l2 = dg.column(recs, "l2")
    en = np.array([r.energy_parts.total for r in recs])
    checks = [upper("l2_relative_drift", _relative(np.max(np.abs(l2 - l2[0])), l2[0]), 1e-9)]
    if ctx.absorber is None:
        checks.append(upper("energy_relative_drift", _relative(np.max(np.abs(en - en[0])), en[0]), 1e-5))
    return checks


def exp_monotonicity(ctx: Context) -> list[Check]:
    _, recs = ctx.trajectory()
    rep = dg.dilation_monotonicity_check(recs)
    sign_v, growth = dg.dilation_sign_checks(ctx.grid)
    scale = np.abs(ctx.grid.r_star - ctx.params.alpha).max() * np.abs(ctx.grid.dV).max()
    return [
        Check("dilation_worst_decrement", rep.worst_decrement, f">= -{rep.tolerance:.3g}", rep.ok),
        lower("min_potential_sign_term", sign_v, -1e-15 * scale),
        lower("min_weight_growth", growth, 0.0),
    ]


def exp_local_decay(ctx: Context) -> list[Check]:
    _, recs = ctx.trajectory()
    rep = dg.local_decay_accumulator(recs)
    half = np.interp(ctx.cfg["t_end"] / 2, rep.times, rep.weighted_l2)
    change = _relative(rep.total - half, rep.total)
    ctx.write_series("local_decay.csv", {"t": rep.times, "weighted_l2": rep.weighted_l2,
                                         "window_nonlinear": rep.window_nonlinear})
    return [
        Check("local_decay_running_max", float(rep.weighted_l2.max()), f"<= {rep.bound:.6g}",
              rep.within_bound()),
        upper("local_decay_doubling_change", change, 0.1),
    ]


def _fit_window(ctx: Context, default_lo: float):
    lo = ctx.cfg["fit.t_min"] if ctx.cfg["fit.t_min"] is not None else default_lo
    hi = ctx.cfg["fit.t_max"] if ctx.cfg["fit.t_max"] is not None else ctx.cfg["t_end"]
    return lo, hi


def exp_pseudoconformal(ctx: Context) -> list[Check]:
    final, recs = ctx.trajectory()
    fit = dg.decay_slope_fit(dg.column(recs, "t"), dg.column(recs, "pconf"), _fit_window(ctx, 1.0))
    direct = dg.pseudoconformal_observable(final, final.time, "direct")
    phase = dg.pseudoconformal_observable(final, final.time, "phase")
    return [
        within("pseudoconformal_slope", fit.slope, -1.2, -0.8),
        upper("pseudoconformal_route_agreement", _relative(direct - phase, direct), 1e-8),
    ]


def exp_linf_decay(ctx: Context) -> list[Check]:
    psi0 = ctx.initial()
    sc.check_domain(psi0, ctx.cfg["t_end"], ctx.cfg["override_domain_guard"])
    _, recs = ctx.trajectory(psi0)
    fit = dg.decay_slope_fit(dg.column(recs, "t"), dg.column(recs, "linf"), _fit_window(ctx, 10.0))
    return [within("linf_slope", fit.slope, -0.35, -0.15)]


def exp_dispersive(ctx: Context) -> list[Check]:
    phi = ctx.initial()
    ts = ctx.cfg["t_samples"] or tuple(np.geomspace(1.0, ctx.cfg["t_end"], 25))
    ov = ctx.cfg["override_domain_guard"]
    rv = sc.dispersive_ratio(phi, ctx.cfg["q"], ts, "linear_with_V", ctx.dt, ov)
    rf = sc.dispersive_ratio(phi, ctx.cfg["q"], ts, "free", ctx.dt, ov)
    ctx.write_series("dispersive.csv", {"t": np.array(sorted(ts)), "ratio_V": rv, "ratio_free": rf})
    return [
        upper("dispersive_max_over_min", float(rv.max() / rv.min()), 3.0),
        upper("free_control_variation", float(rf.max() / rf.min() - 1.0), 0.01),
    ]


def exp_completeness(ctx: Context) -> list[Check]:
    psi0 = ctx.initial()
    ov = ctx.cfg["override_domain_guard"]
    sched = ctx.cfg["schedule"]
    res = sc.extract_asymptotic_state(psi0, ctx.model, sched, ctx.dt, override_domain_guard=ov)
    ctrl = sc.extract_asymptotic_state(psi0, ctx.model.linear(), sched, ctx.dt, override_domain_guard=ov)
    ctx.write_series("completeness.csv", {
        "T": [T for T, _ in res.residual_history],
        "residual": [r for _, r in res.residual_history],
        "interaction_bound": [b for _, b in res.interaction_bounds],
        "control_residual": [r for _, r in ctrl.residual_history],
    })
    ctx.save("psi_plus.txt", res.psi_plus)
    ratios = res.residual_ratios()
    return [
        lower("min_halving_factor", float(ratios.min()) if ratios.size else math.inf, 2.0),
        upper("linear_control_residual", max(r for _, r in ctrl.residual_history), 1e-10),
    ]


def exp_wave_operator(ctx: Context) -> list[Check]:
    v = ctx.cfg.values
    psi_plus = ctx.initial()
    ov = v["override_domain_guard"]
    try:
        w = sc.construct_wave_operator(psi_plus, ctx.model, v["wave_op.T"], v["wave_op.t_max"], ctx.dt,
                                       v["wave_op.max_iters"], v["wave_op.tol"], override_domain_guard=ov)
    except sc.ScatteringError as exc:
        log.error("%s", exc)
        return [Check("wave_operator_converged", 0.0, "converged", False)]
    ctx.save("psi0.txt", w.psi0)
    back = sc.extract_asymptotic_state(w.psi0, ctx.model, v["schedule"], ctx.dt, override_domain_guard=ov)
    ctx.save("psi_plus_recovered.txt", back.psi_plus)
    err = l2_norm(psi_plus.copy(back.psi_plus.values - psi_plus.values))
    ctx.write_series("wave_operator.csv", {"iteration": np.arange(1, w.iterations + 1),
                                           "difference": np.array(w.iterate_differences)})
    return [
        upper("round_trip_error", err, 1e-3),
        upper("contraction_ratio", w.contraction_ratio, 1.0),
    ]


def band_limited_test_function(grid: Grid, rng: np.random.Generator, width: float = 3.0,
                               kmax: float = 0.75) -> WaveFunction:
    """Random smooth packet: a few Gaussians with random centres, phases and momenta."""
    a = grid.params.alpha
    vals = np.zeros(grid.n, dtype=complex)
    for _ in range(3):
        c = a + rng.uniform(-10, 10)
        k0 = rng.uniform(-kmax, kmax)
        vals += rng.normal() * np.exp(-0.5 * ((grid.r_star - c) / width) ** 2 + 1j * k0 * grid.r_star
                                       + 1j * rng.uniform(0, 2 * np.pi))
    return WaveFunction(grid, vals)


def exp_identity_suite(ctx: Context) -> list[Check]:
    rng = np.random.default_rng(ctx.cfg["seed"])
    checks = []
    for label, psi in (("initial", ctx.initial()), ("random", band_limited_test_function(ctx.grid, rng))):
        res = dg.commutator_identity_check(psi, ctx.params, ctx.model)
        checks += [upper(f"commutator_{label}", res.operator, 1e-6),
                   upper(f"potential_commutator_{label}", res.potential_part, 1e-6),
                   upper(f"chain_rule_{label}", res.chain_rule, 1e-6)]
    s = np.linspace(-100.0, 100.0, 20001)
    worst_diff, worst_min = 0.0, math.inf
    for sigma in (0.6, 1.0, 1.4):
        closed, deriv = dg.commutator_remainder(s, sigma)
        worst_diff = max(worst_diff, float(np.max(np.abs(closed - deriv) / np.abs(closed))))
        worst_min = min(worst_min, float(closed.min()))
    checks += [upper("remainder_route_agreement", worst_diff, 1e-9),
               Check("remainder_minimum", worst_min, "> 0", worst_min > 0)]
    worst_id = max(max(sc.strichartz_exponents(p).identity_residuals()) for p in (3.6, 4.0, 5.0, 7.0))
    checks.append(upper("exponent_identities", worst_id, 1e-12))
    thr = sc.WAVE_OP_THRESHOLD
    flags_ok = (not sc.strichartz_exponents(thr).admissible_wave_op
                and sc.strichartz_exponents(np.nextafter(thr, 10)).admissible_wave_op
                and not sc.strichartz_exponents(4.0).admissible_completeness
                and sc.strichartz_exponents(np.nextafter(4.0, 10)).admissible_completeness)
    checks.append(Check("threshold_flags", float(flags_ok), "strict", flags_ok))
    return checks


RUNNERS = {
    "conservation": exp_conservation,
    "monotonicity": exp_monotonicity,
    "local-decay": exp_local_decay,
    "pseudoconformal": exp_pseudoconformal,
    "linf-decay": exp_linf_decay,
    "dispersive": exp_dispersive,
    "completeness": exp_completeness,
    "wave-operator": exp_wave_operator,
    "identity-suite": exp_identity_suite,
}

GUARDED = {"linf-decay": "t_end", "dispersive": "t_end", "completeness": "schedule",
           "wave-operator": "wave_op.t_max"}


def _regime_lines(ctx: Context) -> list[str]:
    m = ctx.model
    return [f"regime pseudoconformal_valid={m.pseudoconformal_valid} wave_op_valid={m.wave_op_valid} "
            f"completeness_valid={m.completeness_valid}"]


def guard_checks(ctx: Context) -> None:
    """Raise DomainGuardError if the configured run would outgrow the box."""
    key = GUARDED.get(ctx.cfg["experiment"])
    if key is None:
        return
    v = ctx.cfg[key]
    duration = max(v) if isinstance(v, tuple) else v
    sc.check_domain(ctx.initial(), duration, ctx.cfg["override_domain_guard"])


def run(cfg: ExperimentConfig) -> int:
    ctx = Context(cfg)
    ctx.out.mkdir(parents=True, exist_ok=True)
    try:
        checks = RUNNERS[cfg["experiment"]](ctx)
    except dg.DiagnosticsError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalGuardError as exc:
        (ctx.out / "summary.txt").write_text(
            "\n".join([f"# {c}" for c in ctx.header] + [f"GUARD: {exc}"]) + "\n", encoding="utf-8")
        log.error("numerical guard: %s", exc)
        return EXIT_GUARD
    lines = [f"# {c}" for c in ctx.header] + _regime_lines(ctx) + [c.line() for c in checks]
    ok = all(c.passed for c in checks)
    lines.append(f"OVERALL {'PASS' if ok else 'FAIL'}")
    (ctx.out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for c in checks:
        print(c.line())
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tortoise-nls", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "validate"):
        sp = sub.add_parser(name)
        sp.add_argument("config")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        ctx = Context(cfg)
        if cfg["initial_data"] == "file":
            ctx.initial()
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        try:
            guard_checks(ctx)
        except NumericalGuardError as exc:
            print(f"guard: {exc}", file=sys.stderr)
            return EXIT_GUARD
        print("config ok")
        for line in _regime_lines(ctx):
            print(line)
        return EXIT_OK
    try:
        return run(cfg)
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
