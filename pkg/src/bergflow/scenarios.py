"""Experiment scenarios: each turns a resolved configuration into metrics,
pass/fail assertions and CSV tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import family as fm
from .errors import ConfigError, NumericalError
from .flow import FLOW_COLUMNS, FlowState, flow_run, solve_fixed_point, sup_distance
from .functionals import MeasureFamily, i_pm
from .geometry import EllipticCurve, EllipticFamily, P1Symmetric, Weight
from .grid import LineGrid, PeriodicGrid2
from .quantization import (
    TRACE_COLUMNS,
    Quantizer,
    banach_prediction,
    bouche_tian_slope,
    double_scaling,
    iterate,
    solve_balanced,
)
from .report import fit_rate

PASS, FAIL, SKIPPED = "pass", "fail", "skipped"

# heat-equation refinement design
HEAT_DTS = (4e-3, 2e-3, 1e-3)
HEAT_T_MID = 0.02
# lattice spacing for the Weil-Petersson comparisons
WP_SPACING = 1e-2


@dataclass
class ScenarioResult:
    scenario: str
    metrics: dict = field(default_factory=dict)
    assertions: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def check(self, name: str, ok: bool) -> None:
        if name in self.assertions:
            raise ValueError(f"assertion {name!r} recorded twice")
        self.assertions[name] = PASS if ok else FAIL

    def skip(self, name: str, reason: str) -> None:
        self.assertions[name] = SKIPPED
        self.notes[name] = reason

    @property
    def passed(self) -> bool:
        return FAIL not in self.assertions.values()


# ---------------------------------------------------------------------------
# builders


def build_geometry(cfg: dict):
    if cfg["geometry"] == "elliptic":
        return EllipticCurve(complex(cfg["tau_re"], cfg["tau_im"]), cfg["degree"], PeriodicGrid2(cfg["nx"], cfg["ny"]))
    return P1Symmetric(cfg["degree"], LineGrid(cfg["line_n"], cfg["line_T"]))


def build_measure(cfg: dict, geom) -> MeasureFamily:
    amp = cfg["measure_amplitude"]
    base_geom, base = None, None
    if amp:
        if not isinstance(geom, EllipticCurve):
            raise ConfigError("measure_amplitude: the cosine base density needs geometry = elliptic")
        if abs(amp) >= 1:
            raise ConfigError("measure_amplitude: must lie in (-1, 1) for a positive density")
        x, _ = geom.grid.mesh
        base_geom, base = geom, 1 + amp * np.cos(2 * np.pi * x)
    return MeasureFamily(cfg["measure"], cfg["normalized"], base_geom, base)


def _profile(geom) -> np.ndarray:
    if isinstance(geom, EllipticCurve):
        x, _ = geom.grid.mesh
        return np.cos(2 * np.pi * x)
    return 1 / np.cosh(geom.t / 2) ** 2


def initial_weight(cfg: dict, geom, sign: float = 1.0, extra: float = 0.0) -> Weight:
    w = Weight(geom, sign * cfg["init_amplitude"] * _profile(geom) + cfg["init_offset"] + extra)
    if w.positivity_margin <= 0:
        raise ConfigError(f"init_amplitude: initial weight is not fiber-positive (margin {w.positivity_margin:.3g})")
    return w


def build_family(cfg: dict) -> EllipticFamily:
    tau = complex(cfg["tau_re"], cfg["tau_im"])
    slope = complex(cfg["tau_slope_re"], cfg["tau_slope_im"])
    coeffs = (tau, slope) if slope else (tau,)
    reach = 1.5 * cfg["hs"] * max(cfg["radius"], 2)
    try:
        return EllipticFamily(coeffs, cfg["degree"], PeriodicGrid2(cfg["nx"], cfg["ny"]), radius=max(0.2, reach))
    except ValueError as exc:
        raise ConfigError(f"family: {exc}") from exc


def _trace_table(trace) -> tuple[list[str], list[list]]:
    return list(TRACE_COLUMNS), trace.rows


# ---------------------------------------------------------------------------
# scenarios on a single curve


def run_flow(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("flow")
    geom = build_geometry(cfg)
    fam = build_measure(cfg, geom)
    w0 = initial_weight(cfg, geom)
    newton = solve_fixed_point(fam, w0)
    res.check("newton_residual", newton.residual <= 1e-11)
    modulo = fam.sigma == 0 or fam.normalized
    state = FlowState(w0, fam, dt=cfg["dt"], scheme=cfg["scheme"])
    rep = flow_run(state, cfg["t_end"], newton.weight.u, modulo, cfg["record_every"])
    if rep.failed:
        raise NumericalError(f"flow failed at t={rep.final.t:.4g}: {rep.message}")
    for name, ok in rep.checks.items():
        res.check(name, ok)
    dist = rep.rows[-1][FLOW_COLUMNS.index("sup_dist")]
    if fam.sigma < 0 and not fam.normalized:
        res.skip("converges_to_fixed_point", "the unnormalized anticanonical flow is unstable along constants")
    else:
        res.check("converges_to_fixed_point", dist <= cfg["converge_tol"])
    res.metrics.update(
        t_final=rep.final.t,
        sup_distance_to_newton=dist,
        final_residual=rep.rows[-1][FLOW_COLUMNS.index("residual")],
        newton_iterations=newton.iterations,
        newton_residual=newton.residual,
        compared_modulo_constants=modulo,
        worst_monotone_slack=rep.worst_slack,
    )
    res.tables["flow.csv"] = (list(FLOW_COLUMNS), rep.rows)
    return res


def run_bergman(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("bergman")
    geom = build_geometry(cfg)
    fam = build_measure(cfg, geom)
    w0 = initial_weight(cfg, geom)
    k = cfg["k"]
    trace, _ = iterate(w0, fam, k, m_max=cfg["m_max"], tol=cfg["tol"])
    for name, ok in trace.checks.items():
        res.check(name, ok)
    changes = [r[1] for r in trace.rows]
    if fam.sigma > 0 and not fam.normalized:
        if trace.balanced:
            predicted = banach_prediction(changes[0], k, cfg["tol"])
            res.metrics["banach_prediction"] = predicted
            res.check("iterations_within_banach_bound", trace.balanced_at <= 2 * predicted)
        else:
            res.check("iterations_within_banach_bound", False)
    else:
        res.skip("iterations_within_banach_bound", "the step-count bound applies to the strictly contracting twisted iteration")
    res.metrics.update(
        k=k,
        steps=len(trace.rows) - 1,
        balanced=trace.balanced,
        balanced_at=trace.balanced_at,
        last_change=changes[-1],
        worst=trace.worst,
    )
    res.tables["iteration.csv"] = _trace_table(trace)
    return res


def run_balanced(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("balanced")
    geom = build_geometry(cfg)
    fam = build_measure(cfg, geom)
    k, tol = cfg["k"], cfg["tol"]
    q = Quantizer(geom, k)
    inits = [initial_weight(cfg, geom), initial_weight(cfg, geom, sign=-1.0, extra=0.25)]
    runs = [solve_balanced(fam, k, w, tol=tol, m_max=max(cfg["m_max"], 1), quantizer=q) for w in inits]
    res.check("balanced_residual", all(r.residual <= 2 * tol for r in runs))
    a, b = runs[0].weight.u, runs[1].weight.u
    agreement = sup_distance(a, b, modulo_constants=fam.sigma == 0)
    res.check("unique_balanced_weight", agreement <= 1e-8)
    if fam.sigma != 0 and not fam.normalized:
        res.check("limit_is_normalized", abs(i_pm(runs[0].weight, fam)) <= 1e-8)
    else:
        res.skip("limit_is_normalized", "only the unnormalized canonical iteration fixes the constant")
    if fam.normalized:
        H = q.hilb(runs[0].weight, fam)
        H_next = q.hilb(q.fs(H), fam)
        f0, f1 = q.f_functional(H, fam), q.f_functional(H_next, fam)
        res.metrics["F_k_change"] = abs(f1 - f0)
        res.check("F_k_stationary", abs(f1 - f0) <= 1e-12 * (1 + abs(f0)))
    else:
        res.skip("F_k_stationary", "the quantized functional is defined with the normalized family")
    res.metrics.update(
        k=k,
        iterations=[r.iterations for r in runs],
        residuals=[r.residual for r in runs],
        agreement=agreement,
        I_normalized=i_pm(runs[0].weight, fam),
    )
    res.tables["iteration_a.csv"] = _trace_table(runs[0].trace)
    res.tables["iteration_b.csv"] = _trace_table(runs[1].trace)
    return res


def run_double_scaling(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("double-scaling")
    geom = build_geometry(cfg)
    fam = build_measure(cfg, geom)
    w0 = initial_weight(cfg, geom)
    t_star = cfg["t_star"]
    table = double_scaling(w0, fam, cfg["k_list"], t_star, dt=cfg["dt"])
    dev = table.column("deviation")
    ks = table.column("k")
    res.tables["double_scaling.csv"] = (list(table.columns), table.rows)
    res.metrics.update(t_star=t_star, deviations=dev.tolist())
    names = ("ratio_band", "gain_over_range", "decreasing", "under_envelope")
    if t_star == 0:
        res.check("zero_deviation_at_start", bool(np.all(dev <= 1e-14)))
        for name in names:
            res.skip(name, "no evolution at t_star = 0")
        return res
    res.skip("zero_deviation_at_start", "t_star > 0")
    ratios = table.ratios
    res.metrics["ratios"] = ratios.tolist()
    if len(ks) >= 3:
        fit = fit_rate(ks, dev, "power")
        res.metrics.update(slope=fit.rate, r2=fit.r2)
    if fam.sigma == 0:
        doubling = bool(np.allclose(ks[1:] / ks[:-1], 2))
        if doubling:
            res.check("ratio_band", bool(np.all((ratios >= 0.4) & (ratios <= 0.6))))
        else:
            res.skip("ratio_band", "levels are not successive doublings")
        if ks[-1] >= 4 * ks[0]:
            res.check("gain_over_range", dev[0] / dev[-1] >= 3)
        else:
            res.skip("gain_over_range", "k range narrower than a factor 4")
        res.skip("decreasing", "checked through the ratio band")
        res.skip("under_envelope", "the exponential envelope belongs to the canonical settings")
    else:
        res.skip("ratio_band", "the fixed-ratio law belongs to the fixed-measure setting")
        res.skip("gain_over_range", "the fixed-ratio law belongs to the fixed-measure setting")
        A, b = table.envelope()
        res.metrics.update(envelope_A=A, envelope_b=b)
        res.check("decreasing", bool(np.all(np.diff(dev) < 0)))
        res.check("under_envelope", table.under_envelope())
    return res


def run_bouche_tian(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("bouche-tian")
    geom = build_geometry(cfg)
    fam = build_measure(cfg, geom)
    w0 = initial_weight(cfg, geom)
    slope, r2, errors = bouche_tian_slope(w0, fam, cfg["k_list"])
    res.check("slope_in_band", -1.15 <= slope <= -0.85)
    res.check("fit_quality", r2 >= 0.98)
    res.metrics.update(slope=slope, r2=r2)
    res.tables["bergman_error.csv"] = (["k", "error"], [[k, errors[k]] for k in sorted(errors)])
    return res


# ---------------------------------------------------------------------------
# family scenarios


def _flow_snapshot_steps(cfg: dict) -> list[int]:
    n = int(round(cfg["t_end"] / cfg["dt"]))
    return sorted(set(list(range(0, n + 1, cfg["record_every"])) + [n]))


def run_family_flow(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("family-flow")
    family = build_family(cfg)
    setting, order = cfg["setting"], cfg["order"]
    if setting == "twisted" and not family.is_trivial:
        raise ConfigError("setting: the twisted family flow is implemented for trivial families (tau_slope = 0)")
    fw = fm.positivity_start(family, cfg["hs"], cfg["radius"], cfg["positivity_eps"], order)
    steps = _flow_snapshot_steps(cfg)
    snaps = fm.family_flow(fw, setting, cfg["dt"], steps)
    rows = [[s * cfg["dt"], fm.min_c(snaps[s], order)] for s in steps]
    res.tables["positivity.csv"] = (["t", "min_c"], rows)
    mins = np.array([r[1] for r in rows])
    res.metrics["min_c"] = {"initial": float(mins[0]), "final": float(mins[-1]), "lowest": float(mins.min())}
    if setting == "cy":
        res.check("positivity_conserved", bool(mins.min() >= -1e-8))
        res.skip("strict_positivity_by_0.1", "strict positivity is a property of the twisted flow")
    else:
        res.skip("positivity_conserved", "the twisted flow is checked for strict positivity")
        late = [r[1] for r in rows if r[0] >= 0.1 - 1e-12]
        if late:
            res.check("strict_positivity_by_0.1", min(late) > 0)
        else:
            res.skip("strict_positivity_by_0.1", "t_end is below 0.1")

    dt_sups = fm.heat_residual_in_dt(family, setting, HEAT_DTS, HEAT_T_MID, cfg["hs"])
    hs_list = [4 * cfg["hs"], 2 * cfg["hs"], cfg["hs"]]
    h_sups = fm.heat_residual_in_h(family, setting, hs_list)
    dt_order = fit_rate(HEAT_DTS, dt_sups, "power").rate
    h_order = fit_rate(hs_list, h_sups, "power").rate
    res.check("heat_order_dt", dt_order >= 1.0)
    res.check("heat_order_h", h_order >= 1.8)
    res.metrics.update(heat_order_dt=dt_order, heat_order_h=h_order)
    dt_rows = [[dt, s] for dt, s in zip(HEAT_DTS, dt_sups)]
    if setting == "twisted":
        ablated = fm.heat_residual_in_dt(family, setting, HEAT_DTS, HEAT_T_MID, cfg["hs"], ablate=True)
        ablated_order = fit_rate(HEAT_DTS, ablated, "power").rate
        res.metrics["ablated_order_dt"] = ablated_order
        res.check("ablation_breaks_convergence", ablated_order < 0.5 and ablated[-1] > 10 * dt_sups[-1])
        dt_rows = [r + [a] for r, a in zip(dt_rows, ablated)]
        res.tables["heat_dt.csv"] = (["dt", "residual", "residual_ablated"], dt_rows)
    else:
        res.skip("ablation_breaks_convergence", "the Calabi-Yau equation has no zeroth-order c term")
        res.tables["heat_dt.csv"] = (["dt", "residual"], dt_rows)
    res.tables["heat_h.csv"] = (["hs", "residual"], [[h, s] for h, s in zip(hs_list, h_sups)])
    return res


def run_family_bergman(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("family-bergman")
    family = build_family(cfg)
    order, k = cfg["order"], cfg["k"]
    fw = fm.positivity_start(family, cfg["hs"], cfg["radius"], cfg["positivity_eps"], order)
    seq = fm.family_bergman(fw, k, cfg["m_max"], order)
    rows = []
    for m, cur in enumerate(seq):
        margins, lows, wps = [], [], []
        for ctr in cur.centers(order):
            low = float(fm.c_function(cur, ctr, order).min())
            wp = float(fm.wp_density(family, cur.s_at(*ctr)))
            lows.append(low)
            wps.append(wp)
            margins.append(low + m / k * wp)
        rows.append([m, min(lows), min(wps), min(margins)])
    res.tables["family_bergman.csv"] = (["m", "min_c", "min_wp", "margin"], rows)
    res.check("curvature_lower_bound", min(r[3] for r in rows) >= -1e-6)

    wp = fm.wp_form(family, WP_SPACING)
    deligne = fm.deligne_curvature(fm.flat_normalized(family, WP_SPACING))
    res.check("wp_routes_agree", abs(wp.hodge - wp.harmonic) <= 1e-6)
    res.check("wp_nonnegative", min(wp.hodge, wp.harmonic) >= -1e-12)
    # the fiber integral carries the curvature mass V = degree
    res.check("deligne_matches_wp", abs(deligne / family.degree - wp.hodge) <= 1e-6)
    res.metrics.update(
        k=k,
        lowest_margin=min(r[3] for r in rows),
        wp_hodge=wp.hodge,
        wp_harmonic=wp.harmonic,
        wp_closed_form=wp.closed_form,
        deligne=deligne,
    )
    return res


def run_psh_check(cfg: dict) -> ScenarioResult:
    res = ScenarioResult("psh-check")
    family = build_family(cfg)
    order, k = cfg["order"], cfg["k"]
    fw = fm.positivity_start(family, cfg["hs"], cfg["radius"], cfg["positivity_eps"], order)
    out = fm.family_bergman(fw, k, 1, order, adjoint=True)[-1]
    rows = []
    for i, j in out.centers(order):
        rows.append([i, j, float(fm.total_hessian(out, (i, j), order).ss.min())])
    lowest = min(r[2] for r in rows)
    res.check("direct_image_psh", lowest >= -1e-8)
    res.metrics.update(k=k, lowest_phi_ss=lowest)
    res.tables["psh.csv"] = (["i", "j", "min_phi_ss"], rows)
    return res


RUNNERS = {
    "flow": run_flow,
    "bergman": run_bergman,
    "balanced": run_balanced,
    "double-scaling": run_double_scaling,
    "bouche-tian": run_bouche_tian,
    "family-flow": run_family_flow,
    "family-bergman": run_family_bergman,
    "psh-check": run_psh_check,
}


def run_scenario(cfg: dict) -> ScenarioResult:
    return RUNNERS[cfg["scenario"]](cfg)


def finite_or_none(value):
    """JSON-safe copy: NaN and infinities become ``None``."""
    if isinstance(value, dict):
        return {k: finite_or_none(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [finite_or_none(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value
