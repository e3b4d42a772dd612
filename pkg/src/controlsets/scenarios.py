"""Built-in systems, figure presets and parameter sweeps.

A :class:`Scenario` bundles a system, a parameter point, a grid, named anchor
points and the property tags expected to hold.  :func:`run_scenario` runs the
full pipeline for it and evaluates every tag without letting one failure stop
the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (CrossSection, classify_homoclinic_case, find_equilibrium, find_limit_cycle,
                       homoclinic_orbit, split_function)
from .dynamics import TOL_GRID, ControlAffineSystem
from .errors import ControlSetsError, UnknownScenario
from .reachset import (STEP_T, ControlSetResult, Grid, classify_invariance, control_set,
                       periodic_orbit_certificate, reach_fixpoint, sample_controls, seed_cells)
from .reachset.expand import MAX_EXTEND, REFINE

TAGS = ("d0_contains_homoclinic", "d0_equals_d1", "d1_invariant", "d0_variant", "d0_collapsed",
        "controlled_cycle_exists", "no_uncontrolled_cycle", "uncontrolled_cycle_exists")
COVERAGE = 0.99
COLLAPSE = 0.5
REFERENCE_SAMPLES = 200
DENSE_SAMPLES = 2000

SANDSTEDE_DRIFT = ("-x+2*y+x^2", "(2-alpha)*x - y - 3*x^2 + (3/2)*x*y")
SANDSTEDE_WINDOW = ((-0.2, -0.6), (1.2, 0.6))
SANDSTEDE_ANCHORS = {"y": (1.0, 0.0), "saddle": (0.0, 0.0), "focus": (2.0 / 3.0, 1.0 / 9.0)}
SANDSTEDE_POINTS = ((0.0, ("d0_contains_homoclinic", "controlled_cycle_exists")),
                    (-0.017241, ("d0_contains_homoclinic", "controlled_cycle_exists",
                                 "no_uncontrolled_cycle")),
                    (0.01, ("uncontrolled_cycle_exists", "d0_contains_homoclinic", "d0_equals_d1")),
                    (0.03, ("uncontrolled_cycle_exists", "d1_invariant", "d0_variant")),
                    (0.07, ("uncontrolled_cycle_exists", "d1_invariant", "d0_collapsed")))


def sandstede_system() -> ControlAffineSystem:
    return ControlAffineSystem.from_strings(("x", "y"), SANDSTEDE_DRIFT, (("0", "1"),), (-1.0,), (1.0,),
                                            name="sandstede")


def sandstede_section() -> CrossSection:
    """Section through a point of the lower branch of the homoclinic loop, along the curve gradient."""
    base = np.array([0.5, -0.5 * math.sqrt(0.5)])
    grad = np.array([2 * base[0] - 3 * base[0] ** 2, -2 * base[1]])
    return CrossSection(base, grad / np.linalg.norm(grad))


def sandstede_grid(cells: int = 150) -> Grid:
    return Grid(SANDSTEDE_WINDOW[0], SANDSTEDE_WINDOW[1], (cells, cells))


@dataclass(frozen=True, eq=False)
class Scenario:
    """System, parameter point, grid, named anchors and expected property tags.

    Anchors used by the pipeline: ``saddle`` and ``y`` (a point on the
    homoclinic loop), optionally ``focus``.  ``reference_alpha`` is the
    parameter of the homoclinic loop that serves as reference curve.
    """

    name: str
    system: ControlAffineSystem
    alpha: float
    rho: float
    grid: Grid
    anchors: dict
    expected: tuple = ()
    section: CrossSection | None = None
    reference_alpha: float = 0.0
    step_T: float = STEP_T
    controls: tuple | None = None
    tol: float = TOL_GRID
    delta: float = 0.05
    reach_options: dict = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        bad = [t for t in self.expected if t not in TAGS]
        if bad:
            raise ValueError(f"unknown tag {bad[0]!r}")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        for key, p in self.anchors.items():
            p = np.asarray(p, dtype=float)
            if p.shape != (self.grid.d,) or not self.grid.from_points(p[None, :]):
                raise ValueError(f"anchor {key!r} lies outside the grid")


def _sandstede_scenarios():
    sys = sandstede_system()
    section = sandstede_section()
    out = []
    for k, (alpha, tags) in enumerate(SANDSTEDE_POINTS, start=1):
        out.append(Scenario(f"sandstede_fig{k}", sys, alpha, 0.01, sandstede_grid(),
                            dict(SANDSTEDE_ANCHORS), tags, section,
                            description=f"Sandstede example at alpha={alpha}, rho=0.01"))
    return out


def saddle3d_system() -> ControlAffineSystem:
    """Planar example extended by a strongly contracting ``z`` direction (eigenvalues 1, -3, -4)."""
    return ControlAffineSystem.from_strings(("x", "y", "z"), SANDSTEDE_DRIFT + ("-4*z",),
                                            (("0", "1", "0"),), (-1.0,), (1.0,), name="saddle3d_demo")


def saddlefocus3d_system() -> ControlAffineSystem:
    """Real unstable direction plus a stable focus in ``(y, z)``: eigenvalues 1 and -2 +- i."""
    drift = ("x - x^2", "(alpha-2)*y - z", "y + (alpha-2)*z")
    return ControlAffineSystem.from_strings(("x", "y", "z"), drift, (("0", "1", "0"),), (-1.0,), (1.0,),
                                            name="saddlefocus3d_demo")


def _demo3d(name, sys):
    grid = Grid((-0.2, -0.6, -0.3), (1.2, 0.6, 0.3), (60, 60, 60))
    return [Scenario(name, sys, 0.0, 0.01, grid, {"saddle": (0.0, 0.0, 0.0)},
                     reach_options={"refine": 2},
                     description="constructed 3D system exercising case dispatch and 3D grids")]


BUILTINS = {
    "sandstede": _sandstede_scenarios,
    "saddle3d_demo": lambda: _demo3d("saddle3d_demo", saddle3d_system()),
    "saddlefocus3d_demo": lambda: _demo3d("saddlefocus3d_demo", saddlefocus3d_system()),
}


def builtin(name: str) -> list[Scenario]:
    """Preset scenarios; raises :class:`UnknownScenario` for other names."""
    try:
        return BUILTINS[name]()
    except KeyError:
        raise UnknownScenario(f"no built-in scenario set named {name!r}; known: {sorted(BUILTINS)}") from None


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class TagResult:
    tag: str
    passed: bool
    detail: str


@dataclass(eq=False)
class ScenarioReport:
    scenario: Scenario
    tags: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    sets: dict = field(default_factory=dict)
    cycle: object = None
    reference: np.ndarray | None = None
    certificate: object = None
    errors: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tags.values())

    def text(self) -> str:
        s = self.scenario
        g = s.grid
        head = {
            "scenario": s.name, "system": s.system.name, "alpha": _num(s.alpha), "rho": _num(s.rho),
            "grid": "x".join(str(c) for c in g.shape) + " on " + " x ".join(
                f"[{_num(a)}, {_num(b)}]" for a, b in zip(g.lower, g.upper)),
            "step_T": _num(s.step_T), "tol": _num(s.tol),
            "controls": "; ".join(",".join(_num(v) for v in u)
                                  for u in sample_controls(s.system, s.rho, s.controls)),
            "reach_options": ", ".join(f"{k}={v}" for k, v in sorted(_reach_defaults(s).items())),
            "delta": _num(s.delta),
        }
        blocks = ["\n".join(f"{k}: {v}" for k, v in head.items())]
        blocks.append("\n".join(f"{k}: {_fmt_metric(v)}" for k, v in self.metrics.items()))
        for t in self.tags.values():
            blocks.append(f"tag: {t.tag}\nstatus: {'pass' if t.passed else 'fail'}\ndetail: {t.detail}")
        for step, msg in self.errors.items():
            blocks.append(f"error: {step}\nmessage: {msg}")
        return "\n\n".join(b for b in blocks if b) + "\n"


def _reach_defaults(s: Scenario) -> dict:
    opts = {"launch": "lattice", "refine": REFINE, "max_extend": MAX_EXTEND}
    opts.update(s.reach_options)
    return opts


def _num(v) -> str:
    return f"{float(v):.12g}"


def _fmt_metric(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return _num(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return ", ".join(_fmt_metric(x) for x in v)
    if isinstance(v, complex):
        return f"{v.real:.12g}{v.imag:+.12g}j"
    return str(v)


def reference_loop(sys, alpha, saddle_anchor, window, n=DENSE_SAMPLES) -> np.ndarray:
    """``n`` arc-length samples of the homoclinic loop of the saddle near ``saddle_anchor``."""
    eq = find_equilibrium(sys, alpha, saddle_anchor)
    return homoclinic_orbit(sys, alpha, eq, window=window).samples(n)


def _guard(report, step, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ControlSetsError, ValueError, ArithmeticError) as exc:
        report.errors[step] = f"{type(exc).__name__}: {exc}"
        return None


def _d0(s: Scenario, report) -> ControlSetResult | None:
    """Control set around the loop: anchored at ``y``, re-anchored at the saddle when that misses it."""
    opts = dict(step_T=s.step_T, controls=s.controls, tol=s.tol, **s.reach_options)
    saddle = s.anchors["saddle"]
    cs = None
    if "y" in s.anchors:
        cs = _guard(report, "d0", control_set, s.system, s.alpha, s.rho, s.grid, s.anchors["y"],
                    anchor="homoclinic", **opts)
    if cs is None or not cs.cells.contains_point(saddle):
        report.errors.pop("d0", None)
        cs = _guard(report, "d0", control_set, s.system, s.alpha, s.rho, s.grid, saddle,
                    anchor="equilibrium", **opts)
        report.metrics["d0_anchor"] = "saddle"
    else:
        report.metrics["d0_anchor"] = "y"
    return cs


def _cycle(s: Scenario, report):
    if s.section is None:
        return None
    res = _guard(report, "split", split_function, s.system, s.alpha, s.section,
                 saddle_seed=s.anchors["saddle"], window=s.grid.window, details=True)
    if res is None:
        return None
    beta, det = res
    report.metrics["beta"] = float(beta)
    try:
        cyc = find_limit_cycle(s.system, s.alpha, s.section, det["crossing_u"], window=s.grid.window)
    except ControlSetsError as exc:
        report.metrics["cycle"] = f"none ({type(exc).__name__})"
        return None
    report.metrics["cycle"] = "stable" if cyc.stable else "unstable"
    report.metrics["cycle_period"] = cyc.period
    report.metrics["floquet_abs"] = [float(abs(m)) for m in cyc.floquet_multipliers]
    return cyc


def evaluate(s: Scenario, certify: bool | None = None, reference=None) -> ScenarioReport:
    """Run the pipeline for ``s`` without writing files."""
    report = ScenarioReport(s)
    if s.grid.d != 2:
        return _evaluate_spatial(s, report)
    sys, alpha = s.system, s.alpha
    opts = dict(step_T=s.step_T, controls=s.controls, tol=s.tol, **s.reach_options)
    saddle = _guard(report, "saddle", find_equilibrium, sys, alpha, s.anchors["saddle"])
    if saddle is not None:
        report.metrics["saddle"] = [float(v) for v in saddle.location]
        report.metrics["saddle_eigenvalues"] = [complex(w) for w in saddle.eigenvalues]
        report.metrics["saddle_quantity"] = saddle.saddle_quantity
    if "focus" in s.anchors:
        focus = _guard(report, "focus", find_equilibrium, sys, alpha, s.anchors["focus"])
        if focus is not None:
            report.metrics["focus"] = [float(v) for v in focus.location]
            report.metrics["focus_kind"] = focus.kind.value
    if reference is None:
        reference = _guard(report, "reference", reference_loop, sys, s.reference_alpha,
                           s.anchors["saddle"], s.grid.window)
    report.reference = reference
    cyc = _cycle(s, report)
    report.cycle = cyc

    d0 = _d0(s, report)
    if d0 is not None:
        d0 = _guard(report, "d0_invariance", classify_invariance, sys, alpha, s.rho, s.grid, d0, **opts) or d0
        report.sets["d0"] = d0
    if cyc is not None:
        d1 = _guard(report, "d1", control_set, sys, alpha, s.rho, s.grid, cyc.points[0],
                    mode="forward_only", anchor="limit_cycle", **opts)
        if d1 is not None:
            d1 = _guard(report, "d1_invariance", classify_invariance, sys, alpha, s.rho, s.grid, d1,
                        **opts) or d1
            report.sets["d1"] = d1
    if "focus" in s.anchors:
        d2 = _guard(report, "d2", control_set, sys, alpha, s.rho, s.grid, s.anchors["focus"],
                    mode="reversed_only", anchor="equilibrium", **opts)
        if d2 is not None:
            report.sets["d2"] = d2
    for key, cs in report.sets.items():
        report.metrics[f"{key}_cells"] = len(cs)
        report.metrics[f"{key}_kind"] = cs.kind
    if "d0" in report.sets and "d1" in report.sets:
        report.metrics["d0_d1_common_cells"] = len(report.sets["d0"].cells & report.sets["d1"].cells)

    certify = "controlled_cycle_exists" in s.expected if certify is None else certify
    if certify and d0 is not None and reference is not None and "y" in s.anchors:
        cert = _guard(report, "certificate", periodic_orbit_certificate, sys, alpha, s.rho, s.grid, d0,
                      s.anchors["y"], s.delta, reference=reference, saddle=s.anchors["saddle"],
                      step_T=s.step_T, controls=s.controls, tol=s.tol)
        report.certificate = cert
        if cert is not None:
            report.metrics["certificate_period"] = cert.period
            report.metrics["certificate_closure"] = cert.closure
            report.metrics["certificate_hausdorff"] = cert.hausdorff
    for tag in s.expected:
        report.tags[tag] = _evaluate_tag(tag, report)
    return report


def _coverage(cs, points):
    return float(cs.cells.contains_points(points).mean())


def _evaluate_tag(tag: str, r: ScenarioReport) -> TagResult:
    s = r.scenario
    d0, d1 = r.sets.get("d0"), r.sets.get("d1")
    ref = None if r.reference is None else r.reference[:: max(1, len(r.reference) // REFERENCE_SAMPLES)]
    try:
        if tag == "d0_contains_homoclinic":
            if d0 is None or ref is None:
                return TagResult(tag, False, "D0 or the reference loop is missing")
            cov = _coverage(d0, ref)
            sad = d0.cells.contains_point(s.anchors["saddle"])
            return TagResult(tag, cov >= COVERAGE and sad, f"loop coverage {cov:.4f}, saddle cell {sad}")
        if tag == "d0_equals_d1":
            if d0 is None or r.cycle is None:
                return TagResult(tag, False, "D0 or the limit cycle is missing")
            cov = _coverage(d0, r.cycle.points)
            return TagResult(tag, cov == 1.0, f"cycle samples in D0: {cov:.4f}")
        if tag == "d1_invariant":
            if d1 is None:
                return TagResult(tag, False, "D1 is missing")
            inv = d1.details.get("invariance", {})
            return TagResult(tag, d1.kind == "invariant",
                             f"kind {d1.kind}, cells outside hull {inv.get('outside_cells')}, "
                             f"escaped {inv.get('escaped')}")
        if tag == "d0_variant":
            if d0 is None:
                return TagResult(tag, False, "D0 is missing")
            common = len(d0.cells & d1.cells) if d1 is not None else 0
            return TagResult(tag, d0.kind == "variant" and common == 0,
                             f"kind {d0.kind}, cells shared with D1 {common}")
        if tag == "d0_collapsed":
            if d0 is None or ref is None:
                return TagResult(tag, False, "D0 or the reference loop is missing")
            cov = _coverage(d0, ref)
            sad = d0.cells.contains_point(s.anchors["saddle"])
            return TagResult(tag, 1.0 - cov >= COLLAPSE and sad,
                             f"loop samples excluded {1.0 - cov:.4f}, saddle cell {sad}")
        if tag == "controlled_cycle_exists":
            c = r.certificate
            if c is None:
                return TagResult(tag, False, r.errors.get("certificate", "no certificate"))
            return TagResult(tag, True, f"period {c.period:.6g}, closure {c.closure:.3g}, "
                                        f"Hausdorff {c.hausdorff:.4g}")
        if tag == "no_uncontrolled_cycle":
            return TagResult(tag, r.cycle is None and "beta" in r.metrics,
                             str(r.metrics.get("cycle", "cycle search did not run")))
        if tag == "uncontrolled_cycle_exists":
            ok = r.cycle is not None and r.cycle.stable
            return TagResult(tag, ok, str(r.metrics.get("cycle", "cycle search did not run")))
    except (ControlSetsError, ValueError) as exc:
        return TagResult(tag, False, f"{type(exc).__name__}: {exc}")
    raise ValueError(f"unknown tag {tag!r}")


def _evaluate_spatial(s: Scenario, report: ScenarioReport) -> ScenarioReport:
    eq = _guard(report, "saddle", find_equilibrium, s.system, s.alpha, s.anchors["saddle"])
    if eq is not None:
        report.metrics["saddle"] = [float(v) for v in eq.location]
        report.metrics["saddle_eigenvalues"] = [complex(w) for w in eq.eigenvalues]
        report.metrics["saddle_kind"] = eq.kind.value
        report.metrics["homoclinic_case"] = classify_homoclinic_case(eq).value
    info = _guard(report, "reach", reach_fixpoint, s.system, s.alpha, s.rho, s.grid,
                  seed_cells(s.grid, [s.anchors["saddle"]]), s.step_T, s.controls, False, s.tol,
                  **s.reach_options)
    if info is not None:
        cs = ControlSetResult(info.cells, "variant", "equilibrium", s.anchors["saddle"], s.alpha, s.rho,
                              forward=info)
        report.sets["reach"] = cs
        report.metrics["reach_cells"] = len(info.cells)
        report.metrics["reach_escaped"] = info.escaped
    return report


def _write_points(path: Path, points):
    P = np.asarray(points, dtype=float)
    path.write_text("".join(",".join(f"{v:.12g}" for v in row) + "\n" for row in P))


def write_artifacts(report: ScenarioReport, out_dir) -> list[Path]:
    """Cell CSVs, sample CSVs, rasters and ``report.txt`` under ``out_dir``."""
    from .cli.raster import emit_raster

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, cs in report.sets.items():
        p = out / f"{key}.csv"
        cs.cells.write_csv(p)
        paths.append(p)
    if report.cycle is not None:
        paths.append(out / "cycle.csv")
        _write_points(paths[-1], report.cycle.points)
    if report.reference is not None:
        paths.append(out / "reference.csv")
        _write_points(paths[-1], report.reference)
    if report.certificate is not None:
        paths.append(out / "certificate.csv")
        _write_points(paths[-1], report.certificate.trajectory.states)
    if report.scenario.grid.d == 2:
        layers = [report.sets[k].cells for k in ("d0", "d1", "d2") if k in report.sets]
        paths.append(emit_raster(layers, out / "raster.pgm", "pgm", grid=report.scenario.grid))
        lines = [P for P in (report.reference, None if report.cycle is None else report.cycle.points)
                 if P is not None]
        paths.append(emit_raster(layers, out / "raster.svg", "svg", grid=report.scenario.grid,
                                 trajectories=lines))
    paths.append(out / "report.txt")
    paths[-1].write_text(report.text())
    report.artifacts = paths
    return paths


def run_scenario(s: Scenario, out_dir=None, certify: bool | None = None) -> ScenarioReport:
    """Pipeline for ``s`` plus, when ``out_dir`` is given, the artifacts of :func:`write_artifacts`."""
    report = evaluate(s, certify)
    if out_dir is not None:
        write_artifacts(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# sweeps

# |beta| below this is a connection at integration accuracy
BETA_ZERO = 1e-8
SWEEP_HEADER = ("alpha", "rho", "beta_sign", "cycle", "d0_cells", "d1_cells", "d2_cells", "d0_kind",
                "d1_kind", "coincide")


@dataclass(eq=False)
class SweepTable:
    rows: list
    boundaries: dict
    errors: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = [",".join(SWEEP_HEADER)]
        for row in self.rows:
            lines.append(",".join(str(row[k]) for k in SWEEP_HEADER))
        for rho, alpha in sorted(self.boundaries.items()):
            lines.append(f"# boundary rho={_num(rho)} alpha={'n/a' if alpha is None else _num(alpha)}")
        return "\n".join(lines) + "\n"


def _sign(beta: float) -> str:
    if abs(beta) < BETA_ZERO:
        return "0"
    return "+" if beta > 0 else "-"


def _row(report: ScenarioReport) -> dict:
    s, m = report.scenario, report.metrics
    beta = m.get("beta")
    d1 = report.sets.get("d1")
    row = {
        "alpha": _num(s.alpha), "rho": _num(s.rho),
        "beta_sign": "error" if beta is None else _sign(beta),
        "cycle": str(m.get("cycle", "error")).split(" ")[0],
        "d0_cells": m.get("d0_cells", "error"), "d1_cells": m.get("d1_cells", "n/a"),
        "d2_cells": m.get("d2_cells", "error"), "d0_kind": m.get("d0_kind", "error"),
        "d1_kind": m.get("d1_kind", "n/a"),
    }
    if d1 is None or "d0" not in report.sets:
        row["coincide"] = "n/a"
    else:
        row["coincide"] = "true" if m["d0_d1_common_cells"] > 0 else "false"
    return row


def sweep(sys: ControlAffineSystem, alpha_list, rho_list, grid: Grid, anchors=None, section=None,
          reference_alpha: float = 0.0, step_T: float = STEP_T, controls=None, tol: float = TOL_GRID,
          out_dir=None, **reach_options) -> SweepTable:
    """Per ``(alpha, rho)``: split sign, cycle, D0/D1/D2 sizes and kinds, coincidence of D0 and D1.

    Rows are sorted by ``(alpha, rho)``.  ``boundaries`` maps each ``rho`` to
    the smallest ``alpha`` at which D0 and D1 are found distinct (``None`` if
    never).  Errors are recorded per row.  With ``out_dir`` each row writes
    its artifacts to its own subdirectory and the table goes to ``sweep.csv``.
    """
    anchors = dict(SANDSTEDE_ANCHORS if anchors is None else anchors)
    rows, errors = [], {}
    reference = None
    if alpha_list and rho_list:
        try:
            reference = reference_loop(sys, reference_alpha, anchors["saddle"], grid.window)
        except ControlSetsError as exc:
            errors["reference"] = f"{type(exc).__name__}: {exc}"
    boundaries = {float(r): None for r in rho_list} if alpha_list else {}
    for alpha in sorted(float(a) for a in alpha_list):
        for rho in sorted(float(r) for r in rho_list):
            s = Scenario(f"sweep_a{alpha:g}_r{rho:g}", sys, alpha, rho, grid, anchors, (), section,
                         reference_alpha, step_T, None if controls is None else tuple(controls), tol,
                         reach_options=reach_options)
            report = evaluate(s, certify=False, reference=reference)
            if out_dir is not None:
                write_artifacts(report, Path(out_dir) / s.name)
            row = _row(report)
            rows.append(row)
            if report.errors:
                errors[(alpha, rho)] = dict(report.errors)
            if row["coincide"] == "false" and boundaries[rho] is None:
                boundaries[rho] = alpha
    table = SweepTable(rows, boundaries, errors)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "sweep.csv").write_text(table.to_csv())
    return table


__all__ = [
    "BUILTINS", "SANDSTEDE_ANCHORS", "SANDSTEDE_WINDOW", "SWEEP_HEADER", "Scenario", "ScenarioReport",
    "SweepTable", "TAGS", "TagResult", "builtin", "evaluate", "reference_loop", "run_scenario",
    "saddle3d_system", "saddlefocus3d_system", "sandstede_grid", "sandstede_section",
    "sandstede_system", "sweep", "write_artifacts",
]
