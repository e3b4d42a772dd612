"""``controlsets`` command line.

Exit status: 0 on success, 1 on a computation error, 2 on a configuration or
usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .. import analysis as an
from ..errors import ConfigSyntax, ConfigValidation, ControlSetsError
from ..reachset import (chain_transitive_cells, classify_invariance, control_set,
                        periodic_orbit_certificate, reach_fixpoint, sample_controls, seed_cells)
from .config import RunConfig, default_config, dump_config, load_config, with_overrides
from .raster import emit_raster

FIGURES = 5


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p, suppress: bool):
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--config", type=Path, help="run configuration (defaults to the built-in example)", **kw)
    p.add_argument("--out", type=Path, help="output directory (overrides the config)", **kw)
    p.add_argument("--alpha", type=float, **kw)
    p.add_argument("--rho", type=float, **kw)
    p.add_argument("--seed", type=_floats, help='point as "x,y"', **kw)
    p.add_argument("--format", choices=("pgm", "svg", "csv"), action="append",
                   help="output format; may be repeated", **kw)


def build_parser() -> argparse.ArgumentParser:
    """Global flags are accepted before or after the subcommand."""
    p = argparse.ArgumentParser(prog="controlsets",
                                description="Control sets near homoclinic bifurcations.")
    _common(p, suppress=False)
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    shared = argparse.ArgumentParser(add_help=False)
    _common(shared, suppress=True)
    sub = p.add_subparsers(dest="command")

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[shared])

    add("analyze", "equilibria, rank conditions and the Melnikov integral")
    add("split", "split function over a list of parameters").add_argument("--alphas", type=_floats)
    add("cycle", "limit cycle search")
    add("reach", "one reachable (or controllable) set").add_argument("--reversed", action="store_true")
    add("controlset", "control set through the seed and its invariance")
    add("chain", "chain transitive cell sets of the uncontrolled flow").add_argument(
        "--step-T", type=float, dest="chain_step")
    add("certify", "controlled periodic orbit through the seed").add_argument("--delta", type=float)
    add("figure", "built-in figure scenario").add_argument("number", type=int,
                                                          choices=range(1, FIGURES + 1))
    sw = add("sweep", "summary table over parameter lists")
    sw.add_argument("--alphas", type=_floats)
    sw.add_argument("--rhos", type=_floats)
    return p


class _Context:
    def __init__(self, cfg: RunConfig, args):
        self.cfg = cfg
        self.args = args
        self.sys = cfg.build_system()
        self.grid = cfg.build_grid()
        self.run = cfg.run
        self.out = Path(args.out) if args.out is not None else Path(cfg.output.directory)
        self.formats = tuple(args.format) if args.format else cfg.output.formats
        self.lines: list[str] = []

    @property
    def controls(self):
        return self.run.controls or None

    def say(self, key, value):
        self.lines.append(f"{key}: {value}")
        print(f"{key}: {value}")

    def header(self):
        r = self.run
        self.say("system", self.sys.name)
        self.say("alpha", f"{r.alpha:.12g}")
        self.say("rho", f"{r.rho:.12g}")
        self.say("step_T", f"{r.step_T:.12g}")
        self.say("tol", f"{r.tol:.12g}")
        self.say("analysis_tol", f"{r.analysis_tol:.12g}")
        self.say("controls", "; ".join(",".join(f"{v:.12g}" for v in u)
                                       for u in sample_controls(self.sys, r.rho, self.controls)))
        self.say("grid", "x".join(str(c) for c in self.grid.shape))

    def point(self, name, fallback=None):
        v = getattr(self.run, name)
        if name == "seed" and self.args.seed is not None:
            v = self.args.seed
        if not v:
            if fallback is None:
                raise ConfigValidation(f"run.{name}", "required by this command")
            v = fallback
        if len(v) != self.sys.d:
            raise ConfigValidation(f"run.{name}", f"needs {self.sys.d} coordinates")
        return np.asarray(v, dtype=float)

    def section(self):
        r = self.run
        if not r.section_base or not r.section_tangent:
            raise ConfigValidation("run.section_base", "a cross-section is required by this command")
        return an.CrossSection(r.section_base, r.section_tangent, halfwidth=r.section_halfwidth)

    def emit(self, layers, stem):
        self.out.mkdir(parents=True, exist_ok=True)
        written = []
        if "csv" in self.formats:
            for k, cs in enumerate(layers):
                p = self.out / (f"{stem}.csv" if len(layers) == 1 else f"{stem}_{k}.csv")
                cs.write_csv(p)
                written.append(p)
        if self.grid.d == 2:
            for fmt in ("pgm", "svg"):
                if fmt in self.formats:
                    written.append(emit_raster(layers[:4], self.out / f"{stem}.{fmt}", fmt, grid=self.grid))
        for p in written:
            self.say("wrote", p)

    def write_report(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text("\n".join(self.lines) + "\n")


def _analyze(ctx: _Context):
    sys_, a = ctx.sys, ctx.run.alpha
    saddle = an.find_equilibrium(sys_, a, ctx.point("saddle", np.zeros(sys_.d)))
    ctx.say("saddle", ", ".join(f"{v:.12g}" for v in saddle.location))
    ctx.say("saddle_kind", saddle.kind.value)
    ctx.say("saddle_eigenvalues", ", ".join(f"{w:.12g}" for w in saddle.eigenvalues))
    ctx.say("saddle_quantity", saddle.saddle_quantity)
    if sys_.d == 3:
        ctx.say("homoclinic_case", an.classify_homoclinic_case(saddle).value)
    if ctx.run.focus:
        focus = an.find_equilibrium(sys_, a, ctx.point("focus"))
        ctx.say("focus", ", ".join(f"{v:.12g}" for v in focus.location))
        ctx.say("focus_kind", focus.kind.value)
    ctx.say("kalman_rank", an.kalman_rank(sys_, a, saddle))
    ctx.say("controllability_matrix", an.controllability_matrix(sys_, a, saddle).tolist())
    ctx.say("accessibility_rank", an.accessibility_rank(sys_, a, saddle.location))
    if sys_.d == 2:
        try:
            hom = an.homoclinic_orbit(sys_, a, saddle, window=ctx.grid.window)
            ctx.say("melnikov", f"{an.melnikov(sys_, hom):.10g}")
        except ControlSetsError as exc:
            ctx.say("melnikov", f"unavailable ({type(exc).__name__}: {exc})")
    ctx.write_report("analyze.txt")


def _split(ctx: _Context):
    alphas = ctx.args.alphas or ctx.run.alphas or (ctx.run.alpha,)
    section = ctx.section()
    for a in alphas:
        beta = an.split_function(ctx.sys, a, section, saddle_seed=ctx.point("saddle", np.zeros(ctx.sys.d)),
                                 window=ctx.grid.window)
        ctx.say(f"beta[{a:.12g}]", f"{beta:.12g}")
    ctx.write_report("split.txt")


def _cycle(ctx: _Context):
    a = ctx.run.alpha
    section = ctx.section()
    _, det = an.split_function(ctx.sys, a, section, saddle_seed=ctx.point("saddle", np.zeros(ctx.sys.d)),
                               window=ctx.grid.window, details=True)
    cyc = an.find_limit_cycle(ctx.sys, a, section, det["crossing_u"], window=ctx.grid.window)
    ctx.say("period", f"{cyc.period:.12g}")
    ctx.say("floquet_multipliers", ", ".join(f"{m:.6g}" for m in cyc.floquet_multipliers))
    ctx.say("stable", cyc.stable)
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "cycle.csv").write_text("".join(",".join(f"{v:.12g}" for v in row) + "\n"
                                               for row in cyc.points))
    ctx.write_report("cycle.txt")


def _reach(ctx: _Context):
    r = ctx.run
    info = reach_fixpoint(ctx.sys, r.alpha, r.rho, ctx.grid, seed_cells(ctx.grid, [ctx.point("seed")]),
                          r.step_T, ctx.controls, ctx.args.reversed, r.tol)
    ctx.say("cells", len(info.cells))
    ctx.say("escaped", info.escaped)
    ctx.say("sweeps", info.sweeps)
    ctx.emit([info.cells], "reach")
    ctx.write_report("reach.txt")


def _controlset(ctx: _Context):
    r = ctx.run
    cs = control_set(ctx.sys, r.alpha, r.rho, ctx.grid, ctx.point("seed"), step_T=r.step_T,
                     controls=ctx.controls, tol=r.tol)
    cs = classify_invariance(ctx.sys, r.alpha, r.rho, ctx.grid, cs, controls=ctx.controls)
    ctx.say("cells", len(cs))
    ctx.say("kind", cs.kind)
    lo, hi = cs.isolating_box()
    ctx.say("isolating_box", f"{lo.tolist()} .. {hi.tolist()}")
    ctx.emit([cs.cells], "controlset")
    ctx.write_report("controlset.txt")


def _chain(ctx: _Context):
    step = ctx.args.chain_step or ctx.run.step_T
    comps = chain_transitive_cells(ctx.sys, ctx.run.alpha, ctx.grid, step, ctx.run.tol)
    ctx.say("components", len(comps))
    for k, c in enumerate(comps):
        ctx.say(f"component[{k}]", f"{len(c)} cells")
    if comps:
        ctx.emit(comps, "chain")
    ctx.write_report("chain.txt")


def _certify(ctx: _Context):
    from ..scenarios import reference_loop

    r = ctx.run
    y = ctx.point("seed")
    saddle = ctx.point("saddle", np.zeros(ctx.sys.d))
    delta = ctx.args.delta if ctx.args.delta is not None else r.delta
    ref = reference_loop(ctx.sys, 0.0, saddle, ctx.grid.window)
    cs = control_set(ctx.sys, r.alpha, r.rho, ctx.grid, y, step_T=r.step_T, controls=ctx.controls, tol=r.tol)
    cert = periodic_orbit_certificate(ctx.sys, r.alpha, r.rho, ctx.grid, cs, y, delta, reference=ref,
                                      saddle=saddle, step_T=r.step_T, controls=ctx.controls, tol=r.tol)
    ctx.say("period", f"{cert.period:.12g}")
    ctx.say("closure", f"{cert.closure:.3g}")
    ctx.say("hausdorff", f"{cert.hausdorff:.6g}")
    ctx.say("segments", len(cert.control.schedule))
    ctx.out.mkdir(parents=True, exist_ok=True)
    (ctx.out / "certificate_control.csv").write_text(
        "".join(f"{d:.17g}," + ",".join(f"{v:.17g}" for v in u) + "\n" for d, u in cert.control.schedule))
    (ctx.out / "certificate.csv").write_text(
        "".join(",".join(f"{v:.12g}" for v in row) + "\n" for row in cert.trajectory.states))
    ctx.emit([cs.cells], "certify")
    ctx.write_report("certify.txt")


def _figure(ctx: _Context):
    from ..scenarios import builtin, run_scenario

    s = builtin("sandstede")[ctx.args.number - 1]
    out = ctx.out / s.name
    report = run_scenario(s, out)
    for t in report.tags.values():
        print(f"{t.tag}: {'pass' if t.passed else 'fail'} ({t.detail})")
    for p in report.artifacts:
        print(f"wrote: {p}")


def _sweep(ctx: _Context):
    from ..scenarios import sweep

    alphas = ctx.args.alphas or ctx.run.alphas or (ctx.run.alpha,)
    rhos = ctx.args.rhos or ctx.run.rhos or (ctx.run.rho,)
    anchors = {"saddle": tuple(ctx.point("saddle", np.zeros(ctx.sys.d)))}
    if ctx.run.seed or ctx.args.seed:
        anchors["y"] = tuple(ctx.point("seed"))
    if ctx.run.focus:
        anchors["focus"] = tuple(ctx.point("focus"))
    table = sweep(ctx.sys, alphas, rhos, ctx.grid, anchors=anchors, section=ctx.section(),
                  step_T=ctx.run.step_T, controls=ctx.controls, tol=ctx.run.tol, out_dir=ctx.out)
    sys.stdout.write(table.to_csv())


COMMANDS = {"analyze": _analyze, "split": _split, "cycle": _cycle, "reach": _reach,
            "controlset": _controlset, "chain": _chain, "certify": _certify, "figure": _figure,
            "sweep": _sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config is not None else default_config()
        cfg = with_overrides(cfg, alpha=args.alpha, rho=args.rho)
        if args.rho is not None and cfg.run.controls:
            # re-validate explicit controls against the new range
            from .config import config_from_text
            cfg = config_from_text(dump_config(cfg))
        if args.dump_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
        ctx = _Context(cfg, args)
        if args.command not in ("figure", "sweep"):
            ctx.header()
    except (ConfigSyntax, ConfigValidation, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](ctx)
    except ConfigValidation as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ControlSetsError, ArithmeticError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
