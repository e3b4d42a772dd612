"""Sectioned run configuration.

The format is line based::

    # comment
    [system]
    dimension = 2
    drift = ("-x+2*y+x^2", "(2-alpha)*x - y - 3*x^2 + (3/2)*x*y")
    control_fields = (("0", "1"))
    lo = (-1)
    hi = (1)

Values are numbers, double-quoted strings or parenthesized tuples of values.
A parenthesized single value is a one-element tuple.  Unknown sections and
keys are rejected.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .. import expr as ex
from ..dynamics import TOL_ANALYSIS, TOL_GRID, ControlAffineSystem
from ..errors import ConfigSyntax, ConfigValidation, ExprSyntaxError, UnknownIdentifier
from ..reachset.expand import STEP_T
from ..reachset.grid import Grid

FORMATS = ("pgm", "svg", "csv")
_NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?|[+-]?(inf|nan)")
_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class SystemSection:
    dimension: int
    drift: tuple
    control_fields: tuple
    lo: tuple
    hi: tuple
    states: tuple = ()
    param: str = "alpha"
    name: str = "system"


@dataclass(frozen=True)
class GridSection:
    lower: tuple
    upper: tuple
    cells: tuple


@dataclass(frozen=True)
class RunSection:
    alpha: float = 0.0
    rho: float = 0.01
    tol: float = TOL_GRID
    analysis_tol: float = TOL_ANALYSIS
    step_T: float = STEP_T
    controls: tuple = ()
    seed: tuple = ()
    saddle: tuple = ()
    focus: tuple = ()
    alphas: tuple = ()
    rhos: tuple = ()
    section_base: tuple = ()
    section_tangent: tuple = ()
    section_halfwidth: float = 0.3
    delta: float = 0.05


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    formats: tuple = ("pgm", "csv")


@dataclass(frozen=True)
class RunConfig:
    system: SystemSection
    grid: GridSection
    run: RunSection = RunSection()
    output: OutputSection = OutputSection()

    def build_system(self) -> ControlAffineSystem:
        s = self.system
        return ControlAffineSystem.from_strings(s.states, s.drift, s.control_fields, s.lo, s.hi,
                                                param=s.param, name=s.name)

    def build_grid(self) -> Grid:
        g = self.grid
        return Grid(g.lower, g.upper, g.cells)


SECTIONS = {"system": SystemSection, "grid": GridSection, "run": RunSection, "output": OutputSection}
REQUIRED = ("system", "grid", "run")


# ---------------------------------------------------------------------------
# value grammar


class _ValueParser:
    def __init__(self, text: str, line: int):
        self.s = text
        self.i = 0
        self.line = line

    def fail(self, msg):
        raise ConfigSyntax(f"{msg} (column {self.i + 1})", self.line)

    def ws(self):
        while self.i < len(self.s) and self.s[self.i] in " \t":
            self.i += 1

    def value(self):
        self.ws()
        if self.i >= len(self.s):
            self.fail("missing value")
        c = self.s[self.i]
        if c == "(":
            return self.tuple_()
        if c == '"':
            return self.string()
        m = _NUMBER.match(self.s, self.i)
        if not m:
            self.fail("expected a number, a quoted string or a tuple")
        self.i = m.end()
        tok = m.group(0)
        if re.fullmatch(r"[+-]?\d+", tok):
            return int(tok)
        return float(tok)

    def string(self):
        end = self.s.find('"', self.i + 1)
        if end < 0:
            self.fail("unterminated string")
        out = self.s[self.i + 1:end]
        self.i = end + 1
        return out

    def tuple_(self):
        self.i += 1
        items = []
        self.ws()
        if self.i < len(self.s) and self.s[self.i] == ")":
            self.i += 1
            return tuple(items)
        while True:
            items.append(self.value())
            self.ws()
            if self.i >= len(self.s):
                self.fail("unterminated tuple")
            if self.s[self.i] == ",":
                self.i += 1
                continue
            if self.s[self.i] == ")":
                self.i += 1
                return tuple(items)
            self.fail("expected ',' or ')'")

    def parse(self):
        v = self.value()
        self.ws()
        if self.i != len(self.s):
            self.fail("trailing characters after value")
        return v


def _strip_comment(line: str) -> str:
    inside = False
    for k, c in enumerate(line):
        if c == '"':
            inside = not inside
        elif c == "#" and not inside:
            return line[:k]
    return line


def parse_sections(text: str) -> dict:
    """``{section: {key: (value, line)}}``; raises :class:`ConfigSyntax`."""
    out: dict = {}
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            m = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", line)
            if not m:
                raise ConfigSyntax("malformed section header", n)
            current = m.group(1)
            if current in out:
                raise ConfigSyntax(f"section [{current}] appears twice", n)
            out[current] = {}
            continue
        if "=" not in line:
            raise ConfigSyntax("expected 'key = value'", n)
        if current is None:
            raise ConfigSyntax("key outside of any section", n)
        key, val = (part.strip() for part in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigSyntax(f"invalid key {key!r}", n)
        if key in out[current]:
            raise ConfigSyntax(f"key {key!r} repeated", n)
        out[current][key] = (_ValueParser(val, n).parse(), n)
    return out


# ---------------------------------------------------------------------------
# validation


def _number(field_name, v, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigValidation(field_name, "must be a number")
    if not math.isfinite(v):
        raise ConfigValidation(field_name, "must be finite")
    if integer:
        if float(v) != int(v):
            raise ConfigValidation(field_name, "must be an integer")
        return int(v)
    return float(v)


def _vector(field_name, v, length=None, integer=False):
    if not isinstance(v, tuple):
        v = (v,)
    if length is not None and len(v) != length:
        raise ConfigValidation(field_name, f"needs {length} entries, got {len(v)}")
    return tuple(_number(field_name, x, integer) for x in v)


def _strings(field_name, v, length=None):
    if not isinstance(v, tuple):
        v = (v,)
    if any(not isinstance(x, str) for x in v):
        raise ConfigValidation(field_name, "entries must be quoted strings")
    if length is not None and len(v) != length:
        raise ConfigValidation(field_name, f"needs {length} entries, got {len(v)}")
    return v


def _positive(field_name, v):
    if not v > 0:
        raise ConfigValidation(field_name, "must be positive")
    return v


def _validate_system(raw) -> SystemSection:
    need = ("dimension", "drift", "control_fields", "lo", "hi")
    for k in need:
        if k not in raw:
            raise ConfigValidation(f"system.{k}", "missing")
    d = _number("system.dimension", raw["dimension"], integer=True)
    if d not in (2, 3):
        raise ConfigValidation("system.dimension", "must be 2 or 3")
    states = raw.get("states", ("x", "y", "z")[:d])
    states = _strings("system.states", states, d)
    param = raw.get("param", "alpha")
    if not isinstance(param, str):
        raise ConfigValidation("system.param", "must be a quoted string")
    name = raw.get("name", "system")
    if not isinstance(name, str):
        raise ConfigValidation("system.name", "must be a quoted string")
    drift = _strings("system.drift", raw["drift"], d)
    cf = raw["control_fields"]
    if not isinstance(cf, tuple) or not cf:
        raise ConfigValidation("system.control_fields", "needs at least one control field")
    if all(isinstance(x, str) for x in cf):
        cf = (cf,)
    cf = tuple(_strings("system.control_fields", g, d) for g in cf)
    m = len(cf)
    lo = _vector("system.lo", raw["lo"], m)
    hi = _vector("system.hi", raw["hi"], m)
    for a, b in zip(lo, hi):
        if not a < 0 < b:
            raise ConfigValidation("system.lo/hi", "0 must be interior to U")
    names = tuple(states) + (param,)
    for label, group in [("system.drift", drift)] + [("system.control_fields", g) for g in cf]:
        for text in group:
            try:
                ex.parse(text, names)
            except (ExprSyntaxError, UnknownIdentifier) as exc:
                raise ConfigValidation(label, str(exc)) from None
    return SystemSection(d, drift, cf, lo, hi, states, param, name)


def _validate_grid(raw, d) -> GridSection:
    for k in ("lower", "upper", "cells"):
        if k not in raw:
            raise ConfigValidation(f"grid.{k}", "missing")
    lower = _vector("grid.lower", raw["lower"], d)
    upper = _vector("grid.upper", raw["upper"], d)
    cells = _vector("grid.cells", raw["cells"], d, integer=True)
    if not all(a < b for a, b in zip(lower, upper)):
        raise ConfigValidation("grid.lower", "must be below grid.upper componentwise")
    if not all(c >= 1 for c in cells):
        raise ConfigValidation("grid.cells", "must be positive")
    return GridSection(lower, upper, cells)


def _validate_run(raw, d, m, lo, hi) -> RunSection:
    kw = {}
    for key in ("alpha", "rho", "tol", "analysis_tol", "step_T", "section_halfwidth", "delta"):
        if key in raw:
            kw[key] = _number(f"run.{key}", raw[key])
    for key in ("rho", "tol", "analysis_tol", "step_T", "section_halfwidth", "delta"):
        if key in kw:
            _positive(f"run.{key}", kw[key])
    for key in ("seed", "saddle", "focus", "section_base", "section_tangent"):
        if key in raw:
            kw[key] = _vector(f"run.{key}", raw[key], d)
    for key in ("alphas", "rhos"):
        if key in raw:
            kw[key] = _vector(f"run.{key}", raw[key])
    if "rhos" in kw and any(r <= 0 for r in kw["rhos"]):
        raise ConfigValidation("run.rhos", "must be positive")
    if "controls" in raw:
        v = raw["controls"]
        if not isinstance(v, tuple):
            v = (v,)
        if m == 1 and all(not isinstance(x, tuple) for x in v):
            v = tuple((x,) for x in v)
        ctrl = tuple(_vector("run.controls", u, m) for u in v)
        rho = kw.get("rho", RunSection.rho)
        for u in ctrl:
            if any(not (rho * a - 1e-12 <= c <= rho * b + 1e-12) for c, a, b in zip(u, lo, hi)):
                raise ConfigValidation("run.controls", f"value {u} is outside U^rho")
        kw["controls"] = ctrl
    return RunSection(**kw)


def _validate_output(raw) -> OutputSection:
    kw = {}
    if "directory" in raw:
        if not isinstance(raw["directory"], str):
            raise ConfigValidation("output.directory", "must be a quoted string")
        kw["directory"] = raw["directory"]
    if "formats" in raw:
        f = _strings("output.formats", raw["formats"])
        bad = [x for x in f if x not in FORMATS]
        if bad:
            raise ConfigValidation("output.formats", f"unknown format {bad[0]!r}")
        kw["formats"] = f
    return OutputSection(**kw)


def config_from_text(text: str) -> RunConfig:
    sections = parse_sections(text)
    for name in sections:
        if name not in SECTIONS:
            raise ConfigValidation(f"[{name}]", "unknown section")
    for name in REQUIRED:
        if name not in sections:
            raise ConfigValidation(f"[{name}]", "section missing")
    allowed = {name: {f.name for f in fields(cls)} for name, cls in SECTIONS.items()}
    for name, items in sections.items():
        for key, (_, line) in items.items():
            if key not in allowed[name]:
                raise ConfigValidation(f"{name}.{key}", f"unknown key (line {line})")
    raw = {name: {k: v for k, (v, _) in items.items()} for name, items in sections.items()}
    system = _validate_system(raw["system"])
    grid = _validate_grid(raw["grid"], system.dimension)
    run = _validate_run(raw["run"], system.dimension, len(system.control_fields), system.lo, system.hi)
    output = _validate_output(raw.get("output", {}))
    return RunConfig(system, grid, run, output)


def load_config(path) -> RunConfig:
    """Read and validate a configuration file.

    Raises
    ------
    ConfigSyntax
        Malformed line, with its line number.
    ConfigValidation
        Missing section or key, unknown key, or an invalid value.
    """
    return config_from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# writing


def _fmt(v) -> str:
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, tuple):
        return "(" + ", ".join(_fmt(x) for x in v) + ")"
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def dump_config(cfg: RunConfig) -> str:
    """Text that :func:`config_from_text` maps back to an equal :class:`RunConfig`."""
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(section):
            v = getattr(section, f.name)
            if isinstance(v, tuple) and not v and f.name not in ("formats",):
                continue
            lines.append(f"{f.name} = {_fmt(v)}")
        lines.append("")
    return "\n".join(lines)


SANDSTEDE_CONFIG = """\
[system]
name = "sandstede"
dimension = 2
states = ("x", "y")
drift = ("-x+2*y+x^2", "(2-alpha)*x - y - 3*x^2 + (3/2)*x*y")
control_fields = (("0", "1"))
lo = (-1)
hi = (1)

[grid]
lower = (-0.2, -0.6)
upper = (1.2, 0.6)
cells = (150, 150)

[run]
alpha = 0.0
rho = 0.01
seed = (1, 0)
saddle = (0, 0)
focus = (0.6666666666666666, 0.1111111111111111)
section_base = (0.5, -0.3535533905932738)
section_tangent = (0.33333333333333326, 0.9428090415820632)
"""


def default_config() -> RunConfig:
    """Configuration of the built-in planar example."""
    return config_from_text(SANDSTEDE_CONFIG)


def with_overrides(cfg: RunConfig, **run_fields) -> RunConfig:
    """Copy of ``cfg`` with the given run fields replaced (``None`` values are skipped)."""
    kw = {k: v for k, v in run_fields.items() if v is not None}
    return replace(cfg, run=replace(cfg.run, **kw)) if kw else cfg
