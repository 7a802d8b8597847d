"""Scenario files: strict TOML with one section per component.

Unknown sections or keys, wrong value types and invalid physical parameters
are reported as :class:`ConfigError` carrying the offending line number.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from ..harness.controller import ControllerConfig, Mode
from ..harness.environments import EnvKind, EnvScale
from ..legged.params import LeggedParams
from ..sqp import HessianMode, SqpSettings
from ..testbed import TestbedParams

OUT_ENV = "ACMPC_OUT"
MODELS = ("legged", "testbed")


class ConfigError(ValueError):
    """Invalid scenario; ``line`` is 1-based or None when it cannot be located."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.message, self.line, self.path = message, line, path
        where = path or "<config>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ScenarioSection:
    name: str = "scenario"
    model: str = "legged"
    environment: str = ""
    trials: int = 1
    seed: int = 0
    out: str = ""
    timing: bool = True
    offset_half_width: float = 0.2


@dataclass(frozen=True)
class ControllerSection:
    mode: str = ""
    horizon: int = 24
    dt: float = 0.03
    fixed_set: list = field(default_factory=list)
    eps_adm: float = 1e-6
    feas_tol: float = 1e-6
    solve_budget: float = 1.0
    slow_policy: str = "flag"
    max_resolves: int = 3


@dataclass(frozen=True)
class RegulationSection:
    x0: list = field(default_factory=list)
    steps: int = 200
    tol: float = 1e-4
    start_box: list = field(default_factory=lambda: [2.0, 1.0, 0.5])


def _sqp_defaults() -> dict:
    s = SqpSettings(max_iter=20)
    out = {f.name: getattr(s, f.name) for f in fields(s)}
    out["hessian"] = s.hessian.value
    return out


def _field_defaults(cls) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def _model_defaults(model: str) -> dict:
    cls = LeggedParams if model == "legged" else TestbedParams
    return {k: v for k, v in _field_defaults(cls).items() if not k.startswith("_")}


REQUIRED = {("scenario", "environment"), ("controller", "mode")}


@dataclass(frozen=True)
class ScenarioConfig:
    """Resolved scenario: every section filled with defaults where not given."""

    scenario: ScenarioSection
    controller: ControllerSection
    sqp: dict
    environment: dict
    model: dict
    regulation: RegulationSection
    source: str | None = None

    # -- derived objects ------------------------------------------------------
    @property
    def env_kind(self) -> EnvKind:
        return EnvKind.parse(self.scenario.environment)

    def sqp_settings(self) -> SqpSettings:
        kw = dict(self.sqp)
        kw["hessian"] = HessianMode(kw["hessian"])
        return SqpSettings(**kw)

    def controller_config(self) -> ControllerConfig:
        c = self.controller
        return ControllerConfig(
            mode=Mode.parse(c.mode),
            horizon=c.horizon,
            dt=c.dt,
            fixed_set=tuple(c.fixed_set) if c.fixed_set else None,
            eps_adm=c.eps_adm,
            feas_tol=c.feas_tol,
            sqp=self.sqp_settings(),
            solve_budget=c.solve_budget,
            slow_policy=c.slow_policy,
            max_resolves=c.max_resolves,
        )

    def env_scale(self) -> EnvScale:
        return EnvScale(**self.environment)

    def legged_params(self) -> LeggedParams:
        return LeggedParams(**_tuples(self.model))

    def testbed_params(self) -> TestbedParams:
        return TestbedParams(**_tuples(self.model))

    def out_dir(self, override: str | None = None) -> str:
        if override:
            return override
        if self.scenario.out:
            return self.scenario.out
        base = os.environ.get(OUT_ENV, "acmpc-out")
        return os.path.join(base, self.scenario.name)

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "scenario": _asdict(self.scenario),
            "controller": _asdict(self.controller),
            "sqp": dict(self.sqp),
            "environment": dict(self.environment),
            "model": {k: list(v) if isinstance(v, tuple) else v for k, v in self.model.items()},
            "regulation": _asdict(self.regulation),
        }
        if self.scenario.model == "testbed":
            d.pop("environment")
        else:
            d.pop("regulation")
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def with_overrides(self, seed: int | None = None, trials: int | None = None) -> "ScenarioConfig":
        sc = self.scenario
        if seed is not None:
            sc = replace(sc, seed=int(seed))
        if trials is not None:
            if trials < 1:
                raise ConfigError("trials must be at least 1")
            sc = replace(sc, trials=int(trials))
        return replace(self, scenario=sc)


def _asdict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


# -- parsing ------------------------------------------------------------------

_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]\s*(#.*)?$")


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    out = {}
    section = ""
    for n, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m:
            section = m.group(1)
            out.setdefault((section, None), n)
            continue
        m = re.match(r"^\s*([A-Za-z0-9_-]+)\s*=", line)
        if m:
            out.setdefault((section, m.group(1)), n)
    return out


def _type_ok(value, default) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, (list, tuple)):
        return isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    return False


def _type_name(default) -> str:
    for t, name in ((bool, "boolean"), (int, "integer"), (float, "number"), (str, "string")):
        if isinstance(default, t):
            return name
    return "array of numbers"


def _merge(section: str, given: dict, defaults: dict, lines: dict, path) -> dict:
    out = dict(defaults)
    for key, value in given.items():
        line = lines.get((section, key), lines.get((section, None)))
        if key not in defaults:
            raise ConfigError(f"unknown key '{key}' in [{section}]", line, path)
        if isinstance(value, dict):
            raise ConfigError(f"[{section}] {key}: nested tables are not allowed", line, path)
        if not _type_ok(value, defaults[key]):
            raise ConfigError(f"[{section}] {key}: expected {_type_name(defaults[key])}, got {value!r}", line, path)
        if isinstance(defaults[key], float) and isinstance(value, int):
            value = float(value)
        if isinstance(defaults[key], tuple):
            value = tuple(float(v) if any(isinstance(d, float) for d in defaults[key]) else v for v in value)
        out[key] = value
    return out


def loads(text: str, path: str | None = None) -> ScenarioConfig:
    """Parse and validate a scenario; raises :class:`ConfigError`."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None, path) from None
    lines = _key_lines(text)
    known = ("scenario", "controller", "sqp", "environment", "model", "regulation")
    for sec, body in raw.items():
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)), path)
        if not isinstance(body, dict):
            raise ConfigError(f"'{sec}' must be a section", lines.get(("", sec)), path)
    for sec, key in sorted(REQUIRED):
        if key not in raw.get(sec, {}):
            raise ConfigError(f"missing required key '{key}' in [{sec}]", lines.get((sec, None)), path)

    sc = _merge("scenario", raw.get("scenario", {}), _field_defaults(ScenarioSection), lines, path)
    if sc["model"] not in MODELS:
        raise ConfigError(f"[scenario] model: expected one of {list(MODELS)}", lines.get(("scenario", "model")), path)
    ctl = _merge("controller", raw.get("controller", {}), _field_defaults(ControllerSection), lines, path)
    sqp_kw = _merge("sqp", raw.get("sqp", {}), _sqp_defaults(), lines, path)
    model = sc["model"]
    if model == "legged" and "regulation" in raw:
        raise ConfigError("[regulation] applies to the testbed model only", lines.get(("regulation", None)), path)
    if model == "testbed" and "environment" in raw:
        raise ConfigError("[environment] applies to the legged model only", lines.get(("environment", None)), path)
    env = _merge("environment", raw.get("environment", {}), _field_defaults(EnvScale), lines, path)
    reg = _merge("regulation", raw.get("regulation", {}), _field_defaults(RegulationSection), lines, path)
    mdl = _merge("model", raw.get("model", {}), _model_defaults(model), lines, path)

    def fail(section, key, msg):
        raise ConfigError(msg, lines.get((section, key), lines.get((section, None))), path)

    # cross-field checks, each tied to the key responsible
    try:
        kind = EnvKind.parse(sc["environment"])
    except ValueError as exc:
        fail("scenario", "environment", str(exc))
    if (model == "testbed") != (kind is EnvKind.REGULATION):
        fail("scenario", "environment", f"environment {kind.value} does not fit model '{model}'")
    if sc["trials"] < 1:
        fail("scenario", "trials", "trials must be at least 1")
    if not sc["offset_half_width"] >= 0:
        fail("scenario", "offset_half_width", "offset_half_width must be non-negative")
    if not re.fullmatch(r"[A-Za-z0-9_.-]+", sc["name"]):
        fail("scenario", "name", "name may contain letters, digits, '_', '-' and '.' only")
    try:
        Mode.parse(ctl["mode"])
    except ValueError as exc:
        fail("controller", "mode", str(exc))
    if model == "legged" and abs(ctl["dt"] - mdl["dt"]) > 1e-12:
        fail("controller", "dt", f"controller dt {ctl['dt']} differs from model dt {mdl['dt']}")
    if model == "testbed" and abs(ctl["dt"] - mdl["dt"]) > 1e-12:
        fail("controller", "dt", f"controller dt {ctl['dt']} differs from model dt {mdl['dt']}")
    if reg["steps"] < 1 or not reg["tol"] > 0:
        fail("regulation", "steps", "steps must be positive and tol positive")
    if reg["x0"] and len(reg["x0"]) != 3:
        fail("regulation", "x0", "x0 must have three entries")
    if len(reg["start_box"]) != 3 or min(reg["start_box"]) < 0:
        fail("regulation", "start_box", "start_box must have three non-negative entries")
    if sqp_kw["hessian"] not in [h.value for h in HessianMode]:
        fail("sqp", "hessian", f"hessian must be one of {[h.value for h in HessianMode]}")

    cfg = ScenarioConfig(ScenarioSection(**sc), ControllerSection(**ctl), sqp_kw, env, mdl,
                         RegulationSection(**reg), source=path)
    # constructing the objects runs their own validation
    for section, build in (("sqp", cfg.sqp_settings), ("controller", cfg.controller_config),
                           ("model", cfg.legged_params if model == "legged" else cfg.testbed_params)):
        try:
            build()
        except ValueError as exc:
            key = next((k for (s, k) in lines if s == section and k and k.lower() in str(exc).lower()), None)
            fail(section, key, str(exc))
    if model == "legged":
        try:
            cfg.env_scale()
        except ValueError as exc:
            key = next((k for k in env if k in str(exc)), None)
            fail("environment", key, str(exc))
    return cfg


def load(path: str) -> ScenarioConfig:
    """Read a scenario file; IO errors propagate as ``OSError``."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return loads(text, path)
