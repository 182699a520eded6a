"""Scenario documents: JSON files describing one experiment.

A scenario names a model (a Lagrangian or a Hamiltonian), an initial
hypersurface with its parameter grid, integration settings and, for the
Riemannian checks, a metric with a spherical ``W``.  Documents are validated
against a strict schema (unknown keys are rejected) and every expression is
parsed up front so errors carry the offending field path.
"""

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from . import expr as E
from .dynamics import IntegratorConfig
from .errors import InputError, ScenarioError
from .field import MOMENTUM, VELOCITY, DiffConfig, parse_field
from .front import GridAxis, Hypersurface, parameter_alphabet
from .legendre import ExplicitHamiltonian, LagrangianModel, LegendreHamiltonian
from .riemann import ExpressionForce, MetricField, SphericalHamiltonian

DEFAULT_TOLERANCES = {
    "phi": 1e-6,
    "H_drift": 1e-8,
    "front": 1e-6,
    "omega_phidot": 1e-6,
    "perturbation_active": 1e-3,
    "first_integral": 1e-12,
    "pfaff": 1e-5,
    "pfaff_negative": 1e-2,
    "residual": 1e-5,
    "residual_negative": 1e-2,
    "spherical_equality": 1e-15,
    "legendre_roundtrip": 1e-10,
    "legendre_consistency": 1e-9,
}

_EXPR = {"type": "string", "minLength": 1}
_NUM = {"type": "number"}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "n"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lagrangian": _EXPR,
                "hamiltonian": _EXPR,
                "differentiation": {"enum": ["ad", "fd"]},
            },
            "oneOf": [{"required": ["lagrangian"]}, {"required": ["hamiltonian"]}],
        },
        "level": _NUM,
        "surface": {
            "type": "object",
            "additionalProperties": False,
            "required": ["maps", "grid"],
            "properties": {
                "maps": {"type": "array", "items": _EXPR, "minItems": 2},
                "grid": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["min", "max", "count"],
                        "properties": {
                            "min": _NUM,
                            "max": _NUM,
                            "count": {"type": "integer", "minimum": 3},
                            "topology": {"enum": ["open", "periodic"]},
                        },
                    },
                },
                "orientation": {"enum": [1, -1]},
                "stencil_order": {"enum": [2, 4]},
            },
        },
        "nu_seed": {"type": "number", "not": {"const": 0}},
        "t_end": {"type": "number", "exclusiveMinimum": 0},
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["rk4", "rkf45"]},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "abs_tol": {"type": "number", "exclusiveMinimum": 0},
                "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_steps": {"type": "integer", "minimum": 1},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fronts": {"type": "boolean"},
                "deviations": {"type": "boolean"},
                "diagnostics": {"type": "boolean"},
            },
        },
        "perturbation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "factor": _NUM,
                "fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "profile": {"enum": ["step", "smooth"]},
            },
        },
        "analytic_front": {"type": "array", "items": _EXPR},
        "riemann": {
            "type": "object",
            "additionalProperties": False,
            "required": ["metric", "W"],
            "properties": {
                "metric": {"type": "array", "items": {"type": "array", "items": _EXPR}},
                "W": _EXPR,
                "h": {"anyOf": [_EXPR, {"type": "null"}]},
                "force": {"type": "array", "items": _EXPR},
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "samples": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "box": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number", "exclusiveMinimum": 0} for k in DEFAULT_TOLERANCES},
        },
    },
}


@dataclass
class RiemannSetup:
    metric: MetricField
    spherical: SphericalHamiltonian
    force: Optional[ExpressionForce]
    samples: int = 100
    seed: int = 0


@dataclass
class Scenario:
    name: str
    n: int
    raw: dict
    model_kind: Optional[str] = None
    model_source: Optional[str] = None
    hamiltonian: object = None
    lagrangian: Optional[LagrangianModel] = None
    level: float = 0.0
    surface: Optional[Hypersurface] = None
    stencil_order: int = 2
    nu_seed: Optional[float] = None
    t_end: Optional[float] = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    outputs: dict = field(default_factory=lambda: {"fronts": True, "deviations": True, "diagnostics": True})
    perturbation: dict = field(default_factory=lambda: {"factor": 1.1, "fraction": 0.25, "profile": "step"})
    analytic_front: Optional[list] = None
    riemann: Optional[RiemannSetup] = None
    samples: dict = field(default_factory=lambda: {"count": 1000, "seed": 0, "box": 2.0})
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))

    def require(self, *parts):
        """Raise ScenarioError unless every named section is present."""
        for part in parts:
            if getattr(self, part) is None:
                raise ScenarioError(part, "required by this command but missing from the scenario")

    def scaled(self, grid_scale=1.0, tol_scale=1.0):
        """Copy with grid counts multiplied by ``grid_scale`` and tolerances by ``tol_scale``."""
        out = replace(self, tolerances={k: v * tol_scale for k, v in self.tolerances.items()})
        if self.surface is not None and grid_scale != 1.0:
            out.surface = self.surface.with_axes([a.scaled(grid_scale) for a in self.surface.axes])
        return out


def builtin_names():
    root = resources.files("wavefront") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve(path_or_name):
    p = Path(path_or_name)
    if p.exists():
        return p.read_text(), str(p)
    name = p.name[:-5] if p.name.endswith(".json") else p.name
    if str(p.parent) in ("", ".") and name in builtin_names():
        res = resources.files("wavefront") / "scenarios" / f"{name}.json"
        return res.read_text(), f"<builtin {name}>"
    raise InputError(f"scenario {path_or_name!r} is neither a file nor a built-in "
                     f"({', '.join(builtin_names())})")


def _path(parts):
    out = ""
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out


def load_scenario(path_or_name):
    """Load, validate and compile a scenario file or built-in scenario name."""
    text, origin = _resolve(path_or_name)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"{origin}: invalid JSON: {exc}") from None
    return scenario_from_dict(doc)


def scenario_from_dict(doc):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ScenarioError(_path(err.absolute_path), err.message)
    n = doc["n"]
    sc = Scenario(name=doc["name"], n=n, raw=doc)

    def parsed(path, fn):
        try:
            return fn()
        except ScenarioError:
            raise
        except InputError as exc:
            raise ScenarioError(path, str(exc)) from None

    if "model" in doc:
        model = doc["model"]
        diff = DiffConfig(mode=model.get("differentiation", "ad"))
        if "lagrangian" in model:
            sc.model_kind, sc.model_source = "lagrangian", model["lagrangian"]
            L = parsed("model.lagrangian", lambda: parse_field(model["lagrangian"], n, VELOCITY, diff))
            sc.lagrangian = LagrangianModel(L)
            sc.hamiltonian = LegendreHamiltonian(sc.lagrangian)
        else:
            sc.model_kind, sc.model_source = "hamiltonian", model["hamiltonian"]
            H = parsed("model.hamiltonian", lambda: parse_field(model["hamiltonian"], n, MOMENTUM, diff))
            sc.hamiltonian = ExplicitHamiltonian(H)
    sc.level = float(doc.get("level", 0.0))

    if "surface" in doc:
        surf = doc["surface"]
        if n < 2:
            raise ScenarioError("surface", "a hypersurface needs n >= 2")
        if len(surf["maps"]) != n:
            raise ScenarioError("surface.maps", f"expected {n} map expressions, got {len(surf['maps'])}")
        if len(surf["grid"]) != n - 1:
            raise ScenarioError("surface.grid", f"expected {n - 1} grid axes, got {len(surf['grid'])}")
        alphabet = parameter_alphabet(n)
        maps = [parsed(f"surface.maps[{i}]", lambda s=s: E.parse(s, alphabet))
                for i, s in enumerate(surf["maps"])]
        axes = [parsed(f"surface.grid[{i}]", lambda a=a: GridAxis(a["min"], a["max"], a["count"],
                                                                  a.get("topology", "open")))
                for i, a in enumerate(surf["grid"])]
        sc.surface = parsed("surface", lambda: Hypersurface(maps, axes, surf.get("orientation", 1)))
        sc.stencil_order = surf.get("stencil_order", 2)

    if "nu_seed" in doc:
        sc.nu_seed = float(doc["nu_seed"])
    if "t_end" in doc:
        sc.t_end = float(doc["t_end"])
    if "integrator" in doc:
        cfg = doc["integrator"]
        sc.integrator = parsed("integrator", lambda: IntegratorConfig(
            method=cfg.get("method", "rkf45"), step=cfg.get("step"),
            abs_tol=cfg.get("abs_tol", 1e-10), rel_tol=cfg.get("rel_tol", 1e-10),
            max_steps=cfg.get("max_steps", 200_000)))
    sc.outputs.update(doc.get("outputs", {}))
    sc.perturbation.update(doc.get("perturbation", {}))
    sc.samples.update(doc.get("samples", {}))
    sc.tolerances.update(doc.get("tolerances", {}))

    if "analytic_front" in doc:
        if len(doc["analytic_front"]) != n:
            raise ScenarioError("analytic_front", f"expected {n} expressions")
        alphabet = parameter_alphabet(n, scalars={"t"})
        sc.analytic_front = [parsed(f"analytic_front[{i}]", lambda s=s: E.parse(s, alphabet))
                             for i, s in enumerate(doc["analytic_front"])]

    if "riemann" in doc:
        rm = doc["riemann"]
        rows = rm["metric"]
        if len(rows) != n or any(len(r) != n for r in rows):
            raise ScenarioError("riemann.metric", f"metric must be {n}x{n}")
        metric = parsed("riemann.metric", lambda: MetricField.from_sources(rows))
        sph = parsed("riemann", lambda: SphericalHamiltonian.from_sources(rm["W"], n, rm.get("h")))
        force = None
        if "force" in rm:
            if len(rm["force"]) != n:
                raise ScenarioError("riemann.force", f"expected {n} components")
            force = parsed("riemann.force", lambda: ExpressionForce.from_sources(rm["force"]))
        sc.riemann = RiemannSetup(metric, sph, force, rm.get("samples", 100), rm.get("seed", 0))
    return sc
