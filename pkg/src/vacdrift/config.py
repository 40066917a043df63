"""Configuration parsing and validation.

Device and scenario descriptions are JSON files (nested sections).  Every
key is checked against the schema: unknown keys are rejected with their
dotted location, defaults are filled in, and semantic constraints (layer
sizes, species roster, density bounds) produce errors naming the offending
field.  Scaled quantities map onto the standard drift-diffusion symbols:
``permittivity`` -> epsilon, ``doping`` -> C, ``mobility`` -> mu,
``n_states`` -> N, ``band_shift`` -> zeta, ``photon_flux`` -> F_ph,
``absorption`` -> alpha_G, ``rate_constant`` -> the recombination
prefactor bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .solver import SolverConfig

__all__ = [
    "ConfigError",
    "ScenarioSpec",
    "parse_config",
    "validate_device_config",
    "validate_scenario_config",
    "SCENARIO_KINDS",
]

SCENARIO_KINDS = (
    "equilibrium_decay",
    "transient",
    "stationary_sweep",
    "uniqueness_probe",
    "convergence_study",
    "axiom_check",
)


class ConfigError(ValueError):
    """Invalid configuration; the message carries the dotted key path."""


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _mapping(raw: Any, path: str, known: dict) -> dict:
    if not isinstance(raw, dict):
        _fail(path, f"expected a mapping, got {type(raw).__name__}")
    for key in raw:
        if key not in known:
            _fail(f"{path}.{key}", "unknown key")
    out = {}
    for key, default in known.items():
        if key in raw:
            out[key] = raw[key]
        elif default is not _REQUIRED:
            out[key] = default
        else:
            _fail(f"{path}.{key}", "missing required key")
    return out


class _Required:
    pass


_REQUIRED = _Required()


def _number(value: Any, path: str, *, minimum=None, maximum=None,
            strict_min=False, strict_max=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(path, f"expected a number, got {value!r}")
    v = float(value)
    if v != v:
        _fail(path, "must not be NaN")
    if minimum is not None and (v < minimum or (strict_min and v == minimum)):
        _fail(path, f"must be {'>' if strict_min else '>='} {minimum}, got {v}")
    if maximum is not None and (v > maximum or (strict_max and v == maximum)):
        _fail(path, f"must be {'<' if strict_max else '<='} {maximum}, got {v}")
    return v


def _integer(value: Any, path: str, *, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(path, f"must be >= {minimum}, got {value}")
    return value


def _choice(value: Any, path: str, options) -> str:
    if value not in options:
        _fail(path, f"must be one of {sorted(options)}, got {value!r}")
    return value


# -- device -------------------------------------------------------------


def _validate_layer(raw: Any, path: str) -> dict:
    out = _mapping(raw, path, {
        "name": "", "role": "bulk", "width": _REQUIRED, "cells": _REQUIRED,
        "permittivity": 1.0, "doping": 0.0,
    })
    out["role"] = _choice(out["role"], f"{path}.role", ("bulk", "perovskite"))
    out["width"] = _number(out["width"], f"{path}.width", minimum=0.0, strict_min=True)
    out["cells"] = _integer(out["cells"], f"{path}.cells", minimum=2)
    out["permittivity"] = _number(out["permittivity"], f"{path}.permittivity",
                                  minimum=0.0, strict_min=True)
    out["doping"] = _number(out["doping"], f"{path}.doping")
    return out


def _validate_statistics(raw: Any, path: str):
    if isinstance(raw, str):
        return _choice(raw, path, ("boltzmann", "fermi_dirac_half"))
    if isinstance(raw, dict):
        out = _mapping(raw, path, {"blakemore": _REQUIRED})
        out["blakemore"] = _number(out["blakemore"], f"{path}.blakemore",
                                   minimum=0.0, strict_min=True)
        return out
    _fail(path, f"expected a statistics kind, got {raw!r}")


def _validate_species(raw: Any, path: str, roles: set) -> dict:
    out = _mapping(raw, path, {
        "id": _REQUIRED, "charge": _REQUIRED, "statistics": _REQUIRED,
        "n_states": 1.0, "band_shift": 0.0, "mobility": _REQUIRED,
        "region": None,
    })
    if not isinstance(out["id"], str) or not out["id"]:
        _fail(f"{path}.id", "must be a non-empty string")
    out["charge"] = _integer(out["charge"], f"{path}.charge")
    out["statistics"] = _validate_statistics(out["statistics"], f"{path}.statistics")
    out["n_states"] = _number(out["n_states"], f"{path}.n_states",
                              minimum=0.0, strict_min=True)
    out["band_shift"] = _number(out["band_shift"], f"{path}.band_shift")
    if not isinstance(out["mobility"], dict) or not out["mobility"]:
        _fail(f"{path}.mobility", "expected a mapping of region role to mobility")
    for role, mu in out["mobility"].items():
        _choice(role, f"{path}.mobility.{role}", ("bulk", "perovskite"))
        _number(mu, f"{path}.mobility.{role}", minimum=0.0)
    if out["region"] is None:
        out["region"] = "all" if out["id"] in ("n", "p") else "perovskite"
    else:
        out["region"] = _choice(out["region"], f"{path}.region", ("all", "perovskite"))
    if out["region"] == "all":
        missing = roles - set(out["mobility"])
        if missing:
            _fail(f"{path}.mobility", f"missing mobility for region(s) {sorted(missing)}")
    elif "perovskite" not in out["mobility"]:
        _fail(f"{path}.mobility", "missing mobility for region 'perovskite'")
    if out["id"] in ("n", "p") and isinstance(out["statistics"], dict):
        _fail(f"{path}.statistics",
              "electrons/holes require an unbounded statistics family "
              "('boltzmann' or 'fermi_dirac_half')")
    return out


def validate_device_config(raw: dict) -> dict:
    """Normalize and validate a device configuration mapping."""
    cfg = _mapping(raw, "device", {
        "geometry": _REQUIRED, "contacts": _REQUIRED, "species": _REQUIRED,
        "generation": None, "recombination": {"model": "constant", "rate_constant": 0.0},
        "initial": {"mode": "equilibrium"},
    })

    geo = _mapping(cfg["geometry"], "device.geometry", {
        "dimension": 1, "layers": _REQUIRED, "y": None,
    })
    dim = _integer(geo["dimension"], "device.geometry.dimension", minimum=1)
    if dim not in (1, 2):
        _fail("device.geometry.dimension", f"must be 1 or 2, got {dim}")
    if not isinstance(geo["layers"], list) or not geo["layers"]:
        _fail("device.geometry.layers", "expected a non-empty list of layers")
    geo["layers"] = [
        _validate_layer(layer, f"device.geometry.layers[{i}]")
        for i, layer in enumerate(geo["layers"])
    ]
    if dim == 2:
        if geo["y"] is None:
            _fail("device.geometry.y", "required for 2D devices")
        y = _mapping(geo["y"], "device.geometry.y", {"height": _REQUIRED, "cells": _REQUIRED})
        y["height"] = _number(y["height"], "device.geometry.y.height",
                              minimum=0.0, strict_min=True)
        y["cells"] = _integer(y["cells"], "device.geometry.y.cells", minimum=2)
        geo["y"] = y
    elif geo["y"] is not None:
        _fail("device.geometry.y", "only valid for 2D devices")
    cfg["geometry"] = geo
    roles = {layer["role"] for layer in geo["layers"]}

    sides = ("left", "right") if dim == 1 else ("left", "right", "bottom", "top")
    defaults = {"left": "dirichlet", "right": "dirichlet"}
    if dim == 2:
        defaults.update({"bottom": "neumann", "top": "neumann"})
    con = _mapping(cfg["contacts"], "device.contacts", {
        **{s: defaults[s] for s in sides},
        "psi": _REQUIRED, "phi": _REQUIRED,
        "ramp_rate": 0.0, "ramp_side": None,
    })
    dirichlet_sides = []
    for s in sides:
        con[s] = _choice(con[s], f"device.contacts.{s}", ("dirichlet", "neumann"))
        if con[s] == "dirichlet":
            dirichlet_sides.append(s)
    if not dirichlet_sides:
        _fail("device.contacts",
              "no Dirichlet side: the Dirichlet boundary must have positive measure")
    for table in ("psi", "phi"):
        tab = con[table]
        if not isinstance(tab, dict):
            _fail(f"device.contacts.{table}", "expected a mapping side -> value")
        for s in tab:
            if s not in sides:
                _fail(f"device.contacts.{table}.{s}", "unknown side")
            _number(tab[s], f"device.contacts.{table}.{s}")
        for s in dirichlet_sides:
            if s not in tab:
                _fail(f"device.contacts.{table}", f"missing value for Dirichlet side {s!r}")
    con["ramp_rate"] = _number(con["ramp_rate"], "device.contacts.ramp_rate")
    if con["ramp_side"] is not None:
        con["ramp_side"] = _choice(con["ramp_side"], "device.contacts.ramp_side", sides)
    cfg["contacts"] = con

    if not isinstance(cfg["species"], list) or len(cfg["species"]) < 2:
        _fail("device.species", "expected a list with at least 'n' and 'p'")
    cfg["species"] = [
        _validate_species(s, f"device.species[{i}]", roles)
        for i, s in enumerate(cfg["species"])
    ]
    ids = [s["id"] for s in cfg["species"]]
    for i, sid in enumerate(ids):
        if sid in ids[:i]:
            _fail(f"device.species[{i}].id", f"duplicate species id {sid!r}")

    if cfg["generation"] is not None:
        gen = _mapping(cfg["generation"], "device.generation", {
            "photon_flux": 0.0, "absorption": 1.0, "vertical_axis": "x",
        })
        gen["photon_flux"] = _number(gen["photon_flux"], "device.generation.photon_flux",
                                     minimum=0.0)
        gen["absorption"] = _number(gen["absorption"], "device.generation.absorption",
                                    minimum=0.0, strict_min=True)
        gen["vertical_axis"] = _choice(gen["vertical_axis"],
                                       "device.generation.vertical_axis", ("x", "y"))
        cfg["generation"] = gen

    rec = _mapping(cfg["recombination"], "device.recombination", {
        "model": "constant", "rate_constant": 0.0, "n_ref": 1.0, "p_ref": 1.0,
    })
    rec["model"] = _choice(rec["model"], "device.recombination.model",
                           ("constant", "density_limited"))
    rec["rate_constant"] = _number(rec["rate_constant"],
                                   "device.recombination.rate_constant", minimum=0.0)
    rec["n_ref"] = _number(rec["n_ref"], "device.recombination.n_ref",
                           minimum=0.0, strict_min=True)
    rec["p_ref"] = _number(rec["p_ref"], "device.recombination.p_ref",
                           minimum=0.0, strict_min=True)
    cfg["recombination"] = rec

    ini = _mapping(cfg["initial"], "device.initial", {
        "mode": "equilibrium", "amplitude": 0.0, "seed": 0, "values": {},
    })
    ini["mode"] = _choice(ini["mode"], "device.initial.mode",
                          ("equilibrium", "perturbed_equilibrium", "uniform"))
    ini["amplitude"] = _number(ini["amplitude"], "device.initial.amplitude", minimum=0.0)
    ini["seed"] = _integer(ini["seed"], "device.initial.seed", minimum=0)
    if not isinstance(ini["values"], dict):
        _fail("device.initial.values", "expected a mapping species id -> density")
    for sid, val in ini["values"].items():
        if sid not in ids:
            _fail(f"device.initial.values.{sid}", "unknown species id")
        _number(val, f"device.initial.values.{sid}", minimum=0.0, strict_min=True)
    # strict upper bound below the saturation density for bounded statistics
    for s in cfg["species"]:
        val = ini["values"].get(s["id"])
        if val is not None and isinstance(s["statistics"], dict):
            cap = s["n_states"] / s["statistics"]["blakemore"]
            if val >= cap:
                _fail(f"device.initial.values.{s['id']}",
                      f"initial density must stay strictly below "
                      f"n_states/gamma = {cap:g}, got {val}")
    cfg["initial"] = ini
    return cfg


# -- scenario -----------------------------------------------------------


@dataclass
class ScenarioSpec:
    """Validated scenario: what to run, on which device, with which solver."""

    kind: str
    name: str
    device_config: dict
    solver: SolverConfig
    params: dict
    seed: int
    output_dir: str
    source_path: Optional[Path] = None
    resolved: dict = field(default_factory=dict)


def _validate_solver(raw: Any, path: str) -> SolverConfig:
    out = _mapping(raw or {}, path, {
        "newton_tol": 1e-10,
        "max_newton_iters": 50,
        "damping_levels": 11,
        "density_safeguard": 0.9,
        "dt_initial": 1e-2,
        "dt_min": 1e-8,
        "dt_max": 1.0,
        "dt_grow": 1.5,
        "dt_shrink": 0.5,
        "gummel": False,
        "gummel_tol": 1e-3,
        "gummel_max_sweeps": 5,
        "polish_iters": 3,
    })
    cfg = SolverConfig(
        newton_tol=_number(out["newton_tol"], f"{path}.newton_tol",
                           minimum=0.0, strict_min=True),
        max_newton_iters=_integer(out["max_newton_iters"], f"{path}.max_newton_iters",
                                  minimum=1),
        damping_levels=_integer(out["damping_levels"], f"{path}.damping_levels",
                                minimum=1),
        density_safeguard=_number(out["density_safeguard"], f"{path}.density_safeguard",
                                  minimum=0.0, strict_min=True, maximum=1.0, strict_max=True),
        dt_initial=_number(out["dt_initial"], f"{path}.dt_initial",
                           minimum=0.0, strict_min=True),
        dt_min=_number(out["dt_min"], f"{path}.dt_min", minimum=0.0, strict_min=True),
        dt_max=_number(out["dt_max"], f"{path}.dt_max", minimum=0.0, strict_min=True),
        dt_grow=_number(out["dt_grow"], f"{path}.dt_grow", minimum=1.0),
        dt_shrink=_number(out["dt_shrink"], f"{path}.dt_shrink",
                          minimum=0.0, strict_min=True, maximum=1.0, strict_max=True),
        gummel=bool(out["gummel"]),
        gummel_tol=_number(out["gummel_tol"], f"{path}.gummel_tol",
                           minimum=0.0, strict_min=True),
        gummel_max_sweeps=_integer(out["gummel_max_sweeps"],
                                   f"{path}.gummel_max_sweeps", minimum=0),
        polish_iters=_integer(out["polish_iters"], f"{path}.polish_iters", minimum=0),
    )
    if not (cfg.dt_min <= cfg.dt_initial <= cfg.dt_max):
        _fail(path, f"need dt_min <= dt_initial <= dt_max, got "
                    f"({cfg.dt_min}, {cfg.dt_initial}, {cfg.dt_max})")
    return cfg


_PARAM_SCHEMAS = {
    "equilibrium_decay": {"t_end": 10.0, "dt": 0.1},
    "transient": {"t_end": _REQUIRED, "dt": None, "adaptive": True,
                  "steady_state_tol": None},
    "stationary_sweep": {"bias_values": _REQUIRED},
    "uniqueness_probe": {"t_end": 5.0, "dt": 0.05, "n_perturbations": 3,
                         "noise_amplitude": 0.1},
    "convergence_study": {"case": _REQUIRED, "levels": 3},
    "axiom_check": {"kinds": _REQUIRED, "grid_min": -30.0, "grid_max": 30.0,
                    "grid_points": 61},
}


def _validate_params(kind: str, raw: Any) -> dict:
    path = "scenario"
    out = _mapping(raw or {}, path, _PARAM_SCHEMAS[kind])
    if kind in ("equilibrium_decay", "transient", "uniqueness_probe"):
        out["t_end"] = _number(out["t_end"], f"{path}.t_end", minimum=0.0, strict_min=True)
    if kind in ("equilibrium_decay", "uniqueness_probe"):
        out["dt"] = _number(out["dt"], f"{path}.dt", minimum=0.0, strict_min=True)
    if kind == "transient":
        if out["dt"] is not None:
            out["dt"] = _number(out["dt"], f"{path}.dt", minimum=0.0, strict_min=True)
        if out["steady_state_tol"] is not None:
            out["steady_state_tol"] = _number(out["steady_state_tol"],
                                              f"{path}.steady_state_tol",
                                              minimum=0.0, strict_min=True)
        out["adaptive"] = bool(out["adaptive"])
    if kind == "stationary_sweep":
        if not isinstance(out["bias_values"], list) or not out["bias_values"]:
            _fail(f"{path}.bias_values", "expected a non-empty list of numbers")
        out["bias_values"] = [
            _number(v, f"{path}.bias_values[{i}]")
            for i, v in enumerate(out["bias_values"])
        ]
    if kind == "uniqueness_probe":
        out["n_perturbations"] = _integer(out["n_perturbations"],
                                          f"{path}.n_perturbations", minimum=2)
        out["noise_amplitude"] = _number(out["noise_amplitude"],
                                         f"{path}.noise_amplitude",
                                         minimum=0.0, maximum=0.5)
    if kind == "convergence_study":
        out["case"] = _choice(out["case"], f"{path}.case",
                              ("poisson_1d", "transient_dt", "regularity_2d"))
        out["levels"] = _integer(out["levels"], f"{path}.levels", minimum=2)
    if kind == "axiom_check":
        if not isinstance(out["kinds"], list) or not out["kinds"]:
            _fail(f"{path}.kinds", "expected a non-empty list of statistics kinds")
        out["kinds"] = [
            _validate_statistics(k, f"{path}.kinds[{i}]")
            for i, k in enumerate(out["kinds"])
        ]
        out["grid_min"] = _number(out["grid_min"], f"{path}.grid_min")
        out["grid_max"] = _number(out["grid_max"], f"{path}.grid_max")
        out["grid_points"] = _integer(out["grid_points"], f"{path}.grid_points", minimum=2)
        if out["grid_max"] <= out["grid_min"]:
            _fail(f"{path}.grid_max", "must exceed grid_min")
    return out


def validate_scenario_config(raw: dict, *, base_dir: Optional[Path] = None,
                             name_hint: str = "scenario") -> ScenarioSpec:
    top = _mapping(raw, "config", {
        "kind": _REQUIRED, "name": name_hint, "output_dir": None,
        "device": None, "device_path": None, "solver": None,
        "scenario": None, "seed": 0,
    })
    kind = _choice(top["kind"], "config.kind", SCENARIO_KINDS)
    seed = _integer(top["seed"], "config.seed", minimum=0)

    device_cfg = None
    if top["device"] is not None and top["device_path"] is not None:
        _fail("config.device", "give either 'device' inline or 'device_path', not both")
    if top["device"] is not None:
        device_cfg = validate_device_config(top["device"])
    elif top["device_path"] is not None:
        p = Path(top["device_path"])
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            _fail("config.device_path", f"file not found: {p}")
        device_cfg = validate_device_config(_load_json(p))
    elif kind != "axiom_check":
        _fail("config.device", f"scenario kind {kind!r} requires a device")

    solver = _validate_solver(top["solver"], "config.solver")
    params = _validate_params(kind, top["scenario"])
    name = top["name"] if isinstance(top["name"], str) else name_hint
    output_dir = top["output_dir"] or name

    resolved = {
        "kind": kind, "name": name, "seed": seed, "output_dir": output_dir,
        "device": device_cfg, "solver": solver.as_dict(), "scenario": params,
    }
    return ScenarioSpec(kind=kind, name=name, device_config=device_cfg,
                        solver=solver, params=params, seed=seed,
                        output_dir=output_dir, resolved=resolved)


def _load_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc


def parse_config(path) -> ScenarioSpec:
    """Load and validate a scenario configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: file not found")
    raw = _load_json(path)
    spec = validate_scenario_config(raw, base_dir=path.parent, name_hint=path.stem)
    spec.source_path = path
    return spec
