"""Diagnostics: free energy, conservation, bounds, regularity probes.

Turns the structural guarantees of the continuous model into quantitative
pass/fail oracles on discrete trajectories:

* the free-energy functional (electrostatic + exact chemical part) must be
  non-increasing for equilibrium boundary data without generation,
* ionic-vacancy masses are conserved; electron/hole mass changes match the
  time-integrated reactions plus boundary fluxes,
* densities stay strictly positive and vacancy densities strictly below
  their saturation value,
* discrete W^{1,q}-type seminorms of the densities stay bounded under mesh
  refinement.

Constants that the theory only guarantees to exist (energy lower-bound
constant, exponential growth rate) are fitted and reported, not asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import assembly
from .assembly import State, assemble_system
from .device import Device

__all__ = [
    "DiagnosticsReport",
    "free_energy",
    "species_mass",
    "bounds_report",
    "BoundsEntry",
    "gradient_norm",
    "energy_lower_bound_ratio",
    "mass_balance_defects",
    "step_report",
    "energy_decay_check",
    "DecayCheck",
    "convergence_study",
    "StudyRow",
    "regularity_probe",
    "RegularityResult",
    "report_columns",
    "report_row",
]

ENERGY_SLACK = 1e-10
VACANCY_MASS_RTOL = 1e-12
BALANCE_ATOL = 1e-10


def free_energy(device: Device, state: State, node_data=None) -> float:
    """Discrete free energy: dielectric part plus exact chemical part.

    The electrostatic term pairs the potential offset from its boundary
    extension with the same edge transmissibilities the Poisson block
    uses; the chemical term integrates the exact antiderivative of the
    statistical relation relative to the boundary chemical potentials
    (zero reference for vacancies).
    """
    mesh = device.mesh
    psi_d, phi_d = device.dirichlet_fields(state.t)
    k, l = mesh.edge_nodes[:, 0], mesh.edge_nodes[:, 1]
    w = state.psi - psi_d
    total = 0.5 * float(np.dot(device.edge_t_eps, (w[k] - w[l]) ** 2))
    for sp in device.species:
        lay = device.layout(sp.id)
        stats = sp.statistics
        if sp.is_vacancy:
            v_ref = np.zeros(lay.n_local)
        else:
            v_ref = sp.charge * (phi_d[lay.nodes] - psi_d[lay.nodes])
        u = state.u[sp.id]
        if node_data is not None:
            eta = node_data[sp.id].eta
            v = eta - stats.zeta
            anti = stats.kind.antiderivative
            phi = (u * (v - v_ref) - stats.n_states
                   * (np.atleast_1d(anti(eta))
                      - np.atleast_1d(anti(v_ref + stats.zeta))))
        else:
            phi = np.atleast_1d(stats.energy_density(u, v_ref))
        total += float(np.dot(lay.volumes, phi))
    return total


def species_mass(device: Device, state: State, species_id: str) -> float:
    """Integral of the species density over its region."""
    lay = device.layout(species_id)
    return float(np.dot(lay.volumes, state.u[species_id]))


@dataclass(frozen=True)
class BoundsEntry:
    species: str
    minimum: float
    maximum: float
    margin_lower: float
    margin_upper: float  # inf for unbounded statistics
    breached: bool


def bounds_report(device: Device, state: State) -> dict:
    """Per-species density extrema and margins to the open range limits."""
    out = {}
    for sp in device.species:
        u = state.u[sp.id]
        cap = sp.statistics.density_max
        lo, hi = float(np.min(u)), float(np.max(u))
        margin_hi = cap - hi if np.isfinite(cap) else math.inf
        breached = lo <= 0.0 or (np.isfinite(cap) and hi >= cap)
        out[sp.id] = BoundsEntry(sp.id, lo, hi, lo, margin_hi, breached)
    return out


def gradient_norm(device: Device, state: State, species_id: str, q: float) -> float:
    """Discrete L^q norm of the density gradient on the species region.

    Two-point edge differences weighted so that, per edge direction, the
    weights sum to the region measure; exact for linear fields.
    """
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    lay = device.layout(species_id)
    mesh = device.mesh
    e = lay.edge_index
    d = mesh.edge_dist[e]
    w = mesh.edge_area[e] * d
    slope = np.abs((state.u[species_id][lay.edge_l]
                    - state.u[species_id][lay.edge_k]) / d)
    return float(np.sum(w * slope ** q) ** (1.0 / q))


def potential_h1_norm_sq(device: Device, state: State) -> float:
    """Discrete squared H^1 norm of the electrostatic potential."""
    mesh = device.mesh
    k, l = mesh.edge_nodes[:, 0], mesh.edge_nodes[:, 1]
    grad = (np.dot(mesh.edge_area / mesh.edge_dist,
                   (state.psi[k] - state.psi[l]) ** 2))
    return float(np.dot(mesh.volumes, state.psi ** 2) + grad)


def energy_lower_bound_ratio(device: Device, state: State,
                             energy: Optional[float] = None) -> float:
    """Empirical constant in (sum of L1 masses + |psi|_H1^2) <= c (1 + energy)."""
    if energy is None:
        energy = free_energy(device, state)
    total = potential_h1_norm_sq(device, state)
    for sp in device.species:
        total += abs(species_mass(device, state, sp.id))
    return total / (1.0 + energy)


def mass_balance_defects(device: Device, state_new: State, state_old: State,
                         dt: float, node_data=None) -> dict:
    """Per-species bookkeeping defect of one backward Euler step.

    For electrons/holes the interior mass change must equal dt times
    (reactions integrated over interior cells plus the influx through
    Dirichlet-adjacent edges); for vacancies the total mass change itself.
    All terms are evaluated at the new state, matching the implicit update.
    """
    if node_data is None:
        node_data = assembly.state_node_data(device, state_new)
    out = {}
    r = assembly._reaction_from_nodes(device, state_new.u["n"], state_new.u["p"],
                                      node_data["n"], node_data["p"])
    for sp in device.species:
        lay = device.layout(sp.id)
        u_new, u_old = state_new.u[sp.id], state_old.u[sp.id]
        if sp.is_vacancy:
            out[sp.id] = float(np.dot(lay.volumes, u_new - u_old))
            continue
        interior = np.ones(lay.n_local, dtype=bool)
        interior[lay.dirichlet_local] = False
        dm = float(np.dot(lay.volumes[interior], (u_new - u_old)[interior]))
        g = device.generation_cell[lay.nodes]
        source = float(np.dot(lay.volumes[interior], g[interior] - r[interior]))
        gam = node_data[sp.id].gam
        ek, el = lay.edge_k, lay.edge_l
        dw = sp.charge * (state_new.psi[lay.nodes[ek]]
                          - state_new.psi[lay.nodes[el]]) - (gam[ek] - gam[el])
        flux = lay.t_mu * (assembly.bernoulli(-dw) * u_new[ek]
                           - assembly.bernoulli(dw) * u_new[el])
        k_in = interior[ek]
        l_in = interior[el]
        influx = (-np.sum(flux[k_in & ~l_in]) + np.sum(flux[~k_in & l_in]))
        out[sp.id] = dm - dt * (source + float(influx))
    return out


@dataclass
class DiagnosticsReport:
    """Per-step record; flags derive from the numeric fields alone."""

    t: float
    dt: Optional[float]
    newton_iters: int
    residual_norm: float
    free_energy: float
    max_phi_gap: float
    masses: dict
    minima: dict
    maxima: dict
    margins: dict
    balance_defects: dict
    energy_lower_ratio: float
    energy_increase: bool
    mass_drift: bool
    bounds_breach: bool


def step_report(device: Device, state: State, prev_state: Optional[State],
                dt: Optional[float], info,
                prev_report: Optional["DiagnosticsReport"] = None,
                eta_warm: Optional[dict] = None) -> DiagnosticsReport:
    nd = assembly.state_node_data(device, state, warm=eta_warm)
    energy = free_energy(device, state, node_data=nd)
    bounds = bounds_report(device, state)
    masses = {sp.id: species_mass(device, state, sp.id) for sp in device.species}

    v_n = nd["n"].eta - device.species_by_id("n").statistics.zeta
    v_p = nd["p"].eta - device.species_by_id("p").statistics.zeta
    max_phi_gap = float(np.max(np.abs(v_n + v_p))) if v_n.size else 0.0

    residual_norm = math.nan
    energy_increase = False
    mass_drift = False
    balance = {}
    if prev_state is not None and dt is not None:
        res = assemble_system(device, state, prev_state, dt,
                              want_jacobian=False, node_data=nd)
        residual_norm = float(np.linalg.norm(res.values))
        prev_energy = (prev_report.free_energy if prev_report is not None
                       else free_energy(device, prev_state))
        energy_increase = energy > prev_energy + ENERGY_SLACK * max(1.0, abs(prev_energy))
        balance = mass_balance_defects(device, state, prev_state, dt, node_data=nd)
        for sp in device.species:
            if sp.is_vacancy:
                m_prev = species_mass(device, prev_state, sp.id)
                drift = abs(masses[sp.id] - m_prev)
                if drift > VACANCY_MASS_RTOL * max(abs(m_prev), 1e-300):
                    mass_drift = True
            elif abs(balance[sp.id]) > BALANCE_ATOL:
                mass_drift = True

    return DiagnosticsReport(
        t=state.t, dt=dt,
        newton_iters=getattr(info, "iterations", 0) if info is not None else 0,
        residual_norm=residual_norm,
        free_energy=energy,
        max_phi_gap=max_phi_gap,
        masses=masses,
        minima={s: b.minimum for s, b in bounds.items()},
        maxima={s: b.maximum for s, b in bounds.items()},
        margins={s: b.margin_upper for s, b in bounds.items()},
        balance_defects=balance,
        energy_lower_ratio=energy_lower_bound_ratio(device, state, energy),
        energy_increase=energy_increase,
        mass_drift=mass_drift,
        bounds_breach=any(b.breached for b in bounds.values()),
    )


def report_columns(device: Device) -> list:
    cols = ["step", "t", "dt", "newton_iters", "residual_norm", "free_energy",
            "max_phi_gap", "energy_lower_ratio"]
    for sp in device.species:
        cols += [f"mass_{sp.id}", f"min_{sp.id}", f"max_{sp.id}", f"margin_{sp.id}"]
    for sp in device.species:
        if not sp.is_vacancy:
            cols.append(f"balance_defect_{sp.id}")
    cols += ["energy_increase", "mass_drift", "bounds_breach"]
    return cols


def report_row(device: Device, step: int, rep: DiagnosticsReport) -> list:
    row = [step, rep.t, rep.dt if rep.dt is not None else "",
           rep.newton_iters, rep.residual_norm, rep.free_energy,
           rep.max_phi_gap, rep.energy_lower_ratio]
    for sp in device.species:
        row += [rep.masses[sp.id], rep.minima[sp.id], rep.maxima[sp.id],
                rep.margins[sp.id]]
    for sp in device.species:
        if not sp.is_vacancy:
            row.append(rep.balance_defects.get(sp.id, ""))
    row += [int(rep.energy_increase), int(rep.mass_drift), int(rep.bounds_breach)]
    return row


# -- trajectory-level checks ----------------------------------------------


@dataclass
class DecayCheck:
    mode: str
    passed: Optional[bool]
    worst_increase: float
    worst_step: Optional[int]
    growth_rate: float


def energy_decay_check(reports, mode: str = "equilibrium") -> DecayCheck:
    """Monotone decay (equilibrium mode) or fitted growth constant.

    In equilibrium mode the check fails if the energy rises by more than
    1e-10 * max(1, |energy|) between consecutive accepted steps.  In
    general mode no monotonicity applies; the empirical exponential-bound
    rate is fitted from log(energy offset) against time.
    """
    energies = np.array([r.free_energy for r in reports], dtype=float)
    times = np.array([r.t for r in reports], dtype=float)
    if energies.size == 0:
        raise ValueError("empty trajectory")
    worst, worst_step = 0.0, None
    for i in range(1, energies.size):
        rise = energies[i] - energies[i - 1]
        slack = ENERGY_SLACK * max(1.0, abs(energies[i - 1]))
        if rise - slack > worst:
            worst, worst_step = rise - slack, i
    offset = 1.0 + max(0.0, -float(energies.min()))
    if energies.size > 1 and times[-1] > times[0]:
        a = np.polyfit(times, np.log(energies + offset), 1)
        growth = float(a[0])
    else:
        growth = 0.0
    if mode == "equilibrium":
        return DecayCheck("equilibrium", worst <= 0.0, worst, worst_step, growth)
    return DecayCheck("general", None, worst, worst_step, growth)


# -- convergence and regularity studies -------------------------------------


@dataclass
class StudyRow:
    level: int
    h: float
    dt: float
    error: float
    order: float
    note: str = ""


def _observed_orders(rows, ratio=2.0):
    for i in range(1, len(rows)):
        e0, e1 = rows[i - 1].error, rows[i].error
        if e0 == 0.0 or e1 == 0.0:
            rows[i].order = math.nan
            rows[i].note = "undefined order: zero error"
        else:
            rows[i].order = math.log(e0 / e1) / math.log(ratio)
    return rows


def _poisson_manufactured_device(cells: int):
    from .device import build_device
    return build_device({
        "geometry": {"dimension": 1, "layers": [
            {"name": "bulk", "role": "bulk", "width": 1.0, "cells": cells,
             "permittivity": 1.0, "doping": 1.0}]},
        "contacts": {"psi": {"left": 0.0, "right": 0.0},
                     "phi": {"left": 0.0, "right": 0.0}},
        "species": [
            {"id": "n", "charge": -1, "statistics": "boltzmann",
             "mobility": {"bulk": 0.0}},
            {"id": "p", "charge": 1, "statistics": "boltzmann",
             "mobility": {"bulk": 0.0}},
        ],
        "initial": {"mode": "uniform", "values": {"n": 1.0, "p": 1.0}},
    })


def _decay_test_device(cells: int = 60, seed: int = 13):
    from .device import build_device
    return build_device({
        "geometry": {"dimension": 1, "layers": [
            {"name": "bulk", "role": "bulk", "width": 1.0, "cells": cells,
             "permittivity": 1.0, "doping": 0.0}]},
        "contacts": {"psi": {"left": 0.0, "right": 0.0},
                     "phi": {"left": 0.0, "right": 0.0}},
        "species": [
            {"id": "n", "charge": -1, "statistics": "boltzmann",
             "mobility": {"bulk": 1.0}},
            {"id": "p", "charge": 1, "statistics": "boltzmann",
             "mobility": {"bulk": 1.0}},
        ],
        "recombination": {"model": "constant", "rate_constant": 1.0},
        "initial": {"mode": "perturbed_equilibrium", "amplitude": 0.4,
                    "seed": seed},
    })


def convergence_study(case: str, levels: int = 3, *, config=None,
                      refinements=None) -> list:
    """Observed-order study; returns a list of :class:`StudyRow`.

    ``poisson_1d``: fixed-charge Poisson problem on the unit interval
    against the closed-form solution x(1-x)/2.  ``transient_dt``: implicit
    Euler step-halving on a smooth relaxation transient against a much
    finer reference run (Richardson-style).
    """
    from . import solver as slv

    if case == "poisson_1d":
        factors = refinements if refinements is not None else [2 ** i for i in range(levels)]
        rows = []
        for lvl, f in enumerate(factors):
            cells = 40 * int(f)
            dev = _poisson_manufactured_device(cells)
            psi = slv.solve_linear_poisson(dev, dev.doping, 0.0)
            x = dev.mesh.coords[:, 0]
            exact = 0.5 * x * (1.0 - x)
            err = float(np.max(np.abs(psi - exact)))
            rows.append(StudyRow(lvl, 1.0 / cells, math.nan, err, math.nan))
        return _observed_orders(rows)

    if case == "transient_dt":
        cfg = config if config is not None else slv.SolverConfig(newton_tol=1e-12)
        dev = _decay_test_device()
        initial = slv.build_initial_state(dev)
        t_end, dt0 = 0.5, 0.05
        dts = [dt0 / 2 ** i for i in range(levels)]
        ref_dt = dts[-1] / 8.0
        ref = slv.run_transient(dev, t_end, cfg, initial=initial.copy(),
                                fixed_dt=ref_dt).final_state
        im = assembly.index_map(dev)
        x_ref = im.pack(ref)
        rows = []
        for lvl, dt in enumerate(dts):
            final = slv.run_transient(dev, t_end, cfg, initial=initial.copy(),
                                      fixed_dt=dt).final_state
            err = float(np.max(np.abs(im.pack(final) - x_ref)))
            rows.append(StudyRow(lvl, 1.0 / 60, dt, err, math.nan))
        return _observed_orders(rows)

    raise ValueError(f"unknown study case {case!r}")


@dataclass
class RegularityResult:
    factors: list
    qs: list
    norms: dict          # (species, q) -> list of norms per level
    changes: dict        # (species, q) -> successive relative changes
    bounded: bool
    changes_decreasing: bool


def regularity_probe(device: Device, config, *, factors=(1, 2, 4),
                     qs=(2.25, 2.5), bias: float = 0.1) -> RegularityResult:
    """Gradient-integrability probe under mesh refinement.

    Solves the steady state on successively refined meshes and tracks the
    discrete L^q gradient seminorms of every species density.  Pass
    condition is boundedness (no growth by more than a factor of two
    between levels); the successive relative changes are reported.
    """
    from . import solver as slv
    from .device import refine

    norms = {}
    for f in factors:
        dev = refine(device, f)
        state = slv.solve_stationary(dev, config, bias=bias)
        for sp in dev.species:
            for q in qs:
                norms.setdefault((sp.id, q), []).append(
                    gradient_norm(dev, state, sp.id, q))
    changes = {}
    bounded = True
    decreasing = True
    for key, seq in norms.items():
        rel = [abs(seq[i + 1] - seq[i]) / max(abs(seq[i]), 1e-300)
               for i in range(len(seq) - 1)]
        changes[key] = rel
        for i in range(len(seq) - 1):
            if seq[i + 1] > 2.0 * seq[i]:
                bounded = False
        if len(rel) >= 2 and not all(rel[i + 1] <= rel[i] + 1e-12
                                     for i in range(len(rel) - 1)):
            decreasing = False
    return RegularityResult(list(factors), list(qs), norms, changes,
                            bounded, decreasing)
