"""Finite-volume drift-diffusion simulator for perovskite solar cells.

Couples a Poisson equation to electron, hole and ionic-vacancy continuity
equations with Fermi-Dirac and Blakemore statistics, and ships the
diagnostics (free-energy decay, mass conservation, density bounds,
uniqueness probes) that certify the structural properties of the model at
desk scale.
"""

from .assembly import State, bernoulli, edge_flux, reaction_Q
from .device import Device, build_device, generation_profile, refine
from .diagnostics import (
    bounds_report,
    energy_decay_check,
    free_energy,
    gradient_norm,
    species_mass,
)
from .solver import (
    SolverConfig,
    Trajectory,
    build_initial_state,
    run_transient,
    solve_equilibrium,
    solve_stationary,
    solve_step,
    uniqueness_probe,
)
from .statistics import (
    Blakemore,
    Boltzmann,
    FermiDiracHalf,
    ShiftedStatistics,
    verify_axioms,
)

__version__ = "0.1.0"

__all__ = [
    "State", "bernoulli", "edge_flux", "reaction_Q",
    "Device", "build_device", "generation_profile", "refine",
    "bounds_report", "energy_decay_check", "free_energy", "gradient_norm",
    "species_mass",
    "SolverConfig", "Trajectory", "build_initial_state", "run_transient",
    "solve_equilibrium", "solve_stationary", "solve_step", "uniqueness_probe",
    "Blakemore", "Boltzmann", "FermiDiracHalf", "ShiftedStatistics",
    "verify_axioms",
    "__version__",
]
