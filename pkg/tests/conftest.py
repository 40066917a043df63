"""Shared device fixtures."""

import copy

import pytest

from vacdrift.device import build_device

PIN_1D = {
    "geometry": {"dimension": 1, "layers": [
        {"name": "etl", "role": "bulk", "width": 0.25, "cells": 25,
         "permittivity": 1.0, "doping": 0.5},
        {"name": "absorber", "role": "perovskite", "width": 0.5, "cells": 25,
         "permittivity": 0.8, "doping": 0.0},
        {"name": "htl", "role": "bulk", "width": 0.25, "cells": 25,
         "permittivity": 1.0, "doping": -0.5},
    ]},
    "contacts": {"psi": {"left": 0.0, "right": 0.0},
                 "phi": {"left": 0.0, "right": 0.0}},
    "species": [
        {"id": "n", "charge": -1, "statistics": "fermi_dirac_half",
         "n_states": 1.0, "mobility": {"bulk": 1.0, "perovskite": 0.6}},
        {"id": "p", "charge": 1, "statistics": "fermi_dirac_half",
         "n_states": 1.0, "mobility": {"bulk": 1.0, "perovskite": 0.6}},
        {"id": "vac", "charge": 1, "statistics": {"blakemore": 1.0},
         "n_states": 1.0, "mobility": {"perovskite": 0.1}},
    ],
    "recombination": {"model": "density_limited", "rate_constant": 0.5,
                      "n_ref": 2.0, "p_ref": 2.0},
    "initial": {"mode": "perturbed_equilibrium", "amplitude": 0.25, "seed": 11,
                "values": {"vac": 0.3}},
}

UNIFORM_1D = {
    "geometry": {"dimension": 1, "layers": [
        {"name": "bulk", "role": "bulk", "width": 1.0, "cells": 60,
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
    "initial": {"mode": "perturbed_equilibrium", "amplitude": 0.3, "seed": 7},
}

PIN_2D = {
    "geometry": {"dimension": 2, "layers": [
        {"name": "etl", "role": "bulk", "width": 0.25, "cells": 4,
         "permittivity": 1.0, "doping": 0.5},
        {"name": "absorber", "role": "perovskite", "width": 0.5, "cells": 8,
         "permittivity": 0.8, "doping": 0.0},
        {"name": "htl", "role": "bulk", "width": 0.25, "cells": 4,
         "permittivity": 1.0, "doping": -0.5},
    ], "y": {"height": 1.0, "cells": 8}},
    "contacts": {"psi": {"left": 0.0, "right": 0.0},
                 "phi": {"left": 0.0, "right": 0.0}},
    "species": [
        {"id": "n", "charge": -1, "statistics": "boltzmann",
         "mobility": {"bulk": 1.0, "perovskite": 0.6}},
        {"id": "p", "charge": 1, "statistics": "boltzmann",
         "mobility": {"bulk": 1.0, "perovskite": 0.6}},
        {"id": "vac", "charge": 1, "statistics": {"blakemore": 1.0},
         "n_states": 1.0, "mobility": {"perovskite": 0.1}},
    ],
    "recombination": {"model": "constant", "rate_constant": 0.5},
    "initial": {"mode": "perturbed_equilibrium", "amplitude": 0.2, "seed": 3,
                "values": {"vac": 0.3}},
}


def pin_config(cells_per_layer=25, **overrides):
    cfg = copy.deepcopy(PIN_1D)
    for layer in cfg["geometry"]["layers"]:
        layer["cells"] = cells_per_layer
    cfg.update(copy.deepcopy(overrides))
    return cfg


@pytest.fixture
def pin_device():
    return build_device(copy.deepcopy(PIN_1D))


@pytest.fixture
def uniform_device():
    return build_device(copy.deepcopy(UNIFORM_1D))


@pytest.fixture
def pin_device_2d():
    return build_device(copy.deepcopy(PIN_2D))
