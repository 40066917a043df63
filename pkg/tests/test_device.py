"""Device construction, mesh admissibility, refinement, generation."""

import copy
import math

import numpy as np
import pytest

from tests.conftest import PIN_1D, PIN_2D, UNIFORM_1D
from vacdrift.device import (
    DeviceError,
    GenerationSpec,
    beer_lambert,
    build_device,
    build_tensor_mesh,
    generation_profile,
    refine,
    resample_cell_field,
)


class TestBuildDevice:
    def test_pin_stack_vacancies_on_middle_layer(self):
        cfg = copy.deepcopy(PIN_1D)
        for layer in cfg["geometry"]["layers"]:
            layer["cells"] = 100
        dev = build_device(cfg)
        assert dev.mesh.n_cells == 300
        lay = dev.layout("vac")
        assert lay.n_local == 100
        assert np.all(dev.is_perovskite[lay.nodes])
        # vacancy unknowns = perovskite cells x vacancy species
        assert lay.n_local == int(dev.is_perovskite.sum())

    def test_initial_vacancy_density_at_saturation_rejected(self):
        cfg = copy.deepcopy(PIN_1D)
        cfg["initial"]["values"]["vac"] = 1.0  # equals n_states / gamma
        with pytest.raises(Exception, match="strictly below"):
            build_device(cfg)

    def test_2d_interfaces_on_cell_faces(self):
        dev = build_device(copy.deepcopy(PIN_2D))
        assert dev.mesh.dimension == 2
        assert dev.mesh.shape == (16, 8)
        # material interface positions appear among the x face grid
        faces = dev.mesh.face_grids[0]
        for pos in (0.25, 0.75):
            assert np.min(np.abs(faces - pos)) < 1e-14
        # perovskite strip spans the full height
        perov = dev.is_perovskite.reshape(8, 16)
        assert np.all(perov[:, 4:12])
        assert not perov[:, :4].any() and not perov[:, 12:].any()

    def test_no_dirichlet_rejected(self):
        cfg = copy.deepcopy(UNIFORM_1D)
        cfg["contacts"]["left"] = "neumann"
        cfg["contacts"]["right"] = "neumann"
        with pytest.raises(Exception, match="positive measure"):
            build_device(cfg)

    def test_vacancy_needs_blakemore(self):
        cfg = copy.deepcopy(PIN_1D)
        cfg["species"][2]["statistics"] = "boltzmann"
        with pytest.raises(Exception):
            build_device(cfg)

    def test_boundary_markers_partition(self):
        dev = build_device(copy.deepcopy(PIN_2D))
        sides = dev.contacts.kinds
        assert set(sides) == {"left", "right", "bottom", "top"}
        assert dev.dirichlet_measure > 0.0
        assert set(dev.dirichlet_nodes) == (
            set(dev.mesh.side_nodes["left"]) | set(dev.mesh.side_nodes["right"]))


class TestMesh:
    def test_admissibility(self):
        for cfg in (PIN_1D, PIN_2D, UNIFORM_1D):
            dev = build_device(copy.deepcopy(cfg))
            dev.mesh.check_admissible()
            assert np.all(dev.mesh.volumes > 0)
            assert np.all(dev.mesh.edge_dist > 0)
            # node-to-face distances add up to the node distance
            gap = dev.mesh.edge_d0 + dev.mesh.edge_d1 - dev.mesh.edge_dist
            assert np.max(np.abs(gap)) < 1e-14

    def test_volume_partition(self):
        dev = build_device(copy.deepcopy(PIN_2D))
        assert math.isclose(float(dev.mesh.volumes.sum()), 1.0, rel_tol=1e-14)

    def test_boundary_nodes_on_boundary(self):
        dev = build_device(copy.deepcopy(PIN_1D))
        x = dev.mesh.coords[:, 0]
        assert x[0] == 0.0 and x[-1] == 1.0

    def test_bad_face_grid_rejected(self):
        with pytest.raises(DeviceError):
            build_tensor_mesh([np.array([0.0, 0.5, 0.5, 1.0])])


class TestRefine:
    def test_1d_length_preserved(self):
        cfg = copy.deepcopy(UNIFORM_1D)
        cfg["geometry"]["layers"][0]["cells"] = 10
        dev = build_device(cfg)
        fine = refine(dev, 2)
        assert fine.mesh.n_cells == 20
        assert abs(fine.mesh.volumes.sum() - dev.mesh.volumes.sum()) < 1e-15

    def test_doping_integral_preserved(self, pin_device):
        fine = refine(pin_device, 3)
        coarse_int = float(np.dot(pin_device.mesh.volumes, pin_device.doping))
        fine_int = float(np.dot(fine.mesh.volumes, fine.doping))
        assert abs(fine_int - coarse_int) <= 1e-14 * max(1.0, abs(coarse_int))

    def test_2d_region_fractions(self):
        cfg = copy.deepcopy(PIN_2D)
        dev = build_device(cfg)
        fine = refine(dev, 3)
        assert fine.mesh.shape == (48, 24)
        frac = float(np.dot(fine.mesh.volumes, fine.is_perovskite))
        frac0 = float(np.dot(dev.mesh.volumes, dev.is_perovskite))
        assert abs(frac - frac0) < 1e-14

    def test_resample_conserves_mass(self, pin_device):
        fine = refine(pin_device, 2)
        field = np.linspace(0.2, 0.8, pin_device.mesh.n_cells)
        fine_field = resample_cell_field(pin_device.mesh, fine.mesh, field)
        m0 = float(np.dot(pin_device.mesh.volumes, field))
        m1 = float(np.dot(fine.mesh.volumes, fine_field))
        assert abs(m1 - m0) <= 1e-14 * abs(m0)

    def test_bad_factor(self, pin_device):
        with pytest.raises(DeviceError):
            refine(pin_device, 0)


class TestGeneration:
    def test_pointwise_at_surface(self):
        gen = GenerationSpec(photon_flux=1.0, absorption=1.0)
        assert beer_lambert(gen, 0.0) == pytest.approx(1.0, rel=1e-15)

    def test_dark_all_zero(self, pin_device):
        assert np.all(generation_profile(pin_device) == 0.0)

    def test_total_absorbed_closed_form(self):
        cfg = copy.deepcopy(PIN_1D)
        cfg["generation"] = {"photon_flux": 0.7, "absorption": 2.3}
        dev = build_device(cfg)
        total = float(np.dot(dev.mesh.volumes, dev.generation_cell))
        exact = 0.7 * (1.0 - math.exp(-2.3 * 1.0))
        assert total == pytest.approx(exact, abs=1e-12)

    def test_bounded_by_surface_rate(self):
        cfg = copy.deepcopy(PIN_1D)
        cfg["generation"] = {"photon_flux": 1.5, "absorption": 4.0}
        dev = build_device(cfg)
        assert np.all(dev.generation_cell >= 0.0)
        assert np.all(dev.generation_cell <= 1.5 * 4.0)

    def test_negative_parameters_rejected(self):
        cfg = copy.deepcopy(PIN_1D)
        cfg["generation"] = {"photon_flux": -1.0, "absorption": 1.0}
        with pytest.raises(Exception, match="photon_flux"):
            build_device(cfg)
        cfg["generation"] = {"photon_flux": 1.0, "absorption": -2.0}
        with pytest.raises(Exception, match="absorption"):
            build_device(cfg)

    def test_2d_vertical_axis(self):
        cfg = copy.deepcopy(PIN_2D)
        cfg["generation"] = {"photon_flux": 1.0, "absorption": 2.0,
                             "vertical_axis": "x"}
        dev = build_device(cfg)
        g = dev.generation_cell.reshape(8, 16)
        # constant along y, decaying along x
        assert np.max(np.abs(g - g[0][None, :])) < 1e-15
        assert np.all(np.diff(g[0]) < 0)


class TestDirichletData:
    def test_linear_extension(self, pin_device):
        dev = pin_device.with_bias(0.5)
        psi_d, phi_d = dev.dirichlet_fields(0.0)
        x = dev.mesh.coords[:, 0]
        assert np.max(np.abs(psi_d - 0.5 * x)) < 1e-14
        assert np.max(np.abs(phi_d - 0.5 * x)) < 1e-14

    def test_ramp(self):
        cfg = copy.deepcopy(UNIFORM_1D)
        cfg["contacts"]["ramp_rate"] = 0.2
        cfg["contacts"]["ramp_side"] = "right"
        dev = build_device(cfg)
        psi_d0, _ = dev.dirichlet_fields(0.0)
        psi_d1, _ = dev.dirichlet_fields(2.0)
        assert psi_d1[-1] - psi_d0[-1] == pytest.approx(0.4, abs=1e-15)
        assert psi_d1[0] == psi_d0[0]

    def test_fingerprint_distinguishes_devices(self, pin_device, uniform_device):
        assert pin_device.fingerprint() != uniform_device.fingerprint()
        assert pin_device.fingerprint() == pin_device.fingerprint()
