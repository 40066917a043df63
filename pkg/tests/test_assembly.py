"""Fluxes, residual blocks, reaction terms, Jacobian correctness."""

import copy
import math

import mpmath
import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import brentq

from tests.conftest import PIN_1D, UNIFORM_1D, pin_config
from vacdrift.assembly import (
    CLASSICAL_SG,
    EXCESS_CHEMICAL_POTENTIAL,
    SchemeError,
    apply_dirichlet,
    assemble_continuity,
    assemble_poisson,
    assemble_system,
    bernoulli,
    bernoulli_deriv,
    dirichlet_values,
    edge_flux,
    index_map,
    quasi_fermi,
    reaction_Q,
    reaction_rate,
    two_point_flux,
    State,
)
from vacdrift.device import build_device
from vacdrift.solver import solve_linear_poisson
from vacdrift.statistics import Blakemore, Boltzmann, FermiDiracHalf, ShiftedStatistics


def random_admissible_state(device, rng, t=0.0, psi_amp=0.5):
    """Random interior state with densities safely inside their ranges."""
    n = device.mesh.n_cells
    u = {}
    for sp in device.species:
        lay = device.layout(sp.id)
        if np.isfinite(sp.statistics.density_max):
            w = rng.uniform(0.15, 0.8, lay.n_local)
            u[sp.id] = w * sp.statistics.density_max
        else:
            u[sp.id] = np.exp(rng.uniform(-1.5, 0.8, lay.n_local))
    state = State(t, psi_amp * rng.uniform(-1.0, 1.0, n), u)
    return apply_dirichlet(device, state)


class TestBernoulli:
    def test_removable_singularity(self):
        assert bernoulli(0.0) == 1.0

    def test_reflection_identity(self):
        for x in (1.0, 0.3, 5.0, 1e-8, 37.0):
            assert bernoulli(-x) - bernoulli(x) == pytest.approx(x, rel=1e-15)

    def test_large_argument_high_precision(self):
        mpmath.mp.dps = 40
        exact = float(mpmath.mpf(50) / mpmath.expm1(mpmath.mpf(50)))
        assert bernoulli(50.0) == pytest.approx(exact, rel=1e-15)

    def test_against_mpmath_grid(self):
        mpmath.mp.dps = 40
        for x in [-30.0, -2.0, -1e-3, -1e-13, 1e-13, 1e-3, 0.5, 2.0, 30.0]:
            exact = float(mpmath.mpf(x) / mpmath.expm1(mpmath.mpf(x)))
            assert bernoulli(x) == pytest.approx(exact, rel=1e-14)

    def test_derivative_fd(self):
        for x in (-5.0, -0.5, -1e-3, 0.0, 1e-3, 0.6, 8.0):
            h = 1e-6
            fdiff = (bernoulli(x + h) - bernoulli(x - h)) / (2 * h)
            assert bernoulli_deriv(x) == pytest.approx(fdiff, abs=2e-10)


def continuous_edge_flux(stats, z, mu, d, area, psi_k, psi_l, u_k, u_l):
    """Oracle: exact two-point flux from the continuous edge problem.

    Solves j = mu (g(u) u' + z u dpsi/dx) with linear potential and fixed
    endpoint densities by quadrature + root finding, and returns the flux
    in the discrete orientation (positive means mass leaving node k).
    """
    slope = (psi_l - psi_k) / d

    def length(j):
        # dx/du = mu g(u) / (j - mu z slope u)
        val, _ = quad(
            lambda u: mu * float(stats.diffusion_enhancement(u))
            / (j - mu * z * slope * u),
            u_k, u_l, epsabs=1e-13, epsrel=1e-12, limit=300)
        return val - d

    j_lo, j_hi = None, None
    for mag in np.logspace(-6, 4, 200):
        for j in (-mag, mag):
            # avoid singular integrand: j - mu z slope u must not vanish
            denom = j - mu * z * slope * np.linspace(min(u_k, u_l), max(u_k, u_l), 7)
            if np.any(np.abs(denom) < 1e-12) or np.any(np.sign(denom) != np.sign(denom[0])):
                continue
            val = length(j)
            if val > 0 and j_lo is None:
                pass
            if val < 0:
                j_hi = j if j_hi is None else j_hi
            else:
                j_lo = j if j_lo is None else j_lo
    # bracket by scanning for a sign change of length(j)
    grid = np.concatenate([-np.logspace(4, -8, 120), np.logspace(-8, 4, 120)])
    vals = []
    for j in grid:
        denom = j - mu * z * slope * np.linspace(min(u_k, u_l), max(u_k, u_l), 7)
        if np.any(np.abs(denom) < 1e-10) or np.any(np.sign(denom) != np.sign(denom[0])):
            vals.append(np.nan)
            continue
        try:
            vals.append(length(j))
        except Exception:
            vals.append(np.nan)
    vals = np.array(vals)
    j_star = None
    for i in range(len(grid) - 1):
        if np.isfinite(vals[i]) and np.isfinite(vals[i + 1]) \
                and vals[i] * vals[i + 1] < 0:
            j_star = brentq(length, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-13)
            break
    assert j_star is not None, "oracle failed to bracket the edge flux"
    return -area * j_star


class TestEdgeFlux:
    def test_zero_at_constant_quasi_fermi(self):
        rng = np.random.default_rng(5)
        for kind in (Boltzmann(), FermiDiracHalf(), Blakemore(1.0)):
            stats = ShiftedStatistics(kind, zeta=0.2, n_states=1.5)
            for _ in range(200):
                z = rng.choice([-1, 1])
                phi = rng.uniform(-1, 1)
                psi_k, psi_l = rng.uniform(-2, 2, 2)
                v_k, v_l = z * (phi - psi_k), z * (phi - psi_l)
                u_k = float(stats.carrier_density(v_k))
                u_l = float(stats.carrier_density(v_l))
                t_mu = rng.uniform(0.5, 2.0)
                f = two_point_flux(stats, z, t_mu, psi_k, psi_l, u_k, u_l)
                assert abs(f) <= 1e-14 * max(1.0, t_mu * (u_k + u_l))

    def test_antisymmetry_bitwise(self):
        rng = np.random.default_rng(6)
        stats = ShiftedStatistics(FermiDiracHalf(), zeta=-0.3, n_states=2.0)
        for _ in range(100):
            psi_k, psi_l = rng.uniform(-2, 2, 2)
            u_k, u_l = np.exp(rng.uniform(-2, 1, 2))
            t_mu = rng.uniform(0.5, 2.0)
            f = two_point_flux(stats, -1, t_mu, psi_k, psi_l, u_k, u_l)
            g = two_point_flux(stats, -1, t_mu, psi_l, psi_k, u_l, u_k)
            assert f == -g

    def test_classical_sg_closed_form(self):
        stats = ShiftedStatistics(Boltzmann(), zeta=0.0, n_states=1.0)
        rng = np.random.default_rng(7)
        for _ in range(50):
            z = int(rng.choice([-1, 1]))
            delta = rng.uniform(-3, 3)          # psi_k - psi_l
            u_k, u_l = np.exp(rng.uniform(-2, 1, 2))
            t_mu = rng.uniform(0.5, 2.0)
            f = two_point_flux(stats, z, t_mu, delta, 0.0, u_k, u_l,
                               scheme=CLASSICAL_SG)
            expected = t_mu * (bernoulli(-z * delta) * u_k
                               - bernoulli(z * delta) * u_l)
            assert f == pytest.approx(expected, rel=1e-14)

    def test_classical_sg_exact_for_continuous_problem(self):
        # the exponential-fitting construction solves the two-point problem
        stats = ShiftedStatistics(Boltzmann(), zeta=0.0, n_states=1.0)
        d, area, mu = 0.2, 1.0, 1.3
        psi_k, psi_l, u_k, u_l = 0.4, -0.2, 1.7, 0.6
        t_mu = area * mu / d
        f = two_point_flux(stats, 1, t_mu, psi_k, psi_l, u_k, u_l)
        oracle = continuous_edge_flux(stats, 1, mu, d, area, psi_k, psi_l, u_k, u_l)
        assert f == pytest.approx(oracle, rel=1e-9)

    def test_excess_matches_classical_for_boltzmann(self):
        rng = np.random.default_rng(8)
        stats = ShiftedStatistics(Boltzmann(), zeta=0.4, n_states=2.0)
        for _ in range(1000):
            z = int(rng.choice([-1, 1]))
            psi_k, psi_l = rng.uniform(-3, 3, 2)
            u_k, u_l = np.exp(rng.uniform(-3, 2, 2))
            t_mu = rng.uniform(0.1, 3.0)
            f_ecp = two_point_flux(stats, z, t_mu, psi_k, psi_l, u_k, u_l,
                                   scheme=EXCESS_CHEMICAL_POTENTIAL)
            f_sg = two_point_flux(stats, z, t_mu, psi_k, psi_l, u_k, u_l,
                                  scheme=CLASSICAL_SG)
            scale = max(abs(f_sg), 1e-30)
            assert abs(f_ecp - f_sg) <= 1e-12 * scale

    def test_classical_rejected_for_degenerate_statistics(self):
        stats = ShiftedStatistics(Blakemore(1.0), zeta=0.0, n_states=1.0)
        with pytest.raises(SchemeError):
            two_point_flux(stats, 1, 1.0, 0.0, 0.1, 0.4, 0.5, scheme=CLASSICAL_SG)

    def test_blakemore_saturated_endpoint(self):
        # one endpoint close to saturation: finite flux pushing mass away
        stats = ShiftedStatistics(Blakemore(1.0), zeta=0.0, n_states=1.0)
        f = two_point_flux(stats, 1, 10.0, 0.0, 0.0, 1.0 - 1e-9, 0.3)
        assert np.isfinite(f)
        assert f > 0.0  # mass leaves the saturated node

    def test_blakemore_against_continuous_oracle(self):
        stats = ShiftedStatistics(Blakemore(1.0), zeta=0.0, n_states=1.0)
        d, area, mu = 0.1, 1.0, 1.0
        cases = [
            (0.1, -0.1, 0.55, 0.45),   # moderate edge
            (0.0, 0.4, 0.7, 0.35),
            (0.0, 0.0, 0.9, 0.2),      # pure diffusion towards saturation
        ]
        for psi_k, psi_l, u_k, u_l in cases:
            t_mu = area * mu / d
            f = two_point_flux(stats, 1, t_mu, psi_k, psi_l, u_k, u_l)
            oracle = continuous_edge_flux(stats, 1, mu, d, area,
                                          psi_k, psi_l, u_k, u_l)
            assert np.sign(f) == np.sign(oracle)
            assert f == pytest.approx(oracle, rel=0.08)

    def test_device_edge_flux_region_guard(self, pin_device):
        rng = np.random.default_rng(0)
        state = random_admissible_state(pin_device, rng)
        # first mesh edge is in the transport layer: no vacancy flux there
        with pytest.raises(SchemeError):
            edge_flux(pin_device, "vac", 0, state)
        val = edge_flux(pin_device, "n", 0, state)
        assert np.isfinite(val)


class TestPoisson:
    def test_constant_potential_balanced_charge(self, uniform_device):
        dev = uniform_device
        n = dev.mesh.n_cells
        u = np.full(n, 0.8)
        state = State(0.0, np.zeros(n), {"n": u.copy(), "p": u.copy()})
        rows, _ = assemble_poisson(dev, state)
        free = np.setdiff1d(np.arange(n), dev.dirichlet_nodes)
        assert np.max(np.abs(rows[free])) <= 1e-14

    def test_capacitor_linear_profile(self):
        cfg = copy.deepcopy(UNIFORM_1D)
        cfg["contacts"]["psi"] = {"left": 0.0, "right": 1.0}
        dev = build_device(cfg)
        x = dev.mesh.coords[:, 0]
        n = dev.mesh.n_cells
        tiny = np.full(n, 1e-30)
        state = State(0.0, x.copy(), {"n": tiny.copy(), "p": tiny.copy()})
        rows, _ = assemble_poisson(dev, state)
        free = np.setdiff1d(np.arange(n), dev.dirichlet_nodes)
        assert np.max(np.abs(rows[free])) <= 1e-13

    def test_manufactured_quadratic_second_order(self):
        errors = []
        for cells in (40, 80, 160):
            cfg = copy.deepcopy(UNIFORM_1D)
            cfg["geometry"]["layers"][0]["cells"] = cells
            cfg["geometry"]["layers"][0]["doping"] = 1.0
            dev = build_device(cfg)
            psi = solve_linear_poisson(dev, dev.doping, 0.0)
            x = dev.mesh.coords[:, 0]
            errors.append(np.max(np.abs(psi - 0.5 * x * (1 - x))))
        orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
        assert all(abs(o - 2.0) < 0.2 for o in orders), (errors, orders)


class TestContinuity:
    def test_equilibrium_residual_zero(self, uniform_device):
        from vacdrift.solver import solve_equilibrium
        dev = uniform_device
        eq = solve_equilibrium(dev)
        res = assemble_system(dev, eq, eq, 0.5, want_jacobian=False)
        assert np.max(np.abs(res.values)) <= 1e-13

    def test_uniform_generation_ode_limit(self):
        # frozen transport (mu = 0), no recombination: the update is exactly
        # u_new = u_old + dt * G on interior cells
        cfg = copy.deepcopy(UNIFORM_1D)
        cfg["species"][0]["mobility"] = {"bulk": 0.0}
        cfg["species"][1]["mobility"] = {"bulk": 0.0}
        cfg["recombination"] = {"model": "constant", "rate_constant": 0.0}
        cfg["generation"] = {"photon_flux": 0.4, "absorption": 1.0}
        cfg["initial"] = {"mode": "uniform", "values": {"n": 1.0, "p": 1.0}}
        dev = build_device(cfg)
        n = dev.mesh.n_cells
        dt = 0.25
        old = State(0.0, np.zeros(n), {"n": np.full(n, 1.0), "p": np.full(n, 1.0)})
        old = apply_dirichlet(dev, old)
        g = dev.generation_cell
        new = State(dt, old.psi.copy(),
                    {"n": old.u["n"] + dt * g, "p": old.u["p"] + dt * g})
        rows, _ = assemble_continuity(dev, "n", new, old, dt)
        lay = dev.layout("n")
        interior = np.setdiff1d(np.arange(lay.n_local), lay.dirichlet_local)
        assert np.max(np.abs(rows[interior])) <= 1e-15

    def test_vacancy_flux_telescoping(self, pin_device):
        rng = np.random.default_rng(42)
        for _ in range(10):
            state = random_admissible_state(pin_device, rng, t=0.1)
            old = random_admissible_state(pin_device, rng, t=0.0)
            dt = 0.05
            rows, _ = assemble_continuity(pin_device, "vac", state, old, dt)
            lay = pin_device.layout("vac")
            mass_terms = lay.volumes * (state.u["vac"] - old.u["vac"]) / dt
            # flux contributions cancel pairwise in the sum over the region
            gap = math.fsum(rows) - math.fsum(mass_terms)
            scale = max(np.sum(np.abs(rows)), 1.0)
            assert abs(gap) <= 1e-13 * scale


class TestReaction:
    def test_equilibrium_exact_zero(self, uniform_device):
        # densities with v_n + v_p = 0 give exactly zero net rate
        sn = uniform_device.species_by_id("n").statistics
        spp = uniform_device.species_by_id("p").statistics
        for v in (-1.3, -0.2, 0.0, 0.8, 2.0):
            u_n = float(sn.carrier_density(v))
            u_p = float(spp.carrier_density(-v))
            assert reaction_Q(uniform_device, u_n, u_p) == 0.0

    def test_boltzmann_mass_action_closed_form(self, uniform_device):
        rng = np.random.default_rng(3)
        for _ in range(40):
            u_n, u_p = np.exp(rng.uniform(-2, 2, 2))
            q = reaction_Q(uniform_device, float(u_n), float(u_p), generation=0.3)
            expected = u_n * u_p - 1.0 - 0.3
            assert q == pytest.approx(expected, rel=1e-12, abs=1e-14)

    def test_zero_prefactor_gives_minus_g(self, pin_device):
        cfg = pin_config()
        cfg["recombination"] = {"model": "constant", "rate_constant": 0.0}
        dev = build_device(cfg)
        assert reaction_Q(dev, 0.5, 0.5, generation=0.7) == pytest.approx(-0.7)

    def test_density_limited_bounded(self, pin_device):
        r = reaction_rate(pin_device, np.array([50.0]), np.array([50.0]))
        rec = pin_device.recombination
        r0_max = rec.rate_constant
        assert 0 <= r[0] <= r0_max * 50.0 * 50.0

    def test_derivatives_fd(self, pin_device):
        rng = np.random.default_rng(9)
        h = 1e-7
        for _ in range(20):
            u_n, u_p = np.exp(rng.uniform(-1.5, 0.5, 2))
            r, drn, drp = reaction_rate(pin_device, np.array([u_n]),
                                        np.array([u_p]), want_jac=True)
            fdn = (reaction_rate(pin_device, np.array([u_n + h]), np.array([u_p]))
                   - reaction_rate(pin_device, np.array([u_n - h]), np.array([u_p]))) / (2 * h)
            fdp = (reaction_rate(pin_device, np.array([u_n]), np.array([u_p + h]))
                   - reaction_rate(pin_device, np.array([u_n]), np.array([u_p - h]))) / (2 * h)
            assert drn[0] == pytest.approx(fdn[0], rel=2e-6, abs=1e-8)
            assert drp[0] == pytest.approx(fdp[0], rel=2e-6, abs=1e-8)


class TestSystem:
    def test_dirichlet_rows_identity(self, pin_device):
        rng = np.random.default_rng(12)
        state = random_admissible_state(pin_device, rng, t=0.3)
        old = random_admissible_state(pin_device, rng, t=0.0)
        res = assemble_system(pin_device, state, old, 0.1)
        im = index_map(pin_device)
        idx, _ = dirichlet_values(pin_device, state.t)
        # residual zero at imposed values, identity rows in the Jacobian
        assert np.max(np.abs(res.values[idx])) <= 1e-15
        jac = res.jacobian.tocsr()
        for i in idx:
            row = jac.getrow(i)
            assert row.nnz == 1 and row.indices[0] == i and row.data[0] == 1.0

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_jacobian_finite_differences(self, seed):
        dev = build_device(pin_config(cells_per_layer=8))
        rng = np.random.default_rng(seed)
        state = random_admissible_state(dev, rng, t=0.1)
        old = random_admissible_state(dev, rng, t=0.0)
        dt = 0.1
        res = assemble_system(dev, state, old, dt)
        im = res.index
        x0 = im.pack(state)
        jac = res.jacobian.toarray()
        h = 1e-7
        for j in range(im.n_total):
            x1 = x0.copy()
            step = h * max(1.0, abs(x0[j]))
            x1[j] += step
            pert = im.unpack(x1, state.t)
            r1 = assemble_system(dev, pert, old, dt, want_jacobian=False)
            col = (r1.values - res.values) / step
            assert np.max(np.abs(col - jac[:, j])) <= 1e-5

    def test_quasi_fermi_constant_at_equilibrium(self, pin_device):
        from vacdrift.solver import solve_equilibrium
        eq = solve_equilibrium(pin_device)
        for sid in ("n", "p"):
            phi = quasi_fermi(pin_device, eq, sid)
            assert np.max(np.abs(phi - phi[0])) <= 1e-11

    def test_local_conservation_multiset(self, pin_device):
        # per species, +flux and -flux contributions cancel exactly in the
        # multiset of edge contributions
        from vacdrift.assembly import bernoulli as bern, state_node_data
        rng = np.random.default_rng(77)
        state = random_admissible_state(pin_device, rng)
        nd = state_node_data(pin_device, state)
        for sp in pin_device.species:
            lay = pin_device.layout(sp.id)
            gam = nd[sp.id].gam
            ek, el = lay.edge_k, lay.edge_l
            dw = sp.charge * (state.psi[lay.nodes[ek]] - state.psi[lay.nodes[el]]) \
                - (gam[ek] - gam[el])
            flux = lay.t_mu * (bern(-dw) * state.u[sp.id][ek]
                               - bern(dw) * state.u[sp.id][el])
            contributions = np.concatenate([flux, -flux])
            assert math.fsum(contributions) == 0.0
