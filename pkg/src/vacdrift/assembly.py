"""Discrete residual and Jacobian of the coupled drift-diffusion system.

Unknowns are the nodal electrostatic potential and the nodal densities of
every species on its region.  The Poisson block balances the dielectric
fluxes against the net charge; each continuity block combines a backward
Euler mass term, two-point exponentially-fitted edge fluxes and (for
electrons/holes) the generation-recombination source.

Fluxes use the excess-chemical-potential form of the Scharfetter-Gummel
scheme: the deviation of the statistics from the exponential family is
folded into an effective potential, so the flux vanishes identically at
constant quasi-Fermi potential for every statistics family and reduces to
the classical scheme in the Boltzmann case.

Dirichlet boundary conditions are imposed strongly: boundary rows are
identity rows pinning the unknown to its boundary value.  The Jacobian
sparsity pattern is fixed per device and cached, so repeated assemblies
only fill a value vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from .device import Device
from .statistics import Boltzmann

__all__ = [
    "SchemeError",
    "bernoulli",
    "bernoulli_deriv",
    "State",
    "IndexMap",
    "index_map",
    "apply_dirichlet",
    "dirichlet_values",
    "edge_flux",
    "two_point_flux",
    "reaction_rate",
    "reaction_Q",
    "assemble_poisson",
    "assemble_continuity",
    "assemble_system",
    "SystemResidual",
    "species_flux_sums",
    "state_node_data",
    "quasi_fermi",
]

CLASSICAL_SG = "ClassicalSG"
EXCESS_CHEMICAL_POTENTIAL = "ExcessChemicalPotential"


class SchemeError(ValueError):
    """Flux scheme incompatible with the species statistics."""


def bernoulli(x):
    """B(x) = x / (e^x - 1) with the removable singularity at 0 filled."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-12
    out[small] = 1.0 - 0.5 * x[small]
    big = ~small
    out[big] = x[big] / np.expm1(x[big])
    return float(out[0]) if scalar else out


def bernoulli_deriv(x):
    """Derivative of the Bernoulli function."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-2
    xs = x[small]
    out[small] = -0.5 + xs / 6.0 - xs ** 3 / 180.0 + xs ** 5 / 5040.0
    mid = (~small) & (x < 500.0)
    xm = x[mid]
    em = np.expm1(xm)
    out[mid] = (em - xm * (em + 1.0)) / (em * em)
    hi = x >= 500.0
    out[hi] = (1.0 - x[hi]) * np.exp(-x[hi])
    return float(out[0]) if scalar else out


def _scatter(size, idx_add, val_add, idx_sub, val_sub):
    return (np.bincount(idx_add, weights=val_add, minlength=size)
            - np.bincount(idx_sub, weights=val_sub, minlength=size))


# -- state ---------------------------------------------------------------


@dataclass
class State:
    """Nodal fields at one time level: potential plus per-species densities."""

    t: float
    psi: np.ndarray
    u: dict

    def copy(self) -> "State":
        return State(self.t, self.psi.copy(), {k: v.copy() for k, v in self.u.items()})

    def max_abs_difference(self, other: "State") -> float:
        d = float(np.max(np.abs(self.psi - other.psi))) if self.psi.size else 0.0
        for sid, arr in self.u.items():
            d = max(d, float(np.max(np.abs(arr - other.u[sid]))))
        return d


class IndexMap:
    """Packing of (psi, u_n, u_p, vacancies...) into one unknown vector."""

    def __init__(self, device: Device):
        n = device.mesh.n_cells
        self.psi = slice(0, n)
        self.species = {}
        offset = n
        for sp in device.species:
            m = device.layout(sp.id).n_local
            self.species[sp.id] = slice(offset, offset + m)
            offset += m
        self.n_total = offset
        idx = [device.dirichlet_nodes]
        for sp in device.species:
            lay = device.layout(sp.id)
            idx.append(lay.dirichlet_local + self.species[sp.id].start)
        self.dirichlet = np.concatenate(idx)
        self.dirichlet_mask = np.zeros(self.n_total, dtype=bool)
        self.dirichlet_mask[self.dirichlet] = True

    def pack(self, state: State) -> np.ndarray:
        x = np.empty(self.n_total)
        x[self.psi] = state.psi
        for sid, sl in self.species.items():
            x[sl] = state.u[sid]
        return x

    def unpack(self, x: np.ndarray, t: float) -> State:
        return State(t, x[self.psi].copy(),
                     {sid: x[sl].copy() for sid, sl in self.species.items()})


def index_map(device: Device) -> IndexMap:
    im = getattr(device, "_index_map", None)
    if im is None:
        im = IndexMap(device)
        device._index_map = im
    return im


def dirichlet_values(device: Device, t: float):
    """Pinned unknown indices and their boundary values at time t."""
    cache = getattr(device, "_dirichlet_cache", None)
    if cache is not None and cache[0] == t:
        return cache[1], cache[2]
    im = index_map(device)
    psi_d, _ = device.dirichlet_fields(t)
    idx = [device.dirichlet_nodes]
    vals = [psi_d[device.dirichlet_nodes]]
    for sp in device.species:
        lay = device.layout(sp.id)
        if lay.dirichlet_local.size:
            idx.append(lay.dirichlet_local + im.species[sp.id].start)
            vals.append(device.dirichlet_density(sp.id, t))
    idx, vals = np.concatenate(idx), np.concatenate(vals)
    device._dirichlet_cache = (t, idx, vals)
    return idx, vals


def apply_dirichlet(device: Device, state: State) -> State:
    """Copy of the state with boundary values imposed at its time stamp."""
    out = state.copy()
    idx, vals = dirichlet_values(device, state.t)
    im = index_map(device)
    x = im.pack(out)
    x[idx] = vals
    return im.unpack(x, state.t)


def quasi_fermi(device: Device, state: State, species_id: str) -> np.ndarray:
    """Quasi-Fermi potential phi = psi + v/z on the species region."""
    lay = device.layout(species_id)
    sp = lay.spec
    v = np.atleast_1d(sp.statistics.chemical_potential(state.u[species_id]))
    return state.psi[lay.nodes] + v / sp.charge


# -- shared per-node statistics data ---------------------------------------


@dataclass
class NodeData:
    """Per-node statistics quantities of one species at one state."""

    eta: np.ndarray           # F^{-1}(u/N) = v + zeta
    gam: np.ndarray           # log F(eta) - eta, the excess potential
    f: Optional[np.ndarray] = None
    fp: Optional[np.ndarray] = None
    dgam_du: Optional[np.ndarray] = None


def _node_data(stats, u, want_jac, eta_guess=None) -> NodeData:
    eta = np.atleast_1d(stats.eta(u, guess=eta_guess))
    gam = np.atleast_1d(stats.kind.log_value(eta)) - eta
    nd = NodeData(eta=eta, gam=gam)
    if want_jac:
        nd.f = np.atleast_1d(stats.kind.value(eta))
        nd.fp = np.atleast_1d(stats.kind.derivative(eta))
        nd.dgam_du = (1.0 / nd.f - 1.0 / nd.fp) / stats.n_states
    return nd


def state_node_data(device: Device, state: State, want_jac=False,
                    warm: Optional[dict] = None) -> dict:
    """Per-species :class:`NodeData` for one state, computed once."""
    out = {}
    for sp in device.species:
        guess = warm.get(sp.id) if warm else None
        out[sp.id] = _node_data(sp.statistics, state.u[sp.id], want_jac, guess)
    return out


def upgrade_node_data(device: Device, node_data: dict) -> dict:
    """Fill the Jacobian fields of node data computed without them."""
    for sp in device.species:
        nd = node_data[sp.id]
        if nd.f is None:
            stats = sp.statistics
            nd.f = np.atleast_1d(stats.kind.value(nd.eta))
            nd.fp = np.atleast_1d(stats.kind.derivative(nd.eta))
            nd.dgam_du = (1.0 / nd.f - 1.0 / nd.fp) / stats.n_states
    return node_data


# -- edge fluxes ----------------------------------------------------------


def two_point_flux(stats, charge, t_mu, psi_k, psi_l, u_k, u_l,
                   scheme=EXCESS_CHEMICAL_POTENTIAL, want_jac=False):
    """Two-point flux out of node k across one edge (transmissibility included).

    Returns the flux, or (flux, d/dpsi_k, d/dpsi_l, d/du_k, d/du_l) with
    ``want_jac``.  Antisymmetric under swapping the endpoints.
    """
    kind = stats.kind
    psi_k = np.asarray(psi_k, dtype=float)
    scalar = psi_k.ndim == 0
    psi_k, psi_l, u_k, u_l, t_mu = map(np.atleast_1d, map(
        lambda a: np.asarray(a, dtype=float), (psi_k, psi_l, u_k, u_l, t_mu)))

    if scheme == CLASSICAL_SG:
        if not isinstance(kind, Boltzmann):
            raise SchemeError(
                "the classical Scharfetter-Gummel flux is only exact for "
                "exponential statistics; use the excess-chemical-potential scheme")
        dw = charge * (psi_k - psi_l)
        dgam_k = dgam_l = np.zeros_like(u_k)
    elif scheme == EXCESS_CHEMICAL_POTENTIAL:
        nd_k = _node_data(stats, u_k, want_jac)
        nd_l = _node_data(stats, u_l, want_jac)
        dw = charge * (psi_k - psi_l) - (nd_k.gam - nd_l.gam)
        if want_jac:
            dgam_k, dgam_l = nd_k.dgam_du, nd_l.dgam_du
    else:
        raise SchemeError(f"unknown flux scheme {scheme!r}")

    b_m = bernoulli(-dw)
    b_p = bernoulli(dw)
    flux = t_mu * (b_m * u_k - b_p * u_l)
    if not want_jac:
        return float(flux[0]) if scalar else flux
    dflux_ddw = t_mu * (-bernoulli_deriv(-dw) * u_k - bernoulli_deriv(dw) * u_l)
    d_psi_k = charge * dflux_ddw
    d_psi_l = -charge * dflux_ddw
    d_u_k = t_mu * b_m - dflux_ddw * dgam_k
    d_u_l = -t_mu * b_p + dflux_ddw * dgam_l
    if scalar:
        return (float(flux[0]), float(d_psi_k[0]), float(d_psi_l[0]),
                float(d_u_k[0]), float(d_u_l[0]))
    return flux, d_psi_k, d_psi_l, d_u_k, d_u_l


def edge_flux(device: Device, species_id: str, edge: int, state: State,
              scheme=EXCESS_CHEMICAL_POTENTIAL) -> float:
    """Flux of one species across one mesh edge at the given state."""
    lay = device.layout(species_id)
    pos = np.flatnonzero(lay.edge_index == edge)
    if pos.size == 0:
        raise SchemeError(
            f"edge {edge} does not connect two cells of the region of {species_id!r}")
    e = int(pos[0])
    k, l = lay.edge_k[e], lay.edge_l[e]
    gk, gl = lay.nodes[k], lay.nodes[l]
    u = state.u[species_id]
    return two_point_flux(lay.spec.statistics, lay.spec.charge, lay.t_mu[e],
                          state.psi[gk], state.psi[gl], u[k], u[l], scheme)


def species_flux_sums(device: Device, species_id: str, state: State,
                      node_data: Optional[dict] = None) -> np.ndarray:
    """Sum of outgoing edge fluxes per node of the species region."""
    lay = device.layout(species_id)
    sp = lay.spec
    u = state.u[species_id]
    nd = (node_data[species_id] if node_data is not None
          else _node_data(sp.statistics, u, False))
    ek, el = lay.edge_k, lay.edge_l
    dw = sp.charge * (state.psi[lay.nodes[ek]] - state.psi[lay.nodes[el]]) \
        - (nd.gam[ek] - nd.gam[el])
    flux = lay.t_mu * (bernoulli(-dw) * u[ek] - bernoulli(dw) * u[el])
    return _scatter(lay.n_local, ek, flux, el, flux)


# -- reactions ------------------------------------------------------------


def _reaction_from_nodes(device, u_n, u_p, nd_n: NodeData, nd_p: NodeData,
                         want_jac=False):
    rec = device.recombination
    sn = device.species_by_id("n").statistics
    sp = device.species_by_id("p").statistics
    s = (nd_n.eta - sn.zeta) + (nd_p.eta - sp.zeta)
    log_const = (np.log(sn.n_states) + np.log(sp.n_states) + sn.zeta + sp.zeta)

    b = u_n * u_p
    s_c = np.minimum(31.0, np.maximum(-31.0, s))
    near = np.abs(s) < 30.0
    mass_action = np.where(near, b * np.exp(-s_c),
                           np.exp(log_const + nd_n.gam + nd_p.gam))
    detailed = np.where(near, b * (-np.expm1(-s_c)), b - mass_action)

    if rec.model == "density_limited":
        denom = 1.0 + u_n / rec.n_ref + u_p / rec.p_ref
        r0 = rec.rate_constant / denom
    else:
        r0 = np.full_like(b, rec.rate_constant)
    r = r0 * detailed
    if not want_jac:
        return r

    ds_dn = 1.0 / (sn.n_states * nd_n.fp)
    ds_dp = 1.0 / (sp.n_states * nd_p.fp)
    dma_dn = np.where(near, u_p * np.exp(-s_c) - mass_action * ds_dn,
                      mass_action * nd_n.dgam_du)
    dma_dp = np.where(near, u_n * np.exp(-s_c) - mass_action * ds_dp,
                      mass_action * nd_p.dgam_du)
    ddet_dn = u_p - dma_dn
    ddet_dp = u_n - dma_dp
    if rec.model == "density_limited":
        dr0_dn = -rec.rate_constant / (denom * denom) / rec.n_ref
        dr0_dp = -rec.rate_constant / (denom * denom) / rec.p_ref
    else:
        dr0_dn = dr0_dp = np.zeros_like(b)
    return (r, dr0_dn * detailed + r0 * ddet_dn, dr0_dp * detailed + r0 * ddet_dp)


def reaction_rate(device: Device, u_n, u_p, want_jac=False):
    """Net recombination rate R(u_n, u_p) and optionally its derivatives.

    R = r0(u_n, u_p) u_n u_p (1 - e^{-(v_n + v_p)}), which vanishes exactly
    at equal quasi-Fermi potentials (v_n + v_p = 0).  Far from equilibrium
    the exponential is evaluated through the bounded product
    u_n u_p e^{-(v_n+v_p)} = N_n N_p e^{zeta_n + zeta_p + gamma_n + gamma_p}
    with gamma = log F - eta <= 0, which cannot overflow.
    """
    sn = device.species_by_id("n").statistics
    sp = device.species_by_id("p").statistics
    u_n_arr = np.atleast_1d(np.asarray(u_n, dtype=float))
    u_p_arr = np.atleast_1d(np.asarray(u_p, dtype=float))
    nd_n = _node_data(sn, u_n_arr, want_jac)
    nd_p = _node_data(sp, u_p_arr, want_jac)
    return _reaction_from_nodes(device, u_n_arr, u_p_arr, nd_n, nd_p, want_jac)


def reaction_Q(device: Device, u_n, u_p, generation=None):
    """Net sink Q = R - G at a point (generation defaults to zero)."""
    r = reaction_rate(device, u_n, u_p)
    g = 0.0 if generation is None else np.asarray(generation, dtype=float)
    q = r - g
    return float(q[0]) if np.ndim(u_n) == 0 else q


# -- block assembly -------------------------------------------------------


@dataclass
class SystemResidual:
    values: np.ndarray
    jacobian: object  # scipy CSR matrix or None
    index: IndexMap


class _Triplets:
    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []

    def add(self, r, c, v):
        self.rows.append(np.atleast_1d(r))
        self.cols.append(np.atleast_1d(c))
        self.vals.append(np.atleast_1d(np.asarray(v, dtype=float)))

    def collect(self):
        if not self.rows:
            return (np.array([], dtype=int), np.array([], dtype=int), np.array([]))
        return (np.concatenate(self.rows), np.concatenate(self.cols),
                np.concatenate(self.vals))


def assemble_poisson(device: Device, state: State, want_jac=True):
    """Poisson block rows: dielectric edge fluxes minus cell charge."""
    im = index_map(device)
    mesh = device.mesh
    k, l = mesh.edge_nodes[:, 0], mesh.edge_nodes[:, 1]
    t_eps = device.edge_t_eps
    edge_val = t_eps * (state.psi[k] - state.psi[l])
    rows = _scatter(mesh.n_cells, k, edge_val, l, edge_val)

    charge = device.doping.copy()
    for sp in device.species:
        lay = device.layout(sp.id)
        charge[lay.nodes] += sp.charge * state.u[sp.id]
    rows -= mesh.volumes * charge

    trip = _Triplets()
    if want_jac:
        trip.add(k, k, t_eps)
        trip.add(k, l, -t_eps)
        trip.add(l, l, t_eps)
        trip.add(l, k, -t_eps)
        for sp in device.species:
            lay = device.layout(sp.id)
            trip.add(lay.nodes, im.species[sp.id].start + np.arange(lay.n_local),
                     -mesh.volumes[lay.nodes] * sp.charge)
    return rows, trip


def assemble_continuity(device: Device, species_id: str, state: State,
                        state_old, dt, want_jac=True, reaction=None,
                        node_data=None):
    """Continuity block rows of one species (backward Euler in time).

    ``dt=None`` assembles the stationary residual (no mass term); the
    Jacobian pattern still carries the mass diagonal (as zeros) so the
    sparsity is identical in both modes.  Precomputed reaction terms and
    node data may be passed in when assembling the full system.
    """
    if dt is not None and dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    im = index_map(device)
    lay = device.layout(species_id)
    sp = lay.spec
    u = state.u[species_id]
    row0 = im.species[species_id].start

    rows = np.zeros(lay.n_local)
    if dt is not None:
        rows += lay.volumes * (u - state_old.u[species_id]) / dt

    nd = (node_data[species_id] if node_data is not None
          else _node_data(sp.statistics, u, want_jac))
    gk, gl = lay.nodes[lay.edge_k], lay.nodes[lay.edge_l]
    ek, el = lay.edge_k, lay.edge_l
    dw = sp.charge * (state.psi[gk] - state.psi[gl]) - (nd.gam[ek] - nd.gam[el])
    b_m = bernoulli(-dw)
    b_p = bernoulli(dw)
    flux = lay.t_mu * (b_m * u[ek] - b_p * u[el])
    rows += _scatter(lay.n_local, ek, flux, el, flux)

    trip = _Triplets()
    if want_jac:
        loc = np.arange(lay.n_local)
        trip.add(row0 + loc, row0 + loc,
                 lay.volumes / dt if dt is not None else np.zeros(lay.n_local))
        dflux_ddw = lay.t_mu * (-bernoulli_deriv(-dw) * u[ek]
                                - bernoulli_deriv(dw) * u[el])
        d_psi_k = sp.charge * dflux_ddw
        d_u_k = lay.t_mu * b_m - dflux_ddw * nd.dgam_du[ek]
        d_u_l = -lay.t_mu * b_p + dflux_ddw * nd.dgam_du[el]
        for rr, sign in ((row0 + ek, 1.0), (row0 + el, -1.0)):
            trip.add(rr, gk, sign * d_psi_k)
            trip.add(rr, gl, -sign * d_psi_k)
            trip.add(rr, row0 + ek, sign * d_u_k)
            trip.add(rr, row0 + el, sign * d_u_l)

    if sp.id in ("n", "p"):
        if reaction is None:
            nd_n = (node_data["n"] if node_data is not None
                    else _node_data(device.species_by_id("n").statistics,
                                    state.u["n"], want_jac))
            nd_p = (node_data["p"] if node_data is not None
                    else _node_data(device.species_by_id("p").statistics,
                                    state.u["p"], want_jac))
            reaction = _reaction_from_nodes(device, state.u["n"], state.u["p"],
                                            nd_n, nd_p, want_jac)
        if want_jac:
            r, dr_dn, dr_dp = reaction
        else:
            r = reaction
        q = r - device.generation_cell[lay.nodes]
        rows += lay.volumes * q
        if want_jac:
            loc = np.arange(lay.n_local)
            trip.add(row0 + loc, im.species["n"].start + loc, lay.volumes * dr_dn)
            trip.add(row0 + loc, im.species["p"].start + loc, lay.volumes * dr_dp)
    return rows, trip


class _JacobianPattern:
    """Fixed CSR pattern of the coupled Jacobian, with a slot map."""

    def __init__(self, im: IndexMap, rows, cols, dirichlet_idx):
        keep = ~im.dirichlet_mask[rows]
        self.keep = keep
        rows_f = np.concatenate([rows[keep], dirichlet_idx])
        cols_f = np.concatenate([cols[keep], dirichlet_idx])
        order = np.lexsort((cols_f, rows_f))
        rs, cs = rows_f[order], cols_f[order]
        new = np.empty(rs.size, dtype=bool)
        new[0] = True
        new[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
        group = np.cumsum(new) - 1
        self.nnz = int(group[-1]) + 1
        self.indices = cs[new]
        slot_rows = rs[new]
        counts = np.bincount(slot_rows, minlength=im.n_total)
        self.indptr = np.concatenate([[0], np.cumsum(counts)])
        self.pos = np.empty(rs.size, dtype=np.int64)
        self.pos[order] = group
        self.n_entries = rows.size
        self.n_total = im.n_total

    def matrix(self, vals, dirichlet_count):
        vals_f = np.concatenate([vals[self.keep], np.ones(dirichlet_count)])
        data = np.bincount(self.pos, weights=vals_f, minlength=self.nnz)
        return sparse.csr_matrix((data, self.indices, self.indptr),
                                 shape=(self.n_total, self.n_total))


def assemble_system(device: Device, state: State, state_old, dt, *,
                    want_jacobian=True, stationary=False,
                    node_data=None) -> SystemResidual:
    """Full residual (Poisson + all continuity blocks) at the state's time.

    Dirichlet rows are replaced by identity rows x - x^D using the boundary
    data evaluated at ``state.t``.
    """
    im = index_map(device)
    if node_data is None:
        node_data = state_node_data(device, state, want_jac=want_jacobian)
    values = np.zeros(im.n_total)
    all_trips = []

    rows, trip = assemble_poisson(device, state, want_jac=want_jacobian)
    values[im.psi] = rows
    all_trips.append(trip)

    dt_eff = None if stationary else dt
    reaction = _reaction_from_nodes(device, state.u["n"], state.u["p"],
                                    node_data["n"], node_data["p"],
                                    want_jac=want_jacobian)
    for sp in device.species:
        rows, trip = assemble_continuity(device, sp.id, state, state_old,
                                         dt_eff, want_jac=want_jacobian,
                                         reaction=reaction, node_data=node_data)
        values[im.species[sp.id]] = rows
        all_trips.append(trip)

    idx, bc = dirichlet_values(device, state.t)
    x_bc = np.empty(im.n_total)
    x_bc[im.psi] = state.psi
    for sid, sl in im.species.items():
        x_bc[sl] = state.u[sid]
    values[idx] = x_bc[idx] - bc

    jac = None
    if want_jacobian:
        parts = [t.collect() for t in all_trips]
        rows_ = np.concatenate([p[0] for p in parts])
        cols_ = np.concatenate([p[1] for p in parts])
        vals_ = np.concatenate([p[2] for p in parts])
        pat = getattr(device, "_jac_pattern", None)
        if pat is None or pat.n_entries != rows_.size:
            pat = _JacobianPattern(im, rows_, cols_, idx)
            device._jac_pattern = pat
        jac = pat.matrix(vals_, idx.size)
    return SystemResidual(values=values, jacobian=jac, index=im)
