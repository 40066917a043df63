"""Device description: geometry, admissible mesh, materials, species.

The mesh is a tensor-product finite-volume mesh built from per-axis face
grids.  Each cell is a control volume owning exactly one node: interior
nodes sit at cell centers, while the first and last node of every axis sit
on the domain boundary (so Dirichlet values are nodal unknowns).  Two-point
edges connect neighbouring nodes through their shared face; the connecting
segment is orthogonal to the face by construction, which makes the mesh
admissible for two-point flux approximations.

Material layers are stacked along the x axis.  Layer interfaces coincide
with cell faces and every cell carries exactly one material, so the
perovskite subdomain is a union of cells and ionic-vacancy unknowns exist
one per perovskite cell.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .statistics import Blakemore, ShiftedStatistics

__all__ = [
    "DeviceError",
    "FVMesh",
    "SpeciesSpec",
    "GenerationSpec",
    "RecombinationSpec",
    "ContactSpec",
    "InitialSpec",
    "Device",
    "build_device",
    "refine",
    "generation_profile",
    "beer_lambert",
    "resample_cell_field",
]

BULK = "bulk"
PEROVSKITE = "perovskite"

_SIDES_1D = ("left", "right")
_SIDES_2D = ("left", "right", "bottom", "top")


class DeviceError(ValueError):
    """Inconsistent device description."""


def _axis_nodes(faces: np.ndarray) -> np.ndarray:
    nodes = 0.5 * (faces[:-1] + faces[1:])
    nodes[0] = faces[0]
    nodes[-1] = faces[-1]
    return nodes


@dataclass(frozen=True)
class FVMesh:
    """Admissible tensor-product finite-volume mesh (cells own nodes 1:1)."""

    dimension: int
    face_grids: tuple
    shape: tuple                 # cells per axis, x first
    coords: np.ndarray           # (n, dim) node positions
    cell_lo: np.ndarray          # (n, dim) cell bounds
    cell_hi: np.ndarray
    volumes: np.ndarray          # (n,)
    edge_nodes: np.ndarray       # (ne, 2) node pairs
    edge_area: np.ndarray
    edge_dist: np.ndarray        # node-to-node distance
    edge_d0: np.ndarray          # node-to-face distances
    edge_d1: np.ndarray
    edge_axis: np.ndarray
    side_nodes: dict

    @property
    def n_cells(self) -> int:
        return self.volumes.size

    @property
    def n_edges(self) -> int:
        return self.edge_nodes.shape[0]

    def check_admissible(self) -> None:
        for faces in self.face_grids:
            if np.any(np.diff(faces) <= 0):
                raise DeviceError("face grid is not strictly increasing")
        if np.any(self.volumes <= 0):
            raise DeviceError("all cell volumes must be strictly positive")
        if np.any(self.edge_dist <= 0) or np.any(self.edge_area <= 0):
            raise DeviceError("edge geometry must be strictly positive")
        if np.any(self.edge_d0 <= 0) or np.any(self.edge_d1 <= 0):
            raise DeviceError("node-to-face distances must be strictly positive")


def build_tensor_mesh(face_grids) -> FVMesh:
    face_grids = tuple(np.asarray(f, dtype=float) for f in face_grids)
    dim = len(face_grids)
    if dim not in (1, 2):
        raise DeviceError(f"dimension must be 1 or 2, got {dim}")
    axis_nodes = [_axis_nodes(f) for f in face_grids]
    axis_widths = [np.diff(f) for f in face_grids]
    shape = tuple(len(w) for w in axis_widths)

    if dim == 1:
        (nx,) = shape
        coords = axis_nodes[0][:, None]
        cell_lo = face_grids[0][:-1, None]
        cell_hi = face_grids[0][1:, None]
        volumes = axis_widths[0].copy()
        k = np.arange(nx - 1)
        edge_nodes = np.stack([k, k + 1], axis=1)
        edge_dist = np.diff(axis_nodes[0])
        shared = face_grids[0][1:-1]
        edge_d0 = shared - axis_nodes[0][:-1]
        edge_d1 = axis_nodes[0][1:] - shared
        edge_area = np.ones(nx - 1)
        edge_axis = np.zeros(nx - 1, dtype=np.int8)
        side_nodes = {"left": np.array([0]), "right": np.array([nx - 1])}
    else:
        nx, ny = shape
        xg, yg = np.meshgrid(axis_nodes[0], axis_nodes[1], indexing="xy")
        coords = np.stack([xg.ravel(), yg.ravel()], axis=1)
        lo_x, hi_x = face_grids[0][:-1], face_grids[0][1:]
        lo_y, hi_y = face_grids[1][:-1], face_grids[1][1:]
        cell_lo = np.stack([np.tile(lo_x, ny), np.repeat(lo_y, nx)], axis=1)
        cell_hi = np.stack([np.tile(hi_x, ny), np.repeat(hi_y, nx)], axis=1)
        volumes = (np.repeat(axis_widths[1], nx) * np.tile(axis_widths[0], ny))

        def nid(ix, iy):
            return ix + nx * iy

        ex_k, ex_l, ex_area, ex_dist, ex_d0, ex_d1 = [], [], [], [], [], []
        xdist = np.diff(axis_nodes[0])
        xshared = face_grids[0][1:-1]
        xd0 = xshared - axis_nodes[0][:-1]
        xd1 = axis_nodes[0][1:] - xshared
        for iy in range(ny):
            ex_k.append(nid(np.arange(nx - 1), iy))
            ex_l.append(nid(np.arange(1, nx), iy))
            ex_area.append(np.full(nx - 1, axis_widths[1][iy]))
            ex_dist.append(xdist)
            ex_d0.append(xd0)
            ex_d1.append(xd1)
        ey_k, ey_l, ey_area, ey_dist, ey_d0, ey_d1 = [], [], [], [], [], []
        ydist = np.diff(axis_nodes[1])
        yshared = face_grids[1][1:-1]
        yd0 = yshared - axis_nodes[1][:-1]
        yd1 = axis_nodes[1][1:] - yshared
        for iy in range(ny - 1):
            ey_k.append(nid(np.arange(nx), iy))
            ey_l.append(nid(np.arange(nx), iy + 1))
            ey_area.append(axis_widths[0].copy())
            ey_dist.append(np.full(nx, ydist[iy]))
            ey_d0.append(np.full(nx, yd0[iy]))
            ey_d1.append(np.full(nx, yd1[iy]))
        edge_nodes = np.stack([
            np.concatenate(ex_k + ey_k),
            np.concatenate(ex_l + ey_l),
        ], axis=1)
        edge_area = np.concatenate(ex_area + ey_area)
        edge_dist = np.concatenate(ex_dist + ey_dist)
        edge_d0 = np.concatenate(ex_d0 + ey_d0)
        edge_d1 = np.concatenate(ex_d1 + ey_d1)
        n_xedges = ny * (nx - 1)
        edge_axis = np.concatenate([
            np.zeros(n_xedges, dtype=np.int8),
            np.ones(edge_nodes.shape[0] - n_xedges, dtype=np.int8),
        ])
        side_nodes = {
            "left": nid(0, np.arange(ny)),
            "right": nid(nx - 1, np.arange(ny)),
            "bottom": nid(np.arange(nx), 0),
            "top": nid(np.arange(nx), ny - 1),
        }

    mesh = FVMesh(
        dimension=dim, face_grids=face_grids, shape=shape, coords=coords,
        cell_lo=cell_lo, cell_hi=cell_hi, volumes=volumes,
        edge_nodes=edge_nodes, edge_area=edge_area, edge_dist=edge_dist,
        edge_d0=edge_d0, edge_d1=edge_d1, edge_axis=edge_axis,
        side_nodes=side_nodes,
    )
    mesh.check_admissible()
    return mesh


@dataclass(frozen=True)
class SpeciesSpec:
    """Physical parameters of one mobile species."""

    id: str
    charge: int
    statistics: ShiftedStatistics
    mobility: dict                 # region role -> scaled mobility
    region: str = "all"            # "all" for electrons/holes, else "perovskite"
    has_dirichlet: bool = True

    @property
    def is_vacancy(self) -> bool:
        return self.region == PEROVSKITE


@dataclass(frozen=True)
class GenerationSpec:
    photon_flux: float
    absorption: float
    vertical_axis: int = 0

    def __post_init__(self):
        if self.photon_flux < 0:
            raise DeviceError("generation.photon_flux must be nonnegative")
        if self.absorption <= 0:
            raise DeviceError("generation.absorption must be positive")


@dataclass(frozen=True)
class RecombinationSpec:
    model: str = "constant"        # "constant" or "density_limited"
    rate_constant: float = 0.0     # upper bound on the rate prefactor
    n_ref: float = 1.0
    p_ref: float = 1.0


@dataclass(frozen=True)
class ContactSpec:
    kinds: dict                    # side -> "dirichlet" | "neumann"
    psi: dict                      # side -> boundary potential (dirichlet sides)
    phi: dict                      # side -> boundary quasi-Fermi value
    ramp_rate: float = 0.0         # affine-in-time offset added at ramp_side
    ramp_side: Optional[str] = None

    def dirichlet_sides(self):
        return [s for s, k in self.kinds.items() if k == "dirichlet"]

    def value_at(self, table: dict, side: str, t: float) -> float:
        v = table[side]
        if self.ramp_side == side and self.ramp_rate != 0.0:
            v = v + self.ramp_rate * t
        return v

    def is_equilibrium_compatible(self) -> bool:
        sides = self.dirichlet_sides()
        psis = {self.psi[s] for s in sides}
        phis = {self.phi[s] for s in sides}
        return len(psis) == 1 and len(phis) == 1 and self.ramp_rate == 0.0


@dataclass(frozen=True)
class InitialSpec:
    mode: str = "equilibrium"      # equilibrium | perturbed_equilibrium | uniform
    amplitude: float = 0.0
    seed: int = 0
    values: dict = field(default_factory=dict)


class Device:
    """Immutable device: mesh + materials + species + boundary data."""

    def __init__(self, mesh: FVMesh, *, is_perovskite, permittivity, doping,
                 species, contacts: ContactSpec,
                 generation: Optional[GenerationSpec],
                 recombination: RecombinationSpec, initial: InitialSpec):
        self.mesh = mesh
        self.is_perovskite = np.asarray(is_perovskite, dtype=bool)
        self.permittivity = np.asarray(permittivity, dtype=float)
        self.doping = np.asarray(doping, dtype=float)
        self.species = tuple(species)
        self.contacts = contacts
        self.generation = generation
        self.recombination = recombination
        self.initial = initial
        self._validate()
        self._build_caches()

    # -- validation ----------------------------------------------------

    def _validate(self) -> None:
        n = self.mesh.n_cells
        for name, arr in (("permittivity", self.permittivity),
                          ("doping", self.doping),
                          ("region map", self.is_perovskite)):
            if arr.shape != (n,):
                raise DeviceError(f"{name} must have one value per cell")
        if np.any(self.permittivity <= 0):
            raise DeviceError("permittivity must be strictly positive everywhere")
        sides = (_SIDES_1D if self.mesh.dimension == 1 else _SIDES_2D)
        for s in self.contacts.kinds:
            if s not in sides:
                raise DeviceError(f"unknown boundary side {s!r}")
        if not self.contacts.dirichlet_sides():
            raise DeviceError(
                "contacts: at least one side must be 'dirichlet' "
                "(the Dirichlet boundary must have positive measure)")
        if self.mesh.dimension == 2:
            for s in self.contacts.dirichlet_sides():
                if s not in ("left", "right"):
                    raise DeviceError(
                        "2D Dirichlet contacts are supported on the left/right "
                        "sides only (boundary data are extended linearly in x)")
        ids = [sp.id for sp in self.species]
        if len(set(ids)) != len(ids):
            raise DeviceError(f"duplicate species id in {ids}")
        if "n" not in ids or "p" not in ids:
            raise DeviceError("species roster must contain 'n' and 'p'")
        for sp in self.species:
            if sp.id == "n" and sp.charge != -1:
                raise DeviceError("species 'n' must have charge -1")
            if sp.id == "p" and sp.charge != 1:
                raise DeviceError("species 'p' must have charge +1")
            if sp.is_vacancy and not isinstance(sp.statistics.kind, Blakemore):
                raise DeviceError(
                    f"vacancy species {sp.id!r} must use Blakemore statistics")
            if sp.is_vacancy and not self.is_perovskite.any():
                raise DeviceError(
                    f"vacancy species {sp.id!r} requires a perovskite region")
            for role, mu in sp.mobility.items():
                if mu < 0:
                    raise DeviceError(f"mobility of {sp.id!r} in {role!r} is negative")

    # -- cached layouts --------------------------------------------------

    def _build_caches(self) -> None:
        mesh = self.mesh
        self.dirichlet_nodes = np.unique(np.concatenate([
            mesh.side_nodes[s] for s in self.contacts.dirichlet_sides()
        ])) if self.contacts.dirichlet_sides() else np.array([], dtype=int)
        self.dirichlet_measure = float(sum(
            self._side_measure(s) for s in self.contacts.dirichlet_sides()))

        role = np.where(self.is_perovskite, PEROVSKITE, BULK)
        k, l = mesh.edge_nodes[:, 0], mesh.edge_nodes[:, 1]
        self.edge_t_eps = self._harmonic_transmissibility(
            self.permittivity[k], self.permittivity[l])

        self._layouts = {}
        for sp in self.species:
            if sp.region == "all":
                nodes = np.arange(mesh.n_cells)
            else:
                nodes = np.flatnonzero(self.is_perovskite)
            local = np.full(mesh.n_cells, -1, dtype=int)
            local[nodes] = np.arange(nodes.size)
            inside = (local[k] >= 0) & (local[l] >= 0)
            eidx = np.flatnonzero(inside)
            mu_cell = np.array([sp.mobility.get(r, 0.0) for r in role])
            t_mu = self._harmonic_transmissibility(
                mu_cell[k[eidx]], mu_cell[l[eidx]], edges=eidx)
            if sp.has_dirichlet:
                dl = local[self.dirichlet_nodes]
                dirichlet_local = dl[dl >= 0]
            else:
                dirichlet_local = np.array([], dtype=int)
            self._layouts[sp.id] = _SpeciesLayout(
                spec=sp, nodes=nodes, local_of_global=local,
                volumes=mesh.volumes[nodes],
                edge_index=eidx,
                edge_k=local[k[eidx]], edge_l=local[l[eidx]],
                t_mu=t_mu, dirichlet_local=dirichlet_local)

        self.generation_cell = generation_profile(self)

    def _harmonic_transmissibility(self, c0, c1, edges=None):
        mesh = self.mesh
        if edges is None:
            d0, d1, area = mesh.edge_d0, mesh.edge_d1, mesh.edge_area
        else:
            d0, d1, area = (mesh.edge_d0[edges], mesh.edge_d1[edges],
                            mesh.edge_area[edges])
        t = np.zeros_like(area)
        ok = (c0 > 0) & (c1 > 0)
        t[ok] = area[ok] / (d0[ok] / c0[ok] + d1[ok] / c1[ok])
        return t

    def _side_measure(self, side: str) -> float:
        if self.mesh.dimension == 1:
            return 1.0
        faces_y = self.mesh.face_grids[1]
        faces_x = self.mesh.face_grids[0]
        if side in ("left", "right"):
            return float(faces_y[-1] - faces_y[0])
        return float(faces_x[-1] - faces_x[0])

    # -- public API ------------------------------------------------------

    def layout(self, species_id: str) -> "_SpeciesLayout":
        return self._layouts[species_id]

    def species_by_id(self, species_id: str) -> SpeciesSpec:
        return self.layout(species_id).spec

    @property
    def vacancy_species(self):
        return tuple(sp for sp in self.species if sp.is_vacancy)

    def dirichlet_fields(self, t: float):
        """Nodal extensions of the boundary data (psi^D, phi^D) at time t.

        Values are interpolated linearly in x between the Dirichlet sides;
        with a single Dirichlet side the extension is constant.
        """
        c = self.contacts
        sides = c.dirichlet_sides()
        x = self.mesh.coords[:, 0]
        x_lo, x_hi = self.mesh.face_grids[0][0], self.mesh.face_grids[0][-1]

        def extend(table):
            if len(sides) == 1:
                return np.full(self.mesh.n_cells, c.value_at(table, sides[0], t))
            v_left = c.value_at(table, "left", t)
            v_right = c.value_at(table, "right", t)
            return v_left + (v_right - v_left) * (x - x_lo) / (x_hi - x_lo)

        return extend(c.psi), extend(c.phi)

    def dirichlet_density(self, species_id: str, t: float) -> np.ndarray:
        """Boundary densities u^D = N e(v^D) at the species Dirichlet nodes."""
        lay = self.layout(species_id)
        sp = lay.spec
        psi_d, phi_d = self.dirichlet_fields(t)
        nodes = lay.nodes[lay.dirichlet_local]
        v_d = sp.charge * (phi_d[nodes] - psi_d[nodes])
        return np.atleast_1d(sp.statistics.carrier_density(v_d))

    def fingerprint(self) -> str:
        """Content hash of mesh, materials and species parameters."""
        h = hashlib.sha256()
        for f in self.mesh.face_grids:
            h.update(f.tobytes())
        h.update(self.is_perovskite.tobytes())
        h.update(self.permittivity.tobytes())
        h.update(self.doping.tobytes())
        meta = []
        for sp in self.species:
            st = sp.statistics
            meta.append([sp.id, sp.charge, st.kind.label, st.zeta, st.n_states,
                         sorted(sp.mobility.items()), sp.region])
        meta.append(sorted(self.contacts.kinds.items()))
        meta.append(sorted(self.contacts.psi.items()))
        meta.append(sorted(self.contacts.phi.items()))
        meta.append([self.contacts.ramp_rate, self.contacts.ramp_side])
        if self.generation is not None:
            meta.append([self.generation.photon_flux, self.generation.absorption,
                         self.generation.vertical_axis])
        r = self.recombination
        meta.append([r.model, r.rate_constant, r.n_ref, r.p_ref])
        h.update(json.dumps(meta, sort_keys=True).encode())
        return h.hexdigest()

    def with_bias(self, bias: float) -> "Device":
        """Copy with the bias added to the right-contact boundary values."""
        c = self.contacts
        psi = dict(c.psi)
        phi = dict(c.phi)
        if "right" not in psi:
            raise DeviceError("bias requires a right Dirichlet contact")
        psi["right"] = psi["right"] + bias
        phi["right"] = phi["right"] + bias
        contacts = ContactSpec(kinds=dict(c.kinds), psi=psi, phi=phi,
                               ramp_rate=c.ramp_rate, ramp_side=c.ramp_side)
        return Device(self.mesh, is_perovskite=self.is_perovskite,
                      permittivity=self.permittivity, doping=self.doping,
                      species=self.species, contacts=contacts,
                      generation=self.generation,
                      recombination=self.recombination, initial=self.initial)

    def without_generation(self) -> "Device":
        if self.generation is None or self.generation.photon_flux == 0.0:
            return self
        return Device(self.mesh, is_perovskite=self.is_perovskite,
                      permittivity=self.permittivity, doping=self.doping,
                      species=self.species, contacts=self.contacts,
                      generation=None, recombination=self.recombination,
                      initial=self.initial)


@dataclass(frozen=True)
class _SpeciesLayout:
    """Cached index maps of one species on its region."""

    spec: SpeciesSpec
    nodes: np.ndarray            # global node indices carrying this species
    local_of_global: np.ndarray  # global -> local (-1 outside region)
    volumes: np.ndarray          # control volumes, local numbering
    edge_index: np.ndarray       # into mesh edge arrays
    edge_k: np.ndarray           # local endpoint indices
    edge_l: np.ndarray
    t_mu: np.ndarray             # mobility transmissibility per edge
    dirichlet_local: np.ndarray

    @property
    def n_local(self) -> int:
        return self.nodes.size


# -- construction -------------------------------------------------------


def build_device(config: dict) -> Device:
    """Build a :class:`Device` from a validated configuration mapping.

    The mapping must follow the documented device schema; use
    :func:`vacdrift.config.validate_device_config` to normalize raw input
    first (the scenario front end does this automatically).
    """
    from .config import validate_device_config

    cfg = validate_device_config(config)
    geo = cfg["geometry"]
    layers = geo["layers"]

    x_faces = [0.0]
    region_x = []
    eps_x = []
    dop_x = []
    for layer in layers:
        width, cells = layer["width"], layer["cells"]
        start = x_faces[-1]
        x_faces.extend(start + width * (np.arange(cells) + 1) / cells)
        region_x.extend([layer["role"]] * cells)
        eps_x.extend([layer["permittivity"]] * cells)
        dop_x.extend([layer["doping"]] * cells)
    x_faces = np.asarray(x_faces)

    if geo["dimension"] == 1:
        mesh = build_tensor_mesh([x_faces])
        tile = 1
    else:
        ys = geo["y"]
        y_faces = ys["height"] * np.arange(ys["cells"] + 1) / ys["cells"]
        mesh = build_tensor_mesh([x_faces, y_faces])
        tile = ys["cells"]

    is_perov = np.tile(np.asarray(region_x) == PEROVSKITE, tile)
    eps = np.tile(np.asarray(eps_x, dtype=float), tile)
    dop = np.tile(np.asarray(dop_x, dtype=float), tile)

    species = []
    for s in cfg["species"]:
        from .statistics import parse_kind
        stats = ShiftedStatistics(kind=parse_kind(s["statistics"]),
                                  zeta=s["band_shift"], n_states=s["n_states"])
        region = s.get("region", "all")
        species.append(SpeciesSpec(
            id=s["id"], charge=s["charge"], statistics=stats,
            mobility=dict(s["mobility"]), region=region,
            has_dirichlet=(region == "all")))

    c = cfg["contacts"]
    contacts = ContactSpec(kinds={k: v for k, v in c.items()
                                  if k in _SIDES_2D and isinstance(v, str)},
                           psi=dict(c["psi"]), phi=dict(c["phi"]),
                           ramp_rate=c.get("ramp_rate", 0.0),
                           ramp_side=c.get("ramp_side"))

    g = cfg.get("generation")
    generation = None
    if g is not None and g["photon_flux"] != 0.0:
        generation = GenerationSpec(photon_flux=g["photon_flux"],
                                    absorption=g["absorption"],
                                    vertical_axis=0 if g.get("vertical_axis", "x") == "x" else 1)

    r = cfg["recombination"]
    recombination = RecombinationSpec(model=r["model"],
                                      rate_constant=r["rate_constant"],
                                      n_ref=r.get("n_ref", 1.0),
                                      p_ref=r.get("p_ref", 1.0))

    ini = cfg["initial"]
    initial = InitialSpec(mode=ini["mode"], amplitude=ini.get("amplitude", 0.0),
                          seed=ini.get("seed", 0), values=dict(ini.get("values", {})))

    device = Device(mesh, is_perovskite=is_perov, permittivity=eps, doping=dop,
                    species=species, contacts=contacts, generation=generation,
                    recombination=recombination, initial=initial)
    _check_initial_bounds(device)
    return device


def _check_initial_bounds(device: Device) -> None:
    # uniform starting values must satisfy the strict density bounds
    vals = device.initial.values
    for sp in device.species:
        u0 = vals.get(sp.id)
        if u0 is None:
            if device.initial.mode == "uniform":
                raise DeviceError(
                    f"initial.values.{sp.id}: required in 'uniform' mode")
            if sp.is_vacancy:
                raise DeviceError(
                    f"initial.values.{sp.id}: vacancy species need a starting "
                    f"density (sets the conserved total mass)")
            continue
        if u0 <= 0:
            raise DeviceError(
                f"initial.values.{sp.id}: density must be strictly positive, "
                f"got {u0!r}")
        cap = sp.statistics.density_max
        if u0 >= cap:
            raise DeviceError(
                f"initial.values.{sp.id}: density must stay strictly below "
                f"n_states/gamma = {cap:g}, got {u0!r}")


def refine(device: Device, factor: int) -> Device:
    """Uniformly split every cell ``factor`` times along each axis.

    Regions, boundary markers and material fields are inherited by the
    children, so cell-volume sums and material integrals are preserved
    exactly.
    """
    if factor < 1 or int(factor) != factor:
        raise DeviceError(f"refinement factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return device
    new_grids = []
    for faces in device.mesh.face_grids:
        lo, hi = faces[:-1], faces[1:]
        sub = lo[:, None] + (hi - lo)[:, None] * np.arange(factor)[None, :] / factor
        new_grids.append(np.append(sub.ravel(), faces[-1]))
    mesh = build_tensor_mesh(new_grids)
    rep = lambda a: resample_cell_field(device.mesh, mesh, a)
    return Device(mesh,
                  is_perovskite=rep(device.is_perovskite),
                  permittivity=rep(device.permittivity),
                  doping=rep(device.doping),
                  species=device.species, contacts=device.contacts,
                  generation=device.generation,
                  recombination=device.recombination, initial=device.initial)


def resample_cell_field(coarse: FVMesh, fine: FVMesh, values: np.ndarray) -> np.ndarray:
    """Piecewise-constant resampling of a per-cell field onto a refined mesh."""
    factors = [fine.shape[i] // coarse.shape[i] for i in range(coarse.dimension)]
    if any(f * c != g for f, c, g in zip(factors, coarse.shape, fine.shape)):
        raise DeviceError("fine mesh is not a uniform refinement of the coarse mesh")
    if coarse.dimension == 1:
        return np.repeat(values, factors[0])
    nx, ny = coarse.shape
    grid = np.asarray(values).reshape(ny, nx)
    grid = np.repeat(np.repeat(grid, factors[1], axis=0), factors[0], axis=1)
    return grid.ravel()


def beer_lambert(gen: GenerationSpec, depth) -> np.ndarray:
    """Pointwise photogeneration profile F_ph * alpha * exp(-alpha * depth)."""
    depth = np.asarray(depth, dtype=float)
    return gen.photon_flux * gen.absorption * np.exp(-gen.absorption * depth)


def generation_profile(device: Device) -> np.ndarray:
    """Cell-averaged photogeneration rates (zero without a generation spec).

    Uses the exact average of the exponential profile over each cell, so
    the mesh sum of |cell| * G telescopes to the closed-form absorbed flux
    F_ph * (1 - exp(-alpha * L)).
    """
    mesh = device.mesh
    gen = device.generation
    if gen is None or gen.photon_flux == 0.0:
        return np.zeros(mesh.n_cells)
    ax = gen.vertical_axis
    lo = mesh.cell_lo[:, ax]
    hi = mesh.cell_hi[:, ax]
    a = gen.absorption
    return gen.photon_flux * (np.exp(-a * lo) - np.exp(-a * hi)) / (hi - lo)
