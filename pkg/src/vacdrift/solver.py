"""Nonlinear solvers and time integration.

One implicit Euler step solves the coupled system with a damped Newton
method: the update is scaled so densities never leave their open ranges
(at most a configurable fraction of the distance to the boundary), then
backtracked until the residual norm decreases.  After meeting the
tolerance a few full "polish" iterations push the residual towards the
round-off floor, which the conservation diagnostics rely on.

Ionic-vacancy densities of an accepted step are finalized through the
conservative update u = u_old - (dt/|cell|) * (flux sums), which makes the
discrete vacancy mass constant to round-off regardless of the Newton
stopping point.

The transient driver adapts the step size (shrink on failure, grow after
success streaks), and the uniqueness probe reruns a transient under
perturbed Newton paths (predictor noise, different damping schedules,
permuted Gummel ordering) to certify that all paths land on the same
discrete trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import splu

from . import assembly
from .assembly import State, apply_dirichlet, assemble_system, index_map
from .device import Device

__all__ = [
    "SolverConfig",
    "SolverError",
    "NewtonDiverged",
    "BoundsBreach",
    "StepFailure",
    "ContinuationFailed",
    "NewtonInfo",
    "Trajectory",
    "ProbeResult",
    "solve_step",
    "solve_step_detailed",
    "run_transient",
    "solve_equilibrium",
    "solve_stationary",
    "solve_linear_poisson",
    "build_initial_state",
    "contact_current",
    "uniqueness_probe",
]


class SolverError(RuntimeError):
    pass


class NewtonDiverged(SolverError):
    pass


class BoundsBreach(SolverError):
    pass


class ContinuationFailed(SolverError):
    pass


class StepFailure(SolverError):
    """Transient aborted at the minimum step size; carries the partial run."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    damping_levels: int = 11           # line-search factors 1, 1/2, ... 2^-(levels-1)
    density_safeguard: float = 0.9     # max fraction of the distance to a range limit
    dt_initial: float = 1e-2
    dt_min: float = 1e-8
    dt_max: float = 1.0
    dt_grow: float = 1.5
    dt_shrink: float = 0.5
    gummel: bool = False
    gummel_tol: float = 1e-3
    gummel_max_sweeps: int = 5
    polish_iters: int = 3
    damping_ratio: float = 0.5
    predictor_noise: float = 0.0
    noise_seed: int = 0
    gummel_order: Optional[tuple] = None

    def as_dict(self) -> dict:
        d = {
            "newton_tol": self.newton_tol,
            "max_newton_iters": self.max_newton_iters,
            "damping_levels": self.damping_levels,
            "density_safeguard": self.density_safeguard,
            "dt_initial": self.dt_initial,
            "dt_min": self.dt_min,
            "dt_max": self.dt_max,
            "dt_grow": self.dt_grow,
            "dt_shrink": self.dt_shrink,
            "gummel": self.gummel,
            "gummel_tol": self.gummel_tol,
            "gummel_max_sweeps": self.gummel_max_sweeps,
            "polish_iters": self.polish_iters,
        }
        return d

    def replaced(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class NewtonInfo:
    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    damping_used: list = field(default_factory=list)
    converged: bool = False
    eta_warm: dict = field(default_factory=dict)


@dataclass
class Trajectory:
    """Accepted snapshots of one transient run plus per-step diagnostics."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    infos: list = field(default_factory=list)

    @property
    def final_state(self) -> State:
        return self.states[-1]

    def __len__(self):
        return len(self.states)


def _density_step_limit(device: Device, x, delta, safeguard):
    """Largest step fraction keeping all densities strictly inside range."""
    im = index_map(device)
    lam = 1.0
    for sp in device.species:
        sl = im.species[sp.id]
        u = x[sl]
        d = delta[sl]
        cap = sp.statistics.density_max
        shrink = d < 0
        if shrink.any():
            lam = min(lam, float(np.min(safeguard * u[shrink] / -d[shrink])))
        if np.isfinite(cap):
            grow = d > 0
            if grow.any():
                lam = min(lam, float(np.min(
                    safeguard * (cap - u[grow]) / d[grow])))
    return lam


def _residual_norm(device, im, x, state_old, dt, t, stationary=False, warm=None):
    state = im.unpack(x, t)
    nd = assembly.state_node_data(device, state, want_jac=False, warm=warm)
    sysres = assemble_system(device, state, state_old, dt,
                             want_jacobian=False, stationary=stationary,
                             node_data=nd)
    if warm is not None:
        for sid, d in nd.items():
            warm[sid] = d.eta
    return float(np.linalg.norm(sysres.values)), nd


def _check_state_bounds(device: Device, state: State) -> None:
    for sp in device.species:
        u = state.u[sp.id]
        if np.any(u <= 0.0):
            raise BoundsBreach(f"density of {sp.id!r} reached zero")
        cap = sp.statistics.density_max
        if np.isfinite(cap) and np.any(u >= cap):
            raise BoundsBreach(f"density of {sp.id!r} reached its upper range limit")


def _conservative_vacancy_update(device: Device, state: State,
                                 state_old: State, dt: float) -> State:
    """Re-evaluate vacancy densities in conservative form.

    The converged Newton iterate satisfies the vacancy continuity equation
    only up to the stopping tolerance; evaluating the update as
    u_old - (dt/|cell|) * flux sums makes the discrete mass telescope
    exactly, at a state perturbation of the order of that tolerance.
    """
    out = state
    for sp in device.vacancy_species:
        lay = device.layout(sp.id)
        sums = assembly.species_flux_sums(device, sp.id, state)
        u_new = state_old.u[sp.id] - dt * sums / lay.volumes
        cap = sp.statistics.density_max
        if np.any(u_new <= 0.0) or (np.isfinite(cap) and np.any(u_new >= cap)):
            # fall back to the Newton iterate rather than accept a breach
            continue
        if out is state:
            out = state.copy()
        out.u[sp.id] = u_new
    return out


def solve_linear_poisson(device: Device, charge_cell: np.ndarray, t: float) -> np.ndarray:
    """Potential solving the linear Poisson block for a frozen charge field."""
    mesh = device.mesh
    k, l = mesh.edge_nodes[:, 0], mesh.edge_nodes[:, 1]
    t_eps = device.edge_t_eps
    n = mesh.n_cells
    rows = np.concatenate([k, k, l, l])
    cols = np.concatenate([k, l, l, k])
    vals = np.concatenate([t_eps, -t_eps, t_eps, -t_eps])
    if device.dirichlet_nodes.size:
        keep = ~np.isin(rows, device.dirichlet_nodes)
        rows = np.concatenate([rows[keep], device.dirichlet_nodes])
        cols = np.concatenate([cols[keep], device.dirichlet_nodes])
        vals = np.concatenate([vals[keep], np.ones(device.dirichlet_nodes.size)])
    a = csr_matrix((vals, (rows, cols)), shape=(n, n))
    rhs = mesh.volumes * charge_cell
    psi_d, _ = device.dirichlet_fields(t)
    rhs[device.dirichlet_nodes] = psi_d[device.dirichlet_nodes]
    return splu(a.tocsc()).solve(rhs)


def _perturb_predictor(device: Device, state: State, rng, amplitude) -> State:
    out = state.copy()
    for sp in device.species:
        u = out.u[sp.id]
        noise = 1.0 + amplitude * rng.uniform(-1.0, 1.0, size=u.shape)
        u_new = u * noise
        cap = sp.statistics.density_max
        if np.isfinite(cap):
            u_new = np.minimum(u_new, u + 0.5 * (cap - u))
        out.u[sp.id] = np.maximum(u_new, 0.5 * u)
    return apply_dirichlet(device, out)


def _gummel_prepass(device, state, state_old, dt, config, order):
    """Decoupled fixed-point sweeps: Poisson, then each continuity block."""
    for _ in range(config.gummel_max_sweeps):
        charge = device.doping.copy()
        for sp in device.species:
            lay = device.layout(sp.id)
            charge[lay.nodes] += sp.charge * state.u[sp.id]
        state = State(state.t, solve_linear_poisson(device, charge, state.t),
                      dict(state.u))
        for sid in order:
            state = _gummel_species_newton(device, sid, state, state_old, dt, config)
        res = assemble_system(device, state, state_old, dt, want_jacobian=False)
        if np.linalg.norm(res.values) < config.gummel_tol:
            break
    return state


def _gummel_species_newton(device, sid, state, state_old, dt, config):
    im = index_map(device)
    sl = im.species[sid]
    lay = device.layout(sid)
    for _ in range(8):
        rows, trip = assembly.assemble_continuity(device, sid, state, state_old,
                                                  dt, want_jac=True)
        if lay.dirichlet_local.size:
            u_d = device.dirichlet_density(sid, state.t)
            rows[lay.dirichlet_local] = state.u[sid][lay.dirichlet_local] - u_d
        r, c, v = trip.collect()
        own = (r >= sl.start) & (r < sl.stop) & (c >= sl.start) & (c < sl.stop)
        r, c, v = r[own] - sl.start, c[own] - sl.start, v[own]
        if lay.dirichlet_local.size:
            drop = ~np.isin(r, lay.dirichlet_local)
            r, c, v = r[drop], c[drop], v[drop]
            r = np.concatenate([r, lay.dirichlet_local])
            c = np.concatenate([c, lay.dirichlet_local])
            v = np.concatenate([v, np.ones(lay.dirichlet_local.size)])
        a = csr_matrix((v, (r, c)), shape=(lay.n_local, lay.n_local))
        nrm = np.linalg.norm(rows)
        if nrm < config.gummel_tol:
            break
        delta = splu(a.tocsc()).solve(-rows)
        u = state.u[sid]
        lam = 1.0
        cap = lay.spec.statistics.density_max
        shrink = delta < 0
        if shrink.any():
            lam = min(lam, float(np.min(0.9 * u[shrink] / -delta[shrink])))
        if np.isfinite(cap):
            grow = delta > 0
            if grow.any():
                lam = min(lam, float(np.min(0.9 * (cap - u[grow]) / delta[grow])))
        new_u = dict(state.u)
        new_u[sid] = u + lam * delta
        state = State(state.t, state.psi, new_u)
    return state


def solve_step_detailed(device: Device, state_old: State, dt: float,
                        config: SolverConfig, *, t_new: Optional[float] = None,
                        rng=None, initial_guess: Optional[State] = None):
    """One backward Euler step; returns (state, NewtonInfo).

    Raises :class:`NewtonDiverged` when damping cannot reduce the residual
    and :class:`BoundsBreach` when the density safeguard pins the step to
    (numerically) zero; both signal the caller to retry with a smaller dt.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    t_next = state_old.t + dt if t_new is None else t_new
    guess = (initial_guess if initial_guess is not None else state_old).copy()
    guess.t = t_next
    guess = apply_dirichlet(device, guess)
    if rng is not None and config.predictor_noise > 0.0:
        guess = _perturb_predictor(device, guess, rng, config.predictor_noise)
    if config.gummel:
        order = config.gummel_order or tuple(sp.id for sp in device.species)
        guess = _gummel_prepass(device, guess, state_old, dt, config, order)

    im = index_map(device)
    x = im.pack(guess)
    info = NewtonInfo()
    warm = {}
    nrm, nd = _residual_norm(device, im, x, state_old, dt, t_next, warm=warm)
    info.residual_norms.append(nrm)
    if nrm <= config.newton_tol:
        info.converged = True
        return guess, info  # fixed point of the step: keep it bit-identical

    lam_floor = config.damping_ratio ** (config.damping_levels - 1)
    for it in range(config.max_newton_iters):
        state = im.unpack(x, t_next)
        assembly.upgrade_node_data(device, nd)  # nd was computed at this x
        sysres = assemble_system(device, state, state_old, dt,
                                 want_jacobian=True, node_data=nd)
        lu = splu(sysres.jacobian.tocsc())
        delta = lu.solve(-sysres.values)
        lam_max = min(1.0, _density_step_limit(device, x, delta,
                                               config.density_safeguard))
        if lam_max < lam_floor:
            raise BoundsBreach(
                "density safeguard pinned the Newton step to zero")
        lam = lam_max
        accepted = False
        for _ in range(config.damping_levels):
            x_try = x + lam * delta
            nrm_try, nd_try = _residual_norm(device, im, x_try, state_old, dt,
                                             t_next, warm=warm)
            if np.isfinite(nrm_try) and nrm_try < (1.0 - 1e-4 * lam) * nrm:
                accepted = True
                break
            lam *= config.damping_ratio
        if not accepted:
            raise NewtonDiverged(
                f"residual stalled at {nrm:.3e} after exhausting damping")
        x, nrm, nd = x_try, nrm_try, nd_try
        info.iterations += 1
        info.residual_norms.append(nrm)
        info.damping_used.append(lam)
        if nrm <= config.newton_tol:
            info.converged = True
            break
    if not info.converged:
        raise NewtonDiverged(
            f"no convergence within {config.max_newton_iters} iterations "
            f"(residual {nrm:.3e})")

    # polish: full steps towards the round-off floor while they still help;
    # the floor (set by flux-cancellation round-off) is remembered per device
    # so converged steps stop paying for attempts that cannot improve
    floor = getattr(device, "_residual_floor", 0.0)
    for _ in range(config.polish_iters):
        if nrm <= max(1e-13, 3.0 * floor):
            break
        state = im.unpack(x, t_next)
        assembly.upgrade_node_data(device, nd)
        sysres = assemble_system(device, state, state_old, dt,
                                 want_jacobian=True, node_data=nd)
        delta = splu(sysres.jacobian.tocsc()).solve(-sysres.values)
        lam = min(1.0, _density_step_limit(device, x, delta,
                                           config.density_safeguard))
        if lam < 0.5:
            break
        x_try = x + lam * delta
        nrm_try, nd_try = _residual_norm(device, im, x_try, state_old, dt,
                                         t_next, warm=warm)
        if not np.isfinite(nrm_try) or nrm_try >= nrm:
            break
        x, nrm, nd = x_try, nrm_try, nd_try
        info.residual_norms.append(nrm)
    device._residual_floor = min(floor, nrm) if floor > 0.0 else nrm

    state = im.unpack(x, t_next)
    state = _conservative_vacancy_update(device, state, state_old, dt)
    _check_state_bounds(device, state)
    info.eta_warm = {sid: d.eta for sid, d in nd.items()}
    return state, info


def solve_step(device: Device, state_old: State, dt: float,
               config: SolverConfig, **kw) -> State:
    """One implicit Euler step (see :func:`solve_step_detailed`)."""
    state, _ = solve_step_detailed(device, state_old, dt, config, **kw)
    return state


def run_transient(device: Device, t_end: float, config: SolverConfig, *,
                  initial: Optional[State] = None, fixed_dt: Optional[float] = None,
                  steady_state_tol: Optional[float] = None) -> Trajectory:
    """Integrate the coupled system over [0, t_end] with adaptive steps.

    With ``fixed_dt`` the step size is frozen (failures abort immediately);
    otherwise dt shrinks on Newton failures and grows after three
    consecutive successes, clamped to [dt_min, dt_max].  Per-step
    diagnostics are recorded on every accepted state.
    """
    from .diagnostics import step_report

    if t_end <= 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    state = initial if initial is not None else build_initial_state(device)
    _check_state_bounds(device, state)
    rng = (np.random.default_rng(config.noise_seed)
           if config.predictor_noise > 0.0 else None)

    traj = Trajectory()
    traj.times.append(state.t)
    traj.states.append(state)
    traj.reports.append(step_report(device, state, None, None, None))
    traj.infos.append(NewtonInfo(converged=True))

    dt = fixed_dt if fixed_dt is not None else config.dt_initial
    streak = 0
    t = state.t
    horizon = state.t + t_end
    while t < horizon - 1e-12 * max(1.0, abs(horizon)):
        dt_step = min(dt, horizon - t)
        try:
            new_state, info = solve_step_detailed(device, state, dt_step, config,
                                                  rng=rng)
        except (NewtonDiverged, BoundsBreach) as exc:
            if fixed_dt is not None:
                raise StepFailure(
                    f"step failed at t={t:.6g} with fixed dt={dt_step:.3g}: {exc}",
                    trajectory=traj) from exc
            if dt <= config.dt_min * (1.0 + 1e-12):
                raise StepFailure(
                    f"step failed at t={t:.6g} with dt at dt_min={config.dt_min:.3g}: "
                    f"{exc}", trajectory=traj) from exc
            dt = max(config.dt_min, dt * config.dt_shrink)
            streak = 0
            continue
        report = step_report(device, new_state, state, dt_step, info,
                             prev_report=traj.reports[-1],
                             eta_warm=info.eta_warm)
        t = new_state.t
        traj.times.append(t)
        traj.states.append(new_state)
        traj.reports.append(report)
        traj.infos.append(info)
        state = new_state
        streak += 1
        if fixed_dt is None and streak >= 3:
            dt = min(config.dt_max, dt * config.dt_grow)
            streak = 0
        if steady_state_tol is not None:
            res = assemble_system(device, state, state, None,
                                  want_jacobian=False, stationary=True)
            if np.linalg.norm(res.values) <= steady_state_tol:
                break
    return traj


# -- equilibrium and stationary states ------------------------------------


def solve_equilibrium(device: Device, tol: float = 1e-12) -> State:
    """Thermodynamic equilibrium: constant quasi-Fermi potentials.

    Solves the nonlinear Poisson equation with all densities slaved to the
    potential; each vacancy species carries an extra unknown (its constant
    quasi-Fermi level), fixed by its prescribed total mass.  Requires
    equilibrium-compatible boundary data (equal contact values, no ramp).
    """
    if not device.contacts.is_equilibrium_compatible():
        raise SolverError(
            "equilibrium requires equal Dirichlet values on all contacts "
            "and no time ramp")
    mesh = device.mesh
    n = mesh.n_cells
    psi_d, phi_d = device.dirichlet_fields(0.0)
    phi_bar = float(phi_d[device.dirichlet_nodes[0]])
    psi_bar = float(psi_d[device.dirichlet_nodes[0]])

    vacs = device.vacancy_species
    masses = []
    for sp in vacs:
        lay = device.layout(sp.id)
        target_mean = device.initial.values.get(sp.id)
        if target_mean is None:
            raise SolverError(
                f"initial.values.{sp.id}: vacancy mean density required to fix "
                f"the conserved mass")
        masses.append(target_mean * float(np.sum(lay.volumes)))

    n_unknowns = n + len(vacs)
    x = np.empty(n_unknowns)
    x[:n] = psi_bar
    for j, sp in enumerate(vacs):
        mean = device.initial.values[sp.id]
        v_bar = float(sp.statistics.chemical_potential(mean))
        x[n + j] = psi_bar + v_bar / sp.charge

    k, l = mesh.edge_nodes[:, 0], mesh.edge_nodes[:, 1]
    t_eps = device.edge_t_eps

    def densities(xv):
        psi = xv[:n]
        u = {}
        for sp in device.species:
            lay = device.layout(sp.id)
            if sp.is_vacancy:
                j = vacs.index(sp)
                v = sp.charge * (xv[n + j] - psi[lay.nodes])
            else:
                v = sp.charge * (phi_bar - psi[lay.nodes])
            u[sp.id] = np.atleast_1d(sp.statistics.carrier_density(v))
        return u

    def residual_jac(xv):
        psi = xv[:n]
        u = densities(xv)
        f = np.zeros(n_unknowns)
        edge_val = t_eps * (psi[k] - psi[l])
        np.add.at(f[:n], k, edge_val)
        np.subtract.at(f[:n], l, edge_val)
        charge = device.doping.copy()
        rows, cols, vals = [k, k, l, l], [k, l, l, k], [t_eps, -t_eps, t_eps, -t_eps]
        for sp in device.species:
            lay = device.layout(sp.id)
            stats = sp.statistics
            charge[lay.nodes] += sp.charge * u[sp.id]
            if sp.is_vacancy:
                j = vacs.index(sp)
                v = sp.charge * (xv[n + j] - psi[lay.nodes])
            else:
                v = sp.charge * (phi_bar - psi[lay.nodes])
            e_prime = stats.n_states * np.atleast_1d(
                stats.kind.derivative(v + stats.zeta))      # du/dv
            du_dpsi = -sp.charge * e_prime                  # dv/dpsi = -z
            # Poisson rows carry -|K| z u
            rows.append(lay.nodes)
            cols.append(lay.nodes)
            vals.append(-mesh.volumes[lay.nodes] * sp.charge * du_dpsi)
            if sp.is_vacancy:
                j = vacs.index(sp)
                du_dc = sp.charge * e_prime                 # dv/dc = +z
                rows.append(lay.nodes)
                cols.append(np.full(lay.n_local, n + j))
                vals.append(-mesh.volumes[lay.nodes] * sp.charge * du_dc)
                # mass constraint row
                f[n + j] = float(np.dot(lay.volumes, u[sp.id])) - masses[j]
                rows.append(np.full(lay.n_local, n + j))
                cols.append(lay.nodes)
                vals.append(lay.volumes * du_dpsi)
                rows.append(np.array([n + j]))
                cols.append(np.array([n + j]))
                vals.append(np.array([float(np.dot(lay.volumes, du_dc))]))
        f[:n] -= mesh.volumes * charge
        f[device.dirichlet_nodes] = psi[device.dirichlet_nodes] - psi_d[device.dirichlet_nodes]
        rows = np.concatenate([np.atleast_1d(r) for r in rows])
        cols = np.concatenate([np.atleast_1d(c) for c in cols])
        vals = np.concatenate([np.atleast_1d(v) for v in vals])
        keep = ~np.isin(rows, device.dirichlet_nodes) | (rows >= n)
        # identity rows at Dirichlet nodes
        rows = np.concatenate([rows[keep], device.dirichlet_nodes])
        cols = np.concatenate([cols[keep], device.dirichlet_nodes])
        vals = np.concatenate([vals[keep], np.ones(device.dirichlet_nodes.size)])
        jac = csr_matrix((vals, (rows, cols)), shape=(n_unknowns, n_unknowns))
        return f, jac

    f, jac = residual_jac(x)
    nrm = np.linalg.norm(f)
    for _ in range(100):
        if nrm <= tol:
            break
        delta = splu(jac.tocsc()).solve(-f)
        lam = 1.0
        for _ in range(30):
            x_try = x + lam * delta
            f_try, jac_try = residual_jac(x_try)
            nrm_try = np.linalg.norm(f_try)
            if np.isfinite(nrm_try) and nrm_try < nrm:
                x, f, jac, nrm = x_try, f_try, jac_try, nrm_try
                break
            lam *= 0.5
        else:
            raise NewtonDiverged(f"equilibrium Newton stalled at {nrm:.3e}")
    else:
        raise NewtonDiverged(f"equilibrium Newton did not reach {tol:.1e}")
    u = densities(x)
    return State(0.0, x[:n].copy(), u)


def build_initial_state(device: Device) -> State:
    """Initial fields according to the device's initial-data specification."""
    ini = device.initial
    if ini.mode == "equilibrium":
        return solve_equilibrium(device)
    if ini.mode == "perturbed_equilibrium":
        state = solve_equilibrium(device)
        rng = np.random.default_rng(ini.seed)
        for sp in device.species:
            stats = sp.statistics
            eta = np.atleast_1d(stats.eta(state.u[sp.id]))
            eta = eta + ini.amplitude * rng.uniform(-1.0, 1.0, size=eta.shape)
            state.u[sp.id] = np.atleast_1d(stats.carrier_density(eta - stats.zeta))
        state = apply_dirichlet(device, state)
        charge = device.doping.copy()
        for sp in device.species:
            lay = device.layout(sp.id)
            charge[lay.nodes] += sp.charge * state.u[sp.id]
        state.psi = solve_linear_poisson(device, charge, 0.0)
        return apply_dirichlet(device, state)
    if ini.mode == "uniform":
        u = {}
        for sp in device.species:
            lay = device.layout(sp.id)
            u[sp.id] = np.full(lay.n_local, float(ini.values[sp.id]))
        state = State(0.0, np.zeros(device.mesh.n_cells), u)
        state = apply_dirichlet(device, state)
        charge = device.doping.copy()
        for sp in device.species:
            lay = device.layout(sp.id)
            charge[lay.nodes] += sp.charge * state.u[sp.id]
        state.psi = solve_linear_poisson(device, charge, 0.0)
        return apply_dirichlet(device, state)
    raise SolverError(f"unknown initial mode {ini.mode!r}")


def solve_stationary(device: Device, config: SolverConfig, bias: float = 0.0,
                     *, start: Optional[State] = None,
                     tol: Optional[float] = None) -> State:
    """Steady state at the given bias via pseudo-transient continuation.

    Starting from equilibrium (or a provided state), implicit steps with a
    geometrically growing dt are taken until the stationary residual drops
    below the tolerance.  Vacancy mass is conserved along the continuation,
    which fixes the otherwise floating vacancy level.
    """
    if device.contacts.ramp_rate != 0.0:
        raise SolverError("stationary solves require time-independent contacts")
    dev = device.with_bias(bias) if bias != 0.0 else device
    tol = tol if tol is not None else config.newton_tol
    state = start.copy() if start is not None else solve_equilibrium(device)
    state.t = 0.0
    dt = config.dt_initial
    failures = 0
    for _ in range(200):
        res = assemble_system(dev, apply_dirichlet(dev, state), state, None,
                              want_jacobian=False, stationary=True)
        if np.linalg.norm(res.values) <= tol:
            return apply_dirichlet(dev, state)
        try:
            state, _ = solve_step_detailed(dev, state, dt, config)
            state.t = 0.0
            dt = min(dt * 4.0, 1e8)
        except (NewtonDiverged, BoundsBreach):
            failures += 1
            dt *= 0.25
            if failures > 40 or dt < 1e-14:
                raise ContinuationFailed(
                    f"pseudo-transient continuation failed at bias {bias}")
    raise ContinuationFailed(
        f"stationary residual did not reach {tol:.1e} at bias {bias}")


def contact_current(device: Device, state: State, side: str) -> float:
    """Net charge current entering the device through one Dirichlet side."""
    nodes = device.mesh.side_nodes[side]
    total = 0.0
    for sp in device.species:
        lay = device.layout(sp.id)
        local = lay.local_of_global[nodes]
        local = local[local >= 0]
        if local.size == 0:
            continue
        sums = assembly.species_flux_sums(device, sp.id, state)
        total += sp.charge * float(np.sum(sums[local]))
    return total


# -- uniqueness probe ------------------------------------------------------


@dataclass
class ProbeResult:
    max_discrepancy: float
    pairwise: np.ndarray
    n_runs: int
    times: list
    certified_tolerance: float

    @property
    def certified(self) -> bool:
        return self.max_discrepancy <= self.certified_tolerance


def uniqueness_probe(device: Device, t_end: float, config: SolverConfig,
                     n_perturbations: int, seed: int, dt: float,
                     noise_amplitude: float = 0.1,
                     initial: Optional[State] = None) -> ProbeResult:
    """Rerun one transient under perturbed solver paths and compare.

    Each run uses the same device, initial data and fixed dt schedule, but
    different Newton predictor noise, damping ratios and Gummel orderings.
    The discrepancy is the max-norm distance over all unknowns and all
    accepted times; at most one discrete trajectory exists when it stays
    within the certification budget of 10x the Newton tolerance.
    """
    if n_perturbations < 2:
        raise ValueError("n_perturbations must be at least 2")
    if initial is None:
        initial = build_initial_state(device)
    species_ids = [sp.id for sp in device.species]
    trajectories = []
    for k in range(n_perturbations):
        amp = noise_amplitude * k / max(1, n_perturbations - 1)
        order = tuple(np.roll(species_ids, k))
        cfg = config.replaced(
            predictor_noise=amp,
            noise_seed=seed + 7919 * k,
            damping_ratio=0.5 if k % 2 == 0 else 0.4,
            gummel=config.gummel or (k % 2 == 1),
            gummel_order=order,
        )
        traj = run_transient(device, t_end, cfg, initial=initial.copy(),
                             fixed_dt=dt)
        trajectories.append(traj)

    times = trajectories[0].times
    for traj in trajectories[1:]:
        if len(traj) != len(trajectories[0]):
            raise SolverError("probe runs accepted different step counts")
    pairwise = np.zeros((n_perturbations, n_perturbations))
    for a in range(n_perturbations):
        for b in range(a + 1, n_perturbations):
            d = 0.0
            for sa, sb in zip(trajectories[a].states, trajectories[b].states):
                d = max(d, sa.max_abs_difference(sb))
            pairwise[a, b] = pairwise[b, a] = d
    return ProbeResult(
        max_discrepancy=float(pairwise.max()),
        pairwise=pairwise,
        n_runs=n_perturbations,
        times=list(times),
        certified_tolerance=10.0 * config.newton_tol,
    )
