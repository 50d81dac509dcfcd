"""Staggered time loop: mechanics first, then the thermal update.

Per step k the deformation is updated by the incremental mechanical
minimization at the frozen previous temperature, then the temperature by
the convex thermal minimization that uses the old deformation/temperature
in the conductivity and in the capped dissipation source but the new
deformation and the implicit temperature in the coupling term.  That
ordering and explicit/implicit split is load-bearing (it is what makes
temperatures stay nonnegative); do not permute it.

The regularization parameter eps caps the dissipation source at 1/eps,
adds eps * |grad rate|^2 of linear viscosity to the mechanical step and
damps the boundary/initial temperature data to theta/(1 + eps*theta).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import diagnostics as diag
from .grid import NodalField, StructuredGrid, apply_dirichlet_identity
from .heat import HeatIncrement, solve_heat
from .materials import MaterialModel
from .mech import MechIncrement, SolverConfig, StepRejectedError, solve_mech


@dataclass
class Scenario:
    """Problem data for one run: domain, constitutive bundle, loads, data."""

    name: str
    grid: StructuredGrid
    model: MaterialModel
    T: float
    bulk_force: object = None        # g(t, X) -> (ncells, nq, d), or None
    traction: object = None          # f(t, face, X) -> (nfc, nqf, d), or None
    theta_b: object = 1.0            # scalar or callable(t, X)
    theta0: object = 1.0             # scalar or NodalField
    y0: NodalField = None            # defaults to the identity map
    isothermal: bool = False

    def __post_init__(self):
        errs = self.validate()
        if errs:
            raise ValueError("; ".join(errs))

    def validate(self):
        errs = []
        if self.T <= 0:
            errs.append(f"final time must be positive (got {self.T})")
        if self.grid.d != self.model.d:
            errs.append("grid and material dimensions disagree")
        y0 = self.y0 if self.y0 is not None else self.grid.identity_field()
        ident = self.grid.identity_field()
        mask = self.grid.dirichlet_sdofs
        if not np.allclose(y0.values[mask], ident.values[mask], atol=1e-12):
            errs.append("y0 must equal the identity on the fixed boundary part")
        kin = self.grid.eval_kinematics(y0)
        if kin.min_detF <= 0:
            errs.append("y0 must be locally invertible (min det grad y0 > 0)")
        th0 = self._theta0_field()
        if th0.values[0::self.grid.ndof_node].min() < 0:
            errs.append("theta0 must be nonnegative")
        for t in np.linspace(0.0, self.T, 5):
            for name, p in self.grid.faces.items():
                tb = self._theta_b_raw(t, name, p.qcoords)
                if np.min(tb) < 0:
                    errs.append(f"theta_b must be nonnegative (face {name}, t={t:g})")
                    break
        if not errs:
            # free energy of the initial state must be finite
            th_qp, _ = self.grid.eval_scalar(th0)
            dens = (self.model.elastic_energy(kin.F)
                    + self.model.hyperstress_energy(kin.G)
                    + self.model.coupling_energy(kin.F, np.maximum(th_qp, 0.0)))
            if not np.isfinite(self.grid.assemble_scalar(dens)):
                errs.append("free energy of (y0, theta0) is not finite")
        return errs

    def _theta0_field(self):
        if isinstance(self.theta0, NodalField):
            return self.theta0
        return self.grid.constant_field(float(self.theta0))

    def _theta_b_raw(self, t, face, X):
        if callable(self.theta_b):
            return np.broadcast_to(np.asarray(self.theta_b(t, X), dtype=float),
                                   X.shape[:2]).copy()
        return np.full(X.shape[:2], float(self.theta_b))


@dataclass
class Snapshot:
    k: int
    t: float
    y: NodalField
    theta: NodalField
    w_qp: np.ndarray
    F: np.ndarray
    G: np.ndarray
    detF: np.ndarray
    theta_qp: np.ndarray

    @property
    def min_detF(self):
        return float(self.detF.min())


@dataclass
class Trajectory:
    scenario: Scenario
    tau: float
    eps: float
    config: SolverConfig
    snapshots: list = field(default_factory=list)
    step_diags: list = field(default_factory=list)
    mech_log: list = field(default_factory=list)   # every accepted mech solve

    @property
    def grid(self):
        return self.scenario.grid

    @property
    def model(self):
        return self.scenario.model

    @property
    def n_steps(self):
        return len(self.snapshots) - 1

    def times(self):
        return np.array([s.t for s in self.snapshots])


def _damping_derivatives(eps):
    """First three derivatives of v -> v/(1 + eps v), for the dof chain rule."""
    def d0(v):
        return v / (1.0 + eps * v)

    def d1(v):
        return 1.0 / (1.0 + eps * v) ** 2

    def d2(v):
        return -2.0 * eps / (1.0 + eps * v) ** 3

    def d3(v):
        return 6.0 * eps**2 / (1.0 + eps * v) ** 4

    return d0, d1, d2, d3


def transform_nodal_scalar(grid, field, derivs):
    """Exact Hermite dofs of f(theta) from the dofs of theta.

    derivs = (f, f', f'', f'''). Mixed-partial dofs follow the multivariate
    chain rule over partitions of the active axis set (at most three axes).
    """
    f0, f1, f2, f3 = derivs
    nd = grid.ndof_node
    old = field.values
    v = old[0::nd]
    new = np.zeros_like(old)
    new[0::nd] = f0(v)

    def dof(code):
        return old[code::nd]

    for m_code in range(1, nd):
        axes = [k for k in range(grid.d) if (m_code >> k) & 1]
        if len(axes) == 1:
            val = f1(v) * dof(m_code)
        elif len(axes) == 2:
            a, b = (1 << axes[0]), (1 << axes[1])
            val = f2(v) * dof(a) * dof(b) + f1(v) * dof(a | b)
        else:
            a, b, c = (1 << axes[0]), (1 << axes[1]), (1 << axes[2])
            val = (f3(v) * dof(a) * dof(b) * dof(c)
                   + f2(v) * (dof(a | b) * dof(c) + dof(a | c) * dof(b)
                              + dof(b | c) * dof(a))
                   + f1(v) * dof(a | b | c))
        new[m_code::nd] = val
    return NodalField(grid, new)


def _time_average(fn, t0, t1, npts):
    g, w = np.polynomial.legendre.leggauss(npts)
    ts = 0.5 * (t1 - t0) * g + 0.5 * (t0 + t1)
    ws = 0.5 * w  # averaging weights sum to 1
    out = None
    for t, wt in zip(ts, ws):
        v = fn(t)
        out = wt * v if out is None else out + wt * v
    return out


def step_load_vector(scenario, t0, t1, npts=4):
    """Time-averaged dual load vector <l_k, .> over one step."""
    grid = scenario.grid
    L = np.zeros((grid.n_sdofs, grid.d))
    if scenario.bulk_force is not None:
        g_avg = _time_average(lambda t: np.asarray(
            scenario.bulk_force(t, grid.qcoords), dtype=float), t0, t1, npts)
        L += grid.assemble_gradient(grid.d, source=g_avg)
    if scenario.traction is not None:
        coef = {}
        for name in grid.neumann_faces:
            p = grid.faces[name]
            f_avg = _time_average(lambda t: np.asarray(
                scenario.traction(t, name, p.qcoords), dtype=float), t0, t1, npts)
            if f_avg is not None and np.any(f_avg):
                coef[name] = f_avg
        if coef:
            L += grid.assemble_face_gradient(list(coef), coef, ncomp=grid.d)
    return L


def step_theta_b(scenario, eps, t0, t1, npts=4):
    """Per-face regularized, time-averaged boundary temperature."""
    grid = scenario.grid
    out = {}
    for name, p in grid.faces.items():
        def reg(t):
            tb = scenario._theta_b_raw(t, name, p.qcoords)
            return tb / (1.0 + eps * tb)
        out[name] = _time_average(reg, t0, t1, npts)
    return out


def _make_snapshot(grid, model, k, t, y, theta, w_qp=None, isothermal=False):
    kin = grid.eval_kinematics(y)
    th_qp, _ = grid.eval_scalar(theta)
    if w_qp is None:
        if isothermal:
            w_qp = np.zeros_like(th_qp)
        else:
            w_qp = model.enthalpy(kin.F, np.maximum(th_qp, 0.0))
    return Snapshot(k=k, t=t, y=y, theta=theta, w_qp=w_qp,
                    F=kin.F, G=kin.G, detF=kin.detF, theta_qp=th_qp)


def run(scenario: Scenario, tau: float, eps: float,
        config: SolverConfig | None = None, checkpoint_dir: str | None = None,
        resume: bool = False) -> Trajectory:
    """Run the staggered scheme over [0, T] with constant step tau."""
    cfg = config or SolverConfig()
    if tau <= 0:
        raise ValueError("tau must be positive")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    n_steps = round(scenario.T / tau)
    if abs(n_steps * tau - scenario.T) > 1e-9 * scenario.T:
        raise ValueError(f"T/tau must be an integer (T={scenario.T}, tau={tau})")

    grid, model = scenario.grid, scenario.model
    traj = Trajectory(scenario=scenario, tau=tau, eps=eps, config=cfg)

    y0 = (scenario.y0 or grid.identity_field()).copy()
    apply_dirichlet_identity(grid, y0)
    th0 = scenario._theta0_field().copy()
    if eps > 0 and not scenario.isothermal:
        th0 = transform_nodal_scalar(grid, th0, _damping_derivatives(eps))
    traj.snapshots.append(_make_snapshot(grid, model, 0, 0.0, y0, th0,
                                         isothermal=scenario.isothermal))

    start_k = 0
    if resume and checkpoint_dir:
        loaded = load_checkpoint(traj, checkpoint_dir)
        if loaded is not None:
            start_k = loaded

    for k in range(start_k + 1, n_steps + 1):
        t0, t1 = (k - 1) * tau, k * tau
        snap_prev = traj.snapshots[-1]
        snap, d = _advance(traj, snap_prev, t0, t1, depth=0)
        snap.k, snap.t = k, t1
        traj.snapshots.append(snap)
        traj.step_diags.append(d)
        if checkpoint_dir and cfg.checkpoint_every and k % cfg.checkpoint_every == 0:
            save_checkpoint(traj, checkpoint_dir)
    return traj


def _advance(traj, snap_prev, t0, t1, depth):
    """One step of size t1-t0, halving locally on rejection."""
    cfg = traj.config
    try:
        return _single_step(traj, snap_prev, t0, t1)
    except StepRejectedError:
        if depth >= cfg.max_step_halvings:
            raise
        tm = 0.5 * (t0 + t1)
        snap_mid, d1 = _advance(traj, snap_prev, t0, tm, depth + 1)
        snap_end, d2 = _advance(traj, snap_mid, tm, t1, depth + 1)
        return snap_end, diag.merge_step_diagnostics(d1, d2)


def _single_step(traj, snap_prev, t0, t1):
    scenario, cfg = traj.scenario, traj.config
    grid, model = traj.grid, traj.model
    tau_step = t1 - t0
    load = step_load_vector(scenario, t0, t1, cfg.time_quad_pts)

    mech_inc = MechIncrement(
        grid=grid, model=model, y_prev=snap_prev.y,
        theta_prev_qp=np.maximum(snap_prev.theta_qp, 0.0),
        tau=tau_step, eps=traj.eps, load_vector=load,
        include_coupling=not scenario.isothermal,
        F_prev=snap_prev.F, min_det_prev=snap_prev.min_detF)
    mech_res = solve_mech(mech_inc, cfg)
    traj.mech_log.append({
        "t": t1, "descent_gap": mech_res.descent_gap,
        "iterations": mech_res.iterations, "min_detF": mech_res.min_detF,
        "iterate_min_det": min(mech_res.iterate_min_dets),
        "residual_norm": mech_res.residual_norm})

    if scenario.isothermal:
        heat_res = None
        theta_b = None
        snap = Snapshot(k=-1, t=t1, y=mech_res.y_new, theta=snap_prev.theta,
                        w_qp=np.zeros_like(snap_prev.w_qp),
                        F=mech_res.kinematics.F, G=mech_res.kinematics.G,
                        detF=mech_res.kinematics.detF, theta_qp=snap_prev.theta_qp)
    else:
        theta_b = step_theta_b(scenario, traj.eps, t0, t1, cfg.time_quad_pts)
        heat_inc = HeatIncrement(
            grid=grid, model=model, y_prev=snap_prev.y, y_new=mech_res.y_new,
            theta_prev=snap_prev.theta, w_prev_qp=snap_prev.w_qp,
            tau=tau_step, eps=traj.eps, theta_b=theta_b,
            F_prev=snap_prev.F, F_new=mech_res.kinematics.F)
        heat_res = solve_heat(heat_inc, cfg)
        snap = Snapshot(k=-1, t=t1, y=mech_res.y_new, theta=heat_res.theta_new,
                        w_qp=heat_res.w_new_qp,
                        F=mech_res.kinematics.F, G=mech_res.kinematics.G,
                        detF=mech_res.kinematics.detF,
                        theta_qp=heat_res.theta_new_qp)

    ctx = diag.StepContext(tau=tau_step, eps=traj.eps, load_vector=load,
                           theta_b=theta_b, mech_res=mech_res, heat_res=heat_res,
                           isothermal=scenario.isothermal, config=cfg)
    d = diag.compute_step_diagnostics(grid, model, snap_prev, snap, ctx)
    return snap, d


# ---------------------------------------------------------------------------
# interpolants in time


@dataclass
class InterpolantState:
    y_values: np.ndarray
    theta_values: np.ndarray
    w_qp: np.ndarray


@dataclass
class Interpolants:
    hold_new: InterpolantState    # snapshot k on ]( k-1) tau, k tau]
    hold_old: InterpolantState    # snapshot k-1 on [(k-1) tau, k tau[
    affine: InterpolantState


def interpolants(traj: Trajectory, t: float) -> Interpolants:
    """The three interpolant families evaluated at one time."""
    T = traj.snapshots[-1].t
    if t < -1e-12 or t > T + 1e-12:
        raise ValueError(f"t={t} outside [0, {T}]")
    tau = traj.tau
    t = min(max(t, 0.0), T)
    k_new = int(np.ceil(t / tau - 1e-12))
    k_new = min(max(k_new, 0), traj.n_steps)
    k_old = int(np.floor(t / tau + 1e-12))
    k_old = min(max(k_old, 0), traj.n_steps)
    s_new, s_old = traj.snapshots[k_new], traj.snapshots[k_old]

    def state(s):
        return InterpolantState(s.y.values, s.theta.values, s.w_qp)

    lo = traj.snapshots[max(k_new - 1, 0)]
    lam = (t - lo.t) / tau if k_new > 0 else 0.0
    aff = InterpolantState(
        (1 - lam) * lo.y.values + lam * s_new.y.values,
        (1 - lam) * lo.theta.values + lam * s_new.theta.values,
        (1 - lam) * lo.w_qp + lam * s_new.w_qp)
    return Interpolants(hold_new=state(s_new), hold_old=state(s_old), affine=aff)


# ---------------------------------------------------------------------------
# refinement studies


def trajectory_distance(traj_a: Trajectory, traj_b: Trajectory):
    """Space-time L^2 distances of the affine gradient and temperature
    interpolants of two runs on the same grid and horizon."""
    grid = traj_a.grid
    tau_f = min(traj_a.tau, traj_b.tau)
    n = round(traj_a.snapshots[-1].t / tau_f)
    dy2 = 0.0
    dth2 = 0.0

    def fields(traj, t):
        s = interpolants(traj, t).affine
        kin = grid.eval_kinematics(NodalField(grid, s.y_values))
        th, _ = grid.eval_scalar(NodalField(grid, s.theta_values))
        return kin.F, th

    # both interpolants are affine on each fine interval, so Simpson is exact
    for i in range(n):
        t0, t1 = i * tau_f, (i + 1) * tau_f
        vals = []
        for t in (t0, 0.5 * (t0 + t1), t1):
            Fa, tha = fields(traj_a, t)
            Fb, thb = fields(traj_b, t)
            vals.append((grid.assemble_scalar(np.sum((Fa - Fb) ** 2, axis=(-2, -1))),
                         grid.assemble_scalar((tha - thb) ** 2)))
        w = np.array([1.0, 4.0, 1.0]) / 6.0
        dy2 += tau_f * float(np.dot(w, [v[0] for v in vals]))
        dth2 += tau_f * float(np.dot(w, [v[1] for v in vals]))
    return np.sqrt(dy2), np.sqrt(dth2)


def regularization_report(traj: Trajectory):
    """Size of the eps-contributions along one run."""
    eps_rate = 0.0
    reg_gap = 0.0
    total_xi = 0.0
    for d in traj.step_diags:
        eps_rate += d.defect_eps
        reg_gap += d.defect_reg
        total_xi += d.dissipation_step
    return {"eps_rate_norm": eps_rate, "reg_gap_l1": reg_gap,
            "total_dissipation": total_xi}


def refinement_study(scenario: Scenario, tau_list, eps_list,
                     config: SolverConfig | None = None):
    """Run the (tau, eps) product and report Cauchy trends.

    tau_list and eps_list must be sorted decreasing.  For each eps the
    report holds distances between successive tau-refinements; every run
    also reports its regularization contributions.
    """
    if list(tau_list) != sorted(tau_list, reverse=True):
        raise ValueError("tau_list must be sorted decreasing")
    if list(eps_list) != sorted(eps_list, reverse=True):
        raise ValueError("eps_list must be sorted decreasing")
    cfg = config or SolverConfig(korn_every=0, hk_every=0)
    report = {"runs": [], "cauchy": {}}
    trajs = {}
    for eps in eps_list:
        prev = None
        rows = []
        for tau in tau_list:
            traj = run(scenario, tau, eps, cfg)
            trajs[(tau, eps)] = traj
            entry = {"tau": tau, "eps": eps}
            entry.update(regularization_report(traj))
            report["runs"].append(entry)
            if prev is not None:
                dy, dth = trajectory_distance(prev, traj)
                rows.append({"tau_coarse": prev.tau, "tau_fine": tau,
                             "dy_grad_l2": dy, "dtheta_l2": dth})
            prev = traj
        report["cauchy"][eps] = rows
    report["trajectories"] = trajs
    return report


# ---------------------------------------------------------------------------
# checkpointing


def run_hash(scenario: Scenario, tau, eps, config: SolverConfig):
    """Stable hash of everything that determines a trajectory."""
    payload = {
        "name": scenario.name,
        "extents": scenario.grid.extents,
        "lengths": scenario.grid.lengths,
        "dirichlet": scenario.grid.dirichlet_faces,
        "model": asdict(scenario.model),
        "T": scenario.T,
        "tau": tau,
        "eps": eps,
        "isothermal": scenario.isothermal,
        "solver": asdict(config),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(traj: Trajectory, directory):
    from .outputs import write_field_dump
    os.makedirs(directory, exist_ok=True)
    snap = traj.snapshots[-1]
    h = run_hash(traj.scenario, traj.tau, traj.eps, traj.config)
    path = os.path.join(directory, f"checkpoint_{snap.k:06d}.bin")
    write_field_dump(path, step=snap.k, t=snap.t, grid=traj.grid,
                     config_hash=h,
                     arrays={"y": snap.y.values.ravel(),
                             "theta": snap.theta.values,
                             "w": snap.w_qp.ravel(),
                             "detF": snap.detF.ravel()})
    return path


def load_checkpoint(traj: Trajectory, directory):
    """Resume from the newest checkpoint whose config hash matches.

    A resumed trajectory holds snapshots from the restart point onward;
    diagnostics of the skipped steps are not reconstructed.
    """
    from .outputs import read_field_dump
    if not os.path.isdir(directory):
        return None
    files = sorted(f for f in os.listdir(directory)
                   if f.startswith("checkpoint_") and f.endswith(".bin"))
    h = run_hash(traj.scenario, traj.tau, traj.eps, traj.config)
    for name in reversed(files):
        meta, arrays = read_field_dump(os.path.join(directory, name))
        if meta["config_hash"] != h:
            continue
        grid = traj.grid
        y = NodalField(grid, arrays["y"].reshape(grid.n_sdofs, grid.d))
        theta = NodalField(grid, arrays["theta"])
        w = arrays["w"].reshape(grid.n_cells, grid.nq)
        snap = _make_snapshot(grid, traj.model, int(meta["step"]), float(meta["t"]),
                              y, theta, w_qp=w, isothermal=traj.scenario.isothermal)
        traj.snapshots = [snap]
        return int(meta["step"])
    return None
