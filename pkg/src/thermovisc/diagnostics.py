"""Run-time certificates: energy ledgers, entropy production, the
determinant lower bound on energy sublevels, the generalized Korn
constant, a-priori monitors and weak-form residual audits.

Every quantity here is computed from trajectory data alone; the solvers
never see these numbers, so a passing certificate is independent
evidence that a run did what the analysis says it must.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, fields as dc_fields

import numpy as np
from scipy.sparse.linalg import splu

from .grid import Kinematics, NodalField
from .mech import main_mechanical_energy, semiconvexity_gap

THETA_FLOOR = 1e-12   # entropy quotients exclude colder quadrature points


@dataclass
class StepContext:
    tau: float
    eps: float
    load_vector: np.ndarray
    theta_b: dict | None
    mech_res: object
    heat_res: object | None
    isothermal: bool
    config: object


@dataclass
class StepDiagnostics:
    """Everything the certificate suite knows about one accepted step."""

    t: float
    M: float
    M_prev: float
    H_val: float
    Phi_cpl: float
    W_total: float
    E: float
    E_prev: float
    dissipation_step: float
    reg_dissipation_step: float
    ext_power: float
    boundary_heat: float
    entropy_prod: float
    entropy_total: float
    min_detF: float
    hk_bound: float
    korn_const: float
    mech_residual: float
    heat_residual: float
    energy_gap_total: float
    min_theta: float
    clamp_magnitude: float
    defect_reg: float
    defect_eps: float
    defect_semiconvex: float
    defect_coupling: float
    solver_term: float
    pcpl_old: float
    pcpl_new: float
    gradsq_step: float
    mech_iterations: int
    heat_iterations: int
    entropy_excluded: int

    def ledger_items(self):
        """The itemized total-energy identity; sums to energy_gap_total."""
        return {
            "dE": self.E - self.E_prev,
            "ext_power": -self.ext_power,
            "boundary_heat": self.boundary_heat,
            "defect_reg": self.defect_reg,
            "defect_eps": self.defect_eps,
            "defect_semiconvex": self.defect_semiconvex,
            "defect_coupling": self.defect_coupling,
            "solver_term": -self.solver_term,
        }


def state_energies(grid, model, snap, isothermal=False):
    """(M, H, Phi_cpl, W, E) of one snapshot."""
    kin = Kinematics(F=snap.F, G=snap.G, detF=snap.detF)
    H_val = grid.assemble_scalar(model.hyperstress_energy(snap.G))
    M = grid.assemble_scalar(model.elastic_energy(snap.F)) + H_val
    if isothermal:
        return M, H_val, 0.0, 0.0, M
    Phi_cpl = grid.assemble_scalar(
        model.coupling_energy(snap.F, np.maximum(snap.theta_qp, 0.0)))
    W_total = grid.assemble_scalar(snap.w_qp)
    return M, H_val, Phi_cpl, W_total, M + W_total


def total_entropy(grid, model, snap):
    th = np.maximum(snap.theta_qp, THETA_FLOOR)
    return grid.assemble_scalar(model.entropy_density(snap.F, th))


def compute_step_diagnostics(grid, model, snap_prev, snap_new, ctx: StepContext):
    tau, eps = ctx.tau, ctx.eps
    cfg = ctx.config
    dF = snap_new.F - snap_prev.F
    rate = dF / tau
    th_prev = np.maximum(snap_prev.theta_qp, 0.0)
    th_new = np.maximum(snap_new.theta_qp, 0.0)

    xi = model.dissipation_rate(snap_prev.F, rate, th_prev)
    xi_reg = xi / (1.0 + eps * xi)
    dissipation_step = tau * grid.assemble_scalar(xi)
    reg_step = tau * grid.assemble_scalar(xi_reg)

    dvals = snap_new.y.values - snap_prev.y.values
    ext_power = float(np.sum(ctx.load_vector * dvals))
    gradsq_step = grid.assemble_scalar(np.sum(dF**2, axis=(-2, -1)))
    defect_eps = (eps / tau) * gradsq_step

    kin_new = Kinematics(F=snap_new.F, G=snap_new.G, detF=snap_new.detF)
    kin_prev = Kinematics(F=snap_prev.F, G=snap_prev.G, detF=snap_prev.detF)
    defect_semiconvex = semiconvexity_gap(grid, model, snap_new.y, snap_prev.y,
                                          kin_new=kin_new, kin_prev=kin_prev)

    M_prev, _, _, _, E_prev = state_energies(grid, model, snap_prev, ctx.isothermal)
    M, H_val, Phi_cpl, W_total, E = state_energies(grid, model, snap_new, ctx.isothermal)

    mech_term = float(np.sum(ctx.mech_res.residual_vector * dvals))
    if ctx.isothermal:
        pcpl_old = pcpl_new = 0.0
        boundary_heat = 0.0
        heat_term = 0.0
        entropy_prod = 0.0
        entropy_tot = float("nan")
        min_theta = float(snap_new.theta_qp.min())
        clamp = 0.0
        heat_resid = 0.0
        heat_iters = 0
        excluded = 0
        ledger_reg = dissipation_step  # all dissipated power leaves the ledger
    else:
        pcpl_old = grid.assemble_scalar(
            np.sum(model.coupling_stress(snap_new.F, th_prev) * dF, axis=(-2, -1)))
        pcpl_new = grid.assemble_scalar(
            np.sum(model.coupling_stress(snap_new.F, th_new) * dF, axis=(-2, -1)))
        boundary_heat = 0.0
        for name, p in grid.faces.items():
            thf = grid.eval_face_scalar(name, snap_new.theta)
            boundary_heat += model.kappa * float(
                np.einsum("cq,q->", thf - ctx.theta_b[name], p.weights))
        boundary_heat *= tau
        ones = grid.constant_field(1.0).values
        heat_term = tau * float(np.sum(ctx.heat_res.residual_vector * ones))
        # entropy production rate xi/theta + grad theta . K grad theta / theta^2
        K_prev = model.pullback_conductivity(snap_prev.F, th_prev)
        _, gth = grid.eval_scalar(snap_new.theta)
        cond = np.einsum("cqa,cqab,cqb->cq", gth, K_prev, gth)
        mask = snap_new.theta_qp > THETA_FLOOR
        dens = np.where(mask, xi / np.maximum(snap_new.theta_qp, THETA_FLOOR)
                        + cond / np.maximum(snap_new.theta_qp, THETA_FLOOR) ** 2, 0.0)
        entropy_prod = tau * grid.assemble_scalar(dens)
        excluded = int((~mask).sum())
        entropy_tot = total_entropy(grid, model, snap_new)
        min_theta = ctx.heat_res.min_theta
        clamp = ctx.heat_res.clamp_magnitude
        heat_resid = ctx.heat_res.residual_norm
        heat_iters = ctx.heat_res.iterations
        ledger_reg = dissipation_step - reg_step

    defect_coupling = pcpl_old - pcpl_new
    solver_term = mech_term + heat_term
    gap_total = ((E - E_prev) - ext_power + boundary_heat + ledger_reg
                 + defect_eps + defect_semiconvex + defect_coupling - solver_term)

    hk = float("nan")
    if cfg is None or cfg.hk_every:
        hk = hk_determinant_bound(grid, model, kin_new)["bound"]
    korn = float("nan")
    if cfg is None or cfg.korn_every:
        korn = korn_constant(grid, snap_new.F)

    return StepDiagnostics(
        t=snap_new.t, M=M, M_prev=M_prev, H_val=H_val, Phi_cpl=Phi_cpl,
        W_total=W_total, E=E, E_prev=E_prev,
        dissipation_step=dissipation_step, reg_dissipation_step=reg_step,
        ext_power=ext_power, boundary_heat=boundary_heat,
        entropy_prod=entropy_prod, entropy_total=entropy_tot,
        min_detF=float(snap_new.detF.min()), hk_bound=hk, korn_const=korn,
        mech_residual=ctx.mech_res.residual_norm, heat_residual=heat_resid,
        energy_gap_total=gap_total, min_theta=min_theta, clamp_magnitude=clamp,
        defect_reg=ledger_reg, defect_eps=defect_eps,
        defect_semiconvex=defect_semiconvex, defect_coupling=defect_coupling,
        solver_term=solver_term, pcpl_old=pcpl_old, pcpl_new=pcpl_new,
        gradsq_step=gradsq_step, mech_iterations=ctx.mech_res.iterations,
        heat_iterations=heat_iters, entropy_excluded=excluded)


def merge_step_diagnostics(d1: StepDiagnostics, d2: StepDiagnostics):
    """Aggregate two consecutive substeps into one macro-step row."""
    add = ("dissipation_step", "reg_dissipation_step", "ext_power",
           "boundary_heat", "entropy_prod", "defect_reg", "defect_eps",
           "defect_semiconvex", "defect_coupling", "solver_term",
           "energy_gap_total", "pcpl_old", "pcpl_new", "gradsq_step",
           "mech_iterations", "heat_iterations", "entropy_excluded")
    out = {f.name: getattr(d2, f.name) for f in dc_fields(StepDiagnostics)}
    for name in add:
        out[name] = getattr(d1, name) + getattr(d2, name)
    out["M_prev"] = d1.M_prev
    out["E_prev"] = d1.E_prev
    out["min_detF"] = min(d1.min_detF, d2.min_detF)
    out["min_theta"] = min(d1.min_theta, d2.min_theta)
    out["clamp_magnitude"] = max(d1.clamp_magnitude, d2.clamp_magnitude)
    out["mech_residual"] = max(d1.mech_residual, d2.mech_residual)
    out["heat_residual"] = max(d1.heat_residual, d2.heat_residual)
    return StepDiagnostics(**out)


# ---------------------------------------------------------------------------
# balance checks


def mechanical_energy_check(traj, k):
    """Per-step mechanical energy inequality, tested with the increment.

    Returns (gap, slack_bound, solver_term) where

        gap = M(y^k) - M(y^{k-1}) + 2 tau R + eps tau ||grad rate||^2
              + coupling power - external power.

    Inserting the previous state certifies gap <= solver pairing; the
    positive side can additionally be violated only by the semiconvexity
    defect, which the pairwise Lambda estimate bounds: gap <= slack +
    solver_term.  A negative gap means the inequality holds with margin.
    """
    from .mech import estimate_lambda
    d = traj.step_diags[k - 1]
    gap = ((d.M - d.M_prev) + d.dissipation_step + d.defect_eps
           + d.pcpl_old - d.ext_power)
    lam = estimate_lambda(traj.grid, traj.model,
                          traj.snapshots[k].y, traj.snapshots[k - 1].y)
    slack = lam * d.gradsq_step
    return gap, slack, d.solver_term


def total_energy_check(traj, k):
    """Itemized total-energy ledger of step k; the items sum to the gap."""
    d = traj.step_diags[k - 1]
    items = d.ledger_items()
    assert abs(sum(items.values()) - d.energy_gap_total) < 1e-10 * max(
        1.0, abs(d.E)), "ledger items must reproduce the stored gap"
    return {"gap": d.energy_gap_total, "items": items,
            "scale": max(abs(d.E), abs(d.ext_power), d.dissipation_step, 1e-30)}


def entropy_production(traj, k):
    return traj.step_diags[k - 1].entropy_prod


# ---------------------------------------------------------------------------
# determinant lower bound on energy sublevels


def holder_constant(grid, values_qp, exponent):
    """Max difference quotient |v(x)-v(y)| / |x-y|^exponent over quadrature
    points at most two cells apart (per axis), on the tensor point lattice."""
    d = grid.d
    npts = len(grid.quad_pts_1d)
    lat_shape = tuple(grid.extents[k] * npts for k in range(d))
    # cell-major -> per-axis lattice: cells are x-fastest, qp tensor too
    vals = values_qp.reshape(tuple(reversed(grid.extents)) + (npts,) * d)
    # reorder to (ax0_cell, ax0_q, ax1_cell, ax1_q, ...) then merge
    perm = []
    for k in range(d):
        perm.extend([d - 1 - k, d + k])
    vals = np.transpose(vals, perm).reshape(lat_shape)
    coords = [np.concatenate([(c + grid.quad_pts_1d) * grid.h[k]
                              for c in range(grid.extents[k])])
              for k in range(d)]
    max_quot = 0.0
    reach = 2 * npts
    offsets = itertools.product(*([range(0, reach + 1)] * d))
    for off in offsets:
        if all(o == 0 for o in off):
            continue
        sl_a = tuple(slice(0, lat_shape[k] - off[k]) for k in range(d))
        sl_b = tuple(slice(off[k], lat_shape[k]) for k in range(d))
        diff = np.abs(vals[sl_b] - vals[sl_a])
        dist2 = 0.0
        for k in range(d):
            dx = coords[k][off[k]:] - coords[k][:lat_shape[k] - off[k]]
            shape = [1] * d
            shape[k] = dx.size
            dist2 = dist2 + (dx.reshape(shape)) ** 2
        quot = diff / np.sqrt(dist2) ** exponent
        if quot.size:
            max_quot = max(max_quot, float(quot.max()))
    return max_quot


def hk_determinant_bound(grid, model, kin, energy_bound=None):
    """Quantitative lower bound for det grad y on an energy sublevel.

    Follows the Hoelder-continuity argument for second-gradient energies:
    measured integral norms bound the det field's inverse q-norm, a cone at
    each boundary point turns that into a pointwise bound.  The Hoelder
    constant of det grad y is an on-grid estimate (flagged: not certified),
    so the bound is reported together with the measured minimum.
    """
    d, s, q, p = grid.d, model.s, model.q, model.p
    lam = 1.0 - d / p
    if lam * q <= d:
        raise ValueError(f"admissibility q > pd/(p-d) violated: lambda*q = {lam * q:g} <= d = {d}")
    if np.min(kin.detF) <= 0:
        raise ValueError("state must satisfy det grad y > 0")
    norm_F = grid.assemble_scalar(np.sum(kin.F**2, axis=(-2, -1)) ** (s / 2.0)) ** (1.0 / s)
    norm_dinv = grid.assemble_scalar(kin.detF ** (-q)) ** (1.0 / q)
    norm_G = grid.assemble_scalar(np.sum(kin.G**2, axis=(-3, -2, -1)) ** (p / 2.0)) ** (1.0 / p)
    C1 = norm_F + norm_dinv + norm_G
    C2 = holder_constant(grid, kin.detF, lam)
    r_star = 0.5 * min(grid.lengths)
    alpha_star = np.pi / 2.0   # worst interior cone of a box corner (2D and 3D)
    with np.errstate(divide="ignore"):
        c2_term = C2 ** (-d / lam) if C2 > 0 else np.inf
    c3 = alpha_star / (2.0**q * d) * min(r_star**d, c2_term)
    bound = min(c3 ** (1.0 / q) / C1,
                (c3 / C1**q) ** (lam / (lam * q - d)))
    measured = float(np.min(kin.detF))
    out = {"bound": float(bound), "measured_min_det": measured,
           "ratio": float(bound / measured), "holder_constant": C2,
           "C1": C1, "c3": c3, "lambda": lam}
    if energy_bound is not None:
        M = main_mechanical_energy(grid, model, kin)
        out["energy"] = M
        out["energy_bound_ok"] = bool(M <= energy_bound + 1e-12)
    return out


# ---------------------------------------------------------------------------
# generalized Korn constant


def korn_form_matrix(grid, F_qp):
    """Matrix of int |F^T grad v + (grad v)^T F|^2 on the vector space."""
    d = grid.d
    delta = np.eye(d)
    FFt = F_qp @ np.swapaxes(F_qp, -1, -2)
    c4 = (2.0 * np.einsum("ab,cqij->cqiajb", delta, FFt)
          + 2.0 * np.einsum("cqib,cqja->cqiajb", F_qp, F_qp))
    return grid.assemble_hessian(d, c4=c4)


def korn_constant(grid, F_qp, tol=1e-12, max_iter=500):
    """Smallest generalized eigenvalue of the Korn form against the H^1 form
    over vector fields vanishing on the fixed boundary part.

    Inverse iteration on the pencil with a deterministic start vector; the
    spectrum is real and the smallest eigenvalue simple or near-simple, so
    plain inverse iteration with the Rayleigh quotient converges.
    """
    d = grid.d
    if np.min(np.linalg.det(F_qp)) <= 0:
        raise ValueError("Korn form needs det F > 0")
    free = np.repeat(grid.free_sdofs, d)
    A = korn_form_matrix(grid, F_qp)[free][:, free].tocsc()
    key = ("korn_gram", d)
    if key not in grid._gram_cache:
        grid._gram_cache[key] = grid.h1_gram(d, free_only=True).tocsr()
    B = grid._gram_cache[key]
    lu = splu(A)
    x = np.ones(A.shape[0])
    x /= np.sqrt(x @ (B @ x))
    rho_prev = np.inf
    for _ in range(max_iter):
        x = lu.solve(B @ x)
        bn = np.sqrt(x @ (B @ x))
        if bn == 0.0 or not np.isfinite(bn):
            raise RuntimeError("Korn inverse iteration broke down")
        x /= bn
        rho = float(x @ (A @ x))
        if abs(rho - rho_prev) <= tol * max(rho, 1e-300):
            return rho
        rho_prev = rho
    return rho_prev


# ---------------------------------------------------------------------------
# a-priori monitors


def apriori_monitor(traj):
    """Per-step discrete norms of the standard a-priori families."""
    grid, model = traj.grid, traj.model
    p = model.p
    out = {"t": [], "y_w2p": [], "rate_grad_l2": [], "min_det": [],
           "theta_l2": [], "theta_h1": [], "w_rate_dual": []}
    lu = None
    for k, snap in enumerate(traj.snapshots):
        yv = grid.eval_vector_values(snap.y)
        w2p = (grid.assemble_scalar(np.sum(yv**2, axis=-1) ** (p / 2.0))
               + grid.assemble_scalar(np.sum(snap.F**2, axis=(-2, -1)) ** (p / 2.0))
               + grid.assemble_scalar(np.sum(snap.G**2, axis=(-3, -2, -1)) ** (p / 2.0)))
        out["y_w2p"].append(w2p ** (1.0 / p))
        th, gth = grid.eval_scalar(snap.theta)
        out["theta_l2"].append(np.sqrt(grid.assemble_scalar(th**2)))
        out["theta_h1"].append(np.sqrt(grid.assemble_scalar(th**2 + np.sum(gth**2, axis=-1))))
        out["min_det"].append(float(snap.detF.min()))
        out["t"].append(snap.t)
        if k == 0:
            out["rate_grad_l2"].append(0.0)
            out["w_rate_dual"].append(0.0)
            continue
        prev = traj.snapshots[k - 1]
        tau = snap.t - prev.t
        rate = (snap.F - prev.F) / tau
        out["rate_grad_l2"].append(np.sqrt(grid.assemble_scalar(np.sum(rate**2, axis=(-2, -1)))))
        dw = (snap.w_qp - prev.w_qp) / tau
        b = grid.assemble_gradient(1, source=dw)
        if lu is None:
            lu = splu(grid.h1_gram(1).tocsc())
        out["w_rate_dual"].append(float(np.sqrt(abs(b @ lu.solve(b)))))
    return {k: np.asarray(v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# weak-form residual audit


class TestBank:
    """Deterministic bank of smooth space-time test fields.

    Mechanical tests vanish on the fixed boundary part for all times;
    thermal tests vanish at the final time.  Spatial tables are cached at
    the volume and face quadrature points of the grid.
    """

    __test__ = False   # not a pytest class

    def __init__(self, grid, T, n_elements=10, seed=1234):
        import sympy as sy
        self.grid = grid
        self.T = float(T)
        d = grid.d
        rng = np.random.default_rng(seed)
        xs = sy.symbols(f"x0:{d}")
        mu = sy.Integer(1)
        for name in grid.dirichlet_faces:
            axis = {"x": 0, "y": 1, "z": 2}[name[0]]
            L = grid.lengths[axis]
            mu *= (xs[axis] / L) if name[1] == "0" else (1 - xs[axis] / L)

        Xq = grid.qcoords.reshape(-1, d)
        self.elements = []
        for _ in range(n_elements):
            comps = []
            for _c in range(d):
                expr = mu
                for k in range(d):
                    kk = int(rng.integers(1, 3))
                    ph = float(rng.uniform(0, 2 * np.pi))
                    expr *= sy.sin(np.pi * kk * xs[k] / grid.lengths[k] + ph)
                comps.append(float(rng.uniform(0.5, 1.5)) * expr)
            vexpr = sy.Integer(1)
            for k in range(d):
                kk = int(rng.integers(1, 3))
                ph = float(rng.uniform(0, 2 * np.pi))
                vexpr *= sy.cos(np.pi * kk * xs[k] / grid.lengths[k] + ph)
            vexpr = float(rng.uniform(0.5, 1.5)) * vexpr
            om_z = float(rng.uniform(0.5, 2.0))
            ph_z = float(rng.uniform(0, 2 * np.pi))
            om_v = float(rng.uniform(0.5, 2.0))

            elem = {
                "s": lambda t, om=om_z, ph=ph_z: np.cos(om * np.pi * t / self.T + ph),
                "r": lambda t, om=om_v: (1.0 - t / self.T) * np.cos(om * np.pi * t / self.T),
                "rdot": lambda t, om=om_v: (-np.cos(om * np.pi * t / self.T) / self.T
                                            - (1.0 - t / self.T) * om * np.pi / self.T
                                            * np.sin(om * np.pi * t / self.T)),
            }
            elem.update(self._tabulate(comps, vexpr, xs, Xq))
            self.elements.append(elem)

    def _tabulate(self, comps, vexpr, xs, Xq):
        import sympy as sy
        grid = self.grid
        d = grid.d
        ncq = (grid.n_cells, grid.nq)

        def lamb(expr):
            f = sy.lambdify(xs, expr, "numpy")
            vals = f(*[Xq[:, k] for k in range(d)])
            return np.broadcast_to(np.asarray(vals, dtype=float), (Xq.shape[0],)).reshape(ncq)

        Z = np.stack([lamb(c) for c in comps], axis=-1)
        gZ = np.stack([np.stack([lamb(sy.diff(c, xs[b])) for b in range(d)], axis=-1)
                       for c in comps], axis=-2)
        hZ = np.stack([np.stack([np.stack([lamb(sy.diff(c, xs[b], xs[g]))
                                           for g in range(d)], axis=-1)
                                 for b in range(d)], axis=-2)
                       for c in comps], axis=-3)
        V = lamb(vexpr)
        gV = np.stack([lamb(sy.diff(vexpr, xs[b])) for b in range(d)], axis=-1)
        # face tables for the vector test (traction) and scalar test (Robin)
        Zface, Vface = {}, {}
        for name, p in grid.faces.items():
            Xf = p.qcoords.reshape(-1, d)

            def lambf(expr):
                f = sy.lambdify(xs, expr, "numpy")
                vals = f(*[Xf[:, k] for k in range(d)])
                return np.broadcast_to(np.asarray(vals, dtype=float),
                                       (Xf.shape[0],)).reshape(p.qcoords.shape[:2])

            Zface[name] = np.stack([lambf(c) for c in comps], axis=-1)
            Vface[name] = lambf(vexpr)
        return {"Z": Z, "gradZ": gZ, "hessZ": hZ, "V": V, "gradV": gV,
                "Zface": Zface, "Vface": Vface}


def _time_nodes(t0, t1, npts=5):
    g, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (t1 - t0) * g + 0.5 * (t0 + t1), 0.5 * (t1 - t0) * w


def weak_residuals(traj, bank: TestBank):
    """Residual RMS of the two space-time weak identities on the bank.

    Both identities are audited for the system actually solved: for eps > 0
    the linear eps-viscosity, the capped dissipation source and the damped
    boundary/initial temperature data enter; at eps = 0 they are the plain
    identities.  Evaluation uses the affine interpolants with per-step Gauss
    quadrature in time.
    """
    grid, model = traj.grid, traj.model
    scenario = traj.scenario
    eps = traj.eps
    mech_res = np.zeros(len(bank.elements))
    heat_res = np.zeros(len(bank.elements))

    for k in range(1, traj.n_steps + 1):
        s0, s1 = traj.snapshots[k - 1], traj.snapshots[k]
        tau = s1.t - s0.t
        rate = (s1.F - s0.F) / tau
        ts, ws = _time_nodes(s0.t, s1.t)
        for t, wt in zip(ts, ws):
            lam = (t - s0.t) / tau
            F = (1 - lam) * s0.F + lam * s1.F
            G = (1 - lam) * s0.G + lam * s1.G
            th_qp = np.maximum((1 - lam) * s0.theta_qp + lam * s1.theta_qp, 0.0)
            w_qp = (1 - lam) * s0.w_qp + lam * s1.w_qp
            theta_blend = NodalField(grid, (1 - lam) * s0.theta.values + lam * s1.theta.values)
            _, gth = grid.eval_scalar(theta_blend)

            stress = (model.viscous_stress(F, rate, th_qp) + eps * rate
                      + model.elastic_stress(F))
            if not scenario.isothermal:
                stress = stress + model.coupling_stress(F, th_qp)
            hyper = model.hyperstress(G)
            gload = (np.asarray(scenario.bulk_force(t, grid.qcoords), dtype=float)
                     if scenario.bulk_force is not None else None)

            if not scenario.isothermal:
                Kt = model.pullback_conductivity(F, th_qp)
                flux = np.einsum("cqab,cqb->cqa", Kt, gth)
                xi_reg = model.regularized_rate(F, rate, th_qp, eps)
                src = xi_reg + np.sum(model.coupling_stress(F, th_qp) * rate, axis=(-2, -1))

            for e_i, el in enumerate(bank.elements):
                s_t = el["s"](t)
                r_t = el["r"](t)
                rd_t = el["rdot"](t)
                dens = (np.einsum("cqib,cqib->cq", stress, el["gradZ"])
                        + np.einsum("cqibg,cqibg->cq", hyper, el["hessZ"]))
                if gload is not None:
                    dens = dens - np.einsum("cqi,cqi->cq", gload, el["Z"])
                contrib = grid.assemble_scalar(dens)
                if scenario.traction is not None:
                    for name in grid.neumann_faces:
                        p = grid.faces[name]
                        fval = np.asarray(scenario.traction(t, name, p.qcoords), dtype=float)
                        contrib -= float(np.einsum(
                            "cqi,cqi,q->", fval, el["Zface"][name], p.weights))
                mech_res[e_i] += wt * s_t * contrib

                if scenario.isothermal:
                    continue
                hdens = (np.einsum("cqa,cqa->cq", flux, el["gradV"]) * r_t
                         - src * r_t * el["V"]
                         - w_qp * rd_t * el["V"])
                hcontrib = grid.assemble_scalar(hdens)
                for name, p in grid.faces.items():
                    thf = ((1 - lam) * grid.eval_face_scalar(name, s0.theta)
                           + lam * grid.eval_face_scalar(name, s1.theta))
                    tb = scenario._theta_b_raw(t, name, p.qcoords)
                    tb = tb / (1.0 + eps * tb)
                    hcontrib += model.kappa * float(np.einsum(
                        "cq,cq,q->", thf - tb, el["Vface"][name], p.weights)) * r_t
                heat_res[e_i] += wt * hcontrib

    if not scenario.isothermal:
        s0 = traj.snapshots[0]
        for e_i, el in enumerate(bank.elements):
            heat_res[e_i] -= el["r"](0.0) * grid.assemble_scalar(s0.w_qp * el["V"])
    return (float(np.sqrt(np.mean(mech_res**2))),
            float(np.sqrt(np.mean(heat_res**2))))


# ---------------------------------------------------------------------------
# run-level certificate summary


def run_certificates(traj, tol_pos=1e-10, ledger_rtol=1e-8, w_tol=1e-12):
    """Evaluate the per-run certificates and return a JSON-able summary.

    A run passes only if every accepted mechanical solve descended, the
    temperature never undershot below -tol_pos, every state stayed locally
    invertible with the certified determinant bound below the measured
    minimum, entropy production stayed nonnegative, the itemized energy
    ledger closed to ledger_rtol, and the stored enthalpy matched the
    constitutive relation pointwise.
    """
    diags = traj.step_diags
    iso = traj.scenario.isothermal
    checks = []

    def add(name, passed, value, threshold):
        checks.append({"name": name, "passed": bool(passed),
                       "value": float(value), "threshold": float(threshold)})

    n_violations = sum(1 for rec in traj.mech_log if rec["descent_gap"] < 0.0)
    add("mech_descent_violations", n_violations == 0, n_violations, 0)

    min_th = min((d.min_theta for d in diags), default=0.0)
    add("min_theta", min_th >= -tol_pos, min_th, -tol_pos)

    min_det = min((d.min_detF for d in diags), default=1.0)
    add("min_detF_positive", min_det > 0.0, min_det, 0.0)

    hk_ok = True
    hk_margin = np.inf
    for d in diags:
        if np.isfinite(d.hk_bound):
            hk_ok &= d.hk_bound <= d.min_detF + 1e-14
            hk_margin = min(hk_margin, d.min_detF - d.hk_bound)
    add("hk_bound_below_min_det", hk_ok,
        hk_margin if np.isfinite(hk_margin) else 0.0, 0.0)

    min_entropy = min((d.entropy_prod for d in diags), default=0.0)
    add("entropy_production_nonnegative", min_entropy >= -1e-12, min_entropy, -1e-12)

    worst_gap = 0.0
    for d in diags:
        scale = max(abs(d.E), abs(d.ext_power), d.dissipation_step, 1.0)
        worst_gap = max(worst_gap, abs(d.energy_gap_total) / scale)
    add("energy_ledger_closes", worst_gap <= ledger_rtol, worst_gap, ledger_rtol)

    if not iso:
        worst_w = 0.0
        for snap in traj.snapshots:
            w_check = traj.model.enthalpy(snap.F, np.maximum(snap.theta_qp, 0.0))
            worst_w = max(worst_w, float(np.max(np.abs(snap.w_qp - w_check))))
        add("enthalpy_consistency", worst_w <= w_tol, worst_w, w_tol)

    korn_vals = [d.korn_const for d in diags if np.isfinite(d.korn_const)]
    if korn_vals:
        add("korn_constant_positive", min(korn_vals) > 0.0, min(korn_vals), 0.0)

    return {
        "n_steps": traj.n_steps,
        "tau": traj.tau,
        "eps": traj.eps,
        "scenario": traj.scenario.name,
        "isothermal": iso,
        "max_mech_residual": max((d.mech_residual for d in diags), default=0.0),
        "max_heat_residual": max((d.heat_residual for d in diags), default=0.0),
        "checks": checks,
        "all_passed": all(c["passed"] for c in checks),
    }
