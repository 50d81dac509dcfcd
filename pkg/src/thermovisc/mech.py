"""One incremental mechanical update.

Minimizes, over deformations that equal the identity on the fixed part
of the boundary,

    (1/tau) * R(y_prev, y - y_prev, theta_prev)
    + (eps/2tau) * ||grad y - grad y_prev||^2
    + Psi(y, theta_prev) - <loads, y>

with R the frame-indifferent quadratic rate potential and Psi the free
energy (stored + hyperstress + thermal coupling at the frozen previous
temperature).  Infeasible states (det grad y <= 0 anywhere) carry the
value +inf.  The solver is a damped Newton method with a Levenberg shift
fallback for indefinite Hessian models and a backtracking line search
that enforces both Armijo decrease and a determinant floor, so every
accepted iterate descends and stays locally invertible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import NodalField, zero_dirichlet_rows
from .materials import rate_of_cauchy_green


class StepRejectedError(RuntimeError):
    """The incremental solve failed; the caller may retry with tau/2."""


@dataclass
class SolverConfig:
    """Tolerances and globalization parameters for both incremental solves."""

    tol_mech: float = 1e-8       # relative dual-norm tolerance, mech step
    tol_heat: float = 1e-9       # relative dual-norm tolerance, heat step
    tol_pos: float = 1e-10       # permitted temperature undershoot
    atol_residual: float = 1e-13  # absolute dual-norm floor (steady states)
    max_newton: int = 50
    max_backtracks: int = 40
    armijo: float = 1e-4
    det_floor: float = 0.1       # accepted min det >= det_floor * current
    max_step_halvings: int = 4
    korn_every: int = 1          # 0 disables the per-step Korn eigensolve
    hk_every: int = 1            # 0 disables the per-step determinant bound
    checkpoint_every: int = 0
    time_quad_pts: int = 4       # Gauss points for per-step load averaging


@dataclass
class MechIncrement:
    """Frozen data of one mechanical step."""

    grid: object
    model: object
    y_prev: NodalField
    theta_prev_qp: np.ndarray      # (ncells, nq)
    tau: float
    eps: float
    load_vector: np.ndarray        # (n_sdofs, d), dual pairing <loads, .>
    include_coupling: bool = True
    F_prev: np.ndarray = field(default=None, repr=False)
    min_det_prev: float = field(default=None)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.F_prev is None:
            kin = self.grid.eval_kinematics(self.y_prev)
            self.F_prev = kin.F
            self.min_det_prev = kin.min_detF
        if self.min_det_prev <= 0:
            raise ValueError("previous state must satisfy min det grad y > 0")
        # the viscous+regularization Hessian block is constant over the step
        self._visc_c4 = (self.model.viscous_hessian(self.F_prev) / self.tau
                         + (self.eps / self.tau)
                         * np.einsum("ij,ab->iajb", np.eye(self.grid.d), np.eye(self.grid.d)))


@dataclass
class MechResult:
    y_new: NodalField
    functional_value: float
    descent_gap: float
    iterations: int
    min_detF: float
    residual_norm: float
    residual_vector: np.ndarray   # assembled gradient at the accepted state
    kinematics: object
    iterate_min_dets: list = field(default_factory=list)  # every accepted iterate


def incremental_functional(inc: MechIncrement, y: NodalField, kin=None):
    """Value of the step functional at y; +inf when any det grad y <= 0."""
    if kin is None:
        kin = inc.grid.eval_kinematics(y)
    if kin.detF.min() <= 0.0:
        return np.inf, kin
    m = inc.model
    dF = kin.F - inc.F_prev
    Cdot_full = rate_of_cauchy_green(inc.F_prev, dF)
    dens = (0.5 * m.nu / inc.tau) * np.sum(Cdot_full**2, axis=(-2, -1))
    if inc.eps > 0:
        dens = dens + (0.5 * inc.eps / inc.tau) * np.sum(dF**2, axis=(-2, -1))
    dens = dens + m.elastic_energy(kin.F) + m.hyperstress_energy(kin.G)
    if inc.include_coupling:
        dens = dens + m.coupling_energy(kin.F, inc.theta_prev_qp)
    value = inc.grid.assemble_scalar(dens) - float(np.sum(inc.load_vector * y.values))
    return value, kin


def incremental_gradient(inc: MechIncrement, y: NodalField, kin=None):
    """Assembled derivative of the step functional, Dirichlet rows zeroed."""
    if kin is None:
        kin = inc.grid.eval_kinematics(y)
    m = inc.model
    dF = kin.F - inc.F_prev
    stress = m.viscous_stress(inc.F_prev, dF / inc.tau, inc.theta_prev_qp)
    if inc.eps > 0:
        stress = stress + (inc.eps / inc.tau) * dF
    stress = stress + m.elastic_stress(kin.F)
    if inc.include_coupling:
        stress = stress + m.coupling_stress(kin.F, inc.theta_prev_qp)
    r = inc.grid.assemble_gradient(inc.grid.d, stress=stress,
                                   hyperstress=m.hyperstress(kin.G))
    r = r - inc.load_vector
    return zero_dirichlet_rows(inc.grid, r), kin

def incremental_hessian(inc: MechIncrement, kin):
    m = inc.model
    c4 = inc._visc_c4 + m.elastic_hessian(kin.F)
    if inc.include_coupling:
        c4 = c4 + m.coupling_hessian(kin.F, inc.theta_prev_qp)
    scal, rank1 = m.hyperstress_hessian_parts(kin.G)
    return inc.grid.assemble_hessian(inc.grid.d, c4=c4,
                                     hyper_scal=scal, hyper_rank1=rank1)


def solve_mech(inc: MechIncrement, config: SolverConfig | None = None) -> MechResult:
    """Damped Newton on the incremental functional from y_prev."""
    cfg = config or SolverConfig()
    grid = inc.grid
    d = grid.d
    free = np.repeat(grid.free_sdofs, d)

    y = inc.y_prev.copy()
    J0, kin = incremental_functional(inc, y)
    if not np.isfinite(J0):
        raise ValueError("incremental functional must be finite at y_prev")
    J = J0
    iterate_dets = [kin.min_detF]
    r, _ = incremental_gradient(inc, y, kin)
    rnorm0 = grid.dual_norm(r, ncomp=d)
    rnorm = rnorm0
    target = max(cfg.tol_mech * rnorm0, cfg.atol_residual)

    iters = 0
    at_floor = False
    while rnorm > target and iters < cfg.max_newton:
        H = incremental_hessian(inc, kin)
        Hf = H[free][:, free].tocsc()
        rf = r.reshape(-1)[free]
        scale = max(float(np.mean(np.abs(Hf.diagonal()))), 1e-30)
        accepted = False
        shift = 0.0
        for _ in range(12):
            try:
                lu = splu(Hf + shift * scale * sp.identity(Hf.shape[0], format="csc"))
                p = -lu.solve(rf)
            except RuntimeError:
                p = None
            if p is not None and np.all(np.isfinite(p)) and rf @ p < 0.0:
                slope = float(rf @ p)
                in_noise = abs(slope) <= 1e-15 * (1.0 + abs(J))
                if in_noise and shift == 0.0:
                    # decrease below the roundoff of J: probe the raw Newton
                    # step and keep it only if it halves the residual while
                    # staying below the step's starting value (so the
                    # descent certificate stays exact); either way this is
                    # the floor regime, a line search cannot add anything
                    at_floor = True
                    cand = y.copy()
                    cand.values.reshape(-1)[free] += p
                    Jc, kin_c = incremental_functional(inc, cand)
                    if (np.isfinite(Jc) and Jc <= J0
                            and kin_c.detF.min() > cfg.det_floor * kin.detF.min()):
                        r_c, _ = incremental_gradient(inc, cand, kin_c)
                        rc = grid.dual_norm(r_c, ncomp=d)
                        if rc < 0.5 * rnorm:
                            y, J, kin = cand, Jc, kin_c
                            r, rnorm = r_c, rc
                            iterate_dets.append(kin.min_detF)
                            accepted = True
                    break
                t = 1.0
                for _ in range(cfg.max_backtracks):
                    cand = y.copy()
                    cand.values.reshape(-1)[free] += t * p
                    Jc, kin_c = incremental_functional(inc, cand)
                    if (Jc <= J + cfg.armijo * t * slope
                            and np.isfinite(Jc)
                            and kin_c.detF.min() > cfg.det_floor * kin.detF.min()):
                        y, J, kin = cand, Jc, kin_c
                        iterate_dets.append(kin.min_detF)
                        accepted = True
                        break
                    t *= 0.5
            if accepted or at_floor:
                break
            shift = 1e-8 if shift == 0.0 else shift * 100.0
        if at_floor:
            if not accepted:
                break   # converged at the noise floor without moving
            iters += 1
            continue    # gradient already refreshed by the probe
        if not accepted:
            raise StepRejectedError(
                f"mechanical line search failed at iteration {iters} "
                f"(residual {rnorm:.3e})")
        r, _ = incremental_gradient(inc, y, kin)
        rnorm = grid.dual_norm(r, ncomp=d)
        iters += 1

    if rnorm > target and not at_floor:
        raise StepRejectedError(
            f"mechanical Newton did not converge in {cfg.max_newton} iterations "
            f"(residual {rnorm:.3e}, target {target:.3e})")
    return MechResult(y_new=y, functional_value=J, descent_gap=J0 - J,
                      iterations=iters, min_detF=kin.min_detF,
                      residual_norm=rnorm, residual_vector=r, kinematics=kin,
                      iterate_min_dets=iterate_dets)


def main_mechanical_energy(grid, model, kin):
    """Stored + hyperstress energy of a state from its kinematics."""
    dens = model.elastic_energy(kin.F) + model.hyperstress_energy(kin.G)
    return grid.assemble_scalar(dens)


def mech_energy_gradient(grid, model, kin):
    """Assembled derivative of the main mechanical energy (no BC rows zeroed)."""
    return grid.assemble_gradient(grid.d, stress=model.elastic_stress(kin.F),
                                  hyperstress=model.hyperstress(kin.G))


def estimate_lambda(grid, model, y1: NodalField, y2: NodalField):
    """Smallest Lambda >= 0 closing the semiconvexity gap for this pair.

    M(y2) >= M(y1) + DM(y1)[y2-y1] - Lambda * ||grad y2 - grad y1||^2.
    """
    kin1 = grid.eval_kinematics(y1)
    kin2 = grid.eval_kinematics(y2)
    if kin1.detF.min() <= 0 or kin2.detF.min() <= 0:
        raise ValueError("both states must be locally invertible")
    M1 = main_mechanical_energy(grid, model, kin1)
    M2 = main_mechanical_energy(grid, model, kin2)
    dv = y2.values - y1.values
    lin = float(np.sum(mech_energy_gradient(grid, model, kin1) * dv))
    gradsq = grid.assemble_scalar(np.sum((kin2.F - kin1.F) ** 2, axis=(-2, -1)))
    gap = M2 - M1 - lin
    if gradsq <= 0.0:
        return 0.0
    return max(0.0, -gap / gradsq)


def semiconvexity_gap(grid, model, y_new: NodalField, y_prev: NodalField,
                      kin_new=None, kin_prev=None):
    """Exact defect DM(y_new)[y_new - y_prev] - (M(y_new) - M(y_prev)).

    This is the quantity the per-step energy identity loses by evaluating
    the stored-energy derivative only at the new state; for convex energies
    it is nonnegative.
    """
    if kin_new is None:
        kin_new = grid.eval_kinematics(y_new)
    if kin_prev is None:
        kin_prev = grid.eval_kinematics(y_prev)
    M_new = main_mechanical_energy(grid, model, kin_new)
    M_prev = main_mechanical_energy(grid, model, kin_prev)
    dv = y_new.values - y_prev.values
    lin = float(np.sum(mech_energy_gradient(grid, model, kin_new) * dv))
    return lin - (M_new - M_prev)
