"""One thermal update of the staggered scheme.

Given the previous state and the freshly updated deformation, minimize
over nodal temperatures

    int (1/tau) (W(grad y_new, theta) - w_prev * theta)
        + (1/2) grad theta . K_prev grad theta
        - xi_reg_prev * theta - dPhiC(grad y_new, theta) : dF/tau  dx
    + int_Gamma (kappa/2) (theta - theta_b)^2 dS

where K_prev and the capped dissipation source are explicit (evaluated
at the previous deformation and temperature) while the thermo-mechanical
coupling uses the implicit antiderivative form, which is what keeps the
temperature nonnegative.  The functional is extended below theta = 0 by
the quadratic Taylor models of its pieces, so the minimization runs
unconstrained and nonnegativity is audited afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import NodalField
from .mech import SolverConfig, StepRejectedError


@dataclass
class HeatIncrement:
    """Frozen data of one thermal step."""

    grid: object
    model: object
    y_prev: NodalField
    y_new: NodalField
    theta_prev: NodalField
    w_prev_qp: np.ndarray            # (ncells, nq)
    tau: float
    eps: float
    theta_b: dict                    # face -> (n_face_cells, nqf), already averaged
    source_override: np.ndarray | None = None   # replaces the capped dissipation
    F_prev: np.ndarray = field(default=None, repr=False)
    F_new: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        g, m = self.grid, self.model
        if self.F_prev is None:
            self.F_prev = g.eval_kinematics(self.y_prev).F
        if self.F_new is None:
            self.F_new = g.eval_kinematics(self.y_new).F
        if np.linalg.det(self.F_prev).min() <= 0 or np.linalg.det(self.F_new).min() <= 0:
            raise ValueError("deformation states must be locally invertible")
        self.theta_prev_qp, _ = g.eval_scalar(self.theta_prev)
        if self.theta_prev_qp.min() < -1e-9:
            raise ValueError("previous temperature must be nonnegative")
        dF = (self.F_new - self.F_prev) / self.tau
        self.rate_qp = dF
        # explicit data: conductivity and capped dissipation at the old state
        th_old = np.maximum(self.theta_prev_qp, 0.0)
        self.K_prev = m.pullback_conductivity(self.F_prev, th_old)
        if self.source_override is not None:
            self.xi_reg_qp = np.asarray(self.source_override, dtype=float)
            self.xi_qp = self.xi_reg_qp.copy()
        else:
            self.xi_qp = m.dissipation_rate(self.F_prev, dF, th_old)
            self.xi_reg_qp = self.xi_qp / (1.0 + self.eps * self.xi_qp)
        # implicit coupling enters through phi1'(F_new) : dF
        self.phi1_new = m.phi1(self.F_new)
        self.cpl_qp = np.sum(m.phi1_grad(self.F_new) * dF, axis=(-2, -1))
        # conduction and Robin parts of the Hessian are state independent
        self._H_fixed = (g.assemble_hessian(1, c4=self.K_prev)
                         + m.kappa * g.assemble_face_hessian(list(g.faces)))


@dataclass
class HeatResult:
    theta_new: NodalField
    w_new_qp: np.ndarray
    theta_new_qp: np.ndarray
    min_theta: float
    clamp_magnitude: float
    functional_value: float
    iterations: int
    residual_norm: float
    residual_vector: np.ndarray


def heat_functional(inc: HeatIncrement, theta: NodalField):
    g, m = inc.grid, inc.model
    th, gth = g.eval_scalar(theta)
    W = m.w_total_ext(inc.phi1_new, th)
    mval, _, _ = m.coupling_factor_ext(th)
    dens = ((W - inc.w_prev_qp * th) / inc.tau
            + 0.5 * np.einsum("cqa,cqab,cqb->cq", gth, inc.K_prev, gth)
            - inc.xi_reg_qp * th
            - mval * inc.cpl_qp)
    value = g.assemble_scalar(dens)
    for name, p in g.faces.items():
        thf = g.eval_face_scalar(name, theta)
        diff = thf - inc.theta_b[name]
        value += 0.5 * m.kappa * float(np.einsum("cq,q->", diff**2, p.weights))
    return value


def heat_gradient(inc: HeatIncrement, theta: NodalField):
    g, m = inc.grid, inc.model
    th, gth = g.eval_scalar(theta)
    w_th = m.enthalpy_ext(inc.phi1_new, th)
    _, m1, _ = m.coupling_factor_ext(th)
    source = (w_th - inc.w_prev_qp) / inc.tau - inc.xi_reg_qp - m1 * inc.cpl_qp
    flux = np.einsum("cqab,cqb->cqa", inc.K_prev, gth)
    r = g.assemble_gradient(1, stress=flux, source=source)
    coef = {}
    for name in g.faces:
        thf = g.eval_face_scalar(name, theta)
        coef[name] = m.kappa * (thf - inc.theta_b[name])
    r = r + g.assemble_face_gradient(list(g.faces), coef, ncomp=1)
    return r


def heat_hessian(inc: HeatIncrement, theta: NodalField):
    g, m = inc.grid, inc.model
    th, _ = g.eval_scalar(theta)
    cv = m.heat_capacity_ext(inc.phi1_new, th)
    _, _, m2 = m.coupling_factor_ext(th)
    c0 = cv / inc.tau - m2 * inc.cpl_qp
    return inc._H_fixed + g.assemble_hessian(1, c0=c0)


def solve_heat(inc: HeatIncrement, config: SolverConfig | None = None) -> HeatResult:
    """Damped Newton from theta_prev; audits and clamps tiny undershoots."""
    cfg = config or SolverConfig()
    g, m = inc.grid, inc.model

    theta = inc.theta_prev.copy()
    J = heat_functional(inc, theta)
    r = heat_gradient(inc, theta)
    rnorm0 = _dual_all(g, r)
    rnorm = rnorm0
    target = max(cfg.tol_heat * rnorm0, cfg.atol_residual)

    iters = 0
    at_floor = False
    while rnorm > target and iters < cfg.max_newton:
        H = heat_hessian(inc, theta).tocsc()
        scale = max(float(np.mean(np.abs(H.diagonal()))), 1e-30)
        accepted = False
        shift = 0.0
        for _ in range(12):
            try:
                lu = splu(H + shift * scale * sp.identity(H.shape[0], format="csc"))
                p = -lu.solve(r)
            except RuntimeError:
                p = None
            if p is not None and np.all(np.isfinite(p)) and r @ p < 0.0:
                slope = float(r @ p)
                in_noise = abs(slope) <= 1e-15 * (1.0 + abs(J))
                if in_noise and shift == 0.0:
                    # decrease is below the roundoff of J; take the raw Newton
                    # step when it does not measurably increase J (monotone
                    # decrease is an invariant of this solve) and stop once
                    # the residual no longer shrinks
                    at_floor = True
                    cand = NodalField(g, theta.values + p)
                    Jc = heat_functional(inc, cand)
                    if np.isfinite(Jc) and Jc <= J:
                        theta, J = cand, Jc
                        accepted = True
                        break
                t = 1.0
                for _ in range(cfg.max_backtracks):
                    cand = NodalField(g, theta.values + t * p)
                    Jc = heat_functional(inc, cand)
                    if np.isfinite(Jc) and Jc <= J + cfg.armijo * t * slope:
                        theta, J = cand, Jc
                        accepted = True
                        break
                    t *= 0.5
            if accepted or at_floor:
                break
            shift = 1e-8 if shift == 0.0 else shift * 100.0
        if at_floor and not accepted:
            break   # converged at the noise floor without moving
        if not accepted:
            raise StepRejectedError(f"thermal line search failed at iteration {iters}")
        r = heat_gradient(inc, theta)
        rnew = _dual_all(g, r)
        iters += 1
        if at_floor and rnew > 0.5 * rnorm:
            rnorm = min(rnew, rnorm)
            break
        rnorm = rnew

    if rnorm > target and not at_floor:
        raise StepRejectedError(
            f"thermal Newton did not converge (residual {rnorm:.3e}, target {target:.3e})")

    th_qp, _ = g.eval_scalar(theta)
    nd = g.ndof_node
    node_vals = theta.values[0::nd]
    min_theta = float(min(th_qp.min(), node_vals.min()))
    clamp = float(max(0.0, -node_vals.min()))
    if clamp > 0.0:
        theta.values[0::nd] = np.maximum(node_vals, 0.0)
        th_qp, _ = g.eval_scalar(theta)
    w_new = m.enthalpy_ext(inc.phi1_new, th_qp)
    return HeatResult(theta_new=theta, w_new_qp=w_new, theta_new_qp=th_qp,
                      min_theta=min_theta, clamp_magnitude=clamp,
                      functional_value=J, iterations=iters,
                      residual_norm=rnorm, residual_vector=r)


def _dual_all(grid, r):
    """Scalar (H^1)* norm over all dofs (the thermal field has no Dirichlet part)."""
    if not np.any(r):
        return 0.0
    key = ("scalar_all",)
    if key not in grid._gram_cache:
        grid._gram_cache[key] = splu(grid.h1_gram(1).tocsc())
    lu = grid._gram_cache[key]
    return float(np.sqrt(abs(r @ lu.solve(r))))


def robin_flux(inc: HeatIncrement, theta: NodalField):
    """Boundary heat outflow int_Gamma kappa (theta - theta_b) dS."""
    g, m = inc.grid, inc.model
    total = 0.0
    for name, p in g.faces.items():
        thf = g.eval_face_scalar(name, theta)
        total += m.kappa * float(np.einsum("cq,q->", thf - inc.theta_b[name], p.weights))
    return total


def uniform_theta_b(grid, value):
    """Constant boundary datum in the per-face layout the increment expects."""
    return {name: np.full((p.sdofs.shape[0], p.weights.size), float(value))
            for name, p in grid.faces.items()}
