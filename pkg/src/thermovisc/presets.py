"""Named scenario presets.

steady           load-free equilibrium audit (identity map, uniform data)
shear_pulse      smooth shear traction pulse on the top face, then hold
isothermal_creep constant-temperature creep under a small dead traction
insulated_pulse  shear pulse with a near-zero heat-transfer coefficient,
                 for the entropy-monotonicity audit
"""

from __future__ import annotations

import numpy as np

from .grid import StructuredGrid
from .materials import MaterialModel
from .scheme import Scenario


def _pulse(t, t_pulse):
    return np.sin(np.pi * t / t_pulse) ** 2 if 0.0 < t < t_pulse else 0.0


def make_grid(extents=(16, 16), lengths=(1.0, 1.0), dirichlet=("y0",)):
    return StructuredGrid(extents, lengths, dirichlet_faces=dirichlet)


def steady(grid=None, model=None, T=1.0, theta0=1.0):
    grid = grid or make_grid()
    model = model or MaterialModel(d=grid.d)
    return Scenario(name="steady", grid=grid, model=model, T=T,
                    theta_b=theta0, theta0=theta0)


def shear_pulse(grid=None, model=None, T=1.0, amplitude=0.15, t_pulse=0.5,
                theta0=1.0, theta_b=None):
    """Tangential traction on the face opposite the clamped one."""
    grid = grid or make_grid()
    model = model or MaterialModel(d=grid.d)
    top = "y1" if "y0" in grid.dirichlet_faces else "x1"
    shear_dir = 0 if top[0] == "y" else 1

    def traction(t, face, X):
        f = np.zeros(X.shape[:2] + (grid.d,))
        if face == top:
            f[..., shear_dir] = amplitude * _pulse(t, t_pulse)
        return f

    return Scenario(name="shear_pulse", grid=grid, model=model, T=T,
                    traction=traction, theta_b=theta_b if theta_b is not None else theta0,
                    theta0=theta0)


def press_pulse(grid=None, model=None, T=1.0, amplitude=0.15, t_pulse=0.5,
                theta0=1.0, theta_b=None):
    """Normal traction pulse on the face opposite the clamped one.

    The induced rates are strain dominated (little rigid spin), which makes
    it the right scenario for isolating the linear-viscosity contribution
    against the frame-indifferent dissipation in eps-refinement studies.
    """
    grid = grid or make_grid()
    model = model or MaterialModel(d=grid.d)
    top = "y1" if "y0" in grid.dirichlet_faces else "x1"
    normal_dir = 1 if top[0] == "y" else 0

    def traction(t, face, X):
        f = np.zeros(X.shape[:2] + (grid.d,))
        if face == top:
            f[..., normal_dir] = -amplitude * _pulse(t, t_pulse)
        return f

    return Scenario(name="press_pulse", grid=grid, model=model, T=T,
                    traction=traction,
                    theta_b=theta_b if theta_b is not None else theta0,
                    theta0=theta0)


def insulated_pulse(grid=None, T=1.0, amplitude=0.15, t_pulse=0.5, theta0=1.0,
                    kappa=1e-6):
    grid = grid or make_grid()
    model = MaterialModel(d=grid.d, kappa=kappa)
    sc = shear_pulse(grid=grid, model=model, T=T, amplitude=amplitude,
                     t_pulse=t_pulse, theta0=theta0)
    sc.name = "insulated_pulse"
    return sc


def isothermal_creep(grid=None, model=None, T=1.0, amplitude=0.05, theta0=1.0):
    """Constant small dead traction at fixed temperature (eps = 0 intended)."""
    grid = grid or make_grid()
    model = model or MaterialModel(d=grid.d)
    top = "y1" if "y0" in grid.dirichlet_faces else "x1"
    shear_dir = 0 if top[0] == "y" else 1

    def traction(t, face, X):
        f = np.zeros(X.shape[:2] + (grid.d,))
        if face == top:
            f[..., shear_dir] = amplitude
        return f

    return Scenario(name="isothermal_creep", grid=grid, model=model, T=T,
                    traction=traction, theta0=theta0, theta_b=theta0,
                    isothermal=True)


def refine_tau(T=0.4, t_pulse=0.25, **kwargs):
    """Shear pulse sized for tau-halving studies (see DEFAULT_REFINEMENT)."""
    sc = shear_pulse(T=T, t_pulse=t_pulse, **kwargs)
    sc.name = "refine_tau"
    return sc


def refine_eps(T=0.4, t_pulse=0.25, **kwargs):
    """Normal-load pulse sized for eps-refinement studies.

    Strain-dominated rates keep the linear-viscosity contribution cleanly
    separated from the frame-indifferent dissipation.
    """
    sc = press_pulse(T=T, t_pulse=t_pulse, **kwargs)
    sc.name = "refine_eps"
    return sc


PRESETS = {
    "steady": steady,
    "shear_pulse": shear_pulse,
    "press_pulse": press_pulse,
    "insulated_pulse": insulated_pulse,
    "isothermal_creep": isothermal_creep,
    "refine_tau": refine_tau,
    "refine_eps": refine_eps,
}

# list defaults used when a refine_* scenario is selected without explicit lists
DEFAULT_REFINEMENT = {
    "refine_tau": {"tau_list": [0.1, 0.05, 0.025, 0.0125], "eps_list": [0.01]},
    "refine_eps": {"tau_list": [0.025], "eps_list": [0.1, 0.01, 0.001]},
}
