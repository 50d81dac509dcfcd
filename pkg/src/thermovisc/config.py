"""Run-configuration parsing and validation.

The config format is an INI document with sections [grid], [material],
[loads], [time], [solver], [output].  Parsing validates everything it
can and reports ALL violations at once, naming unknown keys together
with the nearest valid one.
"""

from __future__ import annotations

import difflib
from configparser import ConfigParser
from dataclasses import dataclass, field, fields as dc_fields

from .grid import FACE_NAMES, StructuredGrid
from .materials import MaterialModel
from .mech import SolverConfig
from .presets import DEFAULT_REFINEMENT, PRESETS


class ConfigError(ValueError):
    """Carries the full list of violations, not just the first."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


_SCHEMA = {
    "grid": {"extents": "int_list", "lengths": "float_list", "dirichlet": "str_list"},
    "material": {k: "float" for k in
                 ("c1", "c2", "s", "q", "p", "h_coef", "nu", "c", "alpha",
                  "phi1_amp", "phi1_radius", "k_bar", "kappa")},
    "loads": {"scenario": "str", "amplitude": "float", "t_pulse": "float",
              "theta_b": "float", "theta0": "float"},
    "time": {"T": "float", "tau": "float", "eps": "float"},
    "solver": {"tol_mech": "float", "tol_heat": "float", "tol_pos": "float",
               "max_newton": "int", "max_backtracks": "int", "det_floor": "float",
               "max_step_halvings": "int", "isothermal": "bool",
               "korn_every": "int", "hk_every": "int", "checkpoint_every": "int"},
    "output": {"directory": "str", "seed": "int", "diagnostics": "str",
               "tau_list": "float_list", "eps_list": "float_list"},
}

_DEFAULTS = {
    "grid": {"extents": [16, 16], "lengths": [1.0, 1.0], "dirichlet": ["y0"]},
    "loads": {"scenario": "steady", "amplitude": 0.15, "t_pulse": 0.5,
              "theta_b": 1.0, "theta0": 1.0},
    "time": {"T": 1.0, "tau": 0.05, "eps": 0.01},
    "output": {"directory": "out", "seed": 1234, "diagnostics": "full",
               "tau_list": [], "eps_list": []},
}


def _parse_value(kind, raw, where, errors):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "int_list":
            return [int(v) for v in raw.split()]
        if kind == "float_list":
            return [float(v) for v in raw.split()]
        if kind == "str_list":
            return raw.split()
        return raw.strip()
    except ValueError:
        errors.append(f"{where}: cannot parse {raw!r} as {kind}")
        return None


@dataclass
class RunConfig:
    """Fully validated run description."""

    extents: list
    lengths: list
    dirichlet: list
    material: MaterialModel
    scenario: str
    amplitude: float
    t_pulse: float
    theta_b: float
    theta0: float
    T: float
    tau: float
    eps: float
    solver: SolverConfig
    isothermal: bool
    directory: str
    seed: int
    diagnostics: str
    tau_list: list = field(default_factory=list)
    eps_list: list = field(default_factory=list)

    def build_grid(self):
        return StructuredGrid(tuple(self.extents), tuple(self.lengths),
                              dirichlet_faces=tuple(self.dirichlet))

    def build_scenario(self):
        grid = self.build_grid()
        maker = PRESETS[self.scenario]
        kwargs = {"grid": grid, "T": self.T}
        if self.scenario in ("shear_pulse", "press_pulse", "refine_tau", "refine_eps"):
            kwargs.update(model=self.material, amplitude=self.amplitude,
                          t_pulse=self.t_pulse, theta0=self.theta0,
                          theta_b=self.theta_b)
        elif self.scenario == "insulated_pulse":
            kwargs.update(amplitude=self.amplitude, t_pulse=self.t_pulse,
                          theta0=self.theta0, kappa=self.material.kappa)
        elif self.scenario == "isothermal_creep":
            kwargs.update(model=self.material, amplitude=self.amplitude,
                          theta0=self.theta0)
        else:
            kwargs.update(model=self.material, theta0=self.theta0)
        sc = maker(**kwargs)
        if self.isothermal and not sc.isothermal:
            sc.isothermal = True
        return sc

    def serialize(self) -> str:
        m = self.material
        lines = [
            "[grid]",
            "extents = " + " ".join(str(v) for v in self.extents),
            "lengths = " + " ".join(f"{v:.17g}" for v in self.lengths),
            "dirichlet = " + " ".join(self.dirichlet),
            "",
            "[material]",
        ]
        for name in ("c1", "c2", "s", "q", "p", "h_coef", "nu", "c", "alpha",
                     "phi1_amp", "phi1_radius", "k_bar", "kappa"):
            lines.append(f"{name} = {getattr(m, name):.17g}")
        lines += [
            "",
            "[loads]",
            f"scenario = {self.scenario}",
            f"amplitude = {self.amplitude:.17g}",
            f"t_pulse = {self.t_pulse:.17g}",
            f"theta_b = {self.theta_b:.17g}",
            f"theta0 = {self.theta0:.17g}",
            "",
            "[time]",
            f"T = {self.T:.17g}",
            f"tau = {self.tau:.17g}",
            f"eps = {self.eps:.17g}",
            "",
            "[solver]",
            f"tol_mech = {self.solver.tol_mech:.17g}",
            f"tol_heat = {self.solver.tol_heat:.17g}",
            f"tol_pos = {self.solver.tol_pos:.17g}",
            f"max_newton = {self.solver.max_newton}",
            f"max_backtracks = {self.solver.max_backtracks}",
            f"det_floor = {self.solver.det_floor:.17g}",
            f"max_step_halvings = {self.solver.max_step_halvings}",
            f"isothermal = {str(self.isothermal).lower()}",
            f"korn_every = {self.solver.korn_every}",
            f"hk_every = {self.solver.hk_every}",
            f"checkpoint_every = {self.solver.checkpoint_every}",
            "",
            "[output]",
            f"directory = {self.directory}",
            f"seed = {self.seed}",
            f"diagnostics = {self.diagnostics}",
            "tau_list = " + " ".join(f"{v:.17g}" for v in self.tau_list),
            "eps_list = " + " ".join(f"{v:.17g}" for v in self.eps_list),
            "",
        ]
        return "\n".join(lines)


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a config document; raises ConfigError with
    every violation found."""
    cp = ConfigParser()
    cp.optionxform = str   # keys are case sensitive ([time] T)
    cp.read_string(text)
    errors = []
    values = {}

    for section in cp.sections():
        if section not in _SCHEMA:
            close = difflib.get_close_matches(section, _SCHEMA, n=1)
            hint = f" (did you mean [{close[0]}]?)" if close else ""
            errors.append(f"unknown section [{section}]{hint}")
            continue
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                close = difflib.get_close_matches(key, _SCHEMA[section], n=1)
                hint = f" (nearest valid key: {close[0]})" if close else ""
                errors.append(f"unknown key '{key}' in [{section}]{hint}")
                continue
            v = _parse_value(_SCHEMA[section][key], raw, f"[{section}] {key}", errors)
            if v is not None:
                values[(section, key)] = v

    def get(section, key, default=None):
        if (section, key) in values:
            return values[(section, key)]
        return _DEFAULTS.get(section, {}).get(key, default)

    mat_kwargs = {}
    d = len(get("grid", "extents"))
    for key in _SCHEMA["material"]:
        if ("material", key) in values:
            mat_kwargs[key] = values[("material", key)]
    material = None
    try:
        material = MaterialModel(d=d, **mat_kwargs)
    except ValueError as exc:
        errors.extend(str(exc).split("; "))
        probe = MaterialModel.__new__(MaterialModel)
        object.__setattr__(probe, "d", d)
        for f in dc_fields(MaterialModel):
            if f.name != "d":
                object.__setattr__(probe, f.name, mat_kwargs.get(f.name, f.default))
        # keep going with the probe so later checks still run
        material = probe

    extents = get("grid", "extents")
    lengths = get("grid", "lengths")
    dirichlet = get("grid", "dirichlet")
    if len(extents) not in (2, 3):
        errors.append(f"[grid] extents must have 2 or 3 entries (got {len(extents)})")
    elif len(lengths) != len(extents):
        errors.append("[grid] lengths must match extents in length")
    else:
        if any(n < 2 for n in extents):
            errors.append("[grid] extents must be at least 2 cells per axis")
        if any(L <= 0 for L in lengths):
            errors.append("[grid] lengths must be positive")
        valid = FACE_NAMES[len(extents)]
        for f in dirichlet:
            if f not in valid:
                close = difflib.get_close_matches(f, valid, n=1)
                hint = f" (nearest: {close[0]})" if close else ""
                errors.append(f"[grid] unknown face '{f}'{hint}")
        if not dirichlet:
            errors.append("[grid] the fixed boundary part must be nonempty")

    scenario = get("loads", "scenario")
    if scenario not in PRESETS:
        close = difflib.get_close_matches(scenario, PRESETS, n=1)
        hint = f" (nearest: {close[0]})" if close else ""
        errors.append(f"[loads] unknown scenario '{scenario}'{hint}")
    for key in ("theta_b", "theta0"):
        if get("loads", key) < 0:
            errors.append(f"[loads] {key} must be nonnegative")

    T, tau, eps = get("time", "T"), get("time", "tau"), get("time", "eps")
    if T <= 0:
        errors.append(f"[time] T must be positive (got {T:g})")
    if tau <= 0:
        errors.append(f"[time] tau must be positive (got {tau:g})")
    elif T > 0 and abs(round(T / tau) * tau - T) > 1e-9 * T:
        errors.append(f"[time] T/tau must be an integer (T={T:g}, tau={tau:g})")
    if eps < 0:
        errors.append(f"[time] eps must be nonnegative (got {eps:g})")

    sol_kwargs = {}
    for key in ("tol_mech", "tol_heat", "tol_pos", "max_newton", "max_backtracks",
                "det_floor", "max_step_halvings", "korn_every", "hk_every",
                "checkpoint_every"):
        if ("solver", key) in values:
            sol_kwargs[key] = values[("solver", key)]
    solver = SolverConfig(**sol_kwargs)
    for key in ("tol_mech", "tol_heat", "tol_pos"):
        if getattr(solver, key) <= 0:
            errors.append(f"[solver] {key} must be positive")
    if not 0 < solver.det_floor < 1:
        errors.append(f"[solver] det_floor must lie in (0, 1) (got {solver.det_floor:g})")

    diagnostics = get("output", "diagnostics")
    if diagnostics not in ("full", "light"):
        errors.append(f"[output] diagnostics must be 'full' or 'light' (got '{diagnostics}')")
    if diagnostics == "light":
        solver.korn_every = 0
        solver.hk_every = 0

    if errors:
        raise ConfigError(errors)

    tau_list = get("output", "tau_list")
    eps_list = get("output", "eps_list")
    if scenario in DEFAULT_REFINEMENT:
        tau_list = tau_list or DEFAULT_REFINEMENT[scenario]["tau_list"]
        eps_list = eps_list or DEFAULT_REFINEMENT[scenario]["eps_list"]

    return RunConfig(
        extents=extents, lengths=lengths, dirichlet=dirichlet, material=material,
        scenario=scenario, amplitude=get("loads", "amplitude"),
        t_pulse=get("loads", "t_pulse"), theta_b=get("loads", "theta_b"),
        theta0=get("loads", "theta0"), T=T, tau=tau, eps=eps, solver=solver,
        isothermal=bool(get("solver", "isothermal", scenario == "isothermal_creep")),
        directory=get("output", "directory"), seed=get("output", "seed"),
        diagnostics=diagnostics, tau_list=tau_list, eps_list=eps_list)
