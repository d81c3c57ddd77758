"""Steady counterflow-free flamelet solver used as a synthetic data source.

Solves, on a uniform 1-D grid with Dirichlet ends (air at x=0, fuel at x=L),

    d/dx(rho D_i dY_i/dx) + Sdot_i = 0
    d/dx(kappa dT/dx)     + Se     = 0,     Se = -sum_i Sdot_i h0f_i

by pseudo-transient continuation: diffusion is implicit (one tridiagonal
solve per variable group), chemistry is explicit. Reactions are bimolecular
Arrhenius steps ``omega = A rho^2 Y_a Y_b exp(-Ta/T)``. A strain sweep
shrinks the domain by a constant factor until the flame goes out.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lapack

from .dataset import FlameletDataset, save_dataset
from .errors import ConfigError, SolverError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Reaction:
    A: float
    Ta: float
    reactants: tuple[str, str]
    # net mass produced per unit rate, one entry per species name
    coefficients: dict[str, float]

    @classmethod
    def one_step(cls, A, Ta, nu, fuel="F", oxidizer="O", product="P"):
        return cls(A, Ta, (fuel, oxidizer), {fuel: -1.0, oxidizer: -nu, product: 1.0 + nu})


@dataclass(frozen=True, eq=False)
class Mechanism:
    species_names: tuple[str, ...]
    h0f: np.ndarray
    D: np.ndarray
    rho: float
    kappa: float
    cp: float
    reactions: tuple[Reaction, ...]
    fuel: str = "F"
    oxidizer: str = "O"
    zmix_weights: np.ndarray | None = None

    def __post_init__(self):
        names = tuple(self.species_names)
        object.__setattr__(self, "species_names", names)
        s = len(names)
        if s < 3:
            raise ConfigError(f"mechanism needs at least 3 species, got {s}")
        h0f = np.asarray(self.h0f, dtype=float)
        D = np.asarray(self.D, dtype=float)
        if h0f.shape != (s,) or D.shape != (s,):
            raise ConfigError("h0f and diffusivity need one entry per species")
        if not (D > 0).all() or min(self.rho, self.kappa, self.cp) <= 0:
            raise ConfigError("diffusivities, rho, kappa and cp must be strictly positive")
        object.__setattr__(self, "h0f", h0f)
        object.__setattr__(self, "D", D)
        for name in (self.fuel, self.oxidizer):
            if name not in names:
                raise ConfigError(f"species {name!r} is not in the mechanism")
        if not self.reactions:
            raise ConfigError("mechanism has no reactions")
        for r in self.reactions:
            if r.A < 0 or r.Ta < 0:
                raise ConfigError("Arrhenius A and Ta must be non-negative")
            unknown = (set(r.coefficients) | set(r.reactants)) - set(names)
            if unknown:
                raise ConfigError(f"reaction refers to unknown species {sorted(unknown)}")
            if abs(sum(r.coefficients.values())) > 1e-12 * max(1.0, max(abs(c) for c in r.coefficients.values())):
                raise ConfigError("reaction coefficients must conserve mass (sum to zero)")
        if self.zmix_weights is None:
            if len(self.reactions) != 1:
                raise ConfigError("zmix_weights are required for multi-step mechanisms")
            nu = -self.reactions[0].coefficients[self.oxidizer]
            if nu <= 0:
                raise ConfigError("stoichiometric ratio nu must be positive")
            w = np.zeros(s)
            w[names.index(self.fuel)] = 1.0
            w[names.index(self.oxidizer)] = -1.0 / nu
        else:
            w = np.asarray(self.zmix_weights, dtype=float)
            if w.shape != (s,):
                raise ConfigError("zmix_weights need one entry per species")
        if np.abs(self.stoichiometry @ w).max() > 1e-9 * max(1.0, np.abs(w).max()):
            raise ConfigError("zmix_weights are not conserved by every reaction")
        object.__setattr__(self, "zmix_weights", w)

    @property
    def s(self) -> int:
        return len(self.species_names)

    @property
    def stoichiometry(self) -> np.ndarray:
        """(reactions, species) matrix of net mass coefficients."""
        out = np.zeros((len(self.reactions), self.s))
        for k, r in enumerate(self.reactions):
            for name, c in r.coefficients.items():
                out[k, self.species_names.index(name)] = c
        return out

    def index(self, name: str) -> int:
        return self.species_names.index(name)

    def with_rate_scale(self, factor: float) -> "Mechanism":
        reactions = tuple(Reaction(r.A * factor, r.Ta, r.reactants, dict(r.coefficients)) for r in self.reactions)
        return Mechanism(self.species_names, self.h0f, self.D, self.rho, self.kappa, self.cp,
                         reactions, self.fuel, self.oxidizer, self.zmix_weights)


@dataclass(frozen=True)
class GeneratorConfig:
    grid_points: int = 100
    initial_length: float = 1.0
    shrink_factor: float = 0.99
    max_flames: int = 100
    fuel_Y: dict = field(default_factory=lambda: {"F": 0.2, "N": 0.8})
    air_Y: dict = field(default_factory=lambda: {"O": 0.8, "N": 0.2})
    T_fuel: float = 300.0
    T_air: float = 300.0
    pseudo_time_step: float = 1e-5
    max_time_step: float = 1.0
    steady_tolerance: float = 1e-8
    max_iterations: int = 500_000
    ignition_temperature: float = 2000.0
    extinction_ratio: float = 1e-6

    def __post_init__(self):
        if self.grid_points < 3:
            raise ConfigError("grid_points must be at least 3")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ConfigError("shrink_factor must lie in (0, 1)")
        if self.initial_length <= 0 or self.max_flames < 1:
            raise ConfigError("initial_length and max_flames must be positive")
        if min(self.pseudo_time_step, self.max_time_step, self.steady_tolerance) <= 0:
            raise ConfigError("time steps and tolerances must be positive")
        if min(self.T_fuel, self.T_air) <= 0:
            raise ConfigError("boundary temperatures must be positive")

    def validate_for_sweep(self):
        if self.grid_points < 8:
            raise ConfigError("a strain sweep needs grid_points >= 8")

    def length(self, k: int) -> float:
        return self.initial_length * self.shrink_factor**k


@dataclass(frozen=True, eq=False)
class FlameletSolution:
    length: float
    x: np.ndarray
    Y: np.ndarray  # (N, s)
    Sdot: np.ndarray  # (N, s)
    Se: np.ndarray
    T: np.ndarray
    Zmix: np.ndarray
    residual: float
    iterations: int
    extinguished: bool

    @property
    def peak_source_energy(self) -> float:
        return float(np.abs(self.Se).max())


# ---------------------------------------------------------------------------
# chemistry


def reaction_rates(mech: Mechanism, Y: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Rates omega_r at every point; ``Y`` is (s, N), result is (R, N).

    Mass fractions are clipped at zero inside the rate law only.
    """
    out = np.empty((len(mech.reactions), T.shape[0]))
    rho2 = mech.rho * mech.rho
    for k, r in enumerate(mech.reactions):
        ya = np.maximum(Y[mech.index(r.reactants[0])], 0.0)
        yb = np.maximum(Y[mech.index(r.reactants[1])], 0.0)
        out[k] = r.A * rho2 * ya * yb * np.exp(-r.Ta / T)
    return out


def source_energy(Sdot: np.ndarray, h0f: np.ndarray) -> np.ndarray:
    """-sum_i Sdot_i h0f_i for row-major ``Sdot`` (N, s), summed in species order."""
    acc = np.zeros(Sdot.shape[0])
    for i in range(Sdot.shape[1]):
        acc = acc + Sdot[:, i] * h0f[i]
    return 0.0 - acc


def mixture_fraction(mech: Mechanism, Y: np.ndarray, Y_air: np.ndarray, Y_fuel: np.ndarray) -> np.ndarray:
    """Normalized conserved scalar, 0 on the air side and 1 on the fuel side (``Y`` is (N, s))."""
    w = mech.zmix_weights
    b_air = float(Y_air @ w)
    b_fuel = float(Y_fuel @ w)
    if b_fuel == b_air:
        raise ConfigError("air and fuel streams have the same conserved scalar; Zmix undefined")
    z = (Y @ w - b_air) / (b_fuel - b_air)
    return np.clip(z, 0.0, 1.0)


def _stream(mech: Mechanism, comp: dict) -> np.ndarray:
    y = np.zeros(mech.s)
    for name, value in comp.items():
        if name not in mech.species_names:
            raise ConfigError(f"boundary composition names unknown species {name!r}")
        y[mech.index(name)] = float(value)
    if (y < 0).any() or abs(y.sum() - 1.0) > 1e-12:
        raise ConfigError(f"boundary composition {comp} must be non-negative and sum to 1")
    return y


# ---------------------------------------------------------------------------
# solver


class _Problem:
    """Discretization data for one domain length."""

    def __init__(self, mech: Mechanism, cfg: GeneratorConfig, length: float):
        self.mech = mech
        self.cfg = cfg
        N = cfg.grid_points
        self.N = N
        self.x = np.linspace(0.0, length, N)
        self.dx = length / (N - 1)
        self.Y_air = _stream(mech, cfg.air_Y)
        self.Y_fuel = _stream(mech, cfg.fuel_Y)
        s = mech.s
        # per-variable diffusion coefficient and capacity; species first, T last
        self.coef = np.concatenate([mech.rho * mech.D, [mech.kappa]])
        self.capacity = np.concatenate([np.full(s, mech.rho), [mech.rho * mech.cp]])
        self.alpha = self.coef / self.capacity
        self.left = np.concatenate([self.Y_air, [cfg.T_air]])
        self.right = np.concatenate([self.Y_fuel, [cfg.T_fuel]])
        self.T_ref = max(cfg.T_air, cfg.T_fuel)
        self.unit = np.concatenate([np.ones(s), [self.T_ref]])
        self.stoich = mech.stoichiometry
        groups: dict[float, list[int]] = {}
        for v, a in enumerate(self.alpha):
            groups.setdefault(float(a), []).append(v)
        self.groups = [(a, np.array(vs)) for a, vs in groups.items()]

    def linear_profile(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.N)
        return self.left[:, None] * (1.0 - t) + self.right[:, None] * t

    def sources(self, U: np.ndarray):
        """Per-variable chemical sources (s+1, N) plus the pieces used to build them."""
        s = self.mech.s
        omega = reaction_rates(self.mech, U[:s], U[s])
        sdot = self.stoich.T @ omega
        se = source_energy(sdot.T, self.mech.h0f)
        return np.vstack([sdot, se[None, :]]), omega

    def residual(self, U: np.ndarray, src: np.ndarray) -> float:
        """Max steady-equation imbalance in stencil units (mass fraction / T_ref)."""
        lap = U[:, :-2] - 2.0 * U[:, 1:-1] + U[:, 2:]
        r = lap + src[:, 1:-1] * (self.dx * self.dx) / self.coef[:, None]
        return float(np.abs(r / self.unit[:, None]).max()) if r.size else 0.0

    def stiffness(self, U: np.ndarray, omega: np.ndarray) -> float:
        """Largest consumption eigenvalue estimate of the chemistry, per unit time."""
        mech = self.mech
        lam = 0.0
        for k, r in enumerate(mech.reactions):
            ia, ib = mech.index(r.reactants[0]), mech.index(r.reactants[1])
            ya = np.maximum(U[ia], 1e-300)
            yb = np.maximum(U[ib], 1e-300)
            rate = omega[k]
            ca = -r.coefficients.get(r.reactants[0], 0.0)
            cb = -r.coefficients.get(r.reactants[1], 0.0)
            lam = max(lam, float((ca * rate / ya).max()) / mech.rho, float((cb * rate / yb).max()) / mech.rho)
        return lam

    def step(self, U: np.ndarray, src: np.ndarray, dt: float) -> np.ndarray:
        M = self.N - 2
        dx2 = self.dx * self.dx
        out = U.copy()
        for a, vs in self.groups:
            r = a / dx2
            diag = np.full(M, 1.0 / dt + 2.0 * r)
            off = np.full(M - 1, -r)
            rhs = (U[vs, 1:-1] / dt + src[vs, 1:-1] / self.capacity[vs, None]).T.copy()
            rhs[0] += r * self.left[vs]
            rhs[-1] += r * self.right[vs]
            if M == 1:  # dgtsv rejects empty off-diagonals
                out[vs, 1] = rhs[0] / diag[0]
                continue
            *_, sol, info = lapack.dgtsv(off, diag, off, rhs)
            if info != 0:
                raise SolverError(f"tridiagonal solve failed (info={info})")
            out[vs, 1:-1] = sol.T
        return out


def solve_steady_flamelet(
    mech: Mechanism,
    cfg: GeneratorConfig,
    length: float,
    initial: np.ndarray | None = None,
    reference_peak: float | None = None,
) -> FlameletSolution:
    """Relax one flamelet of the given domain length to steady state.

    ``initial`` is an (s+1, N) state (species rows then temperature); by
    default a linear mixing profile with a hot spot at the stoichiometric
    point. The result is flagged ``extinguished`` when its peak |Se| is below
    ``cfg.extinction_ratio * reference_peak``; without a reference, the peak
    of the starting state is used.
    """
    prob = _Problem(mech, cfg, length)
    s = mech.s
    if initial is None:
        U = prob.linear_profile()
        if any(r.A > 0 for r in mech.reactions) and cfg.ignition_temperature > 0:
            z = mixture_fraction(mech, U[:s].T, prob.Y_air, prob.Y_fuel)
            z_st = _stoichiometric_z(mech, prob)
            bump = np.exp(-(((z - z_st) / 0.1) ** 2))
            U[s] = np.maximum(U[s], U[s] + (cfg.ignition_temperature - U[s]) * bump)
            U[s, 0], U[s, -1] = prob.left[s], prob.right[s]
    else:
        U = np.array(initial, dtype=float, copy=True)
        if U.shape != (s + 1, prob.N):
            raise SolverError(f"initial state has shape {U.shape}, expected {(s + 1, prob.N)}")
        U[:, 0], U[:, -1] = prob.left, prob.right

    src, omega = prob.sources(U)
    if reference_peak is None:
        reference_peak = float(np.abs(src[s]).max())

    dt = cfg.pseudo_time_step
    dt_cap = cfg.max_time_step
    res = prob.residual(U, src)
    it = 0
    while res > cfg.steady_tolerance:
        if it >= cfg.max_iterations:
            raise SolverError(
                f"no steady state for length {length:.6g} after {it} iterations (residual {res:.3e})",
                residual=res,
            )
        lam = prob.stiffness(U, omega)
        h = min(dt, dt_cap, 0.5 / lam if lam > 0 else dt_cap)
        U_new = prob.step(U, src, h)
        change = np.abs(U_new - U) / prob.unit[:, None]
        if change.max() > 0.05 and h > 1e-14:
            dt = 0.5 * h
            continue
        U = U_new
        src, omega = prob.sources(U)
        res = prob.residual(U, src)
        dt = min(1.2 * h, dt_cap)
        it += 1

    Y = U[:s].T.copy()
    Y = np.clip(Y, 0.0, 1.0)
    Y /= Y.sum(1, keepdims=True)
    # sources are reported for the state the solver converged on
    sdot = src[:s].T.copy()
    se = source_energy(sdot, mech.h0f)
    peak = float(np.abs(se).max())
    extinguished = peak < cfg.extinction_ratio * reference_peak if reference_peak > 0 else True
    return FlameletSolution(
        length=length,
        x=prob.x,
        Y=Y,
        Sdot=sdot,
        Se=se,
        T=U[s].copy(),
        Zmix=mixture_fraction(mech, Y, prob.Y_air, prob.Y_fuel),
        residual=res,
        iterations=it,
        extinguished=extinguished,
    )


def _stoichiometric_z(mech: Mechanism, prob: _Problem) -> float:
    """Mixture fraction where the conserved scalar vanishes (fuel and oxidizer in balance).

    Falls back to 0.5 when that point is not inside (0, 1).
    """
    w = mech.zmix_weights
    b_air = float(prob.Y_air @ w)
    b_fuel = float(prob.Y_fuel @ w)
    if b_fuel == b_air:
        return 0.5
    z = -b_air / (b_fuel - b_air)
    return z if 0.0 < z < 1.0 else 0.5


def flame_key(mech: Mechanism, length: float) -> float:
    """Strain-rate surrogate D_fuel / L**2."""
    return float(mech.D[mech.index(mech.fuel)] / (length * length))


@dataclass
class SweepResult:
    dataset: FlameletDataset
    solutions: list[FlameletSolution]
    extinction_index: int | None


def generate(mech: Mechanism, cfg: GeneratorConfig, out_path=None) -> SweepResult:
    """Strain sweep: flames at lengths L0 * shrink**k until extinction or ``max_flames``.

    The first extinguished flame is kept in the output. Raises
    :class:`ConfigError` if the very first flame does not burn.
    """
    cfg.validate_for_sweep()
    solutions: list[FlameletSolution] = []
    reference = None
    state = None
    extinct_at = None
    for k in range(cfg.max_flames):
        length = cfg.length(k)
        sol = solve_steady_flamelet(mech, cfg, length, initial=state, reference_peak=reference)
        if k == 0:
            if sol.extinguished:
                raise ConfigError("no burning branch: the first flame extinguished")
            reference = sol.peak_source_energy
        log.info("flame %d: L=%.6g iterations=%d peak|Se|=%.4g", k, length, sol.iterations, sol.peak_source_energy)
        solutions.append(sol)
        if sol.extinguished:
            extinct_at = k
            break
        state = np.vstack([sol.Y.T, sol.T[None, :]])

    names = mech.species_names
    Y = np.vstack([sol.Y for sol in solutions])
    Sdot = np.vstack([sol.Sdot for sol in solutions])
    ds = FlameletDataset(
        species_names=names,
        Y=Y,
        Sdot=Sdot,
        Se=np.concatenate([sol.Se for sol in solutions]),
        Zmix=np.concatenate([sol.Zmix for sol in solutions]),
        flame_key=np.concatenate([np.full(cfg.grid_points, flame_key(mech, sol.length)) for sol in solutions]),
        x_pos=np.concatenate([sol.x for sol in solutions]),
    )
    if out_path is not None:
        save_dataset(ds, out_path)
    return SweepResult(ds, solutions, extinct_at)


# ---------------------------------------------------------------------------
# config files


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _species_map(text: str) -> dict[str, float]:
    out = {}
    for item in text.replace(",", " ").split():
        name, _, value = item.partition(":")
        if not value:
            raise ConfigError(f"expected name:value, got {item!r}")
        out[name] = float(value)
    return out


def _read(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return cp


def load_mechanism(path) -> Mechanism:
    """Read a mechanism file.

    ``[mechanism]`` holds species, h0f, diffusivity, rho, kappa, cp, fuel,
    oxidizer and optional zmix_weights. Each ``[reaction...]`` section is
    either the one-step shorthand (A, Ta, nu, product) or the general form
    (A, Ta, reactants, coefficients).
    """
    cp = _read(path)
    try:
        sec = cp["mechanism"]
        species = tuple(sec["species"].replace(",", " ").split())
        fuel = sec.get("fuel", "F")
        oxidizer = sec.get("oxidizer", "O")
        reactions = []
        for name in cp.sections():
            if not name.startswith("reaction"):
                continue
            r = cp[name]
            if "nu" in r:
                reactions.append(Reaction.one_step(float(r["A"]), float(r["Ta"]), float(r["nu"]),
                                                   fuel, oxidizer, r.get("product", "P")))
            else:
                reactants = tuple(r["reactants"].replace(",", " ").split())
                if len(reactants) != 2:
                    raise ConfigError(f"[{name}] needs exactly two reactants")
                reactions.append(Reaction(float(r["A"]), float(r["Ta"]), reactants, _species_map(r["coefficients"])))
        weights = None
        if "zmix_weights" in sec:
            wmap = _species_map(sec["zmix_weights"])
            weights = np.array([wmap.get(s, 0.0) for s in species])
        return Mechanism(
            species_names=species,
            h0f=_floats(sec["h0f"]),
            D=_floats(sec["diffusivity"]),
            rho=sec.getfloat("rho"),
            kappa=sec.getfloat("kappa"),
            cp=sec.getfloat("cp"),
            reactions=tuple(reactions),
            fuel=fuel,
            oxidizer=oxidizer,
            zmix_weights=weights,
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_generator_config(path, **overrides) -> GeneratorConfig:
    cp = _read(path)
    kw: dict = {}
    try:
        if "generator" in cp:
            g = cp["generator"]
            for key, cast in (
                ("grid_points", int), ("initial_length", float), ("shrink_factor", float),
                ("max_flames", int), ("pseudo_time_step", float), ("max_time_step", float),
                ("steady_tolerance", float), ("max_iterations", int),
                ("ignition_temperature", float), ("extinction_ratio", float),
            ):
                if key in g:
                    kw[key] = cast(g[key])
        if "fuel" in cp:
            kw["fuel_Y"] = _species_map(cp["fuel"]["Y"])
            kw["T_fuel"] = float(cp["fuel"].get("T", 300.0))
        if "air" in cp:
            kw["air_Y"] = _species_map(cp["air"]["Y"])
            kw["T_air"] = float(cp["air"].get("T", 300.0))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return GeneratorConfig(**kw)


def config_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def stoichiometric_mixture_fraction(mech: Mechanism, cfg: GeneratorConfig) -> float:
    return _stoichiometric_z(mech, _Problem(mech, cfg, 1.0))


__all__ = [
    "Mechanism", "Reaction", "GeneratorConfig", "FlameletSolution", "SweepResult",
    "reaction_rates", "source_energy", "mixture_fraction", "solve_steady_flamelet",
    "generate", "flame_key", "load_mechanism", "load_generator_config",
    "stoichiometric_mixture_fraction",
]
