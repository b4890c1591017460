"""Equations, states, initial conditions, and analytical references.

Covers the 1D Euler system (density, momentum, total energy with a gamma-law
EOS), the scalar Burgers equation, and the 2D Euler extension. The exact
Riemann solution used as the analytical reference for shock tubes follows the
classical pressure-function construction: solve for the star-region pressure,
then sample the self-similar solution in ``xi = x / t``.

All functions here are pure; nothing mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import Config, load_defaults

GHOST = 2  # cells per side, enough for one full 3-point stencil at the edge

EULER_FIELDS = ("rho", "rho_u", "rho_E")
EULER2D_FIELDS = ("rho", "rho_u", "rho_v", "rho_E")
BURGERS_FIELDS = ("u",)


class PhysicsError(ValueError):
    """Inadmissible state or ill-posed problem data."""


class VacuumError(PhysicsError):
    """The Riemann pressure function has no positive root."""


@dataclass(frozen=True)
class EquationSpec:
    """Which conservation law is being solved, plus its EOS constant."""

    kind: str = "euler1d"
    gamma: float = 1.4

    def __post_init__(self):
        if self.kind not in ("euler1d", "burgers1d", "euler2d"):
            raise PhysicsError(f"unknown equation kind {self.kind!r}")
        if self.kind != "burgers1d" and not self.gamma > 1.0:
            raise PhysicsError(f"gamma must exceed 1, got {self.gamma}")

    @property
    def nfields(self) -> int:
        return {"euler1d": 3, "burgers1d": 1, "euler2d": 4}[self.kind]

    @property
    def field_names(self) -> tuple[str, ...]:
        return {
            "euler1d": EULER_FIELDS,
            "burgers1d": BURGERS_FIELDS,
            "euler2d": EULER2D_FIELDS,
        }[self.kind]


@dataclass
class ConservedState1D:
    """Cell-centered conserved fields on a uniform grid.

    ``q`` has shape (Q, N): Euler rows are (rho, rho*u, rho*E), Burgers has a
    single row. Cell j is centered at ``x0 + (j + 1/2) * dx``.
    """

    q: np.ndarray
    dx: float
    x0: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.q.ndim != 2:
            raise PhysicsError(f"state array must be 2-D (fields, cells), got shape {self.q.shape}")
        if self.q.shape[1] < 2 * GHOST + 1:
            raise PhysicsError(f"need at least {2 * GHOST + 1} cells for one full stencil, got {self.q.shape[1]}")
        if not self.dx > 0:
            raise PhysicsError(f"dx must be positive, got {self.dx}")

    @property
    def n_cells(self) -> int:
        return self.q.shape[1]

    @property
    def cell_centers(self) -> np.ndarray:
        return self.x0 + (np.arange(self.n_cells) + 0.5) * self.dx

    def copy(self) -> "ConservedState1D":
        return ConservedState1D(self.q.copy(), self.dx, self.x0)


@dataclass
class ConservedState2D:
    """Conserved fields on a uniform rectangle; ``q`` has shape (4, Ny, Nx)."""

    q: np.ndarray
    dx: float
    dy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.q.ndim != 3 or self.q.shape[0] != 4:
            raise PhysicsError(f"2D state must have shape (4, Ny, Nx), got {self.q.shape}")
        if not (self.dx > 0 and self.dy > 0):
            raise PhysicsError("cell sizes must be positive")

    def copy(self) -> "ConservedState2D":
        return ConservedState2D(self.q.copy(), self.dx, self.dy, self.x0, self.y0)


@dataclass(frozen=True)
class RiemannIC:
    """Two constant primitive states separated by a diaphragm at ``x_d``."""

    left: tuple[float, float, float]
    right: tuple[float, float, float]
    x_d: float = 0.5

    def __post_init__(self):
        for side, (rho, _, p) in (("left", self.left), ("right", self.right)):
            if not (rho > 0 and p > 0):
                raise PhysicsError(f"{side} state inadmissible: rho={rho}, p={p}")


# ---------------------------------------------------------------------------
# EOS and fluxes
# ---------------------------------------------------------------------------

def primitive_to_conserved(rho, u, p, gamma: float):
    """(rho, u, p) -> (rho, rho*u, rho*E) with E = p/(rho*(gamma-1)) + u^2/2."""
    rho = np.asarray(rho, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    e = p / (rho * (gamma - 1.0))
    return np.stack([rho, rho * u, rho * (e + 0.5 * u * u)])


def conserved_to_primitive(q: np.ndarray, gamma: float):
    """Inverse of :func:`primitive_to_conserved`; returns (rho, u, p)."""
    rho = q[0]
    u = q[1] / rho
    e = q[2] / rho - 0.5 * u * u
    p = rho * e * (gamma - 1.0)
    return rho, u, p


def pressure(q: np.ndarray, gamma: float) -> np.ndarray:
    return conserved_to_primitive(q, gamma)[2]


def euler_flux(q: np.ndarray, gamma: float) -> np.ndarray:
    """Flux of the 1D Euler system: (rho*u, rho*u^2 + p, u*(rho*E + p))."""
    if np.any(q[0] <= 0):
        raise PhysicsError("euler_flux: non-positive density")
    rho, u, p = conserved_to_primitive(q, gamma)
    return np.stack([q[1], q[1] * u + p, u * (q[2] + p)])


def burgers_flux(u):
    return 0.5 * np.asarray(u, dtype=np.float64) ** 2


def flux(q: np.ndarray, spec: EquationSpec) -> np.ndarray:
    if spec.kind == "euler1d":
        return euler_flux(q, spec.gamma)
    if spec.kind == "burgers1d":
        return burgers_flux(q)
    raise PhysicsError(f"flux: unsupported 1D kind {spec.kind!r}")


def sound_speed(rho, p, gamma: float):
    return np.sqrt(gamma * np.asarray(p) / np.asarray(rho))


def check_admissible(q: np.ndarray, spec: EquationSpec) -> None:
    """Raise if the state has NaN/Inf entries or, for Euler, rho or p <= 0."""
    if not np.all(np.isfinite(q)):
        raise PhysicsError("state contains NaN or Inf")
    if spec.kind in ("euler1d", "euler2d"):
        if np.any(q[0] <= 0):
            raise PhysicsError("non-positive density")
        if np.any(pressure_nd(q, spec) <= 0):
            raise PhysicsError("non-positive pressure")


def pressure_nd(q: np.ndarray, spec: EquationSpec) -> np.ndarray:
    if spec.kind == "euler1d":
        return pressure(q, spec.gamma)
    if spec.kind == "euler2d":
        rho = q[0]
        kinetic = 0.5 * (q[1] ** 2 + q[2] ** 2) / rho
        return (spec.gamma - 1.0) * (q[3] - kinetic)
    raise PhysicsError(f"pressure undefined for kind {spec.kind!r}")


def max_wave_speed(q: np.ndarray, spec: EquationSpec) -> float:
    """Global bound on characteristic speeds, used for flux splitting."""
    if spec.kind == "burgers1d":
        alpha = float(np.max(np.abs(q)))
    elif spec.kind == "euler1d":
        check_admissible(q, spec)
        rho, u, p = conserved_to_primitive(q, spec.gamma)
        alpha = float(np.max(np.abs(u) + sound_speed(rho, p, spec.gamma)))
    else:
        raise PhysicsError(f"max_wave_speed: unsupported kind {spec.kind!r}")
    return alpha


def max_wave_speed_2d(q: np.ndarray, spec: EquationSpec) -> tuple[float, float]:
    """Per-direction speed bounds (alpha_x, alpha_y) for the 2D Euler system."""
    check_admissible(q, spec)
    rho = q[0]
    u = q[1] / rho
    v = q[2] / rho
    c = np.sqrt(spec.gamma * pressure_nd(q, spec) / rho)
    return float(np.max(np.abs(u) + c)), float(np.max(np.abs(v) + c))


def euler2d_flux_x(q: np.ndarray, gamma: float) -> np.ndarray:
    rho = q[0]
    u = q[1] / rho
    v = q[2] / rho
    p = (gamma - 1.0) * (q[3] - 0.5 * rho * (u * u + v * v))
    return np.stack([q[1], q[1] * u + p, q[1] * v, u * (q[3] + p)])


def euler2d_flux_y(q: np.ndarray, gamma: float) -> np.ndarray:
    rho = q[0]
    u = q[1] / rho
    v = q[2] / rho
    p = (gamma - 1.0) * (q[3] - 0.5 * rho * (u * u + v * v))
    return np.stack([q[2], q[2] * u, q[2] * v + p, v * (q[3] + p)])


# ---------------------------------------------------------------------------
# Initial conditions
# ---------------------------------------------------------------------------

SHOCK_TUBE_NAMES = ("sod", "sod2", "lax", "sonic-rarefaction")


def riemann_ic_from_config(name: str, cfg: Config | None = None) -> RiemannIC:
    cfg = cfg or load_defaults()
    left = cfg.get_floats(f"ic.{name}.left")
    right = cfg.get_floats(f"ic.{name}.right")
    x_d = cfg.get_float(f"ic.{name}.x_d")
    if len(left) != 3 or len(right) != 3:
        raise PhysicsError(f"ic.{name}: expected (rho, u, p) triples")
    return RiemannIC(tuple(left), tuple(right), x_d)


def initial_condition(
    name: str,
    n_cells: int,
    spec: EquationSpec | None = None,
    cfg: Config | None = None,
    custom: np.ndarray | None = None,
) -> ConservedState1D:
    """Sample a named initial condition onto an N-cell grid.

    Shock-tube names produce Euler conserved states; ``burgers-rarefaction``
    produces a scalar state; ``custom`` passes ``custom`` through unchanged
    (cell-width taken from the default domain).
    """
    cfg = cfg or load_defaults()
    x0 = cfg.get_float("domain.x0", 0.0)
    x1 = cfg.get_float("domain.x1", 1.0)
    dx = (x1 - x0) / n_cells
    x = x0 + (np.arange(n_cells) + 0.5) * dx

    if name == "custom":
        if custom is None:
            raise PhysicsError("custom initial condition requires an array")
        return ConservedState1D(np.asarray(custom, dtype=np.float64), dx, x0)

    if name in SHOCK_TUBE_NAMES:
        spec = spec or EquationSpec("euler1d", cfg.get_float("gamma", 1.4))
        ic = riemann_ic_from_config(name, cfg)
        on_left = x < ic.x_d
        rho = np.where(on_left, ic.left[0], ic.right[0])
        u = np.where(on_left, ic.left[1], ic.right[1])
        p = np.where(on_left, ic.left[2], ic.right[2])
        return ConservedState1D(primitive_to_conserved(rho, u, p, spec.gamma), dx, x0)

    if name == "burgers-rarefaction":
        u_l = cfg.get_floats("ic.burgers-rarefaction.left")[0]
        u_r = cfg.get_floats("ic.burgers-rarefaction.right")[0]
        x_d = cfg.get_float("ic.burgers-rarefaction.x_d")
        u = np.where(x < x_d, u_l, u_r)
        return ConservedState1D(u[None, :], dx, x0)

    raise PhysicsError(f"unknown initial condition {name!r}")


def kelvin_helmholtz_ic(n: int, spec: EquationSpec, cfg: Config | None = None) -> ConservedState2D:
    """Shear layer with a sinusoidal transverse perturbation on [0,1]^2."""
    cfg = cfg or load_defaults()
    rho_in = cfg.get_float("ic.kelvin-helmholtz.rho_in", 2.0)
    rho_out = cfg.get_float("ic.kelvin-helmholtz.rho_out", 1.0)
    shear = cfg.get_float("ic.kelvin-helmholtz.shear_u", 0.5)
    p0 = cfg.get_float("ic.kelvin-helmholtz.pressure", 2.5)
    w0 = cfg.get_float("ic.kelvin-helmholtz.perturb", 0.1)

    d = 1.0 / n
    coords = (np.arange(n) + 0.5) * d
    x, y = np.meshgrid(coords, coords)  # shape (Ny, Nx)
    inside = np.abs(y - 0.5) < 0.25
    rho = np.where(inside, rho_in, rho_out)
    u = np.where(inside, shear, -shear)
    sigma = 0.05 / math.sqrt(2.0)
    v = w0 * np.sin(4.0 * np.pi * x) * (
        np.exp(-((y - 0.25) ** 2) / (2.0 * sigma**2))
        + np.exp(-((y - 0.75) ** 2) / (2.0 * sigma**2))
    )
    p = np.full_like(rho, p0)
    energy = p / (spec.gamma - 1.0) + 0.5 * rho * (u * u + v * v)
    q = np.stack([rho, rho * u, rho * v, energy])
    return ConservedState2D(q, d, d)


# ---------------------------------------------------------------------------
# Exact Riemann solution for the 1D Euler equations
# ---------------------------------------------------------------------------

@dataclass
class RiemannSolution:
    """Star-region quantities plus everything needed to sample the fan."""

    ic: RiemannIC
    gamma: float
    p_star: float
    u_star: float
    iterations: int = 0
    residual: float = 0.0

    # wave speeds, filled in by the solver
    speeds: dict = field(default_factory=dict)


def _pressure_fn(p: float, rho_k: float, p_k: float, a_k: float, gamma: float) -> tuple[float, float]:
    """Value and derivative of the single-side pressure function f_K(p)."""
    if p > p_k:  # shock branch
        a_coef = 2.0 / ((gamma + 1.0) * rho_k)
        b_coef = (gamma - 1.0) / (gamma + 1.0) * p_k
        root = math.sqrt(a_coef / (p + b_coef))
        f = (p - p_k) * root
        df = root * (1.0 - 0.5 * (p - p_k) / (p + b_coef))
    else:  # rarefaction branch
        pr = p / p_k
        z = (gamma - 1.0) / (2.0 * gamma)
        f = 2.0 * a_k / (gamma - 1.0) * (pr**z - 1.0)
        df = (1.0 / (rho_k * a_k)) * pr ** (-(gamma + 1.0) / (2.0 * gamma))
    return f, df


def solve_riemann(ic: RiemannIC, gamma: float, tol: float = 1e-10, max_iter: int = 100) -> RiemannSolution:
    """Find the star-region pressure and velocity by Newton iteration.

    The initial guess is the two-rarefaction approximation; iteration stops
    when the relative pressure update drops below ``tol``. Raises
    :class:`VacuumError` when the data would open a vacuum.
    """
    rho_l, u_l, p_l = ic.left
    rho_r, u_r, p_r = ic.right
    a_l = math.sqrt(gamma * p_l / rho_l)
    a_r = math.sqrt(gamma * p_r / rho_r)
    du = u_r - u_l

    if 2.0 * (a_l + a_r) / (gamma - 1.0) <= du:
        raise VacuumError("initial states separate into vacuum; no positive star pressure")

    z = (gamma - 1.0) / (2.0 * gamma)
    p_tr = ((a_l + a_r - 0.5 * (gamma - 1.0) * du) / (a_l / p_l**z + a_r / p_r**z)) ** (1.0 / z)
    p = max(p_tr, 1e-14)

    iterations = 0
    change = math.inf
    for iterations in range(1, max_iter + 1):
        f_l, df_l = _pressure_fn(p, rho_l, p_l, a_l, gamma)
        f_r, df_r = _pressure_fn(p, rho_r, p_r, a_r, gamma)
        g = f_l + f_r + du
        p_new = p - g / (df_l + df_r)
        if p_new <= 0.0:
            p_new = 0.5 * p  # keep the iterate positive; Newton overshot
        change = abs(p_new - p) / (0.5 * (p_new + p))
        p = p_new
        if change < tol:
            break
    else:
        raise PhysicsError(f"star pressure iteration did not converge ({change:.3e} after {max_iter} steps)")

    f_l, _ = _pressure_fn(p, rho_l, p_l, a_l, gamma)
    f_r, _ = _pressure_fn(p, rho_r, p_r, a_r, gamma)
    u_star = 0.5 * (u_l + u_r) + 0.5 * (f_r - f_l)

    sol = RiemannSolution(ic, gamma, p_star=p, u_star=u_star, iterations=iterations, residual=change)

    gm = gamma
    speeds: dict[str, float] = {"contact": u_star}
    if p > p_l:  # left shock
        speeds["left_shock"] = u_l - a_l * math.sqrt((gm + 1.0) / (2.0 * gm) * p / p_l + (gm - 1.0) / (2.0 * gm))
    else:  # left fan
        a_star_l = a_l * (p / p_l) ** ((gm - 1.0) / (2.0 * gm))
        speeds["left_head"] = u_l - a_l
        speeds["left_tail"] = u_star - a_star_l
    if p > p_r:  # right shock
        speeds["right_shock"] = u_r + a_r * math.sqrt((gm + 1.0) / (2.0 * gm) * p / p_r + (gm - 1.0) / (2.0 * gm))
    else:  # right fan
        a_star_r = a_r * (p / p_r) ** ((gm - 1.0) / (2.0 * gm))
        speeds["right_head"] = u_r + a_r
        speeds["right_tail"] = u_star + a_star_r
    sol.speeds = speeds
    return sol


def sample_riemann(sol: RiemannSolution, xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample the self-similar solution at similarity coordinates ``xi = x/t``.

    Returns (rho, u, p) arrays of the same shape as ``xi``.
    """
    xi = np.asarray(xi, dtype=np.float64)
    gm = sol.gamma
    rho_l, u_l, p_l = sol.ic.left
    rho_r, u_r, p_r = sol.ic.right
    a_l = math.sqrt(gm * p_l / rho_l)
    a_r = math.sqrt(gm * p_r / rho_r)
    ps, us = sol.p_star, sol.u_star

    rho = np.empty_like(xi)
    u = np.empty_like(xi)
    p = np.empty_like(xi)

    left_of_contact = xi <= us

    # left side
    if ps > p_l:  # shock
        s = sol.speeds["left_shock"]
        ahead = left_of_contact & (xi < s)
        behind = left_of_contact & ~ahead
        rho_star = rho_l * ((ps / p_l + (gm - 1.0) / (gm + 1.0)) / ((gm - 1.0) / (gm + 1.0) * ps / p_l + 1.0))
        _assign(rho, u, p, ahead, rho_l, u_l, p_l)
        _assign(rho, u, p, behind, rho_star, us, ps)
    else:  # rarefaction fan
        head = sol.speeds["left_head"]
        tail = sol.speeds["left_tail"]
        ahead = left_of_contact & (xi < head)
        fan = left_of_contact & (xi >= head) & (xi <= tail)
        star = left_of_contact & (xi > tail)
        rho_star = rho_l * (ps / p_l) ** (1.0 / gm)
        _assign(rho, u, p, ahead, rho_l, u_l, p_l)
        _assign(rho, u, p, star, rho_star, us, ps)
        if np.any(fan):
            u_fan = 2.0 / (gm + 1.0) * (a_l + 0.5 * (gm - 1.0) * u_l + xi[fan])
            a_fan = a_l - 0.5 * (gm - 1.0) * (u_fan - u_l)
            rho[fan] = rho_l * (a_fan / a_l) ** (2.0 / (gm - 1.0))
            p[fan] = p_l * (a_fan / a_l) ** (2.0 * gm / (gm - 1.0))
            u[fan] = u_fan

    # right side
    right = ~left_of_contact
    if ps > p_r:  # shock
        s = sol.speeds["right_shock"]
        ahead = right & (xi > s)
        behind = right & ~ahead
        rho_star = rho_r * ((ps / p_r + (gm - 1.0) / (gm + 1.0)) / ((gm - 1.0) / (gm + 1.0) * ps / p_r + 1.0))
        _assign(rho, u, p, ahead, rho_r, u_r, p_r)
        _assign(rho, u, p, behind, rho_star, us, ps)
    else:
        head = sol.speeds["right_head"]
        tail = sol.speeds["right_tail"]
        ahead = right & (xi > head)
        fan = right & (xi <= head) & (xi >= tail)
        star = right & (xi < tail)
        rho_star = rho_r * (ps / p_r) ** (1.0 / gm)
        _assign(rho, u, p, ahead, rho_r, u_r, p_r)
        _assign(rho, u, p, star, rho_star, us, ps)
        if np.any(fan):
            u_fan = 2.0 / (gm + 1.0) * (-a_r + 0.5 * (gm - 1.0) * u_r + xi[fan])
            a_fan = a_r + 0.5 * (gm - 1.0) * (u_fan - u_r)
            rho[fan] = rho_r * (a_fan / a_r) ** (2.0 / (gm - 1.0))
            p[fan] = p_r * (a_fan / a_r) ** (2.0 * gm / (gm - 1.0))
            u[fan] = u_fan

    return rho, u, p


def _assign(rho, u, p, mask, rv, uv, pv):
    rho[mask] = rv
    u[mask] = uv
    p[mask] = pv


def exact_riemann_euler(ic: RiemannIC, gamma: float, xi) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Primitive (rho, u, p) of the exact Riemann solution at ``xi = x/t``."""
    sol = solve_riemann(ic, gamma)
    return sample_riemann(sol, xi)


def exact_shock_tube_state(
    name: str, n_cells: int, t: float, spec: EquationSpec | None = None, cfg: Config | None = None
) -> ConservedState1D:
    """Exact solution of a named shock tube sampled on an N-cell grid at time t."""
    cfg = cfg or load_defaults()
    spec = spec or EquationSpec("euler1d", cfg.get_float("gamma", 1.4))
    ic = riemann_ic_from_config(name, cfg)
    state0 = initial_condition(name, n_cells, spec, cfg)
    if t <= 0:
        return state0
    x = state0.cell_centers
    rho, u, p = exact_riemann_euler(ic, spec.gamma, (x - ic.x_d) / t)
    return ConservedState1D(primitive_to_conserved(rho, u, p, spec.gamma), state0.dx, state0.x0)


# ---------------------------------------------------------------------------
# Burgers analytical reference
# ---------------------------------------------------------------------------

def burgers_exact(u_l: float, u_r: float, x_d: float, x, t: float) -> np.ndarray:
    """Riemann solution of Burgers: a fan for u_l < u_r, else a shock.

    The shock moves at the Rankine-Hugoniot speed (u_l + u_r) / 2; the fan
    carries u = (x - x_d) / t between the edge values.
    """
    x = np.asarray(x, dtype=np.float64)
    if t <= 0:
        return np.where(x < x_d, u_l, u_r)
    xi = (x - x_d) / t
    if u_l < u_r:
        return np.clip(xi, u_l, u_r)
    s = 0.5 * (u_l + u_r)
    return np.where(xi < s, u_l, u_r)
