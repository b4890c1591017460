"""Classical order-2 WENO flux reconstruction on a finite-difference grid.

The scheme splits the physical flux into upwind halves (Lax-Friedrichs), forms
two-point polynomial candidates on sub-stencils of the 3-point stencil around
each interface, and blends them with data-dependent convex weights built from
smoothness indicators. The same stencil extraction and candidate formulas are
reused by the agent environment, so agent actions that reproduce the classical
weights reproduce the classical fluxes exactly.

Index conventions: a grid of N cells has N + 1 interfaces; interface ``i``
separates cells ``i - 1`` and ``i``. Arrays extended with ghost cells map
physical cell ``c`` to extended index ``c + GHOST``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import physics
from .physics import GHOST, ConservedState1D, EquationSpec

# Sub-stencil reconstruction matrices for order r = 2: row k gives candidate
# f_k at the interface from the stencil (s0, s1, s2) ordered upwind to
# downwind. Blended with the optimal weights below they reproduce the
# third-order upwind-biased interface value.
CANDIDATES = np.array([[-0.5, 1.5, 0.0], [0.0, 0.5, 0.5]])

# Optimal (smooth-field) convex weights for the two candidates.
D_OPTIMAL = np.array([1.0 / 3.0, 2.0 / 3.0])

EPS_DEFAULT = 1e-6

# Keeps the flux split defined on identically-zero states; any field with
# actual content has a far larger wave speed.
ALPHA_FLOOR = 1e-12

CFL_WARN = 0.5
CFL_MAX = 1.0


class BlowUpError(RuntimeError):
    """The solution left the admissible set (NaN/Inf or rho, p <= 0)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass
class SplitFlux:
    """Upwind flux halves on the ghost-extended grid; f_plus + f_minus = f."""

    f_plus: np.ndarray
    f_minus: np.ndarray
    alpha: float


@dataclass
class StencilData:
    """Everything the reconstruction (classical or agent) reads per step."""

    stencils: np.ndarray  # (Q, N+1, 2, 3): field, interface, split sign, point
    alpha: float
    extended: np.ndarray  # ghost-extended state, (Q, N + 2*GHOST)
    split: SplitFlux


def boundary_extend(q: np.ndarray, kind: str = "outflow") -> np.ndarray:
    """Add GHOST cells per side along the last axis.

    Outflow copies the edge cell, periodic wraps. Works for any leading
    shape, so 2D sweeps can reuse it along either direction.
    """
    if kind == "outflow":
        left = np.repeat(q[..., :1], GHOST, axis=-1)
        right = np.repeat(q[..., -1:], GHOST, axis=-1)
    elif kind == "periodic":
        left = q[..., -GHOST:]
        right = q[..., :GHOST]
    else:
        raise ValueError(f"unknown boundary kind {kind!r}")
    return np.concatenate([left, q, right], axis=-1)


def lf_split(f: np.ndarray, u: np.ndarray, alpha: float) -> SplitFlux:
    """Lax-Friedrichs splitting f_pm = (f +- alpha * u) / 2, componentwise."""
    if not alpha > 0:
        raise ValueError(f"flux splitting needs alpha > 0, got {alpha}")
    au = alpha * u
    return SplitFlux(0.5 * (f + au), 0.5 * (f - au), alpha)


def interface_stencils(split: SplitFlux) -> np.ndarray:
    """Per-interface 3-point stencils of each split half, shape (..., N+1, 2, 3).

    The plus half is read left-biased, the minus half mirrored, so both
    present their upwind side in the same orientation and one reconstruction
    rule serves both. The interface axis is inserted before the sign axis;
    for a 1D state (Q, N) the result is (Q, N+1, 2, 3).
    """
    fp, fm = split.f_plus, split.f_minus
    n = fp.shape[-1] - 2 * GHOST
    plus = np.stack([fp[..., 0 : n + 1], fp[..., 1 : n + 2], fp[..., 2 : n + 3]], axis=-1)
    minus = np.stack([fm[..., 3 : n + 4], fm[..., 2 : n + 3], fm[..., 1 : n + 2]], axis=-1)
    return np.stack([plus, minus], axis=-2)


def split_stencils(
    q: np.ndarray,
    spec: EquationSpec,
    boundary: str = "outflow",
    alpha: float | None = None,
) -> StencilData:
    """Extend, split, and slice one state into per-interface stencils."""
    extended = boundary_extend(q, boundary)
    if alpha is None:
        alpha = max(physics.max_wave_speed(extended, spec), ALPHA_FLOOR)
    f = physics.flux(extended, spec)
    split = lf_split(f, extended, alpha)
    return StencilData(interface_stencils(split), alpha, extended, split)


def candidate_values(stencils: np.ndarray) -> np.ndarray:
    """Sub-stencil interface reconstructions, stencil shape (..., 3) -> (..., 2)."""
    return stencils @ CANDIDATES.T


def smoothness_indicators(stencils: np.ndarray) -> np.ndarray:
    """Squared one-sided differences (beta_0, beta_1) per stencil (..., 3)."""
    s = np.asarray(stencils, dtype=np.float64)
    b0 = (s[..., 1] - s[..., 0]) ** 2
    b1 = (s[..., 2] - s[..., 1]) ** 2
    return np.stack([b0, b1], axis=-1)


def weno_weights(beta: np.ndarray, eps: float = EPS_DEFAULT, d: np.ndarray = D_OPTIMAL) -> np.ndarray:
    """Normalized nonlinear weights d_k / (eps + beta_k)^2."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    raw = d / (eps + beta) ** 2
    return raw / raw.sum(axis=-1, keepdims=True)


def combine_candidates(candidates: np.ndarray, weights: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Convex combination per split sign, then the two signs summed.

    ``candidates`` and ``weights`` have shape (..., N+1, 2, 2); the result is
    the interface flux, shape (..., N+1). Weights whose last axis does not
    sum to one (within ``tol``) are rejected.
    """
    sums = weights.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"reconstruction weights must sum to 1 (worst deviation {worst:.3e})")
    return (candidates * weights).sum(axis=-1).sum(axis=-1)


def weno_interface_flux(
    q: np.ndarray, spec: EquationSpec, boundary: str = "outflow", eps: float = EPS_DEFAULT
) -> tuple[np.ndarray, StencilData]:
    """Classical WENO interface fluxes for a raw state array."""
    data = split_stencils(q, spec, boundary)
    beta = smoothness_indicators(data.stencils)
    omega = weno_weights(beta, eps)
    fhat = combine_candidates(candidate_values(data.stencils), omega)
    return fhat, data


def _check_cfl(alpha: float, dt: float, dx: float) -> None:
    cfl = dt * alpha / dx
    if cfl > CFL_MAX:
        raise ValueError(f"CFL number {cfl:.3f} exceeds {CFL_MAX}; reduce dt")
    if cfl > CFL_WARN:
        warnings.warn(f"CFL number {cfl:.3f} above {CFL_WARN}; accuracy degrades", stacklevel=3)


def weno_step_q(
    q: np.ndarray,
    dx: float,
    spec: EquationSpec,
    dt: float,
    boundary: str = "outflow",
    eps: float = EPS_DEFAULT,
) -> np.ndarray:
    """One conservative forward-Euler update of a raw state array."""
    fhat, data = weno_interface_flux(q, spec, boundary, eps)
    _check_cfl(data.alpha, dt, dx)
    q_next = q - (dt / dx) * (fhat[..., 1:] - fhat[..., :-1])
    try:
        physics.check_admissible(q_next, spec)
    except physics.PhysicsError as exc:
        raise BlowUpError(str(exc)) from exc
    return q_next


def weno_step(
    state: ConservedState1D,
    spec: EquationSpec,
    dt: float,
    boundary: str = "outflow",
    eps: float = EPS_DEFAULT,
) -> ConservedState1D:
    return ConservedState1D(weno_step_q(state.q, state.dx, spec, dt, boundary, eps), state.dx, state.x0)


def ssp_rk3_step_q(
    q: np.ndarray,
    dx: float,
    spec: EquationSpec,
    dt: float,
    boundary: str = "outflow",
    eps: float = EPS_DEFAULT,
) -> np.ndarray:
    """Strong-stability-preserving RK3 update; weights recomputed each stage."""

    def rhs_step(v):
        return weno_step_q(v, dx, spec, dt, boundary, eps)

    q1 = rhs_step(q)
    q2 = 0.75 * q + 0.25 * rhs_step(q1)
    return q / 3.0 + 2.0 / 3.0 * rhs_step(q2)


@dataclass
class Trajectory:
    """Snapshots of a rollout; ``states[k]`` holds the state at ``times[k]``."""

    times: list[float]
    states: list[ConservedState1D]

    @property
    def final(self) -> ConservedState1D:
        return self.states[-1]


def weno_solve(
    state0: ConservedState1D,
    spec: EquationSpec,
    dt: float,
    t_final: float | None = None,
    steps: int | None = None,
    boundary: str = "outflow",
    eps: float = EPS_DEFAULT,
    snapshot_every: int = 0,
    integrator: str = "euler",
) -> Trajectory:
    """Roll the classical solver forward, keeping snapshots at a cadence.

    Either ``steps`` or ``t_final`` must be given; ``t_final`` is converted to
    the nearest whole number of steps. ``snapshot_every = 0`` keeps only the
    initial and final states. Blow-ups are re-raised with the step index.
    """
    if steps is None:
        if t_final is None:
            raise ValueError("give either steps or t_final")
        steps = int(round(t_final / dt))
        if abs(steps * dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
            raise ValueError(f"t_final {t_final} is not a whole number of dt={dt} steps")
    if steps < 0:
        raise ValueError("steps must be non-negative")

    try:
        step_fn = {"euler": weno_step_q, "ssp-rk3": ssp_rk3_step_q}[integrator]
    except KeyError:
        raise ValueError(f"unknown integrator {integrator!r}; pick euler or ssp-rk3") from None

    q = state0.q.copy()
    traj = Trajectory([0.0], [ConservedState1D(q.copy(), state0.dx, state0.x0)])
    for k in range(steps):
        try:
            q = step_fn(q, state0.dx, spec, dt, boundary, eps)
        except BlowUpError as exc:
            raise BlowUpError(str(exc), step=k) from exc
        if snapshot_every and (k + 1) % snapshot_every == 0 and k + 1 != steps:
            traj.times.append((k + 1) * dt)
            traj.states.append(ConservedState1D(q.copy(), state0.dx, state0.x0))
    if steps > 0:
        traj.times.append(steps * dt)
        traj.states.append(ConservedState1D(q, state0.dx, state0.x0))
    return traj


def write_snapshot_csv(path, state: ConservedState1D, spec: EquationSpec) -> None:
    """Snapshot as CSV: header ``x,<field names>``, one row per cell."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", *spec.field_names])
        for x, col in zip(state.cell_centers, state.q.T):
            writer.writerow([f"{x:.17g}", *(f"{v:.17g}" for v in col)])
