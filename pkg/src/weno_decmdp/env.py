"""Multi-agent flux-reconstruction environment on a conservation-law grid.

One agent sits at every cell interface. Each step, every agent sees the raw
3-point split-flux stencils on its interface (both upwind halves), emits two
convex blend weights per half, and the environment assembles the resulting
interface fluxes into one conservative update. Because the state update is a
closed-form composition of the agents' outputs, the entire episode is
differentiable: rewards can be pushed back through time and space to the
shared policy parameters.

Three reward styles are supported, all derived from per-cell solution error:

* ``rl-weno``     - reference is one classical WENO step from the previous
                    state; the reference moves with the learner and gradients
                    flow through it.
* ``bc-weno``     - reference is a fixed WENO trajectory precomputed from the
                    initial condition (imitation of a frozen expert).
* ``bc-analytical`` - reference is the exact solution sampled on the grid.

Two execution engines exist. The vectorized numpy engine (``episode_forward``
/ ``episode_backward``) is what training uses; its backward pass is written
by hand. The scalar-tape engine (``run_episode`` with ``mode="tape"``)
records every arithmetic operation of a (small) rollout on an autodiff tape,
which makes per-node adjoints inspectable; tests cross-validate the two
engines against each other and against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import physics
from . import policy as policy_mod
from . import weno
from .autodiff import Tape, Var, backward, vabs, vmax, vreciprocal, vsquare, vsqrt
from .config import Config, load_defaults
from .physics import ConservedState1D, ConservedState2D, EquationSpec
from .policy import PolicyParams
from .weno import GHOST, BlowUpError

REWARD_KINDS = ("rl-weno", "bc-weno", "bc-analytical")

# Flat return assigned to episodes that left the admissible set; keeps the
# training loop finite without rewarding an early exit.
DIVERGED_RETURN = -1e3

SIMPLEX_TOL = 1e-9


class SimplexError(ValueError):
    """Action weights off the probability simplex."""


@dataclass
class EpisodeConfig:
    """Everything needed to roll one episode, independent of the policy."""

    spec: EquationSpec
    ic_name: str
    n_cells: int
    dt: float
    steps: int
    boundary: str = "outflow"
    reward_kind: str = "rl-weno"
    seed: int = 0
    eps: float = weno.EPS_DEFAULT
    normalize_inputs: bool = True
    config: Config | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"reward kind must be one of {REWARD_KINDS}, got {self.reward_kind!r}")
        if self.boundary not in ("outflow", "periodic"):
            raise ValueError(f"unknown boundary kind {self.boundary!r}")
        if self.config is None:
            self.config = load_defaults()

    @property
    def n_interfaces(self) -> int:
        return self.n_cells + 1


def initial_state(cfg: EpisodeConfig, custom: np.ndarray | None = None) -> ConservedState1D:
    """Build the configured initial condition and enforce the CFL bound on it."""
    state = physics.initial_condition(cfg.ic_name, cfg.n_cells, cfg.spec, cfg.config, custom)
    alpha0 = physics.max_wave_speed(state.q, cfg.spec)
    if cfg.dt * alpha0 / state.dx > weno.CFL_MAX:
        raise ValueError(
            f"dt={cfg.dt} violates the CFL bound at the initial condition "
            f"(alpha0={alpha0:.4g}, dx={state.dx:.4g})"
        )
    return state


# ---------------------------------------------------------------------------
# The observation / action / transition triple
# ---------------------------------------------------------------------------

@dataclass
class Observation:
    """Raw split-flux stencils per (field, interface, split sign, point).

    ``values`` has shape (Q, N+1, 2, 3). The plus-sign slice at interface j
    holds the plus split flux at cells {j-1, j, j+1}; the minus slice is the
    mirrored minus split flux. ``scales`` (optional) are the per-stencil
    normalization factors a policy would divide by.
    """

    values: np.ndarray
    alpha: float
    scales: np.ndarray | None = None


def observe(
    q: np.ndarray,
    spec: EquationSpec,
    boundary: str = "outflow",
    with_scales: bool = False,
) -> Observation:
    """Extract every agent's local observation from an admissible state."""
    physics.check_admissible(q, spec)
    data = weno.split_stencils(q, spec, boundary)
    scales = policy_mod.normalize_stencil(data.stencils)[1] if with_scales else None
    return Observation(data.stencils, data.alpha, scales)


def reconstruct_cells(obs: Observation) -> np.ndarray:
    """Recover the full cell state from the union of all observations.

    Every interior cell value appears in some stencil of both split halves,
    and the halves differ by exactly ``alpha * u`` — so the observations of
    all agents jointly determine the state.
    """
    f_plus = obs.values[:, :-1, 0, 2]  # plus flux at cell c, from interface c
    f_minus = obs.values[:, :-1, 1, 1]  # minus flux at the same cell
    return (f_plus - f_minus) / obs.alpha


def validate_actions(actions: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    if actions.shape[-1] != 2:
        raise SimplexError(f"actions must have 2 weights on the last axis, got shape {actions.shape}")
    if not np.all(np.isfinite(actions)):
        raise SimplexError("actions contain NaN or Inf")
    if np.any(actions < -tol) or np.any(actions > 1.0 + tol):
        raise SimplexError("action weights must lie in [0, 1]")
    worst = float(np.max(np.abs(actions.sum(axis=-1) - 1.0)))
    if worst > tol:
        raise SimplexError(f"action weights must sum to 1 (worst deviation {worst:.3e})")


def apply_actions(obs: Observation, actions: np.ndarray) -> np.ndarray:
    """Blend the sub-stencil candidates with agent weights -> interface fluxes."""
    validate_actions(actions)
    return weno.combine_candidates(weno.candidate_values(obs.values), actions)


def transition(state: ConservedState1D, fluxes: np.ndarray, dt: float, spec: EquationSpec) -> ConservedState1D:
    """Conservative update from interface fluxes; rejects blow-ups."""
    q_next = state.q - (dt / state.dx) * (fluxes[:, 1:] - fluxes[:, :-1])
    try:
        physics.check_admissible(q_next, spec)
    except physics.PhysicsError as exc:
        raise BlowUpError(str(exc)) from exc
    return ConservedState1D(q_next, state.dx, state.x0)


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------

def cell_errors(u: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Per-cell absolute deviation from the reference, summed over fields."""
    return np.abs(u - ref).sum(axis=0)


def interface_rewards(errors: np.ndarray) -> np.ndarray:
    """Per-interface rewards: minus the mean error of the two adjacent cells.

    Ghost cells carry zero error, so the two boundary interfaces see only
    their single interior neighbor. Summing over interfaces telescopes to
    minus the total cell error, each cell counted exactly once.
    """
    padded = np.concatenate([[0.0], errors, [0.0]])
    return -0.5 * (padded[:-1] + padded[1:])


def weno_reference_flux(obs: Observation, eps: float) -> np.ndarray:
    """Interface fluxes the classical scheme would produce from this observation."""
    beta = weno.smoothness_indicators(obs.values)
    omega = weno.weno_weights(beta, eps)
    return weno.combine_candidates(weno.candidate_values(obs.values), omega)


def reward_rl_weno(
    prev_state: ConservedState1D, next_state: ConservedState1D, cfg: EpisodeConfig
) -> tuple[np.ndarray, ConservedState1D]:
    """Reward against one classical WENO step taken from the previous state."""
    obs = observe(prev_state.q, cfg.spec, cfg.boundary)
    ref = transition(prev_state, weno_reference_flux(obs, cfg.eps), cfg.dt, cfg.spec)
    return interface_rewards(cell_errors(next_state.q, ref.q)), ref


def reward_bc(next_state: ConservedState1D, ref_trajectory: np.ndarray, t: int) -> np.ndarray:
    """Reward against a fixed reference trajectory at step index ``t`` (1-based)."""
    if t >= ref_trajectory.shape[0]:
        raise ValueError(f"reference trajectory has {ref_trajectory.shape[0]} snapshots, needs index {t}")
    return interface_rewards(cell_errors(next_state.q, ref_trajectory[t]))


def reference_trajectory(cfg: EpisodeConfig, state0: ConservedState1D) -> np.ndarray | None:
    """Precompute the fixed reference for the behavior-cloning reward kinds.

    Returns an array (steps+1, Q, N) whose index t is the reference at time
    t*dt (index 0 is the initial condition), or None for ``rl-weno`` where
    the reference is recomputed on the fly.
    """
    if cfg.reward_kind == "rl-weno":
        return None
    if cfg.reward_kind == "bc-weno":
        traj = weno.weno_solve(
            state0, cfg.spec, cfg.dt, steps=cfg.steps, boundary=cfg.boundary, eps=cfg.eps, snapshot_every=1
        )
        return np.stack([s.q for s in traj.states])
    # bc-analytical
    out = [state0.q.copy()]
    if cfg.ic_name in physics.SHOCK_TUBE_NAMES:
        for k in range(1, cfg.steps + 1):
            exact = physics.exact_shock_tube_state(cfg.ic_name, cfg.n_cells, k * cfg.dt, cfg.spec, cfg.config)
            out.append(exact.q)
    elif cfg.ic_name == "burgers-rarefaction":
        conf = cfg.config
        u_l = conf.get_floats("ic.burgers-rarefaction.left")[0]
        u_r = conf.get_floats("ic.burgers-rarefaction.right")[0]
        x_d = conf.get_float("ic.burgers-rarefaction.x_d")
        x = state0.cell_centers
        for k in range(1, cfg.steps + 1):
            out.append(physics.burgers_exact(u_l, u_r, x_d, x, k * cfg.dt)[None, :])
    else:
        raise physics.PhysicsError(f"no analytical reference available for IC {cfg.ic_name!r}")
    return np.stack(out)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

class WenoOracle:
    """Acts with the classical smoothness-indicator weights (the expert)."""

    def __init__(self, eps: float = weno.EPS_DEFAULT):
        self.eps = eps

    def act(self, stencils: np.ndarray) -> np.ndarray:
        return weno.weno_weights(weno.smoothness_indicators(stencils), self.eps)


class MLPPolicy:
    """Acts with the shared network; ``fast=True`` trades the fixed-order
    matmuls for BLAS ones (used only for large inference batches in 2D)."""

    def __init__(self, params: PolicyParams, normalize: bool = True, fast: bool = False):
        self.params = params
        self.normalize = normalize
        self.fast = fast

    def act(self, stencils: np.ndarray) -> np.ndarray:
        if self.fast:
            return policy_mod.act_stencils_fast(self.params, stencils, self.normalize)
        return policy_mod.act_stencils(self.params, stencils, self.normalize)[0]


# ---------------------------------------------------------------------------
# Episode rollout (inspection-friendly path)
# ---------------------------------------------------------------------------

@dataclass
class TapeRollout:
    """Node bookkeeping of a whole episode recorded on a scalar tape."""

    tape: Tape
    return_node: int
    state_nodes: list[np.ndarray]  # per time 0..T, int array (Q, N)
    action_nodes: list[np.ndarray]  # per step, int array (Q, N+1, 2, 2)
    param_nodes: dict[str, np.ndarray]  # name -> int array of leaf ids


@dataclass
class EpisodeResult:
    """A finished (or aborted) rollout and its reward bookkeeping."""

    states: list[np.ndarray]  # length T_done + 1
    rewards: np.ndarray  # (T_done, N+1)
    system_rewards: np.ndarray  # (T_done,)
    episode_return: float
    diverged: bool
    diverged_step: int | None
    dx: float
    x0: float
    tape_data: TapeRollout | None = None

    def state_at(self, k: int) -> ConservedState1D:
        return ConservedState1D(self.states[k].copy(), self.dx, self.x0)


def _finish_result(
    states, rewards, dx, x0, diverged, diverged_step, tape_data=None
) -> EpisodeResult:
    rewards = np.array(rewards) if rewards else np.zeros((0, 0))
    system = rewards.sum(axis=1) if rewards.size else np.zeros(0)
    ret = DIVERGED_RETURN if diverged else float(system.sum())
    return EpisodeResult(states, rewards, system, ret, diverged, diverged_step, dx, x0, tape_data)


def run_episode(
    policy,
    cfg: EpisodeConfig,
    mode: str = "numpy",
    state0: ConservedState1D | None = None,
    ref_traj: np.ndarray | None = None,
) -> EpisodeResult:
    """Roll one full episode under ``policy``.

    ``mode="numpy"`` runs the plain vectorized loop. ``mode="tape"`` records
    the whole rollout on one scalar autodiff tape (small problems only) and
    requires an :class:`MLPPolicy`; the result carries a
    :class:`TapeRollout` for adjoint inspection.
    """
    if state0 is None:
        state0 = initial_state(cfg)
    if ref_traj is None and cfg.reward_kind != "rl-weno":
        ref_traj = reference_trajectory(cfg, state0)

    if mode == "tape":
        if not isinstance(policy, MLPPolicy):
            raise ValueError("tape mode needs an MLPPolicy (parameters become tape leaves)")
        return _run_episode_tape(policy.params, cfg, state0, ref_traj, policy.normalize)
    if mode != "numpy":
        raise ValueError(f"unknown episode mode {mode!r}")

    state = state0.copy()
    states = [state.q.copy()]
    rewards: list[np.ndarray] = []
    diverged, diverged_step = False, None
    for t in range(cfg.steps):
        try:
            obs = observe(state.q, cfg.spec, cfg.boundary)
            actions = policy.act(obs.values)
            next_state = transition(state, apply_actions(obs, actions), cfg.dt, cfg.spec)
            if cfg.reward_kind == "rl-weno":
                r, _ = reward_rl_weno(state, next_state, cfg)
            else:
                r = reward_bc(next_state, ref_traj, t + 1)
        except (BlowUpError, physics.PhysicsError):
            diverged, diverged_step = True, t
            break
        states.append(next_state.q.copy())
        rewards.append(r)
        state = next_state
    return _finish_result(states, rewards, state0.dx, state0.x0, diverged, diverged_step)


# ---------------------------------------------------------------------------
# Fast engine: vectorized episode forward + hand-written backward
# ---------------------------------------------------------------------------

@dataclass
class StepCache:
    """Intermediates of one environment step needed by the backward pass."""

    u_ext: np.ndarray  # ghost-extended previous state (Q, N + 2*GHOST)
    alpha: float
    stencils: np.ndarray  # (Q, N+1, 2, 3)
    net: policy_mod.PolicyCache
    actions: np.ndarray  # (Q, N+1, 2, 2)
    candidates: np.ndarray  # (Q, N+1, 2, 2)
    u_next: np.ndarray  # (Q, N)
    ref: np.ndarray  # (Q, N)
    beta: np.ndarray | None = None  # rl-weno only
    ref_weights: np.ndarray | None = None  # rl-weno only


@dataclass
class EpisodeForward:
    states: list[np.ndarray]
    caches: list[StepCache]
    rewards: np.ndarray
    system_rewards: np.ndarray
    episode_return: float
    diverged: bool
    diverged_step: int | None
    dx: float


def episode_forward(
    params: PolicyParams,
    cfg: EpisodeConfig,
    state0: ConservedState1D | None = None,
    ref_traj: np.ndarray | None = None,
    keep_caches: bool = True,
) -> EpisodeForward:
    """Vectorized rollout of the shared policy, caching what backward needs.

    Uses the same primitive functions as ``observe``/``apply_actions``/
    ``transition`` in the same order, so results agree bit-for-bit with the
    plain path.
    """
    if state0 is None:
        state0 = initial_state(cfg)
    if ref_traj is None and cfg.reward_kind != "rl-weno":
        ref_traj = reference_trajectory(cfg, state0)

    spec, dt, dx = cfg.spec, cfg.dt, state0.dx
    lam = dt / dx
    q = state0.q.copy()
    states = [q.copy()]
    caches: list[StepCache] = []
    rewards: list[np.ndarray] = []
    diverged, diverged_step = False, None

    for t in range(cfg.steps):
        try:
            physics.check_admissible(q, spec)
            data = weno.split_stencils(q, spec, cfg.boundary)
        except physics.PhysicsError:
            diverged, diverged_step = True, t
            break
        s = data.stencils
        if cfg.normalize_inputs:
            x, scale = policy_mod.normalize_stencil(s)
        else:
            x, scale = s, None
        actions_flat, net = policy_mod.forward_batch(params, x.reshape(-1, policy_mod.N_INPUTS))
        net.raw, net.scale = s, scale
        actions = actions_flat.reshape(s.shape[:-1] + (2,))
        cand = weno.candidate_values(s)
        fhat = weno.combine_candidates(cand, actions)
        u_next = q - lam * (fhat[:, 1:] - fhat[:, :-1])

        beta = ref_weights = None
        try:
            physics.check_admissible(u_next, spec)
            if cfg.reward_kind == "rl-weno":
                beta = weno.smoothness_indicators(s)
                ref_weights = weno.weno_weights(beta, cfg.eps)
                fhat_ref = weno.combine_candidates(cand, ref_weights)
                ref = q - lam * (fhat_ref[:, 1:] - fhat_ref[:, :-1])
                physics.check_admissible(ref, spec)
            else:
                ref = ref_traj[t + 1]
        except physics.PhysicsError:
            diverged, diverged_step = True, t
            break

        rewards.append(interface_rewards(cell_errors(u_next, ref)))
        if keep_caches:
            caches.append(StepCache(data.extended, data.alpha, s, net, actions, cand, u_next, ref, beta, ref_weights))
        states.append(u_next.copy())
        q = u_next

    rewards_arr = np.array(rewards) if rewards else np.zeros((0, cfg.n_interfaces))
    system = rewards_arr.sum(axis=1)
    ret = DIVERGED_RETURN if diverged else float(system.sum())
    return EpisodeForward(states, caches, rewards_arr, system, ret, diverged, diverged_step, state0.dx)


def _flux_jacobian_T(u_ext: np.ndarray, g_f: np.ndarray, spec: EquationSpec) -> np.ndarray:
    """Apply the transposed flux Jacobian cellwise: returns J(u)^T @ g_f."""
    if spec.kind == "burgers1d":
        return g_f * u_ext
    gamma = spec.gamma
    rho, m, en = u_ext[0], u_ext[1], u_ext[2]
    u = m / rho
    p = (gamma - 1.0) * (en - 0.5 * m * u)
    h = (en + p) / rho  # total enthalpy per mass
    g = np.empty_like(u_ext)
    g[0] = g_f[1] * (0.5 * (gamma - 3.0) * u * u) + g_f[2] * (0.5 * (gamma - 1.0) * u**3 - u * h)
    g[1] = g_f[0] + g_f[1] * ((3.0 - gamma) * u) + g_f[2] * (h - (gamma - 1.0) * u * u)
    g[2] = g_f[1] * (gamma - 1.0) + g_f[2] * (gamma * u)
    return g


def _extension_backward(g_ext: np.ndarray, boundary: str, n: int) -> np.ndarray:
    """Fold ghost-cell adjoints back onto the interior cells."""
    g = g_ext[:, GHOST : GHOST + n].copy()
    if boundary == "outflow":
        g[:, 0] += g_ext[:, 0] + g_ext[:, 1]
        g[:, -1] += g_ext[:, -2] + g_ext[:, -1]
    else:  # periodic
        g[:, -GHOST:] += g_ext[:, :GHOST]
        g[:, :GHOST] += g_ext[:, -GHOST:]
    return g


def _update_backward(g_u: np.ndarray, lam: float) -> np.ndarray:
    """Adjoint of u' = u - lam * (fhat[1:] - fhat[:-1]) w.r.t. fhat."""
    g_fhat = np.zeros((g_u.shape[0], g_u.shape[1] + 1))
    g_fhat[:, :-1] += lam * g_u
    g_fhat[:, 1:] -= lam * g_u
    return g_fhat


def _alpha_backward(u_ext: np.ndarray, g_alpha: float, spec: EquationSpec) -> np.ndarray:
    """Adjoint of the split's wave-speed bound onto the extended state.

    ``alpha`` is the (floored) maximum characteristic speed over the extended
    cells; its adjoint lands on the first cell attaining the maximum, with
    the same subgradient conventions as the tape ops: abs'(0) = 0, max ties
    to the first argument, nothing through the floor when it binds.
    """
    g = np.zeros_like(u_ext)
    if spec.kind == "burgers1d":
        speeds = np.abs(u_ext[0])
        j = int(np.argmax(speeds))
        if speeds[j] >= weno.ALPHA_FLOOR:
            g[0, j] = g_alpha * np.sign(u_ext[0, j])
        return g
    gamma = spec.gamma
    rho, m, en = u_ext[0], u_ext[1], u_ext[2]
    u = m / rho
    p = (gamma - 1.0) * (en - 0.5 * m * u)
    c = np.sqrt(gamma * p / rho)
    speeds = np.abs(u) + c
    j = int(np.argmax(speeds))
    if speeds[j] < weno.ALPHA_FLOOR:
        return g
    sgn = np.sign(u[j])
    rj, mj, ej, cj = rho[j], m[j], en[j], c[j]
    coef = gamma * (gamma - 1.0) / (2.0 * cj)  # d(alpha)/d(p/rho)
    g[0, j] = g_alpha * (-sgn * mj / rj**2 + coef * (-ej / rj**2 + mj**2 / rj**3))
    g[1, j] = g_alpha * (sgn / rj - coef * mj / rj**2)
    g[2, j] = g_alpha * (coef / rj)
    return g


def _stencil_scatter(g_s: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of ``interface_stencils``: scatter back to the split halves."""
    q_fields = g_s.shape[0]
    g_fp = np.zeros((q_fields, n + 2 * GHOST))
    g_fm = np.zeros((q_fields, n + 2 * GHOST))
    for k in range(3):
        g_fp[:, k : k + n + 1] += g_s[:, :, 0, k]
        g_fm[:, 3 - k : 3 - k + n + 1] += g_s[:, :, 1, k]
    return g_fp, g_fm


def episode_backward(params: PolicyParams, cfg: EpisodeConfig, fwd: EpisodeForward) -> PolicyParams:
    """Gradient of the episode return w.r.t. the shared policy parameters.

    Reverse sweep over the cached steps: reward adjoints enter each step's
    next-state, flow through the flux assembly into the policy (and, for
    rl-weno, through the moving reference's weight computation), and the
    remainder is carried to the previous state. For diverged episodes the
    gradient covers the completed prefix.
    """
    grads = policy_mod.zeros_like_params(params)
    if not fwd.caches:
        return grads
    spec, lam = cfg.spec, cfg.dt / fwd.dx
    n = fwd.states[0].shape[1]
    g_carry = np.zeros_like(fwd.states[0])

    for t in range(len(fwd.caches) - 1, -1, -1):
        c = fwd.caches[t]
        sgn = np.sign(c.u_next - c.ref)
        g_u1 = g_carry - sgn  # return = -sum of cell errors, each cell once
        g_q = g_u1.copy()

        # agent branch: update -> combine -> policy -> normalization
        g_fhat = _update_backward(g_u1, lam)
        g_actions = g_fhat[:, :, None, None] * c.candidates
        g_cand = g_fhat[:, :, None, None] * c.actions
        g_x, pg = policy_mod.backward_batch(params, c.net, g_actions.reshape(-1, 2))
        for name in policy_mod.PARAM_ORDER:
            getattr(grads, name)[...] += getattr(pg, name)
        if cfg.normalize_inputs:
            g_s = policy_mod.normalize_backward(c.net, g_x)
        else:
            g_s = g_x.reshape(c.stencils.shape)

        # reference branch (rl-weno only): the reference moves with the state
        if cfg.reward_kind == "rl-weno":
            g_ref = sgn
            g_q += g_ref
            g_fhat_ref = _update_backward(g_ref, lam)
            g_w = g_fhat_ref[:, :, None, None] * c.candidates
            g_cand += g_fhat_ref[:, :, None, None] * c.ref_weights
            a_raw = weno.D_OPTIMAL / (cfg.eps + c.beta) ** 2
            g_a = (g_w - (g_w * c.ref_weights).sum(axis=-1, keepdims=True)) / a_raw.sum(axis=-1, keepdims=True)
            g_beta = g_a * (-2.0 * a_raw / (cfg.eps + c.beta))
            d0 = c.stencils[..., 1] - c.stencils[..., 0]
            d1 = c.stencils[..., 2] - c.stencils[..., 1]
            g_s[..., 0] += -2.0 * d0 * g_beta[..., 0]
            g_s[..., 1] += 2.0 * d0 * g_beta[..., 0] - 2.0 * d1 * g_beta[..., 1]
            g_s[..., 2] += 2.0 * d1 * g_beta[..., 1]

        g_s += g_cand @ weno.CANDIDATES

        g_fp, g_fm = _stencil_scatter(g_s, n)
        g_f = 0.5 * (g_fp + g_fm)
        g_ext = 0.5 * c.alpha * (g_fp - g_fm)
        g_ext += _flux_jacobian_T(c.u_ext, g_f, spec)
        # alpha itself is state-dependent: f± = (f ± alpha*u)/2 pulls on it
        g_alpha = 0.5 * float(np.sum(c.u_ext * (g_fp - g_fm)))
        g_ext += _alpha_backward(c.u_ext, g_alpha, spec)
        g_q += _extension_backward(g_ext, cfg.boundary, n)
        g_carry = g_q
    return grads


# ---------------------------------------------------------------------------
# Tape engine: the same episode recorded operation-by-operation
# ---------------------------------------------------------------------------

def _lift_params(tape: Tape, params: PolicyParams) -> tuple[PolicyParams, dict[str, np.ndarray]]:
    """Turn every parameter entry into a tape leaf; returns Var arrays + ids."""
    var_arrays, id_arrays = {}, {}
    for name in policy_mod.PARAM_ORDER:
        arr = getattr(params, name)
        vs = np.empty(arr.shape, dtype=object)
        ids = np.empty(arr.shape, dtype=np.int64)
        for idx in np.ndindex(arr.shape):
            v = tape.leaf(float(arr[idx]))
            vs[idx] = v
            ids[idx] = v.node
        var_arrays[name] = vs
        id_arrays[name] = ids
    lifted = PolicyParams.__new__(PolicyParams)  # bypass shape validation (object arrays)
    for name in policy_mod.PARAM_ORDER:
        setattr(lifted, name, var_arrays[name])
    return lifted, id_arrays


def _tape_extend(row: list[Var], boundary: str) -> list[Var]:
    if boundary == "outflow":
        return [row[0]] * GHOST + row + [row[-1]] * GHOST
    return row[-GHOST:] + row + row[:GHOST]


def _tape_alpha(ue: list[list[Var]], spec: EquationSpec) -> Var:
    """Wave-speed bound recorded on tape.

    Mirrors the float expression of :func:`physics.max_wave_speed` operation
    by operation so the recorded value is bitwise identical to the
    vectorized engine's.
    """
    if spec.kind == "burgers1d":
        m = vabs(ue[0][0])
        for v in ue[0][1:]:
            m = vmax(m, vabs(v))
    else:
        gamma = spec.gamma
        m = None
        for rho, mom, en in zip(*ue):
            u = mom / rho
            e = en / rho - (u * 0.5) * u
            p = rho * e * (gamma - 1.0)
            c = vsqrt(p * gamma / rho)
            s = vabs(u) + c
            m = s if m is None else vmax(m, s)
    return vmax(m, weno.ALPHA_FLOOR)


def _tape_flux(tape: Tape, ue: list[list[Var]], spec: EquationSpec) -> list[list[Var]]:
    """Physical flux recorded on tape, op-for-op mirroring the numpy path."""
    if spec.kind == "burgers1d":
        return [[vsquare(u) * 0.5 for u in ue[0]]]
    gamma = spec.gamma
    f = [[], [], []]
    for rho, m, en in zip(*ue):
        u = m / rho
        e = en / rho - (u * 0.5) * u
        p = rho * e * (gamma - 1.0)
        f[0].append(m)
        f[1].append(m * u + p)
        f[2].append(u * (en + p))
    return f


def _values(grid: list[list[Var]]) -> np.ndarray:
    return np.array([[v.value for v in row] for row in grid])


def _run_episode_tape(
    params: PolicyParams,
    cfg: EpisodeConfig,
    state0: ConservedState1D,
    ref_traj: np.ndarray | None,
    normalize: bool,
) -> EpisodeResult:
    spec, lam = cfg.spec, cfg.dt / state0.dx
    nq, n = state0.q.shape
    tape = Tape()
    lifted, param_nodes = _lift_params(tape, params)

    u: list[list[Var]] = [[tape.leaf(float(v)) for v in row] for row in state0.q]
    state_nodes = [np.array([[v.node for v in row] for row in u])]
    action_nodes: list[np.ndarray] = []
    states = [state0.q.copy()]
    rewards: list[np.ndarray] = []
    total = tape.constant(0.0)
    diverged, diverged_step = False, None

    for t in range(cfg.steps):
        q_vals = _values(u)
        try:
            physics.check_admissible(q_vals, spec)
        except physics.PhysicsError:
            diverged, diverged_step = True, t
            break
        ue = [_tape_extend(row, cfg.boundary) for row in u]
        alpha = _tape_alpha(ue, spec)
        f = _tape_flux(tape, ue, spec)
        fp = [[(fj + uj * alpha) * 0.5 for fj, uj in zip(frow, urow)] for frow, urow in zip(f, ue)]
        fm = [[(fj - uj * alpha) * 0.5 for fj, uj in zip(frow, urow)] for frow, urow in zip(f, ue)]

        step_actions = np.empty((nq, n + 1, 2, 2), dtype=np.int64)
        fhat: list[list[Var]] = []
        ref_fhat: list[list[Var]] = [] if cfg.reward_kind == "rl-weno" else None
        for qf in range(nq):
            fhat_row, ref_row = [], []
            for i in range(n + 1):
                stencils = (
                    [fp[qf][i], fp[qf][i + 1], fp[qf][i + 2]],
                    [fm[qf][i + 3], fm[qf][i + 2], fm[qf][i + 1]],
                )
                flux_total = tape.constant(0.0)
                ref_total = tape.constant(0.0)
                for sign, sten in enumerate(stencils):
                    acts = policy_mod.tape_policy(tape, lifted, sten, normalize)
                    step_actions[qf, i, sign, 0] = acts[0].node
                    step_actions[qf, i, sign, 1] = acts[1].node
                    c0 = sten[0] * float(weno.CANDIDATES[0, 0]) + sten[1] * float(weno.CANDIDATES[0, 1])
                    c1 = sten[1] * float(weno.CANDIDATES[1, 1]) + sten[2] * float(weno.CANDIDATES[1, 2])
                    flux_total = flux_total + acts[0] * c0 + acts[1] * c1
                    if ref_row is not None and cfg.reward_kind == "rl-weno":
                        b0 = vsquare(sten[1] - sten[0])
                        b1 = vsquare(sten[2] - sten[1])
                        a0 = vreciprocal(vsquare(b0 + cfg.eps)) * float(weno.D_OPTIMAL[0])
                        a1 = vreciprocal(vsquare(b1 + cfg.eps)) * float(weno.D_OPTIMAL[1])
                        asum = a0 + a1
                        ref_total = ref_total + (a0 / asum) * c0 + (a1 / asum) * c1
                fhat_row.append(flux_total)
                ref_row.append(ref_total)
            fhat.append(fhat_row)
            if cfg.reward_kind == "rl-weno":
                ref_fhat.append(ref_row)

        u_next = [
            [u[qf][c] - (fhat[qf][c + 1] - fhat[qf][c]) * lam for c in range(n)]
            for qf in range(nq)
        ]
        try:
            physics.check_admissible(_values(u_next), spec)
            if cfg.reward_kind == "rl-weno":
                ref = [
                    [u[qf][c] - (ref_fhat[qf][c + 1] - ref_fhat[qf][c]) * lam for c in range(n)]
                    for qf in range(nq)
                ]
                physics.check_admissible(_values(ref), spec)
            else:
                ref = [[tape.constant(float(v)) for v in row] for row in ref_traj[t + 1]]
        except physics.PhysicsError:
            diverged, diverged_step = True, t
            break

        errs = []
        for c in range(n):
            e = vabs(u_next[0][c] - ref[0][c])
            for qf in range(1, nq):
                e = e + vabs(u_next[qf][c] - ref[qf][c])
            errs.append(e)
        step_r = []
        for i in range(n + 1):
            left = errs[i - 1] if i >= 1 else None
            right = errs[i] if i <= n - 1 else None
            if left is None:
                r = right * (-0.5)
            elif right is None:
                r = left * (-0.5)
            else:
                r = (left + right) * (-0.5)
            step_r.append(r)
            total = total + r

        action_nodes.append(step_actions)
        rewards.append(np.array([r.value for r in step_r]))
        u = u_next
        states.append(_values(u))
        state_nodes.append(np.array([[v.node for v in row] for row in u]))

    tape_data = TapeRollout(tape, total.node, state_nodes, action_nodes, param_nodes)
    return _finish_result(states, rewards, state0.dx, state0.x0, diverged, diverged_step, tape_data)


def tape_gradient_from_rollout(rollout: TapeRollout, params: PolicyParams) -> PolicyParams:
    """Parameter adjoints of the recorded return (cross-validation path)."""
    adj = backward(rollout.tape, rollout.return_node)
    grads = policy_mod.zeros_like_params(params)
    for name in policy_mod.PARAM_ORDER:
        getattr(grads, name)[...] = adj[rollout.param_nodes[name]]
    return grads


def policy_solve(
    pol,
    state0: ConservedState1D,
    spec: EquationSpec,
    dt: float,
    steps: int,
    boundary: str = "outflow",
    eps: float = weno.EPS_DEFAULT,
    snapshot_every: int = 0,
) -> tuple[weno.Trajectory, float]:
    """Inference rollout of a policy object, mirroring ``weno_solve``.

    Also tracks the largest absolute deviation of any emitted weight from the
    classical smoothness-indicator weight over the whole run; for the
    :class:`WenoOracle` this is exactly zero.
    """
    q = state0.q.copy()
    traj = weno.Trajectory([0.0], [ConservedState1D(q.copy(), state0.dx, state0.x0)])
    max_dev = 0.0
    for k in range(steps):
        try:
            physics.check_admissible(q, spec)
            data = weno.split_stencils(q, spec, boundary)
            actions = pol.act(data.stencils)
            omega = weno.weno_weights(weno.smoothness_indicators(data.stencils), eps)
            max_dev = max(max_dev, float(np.max(np.abs(actions - omega))))
            fhat = weno.combine_candidates(weno.candidate_values(data.stencils), actions)
            q = q - (dt / state0.dx) * (fhat[:, 1:] - fhat[:, :-1])
            physics.check_admissible(q, spec)
        except physics.PhysicsError as exc:
            raise BlowUpError(str(exc), step=k) from exc
        if snapshot_every and (k + 1) % snapshot_every == 0 and k + 1 != steps:
            traj.times.append((k + 1) * dt)
            traj.states.append(ConservedState1D(q.copy(), state0.dx, state0.x0))
    if steps > 0:
        traj.times.append(steps * dt)
        traj.states.append(ConservedState1D(q, state0.dx, state0.x0))
    return traj, max_dev


# ---------------------------------------------------------------------------
# 2D extension: dimension-by-dimension sweeps with the same 1D machinery
# ---------------------------------------------------------------------------

def _sweep_fluxes(q_ext, flux_arr, alpha, pol) -> np.ndarray:
    """Interface fluxes along the last axis of an extended state block."""
    split = weno.lf_split(flux_arr, q_ext, alpha)
    stencils = weno.interface_stencils(split)
    actions = pol.act(stencils)
    return weno.combine_candidates(weno.candidate_values(stencils), actions)


def solve_2d(
    pol,
    state0: ConservedState2D,
    spec: EquationSpec,
    dt: float,
    steps: int,
    boundary: str = "periodic",
    snapshot_every: int = 0,
) -> tuple[list[float], list[ConservedState2D]]:
    """March the 2D Euler system with per-direction sweeps of the 1D scheme.

    Each step reconstructs x-direction fluxes row-by-row and y-direction
    fluxes column-by-column (both fully batched), then applies a single
    unsplit conservative update. ``pol`` may be a :class:`WenoOracle` or an
    :class:`MLPPolicy`; the same 1D policy scores every directional stencil.
    """
    if spec.kind != "euler2d":
        raise physics.PhysicsError(f"solve_2d needs the 2D Euler system, got {spec.kind}")
    q = state0.q.copy()
    times, snaps = [0.0], [state0.copy()]
    for k in range(steps):
        try:
            physics.check_admissible(q, spec)
            ax, ay = physics.max_wave_speed_2d(q, spec)
            ax, ay = max(ax, weno.ALPHA_FLOOR), max(ay, weno.ALPHA_FLOOR)
            weno._check_cfl(ax, dt, state0.dx)
            weno._check_cfl(ay, dt, state0.dy)

            qx = weno.boundary_extend(q, boundary)  # extend along x
            fhx = _sweep_fluxes(qx, physics.euler2d_flux_x(qx, spec.gamma), ax, pol)
            div_x = (fhx[..., 1:] - fhx[..., :-1]) / state0.dx

            qt = np.ascontiguousarray(q.transpose(0, 2, 1))  # y last
            qy = weno.boundary_extend(qt, boundary)
            fhy = _sweep_fluxes(qy, physics.euler2d_flux_y(qy, spec.gamma), ay, pol)
            div_y = ((fhy[..., 1:] - fhy[..., :-1]) / state0.dy).transpose(0, 2, 1)

            q = q - dt * (div_x + div_y)
            physics.check_admissible(q, spec)
        except physics.PhysicsError as exc:
            raise BlowUpError(str(exc), step=k) from exc
        if snapshot_every and (k + 1) % snapshot_every == 0 and k + 1 != steps:
            times.append((k + 1) * dt)
            snaps.append(ConservedState2D(q.copy(), state0.dx, state0.dy, state0.x0, state0.y0))
    times.append(steps * dt)
    snaps.append(ConservedState2D(q, state0.dx, state0.dy, state0.x0, state0.y0))
    return times, snaps


# ---------------------------------------------------------------------------
# Trace export
# ---------------------------------------------------------------------------

def write_run_summary(path, result: EpisodeResult) -> None:
    """Plain-text key-value summary of an episode."""
    lines = [
        f"return = {result.episode_return:.17g}",
        f"diverged = {'true' if result.diverged else 'false'}",
        f"diverged_step = {result.diverged_step if result.diverged_step is not None else 'none'}",
        f"steps_completed = {len(result.system_rewards)}",
        "step_rewards = " + " ".join(f"{r:.17g}" for r in result.system_rewards),
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
