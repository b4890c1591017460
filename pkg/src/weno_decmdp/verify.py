"""Self-checks of the structural invariants, runnable from the CLI.

Each check is independent, prints a margin (how far from its threshold the
observed worst case landed), and is deliberately cheap: the whole battery is
meant to run in well under a minute. The checks are the same ones the test
suite relies on; the CLI exposes them so a built artifact can be probed
without a test framework present.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import env, physics, training, weno
from . import policy as policy_mod
from .autodiff import backward
from .physics import ConservedState1D, EquationSpec


@dataclass
class PropertyResult:
    name: str
    passed: bool
    observed: float
    threshold: float
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: observed {self.observed:.3e} vs threshold {self.threshold:.3e} ({self.detail})"


def _random_stencils(rng: np.random.Generator, count: int) -> np.ndarray:
    """Heavy-tailed random stencils: mixes smooth, kinked, and huge scales."""
    base = rng.normal(size=(count, 3))
    scales = 10.0 ** rng.uniform(-6, 6, size=(count, 1))
    return base * scales


def check_simplex(seed: int = 0) -> PropertyResult:
    """Policy outputs and classical weights stay on the simplex (1e5 stencils)."""
    rng = np.random.default_rng(seed)
    raw = _random_stencils(rng, 100_000)
    params = policy_mod.init_params(seed)
    actions, _ = policy_mod.act_stencils(params, raw)
    omega = weno.weno_weights(weno.smoothness_indicators(raw))
    worst = 0.0
    for arr in (actions, omega):
        worst = max(worst, float(np.max(np.abs(arr.sum(axis=-1) - 1.0))))
        # Saturated weights may round to exactly 0.0 or 1.0; only excursions
        # outside the closed interval are violations.
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            worst = max(worst, 1.0)
    return PropertyResult("simplex", worst <= 1e-12, worst, 1e-12, "max |sum - 1| over 1e5 policy + classical weights")


def check_conservation(seed: int = 0) -> PropertyResult:
    """Periodic-domain totals stay constant over 500 steps (any actions)."""
    rng = np.random.default_rng(seed)
    n, dt, steps = 64, 1e-3, 500
    x = (np.arange(n) + 0.5) / n
    worst = 0.0

    bspec = EquationSpec("burgers1d")
    q = (0.5 + 0.25 * np.sin(2 * np.pi * x))[None, :]
    total0 = q.sum(axis=1)
    traj = weno.weno_solve(ConservedState1D(q, 1.0 / n), bspec, dt, steps=steps, boundary="periodic")
    drift = np.abs(traj.final.q.sum(axis=1) - total0) / np.abs(total0)
    worst = max(worst, float(drift.max()))

    espec = EquationSpec("euler1d")
    rho = 1.0 + 0.2 * np.sin(2 * np.pi * x)
    qe = physics.primitive_to_conserved(rho, np.full(n, 0.1), np.ones(n), espec.gamma)
    total0 = qe.sum(axis=1)
    pol = env.MLPPolicy(policy_mod.init_params(rng.integers(1 << 30)))
    traj2, _ = env.policy_solve(pol, ConservedState1D(qe, 1.0 / n), espec, dt, steps, boundary="periodic")
    drift = np.abs(traj2.final.q.sum(axis=1) - total0) / np.abs(total0)
    worst = max(worst, float(drift.max()))
    return PropertyResult(
        "conservation", worst <= 1e-10, worst, 1e-10, "max relative drift, periodic Burgers (classical) + Euler (policy)"
    )


def check_constant_state(seed: int = 0) -> PropertyResult:
    """Uniform states are exact fixed points, classical or any agent weights."""
    worst = 0.0
    espec = EquationSpec("euler1d")
    qe = physics.primitive_to_conserved(np.full(16, 1.0), np.full(16, 0.3), np.full(16, 2.0), espec.gamma)
    stepped = weno.weno_step_q(qe, 1.0 / 16, espec, 1e-3)
    worst = max(worst, float(np.max(np.abs(stepped - qe))))

    bspec = EquationSpec("burgers1d")
    qb = np.full((1, 16), 0.7)
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(1, 17, 2, 2))
    e = np.exp(logits)
    actions = e / e.sum(axis=-1, keepdims=True)
    obs = env.observe(qb, bspec)
    fhat = env.apply_actions(obs, actions)
    stepped_b = env.transition(ConservedState1D(qb, 1.0 / 16), fhat, 1e-3, bspec).q
    worst = max(worst, float(np.max(np.abs(stepped_b - qb))))
    return PropertyResult("constant", worst == 0.0, worst, 0.0, "max |change| after one step of a uniform state")


def _fd_coordinate(params: policy_mod.PolicyParams, cfg: env.EpisodeConfig, state0, ref, idx: int, h: float) -> float:
    vec = policy_mod.params_to_vector(params)
    vals = []
    for sign in (+1.0, -1.0):
        shifted = vec.copy()
        shifted[idx] += sign * h
        p = policy_mod.vector_to_params(shifted, params.hidden)
        fwd = env.episode_forward(p, cfg, state0, ref, keep_caches=False)
        vals.append(fwd.episode_return)
    return (vals[0] - vals[1]) / (2.0 * h)


def check_grad(seed: int = 0) -> PropertyResult:
    """Fast-engine gradient vs central differences on a small Burgers episode."""
    spec = EquationSpec("burgers1d")
    n = 8
    x = (np.arange(n) + 0.5) / n
    custom = (0.4 + 0.2 * np.sin(2 * np.pi * x))[None, :]
    cfg = env.EpisodeConfig(spec, "custom", n, dt=5e-3, steps=3, boundary="periodic", reward_kind="rl-weno")
    state0 = env.initial_state(cfg, custom=custom)
    params = policy_mod.init_params(seed, hidden=8)
    result = training.bptts_gradient(params, cfg, clip_norm=None, state0=state0)
    gvec = policy_mod.params_to_vector(result.grads)
    rng = np.random.default_rng(seed)
    coords = rng.choice(gvec.size, size=10, replace=False)
    worst = 0.0
    for idx in coords:
        fd = _fd_coordinate(params, cfg, state0, None, int(idx), 1e-6)
        rel = abs(gvec[idx] - fd) / (abs(fd) + 1e-12)
        worst = max(worst, rel)
    return PropertyResult("grad", worst < 1e-4, worst, 1e-4, "max relative error over 10 coordinates vs h=1e-6 differences")


def check_scope(seed: int = 0) -> PropertyResult:
    """Adjoints vanish outside the k-step light cone (stencil radius 2).

    Uses the outflow boundary so plain index distance is the right metric
    (under periodic wrapping the cone itself wraps). The wave-speed bound of
    the flux splitting is a global maximum, so its gradient couples every
    cell to the argmax cell; the initial state pins that maximum at the left
    edge and the probes stay to its right, where the cone structure is
    exact.
    """
    spec = EquationSpec("burgers1d")
    n, steps = 24, 3
    x = (np.arange(n) + 0.5) / n
    u0 = 0.4 + 0.1 * np.sin(2 * np.pi * x)
    u0[0] = 0.95  # pinned wave-speed maximum, far from every probed cone
    cfg = env.EpisodeConfig(spec, "custom", n, dt=5e-3, steps=steps, boundary="outflow", reward_kind="rl-weno")
    state0 = env.initial_state(cfg, custom=u0[None, :])
    params = policy_mod.init_params(seed, hidden=4)
    res = env.run_episode(env.MLPPolicy(params), cfg, mode="tape", state0=state0)
    td = res.tape_data
    radius = 2  # one-step stencil half-width
    worst = 0.0
    checked = 0
    for t in (steps,):
        for c in (10, 16, n - 1):
            adj = backward(td.tape, int(td.state_nodes[t][0, c]))
            for k in range(1, min(3, t) + 1):
                act_ids = td.action_nodes[t - k]
                for i in range(8, act_ids.shape[1]):
                    if abs(c - i) > k * radius:
                        worst = max(worst, float(np.max(np.abs(adj[act_ids[:, i]]))))
                        checked += 1
    detail = f"max |adjoint| outside the k-step cone, k <= 3, {checked} action sites"
    return PropertyResult("scope", worst == 0.0, worst, 0.0, detail)


def check_linear_exactness(seed: int = 0) -> PropertyResult:
    """Both sub-stencil candidates agree on linear data (coefficient probe).

    On a stencil (a, a+d, a+2d) each candidate must reproduce the linear
    interface value a + 1.5*d; a corrupted reconstruction coefficient breaks
    this immediately.
    """
    rng = np.random.default_rng(seed)
    a = rng.normal(size=1000)
    d = rng.normal(size=1000)
    stencils = np.stack([a, a + d, a + 2 * d], axis=-1)
    cand = weno.candidate_values(stencils)
    expected = a + 1.5 * d
    scale = np.maximum(np.abs(expected), 1.0)
    worst = float(np.max(np.abs(cand - expected[:, None]) / scale[:, None]))
    return PropertyResult("linear", worst <= 1e-12, worst, 1e-12, "max relative candidate error on linear stencils")


def check_observability(seed: int = 0) -> PropertyResult:
    """The union of agent observations pins down every cell value."""
    rng = np.random.default_rng(seed)
    spec = EquationSpec("euler1d")
    n = 32
    rho = 1.0 + 0.5 * rng.random(n)
    u = rng.normal(scale=0.3, size=n)
    p = 0.5 + rng.random(n)
    q = physics.primitive_to_conserved(rho, u, p, spec.gamma)
    obs = env.observe(q, spec)
    rec = env.reconstruct_cells(obs)
    worst = float(np.max(np.abs(rec - q) / np.maximum(np.abs(q), 1.0)))
    return PropertyResult("observability", worst <= 1e-12, worst, 1e-12, "max relative state reconstruction error")


def check_reward_zero(seed: int = 0) -> PropertyResult:
    """The classical-weight oracle collects exactly zero reward everywhere."""
    spec = EquationSpec("euler1d")
    cfg = env.EpisodeConfig(spec, "sod", 64, dt=1e-3, steps=50, reward_kind="rl-weno")
    res = env.run_episode(env.WenoOracle(), cfg)
    worst = float(np.max(np.abs(res.rewards))) if res.rewards.size else 1.0
    ok = worst == 0.0 and res.episode_return == 0.0 and not res.diverged
    return PropertyResult("reward-zero", ok, worst, 0.0, "max |reward| of the oracle policy under the moving reference")


def check_decentralized(seed: int = 0) -> PropertyResult:
    """One agent's action recomputed from its slice alone is bit-identical."""
    rng = np.random.default_rng(seed)
    params = policy_mod.init_params(seed)
    raw = _random_stencils(rng, 257)
    x, _ = policy_mod.normalize_stencil(raw)
    full, _ = policy_mod.forward_batch(params, x)
    worst = 0.0
    for i in (0, 100, 256):
        solo, _ = policy_mod.forward_batch(params, x[i : i + 1])
        if not np.array_equal(solo[0], full[i]):
            worst = max(worst, float(np.max(np.abs(solo[0] - full[i]))))
    return PropertyResult("decentralized", worst == 0.0, worst, 0.0, "batch-vs-solo action difference (must be bitwise 0)")


CHECKS = {
    "simplex": check_simplex,
    "conservation": check_conservation,
    "constant": check_constant_state,
    "grad": check_grad,
    "scope": check_scope,
    "linear": check_linear_exactness,
    "observability": check_observability,
    "reward-zero": check_reward_zero,
    "decentralized": check_decentralized,
}


def run_checks(only: list[str] | None = None, seed: int = 0) -> list[PropertyResult]:
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown properties {unknown}; available: {sorted(CHECKS)}")
    return [CHECKS[name](seed) for name in names]
