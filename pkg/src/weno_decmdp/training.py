"""Training and evaluation of the shared interface policy.

The trainer follows the deterministic-policy-gradient-through-the-simulator
recipe: roll an episode, differentiate the (exact, deterministic) return
back through every step and every interface, and take an Adam ascent step on
the shared parameters. One episode per update, no replay, no critic, no
sampling noise — with a fixed seed the whole run is bit-reproducible.

Evaluation rolls the trained policy and the classical scheme side by side,
compares both against the analytical solution where one exists, and reports
calibrated L2 errors plus the largest deviation of any emitted weight from
the classical one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import env, physics, weno
from . import policy as policy_mod
from .config import Config, load_defaults
from .physics import ConservedState1D, EquationSpec
from .policy import PolicyParams


@dataclass
class TrainConfig:
    """Budget and hyperparameters wrapped around one episode setup."""

    episode: env.EpisodeConfig
    episodes: int
    lr: float = 3e-4
    lr_final: float | None = None  # cosine-anneal toward this rate when set
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    clip_norm: float | None = 1.0
    checkpoint_every: int = 0  # 0 = only at exit
    seed: int = 0
    hidden: int = policy_mod.HIDDEN_DEFAULT
    engine: str = "fast"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.lr_final is not None and not 0.0 <= self.lr_final <= self.lr:
            raise ValueError(f"final learning rate must lie in [0, lr], got {self.lr_final}")
        if self.episodes < 1:
            raise ValueError(f"episodes must be >= 1, got {self.episodes}")
        if self.engine not in ("fast", "tape"):
            raise ValueError(f"engine must be 'fast' or 'tape', got {self.engine!r}")

    def lr_at(self, episode: int) -> float:
        """Learning rate for one episode: constant, or a half-cosine ramp
        from ``lr`` down to ``lr_final`` over the whole budget."""
        if self.lr_final is None:
            return self.lr
        frac = episode / max(self.episodes - 1, 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + math.cos(math.pi * frac))


@dataclass
class AdamState:
    """Bias-corrected moment estimates over the flattened parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(
    vec: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One Adam ascent step on the return; mutates ``state``, returns new vector."""
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    return vec + lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class GradientResult:
    episode_return: float
    grads: PolicyParams
    grad_norm: float  # before clipping
    clipped: bool
    diverged: bool


def bptts_gradient(
    params: PolicyParams,
    cfg: env.EpisodeConfig,
    clip_norm: float | None = None,
    engine: str = "fast",
    state0: ConservedState1D | None = None,
    ref_traj: np.ndarray | None = None,
) -> GradientResult:
    """Exact gradient of the episode return w.r.t. the shared parameters.

    ``engine="fast"`` uses the vectorized forward plus the hand-written
    backward; ``engine="tape"`` replays the episode on the scalar autodiff
    tape (small problems only). Both differentiate the identical composition,
    so their results agree to rounding — tests rely on that.

    Diverged episodes report the flat penalty return but the gradient of the
    completed prefix, which is the only finite signal available.
    """
    if state0 is None:
        state0 = env.initial_state(cfg)
    if ref_traj is None and cfg.reward_kind != "rl-weno":
        ref_traj = env.reference_trajectory(cfg, state0)

    if engine == "fast":
        fwd = env.episode_forward(params, cfg, state0, ref_traj)
        grads = env.episode_backward(params, cfg, fwd)
        ret, diverged = fwd.episode_return, fwd.diverged
    elif engine == "tape":
        pol = env.MLPPolicy(params, cfg.normalize_inputs)
        res = env.run_episode(pol, cfg, mode="tape", state0=state0, ref_traj=ref_traj)
        grads = env.tape_gradient_from_rollout(res.tape_data, params)
        ret, diverged = res.episode_return, res.diverged
    else:
        raise ValueError(f"unknown gradient engine {engine!r}")

    gvec = policy_mod.params_to_vector(grads)
    norm = float(np.linalg.norm(gvec))
    clipped = False
    if clip_norm is not None and norm > clip_norm:
        grads = policy_mod.vector_to_params(gvec * (clip_norm / norm), params.hidden)
        clipped = True
    return GradientResult(ret, grads, norm, clipped, diverged)


@dataclass
class TrainResult:
    params: PolicyParams
    curve: np.ndarray  # per-episode return
    log_rows: list[dict]
    aborted: bool
    abort_reason: str | None
    checkpoint_paths: list[str]


TRAIN_LOG_HEADER = ("episode", "return", "grad_norm", "clipped", "diverged")


def write_train_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAIN_LOG_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def _checkpoint_echo(tcfg: TrainConfig) -> dict[str, str]:
    ep = tcfg.episode
    echo = {
        "equation": ep.spec.kind,
        "gamma": f"{ep.spec.gamma:g}",
        "ic": ep.ic_name,
        "n_cells": str(ep.n_cells),
        "dt": f"{ep.dt:g}",
        "steps": str(ep.steps),
        "boundary": ep.boundary,
        "reward": ep.reward_kind,
        "episodes": str(tcfg.episodes),
        "lr": f"{tcfg.lr:g}",
        "seed": str(tcfg.seed),
    }
    if tcfg.lr_final is not None:
        echo["lr_final"] = f"{tcfg.lr_final:g}"
    return echo


def train(tcfg: TrainConfig, out_dir: str | Path | None = None) -> TrainResult:
    """Run the full training loop; optionally write checkpoints and a log.

    Stops early (``aborted=True``) when more than half of the trailing 100
    episodes diverged — at that point the parameters are not producing a
    usable scheme and further updates chase the flat penalty return.
    """
    ep_cfg = tcfg.episode
    params = policy_mod.init_params(tcfg.seed, tcfg.hidden)
    vec = policy_mod.params_to_vector(params)
    adam = AdamState.zeros(vec.size)
    state0 = env.initial_state(ep_cfg)
    ref_traj = env.reference_trajectory(ep_cfg, state0)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    curve: list[float] = []
    rows: list[dict] = []
    recent_diverged: list[bool] = []
    checkpoints: list[str] = []
    aborted, abort_reason = False, None

    def save(name: str) -> None:
        if out_dir is None:
            return
        path = out_dir / name
        policy_mod.save_checkpoint(path, params, ep_cfg.normalize_inputs, _checkpoint_echo(tcfg))
        checkpoints.append(str(path))

    for episode in range(tcfg.episodes):
        result = bptts_gradient(
            params, ep_cfg, clip_norm=tcfg.clip_norm, engine=tcfg.engine, state0=state0, ref_traj=ref_traj
        )
        vec = adam_step(
            vec, policy_mod.params_to_vector(result.grads), adam, tcfg.lr_at(episode), tcfg.beta1, tcfg.beta2, tcfg.eps_adam
        )
        params = policy_mod.vector_to_params(vec, tcfg.hidden)

        curve.append(result.episode_return)
        rows.append(
            {
                "episode": episode,
                "return": f"{result.episode_return:.17g}",
                "grad_norm": f"{result.grad_norm:.17g}",
                "clipped": int(result.clipped),
                "diverged": int(result.diverged),
            }
        )
        recent_diverged.append(result.diverged)
        if len(recent_diverged) > 100:
            recent_diverged.pop(0)
        if tcfg.checkpoint_every and (episode + 1) % tcfg.checkpoint_every == 0:
            save(f"checkpoint_ep{episode + 1:06d}.txt")
        if len(recent_diverged) == 100 and sum(recent_diverged) > 50:
            aborted = True
            abort_reason = (
                f"{sum(recent_diverged)} of the last 100 episodes diverged "
                f"(stopped after episode {episode})"
            )
            break

    save("checkpoint.txt")
    if out_dir is not None:
        write_train_log(out_dir / "train_log.csv", rows)
    return TrainResult(params, np.array(curve), rows, aborted, abort_reason, checkpoints)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

L2_METRIC_NOTE = "sqrt(sum_j (rho_j - rho_ref_j)^2 * dx) * calibration, density field only"


def l2_density_error(qa: np.ndarray, qb: np.ndarray, dx: float, calibration: float = 1.0) -> float:
    """Cell-width-weighted L2 distance between the first (density) fields."""
    diff = qa[0] - qb[0]
    return float(np.sqrt(np.sum(diff * diff) * dx) * calibration)


@dataclass
class EvalReport:
    ic: str
    equation: str
    n_cells: int
    dt: float
    t_final: float
    l2_agent_weno: float
    l2_weno_exact: float
    l2_agent_exact: float
    max_action_dev: float
    calibration: float
    metric: str
    config_sha256: str
    diverged: bool = False
    # Final density profiles (keys x/agent/weno/exact), kept only on request;
    # the CLI writes them to CSV for the overlay figures.
    profiles: dict[str, np.ndarray] | None = None

    def lines(self) -> list[str]:
        return [
            f"ic = {self.ic}",
            f"equation = {self.equation}",
            f"n_cells = {self.n_cells}",
            f"dt = {self.dt:.17g}",
            f"t_final = {self.t_final:.17g}",
            f"l2_agent_vs_weno = {self.l2_agent_weno:.17g}",
            f"l2_weno_vs_exact = {self.l2_weno_exact:.17g}",
            f"l2_agent_vs_exact = {self.l2_agent_exact:.17g}",
            f"max_action_deviation = {self.max_action_dev:.17g}",
            f"l2_calibration = {self.calibration:.17g}",
            f"l2_metric = {self.metric}",
            f"config_sha256 = {self.config_sha256}",
            f"diverged = {'true' if self.diverged else 'false'}",
        ]


def exact_final_state(
    ic_name: str, n_cells: int, t: float, spec: EquationSpec, conf: Config
) -> np.ndarray | None:
    """Analytical solution on the grid at time t, or None if unavailable."""
    if ic_name in physics.SHOCK_TUBE_NAMES:
        return physics.exact_shock_tube_state(ic_name, n_cells, t, spec, conf).q
    if ic_name == "burgers-rarefaction":
        u_l = conf.get_floats("ic.burgers-rarefaction.left")[0]
        u_r = conf.get_floats("ic.burgers-rarefaction.right")[0]
        x_d = conf.get_float("ic.burgers-rarefaction.x_d")
        state0 = physics.initial_condition(ic_name, n_cells, spec, conf)
        return physics.burgers_exact(u_l, u_r, x_d, state0.cell_centers, t)[None, :]
    return None


def eval_horizon(ic_name: str, conf: Config) -> tuple[float, float]:
    """(dt, t_final) used for Table-style evaluation of a named IC."""
    if ic_name == "burgers-rarefaction":
        return conf.get_float("eval.burgers.dt"), conf.get_float("eval.burgers.t_final")
    return conf.get_float("eval.dt"), conf.get_float(f"eval.t_final.{ic_name}")


def evaluate(
    params: PolicyParams | None,
    ic_name: str,
    n_cells: int,
    spec: EquationSpec,
    conf: Config | None = None,
    dt: float | None = None,
    t_final: float | None = None,
    boundary: str = "outflow",
    normalize: bool = True,
    keep_profiles: bool = False,
) -> EvalReport:
    """Side-by-side rollout of policy vs classical scheme vs exact solution.

    ``params=None`` substitutes the classical-weight oracle for the network,
    in which case the agent-vs-WENO error is exactly zero by construction.
    """
    conf = conf or load_defaults()
    if dt is None or t_final is None:
        d_dt, d_tf = eval_horizon(ic_name, conf)
        dt = dt if dt is not None else d_dt
        t_final = t_final if t_final is not None else d_tf
    steps = int(round(t_final / dt))
    calibration = conf.get_float("eval.l2_calibration", 1.0)

    state0 = physics.initial_condition(ic_name, n_cells, spec, conf)
    pol = env.WenoOracle() if params is None else env.MLPPolicy(params, normalize)

    diverged = False
    try:
        agent_traj, max_dev = env.policy_solve(pol, state0, spec, dt, steps, boundary)
        q_agent = agent_traj.final.q
    except weno.BlowUpError:
        diverged = True
        q_agent, max_dev = None, math.nan
    weno_traj = weno.weno_solve(state0, spec, dt, steps=steps, boundary=boundary)
    q_weno = weno_traj.final.q
    q_exact = exact_final_state(ic_name, n_cells, t_final, spec, conf)

    dx = state0.dx
    l2_aw = math.nan if diverged else l2_density_error(q_agent, q_weno, dx, calibration)
    l2_we = math.nan if q_exact is None else l2_density_error(q_weno, q_exact, dx, calibration)
    l2_ae = math.nan if (q_exact is None or diverged) else l2_density_error(q_agent, q_exact, dx, calibration)
    profiles = None
    if keep_profiles:
        profiles = {"x": state0.cell_centers, "weno": q_weno[0]}
        if not diverged:
            profiles["agent"] = q_agent[0]
        if q_exact is not None:
            profiles["exact"] = q_exact[0]
    return EvalReport(
        ic=ic_name,
        equation=spec.kind,
        n_cells=n_cells,
        dt=dt,
        t_final=t_final,
        l2_agent_weno=l2_aw,
        l2_weno_exact=l2_we,
        l2_agent_exact=l2_ae,
        max_action_dev=max_dev,
        calibration=calibration,
        metric=L2_METRIC_NOTE,
        config_sha256=conf.sha256,
        diverged=diverged,
        profiles=profiles,
    )


def write_eval_table(path, reports: list[EvalReport]) -> None:
    """CSV error table: one row per (ic, N), agent and classical columns."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["ic", "n_cells", "l2_agent_vs_exact", "l2_weno_vs_exact", "l2_agent_vs_weno", "max_action_deviation"]
        )
        for r in reports:
            writer.writerow(
                [
                    r.ic,
                    r.n_cells,
                    f"{r.l2_agent_exact:.6g}",
                    f"{r.l2_weno_exact:.6g}",
                    f"{r.l2_agent_weno:.6g}",
                    f"{r.max_action_dev:.6g}",
                ]
            )


def write_eval_report(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(report.lines()) + "\n")
