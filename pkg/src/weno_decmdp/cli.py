"""Batch front end: classical solves, training runs, evaluation tables, checks.

Every command resolves its settings with flag > config-file > preset >
built-in precedence, creates the output directory, writes ``manifest.cfg``
there before producing anything else, and rewrites the manifest at the end
with the output listing and wall-clock time. The manifest doubles as a config
file: passing it back through ``--config`` reproduces the run.

Figures are rendered by reading back the CSVs the command just wrote, never
from in-memory arrays, so the CSV files stay the single source of truth and
deleting every image loses nothing.

Exit codes: 0 success, 1 failed verification property, 2 configuration
error, 3 solver blow-up or persistently diverging training.
"""

from __future__ import annotations

import csv
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__, env, physics, training
from . import policy as policy_mod
from . import verify as verify_mod
from . import weno
from .config import Config, ConfigError, load_config_file, load_defaults
from .physics import EquationSpec

EQUATION_ALIASES = {
    "euler": "euler1d",
    "euler1d": "euler1d",
    "burgers": "burgers1d",
    "burgers1d": "burgers1d",
    "euler2d": "euler2d",
}

# Bundles of training settings selectable with --preset. "paper" is the
# full-scale reference configuration; "desk" finishes on one core in well
# under an hour and is what the equivalence/ordering tests use.
PRESETS: dict[str, dict[str, str]] = {
    "paper": {
        "train.n": "128",
        "train.dt": "1e-4",
        "train.steps": "1000",
        "train.episodes": "10000",
        "train.lr": "3e-4",
    },
    "desk": {
        "train.n": "64",
        "train.dt": "1e-3",
        "train.steps": "100",
        "train.episodes": "600",
        "train.lr": "1e-2",
    },
}


def _equation(name: str) -> str:
    try:
        return EQUATION_ALIASES[name]
    except KeyError:
        raise ConfigError(f"unknown equation {name!r}; pick from {sorted(set(EQUATION_ALIASES))}") from None


def _flag_str(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolve_config(config_path: str | None, preset: str | None, flags: dict[str, object]) -> Config:
    """Built-in defaults <- preset <- config file <- explicit flags."""
    conf = load_defaults()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; pick from {sorted(PRESETS)}")
        conf = conf.overlay(PRESETS[preset])
    if config_path is not None:
        conf = conf.overlay(load_config_file(config_path).values)
    conf = conf.overlay({k: _flag_str(v) for k, v in flags.items() if v is not None})
    return conf


def _out_dir(flag_value: str | None, command: str) -> Path:
    if flag_value:
        out = Path(flag_value)
    elif os.environ.get("WENO_DECMDP_OUT"):
        out = Path(os.environ["WENO_DECMDP_OUT"])
    else:
        out = Path("runs") / command
    out.mkdir(parents=True, exist_ok=True)
    return out


class Manifest:
    """Run manifest, written before any output and finalized afterwards.

    Serialized in the config format with all settings expanded, so the file
    can be handed straight back to ``--config``. Metadata lives under
    ``manifest.*`` keys, which the settings dump strips to keep round trips
    stable.
    """

    def __init__(self, command: str, conf: Config, out_dir: Path, seed: int = 0):
        self.command = command
        self.conf = conf
        self.out_dir = out_dir
        self.seed = seed
        self.t0 = time.monotonic()
        self.outputs: list[str] = []

    def record(self, name: str) -> Path:
        """Register ``name`` as an output file and return its full path."""
        if name not in self.outputs:
            self.outputs.append(name)
        return self.out_dir / name

    def write(self, final: bool = False) -> Path:
        lines = [
            "# weno-decmdp run manifest; pass this file to --config to reproduce the run.",
            f"manifest.command = {self.command}",
            f"manifest.version = {__version__}",
            f"manifest.seed = {self.seed}",
            f"manifest.out_dir = {self.out_dir}",
            f"manifest.defaults_sha256 = {self.conf.sha256}",
        ]
        if final:
            lines.append(f"manifest.wall_clock_s = {time.monotonic() - self.t0:.3f}")
            for i, name in enumerate(self.outputs):
                lines.append(f"manifest.outputs.{i} = {name}")
        lines.append("")
        lines.append("# resolved settings")
        for key in sorted(self.conf.values):
            if not key.startswith("manifest."):
                lines.append(f"{key} = {self.conf.values[key]}")
        path = self.out_dir / "manifest.cfg"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _write_kv(path: Path, pairs: list[tuple[str, object]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in pairs:
            fh.write(f"{key} = {value}\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(tok) for tok in row] for row in reader if row]
    return header, np.array(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# Plotting (always from CSV files on disk)
# ---------------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def line_plot(csv_path: Path, out_path: Path, title: str, ylabel: str = "") -> None:
    """SVG line plot: first CSV column on x, every other column as a line."""
    plt = _pyplot()
    header, data = _read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for j, name in enumerate(header[1:], start=1):
        ax.plot(data[:, 0], data[:, j], label=name, linewidth=1.1)
    ax.set_xlabel(header[0])
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(header) > 2:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def curve_plot(csv_paths: list[Path], labels: list[str], out_path: Path, window: int = 100) -> None:
    """Training-curve overlay (episode vs return) with a moving mean."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for path, label in zip(csv_paths, labels):
        header, data = _read_csv(path)
        ep, ret = data[:, header.index("episode")], data[:, header.index("return")]
        ax.plot(ep, ret, alpha=0.25, linewidth=0.6)
        if ep.size >= window:
            kernel = np.ones(window) / window
            smooth = np.convolve(ret, kernel, mode="valid")
            ax.plot(ep[window - 1 :], smooth, label=f"{label} (mean over {window})", linewidth=1.4)
        else:
            ax.plot(ep, ret, label=label, linewidth=1.0)
    ax.set_xlabel("episode")
    ax.set_ylabel("return")
    ax.set_title("training return")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def heatmap_plot(csv_path: Path, out_path: Path, title: str) -> None:
    """PNG heatmap from a long-format x,y,value CSV."""
    plt = _pyplot()
    header, data = _read_csv(csv_path)
    x, y, v = data[:, 0], data[:, 1], data[:, 2]
    xs, ys = np.unique(x), np.unique(y)
    grid = np.full((ys.size, xs.size), np.nan)
    grid[np.searchsorted(ys, y), np.searchsorted(xs, x)] = v
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    im = ax.imshow(grid, origin="lower", extent=(xs.min(), xs.max(), ys.min(), ys.max()), cmap="viridis")
    fig.colorbar(im, ax=ax, label=header[2])
    ax.set_xlabel(header[0])
    ax.set_ylabel(header[1])
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@click.group()
@click.version_option(__version__)
def main():
    """Interface-agent WENO toolkit: solve, train, evaluate, verify."""


@main.command()
@click.option("--equation", default=None, help="euler (default) or burgers")
@click.option("--ic", "ic_name", default=None, help="initial condition name")
@click.option("--n", "n_cells", type=int, default=None, help="number of cells")
@click.option("--dt", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--t-final", type=float, default=None)
@click.option("--boundary", default=None, help="outflow (default) or periodic")
@click.option("--integrator", default=None, help="euler (default) or ssp-rk3")
@click.option("--eps", type=float, default=None, help="weight regularizer")
@click.option("--snapshot-every", type=int, default=None)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_flag", default=None, help="output directory")
def solve(equation, ic_name, n_cells, dt, steps, t_final, boundary, integrator, eps, snapshot_every, config_path, out_flag):
    """Classical WENO rollout: snapshot CSVs, a summary, and a profile plot."""
    try:
        conf = resolve_config(config_path, None, {
            "solve.equation": equation,
            "solve.ic": ic_name,
            "solve.n": n_cells,
            "solve.dt": dt,
            "solve.steps": steps,
            "solve.t_final": t_final,
            "solve.boundary": boundary,
            "solve.integrator": integrator,
            "solve.snapshot_every": snapshot_every,
            "weno.eps": eps,
        })
        _cmd_solve(conf, _out_dir(out_flag, "solve"))
    except (ConfigError, physics.PhysicsError, ValueError) as exc:
        _fail(2, str(exc))
    except weno.BlowUpError as exc:
        _fail(3, f"solver blow-up: {exc}")


def _cmd_solve(conf: Config, out_dir: Path) -> None:
    man = Manifest("solve", conf, out_dir)
    man.write()

    kind = _equation(conf.get_str("solve.equation", "euler"))
    if kind == "euler2d":
        raise ConfigError("solve covers the 1D systems; use `eval --equation euler2d` for the 2D run")
    spec = EquationSpec(kind, conf.get_float("gamma", 1.4))
    ic_name = conf.get_str("solve.ic")
    n_cells = conf.get_int("solve.n", 128)
    dt = conf.get_float("solve.dt", 1e-4)
    steps = conf.get_int("solve.steps", 0)
    t_final = conf.get_float("solve.t_final", 0.0)
    if steps <= 0 and t_final <= 0:
        raise ConfigError("need --steps >= 1 or --t-final > 0")
    if steps > 0 and t_final > 0:
        raise ConfigError("give either --steps or --t-final, not both")
    boundary = conf.get_str("solve.boundary", "outflow")
    integrator = conf.get_str("solve.integrator", "euler")
    eps = conf.get_float("weno.eps", weno.EPS_DEFAULT)
    snapshot_every = conf.get_int("solve.snapshot_every", 0)

    state0 = physics.initial_condition(ic_name, n_cells, spec, conf)
    traj = weno.weno_solve(
        state0,
        spec,
        dt,
        t_final=t_final if t_final > 0 else None,
        steps=steps if steps > 0 else None,
        boundary=boundary,
        eps=eps,
        snapshot_every=snapshot_every,
        integrator=integrator,
    )

    for k, state in enumerate(traj.states[:-1]):
        weno.write_snapshot_csv(man.record(f"snapshot_{k:04d}.csv"), state, spec)
    final_csv = man.record("final.csv")
    weno.write_snapshot_csv(final_csv, traj.final, spec)

    n_steps = steps if steps > 0 else int(round(t_final / dt))
    t_end = traj.times[-1]
    calibration = conf.get_float("eval.l2_calibration", 1.0)
    exact = training.exact_final_state(ic_name, n_cells, t_end, spec, conf)
    pairs: list[tuple[str, object]] = [
        ("command", "solve"),
        ("equation", spec.kind),
        ("ic", ic_name),
        ("n_cells", n_cells),
        ("dt", f"{dt:.17g}"),
        ("steps", n_steps),
        ("t_final", f"{t_end:.17g}"),
        ("boundary", boundary),
        ("integrator", integrator),
        ("l2_metric", training.L2_METRIC_NOTE),
        ("l2_calibration", f"{calibration:.17g}"),
    ]
    if exact is None:
        pairs.append(("l2_vs_exact", "none"))
    else:
        err = training.l2_density_error(traj.final.q, exact, state0.dx, calibration)
        pairs.append(("l2_vs_exact", f"{err:.17g}"))
    _write_kv(man.record("summary.txt"), pairs)

    line_plot(final_csv, man.record("profile.svg"), f"{ic_name} at t={t_end:g} (N={n_cells})")
    man.write(final=True)
    click.echo(f"solve finished: {len(traj.states)} snapshots in {out_dir}")


@main.command()
@click.option("--reward", default=None, type=click.Choice(sorted(env.REWARD_KINDS)))
@click.option("--preset", default=None, type=click.Choice(sorted(PRESETS)))
@click.option("--ic", "ic_name", default=None)
@click.option("--equation", default=None)
@click.option("--n", "n_cells", type=int, default=None)
@click.option("--dt", type=float, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--episodes", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--lr-final", type=float, default=None, help="cosine-anneal the rate down to this; < 0 disables")
@click.option("--seed", type=int, default=None)
@click.option("--hidden", type=int, default=None)
@click.option("--clip-norm", type=float, default=None, help="<= 0 disables clipping")
@click.option("--checkpoint-every", type=int, default=None)
@click.option("--engine", default=None, type=click.Choice(["fast", "tape"]))
@click.option("--boundary", default=None)
@click.option("--compare-logs", default=None, help="comma-separated train_log.csv paths; only draws the comparison figure")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_flag", default=None)
def train(reward, preset, ic_name, equation, n_cells, dt, steps, episodes, lr, lr_final, seed, hidden, clip_norm, checkpoint_every, engine, boundary, compare_logs, config_path, out_flag):
    """Optimize the shared policy; writes checkpoint, log CSV, reward curve."""
    try:
        conf = resolve_config(config_path, preset, {
            "train.reward": reward,
            "train.ic": ic_name,
            "train.equation": equation,
            "train.n": n_cells,
            "train.dt": dt,
            "train.steps": steps,
            "train.episodes": episodes,
            "train.lr": lr,
            "train.lr_final": lr_final,
            "train.seed": seed,
            "train.hidden": hidden,
            "train.clip_norm": clip_norm,
            "train.checkpoint_every": checkpoint_every,
            "train.engine": engine,
            "train.boundary": boundary,
            "train.compare_logs": compare_logs,
        })
        out_dir = _out_dir(out_flag, "train")
        if conf.get_str("train.compare_logs", ""):
            _cmd_train_compare(conf, out_dir)
        else:
            _cmd_train(conf, out_dir)
    except (ConfigError, physics.PhysicsError, policy_mod.CheckpointError, ValueError) as exc:
        _fail(2, str(exc))
    except weno.BlowUpError as exc:
        _fail(3, f"solver blow-up: {exc}")


def build_train_config(conf: Config) -> training.TrainConfig:
    """Resolved settings -> TrainConfig; single construction point for the
    command and for anything that wants 'exactly what --preset X trains'."""
    seed = conf.get_int("train.seed", 0)
    kind = _equation(conf.get_str("train.equation", "euler"))
    if kind == "euler2d":
        raise ConfigError("training runs on the 1D systems")
    spec = EquationSpec(kind, conf.get_float("gamma", 1.4))
    episode = env.EpisodeConfig(
        spec,
        conf.get_str("train.ic", "sod"),
        conf.get_int("train.n", 64),
        dt=conf.get_float("train.dt", 1e-3),
        steps=conf.get_int("train.steps", 100),
        boundary=conf.get_str("train.boundary", "outflow"),
        reward_kind=conf.get_str("train.reward", "rl-weno"),
        seed=seed,
        eps=conf.get_float("weno.eps", weno.EPS_DEFAULT),
        normalize_inputs=conf.get_bool("policy.normalize_inputs", True),
        config=conf,
    )
    clip = conf.get_float("train.clip_norm", 1.0)
    lr_final = conf.get_float("train.lr_final", -1.0)
    return training.TrainConfig(
        episode=episode,
        episodes=conf.get_int("train.episodes", int(PRESETS["desk"]["train.episodes"])),
        lr=conf.get_float("train.lr", float(PRESETS["desk"]["train.lr"])),
        lr_final=None if lr_final < 0 else lr_final,
        beta1=conf.get_float("train.beta1", 0.9),
        beta2=conf.get_float("train.beta2", 0.999),
        clip_norm=None if clip <= 0 else clip,
        checkpoint_every=conf.get_int("train.checkpoint_every", 0),
        seed=seed,
        hidden=conf.get_int("train.hidden", policy_mod.HIDDEN_DEFAULT),
        engine=conf.get_str("train.engine", "fast"),
    )


def _cmd_train(conf: Config, out_dir: Path) -> None:
    seed = conf.get_int("train.seed", 0)
    man = Manifest("train", conf, out_dir, seed)
    man.write()

    tcfg = build_train_config(conf)
    episode = tcfg.episode
    result = training.train(tcfg, out_dir)
    for path in result.checkpoint_paths:
        man.record(Path(path).name)
    log_csv = man.record("train_log.csv")
    curve_plot([log_csv], [episode.reward_kind], man.record("reward_curve.svg"))
    man.write(final=True)

    if result.aborted:
        _fail(3, f"training diverged persistently: {result.abort_reason}")
    final_mean = float(np.mean(result.curve[-min(100, result.curve.size):]))
    click.echo(f"train finished: {result.curve.size} episodes, final-100 mean return {final_mean:.6g}")


def _cmd_train_compare(conf: Config, out_dir: Path) -> None:
    man = Manifest("train", conf, out_dir, conf.get_int("train.seed", 0))
    man.write()
    paths = [Path(tok.strip()) for tok in conf.get_str("train.compare_logs").split(",") if tok.strip()]
    if not paths:
        raise ConfigError("train.compare_logs names no files")
    labels = []
    for path in paths:
        if not path.exists():
            raise ConfigError(f"training log {path} does not exist")
        label = path.stem
        sibling = path.parent / "manifest.cfg"
        if sibling.exists():
            sib = load_config_file(sibling)
            label = sib.get_str("train.reward", label)
        labels.append(label)
    curve_plot(paths, labels, man.record("comparison.svg"))
    man.write(final=True)
    click.echo(f"comparison figure over {len(paths)} logs written to {out_dir}")


@main.command(name="eval")
@click.option("--checkpoint", "checkpoint_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--oracle", is_flag=True, default=False, help="evaluate the classical weights instead of a checkpoint")
@click.option("--equation", default=None, help="euler (default), burgers, or euler2d")
@click.option("--ics", default=None, help="comma list for the comparison table")
@click.option("--ns", default=None, help="comma list of grid sizes for the table")
@click.option("--ic", "ic_name", default=None, help="single IC for burgers/euler2d runs")
@click.option("--n", "n_cells", type=int, default=None)
@click.option("--dt", type=float, default=None)
@click.option("--t-final", type=float, default=None)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_flag", default=None)
def eval_cmd(checkpoint_path, oracle, equation, ics, ns, ic_name, n_cells, dt, t_final, config_path, out_flag):
    """Error tables and generalization reports for a trained checkpoint."""
    try:
        conf = resolve_config(config_path, None, {
            "eval.checkpoint": checkpoint_path,
            "eval.oracle": oracle if oracle else None,
            "eval.equation": equation,
            "eval.ics": ics,
            "eval.ns": ns,
            "eval.ic": ic_name,
            "eval.n_override": n_cells,
            "eval.dt_override": dt,
            "eval.t_final_override": t_final,
        })
        code = _cmd_eval(conf, _out_dir(out_flag, "eval"))
    except (ConfigError, physics.PhysicsError, policy_mod.CheckpointError, ValueError) as exc:
        _fail(2, str(exc))
    except weno.BlowUpError as exc:
        _fail(3, f"solver blow-up: {exc}")
    if code:
        sys.exit(code)


def _load_eval_policy(conf: Config):
    """(params_or_None, normalize) for the checkpoint/oracle selection."""
    if conf.get_bool("eval.oracle", False):
        return None, True
    path = conf.get_str("eval.checkpoint", "")
    if not path:
        raise ConfigError("eval needs --checkpoint (or --oracle)")
    if not Path(path).exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    params, normalize, _ = policy_mod.load_checkpoint(path)
    return params, normalize


def _cmd_eval(conf: Config, out_dir: Path) -> int:
    man = Manifest("eval", conf, out_dir)
    man.write()
    params, normalize = _load_eval_policy(conf)
    kind = _equation(conf.get_str("eval.equation", "euler"))

    if kind == "euler1d":
        code = _eval_table(conf, man, params, normalize)
    elif kind == "burgers1d":
        code = _eval_burgers(conf, man, params, normalize)
    else:
        code = _eval_kelvin_helmholtz(conf, man, params, normalize)
    man.write(final=True)
    return code


def _profile_outputs(man: Manifest, report, tag: str) -> None:
    """Write the overlay profile CSV for one evaluation cell, then its plot."""
    prof = report.profiles
    header = ["x"] + [k for k in ("agent", "weno", "exact") if k in prof]
    rows = zip(prof["x"], *(prof[k] for k in header[1:]))
    csv_path = man.record(f"profile_{tag}.csv")
    _write_csv(csv_path, header, ([f"{v:.17g}" for v in row] for row in rows))
    line_plot(csv_path, man.record(f"profile_{tag}.svg"), tag, ylabel="density")


def _eval_table(conf: Config, man: Manifest, params, normalize: bool) -> int:
    spec = EquationSpec("euler1d", conf.get_float("gamma", 1.4))
    ics = [s.strip() for s in conf.get_str("eval.ics", "sod,sod2,lax,sonic-rarefaction").split(",") if s.strip()]
    ns = [int(s) for s in conf.get_str("eval.ns", "64,128,256,512").split(",") if s.strip()]
    dt = conf.get_float("eval.dt_override", 0.0) or None
    t_final = conf.get_float("eval.t_final_override", 0.0) or None

    reports = []
    for ic in ics:
        for n in ns:
            rep = training.evaluate(
                params, ic, n, spec, conf, dt=dt, t_final=t_final, normalize=normalize, keep_profiles=True
            )
            reports.append(rep)
            _profile_outputs(man, rep, f"{ic}_{n}")
            click.echo(
                f"{ic:>18s} N={n:<4d} agent-vs-exact {rep.l2_agent_exact:.4g}  "
                f"weno-vs-exact {rep.l2_weno_exact:.4g}  agent-vs-weno {rep.l2_agent_weno:.4g}"
            )
    training.write_eval_table(man.record("table.csv"), reports)
    return 3 if any(r.diverged for r in reports) else 0


def _eval_burgers(conf: Config, man: Manifest, params, normalize: bool) -> int:
    spec = EquationSpec("burgers1d")
    ic = conf.get_str("eval.ic", "burgers-rarefaction")
    n = conf.get_int("eval.n_override", 0) or conf.get_int("eval.burgers.n", 128)
    dt = conf.get_float("eval.dt_override", 0.0) or None
    t_final = conf.get_float("eval.t_final_override", 0.0) or None
    rep = training.evaluate(params, ic, n, spec, conf, dt=dt, t_final=t_final, normalize=normalize, keep_profiles=True)
    _profile_outputs(man, rep, f"{ic}_{n}")
    training.write_eval_report(man.record("burgers_report.txt"), rep)
    click.echo(
        f"burgers {ic} N={n}: agent-vs-weno {rep.l2_agent_weno:.4g}, weno-vs-exact {rep.l2_weno_exact:.4g}"
    )
    return 3 if rep.diverged else 0


def _density_csv(man: Manifest, state, tag: str) -> Path:
    nx = state.q.shape[2]
    ny = state.q.shape[1]
    xs = state.x0 + (np.arange(nx) + 0.5) * state.dx
    ys = state.y0 + (np.arange(ny) + 0.5) * state.dy
    rows = []
    for j in range(ny):
        for i in range(nx):
            rows.append((f"{xs[i]:.17g}", f"{ys[j]:.17g}", f"{state.q[0, j, i]:.17g}"))
    path = man.record(f"density_{tag}.csv")
    _write_csv(path, ["x", "y", "rho"], rows)
    return path


def _eval_kelvin_helmholtz(conf: Config, man: Manifest, params, normalize: bool) -> int:
    spec = EquationSpec("euler2d", conf.get_float("gamma", 1.4))
    ic = conf.get_str("eval.ic", "kelvin-helmholtz")
    if ic != "kelvin-helmholtz":
        raise ConfigError(f"the 2D evaluation supports the kelvin-helmholtz IC, got {ic!r}")
    n = conf.get_int("eval.n_override", 0) or conf.get_int("eval.kh.n", 64)
    dt = conf.get_float("eval.dt_override", 0.0) or conf.get_float("eval.kh.dt")
    t_final = conf.get_float("eval.t_final_override", 0.0) or conf.get_float("eval.kh.t_final")
    steps = int(round(t_final / dt))

    runs = [("weno", env.WenoOracle(conf.get_float("weno.eps", weno.EPS_DEFAULT)))]
    if params is not None:
        runs.insert(0, ("policy", env.MLPPolicy(params, normalize, fast=True)))

    pairs: list[tuple[str, object]] = [
        ("ic", ic),
        ("grid", f"{n}x{n}"),
        ("dt", f"{dt:.17g}"),
        ("t_final", f"{t_final:.17g}"),
        ("steps", steps),
    ]
    any_failed = False
    for label, pol in runs:
        state0 = physics.kelvin_helmholtz_ic(n, spec, conf)
        t_start = time.monotonic()
        try:
            _, snaps = env.solve_2d(pol, state0, spec, dt, steps, boundary="periodic")
        except weno.BlowUpError as exc:
            any_failed = True
            pairs += [(f"{label}.completed", "false"), (f"{label}.error", str(exc))]
            click.echo(f"{label}: blow-up ({exc})")
            continue
        final = snaps[-1]
        rho = final.q[0]
        pres = physics.pressure_nd(final.q, spec)
        pairs += [
            (f"{label}.completed", "true"),
            (f"{label}.min_density", f"{float(rho.min()):.17g}"),
            (f"{label}.min_pressure", f"{float(pres.min()):.17g}"),
            (f"{label}.wall_clock_s", f"{time.monotonic() - t_start:.1f}"),
        ]
        csv_path = _density_csv(man, final, label)
        heatmap_plot(csv_path, man.record(f"density_{label}.png"), f"density, {label}, t={t_final:g}")
        click.echo(f"{label}: completed {steps} steps, min rho {rho.min():.4g}, min p {pres.min():.4g}")
    _write_kv(man.record("stability_report.txt"), pairs)
    return 3 if any_failed else 0


@main.command()
@click.option("--only", default=None, help="comma-separated subset of properties")
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_flag", default=None)
def verify(only, seed, config_path, out_flag):
    """Run the structural property checks; nonzero exit if any fails."""
    try:
        conf = resolve_config(config_path, None, {"verify.only": only, "verify.seed": seed})
        out_dir = _out_dir(out_flag, "verify")
        man = Manifest("verify", conf, out_dir, conf.get_int("verify.seed", 0))
        man.write()
        raw = conf.get_str("verify.only", "")
        names = [s.strip() for s in raw.split(",") if s.strip()] or None
        results = verify_mod.run_checks(names, conf.get_int("verify.seed", 0))
        lines = [r.line() for r in results]
        for line in lines:
            click.echo(line)
        man.record("verify_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        man.write(final=True)
        if not all(r.passed for r in results):
            sys.exit(1)
    except (ConfigError, ValueError) as exc:
        _fail(2, str(exc))


if __name__ == "__main__":
    main()
