"""Shared interface-agent policy: a small MLP from stencils to blend weights.

Every (field, interface, split-sign) slot runs the same network on its own
3-point stencil and gets back two convex weights for the flux candidates.
The forward pass deliberately avoids BLAS matrix products: each product
contracts its shared index in a fixed ascending order, so the result for one
row is bit-identical whether that row is evaluated alone or inside a large
batch. That property is what makes "run every agent at once" and "run one
agent by itself" provably the same computation.

A scalar-tape twin of the forward pass (``tape_policy``) exists for the
autodiff-based verification paths; it follows the exact same arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .autodiff import Tape, Var, vabs, vexp, vmax, vrelu

N_INPUTS = 3
N_ACTIONS = 2
HIDDEN_DEFAULT = 64

# Stencil magnitudes below this are treated as "no content"; the stencil is
# passed through unscaled rather than amplified.
NORMALIZE_FLOOR = 1e-10


@dataclass
class PolicyParams:
    """Weights of the 3 -> hidden -> hidden -> 2 network."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        h = self.w1.shape[1]
        expected = {
            "w1": (N_INPUTS, h),
            "b1": (h,),
            "w2": (h, h),
            "b2": (h,),
            "w3": (h, N_ACTIONS),
            "b3": (N_ACTIONS,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})


PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


def init_params(seed: int, hidden: int = HIDDEN_DEFAULT) -> PolicyParams:
    """Glorot-uniform weights, zero biases, reproducible from the seed."""
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return PolicyParams(
        w1=glorot(N_INPUTS, hidden),
        b1=np.zeros(hidden),
        w2=glorot(hidden, hidden),
        b2=np.zeros(hidden),
        w3=glorot(hidden, N_ACTIONS),
        b3=np.zeros(N_ACTIONS),
    )


def params_to_vector(params: PolicyParams) -> np.ndarray:
    return np.concatenate([getattr(params, name).ravel() for name in PARAM_ORDER])


def vector_to_params(vec: np.ndarray, hidden: int) -> PolicyParams:
    shapes = [
        (N_INPUTS, hidden),
        (hidden,),
        (hidden, hidden),
        (hidden,),
        (hidden, N_ACTIONS),
        (N_ACTIONS,),
    ]
    total = sum(int(np.prod(s)) for s in shapes)
    if vec.shape != (total,):
        raise ValueError(f"vector has shape {vec.shape}, expected ({total},) for hidden={hidden}")
    out, at = {}, 0
    for name, shape in zip(PARAM_ORDER, shapes):
        size = int(np.prod(shape))
        out[name] = vec[at : at + size].reshape(shape).copy()
        at += size
    return PolicyParams(**out)


def zeros_like_params(params: PolicyParams) -> PolicyParams:
    return PolicyParams(**{name: np.zeros_like(getattr(params, name)) for name in PARAM_ORDER})


def _matmul_fixed(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x @ w accumulated over k in a fixed order, independent of batch size.

    Unoptimized einsum contracts k in ascending scalar order, so a row's
    result is bit-identical whether it is computed alone or inside a batch
    (BLAS kernels do not guarantee that).
    """
    return np.einsum("nk,kj->nj", x, w, optimize=False)


def _matmul_fixed_t(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """g @ w.T with a per-row reduction order independent of batch size."""
    return np.einsum("nj,kj->nk", g, w, optimize=False)


def normalize_stencil(raw: np.ndarray, floor: float = NORMALIZE_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Scale each stencil (last axis) by its max magnitude, floored.

    Returns the scaled stencils and the scales (shape = raw.shape[:-1]), so
    callers can recover physical magnitudes. Positive rescalings of a stencil
    above the floor leave the output unchanged.
    """
    amax = np.abs(raw).max(axis=-1)
    scale = np.maximum(amax, floor)
    return raw / scale[..., None], scale


@dataclass
class PolicyCache:
    """Intermediates of one batched forward pass, consumed by the backward."""

    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    actions: np.ndarray
    raw: np.ndarray | None = None
    scale: np.ndarray | None = None


def forward_batch(params: PolicyParams, x: np.ndarray) -> tuple[np.ndarray, PolicyCache]:
    """Actions for a batch of already-normalized stencil rows (B, 3) -> (B, 2)."""
    h1 = np.maximum(_matmul_fixed(x, params.w1) + params.b1, 0.0)
    h2 = np.maximum(_matmul_fixed(h1, params.w2) + params.b2, 0.0)
    logits = _matmul_fixed(h2, params.w3) + params.b3
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    actions = e / e.sum(axis=1, keepdims=True)
    return actions, PolicyCache(x, h1, h2, actions)


def backward_batch(
    params: PolicyParams, cache: PolicyCache, g_actions: np.ndarray
) -> tuple[np.ndarray, PolicyParams]:
    """Pull action adjoints back to the inputs and the parameters."""
    a = cache.actions
    g_logits = a * (g_actions - (g_actions * a).sum(axis=1, keepdims=True))

    g_w3 = cache.h2.T @ g_logits
    g_b3 = g_logits.sum(axis=0)
    g_h2 = _matmul_fixed_t(g_logits, params.w3) * (cache.h2 > 0.0)

    g_w2 = cache.h1.T @ g_h2
    g_b2 = g_h2.sum(axis=0)
    g_h1 = _matmul_fixed_t(g_h2, params.w2) * (cache.h1 > 0.0)

    g_w1 = cache.x.T @ g_h1
    g_b1 = g_h1.sum(axis=0)
    g_x = _matmul_fixed_t(g_h1, params.w1)
    return g_x, PolicyParams(g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)


def act_stencils(
    params: PolicyParams, raw: np.ndarray, normalize: bool = True, keep_cache: bool = False
) -> tuple[np.ndarray, PolicyCache | None]:
    """Actions for a raw stencil tensor (..., 3); leading shape is preserved."""
    lead = raw.shape[:-1]
    if normalize:
        x, scale = normalize_stencil(raw)
    else:
        x, scale = raw, None
    actions, cache = forward_batch(params, x.reshape(-1, N_INPUTS))
    if keep_cache:
        cache.raw = raw
        cache.scale = scale
        return actions.reshape(*lead, N_ACTIONS), cache
    return actions.reshape(*lead, N_ACTIONS), None


def act_stencils_fast(params: PolicyParams, raw: np.ndarray, normalize: bool = True) -> np.ndarray:
    """BLAS variant of :func:`act_stencils` for very large inference batches.

    Numerically equivalent but not bit-identical to the fixed-order forward;
    use only where no bitwise-reproducibility claim is made (2D sweeps).
    """
    lead = raw.shape[:-1]
    x = normalize_stencil(raw)[0] if normalize else raw
    x = x.reshape(-1, N_INPUTS)
    h1 = np.maximum(x @ params.w1 + params.b1, 0.0)
    h2 = np.maximum(h1 @ params.w2 + params.b2, 0.0)
    logits = h2 @ params.w3 + params.b3
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)).reshape(*lead, N_ACTIONS)


def normalize_backward(cache: PolicyCache, g_x: np.ndarray, floor: float = NORMALIZE_FLOOR) -> np.ndarray:
    """Adjoint of ``normalize_stencil`` given the flattened input adjoint.

    The scale is max(|raw|) when above the floor, and its adjoint is routed to
    the first entry attaining the max — the same tie rule the scalar tape uses
    for its max operation.
    """
    raw, scale = cache.raw, cache.scale
    if scale is None:
        return g_x.reshape(raw.shape)
    g_x = g_x.reshape(raw.shape)
    g_raw = g_x / scale[..., None]
    # d(out)/d(scale) = -raw / scale^2 summed against g_x
    g_scale = -(g_x * raw).sum(axis=-1) / scale**2
    amax = np.abs(raw).max(axis=-1)
    idx = np.abs(raw).argmax(axis=-1)
    take = np.take_along_axis(raw, idx[..., None], axis=-1)[..., 0]
    contrib = np.where(amax >= floor, g_scale * np.sign(take), 0.0)
    np.put_along_axis(g_raw, idx[..., None], np.take_along_axis(g_raw, idx[..., None], axis=-1) + contrib[..., None], axis=-1)
    return g_raw


def tape_policy(
    tape: Tape, params: PolicyParams, raw: list[Var], normalize: bool = True
) -> list[Var]:
    """Scalar-tape replica of one agent's forward pass (3 inputs -> 2 actions).

    ``params`` arrays may hold plain floats (treated as constants) or tape
    ``Var`` leaves (making the parameters differentiable on the tape).
    """
    if len(raw) != N_INPUTS:
        raise ValueError(f"expected {N_INPUTS} stencil values, got {len(raw)}")
    if normalize:
        m = vmax(vmax(vabs(raw[0]), vabs(raw[1])), vabs(raw[2]))
        scale = vmax(m, tape.constant(NORMALIZE_FLOOR))
        x = [v / scale for v in raw]
    else:
        x = list(raw)

    def lift(v):
        return v if isinstance(v, Var) else tape.constant(float(v))

    def layer(inputs, w, b, apply_relu):
        outs = []
        for j in range(w.shape[1]):
            acc = lift(b[j])
            for k, v in enumerate(inputs):
                acc = acc + v * w[k, j]
            outs.append(vrelu(acc) if apply_relu else acc)
        return outs

    h1 = layer(x, params.w1, params.b1, True)
    h2 = layer(h1, params.w2, params.b2, True)
    logits = layer(h2, params.w3, params.b3, False)
    m = vmax(logits[0], logits[1])
    e = [vexp(l - m) for l in logits]
    z = e[0] + e[1]
    return [e[0] / z, e[1] / z]


CHECKPOINT_MAGIC = "weno-decmdp-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    path,
    params: PolicyParams,
    normalize_inputs: bool,
    config_echo: dict[str, str] | None = None,
) -> None:
    """Plain-text checkpoint; %.17g per value makes the round trip bit-exact."""
    lines = [
        f"{CHECKPOINT_MAGIC} format_version {CHECKPOINT_VERSION}",
        f"normalize_inputs {'true' if normalize_inputs else 'false'}",
        f"hidden {params.hidden}",
    ]
    for name in PARAM_ORDER:
        arr = np.atleast_2d(getattr(params, name))
        lines.append(f"param {name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    for key, value in (config_echo or {}).items():
        lines.append(f"config {key} = {value}")
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[PolicyParams, bool, dict[str, str]]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a policy checkpoint")
    head = lines[0].split()
    if head[-1] != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"{path}: unsupported format_version {head[-1]}")

    normalize = None
    arrays: dict[str, np.ndarray] = {}
    config: dict[str, str] = {}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line == "end":
            continue
        kind, _, rest = line.partition(" ")
        if kind == "normalize_inputs":
            normalize = rest.strip() == "true"
        elif kind == "hidden":
            pass  # implied by the array shapes
        elif kind == "param":
            try:
                name, rows, cols = rest.split()
                rows, cols = int(rows), int(cols)
            except ValueError as exc:
                raise CheckpointError(f"{path}: malformed param header {line!r}") from exc
            if i + rows > len(lines):
                raise CheckpointError(f"{path}: parameter {name} truncated")
            block = []
            for _ in range(rows):
                try:
                    block.append([float(tok) for tok in lines[i].split()])
                except ValueError as exc:
                    raise CheckpointError(f"{path}: parameter {name} has non-numeric data") from exc
                i += 1
            arr = np.array(block)
            if arr.shape != (rows, cols):
                raise CheckpointError(f"{path}: parameter {name} block malformed")
            arrays[name] = arr
        elif kind == "config":
            key, _, value = rest.partition("=")
            config[key.strip()] = value.strip()
        else:
            raise CheckpointError(f"{path}: unrecognized line {line!r}")

    missing = [n for n in PARAM_ORDER if n not in arrays]
    if missing or normalize is None:
        raise CheckpointError(f"{path}: incomplete checkpoint (missing {missing or 'normalize_inputs'})")
    params = PolicyParams(
        w1=arrays["w1"],
        b1=arrays["b1"][0],
        w2=arrays["w2"],
        b2=arrays["b2"][0],
        w3=arrays["w3"],
        b3=arrays["b3"][0],
    )
    return params, normalize, config
