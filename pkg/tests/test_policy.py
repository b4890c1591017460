import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weno_decmdp import policy as pol
from weno_decmdp.autodiff import Tape
from weno_decmdp.policy import (
    CheckpointError,
    PolicyParams,
    act_stencils,
    act_stencils_fast,
    forward_batch,
    init_params,
    load_checkpoint,
    normalize_stencil,
    params_to_vector,
    save_checkpoint,
    tape_policy,
    vector_to_params,
)


def test_init_is_reproducible_and_shaped():
    a = init_params(7, hidden=16)
    b = init_params(7, hidden=16)
    for name in pol.PARAM_ORDER:
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.w1.shape == (3, 16) and a.w3.shape == (16, 2)
    assert np.all(a.b1 == 0.0) and np.all(a.b3 == 0.0)
    limit1 = np.sqrt(6.0 / (3 + 16))
    assert np.max(np.abs(a.w1)) <= limit1
    assert init_params(8, hidden=16).w1[0, 0] != a.w1[0, 0]


def test_param_vector_round_trip():
    p = init_params(0, hidden=8)
    vec = params_to_vector(p)
    back = vector_to_params(vec, 8)
    for name in pol.PARAM_ORDER:
        assert np.array_equal(getattr(p, name), getattr(back, name))
    with pytest.raises(ValueError):
        vector_to_params(vec[:-1], 8)


def test_param_shape_validation():
    p = init_params(0, hidden=4)
    with pytest.raises(ValueError):
        PolicyParams(p.w1, p.b1, p.w2, np.zeros(5), p.w3, p.b3)


# --- input normalization ---------------------------------------------------


def test_normalize_scales_by_max_magnitude():
    raw = np.array([[1.0, -4.0, 2.0]])
    x, scale = normalize_stencil(raw)
    assert scale[0] == 4.0
    assert np.array_equal(x, raw / 4.0)


def test_normalize_floor_passes_tiny_stencils_through():
    raw = np.array([[1e-13, -2e-13, 0.0]])
    x, scale = normalize_stencil(raw)
    assert scale[0] == pol.NORMALIZE_FLOOR
    assert np.array_equal(x, raw / pol.NORMALIZE_FLOOR)


@given(
    s0=st.floats(-5, 5),
    s1=st.floats(-5, 5),
    s2=st.floats(-5, 5),
    lam=st.floats(0.01, 100.0),
)
@settings(max_examples=60, deadline=None)
def test_actions_invariant_under_positive_stencil_rescaling(s0, s1, s2, lam):
    """The normalization makes the policy scale-free above the floor."""
    raw = np.array([[s0, s1, s2]])
    if np.max(np.abs(raw)) * min(lam, 1.0) < 1e-8:
        raw = raw + 1.0  # keep both versions above the floor
    p = init_params(3, hidden=8)
    a1, _ = act_stencils(p, raw)
    a2, _ = act_stencils(p, raw * lam)
    assert np.allclose(a1, a2, rtol=1e-9, atol=1e-12)


# --- forward pass ----------------------------------------------------------


def test_actions_form_a_simplex():
    p = init_params(1)
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((300, 3)) * 10.0 ** rng.integers(-8, 8, size=(300, 1))
    actions, _ = act_stencils(p, raw)
    assert actions.shape == (300, 2)
    assert np.all(actions >= 0.0) and np.all(actions <= 1.0)
    assert np.max(np.abs(actions.sum(axis=1) - 1.0)) <= 1e-12
    assert np.all(np.isfinite(actions))


def test_leading_shape_preserved():
    p = init_params(1, hidden=4)
    raw = np.zeros((3, 5, 2, 3))
    actions, _ = act_stencils(p, raw)
    assert actions.shape == (3, 5, 2, 2)


def test_batch_equals_solo_bitwise():
    """One agent alone computes exactly what it computes inside the crowd."""
    p = init_params(2)
    rng = np.random.default_rng(5)
    raw = rng.standard_normal((40, 3))
    batch, _ = act_stencils(p, raw)
    for i in range(0, 40, 7):
        solo, _ = act_stencils(p, raw[i : i + 1])
        assert np.array_equal(batch[i], solo[0])


def test_fast_variant_matches_fixed_order_closely():
    p = init_params(2)
    rng = np.random.default_rng(6)
    raw = rng.standard_normal((64, 3))
    a, _ = act_stencils(p, raw)
    b = act_stencils_fast(p, raw)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_tape_twin_matches_numpy_forward():
    p = init_params(4, hidden=6)
    rng = np.random.default_rng(7)
    for _ in range(5):
        raw = rng.standard_normal(3)
        tape = Tape()
        out = tape_policy(tape, p, [tape.leaf(v) for v in raw])
        a_np, _ = act_stencils(p, raw[None, :])
        assert np.allclose([o.value for o in out], a_np[0], rtol=1e-12)


def test_tape_twin_validates_input_count():
    tape = Tape()
    with pytest.raises(ValueError):
        tape_policy(tape, init_params(0, hidden=4), [tape.leaf(0.0)] * 2)


def test_backward_batch_matches_finite_differences():
    p = init_params(9, hidden=5)
    rng = np.random.default_rng(11)
    raw = rng.standard_normal((4, 3))
    g_actions = rng.standard_normal((4, 2))

    def objective(r):
        a, _ = act_stencils(p, r)
        return float((a * g_actions).sum())

    actions, cache = act_stencils(p, raw, keep_cache=True)
    g_flat, g_params = pol.backward_batch(p, cache, g_actions)
    g_raw = pol.normalize_backward(cache, g_flat)

    h = 1e-6
    for idx in np.ndindex(raw.shape):
        plus = raw.copy()
        minus = raw.copy()
        plus[idx] += h
        minus[idx] -= h
        fd = (objective(plus) - objective(minus)) / (2 * h)
        assert g_raw[idx] == pytest.approx(fd, rel=2e-5, abs=1e-8)


# --- checkpoints -----------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    p = init_params(3)
    path = tmp_path / "ckpt.txt"
    save_checkpoint(path, p, True, {"ic": "sod", "episodes": "600"})
    loaded, normalize, echo = load_checkpoint(path)
    assert normalize is True
    assert echo == {"ic": "sod", "episodes": "600"}
    for name in pol.PARAM_ORDER:
        assert np.array_equal(getattr(p, name), getattr(loaded, name)), name


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("episode,return\n0,-1\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_future_version(tmp_path):
    p = init_params(0, hidden=4)
    path = tmp_path / "ckpt.txt"
    save_checkpoint(path, p, False)
    text = path.read_text().replace("format_version 1", "format_version 99")
    path.write_text(text)
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(path)


def test_checkpoint_rejects_truncated_params(tmp_path):
    p = init_params(0, hidden=4)
    path = tmp_path / "ckpt.txt"
    save_checkpoint(path, p, False)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:5]) + "\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
