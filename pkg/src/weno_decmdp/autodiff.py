"""Reverse-mode differentiation on a scalar tape.

Every recorded node holds one real value, the ids of its inputs, and the
local partial derivatives with respect to them. ``backward`` runs a single
reverse sweep in id order, accumulating adjoints additively across fan-out,
which is what carries gradients of an episode return back through every state
transition in time and space.

Conventions at non-smooth points (chosen for determinism and bounded
gradients): abs'(0) = 0, relu'(0) = 0, and ties in max/min route the full
adjoint to the first argument.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence

import numpy as np

OP_KINDS = frozenset(
    {
        "add", "sub", "mul", "div", "neg", "abs", "max", "min",
        "square", "sqrt", "exp", "reciprocal", "relu", "constant", "leaf",
    }
)

_ARITY = {
    "add": 2, "sub": 2, "mul": 2, "div": 2, "max": 2, "min": 2,
    "neg": 1, "abs": 1, "square": 1, "sqrt": 1, "exp": 1,
    "reciprocal": 1, "relu": 1,
    "constant": 0, "leaf": 0,
}


class TapeError(ValueError):
    """Invalid recording: unknown op, bad inputs, or a non-finite value."""


def _eval_op(op: str, vals: Sequence[float]) -> tuple[float, tuple[float, ...]]:
    """Value and local partials of ``op`` at the given input values."""
    if op == "add":
        a, b = vals
        return a + b, (1.0, 1.0)
    if op == "sub":
        a, b = vals
        return a - b, (1.0, -1.0)
    if op == "mul":
        a, b = vals
        return a * b, (b, a)
    if op == "div":
        a, b = vals
        return a / b, (1.0 / b, -a / (b * b))
    if op == "neg":
        (a,) = vals
        return -a, (-1.0,)
    if op == "abs":
        (a,) = vals
        return abs(a), (0.0 if a == 0.0 else math.copysign(1.0, a),)
    if op == "max":
        a, b = vals
        return (a, (1.0, 0.0)) if a >= b else (b, (0.0, 1.0))
    if op == "min":
        a, b = vals
        return (a, (1.0, 0.0)) if a <= b else (b, (0.0, 1.0))
    if op == "square":
        (a,) = vals
        return a * a, (2.0 * a,)
    if op == "sqrt":
        (a,) = vals
        r = math.sqrt(a)
        return r, (0.5 / r,)
    if op == "exp":
        (a,) = vals
        r = math.exp(a)
        return r, (r,)
    if op == "reciprocal":
        (a,) = vals
        return 1.0 / a, (-1.0 / (a * a),)
    if op == "relu":
        (a,) = vals
        return (a, (1.0,)) if a > 0.0 else (0.0, (0.0,))
    raise TapeError(f"unknown op-kind {op!r}")


class Tape:
    """Append-only record of scalar operations.

    ``checked`` (the default) rejects NaN/Inf values at record time, which is
    how blow-ups surface early instead of as silent NaN gradients.
    """

    __slots__ = ("ops", "inputs", "partials", "values", "checked", "_const_cache")

    def __init__(self, checked: bool = True):
        self.ops: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.partials: list[tuple[float, ...]] = []
        self.values: list[float] = []
        self.checked = checked
        self._const_cache: dict[float, int] = {}

    def __len__(self) -> int:
        return len(self.ops)

    def record(
        self,
        op: str,
        inputs: Sequence[int] = (),
        value: float | None = None,
        partials: Sequence[float] | None = None,
    ) -> int:
        """Append one node and return its id.

        For computational ops, ``value`` and ``partials`` may be omitted and
        are then evaluated from the op kind and the input values. ``leaf`` and
        ``constant`` require an explicit value.
        """
        if op not in OP_KINDS:
            raise TapeError(f"unknown op-kind {op!r}")
        inputs = tuple(int(i) for i in inputs)
        n = len(self.ops)
        arity = _ARITY[op]
        if len(inputs) != arity:
            raise TapeError(f"{op} takes {arity} inputs, got {len(inputs)}")
        for i in inputs:
            if not 0 <= i < n:
                raise TapeError(f"input id {i} not on tape (length {n})")

        if arity == 0:
            if value is None:
                raise TapeError(f"{op} requires an explicit value")
            partials = ()
        elif value is None or partials is None:
            value, auto_partials = _eval_op(op, [self.values[i] for i in inputs])
            if partials is None:
                partials = auto_partials
        if len(partials) != arity:
            raise TapeError(f"{op}: one partial per input required, got {len(partials)}")

        value = float(value)
        if self.checked and not math.isfinite(value):
            raise TapeError(f"non-finite value {value!r} recorded for op {op!r}")

        self.ops.append(op)
        self.inputs.append(inputs)
        self.partials.append(tuple(float(p) for p in partials))
        self.values.append(value)
        return n

    def leaf(self, value: float) -> "Var":
        return Var(self, self.record("leaf", value=value))

    def constant(self, value: float) -> "Var":
        """Constants are deduplicated so repeated literals do not grow the tape."""
        value = float(value)
        node = self._const_cache.get(value)
        if node is None:
            node = self.record("constant", value=value)
            self._const_cache[value] = node
        return Var(self, node)

    def value(self, node: int) -> float:
        return self.values[node]


def backward(tape: Tape, seed: int) -> np.ndarray:
    """Adjoints of every node with respect to the node ``seed``.

    Returns a dense array indexed by node id; ``result[seed] == 1``. Nodes
    recorded after the seed do not influence it and keep adjoint zero.
    """
    n = len(tape)
    if not 0 <= seed < n:
        raise TapeError(f"seed {seed} not on tape (length {n})")
    adj = np.zeros(n)
    adj[seed] = 1.0
    inputs = tape.inputs
    partials = tape.partials
    for i in range(seed, -1, -1):
        a = adj[i]
        if a == 0.0:
            continue
        for j, p in zip(inputs[i], partials[i]):
            if p != 0.0:
                adj[j] += a * p
    return adj


class Var:
    """A handle to one tape node, with operator overloading for building graphs.

    Mixing with plain floats is allowed; they are recorded as (deduplicated)
    constants.
    """

    __slots__ = ("tape", "node")

    def __init__(self, tape: Tape, node: int):
        self.tape = tape
        self.node = node

    @property
    def value(self) -> float:
        return self.tape.values[self.node]

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        return self.tape.constant(float(other))

    def _binary(self, op: str, other, reflected: bool = False) -> "Var":
        other = self._lift(other)
        a, b = (other, self) if reflected else (self, other)
        return Var(self.tape, self.tape.record(op, (a.node, b.node)))

    def __add__(self, other):
        return self._binary("add", other)

    def __radd__(self, other):
        return self._binary("add", other, reflected=True)

    def __sub__(self, other):
        return self._binary("sub", other)

    def __rsub__(self, other):
        return self._binary("sub", other, reflected=True)

    def __mul__(self, other):
        return self._binary("mul", other)

    def __rmul__(self, other):
        return self._binary("mul", other, reflected=True)

    def __truediv__(self, other):
        return self._binary("div", other)

    def __rtruediv__(self, other):
        return self._binary("div", other, reflected=True)

    def __neg__(self):
        return Var(self.tape, self.tape.record("neg", (self.node,)))

    def __repr__(self):
        return f"Var(node={self.node}, value={self.value:g})"


def _unary(op: str):
    def fn(x: Var) -> Var:
        return Var(x.tape, x.tape.record(op, (x.node,)))

    fn.__name__ = f"v{op}"
    return fn


vabs = _unary("abs")
vsquare = _unary("square")
vsqrt = _unary("sqrt")
vexp = _unary("exp")
vreciprocal = _unary("reciprocal")
vrelu = _unary("relu")


def vmax(a: Var, b) -> Var:
    return a._binary("max", b)


def vmin(a: Var, b) -> Var:
    return a._binary("min", b)


def grad(f_out: Var, wrt: Sequence[Var]) -> np.ndarray:
    """Gradient of a built expression with respect to the given leaves."""
    adj = backward(f_out.tape, f_out.node)
    return np.array([adj[v.node] for v in wrt])


def grad_check(
    f: Callable[[Sequence[Var]], Var],
    point: Sequence[float],
    h: float = 1e-5,
    eps_div: float = 1e-12,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` receives a list of leaf Vars (one per coordinate of ``point``) and
    returns the output Var. The finite-difference side re-evaluates ``f`` on
    fresh tapes at shifted points; the tape gradient comes from one reverse
    sweep.
    """
    point = [float(p) for p in point]
    if not h > 0:
        raise TapeError("grad_check requires h > 0")

    tape = Tape()
    leaves = [tape.leaf(p) for p in point]
    out = f(leaves)
    g_tape = grad(out, leaves)

    def value_at(shifted: Sequence[float]) -> float:
        t = Tape()
        return f([t.leaf(p) for p in shifted]).value

    worst = 0.0
    for i in range(len(point)):
        plus = list(point)
        minus = list(point)
        plus[i] += h
        minus[i] -= h
        fd = (value_at(plus) - value_at(minus)) / (2.0 * h)
        err = abs(g_tape[i] - fd) / (abs(fd) + eps_div)
        worst = max(worst, err)
    return worst
