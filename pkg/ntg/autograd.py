"""
Reverse-mode differentiation over grids.

A `Tape` records every primitive applied to `Var` values together with a
closure that maps the output adjoint to input adjoints.  `Tape.backward`
walks the record in reverse and returns gradients for every leaf that was
registered with a key (parameters, input pixels).

Operations accept `Var` or plain arrays; arrays become constants on the
tape of the first `Var` argument, or on a fresh tape when there is none, so
the same code computes losses for training and plain evaluation.
"""

import contextlib
import logging
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from ntg import grid
from ntg.errors import NumericError, StaleTapeError

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12

# op name -> factor; only touched by `inject_fault`
_faults: Dict[str, float] = {}

BackwardFn = Callable[[np.ndarray, Tuple[bool, ...]], Tuple[Optional[np.ndarray], ...]]


class Var:
    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def requires_grad(self) -> bool:
        return self.tape._requires[self.index]

    def __float__(self) -> float:
        if self.value.size != 1:
            raise TypeError(f"only scalar Vars convert to float, shape is {self.shape}")
        return float(self.value.reshape(()))

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, index={self.index})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


class Tape:
    """Single-use record of a forward pass."""

    def __init__(self):
        self._values: List[np.ndarray] = []
        self._parents: List[Tuple[int, ...]] = []
        self._backward: List[Optional[BackwardFn]] = []
        self._requires: List[bool] = []
        self._ops: List[str] = []
        self._keys: Dict[int, Hashable] = {}
        self._consumed = False

    def __len__(self) -> int:
        return len(self._values)

    def _push(self, value, parents, backward_fn, requires, op) -> Var:
        if self._consumed:
            raise StaleTapeError("tape already differentiated; record a new forward pass on a new Tape")
        self._values.append(value)
        self._parents.append(parents)
        self._backward.append(backward_fn)
        self._requires.append(requires)
        self._ops.append(op)
        return Var(self, len(self._values) - 1, value)

    def leaf(self, value, key: Hashable) -> Var:
        """A differentiable input; its gradient is reported under ``key``."""
        arr = np.array(value, dtype=np.float64)
        var = self._push(arr, (), None, True, "leaf")
        self._keys[var.index] = key
        return var

    def constant(self, value) -> Var:
        return self._push(np.asarray(value, dtype=np.float64), (), None, False, "const")

    def record(self, op: str, value: np.ndarray, parents: Sequence[Var], backward_fn: BackwardFn) -> Var:
        requires = any(p.requires_grad for p in parents)
        if op in _faults and requires:
            backward_fn = _scaled(backward_fn, _faults[op])
        return self._push(
            value,
            tuple(p.index for p in parents),
            backward_fn if requires else None,
            requires,
            op,
        )

    def backward(self, loss: Var) -> Dict[Hashable, np.ndarray]:
        if self._consumed:
            raise StaleTapeError("backward already ran on this tape")
        if loss.tape is not self:
            raise ValueError("loss was recorded on a different tape")
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")

        adjoints: List[Optional[np.ndarray]] = [None] * len(self._values)
        adjoints[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = adjoints[i]
            fn = self._backward[i]
            if g is None or fn is None:
                continue
            parents = self._parents[i]
            needs = tuple(self._requires[p] for p in parents)
            for p, pg in zip(parents, fn(g, needs)):
                if pg is None or not self._requires[p]:
                    continue
                adjoints[p] = pg if adjoints[p] is None else adjoints[p] + pg
        self._consumed = True

        grads = {}
        for index, key in self._keys.items():
            adj = adjoints[index]
            grads[key] = np.zeros_like(self._values[index]) if adj is None else adj
        return grads


def _scaled(fn: BackwardFn, factor: float) -> BackwardFn:
    def wrapped(g, needs):
        return tuple(None if pg is None else pg * factor for pg in fn(g, needs))

    return wrapped


@contextlib.contextmanager
def inject_fault(op: str, factor: float = 1.5):
    """Scale the backward of ``op`` to prove the gradient check catches it."""
    _faults[op] = factor
    try:
        yield
    finally:
        _faults.pop(op, None)


def _tape_of(*args) -> Tape:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return Tape()


def lift(tape: Tape, value) -> Var:
    if isinstance(value, Var):
        if value.tape is not tape:
            raise ValueError("cannot mix Vars from different tapes")
        return value
    return tape.constant(value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ============================================================
# Primitives
# ============================================================

def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        "add", a.value + b.value, (a, b),
        lambda g, needs: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        "sub", a.value - b.value, (a, b),
        lambda g, needs: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    av, bv = a.value, b.value

    def back(g, needs):
        return (
            _unbroadcast(g * bv, av.shape) if needs[0] else None,
            _unbroadcast(g * av, bv.shape) if needs[1] else None,
        )

    return tape.record("mul", av * bv, (a, b), back)


def conv2d(x, kernels, bias=None, stride: int = 1, padding: int = 0) -> Var:
    tape = _tape_of(x, kernels, bias)
    x, kernels = lift(tape, x), lift(tape, kernels)
    parents = [x, kernels]
    if bias is not None:
        parents.append(lift(tape, bias))
    xv, kv = x.value, kernels.value
    out = grid.conv2d(xv, kv, parents[2].value if bias is not None else None, stride, padding)

    def back(g, needs):
        gx, gk, gb = grid.conv2d_backward(xv, kv, g, stride, padding)
        grads = (gx if needs[0] else None, gk if needs[1] else None)
        return grads + (gb,) if len(needs) == 3 else grads

    return tape.record("conv2d", out, parents, back)


def relu(x) -> Var:
    tape = _tape_of(x)
    x = lift(tape, x)
    mask = x.value > 0.0
    return tape.record("relu", np.where(mask, x.value, 0.0), (x,), lambda g, needs: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Var:
    tape = _tape_of(x)
    x = lift(tape, x)
    factor = np.where(x.value > 0.0, 1.0, slope)
    return tape.record("leaky_relu", x.value * factor, (x,), lambda g, needs: (g * factor,))


def linear_map(x, rows: np.ndarray, cols: np.ndarray, op: str = "separable") -> Var:
    """Separable linear map; the adjoint applies the transposed matrices."""
    tape = _tape_of(x)
    x = lift(tape, x)
    return tape.record(
        op, grid.separable(x.value, rows, cols), (x,),
        lambda g, needs: (grid.separable(g, rows.T, cols.T),),
    )


def avg_pool2(x) -> Var:
    h, w = x.shape[1:]
    return linear_map(x, grid.pool_matrix(h), grid.pool_matrix(w), op="avg_pool2")


def upsample2(x) -> Var:
    h, w = x.shape[1:]
    return linear_map(x, grid.upsample_matrix(h), grid.upsample_matrix(w), op="upsample2")


def resize(x, height: int, width: int) -> Var:
    h, w = x.shape[1:]
    return linear_map(x, grid.resample_matrix(h, height), grid.resample_matrix(w, width), op="resample")


def concat(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = lift(tape, a), lift(tape, b)
    split = a.shape[0]
    return tape.record(
        "concat", grid.concat_channels(a.value, b.value), (a, b),
        lambda g, needs: (g[:split], g[split:]),
    )


def total(x) -> Var:
    tape = _tape_of(x)
    x = lift(tape, x)
    shape = x.shape
    return tape.record("sum", np.asarray(x.value.sum()), (x,), lambda g, needs: (np.broadcast_to(g, shape).copy(),))


def mean(x) -> Var:
    tape = _tape_of(x)
    x = lift(tape, x)
    shape, n = x.shape, x.value.size
    return tape.record(
        "mean", np.asarray(x.value.mean()), (x,),
        lambda g, needs: (np.broadcast_to(g / n, shape).copy(),),
    )


def absolute(x) -> Var:
    tape = _tape_of(x)
    x = lift(tape, x)
    sign = np.sign(x.value)
    return tape.record("abs", np.abs(x.value), (x,), lambda g, needs: (g * sign,))


def log(x) -> Var:
    """log(max(x, 1e-12)); the clamped region has zero gradient."""
    tape = _tape_of(x)
    x = lift(tape, x)
    safe = np.maximum(x.value, LOG_FLOOR)
    live = x.value > LOG_FLOOR
    return tape.record("log", np.log(safe), (x,), lambda g, needs: (np.where(live, g / safe, 0.0),))


def sigmoid(x) -> Var:
    tape = _tape_of(x)
    x = lift(tape, x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return tape.record("sigmoid", s, (x,), lambda g, needs: (g * s * (1.0 - s),))


def gram(x) -> Var:
    """Channel Gram matrix of a (C, H, W) map: F Fᵀ with F = x reshaped (C, H·W)."""
    tape = _tape_of(x)
    x = lift(tape, x)
    shape = x.shape
    flat = x.value.reshape(shape[0], -1)
    return tape.record(
        "gram", flat @ flat.T, (x,),
        lambda g, needs: (((g + g.T) @ flat).reshape(shape),),
    )


# ============================================================
# Verification harness
# ============================================================

class FiniteDiffReport:
    def __init__(self, max_rel_error: float, worst: Optional[Tuple[Hashable, int]], checked: int):
        self.max_rel_error = max_rel_error
        self.worst = worst
        self.checked = checked

    def __repr__(self) -> str:
        return f"FiniteDiffReport(max_rel_error={self.max_rel_error:.3e}, worst={self.worst}, checked={self.checked})"


LossFn = Callable[[Tape, Dict[Hashable, Var]], Var]


def evaluate(loss_fn: LossFn, params: Dict[Hashable, np.ndarray]) -> float:
    tape = Tape()
    leaves = {key: tape.constant(value) for key, value in params.items()}
    value = float(loss_fn(tape, leaves))
    if not np.isfinite(value):
        raise NumericError("finite-difference check")
    return value


def gradients(loss_fn: LossFn, params: Dict[Hashable, np.ndarray]) -> Tuple[float, Dict[Hashable, np.ndarray]]:
    tape = Tape()
    leaves = {key: tape.leaf(value, key) for key, value in params.items()}
    loss = loss_fn(tape, leaves)
    value = float(loss)
    if not np.isfinite(value):
        raise NumericError("loss")
    return value, tape.backward(loss)


def finite_diff_check(
    loss_fn: LossFn,
    params: Dict[Hashable, np.ndarray],
    h: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> FiniteDiffReport:
    """Compare analytic gradients with central differences.

    Relative error per coordinate uses max(|analytic|, |numeric|, 1e-8) as the
    denominator.  With ``max_coords`` set, a seeded random subset of that many
    coordinates (over all parameters) is checked instead of every coordinate.
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = gradients(loss_fn, params)

    coords = [(key, i) for key, value in params.items() for i in range(value.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    worst, worst_err = None, 0.0
    for key, i in coords:
        flat = params[key].reshape(-1)
        saved = flat[i]
        flat[i] = saved + h
        up = evaluate(loss_fn, params)
        flat[i] = saved - h
        down = evaluate(loss_fn, params)
        flat[i] = saved
        numeric = (up - down) / (2.0 * h)
        exact = float(analytic[key].reshape(-1)[i])
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        if err > worst_err or worst is None:
            worst, worst_err = (key, i), max(err, worst_err)
    logger.debug("finite-difference check: %d coords, max rel error %.3e", len(coords), worst_err)
    return FiniteDiffReport(worst_err, worst, len(coords))
