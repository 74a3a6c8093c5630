"""Dense-matrix reverse-mode differentiation for training the recurrent models.

Everything runs in float64 numpy. A computation is built as a graph of
:class:`Var` nodes by calling the primitive functions in this module
(``affine``, ``sigmoid``, ``mul``, ``sum_sq``, ...); ``backward`` then walks
the graph once and accumulates exact reverse-mode gradients. There is no
implicit broadcasting anywhere: every primitive validates operand shapes and
raises :class:`ShapeError` naming the operands, so shape bugs fail loudly at
graph-build time.

Stochastic nodes take their noise as an explicit array argument
(``gaussian_sample``), which keeps every forward/backward pass a pure
function of (parameters, inputs, noise).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not line up for a primitive."""


class NumericalDivergenceError(ArithmeticError):
    """A loss or gradient became non-finite."""


class ParamCollection:
    """Named float64 arrays with a stable iteration order.

    Shapes are fixed once a name has been added; names are unique. Used both
    for model parameters and for their gradients / optimizer moments.
    """

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._arrays:
            raise ValueError("duplicate parameter name: %s" % name)
        arr = np.asarray(value, dtype=np.float64)
        self._arrays[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._arrays:
            raise KeyError("unknown parameter name: %s" % name)
        new = np.asarray(value, dtype=np.float64)
        if new.shape != self._arrays[name].shape:
            raise ShapeError(
                "parameter %s has fixed shape %s, got %s"
                % (name, self._arrays[name].shape, new.shape)
            )
        self._arrays[name] = new

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def total_parameters(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def copy(self) -> "ParamCollection":
        out = ParamCollection()
        for name, arr in self._arrays.items():
            out.add(name, arr.copy())
        return out

    def zeros_like(self) -> "ParamCollection":
        out = ParamCollection()
        for name, arr in self._arrays.items():
            out.add(name, np.zeros_like(arr))
        return out


class Var:
    """One node of the computation graph: a value plus how to push gradients
    back into its parents."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "needs_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, needs_grad=None, name=""):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in parents)
        self.needs_grad = needs_grad
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)


def constant(value, name: str = "const") -> Var:
    """Wrap an array as a graph input that receives no gradient."""
    return Var(np.asarray(value, dtype=np.float64), needs_grad=False, name=name)


def parameter(value, name: str) -> Var:
    return Var(np.asarray(value, dtype=np.float64), needs_grad=True, name=name)


def _accum(var: Var, grad) -> None:
    if not var.needs_grad:
        return
    if var.grad is None:
        var.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        var.grad += grad


def _label(v: Var) -> str:
    return "%s%s" % (v.name or "node", np.shape(v.value))


def _require_same_shape(op: str, a: Var, b: Var) -> None:
    if np.shape(a.value) != np.shape(b.value):
        raise ShapeError(
            "%s: operands %s and %s differ in shape" % (op, _label(a), _label(b))
        )


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError("matmul: cannot multiply %s by %s" % (_label(a), _label(b)))
    out = Var(av @ bv, parents=(a, b))

    def backward_fn(g):
        _accum(a, g @ bv.T)
        _accum(b, av.T @ g)

    out.backward_fn = backward_fn
    return out


def affine(x: Var, w: Var, b: Var) -> Var:
    """x @ w + b with x (n, i), w (i, h), b (h,)."""
    xv, wv, bv = x.value, w.value, b.value
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ShapeError("affine: cannot multiply %s by %s" % (_label(x), _label(w)))
    if bv.ndim != 1 or bv.shape[0] != wv.shape[1]:
        raise ShapeError(
            "affine: bias %s does not match weight columns of %s"
            % (_label(b), _label(w))
        )
    out = Var(xv @ wv + bv, parents=(x, w, b))

    def backward_fn(g):
        _accum(x, g @ wv.T)
        _accum(w, xv.T @ g)
        _accum(b, g.sum(axis=0))

    out.backward_fn = backward_fn
    return out


def add(a: Var, b: Var) -> Var:
    _require_same_shape("add", a, b)
    out = Var(a.value + b.value, parents=(a, b))

    def backward_fn(g):
        _accum(a, g)
        _accum(b, g)

    out.backward_fn = backward_fn
    return out


def sub(a: Var, b: Var) -> Var:
    _require_same_shape("sub", a, b)
    out = Var(a.value - b.value, parents=(a, b))

    def backward_fn(g):
        _accum(a, g)
        _accum(b, -g)

    out.backward_fn = backward_fn
    return out


def mul(a: Var, b: Var) -> Var:
    _require_same_shape("mul", a, b)
    av, bv = a.value, b.value
    out = Var(av * bv, parents=(a, b))

    def backward_fn(g):
        _accum(a, g * bv)
        _accum(b, g * av)

    out.backward_fn = backward_fn
    return out


def scale(a: Var, s: float) -> Var:
    s = float(s)
    out = Var(a.value * s, parents=(a,))

    def backward_fn(g):
        _accum(a, g * s)

    out.backward_fn = backward_fn
    return out


def add_const(a: Var, c: float) -> Var:
    out = Var(a.value + float(c), parents=(a,))

    def backward_fn(g):
        _accum(a, g)

    out.backward_fn = backward_fn
    return out


def mul_const(a: Var, c: np.ndarray) -> Var:
    """Elementwise product with a fixed (non-differentiated) array."""
    cv = np.asarray(c, dtype=np.float64)
    if cv.shape != np.shape(a.value):
        raise ShapeError(
            "mul_const: constant %s does not match %s" % (cv.shape, _label(a))
        )
    out = Var(a.value * cv, parents=(a,))

    def backward_fn(g):
        _accum(a, g * cv)

    out.backward_fn = backward_fn
    return out


def sigmoid(a: Var) -> Var:
    # Split by sign to avoid overflow in exp for large |x|.
    x = a.value
    out_val = np.empty_like(x)
    pos = x >= 0
    out_val[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_val[~pos] = ex / (1.0 + ex)
    out = Var(out_val, parents=(a,))

    def backward_fn(g):
        _accum(a, g * out_val * (1.0 - out_val))

    out.backward_fn = backward_fn
    return out


def tanh(a: Var) -> Var:
    out_val = np.tanh(a.value)
    out = Var(out_val, parents=(a,))

    def backward_fn(g):
        _accum(a, g * (1.0 - out_val * out_val))

    out.backward_fn = backward_fn
    return out


def exp(a: Var) -> Var:
    out_val = np.exp(a.value)
    out = Var(out_val, parents=(a,))

    def backward_fn(g):
        _accum(a, g * out_val)

    out.backward_fn = backward_fn
    return out


def concat(a: Var, b: Var, axis: int = 1) -> Var:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError("concat: expected matrices, got %s and %s" % (_label(a), _label(b)))
    other = 1 - axis
    if av.shape[other] != bv.shape[other]:
        raise ShapeError(
            "concat(axis=%d): %s and %s differ on the other axis"
            % (axis, _label(a), _label(b))
        )
    split = av.shape[axis]
    out = Var(np.concatenate([av, bv], axis=axis), parents=(a, b))

    def backward_fn(g):
        if axis == 0:
            _accum(a, g[:split])
            _accum(b, g[split:])
        else:
            _accum(a, g[:, :split])
            _accum(b, g[:, split:])

    out.backward_fn = backward_fn
    return out


def narrow(a: Var, axis: int, start: int, stop: int) -> Var:
    """Slice rows (axis 0) or columns (axis 1) of a matrix."""
    av = a.value
    if av.ndim != 2:
        raise ShapeError("narrow: expected a matrix, got %s" % _label(a))
    if not (0 <= start < stop <= av.shape[axis]):
        raise ShapeError(
            "narrow: range [%d, %d) out of bounds for %s on axis %d"
            % (start, stop, _label(a), axis)
        )
    sel = (slice(start, stop),) if axis == 0 else (slice(None), slice(start, stop))
    out = Var(av[sel], parents=(a,))

    def backward_fn(g):
        if a.needs_grad:
            full = np.zeros_like(av)
            full[sel] = g
            _accum(a, full)

    out.backward_fn = backward_fn
    return out


def sum_all(a: Var) -> Var:
    out = Var(np.float64(a.value.sum()), parents=(a,))

    def backward_fn(g):
        _accum(a, np.full_like(a.value, float(g)))

    out.backward_fn = backward_fn
    return out


def sum_sq(a: Var) -> Var:
    av = a.value
    out = Var(np.float64((av * av).sum()), parents=(a,))

    def backward_fn(g):
        _accum(a, (2.0 * float(g)) * av)

    out.backward_fn = backward_fn
    return out


def weighted_sum(a: Var, weights: np.ndarray) -> Var:
    """sum(a * weights) for a fixed weight array of the same shape."""
    wv = np.asarray(weights, dtype=np.float64)
    if wv.shape != np.shape(a.value):
        raise ShapeError(
            "weighted_sum: weights %s do not match %s" % (wv.shape, _label(a))
        )
    out = Var(np.float64((a.value * wv).sum()), parents=(a,))

    def backward_fn(g):
        _accum(a, float(g) * wv)

    out.backward_fn = backward_fn
    return out


def gaussian_sample(mu: Var, log_var: Var, noise: np.ndarray) -> Var:
    """Substitution point for a diagonal-Gaussian draw: mu + exp(log_var/2) * noise.

    ``noise`` is a fixed standard-normal array supplied by the caller, so the
    node is differentiable in (mu, log_var) and fully reproducible.
    """
    _require_same_shape("gaussian_sample", mu, log_var)
    nv = np.asarray(noise, dtype=np.float64)
    if nv.shape != np.shape(mu.value):
        raise ShapeError(
            "gaussian_sample: noise %s does not match mu %s" % (nv.shape, _label(mu))
        )
    std = np.exp(0.5 * log_var.value)
    out = Var(mu.value + std * nv, parents=(mu, log_var))

    def backward_fn(g):
        _accum(mu, g)
        _accum(log_var, g * 0.5 * std * nv)

    out.backward_fn = backward_fn
    return out


# ---------------------------------------------------------------------------
# Graph evaluation
# ---------------------------------------------------------------------------

def backward(loss: Var) -> None:
    """Accumulate d(loss)/d(node) into .grad over the whole graph.

    The traversal is an iterative topological sort, so graph depth (long
    sequences) is not limited by the Python recursion limit.
    """
    if np.shape(loss.value) != ():
        raise ShapeError("backward: loss must be scalar, got %s" % _label(loss))
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.needs_grad:
                stack.append((p, False))
    loss.grad = np.float64(1.0)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def wrap_params(params: ParamCollection) -> dict[str, Var]:
    return {name: parameter(arr, name) for name, arr in params.items()}


def forward(graph_program, params: ParamCollection, inputs=None) -> float:
    """Evaluate the loss of a graph program without gradients."""
    pvars = wrap_params(params)
    loss = graph_program(pvars, inputs)
    return float(loss.value)


def forward_backward(graph_program, params: ParamCollection, inputs=None):
    """Run a graph program and return (loss, gradients).

    ``graph_program(pvars, inputs)`` must build and return a scalar loss Var
    from the parameter Vars in ``pvars``. Gradients come back as a
    ParamCollection with the same names and shapes as ``params``; parameters
    the loss never touched get zero gradients.
    """
    pvars = wrap_params(params)
    loss = graph_program(pvars, inputs)
    loss_value = float(loss.value)
    if not np.isfinite(loss_value):
        raise NumericalDivergenceError("non-finite loss: %r" % loss_value)
    backward(loss)
    grads = ParamCollection()
    for name, arr in params.items():
        g = pvars[name].grad
        grads.add(name, np.zeros_like(arr) if g is None else g)
    return loss_value, grads


def max_relative_error(a: ParamCollection, b: ParamCollection) -> float:
    """max over entries of |a - b| / max(1e-8, |a| + |b|)."""
    worst = 0.0
    for name, av in a.items():
        bv = b[name]
        denom = np.maximum(1e-8, np.abs(av) + np.abs(bv))
        err = np.abs(av - bv) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def finite_difference_gradients(
    graph_program, params: ParamCollection, inputs=None, epsilon: float = 1e-5
) -> ParamCollection:
    """Central-difference gradients, perturbing one scalar entry at a time."""
    grads = params.zeros_like()
    for name, arr in params.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = forward(graph_program, params, inputs)
            flat[i] = orig - epsilon
            down = forward(graph_program, params, inputs)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * epsilon)
    return grads


def check_gradients(
    graph_program, params: ParamCollection, inputs=None, epsilon: float = 1e-5
) -> float:
    """Compare reverse-mode gradients against central finite differences.

    Returns the maximum relative error over all parameter entries. Quadratic
    losses come back at rounding level (~1e-10); well-conditioned recurrent
    models should sit below 1e-6.
    """
    _, analytic = forward_backward(graph_program, params, inputs)
    numeric = finite_difference_gradients(graph_program, params, inputs, epsilon)
    return max_relative_error(analytic, numeric)
