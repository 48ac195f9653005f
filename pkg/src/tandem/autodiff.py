"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array together with a gradient buffer and a backward
closure, micrograd style: every operation records its parents and a closure
that routes the output gradient to them. Calling ``backward()`` on a scalar
result topologically sorts the graph and runs the closures in reverse,
accumulating gradients additively so shared subexpressions are handled
correctly.

Tensors are at most rank 2 (matrices, vectors, scalars). Broadcasting is
supported for the matrix/vector and row/column cases the models need; the
gradient of a broadcast operand is summed back down to its shape.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes cannot combine under the supported rules."""


class BackwardError(RuntimeError):
    """Raised when backward() is started from a non-scalar tensor."""


class BatchNormError(RuntimeError):
    """Raised when train-mode batch normalization sees a batch of size < 2."""


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"tensors are at most rank 2, got shape {arr.shape}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _acc_reduced(parent: "Tensor", grad: np.ndarray, own: bool) -> None:
    # Reduce to the parent's shape, keeping ownership when reduction (or the
    # caller) produced a fresh array.
    reduced = _unbroadcast(grad, parent.data.shape)
    parent._accumulate(reduced, own=own or reduced is not grad)


class Tensor:
    """A node in the computation graph: value, gradient, backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op="leaf"):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = _op

    # -- graph plumbing ----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def _accumulate(self, grad: np.ndarray, own: bool = False) -> None:
        # own=True means the caller hands over a fresh array that may be
        # adopted as the gradient buffer; own=False copies (grad may alias
        # another node's buffer).
        if self.grad is None:
            self.grad = grad if own else grad.copy()
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this tensor, which must hold a single value."""
        if self.data.size != 1:
            raise BackwardError(
                f"backward() needs a scalar root, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- elementwise arithmetic --------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data + other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=_grad_parents(self, other), _op="add")
        if out.requires_grad:
            a, b = self, other
            def _backward():
                if a.requires_grad:
                    _acc_reduced(a, out.grad, own=False)
                if b.requires_grad:
                    _acc_reduced(b, out.grad, own=False)
            out._backward = _backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="neg")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(-out.grad, own=True)
            out._backward = _backward
        return out

    def __sub__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data - other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=_grad_parents(self, other), _op="sub")
        if out.requires_grad:
            a, b = self, other
            def _backward():
                if a.requires_grad:
                    _acc_reduced(a, out.grad, own=False)
                if b.requires_grad:
                    _acc_reduced(b, -out.grad, own=True)
            out._backward = _backward
        return out

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data * other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=_grad_parents(self, other), _op="mul")
        if out.requires_grad:
            a, b = self, other
            def _backward():
                if a.requires_grad:
                    _acc_reduced(a, out.grad * b.data, own=True)
                if b.requires_grad:
                    _acc_reduced(b, out.grad * a.data, own=True)
            out._backward = _backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out = Tensor(self.data / other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=_grad_parents(self, other), _op="div")
        if out.requires_grad:
            a, b = self, other
            def _backward():
                if a.requires_grad:
                    _acc_reduced(a, out.grad / b.data, own=True)
                if b.requires_grad:
                    _acc_reduced(b, -out.grad * a.data / (b.data * b.data),
                                 own=True)
            out._backward = _backward
        return out

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    # -- linear algebra ------------------------------------------------------

    def __matmul__(self, other):
        other = self._coerce(other)
        try:
            data = self.data @ other.data
        except ValueError as exc:
            raise ShapeError(
                f"matmul mismatch: {self.data.shape} @ {other.data.shape}"
            ) from exc
        out = Tensor(data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=_grad_parents(self, other), _op="matmul")
        if out.requires_grad:
            a, b = self, other
            def _backward():
                g = out.grad
                ad, bd = a.data, b.data
                if a.requires_grad:
                    if ad.ndim == 2 and bd.ndim == 2:
                        a._accumulate(g @ bd.T, own=True)
                    elif ad.ndim == 2 and bd.ndim == 1:
                        a._accumulate(np.outer(g, bd), own=True)
                    elif ad.ndim == 1 and bd.ndim == 2:
                        a._accumulate(bd @ g, own=True)
                    else:
                        a._accumulate(g * bd, own=True)
                if b.requires_grad:
                    if ad.ndim == 2 and bd.ndim == 2:
                        b._accumulate(ad.T @ g, own=True)
                    elif ad.ndim == 2 and bd.ndim == 1:
                        b._accumulate(ad.T @ g, own=True)
                    elif ad.ndim == 1 and bd.ndim == 2:
                        b._accumulate(np.outer(ad, g), own=True)
                    else:
                        b._accumulate(g * ad, own=True)
            out._backward = _backward
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="sum")
        if out.requires_grad:
            a = self
            def _backward():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                if g.shape != a.data.shape:
                    a._accumulate(np.broadcast_to(g, a.data.shape).copy(),
                                  own=True)
                else:
                    a._accumulate(g, own=False)
            out._backward = _backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities -------------------------------------------

    def square(self):
        return self * self

    def sqrt(self, eps: float = 0.0):
        """Elementwise sqrt(x + eps); eps guards near-zero inputs."""
        root = np.sqrt(self.data + eps)
        out = Tensor(root, requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="sqrt")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(out.grad * 0.5 / root, own=True)
            out._backward = _backward
        return out

    def exp(self):
        val = np.exp(self.data)
        out = Tensor(val, requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="exp")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(out.grad * val, own=True)
            out._backward = _backward
        return out

    def log(self):
        out = Tensor(np.log(self.data), requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="log")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(out.grad / a.data, own=True)
            out._backward = _backward
        return out

    def sigmoid(self):
        val = _sigmoid(self.data)
        out = Tensor(val, requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="sigmoid")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(out.grad * val * (1.0 - val), own=True)
            out._backward = _backward
        return out

    def softplus(self):
        """log(1 + exp(x)), evaluated stably on both tails."""
        x = self.data
        val = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
        out = Tensor(val, requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="softplus")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(out.grad * _sigmoid(a.data), own=True)
            out._backward = _backward
        return out

    def tanh(self):
        val = np.tanh(self.data)
        out = Tensor(val, requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="tanh")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(out.grad * (1.0 - val * val), own=True)
            out._backward = _backward
        return out

    def leaky_relu(self, slope: float = 0.01):
        _record_kink(self.data)
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, slope * self.data),
                     requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="leaky_relu")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(out.grad * np.where(mask, 1.0, slope), own=True)
            out._backward = _backward
        return out

    def clip01(self):
        """Clamp to [0, 1]. Subgradient is 1 on the open interval, 0 outside
        and at the boundaries."""
        _record_kink(self.data, kinks=(0.0, 1.0))
        val = np.clip(self.data, 0.0, 1.0)
        out = Tensor(val, requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="clip01")
        if out.requires_grad:
            a = self
            inside = (self.data > 0.0) & (self.data < 1.0)
            def _backward():
                a._accumulate(out.grad * inside, own=True)
            out._backward = _backward
        return out

    def maximum(self, floor: float):
        """Elementwise max with a constant; subgradient 0 where clamped."""
        mask = self.data > floor
        out = Tensor(np.where(mask, self.data, floor),
                     requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="maximum")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(out.grad * mask, own=True)
            out._backward = _backward
        return out

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), requires_grad=self.requires_grad,
                     _parents=_grad_parents(self), _op="reshape")
        if out.requires_grad:
            a = self
            def _backward():
                a._accumulate(out.grad.reshape(a.data.shape), own=False)
            out._backward = _backward
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"


def _grad_parents(*tensors) -> tuple:
    return tuple(t for t in tensors if t.requires_grad)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # 1/(1+exp(-x)) without overflow on either tail.
    val = np.empty_like(x)
    pos = x >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    val[~pos] = ex / (1.0 + ex)
    return val


def parameter(data, rng: np.random.Generator | None = None,
              scale: float | None = None) -> Tensor:
    """A trainable leaf tensor. With rng and scale, draws N(0, scale**2)."""
    if rng is not None:
        data = rng.normal(0.0, scale, size=data)
    return Tensor(data, requires_grad=True)


def concat(tensors: list, axis: int = 1) -> Tensor:
    """Concatenate along an axis; backward splits the gradient."""
    data = np.concatenate([t.data for t in tensors], axis=axis)
    req = any(t.requires_grad for t in tensors)
    out = Tensor(data, requires_grad=req,
                 _parents=_grad_parents(*tensors), _op="concat")
    if req:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        parts = list(tensors)
        def _backward():
            for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    if axis == 0:
                        t._accumulate(out.grad[lo:hi])
                    else:
                        t._accumulate(out.grad[:, lo:hi])
        out._backward = _backward
    return out


def narrow(t: Tensor, start: int, size: int, axis: int = 1) -> Tensor:
    """Contiguous slice along an axis; backward scatters into the slice."""
    if axis == 0:
        data = t.data[start:start + size]
    else:
        data = t.data[:, start:start + size]
    out = Tensor(data.copy(), requires_grad=t.requires_grad,
                 _parents=_grad_parents(t), _op="narrow")
    if out.requires_grad:
        a = t
        def _backward():
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            if axis == 0:
                a.grad[start:start + size] += out.grad
            else:
                a.grad[:, start:start + size] += out.grad
        out._backward = _backward
    return out


def grouped_linear(x: Tensor, w: Tensor, b: Tensor, groups: int) -> Tensor:
    """G independent dense layers evaluated in one op.

    x is (B, G*H) holding each group's hidden block side by side, w is
    (G*H, D) holding the per-group weight matrices stacked along rows, b is
    (G*D,). Group g maps x[:, g*H:(g+1)*H] through w[g*H:(g+1)*H] into
    columns g*D:(g+1)*D of the (B, G*D) output, so the groups never mix.
    """
    B, GH = x.data.shape
    H = GH // groups
    D = w.data.shape[1]
    xv = x.data.reshape(B, groups, H)
    wv = w.data.reshape(groups, H, D)
    y3 = np.matmul(xv.transpose(1, 0, 2), wv)          # (G, B, D)
    data = y3.transpose(1, 0, 2).reshape(B, groups * D) + b.data
    req = x.requires_grad or w.requires_grad or b.requires_grad
    out = Tensor(data, requires_grad=req,
                 _parents=_grad_parents(x, w, b), _op="grouped_linear")
    if req:
        def _backward():
            gv = out.grad.reshape(B, groups, D).transpose(1, 0, 2)  # (G, B, D)
            if x.requires_grad:
                dx = np.matmul(gv, wv.transpose(0, 2, 1))           # (G, B, H)
                x._accumulate(np.ascontiguousarray(dx.transpose(1, 0, 2)).reshape(B, GH), own=True)
            if w.requires_grad:
                dw = np.matmul(xv.transpose(1, 2, 0), gv)           # (G, H, D)
                w._accumulate(dw.reshape(GH, D), own=True)
            if b.requires_grad:
                b._accumulate(out.grad.sum(axis=0), own=True)
        out._backward = _backward
    return out


def grouped_dot(x: Tensor, w: Tensor, groups: int) -> Tensor:
    """Per-group inner products: x (B, G*D) against one (D,) vector per
    group in w (G, D), giving (B, G)."""
    B = x.data.shape[0]
    D = w.data.shape[1]
    xv = x.data.reshape(B, groups, D)
    data = np.einsum("bgd,gd->bg", xv, w.data)
    req = x.requires_grad or w.requires_grad
    out = Tensor(data, requires_grad=req,
                 _parents=_grad_parents(x, w), _op="grouped_dot")
    if req:
        def _backward():
            if x.requires_grad:
                dx = out.grad[:, :, None] * w.data[None, :, :]
                x._accumulate(dx.reshape(B, groups * D), own=True)
            if w.requires_grad:
                w._accumulate(np.einsum("bg,bgd->gd", out.grad, xv), own=True)
        out._backward = _backward
    return out


def l2_norm(t: Tensor, axis=None) -> Tensor:
    """Euclidean norm, full or per row/column."""
    return t.square().sum(axis=axis).sqrt()


def cosine_similarity(a: Tensor, b: Tensor, axis: int | None = None,
                      eps: float = 1e-12) -> Tensor:
    """Cosine of the angle between rows (or flat vectors), with each norm
    floored at eps so zero vectors yield 0 instead of NaN."""
    dot = (a * b).sum(axis=axis)
    na = l2_norm(a, axis=axis).maximum(eps)
    nb = l2_norm(b, axis=axis).maximum(eps)
    return dot / (na * nb)


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor,
                    eps: float) -> tuple:
    """Fused train-mode batch normalization over axis 0.

    Normalizes with sqrt(max(var, eps**2)); when the variance is clamped
    the backward pass drops the variance path, matching the subgradient of
    the clamp. Returns (out, batch_mean, batch_var) with the stats as plain
    arrays for running-average updates.
    """
    xd = x.data
    if xd.ndim != 2 or xd.shape[0] < 2:
        raise BatchNormError(
            f"train-mode batchnorm needs a batch of at least 2 rows, "
            f"got shape {xd.shape}")
    n = xd.shape[0]
    mu = xd.mean(axis=0)
    centered = xd - mu
    var = (centered * centered).mean(axis=0)
    raised = var > eps ** 2
    std = np.sqrt(np.where(raised, var, eps ** 2))
    xn = centered / std
    data = xn * gamma.data + beta.data
    req = x.requires_grad or gamma.requires_grad or beta.requires_grad
    out = Tensor(data, requires_grad=req,
                 _parents=_grad_parents(x, gamma, beta), _op="batchnorm")
    if req:
        def _backward():
            g = out.grad
            if gamma.requires_grad:
                gamma._accumulate((g * xn).sum(axis=0), own=True)
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=0), own=True)
            if x.requires_grad:
                dxn = g * gamma.data
                term = dxn - dxn.mean(axis=0)
                term -= raised * xn * (dxn * xn).mean(axis=0)
                x._accumulate(term / std, own=True)
        out._backward = _backward
    return out, mu, var


class BatchNorm:
    """Batch normalization over axis 0 with running statistics.

    The denominator is sqrt(max(var, eps**2)): healthy statistics pass
    through untouched, so eval mode with running stats (0, 1) and affine
    (1, 0) is the exact identity, while degenerate variance stays bounded
    away from zero.
    """

    def __init__(self, width: int, eps: float = 1e-5, momentum: float = 0.1):
        self.width = width
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.beta = Tensor(np.zeros(width), requires_grad=True)
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if train:
            out, mu, var = batchnorm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mu
            self.running_var = (1.0 - m) * self.running_var + m * var
            return out
        denom = np.sqrt(np.maximum(self.running_var, self.eps ** 2))
        normed = (x - Tensor(self.running_mean)) / Tensor(denom)
        return normed * self.gamma + self.beta

    def parameters(self):
        yield "gamma", self.gamma
        yield "beta", self.beta

    def state_arrays(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var


# -- kink probes ----------------------------------------------------------------
#
# Finite-difference checks are only valid away from the kinks of clip01 and
# leaky_relu. While a KinkRecorder is active, those ops report how close
# their inputs came to a kink so callers can resample near-kink cases.

_KINK_RECORDERS: list = []


def _record_kink(data: np.ndarray, kinks=(0.0,)) -> None:
    if _KINK_RECORDERS:
        dist = min(float(np.min(np.abs(data - k))) for k in kinks)
        for recorder in _KINK_RECORDERS:
            recorder.min_distance = min(recorder.min_distance, dist)


class KinkRecorder:
    """Context manager tracking the minimum distance of any clip01 or
    leaky_relu input to its nearest kink during the enclosed forward."""

    def __init__(self):
        self.min_distance = float("inf")

    def __enter__(self):
        _KINK_RECORDERS.append(self)
        return self

    def __exit__(self, *exc):
        _KINK_RECORDERS.remove(self)
        return False


def zero_grads(params) -> None:
    for _, p in params:
        p.zero_grad()


def grad_check(build, params, h: float = 1e-5, tol: float = 1e-4,
               rng: np.random.Generator | None = None,
               max_probes_per_param: int = 3,
               abs_floor: float = 1e-7, kink_tol: float = 1e-3) -> dict:
    """Compare analytic gradients against central finite differences.

    ``build`` is a zero-argument callable returning a scalar Tensor; it is
    re-evaluated for every probe, so it must be deterministic. ``params`` is
    a list of (name, Tensor) pairs. Probed coordinates are sampled with
    ``rng``. Pairs whose absolute difference is below ``abs_floor`` count as
    exact: central differences carry round-off noise of order
    machine_eps * |f| / h, so gradients that are truly (or effectively) zero
    must be compared absolutely, not relatively.

    A disagreeing probe is discarded as inconclusive when either perturbed
    forward passed within ``kink_tol`` of a clip01 or leaky_relu kink: the
    central difference then straddles two linear pieces and measures
    neither. Agreeing probes always count, so filtering cannot manufacture
    a pass out of a systematically wrong gradient.

    Returns {"max_rel_err", "n_probes", "n_skipped", "passed", "worst"}.
    """
    rng = rng or np.random.default_rng(0)
    params = list(params)
    loss = build()
    zero_grads(params)
    loss.backward()
    # keyed by position, not name: distinct modules may reuse names
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for _, p in params]

    max_rel = 0.0
    worst = None
    n_probes = 0
    n_skipped = 0
    for pi, (name, p) in enumerate(params):
        flat = p.data.reshape(-1)
        n_coords = flat.size
        picks = rng.choice(n_coords, size=min(max_probes_per_param, n_coords),
                           replace=False)
        for idx in picks:
            orig = flat[idx]
            with KinkRecorder() as rec:
                flat[idx] = orig + h
                up = float(build().data)
                flat[idx] = orig - h
                down = float(build().data)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(analytic[pi].reshape(-1)[idx])
            if abs(a - numeric) < abs_floor:
                n_probes += 1
                continue
            rel = abs(a - numeric) / max(abs(a), abs(numeric))
            if rel > tol and rec.min_distance < kink_tol:
                n_skipped += 1
                continue
            n_probes += 1
            if rel > max_rel:
                max_rel = rel
                worst = (name, int(idx), a, numeric)
    return {"max_rel_err": max_rel, "n_probes": n_probes,
            "n_skipped": n_skipped, "passed": max_rel < tol, "worst": worst}
