"""Sample-specific stochastic feature gating.

Each gate is a two-layer network (tanh hidden layer, zero-initialized linear
output) producing a per-feature shift mu(x). The mask is the clipped
hard-sigmoid g(x) = clip01(0.5 + mu(x) + eps), with eps ~ N(0, sigma^2)
drawn fresh per call during training and fixed to zero for deterministic
evaluation. The gradient flows through mu only; the noise enters as a
constant.

A GateBank holds G independent gates over the same input (one for the
neural branch; one per tree level for the tree ensemble), evaluated in a
single fused pass. Group g occupies columns [g*D, (g+1)*D) of the output.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, grouped_linear


class GateError(ValueError):
    """Raised on gating contract violations (modes, shapes, subsets)."""


class GateBank:
    """G independent two-layer gating networks sharing one input.

    The hidden layer defaults to max(32, in_dim) units. The output layer is
    zero-initialized so a fresh bank gates every feature at exactly 0.5,
    keeping early training unbiased.
    """

    def __init__(self, in_dim: int, groups: int = 1, hidden: int | None = None,
                 noise_sigma: float = 0.5,
                 rng: np.random.Generator | None = None):
        if in_dim < 1 or groups < 1:
            raise GateError(f"need in_dim >= 1 and groups >= 1, "
                            f"got {in_dim}, {groups}")
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.groups = groups
        self.hidden = hidden if hidden is not None else max(32, in_dim)
        self.noise_sigma = noise_sigma
        gh = groups * self.hidden
        self.W1 = Tensor(rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, gh)),
                         requires_grad=True)
        self.b1 = Tensor(np.zeros(gh), requires_grad=True)
        self.W2 = Tensor(np.zeros((gh, in_dim)), requires_grad=True)
        self.b2 = Tensor(np.zeros(groups * in_dim), requires_grad=True)

    @property
    def out_dim(self) -> int:
        return self.groups * self.in_dim

    def mu(self, x: Tensor) -> Tensor:
        """Pre-shift gate logits, shape (rows, groups * in_dim)."""
        hidden = (x @ self.W1 + self.b1).tanh()
        return grouped_linear(hidden, self.W2, self.b2, self.groups)

    def parameters(self):
        yield "W1", self.W1
        yield "b1", self.b1
        yield "W2", self.W2
        yield "b2", self.b2


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def gate(x, bank: GateBank, mode: str, rng: np.random.Generator | None = None,
         noise: np.ndarray | None = None) -> Tensor:
    """Evaluate the gate mask for a batch.

    mode "stochastic" adds N(0, sigma^2) noise (from ``noise`` if given,
    else drawn from ``rng``); "deterministic" uses the noise-free shift.
    Returns a Tensor of shape (rows, groups * in_dim) with values in [0, 1].
    """
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[1] != bank.in_dim:
        raise GateError(f"input of shape {x.data.shape} does not match "
                        f"bank over {bank.in_dim} features")
    mu = bank.mu(x)
    if mode == "deterministic":
        shifted = mu + 0.5
    elif mode == "stochastic":
        if noise is None:
            if rng is None:
                raise GateError("stochastic mode needs rng or explicit noise")
            noise = rng.normal(0.0, bank.noise_sigma, mu.data.shape)
        elif noise.shape != mu.data.shape:
            raise GateError(f"noise shape {noise.shape} does not match "
                            f"gate output {mu.data.shape}")
        shifted = mu + Tensor(noise + 0.5)
    else:
        raise GateError(f"unknown gate mode {mode!r}")
    return shifted.clip01()


def apply_gate(x: Tensor, mask: Tensor) -> Tensor:
    """Mask a batch feature-wise: x * g. A mask holding G groups of the
    input width gates G tiled copies of x side by side."""
    x = _as_tensor(x)
    mask = _as_tensor(mask)
    if x.data.ndim != 2 or mask.data.ndim != 2 \
            or x.data.shape[0] != mask.data.shape[0]:
        raise GateError(f"cannot gate {x.data.shape} with {mask.data.shape}")
    cols_x, cols_m = x.data.shape[1], mask.data.shape[1]
    if cols_m == cols_x:
        return x * mask
    if cols_m % cols_x == 0:
        tiled = Tensor(np.tile(x.data, cols_m // cols_x))
        return tiled * mask if x.requires_grad is False else _tile_mul(x, mask)
    raise GateError(f"mask width {cols_m} is not a multiple of input "
                    f"width {cols_x}")


def _tile_mul(x: Tensor, mask: Tensor) -> Tensor:
    # Gradient-carrying tile path (rarely needed; inputs are constants in
    # the training loop).
    reps = mask.data.shape[1] // x.data.shape[1]
    parts = [x * 1.0 for _ in range(reps)]
    from .autodiff import concat
    return concat(parts, axis=1) * mask


def mean_activation(bank: GateBank, x, features) -> float:
    """Mean deterministic gate value over samples, groups, and a non-empty
    feature subset."""
    features = list(features)
    if not features:
        raise GateError("feature subset is empty")
    if any(f < 0 or f >= bank.in_dim for f in features):
        raise GateError(f"feature subset {features} out of range for "
                        f"{bank.in_dim} features")
    g = gate(x, bank, mode="deterministic").data
    cols = [grp * bank.in_dim + f for grp in range(bank.groups)
            for f in features]
    return float(g[:, cols].mean())
