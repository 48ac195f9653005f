"""Soft oblivious decision tree ensemble encoder.

Every tree is oblivious: all nodes at one depth share a single decision
(projection weight, threshold, temperature), so a depth-L tree is L
decisions and 2^L leaves. A decision scores s = <w, x_gated> - tau and
splits traffic with temperature-scaled sigmoids sigma(+-s/T); a leaf's
probability is the product of its branch probabilities down the path. The
encoder output is the leaf distribution averaged over trees, a point on the
2^L simplex.

Each (tree, level) pair owns a private gating network; the level's view of
the input is x * g_{level,tree}(x). Ungated encoders skip the masking.

Level parameters are stored stacked across trees, tree-major (group index
g = tree * depth + level). ``route`` walks one tree with the literal
product recursion; ``encode_osdt`` evaluates all trees in a fused log-space
pass. Both compute the same distribution and are cross-checked in tests.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, grouped_dot, narrow
from .gating import GateBank, apply_gate, gate


class RouteError(ValueError):
    """Raised on routing contract violations (tree index, input width)."""


class BoundaryError(ValueError):
    """Raised when a hard routing decision lands exactly on a threshold."""


class OsdtEncoder:
    """Ensemble of soft oblivious trees with per-level stochastic gates."""

    def __init__(self, in_dim: int, n_trees: int = 8, depth: int = 5,
                 gate_hidden: int | None = None, noise_sigma: float = 0.5,
                 gated: bool = True, rng: np.random.Generator | None = None):
        if n_trees < 1:
            raise RouteError(f"ensemble needs at least one tree, got {n_trees}")
        if depth < 1:
            raise RouteError(f"trees need depth >= 1, got {depth}")
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.n_trees = n_trees
        self.depth = depth
        self.latent_dim = 2 ** depth
        groups = n_trees * depth
        self.gates = GateBank(in_dim, groups=groups, hidden=gate_hidden,
                              noise_sigma=noise_sigma, rng=rng) if gated \
            else None
        self.w = Tensor(rng.normal(0.0, 1.0 / np.sqrt(in_dim),
                                   (groups, in_dim)), requires_grad=True)
        self.tau = Tensor(np.zeros(groups), requires_grad=True)
        # temperature T = exp(rho) keeps T positive while rho trains freely
        self.rho = Tensor(np.zeros(groups), requires_grad=True)
        # bit of each leaf at each level; level 0 is the most significant
        self._bits = np.array(
            [[(leaf >> (depth - 1 - level)) & 1
              for leaf in range(self.latent_dim)]
             for level in range(depth)], dtype=np.float64)

    def temperatures(self) -> np.ndarray:
        """Current per-(tree, level) temperatures, shape (n_trees * depth,)."""
        return np.exp(self.rho.data)

    def level_index(self, tree: int, level: int) -> int:
        return tree * self.depth + level

    def parameters(self):
        if self.gates is not None:
            for name, p in self.gates.parameters():
                yield f"gates.{name}", p
        yield "w", self.w
        yield "tau", self.tau
        yield "rho", self.rho


def _check_input(enc: OsdtEncoder, X) -> Tensor:
    x = X if isinstance(X, Tensor) else Tensor(X)
    if x.data.ndim != 2 or x.data.shape[1] != enc.in_dim:
        raise RouteError(f"input of shape {x.data.shape} does not match "
                         f"encoder over {enc.in_dim} features")
    return x


def _bank_mask(enc: OsdtEncoder, x: Tensor, mode: str, rng, noise):
    if enc.gates is None:
        return None
    return gate(x, enc.gates, mode, rng=rng, noise=noise)


def route(enc: OsdtEncoder, tree: int, X, mode: str = "deterministic",
          rng: np.random.Generator | None = None,
          noise: np.ndarray | None = None) -> Tensor:
    """Leaf distribution of one tree, shape (rows, 2^depth).

    Walks the levels deepest-first so the first level occupies the most
    significant bit of the leaf index. ``noise``, when given, covers the
    whole gate bank so routing stays consistent with ``encode_osdt``.
    """
    if not 0 <= tree < enc.n_trees:
        raise RouteError(f"tree index {tree} outside ensemble of "
                         f"{enc.n_trees}")
    x = _check_input(enc, X)
    mask = _bank_mask(enc, x, mode, rng, noise)
    n = x.data.shape[0]
    D = enc.in_dim
    p = Tensor(np.ones((n, 1)))
    for level in reversed(range(enc.depth)):
        g = enc.level_index(tree, level)
        if mask is not None:
            level_mask = narrow(mask, g * D, D)
            xt = apply_gate(x, level_mask)
        else:
            xt = x
        w_row = narrow(enc.w, g, 1, axis=0).reshape(D)
        tau_g = narrow(enc.tau, g, 1, axis=0)
        rho_g = narrow(enc.rho, g, 1, axis=0)
        s = ((xt @ w_row) - tau_g) / rho_g.exp()
        sp = s.sigmoid().reshape(n, 1)
        sm = (-s).sigmoid().reshape(n, 1)
        p = concat([p * sm, p * sp], axis=1)
    return p


def encode_osdt(enc: OsdtEncoder, X, mode: str = "deterministic",
                rng: np.random.Generator | None = None,
                noise: np.ndarray | None = None) -> Tensor:
    """Ensemble latent: mean leaf distribution over all trees.

    Fused evaluation: all gate masks in one pass, all level scores in one
    grouped product, leaf probabilities via exp of bit-pattern matmuls of
    the log branch probabilities (identical to the per-level product, but a
    handful of ops instead of hundreds).
    """
    if enc.n_trees < 1:
        raise RouteError("empty ensemble")
    x = _check_input(enc, X)
    mask = _bank_mask(enc, x, mode, rng, noise)
    groups = enc.n_trees * enc.depth
    if mask is not None:
        xg = apply_gate(x, mask)
    else:
        xg = Tensor(np.tile(x.data, groups))
    s = (grouped_dot(xg, enc.w, groups) - enc.tau) / enc.rho.exp()
    log_sp = -((-s).softplus())
    log_sm = -(s.softplus())
    bits1 = Tensor(enc._bits)
    bits0 = Tensor(1.0 - enc._bits)
    total = None
    for tree in range(enc.n_trees):
        lo = tree * enc.depth
        logp = narrow(log_sp, lo, enc.depth) @ bits1 \
            + narrow(log_sm, lo, enc.depth) @ bits0
        p = logp.exp()
        total = p if total is None else total + p
    return total * (1.0 / enc.n_trees)


def hard_route(enc: OsdtEncoder, tree: int, X) -> np.ndarray:
    """Hard leaf assignment: bit 1 where s > 0, bit 0 where s < 0, with
    deterministic gates. An exact zero is ambiguous and raises."""
    if not 0 <= tree < enc.n_trees:
        raise RouteError(f"tree index {tree} outside ensemble of "
                         f"{enc.n_trees}")
    x = _check_input(enc, X)
    mask = _bank_mask(enc, x, "deterministic", None, None)
    D = enc.in_dim
    n = x.data.shape[0]
    leaves = np.zeros(n, dtype=np.int64)
    for level in range(enc.depth):
        g = enc.level_index(tree, level)
        if mask is not None:
            xt = x.data * mask.data[:, g * D:(g + 1) * D]
        else:
            xt = x.data
        s = xt @ enc.w.data[g] - enc.tau.data[g]
        if np.any(s == 0.0):
            row = int(np.nonzero(s == 0.0)[0][0])
            raise BoundaryError(
                f"decision at tree {tree} level {level} is exactly zero "
                f"for row {row}")
        leaves |= (s > 0).astype(np.int64) << (enc.depth - 1 - level)
    return leaves
