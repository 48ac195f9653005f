"""Neural encoder, shared decoder, and downstream prediction head.

The encoder is a 4-block MLP (dense, batch normalization, leaky ReLU with
slope 0.01) whose hidden widths walk geometrically from the input width D
down (or up) to the latent width k, each rounded to the nearest power of
two. The decoder mirrors it in reverse with a linear output layer; one
decoder instance serves the latents of both encoders. The head is a single
dense layer used for downstream classification or regression.

Inference consumes only the input gate, the neural encoder in eval mode,
and the head; nothing else is needed once training ends.
"""

from __future__ import annotations

import numpy as np

from .autodiff import BatchNorm, ShapeError, Tensor
from .gating import apply_gate, gate

SLOPE = 0.01


class PredictError(RuntimeError):
    """Raised when prediction is requested from a model without a head."""


def hidden_widths(in_dim: int, latent_dim: int) -> list[int]:
    """Output widths of the 4 encoder blocks.

    Log-linear interpolation from in_dim to latent_dim, rounded half-up to
    the nearest power of two; the final block is exactly latent_dim.
    """
    lo = np.log2(in_dim)
    hi = np.log2(latent_dim)
    widths = []
    for i in range(1, 4):
        e = lo + (hi - lo) * i / 4.0
        widths.append(int(2 ** int(np.floor(e + 0.5))))
    widths.append(latent_dim)
    return widths


def _dense_stack(dims, rng, last_linear):
    """Weights, biases, and norms for a chain of dense blocks.

    Leaky-ReLU blocks get N(0, 2/fan_in) weights; a trailing linear layer
    gets N(0, 1/fan_in) and no norm.
    """
    weights, biases, norms = [], [], []
    for j, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        linear = last_linear and j == len(dims) - 2
        std = np.sqrt((1.0 if linear else 2.0) / fan_in)
        weights.append(Tensor(rng.normal(0.0, std, (fan_in, fan_out)),
                              requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
        if not linear:
            norms.append(BatchNorm(fan_out))
    return weights, biases, norms


def _iter_stack(weights, biases, norms):
    for j, (w, b) in enumerate(zip(weights, biases)):
        yield f"w{j}", w
        yield f"b{j}", b
    for j, bn in enumerate(norms):
        for name, p in bn.parameters():
            yield f"bn{j}.{name}", p


class MlpEncoder:
    """4-block dense encoder mapping D inputs to a k-dim latent."""

    def __init__(self, in_dim: int, latent_dim: int,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.latent_dim = latent_dim
        self.widths = hidden_widths(in_dim, latent_dim)
        self.weights, self.biases, self.norms = _dense_stack(
            [in_dim] + self.widths, rng, last_linear=False)

    def parameters(self):
        yield from _iter_stack(self.weights, self.biases, self.norms)

    def buffers(self):
        for j, bn in enumerate(self.norms):
            for name, arr in bn.state_arrays():
                yield f"bn{j}.{name}", arr


class SharedDecoder:
    """Mirror of the encoder: k back to D, linear output layer."""

    def __init__(self, latent_dim: int, out_dim: int,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.latent_dim = latent_dim
        self.out_dim = out_dim
        enc_widths = hidden_widths(out_dim, latent_dim)
        self.widths = list(reversed(enc_widths))[1:] + [out_dim]
        self.weights, self.biases, self.norms = _dense_stack(
            [latent_dim] + self.widths, rng, last_linear=True)

    def parameters(self):
        yield from _iter_stack(self.weights, self.biases, self.norms)

    def buffers(self):
        for j, bn in enumerate(self.norms):
            for name, arr in bn.state_arrays():
                yield f"bn{j}.{name}", arr


class DownstreamHead:
    """Single dense layer: k to class-logit or scalar-regression width.

    Starts at zero so the probe opens on uniform logits; the first update
    then follows class-mean differences instead of spending the
    early-stopping budget unwinding a random confident predictor.
    """

    def __init__(self, latent_dim: int, out_dim: int):
        self.latent_dim = latent_dim
        self.out_dim = out_dim
        self.w = Tensor(np.zeros((latent_dim, out_dim)), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self):
        yield "w", self.w
        yield "b", self.b

    def __call__(self, z: Tensor) -> Tensor:
        return z @ self.w + self.b


def _as_2d(X, width, what):
    x = X if isinstance(X, Tensor) else Tensor(X)
    if x.data.ndim != 2 or x.data.shape[1] != width:
        raise ShapeError(f"{what} expects width {width}, "
                         f"got shape {x.data.shape}")
    return x


def encode_nn(X, enc: MlpEncoder, train_mode: bool) -> Tensor:
    h = _as_2d(X, enc.in_dim, "encoder")
    for w, b, bn in zip(enc.weights, enc.biases, enc.norms):
        h = bn(h @ w + b, train=train_mode).leaky_relu(SLOPE)
    return h


def decode(Z, dec: SharedDecoder, train_mode: bool) -> Tensor:
    h = _as_2d(Z, dec.latent_dim, "decoder")
    for w, b, bn in zip(dec.weights[:-1], dec.biases[:-1], dec.norms):
        h = bn(h @ w + b, train=train_mode).leaky_relu(SLOPE)
    return h @ dec.weights[-1] + dec.biases[-1]


def predict(X, gate_nn, enc: MlpEncoder, head: DownstreamHead | None) -> Tensor:
    """Inference path: gate deterministically, encode in eval mode, apply
    the head. The tree branch and the decoder play no part here."""
    if head is None:
        raise PredictError("model has no downstream head; fine-tune first")
    x = _as_2d(X, enc.in_dim, "predict")
    if gate_nn is not None:
        x = apply_gate(x, gate(x, gate_nn, "deterministic"))
    z = encode_nn(x, enc, train_mode=False)
    return head(z)
