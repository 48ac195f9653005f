"""Joint objective, optimizer, and the two-stage training protocol.

The model couples a gated neural encoder and a gated tree-ensemble encoder
through one shared decoder. Pretraining minimizes

    recon + lambda_align * align + lambda_lrs * lrs

where recon sums the per-branch reconstruction errors, align penalizes
disagreement between the two reconstructions, and lrs is the mean cosine
distance between the two latents. Fine-tuning attaches a dense head and
runs two phases: head-only against a bit-frozen backbone, then head plus
the inference encoder at a reduced learning rate, with gates held frozen
and deterministic throughout. The best validation checkpoint survives.

Five ablation variants accompany the full model; they reuse the same loop
with branches or gates removed and are built by ``build_variant``.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tensor, cosine_similarity, zero_grads
from .gating import GateBank, apply_gate, gate
from .nnet import (DownstreamHead, MlpEncoder, PredictError, SharedDecoder,
                   decode, encode_nn, predict)
from .osdt import OsdtEncoder, encode_osdt

VARIANTS = ("tandem", "ss_ae", "ss_ae_gated", "osdt_ae_gated",
            "tandem_no_gate", "tandem_no_lrs_align")


class ConfigError(ValueError):
    """Raised for invalid configuration values or variant tags."""


class LossError(ValueError):
    """Raised when a loss is requested over unusable inputs."""


class OptimizerError(RuntimeError):
    """Raised when an update step would apply non-finite gradients."""


class FinetuneError(ValueError):
    """Raised on task/label contract violations during fine-tuning."""


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be interpreted."""


@dataclass
class TrainConfig:
    pretrain_epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    weight_decay: float = 0.0
    finetune_epochs_frozen: int = 25
    finetune_epochs_tuned: int = 25
    finetune_lr_factor: float = 0.1
    seed: int = 0
    lambda_align: float = 1.0
    lambda_lrs: float = 1.0
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    patience: int = 10

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.finetune_epochs_frozen < 0 \
                or self.finetune_epochs_tuned < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch statistics)")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.finetune_lr_factor <= 1:
            raise ConfigError("finetune_lr_factor must lie in (0, 1]")
        if self.lambda_align < 0 or self.lambda_lrs < 0:
            raise ConfigError("loss weights must be >= 0")
        if not 0 <= self.rmsprop_decay < 1:
            raise ConfigError("rmsprop_decay must lie in [0, 1)")
        if self.rmsprop_eps <= 0 or self.weight_decay < 0:
            raise ConfigError("rmsprop_eps must be > 0, weight_decay >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


class TandemModel:
    """Assembly of gates, encoders, shared decoder, and optional head."""

    def __init__(self, variant: str, gate_nn, osdt, enc_nn, decoder,
                 lambda_align: float, lambda_lrs: float):
        self.variant = variant
        self.gate_nn = gate_nn
        self.osdt = osdt
        self.enc_nn = enc_nn
        self.decoder = decoder
        self.head = None
        self.lambda_align = lambda_align
        self.lambda_lrs = lambda_lrs

    @property
    def in_dim(self) -> int:
        return self.decoder.out_dim

    @property
    def latent_dim(self) -> int:
        return self.decoder.latent_dim

    def _components(self):
        if self.gate_nn is not None:
            yield "gate_nn", self.gate_nn
        if self.osdt is not None:
            yield "osdt", self.osdt
        if self.enc_nn is not None:
            yield "enc_nn", self.enc_nn
        yield "decoder", self.decoder
        if self.head is not None:
            yield "head", self.head

    def named_parameters(self):
        for prefix, comp in self._components():
            for name, p in comp.parameters():
                yield f"{prefix}.{name}", p

    def named_buffers(self):
        for prefix, comp in self._components():
            if hasattr(comp, "buffers"):
                for name, arr in comp.buffers():
                    yield f"{prefix}.{name}", arr

    def _norm_layers(self):
        for prefix, comp in (("enc_nn", self.enc_nn),
                             ("decoder", self.decoder)):
            if comp is not None:
                for j, bn in enumerate(comp.norms):
                    yield f"{prefix}.bn{j}", bn

    def set_buffer(self, name: str, arr: np.ndarray) -> None:
        layer_name, stat = name.rsplit(".", 1)
        for key, bn in self._norm_layers():
            if key == layer_name:
                setattr(bn, stat, arr.copy())
                return
        raise CheckpointError(f"unknown buffer {name}")


def build_variant(tag: str, in_dim: int, n_trees: int = 8, depth: int = 5,
                  config: TrainConfig | None = None,
                  rng: np.random.Generator | None = None) -> TandemModel:
    """Construct the full model or one of its five ablations.

    Construction order is fixed so two variants built from the same seed
    share bit-identical parameters wherever their architectures overlap.
    """
    config = config or TrainConfig()
    rng = rng or np.random.default_rng(config.seed)
    k = 2 ** depth
    la, ll = config.lambda_align, config.lambda_lrs
    if tag in ("tandem", "tandem_no_lrs_align"):
        gate_nn = GateBank(in_dim, groups=1, rng=rng)
        osdt = OsdtEncoder(in_dim, n_trees, depth, gated=True, rng=rng)
        enc_nn = MlpEncoder(in_dim, k, rng=rng)
        if tag == "tandem_no_lrs_align":
            la = ll = 0.0
    elif tag == "tandem_no_gate":
        gate_nn = None
        osdt = OsdtEncoder(in_dim, n_trees, depth, gated=False, rng=rng)
        enc_nn = MlpEncoder(in_dim, k, rng=rng)
    elif tag == "ss_ae":
        gate_nn, osdt = None, None
        enc_nn = MlpEncoder(in_dim, k, rng=rng)
    elif tag == "ss_ae_gated":
        gate_nn = GateBank(in_dim, groups=1, rng=rng)
        osdt = None
        enc_nn = MlpEncoder(in_dim, k, rng=rng)
    elif tag == "osdt_ae_gated":
        gate_nn, enc_nn = None, None
        osdt = OsdtEncoder(in_dim, n_trees, depth, gated=True, rng=rng)
    else:
        raise ConfigError(f"unknown variant tag {tag!r}; "
                          f"expected one of {VARIANTS}")
    decoder = SharedDecoder(k, in_dim, rng=rng)
    return TandemModel(tag, gate_nn, osdt, enc_nn, decoder, la, ll)


def forward_pass(model: TandemModel, X, mode: str = "deterministic",
                 train_mode: bool = True,
                 rng: np.random.Generator | None = None) -> dict:
    """One full forward through every present branch.

    Returns Tensors keyed x, z_nn, xhat_nn, z_osdt, xhat_osdt (absent
    branches map to None). In stochastic mode the neural-branch gate draws
    noise from ``rng`` first, then the tree gates; callers relying on
    reproducibility must honor that order.
    """
    x = X if isinstance(X, Tensor) else Tensor(X)
    if x.data.ndim != 2 or x.data.shape[0] == 0:
        raise LossError(f"expected a non-empty 2-d batch, "
                        f"got shape {x.data.shape}")
    out = {"x": x, "z_nn": None, "xhat_nn": None,
           "z_osdt": None, "xhat_osdt": None}
    if model.enc_nn is not None:
        xin = x
        if model.gate_nn is not None:
            xin = apply_gate(x, gate(x, model.gate_nn, mode, rng=rng))
        out["z_nn"] = encode_nn(xin, model.enc_nn, train_mode)
        out["xhat_nn"] = decode(out["z_nn"], model.decoder, train_mode)
    if model.osdt is not None:
        out["z_osdt"] = encode_osdt(model.osdt, x, mode, rng=rng)
        out["xhat_osdt"] = decode(out["z_osdt"], model.decoder, train_mode)
    return out


def _sq_row_sum_mean(diff: Tensor) -> Tensor:
    return diff.square().sum(axis=1).mean()


def loss_align(xhat_osdt: Tensor, xhat_nn: Tensor) -> Tensor:
    """Mean squared distance between the two reconstructions."""
    if xhat_osdt.data.shape != xhat_nn.data.shape:
        raise LossError(f"reconstruction shapes differ: "
                        f"{xhat_osdt.data.shape} vs {xhat_nn.data.shape}")
    return _sq_row_sum_mean(xhat_osdt - xhat_nn)


def loss_lrs(z_nn: Tensor, z_osdt: Tensor) -> Tensor:
    """Mean cosine distance between the latents; bounded by [0, 2]."""
    cos = cosine_similarity(z_nn, z_osdt, axis=1)
    return (Tensor(np.ones(1)) - cos).mean()


def _branch_losses(model: TandemModel, out: dict):
    x = out["x"]
    recon = None
    for key in ("xhat_osdt", "xhat_nn"):
        if out[key] is not None:
            term = _sq_row_sum_mean(x - out[key])
            recon = term if recon is None else recon + term
    align = lrs = None
    if out["xhat_osdt"] is not None and out["xhat_nn"] is not None:
        align = loss_align(out["xhat_osdt"], out["xhat_nn"])
        lrs = loss_lrs(out["z_nn"], out["z_osdt"])
    return recon, align, lrs


def loss_recon(X, model: TandemModel, mode: str = "deterministic",
               train_mode: bool = True,
               rng: np.random.Generator | None = None) -> Tensor:
    """Summed per-branch reconstruction error, averaged over the batch."""
    out = forward_pass(model, X, mode, train_mode, rng)
    recon, _, _ = _branch_losses(model, out)
    return recon


def total_loss(X, model: TandemModel, mode: str = "deterministic",
               train_mode: bool = True,
               rng: np.random.Generator | None = None) -> Tensor:
    out = forward_pass(model, X, mode, train_mode, rng)
    recon, align, lrs = _branch_losses(model, out)
    total = recon
    if align is not None and model.lambda_align != 0.0:
        total = total + align * model.lambda_align
    if lrs is not None and model.lambda_lrs != 0.0:
        total = total + lrs * model.lambda_lrs
    return total


class RmspropState:
    """Per-parameter squared-gradient accumulators, aligned with params."""

    def __init__(self, params):
        params = list(params)
        self.names = [name for name, _ in params]
        self.v = [np.zeros_like(p.data) for _, p in params]


def rmsprop_step(params, state: RmspropState, lr: float, decay: float = 0.9,
                 eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """v <- decay*v + (1-decay)*g^2; p <- p - lr*g/(sqrt(v)+eps) - lr*wd*p.

    Weight decay is decoupled: it never enters the accumulator. A
    non-finite gradient aborts before touching any parameter.
    """
    params = list(params)
    grads = []
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient in {name}")
        grads.append(g)
    for (name, p), g, v in zip(params, grads, state.v):
        v *= decay
        v += (1.0 - decay) * g * g
        p.data = p.data - lr * g / (np.sqrt(v) + eps) \
            - lr * weight_decay * p.data


def make_batches(n: int, batch_size: int,
                 rng: np.random.Generator) -> list:
    """Shuffled index batches; a trailing singleton is dropped because a
    batch of one has no batch statistics."""
    idx = rng.permutation(n)
    batches = [idx[i:i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) == 1:
        batches.pop()
    return batches


def _streams(seed: int):
    kids = np.random.SeedSequence(seed).spawn(4)
    return [np.random.default_rng(k) for k in kids]


@dataclass
class PretrainResult:
    history: list = field(default_factory=list)
    opt_state: RmspropState | None = None


def _recalibrate_stats(model: TandemModel, X: np.ndarray) -> None:
    """Refit the inference encoder's batch-norm running statistics on the
    deterministically gated pool.

    Pretraining feeds the encoder stochastically gated views, so running
    statistics drift toward that noisier distribution, while inference
    gates with eps = 0. One train-mode pass with momentum forced to 1.0
    pins every layer's statistics to the view the encoder actually sees
    downstream; without it the fine-tuned head can sit on shifted
    activations and collapse on unlucky seeds.
    """
    if model.enc_nn is None:
        return
    x = Tensor(X)
    if model.gate_nn is not None:
        x = apply_gate(x, gate(x, model.gate_nn, "deterministic"))
    saved = [bn.momentum for bn in model.enc_nn.norms]
    for bn in model.enc_nn.norms:
        bn.momentum = 1.0
    try:
        encode_nn(x, model.enc_nn, train_mode=True)
    finally:
        for bn, m in zip(model.enc_nn.norms, saved):
            bn.momentum = m


def pretrain(model: TandemModel, X, config: TrainConfig) -> PretrainResult:
    """Self-supervised pretraining: stochastic gates, every parameter
    trainable, one optimizer step per shuffled mini-batch. Ends with a
    batch-norm recalibration pass on the deterministic view."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise LossError("pretraining pool must be a non-empty 2-d array")
    if model.head is not None:
        raise ConfigError("pretraining expects a headless model")
    shuffle_rng, noise_rng, _, _ = _streams(config.seed)
    params = list(model.named_parameters())
    state = RmspropState(params)
    history = []
    for epoch in range(config.pretrain_epochs):
        sums = {"recon": 0.0, "align": 0.0, "lrs": 0.0, "total": 0.0}
        count = 0
        for bidx in make_batches(X.shape[0], config.batch_size, shuffle_rng):
            out = forward_pass(model, X[bidx], mode="stochastic",
                               train_mode=True, rng=noise_rng)
            recon, align, lrs = _branch_losses(model, out)
            total = recon
            if align is not None and model.lambda_align != 0.0:
                total = total + align * model.lambda_align
            if lrs is not None and model.lambda_lrs != 0.0:
                total = total + lrs * model.lambda_lrs
            zero_grads(params)
            total.backward()
            try:
                rmsprop_step(params, state, lr=config.lr,
                             decay=config.rmsprop_decay,
                             eps=config.rmsprop_eps,
                             weight_decay=config.weight_decay)
            except OptimizerError as err:
                err.history = history
                raise
            sums["recon"] += float(recon.data)
            sums["align"] += float(align.data) if align is not None else 0.0
            sums["lrs"] += float(lrs.data) if lrs is not None else 0.0
            sums["total"] += float(total.data)
            count += 1
        row = {"epoch": epoch + 1}
        row.update({k: (v / count if count else float("nan"))
                    for k, v in sums.items()})
        history.append(row)
    _recalibrate_stats(model, X)
    return PretrainResult(history=history, opt_state=state)


def attach_head(model: TandemModel, out_dim: int) -> None:
    model.head = DownstreamHead(model.latent_dim, out_dim)


def predict_model(model: TandemModel, X) -> Tensor:
    """Inference output: gate + neural encoder + head when the neural
    branch exists, tree encoder + head otherwise."""
    if model.head is None:
        raise PredictError("model has no downstream head; fine-tune first")
    if model.enc_nn is not None:
        return predict(X, model.gate_nn, model.enc_nn, model.head)
    z = encode_osdt(model.osdt, X, mode="deterministic")
    return model.head(z)


def softmax_cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels under softmax logits.

    Logits are shifted by their row max (a constant with zero gradient)
    before exponentiation, so arbitrarily large scores stay finite.
    """
    y = np.asarray(y)
    n, c = logits.data.shape
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    sh = logits - shift
    log_z = sh.exp().sum(axis=1).log()
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    picked = (sh * Tensor(onehot)).sum(axis=1)
    return (log_z - picked).mean()


def _mse_loss(pred: Tensor, y: np.ndarray) -> Tensor:
    target = Tensor(np.asarray(y, dtype=np.float64).reshape(-1, 1))
    return (pred - target).square().sum(axis=1).mean()


def _check_labels(y_tr, y_val, task):
    if task == "classification":
        for y in (y_tr, y_val):
            if y.dtype.kind == "f" and not np.all(y == np.round(y)):
                raise FinetuneError("classification labels must be integers")
        y_tr = y_tr.astype(np.int64)
        y_val = y_val.astype(np.int64)
        if y_tr.min() < 0 or y_val.min() < 0:
            raise FinetuneError("labels must be non-negative class indices")
        n_out = int(max(y_tr.max(), y_val.max())) + 1
        if n_out < 2:
            raise FinetuneError("classification needs at least two classes")
        return y_tr, y_val, n_out
    if task == "regression":
        return (y_tr.astype(np.float64), y_val.astype(np.float64), 1)
    raise FinetuneError(f"unknown task {task!r}; expected "
                        f"'classification' or 'regression'")


@dataclass
class FinetuneResult:
    history: list = field(default_factory=list)
    best_metric: float = float("nan")
    best_epoch: int = 0


def _encoder_branch(model: TandemModel):
    """Parameters tuned in phase 2 alongside the head: the inference
    encoder, never its gates."""
    if model.enc_nn is not None:
        return [(n, p) for n, p in model.named_parameters()
                if n.startswith("enc_nn.")]
    return [(n, p) for n, p in model.named_parameters()
            if n in ("osdt.w", "osdt.tau", "osdt.rho")]


def _supervised_logits(model: TandemModel, xb, frozen: bool) -> Tensor:
    x = Tensor(xb)
    if model.enc_nn is not None:
        if model.gate_nn is not None:
            x = apply_gate(x, gate(x, model.gate_nn, "deterministic"))
        z = encode_nn(x, model.enc_nn, train_mode=not frozen)
    else:
        z = encode_osdt(model.osdt, x, mode="deterministic")
    if frozen:
        # cut the graph: the backbone must not even accumulate gradients
        z = Tensor(z.data)
    return model.head(z)


def _val_metric(model: TandemModel, X_val, y_val, task) -> float:
    out = predict_model(model, X_val).data
    if task == "classification":
        return float(np.mean(np.argmax(out, axis=1) == y_val))
    return float(np.mean((out.reshape(-1) - y_val) ** 2))


def finetune(model: TandemModel, X_tr, y_tr, X_val, y_val, task: str,
             config: TrainConfig) -> FinetuneResult:
    """Freeze-then-tune downstream protocol.

    Phase 1 trains the head alone against the bit-frozen backbone. Phase 2
    trains head plus the inference encoder at lr * finetune_lr_factor.
    Gates stay frozen and deterministic in both phases; the decoder and the
    non-inference branch are never touched. Early stopping watches the
    validation metric with the configured patience, per phase, and the best
    checkpoint over both phases is restored at the end.
    """
    X_tr = np.asarray(X_tr, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_tr, y_val = np.asarray(y_tr), np.asarray(y_val)
    if X_tr.shape[0] == 0 or X_val.shape[0] == 0:
        raise FinetuneError("labeled train and validation sets must be "
                            "non-empty")
    if X_tr.shape[0] != y_tr.shape[0] or X_val.shape[0] != y_val.shape[0]:
        raise FinetuneError("feature/label lengths differ")
    y_tr, y_val, n_out = _check_labels(y_tr, y_val, task)
    shuffle_rng = _streams(config.seed)[2]
    if model.head is None:
        attach_head(model, n_out)
    elif model.head.out_dim != n_out:
        raise FinetuneError(f"existing head width {model.head.out_dim} "
                            f"does not match task width {n_out}")
    higher_better = task == "classification"

    def tracked():
        names = {n for n, _ in _encoder_branch(model)}
        names |= {n for n, _ in model.named_parameters()
                  if n.startswith("head.")}
        params = {n: p for n, p in model.named_parameters() if n in names}
        buffers = {n: arr for n, arr in model.named_buffers()
                   if n.startswith("enc_nn.")}
        return params, buffers

    best = None
    best_epoch = 0
    snapshot = None
    history = []
    epoch_no = 0
    phases = [
        ("frozen", config.finetune_epochs_frozen,
         [(n, p) for n, p in model.named_parameters()
          if n.startswith("head.")], config.lr, True),
        ("tuned", config.finetune_epochs_tuned,
         [(n, p) for n, p in model.named_parameters()
          if n.startswith("head.")] + _encoder_branch(model),
         config.lr * config.finetune_lr_factor, False),
    ]
    supervised = softmax_cross_entropy if task == "classification" \
        else _mse_loss
    for phase_name, n_epochs, params, lr, frozen in phases:
        state = RmspropState(params)
        stale = 0
        for _ in range(n_epochs):
            loss_sum, count = 0.0, 0
            for bidx in make_batches(X_tr.shape[0], config.batch_size,
                                     shuffle_rng):
                out = _supervised_logits(model, X_tr[bidx], frozen)
                loss = supervised(out, y_tr[bidx])
                zero_grads(params)
                loss.backward()
                rmsprop_step(params, state, lr=lr,
                             decay=config.rmsprop_decay,
                             eps=config.rmsprop_eps,
                             weight_decay=config.weight_decay)
                loss_sum += float(loss.data)
                count += 1
            epoch_no += 1
            metric = _val_metric(model, X_val, y_val, task)
            history.append({"phase": phase_name, "epoch": epoch_no,
                            "train_loss": loss_sum / count if count
                            else float("nan"),
                            "val_metric": metric})
            improved = best is None or (metric > best if higher_better
                                        else metric < best)
            if improved:
                best, best_epoch, stale = metric, epoch_no, 0
                params_now, buffers_now = tracked()
                snapshot = ({n: p.data.copy() for n, p in params_now.items()},
                            {n: arr.copy() for n, arr in buffers_now.items()})
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if best is None:
        best = _val_metric(model, X_val, y_val, task)
    if snapshot is not None:
        best_params, best_buffers = snapshot
        for n, p in model.named_parameters():
            if n in best_params:
                p.data = best_params[n].copy()
        for n, arr in best_buffers.items():
            model.set_buffer(n, arr)
    return FinetuneResult(history=history, best_metric=best,
                          best_epoch=best_epoch)


def _encode_array(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(spec: dict) -> np.ndarray:
    raw = base64.b64decode(spec["data"])
    arr = np.frombuffer(raw, dtype="<f8").reshape(spec["shape"])
    return arr.copy()


def save_checkpoint(model: TandemModel, path, config: TrainConfig | None
                    = None, opt_state: RmspropState | None = None) -> None:
    """Write the whole model (and optionally config and optimizer state)
    to one self-describing JSON file; arrays travel as base64 float64."""
    doc = {
        "format": "tandem-checkpoint",
        "version": 1,
        "variant": model.variant,
        "in_dim": model.in_dim,
        "n_trees": model.osdt.n_trees if model.osdt is not None else 1,
        "depth": int(np.log2(model.latent_dim)),
        "lambda_align": model.lambda_align,
        "lambda_lrs": model.lambda_lrs,
        "head_dim": model.head.out_dim if model.head is not None else None,
        "config": asdict(config) if config is not None else None,
        "params": {n: _encode_array(p.data)
                   for n, p in model.named_parameters()},
        "buffers": {n: _encode_array(arr)
                    for n, arr in model.named_buffers()},
        "opt": ({n: _encode_array(v) for n, v
                 in zip(opt_state.names, opt_state.v)}
                if opt_state is not None else None),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Rebuild a model from ``save_checkpoint`` output.

    Returns (model, config); config is None when none was saved.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "tandem-checkpoint" or doc.get("version") != 1:
        raise CheckpointError(f"not a recognizable checkpoint: {path}")
    config = TrainConfig(**doc["config"]) if doc["config"] else None
    model = build_variant(doc["variant"], doc["in_dim"],
                          n_trees=doc["n_trees"], depth=doc["depth"],
                          config=config)
    model.lambda_align = doc["lambda_align"]
    model.lambda_lrs = doc["lambda_lrs"]
    if doc["head_dim"] is not None:
        attach_head(model, doc["head_dim"])
    for name, p in model.named_parameters():
        if name not in doc["params"]:
            raise CheckpointError(f"checkpoint missing parameter {name}")
        arr = _decode_array(doc["params"][name])
        if arr.shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {name}: "
                                  f"{arr.shape} vs {p.data.shape}")
        p.data = arr
    for name, spec in doc["buffers"].items():
        model.set_buffer(name, _decode_array(spec))
    return model, config
