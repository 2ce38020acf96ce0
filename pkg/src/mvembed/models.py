"""The three embedding architectures and their training loop.

All three share the same encoder: four blocks of [conv5x5, relu, conv5x5,
relu, maxpool2], a fully connected bottleneck with relu, and then either a
mirrored decoder (autoencoder), a single-layer classifier head, or both
(combined, trained on the sum of the two losses).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import Tensor
from .view_select import ViewStack

AUTOENCODER = "autoencoder"
CLASSIFICATION = "classification"
COMBINED = "combined"
MODEL_KINDS = (AUTOENCODER, CLASSIFICATION, COMBINED)

LOSS_ABORT_THRESHOLD = 1e6


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int
    resolution: int = 64
    blocks: int = 4
    kernel: int = 5
    base_channels: int = 8  # paper-faithful width is 64
    bottleneck_dim: int = 128

    def __post_init__(self):
        if self.resolution % (2**self.blocks) != 0:
            raise ValueError(
                f"resolution {self.resolution} not divisible by 2^{self.blocks}"
            )
        if self.kernel != 5:
            raise ValueError("only 5x5 kernels are supported")

    @property
    def block_channels(self) -> tuple[int, ...]:
        """Output channels of block b = base * 2^b, b = 1..blocks."""
        return tuple(self.base_channels * 2**b for b in range(1, self.blocks + 1))

    @property
    def feature_resolution(self) -> int:
        return self.resolution // 2**self.blocks

    @property
    def flat_features(self) -> int:
        return self.block_channels[-1] * self.feature_resolution**2


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    batch_size: int = 100  # paper value; desk preset overrides
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = 1.0  # weight of the classification loss in the combined model
    lr_schedule: str = "constant"  # or "cosine" (anneal to 0 over the run)
    warmup: float = 0.0  # linear lr ramp over this initial fraction of iterations
    avg_tail: float = 0.0  # average weights over this final fraction of iterations

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 <= self.warmup <= 1.0:
            raise ValueError(f"warmup must be in [0, 1], got {self.warmup}")
        if not 0.0 <= self.avg_tail <= 1.0:
            raise ValueError(f"avg_tail must be in [0, 1], got {self.avg_tail}")


@dataclass
class TrainedModel:
    kind: str
    params: dict[str, Tensor]
    enc_cfg: EncoderConfig
    train_cfg: TrainConfig
    n_classes: int
    loss_curve: list[float] = field(default_factory=list)
    accuracy_curve: list[float] = field(default_factory=list)


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_params(
    kind: str,
    cfg: EncoderConfig,
    n_classes: int = 0,
    seed: int = 0,
    dtype=np.float32,
) -> dict[str, Tensor]:
    """He-normal weights, zero biases, drawn in a fixed order from one seed."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    rng = np.random.default_rng(seed)
    kk = cfg.kernel**2
    p: dict[str, np.ndarray] = {}
    cin = cfg.in_channels
    for b, cout in enumerate(cfg.block_channels, start=1):
        p[f"enc.b{b}.conv1.w"] = _he(rng, (cout, cin, 5, 5), cin * kk, dtype)
        p[f"enc.b{b}.conv1.b"] = np.zeros(cout, dtype)
        p[f"enc.b{b}.conv2.w"] = _he(rng, (cout, cout, 5, 5), cout * kk, dtype)
        p[f"enc.b{b}.conv2.b"] = np.zeros(cout, dtype)
        cin = cout
    p["enc.fc.w"] = _he(rng, (cfg.flat_features, cfg.bottleneck_dim), cfg.flat_features, dtype)
    p["enc.fc.b"] = np.zeros(cfg.bottleneck_dim, dtype)
    if kind in (AUTOENCODER, COMBINED):
        p["dec.fc.w"] = _he(rng, (cfg.bottleneck_dim, cfg.flat_features), cfg.bottleneck_dim, dtype)
        p["dec.fc.b"] = np.zeros(cfg.flat_features, dtype)
        # decoder blocks run at channels base*2^b for b = 4..1; the last
        # deconv maps to the input channel count and stays linear
        chans = list(cfg.block_channels[::-1]) + [cfg.in_channels]
        for i in range(cfg.blocks):
            ci, co = chans[i], chans[i + 1]
            p[f"dec.b{i + 1}.deconv.w"] = _he(rng, (ci, co, 5, 5), ci * kk, dtype)
            p[f"dec.b{i + 1}.deconv.b"] = np.zeros(co, dtype)
    if kind in (CLASSIFICATION, COMBINED):
        if n_classes < 2:
            raise ValueError(f"{kind} model needs n_classes >= 2, got {n_classes}")
        p["cls.w"] = _he(rng, (cfg.bottleneck_dim, n_classes), cfg.bottleneck_dim, dtype)
        p["cls.b"] = np.zeros(n_classes, dtype)
    return {name: nn.parameter(arr) for name, arr in p.items()}


def encoder_forward(
    params: dict[str, Tensor], cfg: EncoderConfig, x: Tensor
) -> tuple[Tensor, list[np.ndarray]]:
    """Stack batch (N,k,H,W) -> (bottleneck (N,D), per-block pooling indices)."""
    if x.shape[1:] != (cfg.in_channels, cfg.resolution, cfg.resolution):
        raise nn.ShapeError(
            f"input {x.shape} does not match config "
            f"(k={cfg.in_channels}, res={cfg.resolution})"
        )
    h = x
    indices = []
    for b in range(1, cfg.blocks + 1):
        h = nn.relu(nn.conv2d(h, params[f"enc.b{b}.conv1.w"], params[f"enc.b{b}.conv1.b"]))
        h = nn.relu(nn.conv2d(h, params[f"enc.b{b}.conv2.w"], params[f"enc.b{b}.conv2.b"]))
        h, idx = nn.maxpool2(h)
        indices.append(idx)
    flat = h.reshape(h.shape[0], cfg.flat_features)
    z = nn.relu(nn.fully_connected(flat, params["enc.fc.w"], params["enc.fc.b"]))
    return z, indices


def decoder_forward(params: dict[str, Tensor], cfg: EncoderConfig, z: Tensor) -> Tensor:
    """Bottleneck (N,D) -> reconstruction (N,k,H,W); final layer is linear."""
    h = nn.fully_connected(z, params["dec.fc.w"], params["dec.fc.b"])
    r = cfg.feature_resolution
    h = h.reshape(h.shape[0], cfg.block_channels[-1], r, r)
    for i in range(1, cfg.blocks + 1):
        h = nn.unpool2(h)
        h = nn.deconv2d(h, params[f"dec.b{i}.deconv.w"], params[f"dec.b{i}.deconv.b"])
        if i < cfg.blocks:
            h = nn.relu(h)
    return h


def classifier_forward(params: dict[str, Tensor], z: Tensor) -> Tensor:
    return nn.fully_connected(z, params["cls.w"], params["cls.b"])


def combined_loss(recon_loss: Tensor, class_loss: Tensor, lam: float) -> Tensor:
    return recon_loss + lam * class_loss


def model_loss(
    kind: str,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    batch: np.ndarray,
    labels: np.ndarray | None,
    lam: float = 1.0,
) -> tuple[Tensor, Tensor | None]:
    """Forward pass for one batch; returns (loss, logits or None)."""
    x = Tensor(batch)
    z, _ = encoder_forward(params, cfg, x)
    if kind == AUTOENCODER:
        return nn.l2_reconstruction_loss(decoder_forward(params, cfg, z), batch), None
    logits = classifier_forward(params, z)
    class_loss = nn.softmax_cross_entropy(logits, labels)
    if kind == CLASSIFICATION:
        return class_loss, logits
    recon_loss = nn.l2_reconstruction_loss(decoder_forward(params, cfg, z), batch)
    return combined_loss(recon_loss, class_loss, lam), logits


def _batch_indices(n: int, batch_size: int, iterations: int, rng: np.random.Generator):
    """Seeded permutation per epoch, wrapping across epoch boundaries."""
    order = rng.permutation(n)
    pos = 0
    for _ in range(iterations):
        idx = np.empty(batch_size, dtype=np.int64)
        for j in range(batch_size):
            if pos == n:
                order = rng.permutation(n)
                pos = 0
            idx[j] = order[pos]
            pos += 1
        yield idx


def train(
    kind: str,
    stacks: np.ndarray,
    labels: np.ndarray | None,
    cfg: TrainConfig,
    enc_cfg: EncoderConfig,
    n_classes: int = 0,
) -> TrainedModel:
    """Train one model on view stacks (M,k,H,W) float32 in [0,1].

    The autoencoder ignores labels; classification and combined require them.
    Deterministic for a fixed (cfg.seed, data order).
    """
    stacks = np.ascontiguousarray(stacks, dtype=np.float32)
    if stacks.ndim != 4 or len(stacks) == 0:
        raise TrainingError(f"need a non-empty (M,k,H,W) stack array, got {stacks.shape}")
    if kind != AUTOENCODER:
        if labels is None:
            raise TrainingError(f"{kind} training requires class labels")
        labels = np.asarray(labels, dtype=np.int64)
        if len(labels) != len(stacks):
            raise TrainingError("labels and stacks length mismatch")
        if n_classes <= labels.max():
            raise TrainingError(
                f"n_classes={n_classes} too small for label {labels.max()}"
            )
    init_seq, batch_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    params = init_params(kind, enc_cfg, n_classes, init_seq)
    plist = list(params.values())
    opt = nn.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    model = TrainedModel(kind, params, enc_cfg, cfg, n_classes)
    batch_rng = np.random.default_rng(batch_seq)
    # Tail weight averaging: the returned weights are the mean over the final
    # avg_tail fraction of iterations, which damps batch-1 iterate noise.
    avg_from = cfg.iterations - int(round(cfg.avg_tail * cfg.iterations))
    avg_sums = None
    avg_count = 0
    for it, idx in enumerate(
        _batch_indices(len(stacks), cfg.batch_size, cfg.iterations, batch_rng)
    ):
        batch = stacks[idx]
        blabels = labels[idx] if labels is not None else None
        loss, logits = model_loss(kind, params, enc_cfg, batch, blabels, cfg.lam)
        value = loss.item()
        if not np.isfinite(value) or value > LOSS_ABORT_THRESHOLD:
            raise TrainingError(f"loss diverged at iteration {it}: {value}")
        for p in plist:
            p.zero_grad()
        loss.backward()
        factor = 1.0
        if cfg.lr_schedule == "cosine":
            factor = 0.5 * (1.0 + math.cos(math.pi * it / cfg.iterations))
        warm_iters = int(round(cfg.warmup * cfg.iterations))
        if warm_iters and it < warm_iters:
            factor *= (it + 1) / warm_iters
        opt.lr = cfg.lr * factor
        nn.adam_step(plist, opt)
        model.loss_curve.append(value)
        if logits is not None:
            model.accuracy_curve.append(nn.softmax_accuracy(logits, blabels))
        if it >= avg_from:
            if avg_sums is None:
                avg_sums = {n: p.data.astype(np.float64) for n, p in params.items()}
            else:
                for n, p in params.items():
                    avg_sums[n] += p.data
            avg_count += 1
    if avg_count:
        for n, p in params.items():
            p.data[...] = (avg_sums[n] / avg_count).astype(p.data.dtype)
    return model


def embed_many(model: TrainedModel, stacks: np.ndarray, chunk: int = 4) -> np.ndarray:
    """Bottleneck embeddings (M,D) for stacks (M,k,H,W); pure inference."""
    frozen = {k: Tensor(v.data) for k, v in model.params.items()}
    out = np.empty((len(stacks), model.enc_cfg.bottleneck_dim), dtype=np.float32)
    for lo in range(0, len(stacks), chunk):
        batch = np.ascontiguousarray(stacks[lo : lo + chunk], dtype=np.float32)
        z, _ = encoder_forward(frozen, model.enc_cfg, Tensor(batch))
        out[lo : lo + chunk] = z.data
    return out


def embed(model: TrainedModel, stack: ViewStack | np.ndarray) -> np.ndarray:
    """D-dimensional embedding of a single view stack."""
    channels = stack.channels if isinstance(stack, ViewStack) else np.asarray(stack)
    return embed_many(model, channels[None])[0]


def save_model(model: TrainedModel, path) -> None:
    nn.save_params({k: v.data for k, v in model.params.items()}, path)


def load_model(
    path, kind: str, enc_cfg: EncoderConfig, train_cfg: TrainConfig, n_classes: int = 0
) -> TrainedModel:
    arrays = nn.load_params(path)
    params = {k: nn.parameter(v) for k, v in arrays.items()}
    return TrainedModel(kind, params, enc_cfg, train_cfg, n_classes)


def desk_train_config(kind: str, seed: int = 0) -> TrainConfig:
    """Desk-scale analogue of the paper setup: 2,000 iterations for the
    autoencoder and combined models, 1,000 for classification, batch 1."""
    iters = 1000 if kind == CLASSIFICATION else 2000
    return TrainConfig(
        iterations=iters, batch_size=1, seed=seed, lr=1e-3,
        lr_schedule="cosine", warmup=0.05, avg_tail=0.25,
    )


def paper_train_config(kind: str, seed: int = 0) -> TrainConfig:
    """Paper-faithful setup: batch 100, 50,000 iterations (20,000 for
    classification), Adam at its default rate."""
    iters = 20_000 if kind == CLASSIFICATION else 50_000
    return TrainConfig(iterations=iters, batch_size=100, seed=seed)
