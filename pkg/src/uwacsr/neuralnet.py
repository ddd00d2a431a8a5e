"""Residual convolutional network for CSI refinement, from scratch.

The network maps a two-channel raw channel estimate to a corrected one of
the same shape: a stack of 3x3 same-padded convolution layers with leaky
ReLU activations after every layer except the last, plus a global skip
connection, so the stack only has to learn the correction term.  With all
parameters zero the network is exactly the identity.

Everything is plain numpy.  Convolutions are im2col matrix products,
gradients are hand-derived reverse mode, and training is mini-batch
gradient descent with momentum, gradient-norm clipping, a step learning
rate decay, and early stopping on validation loss.  Parameters live in
float64; forward/backward work in the dtype of the input, so float32
batches train fast while float64 inputs give full-precision gradients.

The training loop (`fit`) is model-agnostic: anything exposing
`parameter_arrays`, `frozen_mask`, `loss_and_grads`, and `evaluate_loss`
can be trained with the same schedule machinery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._binio import (
    expect_magic,
    read_f32,
    read_u32,
    sha256_hex,
    write_f32,
    write_manifest,
    write_u32,
)
from .estimation import DEFAULT_SCALING_FACTOR

__all__ = [
    "DEFAULT_LRELU_SLOPE",
    "ConvLayer",
    "ConvNetwork",
    "TrainingConfig",
    "LossReport",
    "lrelu",
    "lrelu_grad",
    "conv2d_forward",
    "forward",
    "mse_loss",
    "mse_loss_grad",
    "backward",
    "fit",
    "freeze_layers",
    "transfer_train",
    "build_csrnet",
    "save_network",
    "load_network",
]

DEFAULT_LRELU_SLOPE = 0.3

_CHECKPOINT_MAGIC = b"CSRN"
_CHECKPOINT_VERSION = 1


def lrelu(x, slope: float = DEFAULT_LRELU_SLOPE):
    """x on the positive branch, slope * x at and below zero."""
    x = np.asarray(x)
    return np.where(x > 0.0, x, x * np.asarray(slope, dtype=x.dtype))


def lrelu_grad(x, slope: float = DEFAULT_LRELU_SLOPE):
    """1 where x > 0, otherwise the slope (including exactly at 0)."""
    x = np.asarray(x)
    return np.where(x > 0.0, np.asarray(1.0, dtype=x.dtype), np.asarray(slope, dtype=x.dtype))


@dataclass
class ConvLayer:
    """One 3x3 convolution: weights (out_ch, in_ch, 3, 3) and biases (out_ch)."""

    weights: np.ndarray
    biases: np.ndarray
    frozen: bool = False

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        if w.ndim != 4 or w.shape[2:] != (3, 3):
            raise ValueError("weights must have shape (out_ch, in_ch, 3, 3)")
        if b.shape != (w.shape[0],):
            raise ValueError("biases must have one entry per output channel")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("parameters must be finite")
        self.weights = w
        self.biases = b

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ConvLayer":
        return ConvLayer(self.weights.copy(), self.biases.copy(), self.frozen)


def _im2col(x: np.ndarray) -> np.ndarray:
    """Zero-pad by 1 and unfold 3x3 patches into rows: (B*H*W, C*9)."""
    b, c, h, w = x.shape
    padded = np.zeros((b, c, h + 2, w + 2), dtype=x.dtype)
    padded[:, :, 1:-1, 1:-1] = x
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * 9)


def _col2im(dcols: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Scatter patch-row gradients back onto the (B, C, H, W) input."""
    b, c, h, w = shape
    d = dcols.reshape(b, h, w, c, 3, 3)
    dx_pad = np.zeros((b, c, h + 2, w + 2), dtype=dcols.dtype)
    for ki in range(3):
        for kj in range(3):
            dx_pad[:, :, ki : ki + h, kj : kj + w] += d[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return dx_pad[:, :, 1:-1, 1:-1]


def _conv_batch(x: np.ndarray, layer: ConvLayer) -> tuple[np.ndarray, np.ndarray]:
    """Convolve a (B, C, H, W) batch; returns (output, patch rows)."""
    b, _, h, w = x.shape
    cols = _im2col(x)
    w2 = layer.weights.reshape(layer.out_channels, -1).astype(x.dtype, copy=False)
    bias = layer.biases.astype(x.dtype, copy=False)
    z = cols @ w2.T + bias
    return z.reshape(b, h, w, layer.out_channels).transpose(0, 3, 1, 2), cols


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Same-padded cross-correlation plus bias for one (C, H, W) tensor."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError("input must be (channels, height, width)")
    if x.shape[0] != layer.in_channels:
        raise ValueError(
            f"layer expects {layer.in_channels} input channels, got {x.shape[0]}"
        )
    out, _ = _conv_batch(x[None], layer)
    return out[0]


class ConvNetwork:
    """The residual stack: layers, activation slope, and its scaling factor.

    ``scaling_factor`` is carried as checkpoint metadata so inference code
    knows which constant to divide out of predictions.
    """

    def __init__(
        self,
        layers,
        lrelu_slope: float = DEFAULT_LRELU_SLOPE,
        scaling_factor: float = DEFAULT_SCALING_FACTOR,
    ):
        layers = list(layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        if not (0.0 < lrelu_slope < 1.0):
            raise ValueError("lrelu_slope must lie in (0, 1)")
        if scaling_factor <= 0.0:
            raise ValueError("scaling_factor must be positive")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_channels != prev.out_channels:
                raise ValueError("adjacent layer channel counts must chain")
        if layers[-1].out_channels != layers[0].in_channels:
            raise ValueError("residual skip needs matching input/output channels")
        self.layers = layers
        self.lrelu_slope = float(lrelu_slope)
        self.scaling_factor = float(scaling_factor)
        self.residual = True

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def n_filters(self) -> int:
        return self.layers[0].out_channels

    def copy(self) -> "ConvNetwork":
        net = ConvNetwork(
            [layer.copy() for layer in self.layers], self.lrelu_slope, self.scaling_factor
        )
        return net

    def parameter_arrays(self) -> list[np.ndarray]:
        """Weight and bias arrays in update order; mutated in place by fit."""
        params = []
        for layer in self.layers:
            params.append(layer.weights)
            params.append(layer.biases)
        return params

    def frozen_mask(self) -> list[bool]:
        mask = []
        for layer in self.layers:
            mask.extend((layer.frozen, layer.frozen))
        return mask

    def _forward_batch(self, x: np.ndarray) -> np.ndarray:
        acts = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z, _ = _conv_batch(acts, layer)
            acts = lrelu(z, self.lrelu_slope) if i < last else z
        return x + acts

    def forward(self, t_in: np.ndarray) -> np.ndarray:
        """Prediction = input + residual correction, shape preserved."""
        t_in = np.asarray(t_in)
        if t_in.ndim != 3 or t_in.shape[0] != self.in_channels:
            raise ValueError(f"input must be ({self.in_channels}, S, M)")
        return self._forward_batch(t_in[None])[0]

    def loss_and_grads(self, x: np.ndarray, target: np.ndarray):
        """MSE loss and parameter gradients for a (B, C, S, M) batch.

        Frozen layers get exact-zero gradient blocks but still pass the
        upstream gradient through to earlier layers.
        """
        x = np.asarray(x)
        target = np.asarray(target)
        if x.shape != target.shape:
            raise ValueError("input and target shapes must match")
        slope = self.lrelu_slope
        last = len(self.layers) - 1

        acts = x
        caches = []
        for i, layer in enumerate(self.layers):
            z, cols = _conv_batch(acts, layer)
            caches.append((acts.shape, cols, z))
            acts = lrelu(z, slope) if i < last else z
        pred = x + acts

        diff = pred - target
        loss = float(np.mean(np.square(diff), dtype=np.float64))
        d_act = diff * np.asarray(2.0 / diff.size, dtype=x.dtype)

        grads_rev = []
        for i in range(last, -1, -1):
            layer = self.layers[i]
            in_shape, cols, z = caches[i]
            dz = d_act if i == last else d_act * lrelu_grad(z, slope)
            dz_mat = dz.transpose(0, 2, 3, 1).reshape(-1, layer.out_channels)
            if layer.frozen:
                grads_rev.append(np.zeros_like(layer.biases))
                grads_rev.append(np.zeros_like(layer.weights))
            else:
                grads_rev.append(dz_mat.sum(axis=0, dtype=np.float64))
                dw = (dz_mat.T @ cols).astype(np.float64)
                grads_rev.append(dw.reshape(layer.weights.shape))
            if i > 0:
                w2 = layer.weights.reshape(layer.out_channels, -1).astype(dz.dtype, copy=False)
                d_act = _col2im(dz_mat @ w2, in_shape)
        return loss, grads_rev[::-1]

    def evaluate_loss(self, x: np.ndarray, target: np.ndarray, chunk_size: int = 64) -> float:
        """Mean squared error over a whole set, computed in bounded memory."""
        if len(x) == 0:
            raise ValueError("cannot evaluate an empty set")
        total = 0.0
        count = 0
        for start in range(0, len(x), chunk_size):
            xb = x[start : start + chunk_size]
            diff = self._forward_batch(xb) - target[start : start + chunk_size]
            total += float(np.sum(np.square(diff), dtype=np.float64))
            count += diff.size
        return total / count


def forward(net: ConvNetwork, t_in: np.ndarray) -> np.ndarray:
    return net.forward(t_in)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of squared differences over every channel and position."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError("shapes must match")
    return float(np.mean(np.square(pred - target), dtype=np.float64))


def mse_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError("shapes must match")
    return 2.0 * (pred - target) / pred.size


def backward(net: ConvNetwork, t_in: np.ndarray, target: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients for a single input, ordered [w0, b0, w1, b1, ...]."""
    t_in = np.asarray(t_in)
    target = np.asarray(target)
    if t_in.ndim != 3:
        raise ValueError("input must be (channels, S, M)")
    _, grads = net.loss_and_grads(t_in[None], target[None])
    return grads


def build_csrnet(
    depth: int = 20,
    n_filters: int = 64,
    in_channels: int = 2,
    lrelu_slope: float = DEFAULT_LRELU_SLOPE,
    seed: int = 0,
    scaling_factor: float = DEFAULT_SCALING_FACTOR,
) -> ConvNetwork:
    """Fresh network with He-style initialization.

    Channel chain is in_channels -> n_filters -> ... -> n_filters ->
    in_channels over ``depth`` layers.  Weights are zero-mean Gaussian with
    std sqrt(2 / (fan_in * (1 + slope^2))), the rectifier rule corrected
    for the leaky slope; biases start at zero.
    """
    if depth < 2:
        raise ValueError("depth must be at least 2 (input and output layers)")
    if n_filters < 1 or in_channels < 1:
        raise ValueError("channel counts must be positive")
    rng = np.random.default_rng(seed)
    chain = [in_channels] + [n_filters] * (depth - 1) + [in_channels]
    layers = []
    for c_in, c_out in zip(chain[:-1], chain[1:]):
        fan_in = c_in * 9
        std = math.sqrt(2.0 / (fan_in * (1.0 + lrelu_slope**2)))
        weights = rng.normal(0.0, std, size=(c_out, c_in, 3, 3))
        layers.append(ConvLayer(weights, np.zeros(c_out)))
    return ConvNetwork(layers, lrelu_slope, scaling_factor)


@dataclass(frozen=True)
class TrainingConfig:
    """Optimization schedule shared by the conv net and the MLP baseline."""

    initial_lr: float = 0.001
    lr_decay: float = 0.1
    decay_every: int = 40
    max_epochs: int = 100
    early_stop_patience: int = 5
    batch_size: int = 32
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9
    clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.initial_lr, self.lr_decay) <= 0.0:
            raise ValueError("learning rate and decay must be positive")
        if min(self.decay_every, self.max_epochs, self.early_stop_patience, self.batch_size) < 1:
            raise ValueError("epoch and batch counts must be positive")
        if self.early_stop_patience >= self.max_epochs:
            raise ValueError("early_stop_patience must be below max_epochs")
        if self.optimizer != "sgd_momentum":
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.clip_norm <= 0.0:
            raise ValueError("clip_norm must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.initial_lr * self.lr_decay ** (epoch // self.decay_every)


@dataclass(frozen=True)
class LossReport:
    """Per-epoch training record.

    ``stop_epoch`` counts completed epochs; ``best_val_epoch`` is the
    0-based epoch whose parameters were restored into the model.
    """

    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]
    lr: tuple[float, ...]
    stop_epoch: int
    stop_reason: str
    best_val_epoch: int
    best_val_loss: float

    def __post_init__(self) -> None:
        if not (len(self.train_loss) == len(self.val_loss) == len(self.lr) == self.stop_epoch):
            raise ValueError("history lengths must equal stop_epoch")
        if self.stop_reason not in ("max_epochs", "early_stop"):
            raise ValueError(f"unknown stop_reason {self.stop_reason!r}")


def fit(model, train_set, val_set, cfg: TrainingConfig) -> LossReport:
    """Mini-batch gradient descent with momentum, clipping, and early stop.

    ``model`` is duck-typed (see module docstring).  Parameters are updated
    in place; on return they hold the best-validation snapshot.  Validation
    loss must strictly decrease to count as an improvement; after
    ``early_stop_patience`` consecutive non-improvements training stops.
    """
    x_train, y_train = train_set
    x_val, y_val = val_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if len(x_train) != len(y_train) or len(x_val) != len(y_val):
        raise ValueError("inputs and targets must pair up")

    rng = np.random.default_rng(cfg.seed)
    params = model.parameter_arrays()
    frozen = model.frozen_mask()
    velocity = [np.zeros_like(p) for p in params]
    best_params = [p.copy() for p in params]
    best_val = math.inf
    best_epoch = 0
    since_improve = 0
    train_hist: list[float] = []
    val_hist: list[float] = []
    lr_hist: list[float] = []
    stop_reason = "max_epochs"

    for epoch in range(cfg.max_epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(x_train))
        loss_sum = 0.0
        seen = 0
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            loss, grads = model.loss_and_grads(x_train[sel], y_train[sel])
            loss_sum += loss * sel.size
            seen += sel.size

            norm_sq = sum(
                float(np.sum(np.square(g)))
                for g, fz in zip(grads, frozen)
                if not fz
            )
            norm = math.sqrt(norm_sq)
            step = lr * (cfg.clip_norm / norm if norm > cfg.clip_norm else 1.0)
            for p, g, v, fz in zip(params, grads, velocity, frozen):
                if fz:
                    continue
                v *= cfg.momentum
                v -= step * g
                p += v

        train_hist.append(loss_sum / seen)
        val = model.evaluate_loss(x_val, y_val)
        val_hist.append(val)
        lr_hist.append(lr)

        if val < best_val:
            best_val = val
            best_epoch = epoch
            since_improve = 0
            for snapshot, p in zip(best_params, params):
                np.copyto(snapshot, p)
        else:
            since_improve += 1
        if since_improve >= cfg.early_stop_patience:
            stop_reason = "early_stop"
            break

    for p, snapshot in zip(params, best_params):
        np.copyto(p, snapshot)
    return LossReport(
        train_loss=tuple(train_hist),
        val_loss=tuple(val_hist),
        lr=tuple(lr_hist),
        stop_epoch=len(train_hist),
        stop_reason=stop_reason,
        best_val_epoch=best_epoch,
        best_val_loss=best_val,
    )


def freeze_layers(net: ConvNetwork, n: int) -> ConvNetwork:
    """Mark the first n layers frozen; later layers keep their flags."""
    if not 0 <= n <= net.depth:
        raise ValueError(f"can freeze between 0 and {net.depth} layers, got {n}")
    for layer in net.layers[:n]:
        layer.frozen = True
    return net


def transfer_train(
    pretrained_net: ConvNetwork, mixed_snr_train, mixed_snr_val, cfg: TrainingConfig
) -> tuple[ConvNetwork, LossReport]:
    """Adapt a pretrained network to a mixed-SNR set.

    The pretrained network is copied, its first depth//2 layers frozen, and
    the remainder fine-tuned.  Returns the unified network and its report;
    the pretrained network itself is not touched.
    """
    net = pretrained_net.copy()
    freeze_layers(net, net.depth // 2)
    report = fit(net, mixed_snr_train, mixed_snr_val, cfg)
    return net, report


def save_network(net: ConvNetwork, path) -> None:
    """Checkpoint: "CSRN" header, then per-layer f32 parameter blocks."""
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        write_u32(fh, _CHECKPOINT_VERSION, net.depth, net.n_filters, net.in_channels)
        write_f32(fh, [net.lrelu_slope, net.scaling_factor])
        for layer in net.layers:
            write_u32(fh, layer.out_channels, layer.in_channels, 3, 3)
            write_f32(fh, layer.weights)
            write_f32(fh, layer.biases)

    n_params = sum(layer.weights.size + layer.biases.size for layer in net.layers)
    lines = [
        f"container: {_CHECKPOINT_MAGIC.decode()} v{_CHECKPOINT_VERSION}",
        f"depth: {net.depth}",
        f"n_filters: {net.n_filters}",
        f"in_channels: {net.in_channels}",
        f"lrelu_slope: {float(np.float32(net.lrelu_slope))!r}",
        f"scaling_factor: {float(np.float32(net.scaling_factor))!r}",
    ]
    for i, layer in enumerate(net.layers):
        lines.append(f"layer {i}: {layer.out_channels}x{layer.in_channels}x3x3 + {layer.out_channels}")
    lines.append(f"parameters: {n_params}")
    lines.append(f"sha256: {sha256_hex(path)}")
    write_manifest(path, lines)


def load_network(path) -> ConvNetwork:
    """Read a "CSRN" checkpoint back into a float64-parameter network."""
    with open(path, "rb") as fh:
        expect_magic(fh, _CHECKPOINT_MAGIC)
        (version, depth, n_filters, in_channels) = read_u32(fh, 4)
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        slope, factor = read_f32(fh, 2)
        layers = []
        for _ in range(depth):
            out_ch, in_ch, kh, kw = read_u32(fh, 4)
            if (kh, kw) != (3, 3):
                raise ValueError("checkpoint kernel size must be 3x3")
            weights = read_f32(fh, out_ch * in_ch * 9).reshape(out_ch, in_ch, 3, 3)
            biases = read_f32(fh, out_ch)
            layers.append(ConvLayer(weights.astype(np.float64), biases.astype(np.float64)))
    net = ConvNetwork(layers, float(slope), float(factor))
    if net.n_filters != n_filters or net.in_channels != in_channels:
        raise ValueError("checkpoint header disagrees with layer dimensions")
    return net
