"""Comparison estimators: the bare LS pipeline and a dense-network baseline.

The LS baseline is the classical front end with no learning: pilot-column
division followed by time-axis interpolation, returned as a complex
matrix.

The dense baseline maps one subcarrier at a time: its input is the
real/imag pair of that subcarrier's LS estimate at each pilot column
(2 * P features), its output the real/imag pair at every symbol
(2 * M values).  Real and imaginary parts are interleaved per symbol,
i.e. [re0, im0, re1, im1, ...], for both features and outputs.  Hidden
widths default to 64, 128, 64 with leaky ReLU between layers and a linear
output, so the 2-pilot configuration is the 4-64-128-64-32 stack.

Training reuses the schedule engine from the conv-net module; the network
satisfies the same duck-typed model contract.
"""
from __future__ import annotations

import math

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
from .estimation import DEFAULT_SCALING_FACTOR, interpolate_time, ls_estimate
from .neuralnet import DEFAULT_LRELU_SLOPE, LossReport, TrainingConfig, fit, lrelu, lrelu_grad
from .ofdm import OfdmFrameGrid, PilotPattern

__all__ = [
    "DEFAULT_HIDDEN_SIZES",
    "MlpNetwork",
    "ls_baseline",
    "build_mlp",
    "mlp_forward",
    "mlp_fit",
    "extract_pilot_features",
    "flatten_rows",
    "unflatten_rows",
    "save_mlp",
    "load_mlp",
]

DEFAULT_HIDDEN_SIZES = (64, 128, 64)

_CHECKPOINT_MAGIC = b"MLPB"
_CHECKPOINT_VERSION = 1


def ls_baseline(frame: OfdmFrameGrid, pattern: PilotPattern) -> np.ndarray:
    """Pilot LS plus interpolation, no network: the plain classical estimate."""
    if frame.rx_symbols is None:
        raise ValueError("frame has no received grid")
    cols = list(pattern.pilot_symbol_indices)
    pilots = ls_estimate(frame.rx_symbols[:, cols], frame.tx_symbols[:, cols])
    return interpolate_time(pilots, pattern.pilot_symbol_indices, frame.tx_symbols.shape[1])


class MlpNetwork:
    """Fully connected stack with leaky ReLU hidden activations."""

    def __init__(
        self,
        weights,
        biases,
        lrelu_slope: float = DEFAULT_LRELU_SLOPE,
        scaling_factor: float = DEFAULT_SCALING_FACTOR,
    ):
        weights = [np.asarray(w, dtype=np.float64) for w in weights]
        biases = [np.asarray(b, dtype=np.float64) for b in biases]
        if not weights or len(weights) != len(biases):
            raise ValueError("weights and biases must pair up, one per layer")
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError("layer weights must be (out, in) with matching biases")
        for prev, nxt in zip(weights, weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ValueError("adjacent layer sizes must chain")
        if not (0.0 < lrelu_slope < 1.0):
            raise ValueError("lrelu_slope must lie in (0, 1)")
        if scaling_factor <= 0.0:
            raise ValueError("scaling_factor must be positive")
        self.weights = weights
        self.biases = biases
        self.lrelu_slope = float(lrelu_slope)
        self.scaling_factor = float(scaling_factor)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.lrelu_slope,
            self.scaling_factor,
        )

    def parameter_arrays(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def frozen_mask(self) -> list[bool]:
        return [False] * (2 * len(self.weights))

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        acts = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts @ w.T.astype(acts.dtype, copy=False) + b.astype(acts.dtype, copy=False)
            acts = lrelu(z, self.lrelu_slope) if i < last else z
        return acts

    def loss_and_grads(self, x: np.ndarray, target: np.ndarray):
        x = np.asarray(x)
        target = np.asarray(target)
        if x.shape[0] != target.shape[0]:
            raise ValueError("batch sizes must match")
        slope = self.lrelu_slope
        last = len(self.weights) - 1

        acts = x
        caches = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts @ w.T.astype(acts.dtype, copy=False) + b.astype(acts.dtype, copy=False)
            caches.append((acts, z))
            acts = lrelu(z, slope) if i < last else z

        diff = acts - target
        loss = float(np.mean(np.square(diff), dtype=np.float64))
        d_act = diff * np.asarray(2.0 / diff.size, dtype=x.dtype)

        grads_rev = []
        for i in range(last, -1, -1):
            x_in, z = caches[i]
            dz = d_act if i == last else d_act * lrelu_grad(z, slope)
            grads_rev.append(dz.sum(axis=0, dtype=np.float64))
            grads_rev.append((dz.T @ x_in).astype(np.float64))
            if i > 0:
                d_act = dz @ self.weights[i].astype(dz.dtype, copy=False)
        return loss, grads_rev[::-1]

    def evaluate_loss(self, x: np.ndarray, target: np.ndarray, chunk_size: int = 4096) -> float:
        if len(x) == 0:
            raise ValueError("cannot evaluate an empty set")
        total = 0.0
        count = 0
        for start in range(0, len(x), chunk_size):
            diff = self.forward_batch(x[start : start + chunk_size]) - target[start : start + chunk_size]
            total += float(np.sum(np.square(diff), dtype=np.float64))
            count += diff.size
        return total / count


def build_mlp(
    n_pilots: int,
    n_symbols: int = 16,
    hidden_sizes=DEFAULT_HIDDEN_SIZES,
    lrelu_slope: float = DEFAULT_LRELU_SLOPE,
    seed: int = 0,
    scaling_factor: float = DEFAULT_SCALING_FACTOR,
) -> MlpNetwork:
    """Per-subcarrier dense net: 2P inputs, 2M outputs, rectifier init."""
    if n_pilots < 1 or n_symbols < 1:
        raise ValueError("pilot and symbol counts must be positive")
    sizes = (2 * n_pilots, *hidden_sizes, 2 * n_symbols)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        std = math.sqrt(2.0 / (n_in * (1.0 + lrelu_slope**2)))
        weights.append(rng.normal(0.0, std, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpNetwork(weights, biases, lrelu_slope, scaling_factor)


def mlp_forward(net: MlpNetwork, pilot_features: np.ndarray) -> np.ndarray:
    """One subcarrier's feature vector in, its full-row prediction out."""
    features = np.asarray(pilot_features)
    if features.ndim != 1 or features.size != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} features, got shape {features.shape}")
    return net.forward_batch(features[None])[0]


def mlp_fit(net: MlpNetwork, train_set, val_set, cfg: TrainingConfig) -> LossReport:
    """Same schedule machinery as the conv net, on per-subcarrier samples."""
    return fit(net, train_set, val_set, cfg)


def extract_pilot_features(tensor: np.ndarray, pilot_indices) -> np.ndarray:
    """Per-subcarrier features from a (2, S, M) tensor: (S, 2P), interleaved."""
    idx = list(pilot_indices)
    re = tensor[0][:, idx]
    im = tensor[1][:, idx]
    features = np.empty((tensor.shape[1], 2 * len(idx)), dtype=tensor.dtype)
    features[:, 0::2] = re
    features[:, 1::2] = im
    return features


def flatten_rows(tensor: np.ndarray) -> np.ndarray:
    """(2, S, M) tensor to (S, 2M) interleaved per-subcarrier rows."""
    s, m = tensor.shape[1], tensor.shape[2]
    rows = np.empty((s, 2 * m), dtype=tensor.dtype)
    rows[:, 0::2] = tensor[0]
    rows[:, 1::2] = tensor[1]
    return rows


def unflatten_rows(rows: np.ndarray) -> np.ndarray:
    """Inverse of flatten_rows: (S, 2M) back to (2, S, M)."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] % 2:
        raise ValueError("rows must be (S, 2M)")
    return np.stack([rows[:, 0::2], rows[:, 1::2]])


def save_mlp(net: MlpNetwork, path) -> None:
    """Checkpoint: "MLPB" header, layer sizes, f32 parameter blocks."""
    sizes = net.layer_sizes
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        write_u32(fh, _CHECKPOINT_VERSION, len(sizes))
        write_u32(fh, *sizes)
        write_f32(fh, [net.lrelu_slope, net.scaling_factor])
        for w, b in zip(net.weights, net.biases):
            write_f32(fh, w)
            write_f32(fh, b)

    n_params = sum(w.size + b.size for w, b in zip(net.weights, net.biases))
    lines = [
        f"container: {_CHECKPOINT_MAGIC.decode()} v{_CHECKPOINT_VERSION}",
        f"layer_sizes: {'-'.join(str(s) for s in sizes)}",
        f"lrelu_slope: {float(np.float32(net.lrelu_slope))!r}",
        f"scaling_factor: {float(np.float32(net.scaling_factor))!r}",
        f"parameters: {n_params}",
        f"sha256: {sha256_hex(path)}",
    ]
    write_manifest(path, lines)


def load_mlp(path) -> MlpNetwork:
    with open(path, "rb") as fh:
        expect_magic(fh, _CHECKPOINT_MAGIC)
        version, n_sizes = read_u32(fh, 2)
        if version != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sizes = read_u32(fh, n_sizes)
        slope, factor = read_f32(fh, 2)
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(read_f32(fh, n_out * n_in).reshape(n_out, n_in).astype(np.float64))
            biases.append(read_f32(fh, n_out).astype(np.float64))
    return MlpNetwork(weights, biases, float(slope), float(factor))
