"""Dataset generation, the method-comparison sweep, and results serialization.

Every random draw is addressed by a tuple (master seed, stream, ...) fed
through ``numpy.random.SeedSequence``, so any frame can be rebuilt in
isolation: the channel, payload, and noise of frame i never depend on how
many frames precede it.  Noise seeds depend on the frame index and the SNR
but not on the pilot layout or the method under test, which makes every
method comparison a paired one: at a given (frame, SNR) all methods face
bit-identical channel and noise realizations.

Stored tensors are unscaled float32 two-channel images; the training-time
scaling factor is applied by :func:`training_arrays` / :func:`training_rows`
so the on-disk format stays free of learning hyperparameters.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import numpy as np

from ._binio import (
    expect_magic,
    read_f32,
    read_f64,
    read_u32,
    read_u64,
    sha256_hex,
    write_f32,
    write_f64,
    write_manifest,
    write_u32,
    write_u64,
)
from .baselines import extract_pilot_features, flatten_rows, unflatten_rows
from .channel_model import EnvironmentConfig, realize_channel, sample_csi
from .estimation import (
    DEFAULT_SCALING_FACTOR,
    from_two_channel,
    raw_estimate_pipeline,
    to_two_channel,
    unscale,
)
from .ofdm import (
    FOUR_PILOT_SYMBOLS,
    TWO_PILOT_SYMBOLS,
    OfdmConfig,
    OfdmFrameGrid,
    PilotPattern,
    all_ones_pilots,
    apply_channel,
    build_frame,
    compute_ber,
    equalize,
    recover_payload,
)

METHODS = ("CSRNet", "DNN", "FullCsi", "LS")

PILOT_INDICES = {2: TWO_PILOT_SYMBOLS, 4: FOUR_PILOT_SYMBOLS}

_DATASET_MAGIC = b"UWDS"
_DATASET_VERSION = 1

# Stream ids inside the seed address tuples.  Channel/payload streams are
# addressed per frame, the noise stream per (frame, snr index), and the tag
# and split streams once per dataset.
_CHANNEL_STREAM = 0
_PAYLOAD_STREAM = 1
_NOISE_STREAM = 2
_TAG_STREAM = 3
_SPLIT_STREAM = 4

_ENV_INT_FIELDS = frozenset({"n_intrapaths", "n_macro_paths"})


def _stream_seed(*address: int) -> int:
    return int(np.random.SeedSequence(address).generate_state(1, np.uint64)[0])


def _floor_count(n: int, fraction: float) -> int:
    # nudge past binary representation error (10 * 0.3 evaluates below 3)
    return int(math.floor(n * fraction + 1e-9))


@dataclass(frozen=True)
class DatasetSpec:
    """Everything needed to regenerate a dataset bit for bit."""

    n_frames: int = 10000
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    snr_grid: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    env: EnvironmentConfig = EnvironmentConfig()
    ofdm: OfdmConfig = OfdmConfig()
    seed: int = 0
    pilot_counts: tuple[int, ...] = (2, 4)

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ValueError("n_frames must be positive")
        fractions = (self.train_fraction, self.val_fraction, self.test_fraction)
        if min(fractions) < 0.0 or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
            raise ValueError("split fractions must be nonnegative and sum to 1")
        grid = tuple(float(s) for s in self.snr_grid)
        if not grid or any(not math.isfinite(s) for s in grid):
            raise ValueError("snr_grid must be a nonempty list of finite values")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("snr_grid must be strictly increasing")
        object.__setattr__(self, "snr_grid", grid)
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        counts = tuple(int(c) for c in self.pilot_counts)
        if not counts or any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError("pilot_counts must be nonempty and strictly increasing")
        for count in counts:
            if count not in PILOT_INDICES:
                raise ValueError(f"unsupported pilot count {count}")
            if PILOT_INDICES[count][-1] >= self.ofdm.n_symbols_per_frame:
                raise ValueError(f"{count}-pilot layout does not fit in the frame")
        object.__setattr__(self, "pilot_counts", counts)

    def snr_index(self, snr_db: float) -> int:
        try:
            return self.snr_grid.index(float(snr_db))
        except ValueError:
            raise ValueError(f"snr {snr_db} dB is not on the dataset grid") from None


@dataclass(frozen=True)
class DatasetRecord:
    """One generated frame: raw pipeline inputs per pilot layout plus truth.

    ``inputs`` maps pilot count to an unscaled float32 (2, S, M) tensor;
    ``target`` is the matching true-CSI tensor.
    """

    gen_index: int
    snr_db: float
    inputs: Mapping[int, np.ndarray]
    target: np.ndarray

    def __post_init__(self) -> None:
        for tensor in self.inputs.values():
            tensor.setflags(write=False)
        self.target.setflags(write=False)
        object.__setattr__(self, "inputs", MappingProxyType(dict(self.inputs)))


@dataclass(frozen=True)
class Dataset:
    spec: DatasetSpec
    records: tuple[DatasetRecord, ...]
    train_indices: tuple[int, ...]
    val_indices: tuple[int, ...]
    test_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.records) != self.spec.n_frames:
            raise ValueError("record count disagrees with the spec")
        for pos, rec in enumerate(self.records):
            if rec.gen_index != pos:
                raise ValueError("records must be stored in generation order")
        combined = sorted(self.train_indices + self.val_indices + self.test_indices)
        if combined != list(range(self.spec.n_frames)):
            raise ValueError("splits must be disjoint and cover every frame")

    def split(self, name: str) -> tuple[int, ...]:
        try:
            return {
                "train": self.train_indices,
                "val": self.val_indices,
                "test": self.test_indices,
            }[name]
        except KeyError:
            raise ValueError(f"unknown split {name!r}") from None

    def select(self, split: str, snr_db: float | None = None) -> tuple[int, ...]:
        """Frame indices of a split, optionally only those tagged with one SNR."""
        indices = self.split(split)
        if snr_db is None:
            return indices
        target = float(snr_db)
        return tuple(i for i in indices if self.records[i].snr_db == target)


def _true_csi(spec: DatasetSpec, index: int, f_grid: np.ndarray, t_grid: np.ndarray) -> np.ndarray:
    seed = _stream_seed(spec.seed, _CHANNEL_STREAM, index)
    realization = realize_channel(spec.env, seed, gain_freq_khz=spec.ofdm.carrier / 1000.0)
    return sample_csi(realization, f_grid, t_grid)


def _received_frame(
    spec: DatasetSpec,
    index: int,
    n_pilots: int,
    snr_db: float,
    snr_index: int,
    h: np.ndarray,
) -> OfdmFrameGrid:
    pattern = all_ones_pilots(spec.ofdm, PILOT_INDICES[n_pilots])
    frame = build_frame(spec.ofdm, pattern, seed=_stream_seed(spec.seed, _PAYLOAD_STREAM, index))
    rx = apply_channel(frame, h, snr_db, seed=_stream_seed(spec.seed, _NOISE_STREAM, index, snr_index))
    return frame.with_rx(rx)


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Draw every frame, run the raw pipeline, and split 80/10/10.

    Each frame is tagged with one SNR drawn uniformly from the grid, so one
    dataset serves both per-SNR training (filter on the tag) and mixed-SNR
    training.  Validation and test sizes are the floors of their fractions;
    the remainder is training.
    """
    f_grid = spec.ofdm.subcarrier_frequencies()
    t_grid = spec.ofdm.symbol_times()
    tag_rng = np.random.default_rng(_stream_seed(spec.seed, _TAG_STREAM))
    tags = tag_rng.integers(0, len(spec.snr_grid), size=spec.n_frames)

    records = []
    for i in range(spec.n_frames):
        snr_index = int(tags[i])
        snr_db = spec.snr_grid[snr_index]
        h = _true_csi(spec, i, f_grid, t_grid)
        inputs = {}
        for count in spec.pilot_counts:
            frame = _received_frame(spec, i, count, snr_db, snr_index, h)
            pattern = all_ones_pilots(spec.ofdm, PILOT_INDICES[count])
            inputs[count] = raw_estimate_pipeline(frame, pattern, factor=1.0).astype(np.float32)
        records.append(
            DatasetRecord(i, snr_db, inputs, to_two_channel(h).astype(np.float32))
        )

    perm = np.random.default_rng(_stream_seed(spec.seed, _SPLIT_STREAM)).permutation(spec.n_frames)
    n_val = _floor_count(spec.n_frames, spec.val_fraction)
    n_test = _floor_count(spec.n_frames, spec.test_fraction)
    n_train = spec.n_frames - n_val - n_test
    train = tuple(sorted(int(i) for i in perm[:n_train]))
    val = tuple(sorted(int(i) for i in perm[n_train : n_train + n_val]))
    test = tuple(sorted(int(i) for i in perm[n_train + n_val :]))
    return Dataset(spec, tuple(records), train, val, test)


def rebuild_frame(
    spec: DatasetSpec, gen_index: int, n_pilots: int, snr_db: float
) -> tuple[OfdmFrameGrid, np.ndarray]:
    """Regenerate one received frame and its true CSI at any grid SNR.

    The noise seed is shared across pilot layouts, so the 2- and 4-pilot
    variants of a frame see the same noise; at the frame's tagged SNR this
    reproduces the stored pipeline input exactly.
    """
    if not 0 <= gen_index < spec.n_frames:
        raise ValueError("frame index out of range")
    snr_index = spec.snr_index(snr_db)
    h = _true_csi(spec, gen_index, spec.ofdm.subcarrier_frequencies(), spec.ofdm.symbol_times())
    frame = _received_frame(spec, gen_index, n_pilots, spec.snr_grid[snr_index], snr_index, h)
    return frame, h


def training_arrays(
    dataset: Dataset,
    n_pilots: int,
    split: str = "train",
    snr_db: float | None = None,
    scaling_factor: float = DEFAULT_SCALING_FACTOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Scaled float32 (N, 2, S, M) input/target stacks for the conv net."""
    indices = dataset.select(split, snr_db)
    if not indices:
        raise ValueError(f"no {split} frames" + ("" if snr_db is None else f" tagged {snr_db} dB"))
    factor = np.float32(scaling_factor)
    x = np.stack([dataset.records[i].inputs[n_pilots] for i in indices]) * factor
    y = np.stack([dataset.records[i].target for i in indices]) * factor
    return x, y


def training_rows(
    dataset: Dataset,
    n_pilots: int,
    split: str = "train",
    snr_db: float | None = None,
    scaling_factor: float = DEFAULT_SCALING_FACTOR,
) -> tuple[np.ndarray, np.ndarray]:
    """Scaled per-subcarrier feature/target rows for the dense baseline.

    Every frame contributes S rows; features are its pilot columns.
    """
    indices = dataset.select(split, snr_db)
    if not indices:
        raise ValueError(f"no {split} frames" + ("" if snr_db is None else f" tagged {snr_db} dB"))
    factor = np.float32(scaling_factor)
    cols = PILOT_INDICES[n_pilots]
    feats = np.vstack([extract_pilot_features(dataset.records[i].inputs[n_pilots], cols) for i in indices])
    rows = np.vstack([flatten_rows(dataset.records[i].target) for i in indices])
    return feats * factor, rows * factor


@dataclass(frozen=True)
class ExperimentConfig:
    """One point in the method-comparison grid.

    ``model`` holds the loaded network for the learned methods and stays
    None for LS and FullCsi.  FullCsi ignores the pilot settings when
    estimating but still uses them to build the frames it demodulates.
    """

    method: str
    n_pilot_symbols: int = 4
    scaling_factor: float = DEFAULT_SCALING_FACTOR
    model: object | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_pilot_symbols not in PILOT_INDICES:
            raise ValueError(f"unsupported pilot count {self.n_pilot_symbols}")
        if self.scaling_factor <= 0.0:
            raise ValueError("scaling factor must be positive")

    @property
    def needs_model(self) -> bool:
        return self.method in ("CSRNet", "DNN")


def _frame_pattern(frame: OfdmFrameGrid) -> PilotPattern:
    cols = np.flatnonzero(frame.pilot_mask.all(axis=0))
    if cols.size < 2:
        raise ValueError("frame has no usable pilot columns")
    return PilotPattern(tuple(int(c) for c in cols), frame.tx_symbols[:, cols])


def estimate_csi(
    cfg: ExperimentConfig, frame: OfdmFrameGrid, true_csi: np.ndarray | None = None
) -> np.ndarray:
    """Dispatch one frame to the configured estimator, returning complex CSI."""
    if cfg.method == "FullCsi":
        if true_csi is None:
            raise ValueError("FullCsi requires the generator's true CSI")
        return np.asarray(true_csi, dtype=np.complex128)

    pattern = _frame_pattern(frame)
    if len(pattern.pilot_symbol_indices) != cfg.n_pilot_symbols:
        raise ValueError("frame pilot layout disagrees with the experiment config")
    if cfg.method == "LS":
        return from_two_channel(raw_estimate_pipeline(frame, pattern, factor=1.0))

    if cfg.model is None:
        raise ValueError(f"method {cfg.method} requires a trained model")
    scaled = raw_estimate_pipeline(frame, pattern, factor=cfg.scaling_factor)
    if cfg.method == "CSRNet":
        out = cfg.model.forward(scaled)
    else:
        feats = extract_pilot_features(scaled, pattern.pilot_symbol_indices)
        out = unflatten_rows(cfg.model.forward_batch(feats))
    return from_two_channel(unscale(out, cfg.scaling_factor))


def per_frame_squared_errors(estimates, truths) -> np.ndarray:
    """Per-frame ||H_hat - H||_F^2 / (S * M) on complex matrices."""
    if len(estimates) != len(truths):
        raise ValueError("estimate and truth lists must pair up")
    if len(estimates) == 0:
        raise ValueError("at least one frame is required")
    errors = np.empty(len(estimates))
    for i, (est, truth) in enumerate(zip(estimates, truths)):
        est = np.asarray(est)
        truth = np.asarray(truth)
        if est.shape != truth.shape:
            raise ValueError("estimate and truth shapes must match")
        errors[i] = np.mean(np.abs(est - truth) ** 2)
    return errors


def evaluate_mse(estimates, truths) -> float:
    return float(np.mean(per_frame_squared_errors(estimates, truths)))


def per_frame_bers(frames, estimates) -> np.ndarray:
    if len(frames) != len(estimates):
        raise ValueError("frame and estimate lists must pair up")
    if len(frames) == 0:
        raise ValueError("at least one frame is required")
    out = np.empty(len(frames))
    for i, (frame, est) in enumerate(zip(frames, estimates)):
        if frame.rx_symbols is None:
            raise ValueError("frame has no received grid")
        x_hat, _ = equalize(frame.rx_symbols, np.asarray(est))
        out[i] = compute_ber(frame.payload_bits, recover_payload(x_hat, frame.pilot_mask))
    return out


def evaluate_ber(cfg: ExperimentConfig, frames, estimates) -> float:
    """Equalize with the estimates, demodulate, average the payload BER."""
    for frame in frames:
        n_pilots = int(frame.pilot_mask.all(axis=0).sum())
        if n_pilots != cfg.n_pilot_symbols:
            raise ValueError("frame pilot layout disagrees with the experiment config")
    return float(np.mean(per_frame_bers(frames, estimates)))


def bootstrap_ci(
    values,
    n_resamples: int = 1000,
    confidence: float = 0.95,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("values must be a nonempty 1-D sample")
    if n_resamples < 1:
        raise ValueError("n_resamples must be positive")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    if rng is None:
        rng = np.random.default_rng(0)
    idx = rng.integers(0, values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    tail = (1.0 - confidence) / 2.0
    return float(np.quantile(means, tail)), float(np.quantile(means, 1.0 - tail))


@dataclass(frozen=True)
class ResultRow:
    method: str
    pilots: int
    snr_db: float
    mse: float
    ber: float
    n_frames: int
    ci_low: float
    ci_high: float

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.mse < 0.0 or not 0.0 <= self.ber <= 1.0:
            raise ValueError("mse must be nonnegative and ber must lie in [0, 1]")
        if not self.ci_low <= self.mse <= self.ci_high:
            raise ValueError("confidence interval must bracket the mse estimate")
        if self.n_frames < 1:
            raise ValueError("n_frames must be positive")

    @property
    def key(self) -> tuple[str, int, float]:
        return (self.method, self.pilots, self.snr_db)


RESULT_CSV_HEADER = "method,pilots,snr_db,mse,ber,n_frames,ci_low,ci_high"


@dataclass(frozen=True)
class ResultTable:
    """Rows sorted by (method, pilots, snr_db); keys are unique."""

    rows: tuple[ResultRow, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", tuple(self.rows))
        keys = [row.key for row in self.rows]
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise ValueError("rows must be strictly sorted by (method, pilots, snr_db)")

    def write_csv(self, path) -> None:
        lines = [RESULT_CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.method},{r.pilots},{r.snr_db!r},{r.mse!r},{r.ber!r},"
                f"{r.n_frames},{r.ci_low!r},{r.ci_high!r}"
            )
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != RESULT_CSV_HEADER:
            raise ValueError("unrecognized results header")
        rows = []
        for line in lines[1:]:
            fields = line.split(",")
            if len(fields) != 8:
                raise ValueError(f"malformed results row: {line!r}")
            rows.append(
                ResultRow(
                    method=fields[0],
                    pilots=int(fields[1]),
                    snr_db=float(fields[2]),
                    mse=float(fields[3]),
                    ber=float(fields[4]),
                    n_frames=int(fields[5]),
                    ci_low=float(fields[6]),
                    ci_high=float(fields[7]),
                )
            )
        return cls(tuple(rows))


def per_frame_metrics(
    dataset: Dataset,
    cfg: ExperimentConfig,
    snr_db: float,
    split: str = "test",
) -> tuple[np.ndarray, np.ndarray]:
    """Squared CSI errors and BERs of one config over a split at one SNR.

    Frames are re-noised at the requested SNR (seeds fixed by frame index
    and SNR alone), so results at different SNRs cover the same channels and
    different methods at the same SNR see identical noise.
    """
    indices = dataset.split(split)
    if not indices:
        raise ValueError(f"dataset has no {split} frames")
    squared, frames, estimates = [], [], []
    for i in indices:
        frame, h = rebuild_frame(dataset.spec, i, cfg.n_pilot_symbols, snr_db)
        est = estimate_csi(cfg, frame, true_csi=h)
        squared.append(np.mean(np.abs(est - h) ** 2))
        frames.append(frame)
        estimates.append(est)
    return np.asarray(squared), per_frame_bers(frames, estimates)


def run_suite(
    dataset: Dataset,
    configs,
    snr_grid=None,
    n_bootstrap: int = 1000,
    seed: int = 0,
) -> ResultTable:
    """Evaluate every config at every SNR on the test split.

    The confidence interval in each row is a percentile bootstrap of the
    mean squared CSI error (``n_bootstrap`` resamples).
    """
    configs = list(configs)
    if not configs:
        return ResultTable(())
    grid = dataset.spec.snr_grid if snr_grid is None else tuple(float(s) for s in snr_grid)
    for snr in grid:
        dataset.spec.snr_index(snr)

    rng = np.random.default_rng(seed)
    rows = []
    for cfg in sorted(configs, key=lambda c: (c.method, c.n_pilot_symbols)):
        for snr in sorted(grid):
            squared, bers = per_frame_metrics(dataset, cfg, snr)
            mse = float(np.mean(squared))
            low, high = bootstrap_ci(squared, n_resamples=n_bootstrap, rng=rng)
            rows.append(
                ResultRow(
                    method=cfg.method,
                    pilots=cfg.n_pilot_symbols,
                    snr_db=snr,
                    mse=mse,
                    ber=float(np.mean(bers)),
                    n_frames=len(squared),
                    # the resampled mean can sit a hair outside the quantiles
                    ci_low=min(low, mse),
                    ci_high=max(high, mse),
                )
            )
    return ResultTable(tuple(rows))


def _env_values(env: EnvironmentConfig) -> list[float]:
    return [float(getattr(env, f.name)) for f in dataclasses.fields(EnvironmentConfig)]


def _env_from_values(values) -> EnvironmentConfig:
    kwargs = {}
    for f, v in zip(dataclasses.fields(EnvironmentConfig), values):
        kwargs[f.name] = int(v) if f.name in _ENV_INT_FIELDS else float(v)
    return EnvironmentConfig(**kwargs)


def save_dataset(dataset: Dataset, path) -> None:
    """Write the documented UWDS container plus its text manifest."""
    spec = dataset.spec
    n_env = len(dataclasses.fields(EnvironmentConfig))
    with open(path, "wb") as fh:
        fh.write(_DATASET_MAGIC)
        write_u32(fh, _DATASET_VERSION, spec.ofdm.n_subcarriers, spec.ofdm.n_symbols_per_frame)
        write_u32(
            fh,
            spec.n_frames,
            len(dataset.train_indices),
            len(dataset.val_indices),
            len(dataset.test_indices),
        )
        write_u32(fh, len(spec.snr_grid))
        write_f64(fh, spec.snr_grid)
        write_u32(fh, len(spec.pilot_counts), *spec.pilot_counts)
        write_u64(fh, spec.seed)
        write_f64(fh, (spec.train_fraction, spec.val_fraction, spec.test_fraction))
        write_f64(fh, (spec.ofdm.carrier, spec.ofdm.bandwidth))
        write_u32(fh, n_env)
        write_f64(fh, _env_values(spec.env))
        for indices in (dataset.train_indices, dataset.val_indices, dataset.test_indices):
            write_u32(fh, *indices)
        for rec in dataset.records:
            write_u32(fh, rec.gen_index, spec.snr_index(rec.snr_db))
            for count in spec.pilot_counts:
                write_f32(fh, rec.inputs[count])
            write_f32(fh, rec.target)

    grid_text = " ".join(f"{s:g}" for s in spec.snr_grid)
    write_manifest(
        path,
        [
            f"container: UWDS v{_DATASET_VERSION}",
            f"sha256: {sha256_hex(path)}",
            f"grid: {spec.ofdm.n_subcarriers}x{spec.ofdm.n_symbols_per_frame}",
            f"frames: {spec.n_frames} (train {len(dataset.train_indices)}"
            f" / val {len(dataset.val_indices)} / test {len(dataset.test_indices)})",
            f"snr_db: {grid_text}",
            "pilot_configs: " + " ".join(str(c) for c in spec.pilot_counts),
            f"seed: {spec.seed}",
        ],
    )


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        expect_magic(fh, _DATASET_MAGIC)
        (version, n_sub, n_sym) = read_u32(fh, 3)
        if version != _DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        n_frames, n_train, n_val, n_test = read_u32(fh, 4)
        (n_snr,) = read_u32(fh)
        grid = tuple(float(s) for s in read_f64(fh, n_snr))
        (n_counts,) = read_u32(fh)
        counts = read_u32(fh, n_counts)
        (seed,) = read_u64(fh)
        train_frac, val_frac, test_frac = read_f64(fh, 3)
        carrier, bandwidth = read_f64(fh, 2)
        (n_env,) = read_u32(fh)
        env = _env_from_values(read_f64(fh, n_env))
        spec = DatasetSpec(
            n_frames=n_frames,
            train_fraction=float(train_frac),
            val_fraction=float(val_frac),
            test_fraction=float(test_frac),
            snr_grid=grid,
            env=env,
            ofdm=OfdmConfig(
                n_subcarriers=n_sub,
                n_symbols_per_frame=n_sym,
                carrier=float(carrier),
                bandwidth=float(bandwidth),
            ),
            seed=seed,
            pilot_counts=counts,
        )
        train = read_u32(fh, n_train)
        val = read_u32(fh, n_val)
        test = read_u32(fh, n_test)
        block = 2 * n_sub * n_sym
        records = []
        for _ in range(n_frames):
            gen_index, snr_index = read_u32(fh, 2)
            inputs = {
                count: read_f32(fh, block).reshape(2, n_sub, n_sym) for count in counts
            }
            target = read_f32(fh, block).reshape(2, n_sub, n_sym)
            records.append(DatasetRecord(gen_index, grid[snr_index], inputs, target))
        if fh.read(1):
            raise ValueError("trailing bytes after the last record")
    return Dataset(spec, tuple(records), train, val, test)
