"""QPSK-OFDM framing, frequency-domain channel application, and BER.

The link operates entirely on the subcarrier-by-symbol grid: no waveform
synthesis, cyclic prefix, or synchronization.  Frames carry unit-energy
QPSK symbols; whole OFDM symbols (grid columns) are reserved as pilots.
The received grid is Y = H * X + N with circular complex Gaussian noise
scaled to a target SNR measured on the post-channel signal power, and
equalization is plain zero-forcing.

Bit order inside a QPSK pair: the first bit selects the quadrature sign,
the second the in-phase sign, giving the Gray map
00 -> (+1+j)/sqrt(2), 01 -> (-1+j)/sqrt(2), 11 -> (-1-j)/sqrt(2),
10 -> (+1-j)/sqrt(2).  Demodulation decides per quadrant with ties broken
toward the nonnegative axes.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TWO_PILOT_SYMBOLS",
    "FOUR_PILOT_SYMBOLS",
    "EPS_EQUALIZE",
    "OfdmConfig",
    "PilotPattern",
    "OfdmFrameGrid",
    "all_ones_pilots",
    "qpsk_modulate",
    "qpsk_demodulate",
    "random_payload",
    "build_frame",
    "apply_channel",
    "equalize",
    "recover_payload",
    "compute_ber",
]

# pilot symbol columns, 0-based
TWO_PILOT_SYMBOLS = (3, 11)
FOUR_PILOT_SYMBOLS = (2, 6, 10, 14)

# below this magnitude a channel estimate cell is treated as degenerate
EPS_EQUALIZE = 1e-9

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class OfdmConfig:
    """OFDM numerology.

    ``subcarrier_spacing`` and ``symbol_duration`` are derived from the
    bandwidth and subcarrier count when omitted; explicitly passed values
    must agree with the derived ones.
    """

    n_subcarriers: int = 512
    n_symbols_per_frame: int = 16
    carrier: float = 16000.0
    bandwidth: float = 4000.0
    subcarrier_spacing: float | None = None
    symbol_duration: float | None = None
    modulation: str = "QPSK"

    def __post_init__(self) -> None:
        if self.n_subcarriers < 1 or self.n_symbols_per_frame < 1:
            raise ValueError("grid dimensions must be positive")
        if self.carrier <= 0.0 or self.bandwidth <= 0.0:
            raise ValueError("carrier and bandwidth must be positive")
        if self.modulation.upper() != "QPSK":
            raise ValueError(f"unsupported modulation {self.modulation!r}")
        object.__setattr__(self, "modulation", "QPSK")

        spacing = self.bandwidth / self.n_subcarriers
        if self.subcarrier_spacing is None:
            object.__setattr__(self, "subcarrier_spacing", spacing)
        elif not math.isclose(self.subcarrier_spacing, spacing, rel_tol=1e-9):
            raise ValueError("subcarrier_spacing inconsistent with bandwidth / n_subcarriers")
        duration = 1.0 / spacing
        if self.symbol_duration is None:
            object.__setattr__(self, "symbol_duration", duration)
        elif not math.isclose(self.symbol_duration, duration, rel_tol=1e-9):
            raise ValueError("symbol_duration inconsistent with 1 / subcarrier_spacing")

    def subcarrier_frequencies(self) -> np.ndarray:
        """Absolute subcarrier frequencies in Hz, centered on the carrier."""
        idx = np.arange(self.n_subcarriers) - self.n_subcarriers // 2
        return self.carrier + idx * self.subcarrier_spacing

    def symbol_times(self) -> np.ndarray:
        """Start time of each OFDM symbol in seconds."""
        return np.arange(self.n_symbols_per_frame) * self.symbol_duration


@dataclass(frozen=True)
class PilotPattern:
    """Which symbol columns are pilots and what they carry.

    ``pilot_values`` has one column per pilot symbol; every entry must be
    unit modulus so pilot cells keep the QPSK energy budget.
    """

    pilot_symbol_indices: tuple[int, ...]
    pilot_values: np.ndarray

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.pilot_symbol_indices)
        object.__setattr__(self, "pilot_symbol_indices", idx)
        if len(idx) < 2:
            raise ValueError("at least 2 pilot symbols are required")
        if any(b <= a for a, b in zip(idx, idx[1:])) or idx[0] < 0:
            raise ValueError("pilot indices must be nonnegative and strictly increasing")
        values = np.asarray(self.pilot_values, dtype=np.complex128)
        if values.ndim != 2 or values.shape[1] != len(idx):
            raise ValueError("pilot_values must be (n_subcarriers, n_pilot_symbols)")
        if not np.allclose(np.abs(values), 1.0, atol=1e-9):
            raise ValueError("pilot values must be unit modulus")
        values.setflags(write=False)
        object.__setattr__(self, "pilot_values", values)

    @property
    def n_pilot_symbols(self) -> int:
        return len(self.pilot_symbol_indices)


def all_ones_pilots(cfg: OfdmConfig, indices) -> PilotPattern:
    """All-ones pilot pattern on the given symbol columns."""
    values = np.ones((cfg.n_subcarriers, len(tuple(indices))), dtype=np.complex128)
    return PilotPattern(tuple(indices), values)


@dataclass(frozen=True)
class OfdmFrameGrid:
    """One transmitted frame, optionally with its received counterpart."""

    tx_symbols: np.ndarray
    pilot_mask: np.ndarray
    payload_bits: str
    rx_symbols: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.tx_symbols.setflags(write=False)
        self.pilot_mask.setflags(write=False)
        if self.rx_symbols is not None:
            self.rx_symbols.setflags(write=False)

    def with_rx(self, rx: np.ndarray) -> "OfdmFrameGrid":
        if rx.shape != self.tx_symbols.shape:
            raise ValueError("rx grid shape mismatch")
        return dataclasses.replace(self, rx_symbols=rx)


def _parse_bits(bits: str) -> np.ndarray:
    arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
    if arr.size and arr.max() > 1:
        raise ValueError("bit string may contain only '0' and '1'")
    return arr


def qpsk_modulate(bits: str) -> np.ndarray:
    """Map a bit string to unit-energy Gray-coded QPSK symbols."""
    arr = _parse_bits(bits)
    if arr.size % 2:
        raise ValueError("bit string length must be even")
    b_quad = arr[0::2]
    b_inph = arr[1::2]
    return ((1.0 - 2.0 * b_inph) + 1j * (1.0 - 2.0 * b_quad)) * _INV_SQRT2


def qpsk_demodulate(symbols) -> str:
    """Quadrant decisions, ties toward the nonnegative axes."""
    sym = np.asarray(symbols).ravel()
    bits = np.empty(2 * sym.size, dtype=np.uint8)
    bits[0::2] = sym.imag < 0.0
    bits[1::2] = sym.real < 0.0
    return (bits + ord("0")).tobytes().decode("ascii")


def random_payload(cfg: OfdmConfig, pattern: PilotPattern, seed: int) -> str:
    """Uniform random payload of exactly the size one frame carries."""
    n_data = cfg.n_subcarriers * (cfg.n_symbols_per_frame - pattern.n_pilot_symbols)
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=2 * n_data, dtype=np.uint8)
    return (bits + ord("0")).tobytes().decode("ascii")


def build_frame(
    cfg: OfdmConfig,
    pattern: PilotPattern,
    payload_bits: str | None = None,
    seed: int | None = None,
) -> OfdmFrameGrid:
    """Assemble one frame: pilot columns from the pattern, data column-major.

    With ``payload_bits=None`` a random payload is drawn from ``seed``.  An
    explicit payload must contain exactly 2 bits per data cell.
    """
    n_sub, n_sym = cfg.n_subcarriers, cfg.n_symbols_per_frame
    idx = pattern.pilot_symbol_indices
    if idx[-1] >= n_sym:
        raise ValueError("pilot index beyond the last symbol of the frame")
    if pattern.pilot_values.shape[0] != n_sub:
        raise ValueError("pilot_values row count must equal n_subcarriers")

    n_data_cols = n_sym - len(idx)
    n_bits = 2 * n_sub * n_data_cols
    if payload_bits is None:
        if seed is None:
            raise ValueError("either payload_bits or seed must be given")
        payload_bits = random_payload(cfg, pattern, seed)
    if len(payload_bits) != n_bits:
        raise ValueError(f"payload must be {n_bits} bits, got {len(payload_bits)}")

    mask = np.zeros((n_sub, n_sym), dtype=bool)
    mask[:, list(idx)] = True

    grid = np.empty((n_sub, n_sym), dtype=np.complex128)
    grid[:, list(idx)] = pattern.pilot_values
    data_cols = [m for m in range(n_sym) if m not in idx]
    grid[:, data_cols] = qpsk_modulate(payload_bits).reshape(n_sub, n_data_cols, order="F")
    return OfdmFrameGrid(tx_symbols=grid, pilot_mask=mask, payload_bits=payload_bits)


def apply_channel(
    frame: OfdmFrameGrid, h: np.ndarray, snr_db: float, seed: int
) -> np.ndarray:
    """Y = H * X + N at the requested SNR.

    Noise variance is sigma^2 = P_sig / 10^(snr/10) with P_sig the mean
    post-channel power |H X|^2 over the grid; ``snr_db=inf`` disables the
    noise entirely (the rng is not consumed).
    """
    x = frame.tx_symbols
    if h.shape != x.shape:
        raise ValueError("channel grid shape must match the frame")
    faded = h * x
    if math.isinf(snr_db) and snr_db > 0:
        return faded
    p_sig = float(np.mean(np.abs(faded) ** 2))
    sigma2 = p_sig / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    return faded + noise * math.sqrt(sigma2 / 2.0)


def equalize(y: np.ndarray, h_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-forcing X_hat = Y / H_hat.

    Cells where |H_hat| < EPS_EQUALIZE are left as the raw received value
    and flagged in the returned boolean mask instead of dividing by ~0.
    """
    if y.shape != h_hat.shape:
        raise ValueError("grid shape mismatch")
    degenerate = np.abs(h_hat) < EPS_EQUALIZE
    x_hat = np.where(degenerate, y, y / np.where(degenerate, 1.0, h_hat))
    return x_hat, degenerate


def recover_payload(x_hat: np.ndarray, pilot_mask: np.ndarray) -> str:
    """Demodulate the data cells in the same column-major order used to fill them."""
    data_cols = ~pilot_mask.all(axis=0)
    return qpsk_demodulate(x_hat[:, data_cols].ravel(order="F"))


def compute_ber(sent: str, received: str) -> float:
    """Fraction of differing bits between two equal-length bit strings."""
    if len(sent) != len(received):
        raise ValueError("bit strings must have equal length")
    if not sent:
        raise ValueError("bit strings must be nonempty")
    a = np.frombuffer(sent.encode("ascii"), dtype=np.uint8)
    b = np.frombuffer(received.encode("ascii"), dtype=np.uint8)
    return float(np.count_nonzero(a != b)) / len(sent)
