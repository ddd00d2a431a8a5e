"""Classical channel-estimation front end.

Four steps turn a received frame into the tensor a network consumes:
least-squares division at the pilot columns, per-subcarrier interpolation
along the symbol axis (natural cubic spline with 4+ pilot symbols, linear
below that), the complex-to-two-channel split, and a constant scaling that
lifts the typically tiny CSI magnitudes into a comfortable numeric range.

Interpolation works row by row: pilots occupy whole symbol columns, so the
frequency axis is already fully sampled and only the time axis needs
filling in.  Outside the outermost pilots the boundary segment's polynomial
is extended, which keeps the interpolation exact for any channel whose time
variation is linear.

A CSI matrix is a complex (S, M) ndarray; its two-channel image is a real
(2, S, M) ndarray with plane 0 the real part and plane 1 the imaginary
part.
"""
from __future__ import annotations

import numpy as np

from .ofdm import OfdmFrameGrid, PilotPattern

__all__ = [
    "DEFAULT_SCALING_FACTOR",
    "ls_estimate",
    "interpolate_time",
    "to_two_channel",
    "from_two_channel",
    "scale",
    "unscale",
    "raw_estimate_pipeline",
]

DEFAULT_SCALING_FACTOR = 10.0

# pilot counts from this threshold up use the cubic spline
_SPLINE_MIN_PILOTS = 4


def ls_estimate(y_pilot: np.ndarray, x_pilot: np.ndarray) -> np.ndarray:
    """Least-squares pilot estimate H_hat = Y / X, element-wise."""
    y = np.asarray(y_pilot)
    x = np.asarray(x_pilot)
    if y.shape != x.shape:
        raise ValueError("pilot grids must have equal shape")
    if np.any(np.abs(x) == 0.0):
        raise ValueError("pilot values must be nonzero")
    return y / x


def _natural_spline_second_derivatives(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second derivatives of the natural cubic spline through (x, y) rows.

    ``x`` is the (P,) knot vector, ``y`` an (S, P) stack of ordinates.  The
    interior tridiagonal system is solved with the Thomas algorithm; the
    coefficient matrix is shared by all rows, so only the right-hand sides
    are vectorized.
    """
    n_interior = x.size - 2
    second = np.zeros_like(y)
    if n_interior < 1:
        return second
    h = np.diff(x)
    sub = h[:-1]
    diag = 2.0 * (h[:-1] + h[1:])
    sup = h[1:]
    rhs = 6.0 * ((y[:, 2:] - y[:, 1:-1]) / h[1:] - (y[:, 1:-1] - y[:, :-2]) / h[:-1])

    c_prime = np.empty(n_interior)
    d_prime = np.empty_like(rhs)
    c_prime[0] = sup[0] / diag[0]
    d_prime[:, 0] = rhs[:, 0] / diag[0]
    for j in range(1, n_interior):
        denom = diag[j] - sub[j] * c_prime[j - 1]
        c_prime[j] = sup[j] / denom
        d_prime[:, j] = (rhs[:, j] - sub[j] * d_prime[:, j - 1]) / denom

    interior = np.empty_like(rhs)
    interior[:, -1] = d_prime[:, -1]
    for j in range(n_interior - 2, -1, -1):
        interior[:, j] = d_prime[:, j] - c_prime[j] * interior[:, j + 1]
    second[:, 1:-1] = interior
    return second


def interpolate_time(
    pilot_estimates: np.ndarray, pilot_indices, n_symbols: int
) -> np.ndarray:
    """Fill an (S, M) CSI matrix from per-row pilot samples.

    With 4 or more pilot symbols each row gets a natural cubic spline in
    the symbol index; with 2 or 3 the spline degenerates and piecewise
    linear interpolation is used.  Both variants share one evaluator (the
    linear case has identically zero second derivatives), and both extend
    their boundary segment beyond the outermost pilots, so rows that are
    linear in time come back exact at every column.
    """
    estimates = np.asarray(pilot_estimates, dtype=np.complex128)
    idx = np.asarray(pilot_indices, dtype=np.int64)
    if idx.size < 2:
        raise ValueError("at least 2 pilot symbols are required")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("pilot indices must be strictly increasing")
    if idx[0] < 0 or idx[-1] >= n_symbols:
        raise ValueError("pilot indices must lie within [0, n_symbols)")
    if estimates.ndim != 2 or estimates.shape[1] != idx.size:
        raise ValueError("pilot_estimates must be (n_subcarriers, n_pilots)")

    knots = idx.astype(np.float64)
    if idx.size >= _SPLINE_MIN_PILOTS:
        second = _natural_spline_second_derivatives(knots, estimates)
    else:
        second = np.zeros_like(estimates)

    targets = np.arange(n_symbols, dtype=np.float64)
    seg = np.clip(np.searchsorted(knots, targets, side="right") - 1, 0, idx.size - 2)
    h = knots[seg + 1] - knots[seg]
    left = knots[seg + 1] - targets
    right = targets - knots[seg]
    y0, y1 = estimates[:, seg], estimates[:, seg + 1]
    m0, m1 = second[:, seg], second[:, seg + 1]
    return (
        m0 * left**3 / (6.0 * h)
        + m1 * right**3 / (6.0 * h)
        + (y0 / h - m0 * h / 6.0) * left
        + (y1 / h - m1 * h / 6.0) * right
    )


def to_two_channel(h: np.ndarray) -> np.ndarray:
    """Split a complex (S, M) matrix into a real (2, S, M) tensor."""
    h = np.asarray(h)
    return np.stack([h.real, h.imag]).astype(np.float64, copy=False)


def from_two_channel(t: np.ndarray) -> np.ndarray:
    """Rejoin a (2, S, M) tensor into the complex matrix it images."""
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[0] != 2:
        raise ValueError("two-channel tensor must have shape (2, S, M)")
    return t[0] + 1j * t[1]


def scale(t: np.ndarray, factor: float) -> np.ndarray:
    """Multiply by a positive scaling factor."""
    if factor <= 0.0:
        raise ValueError("scaling factor must be positive")
    return np.asarray(t) * factor


def unscale(t: np.ndarray, factor: float) -> np.ndarray:
    """Divide a previously applied positive scaling factor back out."""
    if factor <= 0.0:
        raise ValueError("scaling factor must be positive")
    return np.asarray(t) / factor


def raw_estimate_pipeline(
    frame: OfdmFrameGrid,
    pattern: PilotPattern,
    factor: float = DEFAULT_SCALING_FACTOR,
) -> np.ndarray:
    """LS at the pilot columns, interpolate, split, scale.

    Output is the scaled two-channel tensor the learning stages train on.
    """
    if frame.rx_symbols is None:
        raise ValueError("frame has no received grid")
    cols = list(pattern.pilot_symbol_indices)
    pilots = ls_estimate(frame.rx_symbols[:, cols], frame.tx_symbols[:, cols])
    full = interpolate_time(pilots, pattern.pilot_symbol_indices, frame.tx_symbols.shape[1])
    return scale(to_two_channel(full), factor)
