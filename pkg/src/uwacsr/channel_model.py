"""Statistical shallow-water acoustic multipath channel.

Macro propagation paths are traced with the image (mirror) method between a
pressure-release surface and a fluid bottom.  Each macro path p carries a
large-scale gain h_p (spreading + absorption + boundary losses), a delay
tau_p, and a cluster of random intrapaths that produce small-scale fading.
The frequency-time response sampled on an OFDM grid is

    H(f, t) = H0 * sum_p h_p * gamma_p(f, t) * exp(-j 2 pi f tau_p)

with  gamma_p(f, t) = sum_i g_{p,i} * exp(j 2 pi f (a_p t - dtau_{p,i}))

where g_{p,i} are complex intrapath gains, dtau_{p,i} nonnegative intrapath
delay offsets, a_p the Doppler rate (relative speed over sound speed), and
H0 a nominal response chosen so that E[|H|^2] = 1 per grid cell.

All operations are pure functions of (config, seed); realizations are
immutable after construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "EnvironmentConfig",
    "MacroPath",
    "ChannelRealization",
    "trace_macro_paths",
    "thorp_absorption",
    "large_scale_gain",
    "bottom_reflection_coefficient",
    "realize_channel",
    "sample_csi",
]

SURFACE_REFLECTION = -1.0  # pressure-release surface


@dataclass(frozen=True)
class EnvironmentConfig:
    """Geometry and physical parameters of the underwater channel.

    Depths and ranges in meters, speeds in m/s.  ``spreading_factor`` is the
    path-loss exponent k in A(l, f) = l^k * a(f)^l.  ``tx_vehicular_sigma``
    is the standard deviation of the Gaussian transmitter speed draw;
    ``rx_vehicular`` is a deterministic receiver speed.
    """

    water_depth: float = 100.0
    tx_depth: float = 20.0
    rx_depth: float = 50.0
    range_m: float = 1000.0
    spreading_factor: float = 1.7
    c_water: float = 1500.0
    c_bottom: float = 1200.0
    n_intrapaths: int = 20
    tx_drift: float = 0.1
    rx_drift: float = 0.02
    tx_vehicular_sigma: float = 1.0
    rx_vehicular: float = 0.0
    n_macro_paths: int = 8
    intrapath_delay_mean: float = 1e-3
    intrapath_gain_decay: float = 0.7
    bottom_density_ratio: float = 1.5

    def __post_init__(self) -> None:
        if not (0.0 < self.tx_depth < self.water_depth):
            raise ValueError("tx_depth must lie strictly inside (0, water_depth)")
        if not (0.0 < self.rx_depth < self.water_depth):
            raise ValueError("rx_depth must lie strictly inside (0, water_depth)")
        if self.range_m <= 0.0:
            raise ValueError("range_m must be positive")
        if self.spreading_factor <= 0.0:
            raise ValueError("spreading_factor must be positive")
        if self.c_water <= 0.0 or self.c_bottom <= 0.0:
            raise ValueError("sound speeds must be positive")
        if self.n_intrapaths < 1:
            raise ValueError("n_intrapaths must be at least 1")
        if self.intrapath_delay_mean < 0.0:
            raise ValueError("intrapath_delay_mean must be nonnegative")
        if not (0.0 < self.intrapath_gain_decay <= 1.0):
            raise ValueError("intrapath_gain_decay must lie in (0, 1]")
        if self.bottom_density_ratio <= 0.0:
            raise ValueError("bottom_density_ratio must be positive")


@dataclass(frozen=True)
class MacroPath:
    """One eigenray: geometry plus large-scale gain and Doppler rate.

    ``large_scale_gain`` includes the boundary reflection signs, so it may
    be negative; its magnitude is the spreading/absorption loss.
    ``doppler_rate`` is the dimensionless v/c factor shared by the whole
    realization.
    """

    length: float
    delay: float
    n_surface_bounces: int
    n_bottom_bounces: int
    large_scale_gain: float = 1.0
    doppler_rate: float = 0.0


@dataclass(frozen=True)
class ChannelRealization:
    """Immutable draw of a multipath channel.

    ``intrapath_gains`` and ``intrapath_delays`` are (n_paths, n_intrapaths)
    arrays; ``nominal_response`` is the H0 normalizer.  The same seed always
    reproduces the identical realization bit for bit.
    """

    macro_paths: tuple[MacroPath, ...]
    intrapath_gains: np.ndarray
    intrapath_delays: np.ndarray
    nominal_response: float
    seed: int

    def __post_init__(self) -> None:
        self.intrapath_gains.setflags(write=False)
        self.intrapath_delays.setflags(write=False)


def trace_macro_paths(env: EnvironmentConfig) -> list[MacroPath]:
    """Return the shortest eigenray geometries by the image method.

    Receiver images sit at depths 2*k*D +/- rx_depth for integer k.  A
    straight line from the transmitter to an image crosses z = n*D once per
    boundary reflection: even n are surface hits, odd n are bottom hits.
    Paths are sorted by increasing length; delay = length / c_water.
    """
    if env.n_macro_paths < 1:
        raise ValueError("n_macro_paths must be at least 1")
    depth = env.water_depth
    zs, zr, r = env.tx_depth, env.rx_depth, env.range_m

    candidates = []
    k_max = env.n_macro_paths + 2
    for k in range(-k_max, k_max + 1):
        for sign in (1.0, -1.0):
            zeta = 2.0 * k * depth + sign * zr
            length = math.hypot(r, zeta - zs)
            lo, hi = min(zs, zeta), max(zs, zeta)
            n_surface = n_bottom = 0
            for n in range(math.floor(lo / depth) + 1, math.ceil(hi / depth)):
                if n % 2 == 0:
                    n_surface += 1
                else:
                    n_bottom += 1
            candidates.append(
                MacroPath(
                    length=length,
                    delay=length / env.c_water,
                    n_surface_bounces=n_surface,
                    n_bottom_bounces=n_bottom,
                )
            )
    candidates.sort(
        key=lambda p: (p.length, p.n_surface_bounces + p.n_bottom_bounces, p.n_surface_bounces)
    )
    return candidates[: env.n_macro_paths]


def thorp_absorption(f_khz: float) -> float:
    """Thorp attenuation alpha(f) in dB/km for frequency f in kHz."""
    if np.any(np.asarray(f_khz) <= 0.0):
        raise ValueError("frequency must be positive")
    f2 = np.square(f_khz)
    return 0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003


def large_scale_gain(
    length_m: float,
    f_khz: float,
    k: float,
    n_surface: int = 0,
    n_bottom: int = 0,
    bottom_coeff: float = 1.0,
    alpha_db_per_km: float | None = None,
) -> float:
    """Amplitude gain of one macro path.

    The energy attenuation is A = l^k * a(f)^l with the spreading term taken
    in meters and the absorption exponent in kilometers, a(f) being the
    linear per-km absorption 10^(alpha/10).  The amplitude gain 1/sqrt(A) is
    then multiplied by (-1)^n_surface and bottom_coeff^n_bottom.  Pass
    ``alpha_db_per_km=0.0`` to disable absorption.
    """
    if length_m < 1.0:
        raise ValueError("length_m must be at least 1 m (reference distance)")
    if alpha_db_per_km is None:
        alpha_db_per_km = float(thorp_absorption(f_khz))
    a_per_km = 10.0 ** (alpha_db_per_km / 10.0)
    attenuation = length_m**k * a_per_km ** (length_m / 1000.0)
    gain = 1.0 / math.sqrt(attenuation)
    return gain * SURFACE_REFLECTION**n_surface * bottom_coeff**n_bottom


def bottom_reflection_coefficient(
    grazing_angle: float,
    c_water: float,
    c_bottom: float,
    density_ratio: float,
) -> float:
    """Rayleigh two-fluid reflection coefficient at the bottom.

    ``grazing_angle`` is measured from the horizontal, in (0, pi/2].  With
    impedances Z_i = rho_i c_i / sin(theta_i) and Snell's law linking the
    grazing angles, R = (Z2 - Z1) / (Z2 + Z1).  For a slow bottom
    (c_bottom < c_water) the coefficient is always real with |R| <= 1; past
    the critical angle of a fast bottom the real part of the complex
    coefficient is returned, which still has magnitude at most 1.
    """
    if not (0.0 < grazing_angle <= math.pi / 2.0):
        raise ValueError("grazing_angle must lie in (0, pi/2]")
    sin_g1 = math.sin(grazing_angle)
    cos_g1 = math.cos(grazing_angle)
    sin_g2 = np.emath.sqrt(1.0 - (c_bottom / c_water * cos_g1) ** 2)
    z1 = c_water / sin_g1
    z2 = density_ratio * c_bottom / sin_g2
    refl = (z2 - z1) / (z2 + z1)
    return float(np.real(refl))


def realize_channel(
    env: EnvironmentConfig, seed: int, gain_freq_khz: float = 16.0
) -> ChannelRealization:
    """Draw one channel realization.

    Per macro path, ``n_intrapaths`` complex circular-Gaussian gains are
    drawn with variances decaying geometrically by ``intrapath_gain_decay``
    and normalized to unit total power, plus exponential nonnegative delay
    offsets with mean ``intrapath_delay_mean``.  A single vehicular speed is
    drawn per realization; the Doppler rate (drift + vehicular) / c_water is
    shared by all paths.  H0 = 1/sqrt(sum h_p^2) gives unit average power
    per grid cell.  Large-scale gains are evaluated at ``gain_freq_khz``
    (the carrier, by default).
    """
    rng = np.random.default_rng(seed)
    geometry = trace_macro_paths(env)

    v_vehicular = rng.normal(0.0, env.tx_vehicular_sigma)
    v_total = env.tx_drift + env.rx_drift + v_vehicular + env.rx_vehicular
    # outlier speed draws are clipped so the Doppler rate stays below 1e-3
    v_limit = 0.999e-3 * env.c_water
    doppler_rate = float(np.clip(v_total, -v_limit, v_limit)) / env.c_water

    n_paths = len(geometry)
    n_intra = env.n_intrapaths
    weights = env.intrapath_gain_decay ** np.arange(n_intra)
    weights = weights / weights.sum()

    gains = np.empty((n_paths, n_intra), dtype=np.complex128)
    delays = np.empty((n_paths, n_intra), dtype=np.float64)
    paths = []
    for p, geom in enumerate(geometry):
        re = rng.standard_normal(n_intra)
        im = rng.standard_normal(n_intra)
        gains[p] = (re + 1j * im) * np.sqrt(weights / 2.0)
        delays[p] = rng.exponential(env.intrapath_delay_mean, n_intra)

        if geom.n_bottom_bounces > 0:
            vertical = math.sqrt(max(geom.length**2 - env.range_m**2, 0.0))
            grazing = math.atan2(vertical, env.range_m)
            bottom_coeff = bottom_reflection_coefficient(
                grazing, env.c_water, env.c_bottom, env.bottom_density_ratio
            )
        else:
            bottom_coeff = 1.0
        gain = large_scale_gain(
            geom.length,
            gain_freq_khz,
            env.spreading_factor,
            n_surface=geom.n_surface_bounces,
            n_bottom=geom.n_bottom_bounces,
            bottom_coeff=bottom_coeff,
        )
        paths.append(replace(geom, large_scale_gain=gain, doppler_rate=doppler_rate))

    total_power = sum(p.large_scale_gain**2 for p in paths)
    nominal = 1.0 / math.sqrt(total_power)
    return ChannelRealization(
        macro_paths=tuple(paths),
        intrapath_gains=gains,
        intrapath_delays=delays,
        nominal_response=nominal,
        seed=int(seed),
    )


def sample_csi(
    real: ChannelRealization, f_grid: np.ndarray, t_grid: np.ndarray
) -> np.ndarray:
    """Sample H(f, t) on a frequency-time grid.

    Returns a complex (len(f_grid), len(t_grid)) matrix.  The intrapath sum
    factorizes as gamma_p(f, t) = G_p(f) * exp(j 2 pi f a_p t) with
    G_p(f) = sum_i g_i exp(-j 2 pi f dtau_i), which keeps the evaluation at
    O(paths * freqs * (intrapaths + times)).
    """
    f = np.asarray(f_grid, dtype=np.float64)
    t = np.asarray(t_grid, dtype=np.float64)
    if f.size == 0 or t.size == 0:
        raise ValueError("frequency and time grids must be nonempty")

    h = np.zeros((f.size, t.size), dtype=np.complex128)
    for p, path in enumerate(real.macro_paths):
        g_freq = np.exp(-2j * np.pi * np.outer(f, real.intrapath_delays[p])) @ real.intrapath_gains[p]
        doppler = np.exp(2j * np.pi * path.doppler_rate * np.outer(f, t))
        macro_phase = np.exp(-2j * np.pi * f * path.delay)
        h += (path.large_scale_gain * macro_phase * g_freq)[:, None] * doppler
    h *= real.nominal_response
    return h
