"""Simplified tapped-delay-line fading channel.

Named profiles (A-E) use 3 to 5 taps with exponentially decaying power, the
last two with a line-of-sight first tap. Tap delays scale with the configured
delay spread; each tap's gain evolves over the slot through a 16-sinusoid
sum-of-sinusoids Doppler process with random angles and phases. Tap powers
are normalized so E[|H|^2] = 1. The frequency response is evaluated directly
on the M x N grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ofdm import GridConfig

N_SINUSOIDS = 16


@dataclass(frozen=True)
class TdlProfile:
    """Tap layout: delays normalized to the delay spread, powers in dB.

    los_k_db, when set, turns the first tap into a Ricean tap with the given
    K-factor (deterministic component with a random phase/Doppler angle).
    """

    name: str
    delays: tuple
    powers_db: tuple
    los_k_db: float | None = None

    def __post_init__(self):
        if len(self.delays) != len(self.powers_db):
            raise ValueError(
                f"profile {self.name}: {len(self.delays)} delays vs "
                f"{len(self.powers_db)} powers"
            )
        if not 2 <= len(self.delays) <= 5:
            raise ValueError(f"profile {self.name}: expected 2 to 5 taps, got {len(self.delays)}")

    @property
    def powers(self) -> np.ndarray:
        p = 10.0 ** (np.asarray(self.powers_db, dtype=np.float64) / 10.0)
        return p / p.sum()


PROFILES = {
    "A": TdlProfile("A", (0.0, 0.18, 0.40, 0.65, 1.0), (0.0, -2.8, -5.6, -8.4, -11.2)),
    "B": TdlProfile("B", (0.0, 0.25, 0.60, 1.0), (0.0, -2.4, -4.8, -7.2)),
    "C": TdlProfile("C", (0.0, 0.15, 0.35, 0.70, 1.0), (0.0, -3.5, -7.0, -10.5, -14.0)),
    "D": TdlProfile("D", (0.0, 0.35, 1.0), (0.0, -8.0, -12.0), los_k_db=10.0),
    "E": TdlProfile("E", (0.0, 0.50, 1.0), (0.0, -10.0, -16.0), los_k_db=14.0),
}


@dataclass
class ChannelRealization:
    """Per-RE frequency response over one slot plus the noise power."""

    h: np.ndarray  # (M, N) complex64
    n0: float
    profile: str = ""
    delay_spread_ns: float = 0.0
    doppler_hz: float = 0.0


def get_profile(profile) -> TdlProfile:
    if isinstance(profile, TdlProfile):
        return profile
    try:
        return PROFILES[profile]
    except KeyError:
        raise ValueError(
            f"unknown channel profile '{profile}' (available: {sorted(PROFILES)})"
        ) from None


def sample_channel(config: GridConfig, profile, delay_spread_ns: float,
                   doppler_hz: float, n0: float,
                   rng: np.random.Generator) -> ChannelRealization:
    """Draw one slot's channel: taps with Jakes-style time evolution, then
    H[m, n] = sum_k a_k(t_m) exp(-j 2 pi f_n tau_k)."""
    prof = get_profile(profile)
    if delay_spread_ns < 0:
        raise ValueError(f"delay_spread_ns must be non-negative, got {delay_spread_ns}")
    if doppler_hz < 0:
        raise ValueError(f"doppler_hz must be non-negative, got {doppler_hz}")
    if n0 < 0:
        raise ValueError(f"n0 must be non-negative, got {n0}")
    m, n = config.symbols, config.subcarriers
    t = np.arange(m) * config.symbol_duration_s  # (M,)
    taus = np.asarray(prof.delays) * delay_spread_ns * 1e-9  # (K,) seconds
    powers = prof.powers

    gains = np.zeros((len(taus), m), dtype=np.complex128)  # a_k(t_m)
    for k, p in enumerate(powers):
        diffuse = _sum_of_sinusoids(t, doppler_hz, rng)
        if k == 0 and prof.los_k_db is not None:
            kf = 10.0 ** (prof.los_k_db / 10.0)
            phase = rng.uniform(0, 2 * np.pi)
            angle = rng.uniform(0, 2 * np.pi)
            los = np.exp(1j * (2 * np.pi * doppler_hz * np.cos(angle) * t + phase))
            tap = np.sqrt(kf / (kf + 1.0)) * los + np.sqrt(1.0 / (kf + 1.0)) * diffuse
        else:
            tap = diffuse
        gains[k] = np.sqrt(p) * tap

    freqs = np.arange(n) * config.subcarrier_spacing_hz  # (N,)
    steering = np.exp(-2j * np.pi * np.outer(taus, freqs))  # (K, N)
    h = gains.T @ steering  # (M, N)
    return ChannelRealization(h.astype(np.complex64), float(n0), prof.name,
                              float(delay_spread_ns), float(doppler_hz))


def _sum_of_sinusoids(t: np.ndarray, doppler_hz: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Unit-power complex fading process from 16 random sinusoids."""
    angles = rng.uniform(0, 2 * np.pi, size=N_SINUSOIDS)
    phases = rng.uniform(0, 2 * np.pi, size=N_SINUSOIDS)
    arg = 2 * np.pi * doppler_hz * np.cos(angles)[:, None] * t[None, :] + phases[:, None]
    return np.exp(1j * arg).sum(axis=0) / np.sqrt(N_SINUSOIDS)


def awgn_channel(config: GridConfig, n0: float) -> ChannelRealization:
    """Unit flat channel (H = 1): the analytic AWGN reference condition."""
    h = np.ones((config.symbols, config.subcarriers), dtype=np.complex64)
    return ChannelRealization(h, float(n0), "awgn", 0.0, 0.0)
