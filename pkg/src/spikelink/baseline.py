"""Classical receiver chain: LS channel estimation, time interpolation,
LMMSE equalization, and exact log-sum-exp soft demapping.

LLR sign convention everywhere: log(P(b = 1) / P(b = 0)), so positive LLR
means bit 1.
"""

from __future__ import annotations

import numpy as np

from .channel import ChannelRealization
from .ofdm import ResourceGrid, constellation

# Effective noise floor keeping the demapper finite on noiseless channels.
NOISE_FLOOR = 1e-12


def ls_estimate(received: np.ndarray, pilots: np.ndarray, n0: float):
    """Least-squares estimate at pilot positions.

    h_hat = y p* / |p|^2 and error variance sigma^2 = N0 / |p|^2, evaluated
    elementwise on arrays of pilot REs.
    """
    p = np.asarray(pilots)
    y = np.asarray(received)
    if p.shape != y.shape:
        raise ValueError(f"received shape {y.shape} vs pilots shape {p.shape}")
    energy = (p.real ** 2 + p.imag ** 2).astype(np.float64)
    if np.any(energy == 0):
        raise ValueError("pilot symbols must be non-zero")
    h_hat = y * np.conj(p) / energy
    err_var = float(n0) / energy
    return h_hat, err_var


def interpolate_time(h_pilots: np.ndarray, err_pilots: np.ndarray,
                     pilot_rows, n_symbols: int):
    """Linear interpolation along the time axis only.

    Between pilot rows values interpolate linearly; outside they extrapolate
    as constants; a single pilot row replicates across the slot. The error
    variance interpolates with the same weights.
    """
    rows = np.asarray(pilot_rows, dtype=np.float64)
    if rows.ndim != 1 or rows.size == 0:
        raise ValueError("pilot_rows must be a non-empty 1-D index list")
    if h_pilots.shape[0] != rows.size:
        raise ValueError(
            f"{h_pilots.shape[0]} pilot rows of estimates vs {rows.size} row indices"
        )
    targets = np.arange(n_symbols, dtype=np.float64)
    # weight matrix: column p holds the interpolation weight of pilot p
    weights = np.empty((n_symbols, rows.size))
    for p in range(rows.size):
        basis = np.zeros(rows.size)
        basis[p] = 1.0
        weights[:, p] = np.interp(targets, rows, basis)
    h_full = weights @ h_pilots
    err_full = weights @ err_pilots
    return h_full, err_full


def lmmse_equalize(y: np.ndarray, h_hat: np.ndarray, noise_var):
    """Per-RE LMMSE: x_hat = h* y / (|h|^2 + sigma^2).

    Returns (x_hat, post_eq_var) with post_eq_var = sigma^2 / (|h|^2 + sigma^2),
    the effective noise handed to the demapper.
    """
    h = np.asarray(h_hat)
    sig = np.broadcast_to(np.asarray(noise_var, dtype=np.float64), h.shape)
    mag = (h.real ** 2 + h.imag ** 2).astype(np.float64)
    den = mag + sig
    if np.any(den == 0):
        raise ValueError("degenerate input: zero channel with zero noise variance")
    x_hat = np.conj(h) * y / den
    post_eq_var = sig / den
    return x_hat, post_eq_var


def _logsumexp(z: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.exp(z - m).sum(axis=axis))


def demap_llr(x_hat: np.ndarray, eff_noise_var, modulation: str) -> np.ndarray:
    """Exact per-bit LLRs, log(P(b=1)/P(b=0)), shape x_hat.shape + (Bt,).

    llr_l = logsumexp_{c in C_l1} (-|x - c|^2 / sigma^2)
          - logsumexp_{c in C_l0} (-|x - c|^2 / sigma^2)
    """
    points, labels = constellation(modulation)
    x = np.asarray(x_hat, dtype=np.complex128)
    sig = np.maximum(np.broadcast_to(np.asarray(eff_noise_var, dtype=np.float64),
                                     x.shape), NOISE_FLOOR)
    diff = x[..., None] - points  # (..., L)
    metric = -(diff.real ** 2 + diff.imag ** 2) / sig[..., None]
    bt = labels.shape[1]
    llr = np.empty(x.shape + (bt,), dtype=np.float64)
    for l in range(bt):
        ones = labels[:, l] == 1
        llr[..., l] = _logsumexp(metric[..., ones], -1) - _logsumexp(metric[..., ~ones], -1)
    return llr


def hard_bits(llr: np.ndarray) -> np.ndarray:
    """Positive LLR decides bit 1 (strictly positive; ties go to 0)."""
    return (llr > 0).astype(np.uint8)


def llr_to_prob(llr: np.ndarray) -> np.ndarray:
    """P(b = 1) = sigmoid(llr), computed stably."""
    out = np.empty_like(llr, dtype=np.float64)
    pos = llr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-llr[pos]))
    ex = np.exp(llr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def ls_receiver(received: np.ndarray, grid: ResourceGrid, n0: float) -> np.ndarray:
    """Full classical chain on one slot -> LLRs over data rows (M', N, Bt).

    Channel knowledge comes only from the pilots: LS at DMRS rows, linear
    time interpolation, LMMSE with the interpolated error variance added to
    the noise, then exact demapping.
    """
    cfg = grid.config
    pilot_rows = np.flatnonzero(grid.pilot_mask)
    h_p, e_p = ls_estimate(received[pilot_rows, :], grid.pilot_grid[pilot_rows, :], n0)
    h_full, e_full = interpolate_time(h_p, e_p, pilot_rows, cfg.symbols)
    data_rows = list(cfg.data_symbols)
    y_d = received[data_rows, :]
    x_hat, post_var = lmmse_equalize(y_d, h_full[data_rows, :],
                                     float(n0) + e_full[data_rows, :])
    return demap_llr(x_hat, post_var, cfg.modulation)


def genie_receiver(received: np.ndarray, grid: ResourceGrid,
                   channel: ChannelRealization) -> np.ndarray:
    """Same chain with the true channel and true noise power."""
    cfg = grid.config
    data_rows = list(cfg.data_symbols)
    x_hat, post_var = lmmse_equalize(received[data_rows, :],
                                     channel.h[data_rows, :], channel.n0)
    return demap_llr(x_hat, post_var, cfg.modulation)
