"""Frequency-domain OFDM slot construction and transmission.

The simulator works directly on the M x N resource grid (no CP / IFFT): data
and pilot symbols are placed per resource element, the channel multiplies
per-RE, and circular complex Gaussian noise is added. Pilot (DMRS) symbols
occupy entire rows of the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODULATIONS = ("qpsk", "16qam")


@dataclass(frozen=True)
class GridConfig:
    """Slot geometry and modulation.

    symbols (M) is the time axis, subcarriers (N) the frequency axis;
    dmrs_symbols are the pilot rows. Desk defaults: 14 x 24, QPSK, one DMRS
    row at symbol 3.

    pilot_seed None draws fresh pilot values per slot; an integer freezes
    one pseudo-random QPSK sequence for every slot built from this config,
    the way a real cell's DMRS is fixed by its configuration.
    """

    symbols: int = 14
    subcarriers: int = 24
    modulation: str = "qpsk"
    dmrs_symbols: tuple = (3,)
    subcarrier_spacing_hz: float = 15e3
    carrier_freq_hz: float = 4e9
    pilot_seed: int | None = None

    def __post_init__(self):
        if self.modulation not in MODULATIONS:
            raise ValueError(f"modulation must be one of {MODULATIONS}, got '{self.modulation}'")
        if self.symbols < 1 or self.subcarriers < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.symbols}x{self.subcarriers}")
        dmrs = tuple(sorted(set(int(m) for m in self.dmrs_symbols)))
        if len(dmrs) == 0:
            raise ValueError("at least one DMRS symbol is required")
        if any(m < 0 or m >= self.symbols for m in dmrs):
            raise ValueError(f"dmrs_symbols {dmrs} outside [0, {self.symbols})")
        if len(dmrs) >= self.symbols:
            raise ValueError("degenerate grid: no data symbols left")
        object.__setattr__(self, "dmrs_symbols", dmrs)
        if self.pilot_seed is not None and int(self.pilot_seed) < 0:
            raise ValueError(f"pilot_seed must be None or >= 0, got {self.pilot_seed}")

    @property
    def bits_per_symbol(self) -> int:
        return 2 if self.modulation == "qpsk" else 4

    @property
    def data_symbols(self) -> tuple:
        return tuple(m for m in range(self.symbols) if m not in self.dmrs_symbols)

    @property
    def n_data_symbols(self) -> int:
        return self.symbols - len(self.dmrs_symbols)

    @property
    def payload_bits(self) -> int:
        return self.bits_per_symbol * self.n_data_symbols * self.subcarriers

    @property
    def symbol_duration_s(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz

    def to_dict(self) -> dict:
        return {
            "symbols": self.symbols,
            "subcarriers": self.subcarriers,
            "modulation": self.modulation,
            "dmrs_symbols": list(self.dmrs_symbols),
            "subcarrier_spacing_hz": self.subcarrier_spacing_hz,
            "carrier_freq_hz": self.carrier_freq_hz,
            "pilot_seed": self.pilot_seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "GridConfig":
        seed = d.get("pilot_seed")
        return GridConfig(
            symbols=int(d["symbols"]),
            subcarriers=int(d["subcarriers"]),
            modulation=str(d["modulation"]),
            dmrs_symbols=tuple(d["dmrs_symbols"]),
            subcarrier_spacing_hz=float(d.get("subcarrier_spacing_hz", 15e3)),
            carrier_freq_hz=float(d.get("carrier_freq_hz", 4e9)),
            pilot_seed=None if seed is None else int(seed),
        )


# ---------------------------------------------------------------------------
# modulation (per-axis Gray maps, unit average energy, bit 0 -> positive)
# ---------------------------------------------------------------------------


def modulate(bits: np.ndarray, modulation: str, dtype=np.complex64) -> np.ndarray:
    """Map bits (..., Bt) to unit-energy constellation points.

    QPSK: (b0, b1) -> ((1-2 b0) + 1j (1-2 b1)) / sqrt(2), so (0,0) maps to
    (1+1j)/sqrt(2). 16-QAM: b0/b1 choose the I/Q sign, b2/b3 the magnitude,
    levels {+-1, +-3}/sqrt(10), Gray per axis.
    """
    bits = np.asarray(bits)
    if modulation == "qpsk":
        if bits.shape[-1] != 2:
            raise ValueError(f"qpsk expects 2 bits per symbol, got {bits.shape[-1]}")
        i = 1.0 - 2.0 * bits[..., 0]
        q = 1.0 - 2.0 * bits[..., 1]
        return ((i + 1j * q) / np.sqrt(2.0)).astype(dtype)
    if modulation == "16qam":
        if bits.shape[-1] != 4:
            raise ValueError(f"16qam expects 4 bits per symbol, got {bits.shape[-1]}")
        i = (1.0 - 2.0 * bits[..., 0]) * (2.0 - (1.0 - 2.0 * bits[..., 2]))
        q = (1.0 - 2.0 * bits[..., 1]) * (2.0 - (1.0 - 2.0 * bits[..., 3]))
        return ((i + 1j * q) / np.sqrt(10.0)).astype(dtype)
    raise ValueError(f"modulation must be one of {MODULATIONS}, got '{modulation}'")


def constellation(modulation: str):
    """All points and their bit labels: (points (L,), labels (L, Bt))."""
    bt = 2 if modulation == "qpsk" else 4
    count = 1 << bt
    labels = np.zeros((count, bt), dtype=np.uint8)
    for idx in range(count):
        for l in range(bt):
            labels[idx, l] = (idx >> (bt - 1 - l)) & 1
    points = modulate(labels.astype(np.float64), modulation, dtype=np.complex128)
    return points, labels


# ---------------------------------------------------------------------------
# slot construction
# ---------------------------------------------------------------------------


@dataclass
class ResourceGrid:
    """One transmitted slot: grid values, pilot layout, and payload bits."""

    config: GridConfig
    values: np.ndarray      # (M, N) complex64, data + pilots
    pilot_grid: np.ndarray  # (M, N) complex64, pilots on DMRS rows, 0 elsewhere
    pilot_mask: np.ndarray  # (M,) bool, True on DMRS rows
    payload_bits: np.ndarray  # (payload_bits,) uint8


def random_payload(config: GridConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=config.payload_bits, dtype=np.uint8)


def build_slot(config: GridConfig, payload_bits: np.ndarray,
               rng: np.random.Generator) -> ResourceGrid:
    """Assemble a slot: payload on data rows, random QPSK pilots spanning
    every subcarrier of each DMRS row.

    Pilots come from ``rng`` (fresh per slot), or from the config's fixed
    pilot_seed when one is set.
    """
    bits = np.asarray(payload_bits, dtype=np.uint8)
    if bits.shape != (config.payload_bits,):
        raise ValueError(
            f"payload must have {config.payload_bits} bits for this grid, "
            f"got shape {bits.shape}"
        )
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("payload bits must be 0/1")
    m, n, bt = config.symbols, config.subcarriers, config.bits_per_symbol
    values = np.zeros((m, n), dtype=np.complex64)
    data_syms = modulate(bits.reshape(config.n_data_symbols, n, bt), config.modulation)
    values[list(config.data_symbols), :] = data_syms
    pilot_rng = rng if config.pilot_seed is None else np.random.default_rng(config.pilot_seed)
    pilot_bits = pilot_rng.integers(0, 2, size=(len(config.dmrs_symbols), n, 2))
    pilots = modulate(pilot_bits, "qpsk")
    pilot_grid = np.zeros((m, n), dtype=np.complex64)
    pilot_grid[list(config.dmrs_symbols), :] = pilots
    values[list(config.dmrs_symbols), :] = pilots
    pilot_mask = np.zeros(m, dtype=bool)
    pilot_mask[list(config.dmrs_symbols)] = True
    return ResourceGrid(config, values, pilot_grid, pilot_mask, bits)


def ebno_to_n0(ebno_db: float, bits_per_symbol: int) -> float:
    """Noise power for unit-energy symbols: N0 = 1 / (Bt * 10^(ebno/10))."""
    if bits_per_symbol <= 0:
        raise ValueError(f"bits_per_symbol must be positive, got {bits_per_symbol}")
    return 1.0 / (bits_per_symbol * 10.0 ** (ebno_db / 10.0))


def transmit(grid: ResourceGrid, channel, rng: np.random.Generator) -> np.ndarray:
    """y = h x + z with z ~ CN(0, N0) i.i.d. per resource element."""
    h = channel.h
    if h.shape != grid.values.shape:
        raise ValueError(f"channel shape {h.shape} does not match grid {grid.values.shape}")
    n0 = channel.n0
    if n0 < 0:
        raise ValueError(f"noise power must be non-negative, got {n0}")
    noise = np.sqrt(n0 / 2.0) * (
        rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    )
    return (h * grid.values + noise).astype(np.complex64)
