"""On-disk slot datasets: fixed-size binary records plus a JSON sidecar.

One record is, in order: the received grid, the pilot grid (both little-endian
float32 with real/imag interleaved per element), the payload bits as uint8,
then four float32 metadata values (delay ns, Doppler Hz, Eb/N0 dB, N0) and a
uint32 index into the sidecar's profile list. The sidecar stores the grid
configuration, the record count, and the profile names, so a dataset is fully
self-describing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import channel, ofdm

FORMAT_VERSION = 1


@dataclass
class SlotRecord:
    received: np.ndarray
    pilot_grid: np.ndarray
    bits: np.ndarray
    delay_ns: float
    doppler_hz: float
    ebno_db: float
    n0: float
    profile: str


def sidecar_path(bin_path) -> Path:
    return Path(bin_path).with_suffix(".json")


def record_nbytes(grid: ofdm.GridConfig) -> int:
    n_res = grid.symbols * grid.subcarriers
    return 2 * (2 * n_res * 4) + grid.payload_bits + 4 * 4 + 4


def _complex_to_f32(a: np.ndarray) -> bytes:
    out = np.empty(a.size * 2, dtype="<f4")
    out[0::2] = a.real.ravel()
    out[1::2] = a.imag.ravel()
    return out.tobytes()


def _f32_to_complex(raw: bytes, shape) -> np.ndarray:
    flat = np.frombuffer(raw, dtype="<f4")
    return (flat[0::2] + 1j * flat[1::2]).astype(np.complex64).reshape(shape)


class DatasetWriter:
    """Streams records to <path> and writes the sidecar on close."""

    def __init__(self, path, grid: ofdm.GridConfig, profiles, seed: int = 0):
        self.path = Path(path)
        self.grid = grid
        self.profiles = tuple(profiles)
        for p in self.profiles:
            channel.get_profile(p)
        self.seed = seed
        self.count = 0
        self._f = open(self.path, "wb")

    def add(self, rec: SlotRecord) -> None:
        g = self.grid
        if rec.received.shape != (g.symbols, g.subcarriers):
            raise ValueError(
                f"received grid shape {rec.received.shape} does not match "
                f"({g.symbols}, {g.subcarriers})"
            )
        if rec.bits.size != g.payload_bits:
            raise ValueError(
                f"payload has {rec.bits.size} bits, grid carries {g.payload_bits}"
            )
        if rec.profile not in self.profiles:
            raise ValueError(f"profile '{rec.profile}' not declared for this dataset")
        self._f.write(_complex_to_f32(rec.received))
        self._f.write(_complex_to_f32(rec.pilot_grid))
        self._f.write(np.asarray(rec.bits, dtype=np.uint8).tobytes())
        self._f.write(np.array([rec.delay_ns, rec.doppler_hz, rec.ebno_db, rec.n0],
                               dtype="<f4").tobytes())
        self._f.write(np.array([self.profiles.index(rec.profile)],
                               dtype="<u4").tobytes())
        self.count += 1

    def close(self) -> None:
        self._f.close()
        sidecar = {
            "format_version": FORMAT_VERSION,
            "grid": self.grid.to_dict(),
            "records": self.count,
            "profiles": list(self.profiles),
            "seed": self.seed,
        }
        sidecar_path(self.path).write_text(
            json.dumps(sidecar, sort_keys=True, indent=1) + "\n"
        )

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def read_sidecar(bin_path) -> dict:
    meta = json.loads(sidecar_path(bin_path).read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"dataset format version {meta.get('format_version')} not supported "
            f"(this build reads {FORMAT_VERSION})"
        )
    return meta


def read_dataset(bin_path) -> tuple:
    """Load every record; returns (GridConfig, [SlotRecord, ...], sidecar dict)."""
    meta = read_sidecar(bin_path)
    grid = ofdm.GridConfig.from_dict(meta["grid"])
    profiles = meta["profiles"]
    nbytes = record_nbytes(grid)
    raw = Path(bin_path).read_bytes()
    if len(raw) != meta["records"] * nbytes:
        raise ValueError(
            f"dataset holds {len(raw)} bytes, sidecar promises "
            f"{meta['records']} records of {nbytes} bytes"
        )
    shape = (grid.symbols, grid.subcarriers)
    grid_bytes = 2 * grid.symbols * grid.subcarriers * 4
    records = []
    off = 0
    for _ in range(meta["records"]):
        received = _f32_to_complex(raw[off:off + grid_bytes], shape)
        off += grid_bytes
        pilots = _f32_to_complex(raw[off:off + grid_bytes], shape)
        off += grid_bytes
        bits = np.frombuffer(raw[off:off + grid.payload_bits], dtype=np.uint8).copy()
        off += grid.payload_bits
        vals = np.frombuffer(raw[off:off + 16], dtype="<f4")
        off += 16
        (pidx,) = np.frombuffer(raw[off:off + 4], dtype="<u4")
        off += 4
        records.append(SlotRecord(
            received=received, pilot_grid=pilots, bits=bits,
            delay_ns=float(vals[0]), doppler_hz=float(vals[1]),
            ebno_db=float(vals[2]), n0=float(vals[3]),
            profile=profiles[int(pidx)],
        ))
    return grid, records, meta


def generate_dataset(path, grid: ofdm.GridConfig, slots: int, *, profiles,
                     delay_ns_range, doppler_hz_range, ebno_db_range,
                     seed: int = 0) -> dict:
    """Sample `slots` independent slots into a dataset file pair."""
    rng = np.random.default_rng(seed)
    profiles = tuple(profiles)
    with DatasetWriter(path, grid, profiles, seed=seed) as w:
        for _ in range(slots):
            profile = profiles[int(rng.integers(len(profiles)))]
            delay = _draw(rng, delay_ns_range)
            doppler = _draw(rng, doppler_hz_range)
            ebno = _draw(rng, ebno_db_range)
            bits = ofdm.random_payload(grid, rng)
            slot = ofdm.build_slot(grid, bits, rng)
            n0 = ofdm.ebno_to_n0(ebno, grid.bits_per_symbol)
            chan = channel.sample_channel(grid, profile, delay, doppler, n0, rng)
            received = ofdm.transmit(slot, chan, rng)
            w.add(SlotRecord(received=received, pilot_grid=slot.pilot_grid,
                             bits=bits, delay_ns=delay, doppler_hz=doppler,
                             ebno_db=ebno, n0=n0, profile=profile))
    return read_sidecar(path)


def _draw(rng, lo_hi) -> float:
    lo, hi = lo_hi
    if not lo <= hi:
        raise ValueError(f"range must satisfy lo <= hi, got ({lo}, {hi})")
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))
