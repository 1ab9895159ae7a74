"""Spike counting, FLOPS accounting, and the SNN vs ANN energy model.

The accounting is multiply-centric: conv layers cost K^2*Cin*H*W*Cout
operations, normalizations Cin*H*W, elementwise heads C*H*W, and LIF state
updates are free. An analog network pays a full multiply-accumulate per
operation; a spiking layer pays an accumulate-only op per arriving spike, so
its energy is the ANN figure scaled by the layer's spiking rate and the
AC/MAC cost ratio. The final 1x1 head consumes real-valued membrane sums and
is charged at full MAC cost, as are the sigmoid/mean rows.

Energy constants are 45nm CMOS measurements (pJ per op) with direct table
entries at 8 bits; other widths scale from the 32-bit anchors by (Q/32)^1.25
for MAC and (Q/32) for AC.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SpikeTrace:
    """Per-site spike counters accumulated across forward passes.

    mode="events" (default) counts neuron-step firing events, the quantity
    entering both the activation probability and the spiking rate. In
    mode="ever" a neuron is counted at most once per slot however often it
    fires; forward passes delimit slots via begin_batch(). Counters merge
    associatively, so per-worker traces can be combined.
    """

    def __init__(self, mode: str = "events"):
        if mode not in ("events", "ever"):
            raise ValueError(f"mode must be 'events' or 'ever', got '{mode}'")
        self.mode = mode
        self.counts: dict = {}
        self.units: dict = {}  # accumulated batch elements x steps
        self.neurons: dict = {}
        self._pending: dict = {}  # ever mode: running any-fired masks

    def record(self, site: str, spikes) -> None:
        arr = np.asarray(spikes)
        batch = arr.shape[0] if arr.ndim == 4 else 1
        per_elem = arr[0].size if arr.ndim == 4 else arr.size
        known = self.neurons.setdefault(site, per_elem)
        if known != per_elem:
            raise ValueError(
                f"site '{site}': neuron count changed from {known} to {per_elem}"
            )
        if self.mode == "ever":
            fired = arr != 0
            prev = self._pending.get(site)
            self._pending[site] = fired if prev is None else (prev | fired)
            return
        self.counts[site] = self.counts.get(site, 0) + int(np.count_nonzero(arr))
        self.units[site] = self.units.get(site, 0) + batch

    def begin_batch(self) -> None:
        """Slot boundary hook; commits pending ever-fired masks."""
        if self.mode == "ever":
            self.flush()

    def flush(self) -> None:
        for site, mask in self._pending.items():
            batch = mask.shape[0] if mask.ndim == 4 else 1
            self.counts[site] = self.counts.get(site, 0) + int(np.count_nonzero(mask))
            self.units[site] = self.units.get(site, 0) + batch
        self._pending = {}

    def merge(self, other: "SpikeTrace") -> "SpikeTrace":
        if self.mode != other.mode:
            raise ValueError("cannot merge traces with different modes")
        self.flush()
        other.flush()
        for site in other.counts:
            if site in self.neurons and self.neurons[site] != other.neurons[site]:
                raise ValueError(f"site '{site}': neuron counts disagree")
            self.neurons[site] = other.neurons[site]
            self.counts[site] = self.counts.get(site, 0) + other.counts[site]
            self.units[site] = self.units.get(site, 0) + other.units[site]
        return self

    @property
    def sites(self):
        return tuple(self.counts)


def activation_probability(trace: SpikeTrace, via: str = "events",
                           time_steps: int = 1) -> dict:
    """Percent of neuron-step opportunities that produced a spike, per site.

    via="events" divides event counts by batch*steps*neurons directly;
    via="rate" recovers the slot count from the spiking-rate bookkeeping and
    multiplies back out. Both reduce to the same integer ratio, so on an
    events-mode trace they agree exactly.
    """
    trace.flush()
    if not trace.counts:
        raise ValueError("empty trace: no recorded activations")
    if via not in ("events", "rate"):
        raise ValueError(f"via must be 'events' or 'rate', got '{via}'")
    out = {}
    for site, count in trace.counts.items():
        if via == "events":
            denom = trace.units[site] * trace.neurons[site]
        else:
            units = trace.units[site]
            if units % time_steps != 0:
                raise ValueError(
                    f"site '{site}': {units} recorded units do not split into "
                    f"forwards of {time_steps} steps"
                )
            slots = units // time_steps
            denom = slots * time_steps * trace.neurons[site]
        out[site] = 100.0 * count / denom
    return out


def spiking_rate(trace: SpikeTrace, time_steps: int = 1) -> dict:
    """Spikes per neuron per slot, summed over the T steps of a forward.

    A neuron firing at every one of T steps scores T (the rate may exceed 1).
    units accumulated per site must cover whole forwards, i.e. divide by T.
    """
    trace.flush()
    if trace.mode != "events":
        raise ValueError("spiking_rate needs an events-mode trace")
    if time_steps < 1:
        raise ValueError(f"time_steps must be >= 1, got {time_steps}")
    out = {}
    for site, count in trace.counts.items():
        units = trace.units[site]
        if units % time_steps != 0:
            raise ValueError(
                f"site '{site}': {units} recorded units do not split into "
                f"forwards of {time_steps} steps"
            )
        slots = units // time_steps
        if trace.neurons[site] == 0:
            raise ValueError(f"site '{site}' has zero neurons")
        out[site] = count / (slots * trace.neurons[site])
    return out


# ---------------------------------------------------------------------------
# FLOPS accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerInfo:
    """Static shape descriptor for one accounted layer."""

    name: str
    kind: str  # conv | norm | elementwise
    channels_in: int
    h: int
    w: int
    channels_out: int = 0
    kernel: int = 0
    site: str = ""  # LIF site gating this layer's spiking energy; "" = analog


def conv_layer(name, cin, cout, h, w, kernel, site="") -> LayerInfo:
    return LayerInfo(name, "conv", cin, h, w, channels_out=cout, kernel=kernel,
                     site=site)


def norm_layer(name, channels, h, w, site="") -> LayerInfo:
    return LayerInfo(name, "norm", channels, h, w, site=site)


def elementwise_layer(name, channels, h, w) -> LayerInfo:
    return LayerInfo(name, "elementwise", channels, h, w)


def flops(layer: LayerInfo) -> int:
    if layer.kind == "conv":
        return (layer.kernel ** 2 * layer.channels_in * layer.h * layer.w
                * layer.channels_out)
    if layer.kind in ("norm", "elementwise"):
        return layer.channels_in * layer.h * layer.w
    raise ValueError(f"unknown layer kind '{layer.kind}'")


def model_layers(model) -> list:
    """Accounted layers for a Receiver, in forward order."""
    cfg = model.config
    m, n, f, k = cfg.symbols, cfg.subcarriers, cfg.filters, cfg.kernel
    mp, bt = cfg.n_data_symbols, cfg.bits_per_symbol
    act = "lif" if cfg.variant == "snn" else "act"
    layers = [
        conv_layer("stem.conv", 4, f, m, n, k, site=f"stem.{act}"),
        norm_layer("stem.norm", f, m, n, site=f"stem.{act}"),
    ]
    for i in range(cfg.blocks):
        for j in (1, 2):
            site = f"block{i}.{act}{j}"
            layers.append(conv_layer(f"block{i}.conv{j}", f, f, m, n, k, site=site))
            layers.append(norm_layer(f"block{i}.norm{j}", f, m, n, site=site))
    layers.append(conv_layer("head.conv", f, bt, m, n, 1))
    layers.append(elementwise_layer("head.sigmoid", bt, mp, n))
    layers.append(elementwise_layer("head.mean", bt, mp, n))
    return layers


# ---------------------------------------------------------------------------
# energy model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyTable:
    """Per-op energy anchors in pJ, 45nm CMOS."""

    mult_pj: float = 3.7
    add_pj: float = 0.9
    mac_pj: float = 4.6
    ac_pj: float = 0.9
    direct: dict = field(default_factory=lambda: {8: (1.1, 0.2)})

    def __post_init__(self):
        if abs(self.mac_pj - (self.mult_pj + self.add_pj)) > 1e-9:
            raise ValueError(
                f"MAC energy {self.mac_pj} must equal MULT + ADD = "
                f"{self.mult_pj + self.add_pj}"
            )

    def mac(self, bits: int = 32) -> float:
        if bits == 32:
            return self.mac_pj
        if bits in self.direct:
            return self.direct[bits][0]
        return self.mac_pj * (bits / 32.0) ** 1.25

    def ac(self, bits: int = 32) -> float:
        if bits == 32:
            return self.ac_pj
        if bits in self.direct:
            return self.direct[bits][1]
        return self.ac_pj * (bits / 32.0)


DEFAULT_TABLE = EnergyTable()


@dataclass
class LayerEnergy:
    name: str
    kind: str
    flops: int
    rate: float | None
    ann_pj: float
    snn_pj: float | None


@dataclass
class EnergyReport:
    bits: int
    time_steps: int
    layers: list
    ann_total_pj: float
    snn_total_pj: float | None

    @property
    def ratio(self) -> float | None:
        if self.snn_total_pj is None or self.snn_total_pj == 0:
            return None
        return self.ann_total_pj / self.snn_total_pj

    def to_dict(self) -> dict:
        return {
            "bits": self.bits,
            "time_steps": self.time_steps,
            "ann_total_pj": self.ann_total_pj,
            "snn_total_pj": self.snn_total_pj,
            "ratio": self.ratio,
            "layers": [
                {"name": l.name, "kind": l.kind, "flops": l.flops,
                 "rate": l.rate, "ann_pj": l.ann_pj, "snn_pj": l.snn_pj}
                for l in self.layers
            ],
        }

    def to_csv(self) -> str:
        lines = ["layer,kind,flops,rate,ann_pj,snn_pj"]
        for l in self.layers:
            rate = "" if l.rate is None else f"{l.rate:.8g}"
            snn = "" if l.snn_pj is None else f"{l.snn_pj:.8g}"
            lines.append(f"{l.name},{l.kind},{l.flops},{rate},{l.ann_pj:.8g},{snn}")
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        rows = [f"{'layer':<16}{'kind':<13}{'flops':>10}{'rate':>9}"
                f"{'ann_pj':>14}{'snn_pj':>14}"]
        for l in self.layers:
            rate = "-" if l.rate is None else f"{l.rate:.3f}"
            snn = "-" if l.snn_pj is None else f"{l.snn_pj:.1f}"
            rows.append(f"{l.name:<16}{l.kind:<13}{l.flops:>10}{rate:>9}"
                        f"{l.ann_pj:>14.1f}{snn:>14}")
        total_snn = "-" if self.snn_total_pj is None else f"{self.snn_total_pj:.1f}"
        rows.append(f"{'total':<16}{'':<13}{'':>10}{'':>9}"
                    f"{self.ann_total_pj:>14.1f}{total_snn:>14}")
        if self.ratio is not None:
            rows.append(f"ann/snn energy ratio: {self.ratio:.2f}x")
        return "\n".join(rows)


def energy_report(layers: list, trace: SpikeTrace | None = None,
                  table: EnergyTable = DEFAULT_TABLE, bits: int = 32,
                  time_steps: int = 1) -> EnergyReport:
    """Charge every layer for both variants on the same topology.

    The ANN column is pure FLOPS * MAC. The spiking column needs measured
    rates for every gated layer; without a trace it is omitted.
    """
    rates = spiking_rate(trace, time_steps) if trace is not None else None
    e_mac = table.mac(bits)
    e_ac = table.ac(bits)
    out = []
    ann_total = 0.0
    snn_total = 0.0 if rates is not None else None
    for layer in layers:
        fl = flops(layer)
        ann_pj = fl * e_mac
        ann_total += ann_pj
        rate = None
        snn_pj = None
        if rates is not None:
            if layer.site:
                if layer.site not in rates:
                    raise ValueError(
                        f"trace has no spikes recorded for site '{layer.site}' "
                        f"(layer '{layer.name}')"
                    )
                rate = rates[layer.site]
                snn_pj = fl * rate * e_ac
            else:
                snn_pj = fl * e_mac
            snn_total += snn_pj
        out.append(LayerEnergy(name=layer.name, kind=layer.kind, flops=fl,
                               rate=rate, ann_pj=ann_pj, snn_pj=snn_pj))
    return EnergyReport(bits=bits, time_steps=time_steps, layers=out,
                        ann_total_pj=ann_total, snn_total_pj=snn_total)
