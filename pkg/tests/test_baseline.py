"""Classical receiver tests: LS, interpolation, LMMSE, demapper, end to end."""

import math

import numpy as np
import pytest

from spikelink import baseline as bl
from spikelink import channel as ch
from spikelink import ofdm


def qfunc(x: float) -> float:
    """Gaussian tail probability, the BER oracle for coherent QPSK."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def demap_oracle(x_hat, sigma2, modulation):
    """Brute-force per-bit LLR: direct probability sums in float64."""
    points, labels = ofdm.constellation(modulation)
    bt = labels.shape[1]
    out = np.zeros(bt)
    # scale exponents by the max to stay finite, identical to log-sum-exp
    d = -np.abs(x_hat - points) ** 2 / sigma2
    d = d - d.max()
    for l in range(bt):
        p1 = sum(math.exp(d[i]) for i in range(len(points)) if labels[i, l] == 1)
        p0 = sum(math.exp(d[i]) for i in range(len(points)) if labels[i, l] == 0)
        out[l] = math.log(p1) - math.log(p0)
    return out


class TestLsEstimate:
    def test_pinned_example(self):
        # y=2, p=1+1j, N0=0.5 -> h=1-1j, sigma^2=0.25
        h, err = bl.ls_estimate(np.array([2.0 + 0j]), np.array([1.0 + 1.0j]), 0.5)
        np.testing.assert_allclose(h, [1.0 - 1.0j])
        np.testing.assert_allclose(err, [0.25])

    def test_unit_pilots_give_n0_error(self):
        rng = np.random.default_rng(0)
        p = ofdm.modulate(rng.integers(0, 2, size=(24, 2)), "qpsk")
        y = rng.normal(size=24) + 1j * rng.normal(size=24)
        h, err = bl.ls_estimate(y, p, 0.1)
        np.testing.assert_allclose(err, 0.1, rtol=1e-5)
        np.testing.assert_allclose(h * p, y, rtol=1e-5)

    def test_zero_pilot_rejected(self):
        with pytest.raises(ValueError, match="non-zero"):
            bl.ls_estimate(np.array([1.0 + 0j]), np.array([0.0 + 0j]), 0.1)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            bl.ls_estimate(np.zeros(3, complex), np.ones(4, complex), 0.1)


class TestInterpolation:
    def test_pinned_two_row_example(self):
        # rows 3 and 12 with values 1 and 2: row 6 -> 1 + 3/9 = 1.3333
        h = np.array([[1.0 + 0j], [2.0 + 0j]])
        e = np.array([[0.1], [0.2]])
        h_full, e_full = bl.interpolate_time(h, e, [3, 12], 14)
        np.testing.assert_allclose(h_full[6, 0], 1.0 + 3.0 / 9.0)
        # constant extrapolation outside the pilot span
        np.testing.assert_allclose(h_full[0, 0], 1.0)
        np.testing.assert_allclose(h_full[13, 0], 2.0)
        np.testing.assert_allclose(e_full[6, 0], 0.1 + (0.1 / 9) * 3)

    def test_single_row_replicates(self):
        h = np.array([[0.5 - 0.25j, 1.0 + 1j]])
        e = np.array([[0.3, 0.4]])
        h_full, e_full = bl.interpolate_time(h, e, [3], 14)
        for m in range(14):
            np.testing.assert_array_equal(h_full[m], h[0])
            np.testing.assert_array_equal(e_full[m], e[0])

    def test_row_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="pilot rows"):
            bl.interpolate_time(np.zeros((2, 4), complex), np.zeros((2, 4)), [3], 14)


class TestLmmse:
    def test_pinned_example(self):
        x, v = bl.lmmse_equalize(np.array([2.0 + 0j]), np.array([1.0 + 0j]), 1.0)
        np.testing.assert_allclose(x, [1.0 + 0j])
        np.testing.assert_allclose(v, [0.5])

    def test_matched_filter_limit(self):
        # vanishing noise: x_hat -> y / h
        y = np.array([1.0 + 1.0j])
        h = np.array([0.5 - 0.5j])
        x, v = bl.lmmse_equalize(y, h, 1e-12)
        np.testing.assert_allclose(x, y / h, rtol=1e-6)
        np.testing.assert_allclose(v, 0.0, atol=1e-9)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            bl.lmmse_equalize(np.array([1.0 + 0j]), np.array([0.0 + 0j]), 0.0)


class TestDemapper:
    def test_qpsk_signs_follow_quadrant(self):
        # bit 0 positive real, bit 1 positive imag -> llr < 0 means bit 0
        pts = np.array([0.7 + 0.7j, -0.7 + 0.7j, 0.7 - 0.7j, -0.7 - 0.7j])
        llr = bl.demap_llr(pts, 0.1, "qpsk")
        np.testing.assert_array_equal(bl.hard_bits(llr),
                                      [[0, 0], [1, 0], [0, 1], [1, 1]])

    def test_origin_gives_zero_llr(self):
        llr = bl.demap_llr(np.array([0.0 + 0.0j]), 0.5, "qpsk")
        np.testing.assert_allclose(llr, 0.0, atol=1e-12)

    @pytest.mark.parametrize("modulation", ["qpsk", "16qam"])
    def test_exact_points_round_trip(self, modulation):
        # tiny noise at each constellation point recovers the labels, finite
        points, labels = ofdm.constellation(modulation)
        llr = bl.demap_llr(points, 1e-9, modulation)
        assert np.all(np.isfinite(llr))
        np.testing.assert_array_equal(bl.hard_bits(llr), labels)

    @pytest.mark.parametrize("modulation", ["qpsk", "16qam"])
    def test_matches_bruteforce_oracle(self, modulation):
        rng = np.random.default_rng(11)
        for _ in range(50):
            x = complex(rng.normal(), rng.normal())
            s2 = float(rng.uniform(0.05, 2.0))
            got = bl.demap_llr(np.array([x]), s2, modulation)[0]
            np.testing.assert_allclose(got, demap_oracle(x, s2, modulation),
                                       rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("modulation", ["qpsk", "16qam"])
    def test_real_mirror_flips_sign_bit_only(self, modulation):
        rng = np.random.default_rng(12)
        x = rng.normal(size=40) + 1j * rng.normal(size=40)
        llr = bl.demap_llr(x, 0.3, modulation)
        mirr = bl.demap_llr(-x.real + 1j * x.imag, 0.3, modulation)
        np.testing.assert_allclose(mirr[:, 0], -llr[:, 0], rtol=1e-9)
        np.testing.assert_allclose(mirr[:, 1], llr[:, 1], rtol=1e-9)
        if modulation == "16qam":
            # magnitude bits depend on |Re|, |Im| only
            np.testing.assert_allclose(mirr[:, 2], llr[:, 2], rtol=1e-9)
            np.testing.assert_allclose(mirr[:, 3], llr[:, 3], rtol=1e-9)

    def test_llr_to_prob_matches_sigmoid(self):
        llr = np.array([-50.0, -1.0, 0.0, 1.0, 50.0])
        p = bl.llr_to_prob(llr)
        np.testing.assert_allclose(p, 1 / (1 + np.exp(-llr)))
        assert np.all((p >= 0) & (p <= 1))


class TestReceivers:
    def _slot(self, cfg, seed, profile="A", delay=100.0, doppler=0.0, ebno_db=None):
        rng = np.random.default_rng(seed)
        bits = ofdm.random_payload(cfg, rng)
        grid = ofdm.build_slot(cfg, bits, rng)
        n0 = 0.0 if ebno_db is None else ofdm.ebno_to_n0(ebno_db, cfg.bits_per_symbol)
        chan = ch.sample_channel(cfg, profile, delay, doppler, n0, rng)
        y = ofdm.transmit(grid, chan, rng)
        return grid, chan, y, rng

    def test_noiseless_static_ls_is_errorfree(self):
        cfg = ofdm.GridConfig()
        for seed in range(5):
            grid, chan, y, _ = self._slot(cfg, seed)
            llr = bl.ls_receiver(y, grid, 0.0)
            bits = grid.payload_bits.reshape(cfg.n_data_symbols, cfg.subcarriers,
                                             cfg.bits_per_symbol)
            assert np.array_equal(bl.hard_bits(llr), bits)

    def test_noiseless_static_genie_is_errorfree(self):
        cfg = ofdm.GridConfig(modulation="16qam")
        grid, chan, y, _ = self._slot(cfg, 3)
        llr = bl.genie_receiver(y, grid, chan)
        bits = grid.payload_bits.reshape(cfg.n_data_symbols, cfg.subcarriers,
                                         cfg.bits_per_symbol)
        assert np.array_equal(bl.hard_bits(llr), bits)
        assert np.all(np.isfinite(llr))

    def test_all_ones_payload_gives_positive_llr(self):
        # pins the sign convention end to end: bit 1 -> llr > 0
        cfg = ofdm.GridConfig()
        rng = np.random.default_rng(4)
        bits = np.ones(cfg.payload_bits, dtype=np.uint8)
        grid = ofdm.build_slot(cfg, bits, rng)
        chan = ch.sample_channel(cfg, "A", 100.0, 0.0, 0.0, rng)
        y = ofdm.transmit(grid, chan, rng)
        assert np.all(bl.ls_receiver(y, grid, 0.0) > 0)

    def test_genie_awgn_ber_matches_qfunction(self):
        # QPSK over H=1 AWGN at 4 dB: BER = Q(sqrt(2 Eb/N0)) ~ 1.25e-2
        cfg = ofdm.GridConfig()
        ebno_db = 4.0
        n0 = ofdm.ebno_to_n0(ebno_db, 2)
        chan = ch.awgn_channel(cfg, n0)
        rng = np.random.default_rng(5)
        errors, total = 0, 0
        while total < 200000:
            bits = ofdm.random_payload(cfg, rng)
            grid = ofdm.build_slot(cfg, bits, rng)
            y = ofdm.transmit(grid, chan, rng)
            llr = bl.genie_receiver(y, grid, chan)
            hard = bl.hard_bits(llr).reshape(-1)
            errors += int(np.sum(hard != bits))
            total += bits.size
        ber = errors / total
        expect = qfunc(math.sqrt(2 * 10 ** (ebno_db / 10)))
        assert abs(ber - expect) / expect < 0.10

    def test_genie_dominates_ls(self):
        # true channel knowledge can only help (2-sigma Monte-Carlo slack)
        cfg = ofdm.GridConfig(dmrs_symbols=(3, 12))
        diffs = []
        for seed in range(60):
            grid, chan, y, _ = self._slot(cfg, seed, profile="B", doppler=200.0,
                                          ebno_db=8.0)
            bits = grid.payload_bits.reshape(cfg.n_data_symbols, cfg.subcarriers,
                                             cfg.bits_per_symbol)
            e_g = np.mean(bl.hard_bits(bl.genie_receiver(y, grid, chan)) != bits)
            e_l = np.mean(bl.hard_bits(bl.ls_receiver(y, grid, chan.n0)) != bits)
            diffs.append(e_l - e_g)
        diffs = np.asarray(diffs)
        slack = 2 * diffs.std() / math.sqrt(len(diffs))
        assert diffs.mean() >= -slack

    def test_high_doppler_single_dmrs_degrades_ls(self):
        # the static LS estimate goes stale across the slot at 400 Hz
        cfg = ofdm.GridConfig(dmrs_symbols=(3,))
        stale, fresh = [], []
        for seed in range(40):
            grid, chan, y, _ = self._slot(cfg, seed, profile="B", doppler=400.0,
                                          ebno_db=10.0)
            bits = grid.payload_bits.reshape(cfg.n_data_symbols, cfg.subcarriers,
                                             cfg.bits_per_symbol)
            stale.append(np.mean(bl.hard_bits(bl.ls_receiver(y, grid, chan.n0)) != bits))
            fresh.append(np.mean(bl.hard_bits(bl.genie_receiver(y, grid, chan)) != bits))
        assert np.mean(stale) > 2 * np.mean(fresh)
