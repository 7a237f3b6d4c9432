import math

import numpy as np
from django.test import SimpleTestCase, tag

from simulator.exceptions import ChannelError, ConfigError
from simulator.float_codec import BitFrame
from simulator.modem import (
    MODULATIONS,
    ber_sweep,
    bit_position_error_rates,
    build_constellation,
    demodulate,
    grid_index,
    ml_detect,
    modulate,
    msb_lsb_error_table,
    theoretical_ber_qpsk_rayleigh,
)


class ConstellationTests(SimpleTestCase):
    def test_unit_average_energy(self):
        for name in MODULATIONS:
            constellation = build_constellation(name)
            self.assertAlmostEqual(float(np.mean(np.abs(constellation.points) ** 2)), 1.0, places=12)

    def test_qpsk_label_zero(self):
        qpsk = build_constellation(4)

        self.assertEqual(qpsk.bits_per_symbol, 2)
        self.assertAlmostEqual(qpsk.points[0], (1 + 1j) / math.sqrt(2))

    def test_qam256_grid_scale(self):
        qam = build_constellation("qam256")

        self.assertAlmostEqual(float(np.max(np.abs(qam.points.real))), 15 / math.sqrt(170))

    def test_gray_property_between_grid_neighbours(self):
        for name in MODULATIONS:
            constellation = build_constellation(name)
            positions = {grid_index(constellation, label): label for label in range(constellation.order)}
            for (row, column), label in positions.items():
                for other in ((row + 1, column), (row, column + 1)):
                    if other not in positions:
                        continue
                    differing = np.count_nonzero(
                        constellation.label_bits[label] != constellation.label_bits[positions[other]]
                    )
                    self.assertEqual(differing, 1, f"{name} labels at {(row, column)} and {other}")

    def test_unsupported_order(self):
        with self.assertRaises(ConfigError):
            build_constellation(8)
        with self.assertRaises(ConfigError):
            build_constellation("qam64")


class DetectionTests(SimpleTestCase):
    def test_noiseless_roundtrip_through_any_gain(self):
        rng = np.random.default_rng(7)
        bits = rng.integers(0, 2, size=4096, dtype=np.uint8)
        for name in MODULATIONS:
            constellation = build_constellation(name)
            stream = modulate(BitFrame(bits=bits, payload_len_bits=bits.size), constellation)
            gain = 0.03 - 0.02j

            self.assertEqual(len(stream), math.ceil(bits.size / constellation.bits_per_symbol))
            detected = demodulate(
                stream.__class__(stream.symbols * gain, stream.source_len_bits, stream.bits_per_symbol),
                np.full(len(stream), gain),
                constellation,
            )
            np.testing.assert_array_equal(detected, bits)

    def test_exact_point_is_detected(self):
        qam = build_constellation("qam16")
        gain = 0.5 + 0.5j

        np.testing.assert_array_equal(ml_detect(gain * qam.points[9], gain, qam), qam.label_bits[9])

    def test_tie_goes_to_lower_label(self):
        qpsk = build_constellation("qpsk")
        # Halfway between labels 00 at (+1+j) and 01 at (+1-j).
        received = complex(qpsk.points[0].real, 0.0)

        np.testing.assert_array_equal(ml_detect(received, 1.0, qpsk), [0, 0])

    def test_zero_gain_is_rejected(self):
        qpsk = build_constellation("qpsk")
        with self.assertRaises(ChannelError):
            ml_detect(0.1 + 0.1j, 0.0, qpsk)
        with self.assertRaises(ChannelError):
            demodulate(modulate(BitFrame(np.zeros(4, dtype=np.uint8), 4), qpsk), np.zeros(2), qpsk)

    def test_high_snr_fixed_gain_symbol_error_rate(self):
        qpsk = build_constellation("qpsk")
        rng = np.random.default_rng(11)
        n_symbols = 1_000_000
        bits = rng.integers(0, 2, size=2 * n_symbols, dtype=np.uint8)
        stream = modulate(BitFrame(bits=bits, payload_len_bits=bits.size), qpsk)
        sigma2 = 10 ** (-40 / 10)
        noise = math.sqrt(sigma2 / 2) * (rng.standard_normal(n_symbols) + 1j * rng.standard_normal(n_symbols))

        received = stream.__class__(stream.symbols + noise, stream.source_len_bits, 2)
        detected = demodulate(received, np.ones(n_symbols), qpsk).reshape(-1, 2)
        symbol_errors = np.count_nonzero(np.any(detected != bits.reshape(-1, 2), axis=1))

        self.assertLess(symbol_errors / n_symbols, 1e-5)


class ErrorTableTests(SimpleTestCase):
    def test_sixteen_qam_rows(self):
        rows = {row.symbol: row for row in msb_lsb_error_table(build_constellation("qam16"))}
        expected = {0: (3, 0, 2), 1: (5, 2, 3), 4: (5, 0, 2), 5: (8, 3, 3)}

        for symbol, (neighbors, msb, lsb) in expected.items():
            row = rows[symbol]
            self.assertEqual((len(row.neighbors), row.msb_errors, row.lsb_errors), (neighbors, msb, lsb))

    def test_msb_flips_less_often_than_lsb_overall(self):
        rows = msb_lsb_error_table(build_constellation("qam16"))

        self.assertLess(sum(r.msb_errors for r in rows), sum(r.lsb_errors for r in rows))


class BerTests(SimpleTestCase):
    def test_closed_form_values(self):
        self.assertAlmostEqual(theoretical_ber_qpsk_rayleigh(10), 0.0436, places=4)
        self.assertAlmostEqual(theoretical_ber_qpsk_rayleigh(20), 0.0049, places=4)

    def test_empty_snr_list(self):
        with self.assertRaises(ConfigError):
            ber_sweep(build_constellation("qpsk"), [], 10_000, 0)

    def test_sweep_is_deterministic(self):
        qpsk = build_constellation("qpsk")

        first = ber_sweep(qpsk, [5, 10], 20_000, 4)
        second = ber_sweep(qpsk, [5, 10], 20_000, 4, workers=2)

        self.assertEqual(first, second)
        self.assertGreater(first[0].ber, first[1].ber)

    def test_higher_order_needs_more_snr(self):
        qpsk, qam256 = build_constellation("qpsk"), build_constellation("qam256")

        low = ber_sweep(qpsk, [10], 40_000, 1)[0].ber
        high = ber_sweep(qam256, [10], 40_000, 1)[0].ber

        self.assertGreater(high, low)

    def test_gray_labels_protect_the_first_bit(self):
        rates = bit_position_error_rates(build_constellation("qam16"), 15, 200_000, 2)

        self.assertEqual(rates.shape, (4,))
        self.assertLess(rates[0], rates[-1])

    @tag("slow")
    def test_qpsk_rayleigh_matches_closed_form(self):
        points = ber_sweep(build_constellation("qpsk"), [10, 20], 2_000_000, 0)

        for point in points:
            relative = abs(point.ber - point.closed_form) / point.closed_form
            self.assertLess(relative, 0.05, f"{point.snr_db} dB: {point.ber} vs {point.closed_form}")
