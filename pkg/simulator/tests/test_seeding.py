import numpy as np
from django.test import SimpleTestCase

from simulator import seeding
from simulator.seeding import STREAM_BER, STREAM_CHANNEL, derive_rng


class SeedingTests(SimpleTestCase):
    def test_stream_keys_are_distinct(self):
        keys = {name: value for name, value in vars(seeding).items() if name.startswith("STREAM_")}

        self.assertEqual(len(set(keys.values())), len(keys))
        self.assertEqual(
            set(keys),
            {
                "STREAM_INIT",
                "STREAM_PARTITION",
                "STREAM_BATCH",
                "STREAM_CHANNEL",
                "STREAM_ECRT",
                "STREAM_BER",
                "STREAM_BOUNDS",
                "STREAM_DATA",
            },
        )

    def test_same_keys_same_draws(self):
        first = derive_rng(3, STREAM_CHANNEL, 1, 2).random(4)
        second = derive_rng(3, STREAM_CHANNEL, 1, 2).random(4)
        other = derive_rng(3, STREAM_BER, 1, 2).random(4)

        np.testing.assert_array_equal(first, second)
        self.assertFalse(np.array_equal(first, other))

    def test_negative_keys_are_rejected(self):
        with self.assertRaises(ValueError):
            derive_rng(0, -1)
