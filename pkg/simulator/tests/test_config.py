from fractions import Fraction
from pathlib import Path

from django.conf import settings
from django.test import SimpleTestCase

from simulator.config import build_config, load_experiment_config, parse_config_text
from simulator.exceptions import ConfigError

EXAMPLE = """
# comment
[fl]
clients = 5
rounds = 3
lr = 0.5
model = mlp
hidden = 16, 8

[link]
strategy = "ecrt, approximate"
code_rate = 1/2

; dotted keys also work
channel.snr_db = 20
"""


class ParseTests(SimpleTestCase):
    def test_sections_and_dotted_keys(self):
        data = parse_config_text(EXAMPLE)

        self.assertEqual(data["fl"]["clients"], "5")
        self.assertEqual(data["link"]["strategy"], "ecrt, approximate")
        self.assertEqual(data["channel"]["snr_db"], "20")

    def test_malformed_lines(self):
        for text in ("[fl]\nclients", "clients = 3", "[]\n", "[fl]\n = 3"):
            with self.assertRaises(ConfigError):
                parse_config_text(text)


class BuildConfigTests(SimpleTestCase):
    def test_values_and_defaults(self):
        cfg = build_config(parse_config_text(EXAMPLE))

        self.assertEqual(cfg.fl.clients, 5)
        self.assertEqual(cfg.fl.hidden, (16, 8))
        self.assertEqual(cfg.fl.model, "mlp")
        self.assertEqual(cfg.strategies, ("ecrt", "approximate"))
        self.assertEqual(cfg.link.code_rate, Fraction(1, 2))
        self.assertEqual(cfg.channel.snr_db, 20.0)
        self.assertEqual(cfg.channel.alpha, 3.0)
        self.assertEqual(cfg.modulation, "qpsk")
        self.assertEqual(cfg.target_accuracy, 0.8)
        self.assertEqual(cfg.output_dir, str(settings.APPROXFL_OUTPUT_DIR))

    def test_empty_config_uses_defaults(self):
        cfg = build_config({})

        self.assertEqual(cfg.rounds, 200)
        self.assertEqual(cfg.strategies, ("approximate",))
        self.assertEqual(cfg.link.codeword_len, 648)

    def test_invalid_values(self):
        for data in (
            {"fl": {"clients": "0"}},
            {"fl": {"lr": "0"}},
            {"fl": {"model": "transformer"}},
            {"fl": {"hidden": "16,-1"}},
            {"fl": {"dataset": "idx"}},
            {"channel": {"distance_m": "-2"}},
            {"modem": {"modulation": "qam64"}},
            {"experiment": {"target_accuracy": "1.5"}},
            {"link": {"strategy": "ecrt,fec"}},
            {"link": {"strategy": " , "}},
            {"link": {"code_rate": "2/3", "codeword_len": "100"}},
            {"link": {"code_rate": "half"}},
        ):
            with self.assertRaises(ConfigError, msg=str(data)):
                build_config(data)

    def test_unknown_keys_and_sections(self):
        with self.assertRaises(ConfigError):
            build_config({"fl": {"epochs": "3"}})
        with self.assertRaises(ConfigError):
            build_config({"optimizer": {"name": "adam"}})

    def test_strategies_are_deduplicated(self):
        cfg = build_config({"link": {"strategy": "naive,ECRT,naive"}})

        self.assertEqual(cfg.strategies, ("naive", "ecrt"))
        self.assertEqual(cfg.strategy("ecrt").kind, "ecrt")

    def test_overrides(self):
        cfg = build_config({}).with_overrides(
            strategies=["ideal"], seed=4, rounds=2, snr_db=25, modulation="qam16", label="x"
        )

        self.assertEqual((cfg.strategies, cfg.seed, cfg.rounds), (("ideal",), 4, 2))
        self.assertEqual(cfg.channel.snr_db, 25)
        self.assertEqual((cfg.modulation, cfg.label), ("qam16", "x"))

    def test_dict_form_rebuilds_the_same_config(self):
        cfg = build_config(parse_config_text(EXAMPLE))

        self.assertEqual(build_config(cfg.to_dict()), cfg)


class PresetTests(SimpleTestCase):
    def test_desk_preset(self):
        cfg = load_experiment_config(Path(settings.BASE_DIR) / "configs" / "desk.ini")

        self.assertEqual(cfg.fl.clients, 10)
        self.assertEqual(cfg.rounds, 200)
        self.assertEqual(cfg.fl.lr, 0.1)
        self.assertEqual(cfg.fl.hidden, (64,))
        self.assertEqual(cfg.strategies, ("ecrt", "naive", "approximate"))
        self.assertEqual(cfg.label, "desk")

    def test_paper_preset_parses(self):
        cfg = load_experiment_config(Path(settings.BASE_DIR) / "configs" / "paper.ini")

        self.assertEqual(cfg.fl.clients, 100)
        self.assertEqual(cfg.fl.dataset, "idx")

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_experiment_config("/nonexistent/approxfl.ini")
