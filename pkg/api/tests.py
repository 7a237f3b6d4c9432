from io import StringIO
from pathlib import Path
import tempfile
import uuid

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, tag
from rest_framework.test import APIClient

from simulator.config import build_config
from simulator.harness import (
    ACCURACY_VS_TIME_CSV,
    AIRTIME_COLUMNS,
    BER_PRECHECK_CSV,
    SAME_BER_CSV,
    SAME_SNR_CSV,
    RoundReport,
)

from .models import Experiment, RoundRecord

TINY_INI = """
[fl]
clients = 5
rounds = 2
lr = 0.5
model = mlp
hidden = 8
dataset = digits

[link]
strategy = ecrt,approximate

[experiment]
target_accuracy = 0.05
label = tiny
"""


def make_reports(accuracies, symbols=100):
    return [
        RoundReport(
            round=index,
            strategy="approximate",
            clients=(),
            symbols_used=symbols,
            cumulative_airtime=index * symbols,
            accuracy=accuracy,
            loss=float("nan") if index == 1 else 0.5,
            in_unit_fraction=1.0,
        )
        for index, accuracy in enumerate(accuracies, start=1)
    ]


class ExperimentModelTests(TestCase):
    def setUp(self):
        self.cfg = build_config({"experiment": {"label": "lab", "target_accuracy": "0.5"}})

    def test_start_records_the_config(self):
        experiment = Experiment.objects.start(self.cfg, "approximate")

        self.assertEqual(experiment.status, Experiment.STATUS_RUNNING)
        self.assertEqual(experiment.label, "lab")
        self.assertEqual(experiment.config["link"]["code_rate"], "1/2")

    def test_append_and_complete(self):
        experiment = Experiment.objects.start(self.cfg, "approximate")

        experiment.append_reports(make_reports([0.2, 0.6, 0.7]))
        experiment.mark_completed()

        experiment.refresh_from_db()
        self.assertEqual(experiment.rounds_completed, 3)
        self.assertEqual(experiment.status, Experiment.STATUS_COMPLETED)
        self.assertIsNotNone(experiment.completed_at)
        self.assertEqual(experiment.time_to_target(), 200)
        self.assertIsNone(experiment.rounds.get(round=1).loss)

    def test_mark_failed(self):
        experiment = Experiment.objects.start(self.cfg, "ecrt")

        experiment.mark_failed("link down")

        experiment.refresh_from_db()
        self.assertEqual((experiment.status, experiment.error), (Experiment.STATUS_FAILED, "link down"))


class ExperimentAPITests(TestCase):
    def setUp(self):
        self.client = APIClient()
        cfg = build_config({"experiment": {"label": "lab", "target_accuracy": "0.5"}})
        self.approx = Experiment.objects.start(cfg, "approximate")
        self.approx.append_reports(make_reports([0.3, 0.6]))
        self.ecrt = Experiment.objects.start(cfg, "ecrt")
        self.ecrt.append_reports(make_reports([0.4], symbols=150))

    def test_health(self):
        response = self.client.get("/api/health/")

        self.assertEqual(response.status_code, 200)

    def test_list_and_filters(self):
        response = self.client.get("/api/experiments/", {"strategy": "ecrt"})

        self.assertEqual(response.status_code, 200)
        self.assertEqual([item["id"] for item in response.data["results"]], [str(self.ecrt.id)])

        response = self.client.get("/api/experiments/", {"label": "lab", "limit": "1"})
        self.assertEqual(len(response.data["results"]), 1)

    def test_summary(self):
        response = self.client.get(f"/api/experiments/{self.approx.id}/")

        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data["time_to_target"], 200)
        self.assertEqual(response.data["rounds_completed"], 2)

    def test_rounds(self):
        response = self.client.get(f"/api/experiments/{self.approx.id}/rounds/")

        self.assertEqual([row["round"] for row in response.data["results"]], [1, 2])
        self.assertIsNone(response.data["results"][0]["loss"])

    def test_unknown_experiment(self):
        response = self.client.get(f"/api/experiments/{uuid.uuid4()}/")

        self.assertEqual(response.status_code, 404)

    def test_accuracy_vs_airtime(self):
        response = self.client.get("/api/labels/lab/accuracy-vs-airtime/")

        self.assertEqual(response.status_code, 200)
        airtime = [row["airtime_symbols"] for row in response.data["results"]]
        self.assertEqual(airtime, sorted(airtime))
        self.assertEqual(len(airtime), 3)

    def test_unknown_label(self):
        response = self.client.get("/api/labels/missing/accuracy-vs-airtime/")

        self.assertEqual(response.status_code, 404)


class SignalAPITests(TestCase):
    def setUp(self):
        self.client = APIClient()

    def test_error_table(self):
        response = self.client.get("/api/modem/error-table/")

        rows = {row["symbol"]: row for row in response.data["results"]}
        self.assertEqual(len(rows), 16)
        self.assertEqual((rows["s5"]["msb_errors"], rows["s5"]["lsb_errors"]), (3, 3))
        self.assertEqual(len(rows["s0"]["neighbors"]), 3)

    def test_ber(self):
        response = self.client.get("/api/modem/ber/", {"mod": "qpsk", "snr_db": "10,20", "bits": "5"})

        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data["bits"], 1000)
        self.assertEqual([row["snr_db"] for row in response.data["results"]], [10.0, 20.0])

    def test_ber_rejects_bad_queries(self):
        self.assertEqual(self.client.get("/api/modem/ber/", {"mod": "qam64"}).status_code, 400)
        self.assertEqual(self.client.get("/api/modem/ber/", {"snr_db": "ten"}).status_code, 400)

    def test_codec_roundtrip(self):
        response = self.client.get("/api/codec/roundtrip/", {"value": "3.0"})

        self.assertEqual(response.data["hex"], "0x40400000")
        self.assertEqual(response.data["clamped_hex"], "0x00400000")
        self.assertLess(abs(response.data["clamped_value"]), 2.0)

    def test_codec_needs_a_value(self):
        self.assertEqual(self.client.get("/api/codec/roundtrip/").status_code, 400)

    def test_bounds(self):
        response = self.client.get("/api/bounds/", {"model": "cnn", "trials": "5"})

        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.data["n_trials"], 5)
        self.assertTrue(response.data["holds"])

    def test_bounds_with_large_weights(self):
        response = self.client.get("/api/bounds/", {"trials": "5", "weight_bound": "1.5"})

        self.assertFalse(response.data["valid"])


class CommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name)

    def call(self, *args):
        stdout = StringIO()
        call_command(*args, stdout=stdout)
        return stdout.getvalue()

    def test_error_table(self):
        output = self.call("error_table")

        self.assertIn("msb_errors", output)
        self.assertEqual(len(output.strip().splitlines()), 17)

    def test_modem_subcommands(self):
        self.assertIn("lsb_errors", self.call("modem", "error-table"))
        self.call("modem", "ber", "--mod", "qam16", "--snr-db", "16", "--bits", "4000", "--out", str(self.out))

        self.assertTrue((self.out / "ber_sweep.csv").exists())

    def test_codec(self):
        output = self.call("codec", "roundtrip", "--value", "0.15625")

        self.assertIn("0x3E200000", output)

    def test_sweep_ber(self):
        self.call("sweep_ber", "--snr-db", "5,10", "--bits", "2000", "--out", str(self.out))

        lines = (self.out / "ber_sweep.csv").read_text().splitlines()
        self.assertEqual(lines[0], "modulation,snr_db,ber,closed_form")
        self.assertEqual(len(lines), 3)

    def test_sweep_ber_rejects_bad_numbers(self):
        with self.assertRaises(CommandError):
            self.call("sweep_ber", "--snr-db", "x", "--out", str(self.out))

    def test_bounds(self):
        output = self.call("bounds", "--trials", "20", "--out", str(self.out))

        self.assertIn("within the product bound", output)
        self.assertTrue((self.out / "bound_report.csv").exists())

    def test_bounds_on_dataset_inputs(self):
        output = self.call("bounds", "--trials", "10", "--dataset", "digits", "--out", str(self.out))

        self.assertIn("# assumption inputs_in_unit: ok", output)
        self.assertIn("within the product bound", output)

    def test_bounds_rejects_bad_hidden(self):
        with self.assertRaises(CommandError):
            self.call("bounds", "--hidden", "a,b", "--trials", "1", "--out", str(self.out))

    def test_run_writes_csvs_and_saves_experiments(self):
        config = self.out / "tiny.ini"
        config.write_text(TINY_INI)

        output = self.call("run", "--config", str(config), "--out", str(self.out))

        header = (self.out / ACCURACY_VS_TIME_CSV).read_text().splitlines()[0]
        self.assertEqual(header, ",".join(AIRTIME_COLUMNS))
        self.assertTrue((self.out / "rounds_ecrt.csv").exists())
        self.assertTrue((self.out / "rounds_approximate.csv").exists())
        self.assertIn("time-to-target ratio", output)
        self.assertEqual(Experiment.objects.filter(label="tiny", status=Experiment.STATUS_COMPLETED).count(), 2)
        self.assertEqual(RoundRecord.objects.filter(experiment__label="tiny").count(), 4)

    def test_run_without_saving(self):
        config = self.out / "tiny.ini"
        config.write_text(TINY_INI)

        self.call("run", "--config", str(config), "--out", str(self.out), "--strategy", "ideal", "--no-save")

        self.assertFalse(Experiment.objects.exists())

    def test_run_rejects_unknown_strategy(self):
        config = self.out / "tiny.ini"
        config.write_text(TINY_INI)

        with self.assertRaises(CommandError):
            self.call("run", "--config", str(config), "--strategy", "fec", "--no-save")

    def test_run_marks_aborted_experiment_failed(self):
        config = self.out / "tiny.ini"
        config.write_text(TINY_INI + "\n[channel]\nsnr_db = -5\n\n[link]\nmax_retries = 0\n")

        with self.assertRaises(CommandError):
            self.call("run", "--config", str(config), "--out", str(self.out), "--strategy", "ecrt")

        self.assertEqual(Experiment.objects.get(label="tiny").status, Experiment.STATUS_FAILED)

    @tag("slow")
    def test_suite(self):
        config = self.out / "tiny.ini"
        config.write_text(TINY_INI)

        self.call("suite", "--config", str(config), "--out", str(self.out), "--seeds", "1", "--rounds", "1")

        for name in (BER_PRECHECK_CSV, SAME_SNR_CSV, SAME_BER_CSV):
            self.assertTrue((self.out / name).exists())
