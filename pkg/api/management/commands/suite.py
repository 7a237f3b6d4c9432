from django.core.management.base import BaseCommand, CommandError

from simulator.exceptions import SimulationError
from simulator.harness import (
    BER_PRECHECK_CSV,
    SAME_BER_CSV,
    SAME_SNR_CSV,
    final_accuracy,
    same_snr_same_ber_suite,
    write_csv,
)

from ._common import fmt, load_config, output_dir


class Command(BaseCommand):
    help = "Compare modulations with the approximate strategy at equal SNR and at matched BER."

    def add_arguments(self, parser):
        parser.add_argument("--config", default=None)
        parser.add_argument("--out", default=None)
        parser.add_argument("--seeds", type=int, default=3)
        parser.add_argument("--rounds", type=int, default=None)
        parser.add_argument("--workers", type=int, default=None)

    def handle(self, *args, **options):
        cfg = load_config(options["config"], rounds=options["rounds"])
        try:
            result = same_snr_same_ber_suite(cfg, n_seeds=options["seeds"], workers=options["workers"])
        except SimulationError as exc:
            raise CommandError(exc.detail) from exc

        out = output_dir(options["out"], cfg.output_dir)
        write_csv(result.precheck, out / BER_PRECHECK_CSV)
        write_csv(result.same_snr, out / SAME_SNR_CSV)
        write_csv(result.same_ber, out / SAME_BER_CSV)

        for row in result.precheck.itertuples(index=False):
            self.stdout.write(f"BER check {row.modulation} @ {fmt(row.snr_db)} dB: {fmt(row.ber)}")
        for title, frame in (("same SNR", result.same_snr), ("same BER", result.same_ber)):
            finals = final_accuracy(frame)
            listing = ", ".join(f"{label} {fmt(value)}" for label, value in finals.items())
            self.stdout.write(f"{title} final accuracy: {listing}")
        self.stdout.write(self.style.SUCCESS(f"Wrote results to {out}"))
