from django.core.management.base import BaseCommand, CommandError
import pandas as pd

from simulator.boundcheck import bound_rows, check_cnn_bound, check_empirical, default_spec
from simulator.datasets import load_dataset
from simulator.exceptions import SimulationError
from simulator.harness import write_csv

from ._common import fmt, output_dir

BOUND_COLUMNS = ["layer", "param", "observed_max", "product_bound", "sum_bound", "within_product", "within_sum"]


class Command(BaseCommand):
    help = "Check gradient magnitudes of random sigmoid networks against the per-layer bounds."

    def add_arguments(self, parser):
        parser.add_argument("--model", choices=("mlp", "cnn"), default="mlp")
        parser.add_argument("--trials", type=int, default=10_000)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--hidden", default="16,16", help="Hidden widths of the mlp.")
        parser.add_argument("--weight-bound", type=float, default=1.0)
        parser.add_argument(
            "--dataset",
            choices=("digits", "synthetic"),
            default=None,
            help="Draw trial inputs from this dataset instead of uniform [0, 1).",
        )
        parser.add_argument("--out", default=None)

    def handle(self, *args, **options):
        try:
            hidden = tuple(int(item) for item in options["hidden"].split(",") if item.strip())
            spec = default_spec(options["model"], hidden=hidden)
            check = check_cnn_bound if options["model"] == "cnn" else check_empirical
            inputs = load_dataset(options["dataset"]).x if options["dataset"] else None
            report = check(
                spec, options["trials"], options["seed"], weight_bound=options["weight_bound"], inputs=inputs
            )
        except ValueError as exc:
            raise CommandError(f"Invalid --hidden value '{options['hidden']}'.") from exc
        except SimulationError as exc:
            raise CommandError(exc.detail) from exc

        frame = pd.DataFrame(bound_rows(report), columns=BOUND_COLUMNS)
        path = write_csv(frame, output_dir(options["out"]) / "bound_report.csv")
        self.stdout.write(f"# formula: {report.formula}")
        self.stdout.write(f"# trials: {report.n_trials}, violations: {report.violations}")
        self.stdout.write(f"# output error range: ({fmt(report.delta_min)}, {fmt(report.delta_max)})")
        self.stdout.write(f"# gradient entries inside (-1, 1): {fmt(report.unit_fraction)}")
        for name, ok in report.flags.items():
            self.stdout.write(f"# assumption {name}: {'ok' if ok else 'VIOLATED'}")
        for row in report.rows:
            self.stdout.write(
                f"{row.layer}.{row.param}  observed {fmt(row.observed_max)}  "
                f"product {fmt(row.product_bound)}  sum {fmt(row.sum_bound)}"
            )
        if not report.valid:
            self.stdout.write(self.style.WARNING("Assumptions violated: the bounds are not claimed for this setup."))
        elif report.holds:
            self.stdout.write(self.style.SUCCESS(f"All trials within the product bound. Wrote {path}"))
        else:
            self.stdout.write(self.style.ERROR(f"Bound violated. Wrote {path}"))
