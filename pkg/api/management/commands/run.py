from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from api.models import Experiment
from simulator.exceptions import ExperimentAborted, SimulationError
from simulator.harness import (
    prepare,
    run_experiment,
    time_to_target,
    time_to_target_ratio,
    write_run_csvs,
)
from simulator.modem import MODULATIONS

from ._common import fmt, load_config, output_dir


class Command(BaseCommand):
    help = "Run FedSGD over the simulated uplink and write accuracy-vs-airtime CSVs."

    def add_arguments(self, parser):
        parser.add_argument("--config", default=None, help="Experiment INI file.")
        parser.add_argument("--out", default=None, help="Output directory for CSVs.")
        parser.add_argument("--strategy", default=None, help="Comma list overriding link.strategy.")
        parser.add_argument("--seed", type=int, default=None)
        parser.add_argument("--rounds", type=int, default=None)
        parser.add_argument("--snr-db", type=float, default=None)
        parser.add_argument("--modulation", choices=tuple(MODULATIONS), default=None)
        parser.add_argument("--label", default=None)
        parser.add_argument("--workers", type=int, default=None)
        parser.add_argument("--no-save", action="store_true", help="Do not persist results to the database.")

    def handle(self, *args, **options):
        strategies = None
        if options["strategy"]:
            strategies = [item.strip() for item in options["strategy"].split(",") if item.strip()]
        cfg = load_config(
            options["config"],
            strategies=strategies,
            seed=options["seed"],
            rounds=options["rounds"],
            snr_db=options["snr_db"],
            modulation=options["modulation"],
            label=options["label"],
        )
        # Strategy names from the command line bypass the config serializer.
        try:
            for kind in cfg.strategies:
                cfg.strategy(kind)
            setup = prepare(cfg)
        except SimulationError as exc:
            raise CommandError(exc.detail) from exc

        out = output_dir(options["out"], cfg.output_dir)
        workers = options["workers"] or settings.APPROXFL_WORKERS
        results = {}
        for kind in cfg.strategies:
            experiment = None if options["no_save"] else Experiment.objects.start(cfg, kind)
            try:
                reports = run_experiment(cfg, kind, setup=setup, workers=workers)
            except ExperimentAborted as exc:
                results[kind] = exc.reports
                if experiment is not None:
                    experiment.append_reports(exc.reports)
                    experiment.mark_failed(exc.detail)
                self._write(out, cfg, results)
                raise CommandError(f"{kind}: {exc.detail}") from exc
            except SimulationError as exc:
                if experiment is not None:
                    experiment.mark_failed(exc.detail)
                raise CommandError(f"{kind}: {exc.detail}") from exc
            if experiment is not None:
                experiment.append_reports(reports)
                experiment.mark_completed()
            results[kind] = reports

        self._write(out, cfg, results)
        self._summarize(cfg, results)

    def _write(self, out, cfg, results):
        if not results:
            return
        write_run_csvs(results, out, label=cfg.label)
        self.stdout.write(f"Wrote results to {out}")

    def _summarize(self, cfg, results):
        target = cfg.target_accuracy
        for kind, reports in results.items():
            final = reports[-1].accuracy if reports else float("nan")
            self.stdout.write(
                f"{kind}: final accuracy {fmt(final)}, "
                f"airtime to {target:g} accuracy {fmt(time_to_target(reports, target))} symbols"
            )
        if "ecrt" in results and "approximate" in results:
            ratio = time_to_target_ratio(results["ecrt"], results["approximate"], target)
            self.stdout.write(f"ecrt/approximate time-to-target ratio: {fmt(ratio)}")
        self.stdout.write(self.style.SUCCESS("Run completed."))
