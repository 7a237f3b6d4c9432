"""Helpers shared by the simulator management commands."""

import math
from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError
import pandas as pd

from simulator.config import load_experiment_config
from simulator.exceptions import SimulationError
from simulator.harness import BER_COLUMNS, write_csv
from simulator.modem import MODULATIONS, ber_sweep, build_constellation, msb_lsb_error_table


def parse_float_list(raw):
    try:
        values = [float(item) for item in str(raw).split(",") if item.strip()]
    except ValueError as exc:
        raise CommandError(f"Invalid number list '{raw}'.") from exc
    return values


def load_config(path, **overrides):
    try:
        return load_experiment_config(path).with_overrides(**overrides)
    except SimulationError as exc:
        raise CommandError(f"Invalid configuration: {exc.detail}") from exc


def output_dir(raw, fallback=None) -> Path:
    return Path(raw or fallback or settings.APPROXFL_OUTPUT_DIR).expanduser()


def fmt(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return f"{value:.10g}"


def add_ber_arguments(parser):
    parser.add_argument("--mod", choices=tuple(MODULATIONS), default="qpsk")
    parser.add_argument("--snr-db", default="10,20", help="Comma-separated SNR points in dB.")
    parser.add_argument("--bits", type=int, default=1_000_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--block-len-bits",
        type=int,
        default=None,
        help="Bits per fading block; default is independent fading per symbol.",
    )
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", default=None)


def run_ber(command, options):
    constellation = build_constellation(options["mod"])
    block_len = 1
    if options["block_len_bits"]:
        block_len = max(1, math.ceil(options["block_len_bits"] / constellation.bits_per_symbol))
    try:
        points = ber_sweep(
            constellation,
            parse_float_list(options["snr_db"]),
            options["bits"],
            options["seed"],
            block_len=block_len,
            workers=options["workers"] or settings.APPROXFL_WORKERS,
        )
    except SimulationError as exc:
        raise CommandError(exc.detail) from exc

    frame = pd.DataFrame(
        [
            {"modulation": p.modulation, "snr_db": p.snr_db, "ber": p.ber, "closed_form": p.closed_form}
            for p in points
        ],
        columns=BER_COLUMNS,
    )
    path = write_csv(frame, output_dir(options["out"]) / "ber_sweep.csv")
    command.stdout.write("modulation  snr_db  ber  closed_form")
    for point in points:
        command.stdout.write(f"{point.modulation}  {fmt(point.snr_db)}  {fmt(point.ber)}  {fmt(point.closed_form)}")
    command.stdout.write(command.style.SUCCESS(f"Wrote {path}"))


def write_error_table(command, radius=1):
    constellation = build_constellation("qam16")
    command.stdout.write("symbol  label  neighbors  msb_errors  lsb_errors")
    for row in msb_lsb_error_table(constellation, neighbor_radius=radius):
        neighbors = ",".join(f"s{other}" for other in row.neighbors)
        command.stdout.write(
            f"s{row.symbol:<5} {row.label}  {neighbors:<28} {row.msb_errors:>3} {row.lsb_errors:>3}"
        )
