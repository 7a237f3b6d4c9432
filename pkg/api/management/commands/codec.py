from django.core.management.base import BaseCommand

from simulator.float_codec import roundtrip_report


class Command(BaseCommand):
    help = "Show the float32 bit pattern of a value before and after the receiver clamp."

    def add_arguments(self, parser):
        actions = parser.add_subparsers(dest="action", required=True)
        roundtrip = actions.add_parser("roundtrip")
        roundtrip.add_argument("--value", type=float, required=True)

    def handle(self, *args, **options):
        report = roundtrip_report(options["value"])
        self.stdout.write(f"value          {report['value']!r}")
        self.stdout.write(f"bits           {report['fields']}  ({report['hex']})")
        self.stdout.write(f"clamped bits   {report['clamped_bits'][0]} {report['clamped_bits'][1:9]} "
                          f"{report['clamped_bits'][9:]}  ({report['clamped_hex']})")
        self.stdout.write(f"clamped value  {report['clamped_value']!r}")
        self.stdout.write(f"naive value    {report['naive_value']!r}")
