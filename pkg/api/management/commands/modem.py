from django.core.management.base import BaseCommand

from ._common import add_ber_arguments, run_ber, write_error_table


class Command(BaseCommand):
    help = "Modem diagnostics: BER sweeps and the 16-QAM MSB/LSB error table."

    def add_arguments(self, parser):
        actions = parser.add_subparsers(dest="action", required=True)
        add_ber_arguments(actions.add_parser("ber", help="Monte-Carlo BER sweep."))
        table = actions.add_parser("error-table", help="16-QAM MSB/LSB error counts.")
        table.add_argument("--radius", type=int, default=1)

    def handle(self, *args, **options):
        if options["action"] == "ber":
            run_ber(self, options)
        else:
            write_error_table(self, options["radius"])
