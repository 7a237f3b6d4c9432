from django.core.management.base import BaseCommand

from ._common import write_error_table


class Command(BaseCommand):
    help = "Print MSB/LSB error counts toward grid neighbours for Gray-coded 16-QAM."

    def add_arguments(self, parser):
        parser.add_argument("--radius", type=int, default=1)

    def handle(self, *args, **options):
        write_error_table(self, options["radius"])
