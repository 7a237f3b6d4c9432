from django.core.management.base import BaseCommand

from ._common import add_ber_arguments, run_ber


class Command(BaseCommand):
    help = "Monte-Carlo bit error rate over a Rayleigh channel for a list of SNR points."

    def add_arguments(self, parser):
        add_ber_arguments(parser)

    def handle(self, *args, **options):
        run_ber(self, options)
