import logging

from django.conf import settings
from rest_framework import status
from rest_framework.exceptions import NotFound
from rest_framework.permissions import AllowAny
from rest_framework.response import Response
from rest_framework.views import APIView

from simulator.boundcheck import check_cnn_bound, check_empirical, default_spec
from simulator.exceptions import SimulationError
from simulator.float_codec import roundtrip_report
from simulator.modem import ber_sweep, build_constellation, msb_lsb_error_table

from .models import Experiment, RoundRecord
from .serializer import (
    BerQuerySerializer,
    BoundsQuerySerializer,
    CodecQuerySerializer,
    ExperimentSerializer,
    ExperimentSummarySerializer,
    RoundRecordSerializer,
)

logger = logging.getLogger(__name__)

BER_DEFAULT_BITS = 20_000
BER_MAX_POINTS = 20
BOUND_DEFAULT_TRIALS = 200
EXPERIMENT_DEFAULT_LIMIT = 50
EXPERIMENT_MAX_LIMIT = 500


class PublicAPIView(APIView):
    authentication_classes = []
    permission_classes = [AllowAny]

    def handle_exception(self, exc):
        if isinstance(exc, SimulationError):
            logger.info("Rejected request: %s", exc.detail)
            return Response({"detail": exc.detail}, status=status.HTTP_400_BAD_REQUEST)
        return super().handle_exception(exc)


class HealthView(PublicAPIView):
    def get(self, request):
        return Response({"detail": "Simulator API is running."}, status=status.HTTP_200_OK)


class ExperimentListView(PublicAPIView):
    def get(self, request):
        experiments = Experiment.objects.all()
        label = (request.query_params.get("label") or "").strip()
        if label:
            experiments = experiments.filter(label=label)
        strategy = (request.query_params.get("strategy") or "").strip()
        if strategy:
            experiments = experiments.filter(strategy=strategy)
        limit = _parse_int_in_range(
            request.query_params.get("limit"),
            default=EXPERIMENT_DEFAULT_LIMIT,
            minimum=1,
            maximum=EXPERIMENT_MAX_LIMIT,
        )
        return Response(
            {"results": ExperimentSerializer(experiments[:limit], many=True).data},
            status=status.HTTP_200_OK,
        )


class ExperimentSummaryView(PublicAPIView):
    def get(self, request, experiment_id):
        experiment = _get_experiment_or_404(experiment_id)
        return Response(ExperimentSummarySerializer(experiment).data, status=status.HTTP_200_OK)


class ExperimentRoundsView(PublicAPIView):
    def get(self, request, experiment_id):
        experiment = _get_experiment_or_404(experiment_id)
        return Response(
            {
                "experiment": str(experiment.id),
                "results": RoundRecordSerializer(experiment.rounds.all(), many=True).data,
            },
            status=status.HTTP_200_OK,
        )


class AccuracyVsAirtimeView(PublicAPIView):
    def get(self, request, label):
        records = (
            RoundRecord.objects.filter(experiment__label=label)
            .select_related("experiment")
            .order_by("cumulative_airtime", "experiment__strategy", "round")
        )
        rows = [
            {
                "strategy": record.experiment.strategy,
                "experiment": str(record.experiment_id),
                "round": record.round,
                "airtime_symbols": record.cumulative_airtime,
                "accuracy": record.accuracy,
            }
            for record in records
        ]
        if not rows:
            raise NotFound("No experiments with this label.")
        return Response({"label": label, "results": rows}, status=status.HTTP_200_OK)


class ErrorTableView(PublicAPIView):
    def get(self, request):
        constellation = build_constellation("qam16")
        rows = [
            {
                "symbol": f"s{row.symbol}",
                "label": row.label,
                "neighbors": [f"s{other}" for other in row.neighbors],
                "msb_errors": row.msb_errors,
                "lsb_errors": row.lsb_errors,
            }
            for row in msb_lsb_error_table(constellation)
        ]
        return Response({"modulation": "qam16", "results": rows}, status=status.HTTP_200_OK)


class BerView(PublicAPIView):
    def get(self, request):
        serializer = BerQuerySerializer(data=request.query_params)
        serializer.is_valid(raise_exception=True)
        query = serializer.validated_data
        snr_values = query["snr_db"][:BER_MAX_POINTS]
        n_bits = _parse_int_in_range(
            request.query_params.get("bits"),
            default=BER_DEFAULT_BITS,
            minimum=1000,
            maximum=settings.APPROXFL_API_MAX_BER_BITS,
        )
        points = ber_sweep(build_constellation(query["mod"]), snr_values, n_bits, query["seed"])
        return Response(
            {
                "modulation": query["mod"],
                "bits": n_bits,
                "results": [
                    {"snr_db": point.snr_db, "ber": point.ber, "closed_form": point.closed_form}
                    for point in points
                ],
            },
            status=status.HTTP_200_OK,
        )


class CodecRoundtripView(PublicAPIView):
    def get(self, request):
        serializer = CodecQuerySerializer(data=request.query_params)
        serializer.is_valid(raise_exception=True)
        return Response(roundtrip_report(serializer.validated_data["value"]), status=status.HTTP_200_OK)


class BoundsView(PublicAPIView):
    def get(self, request):
        serializer = BoundsQuerySerializer(data=request.query_params)
        serializer.is_valid(raise_exception=True)
        query = serializer.validated_data
        trials = _parse_int_in_range(
            request.query_params.get("trials"),
            default=BOUND_DEFAULT_TRIALS,
            minimum=1,
            maximum=settings.APPROXFL_API_MAX_BOUND_TRIALS,
        )
        spec = default_spec(query["model"])
        check = check_cnn_bound if query["model"] == "cnn" else check_empirical
        report = check(spec, trials, query["seed"], weight_bound=query["weight_bound"])
        return Response(report.as_dict(), status=status.HTTP_200_OK)


def _get_experiment_or_404(experiment_id):
    try:
        return Experiment.objects.get(id=experiment_id)
    except Experiment.DoesNotExist as exc:
        raise NotFound("Experiment not found.") from exc


def _parse_int_in_range(raw_value, default, minimum, maximum):
    if raw_value is None:
        return default
    try:
        parsed = int(str(raw_value).strip())
    except (TypeError, ValueError):
        return default
    return max(minimum, min(maximum, parsed))
