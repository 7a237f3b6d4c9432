from django.urls import path
from .views import (
    AccuracyVsAirtimeView,
    BerView,
    BoundsView,
    CodecRoundtripView,
    ErrorTableView,
    ExperimentListView,
    ExperimentRoundsView,
    ExperimentSummaryView,
    HealthView,
)

urlpatterns = [
    path("health/", HealthView.as_view(), name="health"),
    path("experiments/", ExperimentListView.as_view(), name="experiment-list"),
    path("experiments/<uuid:experiment_id>/", ExperimentSummaryView.as_view(), name="experiment-summary"),
    path("experiments/<uuid:experiment_id>/rounds/", ExperimentRoundsView.as_view(), name="experiment-rounds"),
    path("labels/<str:label>/accuracy-vs-airtime/", AccuracyVsAirtimeView.as_view(), name="label-accuracy-vs-airtime"),
    path("modem/error-table/", ErrorTableView.as_view(), name="modem-error-table"),
    path("modem/ber/", BerView.as_view(), name="modem-ber"),
    path("codec/roundtrip/", CodecRoundtripView.as_view(), name="codec-roundtrip"),
    path("bounds/", BoundsView.as_view(), name="bounds"),
]
