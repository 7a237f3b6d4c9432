from django.contrib import admin

from .models import Experiment, RoundRecord


class RoundRecordInline(admin.TabularInline):
    model = RoundRecord
    extra = 0
    fields = ("round", "accuracy", "loss", "symbols_used", "cumulative_airtime", "retransmissions")
    readonly_fields = fields
    can_delete = False


@admin.register(Experiment)
class ExperimentAdmin(admin.ModelAdmin):
    list_display = ("id", "label", "strategy", "modulation", "snr_db", "seed", "status", "rounds_completed", "created_at")
    list_filter = ("strategy", "modulation", "status", "created_at")
    search_fields = ("id", "label")
    inlines = (RoundRecordInline,)


@admin.register(RoundRecord)
class RoundRecordAdmin(admin.ModelAdmin):
    list_display = ("id", "experiment", "round", "accuracy", "cumulative_airtime", "retransmissions")
    list_filter = ("experiment__strategy",)
    search_fields = ("experiment__id", "experiment__label")
