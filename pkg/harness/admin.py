from django.contrib import admin
from django.db.models.aggregates import Count
from django.db.models.query import QuerySet
from django.urls import reverse
from django.utils.html import format_html, urlencode

from . import models


class TemplateGroupFilter(admin.SimpleListFilter):
    title = 'template group'
    parameter_name = 'template_group'

    def lookups(self, request, model_admin):
        return [
            ('train', 'Training template'),
            ('held_out', 'Held-out templates'),
        ]

    def queryset(self, request, queryset: QuerySet):
        if self.value() == 'train':
            return queryset.filter(template_id=0)
        if self.value() == 'held_out':
            return queryset.exclude(template_id=0)


class EpochLossInline(admin.TabularInline):
    model = models.EpochLoss
    extra = 0
    readonly_fields = ['epoch', 'mean_loss']


@admin.register(models.Run)
class RunAdmin(admin.ModelAdmin):
    inlines = [EpochLossInline]
    list_display = ['method', 'seed', 'status', 'created_at', 'eval_rows_count', 'run_dir']
    list_filter = ['method', 'status', 'seed']
    list_per_page = 20
    search_fields = ['run_dir', 'checkpoint_digest']

    @admin.display(ordering='eval_rows_count')
    def eval_rows_count(self, run):
        url = (
            reverse('admin:harness_evalrow_changelist')
            + '?'
            + urlencode({
                'run__id': str(run.id)
            }))
        return format_html('<a href="{}">{} rows</a>', url, run.eval_rows_count)

    def get_queryset(self, request):
        return super().get_queryset(request).annotate(
            eval_rows_count=Count('eval_rows')
        )


@admin.register(models.EvalRow)
class EvalRowAdmin(admin.ModelAdmin):
    list_display = ['method', 'family', 'split', 'template_id', 'prefix_id', 'seed', 'n',
                    'accuracy', 'mean_prompt_tokens']
    list_filter = ['method', 'family', 'split', 'seed', TemplateGroupFilter]
    list_per_page = 50


@admin.register(models.TheoryCheck)
class TheoryCheckAdmin(admin.ModelAdmin):
    list_display = ['batch', 'theorem', 'trial', 'check_name', 'max_rel_err', 'passed']
    list_filter = ['theorem', 'check_name', 'passed']
