import graphene
from django_filters import FilterSet, OrderingFilter
from graphene import relay
from graphene_django import DjangoObjectType
from graphene_django.filter import DjangoFilterConnectionField

from .models import EpochLoss, EvalRow, Run, TheoryCheck

# Filters


class EvalRowFilter(FilterSet):
    class Meta:
        model = EvalRow
        fields = {
            'method': ['exact'],
            'family': ['exact'],
            'split': ['exact'],
            'seed': ['exact'],
            'accuracy': ['gt', 'lt'],
        }

    order_by = OrderingFilter(
        fields=(
            ('accuracy', 'accuracy'),
            ('template_id', 'template_id'),
            ('seed', 'seed'),
        )
    )


# Types Models

class EpochLossType(DjangoObjectType):
    class Meta:
        model = EpochLoss
        fields = ('id', 'epoch', 'mean_loss')


class RunType(DjangoObjectType):
    losses = graphene.List(EpochLossType)

    class Meta:
        model = Run
        fields = ('id', 'method', 'seed', 'status', 'run_dir', 'config', 'checkpoint_digest',
                  'created_at', 'finished_at', 'losses')

    def resolve_losses(root, info):
        return root.losses.all()


class EvalRowType(DjangoObjectType):
    index = graphene.Int()

    class Meta:
        model = EvalRow
        fields = ('id', 'index', 'run', 'method', 'family', 'split', 'template_id', 'prefix_id',
                  'seed', 'n', 'accuracy', 'mean_prompt_tokens')
        interfaces = (relay.Node, )

    def resolve_index(self, info):
        return self.pk


class TheoryCheckType(DjangoObjectType):
    class Meta:
        model = TheoryCheck
        fields = ('id', 'batch', 'theorem', 'trial', 'check_name', 'max_rel_err', 'passed')


# Queries

class Query(graphene.ObjectType):
    runs = graphene.List(RunType, method=graphene.String())
    run = graphene.Field(RunType, id=graphene.Int())
    eval_rows = DjangoFilterConnectionField(EvalRowType, filterset_class=EvalRowFilter)
    theory_checks = graphene.List(TheoryCheckType, batch=graphene.String(),
                                  failed_only=graphene.Boolean(default_value=False))

    def resolve_runs(root, info, method=None):
        queryset = Run.objects.all()
        if method:
            queryset = queryset.filter(method=method)
        return queryset

    def resolve_run(root, info, id):
        return Run.objects.get(pk=id)

    def resolve_theory_checks(root, info, batch=None, failed_only=False):
        queryset = TheoryCheck.objects.all()
        if batch:
            queryset = queryset.filter(batch=batch)
        if failed_only:
            queryset = queryset.filter(passed=False)
        return queryset


schema = graphene.Schema(query=Query)
