"""
Mirrors runs, losses, evaluation rows and theory checks into the database.
Files in the run directory stay authoritative; a missing schema only logs.
"""
import functools
import json
import logging

from django.db import DatabaseError, transaction

from .models import EpochLoss, EvalRow, Run, TheoryCheck
from .signals import run_finished

logger = logging.getLogger(__name__)


def _mirrored(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            with transaction.atomic():
                return func(*args, **kwargs)
        except DatabaseError as exc:
            logger.warning('database mirror skipped (%s); run `manage.py migrate` to enable it', exc)
            return None
    return wrapper


@_mirrored
def record_run_start(config, seed, run_dir):
    run = Run.objects.create(method=config.method, seed=seed, run_dir=str(run_dir),
                             config=json.loads(config.to_json()))
    return run.pk


@_mirrored
def record_losses(run_id, report):
    EpochLoss.objects.bulk_create([
        EpochLoss(run_id=run_id, epoch=epoch, mean_loss=loss)
        for epoch, loss in enumerate(report.epoch_losses, start=1)])


@_mirrored
def record_failure(run_id):
    Run.objects.filter(pk=run_id).update(status=Run.STATUS_FAILED)


def finish_run(run_id, digest):
    if run_id is not None:
        run_finished.send(sender=Run, run_id=run_id, digest=digest)


@_mirrored
def record_eval_rows(report, run_dirs=None):
    runs = {}
    for run_dir in run_dirs or ():
        run = Run.objects.filter(run_dir=str(run_dir)).order_by('-created_at').first()
        if run is not None:
            runs[(run.method, run.seed)] = run
    EvalRow.objects.bulk_create([
        EvalRow(run=runs.get((row.method, row.seed)), method=row.method, family=row.family,
                split=row.split, template_id=row.template_id, prefix_id=row.prefix_id,
                seed=row.seed, n=row.n, accuracy=row.accuracy,
                mean_prompt_tokens=row.mean_prompt_tokens)
        for row in report.rows])
    return len(report.rows)


@_mirrored
def record_theory(batch, *reports):
    TheoryCheck.objects.bulk_create([
        TheoryCheck(batch=batch, theorem=report.name, trial=r.trial, check_name=r.check,
                    max_rel_err=r.max_rel_err, passed=r.passed)
        for report in reports for r in report.records])
